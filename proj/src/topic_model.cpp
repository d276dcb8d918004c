#include "forge/topic_model.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "forge/errors.hpp"

namespace forge::topics {

EmbedResult embed_documents(std::span<const Document> docs, llm::EmbeddingCache& cache, const EmbedOptions& options) {
    EmbedResult result;
    if (docs.empty()) return result;

    std::vector<std::string> texts(docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) {
        bool cut = false;
        texts[i] = truncate_utf8(docs[i].text, options.char_budget, "", &cut);
        if (cut) result.truncated.push_back(docs[i].doc_id);
    }

    const std::size_t batch = std::max<std::size_t>(1, options.batch_size);
    const std::size_t n_batches = (texts.size() + batch - 1) / batch;
    std::vector<std::vector<Vector>> parts(n_batches);
    parallel_for(n_batches, options.workers, [&](std::size_t b) {
        const auto begin = b * batch;
        const auto end = std::min(texts.size(), begin + batch);
        parts[b] = cache.embed(std::span<const std::string>(texts).subspan(begin, end - begin));
    });

    const std::size_t dim = cache.backend().dim();
    for (std::size_t b = 0; b < n_batches; ++b) {
        for (std::size_t k = 0; k < parts[b].size(); ++k) {
            const auto& doc = docs[b * batch + k];
            auto& v = parts[b][k];
            if (v.size() != dim) throw IntegrityError("embedding for " + doc.doc_id + " has wrong dimension");
            result.vectors.emplace(doc.doc_id, std::move(v));
        }
    }
    if (!result.truncated.empty()) {
        spdlog::info("truncated {} document(s) to {} chars before embedding", result.truncated.size(),
                     options.char_budget);
    }
    return result;
}

namespace {

double dot(const Vector& a, const Vector& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

void normalize(Vector& v) {
    double n = std::sqrt(dot(v, v));
    if (n == 0.0) return;
    for (auto& x : v) x /= n;
}

std::size_t nearest(const Vector& v, const std::vector<Vector>& centroids) {
    std::size_t best = 0;
    double best_sim = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.size(); ++c) {
        const double s = dot(v, centroids[c]);
        if (s > best_sim) {
            best_sim = s;
            best = c;
        }
    }
    return best;
}

}  // namespace

TopicAssignment cluster(const std::map<std::string, Vector>& vectors, const ClusterParams& params, Rng& rng) {
    if (params.k < 1) throw ConfigError("topic_model.k must be >= 1");
    const auto k = static_cast<std::size_t>(params.k);
    if (vectors.size() < k) {
        throw ConfigError("cannot cluster " + std::to_string(vectors.size()) + " documents into k=" +
                          std::to_string(k) + " topics; use a smaller k");
    }

    std::vector<std::string> ids;
    std::vector<Vector> points;
    ids.reserve(vectors.size());
    points.reserve(vectors.size());
    const std::size_t dim = vectors.begin()->second.size();
    for (const auto& [id, v] : vectors) {
        if (v.size() != dim || dim == 0) throw InputError("embedding for " + id + " has inconsistent dimension");
        for (double x : v) {
            if (!std::isfinite(x)) throw InputError("embedding for " + id + " has non-finite entries");
        }
        ids.push_back(id);
        points.push_back(v);
        normalize(points.back());
    }
    const std::size_t n = points.size();

    // k-means++ seeding on cosine distance.
    std::vector<Vector> centroids;
    centroids.push_back(points[rng.below(n)]);
    std::vector<double> dist(n, std::numeric_limits<double>::infinity());
    while (centroids.size() < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            dist[i] = std::min(dist[i], std::max(0.0, 1.0 - dot(points[i], centroids.back())));
            total += dist[i] * dist[i];
        }
        std::size_t pick = 0;
        if (total <= 0.0) {
            pick = rng.below(n);
        } else {
            double r = rng.uniform() * total;
            for (pick = 0; pick + 1 < n; ++pick) {
                r -= dist[pick] * dist[pick];
                if (r < 0.0) break;
            }
        }
        centroids.push_back(points[pick]);
    }

    std::vector<std::size_t> label(n, k);
    for (int iter = 0; iter < std::max(1, params.max_iter); ++iter) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            const auto c = nearest(points[i], centroids);
            if (c != label[i]) {
                label[i] = c;
                changed = true;
            }
        }
        if (!changed) break;
        std::vector<Vector> sums(k, Vector(dim, 0.0));
        std::vector<std::size_t> sizes(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            ++sizes[label[i]];
            for (std::size_t d = 0; d < dim; ++d) sums[label[i]][d] += points[i][d];
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (sizes[c] == 0) continue;  // keep the previous centroid
            normalize(sums[c]);
            centroids[c] = std::move(sums[c]);
        }
    }

    std::vector<std::size_t> sizes(k, 0);
    for (auto l : label) ++sizes[l];
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return sizes[a] > sizes[b]; });
    std::vector<int> renumber(k, corpus::kNoiseTopic);
    int next_id = 0;
    for (auto c : order) {
        if (sizes[c] >= params.min_topic_size && sizes[c] > 0) renumber[c] = next_id++;
    }

    TopicAssignment out;
    for (std::size_t i = 0; i < n; ++i) out.emplace(ids[i], renumber[label[i]]);
    return out;
}

TopicAssignment read_assignment(const fs::path& path) {
    TopicAssignment out;
    std::size_t line = 0;
    for (const auto& rec : read_jsonl(path)) {
        ++line;
        if (!rec.is_object() || !rec.contains("doc_id") || !rec["doc_id"].is_string() || !rec.contains("topic_id") ||
            !rec["topic_id"].is_number_integer()) {
            throw InputError(path.string() + ": record " + std::to_string(line) + " needs doc_id and topic_id", line);
        }
        const int topic = rec["topic_id"].get<int>();
        if (topic < corpus::kNoiseTopic) {
            throw InputError(path.string() + ": topic_id must be >= -1 (record " + std::to_string(line) + ")", line);
        }
        if (!out.emplace(rec["doc_id"].get<std::string>(), topic).second) {
            throw InputError(path.string() + ": duplicate doc_id " + rec["doc_id"].get<std::string>(), line);
        }
    }
    return out;
}

void write_assignment(const fs::path& path, const TopicAssignment& assignment) {
    std::vector<json> records;
    records.reserve(assignment.size());
    for (const auto& [doc, topic] : assignment) records.push_back({{"doc_id", doc}, {"topic_id", topic}});
    write_jsonl_atomic(path, records);
}

void validate_assignment(const TopicAssignment& assignment, std::span<const Document> docs) {
    std::unordered_set<std::string_view> known;
    for (const auto& d : docs) {
        known.insert(d.doc_id);
        if (!assignment.contains(d.doc_id)) throw InputError("assignment is missing document " + d.doc_id);
    }
    for (const auto& [doc, topic] : assignment) {
        if (!known.contains(doc)) throw InputError("assignment references unknown document " + doc);
    }
}

void apply_assignment(const TopicAssignment& assignment, std::vector<Document>& docs) {
    for (auto& d : docs) {
        const auto it = assignment.find(d.doc_id);
        if (it == assignment.end()) throw InputError("assignment is missing document " + d.doc_id);
        d.topic_id = it->second;
    }
}

json to_json(const Topic& topic) {
    return {{"topic_id", topic.topic_id},
            {"keywords", topic.keywords},
            {"scores", topic.scores},
            {"short", topic.short_keywords},
            {"community_presence", topic.community_presence}};
}

Topic topic_from_json(const json& j) {
    Topic t;
    t.topic_id = j.at("topic_id").get<int>();
    t.keywords = j.at("keywords").get<std::vector<std::string>>();
    t.scores = j.value("scores", std::vector<double>{});
    t.short_keywords = j.value("short", false);
    t.community_presence = j.value("community_presence", std::map<std::string, std::size_t>{});
    return t;
}

bool is_stopword(std::string_view token) {
    static const std::unordered_set<std::string_view> stopwords = {
        "a", "about", "above", "after", "again", "against", "all", "also", "am", "an", "and", "any", "are",
        "aren", "as", "at", "be", "because", "been", "before", "being", "below", "between", "both", "but",
        "by", "can", "could", "couldn", "did", "didn", "do", "does", "doesn", "doing", "don", "down",
        "during", "each", "even", "few", "for", "from", "further", "get", "got", "had", "hadn", "has",
        "hasn", "have", "haven", "having", "he", "her", "here", "hers", "herself", "him", "himself", "his",
        "how", "http", "https", "if", "in", "into", "is", "isn", "it", "its", "itself", "just", "ll", "may",
        "me", "might", "more", "most", "much", "must", "my", "myself", "no", "nor", "not", "now", "of",
        "off", "on", "once", "one", "only", "or", "other", "our", "ours", "ourselves", "out", "over", "own",
        "re", "really", "same", "she", "should", "shouldn", "so", "some", "still", "such", "than", "that",
        "the", "their", "theirs", "them", "themselves", "then", "there", "these", "they", "this", "those",
        "through", "to", "too", "under", "until", "up", "us", "ve", "very", "was", "wasn", "we", "were",
        "weren", "what", "when", "where", "which", "while", "who", "whom", "why", "will", "with", "won",
        "would", "wouldn", "www", "you", "your", "yours", "yourself", "yourselves", "com",
    };
    return stopwords.contains(token);
}

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    const auto flush = [&] {
        if (cur.size() >= 2 && !is_stopword(cur)) out.push_back(cur);
        cur.clear();
    };
    for (unsigned char c : text) {
        if (c >= 0x80 || std::isalnum(c)) {
            cur.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
        } else {
            flush();
        }
    }
    flush();
    return out;
}

std::vector<Topic> topic_keywords(const TopicAssignment& assignment, std::span<const Document> docs,
                                  std::size_t top_k) {
    std::map<int, std::unordered_map<std::string, std::size_t>> tf;
    std::map<int, std::map<std::string, std::size_t>> presence;
    std::unordered_map<std::string, std::size_t> total;
    std::size_t token_count = 0;

    for (const auto& doc : docs) {
        const auto it = assignment.find(doc.doc_id);
        if (it == assignment.end() || it->second == corpus::kNoiseTopic) continue;
        const int topic = it->second;
        ++presence[topic][doc.community_id];
        auto& counts = tf[topic];
        for (auto& tok : tokenize(doc.text)) {
            ++total[tok];
            ++counts[tok];
            ++token_count;
        }
    }
    // Topics with members but no surviving tokens still need an entry.
    for (const auto& [doc, topic] : assignment) {
        if (topic != corpus::kNoiseTopic) tf[topic];
    }

    const double avg_tokens = tf.empty() ? 0.0 : static_cast<double>(token_count) / static_cast<double>(tf.size());
    std::vector<Topic> topics;
    for (const auto& [topic_id, counts] : tf) {
        std::vector<std::pair<std::string, double>> scored;
        scored.reserve(counts.size());
        for (const auto& [word, count] : counts) {
            const double f = static_cast<double>(total.at(word));
            scored.emplace_back(word, static_cast<double>(count) * std::log(1.0 + avg_tokens / f));
        }
        std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        Topic t;
        t.topic_id = topic_id;
        for (std::size_t i = 0; i < std::min(top_k, scored.size()); ++i) {
            t.keywords.push_back(scored[i].first);
            t.scores.push_back(scored[i].second);
        }
        if (t.keywords.size() < top_k) {
            t.short_keywords = true;
            t.keywords.resize(top_k);
            t.scores.resize(top_k, 0.0);
        }
        if (auto p = presence.find(topic_id); p != presence.end()) t.community_presence = p->second;
        topics.push_back(std::move(t));
    }
    return topics;
}

json to_json(const Chunk& chunk) {
    return {{"chunk_id", chunk.chunk_id},
            {"community_id", chunk.community_id},
            {"topic_id", chunk.topic_id},
            {"doc_ids", chunk.doc_ids}};
}

Chunk chunk_from_json(const json& j) {
    return {j.at("chunk_id").get<std::string>(), j.at("community_id").get<std::string>(), j.at("topic_id").get<int>(),
            j.at("doc_ids").get<std::vector<std::string>>()};
}

std::vector<Chunk> build_chunks(std::span<const Document> docs, std::size_t chunk_size, std::size_t max_chunks,
                                std::uint64_t seed) {
    if (chunk_size == 0) throw ConfigError("chunk_size must be positive");
    std::map<std::pair<std::string, int>, std::vector<std::string>> groups;
    for (const auto& doc : docs) {
        if (!doc.topic_id || *doc.topic_id == corpus::kNoiseTopic) continue;
        groups[{doc.community_id, *doc.topic_id}].push_back(doc.doc_id);
    }

    std::vector<Chunk> chunks;
    for (auto& [key, ids] : groups) {
        const auto& [community, topic] = key;
        std::sort(ids.begin(), ids.end());
        Rng rng(derive_seed(seed, "chunks/" + community + "/" + std::to_string(topic)));
        rng.shuffle(ids);
        const std::size_t count = std::min(max_chunks, ids.size() / chunk_size);
        for (std::size_t c = 0; c < count; ++c) {
            Chunk chunk;
            chunk.chunk_id = community + "/t" + std::to_string(topic) + "/c" + std::to_string(c);
            chunk.community_id = community;
            chunk.topic_id = topic;
            chunk.doc_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(c * chunk_size),
                                 ids.begin() + static_cast<std::ptrdiff_t>((c + 1) * chunk_size));
            chunks.push_back(std::move(chunk));
        }
    }
    return chunks;
}

ChunkCounts count_chunks(std::span<const Chunk> chunks) {
    ChunkCounts counts;
    for (const auto& c : chunks) ++counts[c.topic_id][c.community_id];
    return counts;
}

std::vector<int> retain_topics(const ChunkCounts& counts, std::size_t n_communities, std::size_t min_communities) {
    const std::size_t threshold =
        std::max<std::size_t>(1, min_communities > 0 ? min_communities : (n_communities > 0 ? n_communities - 1 : 0));
    std::vector<int> kept;
    for (const auto& [topic, per_community] : counts) {
        if (topic == corpus::kNoiseTopic) continue;
        std::size_t bearing = 0;
        for (const auto& [community, n] : per_community) bearing += n > 0 ? 1 : 0;
        if (bearing >= threshold) kept.push_back(topic);
    }
    return kept;
}

}  // namespace forge::topics
