#include "forge/instruct_gen.hpp"

#include <cstdio>
#include <mutex>
#include <set>
#include <sstream>
#include <tuple>

#include <spdlog/spdlog.h>

#include "forge/errors.hpp"

namespace forge::gen {

std::vector<std::string> GenerationQuery::communities() const {
    std::vector<std::string> out;
    out.reserve(participants.size());
    for (const auto& [c, chunk] : participants) out.push_back(c);
    return out;
}

json to_json(const GenerationQuery& q) {
    return {{"query_id", q.query_id}, {"topic_id", q.topic_id}, {"keywords", q.keywords}, {"participants", q.participants}};
}

GenerationQuery query_from_json(const json& j) {
    GenerationQuery q;
    q.query_id = j.at("query_id").get<std::string>();
    q.topic_id = j.at("topic_id").get<int>();
    q.keywords = j.value("keywords", std::vector<std::string>{});
    q.participants = j.at("participants").get<std::map<std::string, std::string>>();
    return q;
}

namespace {

std::string format_query_id(int topic, std::size_t seq) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "t%d-q%03zu", topic, seq);
    return buf;
}

}  // namespace

std::vector<GenerationQuery> plan_queries(std::span<const topics::Chunk> chunks, std::span<const int> retained_topics,
                                          const std::map<int, std::vector<std::string>>& keywords,
                                          std::size_t n_communities, std::uint64_t seed,
                                          std::size_t min_participants) {
    const std::size_t threshold =
        std::max<std::size_t>(1, min_participants > 0 ? min_participants : (n_communities > 0 ? n_communities - 1 : 0));

    // topic -> community -> remaining chunk ids (sorted before sampling)
    std::map<int, std::map<std::string, std::vector<std::string>>> pool;
    for (const auto& c : chunks) pool[c.topic_id][c.community_id].push_back(c.chunk_id);

    std::set<int> topics(retained_topics.begin(), retained_topics.end());
    std::vector<GenerationQuery> queries;
    for (int topic : topics) {
        auto& remaining = pool[topic];
        for (auto& [community, ids] : remaining) std::sort(ids.begin(), ids.end());
        Rng rng(derive_seed(seed, "plan/" + std::to_string(topic)));
        const auto kw = keywords.find(topic);
        for (std::size_t seq = 0;; ++seq) {
            std::vector<std::string> eligible;
            for (const auto& [community, ids] : remaining) {
                if (!ids.empty()) eligible.push_back(community);
            }
            if (eligible.size() < threshold) break;
            GenerationQuery q;
            q.query_id = format_query_id(topic, seq);
            q.topic_id = topic;
            if (kw != keywords.end()) q.keywords = kw->second;
            for (const auto& community : eligible) {
                auto& ids = remaining[community];
                const auto pick = static_cast<std::size_t>(rng.below(ids.size()));
                q.participants.emplace(community, ids[pick]);
                ids.erase(ids.begin() + static_cast<std::ptrdiff_t>(pick));
            }
            queries.push_back(std::move(q));
        }
    }
    return queries;
}

ResolvedChunks resolve_chunks(const GenerationQuery& query, const std::map<std::string, topics::Chunk>& chunks_by_id,
                              const std::map<std::string, std::string>& text_by_doc_id) {
    ResolvedChunks out;
    for (const auto& [community, chunk_id] : query.participants) {
        const auto it = chunks_by_id.find(chunk_id);
        if (it == chunks_by_id.end()) throw IntegrityError("query " + query.query_id + ": unknown chunk " + chunk_id);
        if (it->second.community_id != community) {
            throw IntegrityError("query " + query.query_id + ": chunk " + chunk_id + " does not belong to " + community);
        }
        auto& texts = out[community];
        for (const auto& doc_id : it->second.doc_ids) {
            const auto t = text_by_doc_id.find(doc_id);
            if (t == text_by_doc_id.end()) {
                throw IntegrityError("chunk " + chunk_id + ": unresolvable document " + doc_id);
            }
            texts.push_back(t->second);
        }
    }
    return out;
}

namespace {

std::string single_line(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    bool space = false;
    for (char c : text) {
        if (c == '\n' || c == '\r' || c == '\t' || c == ' ') {
            space = true;
            continue;
        }
        if (space && !out.empty()) out.push_back(' ');
        space = false;
        out.push_back(c);
    }
    return out;
}

std::string join_keywords(const std::vector<std::string>& keywords) {
    std::string out;
    for (const auto& k : keywords) {
        if (k.empty()) continue;
        if (!out.empty()) out += ", ";
        out += k;
    }
    return out;
}

}  // namespace

std::string render_prompt(const GenerationQuery& query, const ResolvedChunks& resolved, const PromptOptions& options) {
    const auto communities = query.communities();
    const auto m = communities.size();
    const std::string order = m == 1 ? "Community 1" : "Community 1 to Community " + std::to_string(m);

    std::ostringstream p;
    p << "You are helping build instruction and survey data that captures how different online communities "
         "think about one topic.\n\n";
    p << "Topic keywords: " << join_keywords(query.keywords) << "\n\n";
    p << "Below are comments written by members of " << m << (m == 1 ? " community" : " communities")
      << ". Each community is identified only by a neutral label.\n";
    for (std::size_t i = 0; i < m; ++i) {
        const auto it = resolved.find(communities[i]);
        if (it == resolved.end()) {
            throw IntegrityError("query " + query.query_id + ": chunk for " + communities[i] + " not resolved");
        }
        p << "\n### Community " << (i + 1) << "\n";
        for (const auto& text : it->second) {
            p << "- " << truncate_utf8(single_line(text), options.comment_char_budget, kTruncationMarker) << "\n";
        }
    }
    p << "\nTask:\n";
    p << "1. Write exactly " << options.instructions
      << " open-ended instructions about the topic. For each instruction, write one response per community, in the "
         "order "
      << order << ", expressing that community's view in its own voice.\n";
    p << "2. Write exactly " << options.questions
      << " multiple-choice questions about the topic, each with exactly 4 options (A, B, C, D). For each question, "
         "give the letter of the option each community would choose, in the order "
      << order << ".\n\n";
    p << "Requirements:\n";
    p << "- Every instruction and question must be answerable solely from the comments above.\n";
    p << "- Design instructions and questions that elicit different responses from the communities.\n";
    p << "- Do not rely on any prior knowledge about these communities; focus only on the given comments.\n\n";
    p << "Output format: reply with a single JSON object and nothing else, matching this schema:\n";
    p << "{\"instructions\": [{\"instruction\": string, \"responses\": [string x " << m << "]} x "
      << options.instructions << "], \"questions\": [{\"question\": string, \"options\": [string x 4], "
      << "\"answers\": [\"A\"|\"B\"|\"C\"|\"D\" x " << m << "]} x " << options.questions << "]}\n";
    return p.str();
}

namespace {

std::string strip_fence(std::string_view raw) {
    std::string s = trim(raw);
    if (s.size() >= 6 && s.starts_with("```") && s.ends_with("```")) {
        s.resize(s.size() - 3);
        const auto nl = s.find('\n');
        s = nl == std::string::npos ? std::string{} : s.substr(nl + 1);
    }
    return s;
}

bool nonempty_string(const json& j) { return j.is_string() && !trim(j.get<std::string>()).empty(); }

}  // namespace

ParseResult parse_generation(std::string_view raw, std::size_t m, int instructions, int questions) {
    json j;
    try {
        j = json::parse(strip_fence(raw));
    } catch (const json::parse_error&) {
        return ParseFailure{"invalid JSON"};
    }
    if (!j.is_object()) return ParseFailure{"not an object"};
    if (!j.contains("instructions") || !j["instructions"].is_array()) return ParseFailure{"missing instructions"};
    if (!j.contains("questions") || !j["questions"].is_array()) return ParseFailure{"missing questions"};
    if (j["instructions"].size() != static_cast<std::size_t>(instructions)) {
        return ParseFailure{"instructions≠" + std::to_string(instructions)};
    }
    if (j["questions"].size() != static_cast<std::size_t>(questions)) {
        return ParseFailure{"questions≠" + std::to_string(questions)};
    }

    ParsedGeneration out;
    for (const auto& item : j["instructions"]) {
        if (!item.is_object() || !item.contains("instruction") || !nonempty_string(item["instruction"])) {
            return ParseFailure{"empty instruction"};
        }
        if (!item.contains("responses") || !item["responses"].is_array()) return ParseFailure{"missing responses"};
        if (item["responses"].size() != m) return ParseFailure{"responses≠" + std::to_string(m)};
        ParsedInstruction pi{item["instruction"].get<std::string>(), {}};
        for (const auto& r : item["responses"]) {
            if (!nonempty_string(r)) return ParseFailure{"empty response"};
            pi.responses.push_back(r.get<std::string>());
        }
        out.instructions.push_back(std::move(pi));
    }
    for (const auto& item : j["questions"]) {
        if (!item.is_object() || !item.contains("question") || !nonempty_string(item["question"])) {
            return ParseFailure{"empty question"};
        }
        if (!item.contains("options") || !item["options"].is_array()) return ParseFailure{"missing options"};
        if (item["options"].size() != 4) return ParseFailure{"options≠4"};
        if (!item.contains("answers") || !item["answers"].is_array()) return ParseFailure{"missing answers"};
        if (item["answers"].size() != m) return ParseFailure{"answers≠" + std::to_string(m)};
        ParsedQuestion pq;
        pq.question = item["question"].get<std::string>();
        for (std::size_t o = 0; o < 4; ++o) {
            if (!nonempty_string(item["options"][o])) return ParseFailure{"empty option"};
            pq.options[o] = item["options"][o].get<std::string>();
        }
        for (const auto& a : item["answers"]) {
            if (!a.is_string()) return ParseFailure{"letter out of range"};
            const auto letter = trim(a.get<std::string>());
            if (letter.size() != 1 || letter[0] < 'A' || letter[0] > 'D') return ParseFailure{"letter out of range"};
            pq.answers.push_back(letter[0]);
        }
        out.questions.push_back(std::move(pq));
    }
    return out;
}

std::string repair_suffix(const ParseFailure& failure, const PromptOptions& options) {
    return "\n\nYour previous reply could not be used (" + failure.reason +
           "). Reply again with only the JSON object described above: exactly " + std::to_string(options.instructions) +
           " instructions and exactly " + std::to_string(options.questions) +
           " questions, one response and one answer letter (A, B, C or D) per community, and exactly 4 options per "
           "question.\n";
}

std::string question_id(std::string_view query_id, int index) {
    return std::string(query_id) + "-s" + std::to_string(index);
}

std::string SurveyEntry::question_id() const { return gen::question_id(query_id, index); }

void Pools::add(Demonstration d) {
    Key key{d.topic_id, d.query_id, d.index, d.community_id};
    if (!demos_.emplace(key, std::move(d)).second) {
        throw IntegrityError("duplicate demonstration key " + std::get<1>(key) + "#" + std::to_string(std::get<2>(key)) +
                             " for " + std::get<3>(key));
    }
}

void Pools::add(SurveyEntry s) {
    Key key{s.topic_id, s.query_id, s.index, s.community_id};
    if (!survey_.emplace(key, std::move(s)).second) {
        throw IntegrityError("duplicate survey key " + std::get<1>(key) + "#" + std::to_string(std::get<2>(key)) +
                             " for " + std::get<3>(key));
    }
}

void Pools::accumulate(const ParsedGeneration& parsed, const GenerationQuery& query) {
    const auto communities = query.communities();
    // Validate first so a collision leaves the pools untouched.
    for (std::size_t i = 0; i < parsed.instructions.size(); ++i) {
        if (parsed.instructions[i].responses.size() != communities.size()) {
            throw IntegrityError("query " + query.query_id + ": response count does not match participants");
        }
        for (const auto& c : communities) {
            if (demos_.contains({query.topic_id, query.query_id, static_cast<int>(i), c})) {
                throw IntegrityError("duplicate demonstration key for query " + query.query_id);
            }
        }
    }
    for (std::size_t q = 0; q < parsed.questions.size(); ++q) {
        if (parsed.questions[q].answers.size() != communities.size()) {
            throw IntegrityError("query " + query.query_id + ": answer count does not match participants");
        }
        for (const auto& c : communities) {
            if (survey_.contains({query.topic_id, query.query_id, static_cast<int>(q), c})) {
                throw IntegrityError("duplicate survey key for query " + query.query_id);
            }
        }
    }
    for (std::size_t i = 0; i < parsed.instructions.size(); ++i) {
        for (std::size_t k = 0; k < communities.size(); ++k) {
            add(Demonstration{query.query_id, query.topic_id, static_cast<int>(i), communities[k],
                              parsed.instructions[i].instruction, parsed.instructions[i].responses[k]});
        }
    }
    for (std::size_t q = 0; q < parsed.questions.size(); ++q) {
        for (std::size_t k = 0; k < communities.size(); ++k) {
            add(SurveyEntry{query.query_id, query.topic_id, static_cast<int>(q), communities[k],
                            parsed.questions[q].question, parsed.questions[q].options, parsed.questions[q].answers[k]});
        }
    }
}

std::vector<Demonstration> Pools::comminst(const std::string& community_id) const {
    std::vector<Demonstration> out;
    for (const auto& [key, d] : demos_) {
        if (d.community_id == community_id) out.push_back(d);
    }
    return out;
}

std::vector<SurveyEntry> Pools::commsurvey(const std::string& community_id) const {
    std::vector<SurveyEntry> out;
    for (const auto& [key, s] : survey_) {
        if (s.community_id == community_id) out.push_back(s);
    }
    return out;
}

std::vector<std::string> Pools::communities() const {
    std::set<std::string> set;
    for (const auto& [k, d] : demos_) set.insert(d.community_id);
    for (const auto& [k, s] : survey_) set.insert(s.community_id);
    return {set.begin(), set.end()};
}

json to_json(const Demonstration& d) {
    return {{"query_id", d.query_id}, {"topic_id", d.topic_id},       {"index", d.index},
            {"instruction", d.instruction}, {"response", d.response}, {"template_version", kTemplateVersion}};
}

json to_json(const SurveyEntry& s) {
    return {{"question_id", s.question_id()},
            {"query_id", s.query_id},
            {"topic_id", s.topic_id},
            {"index", s.index},
            {"question", s.question},
            {"options", s.options},
            {"answer", std::string(1, s.answer)},
            {"template_version", kTemplateVersion}};
}

void Pools::write(const fs::path& run_dir, std::span<const std::string> communities) const {
    for (const auto& c : communities) {
        std::vector<json> inst;
        for (const auto& d : comminst(c)) inst.push_back(to_json(d));
        write_jsonl_atomic(run_dir / "comminst" / (c + ".jsonl"), inst);
        std::vector<json> survey;
        for (const auto& s : commsurvey(c)) survey.push_back(to_json(s));
        write_jsonl_atomic(run_dir / "commsurvey" / (c + ".jsonl"), survey);
    }
}

Pools Pools::load(const fs::path& run_dir, std::span<const std::string> communities) {
    Pools pools;
    for (const auto& c : communities) {
        for (const auto& r : read_jsonl(run_dir / "comminst" / (c + ".jsonl"))) {
            pools.add(Demonstration{r.at("query_id").get<std::string>(), r.at("topic_id").get<int>(),
                                    r.at("index").get<int>(), c, r.at("instruction").get<std::string>(),
                                    r.at("response").get<std::string>()});
        }
        for (const auto& r : read_jsonl(run_dir / "commsurvey" / (c + ".jsonl"))) {
            const auto answer = r.at("answer").get<std::string>();
            if (answer.size() != 1 || answer[0] < 'A' || answer[0] > 'D') {
                throw InputError("commsurvey/" + c + ".jsonl: answer letter out of range");
            }
            pools.add(SurveyEntry{r.at("query_id").get<std::string>(), r.at("topic_id").get<int>(),
                                  r.at("index").get<int>(), c, r.at("question").get<std::string>(),
                                  r.at("options").get<std::array<std::string, 4>>(), answer[0]});
        }
    }
    return pools;
}

std::vector<std::string> GenerateResult::successful_query_ids() const {
    std::vector<std::string> out;
    for (const auto& o : outcomes) {
        if (o.ok) out.push_back(o.query_id);
    }
    return out;
}

GenerateResult generate(std::span<const GenerationQuery> queries, const ChunkResolver& resolve,
                        llm::ChatBackend& generator, const GenerateOptions& options) {
    GenerateResult result;
    result.outcomes.resize(queries.size());
    std::vector<std::optional<ParsedGeneration>> parsed(queries.size());

    parallel_for(queries.size(), options.workers, [&](std::size_t i) {
        const auto& query = queries[i];
        auto& outcome = result.outcomes[i];
        outcome.query_id = query.query_id;
        const std::string prompt = render_prompt(query, resolve(query), options.prompt);
        const std::uint64_t query_seed = derive_seed(options.seed, "generate/" + query.query_id);
        std::string attempt_prompt = prompt;
        for (int attempt = 0; attempt <= options.gen_retry; ++attempt) {
            ++outcome.attempts;
            const auto batch = generator.complete(attempt_prompt, options.temperature, 1,
                                                  derive_seed(query_seed, "attempt/" + std::to_string(attempt)));
            auto res = parse_generation(batch.completions.front(), query.participants.size(),
                                        options.prompt.instructions, options.prompt.questions);
            if (auto* ok = std::get_if<ParsedGeneration>(&res)) {
                parsed[i] = std::move(*ok);
                outcome.ok = true;
                outcome.failure.clear();
                return;
            }
            outcome.failure = std::get<ParseFailure>(res).reason;
            attempt_prompt = prompt + repair_suffix(std::get<ParseFailure>(res), options.prompt);
        }
        spdlog::warn("query {} skipped after {} attempts: {}", query.query_id, outcome.attempts, outcome.failure);
    });

    for (std::size_t i = 0; i < queries.size(); ++i) {
        if (parsed[i]) result.pools.accumulate(*parsed[i], queries[i]);
    }
    return result;
}

void write_query_ledger(const fs::path& path, std::span<const GenerationQuery> queries,
                        std::span<const QueryOutcome> outcomes) {
    std::vector<json> records;
    for (std::size_t i = 0; i < queries.size(); ++i) {
        json r = to_json(queries[i]);
        if (i < outcomes.size()) {
            r["status"] = outcomes[i].ok ? "ok" : "failed";
            r["attempts"] = outcomes[i].attempts;
            if (!outcomes[i].ok) r["failure"] = outcomes[i].failure;
        }
        records.push_back(std::move(r));
    }
    write_jsonl_atomic(path, records);
}

std::vector<LedgerEntry> read_query_ledger(const fs::path& path) {
    std::vector<LedgerEntry> out;
    for (const auto& r : read_jsonl(path)) out.push_back({query_from_json(r), r.value("status", "") == "ok"});
    return out;
}

}  // namespace forge::gen
