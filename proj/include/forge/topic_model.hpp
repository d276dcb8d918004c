#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "forge/common.hpp"
#include "forge/corpus.hpp"
#include "forge/llm_gateway.hpp"

namespace forge::topics {

using corpus::Document;
using llm::Vector;

// doc_id -> topic_id (-1 = noise). Ordered so iteration is deterministic.
using TopicAssignment = std::map<std::string, int>;

struct EmbedOptions {
    std::size_t char_budget = 2000;
    std::size_t workers = 1;
    std::size_t batch_size = 64;
};

struct EmbedResult {
    std::map<std::string, Vector> vectors;
    std::vector<std::string> truncated;  // doc ids cut to the character budget
};

// Texts longer than the character budget are cut and reported.
[[nodiscard]] EmbedResult embed_documents(std::span<const Document> docs, llm::EmbeddingCache& cache,
                                          const EmbedOptions& options = {});

struct ClusterParams {
    int k = 8;
    std::size_t min_topic_size = 40;
    int max_iter = 100;
};

// Seeded spherical k-means (k-means++ initialisation). Clusters smaller than
// min_topic_size are dissolved into noise; surviving clusters are renumbered
// 0.. by descending size.
[[nodiscard]] TopicAssignment cluster(const std::map<std::string, Vector>& vectors, const ClusterParams& params,
                                      Rng& rng);

// Assignment file: JSONL {"doc_id", "topic_id"}.
[[nodiscard]] TopicAssignment read_assignment(const fs::path& path);
void write_assignment(const fs::path& path, const TopicAssignment& assignment);

// Throws InputError unless every document appears exactly once and no unknown
// doc ids are present.
void validate_assignment(const TopicAssignment& assignment, std::span<const Document> docs);

// Copies topic ids onto the documents.
void apply_assignment(const TopicAssignment& assignment, std::vector<Document>& docs);

struct Topic {
    int topic_id = 0;
    std::vector<std::string> keywords;  // always top_k long; padded with "" when short
    std::vector<double> scores;
    bool short_keywords = false;
    std::map<std::string, std::size_t> community_presence;  // on-topic document counts
};

[[nodiscard]] json to_json(const Topic& topic);
[[nodiscard]] Topic topic_from_json(const json& j);

// Lowercase; split on non-alphanumerics; drop tokens shorter than 2 chars and
// stopwords. Bytes >= 0x80 are kept inside tokens so UTF-8 words stay whole.
[[nodiscard]] std::vector<std::string> tokenize(std::string_view text);
[[nodiscard]] bool is_stopword(std::string_view token);

// Class-based TF-IDF: score(w, t) = tf(w, t) * log(1 + A / f(w)), where A is
// the mean token count per topic and f(w) the count of w across all topics.
// Noise documents are ignored. Ties are broken lexicographically.
[[nodiscard]] std::vector<Topic> topic_keywords(const TopicAssignment& assignment, std::span<const Document> docs,
                                                std::size_t top_k = 10);

struct Chunk {
    std::string chunk_id;
    std::string community_id;
    int topic_id = 0;
    std::vector<std::string> doc_ids;
};

[[nodiscard]] json to_json(const Chunk& chunk);
[[nodiscard]] Chunk chunk_from_json(const json& j);

// Per (community, topic): sort on-topic docs by id, shuffle with a substream of
// `seed`, cut into floor(count / chunk_size) disjoint chunks, keep at most
// max_chunks. Noise and unassigned documents are ignored.
[[nodiscard]] std::vector<Chunk> build_chunks(std::span<const Document> docs, std::size_t chunk_size,
                                              std::size_t max_chunks, std::uint64_t seed);

// topic -> community -> number of chunks.
using ChunkCounts = std::map<int, std::map<std::string, std::size_t>>;
[[nodiscard]] ChunkCounts count_chunks(std::span<const Chunk> chunks);

// A community discusses a topic iff it has at least one chunk on it. Keeps
// topics discussed by at least `min_communities` communities (0 means n - 1,
// and never less than 1); never keeps noise. Sorted ascending.
[[nodiscard]] std::vector<int> retain_topics(const ChunkCounts& counts, std::size_t n_communities,
                                             std::size_t min_communities = 0);

}  // namespace forge::topics
