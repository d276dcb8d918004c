#pragma once

#include <array>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <tuple>
#include <variant>
#include <vector>

#include "forge/common.hpp"
#include "forge/llm_gateway.hpp"
#include "forge/topic_model.hpp"

namespace forge::gen {

// Stamped into every pool record produced with the template below.
inline constexpr std::string_view kTemplateVersion = "gen-template-v1";

struct GenerationQuery {
    std::string query_id;
    int topic_id = 0;
    std::vector<std::string> keywords;
    // community_id -> chunk_id. Iteration order (sorted by community id) fixes
    // the neutral "Community k" labels and the order of responses and answers.
    std::map<std::string, std::string> participants;

    [[nodiscard]] std::vector<std::string> communities() const;
};

[[nodiscard]] json to_json(const GenerationQuery& q);
[[nodiscard]] GenerationQuery query_from_json(const json& j);

// Per retained topic (ascending): while at least `min_participants`
// communities (0 = n - 1) have unconsumed chunks on the topic, draw one chunk
// from each of them without replacement and emit a query.
[[nodiscard]] std::vector<GenerationQuery> plan_queries(std::span<const topics::Chunk> chunks,
                                                        std::span<const int> retained_topics,
                                                        const std::map<int, std::vector<std::string>>& keywords,
                                                        std::size_t n_communities, std::uint64_t seed,
                                                        std::size_t min_participants = 0);

struct PromptOptions {
    std::size_t comment_char_budget = 1000;
    int instructions = 3;
    int questions = 2;
};

inline constexpr std::string_view kTruncationMarker = " [...]";

// community_id -> comment texts of that community's chunk, in chunk order.
using ResolvedChunks = std::map<std::string, std::vector<std::string>>;

// Looks up every participant chunk and its documents; throws IntegrityError
// on dangling chunk or document ids.
[[nodiscard]] ResolvedChunks resolve_chunks(const GenerationQuery& query,
                                            const std::map<std::string, topics::Chunk>& chunks_by_id,
                                            const std::map<std::string, std::string>& text_by_doc_id);

[[nodiscard]] std::string render_prompt(const GenerationQuery& query, const ResolvedChunks& resolved,
                                        const PromptOptions& options = {});

struct ParsedInstruction {
    std::string instruction;
    std::vector<std::string> responses;  // one per participant, participant order
};

struct ParsedQuestion {
    std::string question;
    std::array<std::string, 4> options;
    std::vector<char> answers;  // 'A'..'D', participant order
};

struct ParsedGeneration {
    std::vector<ParsedInstruction> instructions;
    std::vector<ParsedQuestion> questions;
};

struct ParseFailure {
    std::string reason;  // the first violated constraint
};

using ParseResult = std::variant<ParsedGeneration, ParseFailure>;

// Strict parse of {"instructions": [...], "questions": [...]}. A single
// surrounding markdown code fence is tolerated.
[[nodiscard]] ParseResult parse_generation(std::string_view raw, std::size_t m, int instructions = 3,
                                           int questions = 2);

[[nodiscard]] std::string repair_suffix(const ParseFailure& failure, const PromptOptions& options);

struct Demonstration {
    std::string query_id;
    int topic_id = 0;
    int index = 0;
    std::string community_id;
    std::string instruction;
    std::string response;
};

// One community's view of a survey item.
struct SurveyEntry {
    std::string query_id;
    int topic_id = 0;
    int index = 0;
    std::string community_id;
    std::string question;
    std::array<std::string, 4> options;
    char answer = 'A';

    [[nodiscard]] std::string question_id() const;
};

[[nodiscard]] std::string question_id(std::string_view query_id, int index);

// CommInst / CommSurvey pools for all communities. Entries are keyed by
// (topic_id, query_id, index, community_id), so merge order never changes the
// written files.
class Pools {
public:
    using Key = std::tuple<int, std::string, int, std::string>;

    // Throws IntegrityError if any key is already present.
    void accumulate(const ParsedGeneration& parsed, const GenerationQuery& query);

    [[nodiscard]] std::vector<Demonstration> comminst(const std::string& community_id) const;
    [[nodiscard]] std::vector<SurveyEntry> commsurvey(const std::string& community_id) const;
    [[nodiscard]] std::vector<std::string> communities() const;
    [[nodiscard]] std::size_t demonstration_count() const noexcept { return demos_.size(); }
    [[nodiscard]] std::size_t survey_count() const noexcept { return survey_.size(); }

    void add(Demonstration d);
    void add(SurveyEntry s);

    // <run_dir>/comminst/<community>.jsonl and <run_dir>/commsurvey/<community>.jsonl,
    // one file per listed community (empty pools give empty files).
    void write(const fs::path& run_dir, std::span<const std::string> communities) const;
    [[nodiscard]] static Pools load(const fs::path& run_dir, std::span<const std::string> communities);

private:
    std::map<Key, Demonstration> demos_;
    std::map<Key, SurveyEntry> survey_;
};

[[nodiscard]] json to_json(const Demonstration& d);
[[nodiscard]] json to_json(const SurveyEntry& s);

struct GenerateOptions {
    PromptOptions prompt;
    int gen_retry = 2;
    double temperature = 0.7;
    std::size_t workers = 1;
    std::uint64_t seed = 0;
};

struct QueryOutcome {
    std::string query_id;
    bool ok = false;
    int attempts = 0;
    std::string failure;
};

struct GenerateResult {
    Pools pools;
    std::vector<QueryOutcome> outcomes;  // same order as the input queries

    [[nodiscard]] std::vector<std::string> successful_query_ids() const;
};

using ChunkResolver = std::function<ResolvedChunks(const GenerationQuery&)>;

// Renders, sends and parses every query. Unparseable output is retried up to
// gen_retry times with a repair suffix, then the query is skipped. Backend
// failures propagate.
[[nodiscard]] GenerateResult generate(std::span<const GenerationQuery> queries, const ChunkResolver& resolve,
                                      llm::ChatBackend& generator, const GenerateOptions& options);

// Query ledger: one line per query with its status.
void write_query_ledger(const fs::path& path, std::span<const GenerationQuery> queries,
                        std::span<const QueryOutcome> outcomes);

struct LedgerEntry {
    GenerationQuery query;
    bool ok = false;
};
[[nodiscard]] std::vector<LedgerEntry> read_query_ledger(const fs::path& path);

}  // namespace forge::gen
