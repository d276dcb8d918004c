#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "forge/common.hpp"
#include "forge/instruct_gen.hpp"
#include "forge/llm_gateway.hpp"

namespace forge::eval {

enum class ModeKind { Plain, Steering, Context, SteeringContext };

[[nodiscard]] std::string_view to_string(ModeKind kind) noexcept;
[[nodiscard]] std::optional<ModeKind> parse_mode(std::string_view s) noexcept;

struct EvalMode {
    ModeKind kind = ModeKind::Plain;
    std::string display_name;  // steering kinds: community name as shown after "r/"
    std::size_t context_k = 300;

    [[nodiscard]] bool steering() const noexcept {
        return kind == ModeKind::Steering || kind == ModeKind::SteeringContext;
    }
    [[nodiscard]] bool context() const noexcept {
        return kind == ModeKind::Context || kind == ModeKind::SteeringContext;
    }
};

inline constexpr std::string_view kPlainDirective =
    "Select only one answer by stating either A, B, C, or D. Do not provide any additional explanation or "
    "rationale for your choice.";
inline constexpr std::string_view kContextDirective =
    "According to the following statements, learn the mindset and select only one most relevant answer by "
    "stating either A, B, C, or D. Do not provide any additional explanation or rationale for your choice.";

[[nodiscard]] std::string steering_directive(std::string_view display_name);

// A survey question as administered (community-independent).
struct SurveyQuestion {
    std::string question_id;
    std::string query_id;
    int topic_id = 0;
    std::string question;
    std::array<std::string, 4> options;
};

// Question text, lettered options, then the directive. Context kinds use the
// context directive instead, followed by the retrieved comments one per line
// in ranking order. Throws ConfigError when a steering kind has no display name.
[[nodiscard]] std::string build_survey_prompt(const SurveyQuestion& item, const EvalMode& mode,
                                              std::span<const std::string> retrieved = {});

struct Candidate {
    std::string doc_id;
    std::string text;
};

struct RankedDoc {
    std::string doc_id;
    std::string text;
    double similarity = 0.0;
};

// Top-k candidates by cosine similarity to the query embedding, ties broken
// by doc_id. k is capped at the candidate count (with a warning). Throws
// Error on an empty candidate set when k > 0.
[[nodiscard]] std::vector<RankedDoc> retrieve_context(const std::string& query_text,
                                                      std::span<const Candidate> candidates, std::size_t k,
                                                      llm::EmbeddingCache& embedder);

// Letters 'A'..'D', or kUnparseable.
inline constexpr char kUnparseable = '?';
inline constexpr char kAbstain = '-';

// Rule 1: the first whitespace-delimited token, minus trailing punctuation, is
// a single letter a-d/A-D. Rule 2: the first "answer is <L>". Otherwise
// unparseable.
[[nodiscard]] char parse_answer(std::string_view completion);

// Most frequent letter, ties to the alphabetically first; kAbstain when empty.
[[nodiscard]] char majority_vote(std::span<const char> votes);

struct EvalRecord {
    std::string question_id;
    std::string query_id;
    int topic_id = 0;
    std::string community_id;
    std::string backend_id;
    std::string mode;
    std::vector<std::string> completions;
    std::vector<char> votes;  // parseable letters only
    char final_answer = kAbstain;
    std::optional<char> truth;
    std::optional<bool> correct;
};

[[nodiscard]] json to_json(const EvalRecord& r);
[[nodiscard]] EvalRecord record_from_json(const json& j);

struct Counts {
    std::size_t correct = 0;
    std::size_t incorrect = 0;
    std::size_t abstained = 0;
    std::size_t skipped = 0;
};

struct EvalReport {
    std::string community_id;
    std::string backend_id;
    std::string mode;
    Counts counts;

    // correct / (correct + incorrect + abstained); nullopt with no scored items.
    [[nodiscard]] std::optional<double> accuracy() const noexcept;
};

[[nodiscard]] json to_json(const EvalReport& r);

[[nodiscard]] EvalReport summarize(std::span<const EvalRecord> records, const std::string& community_id,
                                   const std::string& backend_id, const std::string& mode, std::size_t skipped);

// Survey item plus this community's semi-ground truth, if it has one.
struct AdministeredItem {
    SurveyQuestion question;
    std::optional<char> truth;
    std::vector<std::string> context;  // retrieved comments (context kinds)
};

struct AdministerOptions {
    int n_samples = 20;
    double temperature = 0.8;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    // Existing records file: items already present are reused, new records are
    // appended to it as they complete so an outage can be resumed.
    std::optional<fs::path> records_path;
};

struct AdministerResult {
    std::vector<EvalRecord> records;  // sorted by question id
    EvalReport report;
};

// Items without a truth are counted as skipped and never sent to the backend.
// Abstentions count as incorrect in the accuracy denominator.
[[nodiscard]] AdministerResult administer(std::span<const AdministeredItem> items, const std::string& community_id,
                                          llm::ChatBackend& subject, const EvalMode& mode,
                                          const AdministerOptions& options);

[[nodiscard]] std::vector<SurveyQuestion> collect_questions(std::span<const gen::SurveyEntry> entries);

}  // namespace forge::eval
