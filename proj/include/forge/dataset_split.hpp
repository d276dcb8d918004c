#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "forge/common.hpp"
#include "forge/instruct_gen.hpp"

namespace forge::split {

enum class SplitKind { Random, Topicwise };

[[nodiscard]] std::string_view to_string(SplitKind kind) noexcept;
[[nodiscard]] std::optional<SplitKind> parse_split_kind(std::string_view s) noexcept;

// The unit of splitting: one successful generation query.
struct QueryRef {
    std::string query_id;
    int topic_id = 0;
};

struct SplitPlan {
    SplitKind kind = SplitKind::Random;
    double ratio = 0.85;
    std::uint64_t seed = 0;
    std::vector<std::string> train_query_ids;  // sorted
    std::vector<std::string> test_query_ids;   // sorted
    std::vector<std::string> warnings;

    [[nodiscard]] double realized_ratio() const noexcept;
    [[nodiscard]] bool in_train(const std::string& query_id) const;
    [[nodiscard]] bool in_test(const std::string& query_id) const;
};

[[nodiscard]] json to_json(const SplitPlan& plan);
[[nodiscard]] SplitPlan plan_from_json(const json& j);

// Seeded shuffle, then the first round(ratio * |queries|) go to train.
// Throws ConfigError for ratio outside (0, 1) or fewer than 2 queries.
[[nodiscard]] SplitPlan split_random(std::span<const QueryRef> queries, double ratio, std::uint64_t seed);

// Topics in the given order are assigned to train until the cumulative train
// query count reaches ratio * total; the rest go to test.
struct TopicPacking {
    std::vector<int> train_topics;
    std::vector<int> test_topics;
};
[[nodiscard]] TopicPacking pack_topics(std::span<const std::pair<int, std::size_t>> ordered_topic_counts,
                                       double ratio);

// Shuffles topics (ascending order first) with the seed, then packs them.
// Throws ConfigError with fewer than 2 distinct topics.
[[nodiscard]] SplitPlan split_topicwise(std::span<const QueryRef> queries, double ratio, std::uint64_t seed);

// One chat-format record: user = instruction, assistant = response.
[[nodiscard]] json finetune_record(const gen::Demonstration& demo);

struct FinetuneExport {
    std::string community_id;
    std::vector<json> train;
    std::vector<json> validation;
};

// Demonstrations of train-side queries, with round(validation_fraction * N)
// records held out by a seeded draw. Throws Error if the pool has no training
// demonstrations.
[[nodiscard]] FinetuneExport export_finetune(std::span<const gen::Demonstration> pool, const std::string& community_id,
                                             const SplitPlan& plan, double validation_fraction, std::uint64_t seed);

// Writes <dir>/<community>.train.jsonl and, when non-empty, .valid.jsonl.
void write_export(const fs::path& dir, const FinetuneExport& exported);

}  // namespace forge::split
