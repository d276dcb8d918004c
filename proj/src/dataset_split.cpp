#include "forge/dataset_split.hpp"

#include <cmath>
#include <set>

#include <spdlog/spdlog.h>

#include "forge/errors.hpp"

namespace forge::split {

std::string_view to_string(SplitKind kind) noexcept { return kind == SplitKind::Topicwise ? "topicwise" : "random"; }

std::optional<SplitKind> parse_split_kind(std::string_view s) noexcept {
    if (s == "random") return SplitKind::Random;
    if (s == "topicwise") return SplitKind::Topicwise;
    return std::nullopt;
}

double SplitPlan::realized_ratio() const noexcept {
    const auto total = train_query_ids.size() + test_query_ids.size();
    return total == 0 ? 0.0 : static_cast<double>(train_query_ids.size()) / static_cast<double>(total);
}

bool SplitPlan::in_train(const std::string& query_id) const {
    return std::binary_search(train_query_ids.begin(), train_query_ids.end(), query_id);
}

bool SplitPlan::in_test(const std::string& query_id) const {
    return std::binary_search(test_query_ids.begin(), test_query_ids.end(), query_id);
}

json to_json(const SplitPlan& plan) {
    return {{"split_kind", to_string(plan.kind)},
            {"ratio", plan.ratio},
            {"seed", plan.seed},
            {"train_query_ids", plan.train_query_ids},
            {"test_query_ids", plan.test_query_ids},
            {"realized_ratio", plan.realized_ratio()},
            {"warnings", plan.warnings}};
}

SplitPlan plan_from_json(const json& j) {
    SplitPlan plan;
    const auto kind = parse_split_kind(j.at("split_kind").get<std::string>());
    if (!kind) throw InputError("split manifest: unknown split_kind");
    plan.kind = *kind;
    plan.ratio = j.at("ratio").get<double>();
    plan.seed = j.at("seed").get<std::uint64_t>();
    plan.train_query_ids = j.at("train_query_ids").get<std::vector<std::string>>();
    plan.test_query_ids = j.at("test_query_ids").get<std::vector<std::string>>();
    plan.warnings = j.value("warnings", std::vector<std::string>{});
    std::sort(plan.train_query_ids.begin(), plan.train_query_ids.end());
    std::sort(plan.test_query_ids.begin(), plan.test_query_ids.end());
    return plan;
}

namespace {

void check_ratio(double ratio) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split ratio must be in (0, 1), got " + std::to_string(ratio));
}

void warn_if_degenerate(SplitPlan& plan) {
    if (plan.test_query_ids.empty()) {
        plan.warnings.push_back("test side is empty");
    } else if (plan.train_query_ids.empty()) {
        plan.warnings.push_back("train side is empty");
    }
    for (const auto& w : plan.warnings) spdlog::warn("{} split: {}", to_string(plan.kind), w);
}

}  // namespace

SplitPlan split_random(std::span<const QueryRef> queries, double ratio, std::uint64_t seed) {
    check_ratio(ratio);
    if (queries.size() < 2) throw ConfigError("a split needs at least 2 queries");

    std::vector<std::string> ids;
    for (const auto& q : queries) ids.push_back(q.query_id);
    std::sort(ids.begin(), ids.end());
    Rng rng(derive_seed(seed, "split/random"));
    rng.shuffle(ids);

    const auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(ids.size())));
    SplitPlan plan{SplitKind::Random, ratio, seed, {}, {}, {}};
    plan.train_query_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
    plan.test_query_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
    std::sort(plan.train_query_ids.begin(), plan.train_query_ids.end());
    std::sort(plan.test_query_ids.begin(), plan.test_query_ids.end());
    warn_if_degenerate(plan);
    return plan;
}

TopicPacking pack_topics(std::span<const std::pair<int, std::size_t>> ordered_topic_counts, double ratio) {
    std::size_t total = 0;
    for (const auto& [topic, count] : ordered_topic_counts) total += count;
    const double threshold = ratio * static_cast<double>(total);

    TopicPacking packing;
    std::size_t cumulative = 0;
    for (const auto& [topic, count] : ordered_topic_counts) {
        if (static_cast<double>(cumulative) >= threshold) {
            packing.test_topics.push_back(topic);
        } else {
            packing.train_topics.push_back(topic);
            cumulative += count;
        }
    }
    return packing;
}

SplitPlan split_topicwise(std::span<const QueryRef> queries, double ratio, std::uint64_t seed) {
    check_ratio(ratio);
    std::map<int, std::size_t> counts;
    for (const auto& q : queries) ++counts[q.topic_id];
    if (counts.size() < 2) throw ConfigError("a topic-wise split needs at least 2 distinct topics");

    std::vector<std::pair<int, std::size_t>> ordered(counts.begin(), counts.end());
    Rng rng(derive_seed(seed, "split/topicwise"));
    rng.shuffle(ordered);
    const auto packing = pack_topics(ordered, ratio);
    const std::set<int> train_topics(packing.train_topics.begin(), packing.train_topics.end());

    SplitPlan plan{SplitKind::Topicwise, ratio, seed, {}, {}, {}};
    for (const auto& q : queries) {
        (train_topics.contains(q.topic_id) ? plan.train_query_ids : plan.test_query_ids).push_back(q.query_id);
    }
    std::sort(plan.train_query_ids.begin(), plan.train_query_ids.end());
    std::sort(plan.test_query_ids.begin(), plan.test_query_ids.end());

    std::set<int> test_topics;
    for (const auto& q : queries) {
        if (!train_topics.contains(q.topic_id)) test_topics.insert(q.topic_id);
    }
    for (int t : test_topics) {
        if (train_topics.contains(t)) throw IntegrityError("topic-wise split leaked topic " + std::to_string(t));
    }
    warn_if_degenerate(plan);
    return plan;
}

json finetune_record(const gen::Demonstration& demo) {
    return {{"messages", json::array({{{"role", "user"}, {"content", demo.instruction}},
                                      {{"role", "assistant"}, {"content", demo.response}}})}};
}

FinetuneExport export_finetune(std::span<const gen::Demonstration> pool, const std::string& community_id,
                               const SplitPlan& plan, double validation_fraction, std::uint64_t seed) {
    if (validation_fraction < 0.0 || validation_fraction >= 1.0) {
        throw ConfigError("validation_fraction must be in [0, 1)");
    }
    std::vector<const gen::Demonstration*> train;
    for (const auto& d : pool) {
        if (d.community_id == community_id && plan.in_train(d.query_id)) train.push_back(&d);
    }
    if (train.empty()) throw Error("no training demonstrations for community " + community_id);

    const auto n_valid =
        static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(train.size())));
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(seed, "export/" + std::string(to_string(plan.kind)) + "/" + community_id));
    rng.shuffle(order);
    std::vector<bool> held_out(train.size(), false);
    for (std::size_t i = 0; i < n_valid; ++i) held_out[order[i]] = true;

    FinetuneExport out{community_id, {}, {}};
    for (std::size_t i = 0; i < train.size(); ++i) {
        (held_out[i] ? out.validation : out.train).push_back(finetune_record(*train[i]));
    }
    return out;
}

void write_export(const fs::path& dir, const FinetuneExport& exported) {
    write_jsonl_atomic(dir / (exported.community_id + ".train.jsonl"), exported.train);
    if (!exported.validation.empty()) {
        write_jsonl_atomic(dir / (exported.community_id + ".valid.jsonl"), exported.validation);
    }
}

}  // namespace forge::split
