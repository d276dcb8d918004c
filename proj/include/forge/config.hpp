#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "forge/common.hpp"

namespace forge::config {

struct CommunitySpec {
    std::string id;
    std::string display_name;
    fs::path path;
};

struct BackendSpec {
    std::string id;
    std::string role;  // "chat" | "embedding"
    std::string kind;  // "mock" | "remote_http"

    // remote_http
    std::string model;
    std::string base_url;
    std::string api_key_env;
    bool supports_n = true;
    double price_prompt_per_1k = 0.0;
    double price_completion_per_1k = 0.0;
    int requests_per_minute = 0;
    int retry_max = 3;
    int retry_base_ms = 500;
    int timeout_seconds = 120;
    int max_tokens = 0;

    // mock chat
    std::string mock_mode = "rule";  // "rule" | "canned" | "constant"
    fs::path mock_script;
    std::string mock_text;

    // embedding
    std::size_t dim = 0;

    json raw;
};

struct BertopicParams {
    int n_neighbors = 15;
    int n_components = 5;
    int min_cluster_size = 40;
};

struct TopicModelConfig {
    std::string provider = "kmeans";  // "kmeans" | "import"
    std::string embedder;
    int k = 8;
    std::size_t min_topic_size = 40;
    int max_iter = 100;
    std::size_t char_budget = 2000;
    std::size_t embed_batch = 64;
    fs::path assignments_path;
    std::size_t chunk_size = 50;
    std::size_t max_chunks = 5;
    BertopicParams bertopic;
};

struct GenerationConfig {
    std::string generator;
    int instructions_per_query = 3;
    int questions_per_query = 2;
    std::size_t min_participants = 0;  // 0 = n - 1
    int gen_retry = 2;
    std::size_t comment_char_budget = 1000;
    double temperature = 0.7;
    double budget_usd = 0.0;  // 0 = no ceiling
};

struct SplitConfig {
    std::vector<std::string> kinds{"random", "topicwise"};
    double ratio = 0.85;
    double validation_fraction = 0.05;
};

struct EvalConfig {
    std::vector<std::string> subjects;
    std::vector<std::string> modes{"plain"};
    std::vector<std::string> communities;  // empty = all
    int n_samples = 20;
    double temperature = 0.8;
    std::size_t context_k = 300;
    std::size_t context_char_budget = 1000;
    std::string embedder;  // empty = topic_model.embedder
    std::string split = "random";
};

struct AgreementConfig {
    std::size_t min_common = 5;
};

struct Config {
    std::string domain_name;
    std::uint64_t seed = 0;
    fs::path run_dir;
    std::size_t workers = 1;
    std::vector<CommunitySpec> communities;
    std::vector<BackendSpec> backends;
    TopicModelConfig topic_model;
    GenerationConfig generation;
    SplitConfig split;
    EvalConfig eval;
    AgreementConfig agreement;

    json raw;          // the parsed document, with defaults filled in
    std::string hash;  // sha256 of the canonical document

    [[nodiscard]] const BackendSpec* backend(std::string_view id) const noexcept;
    [[nodiscard]] const CommunitySpec* community(std::string_view id) const noexcept;
    [[nodiscard]] std::vector<std::string> community_ids() const;
};

// Parses and validates. Relative paths resolve against `base_dir`. All
// problems are collected and reported together as one ConfigError.
[[nodiscard]] Config parse_config(const json& doc, const fs::path& base_dir);
[[nodiscard]] Config load_config(const fs::path& path);

}  // namespace forge::config
