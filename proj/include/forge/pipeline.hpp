#pragma once

#include <array>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "forge/agreement_stats.hpp"
#include "forge/common.hpp"
#include "forge/config.hpp"
#include "forge/llm_gateway.hpp"

namespace forge::pipeline {

enum class Stage { Ingest, Topics, Chunks, Generate, Split, Export, Eval, Agreement };

inline constexpr std::array kAllStages{Stage::Ingest,   Stage::Topics, Stage::Chunks, Stage::Generate,
                                       Stage::Split,    Stage::Export, Stage::Eval,   Stage::Agreement};

[[nodiscard]] std::string_view to_string(Stage stage) noexcept;
[[nodiscard]] std::optional<Stage> parse_stage(std::string_view s) noexcept;

// Stages whose outputs `stage` reads.
[[nodiscard]] std::vector<Stage> upstream(Stage stage);

struct StageRecord {
    std::string status = "pending";  // pending | running | complete | failed
    std::string started_at;
    std::string finished_at;
    std::string input_fingerprint;
    std::string output_digest;
    json details = json::object();
};

struct RunManifest {
    std::string run_id;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::string template_version;
    std::vector<std::string> communities;
    std::vector<std::string> backend_ids;
    std::map<std::string, StageRecord> stages;
    llm::CallLedger::Totals cost;

    [[nodiscard]] bool complete(Stage stage) const;
    [[nodiscard]] const StageRecord* record(Stage stage) const;
    [[nodiscard]] json to_json() const;
    [[nodiscard]] static RunManifest from_json(const json& j);
};

[[nodiscard]] fs::path manifest_path(const fs::path& run_dir);
// A fresh manifest when none exists yet.
[[nodiscard]] RunManifest load_manifest(const fs::path& run_dir);
void save_manifest(const fs::path& run_dir, const RunManifest& manifest);

// Exclusive ownership of a run directory via <run_dir>/.forge.lock. A lock
// left behind by a dead process is taken over.
class RunLock {
public:
    explicit RunLock(const fs::path& run_dir);
    ~RunLock();
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    fs::path path_;
};

// Command-line overrides. Unset fields fall back to the config.
struct StageOptions {
    bool force = false;
    bool skip_malformed = false;
    std::optional<fs::path> import_assignments;
    std::optional<std::string> generator;
    std::vector<std::string> split_kinds;
    std::optional<double> ratio;
    std::optional<fs::path> plan;
    std::vector<std::string> eval_communities;
    std::vector<std::string> subjects;
    std::vector<std::string> modes;
    std::optional<int> samples;
    std::optional<double> temperature;
    std::optional<std::size_t> context_k;
};

struct StageResult {
    Stage stage = Stage::Ingest;
    bool no_op = false;
    std::uint64_t backend_calls = 0;
    json details = json::object();
};

struct BackendCheck {
    std::string id;
    std::string role;
    bool ok = false;
    std::string message;
};

class Pipeline {
public:
    explicit Pipeline(config::Config cfg);

    // Replace a configured backend, e.g. with an oracle mock in tests.
    void set_chat_backend(const std::string& id, std::shared_ptr<llm::ChatBackend> backend);
    void set_embedding_backend(const std::string& id, std::shared_ptr<llm::EmbeddingBackend> backend);

    // Throws DependencyError if an upstream stage is not complete. Completed
    // stages with an unchanged input fingerprint are no-ops unless forced.
    StageResult run_stage(Stage stage, const StageOptions& options = {});
    std::vector<StageResult> run_all(const StageOptions& options = {});

    std::vector<BackendCheck> check_backends();

    [[nodiscard]] const config::Config& config() const noexcept { return cfg_; }
    [[nodiscard]] const fs::path& run_dir() const noexcept { return cfg_.run_dir; }
    [[nodiscard]] RunManifest manifest() const { return load_manifest(cfg_.run_dir); }
    [[nodiscard]] const llm::CallLedger& ledger() const noexcept { return *ledger_; }

    std::shared_ptr<llm::ChatBackend> chat(const std::string& id);
    std::shared_ptr<llm::EmbeddingCache> embedder(const std::string& id);

private:
    StageResult run_unlocked(Stage stage, const StageOptions& options);
    void apply_budget(const RunManifest& manifest);
    json stage_inputs(Stage stage, const StageOptions& options, const RunManifest& manifest) const;
    json do_ingest(const StageOptions& options);
    json do_topics(const StageOptions& options);
    json do_chunks();
    json do_generate(const StageOptions& options);
    json do_split(const StageOptions& options);
    json do_export(const StageOptions& options);
    json do_eval(const StageOptions& options, const RunManifest& manifest, json& details);
    json do_agreement();

    config::Config cfg_;
    std::shared_ptr<llm::CallLedger> ledger_;
    std::map<std::string, std::shared_ptr<llm::ChatBackend>> chat_;
    std::map<std::string, std::shared_ptr<llm::EmbeddingCache>> embed_;
};

// Agreement over the pools of an existing run, using the community list
// stored in its manifest. Requires a completed generate stage.
agreement::AgreementMatrix agreement_for_run(const fs::path& run_dir, std::size_t min_common = 5);

// Writes <run_dir>/agreement/human_eval.json and returns the rows.
std::vector<agreement::HumanAgreement> human_eval_for_run(const fs::path& run_dir, const fs::path& annotations);

}  // namespace forge::pipeline
