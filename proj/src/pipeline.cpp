#include "forge/pipeline.hpp"

#include <chrono>
#include <csignal>
#include <ctime>
#include <fcntl.h>
#include <set>
#include <unistd.h>

#include <spdlog/spdlog.h>

#include "forge/corpus.hpp"
#include "forge/dataset_split.hpp"
#include "forge/errors.hpp"
#include "forge/instruct_gen.hpp"
#include "forge/survey_eval.hpp"
#include "forge/topic_model.hpp"

namespace forge::pipeline {

std::string_view to_string(Stage stage) noexcept {
    switch (stage) {
        case Stage::Ingest: return "ingest";
        case Stage::Topics: return "topics";
        case Stage::Chunks: return "chunks";
        case Stage::Generate: return "generate";
        case Stage::Split: return "split";
        case Stage::Export: return "export";
        case Stage::Eval: return "eval";
        case Stage::Agreement: return "agreement";
    }
    return "ingest";
}

std::optional<Stage> parse_stage(std::string_view s) noexcept {
    for (auto stage : kAllStages) {
        if (to_string(stage) == s) return stage;
    }
    return std::nullopt;
}

std::vector<Stage> upstream(Stage stage) {
    switch (stage) {
        case Stage::Ingest: return {};
        case Stage::Topics: return {Stage::Ingest};
        case Stage::Chunks: return {Stage::Topics};
        case Stage::Generate: return {Stage::Chunks};
        case Stage::Split: return {Stage::Generate};
        case Stage::Export: return {Stage::Split};
        case Stage::Eval: return {Stage::Split};
        case Stage::Agreement: return {Stage::Generate};
    }
    return {};
}

namespace {

std::vector<Stage> transitive_upstream(Stage stage) {
    std::set<Stage> seen;
    std::vector<Stage> todo = upstream(stage);
    while (!todo.empty()) {
        const Stage s = todo.back();
        todo.pop_back();
        if (!seen.insert(s).second) continue;
        for (auto u : upstream(s)) todo.push_back(u);
    }
    return {seen.begin(), seen.end()};
}

std::string utc_now() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

json totals_json(const llm::CallLedger::Totals& t) { return t.to_json(); }

llm::CallLedger::Totals totals_from_json(const json& j) {
    llm::CallLedger::Totals t;
    t.calls = j.value("calls", std::uint64_t{0});
    t.remote_calls = j.value("remote_calls", std::uint64_t{0});
    t.prompt_tokens = j.value("prompt_tokens", std::uint64_t{0});
    t.completion_tokens = j.value("completion_tokens", std::uint64_t{0});
    t.cost_usd = j.value("cost_usd", 0.0);
    return t;
}

llm::CallLedger::Totals operator-(const llm::CallLedger::Totals& a, const llm::CallLedger::Totals& b) {
    return {a.calls - b.calls, a.remote_calls - b.remote_calls, a.prompt_tokens - b.prompt_tokens,
            a.completion_tokens - b.completion_tokens, a.cost_usd - b.cost_usd};
}

void add_into(llm::CallLedger::Totals& a, const llm::CallLedger::Totals& b) {
    a.calls += b.calls;
    a.remote_calls += b.remote_calls;
    a.prompt_tokens += b.prompt_tokens;
    a.completion_tokens += b.completion_tokens;
    a.cost_usd += b.cost_usd;
}

std::string file_digest(const fs::path& p) {
    if (p.empty() || !fs::is_regular_file(p)) return "";
    return sha256_hex(read_text(p));
}

// Output locations per stage, relative to the run directory.
std::vector<fs::path> stage_outputs(Stage stage) {
    switch (stage) {
        case Stage::Ingest: return {"corpus", "reports/ingest.json"};
        case Stage::Topics: return {"topics"};
        case Stage::Chunks: return {"chunks"};
        case Stage::Generate: return {"comminst", "commsurvey", "generation"};
        case Stage::Split: return {"split"};
        case Stage::Export: return {"export"};
        case Stage::Eval: return {"eval"};
        case Stage::Agreement: return {"agreement/matrix.json", "agreement/matrix.csv"};
    }
    return {};
}

}  // namespace

// ---------------------------------------------------------------------------
// Manifest

bool RunManifest::complete(Stage stage) const {
    const auto* r = record(stage);
    return r != nullptr && r->status == "complete";
}

const StageRecord* RunManifest::record(Stage stage) const {
    auto it = stages.find(std::string(to_string(stage)));
    return it == stages.end() ? nullptr : &it->second;
}

json RunManifest::to_json() const {
    json st = json::object();
    for (const auto& [name, r] : stages) {
        st[name] = {{"status", r.status},
                    {"started_at", r.started_at},
                    {"finished_at", r.finished_at},
                    {"input_fingerprint", r.input_fingerprint},
                    {"output_digest", r.output_digest},
                    {"details", r.details}};
    }
    return {{"run_id", run_id},
            {"config_hash", config_hash},
            {"seed", seed},
            {"template_version", template_version},
            {"communities", communities},
            {"backend_ids", backend_ids},
            {"stages", st},
            {"cost", totals_json(cost)}};
}

RunManifest RunManifest::from_json(const json& j) {
    RunManifest m;
    m.run_id = j.value("run_id", "");
    m.config_hash = j.value("config_hash", "");
    m.seed = j.value("seed", std::uint64_t{0});
    m.template_version = j.value("template_version", "");
    m.communities = j.value("communities", std::vector<std::string>{});
    m.backend_ids = j.value("backend_ids", std::vector<std::string>{});
    if (j.contains("stages")) {
        for (const auto& [name, r] : j["stages"].items()) {
            StageRecord rec;
            rec.status = r.value("status", "pending");
            rec.started_at = r.value("started_at", "");
            rec.finished_at = r.value("finished_at", "");
            rec.input_fingerprint = r.value("input_fingerprint", "");
            rec.output_digest = r.value("output_digest", "");
            rec.details = r.value("details", json::object());
            m.stages[name] = std::move(rec);
        }
    }
    if (j.contains("cost")) m.cost = totals_from_json(j["cost"]);
    return m;
}

fs::path manifest_path(const fs::path& run_dir) { return run_dir / "manifest.json"; }

RunManifest load_manifest(const fs::path& run_dir) {
    const auto path = manifest_path(run_dir);
    if (!fs::exists(path)) return {};
    return RunManifest::from_json(read_json(path));
}

void save_manifest(const fs::path& run_dir, const RunManifest& manifest) {
    write_json_atomic(manifest_path(run_dir), manifest.to_json());
}

// ---------------------------------------------------------------------------
// Lock

RunLock::RunLock(const fs::path& run_dir) : path_(run_dir / ".forge.lock") {
    fs::create_directories(run_dir);
    for (int attempt = 0; attempt < 2; ++attempt) {
        const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd >= 0) {
            const auto pid = std::to_string(::getpid()) + "\n";
            [[maybe_unused]] auto written = ::write(fd, pid.data(), pid.size());
            ::close(fd);
            return;
        }
        long holder = 0;
        try {
            holder = std::stol(read_text(path_));
        } catch (const std::exception&) {
            holder = 0;
        }
        if (holder > 0 && ::kill(static_cast<pid_t>(holder), 0) == 0) {
            throw Error("run directory " + run_dir.string() + " is locked by process " + std::to_string(holder));
        }
        spdlog::warn("removing stale lock {} (process {} is gone)", path_.string(), holder);
        fs::remove(path_);
    }
    throw Error("could not acquire lock " + path_.string());
}

RunLock::~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
}

// ---------------------------------------------------------------------------
// Pipeline

Pipeline::Pipeline(config::Config cfg) : cfg_(std::move(cfg)), ledger_(std::make_shared<llm::CallLedger>()) {}

void Pipeline::set_chat_backend(const std::string& id, std::shared_ptr<llm::ChatBackend> backend) {
    chat_[id] = std::move(backend);
}

void Pipeline::set_embedding_backend(const std::string& id, std::shared_ptr<llm::EmbeddingBackend> backend) {
    embed_[id] = std::make_shared<llm::EmbeddingCache>(std::move(backend), cfg_.run_dir / "cache" / "embed",
                                                       cfg_.topic_model.embed_batch);
}

namespace {

llm::RemoteConfig remote_config(const config::BackendSpec& s) {
    llm::RemoteConfig rc;
    rc.base_url = s.base_url;
    rc.model = s.model;
    rc.api_key_env = s.api_key_env;
    rc.supports_n = s.supports_n;
    rc.price_prompt_per_1k = s.price_prompt_per_1k;
    rc.price_completion_per_1k = s.price_completion_per_1k;
    rc.requests_per_minute = s.requests_per_minute;
    rc.timeout_seconds = s.timeout_seconds;
    rc.max_tokens = s.max_tokens;
    rc.retry.retry_max = s.retry_max;
    rc.retry.base_delay = std::chrono::milliseconds(s.retry_base_ms);
    return rc;
}

}  // namespace

std::shared_ptr<llm::ChatBackend> Pipeline::chat(const std::string& id) {
    if (auto it = chat_.find(id); it != chat_.end()) return it->second;
    const auto* spec = cfg_.backend(id);
    if (spec == nullptr) throw ConfigError("unknown backend \"" + id + "\"");
    if (spec->role != "chat") throw ConfigError("backend \"" + id + "\" is not a chat backend");

    std::shared_ptr<llm::ChatBackend> backend;
    if (spec->kind == "mock") {
        llm::Responder responder;
        if (spec->mock_mode == "canned") {
            responder = llm::canned_responder_from_file(spec->mock_script);
        } else if (spec->mock_mode == "constant") {
            responder = llm::constant_responder(spec->mock_text);
        } else {
            responder = llm::rule_responder();
        }
        backend = std::make_shared<llm::MockChatBackend>(id, std::move(responder), ledger_);
    } else {
        // Only remote responses are worth caching; mocks are free and
        // caching them would hide mock configuration changes.
        auto remote = std::make_shared<llm::RemoteChatBackend>(id, remote_config(*spec), ledger_);
        backend = std::make_shared<llm::CachingChatBackend>(std::move(remote), cfg_.run_dir / "cache" / "chat");
    }
    chat_[id] = backend;
    return backend;
}

std::shared_ptr<llm::EmbeddingCache> Pipeline::embedder(const std::string& id) {
    if (auto it = embed_.find(id); it != embed_.end()) return it->second;
    const auto* spec = cfg_.backend(id);
    if (spec == nullptr) throw ConfigError("unknown backend \"" + id + "\"");
    if (spec->role != "embedding") throw ConfigError("backend \"" + id + "\" is not an embedding backend");

    std::shared_ptr<llm::EmbeddingBackend> backend;
    std::optional<fs::path> dir;
    if (spec->kind == "mock") {
        backend = std::make_shared<llm::MockEmbeddingBackend>(id, spec->dim, derive_seed(cfg_.seed, "embed/" + id),
                                                              ledger_);
    } else {
        backend = std::make_shared<llm::RemoteEmbeddingBackend>(id, spec->dim, remote_config(*spec), ledger_);
        dir = cfg_.run_dir / "cache" / "embed";
    }
    auto cache = std::make_shared<llm::EmbeddingCache>(std::move(backend), dir, cfg_.topic_model.embed_batch);
    embed_[id] = cache;
    return cache;
}

std::vector<BackendCheck> Pipeline::check_backends() {
    std::vector<BackendCheck> out;
    for (const auto& spec : cfg_.backends) {
        BackendCheck c{spec.id, spec.role, false, ""};
        try {
            if (spec.role == "chat") {
                auto batch = chat(spec.id)->complete("Reply with the single letter A.", 0.0, 1, 0);
                c.message = "ok: \"" + truncate_utf8(trim(batch.completions.front()), 40, "...") + "\"";
            } else {
                const std::vector<std::string> probe{"ping"};
                auto vectors = embedder(spec.id)->embed(probe);
                if (vectors.size() != 1 || vectors[0].size() != spec.dim) {
                    throw BackendUnavailable("embedding dimension mismatch", 0);
                }
                c.message = "ok: dim " + std::to_string(vectors[0].size());
            }
            c.ok = true;
        } catch (const std::exception& e) {
            c.message = e.what();
        }
        out.push_back(std::move(c));
    }
    return out;
}

void Pipeline::apply_budget(const RunManifest& manifest) {
    const double budget = cfg_.generation.budget_usd;
    if (budget <= 0.0) return;
    const double earlier = manifest.cost.cost_usd - ledger_->totals().cost_usd;
    const double remaining = budget - std::max(0.0, earlier);
    if (remaining <= 0.0) {
        throw BackendUnavailable("run budget of $" + std::to_string(budget) + " is already spent", 0);
    }
    ledger_->set_budget(remaining);
}

namespace {

json backend_fingerprint(const config::Config& cfg, const std::string& id) {
    const auto* spec = cfg.backend(id);
    if (spec == nullptr) return nullptr;
    json j = spec->raw;
    if (!spec->mock_script.empty()) j["script_sha256"] = file_digest(spec->mock_script);
    return j;
}

std::string digest_stage(const fs::path& run_dir, Stage stage) {
    const auto outputs = stage_outputs(stage);
    return digest_paths(run_dir, outputs);
}

}  // namespace

json Pipeline::stage_inputs(Stage stage, const StageOptions& o, const RunManifest& manifest) const {
    json in = {{"stage", to_string(stage)}, {"seed", cfg_.seed}};
    json up = json::object();
    for (auto u : transitive_upstream(stage)) {
        const auto* r = manifest.record(u);
        up[std::string(to_string(u))] = r ? r->output_digest : "";
    }
    in["upstream"] = up;
    const auto& t = cfg_.topic_model;
    switch (stage) {
        case Stage::Ingest: {
            json c = json::array();
            for (const auto& spec : cfg_.communities) {
                c.push_back({{"id", spec.id}, {"sha256", file_digest(spec.path)}});
            }
            in["communities"] = c;
            in["skip_malformed"] = o.skip_malformed;
            break;
        }
        case Stage::Topics: {
            const auto import = o.import_assignments ? *o.import_assignments : t.assignments_path;
            const bool importing = o.import_assignments.has_value() || t.provider == "import";
            in["provider"] = importing ? "import" : "kmeans";
            if (importing) {
                in["assignments_sha256"] = file_digest(import);
            } else {
                in["embedder"] = backend_fingerprint(cfg_, t.embedder);
                in["k"] = t.k;
                in["min_topic_size"] = t.min_topic_size;
                in["max_iter"] = t.max_iter;
                in["char_budget"] = t.char_budget;
            }
            break;
        }
        case Stage::Chunks:
            in["chunk_size"] = t.chunk_size;
            in["max_chunks"] = t.max_chunks;
            in["min_participants"] = cfg_.generation.min_participants;
            break;
        case Stage::Generate: {
            const auto& g = cfg_.generation;
            const auto gen_id = o.generator.value_or(g.generator);
            in["generator"] = gen_id;
            in["generator_spec"] = backend_fingerprint(cfg_, gen_id);
            in["template_version"] = gen::kTemplateVersion;
            in["instructions"] = g.instructions_per_query;
            in["questions"] = g.questions_per_query;
            in["min_participants"] = g.min_participants;
            in["gen_retry"] = g.gen_retry;
            in["comment_char_budget"] = g.comment_char_budget;
            in["temperature"] = g.temperature;
            break;
        }
        case Stage::Split:
            in["kinds"] = o.split_kinds.empty() ? cfg_.split.kinds : o.split_kinds;
            in["ratio"] = o.ratio.value_or(cfg_.split.ratio);
            break;
        case Stage::Export:
            in["plan"] = o.plan ? file_digest(*o.plan) : "";
            in["kinds"] = cfg_.split.kinds;
            in["validation_fraction"] = cfg_.split.validation_fraction;
            break;
        case Stage::Eval:
            break;  // fingerprinted per job
        case Stage::Agreement:
            in["min_common"] = cfg_.agreement.min_common;
            break;
    }
    return in;
}

StageResult Pipeline::run_stage(Stage stage, const StageOptions& options) {
    RunLock lock(cfg_.run_dir);
    return run_unlocked(stage, options);
}

std::vector<StageResult> Pipeline::run_all(const StageOptions& options) {
    RunLock lock(cfg_.run_dir);
    std::vector<StageResult> out;
    for (auto stage : kAllStages) out.push_back(run_unlocked(stage, options));
    return out;
}

StageResult Pipeline::run_unlocked(Stage stage, const StageOptions& options) {
    const std::string name(to_string(stage));
    auto manifest = load_manifest(cfg_.run_dir);

    for (auto u : upstream(stage)) {
        if (!manifest.complete(u)) {
            throw DependencyError("stage '" + name + "' requires stage '" + std::string(to_string(u)) +
                                  "' to be complete; run `forge " + std::string(to_string(u)) + "` first");
        }
    }

    if (manifest.run_id.empty()) manifest.run_id = "run-" + sha256_hex(cfg_.hash + std::to_string(cfg_.seed)).substr(0, 12);
    manifest.config_hash = cfg_.hash;
    manifest.seed = cfg_.seed;
    manifest.template_version = std::string(gen::kTemplateVersion);
    manifest.communities = cfg_.community_ids();
    manifest.backend_ids.clear();
    for (const auto& b : cfg_.backends) manifest.backend_ids.push_back(b.id);

    const json inputs = stage_inputs(stage, options, manifest);
    const std::string fingerprint = sha256_hex(inputs.dump());
    auto& rec = manifest.stages[name];

    StageResult result;
    result.stage = stage;
    if (stage != Stage::Eval && !options.force && rec.status == "complete" && rec.input_fingerprint == fingerprint &&
        rec.output_digest == digest_stage(cfg_.run_dir, stage)) {
        spdlog::info("{}: up to date, nothing to do", name);
        result.no_op = true;
        result.details = rec.details;
        return result;
    }

    apply_budget(manifest);
    const auto before = ledger_->totals();
    rec.status = "running";
    rec.started_at = utc_now();
    rec.finished_at.clear();
    save_manifest(cfg_.run_dir, manifest);

    json details;
    json eval_state = rec.details;
    try {
        switch (stage) {
            case Stage::Ingest: details = do_ingest(options); break;
            case Stage::Topics: details = do_topics(options); break;
            case Stage::Chunks: details = do_chunks(); break;
            case Stage::Generate: details = do_generate(options); break;
            case Stage::Split: details = do_split(options); break;
            case Stage::Export: details = do_export(options); break;
            case Stage::Eval: {
                details = do_eval(options, manifest, eval_state);
                result.no_op = details.value("jobs_run", 0) == 0;
                break;
            }
            case Stage::Agreement: details = do_agreement(); break;
        }
    } catch (...) {
        const auto spent = ledger_->totals() - before;
        add_into(manifest.cost, spent);
        ledger_->flush_to(cfg_.run_dir / "ledger" / "calls.jsonl");
        rec.status = "failed";
        rec.finished_at = utc_now();
        if (stage == Stage::Eval) rec.details = eval_state;
        save_manifest(cfg_.run_dir, manifest);
        throw;
    }

    const auto spent = ledger_->totals() - before;
    add_into(manifest.cost, spent);
    ledger_->flush_to(cfg_.run_dir / "ledger" / "calls.jsonl");
    rec.status = "complete";
    rec.finished_at = utc_now();
    rec.input_fingerprint = fingerprint;
    rec.output_digest = digest_stage(cfg_.run_dir, stage);
    rec.details = details;
    save_manifest(cfg_.run_dir, manifest);

    result.backend_calls = spent.calls;
    result.details = details;
    spdlog::info("{}: complete ({} backend calls)", name, spent.calls);
    return result;
}

// ---------------------------------------------------------------------------
// Stage bodies

namespace {

void clear_outputs(const fs::path& run_dir, Stage stage) {
    for (const auto& rel : stage_outputs(stage)) fs::remove_all(run_dir / rel);
}

std::vector<corpus::Document> load_documents(const config::Config& cfg, bool with_topics) {
    std::vector<corpus::Document> docs;
    for (const auto& c : cfg.communities) {
        auto store = corpus::load_store(cfg.run_dir, c.id, c.display_name);
        for (auto& d : store.documents) docs.push_back(std::move(d));
    }
    if (with_topics) {
        const auto assignment = topics::read_assignment(cfg.run_dir / "topics" / "assignments.jsonl");
        topics::apply_assignment(assignment, docs);
    }
    return docs;
}

std::vector<topics::Chunk> load_chunks(const fs::path& run_dir) {
    std::vector<topics::Chunk> out;
    for (const auto& j : read_jsonl(run_dir / "chunks" / "chunks.jsonl")) out.push_back(topics::chunk_from_json(j));
    return out;
}

std::vector<split::QueryRef> successful_queries(const fs::path& run_dir) {
    std::vector<split::QueryRef> refs;
    for (const auto& e : gen::read_query_ledger(run_dir / "generation" / "queries.jsonl")) {
        if (e.ok) refs.push_back({e.query.query_id, e.query.topic_id});
    }
    return refs;
}

}  // namespace

json Pipeline::do_ingest(const StageOptions& options) {
    clear_outputs(cfg_.run_dir, Stage::Ingest);
    corpus::CleaningRules rules;
    rules.skip_malformed = options.skip_malformed;
    json report = json::object();
    json details = json::object();
    for (const auto& c : cfg_.communities) {
        auto result = corpus::ingest_corpus(c.path, c.id, rules);
        result.corpus.display_name = c.display_name;
        corpus::write_store(cfg_.run_dir, result.corpus);
        json r = result.report.to_json();
        r["stats"] = corpus::corpus_stats(result.corpus).to_json();
        report[c.id] = r;
        details[c.id] = result.report.retained;
        spdlog::info("ingest {}: {} retained, {} dropped, {} malformed", c.id, result.report.retained,
                     result.report.dropped(), result.report.malformed.size());
    }
    write_json_atomic(cfg_.run_dir / "reports" / "ingest.json", report);
    return {{"retained", details}};
}

json Pipeline::do_topics(const StageOptions& options) {
    clear_outputs(cfg_.run_dir, Stage::Topics);
    const auto& t = cfg_.topic_model;
    auto docs = load_documents(cfg_, false);

    topics::TopicAssignment assignment;
    json model = {{"top_k", 10}};
    const bool importing = options.import_assignments.has_value() || t.provider == "import";
    if (importing) {
        const auto path = options.import_assignments ? *options.import_assignments : t.assignments_path;
        if (path.empty()) throw ConfigError("topic_model.assignments_path: required for the import provider");
        assignment = topics::read_assignment(path);
        topics::validate_assignment(assignment, docs);
        model["provider"] = "import";
        model["assignments_sha256"] = file_digest(path);
        // Parameters of the external clusterer the assignments are expected to
        // come from; carried for provenance only.
        model["bertopic"] = {{"n_neighbors", t.bertopic.n_neighbors},
                             {"n_components", t.bertopic.n_components},
                             {"min_cluster_size", t.bertopic.min_cluster_size}};
    } else {
        auto cache = embedder(t.embedder);
        auto embedded = topics::embed_documents(docs, *cache, {t.char_budget, cfg_.workers, t.embed_batch});
        if (!embedded.truncated.empty()) {
            spdlog::warn("topics: {} documents truncated to {} characters before embedding", embedded.truncated.size(),
                         t.char_budget);
        }
        Rng rng(derive_seed(cfg_.seed, "topics/cluster"));
        assignment = topics::cluster(embedded.vectors, {t.k, t.min_topic_size, t.max_iter}, rng);
        model["provider"] = "kmeans";
        model["embedder"] = t.embedder;
        model["k"] = t.k;
        model["min_topic_size"] = t.min_topic_size;
        model["max_iter"] = t.max_iter;
        model["truncated_documents"] = embedded.truncated.size();
    }

    topics::write_assignment(cfg_.run_dir / "topics" / "assignments.jsonl", assignment);
    const auto topic_list = topics::topic_keywords(assignment, docs, 10);
    std::vector<json> lines;
    for (const auto& tp : topic_list) lines.push_back(topics::to_json(tp));
    write_jsonl_atomic(cfg_.run_dir / "topics" / "topics.jsonl", lines);

    std::size_t noise = 0;
    for (const auto& [id, topic] : assignment) noise += topic == corpus::kNoiseTopic ? 1 : 0;
    model["topics"] = topic_list.size();
    model["noise_documents"] = noise;
    write_json_atomic(cfg_.run_dir / "topics" / "topic_model.json", model);
    return model;
}

json Pipeline::do_chunks() {
    clear_outputs(cfg_.run_dir, Stage::Chunks);
    const auto docs = load_documents(cfg_, true);
    const auto& t = cfg_.topic_model;
    const auto chunks = topics::build_chunks(docs, t.chunk_size, t.max_chunks, cfg_.seed);
    const auto counts = topics::count_chunks(chunks);
    const auto retained = topics::retain_topics(counts, cfg_.communities.size(), cfg_.generation.min_participants);
    if (retained.empty()) spdlog::warn("chunks: no topic is shared by enough communities; generation will be empty");

    std::vector<json> lines;
    for (const auto& c : chunks) lines.push_back(topics::to_json(c));
    write_jsonl_atomic(cfg_.run_dir / "chunks" / "chunks.jsonl", lines);
    json count_json = json::object();
    for (const auto& [topic, per] : counts) count_json[std::to_string(topic)] = per;
    write_json_atomic(cfg_.run_dir / "chunks" / "retained_topics.json",
                      {{"retained_topics", retained}, {"chunk_counts", count_json}});
    return {{"chunks", chunks.size()}, {"retained_topics", retained}};
}

json Pipeline::do_generate(const StageOptions& options) {
    const auto& g = cfg_.generation;
    const auto gen_id = options.generator.value_or(g.generator);
    if (gen_id.empty()) throw ConfigError("generation.generator: no generator backend given (use --generator)");
    auto generator = chat(gen_id);
    clear_outputs(cfg_.run_dir, Stage::Generate);

    const auto docs = load_documents(cfg_, false);
    const auto chunks = load_chunks(cfg_.run_dir);
    const auto retained =
        read_json(cfg_.run_dir / "chunks" / "retained_topics.json").at("retained_topics").get<std::vector<int>>();
    std::map<int, std::vector<std::string>> keywords;
    for (const auto& j : read_jsonl(cfg_.run_dir / "topics" / "topics.jsonl")) {
        const auto tp = topics::topic_from_json(j);
        keywords[tp.topic_id] = tp.keywords;
    }

    const auto queries =
        gen::plan_queries(chunks, retained, keywords, cfg_.communities.size(), cfg_.seed, g.min_participants);
    spdlog::info("generate: {} queries planned with generator {}", queries.size(), gen_id);

    std::map<std::string, topics::Chunk> by_id;
    for (const auto& c : chunks) by_id.emplace(c.chunk_id, c);
    std::map<std::string, std::string> text_by_doc;
    for (const auto& d : docs) text_by_doc.emplace(d.doc_id, d.text);

    gen::GenerateOptions go;
    go.prompt = {g.comment_char_budget, g.instructions_per_query, g.questions_per_query};
    go.gen_retry = g.gen_retry;
    go.temperature = g.temperature;
    go.workers = cfg_.workers;
    go.seed = cfg_.seed;
    const auto result = gen::generate(
        queries, [&](const gen::GenerationQuery& q) { return gen::resolve_chunks(q, by_id, text_by_doc); },
        *generator, go);

    const auto ids = cfg_.community_ids();
    result.pools.write(cfg_.run_dir, ids);
    gen::write_query_ledger(cfg_.run_dir / "generation" / "queries.jsonl", queries, result.outcomes);

    const auto ok = result.successful_query_ids().size();
    json per = json::object();
    for (const auto& c : ids) {
        per[c] = {{"comminst", result.pools.comminst(c).size()}, {"commsurvey", result.pools.commsurvey(c).size()}};
    }
    return {{"queries_planned", queries.size()},
            {"queries_ok", ok},
            {"queries_failed", queries.size() - ok},
            {"generator", gen_id},
            {"pools", per}};
}

json Pipeline::do_split(const StageOptions& options) {
    clear_outputs(cfg_.run_dir, Stage::Split);
    const auto kinds = options.split_kinds.empty() ? cfg_.split.kinds : options.split_kinds;
    const double ratio = options.ratio.value_or(cfg_.split.ratio);
    const auto refs = successful_queries(cfg_.run_dir);
    json details = json::object();
    for (const auto& k : kinds) {
        const auto kind = split::parse_split_kind(k);
        if (!kind) throw ConfigError("unknown split kind \"" + k + "\"");
        const auto plan = *kind == split::SplitKind::Random ? split::split_random(refs, ratio, cfg_.seed)
                                                            : split::split_topicwise(refs, ratio, cfg_.seed);
        write_json_atomic(cfg_.run_dir / "split" / (k + ".json"), split::to_json(plan));
        details[k] = {{"train", plan.train_query_ids.size()},
                      {"test", plan.test_query_ids.size()},
                      {"realized_ratio", plan.realized_ratio()}};
    }
    return details;
}

json Pipeline::do_export(const StageOptions& options) {
    std::vector<split::SplitPlan> plans;
    if (options.plan) {
        plans.push_back(split::plan_from_json(read_json(*options.plan)));
    } else {
        for (const auto& k : cfg_.split.kinds) {
            const auto path = cfg_.run_dir / "split" / (k + ".json");
            if (!fs::exists(path)) throw DependencyError("split plan " + path.string() + " is missing; rerun `forge split`");
            plans.push_back(split::plan_from_json(read_json(path)));
        }
    }
    clear_outputs(cfg_.run_dir, Stage::Export);
    const auto ids = cfg_.community_ids();
    const auto pools = gen::Pools::load(cfg_.run_dir, ids);
    json details = json::object();
    for (const auto& plan : plans) {
        const std::string kind(split::to_string(plan.kind));
        json per = json::object();
        for (const auto& c : ids) {
            const auto demos = pools.comminst(c);
            const bool any_train = std::any_of(demos.begin(), demos.end(),
                                               [&](const gen::Demonstration& d) { return plan.in_train(d.query_id); });
            if (!any_train) {
                spdlog::warn("export {}: community {} has no training demonstrations; skipped", kind, c);
                per[c] = nullptr;
                continue;
            }
            const auto exp = split::export_finetune(demos, c, plan, cfg_.split.validation_fraction,
                                                    derive_seed(cfg_.seed, "export/" + kind));
            split::write_export(cfg_.run_dir / "export" / kind, exp);
            per[c] = {{"train", exp.train.size()}, {"validation", exp.validation.size()}};
        }
        details[kind] = per;
    }
    return details;
}

json Pipeline::do_eval(const StageOptions& o, const RunManifest& manifest, json& previous) {
    const auto& e = cfg_.eval;
    const auto subjects = o.subjects.empty() ? e.subjects : o.subjects;
    if (subjects.empty()) throw ConfigError("eval.subjects: no subject backends configured (use --subject)");
    auto communities = o.eval_communities.empty() ? e.communities : o.eval_communities;
    if (communities.empty()) communities = cfg_.community_ids();
    for (const auto& c : communities) {
        if (cfg_.community(c) == nullptr) throw ConfigError("unknown community \"" + c + "\"");
    }
    const auto mode_names = o.modes.empty() ? e.modes : o.modes;
    const int samples = o.samples.value_or(e.n_samples);
    const double temperature = o.temperature.value_or(e.temperature);
    const std::size_t context_k = o.context_k.value_or(e.context_k);
    if (samples < 1) throw ConfigError("--samples must be >= 1");

    const auto plan_path = cfg_.run_dir / "split" / (e.split + ".json");
    if (!fs::exists(plan_path)) throw DependencyError("split plan " + plan_path.string() + " is missing; run `forge split`");
    const auto plan = split::plan_from_json(read_json(plan_path));

    const auto ids = cfg_.community_ids();
    const auto pools = gen::Pools::load(cfg_.run_dir, ids);
    std::vector<gen::SurveyEntry> test_entries;
    for (const auto& c : ids) {
        for (auto& s : pools.commsurvey(c)) {
            if (plan.in_test(s.query_id)) test_entries.push_back(std::move(s));
        }
    }
    const auto questions = eval::collect_questions(test_entries);

    const std::string upstream_digest =
        manifest.record(Stage::Split)->output_digest + manifest.record(Stage::Generate)->output_digest;

    json jobs = previous.value("jobs", json::object());
    std::size_t jobs_run = 0;
    json reports = previous.value("reports", json::object());

    // Lazily built per community: candidate comments for context modes.
    std::map<std::string, std::vector<eval::Candidate>> candidates;
    const auto candidates_for = [&](const std::string& c) -> const std::vector<eval::Candidate>& {
        if (auto it = candidates.find(c); it != candidates.end()) return it->second;
        const auto chunks = load_chunks(cfg_.run_dir);
        std::map<std::string, const topics::Chunk*> by_id;
        for (const auto& ch : chunks) by_id.emplace(ch.chunk_id, &ch);
        std::set<std::string> doc_ids;
        for (const auto& entry : gen::read_query_ledger(cfg_.run_dir / "generation" / "queries.jsonl")) {
            if (!entry.ok || !plan.in_train(entry.query.query_id)) continue;
            auto p = entry.query.participants.find(c);
            if (p == entry.query.participants.end()) continue;
            for (const auto& d : by_id.at(p->second)->doc_ids) doc_ids.insert(d);
        }
        const auto* spec = cfg_.community(c);
        const auto store = corpus::load_store(cfg_.run_dir, c, spec->display_name);
        std::vector<eval::Candidate> out;
        for (const auto& d : store.documents) {
            if (doc_ids.count(d.doc_id) != 0) out.push_back({d.doc_id, d.text});
        }
        return candidates.emplace(c, std::move(out)).first->second;
    };

    for (const auto& c : communities) {
        const auto* spec = cfg_.community(c);
        std::map<std::string, char> truth;
        for (const auto& s : pools.commsurvey(c)) truth.emplace(s.question_id(), s.answer);

        for (const auto& subject_id : subjects) {
            for (const auto& mode_name : mode_names) {
                const auto kind = eval::parse_mode(mode_name);
                if (!kind) throw ConfigError("unknown eval mode \"" + mode_name + "\"");
                eval::EvalMode mode{*kind, spec->display_name, context_k};

                const std::string job = c + "/" + subject_id + "/" + mode_name;
                const json job_inputs = {{"community", c},
                                         {"subject", backend_fingerprint(cfg_, subject_id)},
                                         {"mode", mode_name},
                                         {"display_name", spec->display_name},
                                         {"samples", samples},
                                         {"temperature", temperature},
                                         {"context_k", mode.context() ? context_k : 0},
                                         {"context_char_budget", mode.context() ? e.context_char_budget : 0},
                                         {"embedder", mode.context() ? backend_fingerprint(cfg_, e.embedder) : json()},
                                         {"split", e.split},
                                         {"upstream", upstream_digest},
                                         {"seed", cfg_.seed}};
                const auto job_fp = sha256_hex(job_inputs.dump());
                const auto dir = cfg_.run_dir / "eval" / c / subject_id;
                const auto records_path = dir / (mode_name + ".jsonl");
                const auto report_path = dir / (mode_name + ".report.json");

                if (!o.force && jobs.value(job, "") == job_fp && fs::exists(records_path) && fs::exists(report_path)) {
                    spdlog::info("eval {}: up to date", job);
                    continue;
                }
                // Partial records are only trusted when produced for the same inputs.
                if (o.force || jobs.value(job, "") != job_fp) {
                    if (jobs.contains(job) || o.force) fs::remove(records_path);
                }
                // Recorded before the run so a resumed job keeps its partial records.
                jobs[job] = job_fp;
                previous["jobs"] = jobs;

                std::vector<eval::AdministeredItem> items;
                std::shared_ptr<llm::EmbeddingCache> cache;
                if (mode.context()) cache = embedder(e.embedder);
                for (const auto& q : questions) {
                    eval::AdministeredItem item{q, std::nullopt, {}};
                    if (auto it = truth.find(q.question_id); it != truth.end()) item.truth = it->second;
                    if (item.truth && mode.context()) {
                        for (const auto& r : eval::retrieve_context(q.question, candidates_for(c), context_k, *cache)) {
                            item.context.push_back(truncate_utf8(r.text, e.context_char_budget, gen::kTruncationMarker));
                        }
                    }
                    items.push_back(std::move(item));
                }

                eval::AdministerOptions ao;
                ao.n_samples = samples;
                ao.temperature = temperature;
                ao.seed = derive_seed(cfg_.seed, "eval/" + job);
                ao.workers = cfg_.workers;
                ao.records_path = records_path;
                auto subject = chat(subject_id);
                const auto result = eval::administer(items, c, *subject, mode, ao);
                write_json_atomic(report_path, eval::to_json(result.report));
                reports[job] = eval::to_json(result.report);
                ++jobs_run;
                const auto acc = result.report.accuracy();
                spdlog::info("eval {}: accuracy {}", job, acc ? std::to_string(*acc) : std::string("n/a"));
            }
        }
    }
    return {{"jobs", jobs}, {"reports", reports}, {"jobs_run", jobs_run}, {"questions", questions.size()}};
}

json Pipeline::do_agreement() {
    clear_outputs(cfg_.run_dir, Stage::Agreement);
    const auto m = agreement_for_run(cfg_.run_dir, cfg_.agreement.min_common);
    return {{"communities", m.communities}};
}

// ---------------------------------------------------------------------------

agreement::AgreementMatrix agreement_for_run(const fs::path& run_dir, std::size_t min_common) {
    const auto manifest = load_manifest(run_dir);
    if (!manifest.complete(Stage::Generate)) {
        throw DependencyError("agreement requires stage 'generate' to be complete in " + run_dir.string());
    }
    const auto pools = gen::Pools::load(run_dir, manifest.communities);
    agreement::SurveyPools survey;
    for (const auto& c : manifest.communities) survey[c] = pools.commsurvey(c);
    const auto m = agreement::agreement_matrix(survey, min_common);
    write_json_atomic(run_dir / "agreement" / "matrix.json", m.to_json());
    write_text_atomic(run_dir / "agreement" / "matrix.csv", m.to_csv());
    return m;
}

std::vector<agreement::HumanAgreement> human_eval_for_run(const fs::path& run_dir, const fs::path& annotations) {
    const auto manifest = load_manifest(run_dir);
    if (!manifest.complete(Stage::Generate)) {
        throw DependencyError("human-eval requires stage 'generate' to be complete in " + run_dir.string());
    }
    const auto pools = gen::Pools::load(run_dir, manifest.communities);
    agreement::SurveyPools survey;
    for (const auto& c : manifest.communities) survey[c] = pools.commsurvey(c);
    const auto rows = agreement::human_agreement(agreement::read_annotations(annotations), survey);
    write_json_atomic(run_dir / "agreement" / "human_eval.json", agreement::to_json(rows));
    return rows;
}

}  // namespace forge::pipeline
