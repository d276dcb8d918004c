#include "forge/config.hpp"

#include <set>

#include "forge/errors.hpp"

namespace forge::config {

const BackendSpec* Config::backend(std::string_view id) const noexcept {
    for (const auto& b : backends) {
        if (b.id == id) return &b;
    }
    return nullptr;
}

const CommunitySpec* Config::community(std::string_view id) const noexcept {
    for (const auto& c : communities) {
        if (c.id == id) return &c;
    }
    return nullptr;
}

std::vector<std::string> Config::community_ids() const {
    std::vector<std::string> out;
    for (const auto& c : communities) out.push_back(c.id);
    return out;
}

namespace {

// Collects field-level problems instead of failing on the first one.
class Reader {
public:
    std::vector<std::string> errors;

    template <typename T>
    T get(const json& section, const std::string& where, const std::string& key, T fallback) {
        if (!section.is_object() || !section.contains(key) || section[key].is_null()) return fallback;
        try {
            return section[key].get<T>();
        } catch (const json::exception&) {
            errors.push_back(where + "." + key + ": wrong type");
            return fallback;
        }
    }

    template <typename T>
    T require(const json& section, const std::string& where, const std::string& key) {
        if (!section.is_object() || !section.contains(key) || section[key].is_null()) {
            errors.push_back(where + "." + key + ": required");
            return T{};
        }
        return get<T>(section, where, key, T{});
    }

    json section(const json& doc, const std::string& name, json::value_t type) {
        if (!doc.contains(name)) return type == json::value_t::array ? json::array() : json::object();
        if (doc[name].type() != type) {
            errors.push_back(name + ": must be " + (type == json::value_t::array ? "an array" : "an object"));
            return type == json::value_t::array ? json::array() : json::object();
        }
        return doc[name];
    }
};

fs::path resolve(const fs::path& base, const std::string& p) {
    if (p.empty()) return {};
    fs::path path(p);
    return path.is_absolute() ? path : (base / path).lexically_normal();
}

}  // namespace

Config parse_config(const json& doc, const fs::path& base_dir) {
    if (!doc.is_object()) throw ConfigError("config: top level must be an object");
    Reader r;
    Config cfg;

    const json domain = r.section(doc, "domain", json::value_t::object);
    cfg.domain_name = r.require<std::string>(domain, "domain", "name");
    if (!domain.contains("seed")) {
        r.errors.push_back("domain.seed: required (all sampling must be reproducible)");
    }
    cfg.seed = r.get<std::uint64_t>(domain, "domain", "seed", 0);
    cfg.run_dir = resolve(base_dir, r.get<std::string>(domain, "domain", "run_dir", "run"));
    cfg.workers = r.get<std::size_t>(domain, "domain", "workers", 1);
    if (cfg.workers == 0) r.errors.push_back("domain.workers: must be >= 1");

    const json communities = r.section(doc, "communities", json::value_t::array);
    std::set<std::string> seen;
    for (std::size_t i = 0; i < communities.size(); ++i) {
        const std::string where = "communities[" + std::to_string(i) + "]";
        CommunitySpec c;
        c.id = r.require<std::string>(communities[i], where, "id");
        c.display_name = r.get<std::string>(communities[i], where, "display_name", c.id);
        c.path = resolve(base_dir, r.require<std::string>(communities[i], where, "path"));
        if (!c.id.empty() && c.id.find_first_of("/\\ ") != std::string::npos) {
            r.errors.push_back(where + ".id: must not contain '/', '\\' or spaces");
        }
        if (!c.id.empty() && !seen.insert(c.id).second) r.errors.push_back(where + ".id: duplicate \"" + c.id + "\"");
        cfg.communities.push_back(std::move(c));
    }
    if (cfg.communities.size() < 2) r.errors.push_back("communities: at least 2 communities are required");

    const json backends = r.section(doc, "backends", json::value_t::array);
    std::set<std::string> backend_ids;
    for (std::size_t i = 0; i < backends.size(); ++i) {
        const std::string where = "backends[" + std::to_string(i) + "]";
        const json& b = backends[i];
        BackendSpec s;
        s.raw = b;
        s.id = r.require<std::string>(b, where, "id");
        s.role = r.get<std::string>(b, where, "role", "chat");
        s.kind = r.get<std::string>(b, where, "kind", "mock");
        if (!s.id.empty() && !backend_ids.insert(s.id).second) r.errors.push_back(where + ".id: duplicate");
        if (s.role != "chat" && s.role != "embedding") r.errors.push_back(where + ".role: must be chat or embedding");
        if (s.kind != "mock" && s.kind != "remote_http") r.errors.push_back(where + ".kind: must be mock or remote_http");
        s.model = r.get<std::string>(b, where, "model", "");
        s.base_url = r.get<std::string>(b, where, "base_url", "");
        s.api_key_env = r.get<std::string>(b, where, "api_key_env", "");
        if (b.contains("api_key")) r.errors.push_back(where + ".api_key: credentials must come from api_key_env");
        s.supports_n = r.get<bool>(b, where, "supports_n", true);
        s.price_prompt_per_1k = r.get<double>(b, where, "price_prompt_per_1k", 0.0);
        s.price_completion_per_1k = r.get<double>(b, where, "price_completion_per_1k", 0.0);
        s.requests_per_minute = r.get<int>(b, where, "requests_per_minute", 0);
        s.retry_max = r.get<int>(b, where, "retry_max", 3);
        s.retry_base_ms = r.get<int>(b, where, "retry_base_ms", 500);
        s.timeout_seconds = r.get<int>(b, where, "timeout_seconds", 120);
        s.max_tokens = r.get<int>(b, where, "max_tokens", 0);
        s.dim = r.get<std::size_t>(b, where, "dim", 0);
        if (s.kind == "remote_http") {
            if (s.base_url.empty()) r.errors.push_back(where + ".base_url: required for remote_http");
            if (s.model.empty()) r.errors.push_back(where + ".model: required for remote_http");
        }
        if (s.role == "embedding" && s.dim == 0) r.errors.push_back(where + ".dim: required for embedding backends");
        if (s.kind == "mock" && s.role == "chat") {
            const json mock = b.contains("mock") && b["mock"].is_object() ? b["mock"] : json::object();
            s.mock_mode = r.get<std::string>(mock, where + ".mock", "mode", "rule");
            s.mock_script = resolve(base_dir, r.get<std::string>(mock, where + ".mock", "script", ""));
            s.mock_text = r.get<std::string>(mock, where + ".mock", "text", "");
            if (s.mock_mode != "rule" && s.mock_mode != "canned" && s.mock_mode != "constant") {
                r.errors.push_back(where + ".mock.mode: must be rule, canned or constant");
            }
            if (s.mock_mode == "canned" && s.mock_script.empty()) {
                r.errors.push_back(where + ".mock.script: required for canned mode");
            }
        }
        cfg.backends.push_back(std::move(s));
    }

    const auto check_backend = [&](const std::string& field, const std::string& id, const std::string& role) {
        if (id.empty()) return;
        const auto* b = cfg.backend(id);
        if (b == nullptr) {
            r.errors.push_back(field + ": unknown backend \"" + id + "\"");
        } else if (b->role != role) {
            r.errors.push_back(field + ": backend \"" + id + "\" is not a " + role + " backend");
        }
    };

    const json tm = r.section(doc, "topic_model", json::value_t::object);
    auto& t = cfg.topic_model;
    t.provider = r.get<std::string>(tm, "topic_model", "provider", t.provider);
    t.embedder = r.get<std::string>(tm, "topic_model", "embedder", "");
    t.k = r.get<int>(tm, "topic_model", "k", t.k);
    t.min_topic_size = r.get<std::size_t>(tm, "topic_model", "min_topic_size", t.min_topic_size);
    t.max_iter = r.get<int>(tm, "topic_model", "max_iter", t.max_iter);
    t.char_budget = r.get<std::size_t>(tm, "topic_model", "char_budget", t.char_budget);
    t.embed_batch = r.get<std::size_t>(tm, "topic_model", "embed_batch", t.embed_batch);
    t.assignments_path = resolve(base_dir, r.get<std::string>(tm, "topic_model", "assignments_path", ""));
    t.chunk_size = r.get<std::size_t>(tm, "topic_model", "chunk_size", t.chunk_size);
    t.max_chunks = r.get<std::size_t>(tm, "topic_model", "max_chunks", t.max_chunks);
    if (tm.contains("bertopic") && tm["bertopic"].is_object()) {
        const auto& bt = tm["bertopic"];
        t.bertopic.n_neighbors = r.get<int>(bt, "topic_model.bertopic", "n_neighbors", 15);
        t.bertopic.n_components = r.get<int>(bt, "topic_model.bertopic", "n_components", 5);
        t.bertopic.min_cluster_size = r.get<int>(bt, "topic_model.bertopic", "min_cluster_size", 40);
    }
    if (t.provider != "kmeans" && t.provider != "import") {
        r.errors.push_back("topic_model.provider: must be kmeans or import");
    }
    if (t.provider == "kmeans" && t.embedder.empty()) r.errors.push_back("topic_model.embedder: required for kmeans");
    if (t.provider == "kmeans" && t.k < 1) r.errors.push_back("topic_model.k: must be >= 1");
    if (t.chunk_size == 0) r.errors.push_back("topic_model.chunk_size: must be >= 1");
    if (t.char_budget == 0) r.errors.push_back("topic_model.char_budget: must be >= 1");
    check_backend("topic_model.embedder", t.embedder, "embedding");

    const json gen = r.section(doc, "generation", json::value_t::object);
    auto& g = cfg.generation;
    g.generator = r.get<std::string>(gen, "generation", "generator", "");
    g.instructions_per_query = r.get<int>(gen, "generation", "instructions_per_query", 3);
    g.questions_per_query = r.get<int>(gen, "generation", "questions_per_query", 2);
    g.min_participants = r.get<std::size_t>(gen, "generation", "min_participants", 0);
    g.gen_retry = r.get<int>(gen, "generation", "gen_retry", 2);
    g.comment_char_budget = r.get<std::size_t>(gen, "generation", "comment_char_budget", 1000);
    g.temperature = r.get<double>(gen, "generation", "temperature", 0.7);
    g.budget_usd = r.get<double>(gen, "generation", "budget_usd", 0.0);
    if (g.instructions_per_query < 1) r.errors.push_back("generation.instructions_per_query: must be >= 1");
    if (g.questions_per_query < 1) r.errors.push_back("generation.questions_per_query: must be >= 1");
    if (g.gen_retry < 0) r.errors.push_back("generation.gen_retry: must be >= 0");
    check_backend("generation.generator", g.generator, "chat");

    const json sp = r.section(doc, "split", json::value_t::object);
    auto& s = cfg.split;
    s.kinds = r.get<std::vector<std::string>>(sp, "split", "kinds", s.kinds);
    s.ratio = r.get<double>(sp, "split", "ratio", s.ratio);
    s.validation_fraction = r.get<double>(sp, "split", "validation_fraction", s.validation_fraction);
    for (const auto& k : s.kinds) {
        if (k != "random" && k != "topicwise") r.errors.push_back("split.kinds: unknown kind \"" + k + "\"");
    }
    if (!(s.ratio > 0.0 && s.ratio < 1.0)) r.errors.push_back("split.ratio: must be in (0, 1)");
    if (s.validation_fraction < 0.0 || s.validation_fraction >= 1.0) {
        r.errors.push_back("split.validation_fraction: must be in [0, 1)");
    }

    const json ev = r.section(doc, "eval", json::value_t::object);
    auto& e = cfg.eval;
    e.subjects = r.get<std::vector<std::string>>(ev, "eval", "subjects", {});
    e.modes = r.get<std::vector<std::string>>(ev, "eval", "modes", e.modes);
    e.communities = r.get<std::vector<std::string>>(ev, "eval", "communities", {});
    e.n_samples = r.get<int>(ev, "eval", "n_samples", e.n_samples);
    e.temperature = r.get<double>(ev, "eval", "temperature", e.temperature);
    e.context_k = r.get<std::size_t>(ev, "eval", "context_k", e.context_k);
    e.context_char_budget = r.get<std::size_t>(ev, "eval", "context_char_budget", e.context_char_budget);
    e.embedder = r.get<std::string>(ev, "eval", "embedder", t.embedder);
    e.split = r.get<std::string>(ev, "eval", "split", e.split);
    for (const auto& id : e.subjects) check_backend("eval.subjects", id, "chat");
    for (const auto& m : e.modes) {
        if (m != "plain" && m != "steering" && m != "context" && m != "steering_context") {
            r.errors.push_back("eval.modes: unknown mode \"" + m + "\"");
        }
        if ((m == "context" || m == "steering_context") && e.embedder.empty()) {
            r.errors.push_back("eval.embedder: required for context modes");
        }
    }
    for (const auto& c : e.communities) {
        if (cfg.community(c) == nullptr) r.errors.push_back("eval.communities: unknown community \"" + c + "\"");
    }
    if (e.n_samples < 1) r.errors.push_back("eval.n_samples: must be >= 1");
    if (e.split != "random" && e.split != "topicwise") r.errors.push_back("eval.split: must be random or topicwise");
    check_backend("eval.embedder", e.embedder, "embedding");

    const json ag = r.section(doc, "agreement", json::value_t::object);
    cfg.agreement.min_common = r.get<std::size_t>(ag, "agreement", "min_common", 5);

    if (!r.errors.empty()) {
        std::string msg = "invalid config:";
        for (const auto& err : r.errors) msg += "\n  " + err;
        throw ConfigError(msg);
    }

    cfg.raw = doc;
    cfg.hash = sha256_hex(doc.dump());
    return cfg;
}

Config load_config(const fs::path& path) {
    json doc;
    try {
        doc = json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    } catch (const InputError& e) {
        throw ConfigError(e.what());
    }
    return parse_config(doc, fs::absolute(path).parent_path());
}

}  // namespace forge::config
