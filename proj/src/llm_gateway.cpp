#include "forge/llm_gateway.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <regex>
#include <stdexcept>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "forge/errors.hpp"

namespace forge::llm {

namespace {

std::int64_t now_ms() {
    using namespace std::chrono;
    return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

void check_request(const std::string& prompt, int n) {
    if (prompt.empty()) throw std::invalid_argument("complete(): prompt must be non-empty");
    if (n < 1) throw std::invalid_argument("complete(): n must be >= 1");
}

// Splits "https://host:port/v1" into ("https://host:port", "/v1").
std::pair<std::string, std::string> split_url(const std::string& url) {
    const auto scheme = url.find("://");
    const auto start = scheme == std::string::npos ? 0 : scheme + 3;
    const auto slash = url.find('/', start);
    if (slash == std::string::npos) return {url, ""};
    std::string path = url.substr(slash);
    while (!path.empty() && path.back() == '/') path.pop_back();
    return {url.substr(0, slash), path};
}

struct HttpOutcome {
    int status = 0;  // 0 = transport failure
    std::string body;
    std::string error;
};

HttpOutcome post_json(const RemoteConfig& cfg, const std::string& credential,
                      const std::string& endpoint, const json& payload) {
    const auto [host, prefix] = split_url(cfg.base_url);
    httplib::Client client(host);
    client.set_connection_timeout(std::chrono::seconds(30));
    client.set_read_timeout(std::chrono::seconds(cfg.timeout_seconds));
    httplib::Headers headers;
    if (!credential.empty()) headers.emplace("Authorization", "Bearer " + credential);
    auto res = client.Post(prefix + endpoint, headers, payload.dump(), "application/json");
    if (!res) return {0, {}, httplib::to_string(res.error())};
    return {res->status, res->body, {}};
}

// Issues the request, retrying transient failures with exponential backoff.
// Returns the successful body; `retries` receives the number of retries used.
std::string post_with_retry(const RemoteConfig& cfg, const std::string& credential,
                            const std::string& backend_id, const std::string& endpoint,
                            const json& payload, RateLimiter& limiter, int& retries) {
    retries = 0;
    HttpOutcome last;
    for (int attempt = 0;; ++attempt) {
        limiter.acquire();
        last = post_json(cfg, credential, endpoint, payload);
        if (last.status >= 200 && last.status < 300) return last.body;
        if (last.status == 401 || last.status == 403) {
            throw ConfigError("backend " + backend_id + ": authentication failed (HTTP " +
                              std::to_string(last.status) + ")");
        }
        if (!RetryPolicy::retryable(last.status) || attempt >= cfg.retry.retry_max) break;
        ++retries;
        const auto delay = cfg.retry.delay_for(attempt);
        spdlog::warn("backend {}: HTTP {} {}, retry {} in {} ms", backend_id, last.status, last.error,
                     retries, delay.count());
        std::this_thread::sleep_for(delay);
    }
    throw BackendUnavailable("backend " + backend_id + " unavailable: HTTP " + std::to_string(last.status) +
                                 (last.error.empty() ? "" : " (" + last.error + ")"),
                             last.status);
}

std::uint64_t mix(std::uint64_t a, std::string_view b) { return derive_seed(a, b); }

char letter_at(std::uint64_t h) { return static_cast<char>('A' + h % 4); }

std::vector<std::string> lowercase_words(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

}  // namespace

std::uint64_t estimate_tokens(std::string_view text) noexcept { return (text.size() + 3) / 4; }

// ---------------------------------------------------------------------------

json CallLedger::Totals::to_json() const {
    return {{"calls", calls},
            {"remote_calls", remote_calls},
            {"prompt_tokens", prompt_tokens},
            {"completion_tokens", completion_tokens},
            {"cost_usd", cost_usd}};
}

void CallLedger::record(Entry entry) {
    std::lock_guard lock(mu_);
    if (entry.timestamp_ms == 0) entry.timestamp_ms = now_ms();
    ++totals_.calls;
    if (entry.remote) ++totals_.remote_calls;
    totals_.prompt_tokens += entry.usage.prompt_tokens;
    totals_.completion_tokens += entry.usage.completion_tokens;
    totals_.cost_usd += std::max(0.0, entry.usage.cost_usd);
    entries_.push_back(std::move(entry));
}

CallLedger::Totals CallLedger::totals() const {
    std::lock_guard lock(mu_);
    return totals_;
}

std::vector<CallLedger::Entry> CallLedger::entries() const {
    std::lock_guard lock(mu_);
    return entries_;
}

void CallLedger::set_budget(double usd) {
    std::lock_guard lock(mu_);
    budget_usd_ = usd;
}

void CallLedger::check_budget(std::string_view backend_id) const {
    std::lock_guard lock(mu_);
    if (budget_usd_ > 0.0 && totals_.cost_usd >= budget_usd_) {
        throw BackendUnavailable("run budget of $" + std::to_string(budget_usd_) + " exhausted before call to " +
                                     std::string(backend_id),
                                 0);
    }
}

void CallLedger::flush_to(const fs::path& path) {
    std::lock_guard lock(mu_);
    if (flushed_ == entries_.size()) return;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::app);
    for (; flushed_ < entries_.size(); ++flushed_) {
        const auto& e = entries_[flushed_];
        out << json{{"backend_id", e.backend_id},
                    {"operation", e.operation},
                    {"timestamp_ms", e.timestamp_ms},
                    {"remote", e.remote},
                    {"prompt_tokens", e.usage.prompt_tokens},
                    {"completion_tokens", e.usage.completion_tokens},
                    {"cost_usd", e.usage.cost_usd}}
                   .dump()
            << '\n';
    }
}

// ---------------------------------------------------------------------------

MockChatBackend::MockChatBackend(std::string id, Responder responder, std::shared_ptr<CallLedger> ledger)
    : id_(std::move(id)), responder_(std::move(responder)), ledger_(std::move(ledger)) {}

CompletionBatch MockChatBackend::complete(const std::string& prompt, double temperature, int n,
                                          std::uint64_t seed) {
    check_request(prompt, n);
    ++calls_;
    CompletionBatch batch{prompt, temperature, n, {}, {}, 0, false};
    batch.completions.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        batch.completions.push_back(responder_(prompt, seed, i));
        batch.usage.completion_tokens += estimate_tokens(batch.completions.back());
    }
    batch.usage.prompt_tokens = estimate_tokens(prompt);
    if (ledger_) ledger_->record({id_, "chat", 0, false, batch.usage});
    return batch;
}

std::string prompt_fingerprint(std::string_view prompt) { return sha256_hex(prompt).substr(0, 16); }

Responder rule_responder() {
    return [](const std::string& prompt, std::uint64_t seed, int index) -> std::string {
        static const std::regex keywords_re(R"(Topic keywords: ([^\n]*))");
        static const std::regex instr_re(R"(exactly (\d+) open-ended instructions)");
        static const std::regex quest_re(R"(exactly (\d+) multiple-choice questions)");
        static const std::regex block_re(R"((^|\n)### Community \d+)");

        const std::uint64_t base = mix(fnv1a64(prompt), "rule");
        const std::uint64_t sample = mix(mix(seed, prompt_fingerprint(prompt)), std::to_string(index));

        std::smatch m;
        if (std::regex_search(prompt, m, keywords_re)) {
            std::vector<std::string> keywords;
            for (auto& w : lowercase_words(m[1].str())) keywords.push_back(std::move(w));
            if (keywords.empty()) keywords.push_back("topic");
            const auto kw = [&](std::size_t i) -> const std::string& { return keywords[i % keywords.size()]; };

            int n_instr = 3;
            int n_quest = 2;
            if (std::regex_search(prompt, m, instr_re)) n_instr = std::stoi(m[1].str());
            if (std::regex_search(prompt, m, quest_re)) n_quest = std::stoi(m[1].str());
            const auto communities = static_cast<int>(
                std::distance(std::sregex_iterator(prompt.begin(), prompt.end(), block_re), std::sregex_iterator()));

            json out = {{"instructions", json::array()}, {"questions", json::array()}};
            for (int i = 0; i < n_instr; ++i) {
                const auto u = static_cast<std::size_t>(i);
                json responses = json::array();
                for (int c = 0; c < communities; ++c) {
                    const auto v = static_cast<std::size_t>(c);
                    const auto tag = mix(sample, "r" + std::to_string(i) + "." + std::to_string(c));
                    responses.push_back("Community " + std::to_string(c + 1) + " stresses " + kw(u + v) + " over " +
                                        kw(u + v + 1) + " when it comes to " + kw(u) + " (" +
                                        std::to_string(tag % 1000) + ").");
                }
                out["instructions"].push_back(
                    {{"instruction", "What is your view on " + kw(u) + " and " + kw(u + 1) + "?"},
                     {"responses", std::move(responses)}});
            }
            for (int q = 0; q < n_quest; ++q) {
                const auto u = static_cast<std::size_t>(q);
                const auto consensus = mix(base, "q" + std::to_string(q));
                json answers = json::array();
                for (int c = 0; c < communities; ++c) {
                    const auto h = mix(mix(sample, "a" + std::to_string(q)), std::to_string(c));
                    answers.push_back(std::string(1, letter_at((h >> 8) % 2 == 0 ? consensus : h)));
                }
                out["questions"].push_back(
                    {{"question", "Which statement best matches your stance on " + kw(u + 2) + " in thread " +
                                     std::to_string(consensus % 1000003) + "?"},
                     {"options",
                      {"Prioritize " + kw(u + 3), "Focus on " + kw(u + 4), "Avoid " + kw(u + 5),
                       "Undecided about " + kw(u + 6)}},
                     {"answers", std::move(answers)}});
            }
            return out.dump();
        }
        if (prompt.find("by stating either A, B, C, or D") != std::string::npos) {
            const char consensus = letter_at(base);
            const char letter = (sample % 10) < 6 ? consensus : letter_at(sample >> 16);
            if (index % 5 == 4) return std::string("I think the answer is ") + letter + ".";
            return std::string(1, letter);
        }
        return "mock response " + std::to_string(sample % 100000);
    };
}

Responder canned_responder(std::map<std::string, std::vector<std::string>> script) {
    auto shared = std::make_shared<const std::map<std::string, std::vector<std::string>>>(std::move(script));
    return [shared](const std::string& prompt, std::uint64_t, int index) -> std::string {
        const auto fp = prompt_fingerprint(prompt);
        const auto it = shared->find(fp);
        if (it == shared->end() || it->second.empty()) {
            throw ConfigError("mock script has no response for prompt fingerprint " + fp);
        }
        return it->second[static_cast<std::size_t>(index) % it->second.size()];
    };
}

Responder canned_responder_from_file(const fs::path& path) {
    const json j = read_json(path);
    if (!j.is_object()) throw ConfigError("mock script " + path.string() + " must be a JSON object");
    std::map<std::string, std::vector<std::string>> script;
    for (const auto& [fp, responses] : j.items()) {
        script[fp] = responses.is_array() ? responses.get<std::vector<std::string>>()
                                          : std::vector<std::string>{responses.get<std::string>()};
    }
    return canned_responder(std::move(script));
}

Responder constant_responder(std::string text) {
    return [text = std::move(text)](const std::string&, std::uint64_t, int) { return text; };
}

// ---------------------------------------------------------------------------

std::chrono::milliseconds RetryPolicy::delay_for(int retry) const noexcept {
    const auto factor = std::int64_t{1} << std::min(retry, 20);
    return std::min(max_delay, base_delay * factor);
}

bool RetryPolicy::retryable(int status) noexcept {
    return status == 0 || status == 408 || status == 429 || status >= 500;
}

std::string resolve_credential(const std::string& env_name) {
    if (env_name.empty()) return {};
    const char* value = std::getenv(env_name.c_str());
    if (value == nullptr || *value == '\0') {
        throw ConfigError("credential environment variable " + env_name + " is not set");
    }
    return value;
}

RateLimiter::RateLimiter(int requests_per_minute) {
    if (requests_per_minute > 0) {
        interval_ = std::chrono::duration_cast<std::chrono::steady_clock::duration>(std::chrono::minutes(1)) /
                    requests_per_minute;
    }
}

void RateLimiter::acquire() {
    if (interval_ == std::chrono::steady_clock::duration::zero()) return;
    std::chrono::steady_clock::time_point slot;
    {
        std::lock_guard lock(mu_);
        const auto now = std::chrono::steady_clock::now();
        slot = std::max(now, next_);
        next_ = slot + interval_;
    }
    std::this_thread::sleep_until(slot);
}

RemoteChatBackend::RemoteChatBackend(std::string id, RemoteConfig config, std::shared_ptr<CallLedger> ledger)
    : id_(std::move(id)),
      config_(std::move(config)),
      credential_(resolve_credential(config_.api_key_env)),
      ledger_(std::move(ledger)),
      limiter_(config_.requests_per_minute) {}

CompletionBatch RemoteChatBackend::request(const std::string& prompt, double temperature, int n,
                                           std::uint64_t seed) {
    if (ledger_) ledger_->check_budget(id_);
    json payload = {{"model", config_.model},
                    {"messages", json::array({{{"role", "user"}, {"content", prompt}}})},
                    {"temperature", temperature},
                    {"n", n},
                    {"seed", seed & 0x7fffffffffffULL}};
    if (config_.max_tokens > 0) payload["max_tokens"] = config_.max_tokens;

    int retries = 0;
    ++calls_;
    const std::string body = post_with_retry(config_, credential_, id_, "/chat/completions", payload, limiter_, retries);
    retries_ += static_cast<std::uint64_t>(retries);

    CompletionBatch batch{prompt, temperature, n, {}, {}, retries, false};
    try {
        const json j = json::parse(body);
        for (const auto& choice : j.at("choices")) {
            const auto& content = choice.at("message").at("content");
            batch.completions.push_back(content.is_string() ? content.get<std::string>() : std::string{});
        }
        if (j.contains("usage")) {
            batch.usage.prompt_tokens = j["usage"].value("prompt_tokens", 0ULL);
            batch.usage.completion_tokens = j["usage"].value("completion_tokens", 0ULL);
        }
    } catch (const json::exception& e) {
        throw BackendUnavailable("backend " + id_ + " returned an unreadable body: " + e.what(), 200);
    }
    if (static_cast<int>(batch.completions.size()) != n) {
        throw BackendUnavailable("backend " + id_ + " returned " + std::to_string(batch.completions.size()) +
                                     " choices, expected " + std::to_string(n),
                                 200);
    }
    batch.usage.cost_usd = static_cast<double>(batch.usage.prompt_tokens) / 1000.0 * config_.price_prompt_per_1k +
                           static_cast<double>(batch.usage.completion_tokens) / 1000.0 * config_.price_completion_per_1k;
    if (ledger_) ledger_->record({id_, "chat", 0, true, batch.usage});
    return batch;
}

CompletionBatch RemoteChatBackend::complete(const std::string& prompt, double temperature, int n,
                                            std::uint64_t seed) {
    check_request(prompt, n);
    if (config_.supports_n) return request(prompt, temperature, n, seed);

    CompletionBatch merged{prompt, temperature, n, {}, {}, 0, false};
    for (int i = 0; i < n; ++i) {
        auto one = request(prompt, temperature, 1, seed + static_cast<std::uint64_t>(i));
        merged.completions.push_back(std::move(one.completions.front()));
        merged.usage.prompt_tokens += one.usage.prompt_tokens;
        merged.usage.completion_tokens += one.usage.completion_tokens;
        merged.usage.cost_usd += one.usage.cost_usd;
        merged.retries += one.retries;
    }
    return merged;
}

CachingChatBackend::CachingChatBackend(std::shared_ptr<ChatBackend> inner, fs::path dir)
    : inner_(std::move(inner)), dir_(std::move(dir)) {}

CompletionBatch CachingChatBackend::complete(const std::string& prompt, double temperature, int n,
                                             std::uint64_t seed) {
    check_request(prompt, n);
    const json key = {{"backend", inner_->id()}, {"prompt", prompt}, {"temperature", temperature},
                      {"n", n}, {"seed", seed}};
    const fs::path file = dir_ / inner_->id() / (sha256_hex(key.dump()) + ".json");
    if (fs::exists(file)) {
        try {
            const json cached = read_json(file);
            auto completions = cached.at("completions").get<std::vector<std::string>>();
            if (static_cast<int>(completions.size()) == n) {
                ++hits_;
                return {prompt, temperature, n, std::move(completions), {}, 0, true};
            }
        } catch (const std::exception& e) {
            spdlog::warn("ignoring unreadable cache entry {}: {}", file.string(), e.what());
        }
    }
    auto batch = inner_->complete(prompt, temperature, n, seed);
    write_json_atomic(file, {{"completions", batch.completions}});
    return batch;
}

// ---------------------------------------------------------------------------

MockEmbeddingBackend::MockEmbeddingBackend(std::string id, std::size_t dim, std::uint64_t seed,
                                           std::shared_ptr<CallLedger> ledger)
    : id_(std::move(id)), dim_(dim), seed_(seed), ledger_(std::move(ledger)) {
    if (dim_ == 0) throw ConfigError("embedding backend " + id_ + ": dim must be positive");
}

Vector MockEmbeddingBackend::embed_one(std::string_view text) const {
    Vector v(dim_, 0.0);
    for (const auto& word : lowercase_words(text)) {
        const auto h = mix(seed_, word);
        v[h % dim_] += (h >> 63) != 0 ? 1.0 : -1.0;
    }
    // Content component so texts with identical bags of words still differ.
    Rng rng(mix(seed_, std::string("text:") + std::string(text)));
    for (auto& x : v) x += 0.05 * (rng.uniform() * 2.0 - 1.0);
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
    return v;
}

std::vector<Vector> MockEmbeddingBackend::embed(std::span<const std::string> texts) {
    std::vector<Vector> out;
    if (texts.empty()) return out;
    ++calls_;
    out.reserve(texts.size());
    Usage usage;
    for (const auto& t : texts) {
        out.push_back(embed_one(t));
        usage.prompt_tokens += estimate_tokens(t);
    }
    if (ledger_) ledger_->record({id_, "embed", 0, false, usage});
    return out;
}

RemoteEmbeddingBackend::RemoteEmbeddingBackend(std::string id, std::size_t dim, RemoteConfig config,
                                               std::shared_ptr<CallLedger> ledger)
    : id_(std::move(id)),
      dim_(dim),
      config_(std::move(config)),
      credential_(resolve_credential(config_.api_key_env)),
      ledger_(std::move(ledger)),
      limiter_(config_.requests_per_minute) {}

std::vector<Vector> RemoteEmbeddingBackend::embed(std::span<const std::string> texts) {
    std::vector<Vector> out;
    if (texts.empty()) return out;
    if (ledger_) ledger_->check_budget(id_);
    const json payload = {{"model", config_.model}, {"input", std::vector<std::string>(texts.begin(), texts.end())}};
    int retries = 0;
    ++calls_;
    const std::string body = post_with_retry(config_, credential_, id_, "/embeddings", payload, limiter_, retries);
    Usage usage;
    try {
        const json j = json::parse(body);
        out.resize(texts.size());
        for (const auto& item : j.at("data")) {
            const auto idx = item.value("index", std::size_t{0});
            if (idx >= out.size()) throw BackendUnavailable("embedding index out of range", 200);
            out[idx] = item.at("embedding").get<Vector>();
        }
        if (j.contains("usage")) usage.prompt_tokens = j["usage"].value("prompt_tokens", 0ULL);
    } catch (const json::exception& e) {
        throw BackendUnavailable("backend " + id_ + " returned an unreadable body: " + e.what(), 200);
    }
    for (const auto& v : out) {
        if (v.size() != dim_) {
            throw ConfigError("backend " + id_ + " returned dim " + std::to_string(v.size()) + ", configured " +
                              std::to_string(dim_));
        }
    }
    usage.cost_usd = static_cast<double>(usage.prompt_tokens) / 1000.0 * config_.price_prompt_per_1k;
    if (ledger_) ledger_->record({id_, "embed", 0, true, usage});
    return out;
}

EmbeddingCache::EmbeddingCache(std::shared_ptr<EmbeddingBackend> backend, std::optional<fs::path> dir,
                               std::size_t batch_size)
    : backend_(std::move(backend)), dir_(std::move(dir)), batch_size_(std::max<std::size_t>(1, batch_size)) {}

std::string EmbeddingCache::key_for(std::string_view text) const {
    std::string material = backend_->id();
    material += '\0';
    material += std::to_string(backend_->dim());
    material += '\0';
    material += text;
    return sha256_hex(material);
}

fs::path EmbeddingCache::file_for(const std::string& key) const {
    return *dir_ / backend_->id() / key.substr(0, 2) / (key + ".json");
}

std::vector<Vector> EmbeddingCache::embed(std::span<const std::string> texts) {
    std::vector<Vector> out(texts.size());
    std::vector<std::size_t> missing;
    std::vector<std::string> keys(texts.size());
    {
        std::shared_lock lock(mu_);
        for (std::size_t i = 0; i < texts.size(); ++i) {
            keys[i] = key_for(texts[i]);
            if (auto it = memory_.find(keys[i]); it != memory_.end()) {
                out[i] = it->second;
            } else {
                missing.push_back(i);
            }
        }
    }
    std::vector<std::size_t> still_missing;
    for (auto i : missing) {
        if (dir_ && fs::exists(file_for(keys[i]))) {
            auto v = read_json(file_for(keys[i])).get<Vector>();
            if (v.size() == backend_->dim()) {
                out[i] = std::move(v);
                std::unique_lock lock(mu_);
                memory_.emplace(keys[i], out[i]);
                continue;
            }
        }
        still_missing.push_back(i);
    }
    hits_ += texts.size() - still_missing.size();
    misses_ += still_missing.size();

    for (std::size_t start = 0; start < still_missing.size(); start += batch_size_) {
        const auto end = std::min(still_missing.size(), start + batch_size_);
        std::vector<std::string> batch;
        for (auto k = start; k < end; ++k) batch.push_back(texts[still_missing[k]]);
        auto vectors = backend_->embed(batch);
        std::lock_guard write_lock(write_mu_);
        for (auto k = start; k < end; ++k) {
            const auto i = still_missing[k];
            out[i] = std::move(vectors[k - start]);
            if (dir_) write_text_atomic(file_for(keys[i]), json(out[i]).dump());
            std::unique_lock lock(mu_);
            memory_.emplace(keys[i], out[i]);
        }
    }
    return out;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) noexcept {
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    const auto n = std::min(a.size(), b.size());
    for (std::size_t i = 0; i < n; ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace forge::llm
