#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "forge/common.hpp"

namespace forge::llm {

enum class BackendKind { RemoteHttp, Mock };

using Vector = std::vector<double>;

struct Usage {
    std::uint64_t prompt_tokens = 0;
    std::uint64_t completion_tokens = 0;
    double cost_usd = 0.0;
};

struct CompletionBatch {
    std::string prompt;
    double temperature = 0.0;
    int n = 0;
    std::vector<std::string> completions;
    Usage usage;
    int retries = 0;
    bool from_cache = false;
};

// Rough token estimate for backends that do not report usage.
[[nodiscard]] std::uint64_t estimate_tokens(std::string_view text) noexcept;

// ---------------------------------------------------------------------------
// Call ledger. Thread-safe; totals only ever grow.

class CallLedger {
public:
    struct Entry {
        std::string backend_id;
        std::string operation;  // "chat" | "embed"
        std::int64_t timestamp_ms = 0;
        bool remote = false;
        Usage usage;
    };

    struct Totals {
        std::uint64_t calls = 0;
        std::uint64_t remote_calls = 0;
        std::uint64_t prompt_tokens = 0;
        std::uint64_t completion_tokens = 0;
        double cost_usd = 0.0;
        [[nodiscard]] json to_json() const;
    };

    void record(Entry entry);
    [[nodiscard]] Totals totals() const;
    [[nodiscard]] std::vector<Entry> entries() const;

    // A ceiling of 0 disables the guardrail.
    void set_budget(double usd);
    // Throws BackendUnavailable once accumulated cost reaches the ceiling.
    void check_budget(std::string_view backend_id) const;

    // Appends entries recorded since the last flush as JSONL.
    void flush_to(const fs::path& path);

private:
    mutable std::mutex mu_;
    std::vector<Entry> entries_;
    std::size_t flushed_ = 0;
    Totals totals_;
    double budget_usd_ = 0.0;
};

// ---------------------------------------------------------------------------
// Chat backends

class ChatBackend {
public:
    virtual ~ChatBackend() = default;

    [[nodiscard]] virtual const std::string& id() const noexcept = 0;
    [[nodiscard]] virtual BackendKind kind() const noexcept = 0;

    // Returns exactly n completions. Throws std::invalid_argument when the
    // prompt is empty or n < 1.
    virtual CompletionBatch complete(const std::string& prompt, double temperature, int n,
                                     std::uint64_t seed) = 0;

    // Number of completion requests that actually reached the backend.
    [[nodiscard]] virtual std::uint64_t call_count() const noexcept = 0;
};

// (prompt, seed, index) -> completion text.
using Responder = std::function<std::string(const std::string&, std::uint64_t, int)>;

class MockChatBackend final : public ChatBackend {
public:
    MockChatBackend(std::string id, Responder responder, std::shared_ptr<CallLedger> ledger = nullptr);

    [[nodiscard]] const std::string& id() const noexcept override { return id_; }
    [[nodiscard]] BackendKind kind() const noexcept override { return BackendKind::Mock; }
    CompletionBatch complete(const std::string& prompt, double temperature, int n,
                             std::uint64_t seed) override;
    [[nodiscard]] std::uint64_t call_count() const noexcept override { return calls_.load(); }

private:
    std::string id_;
    Responder responder_;
    std::shared_ptr<CallLedger> ledger_;
    std::atomic<std::uint64_t> calls_{0};
};

[[nodiscard]] std::string prompt_fingerprint(std::string_view prompt);

// Fabricates well-formed generator output for generation prompts (reading the
// topic keywords, community blocks and requested counts from the prompt) and
// letter answers for survey prompts.
[[nodiscard]] Responder rule_responder();

// Maps prompt_fingerprint(prompt) to a list of responses; completion i uses
// entry i modulo the list length. Unknown prompts throw ConfigError.
[[nodiscard]] Responder canned_responder(std::map<std::string, std::vector<std::string>> script);
[[nodiscard]] Responder canned_responder_from_file(const fs::path& path);

[[nodiscard]] Responder constant_responder(std::string text);

struct RetryPolicy {
    int retry_max = 3;
    std::chrono::milliseconds base_delay{500};
    std::chrono::milliseconds max_delay{8000};

    [[nodiscard]] std::chrono::milliseconds delay_for(int retry) const noexcept;
    [[nodiscard]] static bool retryable(int status) noexcept;
};

struct RemoteConfig {
    std::string base_url;  // e.g. https://api.openai.com/v1
    std::string model;
    std::string api_key_env;  // name of the environment variable holding the key
    bool supports_n = true;
    double price_prompt_per_1k = 0.0;
    double price_completion_per_1k = 0.0;
    int requests_per_minute = 0;  // 0 = unlimited
    int timeout_seconds = 120;
    int max_tokens = 0;           // 0 = leave to the server
    RetryPolicy retry;
};

// Resolves the bearer credential; throws ConfigError if the named variable is
// unset. An empty env name means no credential.
[[nodiscard]] std::string resolve_credential(const std::string& env_name);

class RateLimiter {
public:
    explicit RateLimiter(int requests_per_minute);
    void acquire();

private:
    std::mutex mu_;
    std::chrono::steady_clock::duration interval_{};
    std::chrono::steady_clock::time_point next_{};
};

// OpenAI-compatible chat-completion client.
class RemoteChatBackend final : public ChatBackend {
public:
    RemoteChatBackend(std::string id, RemoteConfig config, std::shared_ptr<CallLedger> ledger = nullptr);

    [[nodiscard]] const std::string& id() const noexcept override { return id_; }
    [[nodiscard]] BackendKind kind() const noexcept override { return BackendKind::RemoteHttp; }
    CompletionBatch complete(const std::string& prompt, double temperature, int n,
                             std::uint64_t seed) override;
    [[nodiscard]] std::uint64_t call_count() const noexcept override { return calls_.load(); }
    [[nodiscard]] std::uint64_t retry_count() const noexcept { return retries_.load(); }

private:
    CompletionBatch request(const std::string& prompt, double temperature, int n, std::uint64_t seed);

    std::string id_;
    RemoteConfig config_;
    std::string credential_;
    std::shared_ptr<CallLedger> ledger_;
    RateLimiter limiter_;
    std::atomic<std::uint64_t> calls_{0};
    std::atomic<std::uint64_t> retries_{0};
};

// Content-addressed response cache keyed by (backend, prompt, temperature, n,
// seed). Files live under <dir>/<backend_id>/<sha256>.json.
class CachingChatBackend final : public ChatBackend {
public:
    CachingChatBackend(std::shared_ptr<ChatBackend> inner, fs::path dir);

    [[nodiscard]] const std::string& id() const noexcept override { return inner_->id(); }
    [[nodiscard]] BackendKind kind() const noexcept override { return inner_->kind(); }
    CompletionBatch complete(const std::string& prompt, double temperature, int n,
                             std::uint64_t seed) override;
    [[nodiscard]] std::uint64_t call_count() const noexcept override { return inner_->call_count(); }
    [[nodiscard]] std::uint64_t hits() const noexcept { return hits_.load(); }

private:
    std::shared_ptr<ChatBackend> inner_;
    fs::path dir_;
    std::atomic<std::uint64_t> hits_{0};
};

// ---------------------------------------------------------------------------
// Embedding backends

class EmbeddingBackend {
public:
    virtual ~EmbeddingBackend() = default;

    [[nodiscard]] virtual const std::string& id() const noexcept = 0;
    [[nodiscard]] virtual BackendKind kind() const noexcept = 0;
    [[nodiscard]] virtual std::size_t dim() const noexcept = 0;

    // One vector of length dim() per text; empty input gives empty output.
    virtual std::vector<Vector> embed(std::span<const std::string> texts) = 0;

    [[nodiscard]] virtual std::uint64_t call_count() const noexcept = 0;
};

// Hashed bag-of-words embedding plus a small content-hash component, L2
// normalized. Texts sharing vocabulary land close together, and distinct texts
// map to distinct vectors.
class MockEmbeddingBackend final : public EmbeddingBackend {
public:
    MockEmbeddingBackend(std::string id, std::size_t dim, std::uint64_t seed,
                         std::shared_ptr<CallLedger> ledger = nullptr);

    [[nodiscard]] const std::string& id() const noexcept override { return id_; }
    [[nodiscard]] BackendKind kind() const noexcept override { return BackendKind::Mock; }
    [[nodiscard]] std::size_t dim() const noexcept override { return dim_; }
    std::vector<Vector> embed(std::span<const std::string> texts) override;
    [[nodiscard]] std::uint64_t call_count() const noexcept override { return calls_.load(); }

    [[nodiscard]] Vector embed_one(std::string_view text) const;

private:
    std::string id_;
    std::size_t dim_;
    std::uint64_t seed_;
    std::shared_ptr<CallLedger> ledger_;
    std::atomic<std::uint64_t> calls_{0};
};

class RemoteEmbeddingBackend final : public EmbeddingBackend {
public:
    RemoteEmbeddingBackend(std::string id, std::size_t dim, RemoteConfig config,
                           std::shared_ptr<CallLedger> ledger = nullptr);

    [[nodiscard]] const std::string& id() const noexcept override { return id_; }
    [[nodiscard]] BackendKind kind() const noexcept override { return BackendKind::RemoteHttp; }
    [[nodiscard]] std::size_t dim() const noexcept override { return dim_; }
    std::vector<Vector> embed(std::span<const std::string> texts) override;
    [[nodiscard]] std::uint64_t call_count() const noexcept override { return calls_.load(); }

private:
    std::string id_;
    std::size_t dim_;
    RemoteConfig config_;
    std::string credential_;
    std::shared_ptr<CallLedger> ledger_;
    RateLimiter limiter_;
    std::atomic<std::uint64_t> calls_{0};
};

// Memory + disk cache in front of an embedding backend, keyed by content
// hash. Concurrent readers, serialized writers.
class EmbeddingCache {
public:
    EmbeddingCache(std::shared_ptr<EmbeddingBackend> backend, std::optional<fs::path> dir,
                   std::size_t batch_size = 64);

    std::vector<Vector> embed(std::span<const std::string> texts);

    [[nodiscard]] const EmbeddingBackend& backend() const noexcept { return *backend_; }
    [[nodiscard]] std::uint64_t hits() const noexcept { return hits_.load(); }
    [[nodiscard]] std::uint64_t misses() const noexcept { return misses_.load(); }

private:
    [[nodiscard]] std::string key_for(std::string_view text) const;
    [[nodiscard]] fs::path file_for(const std::string& key) const;

    std::shared_ptr<EmbeddingBackend> backend_;
    std::optional<fs::path> dir_;
    std::size_t batch_size_;
    mutable std::shared_mutex mu_;
    std::mutex write_mu_;
    std::unordered_map<std::string, Vector> memory_;
    std::atomic<std::uint64_t> hits_{0};
    std::atomic<std::uint64_t> misses_{0};
};

[[nodiscard]] double cosine_similarity(std::span<const double> a, std::span<const double> b) noexcept;

}  // namespace forge::llm
