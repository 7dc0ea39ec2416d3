// SPDX-License-Identifier: Apache-2.0
//
// Uniform access to text-generation and sequence-scoring backends.
//
// A Backend performs exactly one request per call. The Gateway facade adds
// retries with exponential backoff, a token-bucket rate limit, a bound on
// concurrent requests and an on-disk response cache.

#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "dialcot/common.hpp"

namespace dialcot::lm {
class CharLm;
}

namespace dialcot::gateway {

struct GenParams {
    double temperature = 0.5;
    int max_tokens = 300;
    std::vector<std::string> stop;
    std::optional<std::int64_t> seed;

    void validate() const;
    json to_json() const;
    static GenParams from_json(const json& j);
    bool operator==(const GenParams&) const = default;
};

struct SequenceScore {
    double total_logprob = 0.0;
    int token_count = 1;
    double perplexity = 1.0;

    /// Builds a score with perplexity = exp(-total / count).
    static SequenceScore from_logprob(double total_logprob, int token_count);
};

enum class BackendKind { remote_chat, local_causal, stub };
std::string_view to_string(BackendKind k);
BackendKind backend_kind_from_string(std::string_view s);

struct BackendDescriptor {
    BackendKind kind = BackendKind::stub;
    std::string name;
    bool supports_scoring = false;
};

struct Completion {
    std::string text;
    bool truncated = false;
};

/// Retryable failure: timeouts, 429s, 5xx responses.
class TransientError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-retryable failure, or a transient one that outlived the retry budget.
class BackendError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class Backend {
public:
    virtual ~Backend() = default;
    virtual const BackendDescriptor& descriptor() const = 0;
    virtual Completion complete(const std::string& prompt, const GenParams& params) = 0;
    virtual SequenceScore score(const std::string& context_text, const std::string& response_text);
    /// Identical requests always produce identical completions.
    virtual bool deterministic() const { return false; }
};

// ---------------------------------------------------------------------------
// stub backend

/// Scriptable backend for tests and dry runs. Tokenizes on whitespace when scoring.
class StubBackend : public Backend {
public:
    struct Options {
        std::string name = "stub";
        /// Reply source, first match wins: reply_fn, fixed_reply, replies (picked by hash of prompt and seed).
        std::function<std::string(const std::string&, const GenParams&)> reply_fn;
        std::optional<std::string> fixed_reply;
        std::vector<std::string> replies;

        bool supports_scoring = true;
        double per_token_logprob = -1.0;
        /// Per-token logprob keyed by the exact context text; overrides per_token_logprob.
        std::map<std::string, double> context_logprob;
        /// Full override: logprob of token `i` with text `token` given the context.
        std::function<double(const std::string&, std::size_t, const std::string&)> logprob_fn;

        /// The first N calls throw TransientError.
        int transient_failures = 0;
        /// 1-based call numbers that throw BackendError.
        std::set<int> failing_calls;
    };

    explicit StubBackend(Options options);

    const BackendDescriptor& descriptor() const override { return descriptor_; }
    Completion complete(const std::string& prompt, const GenParams& params) override;
    SequenceScore score(const std::string& context_text, const std::string& response_text) override;
    bool deterministic() const override { return true; }

    int call_count() const { return calls_.load(); }
    int score_count() const { return scores_.load(); }

private:
    void maybe_fail(int call);

    Options options_;
    BackendDescriptor descriptor_;
    std::atomic<int> calls_{0};
    std::atomic<int> scores_{0};
};

std::vector<std::string> whitespace_tokens(const std::string& text);

// ---------------------------------------------------------------------------
// remote chat backend

/// OpenAI-compatible HTTP backend. Generation uses the chat completions route; scoring,
/// when enabled, uses the text completions route with echo and logprobs (vLLM style).
class RemoteChatBackend : public Backend {
public:
    struct Options {
        std::string name = "remote";
        std::string base_url = "http://127.0.0.1:8000";
        std::string model;
        std::string chat_path = "/v1/chat/completions";
        std::string completions_path = "/v1/completions";
        std::string api_key_env = "GATEWAY_API_KEY";
        bool enable_scoring = false;
        int timeout_seconds = 60;
    };

    explicit RemoteChatBackend(Options options);

    const BackendDescriptor& descriptor() const override { return descriptor_; }
    Completion complete(const std::string& prompt, const GenParams& params) override;
    SequenceScore score(const std::string& context_text, const std::string& response_text) override;

private:
    json post(const std::string& path, const json& body);

    Options options_;
    BackendDescriptor descriptor_;
    std::string api_key_;
};

// ---------------------------------------------------------------------------
// local causal backend

/// Serves a byte-level CharLm. Token counts are byte counts.
class LocalCausalBackend : public Backend {
public:
    LocalCausalBackend(std::string name, std::shared_ptr<const lm::CharLm> model);

    const BackendDescriptor& descriptor() const override { return descriptor_; }
    Completion complete(const std::string& prompt, const GenParams& params) override;
    SequenceScore score(const std::string& context_text, const std::string& response_text) override;
    bool deterministic() const override { return true; }

    const lm::CharLm& model() const { return *model_; }

private:
    BackendDescriptor descriptor_;
    std::shared_ptr<const lm::CharLm> model_;
};

// ---------------------------------------------------------------------------
// cache

std::string cache_key(const std::string& backend_name, const std::string& prompt, const GenParams& params);

/// One file per key under a two-level fan-out. Writes go through a temp file and an
/// atomic rename (last writer wins) or hard link (first writer wins).
class ResponseCache {
public:
    explicit ResponseCache(std::filesystem::path dir);

    std::optional<Completion> get(const std::string& key) const;
    void put(const std::string& key, const Completion& value, bool first_write_wins) const;
    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path path_for(const std::string& key) const;
    std::filesystem::path dir_;
};

// ---------------------------------------------------------------------------
// rate limiting

class TokenBucket {
public:
    /// requests_per_minute <= 0 disables limiting.
    explicit TokenBucket(double requests_per_minute, double burst = 1.0);
    void acquire();

private:
    double rate_per_sec_;
    double capacity_;
    double tokens_;
    std::chrono::steady_clock::time_point last_;
    std::mutex mu_;
};

// ---------------------------------------------------------------------------
// facade

struct GatewayOptions {
    int max_attempts = 3;
    std::chrono::milliseconds backoff_base{200};
    std::chrono::milliseconds backoff_max{5000};
    int parallelism = 4;
    double requests_per_minute = 0.0;
    std::optional<std::filesystem::path> cache_dir;
};

class Gateway {
public:
    Gateway(std::shared_ptr<Backend> backend, GatewayOptions options = {});

    const BackendDescriptor& descriptor() const { return backend_->descriptor(); }
    Backend& backend() { return *backend_; }

    /// Retries transient failures with exponential backoff; throws BackendError when exhausted.
    Completion generate(const std::string& prompt, const GenParams& params);
    /// generate() behind the response cache.
    Completion cached_generate(const std::string& prompt, const GenParams& params);
    SequenceScore score_response(const std::string& context_text, const std::string& response_text);

    int backend_calls() const { return backend_calls_.load(); }
    int cache_hits() const { return cache_hits_.load(); }

private:
    template <class F>
    auto with_retries(F&& fn) -> decltype(fn());

    std::shared_ptr<Backend> backend_;
    GatewayOptions options_;
    std::optional<ResponseCache> cache_;
    TokenBucket bucket_;
    std::counting_semaphore<1024> slots_;
    std::atomic<int> backend_calls_{0};
    std::atomic<int> cache_hits_{0};
};

}  // namespace dialcot::gateway
