// SPDX-License-Identifier: Apache-2.0

#include "dialcot/gateway.hpp"

#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <fstream>
#include <thread>

#include <spdlog/spdlog.h>

namespace dialcot::gateway {

void GenParams::validate() const {
    if (!(temperature >= 0.0)) throw PreconditionError("temperature must be >= 0");
    if (max_tokens < 1) throw PreconditionError("max_tokens must be >= 1");
}

json GenParams::to_json() const {
    json j{{"temperature", temperature}, {"max_tokens", max_tokens}, {"stop", stop}};
    j["seed"] = seed ? json(*seed) : json(nullptr);
    return j;
}

GenParams GenParams::from_json(const json& j) {
    GenParams p;
    p.temperature = j.value("temperature", p.temperature);
    p.max_tokens = j.value("max_tokens", p.max_tokens);
    if (j.contains("stop") && j["stop"].is_array()) p.stop = j["stop"].get<std::vector<std::string>>();
    if (j.contains("seed") && j["seed"].is_number_integer()) p.seed = j["seed"].get<std::int64_t>();
    p.validate();
    return p;
}

SequenceScore SequenceScore::from_logprob(double total_logprob, int token_count) {
    if (token_count < 1) throw BackendError("cannot score an empty response");
    return {total_logprob, token_count, std::exp(-total_logprob / token_count)};
}

std::string_view to_string(BackendKind k) {
    switch (k) {
        case BackendKind::remote_chat: return "remote_chat";
        case BackendKind::local_causal: return "local_causal";
        case BackendKind::stub: return "stub";
    }
    return "stub";
}

BackendKind backend_kind_from_string(std::string_view s) {
    if (s == "remote_chat") return BackendKind::remote_chat;
    if (s == "local_causal") return BackendKind::local_causal;
    if (s == "stub") return BackendKind::stub;
    throw PreconditionError("unknown backend kind '" + std::string(s) + "'");
}

SequenceScore Backend::score(const std::string&, const std::string&) {
    throw BackendError("backend '" + descriptor().name + "' does not support scoring");
}

// ---------------------------------------------------------------------------

std::string cache_key(const std::string& backend_name, const std::string& prompt, const GenParams& params) {
    json j{{"backend", backend_name}, {"prompt", prompt}, {"params", params.to_json()}};
    return sha256_hex(j.dump());
}

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

std::filesystem::path ResponseCache::path_for(const std::string& key) const {
    return dir_ / key.substr(0, 2) / (key + ".json");
}

std::optional<Completion> ResponseCache::get(const std::string& key) const {
    auto path = path_for(key);
    std::error_code ec;
    if (!std::filesystem::exists(path, ec)) return std::nullopt;
    try {
        auto j = json::parse(read_file(path));
        if (j.at("key").get<std::string>() != key) throw std::runtime_error("key mismatch");
        return Completion{j.at("text").get<std::string>(), j.value("truncated", false)};
    } catch (const std::exception& e) {
        spdlog::warn("cache entry {} is corrupt, treating as miss: {}", path.string(), e.what());
        return std::nullopt;
    }
}

void ResponseCache::put(const std::string& key, const Completion& value, bool first_write_wins) const {
    auto path = path_for(key);
    std::filesystem::create_directories(path.parent_path());
    static std::atomic<std::uint64_t> counter{0};
    auto tmp = path;
    tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter.fetch_add(1));
    json j{{"key", key}, {"text", value.text}, {"truncated", value.truncated}};
    write_file(tmp, j.dump());
    if (first_write_wins) {
        // link() refuses to replace an existing entry; EEXIST means another writer won.
        if (::link(tmp.c_str(), path.c_str()) != 0 && errno != EEXIST) {
            std::filesystem::remove(tmp);
            throw IoError("cannot write cache entry " + path.string());
        }
        std::filesystem::remove(tmp);
    } else {
        std::filesystem::rename(tmp, path);
    }
}

// ---------------------------------------------------------------------------

TokenBucket::TokenBucket(double requests_per_minute, double burst)
    : rate_per_sec_(requests_per_minute / 60.0),
      capacity_(std::max(1.0, burst)),
      tokens_(capacity_),
      last_(std::chrono::steady_clock::now()) {}

void TokenBucket::acquire() {
    if (rate_per_sec_ <= 0.0) return;
    std::unique_lock lock(mu_);
    for (;;) {
        auto now = std::chrono::steady_clock::now();
        double elapsed = std::chrono::duration<double>(now - last_).count();
        last_ = now;
        tokens_ = std::min(capacity_, tokens_ + elapsed * rate_per_sec_);
        if (tokens_ >= 1.0) {
            tokens_ -= 1.0;
            return;
        }
        double wait = (1.0 - tokens_) / rate_per_sec_;
        lock.unlock();
        std::this_thread::sleep_for(std::chrono::duration<double>(wait));
        lock.lock();
    }
}

// ---------------------------------------------------------------------------

Gateway::Gateway(std::shared_ptr<Backend> backend, GatewayOptions options)
    : backend_(std::move(backend)),
      options_(std::move(options)),
      bucket_(options_.requests_per_minute),
      slots_(std::clamp(options_.parallelism, 1, 1024)) {
    if (!backend_) throw PreconditionError("gateway requires a backend");
    if (options_.max_attempts < 1) throw PreconditionError("max_attempts must be >= 1");
    if (options_.cache_dir) cache_.emplace(*options_.cache_dir);
}

template <class F>
auto Gateway::with_retries(F&& fn) -> decltype(fn()) {
    std::string last_error;
    for (int attempt = 1; attempt <= options_.max_attempts; ++attempt) {
        bucket_.acquire();
        slots_.acquire();
        try {
            backend_calls_.fetch_add(1);
            auto result = fn();
            slots_.release();
            return result;
        } catch (const TransientError& e) {
            slots_.release();
            last_error = e.what();
            if (attempt == options_.max_attempts) break;
            auto delay = options_.backoff_base * (1LL << std::min(attempt - 1, 20));
            if (delay > options_.backoff_max) delay = options_.backoff_max;
            spdlog::debug("backend '{}' transient failure (attempt {}/{}): {}", descriptor().name, attempt,
                          options_.max_attempts, e.what());
            std::this_thread::sleep_for(delay);
        } catch (...) {
            slots_.release();
            throw;
        }
    }
    throw BackendError("backend '" + descriptor().name + "' unreachable after " +
                       std::to_string(options_.max_attempts) + " attempts: " + last_error);
}

Completion Gateway::generate(const std::string& prompt, const GenParams& params) {
    if (prompt.empty()) throw PreconditionError("prompt is empty");
    params.validate();
    return with_retries([&] { return backend_->complete(prompt, params); });
}

Completion Gateway::cached_generate(const std::string& prompt, const GenParams& params) {
    if (!cache_) return generate(prompt, params);
    const auto key = cache_key(descriptor().name, prompt, params);
    if (auto hit = cache_->get(key)) {
        cache_hits_.fetch_add(1);
        return *hit;
    }
    auto result = generate(prompt, params);
    cache_->put(key, result, !backend_->deterministic());
    // Under first-write-wins a concurrent writer may have landed first; return what is stored.
    if (!backend_->deterministic()) {
        if (auto stored = cache_->get(key)) return *stored;
    }
    return result;
}

SequenceScore Gateway::score_response(const std::string& context_text, const std::string& response_text) {
    if (!descriptor().supports_scoring)
        throw BackendError("backend '" + descriptor().name + "' does not support scoring");
    auto s = with_retries([&] { return backend_->score(context_text, response_text); });
    // Re-derive perplexity so every emitted score satisfies the relation exactly.
    return SequenceScore::from_logprob(s.total_logprob, s.token_count);
}

}  // namespace dialcot::gateway
