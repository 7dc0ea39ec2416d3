// SPDX-License-Identifier: Apache-2.0

#include <cctype>
#include <cstdlib>
#include <sstream>

#include <httplib.h>

#include "dialcot/char_lm.hpp"
#include "dialcot/gateway.hpp"

namespace dialcot::gateway {

std::vector<std::string> whitespace_tokens(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream ss(text);
    std::string tok;
    while (ss >> tok) out.push_back(tok);
    return out;
}

// ---------------------------------------------------------------------------

StubBackend::StubBackend(Options options)
    : options_(std::move(options)),
      descriptor_{BackendKind::stub, options_.name, options_.supports_scoring} {}

void StubBackend::maybe_fail(int call) {
    if (call <= options_.transient_failures)
        throw TransientError("injected transient failure on call " + std::to_string(call));
    if (options_.failing_calls.count(call))
        throw BackendError("injected failure on call " + std::to_string(call));
}

Completion StubBackend::complete(const std::string& prompt, const GenParams& params) {
    const int call = calls_.fetch_add(1) + 1;
    maybe_fail(call);
    std::string text;
    if (options_.reply_fn) {
        text = options_.reply_fn(prompt, params);
    } else if (options_.fixed_reply) {
        text = *options_.fixed_reply;
    } else if (!options_.replies.empty()) {
        const auto h = fnv1a(prompt, static_cast<std::uint64_t>(params.seed.value_or(0)) * 0x9e3779b97f4a7c15ULL + 1);
        text = options_.replies[h % options_.replies.size()];
    }
    Completion out{text, false};
    // Cut after the max_tokens-th whitespace token, keeping the original layout.
    int seen = 0;
    bool in_token = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const bool space = std::isspace(static_cast<unsigned char>(text[i])) != 0;
        if (!space && !in_token && ++seen > params.max_tokens) {
            out.text = trim(text.substr(0, i));
            out.truncated = true;
            break;
        }
        in_token = !space;
    }
    return out;
}

SequenceScore StubBackend::score(const std::string& context_text, const std::string& response_text) {
    scores_.fetch_add(1);
    if (!options_.supports_scoring) throw BackendError("stub '" + options_.name + "' does not support scoring");
    auto tokens = whitespace_tokens(response_text);
    if (tokens.empty()) throw BackendError("response is empty after tokenization");
    double total = 0.0;
    if (options_.logprob_fn) {
        for (std::size_t i = 0; i < tokens.size(); ++i) total += options_.logprob_fn(context_text, i, tokens[i]);
    } else {
        double per = options_.per_token_logprob;
        if (auto it = options_.context_logprob.find(context_text); it != options_.context_logprob.end())
            per = it->second;
        total = per * static_cast<double>(tokens.size());
    }
    return SequenceScore::from_logprob(total, static_cast<int>(tokens.size()));
}

// ---------------------------------------------------------------------------

RemoteChatBackend::RemoteChatBackend(Options options)
    : options_(std::move(options)),
      descriptor_{BackendKind::remote_chat, options_.name, options_.enable_scoring} {
    if (const char* key = std::getenv(options_.api_key_env.c_str())) api_key_ = key;
}

json RemoteChatBackend::post(const std::string& path, const json& body) {
    httplib::Client client(options_.base_url);
    client.set_connection_timeout(options_.timeout_seconds, 0);
    client.set_read_timeout(options_.timeout_seconds, 0);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
    auto res = client.Post(path, headers, body.dump(), "application/json");
    if (!res) throw TransientError("request to " + options_.base_url + path + " failed: " + httplib::to_string(res.error()));
    if (res->status == 429 || res->status >= 500)
        throw TransientError("HTTP " + std::to_string(res->status) + " from " + options_.base_url + path);
    if (res->status != 200)
        throw BackendError("HTTP " + std::to_string(res->status) + " from " + options_.base_url + path + ": " + res->body);
    try {
        return json::parse(res->body);
    } catch (const json::parse_error& e) {
        throw BackendError(std::string("malformed response body: ") + e.what());
    }
}

Completion RemoteChatBackend::complete(const std::string& prompt, const GenParams& params) {
    json body{{"model", options_.model},
              {"messages", json::array({{{"role", "user"}, {"content", prompt}}})},
              {"temperature", params.temperature},
              {"max_tokens", params.max_tokens}};
    if (!params.stop.empty()) body["stop"] = params.stop;
    if (params.seed) body["seed"] = *params.seed;
    auto j = post(options_.chat_path, body);
    try {
        const auto& choice = j.at("choices").at(0);
        Completion out;
        out.text = choice.at("message").at("content").get<std::string>();
        out.truncated = choice.value("finish_reason", std::string{}) == "length";
        return out;
    } catch (const json::exception& e) {
        throw BackendError(std::string("unexpected chat response shape: ") + e.what());
    }
}

SequenceScore RemoteChatBackend::score(const std::string& context_text, const std::string& response_text) {
    if (!options_.enable_scoring) return Backend::score(context_text, response_text);
    json body{{"model", options_.model},
              {"prompt", context_text + response_text},
              {"max_tokens", 0},
              {"echo", true},
              {"logprobs", 1}};
    auto j = post(options_.completions_path, body);
    double total = 0.0;
    int count = 0;
    try {
        const auto& lp = j.at("choices").at(0).at("logprobs");
        const auto& offsets = lp.at("text_offset");
        const auto& values = lp.at("token_logprobs");
        for (std::size_t i = 0; i < offsets.size(); ++i) {
            if (offsets[i].get<std::size_t>() < context_text.size()) continue;
            if (values[i].is_null()) continue;
            total += values[i].get<double>();
            ++count;
        }
    } catch (const json::exception& e) {
        throw BackendError(std::string("unexpected logprob response shape: ") + e.what());
    }
    if (count == 0) throw BackendError("response is empty after tokenization");
    return SequenceScore::from_logprob(total, count);
}

// ---------------------------------------------------------------------------

LocalCausalBackend::LocalCausalBackend(std::string name, std::shared_ptr<const lm::CharLm> model)
    : descriptor_{BackendKind::local_causal, std::move(name), true}, model_(std::move(model)) {
    if (!model_) throw PreconditionError("local backend requires a model");
}

Completion LocalCausalBackend::complete(const std::string& prompt, const GenParams& params) {
    auto decoded = model_->sample(prompt, params.max_tokens, params.temperature,
                                  static_cast<std::uint64_t>(params.seed.value_or(0)));
    Completion out{std::move(decoded.text), decoded.truncated};
    for (const auto& stop : params.stop) {
        if (stop.empty()) continue;
        if (auto pos = out.text.find(stop); pos != std::string::npos) {
            out.text.resize(pos);
            out.truncated = false;
        }
    }
    return out;
}

SequenceScore LocalCausalBackend::score(const std::string& context_text, const std::string& response_text) {
    if (response_text.empty()) throw BackendError("response is empty after tokenization");
    return SequenceScore::from_logprob(model_->continuation_logprob(context_text, response_text),
                                       static_cast<int>(response_text.size()));
}

}  // namespace dialcot::gateway
