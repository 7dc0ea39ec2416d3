// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: one YAML file with per-key overrides ("section.key=value").

#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "dialcot/common.hpp"
#include "dialcot/filters.hpp"
#include "dialcot/gateway.hpp"
#include "dialcot/reasoner.hpp"
#include "dialcot/respond.hpp"

namespace dialcot::config {

/// Invalid configuration; the CLI exits with status 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct BackendConfig {
    /// stub | remote_chat | local_causal
    std::string kind = "stub";
    std::string name;
    // remote_chat
    std::string base_url = "http://127.0.0.1:8000";
    std::string model;
    std::string api_key_env = "GATEWAY_API_KEY";
    bool enable_scoring = false;
    int timeout_seconds = 60;
    // local_causal
    std::string model_path;
    // stub: fixed replies; empty selects the built-in synthetic replies
    std::vector<std::string> replies;
};

struct GatewayConfig {
    int max_attempts = 3;
    int backoff_base_ms = 200;
    int backoff_max_ms = 5000;
    int parallelism = 4;
    double requests_per_minute = 0.0;
    bool cache = true;
};

struct PipelineSection {
    int n = 10;
    int k = 3;
    double temperature = 0.5;
    int max_tokens = 300;
    int workers = 1;
    /// 0 means every dialogue.
    int max_dialogues = 0;
};

struct ReasonerSection {
    reasoner::ReasonerHyperparams hyperparams;
    std::string mode = "full";
    double split = 0.8;
    int max_tokens = 600;
};

struct RespondSection {
    std::string mode = "doctor";
    std::string style = "chat_prompt";
    double temperature = 0.0;
    int max_tokens = 128;
    /// last | all
    std::string targets = "last";
};

struct CurationSection {
    std::string host = "127.0.0.1";
    int port = 8765;
    std::string token;
    std::string static_dir;
};

struct RunConfig {
    std::string run_id = "default";
    std::string output_root = "runs";
    std::uint64_t seed = 0;
    std::string corpus_path;
    std::string corpus_format = "jsonl";
    std::string demos_path;
    BackendConfig generator;
    BackendConfig scorer;
    BackendConfig agent;
    GatewayConfig gateway;
    PipelineSection pipeline;
    filters::FilterConfig filter;
    filters::CriticTrainConfig critic;
    ReasonerSection reasoner;
    RespondSection respond;
    CurationSection curation;

    /// Built-in defaults with no file.
    static RunConfig defaults();
    /// Parses `path` (if non-empty), then applies "section.key=value" overrides in order.
    static RunConfig load(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});
    static RunConfig from_yaml(const YAML::Node& root);

    /// Range checks; with `check_paths`, referenced input files must exist.
    void validate(bool check_paths) const;
    json to_json() const;
    /// sha256 of the canonical JSON form.
    std::string hash() const;

    std::filesystem::path run_dir() const { return std::filesystem::path(output_root) / run_id; }
    gateway::GenParams generation_params() const;
};

/// Applies one "section.key=value" override to a YAML tree. The value is parsed as YAML.
void apply_override(YAML::Node& root, const std::string& assignment);

std::shared_ptr<gateway::Backend> make_backend(const BackendConfig& cfg, std::string_view role);
std::unique_ptr<gateway::Gateway> make_gateway(const BackendConfig& cfg, std::string_view role,
                                               const GatewayConfig& gw,
                                               const std::optional<std::filesystem::path>& cache_dir);

/// Deterministic stand-in annotator: answers an annotation prompt with a well-formed
/// rationale about the target's final turns, varying with the seed.
std::string synthetic_rationale(const std::string& prompt, std::int64_t seed);

}  // namespace dialcot::config
