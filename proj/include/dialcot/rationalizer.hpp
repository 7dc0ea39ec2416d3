// SPDX-License-Identifier: Apache-2.0
//
// Annotation prompts, candidate generation and counterfactual rationales.

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dialcot/corpus.hpp"
#include "dialcot/gateway.hpp"
#include "dialcot/rationale.hpp"

namespace dialcot::rationalizer {

struct DemoExample {
    std::string dialogue_text;
    std::string response_text;
    std::string rationale_text;
};

/// Line-delimited {dialogue_text, response_text, rationale_text}. All fields must be non-empty.
std::vector<DemoExample> load_demos(const std::filesystem::path& path);
std::filesystem::path default_demo_path();

inline constexpr int kDefaultHops = 3;
inline constexpr int kDefaultCandidates = 10;

/// Rationale-generation defaults: temperature 0.5, 300 max tokens.
gateway::GenParams default_generation_params();

/// Instruction block, numbered demonstrations, then the target context, its
/// ground-truth response and the "Rationale:" cue. `k` must be in [1, 5].
std::string build_annotation_prompt(const corpus::TurnTarget& target, const std::vector<DemoExample>& demos,
                                    int k = kDefaultHops);

/// sha256 over the prompt text and generation parameters.
std::string prompt_hash(const std::string& prompt, const gateway::GenParams& params);

struct CandidateSlot {
    int candidate_index = 1;  // 1-based
    std::optional<std::string> text;
    std::optional<std::string> error;
    bool truncated = false;
    std::string prompt_hash;
    gateway::GenParams params;
};

/// n independent calls; slot i uses seed = base seed + (i - 1). Failures are
/// captured per slot so the remaining candidates survive.
std::vector<CandidateSlot> generate_candidates(gateway::Gateway& gw, const corpus::TurnTarget& target,
                                               const std::vector<DemoExample>& demos, int k, int n,
                                               const gateway::GenParams& params);

/// The last utterance of `ctx` as a one-element context.
std::vector<corpus::Utterance> make_counterfactual_context(const std::vector<corpus::Utterance>& ctx);

struct GeneratedRationale {
    rationale::Rationale rationale;
    std::string prompt;
    std::string prompt_hash;
};

/// Generates from the counterfactual context with the same template. Throws on parse failure.
GeneratedRationale generate_counterfactual(gateway::Gateway& gw, const corpus::TurnTarget& target,
                                           const std::vector<DemoExample>& demos, int k,
                                           const gateway::GenParams& params);

// ---------------------------------------------------------------------------
// annotation files

/// One generated candidate as written by the annotate step.
struct CandidateRow {
    std::string dialogue_id;
    int t = 0;
    CandidateSlot slot;
};

json to_json(const CandidateRow& r);
CandidateRow candidate_row_from_json(const json& j);
std::vector<CandidateRow> load_candidate_rows(const std::filesystem::path& path);
void write_candidate_rows(const std::filesystem::path& path, const std::vector<CandidateRow>& rows);

/// A counterfactual rationale with the (full) target it was generated for.
struct CounterfactualRecord {
    corpus::TurnTarget target;
    std::string rationale_text;
    std::string prompt_hash;
};

json to_json(const CounterfactualRecord& r);
CounterfactualRecord counterfactual_from_json(const json& j);
std::vector<CounterfactualRecord> load_counterfactuals(const std::filesystem::path& path);
void write_counterfactuals(const std::filesystem::path& path, const std::vector<CounterfactualRecord>& rows);

}  // namespace dialcot::rationalizer
