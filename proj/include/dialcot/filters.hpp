// SPDX-License-Identifier: Apache-2.0
//
// Rationale-to-context (critic) and rationale-to-response (helpfulness) filters.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dialcot/corpus.hpp"
#include "dialcot/gateway.hpp"
#include "dialcot/knowledge.hpp"
#include "dialcot/rationale.hpp"

namespace dialcot::filters {

// ---------------------------------------------------------------------------
// critic data

enum class CriticLabel { aligned, counterfactual };
std::string_view to_string(CriticLabel l);
CriticLabel critic_label_from_string(std::string_view s);

struct CriticExample {
    std::string dialogue_id;
    std::string context_text;
    std::string rationale_text;
    CriticLabel label = CriticLabel::aligned;
};

json to_json(const CriticExample& e);
CriticExample critic_example_from_json(const json& j);

struct CriticDataset {
    std::vector<CriticExample> train;
    std::vector<CriticExample> validation;
    std::vector<CriticExample> test;
    /// Dialogue counts per split and the ratio used.
    json split_record;
    std::vector<std::string> warnings;

    void save(const std::filesystem::path& dir) const;
    static CriticDataset load(const std::filesystem::path& dir);
};

using LabeledRationale = std::pair<corpus::TurnTarget, rationale::Rationale>;

/// Pairs each dialogue's aligned rationale with its counterfactual (both against the
/// full context) and splits 10:1:1 by dialogue.
CriticDataset assemble_critic_data(const std::vector<LabeledRationale>& positives,
                                   const std::vector<LabeledRationale>& counterfactuals, std::uint64_t seed = 0);

/// Throws SchemaError when a dialogue id occurs in more than one split.
void check_disjoint(const CriticDataset& data);

// ---------------------------------------------------------------------------
// critic model

struct CriticTrainConfig {
    int epochs = 3;
    int batch_size = 40;
    double learning_rate = 1e-5;
    int max_tokens = kDefaultMaxInputTokens;
    std::uint64_t seed = 0;

    /// Settings that converge for the hashed linear critic at desk scale.
    static CriticTrainConfig desk();
    json to_json() const;
    static CriticTrainConfig from_json(const json& j);
};

class Critic {
public:
    virtual ~Critic() = default;
    virtual bool trained() const = 0;
    /// Probability that `rationale_text` is grounded in the whole of `context_text`.
    virtual double probability(const std::string& context_text, const std::string& rationale_text) const = 0;
};

/// Logistic regression over hashed lexical features of (context, rationale), including
/// how much of the rationale is supported by turns other than the last one.
class LinearCritic : public Critic {
public:
    static constexpr std::size_t kBuckets = 1u << 18;

    LinearCritic() = default;

    bool trained() const override { return trained_; }
    double probability(const std::string& context_text, const std::string& rationale_text) const override;

    const json& metadata() const { return metadata_; }
    double test_accuracy() const { return metadata_.value("test_accuracy", -1.0); }

    void save(const std::filesystem::path& path) const;
    static LinearCritic load(const std::filesystem::path& path);

    /// Encoded classifier input: context (left-truncated) + " </s> " + rationale.
    static std::string encode_input(const std::string& context_text, const std::string& rationale_text,
                                    int max_tokens);

private:
    friend LinearCritic train_critic(const CriticDataset&, const CriticTrainConfig&);
    using Features = std::vector<std::pair<std::uint32_t, float>>;
    Features featurize(const std::string& context_text, const std::string& rationale_text) const;
    double logit(const Features& f) const;

    std::vector<float> weights_;
    float bias_ = 0.0f;
    int max_tokens_ = kDefaultMaxInputTokens;
    bool trained_ = false;
    json metadata_ = json::object();
};

LinearCritic train_critic(const CriticDataset& data, const CriticTrainConfig& config = {});

double accuracy(const Critic& critic, const std::vector<CriticExample>& examples, double threshold = 0.5);

/// Critic defined by a function; used in tests and stub pipelines.
class FunctionCritic : public Critic {
public:
    using Fn = std::function<double(const std::string&, const std::string&)>;
    explicit FunctionCritic(Fn fn) : fn_(std::move(fn)) {}
    bool trained() const override { return static_cast<bool>(fn_); }
    double probability(const std::string& c, const std::string& r) const override { return fn_(c, r); }

private:
    Fn fn_;
};

double context_alignment_score(const Critic& critic, const std::string& context_text,
                               const std::string& rationale_text);

// ---------------------------------------------------------------------------
// helpfulness

struct FilterConfig {
    double tau = 0.95;
    double critic_threshold = 0.5;
    int max_input_tokens = kDefaultMaxInputTokens;

    void validate() const;
    json to_json() const;
};

struct HelpfulnessRecord {
    double logprob_with = 0.0;
    double logprob_without = 0.0;
    int token_count = 1;
    double ratio = 1.0;

    /// ratio = exp((with - without) / token_count).
    static HelpfulnessRecord make(double logprob_with, double logprob_without, int token_count);
};

enum class KnowledgeJoin { sep_token };

/// Conditioning prefix for scoring the response: history (optionally with knowledge
/// joined in front) followed by the responder's speaker tag.
std::string scoring_prefix(const corpus::TurnTarget& target, const std::string& knowledge, int max_tokens);

HelpfulnessRecord helpfulness_ratio(gateway::Gateway& scorer, const corpus::TurnTarget& target,
                                    const rationale::Rationale& rationale,
                                    KnowledgeJoin join = KnowledgeJoin::sep_token,
                                    int max_tokens = kDefaultMaxInputTokens);

/// Strict: ratio > tau.
bool is_helpful(double ratio, double tau);
bool is_helpful(const HelpfulnessRecord& record, const FilterConfig& config);

// ---------------------------------------------------------------------------
// per-candidate verdicts

struct CandidateRecord {
    std::string dialogue_id;
    int t = 0;
    int candidate_index = 1;
    std::string rationale_text;
    bool parse_ok = false;
    std::optional<std::string> parse_failure;  // FailureKind name
    double critic_score = 0.0;
    bool pass_context = false;
    double logprob_with = 0.0;
    double logprob_without = 0.0;
    int token_count = 0;
    double h_ratio = 0.0;
    bool scored = false;
    bool pass_response = false;
    bool retained = false;
    std::string prompt_hash;
    std::optional<std::string> error;

    bool fail_context() const { return parse_ok && !pass_context; }
    bool fail_response() const { return parse_ok && !pass_response; }
};

json to_json(const CandidateRecord& r);
CandidateRecord candidate_record_from_json(const json& j);
std::vector<CandidateRecord> load_candidate_records(const std::filesystem::path& path);
void write_candidate_records(const std::filesystem::path& path, const std::vector<CandidateRecord>& records);

struct Candidate {
    int candidate_index = 1;
    std::optional<std::string> text;  // absent when generation failed
    std::optional<std::string> error;
    std::string prompt_hash;
};

/// Runs both filters on a parsed candidate (both always evaluated). Unparsable or
/// missing candidates yield parse_ok = false and no verdicts.
CandidateRecord filter_candidate(const corpus::TurnTarget& target, const Candidate& candidate, const Critic& critic,
                                 gateway::Gateway& scorer, const FilterConfig& config);

}  // namespace dialcot::filters
