// SPDX-License-Identifier: Apache-2.0
//
// Training examples and inference for the distilled rationale generator.

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dialcot/char_lm.hpp"
#include "dialcot/corpus.hpp"
#include "dialcot/distill.hpp"
#include "dialcot/rationale.hpp"

namespace dialcot::reasoner {

using Mode = distill::CorpusMode;

/// Placed between the rendered context and the rationale in every training sequence.
inline constexpr std::string_view kRationaleSeparator = "\nRationale:\n";

struct ReasonerExample {
    std::string input_text;
    std::string target_text;
    Mode mode = Mode::full;

    bool operator==(const ReasonerExample&) const = default;
};

json to_json(const ReasonerExample& e);
ReasonerExample example_from_json(const json& j);
std::vector<ReasonerExample> load_training_corpus(const std::filesystem::path& path);

/// Throws PreconditionError unless `rationale` is one of the turn's retained rationales.
ReasonerExample format_training_example(const distill::AnnotatedTurn& turn, const rationale::Rationale& rationale,
                                        Mode mode);

/// True when some line starts with a question prefix ("Subquestion N:" or "QN:").
bool has_question_line(std::string_view text);

struct ReasonerHyperparams {
    std::string base_model = "char-ngram-lm";
    double learning_rate = 5e-4;
    int epochs = 5;
    int batch_size = 8;
    std::uint64_t seed = 0;
    lm::CharLmConfig model;

    json to_json() const;
    static ReasonerHyperparams from_json(const json& j);
};

class ReasonerHandle {
public:
    ReasonerHandle() = default;
    ReasonerHandle(lm::CharLm model, json metadata);

    bool trained() const { return model_.has_value(); }
    const lm::CharLm& model() const;
    const json& metadata() const { return metadata_; }

    /// Writes model.bin and metadata.json under `dir`.
    void save(const std::filesystem::path& dir) const;
    static ReasonerHandle load(const std::filesystem::path& dir);

private:
    std::optional<lm::CharLm> model_;
    json metadata_ = json::object();
};

/// Sequence fed to the model: input + separator (the target follows).
std::string training_prefix(const std::string& input_text);

ReasonerHandle train_reasoner(const std::vector<ReasonerExample>& corpus, const ReasonerHyperparams& hp = {});

struct DecodeParams {
    int max_tokens = 600;
    /// 0 selects greedy decoding.
    double temperature = 0.0;
    std::uint64_t seed = 0;
};

struct Inference {
    rationale::ParseResult result;
    std::string text;
    bool truncated = false;
};

/// Decodes from the rendered context, then parses the output.
Inference infer_rationale(const ReasonerHandle& handle, const std::vector<corpus::Utterance>& context,
                          const DecodeParams& params = {});

}  // namespace dialcot::reasoner
