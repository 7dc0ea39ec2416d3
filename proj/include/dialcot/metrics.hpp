// SPDX-License-Identifier: Apache-2.0
//
// BLEU-1/2/4 and ROUGE-L for generated responses.

#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "dialcot/common.hpp"
#include "dialcot/corpus.hpp"

namespace dialcot::metrics {

/// Lowercases, splits punctuation into separate tokens, then splits on whitespace.
std::vector<std::string> tokenize(std::string_view text);

std::map<std::vector<std::string>, int> ngram_counts(const std::vector<std::string>& tokens, int n);

/// Sentence BLEU-n (uniform weights, brevity penalty). Zero higher-order precisions
/// are smoothed with 1e-9. An empty candidate scores 0.
double bleu_n(std::string_view candidate, std::string_view reference, int n);
/// Against several references: clipping by the max reference count, closest reference length.
double bleu_n(std::string_view candidate, const std::vector<std::string>& references, int n);

/// Micro-aggregated BLEU-n over a corpus of (candidate, reference) pairs, unsmoothed.
double corpus_bleu(const std::vector<std::string>& candidates, const std::vector<std::string>& references, int n);

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b);

/// LCS F-measure with beta = 1.
double rouge_l(std::string_view candidate, std::string_view reference);

struct Scores {
    double bleu1 = 0.0;
    double bleu2 = 0.0;
    double bleu4 = 0.0;
    double rouge_l = 0.0;
    std::size_t samples = 0;
};

struct EvalReport {
    std::map<std::string, Scores> datasets;
    std::string mode;
    std::string config_hash;

    json to_json() const;
    /// Rows are datasets; columns B-1, B-2, B-4, R-L scaled by 100.
    std::string table() const;
};

/// Groups pairs by target source (dataset name). Throws PreconditionError on length mismatch.
EvalReport evaluate(const std::vector<corpus::TurnTarget>& targets, const std::vector<std::string>& responses,
                    const std::string& mode, const std::string& config_hash = "");

}  // namespace dialcot::metrics
