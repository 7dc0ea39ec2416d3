// SPDX-License-Identifier: Apache-2.0
//
// Annotation -> filtering -> dataset assembly, run statistics and corpus export.

#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dialcot/corpus.hpp"
#include "dialcot/filters.hpp"
#include "dialcot/gateway.hpp"
#include "dialcot/rationale.hpp"
#include "dialcot/rationalizer.hpp"

namespace dialcot::distill {

struct AnnotatedTurn {
    corpus::TurnTarget target;
    std::vector<rationale::Rationale> retained_rationales;
    std::vector<filters::CandidateRecord> all_candidates;
};

struct PipelineTotals {
    std::size_t dialogues = 0;
    std::size_t turns = 0;
    std::size_t candidates = 0;
    std::size_t parse_failures = 0;
    std::size_t filtered_context = 0;
    std::size_t filtered_response = 0;
    std::size_t filtered_both = 0;
    std::size_t filtered_union = 0;
    std::size_t retained = 0;

    std::size_t parsed() const { return candidates - parse_failures; }
};

inline constexpr std::string_view kOtherRelation = "other";

struct PipelineStats {
    PipelineTotals totals;
    /// Percent of parsed candidates removed by either filter.
    double filtered_pct = 0.0;
    /// Same numerator over all candidates, parse failures included.
    double filtered_pct_all = 0.0;
    /// step (1-based) -> relation name -> fraction of retained rationales; includes kOtherRelation.
    std::map<int, std::map<std::string, double>> relation_distribution;
    std::size_t h_ratio_count = 0;
    double h_ratio_mean = 0.0;
    double h_ratio_std = 0.0;

    /// Throws std::logic_error if the counting identities do not hold.
    void check_accounting() const;
    json to_json() const;
};

/// Mergeable partial statistics. Merging is exact and order-independent.
class StatsAccumulator {
public:
    void add(const filters::CandidateRecord& r);
    void merge(const StatsAccumulator& other);
    PipelineStats finalize() const;

private:
    std::map<std::string, std::size_t> dialogues_;
    std::map<std::pair<std::string, int>, std::size_t> turns_;
    PipelineTotals totals_;
    std::map<int, std::map<std::string, std::size_t>> relation_counts_;
    std::vector<double> h_ratios_;
};

PipelineStats compute_stats(const std::vector<filters::CandidateRecord>& records);

struct PipelineConfig {
    int n = rationalizer::kDefaultCandidates;
    int k = rationalizer::kDefaultHops;
    gateway::GenParams params = rationalizer::default_generation_params();
    filters::FilterConfig filter;
    int workers = 1;
};

struct PipelineResult {
    std::vector<AnnotatedTurn> dataset;
    std::vector<filters::CandidateRecord> records;
    PipelineStats stats;
    /// "dialogue_id#t: reason" for targets that failed as a whole.
    std::vector<std::string> skipped;
};

/// Generates, parses and filters candidates for every target. Per-target failures are
/// logged and skipped. Output order follows the corpus regardless of worker count.
PipelineResult run_pipeline(const std::vector<corpus::Dialogue>& corpus,
                            const std::vector<rationalizer::DemoExample>& demos, gateway::Gateway& generator,
                            const filters::Critic& critic, gateway::Gateway& scorer, const PipelineConfig& config);

/// Groups records under their targets; retained rationales come from retained records.
std::vector<AnnotatedTurn> build_dataset(const std::vector<corpus::Dialogue>& corpus,
                                         const std::vector<filters::CandidateRecord>& records);

/// DONUT-style records: {dialogue_id, source, t, context, response, rationales, candidate_file_ref}.
void write_dataset(const std::filesystem::path& path, const std::vector<AnnotatedTurn>& dataset,
                   const std::string& candidate_file_ref);
std::vector<AnnotatedTurn> load_dataset(const std::filesystem::path& path);

enum class CorpusMode { full, answer_only };
std::string_view to_string(CorpusMode m);
CorpusMode corpus_mode_from_string(std::string_view s);

struct ExportPaths {
    std::filesystem::path train;
    std::filesystem::path heldout;
    std::size_t train_dialogues = 0;
    std::size_t heldout_dialogues = 0;
    std::size_t train_examples = 0;
    std::size_t heldout_examples = 0;
};

/// Splits by dialogue id (train fraction `split`) and writes train.jsonl / heldout.jsonl
/// of {input_text, target_text, mode}.
ExportPaths export_training_corpus(const std::vector<AnnotatedTurn>& dataset, CorpusMode mode, double split,
                                   std::uint64_t seed, const std::filesystem::path& out_dir);

}  // namespace dialcot::distill
