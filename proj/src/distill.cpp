// SPDX-License-Identifier: Apache-2.0

#include "dialcot/distill.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <set>
#include <stdexcept>
#include <thread>

#include <spdlog/spdlog.h>

#include "dialcot/reasoner.hpp"

namespace dialcot::distill {

// ---------------------------------------------------------------------------
// statistics

void StatsAccumulator::add(const filters::CandidateRecord& r) {
    ++dialogues_[r.dialogue_id];
    ++turns_[{r.dialogue_id, r.t}];
    ++totals_.candidates;
    if (!r.parse_ok) {
        ++totals_.parse_failures;
        return;
    }
    const bool fc = r.fail_context(), fr = r.fail_response();
    if (fc) ++totals_.filtered_context;
    if (fr) ++totals_.filtered_response;
    if (fc && fr) ++totals_.filtered_both;
    if (fc || fr) ++totals_.filtered_union;
    if (r.retained) {
        ++totals_.retained;
        auto parsed = rationale::parse_rationale(r.rationale_text);
        if (auto* rat = std::get_if<rationale::Rationale>(&parsed)) {
            for (const auto& p : rat->pairs) ++relation_counts_[p.index][std::string(rationale::to_string(p.relation))];
        } else {
            ++relation_counts_[1][std::string(kOtherRelation)];
        }
    }
    if (r.scored) h_ratios_.push_back(r.h_ratio);
}

void StatsAccumulator::merge(const StatsAccumulator& other) {
    for (const auto& [k, v] : other.dialogues_) dialogues_[k] += v;
    for (const auto& [k, v] : other.turns_) turns_[k] += v;
    totals_.candidates += other.totals_.candidates;
    totals_.parse_failures += other.totals_.parse_failures;
    totals_.filtered_context += other.totals_.filtered_context;
    totals_.filtered_response += other.totals_.filtered_response;
    totals_.filtered_both += other.totals_.filtered_both;
    totals_.filtered_union += other.totals_.filtered_union;
    totals_.retained += other.totals_.retained;
    for (const auto& [step, row] : other.relation_counts_)
        for (const auto& [rel, c] : row) relation_counts_[step][rel] += c;
    h_ratios_.insert(h_ratios_.end(), other.h_ratios_.begin(), other.h_ratios_.end());
}

PipelineStats StatsAccumulator::finalize() const {
    PipelineStats s;
    s.totals = totals_;
    s.totals.dialogues = dialogues_.size();
    s.totals.turns = turns_.size();
    const auto parsed = s.totals.parsed();
    s.filtered_pct = parsed ? 100.0 * static_cast<double>(s.totals.filtered_union) / static_cast<double>(parsed) : 0.0;
    s.filtered_pct_all = s.totals.candidates ? 100.0 * static_cast<double>(s.totals.filtered_union) /
                                                   static_cast<double>(s.totals.candidates)
                                             : 0.0;
    for (const auto& [step, row] : relation_counts_) {
        std::size_t total = 0;
        for (const auto& [_, c] : row) total += c;
        auto& out = s.relation_distribution[step];
        for (auto rel : rationale::all_relations()) out[std::string(rationale::to_string(rel))] = 0.0;
        out[std::string(kOtherRelation)] = 0.0;
        for (const auto& [rel, c] : row) out[rel] = static_cast<double>(c) / static_cast<double>(total);
    }
    // Sorting first makes the moments independent of the order records arrived in.
    auto h = h_ratios_;
    std::sort(h.begin(), h.end());
    s.h_ratio_count = h.size();
    if (!h.empty()) {
        double sum = 0.0;
        for (double x : h) sum += x;
        s.h_ratio_mean = sum / static_cast<double>(h.size());
        double sq = 0.0;
        for (double x : h) sq += (x - s.h_ratio_mean) * (x - s.h_ratio_mean);
        s.h_ratio_std = std::sqrt(sq / static_cast<double>(h.size()));
    }
    return s;
}

PipelineStats compute_stats(const std::vector<filters::CandidateRecord>& records) {
    StatsAccumulator acc;
    for (const auto& r : records) acc.add(r);
    auto s = acc.finalize();
    s.check_accounting();
    return s;
}

void PipelineStats::check_accounting() const {
    const auto& t = totals;
    if (t.filtered_union != t.filtered_context + t.filtered_response - t.filtered_both)
        throw std::logic_error("filter accounting: |union| != |context| + |response| - |both|");
    if (t.retained + t.filtered_union + t.parse_failures != t.candidates)
        throw std::logic_error("filter accounting: retained + |union| + parse_failures != candidates");
    for (const auto& [step, row] : relation_distribution) {
        double sum = 0.0;
        for (const auto& [_, f] : row) sum += f;
        if (std::abs(sum - 1.0) > 1e-9)
            throw std::logic_error("relation distribution row " + std::to_string(step) + " does not sum to 1");
    }
}

json PipelineStats::to_json() const {
    json dist = json::object();
    for (const auto& [step, row] : relation_distribution) dist[std::to_string(step)] = row;
    return {{"totals",
             {{"dialogues", totals.dialogues},
              {"turns", totals.turns},
              {"candidates", totals.candidates},
              {"parse_failures", totals.parse_failures},
              {"filtered_context", totals.filtered_context},
              {"filtered_response", totals.filtered_response},
              {"filtered_both", totals.filtered_both},
              {"filtered_union", totals.filtered_union},
              {"retained", totals.retained}}},
            {"filtered_pct", filtered_pct},
            {"filtered_pct_all_candidates", filtered_pct_all},
            {"relation_distribution", dist},
            {"h_ratio_moments", {{"count", h_ratio_count}, {"mean", h_ratio_mean}, {"std", h_ratio_std}}}};
}

// ---------------------------------------------------------------------------
// pipeline

PipelineResult run_pipeline(const std::vector<corpus::Dialogue>& corpus,
                            const std::vector<rationalizer::DemoExample>& demos, gateway::Gateway& generator,
                            const filters::Critic& critic, gateway::Gateway& scorer, const PipelineConfig& config) {
    if (!critic.trained()) throw PreconditionError("pipeline requires a trained critic");
    if (!scorer.descriptor().supports_scoring) throw PreconditionError("pipeline requires a scoring backend");
    config.filter.validate();

    std::vector<corpus::TurnTarget> targets;
    for (const auto& d : corpus) {
        auto ts = corpus::extract_targets(d);
        targets.insert(targets.end(), ts.begin(), ts.end());
    }

    struct Slot {
        std::vector<filters::CandidateRecord> records;
        std::optional<std::string> skipped;
    };
    std::vector<Slot> slots(targets.size());
    const int workers = std::max(1, std::min<int>(config.workers, static_cast<int>(targets.size())));
    std::vector<StatsAccumulator> partials(static_cast<std::size_t>(workers));
    std::atomic<std::size_t> next{0};

    auto work = [&](std::size_t worker) {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= targets.size()) return;
            const auto& target = targets[i];
            try {
                auto generated = rationalizer::generate_candidates(generator, target, demos, config.k, config.n,
                                                                   config.params);
                for (const auto& g : generated) {
                    filters::Candidate c{g.candidate_index, g.text, g.error, g.prompt_hash};
                    auto rec = filters::filter_candidate(target, c, critic, scorer, config.filter);
                    slots[i].records.push_back(rec);
                }
                for (const auto& r : slots[i].records) partials[worker].add(r);
            } catch (const std::exception& e) {
                slots[i].records.clear();
                slots[i].skipped = target.dialogue_id + "#" + std::to_string(target.t) + ": " + e.what();
                spdlog::error("skipping {}", *slots[i].skipped);
            }
        }
    };
    if (workers == 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(work, static_cast<std::size_t>(w));
        for (auto& t : pool) t.join();
    }

    PipelineResult out;
    StatsAccumulator total;
    for (const auto& p : partials) total.merge(p);
    out.stats = total.finalize();
    out.stats.check_accounting();
    for (std::size_t i = 0; i < targets.size(); ++i) {
        if (slots[i].skipped) {
            out.skipped.push_back(*slots[i].skipped);
            continue;
        }
        AnnotatedTurn turn;
        turn.target = targets[i];
        for (const auto& r : slots[i].records) {
            out.records.push_back(r);
            if (r.retained)
                turn.retained_rationales.push_back(std::get<rationale::Rationale>(rationale::parse_rationale(r.rationale_text)));
        }
        turn.all_candidates = std::move(slots[i].records);
        out.dataset.push_back(std::move(turn));
    }
    if (!out.skipped.empty()) spdlog::warn("{} targets skipped", out.skipped.size());
    return out;
}

std::vector<AnnotatedTurn> build_dataset(const std::vector<corpus::Dialogue>& corpus,
                                         const std::vector<filters::CandidateRecord>& records) {
    std::map<std::pair<std::string, int>, std::vector<const filters::CandidateRecord*>> by_turn;
    for (const auto& r : records) by_turn[{r.dialogue_id, r.t}].push_back(&r);
    std::vector<AnnotatedTurn> out;
    for (const auto& d : corpus) {
        for (auto& target : corpus::extract_targets(d)) {
            auto it = by_turn.find({target.dialogue_id, target.t});
            if (it == by_turn.end()) continue;
            AnnotatedTurn turn;
            turn.target = std::move(target);
            auto recs = it->second;
            std::sort(recs.begin(), recs.end(),
                      [](const auto* a, const auto* b) { return a->candidate_index < b->candidate_index; });
            for (const auto* r : recs) {
                turn.all_candidates.push_back(*r);
                if (!r->retained) continue;
                auto parsed = rationale::parse_rationale(r->rationale_text);
                if (!rationale::parsed(parsed))
                    throw SchemaError("retained record " + r->dialogue_id + "#" + std::to_string(r->t) +
                                      " does not parse");
                turn.retained_rationales.push_back(std::get<rationale::Rationale>(std::move(parsed)));
            }
            by_turn.erase(it);
            out.push_back(std::move(turn));
        }
    }
    if (!by_turn.empty())
        throw SchemaError("records reference unknown target " + by_turn.begin()->first.first + "#" +
                          std::to_string(by_turn.begin()->first.second));
    return out;
}

void write_dataset(const std::filesystem::path& path, const std::vector<AnnotatedTurn>& dataset,
                   const std::string& candidate_file_ref) {
    std::vector<json> rows;
    for (const auto& turn : dataset) {
        json ctx = json::array();
        for (const auto& u : turn.target.context) ctx.push_back(corpus::to_json(u));
        json rats = json::array();
        for (const auto& r : turn.retained_rationales) rats.push_back(rationale::render_rationale(r));
        rows.push_back({{"dialogue_id", turn.target.dialogue_id},
                        {"source", turn.target.source},
                        {"t", turn.target.t},
                        {"context", ctx},
                        {"response", corpus::to_json(turn.target.response)},
                        {"rationales", rats},
                        {"candidate_file_ref", candidate_file_ref}});
    }
    write_jsonl(path, rows);
}

std::vector<AnnotatedTurn> load_dataset(const std::filesystem::path& path) {
    std::vector<AnnotatedTurn> out;
    for_each_jsonl(path, [&](std::size_t line, const json& j) {
        AnnotatedTurn turn;
        try {
            turn.target = corpus::target_from_json(j);
            for (const auto& text : j.at("rationales")) {
                auto parsed = rationale::parse_rationale(text.get<std::string>());
                if (!rationale::parsed(parsed)) throw SchemaError("rationale does not parse", line);
                turn.retained_rationales.push_back(std::get<rationale::Rationale>(std::move(parsed)));
            }
        } catch (const json::exception& e) {
            throw SchemaError(std::string("bad dataset record: ") + e.what(), line);
        }
        out.push_back(std::move(turn));
    });
    return out;
}

// ---------------------------------------------------------------------------
// export

std::string_view to_string(CorpusMode m) { return m == CorpusMode::full ? "full" : "answer_only"; }

CorpusMode corpus_mode_from_string(std::string_view s) {
    if (s == "full") return CorpusMode::full;
    if (s == "answer_only") return CorpusMode::answer_only;
    throw PreconditionError("unknown corpus mode '" + std::string(s) + "'");
}

ExportPaths export_training_corpus(const std::vector<AnnotatedTurn>& dataset, CorpusMode mode, double split,
                                   std::uint64_t seed, const std::filesystem::path& out_dir) {
    if (dataset.empty()) throw PreconditionError("dataset is empty");
    if (!(split > 0.0 && split < 1.0)) throw PreconditionError("split must be in (0, 1)");

    std::set<std::string> id_set;
    for (const auto& t : dataset) id_set.insert(t.target.dialogue_id);
    std::vector<std::string> ids(id_set.begin(), id_set.end());
    stable_shuffle(ids, seed);
    auto n_train = static_cast<std::size_t>(std::llround(split * static_cast<double>(ids.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, ids.size());
    const std::set<std::string> train_ids(ids.begin(), ids.begin() + static_cast<long>(n_train));

    ExportPaths out;
    out.train = out_dir / "train.jsonl";
    out.heldout = out_dir / "heldout.jsonl";
    out.train_dialogues = n_train;
    out.heldout_dialogues = ids.size() - n_train;

    std::vector<json> train_rows, heldout_rows;
    for (const auto& turn : dataset) {
        const bool is_train = train_ids.count(turn.target.dialogue_id) > 0;
        for (const auto& r : turn.retained_rationales) {
            auto ex = reasoner::format_training_example(turn, r, mode);
            (is_train ? train_rows : heldout_rows).push_back(reasoner::to_json(ex));
        }
    }
    out.train_examples = train_rows.size();
    out.heldout_examples = heldout_rows.size();
    std::filesystem::create_directories(out_dir);
    write_jsonl(out.train, train_rows);
    write_jsonl(out.heldout, heldout_rows);
    return out;
}

}  // namespace dialcot::distill
