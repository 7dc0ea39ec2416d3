// SPDX-License-Identifier: Apache-2.0

#include "dialcot/cli.hpp"

#include <atomic>
#include <csignal>
#include <iostream>
#include <set>
#include <thread>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "dialcot/config.hpp"
#include "dialcot/corpus.hpp"
#include "dialcot/curation.hpp"
#include "dialcot/distill.hpp"
#include "dialcot/filters.hpp"
#include "dialcot/metrics.hpp"
#include "dialcot/rationalizer.hpp"
#include "dialcot/reasoner.hpp"
#include "dialcot/respond.hpp"

namespace dialcot::cli {

namespace fs = std::filesystem;

namespace {

struct Globals {
    std::string config_path;
    std::vector<std::string> overrides;
    bool dry_run = false;
    std::string run_id;
    bool verbose = false;
};

/// Shared state of one invocation.
struct Run {
    config::RunConfig cfg;
    bool dry_run = false;

    fs::path dir() const { return cfg.run_dir(); }
    fs::path artifact(const std::string& name) const { return dir() / name; }
    std::optional<fs::path> cache_dir() const { return fs::path(cfg.output_root) / "cache"; }

    /// Resolves an input: explicit path, else the run artifact, else `fallback`.
    fs::path input(const std::string& explicit_path, const std::string& artifact_name,
                   const std::string& fallback = "") const {
        fs::path p;
        if (!explicit_path.empty()) p = explicit_path;
        else if (fs::exists(artifact(artifact_name))) p = artifact(artifact_name);
        else if (!fallback.empty()) p = fallback;
        else p = artifact(artifact_name);
        if (!fs::exists(p)) throw PreconditionError("input " + p.string() + " does not exist");
        return p;
    }

    /// Returns true when the command should stop after validation.
    bool plan(const std::string& what, const std::vector<fs::path>& outputs) const {
        if (!dry_run) return false;
        std::vector<std::string> names;
        for (const auto& o : outputs) names.push_back(o.string());
        spdlog::info("dry run: {} would write {}", what, join(names, ", "));
        return true;
    }

    void prepare() const {
        fs::create_directories(dir());
        write_file(artifact("config.json"), cfg.to_json().dump(2) + "\n");
    }
};

std::vector<corpus::Dialogue> load_corpus(const Run& run, const std::string& explicit_path) {
    fs::path p;
    corpus::Format format = corpus::Format::jsonl;
    if (!explicit_path.empty()) {
        p = explicit_path;
        if (p.extension() != ".jsonl") format = corpus::format_from_string(run.cfg.corpus_format);
    } else if (fs::exists(run.artifact("corpus.jsonl"))) {
        p = run.artifact("corpus.jsonl");
    } else if (!run.cfg.corpus_path.empty()) {
        p = run.cfg.corpus_path;
        format = corpus::format_from_string(run.cfg.corpus_format);
    } else {
        throw PreconditionError("no corpus: run ingest, pass --corpus or set corpus.path");
    }
    auto dialogues = corpus::load_dialogues(p, format);
    if (run.cfg.pipeline.max_dialogues > 0 &&
        dialogues.size() > static_cast<std::size_t>(run.cfg.pipeline.max_dialogues))
        dialogues.resize(static_cast<std::size_t>(run.cfg.pipeline.max_dialogues));
    return dialogues;
}

std::vector<rationalizer::DemoExample> load_demos(const Run& run) {
    return rationalizer::load_demos(run.cfg.demos_path.empty() ? rationalizer::default_demo_path()
                                                               : fs::path(run.cfg.demos_path));
}

/// Runs fn(i) for i in [0, n) on up to `workers` threads. The first exception is rethrown.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
    const auto w = static_cast<std::size_t>(std::max(1, workers));
    if (w == 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(w, n); ++t)
        pool.emplace_back([&] {
            for (;;) {
                const auto i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (!error) error = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

std::vector<corpus::TurnTarget> all_targets(const std::vector<corpus::Dialogue>& dialogues) {
    std::vector<corpus::TurnTarget> out;
    for (const auto& d : dialogues) {
        auto ts = corpus::extract_targets(d);
        out.insert(out.end(), ts.begin(), ts.end());
    }
    return out;
}

std::vector<corpus::TurnTarget> eval_targets(const Run& run, const std::vector<corpus::Dialogue>& dialogues) {
    if (run.cfg.respond.targets == "all") return all_targets(dialogues);
    std::vector<corpus::TurnTarget> out;
    for (const auto& d : dialogues) out.push_back(corpus::extract_targets(d).back());
    return out;
}

/// Final-turn target per dialogue, used to pair aligned and counterfactual rationales.
std::map<std::string, corpus::TurnTarget> final_targets(const std::vector<corpus::Dialogue>& dialogues) {
    std::map<std::string, corpus::TurnTarget> out;
    for (const auto& d : dialogues) out.emplace(d.id, corpus::extract_targets(d).back());
    return out;
}

void print_json(const json& j) { std::cout << j.dump(2) << "\n"; }

// ---------------------------------------------------------------------------
// commands

int cmd_ingest(const Run& run, const std::string& input, const std::string& format) {
    if (input.empty()) throw PreconditionError("ingest needs --input");
    const auto dialogues = corpus::load_dialogues(input, corpus::format_from_string(format));
    const auto out = run.artifact("corpus.jsonl");
    spdlog::info("{} dialogues, {} targets", dialogues.size(), all_targets(dialogues).size());
    if (run.plan("ingest", {out})) return 0;
    run.prepare();
    corpus::write_dialogues(out, dialogues);
    return 0;
}

int cmd_annotate(const Run& run, const std::string& corpus_path, bool with_counterfactuals) {
    const auto dialogues = load_corpus(run, corpus_path);
    const auto demos = load_demos(run);
    const auto targets = all_targets(dialogues);
    const auto out = run.artifact("candidates.jsonl");
    const auto cf_out = run.artifact("counterfactuals.jsonl");
    if (run.plan("annotate", with_counterfactuals ? std::vector<fs::path>{out, cf_out} : std::vector<fs::path>{out}))
        return 0;
    run.prepare();
    auto gw = config::make_gateway(run.cfg.generator, "generator", run.cfg.gateway, run.cache_dir());
    const auto params = run.cfg.generation_params();

    std::vector<std::vector<rationalizer::CandidateRow>> per_target(targets.size());
    parallel_for(targets.size(), run.cfg.pipeline.workers, [&](std::size_t i) {
        for (auto& slot : rationalizer::generate_candidates(*gw, targets[i], demos, run.cfg.pipeline.k,
                                                            run.cfg.pipeline.n, params))
            per_target[i].push_back({targets[i].dialogue_id, targets[i].t, std::move(slot)});
    });
    std::vector<rationalizer::CandidateRow> rows;
    std::size_t failed = 0;
    for (auto& v : per_target)
        for (auto& r : v) {
            if (!r.slot.text) ++failed;
            rows.push_back(std::move(r));
        }
    rationalizer::write_candidate_rows(out, rows);
    spdlog::info("{} candidates for {} targets ({} generation failures)", rows.size(), targets.size(), failed);

    if (with_counterfactuals) {
        const auto finals = final_targets(dialogues);
        std::vector<std::pair<std::string, corpus::TurnTarget>> todo(finals.begin(), finals.end());
        std::vector<std::optional<rationalizer::CounterfactualRecord>> cfs(todo.size());
        parallel_for(todo.size(), run.cfg.pipeline.workers, [&](std::size_t i) {
            try {
                auto g = rationalizer::generate_counterfactual(*gw, todo[i].second, demos, run.cfg.pipeline.k, params);
                cfs[i] = rationalizer::CounterfactualRecord{todo[i].second, rationale::render_rationale(g.rationale),
                                                            g.prompt_hash};
            } catch (const std::exception& e) {
                spdlog::warn("no counterfactual for {}: {}", todo[i].first, e.what());
            }
        });
        std::vector<rationalizer::CounterfactualRecord> records;
        for (auto& c : cfs)
            if (c) records.push_back(std::move(*c));
        rationalizer::write_counterfactuals(cf_out, records);
        spdlog::info("{} counterfactual rationales", records.size());
    }
    return 0;
}

int cmd_critic_data(const Run& run, const std::string& pairs_path, const std::string& corpus_path,
                    const std::string& candidates_path, const std::string& cf_path) {
    const auto out = run.artifact("critic_data");
    filters::CriticDataset data;
    if (!pairs_path.empty()) {
        if (!fs::exists(pairs_path)) throw PreconditionError("pairs file " + pairs_path + " does not exist");
        json doc;
        try {
            doc = json::parse(read_file(pairs_path));
        } catch (const json::parse_error& e) {
            throw SchemaError(std::string("pairs file is not valid JSON: ") + e.what());
        }
        const auto pairs = curation::CriticPairs::from_json(doc);
        data = filters::assemble_critic_data(pairs.positives, pairs.counterfactuals, run.cfg.seed);
    } else {
        // Without human curation: the first parsable candidate for each dialogue's final
        // turn stands in for the chosen rationale.
        const auto dialogues = load_corpus(run, corpus_path);
        const auto rows = rationalizer::load_candidate_rows(run.input(candidates_path, "candidates.jsonl"));
        const auto cfs = rationalizer::load_counterfactuals(run.input(cf_path, "counterfactuals.jsonl"));
        const auto finals = final_targets(dialogues);
        std::map<std::string, filters::LabeledRationale> pos;
        for (const auto& r : rows) {
            auto it = finals.find(r.dialogue_id);
            if (it == finals.end() || it->second.t != r.t || !r.slot.text || pos.count(r.dialogue_id)) continue;
            auto parsed = rationale::parse_rationale(*r.slot.text);
            if (rationale::parsed(parsed))
                pos.emplace(r.dialogue_id,
                            filters::LabeledRationale{it->second, std::get<rationale::Rationale>(std::move(parsed))});
        }
        std::vector<filters::LabeledRationale> positives, negatives;
        for (const auto& c : cfs) {
            auto it = pos.find(c.target.dialogue_id);
            if (it == pos.end()) continue;
            auto parsed = rationale::parse_rationale(c.rationale_text);
            if (!rationale::parsed(parsed)) throw SchemaError("counterfactual for " + c.target.dialogue_id + " does not parse");
            auto r = std::get<rationale::Rationale>(std::move(parsed));
            r.is_counterfactual = true;
            positives.push_back(it->second);
            negatives.emplace_back(c.target, std::move(r));
        }
        data = filters::assemble_critic_data(positives, negatives, run.cfg.seed);
    }
    print_json(data.split_record);
    if (run.plan("critic-data", {out})) return 0;
    run.prepare();
    data.save(out);
    return 0;
}

int cmd_train_critic(const Run& run, const std::string& data_dir) {
    const auto dir = run.input(data_dir, "critic_data");
    const auto data = filters::CriticDataset::load(dir);
    const auto out = run.artifact("critic.json");
    if (run.plan("train-critic", {out})) return 0;
    run.prepare();
    const auto critic = filters::train_critic(data, run.cfg.critic);
    critic.save(out);
    print_json({{"train_accuracy", critic.metadata().value("train_accuracy", json(nullptr))},
                {"validation_accuracy", critic.metadata().value("validation_accuracy", json(nullptr))},
                {"test_accuracy", critic.metadata().value("test_accuracy", json(nullptr))}});
    return 0;
}

int cmd_filter(const Run& run, const std::string& corpus_path, const std::string& candidates_path,
               const std::string& critic_path) {
    const auto dialogues = load_corpus(run, corpus_path);
    const auto rows = rationalizer::load_candidate_rows(run.input(candidates_path, "candidates.jsonl"));
    const auto critic_file = run.input(critic_path, "critic.json");
    const auto out = run.artifact("records.jsonl");
    const auto stats_out = run.artifact("stats.json");
    if (run.plan("filter", {out, stats_out})) return 0;
    const auto critic = filters::LinearCritic::load(critic_file);
    run.prepare();
    auto scorer = config::make_gateway(run.cfg.scorer, "scorer", run.cfg.gateway, std::nullopt);

    std::map<std::pair<std::string, int>, corpus::TurnTarget> targets;
    for (auto& t : all_targets(dialogues)) targets.emplace(std::make_pair(t.dialogue_id, t.t), std::move(t));
    std::vector<filters::CandidateRecord> records(rows.size());
    parallel_for(rows.size(), run.cfg.pipeline.workers, [&](std::size_t i) {
        const auto& r = rows[i];
        auto it = targets.find({r.dialogue_id, r.t});
        if (it == targets.end())
            throw SchemaError("candidate references unknown target " + r.dialogue_id + "#" + std::to_string(r.t));
        filters::Candidate c{r.slot.candidate_index, r.slot.text, r.slot.error, r.slot.prompt_hash};
        records[i] = filters::filter_candidate(it->second, c, critic, *scorer, run.cfg.filter);
    });
    filters::write_candidate_records(out, records);
    const auto stats = distill::compute_stats(records);
    write_file(stats_out, stats.to_json().dump(2) + "\n");
    print_json(stats.to_json()["totals"]);
    return 0;
}

int cmd_build_dataset(const Run& run, const std::string& corpus_path, const std::string& records_path) {
    const auto dialogues = load_corpus(run, corpus_path);
    const auto rec_file = run.input(records_path, "records.jsonl");
    const auto records = filters::load_candidate_records(rec_file);
    const auto dataset = distill::build_dataset(dialogues, records);
    const auto out = run.artifact("dataset.jsonl");
    std::size_t retained = 0;
    for (const auto& t : dataset) retained += t.retained_rationales.size();
    spdlog::info("{} turns, {} retained rationales", dataset.size(), retained);
    if (run.plan("build-dataset", {out})) return 0;
    run.prepare();
    distill::write_dataset(out, dataset, rec_file.filename().string());
    return 0;
}

int cmd_stats(const Run& run, const std::string& records_path) {
    const auto records = filters::load_candidate_records(run.input(records_path, "records.jsonl"));
    const auto stats = distill::compute_stats(records);
    const auto out = run.artifact("stats.json");
    print_json(stats.to_json());
    if (run.plan("stats", {out})) return 0;
    run.prepare();
    write_file(out, stats.to_json().dump(2) + "\n");
    return 0;
}

int cmd_export_corpus(const Run& run, const std::string& dataset_path, const std::string& mode_name) {
    const auto mode = distill::corpus_mode_from_string(mode_name.empty() ? run.cfg.reasoner.mode : mode_name);
    const auto dataset = distill::load_dataset(run.input(dataset_path, "dataset.jsonl"));
    const auto out = run.artifact("corpus_" + std::string(distill::to_string(mode)));
    if (run.plan("export-corpus", {out / "train.jsonl", out / "heldout.jsonl"})) return 0;
    run.prepare();
    const auto paths = distill::export_training_corpus(dataset, mode, run.cfg.reasoner.split, run.cfg.seed, out);
    print_json({{"train_examples", paths.train_examples},
                {"heldout_examples", paths.heldout_examples},
                {"train_dialogues", paths.train_dialogues},
                {"heldout_dialogues", paths.heldout_dialogues}});
    return 0;
}

int cmd_train_reasoner(const Run& run, const std::string& train_path, const std::string& mode_name) {
    const std::string mode = mode_name.empty() ? run.cfg.reasoner.mode : mode_name;
    const auto file = run.input(train_path, "corpus_" + mode + "/train.jsonl");
    const auto corpus = reasoner::load_training_corpus(file);
    const auto out = run.artifact("reasoner_" + mode);
    if (run.plan("train-reasoner", {out / "model.bin", out / "metadata.json"})) return 0;
    run.prepare();
    const auto handle = reasoner::train_reasoner(corpus, run.cfg.reasoner.hyperparams);
    handle.save(out);
    print_json(handle.metadata());
    return 0;
}

reasoner::ReasonerHandle load_reasoner(const Run& run, const std::string& path) {
    return reasoner::ReasonerHandle::load(run.input(path, "reasoner_" + run.cfg.reasoner.mode));
}

int cmd_infer(const Run& run, const std::string& corpus_path, const std::string& reasoner_path) {
    const auto dialogues = load_corpus(run, corpus_path);
    const auto handle = load_reasoner(run, reasoner_path);
    const auto targets = eval_targets(run, dialogues);
    const auto out = run.artifact("inferences.jsonl");
    if (run.plan("infer", {out})) return 0;
    run.prepare();
    reasoner::DecodeParams dp;
    dp.max_tokens = run.cfg.reasoner.max_tokens;
    dp.seed = run.cfg.seed;
    std::vector<json> rows(targets.size());
    parallel_for(targets.size(), run.cfg.pipeline.workers, [&](std::size_t i) {
        const auto inf = reasoner::infer_rationale(handle, targets[i].context, dp);
        json row{{"dialogue_id", targets[i].dialogue_id},
                 {"t", targets[i].t},
                 {"text", inf.text},
                 {"truncated", inf.truncated},
                 {"parsed", rationale::parsed(inf.result)}};
        if (auto* f = std::get_if<rationale::ParseFailure>(&inf.result))
            row["parse_failure"] = rationale::to_string(f->kind);
        rows[i] = std::move(row);
    });
    write_jsonl(out, rows);
    return 0;
}

int cmd_respond(const Run& run, const std::string& corpus_path, const std::string& reasoner_path,
                const std::string& mode_name) {
    const auto dialogues = load_corpus(run, corpus_path);
    const auto mode = respond::knowledge_mode_from_string(mode_name.empty() ? run.cfg.respond.mode : mode_name);
    if (mode == respond::KnowledgeMode::external)
        throw PreconditionError("external knowledge is not available from the command line");
    std::optional<reasoner::ReasonerHandle> handle;
    if (mode == respond::KnowledgeMode::doctor) handle = load_reasoner(run, reasoner_path);
    const auto targets = eval_targets(run, dialogues);
    const auto out = run.artifact("responses_" + std::string(respond::to_string(mode)) + ".jsonl");
    if (run.plan("respond", {out})) return 0;
    run.prepare();
    auto agent = config::make_gateway(run.cfg.agent, "agent", run.cfg.gateway, run.cache_dir());
    respond::ResponseOptions opts;
    opts.style = respond::agent_style_from_string(run.cfg.respond.style);
    opts.params.temperature = run.cfg.respond.temperature;
    opts.params.max_tokens = run.cfg.respond.max_tokens;
    opts.params.seed = static_cast<std::int64_t>(run.cfg.seed);
    opts.decode.max_tokens = run.cfg.reasoner.max_tokens;
    opts.decode.seed = run.cfg.seed;
    opts.max_input_tokens = run.cfg.filter.max_input_tokens;
    if (mode == respond::KnowledgeMode::self_cot) opts.demos = load_demos(run);
    respond::KnowledgeSpec spec{mode, std::nullopt};

    std::vector<json> rows(targets.size());
    std::atomic<int> fallbacks{0};
    parallel_for(targets.size(), run.cfg.pipeline.workers, [&](std::size_t i) {
        const auto r = respond::generate_response(*agent, targets[i], spec, handle ? &*handle : nullptr, opts);
        if (r.fell_back) ++fallbacks;
        rows[i] = {{"dialogue_id", targets[i].dialogue_id},
                   {"t", targets[i].t},
                   {"response", r.text},
                   {"knowledge", r.knowledge},
                   {"fell_back", r.fell_back},
                   {"mode", respond::to_string(mode)}};
    });
    write_jsonl(out, rows);
    if (fallbacks) spdlog::warn("{} targets fell back to no knowledge", fallbacks.load());
    return 0;
}

int cmd_evaluate(const Run& run, const std::string& corpus_path, const std::string& responses_path,
                 const std::string& mode_name) {
    const auto dialogues = load_corpus(run, corpus_path);
    const std::string mode = mode_name.empty() ? run.cfg.respond.mode : mode_name;
    const auto rows = read_jsonl(run.input(responses_path, "responses_" + mode + ".jsonl"));
    const auto targets = eval_targets(run, dialogues);
    if (rows.size() != targets.size())
        throw PreconditionError("length mismatch: " + std::to_string(targets.size()) + " targets but " +
                                std::to_string(rows.size()) + " responses");
    std::vector<std::string> responses;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        if (r.value("dialogue_id", std::string{}) != targets[i].dialogue_id || r.value("t", 0) != targets[i].t)
            throw PreconditionError("response " + std::to_string(i + 1) + " does not match target " +
                                    targets[i].dialogue_id + "#" + std::to_string(targets[i].t));
        responses.push_back(r.at("response").get<std::string>());
    }
    const auto report = metrics::evaluate(targets, responses, mode, run.cfg.hash());
    const auto out = run.artifact("eval_" + mode + ".json");
    const auto table = run.artifact("eval_" + mode + ".md");
    std::cout << report.table();
    if (run.plan("evaluate", {out, table})) return 0;
    run.prepare();
    write_file(out, report.to_json().dump(2) + "\n");
    write_file(table, report.table());
    return 0;
}

std::atomic<curation::CurationService*> g_service{nullptr};

extern "C" void on_signal(int) {
    if (auto* s = g_service.load()) s->stop();
}

int cmd_serve(const Run& run, const std::string& corpus_path, const std::string& candidates_path,
              const std::string& cf_path, const std::string& items_path) {
    std::vector<curation::CurationItem> items;
    if (!items_path.empty()) {
        items = curation::load_items(items_path);
    } else {
        const auto dialogues = load_corpus(run, corpus_path);
        const auto rows = rationalizer::load_candidate_rows(run.input(candidates_path, "candidates.jsonl"));
        std::vector<rationalizer::CounterfactualRecord> cfs;
        if (!cf_path.empty() || fs::exists(run.artifact("counterfactuals.jsonl")))
            cfs = rationalizer::load_counterfactuals(run.input(cf_path, "counterfactuals.jsonl"));
        items = curation::build_curation_items(dialogues, rows, cfs);
    }
    const auto log = run.artifact("labels.log");
    spdlog::info("{} curation items; label log {}", items.size(), log.string());
    if (run.plan("serve", {log})) return 0;
    run.prepare();
    auto store = std::make_shared<curation::LabelStore>(std::move(items), log);
    curation::ServiceOptions opts;
    opts.host = run.cfg.curation.host;
    opts.port = run.cfg.curation.port;
    if (!run.cfg.curation.token.empty()) opts.token = run.cfg.curation.token;
    if (!run.cfg.curation.static_dir.empty()) opts.static_dir = run.cfg.curation.static_dir;
    curation::CurationService service(store, opts);
    g_service.store(&service);
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    service.run();
    g_service.store(nullptr);
    return 0;
}

}  // namespace

int run(int argc, char** argv) {
    auto logger = spdlog::stderr_color_mt("dialcot");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("[%l] %v");

    CLI::App app{"Dialogue chain-of-thought distillation toolkit"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("-c,--config", g.config_path, "YAML run configuration");
    app.add_option("--set", g.overrides, "Override a config value: section.key=value")->take_all();
    app.add_flag("--dry-run", g.dry_run, "Validate inputs and configuration, write nothing");
    app.add_option("--run-id", g.run_id, "Override run_id");
    app.add_flag("-v,--verbose", g.verbose, "Debug logging");

    struct Paths {
        std::string input, format, corpus, candidates, counterfactuals, critic, records, dataset, pairs, data, train,
            reasoner, responses, mode, items;
        bool counterfactual_flag = false;
    } p;

    auto* ingest = app.add_subcommand("ingest", "Load and validate a raw corpus");
    ingest->add_option("--input", p.input, "Corpus file")->required();
    ingest->add_option("--format", p.format, "jsonl or plain");

    auto* annotate = app.add_subcommand("annotate", "Generate rationale candidates for every turn");
    annotate->add_option("--corpus", p.corpus);
    annotate->add_flag("--counterfactuals", p.counterfactual_flag,
                       "Also generate one counterfactual rationale per dialogue");

    auto* critic_data = app.add_subcommand("critic-data", "Assemble critic training pairs");
    critic_data->add_option("--pairs", p.pairs, "Curated pairs exported from the curation service");
    critic_data->add_option("--corpus", p.corpus);
    critic_data->add_option("--candidates", p.candidates);
    critic_data->add_option("--counterfactuals", p.counterfactuals);

    auto* train_critic = app.add_subcommand("train-critic", "Train the rationale-to-context critic");
    train_critic->add_option("--data", p.data, "Critic dataset directory");

    auto* filter = app.add_subcommand("filter", "Apply both alignment filters to the candidates");
    filter->add_option("--corpus", p.corpus);
    filter->add_option("--candidates", p.candidates);
    filter->add_option("--critic", p.critic);

    auto* build = app.add_subcommand("build-dataset", "Group retained rationales by turn");
    build->add_option("--corpus", p.corpus);
    build->add_option("--records", p.records);

    auto* stats = app.add_subcommand("stats", "Summarize a filter-records file");
    stats->add_option("--records", p.records);

    auto* export_corpus = app.add_subcommand("export-corpus", "Write reasoner training/held-out files");
    export_corpus->add_option("--dataset", p.dataset);
    export_corpus->add_option("--mode", p.mode, "full or answer_only");

    auto* train_reasoner = app.add_subcommand("train-reasoner", "Train the rationale generator");
    train_reasoner->add_option("--train", p.train);
    train_reasoner->add_option("--mode", p.mode, "full or answer_only");

    auto* infer = app.add_subcommand("infer", "Generate rationales with a trained reasoner");
    infer->add_option("--corpus", p.corpus);
    infer->add_option("--reasoner", p.reasoner);

    auto* respond_cmd = app.add_subcommand("respond", "Generate responses");
    respond_cmd->add_option("--corpus", p.corpus);
    respond_cmd->add_option("--reasoner", p.reasoner);
    respond_cmd->add_option("--mode", p.mode, "none, doctor or self_cot");

    auto* evaluate = app.add_subcommand("evaluate", "Score responses with BLEU and ROUGE-L");
    evaluate->add_option("--corpus", p.corpus);
    evaluate->add_option("--responses", p.responses);
    evaluate->add_option("--mode", p.mode);

    auto* serve = app.add_subcommand("serve", "Run the curation service");
    serve->add_option("--corpus", p.corpus);
    serve->add_option("--candidates", p.candidates);
    serve->add_option("--counterfactuals", p.counterfactuals);
    serve->add_option("--items", p.items, "Prebuilt curation items file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    spdlog::set_level(g.verbose ? spdlog::level::debug : spdlog::level::info);

    Run run;
    run.dry_run = g.dry_run;
    try {
        run.cfg = config::RunConfig::load(g.config_path, g.overrides);
        if (!g.run_id.empty()) run.cfg.run_id = g.run_id;
        run.cfg.validate(true);
    } catch (const config::ConfigError& e) {
        spdlog::error("invalid configuration: {}", e.what());
        return 2;
    }

    try {
        if (*ingest) return cmd_ingest(run, p.input, p.format.empty() ? run.cfg.corpus_format : p.format);
        if (*annotate) return cmd_annotate(run, p.corpus, p.counterfactual_flag);
        if (*critic_data) return cmd_critic_data(run, p.pairs, p.corpus, p.candidates, p.counterfactuals);
        if (*train_critic) return cmd_train_critic(run, p.data);
        if (*filter) return cmd_filter(run, p.corpus, p.candidates, p.critic);
        if (*build) return cmd_build_dataset(run, p.corpus, p.records);
        if (*stats) return cmd_stats(run, p.records);
        if (*export_corpus) return cmd_export_corpus(run, p.dataset, p.mode);
        if (*train_reasoner) return cmd_train_reasoner(run, p.train, p.mode);
        if (*infer) return cmd_infer(run, p.corpus, p.reasoner);
        if (*respond_cmd) return cmd_respond(run, p.corpus, p.reasoner, p.mode);
        if (*evaluate) return cmd_evaluate(run, p.corpus, p.responses, p.mode);
        if (*serve) return cmd_serve(run, p.corpus, p.candidates, p.counterfactuals, p.items);
    } catch (const config::ConfigError& e) {
        spdlog::error("invalid configuration: {}", e.what());
        return 2;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
    return 1;
}

}  // namespace dialcot::cli
