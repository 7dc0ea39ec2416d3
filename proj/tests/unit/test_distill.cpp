// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "dialcot/distill.hpp"
#include "dialcot/reasoner.hpp"
#include "test_support.hpp"

using namespace dialcot;
using namespace dialcot::distill;

namespace {

const std::string kGood =
    "Subquestion 1: What does Person A want? (xWant)\nSubanswer 1: Person A wants tea.\n"
    "Subquestion 2: How does Person B feel? (oReact)\nSubanswer 2: Person B feels glad.";

filters::CandidateRecord record(const std::string& id, int t, int idx, bool parsed, bool ctx, bool resp) {
    filters::CandidateRecord r;
    r.dialogue_id = id;
    r.t = t;
    r.candidate_index = idx;
    r.parse_ok = parsed;
    if (parsed) {
        r.rationale_text = kGood;
        r.critic_score = ctx ? 0.9 : 0.1;
        r.pass_context = ctx;
        r.scored = true;
        r.token_count = 4;
        r.h_ratio = resp ? 1.2 : 0.8;
        r.pass_response = resp;
        r.retained = ctx && resp;
    } else {
        r.rationale_text = "junk";
        r.parse_failure = "no_pairs";
    }
    return r;
}

std::vector<corpus::Dialogue> dialogues(int n) {
    std::vector<corpus::Dialogue> out;
    for (int i = 0; i < n; ++i)
        out.push_back(testing::make_dialogue("d" + std::to_string(i),
                                             {"hello there " + std::to_string(i), "hi, how are you?", "fine, thanks"}));
    return out;
}

PipelineResult passing_pipeline(const std::vector<corpus::Dialogue>& corpus, int workers) {
    gateway::StubBackend::Options g;
    g.fixed_reply = kGood;
    gateway::StubBackend::Options s;
    s.logprob_fn = [](const std::string& ctx, std::size_t, const std::string&) {
        return ctx.find("<SEP>") != std::string::npos ? -1.0 : -2.0;
    };
    gateway::Gateway gen(std::make_shared<gateway::StubBackend>(g));
    gateway::Gateway scorer(std::make_shared<gateway::StubBackend>(s));
    filters::FunctionCritic critic([](const std::string&, const std::string&) { return 0.8; });
    PipelineConfig cfg;
    cfg.n = 3;
    cfg.workers = workers;
    return run_pipeline(corpus, rationalizer::load_demos(rationalizer::default_demo_path()), gen, critic, scorer, cfg);
}

}  // namespace

TEST_SUITE("distill") {
    TEST_CASE("filter union follows inclusion-exclusion") {
        std::vector<filters::CandidateRecord> recs;
        for (int i = 0; i < 100; ++i)
            recs.push_back(record("d" + std::to_string(i / 10), i % 10 / 5 + 1, i % 5 + 1, true, i % 4 != 0, i % 5 != 0));
        const auto s = compute_stats(recs);
        CHECK(s.totals.candidates == 100);
        CHECK(s.totals.filtered_context == 25);
        CHECK(s.totals.filtered_response == 20);
        CHECK(s.totals.filtered_both == 5);
        CHECK(s.totals.filtered_union == 40);
        CHECK(s.totals.retained == 60);
        CHECK(s.filtered_pct == doctest::Approx(40.0));
        CHECK(s.totals.dialogues == 10);
        CHECK(s.totals.turns == 20);
        CHECK_NOTHROW(s.check_accounting());
    }

    TEST_CASE("both percentages use their own denominators") {
        std::vector<filters::CandidateRecord> recs{record("a", 1, 1, true, false, true), record("a", 1, 2, true, true, true),
                                                   record("a", 1, 3, false, false, false),
                                                   record("a", 1, 4, false, false, false)};
        const auto s = compute_stats(recs);
        CHECK(s.totals.parse_failures == 2);
        CHECK(s.filtered_pct == doctest::Approx(50.0));
        CHECK(s.filtered_pct_all == doctest::Approx(25.0));
    }

    TEST_CASE("merge is order independent") {
        std::mt19937_64 rng(8);
        std::vector<filters::CandidateRecord> recs;
        for (int i = 0; i < 300; ++i)
            recs.push_back(record("d" + std::to_string(rng() % 30), static_cast<int>(rng() % 3) + 1, i % 10 + 1,
                                  rng() % 6 != 0, rng() % 3 != 0, rng() % 4 != 0));
        const auto whole = compute_stats(recs).to_json();
        for (int trial = 0; trial < 10; ++trial) {
            std::shuffle(recs.begin(), recs.end(), rng);
            std::vector<StatsAccumulator> parts(1 + trial % 4);
            for (std::size_t i = 0; i < recs.size(); ++i) parts[i % parts.size()].add(recs[i]);
            StatsAccumulator merged;
            for (auto it = parts.rbegin(); it != parts.rend(); ++it) merged.merge(*it);
            const auto j = merged.finalize().to_json();
            CHECK(j["totals"] == whole["totals"]);
            CHECK(j["relation_distribution"] == whole["relation_distribution"]);
            CHECK(j["h_ratio_moments"]["mean"].get<double>() == doctest::Approx(whole["h_ratio_moments"]["mean"].get<double>()));
        }
    }

    TEST_CASE("relation distribution per step sums to one") {
        const auto s = compute_stats({record("a", 1, 1, true, true, true), record("a", 1, 2, true, true, true)});
        REQUIRE(s.relation_distribution.count(1));
        CHECK(s.relation_distribution.at(1).at("xWant") == doctest::Approx(1.0));
        CHECK(s.relation_distribution.at(2).at("oReact") == doctest::Approx(1.0));
        for (const auto& [step, row] : s.relation_distribution) {
            double sum = 0;
            for (const auto& [rel, f] : row) sum += f;
            CHECK(sum == doctest::Approx(1.0));
        }
    }

    TEST_CASE("broken accounting is detected") {
        auto s = compute_stats({record("a", 1, 1, true, true, true)});
        s.totals.retained = 0;
        CHECK_THROWS_AS(s.check_accounting(), std::logic_error);
    }

    TEST_CASE("pipeline with every candidate passing filters nothing") {
        const auto corpus = dialogues(20);
        const auto res = passing_pipeline(corpus, 1);
        CHECK(res.skipped.empty());
        CHECK(res.stats.totals.turns == 40);
        CHECK(res.stats.totals.candidates == 120);
        CHECK(res.stats.filtered_pct == 0.0);
        CHECK(res.stats.totals.retained == 120);
        REQUIRE(res.dataset.size() == 40);
        CHECK(res.dataset[0].retained_rationales.size() == 3);
        const auto par = passing_pipeline(corpus, 4);
        CHECK(par.stats.to_json() == res.stats.to_json());
        for (std::size_t i = 0; i < res.records.size(); ++i)
            CHECK(filters::to_json(par.records[i]) == filters::to_json(res.records[i]));
    }

    TEST_CASE("dataset files round trip") {
        const auto corpus = dialogues(4);
        const auto res = passing_pipeline(corpus, 2);
        const auto rebuilt = build_dataset(corpus, res.records);
        REQUIRE(rebuilt.size() == res.dataset.size());
        testing::TempDir dir;
        write_dataset(dir / "ds.jsonl", rebuilt, "candidates.jsonl");
        const auto back = load_dataset(dir / "ds.jsonl");
        REQUIRE(back.size() == rebuilt.size());
        CHECK(back[1].target.dialogue_id == rebuilt[1].target.dialogue_id);
        CHECK(back[1].target.t == rebuilt[1].target.t);
        CHECK(back[1].retained_rationales.size() == rebuilt[1].retained_rationales.size());
        CHECK(rationale::render_rationale(back[1].retained_rationales[0]) ==
              rationale::render_rationale(rebuilt[1].retained_rationales[0]));
    }

    TEST_CASE("export splits by dialogue and is deterministic") {
        const auto res = passing_pipeline(dialogues(10), 1);
        testing::TempDir a, b;
        const auto pa = export_training_corpus(res.dataset, CorpusMode::full, 0.8, 5, a.path());
        const auto pb = export_training_corpus(res.dataset, CorpusMode::full, 0.8, 5, b.path());
        CHECK(pa.train_dialogues == 8);
        CHECK(pa.heldout_dialogues == 2);
        CHECK(pa.train_examples == 8 * 2 * 3);
        CHECK(read_file(pa.train) == read_file(pb.train));
        CHECK(read_file(pa.heldout) == read_file(pb.heldout));

        const auto train = reasoner::load_training_corpus(pa.train);
        const auto held = reasoner::load_training_corpus(pa.heldout);
        std::set<std::string> train_inputs;
        for (const auto& e : train) train_inputs.insert(e.input_text);
        for (const auto& e : held) CHECK(train_inputs.count(e.input_text) == 0);
        CHECK(reasoner::has_question_line(train.front().target_text));

        testing::TempDir c;
        const auto pc = export_training_corpus(res.dataset, CorpusMode::answer_only, 0.8, 5, c.path());
        for (const auto& e : reasoner::load_training_corpus(pc.train)) {
            CHECK_FALSE(reasoner::has_question_line(e.target_text));
            CHECK(e.mode == CorpusMode::answer_only);
        }
    }

    TEST_CASE("export rejects empty data and bad splits") {
        testing::TempDir dir;
        CHECK_THROWS_AS(export_training_corpus({}, CorpusMode::full, 0.8, 0, dir.path()), PreconditionError);
        const auto res = passing_pipeline(dialogues(2), 1);
        CHECK_THROWS_AS(export_training_corpus(res.dataset, CorpusMode::full, 1.5, 0, dir.path()), PreconditionError);
        CHECK(corpus_mode_from_string("answer_only") == CorpusMode::answer_only);
        CHECK_THROWS(corpus_mode_from_string("partial"));
    }
}
