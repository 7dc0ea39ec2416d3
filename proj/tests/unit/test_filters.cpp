// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <random>

#include "dialcot/filters.hpp"
#include "dialcot/knowledge.hpp"
#include "test_support.hpp"

using namespace dialcot;
using namespace dialcot::filters;

namespace {

std::vector<LabeledRationale> positives(int n, const std::string& prefix = "dlg") {
    std::vector<LabeledRationale> out;
    for (int i = 0; i < n; ++i)
        out.emplace_back(testing::make_target(prefix + std::to_string(i), {"hello " + std::to_string(i), "reply"}),
                         testing::make_rationale({{"Why hello?", "Greeting " + std::to_string(i)}}));
    return out;
}

std::vector<LabeledRationale> counterfactuals(int n, const std::string& prefix = "dlg") {
    auto out = positives(n, prefix);
    for (auto& [t, r] : out) {
        r = testing::make_rationale({{"What is said last?", "Only a greeting"}});
        r.is_counterfactual = true;
    }
    return out;
}

gateway::Gateway scorer_with(double with, double without) {
    gateway::StubBackend::Options o;
    o.logprob_fn = [=](const std::string& ctx, std::size_t, const std::string&) {
        return ctx.find(kKnowledgeSeparator) != std::string::npos ? with : without;
    };
    return gateway::Gateway(std::make_shared<gateway::StubBackend>(o));
}

const std::string kGood = "Subquestion 1: What does Person A want? (xWant)\nSubanswer 1: Person A wants tea.";

}  // namespace

TEST_SUITE("filters") {
    TEST_CASE("twelve dialogues split 20/2/2 examples") {
        const auto d = assemble_critic_data(positives(12), counterfactuals(12), 1);
        CHECK(d.train.size() == 20);
        CHECK(d.validation.size() == 2);
        CHECK(d.test.size() == 2);
        CHECK(d.split_record["dialogues"]["train"] == 10);
        CHECK(d.warnings.empty());
        CHECK_NOTHROW(check_disjoint(d));
        for (const auto* split : {&d.train, &d.validation, &d.test}) {
            int aligned = 0;
            for (const auto& e : *split) aligned += e.label == CriticLabel::aligned;
            CHECK(aligned * 2 == static_cast<int>(split->size()));
        }
    }

    TEST_CASE("one dialogue goes entirely to train with warnings") {
        const auto d = assemble_critic_data(positives(1), counterfactuals(1));
        CHECK(d.train.size() == 2);
        CHECK(d.validation.empty());
        CHECK(d.test.empty());
        CHECK(d.warnings.size() == 2);
    }

    TEST_CASE("precondition violations") {
        auto dup = positives(2);
        dup.push_back(dup.front());
        CHECK_THROWS_AS(assemble_critic_data(dup, counterfactuals(2)), PreconditionError);
        auto flagged = positives(2);
        flagged[0].second.is_counterfactual = true;
        CHECK_THROWS_AS(assemble_critic_data(flagged, counterfactuals(2)), PreconditionError);
        auto unflagged = counterfactuals(2);
        unflagged[1].second.is_counterfactual = false;
        CHECK_THROWS_AS(assemble_critic_data(positives(2), unflagged), PreconditionError);
        CHECK_THROWS_AS(assemble_critic_data(positives(3), counterfactuals(2)), PreconditionError);
        CHECK_THROWS_AS(assemble_critic_data({}, {}), PreconditionError);
    }

    TEST_CASE("overlapping splits are detected") {
        auto d = assemble_critic_data(positives(12), counterfactuals(12));
        d.test.push_back(d.train.front());
        CHECK_THROWS_AS(check_disjoint(d), SchemaError);
    }

    TEST_CASE("critic dataset files round trip") {
        testing::TempDir dir;
        const auto d = assemble_critic_data(positives(12), counterfactuals(12), 4);
        d.save(dir / "critic");
        const auto back = CriticDataset::load(dir / "critic");
        REQUIRE(back.train.size() == d.train.size());
        CHECK(back.train[3].rationale_text == d.train[3].rationale_text);
        CHECK(back.test[1].label == d.test[1].label);
        CHECK(back.split_record == d.split_record);
    }

    TEST_CASE("critic training requires data and produces probabilities") {
        CriticDataset empty;
        CHECK_THROWS_AS(train_critic(empty), PreconditionError);
        LinearCritic untrained;
        CHECK_THROWS_AS(context_alignment_score(untrained, "A: x", "y"), PreconditionError);

        const auto d = assemble_critic_data(positives(24), counterfactuals(24));
        const auto critic = train_critic(d, CriticTrainConfig::desk());
        CHECK(critic.trained());
        CHECK(critic.metadata().contains("test_accuracy"));
        for (const auto& e : d.test) {
            const double p = context_alignment_score(critic, e.context_text, e.rationale_text);
            CHECK(p >= 0.0);
            CHECK(p <= 1.0);
        }
        testing::TempDir dir;
        critic.save(dir / "critic.json");
        const auto back = LinearCritic::load(dir / "critic.json");
        CHECK(back.probability("A: hello 3", kGood) == doctest::Approx(critic.probability("A: hello 3", kGood)));
    }

    TEST_CASE("critic separates grounded from last-turn-only rationales") {
        std::mt19937_64 rng(12);
        const std::vector<std::string> nouns{"piano", "garden", "bicycle", "passport", "kitchen", "umbrella", "ticket",
                                             "laptop", "wallet", "sister", "concert", "doctor", "holiday", "museum"};
        auto pick = [&] { return nouns[rng() % nouns.size()]; };
        std::vector<LabeledRationale> pos, neg;
        for (int i = 0; i < 120; ++i) {
            const std::string early = pick(), last = pick();
            auto target = testing::make_target("g" + std::to_string(i), {"I left my " + early + " at home.",
                                                                         "Oh no, what now?",
                                                                         "Maybe the " + last + " helps.", "Sure."});
            pos.emplace_back(target, testing::make_rationale({{"What did Person A leave?", "The " + early + "."}}));
            auto cf = testing::make_rationale({{"What might help?", "The " + last + "."}});
            cf.is_counterfactual = true;
            neg.emplace_back(target, cf);
        }
        const auto data = assemble_critic_data(pos, neg, 2);
        const auto critic = train_critic(data, CriticTrainConfig::desk());
        CHECK(accuracy(critic, data.test) >= 0.9);
    }

    TEST_CASE("critic input keeps the last utterance under truncation") {
        std::string ctx;
        for (int i = 0; i < 100; ++i) ctx += "A: filler words here\n";
        ctx += "B: the last line";
        const auto enc = LinearCritic::encode_input(ctx, "r1 r2", 12);
        CHECK(enc.find("B: the last line </s> r1 r2") != std::string::npos);
        CHECK(count_whitespace_tokens(enc) <= 14);
    }

    TEST_CASE("helpfulness ratio arithmetic") {
        const auto target = testing::make_target("h", {"hi", "one two three four five six seven eight nine ten"});
        const auto r = testing::make_rationale({{"q", "a"}});
        auto same = scorer_with(-1.5, -1.5);
        CHECK(helpfulness_ratio(same, target, r).ratio == doctest::Approx(1.0));
        auto better = scorer_with(-1.8, -2.0);
        const auto rec = helpfulness_ratio(better, target, r);
        CHECK(rec.token_count == 10);
        CHECK(rec.logprob_with == doctest::Approx(-18.0));
        CHECK(rec.logprob_without == doctest::Approx(-20.0));
        CHECK(rec.ratio == doctest::Approx(std::exp(0.2)).epsilon(1e-12));
        CHECK(rec.ratio == doctest::Approx(1.2214).epsilon(1e-4));
        CHECK_THROWS_AS(HelpfulnessRecord::make(0, 0, 0), PreconditionError);
    }

    TEST_CASE("scoring prefix joins knowledge then history then the tag") {
        const auto target = testing::make_target("s", {"hi", "there", "you"});
        CHECK(scoring_prefix(target, "", 512) == "A: hi\nB: there\nA: ");
        CHECK(scoring_prefix(target, "Z", 512) == "Z <SEP> A: hi\nB: there\nA: ");
    }

    TEST_CASE("strict threshold and monotonicity") {
        CHECK(is_helpful(1.25, 0.95));
        CHECK_FALSE(is_helpful(0.95, 0.95));
        CHECK(is_helpful(0.9500001, 0.95));
        std::mt19937_64 rng(4);
        std::uniform_real_distribution<double> u(0.0, 2.0);
        for (int i = 0; i < 1000; ++i) {
            const double a = u(rng), b = u(rng), tau = u(rng) + 0.01;
            if (a <= b) CHECK((!is_helpful(a, tau) || is_helpful(b, tau)));
            if (a <= b) CHECK((!is_helpful(tau, b) || is_helpful(tau, a)));
        }
    }

    TEST_CASE("filter config validation") {
        FilterConfig c;
        CHECK(c.tau == 0.95);
        CHECK(c.critic_threshold == 0.5);
        CHECK_NOTHROW(c.validate());
        c.tau = 0.0;
        CHECK_THROWS_AS(c.validate(), PreconditionError);
        c = {};
        c.critic_threshold = 1.0;
        CHECK_THROWS_AS(c.validate(), PreconditionError);
    }

    TEST_CASE("candidate verdicts") {
        const auto target = testing::make_target("v", {"hi", "fine thanks"});
        FilterConfig cfg;
        FunctionCritic pass([](const std::string&, const std::string&) { return 0.99; });
        FunctionCritic fail([](const std::string&, const std::string&) { return 0.48; });
        auto helpful = scorer_with(-1.0, -2.0);
        auto unhelpful = scorer_with(-3.0, -2.0);
        const Candidate cand{1, kGood, std::nullopt, "hash"};

        auto r = filter_candidate(target, cand, pass, helpful, cfg);
        CHECK(r.retained);
        CHECK(r.critic_score == 0.99);

        r = filter_candidate(target, cand, pass, unhelpful, cfg);
        CHECK_FALSE(r.retained);
        CHECK_FALSE(r.fail_context());
        CHECK(r.fail_response());

        r = filter_candidate(target, cand, fail, unhelpful, cfg);
        CHECK_FALSE(r.retained);
        CHECK(r.fail_context());
        CHECK(r.fail_response());
        CHECK(r.scored);

        r = filter_candidate(target, {2, std::string("None"), std::nullopt, "h"}, pass, helpful, cfg);
        CHECK_FALSE(r.parse_ok);
        CHECK(r.parse_failure == "empty_rationale");
        CHECK_FALSE(r.fail_context());

        r = filter_candidate(target, {3, std::nullopt, std::string("timeout"), "h"}, pass, helpful, cfg);
        CHECK(r.parse_failure == "generation_failed");
        CHECK(r.error == "timeout");

        const auto a = filter_candidate(target, cand, pass, helpful, cfg);
        const auto b = filter_candidate(target, cand, pass, helpful, cfg);
        CHECK(to_json(a) == to_json(b));
    }

    TEST_CASE("scorer errors are recorded without aborting") {
        const auto target = testing::make_target("e", {"hi", "fine"});
        gateway::StubBackend::Options o;
        o.supports_scoring = false;
        gateway::Gateway none(std::make_shared<gateway::StubBackend>(o));
        FunctionCritic pass([](const std::string&, const std::string&) { return 0.9; });
        const auto r = filter_candidate(target, {1, kGood, std::nullopt, ""}, pass, none, {});
        CHECK(r.parse_ok);
        CHECK(r.pass_context);
        CHECK_FALSE(r.scored);
        CHECK_FALSE(r.retained);
        REQUIRE(r.error.has_value());
        CHECK(r.error->find("scorer") != std::string::npos);
    }

    TEST_CASE("candidate records round trip through files") {
        testing::TempDir dir;
        const auto target = testing::make_target("f", {"hi", "fine"});
        FunctionCritic pass([](const std::string&, const std::string&) { return 0.7; });
        auto helpful = scorer_with(-1.0, -2.0);
        std::vector<CandidateRecord> recs{filter_candidate(target, {1, kGood, std::nullopt, "a"}, pass, helpful, {}),
                                          filter_candidate(target, {2, std::string("junk"), std::nullopt, "b"}, pass,
                                                           helpful, {})};
        write_candidate_records(dir / "r.jsonl", recs);
        const auto back = load_candidate_records(dir / "r.jsonl");
        REQUIRE(back.size() == 2);
        CHECK(to_json(back[0]) == to_json(recs[0]));
        CHECK(to_json(back[1]) == to_json(recs[1]));
        auto bad = to_json(recs[1]);
        bad["retained"] = true;
        CHECK_THROWS_AS(candidate_record_from_json(bad), SchemaError);
    }
}
