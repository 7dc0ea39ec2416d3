// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "dialcot/reasoner.hpp"
#include "test_support.hpp"

using namespace dialcot;
using namespace dialcot::reasoner;

namespace {

distill::AnnotatedTurn turn(const std::string& id, const std::vector<std::string>& texts,
                            std::vector<rationale::Rationale> retained) {
    distill::AnnotatedTurn t;
    t.target = testing::make_target(id, texts);
    t.retained_rationales = std::move(retained);
    return t;
}

ReasonerHyperparams small_hp(int epochs = 30) {
    ReasonerHyperparams hp;
    hp.learning_rate = 0.01;
    hp.epochs = epochs;
    hp.batch_size = 1;
    hp.seed = 1;
    return hp;
}

}  // namespace

TEST_SUITE("reasoner") {
    TEST_CASE("training examples come only from retained rationales") {
        const auto r1 = testing::make_rationale({{"What does A want?", "Coffee."}}, rationale::Relation::xWant);
        const auto r2 = testing::make_rationale({{"How does B feel?", "Tired."}}, rationale::Relation::xReact);
        const auto t = turn("f", {"hi", "want coffee?", "yes"}, {r1, r2});
        const auto e1 = format_training_example(t, r1, Mode::full);
        const auto e2 = format_training_example(t, r2, Mode::full);
        CHECK(e1.input_text == "A: hi\nB: want coffee?");
        CHECK(e1.target_text == rationale::render_rationale(r1));
        CHECK(e2.target_text != e1.target_text);
        const auto other = testing::make_rationale({{"Why?", "Because."}});
        CHECK_THROWS_AS(format_training_example(t, other, Mode::full), PreconditionError);
        const auto ao = format_training_example(t, r1, Mode::answer_only);
        CHECK(ao.target_text == rationale::render_answers_only(r1));
        CHECK_FALSE(has_question_line(ao.target_text));
        CHECK(example_from_json(to_json(e1)) == e1);
    }

    TEST_CASE("question line detection") {
        CHECK(has_question_line("Subquestion 1: x? (xWant)"));
        CHECK(has_question_line("  Q12: x?"));
        CHECK_FALSE(has_question_line("Subanswer 1: Q1: inside"));
        CHECK_FALSE(has_question_line("Quiet: no"));
        CHECK_FALSE(has_question_line(""));
    }

    TEST_CASE("training preconditions") {
        CHECK_THROWS_AS(train_reasoner({}, small_hp()), PreconditionError);
        std::vector<ReasonerExample> mixed{{"A: x", "y", Mode::full}, {"A: z", "w", Mode::answer_only}};
        CHECK_THROWS_AS(train_reasoner(mixed, small_hp()), PreconditionError);
        auto bad = small_hp();
        bad.epochs = 0;
        CHECK_THROWS_AS(train_reasoner({{"A: x", "y", Mode::full}}, bad), PreconditionError);
        ReasonerHandle untrained;
        CHECK_FALSE(untrained.trained());
        CHECK_THROWS_AS(infer_rationale(untrained, testing::make_target("u", {"hi", "yo"}).context),
                        PreconditionError);
        testing::TempDir dir;
        CHECK_THROWS_AS(untrained.save(dir / "r"), PreconditionError);
    }

    TEST_CASE("loss decreases and the model is saved with metadata") {
        const auto r = testing::make_rationale({{"What does Person A want?", "Person A wants tea."}},
                                               rationale::Relation::xWant);
        const auto t = turn("l", {"I would love some tea.", "Sure."}, {r});
        const std::vector<ReasonerExample> corpus{format_training_example(t, r, Mode::full)};
        const auto handle = train_reasoner(corpus, small_hp(40));
        const auto& losses = handle.metadata()["loss_history"];
        REQUIRE(losses.size() == 40);
        CHECK(losses.back().get<double>() < losses.front().get<double>());
        CHECK(handle.metadata()["mode"] == "full");

        const auto inf = infer_rationale(handle, t.target.context);
        CHECK(inf.text == corpus[0].target_text);
        CHECK(std::holds_alternative<rationale::Rationale>(inf.result));

        testing::TempDir dir;
        handle.save(dir / "reasoner");
        const auto back = ReasonerHandle::load(dir / "reasoner");
        CHECK(back.metadata() == handle.metadata());
        CHECK(infer_rationale(back, t.target.context).text == inf.text);
        CHECK_THROWS_AS(ReasonerHandle::load(dir / "missing"), IoError);
    }

    TEST_CASE("an unparsable decode is reported as a parse failure") {
        const std::vector<ReasonerExample> corpus{{"A: hello\nB: hi", "None", Mode::full}};
        const auto handle = train_reasoner(corpus, small_hp(40));
        const auto inf = infer_rationale(handle, testing::make_target("n", {"hello", "hi", "bye"}).context, {40, 0.0, 0});
        CHECK(inf.text == "None");
        REQUIRE(std::holds_alternative<rationale::ParseFailure>(inf.result));
        CHECK(std::get<rationale::ParseFailure>(inf.result).kind == rationale::FailureKind::empty_rationale);
    }

    TEST_CASE("hyperparameters round trip") {
        auto hp = small_hp(7);
        const auto back = ReasonerHyperparams::from_json(hp.to_json());
        CHECK(back.to_json() == hp.to_json());
    }
}
