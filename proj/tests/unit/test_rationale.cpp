// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <random>
#include <set>

#include "dialcot/rationale.hpp"
#include "test_support.hpp"

using namespace dialcot;
using namespace dialcot::rationale;

namespace {

ParseFailure failure_of(const std::string& text) {
    const auto r = parse_rationale(text);
    REQUIRE_FALSE(parsed(r));
    return std::get<ParseFailure>(r);
}

}  // namespace

TEST_SUITE("rationale") {
    TEST_CASE("relation enum has exactly eleven members") {
        std::set<std::string> names;
        for (auto r : all_relations()) names.insert(std::string(to_string(r)));
        CHECK(names == std::set<std::string>{"xIntent", "xNeed", "xReact", "xWant", "xAttr", "oEffect", "oReact",
                                             "oWant", "isAfter", "isBefore", "Causes"});
        for (auto r : prompt_relation_order()) CHECK(relation_from_string(to_string(r)) == r);
        CHECK_FALSE(relation_from_string("xFeel").has_value());
        CHECK_FALSE(relation_from_string("xintent").has_value());
    }

    TEST_CASE("shipped relation table matches the built-in table") {
        const auto file = json::parse(read_file(std::filesystem::path(DIALCOT_SOURCE_DIR) / "data" / "relations.json"));
        CHECK(file == relation_table());
        CHECK(relation_table().size() == kRelationCount);
    }

    TEST_CASE("display alias form parses") {
        const auto r = parse_rationale(
            "Q1: What did Person A do for Person B? (oReact)\nA1: Person A grabbed Person B's coffee mug.");
        REQUIRE(parsed(r));
        const auto& z = std::get<Rationale>(r);
        REQUIRE(z.k() == 1);
        CHECK(z.pairs[0].index == 1);
        CHECK(z.pairs[0].question == "What did Person A do for Person B?");
        CHECK(z.pairs[0].relation == Relation::oReact);
        CHECK(z.pairs[0].answer == "Person A grabbed Person B's coffee mug.");
    }

    TEST_CASE("canonical form parses in order") {
        const auto r = parse_rationale("Subquestion 1: W? (xIntent)\nSubanswer 1: A.\nSubquestion 2: X? (oWant)\nSubanswer 2: B.");
        REQUIRE(parsed(r));
        const auto& z = std::get<Rationale>(r);
        REQUIRE(z.k() == 2);
        CHECK(z.pairs[0].relation == Relation::xIntent);
        CHECK(z.pairs[1].relation == Relation::oWant);
        CHECK(z.pairs[1].answer == "B.");
        CHECK_NOTHROW(z.validate());
    }

    TEST_CASE("failure kinds name the offending line") {
        auto f = failure_of("Subquestion 1: How? (xFeel)\nSubanswer 1: Fine.");
        CHECK(f.kind == FailureKind::unknown_relation);
        CHECK(f.line_number == 1);
        CHECK(f.line.find("xFeel") != std::string::npos);

        CHECK(failure_of("Subquestion 1: How?\nSubanswer 1: Fine.").kind == FailureKind::missing_relation);
        CHECK(failure_of("Subquestion 1: How? ()\nSubanswer 1: Fine.").kind == FailureKind::missing_relation);
        f = failure_of("Subquestion 1: a? (xNeed)\nSubanswer 1: b\nSubquestion 3: c? (xNeed)\nSubanswer 3: d");
        CHECK(f.kind == FailureKind::index_gap);
        CHECK(f.line_number == 3);
        CHECK(failure_of("Subquestion 1: a? (xNeed)\nSubquestion 2: b? (xNeed)").kind == FailureKind::unpaired_question);
        CHECK(failure_of("Subquestion 1: a? (xNeed)").kind == FailureKind::unpaired_question);
        CHECK(failure_of("Subanswer 1: orphan").kind == FailureKind::unpaired_question);
        CHECK(failure_of("Subquestion 1: a? (xNeed)\nSubanswer 2: b").kind == FailureKind::index_gap);
        CHECK(failure_of("None").kind == FailureKind::empty_rationale);
        CHECK(failure_of("Rationale: None.").kind == FailureKind::empty_rationale);
        CHECK(failure_of("").kind == FailureKind::empty_rationale);
    }

    TEST_CASE("preamble, trailing sections and wrapped answers") {
        const auto r = parse_rationale(
            "Rationale:\nSubquestion 1: a? (xNeed)\nSubanswer 1: first part\nsecond part\n\nGround-truth Response:\nB: x");
        REQUIRE(parsed(r));
        CHECK(std::get<Rationale>(r).pairs[0].answer == "first part second part");
    }

    TEST_CASE("render in both styles") {
        const auto z = testing::make_rationale({{"q", "a"}}, Relation::xAttr);
        CHECK(render_rationale(z, Style::qa) == "Q1: q (xAttr)\nA1: a");
        CHECK(render_rationale(z) == "Subquestion 1: q (xAttr)\nSubanswer 1: a");
        const auto three = testing::make_rationale({{"q1", "a1"}, {"q2", "a2"}, {"q3", "a3"}});
        CHECK(render_answers_only(three) == "Subanswer 1: a1\nSubanswer 2: a2\nSubanswer 3: a3");
    }

    TEST_CASE("adversarial field text round trips") {
        auto z = testing::make_rationale({{"What is Subquestion 2: about (xWant)?", "Subquestion 3: (oReact) None"}});
        for (auto style : {Style::subquestion, Style::qa}) {
            const auto back = parse_rationale(render_rationale(z, style));
            REQUIRE(parsed(back));
            CHECK(same_pairs(std::get<Rationale>(back), z));
        }
    }

    TEST_CASE("randomized round trip property") {
        std::mt19937_64 rng(17);
        for (int i = 0; i < 500; ++i) {
            const auto z = testing::random_rationale(rng, 1 + i % 5);
            for (auto style : {Style::subquestion, Style::qa}) {
                const auto text = render_rationale(z, style);
                const auto back = parse_rationale(text);
                REQUIRE(parsed(back));
                CHECK(same_pairs(std::get<Rationale>(back), z));
                CHECK(render_rationale(std::get<Rationale>(back), style) == text);
            }
        }
    }

    TEST_CASE("validation catches malformed structures") {
        Rationale empty;
        CHECK_THROWS_AS(empty.validate(), SchemaError);
        auto z = testing::make_rationale({{"q", "a"}, {"q", "a"}});
        z.pairs[1].index = 3;
        CHECK_THROWS_AS(z.validate(), SchemaError);
        z = testing::make_rationale({{"q", "a"}});
        z.pairs[0].answer = "two\nlines";
        CHECK_THROWS_AS(z.validate(), SchemaError);
    }
}
