// SPDX-License-Identifier: Apache-2.0
//
// Structured question-answer rationales and their text forms.
//
//   Subquestion 1: What does Person B want? (xWant)
//   Subanswer 1: Person B wants to return the phone.
//
// "Q1:" / "A1:" are accepted as aliases for the two line prefixes.

#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "dialcot/common.hpp"

namespace dialcot::rationale {

enum class Relation { xIntent, xNeed, xReact, xWant, xAttr, oEffect, oReact, oWant, isAfter, isBefore, Causes };

inline constexpr std::size_t kRelationCount = 11;

/// All relations in declaration order.
const std::array<Relation, kRelationCount>& all_relations();
/// The order in which the annotation instruction lists them.
const std::array<Relation, kRelationCount>& prompt_relation_order();

std::string_view to_string(Relation r);
std::optional<Relation> relation_from_string(std::string_view s);
/// Example question for each relation, with "speaker"/"listener" placeholders.
std::string_view example_question(Relation r);
/// Machine-readable relation table: [{relation, example_question}].
json relation_table();

struct QAPair {
    int index = 1;
    std::string question;
    Relation relation = Relation::xIntent;
    std::string answer;

    bool operator==(const QAPair&) const = default;
};

struct Rationale {
    std::vector<QAPair> pairs;
    std::string raw_text;
    bool is_counterfactual = false;

    std::size_t k() const { return pairs.size(); }
    /// Checks ordering, non-empty fields and single-line text. Throws SchemaError.
    void validate() const;
};

/// Equality of the QA content, ignoring raw_text and the counterfactual flag.
bool same_pairs(const Rationale& a, const Rationale& b);

enum class FailureKind { missing_relation, unknown_relation, index_gap, unpaired_question, empty_rationale };
std::string_view to_string(FailureKind k);

struct ParseFailure {
    FailureKind kind = FailureKind::empty_rationale;
    std::size_t line_number = 0;  // 1-based, 0 when not tied to a line
    std::string line;
    std::string message;
};

using ParseResult = std::variant<Rationale, ParseFailure>;

ParseResult parse_rationale(std::string_view text);

inline bool parsed(const ParseResult& r) { return std::holds_alternative<Rationale>(r); }

enum class Style { subquestion, qa };

/// Canonical text form; newlines inside fields are flattened.
std::string render_rationale(const Rationale& r, Style style = Style::subquestion);

/// Answer lines only ("Subanswer i: ..."), in order.
std::string render_answers_only(const Rationale& r);

}  // namespace dialcot::rationale
