// SPDX-License-Identifier: Apache-2.0

#include "dialcot/rationale.hpp"

#include <cctype>

namespace dialcot::rationale {

namespace {

struct RelationInfo {
    Relation relation;
    std::string_view name;
    std::string_view example;
};

constexpr std::array<RelationInfo, kRelationCount> kRelations{{
    {Relation::xIntent, "xIntent", "What is the plan that speaker and listener have made?"},
    {Relation::xNeed, "xNeed", "What does speaker need to do to pass the final exam?"},
    {Relation::xReact, "xReact", "How might speaker react to the breaking news from listener?"},
    {Relation::xWant, "xWant", "What does speaker want to know from listener?"},
    {Relation::xAttr, "xAttr", "What is speaker's role?"},
    {Relation::oEffect, "oEffect", "What is the result of listener's inquiry about George Hatton?"},
    {Relation::oReact, "oReact", "What will listener react after confirming the meeting time and place?"},
    {Relation::oWant, "oWant", "What does listener want to convey to speaker about the prices?"},
    {Relation::isAfter, "isAfter", "What might listener request from speaker after the agreement?"},
    {Relation::isBefore, "isBefore", "What happened before speaker's first trip abroad?"},
    {Relation::Causes, "Causes", "What causes listener to be concerned about being late?"},
}};

const RelationInfo& info(Relation r) { return kRelations[static_cast<std::size_t>(r)]; }

// Matches "<Long> N:" or "<Short>N:" at the start of a line. Returns the index and body.
std::optional<std::pair<int, std::string>> match_prefix(std::string_view line, std::string_view long_form,
                                                        std::string_view short_form) {
    std::size_t pos;
    if (starts_with_ci(line, long_form)) {
        pos = long_form.size();
        while (pos < line.size() && line[pos] == ' ') ++pos;
    } else if (line.size() > short_form.size() && line.substr(0, short_form.size()) == short_form &&
               std::isdigit(static_cast<unsigned char>(line[short_form.size()]))) {
        pos = short_form.size();
    } else {
        return std::nullopt;
    }
    std::size_t digits = pos;
    while (digits < line.size() && std::isdigit(static_cast<unsigned char>(line[digits]))) ++digits;
    if (digits == pos || digits - pos > 6) return std::nullopt;
    std::size_t colon = digits;
    while (colon < line.size() && line[colon] == ' ') ++colon;
    if (colon >= line.size() || line[colon] != ':') return std::nullopt;
    int index = std::stoi(std::string(line.substr(pos, digits - pos)));
    return std::make_pair(index, trim(line.substr(colon + 1)));
}

bool is_section_header(std::string_view line) {
    return starts_with_ci(line, "Ground-truth Response") || starts_with_ci(line, "Target:") ||
           starts_with_ci(line, "- Example") || starts_with_ci(line, "Next Response");
}

bool is_none_marker(std::string_view line) {
    std::string t = to_lower(trim(line));
    while (!t.empty() && (t.back() == '.' || t.back() == ' ')) t.pop_back();
    if (t.rfind("rationale:", 0) == 0) t = trim(t.substr(10));
    return t == "none";
}

ParseFailure fail(FailureKind kind, std::size_t line_no, std::string line, std::string message) {
    return ParseFailure{kind, line_no, std::move(line), std::move(message)};
}

}  // namespace

const std::array<Relation, kRelationCount>& all_relations() {
    static const std::array<Relation, kRelationCount> all = [] {
        std::array<Relation, kRelationCount> a{};
        for (std::size_t i = 0; i < kRelationCount; ++i) a[i] = kRelations[i].relation;
        return a;
    }();
    return all;
}

const std::array<Relation, kRelationCount>& prompt_relation_order() {
    static const std::array<Relation, kRelationCount> order{
        Relation::oEffect, Relation::oReact, Relation::oWant,   Relation::xAttr,    Relation::xIntent, Relation::xNeed,
        Relation::xReact,  Relation::xWant,  Relation::isAfter, Relation::isBefore, Relation::Causes};
    return order;
}

std::string_view to_string(Relation r) { return info(r).name; }

std::optional<Relation> relation_from_string(std::string_view s) {
    for (const auto& r : kRelations)
        if (r.name == s) return r.relation;
    return std::nullopt;
}

std::string_view example_question(Relation r) { return info(r).example; }

json relation_table() {
    json rows = json::array();
    for (const auto& r : kRelations) rows.push_back({{"relation", r.name}, {"example_question", r.example}});
    return rows;
}

void Rationale::validate() const {
    if (pairs.empty()) throw SchemaError("rationale has no question-answer pairs");
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& p = pairs[i];
        if (p.index != static_cast<int>(i + 1))
            throw SchemaError("rationale pair " + std::to_string(i + 1) + " has index " + std::to_string(p.index));
        for (const std::string* field : {&p.question, &p.answer}) {
            if (field->empty() || trim(*field) != *field || field->find('\n') != std::string::npos ||
                field->find('\r') != std::string::npos)
                throw SchemaError("rationale pair " + std::to_string(p.index) + " has an empty or multi-line field");
        }
    }
}

bool same_pairs(const Rationale& a, const Rationale& b) { return a.pairs == b.pairs; }

std::string_view to_string(FailureKind k) {
    switch (k) {
        case FailureKind::missing_relation: return "missing_relation";
        case FailureKind::unknown_relation: return "unknown_relation";
        case FailureKind::index_gap: return "index_gap";
        case FailureKind::unpaired_question: return "unpaired_question";
        case FailureKind::empty_rationale: return "empty_rationale";
    }
    return "empty_rationale";
}

ParseResult parse_rationale(std::string_view text) {
    Rationale out;
    out.raw_text = std::string(text);

    struct Pending {
        int index;
        std::string question;
        Relation relation;
        std::size_t line_no;
        std::string line;
    };
    std::optional<Pending> pending;
    bool saw_none = false;

    const auto lines = split_lines(text);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::size_t line_no = i + 1;
        const std::string line = trim(lines[i]);
        if (line.empty()) continue;

        if (auto q = match_prefix(line, "Subquestion", "Q")) {
            if (pending)
                return fail(FailureKind::unpaired_question, pending->line_no, pending->line,
                            "question " + std::to_string(pending->index) + " has no answer");
            const int expected = static_cast<int>(out.pairs.size()) + 1;
            if (q->first != expected)
                return fail(FailureKind::index_gap, line_no, line,
                            "expected question " + std::to_string(expected) + ", found " + std::to_string(q->first));
            const std::string& body = q->second;
            if (body.empty() || body.back() != ')')
                return fail(FailureKind::missing_relation, line_no, line, "question lacks a trailing (relation)");
            const auto open = body.rfind('(');
            if (open == std::string::npos)
                return fail(FailureKind::missing_relation, line_no, line, "question lacks a trailing (relation)");
            const std::string token = trim(std::string_view(body).substr(open + 1, body.size() - open - 2));
            if (token.empty())
                return fail(FailureKind::missing_relation, line_no, line, "question has an empty relation tag");
            auto rel = relation_from_string(token);
            if (!rel) return fail(FailureKind::unknown_relation, line_no, line, "unknown relation '" + token + "'");
            std::string question = trim(std::string_view(body).substr(0, open));
            if (question.empty())
                return fail(FailureKind::unpaired_question, line_no, line, "question text is empty");
            pending = Pending{q->first, std::move(question), *rel, line_no, line};
            continue;
        }

        if (auto a = match_prefix(line, "Subanswer", "A")) {
            if (!pending)
                return fail(FailureKind::unpaired_question, line_no, line,
                            "answer " + std::to_string(a->first) + " has no preceding question");
            if (a->first != pending->index)
                return fail(FailureKind::index_gap, line_no, line,
                            "answer " + std::to_string(a->first) + " follows question " +
                                std::to_string(pending->index));
            if (a->second.empty())
                return fail(FailureKind::unpaired_question, line_no, line, "answer text is empty");
            out.pairs.push_back(QAPair{pending->index, std::move(pending->question), pending->relation, a->second});
            pending.reset();
            continue;
        }

        if (is_section_header(line)) break;
        if (pending)
            return fail(FailureKind::unpaired_question, pending->line_no, pending->line,
                        "question " + std::to_string(pending->index) + " is not followed by its answer");
        if (out.pairs.empty()) {
            if (is_none_marker(line)) saw_none = true;
            continue;  // preamble such as "Rationale:"
        }
        // Wrapped answer text.
        out.pairs.back().answer += ' ';
        out.pairs.back().answer += line;
    }

    if (pending)
        return fail(FailureKind::unpaired_question, pending->line_no, pending->line,
                    "question " + std::to_string(pending->index) + " has no answer");
    if (out.pairs.empty())
        return fail(FailureKind::empty_rationale, 0, "",
                    saw_none ? "model answered None" : "no question-answer pairs found");
    return out;
}

std::string render_rationale(const Rationale& r, Style style) {
    const std::string_view q = style == Style::qa ? "Q" : "Subquestion ";
    const std::string_view a = style == Style::qa ? "A" : "Subanswer ";
    std::string out;
    for (std::size_t i = 0; i < r.pairs.size(); ++i) {
        const auto& p = r.pairs[i];
        if (i) out.push_back('\n');
        out.append(q).append(std::to_string(p.index)).append(": ");
        out.append(trim(flatten_newlines(p.question))).append(" (").append(to_string(p.relation)).append(")\n");
        out.append(a).append(std::to_string(p.index)).append(": ");
        out.append(trim(flatten_newlines(p.answer)));
    }
    return out;
}

std::string render_answers_only(const Rationale& r) {
    std::string out;
    for (std::size_t i = 0; i < r.pairs.size(); ++i) {
        if (i) out.push_back('\n');
        out.append("Subanswer ").append(std::to_string(r.pairs[i].index)).append(": ");
        out.append(trim(flatten_newlines(r.pairs[i].answer)));
    }
    return out;
}

}  // namespace dialcot::rationale
