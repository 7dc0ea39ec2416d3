// SPDX-License-Identifier: Apache-2.0
//
// Fixtures shared by the unit and acceptance tests.

#pragma once

#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "dialcot/corpus.hpp"
#include "dialcot/rationale.hpp"

namespace dialcot::testing {

class TempDir {
public:
    TempDir() {
        std::string tmpl = (std::filesystem::temp_directory_path() / "dialcot-test-XXXXXX").string();
        if (!::mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
        path_ = tmpl;
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

/// Alternating A/B speakers starting with A.
inline corpus::Dialogue make_dialogue(const std::string& id, const std::vector<std::string>& texts,
                                      const std::string& source = "test") {
    corpus::Dialogue d;
    d.id = id;
    d.source = source;
    for (std::size_t i = 0; i < texts.size(); ++i)
        d.utterances.push_back(corpus::Utterance::make(i % 2 ? corpus::Speaker::B : corpus::Speaker::A, texts[i]));
    return d;
}

inline corpus::TurnTarget make_target(const std::string& id, const std::vector<std::string>& texts,
                                      const std::string& source = "test") {
    return corpus::extract_targets(make_dialogue(id, texts, source)).back();
}

inline rationale::Rationale make_rationale(const std::vector<std::pair<std::string, std::string>>& qa,
                                           rationale::Relation rel = rationale::Relation::xIntent) {
    rationale::Rationale r;
    int i = 0;
    for (const auto& [q, a] : qa) r.pairs.push_back({++i, q, rel, a});
    r.raw_text = rationale::render_rationale(r);
    return r;
}

/// Words that look like parser syntax.
inline const std::vector<std::string>& adversarial_words() {
    static const std::vector<std::string> words{
        "(xWant)", "Subquestion", "Subquestion 2:", "Subanswer 1:", "Q3:", "A1:", "(", ")", "((", "))", "()",
        ":", "::", "None", "none.", "Rationale:", "Ground-truth", "Response:", "- Example 1 -", "(oReact",
        "xIntent)", "Next", "(isBefore)", "\"quoted\"", "caf\xc3\xa9", "\xe6\x97\xa5\xe6\x9c\xac", "tab\there",
        "1:", "B:", "A:", "<SEP>", "</s>", "{k}", "%s", "\\n", "Person", "B's", "x", "?", "!"};
    return words;
}

inline std::string random_phrase(std::mt19937_64& rng, bool adversarial) {
    static const std::vector<std::string> plain{"what", "does", "the", "speaker", "want", "to", "say", "about",
                                                "dinner", "plans", "tomorrow", "listener", "feels", "upset",
                                                "because", "train", "was", "late", "she", "he"};
    std::uniform_int_distribution<int> len(1, 9);
    std::uniform_int_distribution<int> coin(0, 3);
    const int n = len(rng);
    std::string out;
    for (int i = 0; i < n; ++i) {
        const auto& pool = adversarial && coin(rng) == 0 ? adversarial_words() : plain;
        if (i) out += coin(rng) == 0 ? "  " : " ";
        out += pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
    }
    return out;
}

/// Valid rationale with k pairs whose fields may contain parser-like substrings.
inline rationale::Rationale random_rationale(std::mt19937_64& rng, int k, bool adversarial = true) {
    rationale::Rationale r;
    const auto& rels = rationale::all_relations();
    for (int i = 1; i <= k; ++i) {
        rationale::QAPair p;
        p.index = i;
        p.question = random_phrase(rng, adversarial) + "?";
        p.relation = rels[std::uniform_int_distribution<std::size_t>(0, rels.size() - 1)(rng)];
        p.answer = random_phrase(rng, adversarial);
        r.pairs.push_back(std::move(p));
    }
    r.raw_text = rationale::render_rationale(r);
    return r;
}

}  // namespace dialcot::testing
