// SPDX-License-Identifier: Apache-2.0

#include "dialcot/knowledge.hpp"

#include <cctype>
#include <vector>

#include "dialcot/common.hpp"

namespace dialcot {

namespace {

// Start offsets of whitespace-delimited tokens.
std::vector<std::size_t> token_starts(std::string_view text) {
    std::vector<std::size_t> starts;
    bool in_token = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const bool space = std::isspace(static_cast<unsigned char>(text[i])) != 0;
        if (!space && !in_token) starts.push_back(i);
        in_token = !space;
    }
    return starts;
}

}  // namespace

int count_whitespace_tokens(std::string_view text) { return static_cast<int>(token_starts(text).size()); }

std::string truncate_left(std::string_view text, int max_tokens) {
    if (max_tokens < 1) throw PreconditionError("max_tokens must be >= 1");
    auto starts = token_starts(text);
    if (starts.size() <= static_cast<std::size_t>(max_tokens)) return std::string(text);
    return std::string(text.substr(starts[starts.size() - static_cast<std::size_t>(max_tokens)]));
}

std::string concat_knowledge(std::string_view knowledge, std::string_view history, int max_tokens) {
    std::string last_line(history);
    if (auto nl = last_line.find_last_of('\n'); nl != std::string::npos) last_line = last_line.substr(nl + 1);
    if (count_whitespace_tokens(last_line) > max_tokens)
        throw PreconditionError("last utterance alone exceeds " + std::to_string(max_tokens) + " tokens");
    std::string joined;
    if (trim(knowledge).empty()) {
        joined = std::string(history);
    } else {
        joined = trim(knowledge);
        joined += ' ';
        joined += kKnowledgeSeparator;
        joined += ' ';
        joined += history;
    }
    return truncate_left(joined, max_tokens);
}

}  // namespace dialcot
