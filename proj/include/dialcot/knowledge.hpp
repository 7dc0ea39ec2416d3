// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <string_view>

namespace dialcot {

inline constexpr std::string_view kKnowledgeSeparator = "<SEP>";
inline constexpr int kDefaultMaxInputTokens = 512;

/// knowledge + " <SEP> " + history, or history alone when knowledge is blank.
/// Over-length input (whitespace tokens) is cut from the left so the final
/// line of `history` survives intact; throws PreconditionError if that line
/// alone exceeds `max_tokens`.
std::string concat_knowledge(std::string_view knowledge, std::string_view history,
                             int max_tokens = kDefaultMaxInputTokens);

/// Keeps the last `max_tokens` whitespace tokens of `text`, preserving the original spacing.
std::string truncate_left(std::string_view text, int max_tokens);

int count_whitespace_tokens(std::string_view text);

}  // namespace dialcot
