// SPDX-License-Identifier: Apache-2.0
//
// Knowledge-augmented response generation.

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dialcot/corpus.hpp"
#include "dialcot/gateway.hpp"
#include "dialcot/rationalizer.hpp"
#include "dialcot/reasoner.hpp"

namespace dialcot::respond {

enum class KnowledgeMode { none, doctor, self_cot, external };
std::string_view to_string(KnowledgeMode m);
KnowledgeMode knowledge_mode_from_string(std::string_view s);

struct KnowledgeSpec {
    KnowledgeMode mode = KnowledgeMode::none;
    /// Required for external mode, forbidden for none.
    std::optional<std::string> text;

    void validate() const;
};

/// Zero-shot chat prompt. A null or blank `knowledge` drops the rationale block and
/// the instruction sentence that refers to it. Ends with `name_tag`.
std::string build_response_prompt(const std::optional<std::string>& knowledge, const std::string& history,
                                  const std::string& name_tag);

/// Few-shot prompt asking for a rationale followed by the next response.
std::string build_self_cot_prompt(const std::string& history, const std::string& name_tag,
                                  const std::vector<rationalizer::DemoExample>& demos);

/// Response after the last line starting with `name_tag`, falling back to the text after
/// the last "Next Response:" marker. Throws SchemaError when neither is present.
std::string extract_response(const std::string& output, const std::string& name_tag);

enum class AgentStyle {
    /// Instruction-following chat model fed the response prompt.
    chat_prompt,
    /// Dialogue model fed knowledge <SEP> history followed by the speaker tag.
    sep_concat,
};
std::string_view to_string(AgentStyle s);
AgentStyle agent_style_from_string(std::string_view s);

struct ResponseOptions {
    AgentStyle style = AgentStyle::chat_prompt;
    gateway::GenParams params{0.0, 128, {}, std::nullopt};
    reasoner::DecodeParams decode;
    int max_input_tokens = kDefaultMaxInputTokens;
    std::vector<rationalizer::DemoExample> demos;  // self_cot only
};

struct ResponseResult {
    std::string text;
    /// Knowledge actually given to the agent (empty when none).
    std::string knowledge;
    bool fell_back = false;
    std::string prompt;
};

/// Predicts the response at `target.t`. Doctor mode falls back to none when the
/// reasoner output does not parse.
ResponseResult generate_response(gateway::Gateway& agent, const corpus::TurnTarget& target, const KnowledgeSpec& spec,
                                 const reasoner::ReasonerHandle* reasoner = nullptr,
                                 const ResponseOptions& options = {});

}  // namespace dialcot::respond
