// SPDX-License-Identifier: Apache-2.0

#include "dialcot/respond.hpp"

#include <spdlog/spdlog.h>

#include "dialcot/knowledge.hpp"

namespace dialcot::respond {

namespace {

constexpr std::string_view kInstructionHead =
    "Generate the most plausible next response considering the dialogue history.";
constexpr std::string_view kInstructionRationale =
    " You can refer to the rationale, but you should ignore the rationale if it misleads the next response.";
constexpr std::string_view kInstructionTail =
    " Do not try to put too much information in the next response. You should follow the style of the history.";

constexpr std::string_view kSelfCotInstruction =
    "Read the dialogue, write a rationale as a chain of subquestions and subanswers about the speakers, "
    "then write the next response. Follow the format of the examples.";

constexpr std::string_view kNextResponse = "Next Response:";

std::string strip_tag(std::string text, const std::string& name_tag) {
    text = trim(text);
    if (!name_tag.empty() && text.rfind(name_tag, 0) == 0) text = trim(text.substr(name_tag.size()));
    return text;
}

}  // namespace

std::string_view to_string(KnowledgeMode m) {
    switch (m) {
        case KnowledgeMode::none: return "none";
        case KnowledgeMode::doctor: return "doctor";
        case KnowledgeMode::self_cot: return "self_cot";
        case KnowledgeMode::external: return "external";
    }
    return "none";
}

KnowledgeMode knowledge_mode_from_string(std::string_view s) {
    for (auto m : {KnowledgeMode::none, KnowledgeMode::doctor, KnowledgeMode::self_cot, KnowledgeMode::external})
        if (to_string(m) == s) return m;
    throw PreconditionError("unknown knowledge mode '" + std::string(s) + "'");
}

void KnowledgeSpec::validate() const {
    const bool has_text = text && !trim(*text).empty();
    if (mode == KnowledgeMode::external && !has_text) throw PreconditionError("external mode requires knowledge text");
    if (mode != KnowledgeMode::external && text)
        throw PreconditionError(std::string(to_string(mode)) + " mode does not take knowledge text");
}

std::string_view to_string(AgentStyle s) { return s == AgentStyle::chat_prompt ? "chat_prompt" : "sep_concat"; }

AgentStyle agent_style_from_string(std::string_view s) {
    if (s == "chat_prompt") return AgentStyle::chat_prompt;
    if (s == "sep_concat") return AgentStyle::sep_concat;
    throw PreconditionError("unknown agent style '" + std::string(s) + "'");
}

std::string build_response_prompt(const std::optional<std::string>& knowledge, const std::string& history,
                                  const std::string& name_tag) {
    if (trim(history).empty()) throw PreconditionError("history is empty");
    const bool with_knowledge = knowledge && !trim(*knowledge).empty();
    std::string p(kInstructionHead);
    if (with_knowledge) p += kInstructionRationale;
    p += kInstructionTail;
    p += "\n\n";
    if (with_knowledge) {
        p += "Rationale:\n";
        p += trim(*knowledge);
        p += "\n\n";
    }
    p += "History:\n";
    p += history;
    p += "\n\n";
    p += kNextResponse;
    p += "\n";
    p += name_tag;
    return p;
}

std::string build_self_cot_prompt(const std::string& history, const std::string& name_tag,
                                  const std::vector<rationalizer::DemoExample>& demos) {
    if (trim(history).empty()) throw PreconditionError("history is empty");
    std::string p(kSelfCotInstruction);
    p += "\n";
    for (std::size_t i = 0; i < demos.size(); ++i) {
        p += "\n- Example " + std::to_string(i + 1) + " -\n";
        p += demos[i].dialogue_text;
        p += "\n\nRationale:\n";
        p += demos[i].rationale_text;
        p += "\n\n";
        p += kNextResponse;
        p += "\n";
        p += demos[i].response_text;
        p += "\n";
    }
    p += "\n";
    p += history;
    p += "\n\nRationale:\n";
    (void)name_tag;
    return p;
}

std::string extract_response(const std::string& output, const std::string& name_tag) {
    const auto lines = split_lines(output);
    for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
        const std::string l = trim(*it);
        if (!name_tag.empty() && l.rfind(name_tag, 0) == 0) {
            auto text = trim(l.substr(name_tag.size()));
            if (!text.empty()) return text;
        }
    }
    if (auto pos = output.rfind(kNextResponse); pos != std::string::npos) {
        auto text = strip_tag(output.substr(pos + kNextResponse.size()), name_tag);
        if (auto nl = text.find('\n'); nl != std::string::npos) text = trim(text.substr(0, nl));
        if (!text.empty()) return text;
    }
    throw SchemaError("no response found after the rationale");
}

namespace {

std::string run_agent(gateway::Gateway& agent, const std::string& knowledge, const std::string& history,
                      const std::string& name_tag, const ResponseOptions& options, std::string& prompt) {
    if (options.style == AgentStyle::chat_prompt) {
        prompt = build_response_prompt(knowledge.empty() ? std::nullopt : std::optional<std::string>(knowledge),
                                       history, name_tag);
        auto out = strip_tag(agent.cached_generate(prompt, options.params).text, name_tag);
        if (auto nl = out.find('\n'); nl != std::string::npos) out = trim(out.substr(0, nl));
        return out;
    }
    prompt = concat_knowledge(knowledge, history, options.max_input_tokens - 1) + "\n" + name_tag;
    auto out = strip_tag(agent.cached_generate(prompt, options.params).text, name_tag);
    if (auto nl = out.find('\n'); nl != std::string::npos) out = trim(out.substr(0, nl));
    return out;
}

}  // namespace

ResponseResult generate_response(gateway::Gateway& agent, const corpus::TurnTarget& target, const KnowledgeSpec& spec,
                                 const reasoner::ReasonerHandle* reasoner, const ResponseOptions& options) {
    spec.validate();
    if (target.context.empty()) throw PreconditionError("target has no context");
    const std::string history = corpus::render_context(target.context);
    const std::string name_tag = std::string(corpus::speaker_tag(target.response.speaker)) + ":";

    ResponseResult out;
    switch (spec.mode) {
        case KnowledgeMode::none:
            break;
        case KnowledgeMode::external:
            out.knowledge = trim(*spec.text);
            break;
        case KnowledgeMode::doctor: {
            if (!reasoner || !reasoner->trained()) throw PreconditionError("doctor mode requires a trained reasoner");
            auto inf = reasoner::infer_rationale(*reasoner, target.context, options.decode);
            if (auto* r = std::get_if<rationale::Rationale>(&inf.result)) {
                out.knowledge = rationale::render_rationale(*r);
            } else if (reasoner->metadata().value("mode", std::string()) == "answer_only" &&
                       !trim(inf.text).empty() && !reasoner::has_question_line(inf.text)) {
                out.knowledge = trim(inf.text);
            } else {
                const auto& f = std::get<rationale::ParseFailure>(inf.result);
                spdlog::warn("{}#{}: reasoner output did not parse ({}), responding without knowledge",
                             target.dialogue_id, target.t, rationale::to_string(f.kind));
                out.fell_back = true;
            }
            break;
        }
        case KnowledgeMode::self_cot: {
            if (agent.descriptor().kind == gateway::BackendKind::local_causal)
                throw PreconditionError("self_cot mode requires a chat backend");
            out.prompt = build_self_cot_prompt(history, name_tag, options.demos);
            auto params = options.params;
            params.max_tokens = std::max(params.max_tokens, 400);
            const auto raw = agent.cached_generate(out.prompt, params).text;
            out.text = extract_response(raw, name_tag);
            if (auto pos = raw.rfind(kNextResponse); pos != std::string::npos) out.knowledge = trim(raw.substr(0, pos));
            return out;
        }
    }
    out.text = run_agent(agent, out.knowledge, history, name_tag, options, out.prompt);
    return out;
}

}  // namespace dialcot::respond
