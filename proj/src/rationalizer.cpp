// SPDX-License-Identifier: Apache-2.0

#include "dialcot/rationalizer.hpp"

#include <spdlog/spdlog.h>

namespace dialcot::rationalizer {

std::vector<DemoExample> load_demos(const std::filesystem::path& path) {
    std::vector<DemoExample> out;
    for_each_jsonl(path, [&](std::size_t line, const json& j) {
        DemoExample d;
        try {
            d.dialogue_text = j.at("dialogue_text").get<std::string>();
            d.response_text = j.at("response_text").get<std::string>();
            d.rationale_text = j.at("rationale_text").get<std::string>();
        } catch (const json::exception&) {
            throw SchemaError("demo record needs dialogue_text, response_text and rationale_text", line);
        }
        if (trim(d.dialogue_text).empty() || trim(d.response_text).empty() || trim(d.rationale_text).empty())
            throw SchemaError("demo record has an empty field", line);
        out.push_back(std::move(d));
    });
    return out;
}

std::filesystem::path default_demo_path() { return std::filesystem::path(DIALCOT_DATA_DIR) / "demos.jsonl"; }

gateway::GenParams default_generation_params() {
    gateway::GenParams p;
    p.temperature = 0.5;
    p.max_tokens = 300;
    return p;
}

namespace {

std::string instruction(int k) {
    std::string relations;
    for (auto r : rationale::prompt_relation_order()) {
        if (!relations.empty()) relations += ", ";
        relations += rationale::to_string(r);
    }
    const std::string ks = std::to_string(k);
    std::string out;
    out += "Generate rationales for generating the target utterance (\"Target:\"). The rationale consists of ";
    out += ks + "-hop subquestion-subanswer pairs.\n";
    out += "Each question should contain a commonsense relation in [" + relations + "]. ";
    out += "These rationales should be the crucial cue for generating the target utterance, but you should not "
           "include the target utterance and also pretend you don't know the target utterance.\n";
    out += "Subquestion " + ks + " and Subanswer " + ks +
           " should be about guessing the target utterance, so Subanswer " + ks +
           " should be closely related to the target utterance but don't mention it directly.\n";
    out += "If you think generating the target utterance doesn't need commonsense, then generate None for the "
           "rationale.\n";
    return out;
}

}  // namespace

std::string build_annotation_prompt(const corpus::TurnTarget& target, const std::vector<DemoExample>& demos, int k) {
    if (k < 1 || k > 5) throw PreconditionError("k must be in [1, 5], got " + std::to_string(k));
    if (demos.empty()) throw PreconditionError("at least one demonstration is required");
    if (target.context.empty()) throw PreconditionError("target context is empty");
    std::string out = instruction(k);
    for (std::size_t i = 0; i < demos.size(); ++i) {
        out += "\n- Example " + std::to_string(i + 1) + " -\n";
        out += trim(demos[i].dialogue_text) + "\n\n";
        out += "Ground-truth Response:\n" + trim(demos[i].response_text) + "\n\n";
        out += "Rationale:\n" + trim(demos[i].rationale_text) + "\n";
    }
    out += "\n" + corpus::render_context(target.context) + "\n\n";
    out += "Ground-truth Response:\n" + corpus::render_utterance(target.response) + "\n\n";
    out += "Rationale:\n";
    return out;
}

std::string prompt_hash(const std::string& prompt, const gateway::GenParams& params) {
    return sha256_hex(json{{"prompt", prompt}, {"params", params.to_json()}}.dump());
}

std::vector<CandidateSlot> generate_candidates(gateway::Gateway& gw, const corpus::TurnTarget& target,
                                               const std::vector<DemoExample>& demos, int k, int n,
                                               const gateway::GenParams& params) {
    if (n < 1) throw PreconditionError("n must be >= 1");
    params.validate();
    const std::string prompt = build_annotation_prompt(target, demos, k);
    const std::int64_t base_seed = params.seed.value_or(0);
    std::vector<CandidateSlot> slots;
    slots.reserve(static_cast<std::size_t>(n));
    for (int i = 1; i <= n; ++i) {
        CandidateSlot slot;
        slot.candidate_index = i;
        slot.params = params;
        slot.params.seed = base_seed + (i - 1);
        slot.prompt_hash = prompt_hash(prompt, slot.params);
        try {
            auto completion = gw.cached_generate(prompt, slot.params);
            slot.text = std::move(completion.text);
            slot.truncated = completion.truncated;
        } catch (const std::exception& e) {
            spdlog::warn("candidate {} for {}#{} failed: {}", i, target.dialogue_id, target.t, e.what());
            slot.error = e.what();
        }
        slots.push_back(std::move(slot));
    }
    return slots;
}

std::vector<corpus::Utterance> make_counterfactual_context(const std::vector<corpus::Utterance>& ctx) {
    if (ctx.empty()) throw PreconditionError("context is empty");
    return {ctx.back()};
}

GeneratedRationale generate_counterfactual(gateway::Gateway& gw, const corpus::TurnTarget& target,
                                           const std::vector<DemoExample>& demos, int k,
                                           const gateway::GenParams& params) {
    corpus::TurnTarget cf = target;
    cf.context = make_counterfactual_context(target.context);
    GeneratedRationale out;
    out.prompt = build_annotation_prompt(cf, demos, k);
    out.prompt_hash = prompt_hash(out.prompt, params);
    auto completion = gw.cached_generate(out.prompt, params);
    auto parsed = rationale::parse_rationale(completion.text);
    if (auto* failure = std::get_if<rationale::ParseFailure>(&parsed)) {
        throw SchemaError("counterfactual rationale for " + target.dialogue_id + "#" + std::to_string(target.t) +
                          " did not parse (" + std::string(rationale::to_string(failure->kind)) +
                          "): " + failure->message);
    }
    out.rationale = std::get<rationale::Rationale>(std::move(parsed));
    out.rationale.is_counterfactual = true;
    return out;
}

// ---------------------------------------------------------------------------
// annotation files

json to_json(const CandidateRow& r) {
    return {{"dialogue_id", r.dialogue_id},
            {"t", r.t},
            {"candidate_index", r.slot.candidate_index},
            {"text", r.slot.text ? json(*r.slot.text) : json(nullptr)},
            {"error", r.slot.error ? json(*r.slot.error) : json(nullptr)},
            {"truncated", r.slot.truncated},
            {"prompt_hash", r.slot.prompt_hash},
            {"params", r.slot.params.to_json()}};
}

CandidateRow candidate_row_from_json(const json& j) {
    CandidateRow r;
    r.dialogue_id = j.at("dialogue_id").get<std::string>();
    r.t = j.at("t").get<int>();
    r.slot.candidate_index = j.at("candidate_index").get<int>();
    if (j.contains("text") && !j.at("text").is_null()) r.slot.text = j.at("text").get<std::string>();
    if (j.contains("error") && !j.at("error").is_null()) r.slot.error = j.at("error").get<std::string>();
    r.slot.truncated = j.value("truncated", false);
    r.slot.prompt_hash = j.value("prompt_hash", std::string{});
    if (j.contains("params")) r.slot.params = gateway::GenParams::from_json(j.at("params"));
    return r;
}

std::vector<CandidateRow> load_candidate_rows(const std::filesystem::path& path) {
    std::vector<CandidateRow> out;
    for_each_jsonl(path, [&](std::size_t line, const json& j) {
        try {
            out.push_back(candidate_row_from_json(j));
        } catch (const json::exception& e) {
            throw SchemaError(std::string("bad candidate row: ") + e.what(), line);
        }
    });
    return out;
}

void write_candidate_rows(const std::filesystem::path& path, const std::vector<CandidateRow>& rows) {
    std::vector<json> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(to_json(r));
    write_jsonl(path, out);
}

json to_json(const CounterfactualRecord& r) {
    json j = corpus::to_json(r.target);
    j["rationale_text"] = r.rationale_text;
    j["prompt_hash"] = r.prompt_hash;
    j["is_counterfactual"] = true;
    return j;
}

CounterfactualRecord counterfactual_from_json(const json& j) {
    CounterfactualRecord r;
    r.target = corpus::target_from_json(j);
    r.rationale_text = j.at("rationale_text").get<std::string>();
    r.prompt_hash = j.value("prompt_hash", std::string{});
    return r;
}

std::vector<CounterfactualRecord> load_counterfactuals(const std::filesystem::path& path) {
    std::vector<CounterfactualRecord> out;
    for_each_jsonl(path, [&](std::size_t line, const json& j) {
        try {
            out.push_back(counterfactual_from_json(j));
        } catch (const json::exception& e) {
            throw SchemaError(std::string("bad counterfactual record: ") + e.what(), line);
        }
    });
    return out;
}

void write_counterfactuals(const std::filesystem::path& path, const std::vector<CounterfactualRecord>& rows) {
    std::vector<json> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(to_json(r));
    write_jsonl(path, out);
}

}  // namespace dialcot::rationalizer
