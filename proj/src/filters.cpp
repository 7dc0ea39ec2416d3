// SPDX-License-Identifier: Apache-2.0

#include "dialcot/filters.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <spdlog/spdlog.h>

namespace dialcot::filters {

std::string_view to_string(CriticLabel l) { return l == CriticLabel::aligned ? "aligned" : "counterfactual"; }

CriticLabel critic_label_from_string(std::string_view s) {
    if (s == "aligned") return CriticLabel::aligned;
    if (s == "counterfactual") return CriticLabel::counterfactual;
    throw SchemaError("unknown critic label '" + std::string(s) + "'");
}

json to_json(const CriticExample& e) {
    return {{"dialogue_id", e.dialogue_id},
            {"context_text", e.context_text},
            {"rationale_text", e.rationale_text},
            {"label", to_string(e.label)}};
}

CriticExample critic_example_from_json(const json& j) {
    CriticExample e;
    e.dialogue_id = j.at("dialogue_id").get<std::string>();
    e.context_text = j.at("context_text").get<std::string>();
    e.rationale_text = j.at("rationale_text").get<std::string>();
    e.label = critic_label_from_string(j.at("label").get<std::string>());
    if (trim(e.context_text).empty() || trim(e.rationale_text).empty())
        throw SchemaError("critic example for '" + e.dialogue_id + "' has empty text");
    return e;
}

namespace {

void save_split(const std::filesystem::path& path, const std::vector<CriticExample>& xs) {
    std::vector<json> rows;
    rows.reserve(xs.size());
    for (const auto& x : xs) rows.push_back(to_json(x));
    write_jsonl(path, rows);
}

std::vector<CriticExample> load_split(const std::filesystem::path& path) {
    std::vector<CriticExample> out;
    if (!std::filesystem::exists(path)) return out;
    for_each_jsonl(path, [&](std::size_t line, const json& j) {
        try {
            out.push_back(critic_example_from_json(j));
        } catch (const json::exception& e) {
            throw SchemaError(std::string("bad critic example: ") + e.what(), line);
        }
    });
    return out;
}

}  // namespace

void CriticDataset::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    save_split(dir / "train.jsonl", train);
    save_split(dir / "validation.jsonl", validation);
    save_split(dir / "test.jsonl", test);
    write_file(dir / "split.json", split_record.dump(2) + "\n");
}

CriticDataset CriticDataset::load(const std::filesystem::path& dir) {
    CriticDataset d;
    d.train = load_split(dir / "train.jsonl");
    d.validation = load_split(dir / "validation.jsonl");
    d.test = load_split(dir / "test.jsonl");
    if (std::filesystem::exists(dir / "split.json")) d.split_record = json::parse(read_file(dir / "split.json"));
    return d;
}

CriticDataset assemble_critic_data(const std::vector<LabeledRationale>& positives,
                                   const std::vector<LabeledRationale>& counterfactuals, std::uint64_t seed) {
    std::map<std::string, const LabeledRationale*> pos, neg;
    for (const auto& p : positives) {
        if (p.second.is_counterfactual)
            throw PreconditionError("positive rationale for '" + p.first.dialogue_id + "' is flagged counterfactual");
        if (!pos.emplace(p.first.dialogue_id, &p).second)
            throw PreconditionError("dialogue '" + p.first.dialogue_id + "' appears twice among positives");
    }
    for (const auto& c : counterfactuals) {
        if (!c.second.is_counterfactual)
            throw PreconditionError("counterfactual rationale for '" + c.first.dialogue_id + "' is not flagged");
        if (!neg.emplace(c.first.dialogue_id, &c).second)
            throw PreconditionError("dialogue '" + c.first.dialogue_id + "' appears twice among counterfactuals");
    }
    std::vector<std::string> ids;
    for (const auto& [id, _] : pos) {
        if (!neg.count(id)) throw PreconditionError("dialogue '" + id + "' has no counterfactual rationale");
        ids.push_back(id);
    }
    for (const auto& [id, _] : neg)
        if (!pos.count(id)) throw PreconditionError("dialogue '" + id + "' has no aligned rationale");
    if (ids.empty()) throw PreconditionError("no dialogues to assemble");

    stable_shuffle(ids, seed);
    const std::size_t n = ids.size();
    std::size_t n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) / 12.0 + 0.5));
    std::size_t n_test = n_val;
    while (n_val + n_test >= n && n_val + n_test > 0) {
        if (n_test >= n_val) --n_test; else --n_val;
    }
    const std::size_t n_train = n - n_val - n_test;

    CriticDataset out;
    auto add = [&](std::vector<CriticExample>& split, const std::string& id) {
        const auto& [target, aligned] = *pos.at(id);
        const auto& cf = neg.at(id)->second;
        // Both examples use the full context: the classifier learns to tell a grounded
        // rationale from one produced with only the last turn visible.
        const std::string ctx = corpus::render_context(target.context);
        split.push_back({id, ctx, rationale::render_rationale(aligned), CriticLabel::aligned});
        split.push_back({id, ctx, rationale::render_rationale(cf), CriticLabel::counterfactual});
    };
    for (std::size_t i = 0; i < n; ++i) {
        if (i < n_train) add(out.train, ids[i]);
        else if (i < n_train + n_val) add(out.validation, ids[i]);
        else add(out.test, ids[i]);
    }
    if (out.validation.empty()) out.warnings.push_back("validation split is empty");
    if (out.test.empty()) out.warnings.push_back("test split is empty");
    for (const auto& w : out.warnings) spdlog::warn("critic data: {} ({} dialogues)", w, n);
    out.split_record = {{"ratio", {10, 1, 1}},
                        {"seed", seed},
                        {"dialogues", {{"train", n_train}, {"validation", n_val}, {"test", n_test}}},
                        {"examples", {{"train", out.train.size()}, {"validation", out.validation.size()},
                                      {"test", out.test.size()}}}};
    check_disjoint(out);
    return out;
}

void check_disjoint(const CriticDataset& data) {
    std::map<std::string, int> owner;
    const std::vector<const std::vector<CriticExample>*> splits{&data.train, &data.validation, &data.test};
    for (int s = 0; s < 3; ++s) {
        for (const auto& e : *splits[static_cast<std::size_t>(s)]) {
            auto [it, inserted] = owner.emplace(e.dialogue_id, s);
            if (!inserted && it->second != s)
                throw SchemaError("dialogue '" + e.dialogue_id + "' appears in more than one critic split");
        }
    }
}

// ---------------------------------------------------------------------------

double context_alignment_score(const Critic& critic, const std::string& context_text,
                               const std::string& rationale_text) {
    if (!critic.trained()) throw PreconditionError("critic model is not trained");
    return critic.probability(context_text, rationale_text);
}

void FilterConfig::validate() const {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw PreconditionError("tau must be in (0, inf)");
    if (!(critic_threshold > 0.0 && critic_threshold < 1.0))
        throw PreconditionError("critic_threshold must be in (0, 1)");
    if (max_input_tokens < 1) throw PreconditionError("max_input_tokens must be >= 1");
}

json FilterConfig::to_json() const {
    return {{"tau", tau}, {"critic_threshold", critic_threshold}, {"max_input_tokens", max_input_tokens}};
}

HelpfulnessRecord HelpfulnessRecord::make(double logprob_with, double logprob_without, int token_count) {
    if (token_count < 1) throw PreconditionError("token_count must be >= 1");
    return {logprob_with, logprob_without, token_count,
            std::exp((logprob_with - logprob_without) / static_cast<double>(token_count))};
}

std::string scoring_prefix(const corpus::TurnTarget& target, const std::string& knowledge, int max_tokens) {
    std::string prefix = concat_knowledge(knowledge, corpus::render_context(target.context), max_tokens);
    prefix += '\n';
    prefix += corpus::speaker_tag(target.response.speaker);
    prefix += ": ";
    return prefix;
}

HelpfulnessRecord helpfulness_ratio(gateway::Gateway& scorer, const corpus::TurnTarget& target,
                                    const rationale::Rationale& rationale, KnowledgeJoin, int max_tokens) {
    rationale.validate();
    const auto with = scorer.score_response(
        scoring_prefix(target, rationale::render_rationale(rationale), max_tokens), target.response.text);
    const auto without = scorer.score_response(scoring_prefix(target, "", max_tokens), target.response.text);
    if (with.token_count != without.token_count)
        throw gateway::BackendError("scorer tokenized the response inconsistently");
    return HelpfulnessRecord::make(with.total_logprob, without.total_logprob, with.token_count);
}

bool is_helpful(double ratio, double tau) { return ratio > tau; }

bool is_helpful(const HelpfulnessRecord& record, const FilterConfig& config) {
    return is_helpful(record.ratio, config.tau);
}

// ---------------------------------------------------------------------------

json to_json(const CandidateRecord& r) {
    json j{{"dialogue_id", r.dialogue_id},
           {"t", r.t},
           {"candidate_index", r.candidate_index},
           {"rationale_text", r.rationale_text},
           {"parse_ok", r.parse_ok},
           {"pass_context", r.pass_context},
           {"pass_response", r.pass_response},
           {"retained", r.retained},
           {"prompt_hash", r.prompt_hash}};
    j["critic_score"] = r.parse_ok ? json(r.critic_score) : json(nullptr);
    if (r.scored) {
        j["logprob_with"] = r.logprob_with;
        j["logprob_without"] = r.logprob_without;
        j["token_count"] = r.token_count;
        j["h_ratio"] = r.h_ratio;
    } else {
        j["logprob_with"] = nullptr;
        j["logprob_without"] = nullptr;
        j["token_count"] = nullptr;
        j["h_ratio"] = nullptr;
    }
    if (r.parse_failure) j["parse_failure"] = *r.parse_failure;
    if (r.error) j["error"] = *r.error;
    return j;
}

CandidateRecord candidate_record_from_json(const json& j) {
    CandidateRecord r;
    r.dialogue_id = j.at("dialogue_id").get<std::string>();
    r.t = j.at("t").get<int>();
    r.candidate_index = j.at("candidate_index").get<int>();
    r.rationale_text = j.value("rationale_text", std::string{});
    r.parse_ok = j.at("parse_ok").get<bool>();
    r.pass_context = j.value("pass_context", false);
    r.pass_response = j.value("pass_response", false);
    r.retained = j.value("retained", false);
    r.prompt_hash = j.value("prompt_hash", std::string{});
    if (j.contains("critic_score") && j["critic_score"].is_number()) r.critic_score = j["critic_score"].get<double>();
    if (j.contains("h_ratio") && j["h_ratio"].is_number()) {
        r.scored = true;
        r.h_ratio = j["h_ratio"].get<double>();
        r.logprob_with = j.value("logprob_with", 0.0);
        r.logprob_without = j.value("logprob_without", 0.0);
        r.token_count = j.value("token_count", 0);
    }
    if (j.contains("parse_failure") && j["parse_failure"].is_string()) r.parse_failure = j["parse_failure"].get<std::string>();
    if (j.contains("error") && j["error"].is_string()) r.error = j["error"].get<std::string>();
    if (r.retained && !(r.parse_ok && r.pass_context && r.pass_response))
        throw SchemaError("record " + r.dialogue_id + "#" + std::to_string(r.t) + "/" +
                          std::to_string(r.candidate_index) + " is retained without passing both filters");
    return r;
}

std::vector<CandidateRecord> load_candidate_records(const std::filesystem::path& path) {
    std::vector<CandidateRecord> out;
    for_each_jsonl(path, [&](std::size_t line, const json& j) {
        try {
            out.push_back(candidate_record_from_json(j));
        } catch (const json::exception& e) {
            throw SchemaError(std::string("bad candidate record: ") + e.what(), line);
        } catch (const SchemaError& e) {
            throw SchemaError(e.what(), line);
        }
    });
    return out;
}

void write_candidate_records(const std::filesystem::path& path, const std::vector<CandidateRecord>& records) {
    std::vector<json> rows;
    rows.reserve(records.size());
    for (const auto& r : records) rows.push_back(to_json(r));
    write_jsonl(path, rows);
}

CandidateRecord filter_candidate(const corpus::TurnTarget& target, const Candidate& candidate, const Critic& critic,
                                 gateway::Gateway& scorer, const FilterConfig& config) {
    CandidateRecord rec;
    rec.dialogue_id = target.dialogue_id;
    rec.t = target.t;
    rec.candidate_index = candidate.candidate_index;
    rec.prompt_hash = candidate.prompt_hash;
    rec.error = candidate.error;
    if (!candidate.text) {
        rec.parse_failure = "generation_failed";
        return rec;
    }
    auto parsed = rationale::parse_rationale(*candidate.text);
    if (auto* failure = std::get_if<rationale::ParseFailure>(&parsed)) {
        rec.rationale_text = *candidate.text;
        rec.parse_failure = std::string(rationale::to_string(failure->kind));
        return rec;
    }
    const auto& r = std::get<rationale::Rationale>(parsed);
    rec.parse_ok = true;
    rec.rationale_text = rationale::render_rationale(r);

    std::vector<std::string> errors;
    try {
        rec.critic_score =
            context_alignment_score(critic, corpus::render_context(target.context), rec.rationale_text);
        rec.pass_context = rec.critic_score >= config.critic_threshold;
    } catch (const std::exception& e) {
        errors.push_back(std::string("critic: ") + e.what());
    }
    try {
        auto h = helpfulness_ratio(scorer, target, r, KnowledgeJoin::sep_token, config.max_input_tokens);
        rec.scored = true;
        rec.logprob_with = h.logprob_with;
        rec.logprob_without = h.logprob_without;
        rec.token_count = h.token_count;
        rec.h_ratio = h.ratio;
        rec.pass_response = is_helpful(h, config);
    } catch (const std::exception& e) {
        errors.push_back(std::string("scorer: ") + e.what());
    }
    if (!errors.empty()) rec.error = join(errors, "; ");
    rec.retained = rec.pass_context && rec.pass_response;
    return rec;
}

}  // namespace dialcot::filters
