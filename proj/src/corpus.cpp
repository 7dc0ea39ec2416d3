// SPDX-License-Identifier: Apache-2.0

#include "dialcot/corpus.hpp"

#include <fstream>
#include <map>
#include <set>

namespace dialcot::corpus {

std::string_view speaker_tag(Speaker s) { return s == Speaker::A ? "A" : "B"; }

Speaker speaker_from_tag(std::string_view tag) {
    std::string t = trim(tag);
    if (t == "A" || t == "a") return Speaker::A;
    if (t == "B" || t == "b") return Speaker::B;
    throw SchemaError("unknown speaker tag '" + t + "'");
}

Speaker other(Speaker s) { return s == Speaker::A ? Speaker::B : Speaker::A; }

Utterance Utterance::make(Speaker speaker, std::string_view text) {
    Utterance u{speaker, trim(flatten_newlines(text))};
    if (u.text.empty()) throw SchemaError("utterance text is empty");
    return u;
}

Format format_from_string(std::string_view s) {
    if (s == "jsonl") return Format::jsonl;
    if (s == "plain") return Format::plain;
    throw PreconditionError("unrecognized corpus format '" + std::string(s) + "'");
}

json to_json(const Utterance& u) { return {{"speaker", speaker_tag(u.speaker)}, {"text", u.text}}; }

json to_json(const Dialogue& d) {
    json utts = json::array();
    for (const auto& u : d.utterances) utts.push_back(to_json(u));
    return {{"id", d.id}, {"source", d.source}, {"utterances", utts}};
}

json to_json(const TurnTarget& t) {
    json ctx = json::array();
    for (const auto& u : t.context) ctx.push_back(to_json(u));
    return {{"dialogue_id", t.dialogue_id},
            {"source", t.source},
            {"t", t.t},
            {"context", ctx},
            {"response", to_json(t.response)}};
}

Utterance utterance_from_json(const json& j) {
    if (!j.is_object() || !j.contains("speaker") || !j.contains("text") || !j["speaker"].is_string() ||
        !j["text"].is_string())
        throw SchemaError("utterance requires string fields 'speaker' and 'text'");
    return Utterance::make(speaker_from_tag(j["speaker"].get<std::string>()), j["text"].get<std::string>());
}

namespace {

// Maps raw speaker labels onto A/B. Labels already spelled A/B are kept, anything
// else is assigned in order of first appearance.
std::vector<Speaker> normalize_speakers(const std::vector<std::string>& raw, const std::string& id,
                                        std::size_t line) {
    bool already_ab = true;
    for (const auto& s : raw) {
        std::string t = trim(s);
        if (t != "A" && t != "B" && t != "a" && t != "b") already_ab = false;
    }
    std::vector<Speaker> out;
    out.reserve(raw.size());
    if (already_ab) {
        for (const auto& s : raw) out.push_back(speaker_from_tag(s));
        return out;
    }
    std::map<std::string, Speaker> assigned;
    for (const auto& s : raw) {
        std::string key = trim(s);
        if (key.empty()) throw SchemaError("dialogue '" + id + "': empty speaker", line);
        auto it = assigned.find(key);
        if (it == assigned.end()) {
            if (assigned.size() == 2)
                throw SchemaError("dialogue '" + id + "': more than two speakers", line);
            it = assigned.emplace(key, assigned.empty() ? Speaker::A : Speaker::B).first;
        }
        out.push_back(it->second);
    }
    return out;
}

}  // namespace

Dialogue dialogue_from_json(const json& j, std::size_t line) {
    if (!j.is_object()) throw SchemaError("record is not an object", line);
    if (!j.contains("id") || !(j["id"].is_string() || j["id"].is_number_integer()))
        throw SchemaError("record missing 'id'", line);
    Dialogue d;
    d.id = j["id"].is_string() ? j["id"].get<std::string>() : std::to_string(j["id"].get<long long>());
    d.source = j.value("source", std::string{});
    if (!j.contains("utterances") || !j["utterances"].is_array())
        throw SchemaError("dialogue '" + d.id + "': missing 'utterances' list", line);
    std::vector<std::string> speakers;
    std::vector<std::string> texts;
    for (const auto& u : j["utterances"]) {
        if (!u.is_object() || !u.contains("speaker") || !u["speaker"].is_string())
            throw SchemaError("dialogue '" + d.id + "': utterance missing 'speaker'", line);
        if (!u.contains("text") || !u["text"].is_string())
            throw SchemaError("dialogue '" + d.id + "': utterance missing 'text'", line);
        speakers.push_back(u["speaker"].get<std::string>());
        texts.push_back(u["text"].get<std::string>());
    }
    if (texts.size() < 2)
        throw SchemaError("dialogue '" + d.id + "': needs at least 2 utterances, has " +
                              std::to_string(texts.size()),
                          line);
    auto tags = normalize_speakers(speakers, d.id, line);
    for (std::size_t i = 0; i < texts.size(); ++i) {
        try {
            d.utterances.push_back(Utterance::make(tags[i], texts[i]));
        } catch (const SchemaError&) {
            throw SchemaError("dialogue '" + d.id + "': utterance " + std::to_string(i + 1) + " has empty text",
                              line);
        }
    }
    return d;
}

TurnTarget target_from_json(const json& j) {
    TurnTarget t;
    t.dialogue_id = j.at("dialogue_id").get<std::string>();
    t.source = j.value("source", std::string{});
    t.t = j.at("t").get<int>();
    for (const auto& u : j.at("context")) t.context.push_back(utterance_from_json(u));
    t.response = utterance_from_json(j.at("response"));
    if (t.t < 2 || t.context.empty() || static_cast<int>(t.context.size()) != t.t - 1)
        throw SchemaError("target '" + t.dialogue_id + "' has inconsistent turn index");
    return t;
}

namespace {

std::vector<Dialogue> load_jsonl(const std::filesystem::path& path) {
    std::vector<Dialogue> out;
    for_each_jsonl(path, [&](std::size_t line, const json& j) { out.push_back(dialogue_from_json(j, line)); });
    return out;
}

std::vector<Dialogue> load_plain(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    const std::string stem = path.stem().string();
    std::vector<Dialogue> out;
    Dialogue cur;
    std::size_t block_line = 0;
    auto flush = [&]() {
        if (cur.utterances.empty()) return;
        if (cur.utterances.size() < 2)
            throw SchemaError("dialogue '" + cur.id + "': needs at least 2 utterances, has 1", block_line);
        out.push_back(std::move(cur));
        cur = Dialogue{};
    };
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) {
            flush();
            continue;
        }
        if (cur.utterances.empty()) {
            cur.id = stem + "-" + std::to_string(out.size() + 1);
            cur.source = stem;
            block_line = line_no;
        }
        auto colon = line.find(':');
        if (colon == std::string::npos) throw SchemaError("line lacks an 'A:'/'B:' speaker prefix", line_no);
        Speaker s;
        try {
            s = speaker_from_tag(line.substr(0, colon));
        } catch (const SchemaError&) {
            throw SchemaError("line lacks an 'A:'/'B:' speaker prefix", line_no);
        }
        try {
            cur.utterances.push_back(Utterance::make(s, line.substr(colon + 1)));
        } catch (const SchemaError&) {
            throw SchemaError("empty utterance text", line_no);
        }
    }
    flush();
    return out;
}

}  // namespace

std::vector<Dialogue> load_dialogues(const std::filesystem::path& path, Format format) {
    if (!std::filesystem::exists(path)) throw IoError("corpus file not found: " + path.string());
    auto dialogues = format == Format::jsonl ? load_jsonl(path) : load_plain(path);
    std::set<std::string> seen;
    for (const auto& d : dialogues) {
        if (!seen.insert(d.id).second) throw SchemaError("duplicate dialogue id '" + d.id + "'");
    }
    return dialogues;
}

void write_dialogues(const std::filesystem::path& path, const std::vector<Dialogue>& dialogues) {
    std::vector<json> records;
    records.reserve(dialogues.size());
    for (const auto& d : dialogues) records.push_back(to_json(d));
    write_jsonl(path, records);
}

std::vector<TurnTarget> extract_targets(const Dialogue& d) {
    std::vector<TurnTarget> out;
    for (std::size_t t = 2; t <= d.utterances.size(); ++t) {
        TurnTarget target;
        target.dialogue_id = d.id;
        target.source = d.source;
        target.t = static_cast<int>(t);
        target.context.assign(d.utterances.begin(), d.utterances.begin() + static_cast<long>(t - 1));
        target.response = d.utterances[t - 1];
        out.push_back(std::move(target));
    }
    return out;
}

std::string render_utterance(const Utterance& u) {
    std::string out(speaker_tag(u.speaker));
    out += ": ";
    out += flatten_newlines(u.text);
    return out;
}

std::string render_context(const std::vector<Utterance>& ctx) {
    std::string out;
    for (std::size_t i = 0; i < ctx.size(); ++i) {
        if (i) out.push_back('\n');
        out += render_utterance(ctx[i]);
    }
    return out;
}

std::vector<Utterance> parse_context(std::string_view text) {
    std::vector<Utterance> out;
    for (const auto& line : split_lines(text)) {
        if (line.size() < 3 || line[1] != ':' || line[2] != ' ')
            throw SchemaError("context line lacks a speaker tag: '" + line + "'");
        out.push_back(Utterance{speaker_from_tag(line.substr(0, 1)), line.substr(3)});
    }
    return out;
}

}  // namespace dialcot::corpus
