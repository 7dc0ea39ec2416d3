// SPDX-License-Identifier: Apache-2.0
//
// Dialogue data model, corpus ingestion and turn-target extraction.

#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "dialcot/common.hpp"

namespace dialcot::corpus {

enum class Speaker { A, B };

std::string_view speaker_tag(Speaker s);
Speaker speaker_from_tag(std::string_view tag);
Speaker other(Speaker s);

struct Utterance {
    Speaker speaker = Speaker::A;
    std::string text;

    /// Flattens internal newlines and trims; throws SchemaError on empty text.
    static Utterance make(Speaker speaker, std::string_view text);

    bool operator==(const Utterance&) const = default;
};

struct Dialogue {
    std::string id;
    std::string source;
    std::vector<Utterance> utterances;

    bool operator==(const Dialogue&) const = default;
};

/// The response at 1-based turn `t` together with the turns preceding it.
struct TurnTarget {
    std::string dialogue_id;
    std::string source;
    int t = 0;
    std::vector<Utterance> context;
    Utterance response;

    bool operator==(const TurnTarget&) const = default;
};

enum class Format { jsonl, plain };
Format format_from_string(std::string_view s);

/// Loads and validates a corpus. Speakers are normalized to A/B; ids must be unique.
std::vector<Dialogue> load_dialogues(const std::filesystem::path& path, Format format);

/// Writes the canonical line-delimited form.
void write_dialogues(const std::filesystem::path& path, const std::vector<Dialogue>& dialogues);

json to_json(const Utterance& u);
json to_json(const Dialogue& d);
json to_json(const TurnTarget& t);
Utterance utterance_from_json(const json& j);
Dialogue dialogue_from_json(const json& j, std::size_t line = 0);
TurnTarget target_from_json(const json& j);

/// One target per turn t in [2, len(d)], ordered by t.
std::vector<TurnTarget> extract_targets(const Dialogue& d);

/// "<TAG>: <text>" per utterance, newline-joined, no trailing newline.
std::string render_context(const std::vector<Utterance>& ctx);
std::string render_utterance(const Utterance& u);

/// Inverse of render_context for texts without internal newlines.
std::vector<Utterance> parse_context(std::string_view text);

}  // namespace dialcot::corpus
