// SPDX-License-Identifier: Apache-2.0

#include "dialcot/config.hpp"

#include <algorithm>
#include <cctype>
#include <regex>
#include <set>

#include "dialcot/char_lm.hpp"
#include "dialcot/rationale.hpp"

namespace dialcot::config {

namespace {

json yaml_to_json(const YAML::Node& node) {
    switch (node.Type()) {
        case YAML::NodeType::Null:
        case YAML::NodeType::Undefined:
            return nullptr;
        case YAML::NodeType::Sequence: {
            json out = json::array();
            for (const auto& item : node) out.push_back(yaml_to_json(item));
            return out;
        }
        case YAML::NodeType::Map: {
            json out = json::object();
            for (const auto& kv : node) out[kv.first.as<std::string>()] = yaml_to_json(kv.second);
            return out;
        }
        case YAML::NodeType::Scalar:
            break;
    }
    const std::string s = node.Scalar();
    if (node.Tag() == "!") return s;  // quoted
    if (s == "true" || s == "True" || s == "yes") return true;
    if (s == "false" || s == "False" || s == "no") return false;
    if (s == "null" || s == "~") return nullptr;
    static const std::regex int_re(R"(^[-+]?[0-9]+$)");
    static const std::regex float_re(R"(^[-+]?([0-9]+\.?[0-9]*|\.[0-9]+)([eE][-+]?[0-9]+)?$)");
    if (std::regex_match(s, int_re)) {
        try {
            return std::stoll(s);
        } catch (const std::out_of_range&) {
            return s;
        }
    }
    if (std::regex_match(s, float_re)) return std::stod(s);
    return s;
}

void check_keys(const json& section, const std::string& name, std::initializer_list<std::string_view> allowed) {
    if (section.is_null()) return;
    if (!section.is_object()) throw ConfigError("section '" + name + "' must be a mapping");
    for (const auto& [key, _] : section.items())
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw ConfigError("unknown key '" + name + "." + key + "'");
}

template <class T>
void read(const json& section, const char* key, T& out) {
    if (section.is_object() && section.contains(key) && !section.at(key).is_null()) out = section.at(key).get<T>();
}

BackendConfig read_backend(const json& j, const std::string& name) {
    check_keys(j, name,
               {"kind", "name", "base_url", "model", "api_key_env", "enable_scoring", "timeout_seconds", "model_path",
                "replies"});
    BackendConfig b;
    b.name = name;
    read(j, "kind", b.kind);
    read(j, "name", b.name);
    read(j, "base_url", b.base_url);
    read(j, "model", b.model);
    read(j, "api_key_env", b.api_key_env);
    read(j, "enable_scoring", b.enable_scoring);
    read(j, "timeout_seconds", b.timeout_seconds);
    read(j, "model_path", b.model_path);
    read(j, "replies", b.replies);
    return b;
}

json backend_json(const BackendConfig& b) {
    return {{"kind", b.kind},
            {"name", b.name},
            {"base_url", b.base_url},
            {"model", b.model},
            {"api_key_env", b.api_key_env},
            {"enable_scoring", b.enable_scoring},
            {"timeout_seconds", b.timeout_seconds},
            {"model_path", b.model_path},
            {"replies", b.replies}};
}

const json& section_of(const json& root, const char* name) {
    static const json null_json;
    return root.contains(name) ? root.at(name) : null_json;
}

}  // namespace

RunConfig RunConfig::defaults() { return from_yaml(YAML::Node(YAML::NodeType::Map)); }

RunConfig RunConfig::load(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
    YAML::Node root(YAML::NodeType::Map);
    if (!path.empty()) {
        if (!std::filesystem::exists(path)) throw ConfigError("config file " + path.string() + " does not exist");
        try {
            root = YAML::LoadFile(path.string());
        } catch (const YAML::Exception& e) {
            throw ConfigError("config file " + path.string() + ": " + e.what());
        }
        if (root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
    }
    for (const auto& o : overrides) apply_override(root, o);
    return from_yaml(root);
}

void apply_override(YAML::Node& root, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    const std::string key = trim(assignment.substr(0, eq));
    const std::string value = assignment.substr(eq + 1);
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        parts.push_back(key.substr(start, dot - start));
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    for (const auto& p : parts)
        if (p.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    if (!root.IsMap()) throw ConfigError("config root must be a mapping");
    YAML::Node parsed;
    try {
        parsed = YAML::Load(value);
    } catch (const YAML::Exception& e) {
        throw ConfigError("override '" + assignment + "': " + e.what());
    }
    // yaml-cpp nodes are handles: walk with fresh copies so the root is not rebound.
    std::vector<YAML::Node> chain{root};
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        YAML::Node next = chain.back()[parts[i]];
        if (!next.IsDefined() || next.IsNull()) {
            chain.back()[parts[i]] = YAML::Node(YAML::NodeType::Map);
            next = chain.back()[parts[i]];
        }
        if (!next.IsMap()) throw ConfigError("override '" + key + "': '" + parts[i] + "' is not a section");
        chain.push_back(next);
    }
    chain.back()[parts.back()] = parsed;
}

RunConfig RunConfig::from_yaml(const YAML::Node& node) {
    const json root = yaml_to_json(node);
    RunConfig c;
    if (root.is_null()) return c;
    if (!root.is_object()) throw ConfigError("config root must be a mapping");
    check_keys(root, "<root>",
               {"run_id", "output_root", "seed", "corpus", "demos", "generator", "scorer", "agent", "gateway",
                "pipeline", "filter", "critic", "reasoner", "respond", "curation"});
    try {
        read(root, "run_id", c.run_id);
        read(root, "output_root", c.output_root);
        read(root, "seed", c.seed);

        const auto& corpus = section_of(root, "corpus");
        check_keys(corpus, "corpus", {"path", "format"});
        read(corpus, "path", c.corpus_path);
        read(corpus, "format", c.corpus_format);

        const auto& demos = section_of(root, "demos");
        check_keys(demos, "demos", {"path"});
        read(demos, "path", c.demos_path);

        c.generator = read_backend(section_of(root, "generator"), "generator");
        c.scorer = read_backend(section_of(root, "scorer"), "scorer");
        c.agent = read_backend(section_of(root, "agent"), "agent");

        const auto& gw = section_of(root, "gateway");
        check_keys(gw, "gateway",
                   {"max_attempts", "backoff_base_ms", "backoff_max_ms", "parallelism", "requests_per_minute", "cache"});
        read(gw, "max_attempts", c.gateway.max_attempts);
        read(gw, "backoff_base_ms", c.gateway.backoff_base_ms);
        read(gw, "backoff_max_ms", c.gateway.backoff_max_ms);
        read(gw, "parallelism", c.gateway.parallelism);
        read(gw, "requests_per_minute", c.gateway.requests_per_minute);
        read(gw, "cache", c.gateway.cache);

        const auto& p = section_of(root, "pipeline");
        check_keys(p, "pipeline", {"n", "k", "temperature", "max_tokens", "workers", "max_dialogues"});
        read(p, "n", c.pipeline.n);
        read(p, "k", c.pipeline.k);
        read(p, "temperature", c.pipeline.temperature);
        read(p, "max_tokens", c.pipeline.max_tokens);
        read(p, "workers", c.pipeline.workers);
        read(p, "max_dialogues", c.pipeline.max_dialogues);

        const auto& f = section_of(root, "filter");
        check_keys(f, "filter", {"tau", "critic_threshold", "max_input_tokens"});
        read(f, "tau", c.filter.tau);
        read(f, "critic_threshold", c.filter.critic_threshold);
        read(f, "max_input_tokens", c.filter.max_input_tokens);

        const auto& cr = section_of(root, "critic");
        check_keys(cr, "critic", {"epochs", "batch_size", "learning_rate", "max_tokens"});
        read(cr, "epochs", c.critic.epochs);
        read(cr, "batch_size", c.critic.batch_size);
        read(cr, "learning_rate", c.critic.learning_rate);
        read(cr, "max_tokens", c.critic.max_tokens);

        const auto& r = section_of(root, "reasoner");
        check_keys(r, "reasoner",
                   {"learning_rate", "epochs", "batch_size", "embed_dim", "orders", "mode", "split", "max_tokens"});
        read(r, "learning_rate", c.reasoner.hyperparams.learning_rate);
        read(r, "epochs", c.reasoner.hyperparams.epochs);
        read(r, "batch_size", c.reasoner.hyperparams.batch_size);
        read(r, "embed_dim", c.reasoner.hyperparams.model.embed_dim);
        read(r, "orders", c.reasoner.hyperparams.model.orders);
        read(r, "mode", c.reasoner.mode);
        read(r, "split", c.reasoner.split);
        read(r, "max_tokens", c.reasoner.max_tokens);

        const auto& rs = section_of(root, "respond");
        check_keys(rs, "respond", {"mode", "style", "temperature", "max_tokens", "targets"});
        read(rs, "mode", c.respond.mode);
        read(rs, "style", c.respond.style);
        read(rs, "temperature", c.respond.temperature);
        read(rs, "max_tokens", c.respond.max_tokens);
        read(rs, "targets", c.respond.targets);

        const auto& cu = section_of(root, "curation");
        check_keys(cu, "curation", {"host", "port", "token", "static_dir"});
        read(cu, "host", c.curation.host);
        read(cu, "port", c.curation.port);
        read(cu, "token", c.curation.token);
        read(cu, "static_dir", c.curation.static_dir);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config value has the wrong type: ") + e.what());
    }
    // One seed drives every random choice.
    c.critic.seed = c.seed;
    c.reasoner.hyperparams.seed = c.seed;
    return c;
}

void RunConfig::validate(bool check_paths) const {
    auto fail = [](const std::string& m) { throw ConfigError(m); };
    if (run_id.empty() || run_id.find('/') != std::string::npos) fail("run_id must be a non-empty name");
    if (output_root.empty()) fail("output_root is empty");
    if (corpus_format != "jsonl" && corpus_format != "plain") fail("corpus.format must be jsonl or plain");
    for (const auto* b : {&generator, &scorer, &agent}) {
        if (b->kind != "stub" && b->kind != "remote_chat" && b->kind != "local_causal")
            fail(b->name + ".kind must be stub, remote_chat or local_causal");
        if (b->kind == "local_causal" && b->model_path.empty()) fail(b->name + ".model_path is required");
        if (b->kind == "remote_chat" && b->model.empty()) fail(b->name + ".model is required");
        if (b->timeout_seconds < 1) fail(b->name + ".timeout_seconds must be positive");
        if (check_paths && b->kind == "local_causal" && !std::filesystem::exists(b->model_path))
            fail(b->name + ".model_path " + b->model_path + " does not exist");
    }
    if (scorer.kind == "remote_chat" && !scorer.enable_scoring)
        fail("scorer.enable_scoring must be true for a remote scorer");
    if (gateway.max_attempts < 1) fail("gateway.max_attempts must be >= 1");
    if (gateway.backoff_base_ms < 0 || gateway.backoff_max_ms < gateway.backoff_base_ms)
        fail("gateway backoff settings are inconsistent");
    if (gateway.parallelism < 1 || gateway.parallelism > 1024) fail("gateway.parallelism must be in [1, 1024]");
    if (gateway.requests_per_minute < 0) fail("gateway.requests_per_minute must be >= 0");
    if (pipeline.n < 1) fail("pipeline.n must be >= 1");
    if (pipeline.k < 1 || pipeline.k > 5) fail("pipeline.k must be in [1, 5]");
    if (pipeline.temperature < 0 || pipeline.temperature > 2) fail("pipeline.temperature must be in [0, 2]");
    if (pipeline.max_tokens < 1) fail("pipeline.max_tokens must be >= 1");
    if (pipeline.workers < 1) fail("pipeline.workers must be >= 1");
    if (pipeline.max_dialogues < 0) fail("pipeline.max_dialogues must be >= 0");
    try {
        filter.validate();
    } catch (const std::exception& e) {
        fail(std::string("filter: ") + e.what());
    }
    if (critic.epochs < 1 || critic.batch_size < 1 || !(critic.learning_rate > 0) || critic.max_tokens < 2)
        fail("critic settings out of range");
    const auto& h = reasoner.hyperparams;
    if (h.epochs < 1 || h.batch_size < 1 || !(h.learning_rate > 0) || h.model.embed_dim < 1 || h.model.orders.empty())
        fail("reasoner settings out of range");
    for (int o : h.model.orders)
        if (o < 1) fail("reasoner.orders must be positive");
    if (reasoner.mode != "full" && reasoner.mode != "answer_only") fail("reasoner.mode must be full or answer_only");
    if (!(reasoner.split > 0 && reasoner.split < 1)) fail("reasoner.split must be in (0, 1)");
    if (reasoner.max_tokens < 1) fail("reasoner.max_tokens must be >= 1");
    try {
        respond::knowledge_mode_from_string(respond.mode);
        respond::agent_style_from_string(respond.style);
    } catch (const std::exception& e) {
        fail(std::string("respond: ") + e.what());
    }
    if (respond.mode == "external") fail("respond.mode external needs knowledge text and is library-only");
    if (respond.targets != "last" && respond.targets != "all") fail("respond.targets must be last or all");
    if (respond.max_tokens < 1 || respond.temperature < 0) fail("respond settings out of range");
    if (curation.port < 0 || curation.port > 65535) fail("curation.port must be in [0, 65535]");
    if (check_paths) {
        if (!corpus_path.empty() && !std::filesystem::exists(corpus_path))
            fail("corpus.path " + corpus_path + " does not exist");
        if (!demos_path.empty() && !std::filesystem::exists(demos_path))
            fail("demos.path " + demos_path + " does not exist");
        if (!curation.static_dir.empty() && !std::filesystem::is_directory(curation.static_dir))
            fail("curation.static_dir " + curation.static_dir + " is not a directory");
    }
}

json RunConfig::to_json() const {
    const auto& h = reasoner.hyperparams;
    return {{"run_id", run_id},
            {"output_root", output_root},
            {"seed", seed},
            {"corpus", {{"path", corpus_path}, {"format", corpus_format}}},
            {"demos", {{"path", demos_path}}},
            {"generator", backend_json(generator)},
            {"scorer", backend_json(scorer)},
            {"agent", backend_json(agent)},
            {"gateway",
             {{"max_attempts", gateway.max_attempts},
              {"backoff_base_ms", gateway.backoff_base_ms},
              {"backoff_max_ms", gateway.backoff_max_ms},
              {"parallelism", gateway.parallelism},
              {"requests_per_minute", gateway.requests_per_minute},
              {"cache", gateway.cache}}},
            {"pipeline",
             {{"n", pipeline.n},
              {"k", pipeline.k},
              {"temperature", pipeline.temperature},
              {"max_tokens", pipeline.max_tokens},
              {"workers", pipeline.workers},
              {"max_dialogues", pipeline.max_dialogues}}},
            {"filter", filter.to_json()},
            {"critic", critic.to_json()},
            {"reasoner",
             {{"learning_rate", h.learning_rate},
              {"epochs", h.epochs},
              {"batch_size", h.batch_size},
              {"embed_dim", h.model.embed_dim},
              {"orders", h.model.orders},
              {"mode", reasoner.mode},
              {"split", reasoner.split},
              {"max_tokens", reasoner.max_tokens}}},
            {"respond",
             {{"mode", respond.mode},
              {"style", respond.style},
              {"temperature", respond.temperature},
              {"max_tokens", respond.max_tokens},
              {"targets", respond.targets}}},
            {"curation",
             {{"host", curation.host},
              {"port", curation.port},
              {"token", curation.token.empty() ? "" : "<set>"},
              {"static_dir", curation.static_dir}}}};
}

std::string RunConfig::hash() const { return sha256_hex(to_json().dump()); }

gateway::GenParams RunConfig::generation_params() const {
    gateway::GenParams p;
    p.temperature = pipeline.temperature;
    p.max_tokens = pipeline.max_tokens;
    p.seed = static_cast<std::int64_t>(seed);
    return p;
}

// ---------------------------------------------------------------------------
// backends

namespace {

std::vector<std::string> content_words(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (cur.size() >= 4) out.push_back(cur);
        cur.clear();
    };
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c)) cur.push_back(static_cast<char>(std::tolower(c)));
        else flush();
    }
    flush();
    return out;
}

std::string utterance_text(const std::string& line) {
    if (line.size() > 3 && (line[0] == 'A' || line[0] == 'B') && line[1] == ':') return trim(line.substr(2));
    return trim(line);
}

}  // namespace

std::string synthetic_rationale(const std::string& prompt, std::int64_t seed) {
    static const std::string kResp = "\n\nGround-truth Response:\n";
    const auto rpos = prompt.rfind(kResp);
    if (rpos == std::string::npos) return "None";
    const auto cstart = prompt.rfind("\n\n", rpos - 1);
    const auto context = prompt.substr(cstart == std::string::npos ? 0 : cstart + 2,
                                       rpos - (cstart == std::string::npos ? 0 : cstart + 2));
    const auto rend = prompt.find('\n', rpos + kResp.size());
    const auto response = utterance_text(prompt.substr(rpos + kResp.size(), rend - rpos - kResp.size()));
    const auto lines = split_lines(context);
    const std::string last = lines.empty() ? "" : utterance_text(lines.back());
    const std::string first = lines.empty() ? "" : utterance_text(lines.front());

    int k = 3;
    static const std::regex hop_re(R"(([0-9]+)-hop)");
    std::smatch m;
    if (std::regex_search(prompt, m, hop_re)) k = std::clamp(std::stoi(m[1].str()), 1, 5);

    const auto resp_words = content_words(response);
    const auto first_words = content_words(first);
    const auto s = static_cast<std::uint64_t>(seed);
    using rationale::Relation;
    static const Relation kRels[] = {Relation::xAttr, Relation::xIntent, Relation::xNeed, Relation::xReact,
                                     Relation::xWant, Relation::oReact, Relation::oWant, Relation::Causes};
    std::string out;
    for (int i = 1; i <= k; ++i) {
        const Relation rel = kRels[(s + static_cast<std::uint64_t>(i) * 3) % std::size(kRels)];
        std::string answer;
        if (i == 1) {
            answer = "Person A said: " + (last.empty() ? std::string("nothing") : last);
        } else if (i == k) {
            answer = "Person B wants to talk about " +
                     (resp_words.empty() ? std::string("the topic") : join(resp_words, " "));
        } else {
            answer = "Earlier the dialogue mentioned " +
                     (first_words.empty() ? std::string("the topic") : join(first_words, " "));
        }
        if (i > 1) out += "\n";
        out += "Subquestion " + std::to_string(i) + ": What is relevant to Person B's next turn? (" +
               std::string(rationale::to_string(rel)) + ")\n";
        out += "Subanswer " + std::to_string(i) + ": " + answer;
    }
    return out;
}

std::shared_ptr<gateway::Backend> make_backend(const BackendConfig& cfg, std::string_view role) {
    if (cfg.kind == "remote_chat") {
        gateway::RemoteChatBackend::Options o;
        o.name = cfg.name;
        o.base_url = cfg.base_url;
        o.model = cfg.model;
        o.api_key_env = cfg.api_key_env;
        o.enable_scoring = cfg.enable_scoring;
        o.timeout_seconds = cfg.timeout_seconds;
        return std::make_shared<gateway::RemoteChatBackend>(o);
    }
    if (cfg.kind == "local_causal") {
        auto model = std::make_shared<const lm::CharLm>(lm::CharLm::load(cfg.model_path));
        return std::make_shared<gateway::LocalCausalBackend>(cfg.name, std::move(model));
    }
    if (cfg.kind != "stub") throw ConfigError("unknown backend kind '" + cfg.kind + "'");
    gateway::StubBackend::Options o;
    o.name = cfg.name;
    if (!cfg.replies.empty()) {
        o.replies = cfg.replies;
    } else if (role == "generator") {
        o.reply_fn = [](const std::string& prompt, const gateway::GenParams& p) {
            return synthetic_rationale(prompt, p.seed.value_or(0));
        };
    } else {
        // Echo of the last history line: a trivial but deterministic agent.
        o.reply_fn = [](const std::string& prompt, const gateway::GenParams&) {
            const auto lines = split_lines(prompt);
            for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
                const auto l = trim(*it);
                if (l.size() > 3 && (l[0] == 'A' || l[0] == 'B') && l[1] == ':') return trim(l.substr(2));
            }
            return std::string("ok");
        };
    }
    // Tokens already present in the conditioning text are cheap; others are expensive.
    o.logprob_fn = [](const std::string& context, std::size_t, const std::string& token) {
        std::string t;
        for (char ch : token)
            if (std::isalnum(static_cast<unsigned char>(ch))) t.push_back(static_cast<char>(std::tolower(ch)));
        if (t.empty()) return -1.0;
        return to_lower(context).find(t) != std::string::npos ? -1.0 : -4.0;
    };
    return std::make_shared<gateway::StubBackend>(o);
}

std::unique_ptr<gateway::Gateway> make_gateway(const BackendConfig& cfg, std::string_view role,
                                               const GatewayConfig& gw,
                                               const std::optional<std::filesystem::path>& cache_dir) {
    gateway::GatewayOptions o;
    o.max_attempts = gw.max_attempts;
    o.backoff_base = std::chrono::milliseconds(gw.backoff_base_ms);
    o.backoff_max = std::chrono::milliseconds(gw.backoff_max_ms);
    o.parallelism = gw.parallelism;
    o.requests_per_minute = gw.requests_per_minute;
    if (gw.cache) o.cache_dir = cache_dir;
    return std::make_unique<gateway::Gateway>(make_backend(cfg, role), o);
}

}  // namespace dialcot::config
