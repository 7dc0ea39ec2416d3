// SPDX-License-Identifier: Apache-2.0

#include "dialcot/curation.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <mutex>
#include <set>

#include <httplib.h>
#include <spdlog/spdlog.h>

namespace dialcot::curation {

std::string_view to_string(Origin o) { return o == Origin::factual ? "factual" : "counterfactual"; }
std::string_view to_string(Status s) { return s == Status::pending ? "pending" : "labeled"; }
std::string_view to_string(Label l) { return l == Label::consistent ? "consistent" : "inconsistent"; }
std::string_view to_string(Policy p) { return p == Policy::majority ? "majority" : "any"; }

std::optional<Origin> origin_from_string(std::string_view s) {
    if (s == "factual") return Origin::factual;
    if (s == "counterfactual") return Origin::counterfactual;
    return std::nullopt;
}
std::optional<Status> status_from_string(std::string_view s) {
    if (s == "pending") return Status::pending;
    if (s == "labeled") return Status::labeled;
    return std::nullopt;
}
std::optional<Label> label_from_string(std::string_view s) {
    if (s == "consistent") return Label::consistent;
    if (s == "inconsistent") return Label::inconsistent;
    return std::nullopt;
}
std::optional<Policy> policy_from_string(std::string_view s) {
    if (s == "majority") return Policy::majority;
    if (s == "any") return Policy::any;
    return std::nullopt;
}

namespace {

std::string now_iso8601() {
    const auto now = std::chrono::system_clock::now();
    const auto t = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1,
                  tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
    return buf;
}

json pairs_json(const rationale::Rationale& r) {
    json out = json::array();
    for (const auto& p : r.pairs)
        out.push_back({{"index", p.index},
                       {"question", p.question},
                       {"relation", rationale::to_string(p.relation)},
                       {"answer", p.answer}});
    return out;
}

rationale::Rationale parse_or_throw(const std::string& text, bool counterfactual) {
    auto parsed = rationale::parse_rationale(text);
    if (auto* f = std::get_if<rationale::ParseFailure>(&parsed))
        throw SchemaError("rationale does not parse: " + f->message);
    auto r = std::get<rationale::Rationale>(std::move(parsed));
    r.is_counterfactual = counterfactual;
    return r;
}

json labeled_json(const filters::LabeledRationale& lr) {
    json j = corpus::to_json(lr.first);
    j["rationale_text"] = rationale::render_rationale(lr.second);
    return j;
}

}  // namespace

json to_json(const CurationItem& item, Status status, std::size_t label_count) {
    return {{"item_id", item.item_id},
            {"dialogue_id", item.target.dialogue_id},
            {"t", item.target.t},
            {"candidate_index", item.candidate_index},
            {"context", corpus::render_context(item.target.context)},
            {"response", corpus::render_utterance(item.target.response)},
            {"rationale_text", rationale::render_rationale(item.rationale)},
            {"pairs", pairs_json(item.rationale)},
            {"origin", to_string(item.origin)},
            {"status", to_string(status)},
            {"label_count", label_count}};
}

json to_json(const LabelEvent& e) {
    return {{"item_id", e.item_id},
            {"annotator_id", e.annotator_id},
            {"label", to_string(e.label)},
            {"timestamp", e.timestamp}};
}

LabelEvent label_event_from_json(const json& j) {
    if (!j.is_object()) throw PreconditionError("label event must be an object");
    LabelEvent e;
    if (!j.contains("item_id") || !j.at("item_id").is_string()) throw PreconditionError("item_id is required");
    if (!j.contains("annotator_id") || !j.at("annotator_id").is_string())
        throw PreconditionError("annotator_id is required");
    if (!j.contains("label") || !j.at("label").is_string()) throw PreconditionError("label is required");
    e.item_id = j.at("item_id").get<std::string>();
    e.annotator_id = trim(j.at("annotator_id").get<std::string>());
    if (e.annotator_id.empty()) throw PreconditionError("annotator_id is empty");
    auto label = label_from_string(j.at("label").get<std::string>());
    if (!label) throw PreconditionError("label must be 'consistent' or 'inconsistent'");
    e.label = *label;
    if (j.contains("timestamp") && j.at("timestamp").is_string()) e.timestamp = j.at("timestamp").get<std::string>();
    return e;
}

std::vector<CurationItem> build_curation_items(const std::vector<corpus::Dialogue>& corpus,
                                               const std::vector<rationalizer::CandidateRow>& candidates,
                                               const std::vector<rationalizer::CounterfactualRecord>& counterfactuals) {
    std::map<std::pair<std::string, int>, corpus::TurnTarget> targets;
    for (const auto& d : corpus)
        for (auto& t : corpus::extract_targets(d)) targets.emplace(std::make_pair(t.dialogue_id, t.t), std::move(t));

    std::vector<CurationItem> items;
    for (const auto& row : candidates) {
        auto it = targets.find({row.dialogue_id, row.t});
        if (it == targets.end())
            throw SchemaError("candidate references unknown target " + row.dialogue_id + "#" + std::to_string(row.t));
        if (!row.slot.text) continue;
        auto parsed = rationale::parse_rationale(*row.slot.text);
        if (!rationale::parsed(parsed)) continue;
        CurationItem item;
        item.item_id = "f-" + row.dialogue_id + "-" + std::to_string(row.t) + "-" +
                       std::to_string(row.slot.candidate_index);
        item.target = it->second;
        item.candidate_index = row.slot.candidate_index;
        item.rationale = std::get<rationale::Rationale>(std::move(parsed));
        items.push_back(std::move(item));
    }
    std::map<std::pair<std::string, int>, int> cf_seen;
    for (const auto& cf : counterfactuals) {
        const int k = ++cf_seen[{cf.target.dialogue_id, cf.target.t}];
        CurationItem item;
        item.item_id = "c-" + cf.target.dialogue_id + "-" + std::to_string(cf.target.t) + "-" + std::to_string(k);
        item.target = cf.target;
        item.candidate_index = k;
        item.rationale = parse_or_throw(cf.rationale_text, true);
        item.origin = Origin::counterfactual;
        items.push_back(std::move(item));
    }
    std::stable_sort(items.begin(), items.end(), [](const CurationItem& a, const CurationItem& b) {
        return std::tie(a.target.dialogue_id, a.target.t, a.candidate_index, a.origin) <
               std::tie(b.target.dialogue_id, b.target.t, b.candidate_index, b.origin);
    });
    std::set<std::string> ids;
    for (const auto& i : items)
        if (!ids.insert(i.item_id).second) throw SchemaError("duplicate item id " + i.item_id);
    return items;
}

void write_items(const std::filesystem::path& path, const std::vector<CurationItem>& items) {
    std::vector<json> rows;
    for (const auto& i : items) {
        json j = corpus::to_json(i.target);
        j["item_id"] = i.item_id;
        j["candidate_index"] = i.candidate_index;
        j["rationale_text"] = rationale::render_rationale(i.rationale);
        j["origin"] = to_string(i.origin);
        rows.push_back(std::move(j));
    }
    write_jsonl(path, rows);
}

std::vector<CurationItem> load_items(const std::filesystem::path& path) {
    std::vector<CurationItem> items;
    for_each_jsonl(path, [&](std::size_t line, const json& j) {
        try {
            CurationItem i;
            i.item_id = j.at("item_id").get<std::string>();
            i.target = corpus::target_from_json(j);
            i.candidate_index = j.value("candidate_index", 1);
            auto origin = origin_from_string(j.at("origin").get<std::string>());
            if (!origin) throw SchemaError("unknown origin", line);
            i.origin = *origin;
            i.rationale = parse_or_throw(j.at("rationale_text").get<std::string>(), i.origin == Origin::counterfactual);
            items.push_back(std::move(i));
        } catch (const json::exception& e) {
            throw SchemaError(std::string("bad curation item: ") + e.what(), line);
        }
    });
    return items;
}

json CriticPairs::to_json() const {
    json pos = json::array(), neg = json::array();
    for (const auto& p : positives) pos.push_back(labeled_json(p));
    for (const auto& c : counterfactuals) neg.push_back(labeled_json(c));
    return {{"positives", pos}, {"counterfactuals", neg}};
}

CriticPairs CriticPairs::from_json(const json& j) {
    CriticPairs out;
    try {
        for (const auto& p : j.at("positives"))
            out.positives.emplace_back(corpus::target_from_json(p),
                                       parse_or_throw(p.at("rationale_text").get<std::string>(), false));
        for (const auto& c : j.at("counterfactuals"))
            out.counterfactuals.emplace_back(corpus::target_from_json(c),
                                             parse_or_throw(c.at("rationale_text").get<std::string>(), true));
    } catch (const json::exception& e) {
        throw SchemaError(std::string("bad critic pairs document: ") + e.what());
    }
    return out;
}

// ---------------------------------------------------------------------------
// store

LabelStore::LabelStore(std::vector<CurationItem> items, std::filesystem::path log_path)
    : items_(std::move(items)), log_path_(std::move(log_path)) {
    for (std::size_t i = 0; i < items_.size(); ++i)
        if (!by_id_.emplace(items_[i].item_id, i).second) throw SchemaError("duplicate item id " + items_[i].item_id);
    if (!std::filesystem::exists(log_path_)) return;

    std::string data = read_file(log_path_);
    const auto last_nl = data.find_last_of('\n');
    const std::size_t complete = last_nl == std::string::npos ? 0 : last_nl + 1;
    if (complete < data.size()) {
        // The final write never finished, so it was never acknowledged.
        spdlog::warn("label log {}: dropping torn final line", log_path_.string());
        std::filesystem::resize_file(log_path_, complete);
        data.resize(complete);
    }
    std::size_t line_no = 0, start = 0;
    while (start < data.size()) {
        const auto end = data.find('\n', start);
        const std::string line = data.substr(start, end - start);
        start = end + 1;
        ++line_no;
        if (trim(line).empty()) continue;
        LabelEvent e;
        try {
            e = label_event_from_json(json::parse(line));
        } catch (const std::exception& ex) {
            throw SchemaError(std::string("bad label event: ") + ex.what(), line_no);
        }
        ++log_lines_;
        if (!by_id_.count(e.item_id)) {
            spdlog::warn("label log line {} references unknown item {}", line_no, e.item_id);
            continue;
        }
        labels_[e.item_id][e.annotator_id] = e;
    }
}

ItemPage LabelStore::list(const ItemQuery& q) const {
    if (q.page < 1) throw PreconditionError("page must be >= 1");
    if (q.page_size < 1 || q.page_size > 500) throw PreconditionError("page_size must be in [1, 500]");
    std::shared_lock lock(mu_);
    ItemPage out;
    out.page = q.page;
    out.page_size = q.page_size;
    const std::size_t first = static_cast<std::size_t>(q.page - 1) * static_cast<std::size_t>(q.page_size);
    for (const auto& item : items_) {
        auto it = labels_.find(item.item_id);
        const std::size_t n = it == labels_.end() ? 0 : it->second.size();
        const Status status = n ? Status::labeled : Status::pending;
        if (q.status && *q.status != status) continue;
        if (q.origin && *q.origin != item.origin) continue;
        if (out.total >= first && out.total < first + static_cast<std::size_t>(q.page_size))
            out.items.push_back(to_json(item, status, n));
        ++out.total;
    }
    return out;
}

LabelEvent LabelStore::submit(LabelEvent event) {
    event.annotator_id = trim(event.annotator_id);
    if (event.annotator_id.empty()) throw PreconditionError("annotator_id is empty");
    if (!by_id_.count(event.item_id)) throw NotFoundError("unknown item " + event.item_id);
    if (event.timestamp.empty()) event.timestamp = now_iso8601();
    std::unique_lock lock(mu_);
    append_line_durable(log_path_, to_json(event).dump());
    ++log_lines_;
    labels_[event.item_id][event.annotator_id] = event;
    return event;
}

bool LabelStore::qualifies(const std::string& item_id, Policy policy) const {
    auto it = labels_.find(item_id);
    if (it == labels_.end()) return false;
    std::size_t yes = 0;
    for (const auto& [_, e] : it->second)
        if (e.label == Label::consistent) ++yes;
    if (policy == Policy::any) return yes > 0;
    return 2 * yes > it->second.size();
}

CriticPairs LabelStore::export_pairs(Policy policy) const {
    std::shared_lock lock(mu_);
    std::map<std::string, const CurationItem*> positive, negative;
    for (const auto& item : items_) {
        const auto& id = item.target.dialogue_id;
        if (item.origin == Origin::factual) {
            if (!positive.count(id) && qualifies(item.item_id, policy)) positive[id] = &item;
        } else if (!negative.count(id)) {
            negative[id] = &item;
        }
    }
    CriticPairs out;
    for (const auto& [id, pos] : positive) {
        auto it = negative.find(id);
        if (it == negative.end()) {
            spdlog::warn("dialogue {} has a consistent rationale but no counterfactual; not exported", id);
            continue;
        }
        out.positives.emplace_back(pos->target, pos->rationale);
        out.counterfactuals.emplace_back(it->second->target, it->second->rationale);
        out.positives.back().second.is_counterfactual = false;
        out.counterfactuals.back().second.is_counterfactual = true;
    }
    if (out.positives.empty()) throw PreconditionError("no qualifying items to export");
    return out;
}

json LabelStore::stats() const {
    std::shared_lock lock(mu_);
    json by_origin = json::object();
    std::size_t pending = 0, labeled = 0, events = 0;
    for (const auto& o : {Origin::factual, Origin::counterfactual})
        by_origin[std::string(to_string(o))] = {{"pending", 0}, {"labeled", 0}};
    for (const auto& item : items_) {
        auto it = labels_.find(item.item_id);
        const bool is_labeled = it != labels_.end() && !it->second.empty();
        if (is_labeled) events += it->second.size();
        (is_labeled ? labeled : pending)++;
        auto& slot = by_origin[std::string(to_string(item.origin))][is_labeled ? "labeled" : "pending"];
        slot = slot.get<std::size_t>() + 1;
    }
    json exportable = json::object();
    for (auto policy : {Policy::majority, Policy::any}) {
        std::set<std::string> pos, neg;
        for (const auto& item : items_) {
            if (item.origin == Origin::counterfactual) neg.insert(item.target.dialogue_id);
            else if (qualifies(item.item_id, policy)) pos.insert(item.target.dialogue_id);
        }
        std::size_t n = 0;
        for (const auto& id : pos) n += neg.count(id);
        exportable[std::string(to_string(policy))] = n;
    }
    return {{"total", items_.size()},
            {"pending", pending},
            {"labeled", labeled},
            {"events", events},
            {"by_origin", by_origin},
            {"exportable_dialogues", exportable}};
}

std::size_t LabelStore::event_count() const {
    std::shared_lock lock(mu_);
    std::size_t n = 0;
    for (const auto& [_, m] : labels_) n += m.size();
    return n;
}

std::vector<LabelEvent> LabelStore::events() const {
    std::shared_lock lock(mu_);
    std::vector<LabelEvent> out;
    for (const auto& [_, m] : labels_)
        for (const auto& [__, e] : m) out.push_back(e);
    return out;
}

// ---------------------------------------------------------------------------
// HTTP service

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
    send_json(res, status, {{"error", message}});
}

std::optional<int> parse_int(const std::string& s) {
    if (s.empty() || s.size() > 9) return std::nullopt;
    for (char c : s)
        if (c < '0' || c > '9') return std::nullopt;
    return std::stoi(s);
}

}  // namespace

CurationService::CurationService(std::shared_ptr<LabelStore> store, ServiceOptions options)
    : store_(std::move(store)), options_(std::move(options)), server_(std::make_unique<httplib::Server>()) {
    install_routes();
}

CurationService::~CurationService() { stop(); }

void CurationService::install_routes() {
    auto& s = *server_;
    if (options_.token) {
        const std::string token = *options_.token;
        s.set_pre_routing_handler([token](const httplib::Request& req, httplib::Response& res) {
            if (req.path.rfind("/v1/", 0) == 0 && req.get_header_value("X-Curation-Token") != token) {
                send_error(res, 401, "missing or wrong X-Curation-Token");
                return httplib::Server::HandlerResponse::Handled;
            }
            return httplib::Server::HandlerResponse::Unhandled;
        });
    }
    if (options_.static_dir && !s.set_mount_point("/", options_.static_dir->string()))
        throw IoError("static directory " + options_.static_dir->string() + " does not exist");

    s.Get("/v1/items", [this](const httplib::Request& req, httplib::Response& res) {
        ItemQuery q;
        if (req.has_param("status") && !req.get_param_value("status").empty()) {
            q.status = status_from_string(req.get_param_value("status"));
            if (!q.status) return send_error(res, 400, "status must be 'pending' or 'labeled'");
        }
        if (req.has_param("origin") && !req.get_param_value("origin").empty()) {
            q.origin = origin_from_string(req.get_param_value("origin"));
            if (!q.origin) return send_error(res, 400, "origin must be 'factual' or 'counterfactual'");
        }
        for (auto [name, field] : {std::pair{"page", &q.page}, std::pair{"page_size", &q.page_size}}) {
            if (!req.has_param(name)) continue;
            auto v = parse_int(req.get_param_value(name));
            if (!v) return send_error(res, 400, std::string(name) + " must be a positive integer");
            *field = *v;
        }
        try {
            const auto page = store_->list(q);
            send_json(res, 200,
                      {{"items", page.items}, {"page", page.page}, {"page_size", page.page_size}, {"total", page.total}});
        } catch (const PreconditionError& e) {
            send_error(res, 400, e.what());
        }
    });

    s.Post("/v1/labels", [this](const httplib::Request& req, httplib::Response& res) {
        LabelEvent event;
        try {
            event = label_event_from_json(json::parse(req.body));
        } catch (const json::parse_error&) {
            return send_error(res, 400, "body is not valid JSON");
        } catch (const PreconditionError& e) {
            return send_error(res, 400, e.what());
        }
        try {
            const auto stored = store_->submit(std::move(event));
            json body = to_json(stored);
            body["status"] = "labeled";
            send_json(res, 200, body);
        } catch (const NotFoundError& e) {
            send_error(res, 404, e.what());
        } catch (const PreconditionError& e) {
            send_error(res, 400, e.what());
        } catch (const std::exception& e) {
            spdlog::error("label write failed: {}", e.what());
            send_error(res, 500, "label could not be stored");
        }
    });

    s.Get("/v1/export", [this](const httplib::Request& req, httplib::Response& res) {
        const std::string name = req.has_param("policy") ? req.get_param_value("policy") : "majority";
        auto policy = policy_from_string(name);
        if (!policy) return send_error(res, 400, "policy must be 'majority' or 'any'");
        try {
            json body = store_->export_pairs(*policy).to_json();
            body["policy"] = to_string(*policy);
            send_json(res, 200, body);
        } catch (const PreconditionError& e) {
            send_error(res, 409, e.what());
        }
    });

    s.Get("/v1/stats", [this](const httplib::Request&, httplib::Response& res) { send_json(res, 200, store_->stats()); });
}

int CurationService::bind() {
    if (options_.port == 0) {
        port_ = server_->bind_to_any_port(options_.host);
        if (port_ <= 0) throw IoError("cannot bind " + options_.host);
    } else {
        if (!server_->bind_to_port(options_.host, options_.port))
            throw IoError("cannot bind " + options_.host + ":" + std::to_string(options_.port));
        port_ = options_.port;
    }
    return port_;
}

int CurationService::start() {
    bind();
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return port_;
}

void CurationService::run() {
    bind();
    spdlog::info("curation service listening on http://{}:{}", options_.host, port_);
    server_->listen_after_bind();
}

void CurationService::stop() {
    if (server_) server_->stop();
    if (thread_.joinable()) thread_.join();
}

}  // namespace dialcot::curation
