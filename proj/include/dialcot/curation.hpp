// SPDX-License-Identifier: Apache-2.0
//
// Human curation of generated rationales: an item store backed by an append-only
// label log, and the HTTP service in front of it.
//
//   GET  /v1/items?status=&origin=&page=&page_size=
//   POST /v1/labels   {item_id, annotator_id, label}
//   GET  /v1/export?policy=majority|any
//   GET  /v1/stats

#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include "dialcot/corpus.hpp"
#include "dialcot/filters.hpp"
#include "dialcot/rationale.hpp"
#include "dialcot/rationalizer.hpp"

namespace httplib {
class Server;
}

namespace dialcot::curation {

enum class Origin { factual, counterfactual };
enum class Status { pending, labeled };
enum class Label { consistent, inconsistent };
enum class Policy { majority, any };

std::string_view to_string(Origin o);
std::string_view to_string(Status s);
std::string_view to_string(Label l);
std::string_view to_string(Policy p);
std::optional<Origin> origin_from_string(std::string_view s);
std::optional<Status> status_from_string(std::string_view s);
std::optional<Label> label_from_string(std::string_view s);
std::optional<Policy> policy_from_string(std::string_view s);

struct CurationItem {
    std::string item_id;
    corpus::TurnTarget target;
    int candidate_index = 1;
    rationale::Rationale rationale;
    Origin origin = Origin::factual;
};

json to_json(const CurationItem& item, Status status, std::size_t label_count);

struct LabelEvent {
    std::string item_id;
    std::string annotator_id;
    Label label = Label::consistent;
    std::string timestamp;  // ISO 8601, UTC
};

json to_json(const LabelEvent& e);
LabelEvent label_event_from_json(const json& j);

/// Items from parsed factual candidates and counterfactual records. Unparsable
/// candidates are skipped. Ordered by (dialogue_id, t, candidate_index, origin).
std::vector<CurationItem> build_curation_items(const std::vector<corpus::Dialogue>& corpus,
                                               const std::vector<rationalizer::CandidateRow>& candidates,
                                               const std::vector<rationalizer::CounterfactualRecord>& counterfactuals);

void write_items(const std::filesystem::path& path, const std::vector<CurationItem>& items);
std::vector<CurationItem> load_items(const std::filesystem::path& path);

struct ItemQuery {
    std::optional<Status> status;
    std::optional<Origin> origin;
    int page = 1;        // 1-based
    int page_size = 20;  // 1..500
};

struct ItemPage {
    json items = json::array();
    int page = 1;
    int page_size = 20;
    std::size_t total = 0;
};

/// Positives and counterfactual negatives, one of each per exported dialogue.
struct CriticPairs {
    std::vector<filters::LabeledRationale> positives;
    std::vector<filters::LabeledRationale> counterfactuals;

    json to_json() const;
    static CriticPairs from_json(const json& j);
};

class NotFoundError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class LabelStore {
public:
    /// Replays the event log at `log_path` (created on first write). A torn final line
    /// left by a crash is dropped; any other malformed line is a SchemaError.
    LabelStore(std::vector<CurationItem> items, std::filesystem::path log_path);

    ItemPage list(const ItemQuery& query) const;
    /// Appends durably, then updates the index. A second event from the same annotator
    /// replaces the first. Throws NotFoundError or PreconditionError.
    LabelEvent submit(LabelEvent event);
    CriticPairs export_pairs(Policy policy) const;
    json stats() const;

    std::size_t event_count() const;
    /// Current event per (item, annotator).
    std::vector<LabelEvent> events() const;

private:
    bool qualifies(const std::string& item_id, Policy policy) const;

    std::vector<CurationItem> items_;
    std::map<std::string, std::size_t> by_id_;
    std::filesystem::path log_path_;
    mutable std::shared_mutex mu_;
    std::map<std::string, std::map<std::string, LabelEvent>> labels_;  // item -> annotator -> event
    std::size_t log_lines_ = 0;
};

struct ServiceOptions {
    std::string host = "127.0.0.1";
    int port = 8765;  // 0 picks a free port
    /// When set, requests must carry it in the X-Curation-Token header.
    std::optional<std::string> token;
    std::optional<std::filesystem::path> static_dir;
};

class CurationService {
public:
    CurationService(std::shared_ptr<LabelStore> store, ServiceOptions options);
    ~CurationService();

    /// Binds and serves on a background thread. Returns the bound port.
    int start();
    /// Binds and serves on the calling thread until stop().
    void run();
    void stop();
    int port() const { return port_; }

private:
    void install_routes();
    int bind();

    std::shared_ptr<LabelStore> store_;
    ServiceOptions options_;
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
    int port_ = 0;
};

}  // namespace dialcot::curation
