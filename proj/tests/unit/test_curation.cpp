// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>
#include <httplib.h>

#include <fstream>

#include "dialcot/curation.hpp"
#include "test_support.hpp"

using namespace dialcot;
using namespace dialcot::curation;

namespace {

const std::string kFactual = "Subquestion 1: What does Person A want? (xWant)\nSubanswer 1: Person A wants tea.";
const std::string kCounter = "Subquestion 1: What does Person B say? (oReact)\nSubanswer 1: Person B agrees.";

std::vector<corpus::Dialogue> dialogues() {
    return {testing::make_dialogue("d1", {"tea please", "sure thing"}),
            testing::make_dialogue("d2", {"coffee?", "no thanks"})};
}

std::vector<CurationItem> items() {
    std::vector<rationalizer::CandidateRow> rows;
    for (const auto* id : {"d1", "d2"}) {
        rows.push_back({id, 2, {1, kFactual, std::nullopt, false, "h1", {}}});
        rows.push_back({id, 2, {2, std::string("not a rationale"), std::nullopt, false, "h2", {}}});
        rows.push_back({id, 2, {3, std::nullopt, std::string("timeout"), false, "h3", {}}});
    }
    rows.push_back({"d1", 2, {4, kFactual, std::nullopt, false, "h4", {}}});
    std::vector<rationalizer::CounterfactualRecord> cfs;
    for (const auto& d : dialogues()) cfs.push_back({corpus::extract_targets(d).back(), kCounter, "hc"});
    return build_curation_items(dialogues(), rows, cfs);
}

LabelEvent ev(const std::string& item, const std::string& who, Label l) { return {item, who, l, ""}; }

}  // namespace

TEST_SUITE("curation") {
    TEST_CASE("items come from parsed candidates and counterfactuals") {
        const auto its = items();
        REQUIRE(its.size() == 5);
        CHECK(its[0].item_id == "f-d1-2-1");
        CHECK(its[1].item_id == "c-d1-2-1");
        CHECK(its[2].item_id == "f-d1-2-4");
        CHECK(its[1].origin == Origin::counterfactual);
        CHECK(its[1].rationale.is_counterfactual);
        testing::TempDir dir;
        write_items(dir / "items.jsonl", its);
        const auto back = load_items(dir / "items.jsonl");
        REQUIRE(back.size() == its.size());
        CHECK(back[4].item_id == its[4].item_id);
        CHECK(rationale::render_rationale(back[4].rationale) == rationale::render_rationale(its[4].rationale));
        std::vector<rationalizer::CandidateRow> orphan{{"zz", 1, {1, kFactual, std::nullopt, false, "", {}}}};
        CHECK_THROWS_AS(build_curation_items(dialogues(), orphan, {}), SchemaError);
    }

    TEST_CASE("listing paginates and filters") {
        testing::TempDir dir;
        LabelStore store(items(), dir / "labels.jsonl");
        auto p = store.list({std::nullopt, Origin::factual, 1, 2});
        CHECK(p.total == 3);
        CHECK(p.items.size() == 2);
        p = store.list({std::nullopt, Origin::factual, 2, 2});
        CHECK(p.items.size() == 1);
        CHECK(p.items[0]["item_id"] == "f-d2-2-1");
        CHECK(store.list({Status::labeled, std::nullopt, 1, 20}).total == 0);
        CHECK(store.list({std::nullopt, std::nullopt, 9, 20}).items.empty());
        CHECK_THROWS_AS(store.list({std::nullopt, std::nullopt, 0, 20}), PreconditionError);
        CHECK_THROWS_AS(store.list({std::nullopt, std::nullopt, 1, 501}), PreconditionError);

        LabelStore empty({}, dir / "empty.jsonl");
        CHECK(empty.list({}).total == 0);
        CHECK(empty.stats()["total"] == 0);
    }

    TEST_CASE("submissions relabel per annotator") {
        testing::TempDir dir;
        LabelStore store(items(), dir / "labels.jsonl");
        const auto stored = store.submit(ev("f-d1-2-1", " ann ", Label::inconsistent));
        CHECK(stored.annotator_id == "ann");
        CHECK_FALSE(stored.timestamp.empty());
        store.submit(ev("f-d1-2-1", "ann", Label::consistent));
        CHECK(store.event_count() == 1);
        CHECK(store.events()[0].label == Label::consistent);
        CHECK(store.list({Status::labeled, std::nullopt, 1, 20}).total == 1);
        CHECK_THROWS_AS(store.submit(ev("nope", "ann", Label::consistent)), NotFoundError);
        CHECK_THROWS_AS(store.submit(ev("f-d1-2-1", "  ", Label::consistent)), PreconditionError);

        LabelStore replay(items(), dir / "labels.jsonl");
        CHECK(replay.event_count() == 1);
        CHECK(replay.events()[0].label == Label::consistent);
    }

    TEST_CASE("export policies") {
        testing::TempDir dir;
        LabelStore store(items(), dir / "labels.jsonl");
        CHECK_THROWS_AS(store.export_pairs(Policy::any), PreconditionError);
        store.submit(ev("f-d1-2-1", "a", Label::consistent));
        store.submit(ev("f-d1-2-1", "b", Label::consistent));
        store.submit(ev("f-d1-2-1", "c", Label::inconsistent));
        store.submit(ev("f-d2-2-1", "a", Label::consistent));
        store.submit(ev("f-d2-2-1", "b", Label::inconsistent));
        const auto maj = store.export_pairs(Policy::majority);
        REQUIRE(maj.positives.size() == 1);
        CHECK(maj.positives[0].first.dialogue_id == "d1");
        CHECK(maj.counterfactuals[0].second.is_counterfactual);
        const auto any = store.export_pairs(Policy::any);
        CHECK(any.positives.size() == 2);
        CHECK(store.stats()["exportable_dialogues"]["majority"] == 1);
        CHECK(store.stats()["exportable_dialogues"]["any"] == 2);

        const auto back = CriticPairs::from_json(any.to_json());
        CHECK(back.to_json() == any.to_json());
        const auto data = filters::assemble_critic_data(back.positives, back.counterfactuals);
        CHECK(data.train.size() == 4);
    }

    TEST_CASE("a torn final log line is dropped, other damage is fatal") {
        testing::TempDir dir;
        {
            LabelStore store(items(), dir / "labels.jsonl");
            store.submit(ev("f-d1-2-1", "a", Label::consistent));
        }
        {
            std::ofstream out(dir / "labels.jsonl", std::ios::app);
            out << R"({"item_id":"f-d2-2-1","annot)";
        }
        LabelStore replay(items(), dir / "labels.jsonl");
        CHECK(replay.event_count() == 1);
        replay.submit(ev("f-d2-2-1", "a", Label::consistent));
        CHECK(LabelStore(items(), dir / "labels.jsonl").event_count() == 2);

        write_file(dir / "bad.jsonl", "{\"item_id\":1}\n");
        CHECK_THROWS_AS(LabelStore(items(), dir / "bad.jsonl"), SchemaError);
    }

    TEST_CASE("http routes") {
        testing::TempDir dir;
        auto store = std::make_shared<LabelStore>(items(), dir / "labels.jsonl");
        CurationService svc(store, {"127.0.0.1", 0, std::nullopt, std::nullopt});
        const int port = svc.start();
        httplib::Client cli("127.0.0.1", port);

        auto r = cli.Get("/v1/items?origin=factual&page=1&page_size=2");
        REQUIRE(r);
        CHECK(r->status == 200);
        auto body = json::parse(r->body);
        CHECK(body["total"] == 3);
        CHECK(body["items"].size() == 2);
        CHECK(body["items"][0]["status"] == "pending");

        CHECK(cli.Get("/v1/items?status=done")->status == 400);
        CHECK(cli.Get("/v1/items?page=-1")->status == 400);
        CHECK(cli.Get("/v1/items?page_size=0")->status == 400);
        CHECK(cli.Get("/v1/export")->status == 409);
        CHECK(cli.Get("/v1/export?policy=all")->status == 400);

        const auto post = [&](const json& j) { return cli.Post("/v1/labels", j.dump(), "application/json"); };
        CHECK(post({{"item_id", "f-d1-2-1"}, {"annotator_id", "x"}, {"label", "consistent"}})->status == 200);
        CHECK(post({{"item_id", "missing"}, {"annotator_id", "x"}, {"label", "consistent"}})->status == 404);
        CHECK(post({{"item_id", "f-d1-2-1"}, {"annotator_id", "x"}, {"label", "maybe"}})->status == 400);
        CHECK(post({{"item_id", "f-d1-2-1"}, {"label", "consistent"}})->status == 400);
        CHECK(cli.Post("/v1/labels", "{not json", "application/json")->status == 400);

        r = cli.Get("/v1/export?policy=majority");
        REQUIRE(r);
        CHECK(r->status == 200);
        body = json::parse(r->body);
        CHECK(body["policy"] == "majority");
        CHECK(body["positives"].size() == 1);

        r = cli.Get("/v1/stats");
        body = json::parse(r->body);
        CHECK(body["events"] == 1);
        CHECK(body["labeled"] == 1);
        CHECK(body["by_origin"]["factual"]["pending"] == 2);
        svc.stop();
    }

    TEST_CASE("token protected service") {
        testing::TempDir dir;
        auto store = std::make_shared<LabelStore>(items(), dir / "labels.jsonl");
        CurationService svc(store, {"127.0.0.1", 0, std::string("s3cret"), std::nullopt});
        httplib::Client cli("127.0.0.1", svc.start());
        CHECK(cli.Get("/v1/stats")->status == 401);
        CHECK(cli.Get("/v1/stats", {{"X-Curation-Token", "wrong"}})->status == 401);
        CHECK(cli.Get("/v1/stats", {{"X-Curation-Token", "s3cret"}})->status == 200);
    }
}
