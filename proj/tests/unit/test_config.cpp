// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "dialcot/config.hpp"
#include "test_support.hpp"

using namespace dialcot;
using namespace dialcot::config;

namespace {

std::filesystem::path desk_yaml() { return std::filesystem::path(DIALCOT_SOURCE_DIR) / "configs" / "desk.yaml"; }

}  // namespace

TEST_SUITE("config") {
    TEST_CASE("defaults are valid") {
        const auto c = RunConfig::defaults();
        CHECK(c.pipeline.n == 10);
        CHECK(c.pipeline.k == 3);
        CHECK(c.pipeline.temperature == 0.5);
        CHECK(c.filter.tau == 0.95);
        CHECK(c.reasoner.split == 0.8);
        CHECK_NOTHROW(c.validate(false));
        CHECK(c.generation_params().temperature == 0.5);
        CHECK(c.generation_params().max_tokens == 300);
    }

    TEST_CASE("the desk file loads and overrides apply in order") {
        const auto c = RunConfig::load(desk_yaml());
        CHECK(c.run_id == "desk");
        CHECK(c.seed == 7);
        CHECK(c.corpus_path == "data/sample_dialogues.jsonl");
        CHECK(c.critic.epochs == 20);
        CHECK(c.critic.learning_rate == 0.05);
        CHECK(c.reasoner.hyperparams.seed == 7);
        const auto o = RunConfig::load(desk_yaml(), {"pipeline.n=4", "filter.tau=1.1", "pipeline.n=5", "run_id=x"});
        CHECK(o.pipeline.n == 5);
        CHECK(o.filter.tau == 1.1);
        CHECK(o.run_id == "x");
        CHECK(o.run_dir() == std::filesystem::path("runs") / "x");
        CHECK(o.hash() != c.hash());
        CHECK(RunConfig::load(desk_yaml()).hash() == c.hash());
        CHECK(c.hash().size() == 64);
    }

    TEST_CASE("bad input is a config error") {
        CHECK_THROWS_AS(RunConfig::load("/nonexistent/run.yaml"), ConfigError);
        CHECK_THROWS_AS(RunConfig::load("", {"pipeline.bogus=1"}), ConfigError);
        CHECK_THROWS_AS(RunConfig::load("", {"nothing"}), ConfigError);
        CHECK_THROWS_AS(RunConfig::load("", {"pipeline..n=1"}), ConfigError);
        CHECK_THROWS_AS(RunConfig::load("", {"pipeline.n=lots"}), ConfigError);
        CHECK_THROWS_AS(RunConfig::load("", {"run_id.x=1"}), ConfigError);
        testing::TempDir dir;
        write_file(dir / "bad.yaml", "pipeline: [1, 2\n");
        CHECK_THROWS_AS(RunConfig::load(dir / "bad.yaml"), ConfigError);
        write_file(dir / "unknown.yaml", "filters:\n  tau: 1\n");
        CHECK_THROWS_AS(RunConfig::load(dir / "unknown.yaml"), ConfigError);
    }

    TEST_CASE("range validation") {
        for (const std::string o : {"pipeline.k=6", "pipeline.n=0", "filter.tau=0", "filter.critic_threshold=1",
                                    "reasoner.split=1", "respond.mode=magic", "respond.mode=external",
                                    "gateway.parallelism=0", "curation.port=70000", "generator.kind=remote_chat",
                                    "scorer.kind=local_causal", "corpus.format=csv", "run_id=a/b"}) {
            CAPTURE(o);
            CHECK_THROWS_AS(RunConfig::load("", {o}).validate(false), ConfigError);
        }
        auto c = RunConfig::load("", {"scorer.kind=remote_chat", "scorer.model=m"});
        CHECK_THROWS_AS(c.validate(false), ConfigError);
        c = RunConfig::load("", {"scorer.kind=remote_chat", "scorer.model=m", "scorer.enable_scoring=true"});
        CHECK_NOTHROW(c.validate(false));
        c = RunConfig::load("", {"agent.kind=local_causal", "agent.model_path=/nonexistent/model.bin"});
        CHECK_NOTHROW(c.validate(false));
        CHECK_THROWS_AS(c.validate(true), ConfigError);
    }

    TEST_CASE("backends are built from their sections") {
        BackendConfig b;
        b.name = "generator";
        auto stub = make_backend(b, "generator");
        CHECK(stub->descriptor().kind == gateway::BackendKind::stub);
        b.kind = "carrier_pigeon";
        CHECK_THROWS_AS(make_backend(b, "generator"), ConfigError);
    }

    TEST_CASE("synthetic annotator output parses and varies with the seed") {
        const auto target = testing::make_target("y", {"I missed the bus.", "That is bad.", "Yes, very."});
        const auto demos = rationalizer::load_demos(rationalizer::default_demo_path());
        const auto prompt = rationalizer::build_annotation_prompt(target, demos, 3);
        const auto a = synthetic_rationale(prompt, 1);
        const auto b = synthetic_rationale(prompt, 2);
        CHECK(rationale::parsed(rationale::parse_rationale(a)));
        CHECK(rationale::parsed(rationale::parse_rationale(b)));
        CHECK(a == synthetic_rationale(prompt, 1));
        CHECK(a != b);
    }
}
