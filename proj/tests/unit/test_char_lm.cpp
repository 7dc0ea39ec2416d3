// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <memory>

#include "dialcot/char_lm.hpp"
#include "dialcot/gateway.hpp"
#include "test_support.hpp"

using namespace dialcot;
using namespace dialcot::lm;

namespace {

CharLmConfig small() {
    CharLmConfig c;
    c.embed_dim = 16;
    c.orders = {1, 2, 3, 4, 8};
    return c;
}

std::vector<Sequence> toy_data() {
    std::vector<Sequence> data;
    for (int i = 0; i < 50; ++i)
        data.push_back({"Q" + std::to_string(i % 5) + " ->", " answer " + std::to_string(i % 5) + " done"});
    return data;
}

}  // namespace

TEST_SUITE("char_lm") {
    TEST_CASE("next-symbol distribution is normalized") {
        CharLm m(small());
        const auto lp = m.next_logprobs("hello");
        REQUIRE(lp.size() == static_cast<std::size_t>(CharLm::kVocab));
        double sum = 0.0;
        for (double v : lp) sum += std::exp(v);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }

    TEST_CASE("continuation score equals the chain-rule product") {
        CharLm m(small());
        m.train_epoch(toy_data(), {1, 1e-2, 4, 0}, 0);
        const std::string prefix = "Q3 ->", cont = " answer 3 done";
        double oracle = 0.0;
        for (std::size_t i = 0; i < cont.size(); ++i) {
            const auto lp = m.next_logprobs(prefix + cont.substr(0, i));
            oracle += lp[static_cast<unsigned char>(cont[i])];
        }
        CHECK(m.continuation_logprob(prefix, cont) == doctest::Approx(oracle).epsilon(1e-12));

        gateway::LocalCausalBackend backend("local", std::make_shared<CharLm>(m));
        const auto s = backend.score(prefix, cont);
        CHECK(s.token_count == static_cast<int>(cont.size()));
        CHECK(s.total_logprob == doctest::Approx(oracle).epsilon(1e-12));
        CHECK(s.perplexity == doctest::Approx(std::exp(-oracle / static_cast<double>(cont.size()))).epsilon(1e-9));
    }

    TEST_CASE("training lowers the loss") {
        CharLm m(small());
        const auto data = toy_data();
        const double before = m.evaluate_loss(data);
        for (int e = 0; e < 5; ++e) m.train_epoch(data, {5, 1e-2, 8, 1}, e);
        CHECK(m.evaluate_loss(data) < before);
    }

    TEST_CASE("decoding is deterministic and greedy at zero temperature") {
        CharLm m(small());
        const auto data = toy_data();
        for (int e = 0; e < 20; ++e) m.train_epoch(data, {20, 2e-2, 4, 2}, e);
        const auto a = m.greedy_decode("Q2 ->", 40);
        CHECK(a.text == m.greedy_decode("Q2 ->", 40).text);
        CHECK(m.sample("Q2 ->", 40, 0.0, 99).text == a.text);
        CHECK(m.sample("Q2 ->", 40, 0.8, 5).text == m.sample("Q2 ->", 40, 0.8, 5).text);
        const auto cut = m.greedy_decode("Q2 ->", 3);
        CHECK(cut.text.size() <= 3);
    }

    TEST_CASE("save and load preserve predictions") {
        CharLm m(small());
        m.train_epoch(toy_data(), {1, 1e-2, 4, 0}, 0);
        testing::TempDir dir;
        m.save(dir / "m.bin");
        const auto back = CharLm::load(dir / "m.bin");
        CHECK(back.feature_count() == m.feature_count());
        CHECK(back.next_logprobs("Q1 -> ans") == m.next_logprobs("Q1 -> ans"));
        write_file(dir / "junk.bin", "nope");
        CHECK_THROWS_AS(CharLm::load(dir / "junk.bin"), IoError);
    }
}
