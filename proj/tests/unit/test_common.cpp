// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "dialcot/common.hpp"
#include "dialcot/knowledge.hpp"
#include "test_support.hpp"

using namespace dialcot;

TEST_SUITE("common") {
    TEST_CASE("string helpers") {
        CHECK(trim("  a b \t\n") == "a b");
        CHECK(trim("   ").empty());
        CHECK(split_lines("a\r\nb\n\nc") == std::vector<std::string>{"a", "b", "", "c"});
        CHECK(starts_with_ci("Subquestion 1", "subQUESTION"));
        CHECK_FALSE(starts_with_ci("Sub", "Subquestion"));
        CHECK(to_lower("AbC") == "abc");
        CHECK(join({"a", "b", "c"}, ", ") == "a, b, c");
        CHECK(flatten_newlines("a\r\n\nb\nc") == "a b c");
    }

    TEST_CASE("sha256 matches the published test vector") {
        CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    TEST_CASE("fnv1a matches the reference offsets") {
        static_assert(fnv1a("") == 0xcbf29ce484222325ULL);
        CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
    }

    TEST_CASE("jsonl round trip and line-numbered errors") {
        testing::TempDir dir;
        const auto path = dir / "x.jsonl";
        write_jsonl(path, {json{{"a", 1}}, json{{"b", "two"}}});
        const auto back = read_jsonl(path);
        REQUIRE(back.size() == 2);
        CHECK(back[1]["b"] == "two");
        write_file(path, "{\"a\":1}\n\n{broken\n");
        try {
            read_jsonl(path);
            FAIL("expected a schema error");
        } catch (const SchemaError& e) {
            CHECK(e.line() == 3);
        }
        CHECK_THROWS_AS(read_jsonl(dir / "missing.jsonl"), IoError);
    }

    TEST_CASE("durable append accumulates lines") {
        testing::TempDir dir;
        const auto path = dir / "log";
        append_line_durable(path, "one");
        append_line_durable(path, "two");
        CHECK(read_file(path) == "one\ntwo\n");
        CHECK(sha256_file(path) == sha256_hex("one\ntwo\n"));
    }

    TEST_CASE("stable shuffle is a seeded permutation") {
        std::vector<int> a(50), b;
        std::iota(a.begin(), a.end(), 0);
        b = a;
        auto c = a;
        stable_shuffle(a, 9);
        stable_shuffle(b, 9);
        stable_shuffle(c, 10);
        CHECK(a == b);
        CHECK(a != c);
        std::sort(c.begin(), c.end());
        for (int i = 0; i < 50; ++i) CHECK(c[static_cast<std::size_t>(i)] == i);
    }

    TEST_CASE("concat_knowledge joins with one separator") {
        CHECK(concat_knowledge("k1 k2", "A: hi\nB: yo", 512) == "k1 k2 <SEP> A: hi\nB: yo");
        CHECK(concat_knowledge("  ", "A: hi", 512) == "A: hi");
        const auto joined = concat_knowledge("know", "A: x", 512);
        CHECK(std::count(joined.begin(), joined.end(), '<') == 1);
    }

    TEST_CASE("concat_knowledge truncates from the left keeping the last utterance") {
        std::string knowledge;
        for (int i = 0; i < 600; ++i) knowledge += "w" + std::to_string(i) + " ";
        const std::string history = "A: first turn here\nB: the final utterance stays";
        const auto out = concat_knowledge(knowledge, history, 20);
        CHECK(count_whitespace_tokens(out) == 20);
        CHECK(out.size() >= 31);
        CHECK(out.substr(out.size() - 28) == "B: the final utterance stays");
        CHECK(out.find("w0 ") == std::string::npos);
        CHECK_THROWS_AS(concat_knowledge("", "A: one two three four", 3), PreconditionError);
        CHECK(truncate_left("a  b   c", 2) == "b   c");
        CHECK_THROWS_AS(truncate_left("a", 0), PreconditionError);
    }
}
