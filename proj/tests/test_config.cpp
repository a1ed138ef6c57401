#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>

#include <reclink/config.hpp>

using reclink::ConfigError;
using reclink::Toml;

TEST_CASE("scalars, tables, and comments parse") {
    auto t = Toml::parse(R"(
# top comment
title = "linkage run"   # trailing comment
seed = 42
rate = 0.25
neg = -3
exact = true

[sim]
n_a = 200
n_b = 300
label = "s1 # not a comment"

[sim.error]
level = 0.1
)");
    REQUIRE(t.get_string("title") == "linkage run");
    REQUIRE(t.get_int("seed") == 42);
    REQUIRE(t.get_double("rate") == 0.25);
    REQUIRE(t.get_int("neg") == -3);
    REQUIRE(t.get_bool("exact"));
    REQUIRE(t.get_int("sim.n_a") == 200);
    REQUIRE(t.get_string("sim.label") == "s1 # not a comment");
    REQUIRE(t.get_double("sim.error.level") == 0.1);
}

TEST_CASE("integers promote to double but not the reverse") {
    auto t = Toml::parse("a = 3\nb = 2.5\n");
    REQUIRE(t.get_double("a") == 3.0);
    REQUIRE(t.get_double("b") == 2.5);
    REQUIRE_THROWS_AS(t.get_int("b"), ConfigError);
}

TEST_CASE("arrays of each scalar type") {
    auto t = Toml::parse(R"(
ints = [1, 2, 3]
floats = [0.1, 2, 0.5]
names = ["a", "b,c", "d\"e"]
empty = []
)");
    REQUIRE(t.get_int_array("ints") == std::vector<std::int64_t>{1, 2, 3});
    auto f = t.get_double_array("floats");
    REQUIRE(f.size() == 3);
    REQUIRE(f[1] == 2.0);
    auto names = t.get_string_array("names");
    REQUIRE(names[1] == "b,c");
    REQUIRE(names[2] == "d\"e");
    REQUIRE(t.get_double_array("empty").empty());
    REQUIRE_THROWS_AS(t.get_int_array("floats"), ConfigError);
}

TEST_CASE("defaults apply only for absent keys") {
    auto t = Toml::parse("present = 5\n");
    REQUIRE(t.get_int("present", 9) == 5);
    REQUIRE(t.get_int("absent", 9) == 9);
    REQUIRE(t.get_string("absent", "x") == "x");
    REQUIRE(t.get_bool("absent", true));
    REQUIRE(t.get_double("absent", 1.5) == 1.5);
}

TEST_CASE("missing and mistyped keys throw") {
    auto t = Toml::parse("a = 1\narr = [1]\n");
    REQUIRE_THROWS_AS(t.get_int("nope"), ConfigError);
    REQUIRE_THROWS_AS(t.get_string("a"), ConfigError);
    REQUIRE_THROWS_AS(t.get_bool("a"), ConfigError);
    REQUIRE_THROWS_AS(t.get_int("arr"), ConfigError);
    REQUIRE_THROWS_AS(t.get_int_array("a"), ConfigError);
}

TEST_CASE("malformed input is rejected with a line number") {
    REQUIRE_THROWS_AS(Toml::parse("a = \"unterminated\n"), ConfigError);
    REQUIRE_THROWS_AS(Toml::parse("[table\nx = 1\n"), ConfigError);
    REQUIRE_THROWS_AS(Toml::parse("[[points]]\nx = 1\n"), ConfigError);
    REQUIRE_THROWS_AS(Toml::parse("just a line\n"), ConfigError);
    REQUIRE_THROWS_AS(Toml::parse("a = \n"), ConfigError);
    REQUIRE_THROWS_AS(Toml::parse("a = [1, 2,]\n"), ConfigError);
    REQUIRE_THROWS_AS(Toml::parse("a = 2026-08-25\n"), ConfigError);
    REQUIRE_THROWS_AS(Toml::parse("a = 1\na = 2\n"), ConfigError);
    REQUIRE_THROWS_AS(Toml::parse("a = 1_000\n"), ConfigError);
    try {
        Toml::parse("ok = 1\nbad line\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        REQUIRE(std::string(e.what()).find("line 2") != std::string::npos);
    }
}

TEST_CASE("string escapes decode") {
    auto t = Toml::parse(R"(s = "tab\there\nnl \"q\" back\\slash")");
    REQUIRE(t.get_string("s") == "tab\there\nnl \"q\" back\\slash");
}

TEST_CASE("parse_file reads from disk and reports unopenable paths") {
    const char* path = "reclink_test_config.toml";
    {
        std::ofstream out(path);
        out << "[run]\nseed = 7\n";
    }
    auto t = Toml::parse_file(path);
    REQUIRE(t.get_int("run.seed") == 7);
    std::remove(path);
    REQUIRE_THROWS_AS(Toml::parse_file("/nonexistent/p.toml"), ConfigError);
}
