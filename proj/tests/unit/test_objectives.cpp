#include "doctest.h"

#include "pchpo/objective.hpp"

#include <chrono>
#include <cmath>
#include <numbers>

using namespace pchpo;
using namespace std::chrono_literals;

TEST_CASE("branin values at its minimizers and at the origin")
{
    // standard Branin: a(x2 - b x1^2 + c x1 - r)^2 + s(1 - t)cos(x1) + s, minimum 0.397887
    CHECK(branin(std::numbers::pi, 2.275) == doctest::Approx(-0.397887).epsilon(1e-6));
    CHECK(branin(-std::numbers::pi, 12.275) == doctest::Approx(-0.397887).epsilon(1e-6));
    CHECK(branin(9.42478, 2.475) == doctest::Approx(-0.397887).epsilon(1e-5));

    const double b = 5.1 / (4 * std::numbers::pi * std::numbers::pi), c = 5 / std::numbers::pi;
    const double u = 0 - b * 0 + c * 0 - 6;
    CHECK(branin(0, 0) == doctest::Approx(-(u * u + 10 * (1 - 1 / (8 * std::numbers::pi)) + 10)));
    CHECK(branin(0, 0) == doctest::Approx(-55.602).epsilon(1e-4));

    BraninObjective f(2.5);
    auto e = f.evaluate(*f.known_maximizer());
    REQUIRE(e.ok());
    CHECK(*e.score == doctest::Approx(*f.known_optimum()));
    CHECK(e.cost == 2.5);
}

TEST_CASE("mixed synthetic optimum is unique per category")
{
    CHECK(mixed_synthetic("a", 3, 0.2) == 1.0);
    CHECK(mixed_synthetic("b", 7, 0.8) == 0.5);
    CHECK(mixed_synthetic("c", 0, 0.5) == 0.0);
    CHECK(mixed_synthetic("a", 4, 0.2) == doctest::Approx(0.9));
    CHECK(mixed_synthetic("a", 3, 0.3) == doctest::Approx(0.95));

    MixedSyntheticObjective f;
    const auto &space = f.space();
    double best = -1e9;
    for (const auto &label : { "a", "b", "c" })
        for (std::int64_t k = 0; k <= 9; ++k)
            for (int j = 0; j <= 100; ++j) {
                Configuration cfg(space, { std::string(label), k, j / 100.0 });
                best = std::max(best, *f.evaluate(cfg).score);
            }
    CHECK(best == *f.known_optimum());
    CHECK(*f.evaluate(*f.known_maximizer()).score == 1.0);
}

TEST_CASE("command objective")
{
    const auto space = parse_space("lr float 1e-4 1 log\nact cat relu tanh\n");
    const Configuration cfg(space, { 0.01, std::string("relu") });

    SUBCASE("placeholders and score line")
    {
        CommandObjective f(space, "echo noise; echo score=0.5 # {lr} {act}", 5000ms);
        CHECK(f.render(cfg) == "echo noise; echo score=0.5 # 0.01 relu");
        auto e = f.evaluate(cfg);
        REQUIRE(e.ok());
        CHECK(*e.score == 0.5);
        CHECK(e.cost >= 0);
    }
    SUBCASE("values are substituted into the command")
    {
        CommandObjective f(space, "echo score={lr}", 5000ms);
        CHECK(*f.evaluate(cfg).score == 0.01);
    }
    SUBCASE("unsafe values are quoted")
    {
        const auto s = parse_space("x cat a;b c\n");
        CommandObjective f(s, "echo {x}", 1000ms);
        CHECK(f.render(Configuration(s, { std::string("a;b") })) == "echo 'a;b'");
    }
    SUBCASE("nonzero exit")
    {
        CommandObjective f(space, "echo score=1; exit 3", 5000ms);
        auto e = f.evaluate(cfg);
        CHECK_FALSE(e.ok());
        CHECK(e.failure == Evaluation::Failure::Exit);
    }
    SUBCASE("timeout kills the process group")
    {
        CommandObjective f(space, "sleep 5; echo score=1", 200ms);
        const auto t0 = std::chrono::steady_clock::now();
        auto e = f.evaluate(cfg);
        CHECK(std::chrono::steady_clock::now() - t0 < 3s);
        CHECK(e.failure == Evaluation::Failure::Timeout);
    }
    SUBCASE("missing or malformed score line")
    {
        for (auto cmd : { "echo hello", "echo score=abc", "echo score=1; echo trailing", "true" }) {
            CommandObjective f(space, cmd, 5000ms);
            auto e = f.evaluate(cfg);
            CHECK_FALSE(e.ok());
            CHECK(e.failure == Evaluation::Failure::Parse);
        }
    }
    SUBCASE("invalid construction")
    {
        CHECK_THROWS_AS(CommandObjective(space, "", 1000ms), ValidationError);
        CHECK_THROWS_AS(CommandObjective(space, "true", 0ms), ValidationError);
    }
}

TEST_CASE("tabular objective")
{
    const auto space = parse_space("opt cat sgd adam\nlayers int 1 4\nlr float 1e-4 1e-1 log\n");
    const auto table = parse_table("# toy table\n"
                                   "opt layers lr score cost\n"
                                   "sgd 1 0.001 0.1 3\n"
                                   "sgd 2 0.01 0.2 4\n"
                                   "adam 1 0.001 0.3 5\n"
                                   "adam 4 0.01 0.9 6\n",
                                   space);
    CHECK(table.rows().size() == 4);
    CHECK(*table.known_optimum() == 0.9);

    SUBCASE("exact hits")
    {
        TabularObjective t = table;
        auto e = t.evaluate(Configuration(space, { std::string("adam"), std::int64_t(4), 0.01 }));
        CHECK(*e.score == 0.9);
        CHECK(e.cost == 6);
    }
    SUBCASE("continuous values snap in log scale")
    {
        TabularObjective t = table;
        // log10 midpoint of 1e-3 and 1e-2 is ~3.16e-3; 4e-3 is closer to 1e-2 in log scale
        const Configuration q(space, { std::string("sgd"), std::int64_t(2), 0.004 });
        CHECK(std::get<double>(t.round(q)[2]) == 0.01);
        CHECK(*t.evaluate(q).score == 0.2);
    }
    SUBCASE("rounding is idempotent")
    {
        std::mt19937_64 rng(3);
        for (int i = 0; i != 200; ++i) {
            auto c = space.sample_uniform(rng);
            auto once = table.round(c);
            CHECK(table.round(once) == once);
        }
    }
    SUBCASE("missing keys resolve to the nearest row")
    {
        TabularObjective t = table;
        auto e = t.evaluate(Configuration(space, { std::string("adam"), std::int64_t(3), 0.01 }));
        CHECK(*e.score == 0.9);
    }
    SUBCASE("malformed tables")
    {
        CHECK_THROWS_AS(parse_table("", space), ParseError);
        CHECK_THROWS_AS(parse_table("opt layers lr score\n", space), ParseError);
        CHECK_THROWS_AS(parse_table("opt layers bogus score cost\n", space), ParseError);
        try {
            parse_table("opt layers lr score cost\nsgd 1 0.001 0.1\n", space);
            FAIL("expected ParseError");
        } catch (const ParseError &e) {
            CHECK(e.line() == 2);
        }
        CHECK_THROWS_AS(parse_table("opt layers lr score cost\nsgd 9 0.001 0.1 1\n", space), ParseError);
        CHECK_THROWS_AS(parse_table("opt layers lr score cost\nsgd 1 0.001 x 1\n", space), ParseError);
        CHECK_THROWS_AS(parse_table("opt layers lr score cost\n", space), ValidationError);
    }
}

TEST_CASE("noise is seeded and decorators forward metadata")
{
    auto run = [](std::uint64_t seed) {
        NoisyObjective f(std::make_unique<BraninObjective>(), 0.5, seed);
        std::vector<double> out;
        for (int i = 0; i != 5; ++i) out.push_back(*f.evaluate(*f.known_maximizer()).score);
        return out;
    };
    CHECK(run(7) == run(7));
    CHECK(run(7) != run(8));

    NoisyObjective quiet(std::make_unique<BraninObjective>(), 0.0, 1);
    CHECK(*quiet.evaluate(*quiet.known_maximizer()).score == *quiet.known_optimum());
    CHECK_THROWS_AS(NoisyObjective(std::make_unique<BraninObjective>(), -1, 1), ValidationError);

    NegatedObjective neg(std::make_unique<BraninObjective>());
    const Configuration origin(neg.space(), { 0.0, 0.0 });
    CHECK(*neg.evaluate(origin).score == doctest::Approx(-branin(0, 0)));
    CHECK_FALSE(neg.known_optimum());
    CHECK(neg.name() == "branin");
}

TEST_CASE("failure kinds have names")
{
    CHECK(std::string(to_string(Evaluation::Failure::Timeout)) == "timeout");
    CHECK(std::string(to_string(Evaluation::Failure::Parse)) == "parse");
    CHECK(Evaluation::failed(Evaluation::Failure::Exit, "x").ok() == false);
}
