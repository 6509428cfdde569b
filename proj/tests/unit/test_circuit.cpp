#include "doctest.h"

#include "pchpo/circuit.hpp"

#include "../support/oracles.hpp"

#include <cmath>
#include <random>

using namespace pchpo;

namespace {

constexpr double kTiny = 1e-12;

/* 0.5 * d(X1=a) d(X2=a) + 0.5 * d(X1=b) d(X2=b) with near-degenerate leaves */
Circuit diagonal_mixture()
{
    CircuitBuilder b(oracle::discrete_schema({ 2, 2 }));
    const CategoricalLeaf at_a{ { 1 - kTiny, kTiny } }, at_b{ { kTiny, 1 - kTiny } };
    auto pa = b.product({ b.leaf(0, at_a), b.leaf(1, at_a) });
    auto pb = b.product({ b.leaf(0, at_b), b.leaf(1, at_b) });
    const double w[] = { 0.5, 0.5 };
    return std::move(b).build(b.sum({ pa, pb }, w));
}

/* 0.7 * d(X1=a) N(F; 0, 1) + 0.3 * d(X1=b) N(F; 2, 1) */
Circuit score_mixture()
{
    Schema schema{ { "X1", true, 2 }, { "F", false, 0 } };
    CircuitBuilder b(schema);
    auto c0 = b.product({ b.leaf(0, CategoricalLeaf{ { 1 - kTiny, kTiny } }), b.leaf(1, GaussianLeaf{ 0, 1 }) });
    auto c1 = b.product({ b.leaf(0, CategoricalLeaf{ { kTiny, 1 - kTiny } }), b.leaf(1, GaussianLeaf{ 2, 1 }) });
    const double w[] = { 0.7, 0.3 };
    return std::move(b).build(b.sum({ c0, c1 }, w));
}

double phi(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2 * M_PI); }

Evidence evidence_of(std::size_t n, std::initializer_list<std::pair<std::size_t, double>> values)
{
    Evidence e(n);
    for (auto [v, x] : values) e.set(v, x);
    return e;
}

} // namespace

TEST_CASE("mixture densities")
{
    auto c = diagonal_mixture();
    CHECK(std::exp(log_density(c, evidence_of(2, { { 0, 0 }, { 1, 0 } }))) == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(std::exp(log_density(c, evidence_of(2, { { 0, 0 } }))) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(log_density(c, Evidence(2)) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(std::exp(log_density(c, evidence_of(2, { { 0, 0 }, { 1, 1 } }))) < 1e-11);
}

TEST_CASE("single gaussian leaf")
{
    CircuitBuilder b(Schema{ { "F", false, 0 } });
    auto c = std::move(b).build(b.leaf(0, GaussianLeaf{ 0, 1 }));
    CHECK(std::exp(log_density(c, evidence_of(1, { { 0, 0.0 } }))) == doctest::Approx(0.39894).epsilon(1e-5));
}

TEST_CASE("construction rejects invalid structure")
{
    Schema schema = oracle::discrete_schema({ 2, 2 });
    const CategoricalLeaf uniform{ { 0.5, 0.5 } };

    SUBCASE("product over overlapping scopes")
    {
        std::vector<Node> nodes{ LeafNode{ 0, uniform }, LeafNode{ 0, uniform }, ProductNode{ { 0, 1 } } };
        CHECK_THROWS_AS(Circuit(schema, nodes), std::invalid_argument);
    }
    SUBCASE("sum over different scopes")
    {
        std::vector<Node> nodes{ LeafNode{ 0, uniform }, LeafNode{ 1, uniform },
                                 SumNode{ { 0, 1 }, { std::log(0.5), std::log(0.5) } } };
        CHECK_THROWS_AS(Circuit(schema, nodes), std::invalid_argument);
    }
    SUBCASE("unnormalized weights")
    {
        std::vector<Node> nodes{ LeafNode{ 0, uniform }, LeafNode{ 0, uniform },
                                 SumNode{ { 0, 1 }, { std::log(0.5), std::log(0.6) } } };
        CHECK_THROWS_AS(Circuit(schema, nodes), std::invalid_argument);
    }
    SUBCASE("zero weight")
    {
        CircuitBuilder b(schema);
        auto l0 = b.leaf(0, uniform), l1 = b.leaf(0, uniform);
        const double w[] = { 1.0, 0.0 };
        CHECK_THROWS_AS(b.sum({ l0, l1 }, w), std::invalid_argument);
    }
    SUBCASE("non-positive leaf parameters")
    {
        std::vector<Node> zero_prob{ LeafNode{ 0, CategoricalLeaf{ { 1.0, 0.0 } } } };
        CHECK_THROWS_AS(Circuit(schema, zero_prob), std::invalid_argument);
        std::vector<Node> zero_sigma{ LeafNode{ 0, GaussianLeaf{ 0, 0 } } };
        CHECK_THROWS_AS(Circuit(Schema{ { "x", false, 0 } }, zero_sigma), std::invalid_argument);
    }
    SUBCASE("children must precede parents")
    {
        std::vector<Node> nodes{ ProductNode{ { 1, 2 } }, LeafNode{ 0, uniform }, LeafNode{ 1, uniform } };
        CHECK_THROWS_AS(Circuit(schema, nodes), std::invalid_argument);
    }
}

TEST_CASE("marginal_circuit")
{
    SUBCASE("keep all variables is an identity")
    {
        std::mt19937_64 rng(1);
        Schema schema{ { "a", true, 3 }, { "x", false, 0 }, { "y", false, 0 } };
        auto c = oracle::random_circuit(schema, rng);
        const std::size_t keep[] = { 0, 1, 2 };
        auto m = marginal_circuit(c, keep);
        CHECK(m.size() == c.size());
        std::normal_distribution<double> n(0, 2);
        for (int i = 0; i != 100; ++i) {
            auto e = evidence_of(3, { { 0, double(i % 3) }, { 1, n(rng) }, { 2, n(rng) } });
            CHECK(std::abs(log_density(m, e) - log_density(c, e)) <= 1e-12);
        }
    }

    SUBCASE("mixture marginal")
    {
        auto c = diagonal_mixture();
        const std::size_t keep[] = { 0 };
        auto m = marginal_circuit(c, keep);
        CHECK(m.scope() == std::vector<std::size_t>{ 0 });
        CHECK(std::exp(log_density(m, evidence_of(2, { { 0, 0 } }))) == doctest::Approx(0.5).epsilon(1e-12));
    }

    SUBCASE("random discrete circuits against enumeration")
    {
        std::mt19937_64 rng(2);
        for (int trial = 0; trial != 20; ++trial) {
            auto schema = oracle::discrete_schema({ 2 + std::size_t(trial % 3), 3, 4 });
            auto c = oracle::random_circuit(schema, rng);
            for (std::size_t dropped = 0; dropped != 3; ++dropped) {
                std::vector<std::size_t> keep;
                for (std::size_t v = 0; v != 3; ++v)
                    if (v != dropped) keep.push_back(v);
                auto m = marginal_circuit(c, keep);
                for (const auto &state : oracle::all_states(schema, keep)) {
                    std::vector<std::optional<double>> x(3);
                    x[keep[0]] = double(state[0]);
                    x[keep[1]] = double(state[1]);
                    double brute = 0;
                    for (std::size_t k = 0; k != schema[dropped].cardinality; ++k) {
                        x[dropped] = double(k);
                        brute += oracle::direct_density(c, x);
                    }
                    auto e = evidence_of(3, { { keep[0], double(state[0]) }, { keep[1], double(state[1]) } });
                    CHECK(std::abs(std::exp(log_density(m, e)) - brute) <= 1e-10);
                }
            }
        }
    }

    SUBCASE("continuous marginal against trapezoid integration")
    {
        std::mt19937_64 rng(3);
        Schema schema{ { "a", true, 2 }, { "x", false, 0 } };
        for (int trial = 0; trial != 5; ++trial) {
            auto c = oracle::random_circuit(schema, rng);
            const std::size_t keep[] = { 0 };
            auto m = marginal_circuit(c, keep);
            for (int code = 0; code != 2; ++code) {
                const int points = 10000;
                const double lo = -15, hi = 15, h = (hi - lo) / (points - 1);
                double integral = 0;
                for (int i = 0; i != points; ++i) {
                    const double x = lo + h * i;
                    const double f = oracle::direct_density(c, { double(code), x });
                    integral += (i == 0 || i == points - 1) ? f / 2 : f;
                }
                integral *= h;
                const double exact = std::exp(log_density(m, evidence_of(2, { { 0, double(code) } })));
                CHECK(std::abs(exact - integral) / exact <= 1e-6);
            }
        }
    }

    SUBCASE("errors")
    {
        auto c = diagonal_mixture();
        CHECK_THROWS_AS(marginal_circuit(c, std::span<const std::size_t>{}), std::invalid_argument);
        const std::size_t bad[] = { 5 };
        CHECK_THROWS_AS(marginal_circuit(c, bad), std::invalid_argument);
    }
}

TEST_CASE("conditioning on the score")
{
    auto c = score_mixture();
    const double post_b = 0.3 * phi(0) / (0.7 * phi(2) + 0.3 * phi(0));
    CHECK(post_b == doctest::Approx(0.760).epsilon(1e-3));

    auto s = condition_score(c, 1, 2.0);
    CHECK(s.scope() == std::vector<std::size_t>{ 0 });
    const auto &root = std::get<SumNode>(s.nodes()[s.root()]);
    REQUIRE(root.log_weights.size() == 2);
    CHECK(std::exp(root.log_weights[0]) == doctest::Approx(1 - post_b).epsilon(1e-12));
    CHECK(std::exp(root.log_weights[1]) == doctest::Approx(post_b).epsilon(1e-12));
    CHECK(std::exp(root.log_weights[0]) == doctest::Approx(0.240).epsilon(1e-3));
    CHECK(log_density(s, Evidence(2)) == doctest::Approx(0).epsilon(1e-12));

    SUBCASE("single component keeps its weights")
    {
        CircuitBuilder b(Schema{ { "x", false, 0 }, { "F", false, 0 } });
        auto root = b.product({ b.leaf(0, GaussianLeaf{ 1, 2 }), b.leaf(1, GaussianLeaf{ 0.5, 1 }) });
        auto single = std::move(b).build(root);
        auto conditioned = condition_score(single, 1, 0.5);
        CHECK(conditioned.size() == 1);
        CHECK(std::get<GaussianLeaf>(std::get<LeafNode>(conditioned.nodes()[0]).distribution).mu == 1);
    }

    SUBCASE("conditioned random circuits stay normalized")
    {
        std::mt19937_64 rng(4);
        Schema schema{ { "a", true, 3 }, { "x", false, 0 }, { "F", false, 0 } };
        for (int i = 0; i != 20; ++i) {
            auto r = oracle::random_circuit(schema, rng);
            auto conditioned = condition_score(r, 2, std::normal_distribution<double>(0, 1)(rng));
            CHECK(std::abs(log_density(conditioned, Evidence(3))) <= 1e-12);
        }
    }
}

TEST_CASE("conditional_sample")
{
    std::mt19937_64 rng(5);

    SUBCASE("posterior collapses to one component")
    {
        auto c = diagonal_mixture();
        for (int i = 0; i != 1000; ++i) {
            auto out = conditional_sample(c, evidence_of(2, { { 1, 1 } }), rng);
            CHECK(out[0] == 1);
            CHECK(out[1] == 1);
        }
    }

    SUBCASE("two-term bayes posterior")
    {
        auto c = score_mixture();
        const double post_b = 0.3 * phi(0) / (0.7 * phi(2) + 0.3 * phi(0));
        const int draws = 100000;
        int b_count = 0;
        for (int i = 0; i != draws; ++i) {
            auto out = conditional_sample(c, evidence_of(2, { { 1, 2.0 } }), rng);
            CHECK(out[1] == 2.0);
            b_count += out[0] == 1;
        }
        CHECK(std::abs(double(b_count) / draws - post_b) <= 0.005);
    }

    SUBCASE("discrete conditionals match enumeration")
    {
        int passed = 0;
        for (int trial = 0; trial != 10; ++trial) {
            auto schema = oracle::discrete_schema({ 3, 4, 2 });
            auto c = oracle::random_circuit(schema, rng);
            const double given = double(trial % 2);
            const std::vector<std::size_t> free_vars{ 0, 1 };
            std::vector<double> expected;
            for (const auto &s : oracle::all_states(schema, free_vars))
                expected.push_back(oracle::direct_density(c, { double(s[0]), double(s[1]), given }));
            const double z = std::accumulate(expected.begin(), expected.end(), 0.0);
            for (auto &p : expected) p /= z;

            std::vector<double> observed(expected.size(), 0);
            for (int i = 0; i != 100000; ++i) {
                auto out = conditional_sample(c, evidence_of(3, { { 2, given } }), rng);
                observed[std::size_t(out[0]) + 3 * std::size_t(out[1])] += 1;
            }
            passed += oracle::chi_square_p_value(observed, expected) > 0.01;
        }
        CHECK(passed >= 9);
    }

    SUBCASE("zero-probability evidence is an invariant violation")
    {
        auto c = diagonal_mixture();
        CHECK_THROWS_AS(conditional_sample(c, evidence_of(2, { { 1, 7 } }), rng), std::logic_error);
    }
}

TEST_CASE("positivity of learned-style circuits")
{
    std::mt19937_64 rng(6);
    Schema schema{ { "a", true, 4 }, { "x", false, 0 }, { "F", false, 0 } };
    auto c = oracle::random_circuit(schema, rng);
    auto s = condition_score(c, 2, 0.3);
    std::uniform_real_distribution<double> u(-5, 5);
    for (int i = 0; i != 1000; ++i) {
        auto e = evidence_of(3, { { 0, double(i % 4) }, { 1, u(rng) } });
        CHECK(std::isfinite(log_density(s, e)));
    }
}

TEST_CASE("marginal moments")
{
    auto c = score_mixture();
    auto m = marginal_moments(c);
    CHECK(m.mean[1] == doctest::Approx(0.6));
    /* E[F^2] = 0.7 * 1 + 0.3 * 5 */
    CHECK(m.variance[1] == doctest::Approx(2.2 - 0.36));
    CHECK(m.mean[0] == doctest::Approx(0.3).epsilon(1e-9));
}

TEST_CASE("serialization round trip")
{
    std::mt19937_64 rng(7);
    Schema schema{ { "a", true, 3 }, { "x", false, 0 }, { "score", false, 0 } };
    for (int i = 0; i != 10; ++i) {
        auto c = oracle::random_circuit(schema, rng);
        auto text = serialize(c);
        auto back = parse_circuit(text);
        CHECK(serialize(back) == text);
        CHECK(back.schema() == c.schema());
        auto e = evidence_of(3, { { 0, 1 }, { 1, 0.25 }, { 2, -0.5 } });
        CHECK(log_density(back, e) == log_density(c, e));
    }
    CHECK_THROWS(parse_circuit("pchpo-circuit 2\n"));
    CHECK_THROWS(parse_circuit("garbage"));
}
