#include "doctest.h"

#include "pchpo/learn.hpp"
#include "pchpo/rdc.hpp"

#include <cmath>
#include <numeric>
#include <random>

using namespace pchpo;

namespace {

std::vector<std::size_t> iota_n(std::size_t n)
{
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), 0);
    return v;
}

DataMatrix continuous_data(const Eigen::MatrixXd &values)
{
    DataMatrix d;
    for (Eigen::Index j = 0; j != values.cols(); ++j)
        d.schema.push_back({ "c" + std::to_string(j), false, 0 });
    d.values = values;
    return d;
}

Eigen::VectorXd uniform_column(Eigen::Index n, double lo, double hi, std::mt19937_64 &rng)
{
    std::uniform_real_distribution<double> u(lo, hi);
    Eigen::VectorXd v(n);
    for (auto &x : v) x = u(rng);
    return v;
}

} // namespace

TEST_CASE("empirical copula uses max rank for ties")
{
    Eigen::VectorXd x(5);
    x << 3.0, 1.0, 3.0, 2.0, 0.5;
    auto cop = empirical_copula(x);
    CHECK(cop(0, 0) == doctest::Approx(1.0));
    CHECK(cop(2, 0) == doctest::Approx(1.0));
    CHECK(cop(1, 0) == doctest::Approx(0.4));
    CHECK(cop(3, 0) == doctest::Approx(0.6));
    CHECK(cop(4, 0) == doctest::Approx(0.2));
    CHECK(cop.col(1).isOnes());
}

TEST_CASE("rdc detects dependence")
{
    std::mt19937_64 rng(17);
    const auto x = uniform_column(1000, 0, 1, rng);
    CHECK(rdc(x, x, 20, 1.0 / 6, rng) >= 0.95);

    const auto z = uniform_column(1000, -1, 1, rng);
    const Eigen::VectorXd z2 = z.array().square();
    CHECK(rdc(z, z2, 20, 1.0 / 6, rng) >= 0.8);

    int below = 0;
    for (int rep = 0; rep != 100; ++rep) {
        const auto a = uniform_column(1000, 0, 1, rng);
        const auto b = uniform_column(1000, 0, 1, rng);
        below += rdc(a, b, 20, 1.0 / 6, rng) < 0.3;
    }
    CHECK(below >= 95);
}

TEST_CASE("rdc edge cases")
{
    std::mt19937_64 rng(1);
    const auto x = uniform_column(50, 0, 1, rng);
    const Eigen::VectorXd constant = Eigen::VectorXd::Constant(50, 2.0);
    CHECK(rdc(x, constant, 20, 1.0 / 6, rng) == 0.0);
    CHECK_THROWS_AS(rdc(x, Eigen::VectorXd(x.head(10)), 20, 1.0 / 6, rng), std::invalid_argument);
    CHECK_THROWS_AS(rdc(Eigen::VectorXd(x.head(2)), Eigen::VectorXd(x.head(2)), 20, 1.0 / 6, rng),
                    std::invalid_argument);

    /* symmetric under a shared projection draw */
    const auto y = uniform_column(50, 0, 1, rng);
    const Eigen::VectorXd yx = y + 0.3 * x;
    std::mt19937_64 r1(99), r2(99);
    CHECK(rdc(x, yx, 20, 1.0 / 6, r1) == rdc(yx, x, 20, 1.0 / 6, r2));
    const double v = rdc(x, yx, 20, 1.0 / 6, rng);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
}

TEST_CASE("split_variables")
{
    std::mt19937_64 rng(3);
    const Eigen::Index n = 500;
    LearnParams params;

    SUBCASE("independent columns")
    {
        Eigen::MatrixXd m(n, 3);
        for (int j = 0; j != 3; ++j) m.col(j) = uniform_column(n, 0, 1, rng);
        auto parts = split_variables(continuous_data(m), iota_n(std::size_t(n)), { 0, 1, 2 }, params, rng);
        CHECK(parts.size() == 3);
    }

    SUBCASE("duplicated column")
    {
        Eigen::MatrixXd m(n, 3);
        m.col(0) = uniform_column(n, 0, 1, rng);
        m.col(1) = m.col(0);
        m.col(2) = uniform_column(n, 0, 1, rng);
        auto parts = split_variables(continuous_data(m), iota_n(std::size_t(n)), { 0, 1, 2 }, params, rng);
        REQUIRE(parts.size() == 2);
        CHECK(parts[0] == std::vector<std::size_t>{ 0, 1 });
        CHECK(parts[1] == std::vector<std::size_t>{ 2 });
    }

    SUBCASE("single column")
    {
        Eigen::MatrixXd m = uniform_column(n, 0, 1, rng);
        auto parts = split_variables(continuous_data(m), iota_n(std::size_t(n)), { 0 }, params, rng);
        CHECK(parts.size() == 1);
    }
}

TEST_CASE("split_instances")
{
    std::mt19937_64 rng(4);
    LearnParams params;

    SUBCASE("two blobs")
    {
        std::normal_distribution<double> noise(0, 0.1);
        Eigen::MatrixXd m(100, 2);
        for (int i = 0; i != 100; ++i) {
            const double c = i < 50 ? -3 : 3;
            m(i, 0) = c + noise(rng);
            m(i, 1) = -c + noise(rng);
        }
        auto split = split_instances(continuous_data(m), iota_n(100), { 0, 1 }, params, rng);
        REQUIRE(split.clusters.size() == 2);
        CHECK(std::abs(split.weights[0] - 0.5) <= 0.05);
        CHECK(std::abs(split.weights[1] - 0.5) <= 0.05);
        CHECK(split.weights[0] + split.weights[1] == 1.0);
    }

    SUBCASE("identical rows")
    {
        Eigen::MatrixXd m = Eigen::MatrixXd::Constant(100, 3, 1.5);
        auto split = split_instances(continuous_data(m), iota_n(100), { 0, 1, 2 }, params, rng);
        CHECK(split.clusters.size() == 1);
        CHECK(split.weights == std::vector<double>{ 1.0 });
    }

    SUBCASE("weights sum to one")
    {
        Eigen::MatrixXd m(77, 2);
        m.col(0) = uniform_column(77, 0, 1, rng);
        m.col(1) = uniform_column(77, 0, 1, rng);
        auto split = split_instances(continuous_data(m), iota_n(77), { 0, 1 }, params, rng);
        double total = 0;
        std::size_t rows = 0;
        for (std::size_t i = 0; i != split.clusters.size(); ++i) {
            total += split.weights[i];
            rows += split.clusters[i].size();
            CHECK(!split.clusters[i].empty());
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-15));
        CHECK(rows == 77);
    }
}

TEST_CASE("fit_leaf")
{
    LearnParams params;

    SUBCASE("smoothed categorical")
    {
        params.smoothing = 1e-3;
        Eigen::VectorXd col(4);
        col << 0, 0, 0, 1;
        auto leaf = std::get<CategoricalLeaf>(fit_leaf(col, { "c", true, 2 }, params));
        CHECK(leaf.probabilities[0] == doctest::Approx(3.001 / 4.002).epsilon(1e-12));
        CHECK(std::abs(leaf.probabilities[0] - 0.74994) <= 1e-4);
    }

    SUBCASE("constant column floors sigma")
    {
        Eigen::VectorXd col = Eigen::VectorXd::Constant(20, 5.0);
        auto leaf = std::get<GaussianLeaf>(fit_leaf(col, { "x", false, 0 }, params));
        CHECK(leaf.mu == 5.0);
        CHECK(leaf.sigma == params.sigma_floor);
    }

    SUBCASE("standard normal sample")
    {
        std::mt19937_64 rng(8);
        std::normal_distribution<double> n(0, 1);
        Eigen::VectorXd col(10000);
        for (auto &x : col) x = n(rng);
        auto leaf = std::get<GaussianLeaf>(fit_leaf(col, { "x", false, 0 }, params));
        CHECK(std::abs(leaf.mu) <= 0.05);
        CHECK(std::abs(leaf.sigma - 1) <= 0.05);
    }
}

TEST_CASE("learn")
{
    std::mt19937_64 rng(9);

    SUBCASE("independent variables carry no structure penalty")
    {
        Eigen::MatrixXd m(500, 2);
        m.col(0) = uniform_column(500, 0, 1, rng);
        std::normal_distribution<double> n(2, 0.5);
        for (Eigen::Index i = 0; i != 500; ++i) m(i, 1) = n(rng);
        auto data = continuous_data(m);
        LearnParams params;
        const double learned = training_log_likelihood(learn(data, params), data);
        const double factorized = training_log_likelihood(learn_factorized(data, params), data);
        CHECK(std::abs(learned - factorized) <= 0.02 * std::abs(factorized));
    }

    SUBCASE("diagonal discrete joint")
    {
        DataMatrix data;
        data.schema = { { "X1", true, 2 }, { "X2", true, 2 } };
        data.values.resize(400, 2);
        std::bernoulli_distribution coin(0.5);
        for (Eigen::Index i = 0; i != 400; ++i) data.values(i, 0) = data.values(i, 1) = coin(rng) ? 1 : 0;
        LearnStats stats;
        LearnParams params;
        params.smoothing = 1e-3; // the structure is under test, not the pseudo-count
        auto c = learn(data, params, &stats);
        auto at = [&](double a, double b) {
            Evidence e(2);
            e.set(0, a);
            e.set(1, b);
            return std::exp(log_density(c, e));
        };
        CHECK(at(0, 0) >= 100 * at(0, 1));
        CHECK(at(1, 1) >= 100 * at(1, 0));
        CHECK(stats.sum_nodes >= 1);
    }

    SUBCASE("single row")
    {
        DataMatrix data;
        data.schema = { { "a", true, 3 }, { "x", false, 0 } };
        data.values.resize(1, 2);
        data.values << 1, 0.5;
        auto c = learn(data, LearnParams{});
        CHECK(std::holds_alternative<ProductNode>(c.nodes()[c.root()]));
        CHECK(c.size() == 3);
    }

    SUBCASE("empty data is an error")
    {
        DataMatrix data;
        data.schema = { { "x", false, 0 } };
        data.values.resize(0, 1);
        CHECK_THROWS_AS(learn(data, LearnParams{}), std::invalid_argument);
    }

    SUBCASE("determinism")
    {
        Eigen::MatrixXd m(200, 3);
        for (int j = 0; j != 3; ++j) m.col(j) = uniform_column(200, 0, 1, rng);
        m.col(2) = m.col(0).array().sin() + 0.1 * m.col(2).array();
        auto data = continuous_data(m);
        LearnParams params;
        params.seed = 42;
        CHECK(serialize(learn(data, params)) == serialize(learn(data, params)));
    }
}

TEST_CASE("learned circuits dominate the factorized baseline")
{
    for (std::uint64_t seed = 0; seed != 10; ++seed) {
        CAPTURE(seed);
        std::mt19937_64 rng(seed);
        const Eigen::Index n = 60 + Eigen::Index(seed) * 25;
        DataMatrix data;
        data.schema = { { "c", true, 3 }, { "k", true, 10 }, { "x", false, 0 }, { "F", false, 0 } };
        data.values.resize(n, 4);
        std::uniform_int_distribution<int> c3(0, 2), k10(0, 9);
        std::uniform_real_distribution<double> u(0, 1);
        std::normal_distribution<double> noise(0, 0.05);
        for (Eigen::Index i = 0; i != n; ++i) {
            const int c = c3(rng), k = k10(rng);
            const double x = u(rng);
            data.values.row(i) << c, k, x, (c == 0 ? 1.0 : 0.2) - 0.1 * (k - 3) * (k - 3) / 10 - 5 * (x - 0.2) * (x - 0.2) +
                                               noise(rng);
        }
        LearnParams params;
        params.seed = seed;
        params.score_variable = 3;
        auto learned = learn(data, params);
        const double ll = training_log_likelihood(learned, data);
        const double base = training_log_likelihood(learn_factorized(data, params), data);
        CHECK(ll >= base - 1e-6 * double(n));
        CHECK(std::abs(log_density(learned, Evidence(4))) <= 1e-9);
    }
}

TEST_CASE("learn params validation")
{
    LearnParams p;
    CHECK_NOTHROW(p.validate());
    p.rdc_threshold = 1.0;
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);
    p = LearnParams{};
    p.kmeans_k = 1;
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);
    p = LearnParams{};
    p.rdc_features = 0;
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);
    p = LearnParams{};
    p.smoothing = 0;
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);
    CHECK(dynamic_min_instances(50) == 10);
    CHECK(dynamic_min_instances(101) == 11);
    CHECK(dynamic_min_instances(1000) == 100);
}
