#pragma once

// Independent reference computations shared by the unit and acceptance tests.

#include "pchpo/circuit.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <vector>

namespace oracle {

using pchpo::Circuit;
using pchpo::CircuitBuilder;
using pchpo::NodeId;

inline std::vector<double> random_simplex(std::size_t k, std::mt19937_64 &rng, double floor = 0.02)
{
    std::gamma_distribution<double> g(1.0, 1.0);
    std::vector<double> w(k);
    double total = 0;
    for (auto &x : w) total += (x = g(rng) + floor);
    for (auto &x : w) x /= total;
    return w;
}

/** Random smooth, decomposable circuit over `schema`.  Discrete variables get categorical leaves, continuous ones
 * Gaussian leaves with mu in [-2, 2] and sigma in [0.3, 1.5]. */
inline Circuit random_circuit(const pchpo::Schema &schema, std::mt19937_64 &rng, int max_depth = 4)
{
    CircuitBuilder b(schema);
    std::uniform_real_distribution<double> u(0, 1);

    auto make_leaf = [&](std::size_t v) -> NodeId {
        if (schema[v].discrete)
            return b.leaf(v, pchpo::CategoricalLeaf{ random_simplex(schema[v].cardinality, rng) });
        return b.leaf(v, pchpo::GaussianLeaf{ -2 + 4 * u(rng), 0.3 + 1.2 * u(rng) });
    };

    std::function<NodeId(std::vector<std::size_t>, int)> build = [&](std::vector<std::size_t> scope,
                                                                       int depth) -> NodeId {
        if (scope.size() == 1 && (depth >= max_depth || u(rng) < 0.5))
            return make_leaf(scope[0]);
        if (depth >= max_depth) {
            std::vector<NodeId> leaves;
            for (auto v : scope) leaves.push_back(make_leaf(v));
            return b.product(leaves);
        }
        if (scope.size() > 1 && u(rng) < 0.5) {
            std::shuffle(scope.begin(), scope.end(), rng);
            const auto cut = std::uniform_int_distribution<std::size_t>(1, scope.size() - 1)(rng);
            std::vector<std::size_t> left(scope.begin(), scope.begin() + std::ptrdiff_t(cut));
            std::vector<std::size_t> right(scope.begin() + std::ptrdiff_t(cut), scope.end());
            std::sort(left.begin(), left.end());
            std::sort(right.begin(), right.end());
            return b.product({ build(left, depth + 1), build(right, depth + 1) });
        }
        const auto k = std::uniform_int_distribution<std::size_t>(2, 3)(rng);
        std::vector<NodeId> children;
        for (std::size_t i = 0; i != k; ++i) children.push_back(build(scope, depth + 1));
        const auto w = random_simplex(k, rng);
        return b.sum(children, w);
    };

    std::vector<std::size_t> all(schema.size());
    std::iota(all.begin(), all.end(), 0);
    const NodeId root = build(all, 0);
    return std::move(b).build(root);
}

inline pchpo::Schema discrete_schema(const std::vector<std::size_t> &cardinalities)
{
    pchpo::Schema s;
    for (std::size_t i = 0; i != cardinalities.size(); ++i)
        s.push_back({ "X" + std::to_string(i), true, cardinalities[i] });
    return s;
}

/** Every joint state of a fully discrete schema, in mixed-radix order. */
inline std::vector<std::vector<std::size_t>> all_states(const pchpo::Schema &schema,
                                                        const std::vector<std::size_t> &vars)
{
    std::vector<std::vector<std::size_t>> out;
    std::vector<std::size_t> state(vars.size(), 0);
    for (;;) {
        out.push_back(state);
        std::size_t i = 0;
        for (; i != vars.size(); ++i) {
            if (++state[i] < schema[vars[i]].cardinality) break;
            state[i] = 0;
        }
        if (i == vars.size()) break;
    }
    return out;
}

/** Direct recursive evaluation of the density without log-space tricks: leaves without evidence are 1. */
inline double direct_value(const Circuit &c, NodeId id, const std::vector<std::optional<double>> &x)
{
    const auto &node = c.nodes()[id];
    if (auto leaf = std::get_if<pchpo::LeafNode>(&node)) {
        const auto &v = x[leaf->variable];
        if (!v) return 1.0;
        if (auto cat = std::get_if<pchpo::CategoricalLeaf>(&leaf->distribution))
            return cat->probabilities[std::size_t(*v)];
        const auto &g = std::get<pchpo::GaussianLeaf>(leaf->distribution);
        const double z = (*v - g.mu) / g.sigma;
        return std::exp(-0.5 * z * z) / (g.sigma * std::sqrt(2 * M_PI));
    }
    if (auto p = std::get_if<pchpo::ProductNode>(&node)) {
        double out = 1;
        for (auto ch : p->children) out *= direct_value(c, ch, x);
        return out;
    }
    const auto &s = std::get<pchpo::SumNode>(node);
    double out = 0;
    for (std::size_t i = 0; i != s.children.size(); ++i)
        out += std::exp(s.log_weights[i]) * direct_value(c, s.children[i], x);
    return out;
}

inline double direct_density(const Circuit &c, const std::vector<std::optional<double>> &x)
{
    return direct_value(c, c.root(), x);
}

/** Pearson chi-square goodness of fit; bins with expected count below 5 are pooled into one. */
inline double chi_square_p_value(const std::vector<double> &observed, const std::vector<double> &probabilities)
{
    const double n = std::accumulate(observed.begin(), observed.end(), 0.0);
    double stat = 0, pooled_obs = 0, pooled_exp = 0;
    std::size_t bins = 0;
    for (std::size_t i = 0; i != observed.size(); ++i) {
        const double e = n * probabilities[i];
        if (e < 5) {
            pooled_obs += observed[i];
            pooled_exp += e;
            continue;
        }
        stat += (observed[i] - e) * (observed[i] - e) / e;
        ++bins;
    }
    if (pooled_exp > 0) {
        stat += (pooled_obs - pooled_exp) * (pooled_obs - pooled_exp) / std::max(pooled_exp, 1e-12);
        ++bins;
    }
    if (bins < 2) return 1.0;
    boost::math::chi_squared dist(double(bins - 1));
    return boost::math::cdf(boost::math::complement(dist, stat));
}

/** Total-variation distance between an empirical histogram and a probability vector. */
inline double total_variation(const std::vector<double> &counts, const std::vector<double> &probabilities)
{
    const double n = std::accumulate(counts.begin(), counts.end(), 0.0);
    double tv = 0;
    for (std::size_t i = 0; i != counts.size(); ++i) tv += std::abs(counts[i] / n - probabilities[i]);
    return tv / 2;
}

/** Two-sided Kolmogorov-Smirnov statistic of a sample against a continuous CDF. */
inline double ks_statistic(std::vector<double> sample, const std::function<double(double)> &cdf)
{
    std::sort(sample.begin(), sample.end());
    const double n = double(sample.size());
    double d = 0;
    for (std::size_t i = 0; i != sample.size(); ++i) {
        const double f = cdf(sample[i]);
        d = std::max({ d, double(i + 1) / n - f, f - double(i) / n });
    }
    return d;
}

/** One-sided Mann-Whitney / Wilcoxon rank-sum test with normal approximation and tie correction: p-value of the
 * alternative that `a` tends to exceed `b`. */
inline double wilcoxon_rank_sum_greater(const std::vector<double> &a, const std::vector<double> &b)
{
    std::vector<std::pair<double, int>> pooled;
    for (double x : a) pooled.push_back({ x, 0 });
    for (double x : b) pooled.push_back({ x, 1 });
    std::sort(pooled.begin(), pooled.end());
    const double n1 = double(a.size()), n2 = double(b.size()), n = n1 + n2;
    double rank_sum_a = 0, tie_term = 0;
    for (std::size_t i = 0; i != pooled.size();) {
        std::size_t j = i;
        while (j != pooled.size() && pooled[j].first == pooled[i].first) ++j;
        const double avg_rank = (double(i + 1) + double(j)) / 2;
        const double t = double(j - i);
        tie_term += t * t * t - t;
        for (std::size_t k = i; k != j; ++k)
            if (pooled[k].second == 0) rank_sum_a += avg_rank;
        i = j;
    }
    const double u = rank_sum_a - n1 * (n1 + 1) / 2;
    const double mean = n1 * n2 / 2;
    const double var = n1 * n2 / 12 * ((n + 1) - tie_term / (n * (n - 1)));
    if (var <= 0) return 1.0;
    const double z = (u - mean - 0.5) / std::sqrt(var);
    return boost::math::cdf(boost::math::complement(boost::math::normal(), z));
}

} // namespace oracle
