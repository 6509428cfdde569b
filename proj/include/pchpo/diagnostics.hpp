#pragma once

#include "pchpo/circuit.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace pchpo {

/** One induced tree: one child per sum node, all children per product node.  Its distribution is the product of
 * `leaves`, one per scope variable, sorted by variable. */
struct InducedTree
{
    double weight;
    std::vector<LeafNode> leaves;
};

struct InducedMixture
{
    std::vector<InducedTree> trees;
    bool truncated = false; ///< enumeration stopped at the cap; weights then sum to less than 1
};

/** Rewrites a circuit as the mixture of its induced trees, enumerating at most `cap` trees. */
InducedMixture extract_induced_mixture(const Circuit &circuit, std::size_t cap = 10000);

/** Lower bound on the expected improvement of sampling from a mixture of axis-aligned Gaussians.
 *
 * Row i of `mu` / `sigma` holds the mean and per-dimension scale of component i with weight `w[i]`.  Returns
 *
 *     sum_i w_i (prod_j erf((t_j - mu_ij) / (sigma_ij sqrt 2)) - prod_j erf((s_j - mu_ij) / (sigma_ij sqrt 2))
 *                + L eps_i)
 *
 * with t = `theta_t` (the incumbent), s = `theta_star` (the optimum), alpha_i = min(t - mu_i, s - mu_i) taken
 * componentwise and eps_i = || mu_i + alpha_i * sigma_i - s ||_2.  Throws `std::invalid_argument` on inconsistent
 * dimensions. */
template <typename Scalar>
Scalar ei_lower_bound(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> &w,
                      const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> &mu,
                      const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> &sigma,
                      const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> &theta_t,
                      const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> &theta_star, Scalar lipschitz)
{
    using std::erf;
    using std::sqrt;
    const auto k = w.size(), d = theta_star.size();
    if (mu.rows() != k || sigma.rows() != k || mu.cols() != d || sigma.cols() != d || theta_t.size() != d)
        throw std::invalid_argument("ei_lower_bound: inconsistent dimensions");

    const Scalar root2 = sqrt(Scalar(2));
    Scalar bound(0);
    for (Eigen::Index i = 0; i != k; ++i) {
        const auto m = mu.row(i).transpose();
        const auto s = sigma.row(i).transpose();
        const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> zt = (theta_t - m).array() / (s.array() * root2);
        const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> zs = (theta_star - m).array() / (s.array() * root2);
        const Scalar pt = zt.unaryExpr([](Scalar x) { return erf(x); }).prod();
        const Scalar ps = zs.unaryExpr([](Scalar x) { return erf(x); }).prod();
        const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> alpha = (theta_t - m).cwiseMin(theta_star - m);
        const Scalar eps = (m + alpha.cwiseProduct(s) - theta_star).norm();
        bound += w[i] * (pt - ps + lipschitz * eps);
    }
    return bound;
}

} // namespace pchpo
