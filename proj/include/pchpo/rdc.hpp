#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

namespace pchpo {

/** Empirical copula of a column with a trailing all-ones coordinate: row i holds (rank_i / n, 1), where tied values
 * share the largest rank of their group. */
template<typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 2> empirical_copula(const Eigen::MatrixBase<Derived> &column)
{
    using Scalar = typename Derived::Scalar;
    const Eigen::Index n = column.size();
    Eigen::Matrix<Scalar, Eigen::Dynamic, 2> out(n, 2);

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index(0));
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return column(a) < column(b); });

    for (Eigen::Index end = n; end > 0;) {
        Eigen::Index begin = end - 1;
        while (begin > 0 && column(order[std::size_t(begin - 1)]) == column(order[std::size_t(end - 1)]))
            --begin;
        for (Eigen::Index i = begin; i != end; ++i)
            out(order[std::size_t(i)], 0) = Scalar(end) / Scalar(n);
        end = begin;
    }
    out.col(1).setOnes();
    return out;
}

/** Random projection for one RDC test: `k` linear maps of a copula row (value, 1) with N(0, s^2 * dim) coefficients. */
template<typename Scalar, typename URBG>
Eigen::Matrix<Scalar, 2, Eigen::Dynamic> rdc_projection(unsigned k, Scalar s, URBG &&rng)
{
    constexpr int dim = 2;
    std::normal_distribution<Scalar> normal(Scalar(0), s * std::sqrt(Scalar(dim)));
    Eigen::Matrix<Scalar, 2, Eigen::Dynamic> w(dim, k);
    for (Eigen::Index j = 0; j != w.cols(); ++j)
        for (Eigen::Index i = 0; i != dim; ++i)
            w(i, j) = normal(rng);
    return w;
}

/** Largest canonical correlation between the columns of `a` and `b` (same row count), solving
 *  [0 Cab; Cba 0] v = rho [Caa 0; 0 Cbb] v with `ridge` added to the diagonal blocks. */
template<typename DerivedA, typename DerivedB>
typename DerivedA::Scalar max_canonical_correlation(const Eigen::MatrixBase<DerivedA> &a,
                                                    const Eigen::MatrixBase<DerivedB> &b,
                                                    typename DerivedA::Scalar ridge)
{
    using Scalar = typename DerivedA::Scalar;
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    const Eigen::Index n = a.rows(), p = a.cols(), q = b.cols();

    const Matrix ca = a.rowwise() - a.colwise().mean();
    const Matrix cb = b.rowwise() - b.colwise().mean();
    const Matrix cab = ca.transpose() * cb / Scalar(n - 1);

    Matrix lhs = Matrix::Zero(p + q, p + q);
    lhs.topRightCorner(p, q) = cab;
    lhs.bottomLeftCorner(q, p) = cab.transpose();

    Matrix rhs = Matrix::Zero(p + q, p + q);
    rhs.topLeftCorner(p, p) = ca.transpose() * ca / Scalar(n - 1);
    rhs.bottomRightCorner(q, q) = cb.transpose() * cb / Scalar(n - 1);
    rhs.diagonal().array() += ridge;
    /* exact symmetry for the solver */
    rhs = (rhs + rhs.transpose()) / Scalar(2);

    Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> solver(lhs, rhs, Eigen::EigenvaluesOnly);
    if (solver.info() != Eigen::Success)
        return Scalar(0);
    return std::clamp(solver.eigenvalues().maxCoeff(), Scalar(0), Scalar(1));
}

/** Randomized dependence coefficient of two equally long columns, in [0, 1].
 *
 * Each column is mapped to its empirical copula, both are pushed through the same `k` random sine features
 * (scale `s`), and the largest canonical correlation between the two feature blocks is returned.  A constant
 * column yields 0.  The argument order is canonicalized so that rdc(x, y) == rdc(y, x) for the same generator
 * state. */
template<typename DerivedX, typename DerivedY, typename URBG>
typename DerivedX::Scalar rdc(const Eigen::MatrixBase<DerivedX> &x, const Eigen::MatrixBase<DerivedY> &y, unsigned k,
                              typename DerivedX::Scalar s, URBG &&rng)
{
    using Scalar = typename DerivedX::Scalar;
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    if (x.size() != y.size())
        throw std::invalid_argument("rdc: columns differ in length");
    if (x.size() < 3)
        throw std::invalid_argument("rdc: needs at least 3 observations");
    if (k == 0)
        throw std::invalid_argument("rdc: needs at least one random feature");

    const auto projection = rdc_projection<Scalar>(k, s, rng);

    const Vector xv = x, yv = y;
    if (xv.minCoeff() == xv.maxCoeff() || yv.minCoeff() == yv.maxCoeff())
        return Scalar(0);

    const bool swap = std::lexicographical_compare(yv.data(), yv.data() + yv.size(), xv.data(), xv.data() + xv.size());
    const Vector &first = swap ? yv : xv;
    const Vector &second = swap ? xv : yv;

    using Features = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    const Features fa = (empirical_copula(first) * projection).array().sin();
    const Features fb = (empirical_copula(second) * projection).array().sin();
    return max_canonical_correlation(fa, fb, Scalar(1e-6));
}

} // namespace pchpo
