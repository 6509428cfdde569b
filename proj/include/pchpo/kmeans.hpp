#pragma once

#include <Eigen/Dense>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

namespace pchpo {

struct KMeansResult
{
    std::vector<int> assignment; ///< cluster index per row
    Eigen::MatrixXd centroids;   ///< k x dim
    double inertia = std::numeric_limits<double>::infinity();
};

/** Lloyd's algorithm with k-means++ seeding; the restart with the lowest inertia wins. */
template<typename Derived, typename URBG>
KMeansResult kmeans(const Eigen::MatrixBase<Derived> &points, int k, int restarts, int max_iterations, URBG &&rng)
{
    const Eigen::Index n = points.rows();
    if (k < 1 || n < k)
        throw std::invalid_argument("kmeans: need at least k rows");
    const Eigen::MatrixXd x = points.template cast<double>();

    KMeansResult best;
    for (int restart = 0; restart < std::max(1, restarts); ++restart) {
        Eigen::MatrixXd centroids(k, x.cols());

        /* k-means++ seeding */
        std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
        centroids.row(0) = x.row(first(rng));
        Eigen::VectorXd d2 = (x.rowwise() - centroids.row(0)).rowwise().squaredNorm();
        for (int c = 1; c < k; ++c) {
            const double total = d2.sum();
            Eigen::Index pick = 0;
            if (total > 0) {
                double u = std::uniform_real_distribution<double>(0.0, total)(rng);
                for (pick = 0; pick < n - 1; ++pick) {
                    if (u < d2(pick)) break;
                    u -= d2(pick);
                }
            } else {
                pick = first(rng);
            }
            centroids.row(c) = x.row(pick);
            d2 = d2.cwiseMin((x.rowwise() - centroids.row(c)).rowwise().squaredNorm());
        }

        std::vector<int> assignment(std::size_t(n), -1);
        double inertia = 0;
        for (int iteration = 0; iteration < max_iterations; ++iteration) {
            bool changed = false;
            inertia = 0;
            for (Eigen::Index i = 0; i != n; ++i) {
                Eigen::Index nearest;
                inertia += (centroids.rowwise() - x.row(i)).rowwise().squaredNorm().minCoeff(&nearest);
                if (assignment[std::size_t(i)] != int(nearest)) {
                    assignment[std::size_t(i)] = int(nearest);
                    changed = true;
                }
            }
            if (!changed) break;

            Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, x.cols());
            Eigen::VectorXd counts = Eigen::VectorXd::Zero(k);
            for (Eigen::Index i = 0; i != n; ++i) {
                sums.row(assignment[std::size_t(i)]) += x.row(i);
                counts(assignment[std::size_t(i)]) += 1;
            }
            for (int c = 0; c < k; ++c)
                if (counts(c) > 0) centroids.row(c) = sums.row(c) / counts(c);
        }

        if (inertia < best.inertia) {
            best.assignment = std::move(assignment);
            best.centroids = std::move(centroids);
            best.inertia = inertia;
        }
    }
    return best;
}

} // namespace pchpo
