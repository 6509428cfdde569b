#pragma once

#include "pchpo/circuit.hpp"

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

namespace pchpo {

/** Training data for structure learning: one row per trial, one column per schema variable (discrete columns hold
 * category codes, continuous columns model-scale reals). */
struct DataMatrix
{
    Schema schema;
    Eigen::MatrixXd values;

    /** Throws `std::invalid_argument` on shape mismatch, non-finite entries or out-of-range codes. */
    void validate() const;
};

struct LearnParams
{
    double rdc_threshold = 0.3;
    unsigned rdc_features = 20;
    double rdc_scale = 1.0 / 6.0;
    int kmeans_k = 2;
    int kmeans_restarts = 10;
    int kmeans_iterations = 100;
    /** 0 selects max(10, ceil(0.1 n)) from the row count of the full dataset. */
    std::size_t min_instances = 0;
    int max_depth = 20;
    double sigma_floor = 1e-3;
    /** Pseudo-count added to every label of a categorical leaf. */
    double smoothing = 1.0;
    std::uint64_t seed = 0;
    /** Variable to watch for isolation at the root (see `LearnStats::score_isolated`). */
    std::optional<std::size_t> score_variable;

    void validate() const;
};

struct LearnStats
{
    std::size_t sum_nodes = 0;
    std::size_t product_nodes = 0;
    std::size_t leaves = 0;
    std::size_t min_instances = 0;
    /** The root split placed the score variable in a component of its own, so conditioning on it is vacuous. */
    bool score_isolated = false;
};

std::size_t dynamic_min_instances(std::size_t rows);

/** Connected components of the graph joining columns whose pairwise RDC exceeds the threshold.  `rows` / `cols`
 * select a block of `data`; components hold positions into `cols`, sorted. */
std::vector<std::vector<std::size_t>> split_variables(const DataMatrix &data, const std::vector<std::size_t> &rows,
                                                      const std::vector<std::size_t> &cols, const LearnParams &params,
                                                      std::mt19937_64 &rng);

struct InstanceSplit
{
    std::vector<std::vector<std::size_t>> clusters; ///< row indices into `data`
    std::vector<double> weights;                    ///< cluster size / n
};

/** k-means on z-scored columns.  Identical rows (or a degenerate clustering) yield a single cluster. */
InstanceSplit split_instances(const DataMatrix &data, const std::vector<std::size_t> &rows,
                              const std::vector<std::size_t> &cols, const LearnParams &params, std::mt19937_64 &rng);

/** Smoothed categorical frequencies or Gaussian MLE with sigma floored. */
LeafDistribution fit_leaf(const Eigen::Ref<const Eigen::VectorXd> &column, const Variable &variable,
                          const LearnParams &params);

/** LearnSPN-style recursion alternating variable splits (product nodes) and instance splits (sum nodes).  A sum
 * node is only kept when it does not lower the training likelihood of its rows below the fully factorized leaves.
 * Pure function of (data, params). */
Circuit learn(const DataMatrix &data, const LearnParams &params, LearnStats *stats = nullptr);

/** Product of per-column leaves fitted on all rows. */
Circuit learn_factorized(const DataMatrix &data, const LearnParams &params);

/** Sum over rows of log_density. */
double training_log_likelihood(const Circuit &circuit, const DataMatrix &data);

} // namespace pchpo
