#pragma once

#include "pchpo/circuit.hpp"
#include "pchpo/learn.hpp"
#include "pchpo/objective.hpp"
#include "pchpo/search_space.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace pchpo {

struct OptimizerParams
{
    int init_samples = 5;   ///< J
    int refit_every = 20;   ///< L
    double gamma = 0.9;     ///< decay per iteration since the knowledge arrived
    double rho = 1.0;       ///< gate probability at the interaction iteration
    int n_conditions = 20;  ///< N
    int b_samples = 1;      ///< B
    int max_iterations = 200;
    std::uint64_t seed = 0;
    double ei_lipschitz = 1.0;
    LearnParams learn;

    /** Throws `ValidationError` naming the offending field. */
    void validate() const;
};

/*======================================================================================================================
 * History
 *====================================================================================================================*/

struct Trial
{
    std::int64_t iteration = 0;
    Configuration config;
    Evaluation evaluation;
    bool used_knowledge = false;
    bool refit = false;
    /** Variance of s(H | F = f*) per hyperparameter in model scale, divided by the squared model-scale range.  Empty
     * while no surrogate exists. */
    std::vector<double> sampling_variance;
    std::optional<double> ei_lower_bound;
    bool score_isolated = false; ///< the refit put F in its own product component
};

/** Ordered trials with the incumbent under maximization; failed evaluations are kept but never become incumbent. */
class TrialHistory
{
public:
    void append(Trial trial);

    const std::vector<Trial> & trials() const { return trials_; }
    std::size_t size() const { return trials_.size(); }
    std::size_t successful() const { return successful_; }

    /** Index of the first trial attaining the best score. */
    std::optional<std::size_t> incumbent() const { return incumbent_; }
    std::optional<double> best_score() const;

private:
    std::vector<Trial> trials_;
    std::optional<std::size_t> incumbent_;
    std::size_t successful_ = 0;
};

/*======================================================================================================================
 * Knowledge decay
 *====================================================================================================================*/

struct DecayState
{
    std::optional<UserKnowledge> knowledge;
    std::int64_t T = 0;
    double rho = 1.0;
    double gamma = 0.9;

    bool active() const { return knowledge.has_value(); }
};

/** gamma^(iteration - T) * rho, clamped to [0, 1]. */
double gate_probability(const DecayState &state, std::int64_t iteration);

/*======================================================================================================================
 * Surrogate and selection
 *====================================================================================================================*/

/** s(H, F): variable i < space.size() is hyperparameter i in model scale, the last variable is the standardized score. */
struct Surrogate
{
    Circuit circuit;
    double score_mean = 0;
    double score_std = 1;
    bool score_isolated = false;

    std::size_t score_variable() const { return circuit.schema().size() - 1; }
    double standardize(double score) const { return (score - score_mean) / score_std; }
};

/** Circuit schema for a space plus the score variable. */
Schema surrogate_schema(const SearchSpace &space);

/** Learn s(H, F) from the successful trials of `history`. */
Surrogate fit_surrogate(const SearchSpace &space, const TrialHistory &history, const LearnParams &params);

/** A selected configuration together with the full model-scale point it was decoded from (including F). */
struct Candidate
{
    Configuration config;
    Evidence point;
};

/** Draw from s(H | F = f*), with `f_star` in raw score units. */
Candidate select_without_knowledge(const SearchSpace &space, const Surrogate &surrogate, double f_star,
                                   std::mt19937_64 &rng);

/** Draw N conditions from q, complete each with B draws from s(H' | H^ = condition, F = f*), keep the most likely
 * completion under s(H | F = f*) per condition, and return one survivor uniformly.  The H^ coordinates of the result
 * are the drawn condition values exactly. */
Candidate select_with_knowledge(const SearchSpace &space, const Surrogate &surrogate, double f_star,
                                const UserKnowledge &knowledge, int n_conditions, int b_samples,
                                std::mt19937_64 &rng);

/** Uniform draw with the knowledge entries drawn from q; used before a surrogate exists. */
Configuration select_initial(const SearchSpace &space, const UserKnowledge *knowledge, std::mt19937_64 &rng);

/** Normalized per-hyperparameter variance of s(H | F = f*) (see `Trial::sampling_variance`). */
std::vector<double> sampling_variance(const SearchSpace &space, const Surrogate &surrogate, double f_star);

/** Expected-improvement lower bound of s(H_c | F = f*) over the continuous hyperparameters H_c, with the incumbent
 * and the reference optimum given as configurations.  Empty when the space has no continuous hyperparameters or the
 * induced-tree enumeration is truncated. */
std::optional<double> surrogate_ei_lower_bound(const SearchSpace &space, const Surrogate &surrogate, double f_star,
                                               const Configuration &incumbent, const Configuration &optimum,
                                               double lipschitz);

/*======================================================================================================================
 * Loop
 *====================================================================================================================*/

/** The optimization loop as an explicit state machine: `propose` picks the next configuration, `record` adds its
 * evaluation.  Not thread-safe. */
class Optimizer
{
public:
    struct Proposal
    {
        std::int64_t iteration;
        Configuration config;
        bool used_knowledge;
        bool refit;
        std::vector<double> sampling_variance;
        std::optional<double> ei_lower_bound;
        bool score_isolated;
    };

    Optimizer(SearchSpace space, OptimizerParams params);

    /** Activate `knowledge` from the next iteration on, replacing any active knowledge and restarting the decay
     * clock; a clear deactivates.  Throws `ValidationError` if an entry does not fit the space. */
    void inject(UserKnowledge knowledge);

    Proposal propose();
    const Trial & record(Proposal proposal, Evaluation evaluation);
    const Trial & step(Objective &objective);

    /** Enables the expected-improvement diagnostic at refits. */
    void set_reference_optimum(Configuration optimum) { reference_optimum_ = std::move(optimum); }

    /** Index of the next trial. */
    std::int64_t iteration() const { return std::int64_t(history_.size()); }
    bool finished() const { return iteration() >= params_.max_iterations; }
    bool is_refit_iteration(std::int64_t i) const;

    const SearchSpace & space() const { return space_; }
    const OptimizerParams & params() const { return params_; }
    const TrialHistory & history() const { return history_; }
    const DecayState & decay() const { return decay_; }
    const std::optional<Surrogate> & surrogate() const { return surrogate_; }
    const std::vector<std::int64_t> & refit_iterations() const { return refits_; }

private:
    SearchSpace space_;
    OptimizerParams params_;
    std::mt19937_64 rng_;
    TrialHistory history_;
    DecayState decay_;
    std::optional<Surrogate> surrogate_;
    std::vector<std::int64_t> refits_;
    std::optional<Configuration> reference_optimum_;
    bool pending_ = false;
};

} // namespace pchpo
