#include "pchpo/optimizer.hpp"

#include "pchpo/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace pchpo {

namespace {

std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

double model_width(const ModelEncoding &enc)
{
    return enc.kind == ModelEncoding::Kind::Discrete ? double(enc.cardinality) - 1 : enc.hi - enc.lo;
}

Configuration decode(const SearchSpace &space, const Evidence &point, const PartialConfiguration &fixed = {})
{
    std::vector<ParamValue> values(space.size());
    for (std::size_t i = 0; i != space.size(); ++i) {
        auto it = fixed.find(i);
        values[i] = it != fixed.end() ? it->second : space.from_model(i, point[i]);
    }
    return Configuration(space, std::move(values));
}

} // namespace

void OptimizerParams::validate() const
{
    if (init_samples < 1) throw ValidationError("init_samples", "must be >= 1");
    if (refit_every < 1) throw ValidationError("refit_every", "must be >= 1");
    if (n_conditions < 1) throw ValidationError("n_conditions", "must be >= 1");
    if (b_samples < 1) throw ValidationError("b_samples", "must be >= 1");
    if (!(gamma > 0 && gamma <= 1)) throw ValidationError("gamma", "must lie in (0, 1]");
    if (!(rho > 0 && rho <= 1)) throw ValidationError("rho", "must lie in (0, 1]");
    if (max_iterations < 0) throw ValidationError("max_iterations", "must be >= 0");
    if (!(ei_lipschitz >= 0)) throw ValidationError("ei_lipschitz", "must be >= 0");
    try {
        learn.validate();
    } catch (const std::invalid_argument &e) {
        throw ValidationError("learn", e.what());
    }
}

/*======================================================================================================================
 * History
 *====================================================================================================================*/

void TrialHistory::append(Trial trial)
{
    if (!trials_.empty() && trial.iteration <= trials_.back().iteration)
        throw std::invalid_argument("trial iterations must be strictly increasing");
    if (trial.evaluation.ok()) {
        ++successful_;
        if (!incumbent_ || *trial.evaluation.score > *trials_[*incumbent_].evaluation.score)
            incumbent_ = trials_.size();
    }
    trials_.push_back(std::move(trial));
}

std::optional<double> TrialHistory::best_score() const
{
    if (!incumbent_) return std::nullopt;
    return trials_[*incumbent_].evaluation.score;
}

double gate_probability(const DecayState &state, std::int64_t iteration)
{
    const auto t = std::max<std::int64_t>(iteration - state.T, 0);
    return std::clamp(std::pow(state.gamma, double(t)) * state.rho, 0.0, 1.0);
}

/*======================================================================================================================
 * Surrogate
 *====================================================================================================================*/

Schema surrogate_schema(const SearchSpace &space)
{
    Schema schema;
    for (std::size_t i = 0; i != space.size(); ++i) {
        const auto enc = space.encoding(i);
        if (enc.kind == ModelEncoding::Kind::Discrete)
            schema.push_back({ space[i].name, true, enc.cardinality });
        else
            schema.push_back({ space[i].name, false, 0 });
    }
    schema.push_back({ space.score_name(), false, 0 });
    return schema;
}

Surrogate fit_surrogate(const SearchSpace &space, const TrialHistory &history, const LearnParams &params)
{
    if (history.successful() == 0)
        throw std::invalid_argument("fit_surrogate: no successful trials");

    DataMatrix data{ surrogate_schema(space), Eigen::MatrixXd(Eigen::Index(history.successful()),
                                                              Eigen::Index(space.size() + 1)) };
    Eigen::Index r = 0;
    for (const auto &t : history.trials()) {
        if (!t.evaluation.ok()) continue;
        for (std::size_t i = 0; i != space.size(); ++i) data.values(r, Eigen::Index(i)) = space.to_model(i, t.config[i]);
        data.values(r, Eigen::Index(space.size())) = *t.evaluation.score;
        ++r;
    }

    auto scores = data.values.col(Eigen::Index(space.size()));
    const double mean = scores.mean();
    const double sd = std::sqrt((scores.array() - mean).square().mean());
    const double scale = sd > 1e-12 ? sd : 1.0;
    scores = (scores.array() - mean) / scale;

    LearnParams lp = params;
    lp.score_variable = space.size();
    LearnStats stats;
    Circuit circuit = learn(data, lp, &stats);
    return Surrogate{ std::move(circuit), mean, scale, stats.score_isolated };
}

/*======================================================================================================================
 * Selection
 *====================================================================================================================*/

Candidate select_without_knowledge(const SearchSpace &space, const Surrogate &surrogate, double f_star,
                                   std::mt19937_64 &rng)
{
    Evidence evidence(surrogate.circuit.schema().size());
    evidence.set(surrogate.score_variable(), surrogate.standardize(f_star));
    Evidence point = conditional_sample(surrogate.circuit, evidence, rng);
    return { decode(space, point), std::move(point) };
}

Candidate select_with_knowledge(const SearchSpace &space, const Surrogate &surrogate, double f_star,
                                const UserKnowledge &knowledge, int n_conditions, int b_samples,
                                std::mt19937_64 &rng)
{
    if (knowledge.is_clear())
        throw std::invalid_argument("select_with_knowledge: knowledge is a clear");
    if (n_conditions < 1 || b_samples < 1)
        throw std::invalid_argument("select_with_knowledge: N and B must be >= 1");

    const std::size_t f = surrogate.score_variable();
    const double z = surrogate.standardize(f_star);
    const Circuit conditioned = b_samples > 1 ? condition_score(surrogate.circuit, f, z) : surrogate.circuit;

    struct Survivor
    {
        PartialConfiguration condition;
        Evidence point;
    };
    std::vector<Survivor> survivors;
    survivors.reserve(std::size_t(n_conditions));

    for (int n = 0; n != n_conditions; ++n) {
        PartialConfiguration condition = sample_prior(space, knowledge, rng);
        Evidence evidence(surrogate.circuit.schema().size());
        evidence.set(f, z);
        for (const auto &[i, v] : condition) evidence.set(i, space.to_model(i, v));

        Evidence best = conditional_sample(surrogate.circuit, evidence, rng);
        if (b_samples > 1) {
            auto score = [&](const Evidence &pt) {
                Evidence h = pt;
                h.clear(f);
                return log_density(conditioned, h);
            };
            double best_ll = score(best);
            for (int b = 1; b != b_samples; ++b) {
                Evidence pt = conditional_sample(surrogate.circuit, evidence, rng);
                const double ll = score(pt);
                if (ll > best_ll) {
                    best_ll = ll;
                    best = std::move(pt);
                }
            }
        }
        survivors.push_back({ std::move(condition), std::move(best) });
    }

    auto &pick = survivors[std::uniform_int_distribution<std::size_t>(0, survivors.size() - 1)(rng)];
    return { decode(space, pick.point, pick.condition), std::move(pick.point) };
}

Configuration select_initial(const SearchSpace &space, const UserKnowledge *knowledge, std::mt19937_64 &rng)
{
    Configuration uniform = space.sample_uniform(rng);
    if (!knowledge || knowledge->is_clear()) return uniform;
    std::vector<ParamValue> values = uniform.values();
    for (auto &[i, v] : sample_prior(space, *knowledge, rng)) values[i] = std::move(v);
    return Configuration(space, std::move(values));
}

std::vector<double> sampling_variance(const SearchSpace &space, const Surrogate &surrogate, double f_star)
{
    const Circuit conditioned =
        condition_score(surrogate.circuit, surrogate.score_variable(), surrogate.standardize(f_star));
    const Moments m = marginal_moments(conditioned);
    std::vector<double> out(space.size());
    for (std::size_t i = 0; i != space.size(); ++i) {
        const double w = model_width(space.encoding(i));
        out[i] = w > 0 ? m.variance[i] / (w * w) : 0.0;
    }
    return out;
}

std::optional<double> surrogate_ei_lower_bound(const SearchSpace &space, const Surrogate &surrogate, double f_star,
                                               const Configuration &incumbent, const Configuration &optimum,
                                               double lipschitz)
{
    std::vector<std::size_t> continuous;
    for (std::size_t i = 0; i != space.size(); ++i)
        if (space.encoding(i).kind == ModelEncoding::Kind::Continuous) continuous.push_back(i);
    if (continuous.empty()) return std::nullopt;

    const Circuit conditioned =
        condition_score(surrogate.circuit, surrogate.score_variable(), surrogate.standardize(f_star));
    const InducedMixture mixture = extract_induced_mixture(marginal_circuit(conditioned, continuous));
    if (mixture.truncated) return std::nullopt;

    const auto k = Eigen::Index(mixture.trees.size()), d = Eigen::Index(continuous.size());
    Eigen::VectorXd w(k), theta_t(d), theta_star(d);
    Eigen::MatrixXd mu(k, d), sigma(k, d);
    for (Eigen::Index i = 0; i != k; ++i) {
        const auto &tree = mixture.trees[std::size_t(i)];
        w[i] = tree.weight;
        for (Eigen::Index j = 0; j != d; ++j) {
            const auto &g = std::get<GaussianLeaf>(tree.leaves[std::size_t(j)].distribution);
            mu(i, j) = g.mu;
            sigma(i, j) = g.sigma;
        }
    }
    for (Eigen::Index j = 0; j != d; ++j) {
        const auto v = continuous[std::size_t(j)];
        theta_t[j] = space.to_model(v, incumbent[v]);
        theta_star[j] = space.to_model(v, optimum[v]);
    }
    return ei_lower_bound<double>(w, mu, sigma, theta_t, theta_star, lipschitz);
}

/*======================================================================================================================
 * Loop
 *====================================================================================================================*/

Optimizer::Optimizer(SearchSpace space, OptimizerParams params)
    : space_(std::move(space)), params_(std::move(params)), rng_(params_.seed)
{
    params_.validate();
    decay_.rho = params_.rho;
    decay_.gamma = params_.gamma;
}

void Optimizer::inject(UserKnowledge knowledge)
{
    if (knowledge.is_clear()) {
        decay_.knowledge.reset();
        return;
    }
    if (knowledge.entries.empty())
        throw ValidationError("intervention", "knowledge must name at least one hyperparameter");
    for (const auto &[i, spec] : knowledge.entries) {
        if (i >= space_.size())
            throw ValidationError("intervention", "hyperparameter index out of range");
        validate_distribution(space_[i], spec, "intervention." + space_[i].name);
    }
    decay_.knowledge = std::move(knowledge);
    decay_.T = iteration();
    decay_.rho = params_.rho;
}

bool Optimizer::is_refit_iteration(std::int64_t i) const
{
    return i >= params_.init_samples && (i - params_.init_samples) % params_.refit_every == 0;
}

Optimizer::Proposal Optimizer::propose()
{
    if (pending_)
        throw std::logic_error("propose: the previous proposal has not been recorded");

    const std::int64_t i = iteration();
    Proposal p{ i, {}, false, false, {}, std::nullopt, false };

    bool gate = false;
    if (decay_.active())
        gate = std::bernoulli_distribution(gate_probability(decay_, i))(rng_);

    if (i >= params_.init_samples && history_.successful() > 0 && (is_refit_iteration(i) || !surrogate_)) {
        LearnParams lp = params_.learn;
        lp.seed = splitmix64(params_.seed ^ splitmix64(std::uint64_t(i)));
        surrogate_ = fit_surrogate(space_, history_, lp);
        refits_.push_back(i);
        p.refit = true;
        p.score_isolated = surrogate_->score_isolated;
    }

    p.used_knowledge = gate;
    if (!surrogate_) {
        p.config = select_initial(space_, gate ? &*decay_.knowledge : nullptr, rng_);
    } else {
        const double f_star = *history_.best_score();
        p.config = gate ? select_with_knowledge(space_, *surrogate_, f_star, *decay_.knowledge, params_.n_conditions,
                                                params_.b_samples, rng_)
                              .config
                        : select_without_knowledge(space_, *surrogate_, f_star, rng_).config;
        p.sampling_variance = sampling_variance(space_, *surrogate_, f_star);
        if (p.refit && reference_optimum_)
            p.ei_lower_bound = surrogate_ei_lower_bound(space_, *surrogate_, f_star,
                                                        history_.trials()[*history_.incumbent()].config,
                                                        *reference_optimum_, params_.ei_lipschitz);
    }
    pending_ = true;
    return p;
}

const Trial & Optimizer::record(Proposal proposal, Evaluation evaluation)
{
    if (!pending_ || proposal.iteration != iteration())
        throw std::logic_error("record: no matching proposal");
    if (!(evaluation.cost >= 0)) evaluation.cost = 0;
    if (evaluation.ok() && !std::isfinite(*evaluation.score))
        evaluation = Evaluation::failed(Evaluation::Failure::Other, "non-finite score", evaluation.cost);
    history_.append(Trial{ proposal.iteration, std::move(proposal.config), std::move(evaluation),
                           proposal.used_knowledge, proposal.refit, std::move(proposal.sampling_variance),
                           proposal.ei_lower_bound, proposal.score_isolated });
    pending_ = false;
    return history_.trials().back();
}

const Trial & Optimizer::step(Objective &objective)
{
    Proposal p = propose();
    Evaluation e;
    try {
        e = objective.evaluate(p.config);
    } catch (const std::exception &ex) {
        e = Evaluation::failed(Evaluation::Failure::Other, ex.what());
    }
    return record(std::move(p), std::move(e));
}

} // namespace pchpo
