#pragma once

#include "pchpo/search_space.hpp"

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace pchpo {

/** Outcome of one black-box evaluation.  A missing score marks a failed evaluation. */
struct Evaluation
{
    enum class Failure { None, Spawn, Exit, Timeout, Parse, Other };

    std::optional<double> score;
    double cost = 0; ///< seconds, >= 0
    Failure failure = Failure::None;
    std::string error;

    bool ok() const { return score.has_value(); }

    static Evaluation success(double score, double cost) { return { score, cost, Failure::None, {} }; }
    static Evaluation failed(Failure kind, std::string message, double cost = 0)
    {
        return { std::nullopt, cost, kind, std::move(message) };
    }
};

const char * to_string(Evaluation::Failure failure);

/** A black-box function f: Θ -> R to be maximized. */
class Objective
{
public:
    virtual ~Objective() = default;

    virtual std::string name() const = 0;
    virtual const SearchSpace & space() const = 0;
    virtual Evaluation evaluate(const Configuration &config) = 0;

    /** Best attainable score, when known. */
    virtual std::optional<double> known_optimum() const { return std::nullopt; }
    /** A maximizer, when known. */
    virtual std::optional<Configuration> known_maximizer() const { return std::nullopt; }
};

/*======================================================================================================================
 * Closed-form objectives
 *====================================================================================================================*/

/** -branin(x1, x2) over x1 in [-5, 10], x2 in [0, 15]. */
double branin(double x1, double x2);

/** base(C) - (K - k*(C))^2 / 10 - 5 (x - x*(C))^2 over C in {a, b, c}, K in [0, 9], x in [0, 1]. */
double mixed_synthetic(const std::string &c, std::int64_t k, double x);

SearchSpace branin_space();
SearchSpace mixed_synthetic_space();

class BraninObjective : public Objective
{
public:
    explicit BraninObjective(double cost = 1.0) : space_(branin_space()), cost_(cost) { }

    std::string name() const override { return "branin"; }
    const SearchSpace & space() const override { return space_; }
    Evaluation evaluate(const Configuration &config) override;
    std::optional<double> known_optimum() const override;
    std::optional<Configuration> known_maximizer() const override;

private:
    SearchSpace space_;
    double cost_;
};

class MixedSyntheticObjective : public Objective
{
public:
    explicit MixedSyntheticObjective(double cost = 1.0) : space_(mixed_synthetic_space()), cost_(cost) { }

    std::string name() const override { return "mixed_synthetic"; }
    const SearchSpace & space() const override { return space_; }
    Evaluation evaluate(const Configuration &config) override;
    std::optional<double> known_optimum() const override { return 1.0; }
    std::optional<Configuration> known_maximizer() const override;

private:
    SearchSpace space_;
    double cost_;
};

/*======================================================================================================================
 * Tabular objective
 *====================================================================================================================*/

/** Lookup table over configurations.  Continuous coordinates are snapped to the nearest value present in the table
 * for that hyperparameter before an exact lookup; configurations still missing from the table resolve to the row
 * nearest in normalized model scale.
 *
 * File format: a header line with the hyperparameter names followed by `score` and `cost`, then one whitespace-
 * separated row per entry.  Lines starting with `#` are ignored. */
class TabularObjective : public Objective
{
public:
    struct Row
    {
        Configuration config;
        double score;
        double cost;
    };

    TabularObjective(SearchSpace space, std::vector<Row> rows, std::string name = "tabular");

    std::string name() const override { return name_; }
    const SearchSpace & space() const override { return space_; }
    Evaluation evaluate(const Configuration &config) override;
    std::optional<double> known_optimum() const override;
    std::optional<Configuration> known_maximizer() const override;

    /** The key a configuration is looked up under.  Idempotent. */
    Configuration round(const Configuration &config) const;
    const std::vector<Row> & rows() const { return rows_; }

private:
    std::size_t nearest_row(const Configuration &config) const;

    SearchSpace space_;
    std::vector<Row> rows_;
    std::string name_;
    std::vector<std::vector<double>> grid_; ///< sorted distinct values per continuous hyperparameter
};

TabularObjective parse_table(std::string_view document, const SearchSpace &space);

/*======================================================================================================================
 * External command
 *====================================================================================================================*/

/** Runs a shell command per evaluation.  `{name}` placeholders in the template are replaced by the hyperparameter
 * values; the last non-empty line of standard output must read `score=<real>`.  Safe to call from any thread. */
class CommandObjective : public Objective
{
public:
    CommandObjective(SearchSpace space, std::string command_template, std::chrono::milliseconds timeout);

    std::string name() const override { return "command"; }
    const SearchSpace & space() const override { return space_; }
    Evaluation evaluate(const Configuration &config) override;

    std::string render(const Configuration &config) const;

private:
    SearchSpace space_;
    std::string template_;
    std::chrono::milliseconds timeout_;
};

/*======================================================================================================================
 * Decorators
 *====================================================================================================================*/

/** Adds N(0, sigma^2) observation noise from a seeded generator. */
class NoisyObjective : public Objective
{
public:
    NoisyObjective(std::unique_ptr<Objective> inner, double sigma, std::uint64_t seed);

    std::string name() const override { return inner_->name(); }
    const SearchSpace & space() const override { return inner_->space(); }
    Evaluation evaluate(const Configuration &config) override;
    std::optional<double> known_optimum() const override { return inner_->known_optimum(); }
    std::optional<Configuration> known_maximizer() const override { return inner_->known_maximizer(); }

private:
    std::unique_ptr<Objective> inner_;
    double sigma_;
    std::mt19937_64 rng_;
};

/** Negates scores so that a loss can be maximized. */
class NegatedObjective : public Objective
{
public:
    explicit NegatedObjective(std::unique_ptr<Objective> inner) : inner_(std::move(inner)) { }

    std::string name() const override { return inner_->name(); }
    const SearchSpace & space() const override { return inner_->space(); }
    Evaluation evaluate(const Configuration &config) override;

private:
    std::unique_ptr<Objective> inner_;
};

} // namespace pchpo
