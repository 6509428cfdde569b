#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace pchpo {

/*======================================================================================================================
 * Schema and leaves
 *====================================================================================================================*/

/** One random variable of a circuit.  Discrete variables take integer codes in [0, cardinality). */
struct Variable
{
    std::string name;
    bool discrete = false;
    std::size_t cardinality = 0;

    bool operator==(const Variable &) const = default;
};

using Schema = std::vector<Variable>;

struct CategoricalLeaf
{
    std::vector<double> probabilities; ///< strictly positive, sums to 1
};

struct GaussianLeaf
{
    double mu;
    double sigma; ///< > 0
};

using LeafDistribution = std::variant<CategoricalLeaf, GaussianLeaf>;

double leaf_log_density(const LeafDistribution &leaf, double x);
double leaf_sample(const LeafDistribution &leaf, std::mt19937_64 &rng);

/*======================================================================================================================
 * Nodes
 *====================================================================================================================*/

using NodeId = std::uint32_t;

struct SumNode
{
    std::vector<NodeId> children;
    std::vector<double> log_weights; ///< log-sum-exp to 0
};

struct ProductNode
{
    std::vector<NodeId> children;
};

struct LeafNode
{
    std::size_t variable;
    LeafDistribution distribution;
};

using Node = std::variant<SumNode, ProductNode, LeafNode>;

/** Per-variable values in model scale (category codes or reals); unset entries are marginalized. */
class Evidence
{
public:
    Evidence() = default;
    explicit Evidence(std::size_t num_variables) : values_(num_variables) { }

    std::size_t size() const { return values_.size(); }
    bool has(std::size_t var) const { return var < values_.size() && values_[var].has_value(); }
    double operator[](std::size_t var) const { return *values_.at(var); }
    const std::optional<double> & get(std::size_t var) const { return values_.at(var); }
    void set(std::size_t var, double value) { values_.at(var) = value; }
    void clear(std::size_t var) { values_.at(var).reset(); }

private:
    std::vector<std::optional<double>> values_;
};

/*======================================================================================================================
 * Circuit
 *====================================================================================================================*/

/** A smooth, decomposable probabilistic circuit stored as a topologically ordered arena: every child id is smaller
 * than its parent's and the last node is the root.  Construction validates the structure and throws
 * `std::invalid_argument` on any violation, so every `Circuit` value is valid.  Immutable. */
class Circuit
{
public:
    Circuit(Schema schema, std::vector<Node> nodes);

    const Schema & schema() const { return schema_; }
    const std::vector<Node> & nodes() const { return nodes_; }
    std::size_t size() const { return nodes_.size(); }
    NodeId root() const { return NodeId(nodes_.size() - 1); }

    /** Sorted variable indices the node's distribution covers. */
    const std::vector<std::size_t> & scope(NodeId id) const { return scopes_[id]; }
    const std::vector<std::size_t> & scope() const { return scopes_.back(); }
    bool in_scope(std::size_t var) const;

    std::optional<std::size_t> variable_index(std::string_view name) const;

private:
    Schema schema_;
    std::vector<Node> nodes_;
    std::vector<std::vector<std::size_t>> scopes_;
};

/** Incremental construction; nodes may only reference nodes created before them. */
class CircuitBuilder
{
public:
    explicit CircuitBuilder(Schema schema) : schema_(std::move(schema)) { }

    NodeId leaf(std::size_t variable, LeafDistribution distribution);
    NodeId product(std::vector<NodeId> children);
    /** Weights must be finite and positive; they are normalized. */
    NodeId sum(std::vector<NodeId> children, std::span<const double> weights);
    /** Log-weights are normalized with log-sum-exp. */
    NodeId sum_log(std::vector<NodeId> children, std::vector<double> log_weights);

    std::size_t size() const { return nodes_.size(); }

    /** Keeps only nodes reachable from `root`, which becomes the last node. */
    Circuit build(NodeId root) &&;

private:
    Schema schema_;
    std::vector<Node> nodes_;
};

/*======================================================================================================================
 * Inference
 *====================================================================================================================*/

double log_sum_exp(std::span<const double> xs);

/** Bottom-up pass: log value of every node given `evidence`; unassigned leaves evaluate to log 1. */
std::vector<double> node_log_values(const Circuit &circuit, const Evidence &evidence);

/** Log (marginal) density at `evidence`.  Variables without evidence are marginalized. */
double log_density(const Circuit &circuit, const Evidence &evidence);

/** Structure-modifying marginalization onto `keep`; throws `std::invalid_argument` for variables outside the
 * circuit's scope or an empty `keep`. */
Circuit marginal_circuit(const Circuit &circuit, std::span<const std::size_t> keep);

/** Circuit over the unassigned variables representing p(rest | evidence).  Evidence leaves are evaluated and their
 * values absorbed into ancestor sum weights, which are renormalized; evidence variables leave the scope. */
Circuit condition(const Circuit &circuit, const Evidence &evidence);

/** s(H | F = f_star): `condition` on the single score variable. */
Circuit condition_score(const Circuit &circuit, std::size_t score_variable, double f_star);

/** Draw the unassigned scope variables from p(unassigned | evidence).  Assigned variables are copied verbatim. */
Evidence conditional_sample(const Circuit &circuit, const Evidence &evidence, std::mt19937_64 &rng);

/** Per-variable mean and variance of the circuit's marginals, indexed by schema variable (NaN outside scope). */
struct Moments
{
    std::vector<double> mean;
    std::vector<double> variance;
};
Moments marginal_moments(const Circuit &circuit);

/*======================================================================================================================
 * Serialization
 *====================================================================================================================*/

/** Versioned line-oriented text form; `parse_circuit(serialize(c))` reproduces `c` exactly. */
std::string serialize(const Circuit &circuit);
Circuit parse_circuit(std::string_view text);

} // namespace pchpo
