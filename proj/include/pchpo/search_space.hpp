#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace pchpo {

/*======================================================================================================================
 * Errors
 *====================================================================================================================*/

/** Malformed input text.  `line` is 1-based, 0 when the input has no line structure. */
class ParseError : public std::runtime_error
{
public:
    ParseError(std::size_t line, const std::string &message)
        : std::runtime_error(line ? "line " + std::to_string(line) + ": " + message : message)
        , line_(line)
    { }

    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

/** Well-formed input that violates a domain constraint.  `field` names the offending item (e.g. a hyperparameter,
 * or a JSON path such as `[2].intervention.Resolution`). */
class ValidationError : public std::invalid_argument
{
public:
    ValidationError(std::string field, const std::string &message)
        : std::invalid_argument(field + ": " + message)
        , field_(std::move(field))
        , detail_(message)
    { }

    const std::string & field() const { return field_; }
    const std::string & detail() const { return detail_; }

private:
    std::string field_;
    std::string detail_;
};

/*======================================================================================================================
 * Domains
 *====================================================================================================================*/

struct CategoricalDomain
{
    std::vector<std::string> labels;
};

struct IntegerDomain
{
    std::int64_t lo;
    std::int64_t hi; ///< inclusive
    bool log_scale = false;
};

struct ContinuousDomain
{
    double lo;
    double hi;
    bool log_scale = false;
};

using Domain = std::variant<CategoricalDomain, IntegerDomain, ContinuousDomain>;

/** A value assigned to one hyperparameter: a label, an integer, or a real. */
using ParamValue = std::variant<std::string, std::int64_t, double>;

std::string to_string(const ParamValue &value);

struct HyperparameterDef
{
    std::string name;
    Domain domain;

    bool is_categorical() const { return std::holds_alternative<CategoricalDomain>(domain); }
    bool is_integer() const { return std::holds_alternative<IntegerDomain>(domain); }
    bool is_continuous() const { return std::holds_alternative<ContinuousDomain>(domain); }
    bool log_scale() const;

    /** Whether `value` has the right alternative and lies inside the domain. */
    bool contains(const ParamValue &value) const;

    bool operator==(const HyperparameterDef &) const;
};

/** Integer ranges up to this many values are modeled as ordered categoricals. */
inline constexpr std::int64_t kMaxDiscreteIntegerValues = 32;

/** How a hyperparameter is represented inside the surrogate. */
struct ModelEncoding
{
    enum class Kind { Discrete, Continuous } kind;
    std::size_t cardinality = 0; ///< number of codes for Discrete
    double lo = 0;               ///< modeled-scale bounds for Continuous
    double hi = 0;
};

/*======================================================================================================================
 * SearchSpace
 *====================================================================================================================*/

class Configuration;

/** The hybrid hyperparameter domain Θ together with the name of the score variable.  Immutable. */
class SearchSpace
{
public:
    SearchSpace() = default;
    /** Validates names and domains; throws `ValidationError` naming the offending hyperparameter. */
    explicit SearchSpace(std::vector<HyperparameterDef> hyperparameters, std::string score_name = "score");

    std::size_t size() const { return hyperparameters_.size(); }
    const std::vector<HyperparameterDef> & hyperparameters() const { return hyperparameters_; }
    const HyperparameterDef & operator[](std::size_t i) const { return hyperparameters_[i]; }
    const std::string & score_name() const { return score_name_; }

    std::optional<std::size_t> index_of(std::string_view name) const;
    /** Like `index_of` but throws `ValidationError` for unknown names. */
    std::size_t require_index(std::string_view name) const;

    ModelEncoding encoding(std::size_t i) const;
    /** Value -> modeled scale (category code, integer offset, or possibly log-transformed real). */
    double to_model(std::size_t i, const ParamValue &value) const;
    /** Modeled scale -> in-domain value.  Clamps, rounds, and decodes as needed; total. */
    ParamValue from_model(std::size_t i, double x) const;

    /** Draw from the initial prior u(H): independent uniforms in modeled scale. */
    Configuration sample_uniform(std::mt19937_64 &rng) const;

    bool operator==(const SearchSpace &) const;

private:
    std::vector<HyperparameterDef> hyperparameters_;
    std::string score_name_ = "score";
};

/** A complete assignment of every hyperparameter in a space, stored in space order. */
class Configuration
{
public:
    Configuration() = default;
    /** Throws `ValidationError` if the assignment is incomplete or out of domain. */
    Configuration(const SearchSpace &space, std::vector<ParamValue> values);

    std::size_t size() const { return values_.size(); }
    const ParamValue & operator[](std::size_t i) const { return values_[i]; }
    const std::vector<ParamValue> & values() const { return values_; }

    bool operator==(const Configuration &) const = default;

private:
    std::vector<ParamValue> values_;
};

/** Assignment to a subset of hyperparameters, keyed by index in the space. */
using PartialConfiguration = std::map<std::size_t, ParamValue>;

/*======================================================================================================================
 * User knowledge
 *====================================================================================================================*/

/** Categorical over either the domain's own values (empty `values`) or an explicit value list. */
struct CategoricalDist
{
    std::vector<double> weights;
    std::vector<ParamValue> values;
};
struct UniformDist { double lo, hi; };
struct IntUniformDist { std::int64_t lo, hi; };
/** Normal in the hyperparameter's native scale, truncated to its domain. */
struct NormalDist { double mu, sigma; };
/** Dirac mass at a fixed value; what a point-mass intervention holds per entry. */
struct PointDist { ParamValue value; };

using DistributionSpec = std::variant<CategoricalDist, UniformDist, IntUniformDist, NormalDist, PointDist>;

struct UserKnowledge
{
    enum class Kind { PointMass, Prior, Clear };

    Kind kind = Kind::Clear;
    std::map<std::size_t, DistributionSpec> entries; ///< keyed by hyperparameter index; empty for Clear
    std::int64_t received_at = 0;
    std::string polarity_label;

    bool is_clear() const { return kind == Kind::Clear; }
};

/** Check `spec` against hyperparameter `def`; throws `ValidationError(field, ...)`. */
void validate_distribution(const HyperparameterDef &def, const DistributionSpec &spec, const std::string &field);

/** Draw one value per entry of `knowledge`, independently.  Point masses return their value. */
PartialConfiguration sample_prior(const SearchSpace &space, const UserKnowledge &knowledge, std::mt19937_64 &rng);

/** Draw one value for hyperparameter `def` from `spec`. */
ParamValue sample_distribution(const HyperparameterDef &def, const DistributionSpec &spec, std::mt19937_64 &rng);

/*======================================================================================================================
 * Text formats
 *====================================================================================================================*/

/** Parse the line-oriented space format:
 *
 *     # comment
 *     score <name>                       (optional)
 *     <name> cat <label> <label> ...
 *     <name> int <lo> <hi> [log]
 *     <name> float <lo> <hi> [log]
 */
SearchSpace parse_space(std::string_view document);
std::string emit_space(const SearchSpace &space);

/** Parse a JSON interaction document (an array of records or a single record).  Each record has `type`, optional
 * `kind` ("point" | "dist"), `intervention` (object or null) and `iteration`.  When `require_iteration` is false the
 * `iteration` key may be absent and `received_at` is left at 0. */
std::vector<UserKnowledge> parse_interactions(std::string_view document, const SearchSpace &space,
                                              bool require_iteration = true);

} // namespace pchpo
