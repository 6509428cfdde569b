#include "pchpo/search_space.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

namespace pchpo {

using nlohmann::json;

namespace {

template<class... Ts> struct overloaded : Ts... { using Ts::operator()...; };
template<class... Ts> overloaded(Ts...) -> overloaded<Ts...>;

std::string format_double(double x)
{
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, end);
}

bool has_whitespace(std::string_view s)
{
    return std::any_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

bool iequals(std::string_view a, std::string_view b)
{
    return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](unsigned char x, unsigned char y) {
        return std::tolower(x) == std::tolower(y);
    });
}

std::int64_t integer_range_size(const IntegerDomain &d) { return d.hi - d.lo + 1; }

/** Number of values a categorical prior without an explicit value list must weight. */
std::optional<std::size_t> domain_cardinality(const HyperparameterDef &def)
{
    if (auto c = std::get_if<CategoricalDomain>(&def.domain))
        return c->labels.size();
    if (auto i = std::get_if<IntegerDomain>(&def.domain))
        return std::size_t(integer_range_size(*i));
    return std::nullopt;
}

ParamValue domain_value_at(const HyperparameterDef &def, std::size_t index)
{
    if (auto c = std::get_if<CategoricalDomain>(&def.domain))
        return c->labels.at(index);
    auto &i = std::get<IntegerDomain>(def.domain);
    return i.lo + std::int64_t(index);
}

std::pair<double, double> numeric_bounds(const HyperparameterDef &def)
{
    if (auto i = std::get_if<IntegerDomain>(&def.domain))
        return { double(i->lo), double(i->hi) };
    auto &c = std::get<ContinuousDomain>(def.domain);
    return { c.lo, c.hi };
}

/** Snap a real drawn for a numeric hyperparameter onto its canonical representation. */
ParamValue numeric_value(const HyperparameterDef &def, double x)
{
    auto [lo, hi] = numeric_bounds(def);
    x = std::clamp(x, lo, hi);
    if (def.is_integer())
        return std::int64_t(std::llround(x));
    return x;
}

} // namespace

std::string to_string(const ParamValue &value)
{
    return std::visit(overloaded{
        [](const std::string &s) { return s; },
        [](std::int64_t i) { return std::to_string(i); },
        [](double d) { return format_double(d); },
    }, value);
}

/*======================================================================================================================
 * HyperparameterDef
 *====================================================================================================================*/

bool HyperparameterDef::log_scale() const
{
    if (auto i = std::get_if<IntegerDomain>(&domain)) return i->log_scale;
    if (auto c = std::get_if<ContinuousDomain>(&domain)) return c->log_scale;
    return false;
}

bool HyperparameterDef::contains(const ParamValue &value) const
{
    return std::visit(overloaded{
        [&](const CategoricalDomain &d) {
            auto s = std::get_if<std::string>(&value);
            return s && std::find(d.labels.begin(), d.labels.end(), *s) != d.labels.end();
        },
        [&](const IntegerDomain &d) {
            auto i = std::get_if<std::int64_t>(&value);
            return i && *i >= d.lo && *i <= d.hi;
        },
        [&](const ContinuousDomain &d) {
            auto x = std::get_if<double>(&value);
            return x && std::isfinite(*x) && *x >= d.lo && *x <= d.hi;
        },
    }, domain);
}

bool HyperparameterDef::operator==(const HyperparameterDef &other) const
{
    if (name != other.name || domain.index() != other.domain.index())
        return false;
    return std::visit(overloaded{
        [&](const CategoricalDomain &d) { return d.labels == std::get<CategoricalDomain>(other.domain).labels; },
        [&](const IntegerDomain &d) {
            auto &o = std::get<IntegerDomain>(other.domain);
            return d.lo == o.lo && d.hi == o.hi && d.log_scale == o.log_scale;
        },
        [&](const ContinuousDomain &d) {
            auto &o = std::get<ContinuousDomain>(other.domain);
            return d.lo == o.lo && d.hi == o.hi && d.log_scale == o.log_scale;
        },
    }, domain);
}

/*======================================================================================================================
 * SearchSpace
 *====================================================================================================================*/

SearchSpace::SearchSpace(std::vector<HyperparameterDef> hyperparameters, std::string score_name)
    : hyperparameters_(std::move(hyperparameters))
    , score_name_(std::move(score_name))
{
    if (hyperparameters_.empty())
        throw ValidationError("space", "at least one hyperparameter is required");
    if (score_name_.empty() || has_whitespace(score_name_))
        throw ValidationError("score", "score name must be a non-empty token");

    std::set<std::string> seen;
    for (const auto &hp : hyperparameters_) {
        if (hp.name.empty() || has_whitespace(hp.name))
            throw ValidationError(hp.name, "hyperparameter names must be non-empty and contain no whitespace");
        if (!seen.insert(hp.name).second)
            throw ValidationError(hp.name, "duplicate hyperparameter name");
        if (hp.name == score_name_)
            throw ValidationError(hp.name, "hyperparameter name collides with the score variable");

        std::visit(overloaded{
            [&](const CategoricalDomain &d) {
                if (d.labels.empty())
                    throw ValidationError(hp.name, "categorical domain needs at least one label");
                std::set<std::string> labels;
                for (const auto &l : d.labels) {
                    if (l.empty() || has_whitespace(l))
                        throw ValidationError(hp.name, "labels must be non-empty and contain no whitespace");
                    if (!labels.insert(l).second)
                        throw ValidationError(hp.name, "duplicate label '" + l + "'");
                }
            },
            [&](const IntegerDomain &d) {
                if (!(d.lo < d.hi))
                    throw ValidationError(hp.name, "integer domain requires lo < hi");
                if (d.log_scale && d.lo <= 0)
                    throw ValidationError(hp.name, "log-scale requires lo > 0");
            },
            [&](const ContinuousDomain &d) {
                if (!std::isfinite(d.lo) || !std::isfinite(d.hi) || !(d.lo < d.hi))
                    throw ValidationError(hp.name, "continuous domain requires finite lo < hi");
                if (d.log_scale && d.lo <= 0)
                    throw ValidationError(hp.name, "log-scale requires lo > 0");
            },
        }, hp.domain);
    }
}

std::optional<std::size_t> SearchSpace::index_of(std::string_view name) const
{
    for (std::size_t i = 0; i != hyperparameters_.size(); ++i)
        if (hyperparameters_[i].name == name)
            return i;
    return std::nullopt;
}

std::size_t SearchSpace::require_index(std::string_view name) const
{
    if (auto i = index_of(name))
        return *i;
    throw ValidationError(std::string(name), "unknown hyperparameter");
}

ModelEncoding SearchSpace::encoding(std::size_t i) const
{
    const auto &hp = hyperparameters_.at(i);
    return std::visit(overloaded{
        [](const CategoricalDomain &d) {
            return ModelEncoding{ ModelEncoding::Kind::Discrete, d.labels.size() };
        },
        [](const IntegerDomain &d) {
            if (integer_range_size(d) <= kMaxDiscreteIntegerValues)
                return ModelEncoding{ ModelEncoding::Kind::Discrete, std::size_t(integer_range_size(d)) };
            if (d.log_scale)
                return ModelEncoding{ ModelEncoding::Kind::Continuous, 0, std::log(double(d.lo)), std::log(double(d.hi)) };
            return ModelEncoding{ ModelEncoding::Kind::Continuous, 0, double(d.lo), double(d.hi) };
        },
        [](const ContinuousDomain &d) {
            if (d.log_scale)
                return ModelEncoding{ ModelEncoding::Kind::Continuous, 0, std::log(d.lo), std::log(d.hi) };
            return ModelEncoding{ ModelEncoding::Kind::Continuous, 0, d.lo, d.hi };
        },
    }, hp.domain);
}

double SearchSpace::to_model(std::size_t i, const ParamValue &value) const
{
    const auto &hp = hyperparameters_.at(i);
    if (!hp.contains(value))
        throw ValidationError(hp.name, "value '" + to_string(value) + "' outside domain");
    return std::visit(overloaded{
        [&](const CategoricalDomain &d) {
            auto it = std::find(d.labels.begin(), d.labels.end(), std::get<std::string>(value));
            return double(it - d.labels.begin());
        },
        [&](const IntegerDomain &d) {
            const auto v = std::get<std::int64_t>(value);
            if (encoding(i).kind == ModelEncoding::Kind::Discrete)
                return double(v - d.lo);
            return d.log_scale ? std::log(double(v)) : double(v);
        },
        [&](const ContinuousDomain &d) {
            const auto v = std::get<double>(value);
            return d.log_scale ? std::log(v) : v;
        },
    }, hp.domain);
}

ParamValue SearchSpace::from_model(std::size_t i, double x) const
{
    const auto &hp = hyperparameters_.at(i);
    const auto enc = encoding(i);
    if (enc.kind == ModelEncoding::Kind::Discrete) {
        const double code = std::isfinite(x) ? std::clamp(std::round(x), 0.0, double(enc.cardinality - 1)) : 0.0;
        return domain_value_at(hp, std::size_t(code));
    }
    if (!std::isfinite(x))
        x = x > 0 ? enc.hi : enc.lo;
    x = std::clamp(x, enc.lo, enc.hi);
    if (hp.log_scale())
        x = std::exp(x);
    return numeric_value(hp, x);
}

Configuration SearchSpace::sample_uniform(std::mt19937_64 &rng) const
{
    std::vector<ParamValue> values;
    values.reserve(size());
    for (std::size_t i = 0; i != size(); ++i) {
        const auto enc = encoding(i);
        if (enc.kind == ModelEncoding::Kind::Discrete) {
            std::uniform_int_distribution<std::size_t> code(0, enc.cardinality - 1);
            values.push_back(from_model(i, double(code(rng))));
        } else if (auto d = std::get_if<IntegerDomain>(&hyperparameters_[i].domain); d && !d->log_scale) {
            std::uniform_int_distribution<std::int64_t> v(d->lo, d->hi);
            values.push_back(v(rng));
        } else {
            std::uniform_real_distribution<double> u(enc.lo, enc.hi);
            values.push_back(from_model(i, u(rng)));
        }
    }
    return Configuration(*this, std::move(values));
}

bool SearchSpace::operator==(const SearchSpace &other) const
{
    return score_name_ == other.score_name_ && hyperparameters_ == other.hyperparameters_;
}

Configuration::Configuration(const SearchSpace &space, std::vector<ParamValue> values)
    : values_(std::move(values))
{
    if (values_.size() != space.size())
        throw ValidationError("configuration", "expected " + std::to_string(space.size()) + " values, got " +
                                                   std::to_string(values_.size()));
    for (std::size_t i = 0; i != space.size(); ++i)
        if (!space[i].contains(values_[i]))
            throw ValidationError(space[i].name, "value '" + to_string(values_[i]) + "' outside domain");
}

/*======================================================================================================================
 * Distributions
 *====================================================================================================================*/

void validate_distribution(const HyperparameterDef &def, const DistributionSpec &spec, const std::string &field)
{
    auto fail = [&](const std::string &message) { throw ValidationError(field, message); };
    auto require_numeric = [&](const char *family) {
        if (def.is_categorical())
            fail(std::string(family) + " prior is not defined on categorical hyperparameter '" + def.name + "'");
    };

    std::visit(overloaded{
        [&](const CategoricalDist &d) {
            if (d.weights.empty())
                fail("categorical prior needs at least one weight");
            double total = 0;
            for (double w : d.weights) {
                if (!std::isfinite(w) || w < 0)
                    fail("categorical weights must be finite and non-negative");
                total += w;
            }
            if (!(total > 0))
                fail("categorical weights must not all be zero");
            if (d.values.empty()) {
                auto card = domain_cardinality(def);
                if (!card)
                    fail("categorical prior on a continuous hyperparameter needs an explicit value list");
                if (*card != d.weights.size())
                    fail("expected " + std::to_string(*card) + " weights (one per domain value), got " +
                         std::to_string(d.weights.size()));
            } else {
                if (d.values.size() != d.weights.size())
                    fail("value list and weights differ in length");
                for (const auto &v : d.values)
                    if (!def.contains(v))
                        fail("value '" + to_string(v) + "' outside the domain of '" + def.name + "'");
            }
        },
        [&](const UniformDist &d) {
            require_numeric("uniform");
            if (!std::isfinite(d.lo) || !std::isfinite(d.hi) || !(d.lo < d.hi))
                fail("uniform prior requires finite lo < hi");
            auto [lo, hi] = numeric_bounds(def);
            if (d.lo < lo || d.hi > hi)
                fail("uniform support [" + format_double(d.lo) + ", " + format_double(d.hi) +
                     "] exceeds the domain [" + format_double(lo) + ", " + format_double(hi) + "]");
        },
        [&](const IntUniformDist &d) {
            require_numeric("int_uniform");
            if (d.lo > d.hi)
                fail("int_uniform prior requires lo <= hi");
            auto [lo, hi] = numeric_bounds(def);
            if (double(d.lo) < lo || double(d.hi) > hi)
                fail("int_uniform support [" + std::to_string(d.lo) + ", " + std::to_string(d.hi) +
                     "] exceeds the domain [" + format_double(lo) + ", " + format_double(hi) + "]");
        },
        [&](const NormalDist &d) {
            require_numeric("normal");
            if (!std::isfinite(d.sigma) || !(d.sigma > 0))
                fail("normal prior requires sigma > 0");
            auto [lo, hi] = numeric_bounds(def);
            if (!std::isfinite(d.mu) || d.mu < lo || d.mu > hi)
                fail("normal mean " + format_double(d.mu) + " outside the domain");
        },
        [&](const PointDist &d) {
            if (!def.contains(d.value))
                fail("value '" + to_string(d.value) + "' outside the domain of '" + def.name + "'");
        },
    }, spec);
}

ParamValue sample_distribution(const HyperparameterDef &def, const DistributionSpec &spec, std::mt19937_64 &rng)
{
    return std::visit(overloaded{
        [&](const CategoricalDist &d) -> ParamValue {
            double total = 0;
            for (double w : d.weights) total += w;
            double u = std::uniform_real_distribution<double>(0.0, total)(rng);
            std::size_t pick = d.weights.size() - 1;
            for (std::size_t i = 0; i != d.weights.size(); ++i) {
                if (u < d.weights[i] && d.weights[i] > 0) { pick = i; break; }
                u -= d.weights[i];
            }
            while (d.weights[pick] == 0) --pick; // rounding at the tail
            return d.values.empty() ? domain_value_at(def, pick) : d.values[pick];
        },
        [&](const UniformDist &d) -> ParamValue {
            return numeric_value(def, std::uniform_real_distribution<double>(d.lo, d.hi)(rng));
        },
        [&](const IntUniformDist &d) -> ParamValue {
            const auto v = std::uniform_int_distribution<std::int64_t>(d.lo, d.hi)(rng);
            return def.is_integer() ? ParamValue(v) : ParamValue(double(v));
        },
        [&](const NormalDist &d) -> ParamValue {
            auto [lo, hi] = numeric_bounds(def);
            std::normal_distribution<double> normal(d.mu, d.sigma);
            for (int attempt = 0; attempt != 10000; ++attempt) {
                const double x = normal(rng);
                if (x >= lo && x <= hi)
                    return numeric_value(def, x);
            }
            return numeric_value(def, d.mu);
        },
        [&](const PointDist &d) -> ParamValue { return d.value; },
    }, spec);
}

PartialConfiguration sample_prior(const SearchSpace &space, const UserKnowledge &knowledge, std::mt19937_64 &rng)
{
    PartialConfiguration out;
    for (const auto &[index, spec] : knowledge.entries)
        out.emplace(index, sample_distribution(space[index], spec, rng));
    return out;
}

/*======================================================================================================================
 * Space file
 *====================================================================================================================*/

namespace {

double parse_number(std::string_view token, std::size_t line, const char *what)
{
    std::string s(token);
    char *end = nullptr;
    errno = 0;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE || !std::isfinite(v))
        throw ParseError(line, std::string("expected a number for ") + what + ", got '" + s + "'");
    return v;
}

std::int64_t parse_integer(std::string_view token, std::size_t line, const char *what)
{
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
    if (ec != std::errc() || ptr != token.data() + token.size())
        throw ParseError(line, std::string("expected an integer for ") + what + ", got '" + std::string(token) + "'");
    return v;
}

} // namespace

SearchSpace parse_space(std::string_view document)
{
    std::vector<HyperparameterDef> defs;
    std::string score_name = "score";
    bool score_seen = false;

    std::istringstream in{std::string(document)};
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        if (auto hash = raw.find('#'); hash != std::string::npos)
            raw.erase(hash);
        std::istringstream fields(raw);
        std::vector<std::string> tok;
        for (std::string t; fields >> t;)
            tok.push_back(t);
        if (tok.empty())
            continue;

        if (tok.size() == 2 && tok[0] == "score") {
            if (score_seen)
                throw ParseError(line_no, "score name given twice");
            score_name = tok[1];
            score_seen = true;
            continue;
        }
        if (tok.size() < 3)
            throw ParseError(line_no, "expected '<name> <cat|int|float> ...'");

        HyperparameterDef def{ tok[0], CategoricalDomain{} };
        const std::string &type = tok[1];
        if (type == "cat") {
            def.domain = CategoricalDomain{ { tok.begin() + 2, tok.end() } };
        } else if (type == "int" || type == "float") {
            if (tok.size() != 4 && tok.size() != 5)
                throw ParseError(line_no, "expected '" + tok[0] + " " + type + " <lo> <hi> [log]'");
            bool log_scale = false;
            if (tok.size() == 5) {
                if (tok[4] != "log")
                    throw ParseError(line_no, "unexpected trailing field '" + tok[4] + "' (only 'log' allowed)");
                log_scale = true;
            }
            if (type == "int")
                def.domain = IntegerDomain{ parse_integer(tok[2], line_no, "lo"), parse_integer(tok[3], line_no, "hi"),
                                            log_scale };
            else
                def.domain = ContinuousDomain{ parse_number(tok[2], line_no, "lo"), parse_number(tok[3], line_no, "hi"),
                                               log_scale };
        } else {
            throw ParseError(line_no, "unknown type '" + type + "' (expected cat, int or float)");
        }
        defs.push_back(std::move(def));
    }
    return SearchSpace(std::move(defs), score_name);
}

std::string emit_space(const SearchSpace &space)
{
    std::ostringstream out;
    out << "score " << space.score_name() << '\n';
    for (const auto &hp : space.hyperparameters()) {
        out << hp.name;
        std::visit(overloaded{
            [&](const CategoricalDomain &d) {
                out << " cat";
                for (const auto &l : d.labels) out << ' ' << l;
            },
            [&](const IntegerDomain &d) {
                out << " int " << d.lo << ' ' << d.hi << (d.log_scale ? " log" : "");
            },
            [&](const ContinuousDomain &d) {
                out << " float " << format_double(d.lo) << ' ' << format_double(d.hi) << (d.log_scale ? " log" : "");
            },
        }, hp.domain);
        out << '\n';
    }
    return out.str();
}

/*======================================================================================================================
 * Interaction documents
 *====================================================================================================================*/

namespace {

/** Coerce a JSON scalar to the canonical value type of `def`.  Integers on categorical domains match a label with the
 * same text first and are otherwise taken as label indices; booleans match "true"/"false" labels. */
ParamValue coerce_value(const HyperparameterDef &def, const json &j, const std::string &field)
{
    auto fail = [&](const std::string &message) -> ParamValue { throw ValidationError(field, message); };

    if (auto cat = std::get_if<CategoricalDomain>(&def.domain)) {
        auto find_label = [&](std::string_view text) -> std::optional<std::string> {
            for (const auto &l : cat->labels)
                if (l == text) return l;
            return std::nullopt;
        };
        if (j.is_string()) {
            if (auto l = find_label(j.get<std::string>())) return *l;
            return fail("unknown label '" + j.get<std::string>() + "' for '" + def.name + "'");
        }
        if (j.is_boolean()) {
            const char *text = j.get<bool>() ? "true" : "false";
            for (const auto &l : cat->labels)
                if (iequals(l, text)) return l;
            return fail("no label matching boolean " + std::string(text) + " for '" + def.name + "'");
        }
        if (j.is_number_integer()) {
            const auto v = j.get<std::int64_t>();
            if (auto l = find_label(std::to_string(v))) return *l;
            if (v >= 0 && std::size_t(v) < cat->labels.size()) return cat->labels[std::size_t(v)];
            return fail("label index " + std::to_string(v) + " outside [0, " + std::to_string(cat->labels.size() - 1) +
                        "] for '" + def.name + "'");
        }
        if (j.is_number_float()) {
            if (auto l = find_label(format_double(j.get<double>()))) return *l;
            return fail("no label '" + j.dump() + "' for '" + def.name + "'");
        }
        return fail("expected a label for '" + def.name + "'");
    }

    if (def.is_integer()) {
        std::int64_t v;
        if (j.is_number_integer()) {
            v = j.get<std::int64_t>();
        } else if (j.is_number_float() && std::floor(j.get<double>()) == j.get<double>() &&
                   std::abs(j.get<double>()) < 9e15) {
            v = std::int64_t(j.get<double>());
        } else if (j.is_boolean()) {
            v = j.get<bool>() ? 1 : 0;
        } else {
            return fail("expected an integer for '" + def.name + "'");
        }
        if (!def.contains(v))
            return fail("value " + std::to_string(v) + " outside the domain of '" + def.name + "'");
        return v;
    }

    if (!j.is_number())
        return fail("expected a number for '" + def.name + "'");
    const double v = j.get<double>();
    if (!def.contains(v))
        return fail("value " + format_double(v) + " outside the domain of '" + def.name + "'");
    return v;
}

double number_param(const json &params, std::size_t i, const std::string &field)
{
    if (!params[i].is_number())
        throw ValidationError(field + ".parameters[" + std::to_string(i) + "]", "expected a number");
    return params[i].get<double>();
}

std::int64_t integer_param(const json &params, std::size_t i, const std::string &field)
{
    const double v = number_param(params, i, field);
    if (std::floor(v) != v)
        throw ValidationError(field + ".parameters[" + std::to_string(i) + "]", "expected an integer");
    return std::int64_t(v);
}

DistributionSpec parse_distribution(const HyperparameterDef &def, const json &j, const std::string &field)
{
    if (!j.contains("dist") || !j["dist"].is_string())
        throw ValidationError(field + ".dist", "missing distribution family");
    if (!j.contains("parameters") || !j["parameters"].is_array())
        throw ValidationError(field + ".parameters", "expected an array of parameters");

    const std::string family = j["dist"].get<std::string>();
    const json &params = j["parameters"];
    auto require_count = [&](std::size_t n) {
        if (params.size() != n)
            throw ValidationError(field + ".parameters",
                                  "'" + family + "' takes " + std::to_string(n) + " parameters, got " +
                                      std::to_string(params.size()));
    };

    DistributionSpec spec;
    if (family == "cat") {
        CategoricalDist d;
        for (std::size_t i = 0; i != params.size(); ++i)
            d.weights.push_back(number_param(params, i, field));
        if (j.contains("values")) {
            if (!j["values"].is_array())
                throw ValidationError(field + ".values", "expected an array");
            for (std::size_t i = 0; i != j["values"].size(); ++i)
                d.values.push_back(coerce_value(def, j["values"][i], field + ".values[" + std::to_string(i) + "]"));
        }
        spec = std::move(d);
    } else if (family == "uniform") {
        require_count(2);
        spec = UniformDist{ number_param(params, 0, field), number_param(params, 1, field) };
    } else if (family == "int_uniform") {
        require_count(2);
        spec = IntUniformDist{ integer_param(params, 0, field), integer_param(params, 1, field) };
    } else if (family == "normal") {
        require_count(2);
        spec = NormalDist{ number_param(params, 0, field), number_param(params, 1, field) };
    } else {
        throw ValidationError(field + ".dist",
                              "unknown distribution family '" + family + "' (expected cat, uniform, int_uniform, normal)");
    }
    validate_distribution(def, spec, field);
    return spec;
}

UserKnowledge parse_record(const json &record, const SearchSpace &space, const std::string &path,
                           bool require_iteration)
{
    if (!record.is_object())
        throw ValidationError(path, "interaction record must be an object");

    UserKnowledge k;
    if (record.contains("type")) {
        if (!record["type"].is_string())
            throw ValidationError(path + ".type", "expected a string");
        k.polarity_label = record["type"].get<std::string>();
    }

    if (record.contains("iteration")) {
        const json &it = record["iteration"];
        if (!it.is_number_integer() && !(it.is_number_float() && std::floor(it.get<double>()) == it.get<double>()))
            throw ValidationError(path + ".iteration", "expected an integer");
        const auto iteration = it.is_number_integer() ? it.get<std::int64_t>() : std::int64_t(it.get<double>());
        if (iteration < 0)
            throw ValidationError(path + ".iteration", "iteration must be >= 0");
        k.received_at = iteration;
    } else if (require_iteration) {
        throw ValidationError(path + ".iteration", "missing iteration");
    }

    std::optional<std::string> kind;
    if (record.contains("kind")) {
        if (!record["kind"].is_string())
            throw ValidationError(path + ".kind", "expected a string");
        kind = record["kind"].get<std::string>();
        if (*kind != "point" && *kind != "dist")
            throw ValidationError(path + ".kind", "unknown kind '" + *kind + "' (expected point or dist)");
    }

    if (!record.contains("intervention"))
        throw ValidationError(path + ".intervention", "missing intervention");
    const json &intervention = record["intervention"];
    if (intervention.is_null()) {
        k.kind = UserKnowledge::Kind::Clear;
        return k;
    }
    if (intervention.is_array())
        throw ValidationError(path + ".intervention",
                              "list-shaped interventions are not supported; use an object keyed by hyperparameter name");
    if (!intervention.is_object() || intervention.empty())
        throw ValidationError(path + ".intervention", "expected a non-empty object keyed by hyperparameter name");

    if (!kind) {
        const bool all_dists = std::all_of(intervention.begin(), intervention.end(),
                                           [](const json &v) { return v.is_object(); });
        kind = all_dists ? "dist" : "point";
    }
    k.kind = *kind == "point" ? UserKnowledge::Kind::PointMass : UserKnowledge::Kind::Prior;

    for (auto it = intervention.begin(); it != intervention.end(); ++it) {
        const std::string field = path + ".intervention." + it.key();
        auto index = space.index_of(it.key());
        if (!index)
            throw ValidationError(field, "unknown hyperparameter '" + it.key() + "'");
        const auto &def = space[*index];
        if (k.kind == UserKnowledge::Kind::PointMass) {
            if (it.value().is_object() || it.value().is_array() || it.value().is_null())
                throw ValidationError(field, "point interventions take a single value");
            k.entries.emplace(*index, PointDist{ coerce_value(def, it.value(), field) });
        } else {
            if (!it.value().is_object())
                throw ValidationError(field, "dist interventions take {\"dist\": ..., \"parameters\": [...]}");
            k.entries.emplace(*index, parse_distribution(def, it.value(), field));
        }
    }
    return k;
}

std::size_t line_of_offset(std::string_view text, std::size_t offset)
{
    offset = std::min(offset, text.size());
    return 1 + std::size_t(std::count(text.begin(), text.begin() + std::ptrdiff_t(offset), '\n'));
}

} // namespace

std::vector<UserKnowledge> parse_interactions(std::string_view document, const SearchSpace &space,
                                              bool require_iteration)
{
    json doc;
    try {
        doc = json::parse(document.begin(), document.end());
    } catch (const json::parse_error &e) {
        /* a bare comma-separated sequence of records reads as an array */
        doc = json::parse("[" + std::string(document) + "]", nullptr, false);
        if (doc.is_discarded() || doc.empty())
            throw ParseError(line_of_offset(document, e.byte ? e.byte - 1 : 0), e.what());
    }

    std::vector<UserKnowledge> out;
    if (doc.is_array()) {
        for (std::size_t i = 0; i != doc.size(); ++i)
            out.push_back(parse_record(doc[i], space, "[" + std::to_string(i) + "]", require_iteration));
    } else {
        out.push_back(parse_record(doc, space, "$", require_iteration));
    }
    return out;
}

} // namespace pchpo
