#include "pchpo/circuit.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace pchpo {

namespace {

template<class... Ts> struct overloaded : Ts... { using Ts::operator()...; };
template<class... Ts> overloaded(Ts...) -> overloaded<Ts...>;

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kNormalizationTolerance = 1e-9;

std::string format_double(double x)
{
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, end);
}

[[noreturn]] void invalid(NodeId id, const std::string &message)
{
    throw std::invalid_argument("circuit node " + std::to_string(id) + ": " + message);
}

const std::vector<NodeId> * children_of(const Node &node)
{
    if (auto s = std::get_if<SumNode>(&node)) return &s->children;
    if (auto p = std::get_if<ProductNode>(&node)) return &p->children;
    return nullptr;
}

std::size_t categorical_pick(std::span<const double> log_scores, std::mt19937_64 &rng)
{
    const double max = *std::max_element(log_scores.begin(), log_scores.end());
    if (max == kNegInf)
        throw std::logic_error("conditional_sample: every child of a sum node has zero value under the evidence");
    double total = 0;
    for (double l : log_scores) total += std::exp(l - max);
    double u = std::uniform_real_distribution<double>(0.0, total)(rng);
    for (std::size_t i = 0; i != log_scores.size(); ++i) {
        const double p = std::exp(log_scores[i] - max);
        if (u < p) return i;
        u -= p;
    }
    /* Rounding at the tail: take the last child with non-zero value. */
    for (std::size_t i = log_scores.size(); i-- > 0;)
        if (log_scores[i] != kNegInf) return i;
    return log_scores.size() - 1;
}

} // namespace

/*======================================================================================================================
 * Leaves
 *====================================================================================================================*/

double leaf_log_density(const LeafDistribution &leaf, double x)
{
    return std::visit(overloaded{
        [x](const CategoricalLeaf &c) {
            if (!std::isfinite(x)) return kNegInf;
            const double code = std::round(x);
            if (code < 0 || code >= double(c.probabilities.size())) return kNegInf;
            return std::log(c.probabilities[std::size_t(code)]);
        },
        [x](const GaussianLeaf &g) {
            const double z = (x - g.mu) / g.sigma;
            return -0.5 * z * z - std::log(g.sigma) - 0.5 * std::log(2 * std::numbers::pi);
        },
    }, leaf);
}

double leaf_sample(const LeafDistribution &leaf, std::mt19937_64 &rng)
{
    return std::visit(overloaded{
        [&rng](const CategoricalLeaf &c) {
            double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
            for (std::size_t i = 0; i != c.probabilities.size(); ++i) {
                if (u < c.probabilities[i]) return double(i);
                u -= c.probabilities[i];
            }
            return double(c.probabilities.size() - 1);
        },
        [&rng](const GaussianLeaf &g) { return std::normal_distribution<double>(g.mu, g.sigma)(rng); },
    }, leaf);
}

/*======================================================================================================================
 * Circuit
 *====================================================================================================================*/

Circuit::Circuit(Schema schema, std::vector<Node> nodes)
    : schema_(std::move(schema))
    , nodes_(std::move(nodes))
{
    if (nodes_.empty())
        throw std::invalid_argument("circuit has no nodes");
    for (const auto &v : schema_)
        if (v.discrete && v.cardinality == 0)
            throw std::invalid_argument("discrete variable '" + v.name + "' has no values");

    scopes_.resize(nodes_.size());
    for (NodeId id = 0; id != nodes_.size(); ++id) {
        const Node &node = nodes_[id];
        if (auto children = children_of(node)) {
            if (children->empty())
                invalid(id, "inner node without children");
            for (NodeId c : *children)
                if (c >= id)
                    invalid(id, "child " + std::to_string(c) + " does not precede its parent");
        }

        std::visit(overloaded{
            [&](const LeafNode &leaf) {
                if (leaf.variable >= schema_.size())
                    invalid(id, "leaf variable out of range");
                const Variable &var = schema_[leaf.variable];
                std::visit(overloaded{
                    [&](const CategoricalLeaf &c) {
                        if (!var.discrete || c.probabilities.size() != var.cardinality)
                            invalid(id, "categorical leaf does not match variable '" + var.name + "'");
                        double total = 0;
                        for (double p : c.probabilities) {
                            if (!(p > 0) || !std::isfinite(p))
                                invalid(id, "categorical probabilities must be strictly positive");
                            total += p;
                        }
                        if (std::abs(total - 1) > kNormalizationTolerance)
                            invalid(id, "categorical probabilities do not sum to 1");
                    },
                    [&](const GaussianLeaf &g) {
                        if (var.discrete)
                            invalid(id, "gaussian leaf on discrete variable '" + var.name + "'");
                        if (!std::isfinite(g.mu) || !std::isfinite(g.sigma) || !(g.sigma > 0))
                            invalid(id, "gaussian leaf needs finite mu and sigma > 0");
                    },
                }, leaf.distribution);
                scopes_[id] = { leaf.variable };
            },
            [&](const ProductNode &p) {
                std::vector<std::size_t> scope;
                for (NodeId c : p.children) {
                    const auto &cs = scopes_[c];
                    std::vector<std::size_t> merged;
                    std::set_union(scope.begin(), scope.end(), cs.begin(), cs.end(), std::back_inserter(merged));
                    if (merged.size() != scope.size() + cs.size())
                        invalid(id, "product children have overlapping scopes (not decomposable)");
                    scope = std::move(merged);
                }
                scopes_[id] = std::move(scope);
            },
            [&](const SumNode &s) {
                if (s.log_weights.size() != s.children.size())
                    invalid(id, "sum node weight count differs from child count");
                for (double lw : s.log_weights)
                    if (!std::isfinite(lw))
                        invalid(id, "sum weights must be strictly positive");
                if (std::abs(log_sum_exp(s.log_weights)) > kNormalizationTolerance)
                    invalid(id, "sum weights do not sum to 1");
                for (NodeId c : s.children)
                    if (scopes_[c] != scopes_[s.children.front()])
                        invalid(id, "sum children have differing scopes (not smooth)");
                scopes_[id] = scopes_[s.children.front()];
            },
        }, node);
    }

    std::vector<bool> reachable(nodes_.size(), false);
    reachable.back() = true;
    for (NodeId id = NodeId(nodes_.size()); id-- > 0;) {
        if (!reachable[id]) invalid(id, "unreachable from the root");
        if (auto children = children_of(nodes_[id]))
            for (NodeId c : *children) reachable[c] = true;
    }
}

bool Circuit::in_scope(std::size_t var) const
{
    return std::binary_search(scope().begin(), scope().end(), var);
}

std::optional<std::size_t> Circuit::variable_index(std::string_view name) const
{
    for (std::size_t i = 0; i != schema_.size(); ++i)
        if (schema_[i].name == name) return i;
    return std::nullopt;
}

NodeId CircuitBuilder::leaf(std::size_t variable, LeafDistribution distribution)
{
    nodes_.push_back(LeafNode{ variable, std::move(distribution) });
    return NodeId(nodes_.size() - 1);
}

NodeId CircuitBuilder::product(std::vector<NodeId> children)
{
    nodes_.push_back(ProductNode{ std::move(children) });
    return NodeId(nodes_.size() - 1);
}

NodeId CircuitBuilder::sum(std::vector<NodeId> children, std::span<const double> weights)
{
    std::vector<double> log_weights;
    log_weights.reserve(weights.size());
    for (double w : weights) {
        if (!(w > 0) || !std::isfinite(w))
            throw std::invalid_argument("sum weights must be finite and strictly positive");
        log_weights.push_back(std::log(w));
    }
    return sum_log(std::move(children), std::move(log_weights));
}

NodeId CircuitBuilder::sum_log(std::vector<NodeId> children, std::vector<double> log_weights)
{
    if (log_weights.size() != children.size())
        throw std::invalid_argument("sum node weight count differs from child count");
    const double total = log_sum_exp(log_weights);
    for (double &lw : log_weights) lw -= total;
    nodes_.push_back(SumNode{ std::move(children), std::move(log_weights) });
    return NodeId(nodes_.size() - 1);
}

Circuit CircuitBuilder::build(NodeId root) &&
{
    if (root >= nodes_.size())
        throw std::invalid_argument("root id out of range");

    std::vector<bool> reachable(root + 1, false);
    reachable[root] = true;
    for (NodeId id = root + 1; id-- > 0;)
        if (reachable[id])
            if (auto children = children_of(nodes_[id]))
                for (NodeId c : *children) {
                    if (c >= id) invalid(id, "child does not precede its parent");
                    reachable[c] = true;
                }

    std::vector<NodeId> remap(root + 1, 0);
    std::vector<Node> compact;
    for (NodeId id = 0; id <= root; ++id) {
        if (!reachable[id]) continue;
        Node node = std::move(nodes_[id]);
        if (auto s = std::get_if<SumNode>(&node))
            for (auto &c : s->children) c = remap[c];
        if (auto p = std::get_if<ProductNode>(&node))
            for (auto &c : p->children) c = remap[c];
        remap[id] = NodeId(compact.size());
        compact.push_back(std::move(node));
    }
    return Circuit(std::move(schema_), std::move(compact));
}

/*======================================================================================================================
 * Inference
 *====================================================================================================================*/

double log_sum_exp(std::span<const double> xs)
{
    if (xs.empty()) return kNegInf;
    const double max = *std::max_element(xs.begin(), xs.end());
    if (max == kNegInf) return kNegInf;
    if (max == std::numeric_limits<double>::infinity()) return max;
    double total = 0;
    for (double x : xs) total += std::exp(x - max);
    return max + std::log(total);
}

std::vector<double> node_log_values(const Circuit &circuit, const Evidence &evidence)
{
    const auto &nodes = circuit.nodes();
    std::vector<double> values(nodes.size());
    std::vector<double> scratch;
    for (NodeId id = 0; id != nodes.size(); ++id) {
        values[id] = std::visit(overloaded{
            [&](const LeafNode &leaf) {
                return evidence.has(leaf.variable) ? leaf_log_density(leaf.distribution, evidence[leaf.variable]) : 0.0;
            },
            [&](const ProductNode &p) {
                double total = 0;
                for (NodeId c : p.children) total += values[c];
                return total;
            },
            [&](const SumNode &s) {
                scratch.resize(s.children.size());
                for (std::size_t i = 0; i != s.children.size(); ++i)
                    scratch[i] = s.log_weights[i] + values[s.children[i]];
                return log_sum_exp(scratch);
            },
        }, nodes[id]);
    }
    return values;
}

double log_density(const Circuit &circuit, const Evidence &evidence)
{
    return node_log_values(circuit, evidence).back();
}

namespace {

/** Rebuilds `circuit` without the leaves of variables in `drop`.  Dropped leaves contribute their log density at
 * `evidence` (or 0 when unassigned) as a factor that is absorbed into ancestor sum weights. */
Circuit absorb(const Circuit &circuit, const std::vector<bool> &drop, const Evidence &evidence)
{
    constexpr NodeId kUnit = std::numeric_limits<NodeId>::max();
    const auto &nodes = circuit.nodes();
    CircuitBuilder builder(circuit.schema());
    std::vector<double> factor(nodes.size(), 0.0);
    std::vector<NodeId> mapped(nodes.size(), kUnit);

    for (NodeId id = 0; id != nodes.size(); ++id) {
        std::visit(overloaded{
            [&](const LeafNode &leaf) {
                if (drop[leaf.variable]) {
                    factor[id] = evidence.has(leaf.variable)
                                     ? leaf_log_density(leaf.distribution, evidence[leaf.variable])
                                     : 0.0;
                } else {
                    mapped[id] = builder.leaf(leaf.variable, leaf.distribution);
                }
            },
            [&](const ProductNode &p) {
                std::vector<NodeId> kept;
                for (NodeId c : p.children) {
                    factor[id] += factor[c];
                    if (mapped[c] != kUnit) kept.push_back(mapped[c]);
                }
                if (kept.size() == 1)
                    mapped[id] = kept.front();
                else if (!kept.empty())
                    mapped[id] = builder.product(std::move(kept));
            },
            [&](const SumNode &s) {
                std::vector<double> scores(s.children.size());
                for (std::size_t i = 0; i != s.children.size(); ++i)
                    scores[i] = s.log_weights[i] + factor[s.children[i]];
                factor[id] = log_sum_exp(scores);
                if (mapped[s.children.front()] == kUnit)
                    return; // smoothness: every child dropped out entirely

                std::vector<NodeId> kept;
                std::vector<double> log_weights;
                for (std::size_t i = 0; i != s.children.size(); ++i) {
                    if (scores[i] == kNegInf) continue; // zero posterior weight
                    kept.push_back(mapped[s.children[i]]);
                    log_weights.push_back(scores[i] - factor[id]);
                }
                if (kept.empty())
                    throw std::domain_error("evidence has zero probability under the circuit");
                mapped[id] = kept.size() == 1 ? kept.front() : builder.sum_log(std::move(kept), std::move(log_weights));
            },
        }, nodes[id]);
    }

    if (mapped.back() == kUnit)
        throw std::invalid_argument("operation leaves an empty scope");
    if (!std::isfinite(factor.back()))
        throw std::domain_error("evidence has zero probability under the circuit");
    return std::move(builder).build(mapped.back());
}

} // namespace

Circuit marginal_circuit(const Circuit &circuit, std::span<const std::size_t> keep)
{
    if (keep.empty())
        throw std::invalid_argument("marginal_circuit: keep must be non-empty");
    std::vector<bool> drop(circuit.schema().size(), true);
    for (std::size_t v : keep) {
        if (!circuit.in_scope(v))
            throw std::invalid_argument("marginal_circuit: variable " + std::to_string(v) + " is not in the circuit");
        drop[v] = false;
    }
    return absorb(circuit, drop, Evidence(circuit.schema().size()));
}

Circuit condition(const Circuit &circuit, const Evidence &evidence)
{
    std::vector<bool> drop(circuit.schema().size(), false);
    for (std::size_t v = 0; v != drop.size(); ++v)
        drop[v] = evidence.has(v);
    return absorb(circuit, drop, evidence);
}

Circuit condition_score(const Circuit &circuit, std::size_t score_variable, double f_star)
{
    Evidence evidence(circuit.schema().size());
    evidence.set(score_variable, f_star);
    return condition(circuit, evidence);
}

Evidence conditional_sample(const Circuit &circuit, const Evidence &evidence, std::mt19937_64 &rng)
{
    const auto values = node_log_values(circuit, evidence);
    const auto &nodes = circuit.nodes();

    Evidence out(circuit.schema().size());
    for (std::size_t v = 0; v != out.size(); ++v)
        if (evidence.has(v)) out.set(v, evidence[v]);

    std::vector<NodeId> stack{ circuit.root() };
    std::vector<double> scores;
    while (!stack.empty()) {
        const NodeId id = stack.back();
        stack.pop_back();
        std::visit(overloaded{
            [&](const LeafNode &leaf) {
                if (!evidence.has(leaf.variable))
                    out.set(leaf.variable, leaf_sample(leaf.distribution, rng));
            },
            [&](const ProductNode &p) {
                for (auto it = p.children.rbegin(); it != p.children.rend(); ++it) stack.push_back(*it);
            },
            [&](const SumNode &s) {
                scores.resize(s.children.size());
                for (std::size_t i = 0; i != s.children.size(); ++i)
                    scores[i] = s.log_weights[i] + values[s.children[i]];
                stack.push_back(s.children[categorical_pick(scores, rng)]);
            },
        }, nodes[id]);
    }
    return out;
}

Moments marginal_moments(const Circuit &circuit)
{
    const std::size_t num_vars = circuit.schema().size();
    const auto &nodes = circuit.nodes();
    /* first[id * V + v], second[id * V + v]: E[x_v], E[x_v^2] under node id */
    std::vector<double> first(nodes.size() * num_vars, 0.0), second(nodes.size() * num_vars, 0.0);

    for (NodeId id = 0; id != nodes.size(); ++id) {
        double *m1 = &first[id * num_vars];
        double *m2 = &second[id * num_vars];
        std::visit(overloaded{
            [&](const LeafNode &leaf) {
                std::visit(overloaded{
                    [&](const CategoricalLeaf &c) {
                        for (std::size_t k = 0; k != c.probabilities.size(); ++k) {
                            m1[leaf.variable] += c.probabilities[k] * double(k);
                            m2[leaf.variable] += c.probabilities[k] * double(k) * double(k);
                        }
                    },
                    [&](const GaussianLeaf &g) {
                        m1[leaf.variable] = g.mu;
                        m2[leaf.variable] = g.mu * g.mu + g.sigma * g.sigma;
                    },
                }, leaf.distribution);
            },
            [&](const ProductNode &p) {
                for (NodeId c : p.children)
                    for (std::size_t v : circuit.scope(c)) {
                        m1[v] = first[c * num_vars + v];
                        m2[v] = second[c * num_vars + v];
                    }
            },
            [&](const SumNode &s) {
                for (std::size_t i = 0; i != s.children.size(); ++i) {
                    const double w = std::exp(s.log_weights[i]);
                    for (std::size_t v : circuit.scope(id)) {
                        m1[v] += w * first[s.children[i] * num_vars + v];
                        m2[v] += w * second[s.children[i] * num_vars + v];
                    }
                }
            },
        }, nodes[id]);
    }

    Moments out{ std::vector<double>(num_vars, std::numeric_limits<double>::quiet_NaN()),
                 std::vector<double>(num_vars, std::numeric_limits<double>::quiet_NaN()) };
    const std::size_t root = circuit.root();
    for (std::size_t v : circuit.scope()) {
        out.mean[v] = first[root * num_vars + v];
        out.variance[v] = std::max(0.0, second[root * num_vars + v] - out.mean[v] * out.mean[v]);
    }
    return out;
}

/*======================================================================================================================
 * Serialization
 *====================================================================================================================*/

namespace {
constexpr std::string_view kMagic = "pchpo-circuit";
constexpr int kFormatVersion = 1;
}

std::string serialize(const Circuit &circuit)
{
    std::ostringstream out;
    out << kMagic << ' ' << kFormatVersion << '\n';
    out << "variables " << circuit.schema().size() << '\n';
    for (const auto &v : circuit.schema()) {
        if (v.discrete)
            out << "var " << v.name << " discrete " << v.cardinality << '\n';
        else
            out << "var " << v.name << " continuous\n";
    }
    out << "nodes " << circuit.size() << '\n';
    for (NodeId id = 0; id != circuit.size(); ++id) {
        out << id << ' ';
        std::visit(overloaded{
            [&](const SumNode &s) {
                out << "sum " << s.children.size();
                for (std::size_t i = 0; i != s.children.size(); ++i)
                    out << ' ' << s.children[i] << ' ' << format_double(s.log_weights[i]);
            },
            [&](const ProductNode &p) {
                out << "product " << p.children.size();
                for (NodeId c : p.children) out << ' ' << c;
            },
            [&](const LeafNode &l) {
                out << "leaf " << l.variable << ' ';
                std::visit(overloaded{
                    [&](const CategoricalLeaf &c) {
                        out << "categorical " << c.probabilities.size();
                        for (double p : c.probabilities) out << ' ' << format_double(p);
                    },
                    [&](const GaussianLeaf &g) {
                        out << "gaussian " << format_double(g.mu) << ' ' << format_double(g.sigma);
                    },
                }, l.distribution);
            },
        }, circuit.nodes()[id]);
        out << '\n';
    }
    return out.str();
}

namespace {

class TokenReader
{
public:
    explicit TokenReader(std::string_view text) : in_(std::string(text)) { }

    std::string word(const char *what)
    {
        std::string t;
        if (!(in_ >> t))
            throw std::invalid_argument(std::string("circuit file: expected ") + what);
        return t;
    }

    void expect(std::string_view keyword)
    {
        if (word(keyword.data()) != keyword)
            throw std::invalid_argument("circuit file: expected '" + std::string(keyword) + "'");
    }

    double real(const char *what)
    {
        const std::string t = word(what);
        double v = 0;
        auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
        if (ec != std::errc() || ptr != t.data() + t.size())
            throw std::invalid_argument(std::string("circuit file: bad number for ") + what + ": '" + t + "'");
        return v;
    }

    std::size_t count(const char *what)
    {
        const std::string t = word(what);
        std::size_t v = 0;
        auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
        if (ec != std::errc() || ptr != t.data() + t.size())
            throw std::invalid_argument(std::string("circuit file: bad integer for ") + what + ": '" + t + "'");
        return v;
    }

private:
    std::istringstream in_;
};

} // namespace

Circuit parse_circuit(std::string_view text)
{
    TokenReader in(text);
    in.expect(kMagic);
    if (const auto version = in.count("version"); version != std::size_t(kFormatVersion))
        throw std::invalid_argument("circuit file: unsupported format version " + std::to_string(version));

    in.expect("variables");
    Schema schema(in.count("variable count"));
    for (auto &v : schema) {
        in.expect("var");
        v.name = in.word("variable name");
        const std::string kind = in.word("variable kind");
        if (kind == "discrete") {
            v.discrete = true;
            v.cardinality = in.count("cardinality");
        } else if (kind != "continuous") {
            throw std::invalid_argument("circuit file: unknown variable kind '" + kind + "'");
        }
    }

    in.expect("nodes");
    std::vector<Node> nodes(in.count("node count"));
    for (std::size_t id = 0; id != nodes.size(); ++id) {
        if (in.count("node id") != id)
            throw std::invalid_argument("circuit file: node ids must be consecutive");
        const std::string kind = in.word("node kind");
        if (kind == "sum") {
            SumNode s;
            const std::size_t n = in.count("child count");
            for (std::size_t i = 0; i != n; ++i) {
                s.children.push_back(NodeId(in.count("child id")));
                s.log_weights.push_back(in.real("log weight"));
            }
            nodes[id] = std::move(s);
        } else if (kind == "product") {
            ProductNode p;
            const std::size_t n = in.count("child count");
            for (std::size_t i = 0; i != n; ++i) p.children.push_back(NodeId(in.count("child id")));
            nodes[id] = std::move(p);
        } else if (kind == "leaf") {
            const std::size_t var = in.count("leaf variable");
            const std::string family = in.word("leaf family");
            if (family == "categorical") {
                CategoricalLeaf c;
                c.probabilities.resize(in.count("label count"));
                for (auto &p : c.probabilities) p = in.real("probability");
                nodes[id] = LeafNode{ var, std::move(c) };
            } else if (family == "gaussian") {
                const double mu = in.real("mu");
                const double sigma = in.real("sigma");
                nodes[id] = LeafNode{ var, GaussianLeaf{ mu, sigma } };
            } else {
                throw std::invalid_argument("circuit file: unknown leaf family '" + family + "'");
            }
        } else {
            throw std::invalid_argument("circuit file: unknown node kind '" + kind + "'");
        }
    }
    return Circuit(std::move(schema), std::move(nodes));
}

} // namespace pchpo
