#include "pchpo/learn.hpp"

#include "pchpo/kmeans.hpp"
#include "pchpo/rdc.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
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

std::uint64_t child_seed(std::uint64_t parent, std::size_t child) { return splitmix64(parent ^ splitmix64(child + 1)); }

/** Learner-side tree; converted into a `Circuit` once complete. */
struct Tree
{
    enum class Kind { Sum, Product, Leaf } kind;
    std::vector<std::unique_ptr<Tree>> children;
    std::vector<double> weights;
    std::size_t variable = 0;
    std::optional<LeafDistribution> leaf;

    explicit Tree(Kind k) : kind(k) { }
};

double tree_log_value(const Tree &t, const Eigen::MatrixXd &values, std::size_t row)
{
    switch (t.kind) {
        case Tree::Kind::Leaf:
            return leaf_log_density(*t.leaf, values(Eigen::Index(row), Eigen::Index(t.variable)));
        case Tree::Kind::Product: {
            double total = 0;
            for (const auto &c : t.children) total += tree_log_value(*c, values, row);
            return total;
        }
        case Tree::Kind::Sum: {
            std::vector<double> scores(t.children.size());
            for (std::size_t i = 0; i != t.children.size(); ++i)
                scores[i] = std::log(t.weights[i]) + tree_log_value(*t.children[i], values, row);
            return log_sum_exp(scores);
        }
    }
    return 0;
}

double tree_log_likelihood(const Tree &t, const Eigen::MatrixXd &values, const std::vector<std::size_t> &rows)
{
    double total = 0;
    for (std::size_t r : rows) total += tree_log_value(t, values, r);
    return total;
}

NodeId emit(const Tree &t, CircuitBuilder &builder)
{
    switch (t.kind) {
        case Tree::Kind::Leaf:
            return builder.leaf(t.variable, *t.leaf);
        case Tree::Kind::Product: {
            std::vector<NodeId> ids;
            for (const auto &c : t.children) ids.push_back(emit(*c, builder));
            return builder.product(std::move(ids));
        }
        case Tree::Kind::Sum: {
            std::vector<NodeId> ids;
            for (const auto &c : t.children) ids.push_back(emit(*c, builder));
            return builder.sum(std::move(ids), t.weights);
        }
    }
    return 0;
}

Eigen::VectorXd gather(const DataMatrix &data, const std::vector<std::size_t> &rows, std::size_t col)
{
    Eigen::VectorXd out(Eigen::Index(rows.size()));
    for (std::size_t i = 0; i != rows.size(); ++i)
        out(Eigen::Index(i)) = data.values(Eigen::Index(rows[i]), Eigen::Index(col));
    return out;
}

class Learner
{
public:
    Learner(const DataMatrix &data, const LearnParams &params, LearnStats &stats)
        : data_(data), params_(params), stats_(stats)
    { }

    std::unique_ptr<Tree> factorize(const std::vector<std::size_t> &rows, const std::vector<std::size_t> &cols)
    {
        if (cols.size() == 1)
            return make_leaf(rows, cols.front());
        auto product = std::make_unique<Tree>(Tree::Kind::Product);
        for (std::size_t c : cols) product->children.push_back(make_leaf(rows, c));
        return product;
    }

    std::unique_ptr<Tree> learn(const std::vector<std::size_t> &rows, const std::vector<std::size_t> &cols, int depth,
                                std::uint64_t seed)
    {
        if (cols.size() == 1 || rows.size() < stats_.min_instances || depth >= params_.max_depth)
            return factorize(rows, cols);

        std::mt19937_64 rng(seed);
        auto components = split_variables(data_, rows, cols, params_, rng);
        if (components.size() > 1) {
            auto product = std::make_unique<Tree>(Tree::Kind::Product);
            for (std::size_t i = 0; i != components.size(); ++i) {
                std::vector<std::size_t> sub;
                for (std::size_t pos : components[i]) sub.push_back(cols[pos]);
                if (depth == 0 && params_.score_variable && sub.size() == 1 && sub.front() == *params_.score_variable)
                    stats_.score_isolated = true;
                product->children.push_back(learn(rows, sub, depth + 1, child_seed(seed, i)));
            }
            return product;
        }

        if (rows.size() >= 2 * stats_.min_instances) {
            auto split = split_instances(data_, rows, cols, params_, rng);
            if (split.clusters.size() > 1) {
                auto sum = std::make_unique<Tree>(Tree::Kind::Sum);
                sum->weights = split.weights;
                for (std::size_t i = 0; i != split.clusters.size(); ++i)
                    sum->children.push_back(learn(split.clusters[i], cols, depth + 1, child_seed(seed, 100 + i)));

                auto baseline = factorize(rows, cols);
                if (tree_log_likelihood(*sum, data_.values, rows) >= tree_log_likelihood(*baseline, data_.values, rows))
                    return sum;
                return baseline;
            }
        }
        return factorize(rows, cols);
    }

private:
    std::unique_ptr<Tree> make_leaf(const std::vector<std::size_t> &rows, std::size_t col)
    {
        auto leaf = std::make_unique<Tree>(Tree::Kind::Leaf);
        leaf->variable = col;
        leaf->leaf = fit_leaf(gather(data_, rows, col), data_.schema[col], params_);
        return leaf;
    }

    const DataMatrix &data_;
    const LearnParams &params_;
    LearnStats &stats_;
};

void count_nodes(const Tree &t, LearnStats &stats)
{
    switch (t.kind) {
        case Tree::Kind::Leaf: ++stats.leaves; break;
        case Tree::Kind::Product: ++stats.product_nodes; break;
        case Tree::Kind::Sum: ++stats.sum_nodes; break;
    }
    for (const auto &c : t.children) count_nodes(*c, stats);
}

std::vector<std::size_t> iota_vector(std::size_t n)
{
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), std::size_t(0));
    return v;
}

} // namespace

/*======================================================================================================================
 * Parameters and data
 *====================================================================================================================*/

void DataMatrix::validate() const
{
    if (values.rows() < 1)
        throw std::invalid_argument("data matrix has no rows");
    if (std::size_t(values.cols()) != schema.size())
        throw std::invalid_argument("data matrix column count differs from the schema");
    if (!values.allFinite())
        throw std::invalid_argument("data matrix has non-finite entries");
    for (std::size_t c = 0; c != schema.size(); ++c) {
        if (!schema[c].discrete) continue;
        for (Eigen::Index r = 0; r != values.rows(); ++r) {
            const double v = values(r, Eigen::Index(c));
            if (v != std::round(v) || v < 0 || v >= double(schema[c].cardinality))
                throw std::invalid_argument("column '" + schema[c].name + "' holds an invalid category code");
        }
    }
}

void LearnParams::validate() const
{
    if (!(rdc_threshold > 0 && rdc_threshold < 1))
        throw std::invalid_argument("rdc_threshold must lie in (0, 1)");
    if (rdc_features < 1)
        throw std::invalid_argument("rdc_features must be >= 1");
    if (kmeans_k < 2)
        throw std::invalid_argument("kmeans_k must be >= 2");
    if (!(sigma_floor > 0))
        throw std::invalid_argument("sigma_floor must be > 0");
    if (!(smoothing > 0))
        throw std::invalid_argument("smoothing must be > 0");
}

std::size_t dynamic_min_instances(std::size_t rows)
{
    return std::max<std::size_t>(10, std::size_t(std::ceil(0.1 * double(rows))));
}

/*======================================================================================================================
 * Splits
 *====================================================================================================================*/

std::vector<std::vector<std::size_t>> split_variables(const DataMatrix &data, const std::vector<std::size_t> &rows,
                                                      const std::vector<std::size_t> &cols, const LearnParams &params,
                                                      std::mt19937_64 &rng)
{
    const std::size_t m = cols.size();
    if (m < 2 || rows.size() < 3) {
        std::vector<std::size_t> all(m);
        std::iota(all.begin(), all.end(), std::size_t(0));
        return { all };
    }

    std::vector<Eigen::VectorXd> columns;
    columns.reserve(m);
    for (std::size_t c : cols) columns.push_back(gather(data, rows, c));

    /* union-find over columns joined by dependent pairs */
    std::vector<std::size_t> parent(m);
    std::iota(parent.begin(), parent.end(), std::size_t(0));
    auto find = [&](std::size_t i) {
        while (parent[i] != i) i = parent[i] = parent[parent[i]];
        return i;
    };

    for (std::size_t i = 0; i + 1 < m; ++i)
        for (std::size_t j = i + 1; j < m; ++j) {
            const double dependence = rdc(columns[i], columns[j], params.rdc_features, params.rdc_scale, rng);
            if (dependence > params.rdc_threshold)
                parent[find(i)] = find(j);
        }

    std::vector<std::vector<std::size_t>> components;
    std::vector<long> slot(m, -1);
    for (std::size_t i = 0; i != m; ++i) {
        const std::size_t r = find(i);
        if (slot[r] < 0) {
            slot[r] = long(components.size());
            components.emplace_back();
        }
        components[std::size_t(slot[r])].push_back(i);
    }
    return components;
}

InstanceSplit split_instances(const DataMatrix &data, const std::vector<std::size_t> &rows,
                              const std::vector<std::size_t> &cols, const LearnParams &params, std::mt19937_64 &rng)
{
    const Eigen::Index n = Eigen::Index(rows.size());
    InstanceSplit single{ { rows }, { 1.0 } };
    if (n < 2)
        return single;

    Eigen::MatrixXd x(n, Eigen::Index(cols.size()));
    for (std::size_t j = 0; j != cols.size(); ++j) {
        Eigen::VectorXd col = gather(data, rows, cols[j]);
        const double mean = col.mean();
        const double sd = std::sqrt((col.array() - mean).square().sum() / double(n));
        x.col(Eigen::Index(j)) = sd > 0 ? Eigen::VectorXd((col.array() - mean) / sd) : Eigen::VectorXd::Zero(n);
    }
    if (x.isZero(0.0))
        return single;

    const int k = std::min<int>(params.kmeans_k, int(n));
    const auto result = kmeans(x, k, params.kmeans_restarts, params.kmeans_iterations, rng);

    InstanceSplit split;
    split.clusters.resize(std::size_t(k));
    for (Eigen::Index i = 0; i != n; ++i)
        split.clusters[std::size_t(result.assignment[std::size_t(i)])].push_back(rows[std::size_t(i)]);
    std::erase_if(split.clusters, [](const auto &c) { return c.empty(); });
    if (split.clusters.size() < 2)
        return single;
    for (const auto &c : split.clusters)
        split.weights.push_back(double(c.size()) / double(n));
    return split;
}

LeafDistribution fit_leaf(const Eigen::Ref<const Eigen::VectorXd> &column, const Variable &variable,
                          const LearnParams &params)
{
    if (column.size() == 0)
        throw std::invalid_argument("fit_leaf: empty column");
    const double n = double(column.size());

    if (variable.discrete) {
        std::vector<double> counts(variable.cardinality, 0.0);
        for (Eigen::Index i = 0; i != column.size(); ++i)
            counts.at(std::size_t(std::llround(column(i)))) += 1;
        const double denominator = n + double(variable.cardinality) * params.smoothing;
        for (double &c : counts) c = (c + params.smoothing) / denominator;
        return CategoricalLeaf{ std::move(counts) };
    }

    const double mean = column.mean();
    const double sd = std::sqrt((column.array() - mean).square().sum() / n);
    return GaussianLeaf{ mean, std::max(sd, params.sigma_floor) };
}

/*======================================================================================================================
 * Learning
 *====================================================================================================================*/

Circuit learn(const DataMatrix &data, const LearnParams &params, LearnStats *stats)
{
    data.validate();
    params.validate();

    LearnStats local;
    local.min_instances = params.min_instances ? params.min_instances
                                               : dynamic_min_instances(std::size_t(data.values.rows()));
    Learner learner(data, params, local);
    const auto tree = learner.learn(iota_vector(std::size_t(data.values.rows())), iota_vector(data.schema.size()), 0,
                                    params.seed);
    count_nodes(*tree, local);

    CircuitBuilder builder(data.schema);
    const NodeId root = emit(*tree, builder);
    if (stats) *stats = local;
    return std::move(builder).build(root);
}

Circuit learn_factorized(const DataMatrix &data, const LearnParams &params)
{
    data.validate();
    LearnStats unused;
    Learner learner(data, params, unused);
    const auto tree = learner.factorize(iota_vector(std::size_t(data.values.rows())), iota_vector(data.schema.size()));
    CircuitBuilder builder(data.schema);
    const NodeId root = emit(*tree, builder);
    return std::move(builder).build(root);
}

double training_log_likelihood(const Circuit &circuit, const DataMatrix &data)
{
    double total = 0;
    Evidence evidence(data.schema.size());
    for (Eigen::Index r = 0; r != data.values.rows(); ++r) {
        for (std::size_t c = 0; c != data.schema.size(); ++c)
            evidence.set(c, data.values(r, Eigen::Index(c)));
        total += log_density(circuit, evidence);
    }
    return total;
}

} // namespace pchpo
