#include "pchpo/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <variant>

namespace pchpo {

namespace {

struct Enumerator
{
    const Circuit &circuit;
    std::size_t cap;
    bool truncated = false;

    std::vector<InducedTree> expand(NodeId id)
    {
        const auto &node = circuit.nodes()[id];
        if (auto leaf = std::get_if<LeafNode>(&node))
            return { InducedTree{ 1.0, { *leaf } } };

        if (auto sum = std::get_if<SumNode>(&node)) {
            std::vector<InducedTree> out;
            for (std::size_t i = 0; i != sum->children.size(); ++i) {
                const double w = std::exp(sum->log_weights[i]);
                for (auto &t : expand(sum->children[i])) {
                    if (out.size() == cap) {
                        truncated = true;
                        return out;
                    }
                    t.weight *= w;
                    out.push_back(std::move(t));
                }
            }
            return out;
        }

        const auto &product = std::get<ProductNode>(node);
        std::vector<InducedTree> out{ InducedTree{ 1.0, {} } };
        for (NodeId child : product.children) {
            const auto parts = expand(child);
            std::vector<InducedTree> next;
            for (const auto &a : out)
                for (const auto &b : parts) {
                    if (next.size() == cap) {
                        truncated = true;
                        break;
                    }
                    InducedTree t{ a.weight * b.weight, a.leaves };
                    t.leaves.insert(t.leaves.end(), b.leaves.begin(), b.leaves.end());
                    next.push_back(std::move(t));
                }
            out = std::move(next);
        }
        for (auto &t : out)
            std::sort(t.leaves.begin(), t.leaves.end(),
                      [](const LeafNode &a, const LeafNode &b) { return a.variable < b.variable; });
        return out;
    }
};

} // namespace

InducedMixture extract_induced_mixture(const Circuit &circuit, std::size_t cap)
{
    Enumerator e{ circuit, std::max<std::size_t>(cap, 1) };
    InducedMixture out;
    out.trees = e.expand(circuit.root());
    out.truncated = e.truncated;
    return out;
}

} // namespace pchpo
