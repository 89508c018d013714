// Copyright (c) geocert contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "geocert/bounds.hpp"
#include "geocert/relax.hpp"

namespace geocert {

using NodeId = std::size_t;

class GraphError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

enum class NodeKind { input, constant, affine, nonlin, product, sum, reciprocal, opaque };

inline std::string_view to_string(NodeKind k) {
    switch (k) {
        case NodeKind::input: return "input";
        case NodeKind::constant: return "constant";
        case NodeKind::affine: return "affine";
        case NodeKind::nonlin: return "nonlin";
        case NodeKind::product: return "product";
        case NodeKind::sum: return "sum";
        case NodeKind::reciprocal: return "reciprocal";
        case NodeKind::opaque: return "opaque";
    }
    return "?";
}

/// Evaluator for an opaque node: parent value -> node value.
using OpaqueEval = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

struct Node {
    NodeKind kind = NodeKind::input;
    Eigen::Index dim = 0;
    std::vector<NodeId> parents;
    LinearMap map;           // affine
    Eigen::VectorXd value;   // constant
    ScalarFn fn = ScalarFn::relu;  // nonlin
    OpaqueEval eval;         // opaque (optional)
};

/// Vector-valued computation graph. Nodes are stored in topological order (parents precede
/// children) and there is exactly one input node, always id 0.
///
/// Product nodes multiply element-wise; sum nodes add element-wise. An opaque node is a
/// placeholder whose relaxation must be supplied as a precomputed bound; it may carry an
/// evaluator so the graph stays executable.
class CompGraph {
  public:
    CompGraph() = default;
    explicit CompGraph(Eigen::Index input_dim) { add_input(input_dim); }

    NodeId add_input(Eigen::Index dim) {
        if (!nodes_.empty()) throw GraphError("graph already has an input node");
        if (dim < 0) throw GraphError("negative input dimension");
        Node n;
        n.kind = NodeKind::input;
        n.dim = dim;
        return push(std::move(n));
    }

    NodeId add_constant(const Eigen::VectorXd& v) {
        require_input();
        Node n;
        n.kind = NodeKind::constant;
        n.dim = v.size();
        n.value = v;
        return push(std::move(n));
    }

    NodeId add_affine(NodeId parent, LinearMap map) {
        check_parent(parent);
        if (map.cols() != nodes_[parent].dim) {
            throw GraphError("affine node: weight columns (" + std::to_string(map.cols()) + ") != parent dim (" +
                             std::to_string(nodes_[parent].dim) + ")");
        }
        Node n;
        n.kind = NodeKind::affine;
        n.dim = map.rows();
        n.parents = {parent};
        n.map = std::move(map);
        return push(std::move(n));
    }

    NodeId add_nonlin(ScalarFn fn, NodeId parent) {
        check_parent(parent);
        Node n;
        n.kind = fn == ScalarFn::reciprocal ? NodeKind::reciprocal : NodeKind::nonlin;
        n.dim = nodes_[parent].dim;
        n.parents = {parent};
        n.fn = fn;
        return push(std::move(n));
    }

    NodeId add_reciprocal(NodeId parent) { return add_nonlin(ScalarFn::reciprocal, parent); }

    NodeId add_product(NodeId a, NodeId b) {
        check_parent(a);
        check_parent(b);
        if (nodes_[a].dim != nodes_[b].dim) throw GraphError("product node: operand dimensions differ");
        Node n;
        n.kind = NodeKind::product;
        n.dim = nodes_[a].dim;
        n.parents = {a, b};
        return push(std::move(n));
    }

    NodeId add_sum(std::vector<NodeId> parents) {
        if (parents.empty()) throw GraphError("sum node needs at least one parent");
        for (auto p : parents) check_parent(p);
        Eigen::Index d = nodes_[parents.front()].dim;
        for (auto p : parents) {
            if (nodes_[p].dim != d) throw GraphError("sum node: operand dimensions differ");
        }
        Node n;
        n.kind = NodeKind::sum;
        n.dim = d;
        n.parents = std::move(parents);
        return push(std::move(n));
    }

    NodeId add_opaque(NodeId parent, Eigen::Index dim, OpaqueEval eval = {}) {
        check_parent(parent);
        Node n;
        n.kind = NodeKind::opaque;
        n.dim = dim;
        n.parents = {parent};
        n.eval = std::move(eval);
        return push(std::move(n));
    }

    void set_output(NodeId id) {
        if (id >= nodes_.size()) throw GraphError("output node does not exist");
        output_ = id;
    }

    [[nodiscard]] NodeId output() const {
        if (!output_) throw GraphError("graph has no output node");
        return *output_;
    }
    [[nodiscard]] bool has_output() const { return output_.has_value(); }
    [[nodiscard]] const Node& node(NodeId id) const { return nodes_.at(id); }
    [[nodiscard]] const std::vector<Node>& nodes() const { return nodes_; }
    [[nodiscard]] std::size_t size() const { return nodes_.size(); }
    [[nodiscard]] Eigen::Index input_dim() const {
        require_input();
        return nodes_.front().dim;
    }
    [[nodiscard]] Eigen::Index output_dim() const { return nodes_[output()].dim; }
    [[nodiscard]] Eigen::Index dim(NodeId id) const { return nodes_.at(id).dim; }

    /// Nodes the output depends on (including the output itself).
    [[nodiscard]] std::vector<bool> ancestors_of_output() const {
        std::vector<bool> live(nodes_.size(), false);
        live[output()] = true;
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            if (!live[i]) continue;
            for (auto p : nodes_[i].parents) live[p] = true;
        }
        return live;
    }

  private:
    NodeId push(Node n) {
        nodes_.push_back(std::move(n));
        return nodes_.size() - 1;
    }
    void require_input() const {
        if (nodes_.empty()) throw GraphError("graph has no input node");
    }
    void check_parent(NodeId p) const {
        require_input();
        if (p >= nodes_.size()) throw GraphError("parent node " + std::to_string(p) + " does not exist");
    }

    std::vector<Node> nodes_;
    std::optional<NodeId> output_;
};

/// Values of every node at `point`.
inline std::vector<Eigen::VectorXd> forward_eval_all(const CompGraph& g, const Eigen::VectorXd& point) {
    if (point.size() != g.input_dim()) {
        throw GraphError("forward_eval: point dimension " + std::to_string(point.size()) + " != input dimension " +
                         std::to_string(g.input_dim()));
    }
    std::vector<Eigen::VectorXd> v(g.size());
    for (NodeId i = 0; i < g.size(); ++i) {
        const Node& n = g.node(i);
        switch (n.kind) {
            case NodeKind::input: v[i] = point; break;
            case NodeKind::constant: v[i] = n.value; break;
            case NodeKind::affine: v[i] = n.map(v[n.parents[0]]); break;
            case NodeKind::nonlin:
            case NodeKind::reciprocal: {
                const auto& z = v[n.parents[0]];
                v[i].resize(z.size());
                for (Eigen::Index j = 0; j < z.size(); ++j) v[i][j] = eval_scalar(n.fn, z[j]);
                break;
            }
            case NodeKind::product: v[i] = v[n.parents[0]].cwiseProduct(v[n.parents[1]]); break;
            case NodeKind::sum: {
                v[i] = v[n.parents[0]];
                for (std::size_t k = 1; k < n.parents.size(); ++k) v[i] += v[n.parents[k]];
                break;
            }
            case NodeKind::opaque:
                if (!n.eval) throw GraphError("forward_eval: opaque node " + std::to_string(i) + " has no evaluator");
                v[i] = n.eval(v[n.parents[0]]);
                if (v[i].size() != n.dim) throw GraphError("forward_eval: opaque evaluator returned wrong size");
                break;
        }
    }
    return v;
}

inline Eigen::VectorXd forward_eval(const CompGraph& g, const Eigen::VectorXd& point) {
    return forward_eval_all(g, point)[g.output()];
}

/// Plain interval arithmetic through the graph (used as a cross-check and for tightening
/// concretized ranges; the relaxation engine itself does not rely on it).
inline Box interval_eval(const CompGraph& g, const Box& input) {
    if (static_cast<Eigen::Index>(input.size()) != g.input_dim()) throw GraphError("interval_eval: input dimension mismatch");
    std::vector<std::vector<Interval>> v(g.size());
    for (NodeId i = 0; i < g.size(); ++i) {
        const Node& n = g.node(i);
        auto& out = v[i];
        switch (n.kind) {
            case NodeKind::input: out = input.dims(); break;
            case NodeKind::constant:
                for (Eigen::Index j = 0; j < n.dim; ++j) out.push_back(Interval::point(n.value[j]));
                break;
            case NodeKind::affine: {
                const auto& in = v[n.parents[0]];
                for (Eigen::Index r = 0; r < n.dim; ++r) {
                    double lo = n.map.bias[r], hi = n.map.bias[r];
                    for (Eigen::Index c = 0; c < n.map.cols(); ++c) {
                        double w = n.map.weights(r, c);
                        if (w == 0.0) continue;
                        Interval t = w * in[static_cast<std::size_t>(c)];
                        lo += t.lo;
                        hi += t.hi;
                    }
                    out.emplace_back(lo, hi);
                }
                break;
            }
            case NodeKind::nonlin:
            case NodeKind::reciprocal: {
                for (const auto& z : v[n.parents[0]]) {
                    switch (n.fn) {
                        case ScalarFn::sin: out.push_back(sin_range(z)); break;
                        case ScalarFn::cos: out.push_back(cos_range(z)); break;
                        case ScalarFn::square: {
                            double a = z.lo * z.lo, b = z.hi * z.hi;
                            out.emplace_back(z.lo <= 0.0 && z.hi >= 0.0 ? 0.0 : std::min(a, b), std::max(a, b));
                            break;
                        }
                        case ScalarFn::reciprocal:
                            if (z.lo <= 0.0 && z.hi >= 0.0) throw RefinementNeeded("interval reciprocal through zero");
                            out.emplace_back(1.0 / z.hi, 1.0 / z.lo);
                            break;
                        default:  // monotone increasing
                            out.emplace_back(eval_scalar(n.fn, z.lo), eval_scalar(n.fn, z.hi));
                    }
                }
                break;
            }
            case NodeKind::product: {
                const auto& a = v[n.parents[0]];
                const auto& b = v[n.parents[1]];
                for (std::size_t j = 0; j < a.size(); ++j) {
                    out.push_back(n.parents[0] == n.parents[1]
                                      ? Interval(a[j].lo <= 0 && a[j].hi >= 0 ? 0.0 : std::min(a[j].lo * a[j].lo, a[j].hi * a[j].hi),
                                                 std::max(a[j].lo * a[j].lo, a[j].hi * a[j].hi))
                                      : a[j] * b[j]);
                }
                break;
            }
            case NodeKind::sum: {
                out = v[n.parents[0]];
                for (std::size_t k = 1; k < n.parents.size(); ++k) {
                    for (std::size_t j = 0; j < out.size(); ++j) out[j] = out[j] + v[n.parents[k]][j];
                }
                break;
            }
            case NodeKind::opaque: throw GraphError("interval_eval: opaque node has no interval semantics");
        }
    }
    return Box(v[g.output()]);
}

/// Copies the nodes of `src` into `dst`, wiring src's input to `input_in_dst`.
/// Returns the id of src's output inside dst.
inline NodeId inline_graph(CompGraph& dst, const CompGraph& src, NodeId input_in_dst) {
    if (dst.dim(input_in_dst) != src.input_dim()) throw GraphError("inline_graph: input dimension mismatch");
    std::vector<NodeId> remap(src.size());
    remap[0] = input_in_dst;
    for (NodeId i = 1; i < src.size(); ++i) {
        const Node& n = src.node(i);
        switch (n.kind) {
            case NodeKind::input: throw GraphError("inline_graph: second input node");
            case NodeKind::constant: remap[i] = dst.add_constant(n.value); break;
            case NodeKind::affine: remap[i] = dst.add_affine(remap[n.parents[0]], n.map); break;
            case NodeKind::nonlin:
            case NodeKind::reciprocal: remap[i] = dst.add_nonlin(n.fn, remap[n.parents[0]]); break;
            case NodeKind::product: remap[i] = dst.add_product(remap[n.parents[0]], remap[n.parents[1]]); break;
            case NodeKind::sum: {
                std::vector<NodeId> ps;
                for (auto p : n.parents) ps.push_back(remap[p]);
                remap[i] = dst.add_sum(std::move(ps));
                break;
            }
            case NodeKind::opaque: remap[i] = dst.add_opaque(remap[n.parents[0]], n.dim, n.eval); break;
        }
    }
    return remap[src.output()];
}

/// Concatenates vector nodes into one node (sum of zero-padded embeddings).
inline NodeId concat_nodes(CompGraph& g, std::span<const NodeId> parts) {
    Eigen::Index total = 0;
    for (auto p : parts) total += g.dim(p);
    std::vector<NodeId> embedded;
    Eigen::Index offset = 0;
    for (auto p : parts) {
        Eigen::Index d = g.dim(p);
        Eigen::MatrixXd w = Eigen::MatrixXd::Zero(total, d);
        w.middleRows(offset, d).setIdentity();
        embedded.push_back(g.add_affine(p, LinearMap(w, Eigen::VectorXd::Zero(total))));
        offset += d;
    }
    return embedded.size() == 1 ? embedded.front() : g.add_sum(std::move(embedded));
}

/// Lightweight handle for building scalar expressions inside a CompGraph.
class Scalar {
  public:
    Scalar(CompGraph& g, NodeId id) : g_(&g), id_(id) {
        if (g.dim(id) != 1) throw GraphError("Scalar handle requires a 1-dimensional node");
    }
    /// Component `i` of a vector node.
    static Scalar component(CompGraph& g, NodeId vec, Eigen::Index i) {
        Eigen::MatrixXd w = Eigen::MatrixXd::Zero(1, g.dim(vec));
        w(0, i) = 1.0;
        return {g, g.add_affine(vec, LinearMap(w, Eigen::VectorXd::Zero(1)))};
    }
    static Scalar constant(CompGraph& g, double v) { return {g, g.add_constant(Eigen::VectorXd::Constant(1, v))}; }

    [[nodiscard]] NodeId id() const { return id_; }
    [[nodiscard]] CompGraph& graph() const { return *g_; }

    /// scale * this + shift
    [[nodiscard]] Scalar affine(double scale, double shift) const {
        Eigen::MatrixXd w(1, 1);
        w(0, 0) = scale;
        return {*g_, g_->add_affine(id_, LinearMap(w, Eigen::VectorXd::Constant(1, shift)))};
    }
    [[nodiscard]] Scalar apply(ScalarFn fn) const { return {*g_, g_->add_nonlin(fn, id_)}; }

    friend Scalar operator+(Scalar a, Scalar b) { return {*a.g_, a.g_->add_sum({a.id_, b.id_})}; }
    friend Scalar operator-(Scalar a, Scalar b) { return a + b.affine(-1.0, 0.0); }
    friend Scalar operator*(Scalar a, Scalar b) { return {*a.g_, a.g_->add_product(a.id_, b.id_)}; }
    friend Scalar operator+(Scalar a, double c) { return a.affine(1.0, c); }
    friend Scalar operator+(double c, Scalar a) { return a.affine(1.0, c); }
    friend Scalar operator-(Scalar a, double c) { return a.affine(1.0, -c); }
    friend Scalar operator-(double c, Scalar a) { return a.affine(-1.0, c); }
    friend Scalar operator*(double s, Scalar a) { return a.affine(s, 0.0); }
    friend Scalar operator*(Scalar a, double s) { return a.affine(s, 0.0); }
    friend Scalar operator-(Scalar a) { return a.affine(-1.0, 0.0); }

  private:
    CompGraph* g_;
    NodeId id_;
};

inline Scalar sin(Scalar a) { return a.apply(ScalarFn::sin); }
inline Scalar cos(Scalar a) { return a.apply(ScalarFn::cos); }
inline Scalar tanh(Scalar a) { return a.apply(ScalarFn::tanh); }
inline Scalar relu(Scalar a) { return a.apply(ScalarFn::relu); }
inline Scalar square(Scalar a) { return a.apply(ScalarFn::square); }
inline Scalar reciprocal(Scalar a) { return a.apply(ScalarFn::reciprocal); }

/// Stacks scalar expressions into one vector node.
inline NodeId stack(CompGraph& g, std::span<const Scalar> parts) {
    std::vector<NodeId> ids;
    for (const auto& p : parts) ids.push_back(p.id());
    return concat_nodes(g, ids);
}

}  // namespace geocert
