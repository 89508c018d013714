// Copyright (c) geocert contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "geocert/bounds.hpp"
#include "geocert/graph.hpp"
#include "geocert/relax.hpp"

namespace geocert {

/// Linear bounds on an interior node, expressed over the graph's input box. During the
/// backward pass the node is treated as an opaque primitive relaxed by these bounds.
struct PrecomputedBound {
    NodeId node = 0;
    LinearBounds bounds;
};

namespace detail {

/// Backward linear relaxation (CROWN) over one graph and input box. Concrete ranges of
/// intermediate nodes are computed lazily by backward passes that start at those nodes.
class BackwardPass {
  public:
    BackwardPass(const CompGraph& g, const Box& input_box, std::span<const PrecomputedBound> pre)
        : g_(g), box_(input_box), pre_(g.size(), nullptr), ranges_(g.size()) {
        if (static_cast<Eigen::Index>(input_box.size()) != g.input_dim()) {
            throw BoundsError("backward_bounds: input box dimension " + std::to_string(input_box.size()) +
                              " != graph input dimension " + std::to_string(g.input_dim()));
        }
        for (const auto& p : pre) {
            if (p.node >= g.size()) throw GraphError("precomputed bound on nonexistent node " + std::to_string(p.node));
            p.bounds.validate();
            if (p.bounds.rows() != g.dim(p.node)) {
                throw BoundsError("precomputed bound rows != node dimension for node " + std::to_string(p.node));
            }
            if (!(p.bounds.domain == input_box)) {
                throw BoundsError("precomputed bound domain differs from the query box (node " + std::to_string(p.node) + ")");
            }
            pre_[p.node] = &p.bounds;
        }
    }

    /// Bounds on node `start` as affine functions of the input.
    LinearBounds bounds_of(NodeId start) {
        if (pre_[start]) return *pre_[start];
        const Eigen::Index m = g_.dim(start);
        const Eigen::Index d = g_.input_dim();
        std::vector<std::optional<Eigen::MatrixXd>> lam_l(start + 1), lam_u(start + 1);
        lam_l[start] = Eigen::MatrixXd::Identity(m, m);
        lam_u[start] = Eigen::MatrixXd::Identity(m, m);
        Eigen::MatrixXd in_l = Eigen::MatrixXd::Zero(m, d), in_u = Eigen::MatrixXd::Zero(m, d);
        Eigen::VectorXd bias_l = Eigen::VectorXd::Zero(m), bias_u = Eigen::VectorXd::Zero(m);

        auto accumulate = [](std::optional<Eigen::MatrixXd>& slot, const Eigen::MatrixXd& add) {
            if (slot) {
                *slot += add;
            } else {
                slot = add;
            }
        };

        for (NodeId id = start + 1; id-- > 0;) {
            if (!lam_l[id]) continue;
            Eigen::MatrixXd Ll = std::move(*lam_l[id]);
            Eigen::MatrixXd Lu = std::move(*lam_u[id]);
            lam_l[id].reset();
            lam_u[id].reset();
            const Node& n = g_.node(id);

            if (const LinearBounds* pb = pre_[id]; pb && id != start) {
                Eigen::MatrixXd lp = Ll.cwiseMax(0.0), ln = Ll.cwiseMin(0.0);
                Eigen::MatrixXd up = Lu.cwiseMax(0.0), un = Lu.cwiseMin(0.0);
                in_l.noalias() += lp * pb->lower.weights + ln * pb->upper.weights;
                bias_l.noalias() += lp * pb->lower.bias + ln * pb->upper.bias;
                in_u.noalias() += up * pb->upper.weights + un * pb->lower.weights;
                bias_u.noalias() += up * pb->upper.bias + un * pb->lower.bias;
                continue;
            }

            switch (n.kind) {
                case NodeKind::input:
                    in_l += Ll;
                    in_u += Lu;
                    break;
                case NodeKind::constant:
                    bias_l.noalias() += Ll * n.value;
                    bias_u.noalias() += Lu * n.value;
                    break;
                case NodeKind::affine:
                    bias_l.noalias() += Ll * n.map.bias;
                    bias_u.noalias() += Lu * n.map.bias;
                    accumulate(lam_l[n.parents[0]], Ll * n.map.weights);
                    accumulate(lam_u[n.parents[0]], Lu * n.map.weights);
                    break;
                case NodeKind::sum:
                    for (auto p : n.parents) {
                        accumulate(lam_l[p], Ll);
                        accumulate(lam_u[p], Lu);
                    }
                    break;
                case NodeKind::nonlin:
                case NodeKind::reciprocal: {
                    const Box& r = range(n.parents[0]);
                    for (Eigen::Index j = 0; j < n.dim; ++j) {
                        ScalarRelaxation rel = relax_scalar(n.fn, r[static_cast<std::size_t>(j)]);
                        for (Eigen::Index i = 0; i < Ll.rows(); ++i) {
                            double a = Ll(i, j);
                            if (a >= 0) {
                                bias_l[i] += a * rel.lower_intercept;
                                Ll(i, j) = a * rel.lower_slope;
                            } else {
                                bias_l[i] += a * rel.upper_intercept;
                                Ll(i, j) = a * rel.upper_slope;
                            }
                            double b = Lu(i, j);
                            if (b >= 0) {
                                bias_u[i] += b * rel.upper_intercept;
                                Lu(i, j) = b * rel.upper_slope;
                            } else {
                                bias_u[i] += b * rel.lower_intercept;
                                Lu(i, j) = b * rel.lower_slope;
                            }
                        }
                    }
                    accumulate(lam_l[n.parents[0]], Ll);
                    accumulate(lam_u[n.parents[0]], Lu);
                    break;
                }
                case NodeKind::product: {
                    const Box ra = range(n.parents[0]);
                    const Box& rb = range(n.parents[1]);
                    Eigen::MatrixXd La_l = Eigen::MatrixXd::Zero(Ll.rows(), n.dim), Lb_l = La_l;
                    Eigen::MatrixXd La_u = La_l, Lb_u = La_l;
                    for (Eigen::Index j = 0; j < n.dim; ++j) {
                        auto js = static_cast<std::size_t>(j);
                        McCormickEnvelope env = mccormick(ra[js], rb[js]);
                        Plane lo = env.lower_mid(), hi = env.upper_mid();
                        for (Eigen::Index i = 0; i < Ll.rows(); ++i) {
                            double a = Ll(i, j);
                            const Plane& pl = a >= 0 ? lo : hi;
                            La_l(i, j) = a * pl.a;
                            Lb_l(i, j) = a * pl.b;
                            bias_l[i] += a * pl.c;
                            double b = Lu(i, j);
                            const Plane& pu = b >= 0 ? hi : lo;
                            La_u(i, j) = b * pu.a;
                            Lb_u(i, j) = b * pu.b;
                            bias_u[i] += b * pu.c;
                        }
                    }
                    accumulate(lam_l[n.parents[0]], La_l);
                    accumulate(lam_u[n.parents[0]], La_u);
                    accumulate(lam_l[n.parents[1]], Lb_l);
                    accumulate(lam_u[n.parents[1]], Lb_u);
                    break;
                }
                case NodeKind::opaque:
                    throw GraphError("opaque node " + std::to_string(id) + " reached without a precomputed bound");
            }
        }
        return {LinearMap(std::move(in_l), std::move(bias_l)), LinearMap(std::move(in_u), std::move(bias_u)), box_};
    }

    /// Concrete range of a node over the input box.
    const Box& range(NodeId id) {
        if (!ranges_[id]) {
            const Node& n = g_.node(id);
            if (pre_[id]) {
                ranges_[id] = concretize(*pre_[id]);
            } else if (n.kind == NodeKind::input) {
                ranges_[id] = box_;
            } else if (n.kind == NodeKind::constant) {
                ranges_[id] = Box::point(n.value);
            } else {
                ranges_[id] = concretize(bounds_of(id));
            }
        }
        return *ranges_[id];
    }

  private:
    const CompGraph& g_;
    const Box& box_;
    std::vector<const LinearBounds*> pre_;
    std::vector<std::optional<Box>> ranges_;
};

}  // namespace detail

/// Affine lower/upper bounds on the graph output valid for every point of `input_box`.
/// Nodes listed in `precomputed` are relaxed by the given bounds instead of their own
/// definition; their concrete ranges come from concretizing those bounds.
inline LinearBounds backward_bounds(const CompGraph& graph, const Box& input_box,
                                    std::span<const PrecomputedBound> precomputed = {}) {
    std::vector<bool> live = graph.ancestors_of_output();
    for (const auto& p : precomputed) {
        if (p.node >= graph.size()) throw GraphError("precomputed bound on nonexistent node " + std::to_string(p.node));
        if (!live[p.node]) {
            throw GraphError("precomputed bound on node " + std::to_string(p.node) + " which the output does not depend on");
        }
    }
    detail::BackwardPass pass(graph, input_box, precomputed);
    return pass.bounds_of(graph.output());
}

/// Convenience: concretized output box.
inline Box output_range(const CompGraph& graph, const Box& input_box, std::span<const PrecomputedBound> precomputed = {}) {
    return concretize(backward_bounds(graph, input_box, precomputed));
}

}  // namespace geocert
