// Copyright (c) geocert contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "geocert/blend.hpp"
#include "geocert/bounds.hpp"
#include "geocert/crown.hpp"
#include "geocert/graph.hpp"
#include "geocert/graph_json.hpp"

namespace geocert {

enum class Activation { relu, tanh, identity };

inline std::string_view to_string(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
        case Activation::identity: return "identity";
    }
    return "?";
}

inline Activation activation_from_string(std::string_view s) {
    for (auto a : {Activation::relu, Activation::tanh, Activation::identity}) {
        if (to_string(a) == s) return a;
    }
    throw std::invalid_argument("unknown activation '" + std::string(s) + "'");
}

struct DenseLayer {
    LinearMap map;
    Activation activation = Activation::identity;
};

/// Fully connected controller. The last layer's pre-activation z is squashed into the
/// control interval: u = center + radius * tanh(z).
struct MLPSpec {
    std::vector<DenseLayer> layers;
    Interval control{-1.0, 1.0};
    json metadata = json::object();

    [[nodiscard]] Eigen::Index input_dim() const { return layers.empty() ? 0 : layers.front().map.cols(); }
    [[nodiscard]] Eigen::Index output_dim() const { return layers.empty() ? 0 : layers.back().map.rows(); }

    void validate() const {
        if (layers.empty()) throw std::invalid_argument("MLP has no layers");
        for (std::size_t i = 1; i < layers.size(); ++i) {
            if (layers[i].map.cols() != layers[i - 1].map.rows()) {
                throw std::invalid_argument("MLP layer " + std::to_string(i) + " input width does not match previous output");
            }
        }
        if (layers.back().activation != Activation::identity) {
            throw std::invalid_argument("the last MLP layer must be linear (squashing is applied separately)");
        }
    }
};

inline Eigen::VectorXd apply_activation(Activation a, Eigen::VectorXd z) {
    switch (a) {
        case Activation::relu: return z.cwiseMax(0.0);
        case Activation::tanh: return z.array().tanh().matrix();
        case Activation::identity: return z;
    }
    return z;
}

inline Eigen::VectorXd policy_eval(const MLPSpec& mlp, const Eigen::VectorXd& obs) {
    mlp.validate();
    if (obs.size() != mlp.input_dim()) {
        throw std::invalid_argument("policy_eval: observation has " + std::to_string(obs.size()) + " entries, expected " +
                                    std::to_string(mlp.input_dim()));
    }
    Eigen::VectorXd h = obs;
    for (const auto& l : mlp.layers) h = apply_activation(l.activation, l.map(h));
    return (mlp.control.center() + mlp.control.radius() * h.array().tanh()).matrix();
}

/// Appends the MLP to `g` reading from node `in`; returns the output node.
inline NodeId append_policy(CompGraph& g, const MLPSpec& mlp, NodeId in) {
    mlp.validate();
    NodeId h = in;
    for (const auto& l : mlp.layers) {
        h = g.add_affine(h, l.map);
        if (l.activation == Activation::relu) h = g.add_nonlin(ScalarFn::relu, h);
        if (l.activation == Activation::tanh) h = g.add_nonlin(ScalarFn::tanh, h);
    }
    h = g.add_nonlin(ScalarFn::tanh, h);
    auto n = mlp.output_dim();
    return g.add_affine(h, LinearMap(mlp.control.radius() * Eigen::MatrixXd::Identity(n, n),
                                     Eigen::VectorXd::Constant(n, mlp.control.center())));
}

/// The controller as a computation graph over observations.
inline CompGraph policy_graph(const MLPSpec& mlp) {
    CompGraph g(mlp.input_dim());
    g.set_output(append_policy(g, mlp, 0));
    return g;
}

struct PolicyBounds {
    Box U;
    LinearBounds u_bounds;
};

/// Bounds on the controller output when its input is only known through affine bounds
/// over some domain. The observation enters as an opaque node carrying those bounds.
inline PolicyBounds policy_bounds(const MLPSpec& mlp, const LinearBounds& input_bounds) {
    mlp.validate();
    if (input_bounds.rows() != mlp.input_dim()) {
        throw BoundsError("policy_bounds: input bounds have " + std::to_string(input_bounds.rows()) + " rows, controller expects " +
                          std::to_string(mlp.input_dim()));
    }
    CompGraph g(input_bounds.dim());
    NodeId obs = g.add_opaque(0, mlp.input_dim());
    g.set_output(append_policy(g, mlp, obs));
    std::vector<PrecomputedBound> pre{{obs, input_bounds}};
    LinearBounds u = backward_bounds(g, input_bounds.domain, pre);
    Box U = concretize(u);
    std::vector<Interval> clipped;
    for (const auto& d : U) {
        double lo = std::max(d.lo, mlp.control.lo), hi = std::min(d.hi, mlp.control.hi);
        clipped.push_back(lo <= hi ? Interval(lo, hi) : Interval(std::min(lo, hi), std::max(lo, hi)));
    }
    return {Box(std::move(clipped)), std::move(u)};
}

/// Image bounds plus auxiliary-input bounds. Both are re-expressed over the joint domain
/// (image domain, aux domain) unless they already share a domain.
inline PolicyBounds policy_bounds(const MLPSpec& mlp, const ObservationBounds& obs, const LinearBounds& aux) {
    if (obs.bounds.domain == aux.domain) return policy_bounds(mlp, stack_rows(obs.bounds, aux));
    Box joint = concat(obs.bounds.domain, aux.domain);
    return policy_bounds(mlp, stack_rows(lift(obs.bounds, joint, 0), lift(aux, joint, obs.bounds.dim())));
}

// ---------------------------------------------------------------------------------------

inline json mlp_to_json(const MLPSpec& mlp) {
    json layers = json::array();
    json arch = json::array();
    arch.push_back(mlp.input_dim());
    for (const auto& l : mlp.layers) {
        layers.push_back({{"weights", matrix_to_json(l.map.weights)},
                          {"bias", vector_to_json(l.map.bias)},
                          {"activation", std::string(to_string(l.activation))}});
        arch.push_back(l.map.rows());
    }
    return {{"format", "geocert-mlp-v1"},
            {"arch", arch},
            {"control", {mlp.control.lo, mlp.control.hi}},
            {"layers", layers},
            {"metadata", mlp.metadata}};
}

inline MLPSpec mlp_from_json(const json& j) {
    MLPSpec m;
    auto c = j.at("control").get<std::vector<double>>();
    if (c.size() != 2) throw std::invalid_argument("controller 'control' must be [lo, hi]");
    m.control = Interval(c[0], c[1]);
    Eigen::Index prev = -1;
    for (const auto& l : j.at("layers")) {
        auto b = vector_from_json(l.at("bias"));
        auto w = matrix_from_json(l.at("weights"), prev < 0 ? 0 : prev);
        m.layers.push_back({LinearMap(std::move(w), std::move(b)), activation_from_string(l.at("activation").get<std::string>())});
        prev = m.layers.back().map.rows();
    }
    if (j.contains("metadata")) m.metadata = j.at("metadata");
    m.validate();
    return m;
}

inline void save_mlp(const MLPSpec& mlp, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << mlp_to_json(mlp).dump() << "\n";
}

inline MLPSpec load_mlp(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::invalid_argument("cannot read controller " + path.string());
    try {
        return mlp_from_json(json::parse(is));
    } catch (const json::exception& e) {
        throw std::invalid_argument(path.string() + ": " + e.what());
    }
}

}  // namespace geocert
