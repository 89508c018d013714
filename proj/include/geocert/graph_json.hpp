// Copyright (c) geocert contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geocert/bounds.hpp"
#include "geocert/graph.hpp"

namespace geocert {

using json = nlohmann::json;

inline json vector_to_json(const Eigen::VectorXd& v) {
    return json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline Eigen::VectorXd vector_from_json(const json& j) {
    auto v = j.get<std::vector<double>>();
    return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

/// Row-major nested arrays.
inline json matrix_to_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        std::vector<double> row(static_cast<std::size_t>(m.cols()));
        for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Eigen::MatrixXd matrix_from_json(const json& j, Eigen::Index cols_if_empty = 0) {
    auto rows = static_cast<Eigen::Index>(j.size());
    Eigen::Index cols = rows > 0 ? static_cast<Eigen::Index>(j.at(0).size()) : cols_if_empty;
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const auto& row = j.at(static_cast<std::size_t>(r));
        if (static_cast<Eigen::Index>(row.size()) != cols) throw std::invalid_argument("ragged matrix in JSON");
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
    }
    return m;
}

inline json box_to_json(const Box& b) {
    json a = json::array();
    for (const auto& d : b) a.push_back({d.lo, d.hi});
    return a;
}

inline Box box_from_json(const json& j) {
    std::vector<Interval> d;
    for (const auto& e : j) {
        if (!e.is_array() || e.size() != 2) throw std::invalid_argument("box entries must be [lo, hi] pairs");
        d.emplace_back(e[0].get<double>(), e[1].get<double>());
    }
    return Box(std::move(d));
}

inline json linear_map_to_json(const LinearMap& m) {
    return {{"weights", matrix_to_json(m.weights)}, {"bias", vector_to_json(m.bias)}};
}

inline LinearMap linear_map_from_json(const json& j, Eigen::Index cols_if_empty = 0) {
    return {matrix_from_json(j.at("weights"), cols_if_empty), vector_from_json(j.at("bias"))};
}

/// Node list serialization. Opaque evaluators are not serialized.
inline json graph_to_json(const CompGraph& g) {
    json nodes = json::array();
    for (const auto& n : g.nodes()) {
        json e{{"kind", std::string(to_string(n.kind))}, {"dim", n.dim}};
        switch (n.kind) {
            case NodeKind::input: break;
            case NodeKind::constant: e["value"] = vector_to_json(n.value); break;
            case NodeKind::affine:
                e["parent"] = n.parents[0];
                e["weights"] = matrix_to_json(n.map.weights);
                e["bias"] = vector_to_json(n.map.bias);
                break;
            case NodeKind::nonlin:
                e["parent"] = n.parents[0];
                e["fn"] = std::string(to_string(n.fn));
                break;
            case NodeKind::reciprocal:
            case NodeKind::opaque: e["parent"] = n.parents[0]; break;
            case NodeKind::product:
            case NodeKind::sum: e["parents"] = n.parents; break;
        }
        nodes.push_back(std::move(e));
    }
    json out{{"nodes", std::move(nodes)}};
    if (g.has_output()) out["output"] = g.output();
    return out;
}

inline CompGraph graph_from_json(const json& j) {
    CompGraph g;
    const auto& nodes = j.at("nodes");
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const auto& e = nodes[i];
        std::string kind = e.at("kind").get<std::string>();
        NodeId id = 0;
        if (kind == "input") {
            id = g.add_input(e.at("dim").get<Eigen::Index>());
        } else if (kind == "constant") {
            id = g.add_constant(vector_from_json(e.at("value")));
        } else if (kind == "affine") {
            NodeId p = e.at("parent").get<NodeId>();
            id = g.add_affine(p, LinearMap(matrix_from_json(e.at("weights"), g.dim(p)), vector_from_json(e.at("bias"))));
        } else if (kind == "nonlin") {
            id = g.add_nonlin(scalar_fn_from_string(e.at("fn").get<std::string>()), e.at("parent").get<NodeId>());
        } else if (kind == "reciprocal") {
            id = g.add_reciprocal(e.at("parent").get<NodeId>());
        } else if (kind == "product") {
            auto ps = e.at("parents").get<std::vector<NodeId>>();
            if (ps.size() != 2) throw GraphError("product node needs exactly two parents");
            id = g.add_product(ps[0], ps[1]);
        } else if (kind == "sum") {
            id = g.add_sum(e.at("parents").get<std::vector<NodeId>>());
        } else if (kind == "opaque") {
            id = g.add_opaque(e.at("parent").get<NodeId>(), e.at("dim").get<Eigen::Index>());
        } else {
            throw GraphError("unknown node kind '" + kind + "'");
        }
        if (id != i) throw GraphError("node ids must be consecutive");
    }
    if (j.contains("output")) g.set_output(j.at("output").get<NodeId>());
    return g;
}

}  // namespace geocert
