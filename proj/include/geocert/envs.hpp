// Copyright (c) geocert contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "geocert/bounds.hpp"
#include "geocert/crown.hpp"
#include "geocert/graph.hpp"
#include "geocert/graph_json.hpp"
#include "geocert/scene.hpp"
#include "geocert/tensor_io.hpp"

namespace geocert {

using Constants = std::map<std::string, double>;

struct DynamicsSpec {
    CompGraph graph;  // input (x, u), output x'
    double dt = 0.0;
    Constants constants;
};

struct EnvConfig {
    std::string name;
    int state_dim = 0;
    int control_dim = 1;
    std::vector<std::string> state_names;
    DynamicsSpec dynamics;
    SceneConfig scene;
    Box init_set;
    Box training_region;
    Interval control_interval;
    std::vector<int> aux_indices;  // state components appended to the observation
    CompGraph expert;              // state -> action, used for distillation

    [[nodiscard]] int image_size() const { return scene.height(); }
    [[nodiscard]] Eigen::Index pixel_count() const {
        return static_cast<Eigen::Index>(scene.height()) * scene.width() * kColorChannels;
    }
    [[nodiscard]] Eigen::Index observation_dim() const {
        return pixel_count() + static_cast<Eigen::Index>(aux_indices.size());
    }
};

inline const std::vector<std::string>& env_names() {
    static const std::vector<std::string> names{"pendulum", "cartpole", "acrobot"};
    return names;
}

namespace detail {

inline double constant_or(const Constants& c, const std::string& key, double fallback) {
    auto it = c.find(key);
    return it == c.end() ? fallback : it->second;
}

inline double deg(double d) { return d * std::numbers::pi / 180.0; }

// Soft-edged primitives; pixel centres sit on integer coordinates.
inline void paint(Sprite& s, int l, int k, double coverage, const std::array<double, 3>& rgb) {
    if (coverage <= 0.0) return;
    coverage = std::min(coverage, 1.0);
    double a0 = s.alpha.at(l, k);
    double a = a0 + coverage * (1.0 - a0);
    for (int c = 0; c < kColorChannels; ++c) {
        double prev = s.canvas.at(l, k, c);
        double v = a > 0.0 ? (prev * a0 * (1.0 - coverage) + rgb[static_cast<std::size_t>(c)] * coverage) / a : 0.0;
        s.canvas.at(l, k, c) = std::clamp(v, 0.0, 1.0);
    }
    s.alpha.at(l, k) = a;
}

inline void draw_capsule(Sprite& s, Point2 p0, Point2 p1, double radius, const std::array<double, 3>& rgb) {
    double vr = p1.row - p0.row, vc = p1.col - p0.col;
    double len2 = vr * vr + vc * vc;
    for (int l = 0; l < s.height(); ++l) {
        for (int k = 0; k < s.width(); ++k) {
            double t = len2 > 0.0 ? std::clamp(((l - p0.row) * vr + (k - p0.col) * vc) / len2, 0.0, 1.0) : 0.0;
            double dist = std::hypot(l - (p0.row + t * vr), k - (p0.col + t * vc));
            paint(s, l, k, radius + 0.5 - dist, rgb);
        }
    }
}

inline void draw_rect(Sprite& s, Point2 top_left, Point2 bottom_right, const std::array<double, 3>& rgb) {
    for (int l = 0; l < s.height(); ++l) {
        for (int k = 0; k < s.width(); ++k) {
            double cr = std::clamp(std::min(l - top_left.row, bottom_right.row - l) + 0.5, 0.0, 1.0);
            double cc = std::clamp(std::min(k - top_left.col, bottom_right.col - k) + 0.5, 0.0, 1.0);
            paint(s, l, k, cr * cc, rgb);
        }
    }
}

inline Sprite blank_sprite(int size) { return {Image(size, size, kColorChannels), Image(size, size, 1), 0.0, 0.0}; }

inline Image background(int size, const std::array<double, 3>& rgb) {
    Image img(size, size, kColorChannels);
    for (int l = 0; l < size; ++l) {
        for (int k = 0; k < size; ++k) {
            for (int c = 0; c < kColorChannels; ++c) img.at(l, k, c) = rgb[static_cast<std::size_t>(c)];
        }
    }
    return img;
}

// Graph x -> rows of `w` applied to x plus `b`.
inline CompGraph affine_map_graph(int state_dim, const Eigen::MatrixXd& w, const Eigen::VectorXd& b) {
    CompGraph g(state_dim);
    g.set_output(g.add_affine(0, LinearMap(w, b)));
    return g;
}

inline Eigen::MatrixXd selector(int state_dim, std::initializer_list<std::pair<int, double>> picks) {
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(picks.size()), state_dim);
    Eigen::Index r = 0;
    for (auto [col, scale] : picks) w(r++, col) = scale;
    return w;
}

inline Scalar state_component(CompGraph& g, int i) { return Scalar::component(g, 0, i); }

}  // namespace detail

// ---------------------------------------------------------------------------------------
// Pendulum: state (theta, omega), theta = 0 upright.

inline EnvConfig make_pendulum(int size = 25, const Constants& overrides = {}) {
    using namespace detail;
    Constants c{{"g", 10.0}, {"m", 1.0}, {"l", 1.0}, {"max_torque", 2.0}};
    for (const auto& [k, v] : overrides) c[k] = v;
    double dt = constant_or(overrides, "dt", 0.05);
    c.erase("dt");
    const double g = c["g"], m = c["m"], l = c["l"];

    EnvConfig env;
    env.name = "pendulum";
    env.state_dim = 2;
    env.state_names = {"theta", "omega"};
    env.control_interval = {-c["max_torque"], c["max_torque"]};

    CompGraph dyn(3);
    Scalar th = state_component(dyn, 0), om = state_component(dyn, 1), u = state_component(dyn, 2);
    Scalar om_next = om + dt * (3.0 * g / (2.0 * l) * sin(th) + 3.0 / (m * l * l) * u);
    Scalar th_next = th + dt * om_next;
    std::vector<Scalar> outs{th_next, om_next};
    dyn.set_output(stack(dyn, outs));
    env.dynamics = {std::move(dyn), dt, c};

    const double center = (size - 1) / 2.0;
    Sprite rod = blank_sprite(size);
    draw_capsule(rod, {center, center}, {center - 0.4 * size, center}, 0.06 * size, {0.85, 0.35, 0.3});
    TransformSpec rot{TransformKind::rotation, center, center, std::nullopt};
    env.scene.background = background(size, {0.08, 0.08, 0.1});
    env.scene.entities.push_back({"rod", std::move(rod), rot, affine_map_graph(2, selector(2, {{0, 1.0}}), Eigen::VectorXd::Zero(1))});

    env.init_set = Box{{deg(40.0), deg(45.0)}, {-0.05, 0.05}};
    env.training_region = Box{{deg(20.0), deg(70.0)}, {-2.0, 2.0}};
    env.aux_indices = {1};

    CompGraph expert(2);
    Scalar t0 = state_component(expert, 0), w0 = state_component(expert, 1);
    expert.set_output((2.0 * tanh(-(2.0 * t0 + 0.5 * w0))).id());
    env.expert = std::move(expert);
    return env;
}

// ---------------------------------------------------------------------------------------
// CartPole: state (x, x_dot, theta, theta_dot), continuous force.

inline EnvConfig make_cartpole(int size = 25, const Constants& overrides = {}) {
    using namespace detail;
    Constants c{{"g", 9.8}, {"m_cart", 1.0}, {"m_pole", 0.1}, {"half_length", 0.5}, {"max_force", 10.0}, {"track_half_width", 2.4}};
    for (const auto& [k, v] : overrides) c[k] = v;
    double dt = constant_or(overrides, "dt", 0.02);
    c.erase("dt");
    const double g = c["g"], mp = c["m_pole"], l = c["half_length"];
    const double M = c["m_cart"] + mp, pml = mp * l;

    EnvConfig env;
    env.name = "cartpole";
    env.state_dim = 4;
    env.state_names = {"x", "x_dot", "theta", "theta_dot"};
    env.control_interval = {-c["max_force"], c["max_force"]};

    CompGraph dyn(5);
    Scalar x = state_component(dyn, 0), xd = state_component(dyn, 1), th = state_component(dyn, 2);
    Scalar thd = state_component(dyn, 3), u = state_component(dyn, 4);
    Scalar s = sin(th), co = cos(th);
    Scalar temp = (u + pml * (square(thd) * s)) * (1.0 / M);
    Scalar den = (l * (4.0 / 3.0)) - (l * mp / M) * square(co);
    Scalar thacc = (g * s - co * temp) * reciprocal(den);
    Scalar xacc = temp - (pml / M) * (thacc * co);
    std::vector<Scalar> outs{x + dt * xd, xd + dt * xacc, th + dt * thd, thd + dt * thacc};
    dyn.set_output(stack(dyn, outs));
    env.dynamics = {std::move(dyn), dt, c};

    const double center = (size - 1) / 2.0;
    const double scale = size / (2.0 * c["track_half_width"]);
    const double cart_row = 0.62 * size;
    Sprite cart = blank_sprite(size);
    draw_rect(cart, {cart_row - 0.05 * size, center - 0.1 * size}, {cart_row + 0.05 * size, center + 0.1 * size}, {0.3, 0.5, 0.85});
    Sprite pole = blank_sprite(size);
    const double pivot_row = cart_row - 0.05 * size;
    draw_capsule(pole, {pivot_row, center}, {pivot_row - 0.4 * size, center}, 0.035 * size, {0.9, 0.75, 0.35});

    env.scene.background = background(size, {0.08, 0.08, 0.1});
    env.scene.entities.push_back({"cart", std::move(cart), TransformSpec{TransformKind::translation, 0.0, 0.0, std::nullopt},
                                  affine_map_graph(4, selector(4, {{0, 0.0}, {0, scale}}), Eigen::VectorXd::Zero(2))});
    env.scene.entities.push_back({"pole", std::move(pole),
                                  TransformSpec{TransformKind::rotation_then_translation, pivot_row, center, std::nullopt},
                                  affine_map_graph(4, selector(4, {{0, 0.0}, {0, scale}, {2, -1.0}}), Eigen::VectorXd::Zero(3))});

    env.init_set = Box{{-0.05, 0.05}, {-0.05, 0.05}, {-0.05, 0.05}, {-0.05, 0.05}};
    env.training_region = Box{{-0.5, 0.5}, {-0.5, 0.5}, {-0.2, 0.2}, {-0.5, 0.5}};
    env.aux_indices = {1, 3};

    CompGraph expert(4);
    Eigen::MatrixXd k(1, 4);
    k << 1.0, 1.5, 18.0, 3.0;
    Scalar lin{expert, expert.add_affine(0, LinearMap(k / c["max_force"], Eigen::VectorXd::Zero(1)))};
    expert.set_output((c["max_force"] * tanh(lin)).id());
    env.expert = std::move(expert);
    return env;
}

// ---------------------------------------------------------------------------------------
// Acrobot: state (theta1, theta2, omega1, omega2), theta = 0 hanging down, torque on joint 2.

inline EnvConfig make_acrobot(int size = 25, const Constants& overrides = {}) {
    using namespace detail;
    Constants c{{"g", 9.8}, {"m1", 1.0}, {"m2", 1.0}, {"l1", 1.0}, {"lc1", 0.5}, {"lc2", 0.5},
                {"I1", 1.0}, {"I2", 1.0}, {"max_torque", 1.0}};
    for (const auto& [k, v] : overrides) c[k] = v;
    double dt = constant_or(overrides, "dt", 0.2);
    c.erase("dt");
    const double g = c["g"], m1 = c["m1"], m2 = c["m2"], l1 = c["l1"], lc1 = c["lc1"], lc2 = c["lc2"];
    const double I1 = c["I1"], I2 = c["I2"];

    EnvConfig env;
    env.name = "acrobot";
    env.state_dim = 4;
    env.state_names = {"theta1", "theta2", "omega1", "omega2"};
    env.control_interval = {-c["max_torque"], c["max_torque"]};

    // d1 = a1 + b1 cos(theta2), d2 = a2 + b2 cos(theta2). Multiplying the book update for
    // theta2'' through by d1 gives the denominator a2 * d1 - d2^2, a quadratic in cos(theta2).
    const double a1 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2) + I1 + I2, b1 = 2.0 * m2 * l1 * lc2;
    const double a2 = m2 * lc2 * lc2 + I2, b2 = m2 * l1 * lc2;

    CompGraph dyn(5);
    Scalar t1 = state_component(dyn, 0), t2 = state_component(dyn, 1), w1 = state_component(dyn, 2);
    Scalar w2 = state_component(dyn, 3), u = state_component(dyn, 4);
    Scalar c2 = cos(t2), s2 = sin(t2);
    Scalar d1 = b1 * c2 + a1;
    Scalar d2 = b2 * c2 + a2;
    Scalar phi2 = (m2 * lc2 * g) * sin(t1 + t2);
    Scalar phi1 = (-m2 * l1 * lc2) * (square(w2) * s2) + (-2.0 * m2 * l1 * lc2) * ((w2 * w1) * s2) +
                  ((m1 * lc1 + m2 * l1) * g) * sin(t1) + phi2;
    Scalar den = (a2 * (a1 - a2)) + ((a2 * b1 - 2.0 * a2 * b2) * c2) + (-b2 * b2) * square(c2);
    Scalar num = d1 * (u - (m2 * l1 * lc2) * (square(w1) * s2) - phi2) + d2 * phi1;
    Scalar acc2 = num * reciprocal(den);
    Scalar acc1 = -((d2 * acc2 + phi1) * reciprocal(d1));
    std::vector<Scalar> outs{t1 + dt * w1, t2 + dt * w2, w1 + dt * acc1, w2 + dt * acc2};
    dyn.set_output(stack(dyn, outs));
    env.dynamics = {std::move(dyn), dt, c};

    const double center = (size - 1) / 2.0;
    const double r = 0.22 * size;
    Sprite arm1 = blank_sprite(size);
    draw_capsule(arm1, {center, center}, {center + r, center}, 0.05 * size, {0.35, 0.75, 0.45});
    Sprite arm2 = blank_sprite(size);
    draw_capsule(arm2, {center, center}, {center + r, center}, 0.05 * size, {0.8, 0.4, 0.8});

    env.scene.background = background(size, {0.08, 0.08, 0.1});
    env.scene.entities.push_back({"arm1", std::move(arm1), TransformSpec{TransformKind::rotation, center, center, std::nullopt},
                                  affine_map_graph(4, selector(4, {{0, 1.0}}), Eigen::VectorXd::Zero(1))});
    CompGraph mu2(4);
    {
        Scalar th1 = state_component(mu2, 0), th2 = state_component(mu2, 1);
        std::vector<Scalar> parts{r * cos(th1), r * sin(th1), th2 + 0.0};
        mu2.set_output(stack(mu2, parts));
    }
    env.scene.entities.push_back({"arm2", std::move(arm2),
                                  TransformSpec{TransformKind::rotation_then_translation, center, center, std::nullopt},
                                  std::move(mu2)});

    env.init_set = Box{{deg(45.0), deg(50.0)}, {deg(10.0), deg(13.0)}, {-0.05, 0.05}, {-0.05, 0.05}};
    env.training_region = Box{{deg(20.0), deg(75.0)}, {deg(-15.0), deg(35.0)}, {-1.0, 1.0}, {-1.5, 1.5}};
    env.aux_indices = {2, 3};

    CompGraph expert(4);
    Eigen::MatrixXd k(1, 4);
    k << -2.0, -1.0, -1.0, -0.5;
    Scalar lin{expert, expert.add_affine(0, LinearMap(k, Eigen::VectorXd::Zero(1)))};
    expert.set_output((c["max_torque"] * tanh(lin)).id());
    env.expert = std::move(expert);
    return env;
}

inline EnvConfig make_env(const std::string& name, int size = 25, const Constants& overrides = {}) {
    if (name == "pendulum") return make_pendulum(size, overrides);
    if (name == "cartpole") return make_cartpole(size, overrides);
    if (name == "acrobot") return make_acrobot(size, overrides);
    throw std::invalid_argument("unknown environment '" + name + "'");
}

// ---------------------------------------------------------------------------------------

/// Exact explicit-Euler step written out by hand (independent of the dynamics graph).
/// The control is clamped into the environment's control interval.
inline Eigen::VectorXd step_exact(const EnvConfig& env, const Eigen::VectorXd& x, const Eigen::VectorXd& u_in) {
    if (x.size() != env.state_dim || u_in.size() != env.control_dim) throw std::invalid_argument("step_exact: dimension mismatch");
    const Constants& c = env.dynamics.constants;
    const double dt = env.dynamics.dt;
    const double u = std::clamp(u_in[0], env.control_interval.lo, env.control_interval.hi);
    Eigen::VectorXd out(x.size());
    if (env.name == "pendulum") {
        double g = c.at("g"), m = c.at("m"), l = c.at("l");
        double w = x[1] + dt * (3.0 * g / (2.0 * l) * std::sin(x[0]) + 3.0 / (m * l * l) * u);
        out << x[0] + dt * w, w;
    } else if (env.name == "cartpole") {
        double g = c.at("g"), mp = c.at("m_pole"), l = c.at("half_length");
        double total = c.at("m_cart") + mp, pml = mp * l;
        double st = std::sin(x[2]), ct = std::cos(x[2]);
        double temp = (u + pml * x[3] * x[3] * st) / total;
        double thacc = (g * st - ct * temp) / (l * (4.0 / 3.0 - mp * ct * ct / total));
        double xacc = temp - pml * thacc * ct / total;
        out << x[0] + dt * x[1], x[1] + dt * xacc, x[2] + dt * x[3], x[3] + dt * thacc;
    } else if (env.name == "acrobot") {
        double g = c.at("g"), m1 = c.at("m1"), m2 = c.at("m2"), l1 = c.at("l1"), lc1 = c.at("lc1"), lc2 = c.at("lc2");
        double I1 = c.at("I1"), I2 = c.at("I2");
        double t1 = x[0], t2 = x[1], w1 = x[2], w2 = x[3];
        double d1 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2 * l1 * lc2 * std::cos(t2)) + I1 + I2;
        double d2 = m2 * (lc2 * lc2 + l1 * lc2 * std::cos(t2)) + I2;
        double phi2 = m2 * lc2 * g * std::cos(t1 + t2 - std::numbers::pi / 2);
        double phi1 = -m2 * l1 * lc2 * w2 * w2 * std::sin(t2) - 2 * m2 * l1 * lc2 * w2 * w1 * std::sin(t2) +
                      (m1 * lc1 + m2 * l1) * g * std::cos(t1 - std::numbers::pi / 2) + phi2;
        double acc2 = (u + d2 / d1 * phi1 - m2 * l1 * lc2 * w1 * w1 * std::sin(t2) - phi2) /
                      (m2 * lc2 * lc2 + I2 - d2 * d2 / d1);
        double acc1 = -(d2 * acc2 + phi1) / d1;
        out << t1 + dt * w1, t2 + dt * w2, w1 + dt * acc1, w2 + dt * acc2;
    } else {
        throw std::invalid_argument("step_exact: unknown environment '" + env.name + "'");
    }
    return out;
}

inline Eigen::VectorXd step_exact(const EnvConfig& env, const Eigen::VectorXd& x, double u) {
    return step_exact(env, x, Eigen::VectorXd::Constant(1, u));
}

/// Graph x -> concatenated transform parameters of all entities.
inline CompGraph latent_graph(const EnvConfig& env) {
    CompGraph g(env.state_dim);
    std::vector<NodeId> parts;
    for (const auto& e : env.scene.entities) {
        if (e.param_map.input_dim() != env.state_dim) throw GraphError("latent map of '" + e.name + "' has wrong input dimension");
        if (e.param_map.output_dim() != e.transform.param_dim()) {
            throw GraphError("latent map of '" + e.name + "' has wrong output dimension");
        }
        parts.push_back(inline_graph(g, e.param_map, 0));
    }
    if (parts.empty()) {
        g.set_output(g.add_constant(Eigen::VectorXd(0)));
    } else {
        g.set_output(concat_nodes(g, parts));
    }
    return g;
}

inline Eigen::VectorXd latent_params(const EnvConfig& env, const Eigen::VectorXd& x) {
    return forward_eval(latent_graph(env), x);
}

struct LatentRange {
    Box K;
    LinearBounds mu_bounds;  // over X
};

/// Parameter box and affine bounds of the latent maps over X. The box is the
/// concretized CROWN bound intersected with plain interval evaluation.
inline LatentRange latent_range(const EnvConfig& env, const Box& X) {
    if (static_cast<int>(X.size()) != env.state_dim) throw BoundsError("latent_range: state box dimension mismatch");
    CompGraph g = latent_graph(env);
    LinearBounds mu = backward_bounds(g, X);
    Box crown = concretize(mu);
    Box iv = interval_eval(g, X);
    std::vector<Interval> k;
    for (std::size_t i = 0; i < crown.size(); ++i) {
        double pad = kSoundnessSlack * (1.0 + std::abs(iv[i].lo) + std::abs(iv[i].hi));
        Interval padded{iv[i].lo - (iv[i].degenerate() ? 0.0 : pad), iv[i].hi + (iv[i].degenerate() ? 0.0 : pad)};
        double lo = std::max(crown[i].lo, padded.lo), hi = std::min(crown[i].hi, padded.hi);
        k.push_back(lo <= hi ? Interval(lo, hi) : crown[i]);
    }
    return {Box(std::move(k)), std::move(mu)};
}

/// Observation o(x): rendered image (flattened) followed by the auxiliary state components.
inline Eigen::VectorXd observe(const EnvConfig& env, const Eigen::VectorXd& x) {
    Eigen::VectorXd kappa = latent_params(env, x);
    auto mus = split_params(env.scene, kappa);
    Image img = render(env.scene, mus);
    Eigen::VectorXd obs(env.observation_dim());
    obs.head(env.pixel_count()) = img.flatten();
    for (std::size_t i = 0; i < env.aux_indices.size(); ++i) {
        obs[env.pixel_count() + static_cast<Eigen::Index>(i)] = x[env.aux_indices[i]];
    }
    return obs;
}

/// Sound box on f(x, u) over X x U.
inline Box step_bounds(const EnvConfig& env, const Box& X, const Box& U) {
    if (static_cast<int>(X.size()) != env.state_dim || static_cast<int>(U.size()) != env.control_dim) {
        throw BoundsError("step_bounds: dimension mismatch");
    }
    Box XU = concat(X, U);
    Box crown = output_range(env.dynamics.graph, XU);
    Box iv = interval_eval(env.dynamics.graph, XU);
    std::vector<Interval> out;
    for (std::size_t i = 0; i < crown.size(); ++i) {
        double pad = kSoundnessSlack * (1.0 + std::abs(iv[i].lo) + std::abs(iv[i].hi));
        double lo = std::max(crown[i].lo, iv[i].lo - pad), hi = std::min(crown[i].hi, iv[i].hi + pad);
        out.push_back(lo <= hi ? Interval(lo, hi) : crown[i]);
    }
    return Box(std::move(out));
}

/// Sound box on f(x, u(x)) over X, where u(x) is only known through affine bounds over X.
/// The control enters the dynamics graph as an opaque node relaxed by those bounds.
inline Box step_bounds_linked(const EnvConfig& env, const Box& X, const LinearBounds& u_of_x) {
    if (!(u_of_x.domain == X) || u_of_x.rows() != env.control_dim) throw BoundsError("step_bounds_linked: control bounds mismatch");
    CompGraph g(env.state_dim);
    NodeId u = g.add_opaque(0, env.control_dim);
    std::vector<NodeId> parts{0, u};
    NodeId xu = concat_nodes(g, parts);
    g.set_output(inline_graph(g, env.dynamics.graph, xu));
    std::vector<PrecomputedBound> pre{{u, u_of_x}};
    return output_range(g, X, pre);
}

// ---------------------------------------------------------------------------------------
// Manifests: JSON with sprite tensors in little-endian float32 sidecar files.

inline json image_ref(const Image& img, const std::filesystem::path& dir, const std::string& file) {
    write_raw_f32(dir / file, img.data());
    json shape = img.channels() == 1 ? json::array({img.height(), img.width()})
                                     : json::array({img.height(), img.width(), img.channels()});
    return {{"file", file}, {"shape", shape}, {"dtype", "float32"}};
}

inline Image load_image_ref(const json& j, const std::filesystem::path& dir) {
    auto shape = j.at("shape").get<std::vector<int>>();
    if (shape.size() != 2 && shape.size() != 3) throw std::invalid_argument("tensor shape must have 2 or 3 entries");
    if (j.contains("dtype") && j.at("dtype").get<std::string>() != "float32") throw std::invalid_argument("tensor dtype must be float32");
    Image img(shape[0], shape[1], shape.size() == 3 ? shape[2] : 1);
    img.data() = read_raw_f32(dir / j.at("file").get<std::string>(), img.size());
    return img;
}

/// Writes `<dir>/<name>.json` plus sprite tensors.
inline std::filesystem::path export_env_manifest(const EnvConfig& env, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const std::string prefix = env.name + "_" + std::to_string(env.image_size());
    json entities = json::array();
    for (const auto& e : env.scene.entities) {
        json t{{"kind", std::string(to_string(e.transform.kind))}, {"center", {e.transform.center_row, e.transform.center_col}}};
        if (e.transform.intensity) t["intensity"] = {e.transform.intensity->scale, e.transform.intensity->shift};
        entities.push_back({{"name", e.name},
                            {"transform", t},
                            {"canvas", image_ref(e.sprite.canvas, dir, prefix + "_" + e.name + "_canvas.f32")},
                            {"alpha", image_ref(e.sprite.alpha, dir, prefix + "_" + e.name + "_alpha.f32")},
                            {"anchor", {e.sprite.anchor_row, e.sprite.anchor_col}},
                            {"param_map", graph_to_json(e.param_map)}});
    }
    json constants(env.dynamics.constants);
    json m{{"name", env.name},
           {"image_size", env.image_size()},
           {"dt", env.dynamics.dt},
           {"constants", constants},
           {"state_names", env.state_names},
           {"control_interval", {env.control_interval.lo, env.control_interval.hi}},
           {"init_set", box_to_json(env.init_set)},
           {"training_region", box_to_json(env.training_region)},
           {"aux_indices", env.aux_indices},
           {"aux_scaling", "none"},
           {"background", image_ref(env.scene.background, dir, prefix + "_background.f32")},
           {"entities", entities}};
    auto path = dir / (env.name + ".json");
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    os << m.dump(2) << "\n";
    return path;
}

/// Loads a manifest. Dynamics and experts are rebuilt from the name and constants. When
/// `image_size` differs from the manifest's, sprites are regenerated procedurally at the
/// requested size and only the non-visual fields are taken from the manifest.
inline EnvConfig load_env_manifest(const std::filesystem::path& path, int image_size = 0) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read environment manifest " + path.string());
    json m;
    try {
        m = json::parse(is);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(path.string() + ": " + e.what());
    }
    try {
        const auto name = m.at("name").get<std::string>();
        const int stored = m.at("image_size").get<int>();
        const int size = image_size > 0 ? image_size : stored;
        Constants c = m.at("constants").get<Constants>();
        c["dt"] = m.at("dt").get<double>();
        EnvConfig env = make_env(name, size, c);
        auto ci = m.at("control_interval").get<std::vector<double>>();
        if (ci.size() != 2) throw std::invalid_argument("control_interval must be [lo, hi]");
        env.control_interval = Interval(ci[0], ci[1]);
        env.init_set = box_from_json(m.at("init_set"));
        if (m.contains("training_region")) env.training_region = box_from_json(m.at("training_region"));
        env.aux_indices = m.at("aux_indices").get<std::vector<int>>();
        for (int a : env.aux_indices) {
            if (a < 0 || a >= env.state_dim) throw std::invalid_argument("aux index out of range");
        }
        if (static_cast<int>(env.init_set.size()) != env.state_dim) throw std::invalid_argument("init_set has wrong dimension");
        if (size == stored) {
            const auto dir = path.parent_path();
            env.scene.background = load_image_ref(m.at("background"), dir);
            env.scene.entities.clear();
            for (const auto& e : m.at("entities")) {
                Entity ent;
                ent.name = e.at("name").get<std::string>();
                const auto& t = e.at("transform");
                ent.transform.kind = transform_kind_from_string(t.at("kind").get<std::string>());
                auto center = t.at("center").get<std::vector<double>>();
                if (center.size() != 2) throw std::invalid_argument("transform center must be [row, col]");
                ent.transform.center_row = center[0];
                ent.transform.center_col = center[1];
                if (t.contains("intensity")) {
                    auto iv = t.at("intensity").get<std::vector<double>>();
                    ent.transform.intensity = Intensity{iv.at(0), iv.at(1)};
                }
                ent.sprite.canvas = load_image_ref(e.at("canvas"), dir);
                ent.sprite.alpha = load_image_ref(e.at("alpha"), dir);
                auto anchor = e.at("anchor").get<std::vector<double>>();
                ent.sprite.anchor_row = anchor.at(0);
                ent.sprite.anchor_col = anchor.at(1);
                ent.sprite.validate();
                ent.param_map = graph_from_json(e.at("param_map"));
                env.scene.entities.push_back(std::move(ent));
            }
            if (env.scene.background.height() != size || env.scene.background.width() != size) {
                throw std::invalid_argument("background size differs from image_size");
            }
            latent_graph(env);  // shape check
        }
        return env;
    } catch (const json::exception& e) {
        throw std::invalid_argument(path.string() + ": " + e.what());
    }
}

}  // namespace geocert
