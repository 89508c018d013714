// Copyright (c) geocert contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "geocert/envs.hpp"
#include "geocert/policy.hpp"
#include "geocert/rng.hpp"
#include "geocert/tensor_io.hpp"

namespace geocert {

struct DistillConfig {
    std::optional<CompGraph> expert;  // defaults to the environment's expert
    int samples = 1000;
    int validation_samples = 200;
    int epochs = 30;
    int batch_size = 32;
    double learning_rate = 0.01;
    std::uint64_t seed = 0;
    Activation activation = Activation::tanh;

    void validate() const {
        if (samples < 1 || validation_samples < 0 || epochs < 0 || batch_size < 1 || !(learning_rate > 0.0)) {
            throw std::invalid_argument("distill: samples, batch_size and learning_rate must be positive; epochs >= 0");
        }
    }
};

/// Column-per-sample training data. Targets are normalized to the control interval
/// (-1 and 1 at its ends).
struct Dataset {
    Eigen::MatrixXd inputs;
    Eigen::MatrixXd targets;
    [[nodiscard]] Eigen::Index size() const { return inputs.cols(); }
};

struct DistillResult {
    MLPSpec mlp;
    std::vector<double> train_mse;  // after each epoch (entry 0: before training)
    double validation_mse = 0.0;
};

inline std::vector<int> default_arch() { return {64, 64, 64, 64, 64, 64}; }

/// Xavier-uniform initialization.
inline MLPSpec init_mlp(Eigen::Index input_dim, const std::vector<int>& hidden, Eigen::Index output_dim, Activation act,
                        Interval control, std::uint64_t seed) {
    Rng rng(seed);
    MLPSpec m;
    m.control = control;
    Eigen::Index prev = input_dim;
    auto layer = [&](Eigen::Index out, Activation a, double gain) {
        double lim = gain * std::sqrt(6.0 / static_cast<double>(prev + out));
        Eigen::MatrixXd w(out, prev);
        for (Eigen::Index c = 0; c < prev; ++c) {
            for (Eigen::Index r = 0; r < out; ++r) w(r, c) = rng.uniform(-lim, lim);
        }
        m.layers.push_back({LinearMap(std::move(w), Eigen::VectorXd::Zero(out)), a});
        prev = out;
    };
    for (int h : hidden) layer(h, act, 1.0);
    layer(output_dim, Activation::identity, 0.5);
    return m;
}

namespace detail {

inline Eigen::MatrixXd activate(Activation a, const Eigen::MatrixXd& z) {
    switch (a) {
        case Activation::relu: return z.cwiseMax(0.0);
        case Activation::tanh: return z.array().tanh().matrix();
        case Activation::identity: return z;
    }
    return z;
}

inline Eigen::MatrixXd activation_grad(Activation a, const Eigen::MatrixXd& z, const Eigen::MatrixXd& act) {
    switch (a) {
        case Activation::relu: return (z.array() > 0.0).cast<double>().matrix();
        case Activation::tanh: return (1.0 - act.array().square()).matrix();
        case Activation::identity: return Eigen::MatrixXd::Ones(z.rows(), z.cols());
    }
    return z;
}

// Squashed normalized output tanh(z_L) for a batch.
inline Eigen::MatrixXd forward_batch(const MLPSpec& m, const Eigen::MatrixXd& x, std::vector<Eigen::MatrixXd>* zs,
                                     std::vector<Eigen::MatrixXd>* as) {
    Eigen::MatrixXd a = x;
    if (as) as->push_back(a);
    for (const auto& l : m.layers) {
        Eigen::MatrixXd z = l.map.weights * a;
        z.colwise() += l.map.bias;
        a = activate(l.activation, z);
        if (zs) zs->push_back(std::move(z));
        if (as) as->push_back(a);
    }
    return a.array().tanh().matrix();
}

inline double mse(const MLPSpec& m, const Dataset& d) {
    if (d.size() == 0) return 0.0;
    Eigen::MatrixXd y = forward_batch(m, d.inputs, nullptr, nullptr);
    return (y - d.targets).squaredNorm() / static_cast<double>(d.targets.size());
}

}  // namespace detail

/// Minibatch SGD on the mean squared error of the squashed, normalized output.
inline DistillResult train_mlp(MLPSpec m, const Dataset& train, const Dataset& val, const DistillConfig& cfg) {
    cfg.validate();
    m.validate();
    DistillResult res;
    Rng rng(derive_seed(cfg.seed, 1));
    std::vector<Eigen::Index> order(static_cast<std::size_t>(train.size()));
    std::iota(order.begin(), order.end(), 0);
    res.train_mse.push_back(detail::mse(m, train));
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) {
            auto j = static_cast<std::size_t>(rng.next() % i);
            std::swap(order[i - 1], order[j]);
        }
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            auto B = static_cast<Eigen::Index>(end - start);
            Eigen::MatrixXd x(train.inputs.rows(), B), t(train.targets.rows(), B);
            for (Eigen::Index b = 0; b < B; ++b) {
                x.col(b) = train.inputs.col(order[start + static_cast<std::size_t>(b)]);
                t.col(b) = train.targets.col(order[start + static_cast<std::size_t>(b)]);
            }
            std::vector<Eigen::MatrixXd> zs, as;
            Eigen::MatrixXd y = detail::forward_batch(m, x, &zs, &as);
            Eigen::MatrixXd delta = (2.0 / static_cast<double>(B * t.rows())) * (y - t).cwiseProduct((1.0 - y.array().square()).matrix());
            for (std::size_t li = m.layers.size(); li-- > 0;) {
                auto& layer = m.layers[li];
                Eigen::MatrixXd gw = delta * as[li].transpose();
                Eigen::VectorXd gb = delta.rowwise().sum();
                if (li > 0) {
                    Eigen::MatrixXd back = layer.map.weights.transpose() * delta;
                    const auto& prev = m.layers[li - 1];
                    delta = back.cwiseProduct(detail::activation_grad(prev.activation, zs[li - 1], as[li]));
                }
                layer.map.weights -= cfg.learning_rate * gw;
                layer.map.bias -= cfg.learning_rate * gb;
            }
        }
        double loss = detail::mse(m, train);
        if (!std::isfinite(loss)) throw std::runtime_error("distill: loss diverged (non-finite) at epoch " + std::to_string(epoch));
        res.train_mse.push_back(loss);
    }
    res.validation_mse = detail::mse(m, val);
    res.mlp = std::move(m);
    return res;
}

/// Observations and normalized expert actions for states drawn uniformly from `region`.
inline Dataset make_dataset(const EnvConfig& env, const CompGraph& expert, const Box& region, int n, std::uint64_t seed) {
    Rng rng(seed);
    Dataset d{Eigen::MatrixXd(env.observation_dim(), n), Eigen::MatrixXd(env.control_dim, n)};
    for (int i = 0; i < n; ++i) {
        Eigen::VectorXd x = rng.in_box(region);
        d.inputs.col(i) = observe(env, x);
        Eigen::VectorXd u = forward_eval(expert, x);
        d.targets.col(i) = ((u.array() - env.control_interval.center()) / env.control_interval.radius()).cwiseMax(-1.0).cwiseMin(1.0).matrix();
    }
    return d;
}

/// Behavior cloning of the expert from rendered observations. Deterministic given the seed.
inline DistillResult distill(const EnvConfig& env, const DistillConfig& cfg, const std::vector<int>& hidden = default_arch()) {
    cfg.validate();
    const CompGraph& expert = cfg.expert ? *cfg.expert : env.expert;
    if (expert.input_dim() != env.state_dim || expert.output_dim() != env.control_dim) {
        throw std::invalid_argument("distill: expert must map states to controls");
    }
    const Box& region = env.training_region.size() > 0 ? env.training_region : env.init_set;
    Dataset train = make_dataset(env, expert, region, cfg.samples, derive_seed(cfg.seed, 2));
    Dataset val = make_dataset(env, expert, region, cfg.validation_samples, derive_seed(cfg.seed, 3));
    MLPSpec init = init_mlp(env.observation_dim(), hidden, env.control_dim, cfg.activation, env.control_interval, derive_seed(cfg.seed, 4));
    DistillResult res = train_mlp(std::move(init), train, val, cfg);
    Fnv1a h;
    for (const auto& l : res.mlp.layers) {
        h.bytes(l.map.weights.data(), static_cast<std::size_t>(l.map.weights.size()) * sizeof(double));
        h.bytes(l.map.bias.data(), static_cast<std::size_t>(l.map.bias.size()) * sizeof(double));
    }
    res.mlp.metadata = {{"env", env.name},
                        {"image_size", env.image_size()},
                        {"samples", cfg.samples},
                        {"epochs", cfg.epochs},
                        {"learning_rate", cfg.learning_rate},
                        {"batch_size", cfg.batch_size},
                        {"seed", cfg.seed},
                        {"train_mse", res.train_mse.back()},
                        {"validation_mse", res.validation_mse},
                        {"weights_hash", h.hex()}};
    return res;
}

}  // namespace geocert
