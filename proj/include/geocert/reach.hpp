// Copyright (c) geocert contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "geocert/blend.hpp"
#include "geocert/bounds.hpp"
#include "geocert/envs.hpp"
#include "geocert/geo_bounds.hpp"
#include "geocert/parallel.hpp"
#include "geocert/policy.hpp"
#include "geocert/rng.hpp"
#include "geocert/tensor_io.hpp"

namespace geocert {

struct ReachSettings {
    GeoBoundSettings geo;
    std::optional<std::filesystem::path> cache_dir;
};

/// Wall-clock seconds spent in each stage of one step.
struct StepTiming {
    double latent = 0.0;
    double pixel_bounds = 0.0;
    double blend = 0.0;
    double policy = 0.0;
    double dynamics = 0.0;
    [[nodiscard]] double observation() const { return latent + pixel_bounds + blend; }
    [[nodiscard]] double total() const { return latent + pixel_bounds + blend + policy + dynamics; }
};

struct StepResult {
    Box next;
    Box control;
    StepTiming timing;
};

struct ReachResult {
    std::string env;
    int image_size = 0;
    std::vector<Box> boxes;          // t = 0..T
    std::vector<Box> control_boxes;  // t = 0..T-1
    std::vector<StepTiming> timings;
    bool complete = true;
    std::string stop_reason;
    int horizon = 0;
    GeoBoundSettings settings;
};

namespace detail {

class Stopwatch {
  public:
    double lap() {
        auto now = std::chrono::steady_clock::now();
        double s = std::chrono::duration<double>(now - last_).count();
        last_ = now;
        return s;
    }

  private:
    std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

// Intersection of two sound enclosures of the same set. A crossing can only come from
// rounding, in which case the crossed pair is returned in order.
inline Box meet(const Box& a, const Box& b) {
    std::vector<Interval> d;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double lo = std::max(a[i].lo, b[i].lo), hi = std::min(a[i].hi, b[i].hi);
        d.emplace_back(std::min(lo, hi), std::max(lo, hi));
    }
    return Box(std::move(d));
}

}  // namespace detail

/// Bounds on the auxiliary observation rows (selected state components) over the joint
/// domain (kappa, x); x occupies the columns from `x_offset`.
inline LinearBounds aux_bounds(const EnvConfig& env, const Box& joint, Eigen::Index x_offset) {
    auto n = static_cast<Eigen::Index>(env.aux_indices.size());
    LinearMap m = LinearMap::zero(n, static_cast<Eigen::Index>(joint.size()));
    for (Eigen::Index i = 0; i < n; ++i) m.weights(i, x_offset + env.aux_indices[static_cast<std::size_t>(i)]) = 1.0;
    return LinearBounds::exact(m, joint);
}

/// One step of the pipeline: latent parameter range, per-entity pixel bounds, blended
/// observation bounds, control bounds and the dynamics.
inline StepResult reach_step(const EnvConfig& env, const MLPSpec& mlp, const Box& X, const ReachSettings& settings,
                             PixelBoundCache* cache = nullptr) {
    if (mlp.input_dim() != env.observation_dim()) {
        throw BoundsError("controller input dimension " + std::to_string(mlp.input_dim()) + " != observation dimension " +
                          std::to_string(env.observation_dim()));
    }
    StepResult out;
    detail::Stopwatch sw;

    LatentRange lr = latent_range(env, X);
    out.timing.latent = sw.lap();

    std::vector<PixelBoundSet> pbs;
    std::size_t off = 0;
    for (const auto& e : env.scene.entities) {
        auto d = static_cast<std::size_t>(e.transform.param_dim());
        Box Ki = lr.K.slice(off, d);
        off += d;
        pbs.push_back(cache ? cache->get_or_compute(e.sprite, e.transform, Ki, settings.geo)
                            : pixel_bounds(e.sprite, e.transform, Ki, settings.geo));
    }
    out.timing.pixel_bounds = sw.lap();

    ObservationBounds ob = blend_bounds(env.scene, pbs);
    out.timing.blend = sw.lap();

    // Joint domain (kappa, x): image rows depend on kappa, aux rows on x.
    const auto D = static_cast<Eigen::Index>(lr.K.size());
    Box joint = concat(lr.K, X);
    LinearBounds obs_in = stack_rows(lift(ob.bounds, joint, 0), aux_bounds(env, joint, D));
    PolicyBounds pol = policy_bounds(mlp, obs_in);
    // Replace kappa by its bounds in x to obtain control bounds affine in the state.
    LinearBounds inner = stack_rows(lr.mu_bounds,
                                    LinearBounds::exact(LinearMap(Eigen::MatrixXd::Identity(env.state_dim, env.state_dim),
                                                                  Eigen::VectorXd::Zero(env.state_dim)),
                                                        X));
    LinearBounds u_x = substitute(pol.u_bounds, inner);
    out.control = detail::meet(detail::meet(concretize(u_x), pol.U), Box{env.control_interval});
    out.timing.policy = sw.lap();

    Box plain = step_bounds(env, X, out.control);
    Box linked = step_bounds_linked(env, X, u_x);
    out.next = detail::meet(plain, linked);
    out.timing.dynamics = sw.lap();
    return out;
}

/// Iterates reach_step for T steps. A refinement-needed failure ends the run early with
/// complete = false.
inline ReachResult reach_horizon(const EnvConfig& env, const MLPSpec& mlp, const Box& X0, int T, const ReachSettings& settings) {
    if (T < 0) throw std::invalid_argument("reach_horizon: T must be >= 0");
    if (static_cast<int>(X0.size()) != env.state_dim) throw BoundsError("reach_horizon: initial box dimension mismatch");
    ReachResult r;
    r.env = env.name;
    r.image_size = env.image_size();
    r.horizon = T;
    r.settings = settings.geo;
    r.boxes.push_back(X0);
    std::optional<PixelBoundCache> cache;
    if (settings.cache_dir) cache.emplace(*settings.cache_dir);
    for (int t = 0; t < T; ++t) {
        try {
            StepResult s = reach_step(env, mlp, r.boxes.back(), settings, cache ? &*cache : nullptr);
            r.boxes.push_back(std::move(s.next));
            r.control_boxes.push_back(std::move(s.control));
            r.timings.push_back(s.timing);
        } catch (const RefinementNeeded& e) {
            r.complete = false;
            r.stop_reason = "step " + std::to_string(t) + ": " + e.what();
            break;
        }
    }
    return r;
}

/// Exact closed-loop trajectory x_0..x_T.
inline std::vector<Eigen::VectorXd> simulate(const EnvConfig& env, const MLPSpec& mlp, const Eigen::VectorXd& x0, int T) {
    std::vector<Eigen::VectorXd> traj{x0};
    for (int t = 0; t < T; ++t) {
        Eigen::VectorXd u = policy_eval(mlp, observe(env, traj.back()));
        traj.push_back(step_exact(env, traj.back(), u));
    }
    return traj;
}

/// Initial state of trajectory `i` for a given base seed.
inline Eigen::VectorXd sample_initial_state(const Box& X0, std::uint64_t seed, std::size_t i) {
    Rng rng(derive_seed(seed, i));
    return rng.in_box(X0);
}

inline std::vector<std::vector<Eigen::VectorXd>> sample_trajectories(const EnvConfig& env, const MLPSpec& mlp, const Box& X0,
                                                                     int T, int N, std::uint64_t seed) {
    std::vector<std::vector<Eigen::VectorXd>> out(static_cast<std::size_t>(std::max(N, 0)));
    parallel_for(out.size(), [&](std::size_t i) { out[i] = simulate(env, mlp, sample_initial_state(X0, seed, i), T); });
    return out;
}

struct SlacknessRow {
    int t = 0;
    double upper_slack = 0.0;
    double lower_slack = 0.0;
    int n_samples = 0;
};

/// Per step: sum over dimensions of the smallest distance from the samples to the upper
/// (lower) box face.
inline std::vector<SlacknessRow> slackness(const ReachResult& result, const std::vector<std::vector<Eigen::VectorXd>>& trajectories) {
    if (trajectories.empty()) throw std::invalid_argument("slackness: no trajectories");
    std::vector<SlacknessRow> rows;
    for (std::size_t t = 0; t < result.boxes.size(); ++t) {
        const Box& b = result.boxes[t];
        SlacknessRow row{static_cast<int>(t), 0.0, 0.0, 0};
        std::vector<double> up(b.size(), std::numeric_limits<double>::infinity()), lo = up;
        for (const auto& traj : trajectories) {
            if (t >= traj.size()) continue;
            ++row.n_samples;
            for (std::size_t k = 0; k < b.size(); ++k) {
                double x = traj[t][static_cast<Eigen::Index>(k)];
                up[k] = std::min(up[k], b[k].hi - x);
                lo[k] = std::min(lo[k], x - b[k].lo);
            }
        }
        if (row.n_samples == 0) break;
        for (std::size_t k = 0; k < b.size(); ++k) {
            row.upper_slack += up[k];
            row.lower_slack += lo[k];
        }
        rows.push_back(row);
    }
    return rows;
}

struct ViolationReport {
    int n_trajectories = 0;
    int horizon = 0;
    std::vector<int> violations_per_step;  // t = 0..T
    std::vector<double> worst_margin;      // largest distance outside the box per step (0 if none)
    std::vector<std::uint64_t> violating_trajectories;
    std::uint64_t seed = 0;

    [[nodiscard]] int total() const {
        int s = 0;
        for (int v : violations_per_step) s += v;
        return s;
    }
};

/// Simulates N exact closed-loop trajectories from X0 (boxes[0] of `result` is checked like
/// every other step) and counts states outside the boxes by more than kSoundnessSlack.
inline ViolationReport soundness_check(const EnvConfig& env, const MLPSpec& mlp, const ReachResult& result, const Box& X0,
                                       int N, std::uint64_t seed) {
    ViolationReport rep;
    rep.n_trajectories = std::max(N, 0);
    rep.seed = seed;
    const int T = static_cast<int>(result.boxes.size()) - 1;
    rep.horizon = T;
    if (N <= 0) return rep;
    rep.violations_per_step.assign(result.boxes.size(), 0);
    rep.worst_margin.assign(result.boxes.size(), 0.0);
    auto trajs = sample_trajectories(env, mlp, X0, T, N, seed);
    for (std::size_t i = 0; i < trajs.size(); ++i) {
        bool bad = false;
        for (std::size_t t = 0; t < result.boxes.size(); ++t) {
            const Box& b = result.boxes[t];
            double margin = 0.0;
            for (std::size_t k = 0; k < b.size(); ++k) {
                double x = trajs[i][t][static_cast<Eigen::Index>(k)];
                margin = std::max({margin, b[k].lo - x, x - b[k].hi});
            }
            if (margin > kSoundnessSlack) {
                ++rep.violations_per_step[t];
                rep.worst_margin[t] = std::max(rep.worst_margin[t], margin);
                bad = true;
            }
        }
        if (bad) rep.violating_trajectories.push_back(i);
    }
    return rep;
}

/// Every box scaled by `factor` about its center (fault injection for the checker).
inline ReachResult scale_boxes(ReachResult r, double factor) {
    for (auto& b : r.boxes) {
        std::vector<Interval> d;
        for (const auto& iv : b) d.emplace_back(iv.center() - factor * iv.radius(), iv.center() + factor * iv.radius());
        b = Box(std::move(d));
    }
    return r;
}

// ---------------------------------------------------------------------------------------

inline json geo_settings_to_json(const GeoBoundSettings& s) {
    return {{"fit_samples", s.fit_samples},
            {"cells_per_dim", s.cells_per_dim},
            {"max_refine_depth", s.max_refine_depth},
            {"violation_tol", s.violation_tol},
            {"refine_budget", s.refine_budget}};
}

inline GeoBoundSettings geo_settings_from_json(const json& j) {
    GeoBoundSettings s;
    s.fit_samples = j.value("fit_samples", s.fit_samples);
    s.cells_per_dim = j.value("cells_per_dim", s.cells_per_dim);
    s.max_refine_depth = j.value("max_refine_depth", s.max_refine_depth);
    s.violation_tol = j.value("violation_tol", s.violation_tol);
    s.refine_budget = j.value("refine_budget", s.refine_budget);
    s.validate();
    return s;
}

inline json timing_to_json(const StepTiming& t) {
    return {{"latent", t.latent}, {"pixel_bounds", t.pixel_bounds}, {"blend", t.blend}, {"policy", t.policy}, {"dynamics", t.dynamics}};
}

inline StepTiming timing_from_json(const json& j) {
    return {j.at("latent").get<double>(), j.at("pixel_bounds").get<double>(), j.at("blend").get<double>(),
            j.at("policy").get<double>(), j.at("dynamics").get<double>()};
}

inline json reach_result_to_json(const ReachResult& r) {
    json boxes = json::array(), controls = json::array(), timings = json::array();
    for (const auto& b : r.boxes) boxes.push_back(box_to_json(b));
    for (const auto& b : r.control_boxes) controls.push_back(box_to_json(b));
    for (const auto& t : r.timings) timings.push_back(timing_to_json(t));
    return {{"env", r.env},
            {"image_size", r.image_size},
            {"horizon", r.horizon},
            {"complete", r.complete},
            {"stop_reason", r.stop_reason},
            {"boxes", boxes},
            {"control_boxes", controls},
            {"per_step_runtime", timings},
            {"settings", geo_settings_to_json(r.settings)}};
}

inline ReachResult reach_result_from_json(const json& j) {
    ReachResult r;
    r.env = j.at("env").get<std::string>();
    r.image_size = j.at("image_size").get<int>();
    r.horizon = j.at("horizon").get<int>();
    r.complete = j.at("complete").get<bool>();
    r.stop_reason = j.value("stop_reason", "");
    for (const auto& b : j.at("boxes")) r.boxes.push_back(box_from_json(b));
    for (const auto& b : j.at("control_boxes")) r.control_boxes.push_back(box_from_json(b));
    for (const auto& t : j.at("per_step_runtime")) r.timings.push_back(timing_from_json(t));
    r.settings = geo_settings_from_json(j.at("settings"));
    if (r.boxes.empty()) throw std::invalid_argument("reach result without boxes");
    if (r.control_boxes.size() + 1 != r.boxes.size() || r.timings.size() != r.control_boxes.size()) {
        throw std::invalid_argument("reach result: inconsistent list lengths");
    }
    return r;
}

inline json violations_to_json(const ViolationReport& v) {
    return {{"n_trajectories", v.n_trajectories},
            {"horizon", v.horizon},
            {"seed", v.seed},
            {"total_violations", v.total()},
            {"violations_per_step", v.violations_per_step},
            {"worst_margin", v.worst_margin},
            {"violating_trajectories", v.violating_trajectories}};
}

inline std::string slack_csv(const std::vector<SlacknessRow>& rows) {
    std::ostringstream os;
    os.precision(17);
    os << "t,upper_slack,lower_slack,n_samples\n";
    for (const auto& r : rows) os << r.t << ',' << r.upper_slack << ',' << r.lower_slack << ',' << r.n_samples << '\n';
    return os.str();
}

inline std::string runtime_csv(const ReachResult& r) {
    std::ostringstream os;
    os.precision(6);
    os << "t,latent_s,pixel_bounds_s,blend_s,policy_s,dynamics_s,observation_s,total_s\n";
    for (std::size_t t = 0; t < r.timings.size(); ++t) {
        const auto& s = r.timings[t];
        os << t << ',' << s.latent << ',' << s.pixel_bounds << ',' << s.blend << ',' << s.policy << ',' << s.dynamics << ','
           << s.observation() << ',' << s.total() << '\n';
    }
    return os.str();
}

}  // namespace geocert
