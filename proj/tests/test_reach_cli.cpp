// Copyright (c) geocert contributors.
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <gtest/gtest.h>

#include "geocert/cli.hpp"
#include "geocert/envs.hpp"
#include "geocert/reach.hpp"
#include "geocert/rng.hpp"
#include "test_support.hpp"

namespace geocert {
namespace {

namespace fs = std::filesystem;
using testing::small_controller;
using testing::temp_dir;

std::string read_file(const fs::path& p) {
    std::ifstream is(p);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

int count_of(const std::string& s, const std::string& needle) {
    int n = 0;
    for (auto pos = s.find(needle); pos != std::string::npos; pos = s.find(needle, pos + 1)) ++n;
    return n;
}

bool box_contains(const Box& b, const Eigen::VectorXd& x) {
    for (std::size_t k = 0; k < b.size(); ++k) {
        double v = x[static_cast<Eigen::Index>(k)];
        double tol = kSoundnessSlack * (1.0 + std::abs(v));
        if (v < b[k].lo - tol || v > b[k].hi + tol) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------------------
// Reachability

TEST(Reach, ZeroHorizonReturnsInitialBox) {
    EnvConfig env = make_pendulum(10);
    auto r = reach_horizon(env, small_controller(env), env.init_set, 0, {});
    ASSERT_EQ(r.boxes.size(), 1u);
    EXPECT_TRUE(r.boxes[0] == env.init_set);
    EXPECT_TRUE(r.control_boxes.empty());
    EXPECT_TRUE(r.complete);
}

TEST(Reach, DegenerateInitialStateTracksTrajectory) {
    for (const std::string name : {"pendulum", "cartpole", "acrobot"}) {
        EnvConfig env = make_env(name, 10);
        const MLPSpec& m = small_controller(env);
        Eigen::VectorXd x0 = env.init_set.center();
        auto r = reach_horizon(env, m, Box::from_bounds(x0, x0), 3, {});
        auto traj = simulate(env, m, x0, 3);
        ASSERT_TRUE(r.complete) << r.stop_reason;
        for (int t = 0; t <= 3; ++t) {
            const Box& b = r.boxes[static_cast<std::size_t>(t)];
            EXPECT_LE(b.max_width(), 1e-4) << name << " t=" << t;
            EXPECT_TRUE(box_contains(b, traj[static_cast<std::size_t>(t)])) << name << " t=" << t;
            EXPECT_LE((b.center() - traj[static_cast<std::size_t>(t)]).cwiseAbs().maxCoeff(), 1e-4) << name;
        }
    }
}

TEST(Reach, SingleStepContainsSampledSuccessors) {
    for (const std::string name : {"pendulum", "acrobot"}) {
        EnvConfig env = make_env(name, 10);
        const MLPSpec& m = small_controller(env);
        StepResult s = reach_step(env, m, env.init_set, {});
        Rng rng(21);
        int bad_next = 0, bad_u = 0;
        for (int i = 0; i < 1000; ++i) {
            Eigen::VectorXd x = rng.in_box(env.init_set);
            Eigen::VectorXd u = policy_eval(m, observe(env, x));
            bad_u += s.control.contains(u, 1e-9) ? 0 : 1;
            bad_next += box_contains(s.next, step_exact(env, x, u)) ? 0 : 1;
        }
        EXPECT_EQ(bad_u, 0) << name;
        EXPECT_EQ(bad_next, 0) << name;
        EXPECT_TRUE(env.control_interval.contains(s.control[0]));
    }
}

TEST(Reach, ShrinkingStateBoxNeverGrowsSuccessor) {
    EnvConfig env = make_pendulum(10);
    const MLPSpec& m = small_controller(env);
    Box X = env.init_set;
    StepResult outer = reach_step(env, m, X, {});
    int non_monotone = 0;
    Rng rng(22);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<Interval> d;
        for (const auto& iv : X) {
            double a = rng.uniform(iv.lo, iv.hi), b = rng.uniform(iv.lo, iv.hi);
            d.emplace_back(std::min(a, b), std::max(a, b));
        }
        Box Xs(d);
        StepResult inner = reach_step(env, m, Xs, {});
        for (std::size_t k = 0; k < inner.next.size(); ++k) {
            if (inner.next[k].lo < outer.next[k].lo - 1e-9 || inner.next[k].hi > outer.next[k].hi + 1e-9) ++non_monotone;
        }
        for (int i = 0; i < 200; ++i) {
            Eigen::VectorXd x = rng.in_box(Xs);
            ASSERT_TRUE(box_contains(inner.next, step_exact(env, x, policy_eval(m, observe(env, x)))));
        }
    }
    EXPECT_EQ(non_monotone, 0);
}

TEST(Reach, HorizonContainsSampledTrajectories) {
    for (const std::string name : {"pendulum", "cartpole", "acrobot"}) {
        EnvConfig env = make_env(name, 10);
        const MLPSpec& m = small_controller(env);
        auto r = reach_horizon(env, m, env.init_set, 4, {});
        ASSERT_TRUE(r.complete) << r.stop_reason;
        ASSERT_EQ(r.boxes.size(), 5u);
        ASSERT_EQ(r.timings.size(), 4u);
        auto trajs = sample_trajectories(env, m, env.init_set, 4, 200, 5);
        int bad = 0;
        for (const auto& tr : trajs) {
            for (std::size_t t = 0; t < tr.size(); ++t) bad += box_contains(r.boxes[t], tr[t]) ? 0 : 1;
        }
        EXPECT_EQ(bad, 0) << name;
        auto rep = soundness_check(env, m, r, env.init_set, 200, 5);
        EXPECT_EQ(rep.total(), 0) << name;
        for (const auto& t : r.timings) EXPECT_GE(t.total(), 0.0);
    }
}

TEST(Reach, DeterministicBoxes) {
    EnvConfig env = make_acrobot(10);
    const MLPSpec& m = small_controller(env);
    auto a = reach_horizon(env, m, env.init_set, 2, {});
    auto b = reach_horizon(env, m, env.init_set, 2, {});
    ASSERT_EQ(a.boxes.size(), b.boxes.size());
    for (std::size_t t = 0; t < a.boxes.size(); ++t) EXPECT_TRUE(a.boxes[t] == b.boxes[t]);
}

TEST(Reach, CacheGivesSameBoxes) {
    EnvConfig env = make_pendulum(10);
    const MLPSpec& m = small_controller(env);
    ReachSettings rs;
    rs.cache_dir = temp_dir("reach_cache");
    auto a = reach_horizon(env, m, env.init_set, 2, rs);
    auto b = reach_horizon(env, m, env.init_set, 2, rs);
    auto c = reach_horizon(env, m, env.init_set, 2, {});
    for (std::size_t t = 0; t < a.boxes.size(); ++t) {
        EXPECT_TRUE(a.boxes[t] == b.boxes[t]);
        EXPECT_TRUE(a.boxes[t] == c.boxes[t]);
    }
    EXPECT_FALSE(fs::is_empty(*rs.cache_dir));
}

TEST(Reach, RejectsMismatchedInputs) {
    EnvConfig env = make_pendulum(10);
    const MLPSpec& m = small_controller(env);
    EXPECT_THROW(reach_horizon(env, m, Box{{0.0, 1.0}}, 2, {}), BoundsError);
    EXPECT_THROW(reach_horizon(env, m, env.init_set, -1, {}), std::invalid_argument);
    EnvConfig big = make_pendulum(25);
    EXPECT_THROW(reach_step(big, m, big.init_set, {}), BoundsError);
}

// ---------------------------------------------------------------------------------------
// Slackness and the soundness checker

ReachResult one_dim_result(std::vector<Interval> per_step) {
    ReachResult r;
    for (const auto& iv : per_step) r.boxes.push_back(Box{iv});
    return r;
}

std::vector<Eigen::VectorXd> path(std::initializer_list<double> v) {
    std::vector<Eigen::VectorXd> out;
    for (double x : v) out.push_back(Eigen::VectorXd::Constant(1, x));
    return out;
}

TEST(Slackness, WorkedExample) {
    ReachResult r = one_dim_result({{0.0, 2.0}});
    auto rows = slackness(r, {path({0.5}), path({1.0})});
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_DOUBLE_EQ(rows[0].upper_slack, 1.0);
    EXPECT_DOUBLE_EQ(rows[0].lower_slack, 0.5);
    EXPECT_EQ(rows[0].n_samples, 2);

    auto face = slackness(r, {path({2.0}), path({0.0})});
    EXPECT_DOUBLE_EQ(face[0].upper_slack, 0.0);
    EXPECT_DOUBLE_EQ(face[0].lower_slack, 0.0);
    EXPECT_THROW(slackness(r, {}), std::invalid_argument);
}

TEST(Slackness, MatchesBruteForce) {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        const int d = 1 + static_cast<int>(rng.next() % 4), T = static_cast<int>(rng.next() % 4), N = 1 + static_cast<int>(rng.next() % 30);
        ReachResult r;
        for (int t = 0; t <= T; ++t) r.boxes.push_back(testing::random_box(rng, d, -3.0, 3.0, 2.0));
        std::vector<std::vector<Eigen::VectorXd>> trajs(static_cast<std::size_t>(N));
        for (auto& tr : trajs) {
            for (int t = 0; t <= T; ++t) tr.push_back(rng.in_box(r.boxes[static_cast<std::size_t>(t)]));
        }
        auto rows = slackness(r, trajs);
        ASSERT_EQ(rows.size(), static_cast<std::size_t>(T + 1));
        for (int t = 0; t <= T; ++t) {
            double up = 0.0, lo = 0.0;
            for (int k = 0; k < d; ++k) {
                double best_up = std::numeric_limits<double>::infinity(), best_lo = best_up;
                for (const auto& tr : trajs) {
                    const auto& iv = r.boxes[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)];
                    best_up = std::min(best_up, iv.hi - tr[static_cast<std::size_t>(t)][k]);
                    best_lo = std::min(best_lo, tr[static_cast<std::size_t>(t)][k] - iv.lo);
                }
                up += best_up;
                lo += best_lo;
            }
            EXPECT_NEAR(rows[static_cast<std::size_t>(t)].upper_slack, up, 1e-12);
            EXPECT_NEAR(rows[static_cast<std::size_t>(t)].lower_slack, lo, 1e-12);
            EXPECT_GE(rows[static_cast<std::size_t>(t)].upper_slack, 0.0);
        }
    }
}

TEST(SoundnessCheck, NoTrajectoriesGiveEmptyReport) {
    EnvConfig env = make_pendulum(10);
    const MLPSpec& m = small_controller(env);
    auto r = reach_horizon(env, m, env.init_set, 1, {});
    auto rep = soundness_check(env, m, r, env.init_set, 0, 1);
    EXPECT_EQ(rep.total(), 0);
    EXPECT_EQ(rep.n_trajectories, 0);
    EXPECT_TRUE(rep.violating_trajectories.empty());
}

TEST(SoundnessCheck, DetectsShrunkBoxes) {
    EnvConfig env = make_pendulum(10);
    const MLPSpec& m = small_controller(env);
    auto r = reach_horizon(env, m, env.init_set, 3, {});
    EXPECT_EQ(soundness_check(env, m, r, env.init_set, 300, 2).total(), 0);
    auto shrunk = scale_boxes(r, 0.9);
    for (std::size_t t = 0; t < r.boxes.size(); ++t) {
        EXPECT_TRUE(r.boxes[t].contains(shrunk.boxes[t]));
        EXPECT_NEAR(shrunk.boxes[t].max_width(), 0.9 * r.boxes[t].max_width(), 1e-12);
    }
    auto rep = soundness_check(env, m, shrunk, env.init_set, 300, 2);
    EXPECT_GT(rep.total(), 0);
    EXPECT_GT(rep.violations_per_step[0], 0);
    EXPECT_FALSE(rep.violating_trajectories.empty());
    for (std::size_t t = 0; t < rep.worst_margin.size(); ++t) {
        EXPECT_EQ(rep.worst_margin[t] > 0.0, rep.violations_per_step[t] > 0);
    }
}

// ---------------------------------------------------------------------------------------
// Serialization

TEST(ReachJson, RoundTrip) {
    EnvConfig env = make_pendulum(10);
    auto r = reach_horizon(env, small_controller(env), env.init_set, 2, {});
    r.stop_reason = "none";
    ReachResult back = reach_result_from_json(json::parse(reach_result_to_json(r).dump()));
    EXPECT_EQ(back.env, r.env);
    EXPECT_EQ(back.image_size, 10);
    EXPECT_EQ(back.horizon, 2);
    EXPECT_EQ(back.stop_reason, "none");
    EXPECT_TRUE(back.settings == r.settings);
    ASSERT_EQ(back.boxes.size(), r.boxes.size());
    for (std::size_t t = 0; t < r.boxes.size(); ++t) EXPECT_TRUE(back.boxes[t] == r.boxes[t]);
    for (std::size_t t = 0; t < r.control_boxes.size(); ++t) EXPECT_TRUE(back.control_boxes[t] == r.control_boxes[t]);
    EXPECT_DOUBLE_EQ(back.timings[1].total(), r.timings[1].total());

    json bad = reach_result_to_json(r);
    bad["control_boxes"].erase(0);
    EXPECT_THROW(reach_result_from_json(bad), std::invalid_argument);
}

TEST(ReachJson, CsvLayouts) {
    std::vector<SlacknessRow> rows{{0, 1.0, 0.5, 2}, {1, 0.25, 0.0, 2}};
    EXPECT_EQ(slack_csv(rows), "t,upper_slack,lower_slack,n_samples\n0,1,0.5,2\n1,0.25,0,2\n");
    ReachResult r = one_dim_result({{0.0, 1.0}, {0.0, 1.0}});
    r.control_boxes.push_back(Box{{0.0, 0.0}});
    r.timings.push_back({0.5, 1.0, 0.25, 0.125, 0.125});
    std::string csv = runtime_csv(r);
    EXPECT_EQ(count_of(csv, "\n"), 2);
    EXPECT_NE(csv.find("0,0.5,1,0.25,0.125,0.125,1.75,2"), std::string::npos) << csv;
}

// ---------------------------------------------------------------------------------------
// Command line

struct CliRun {
    int code;
    std::string out, err;
};

CliRun run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "geocert");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    int code = run_command(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

// Writes a small pendulum controller for 10x10 images and returns its path.
fs::path pendulum_controller(const fs::path& dir) {
    EnvConfig env = make_pendulum(10);
    auto p = dir / "controller.json";
    save_mlp(small_controller(env), p);
    return p;
}

TEST(Cli, VerifyWritesArtifacts) {
    auto dir = temp_dir("cli_verify");
    auto ctrl = pendulum_controller(dir);
    auto out = dir / "run";
    auto res = run_cli({"verify", "--env", "pendulum", "--image-size", "10", "--controller", ctrl.string(), "-T", "3",
                        "--samples", "20", "--check", "50", "--out", out.string()});
    ASSERT_EQ(res.code, kExitOk) << res.out << res.err;
    for (const char* f : {"run_config.json", "reach.json", "slack.csv", "runtime.csv", "phase.svg", "violations.json"}) {
        EXPECT_TRUE(fs::exists(out / f)) << f;
    }
    json reach = json::parse(read_file(out / "reach.json"));
    EXPECT_EQ(reach.at("boxes").size(), 4u);
    EXPECT_EQ(reach.at("samples").size(), 20u);
    EXPECT_EQ(reach.at("state_names"), json({"theta", "omega"}));
    EXPECT_EQ(json::parse(read_file(out / "violations.json")).at("total_violations"), 0);
    EXPECT_EQ(count_of(read_file(out / "slack.csv"), "\n"), 5);
    EXPECT_EQ(count_of(read_file(out / "runtime.csv"), "\n"), 4);
    // One panel (theta, omega) with T + 1 boxes.
    EXPECT_EQ(count_of(read_file(out / "phase.svg"), "<rect"), 4);
}

TEST(Cli, ZeroHorizonPlotsInitialBoxPerPanel) {
    auto dir = temp_dir("cli_t0");
    EnvConfig env = make_acrobot(10);
    save_mlp(small_controller(env), dir / "c.json");
    auto res = run_cli({"verify", "--env", "acrobot", "--image-size", "10", "--controller", (dir / "c.json").string(), "-T", "0",
                        "--samples", "5", "--out", (dir / "run").string()});
    ASSERT_EQ(res.code, kExitOk) << res.err;
    // Acrobot has two panels, each with the single initial box.
    EXPECT_EQ(count_of(read_file(dir / "run" / "phase.svg"), "<rect"), 2);

    auto plot = run_cli({"plot", "--reach", (dir / "run" / "reach.json").string(), "--out", (dir / "replot").string()});
    ASSERT_EQ(plot.code, kExitOk) << plot.err;
    EXPECT_EQ(count_of(read_file(dir / "replot" / "phase.svg"), "<rect"), 2);
}

TEST(Cli, MissingControllerIsConfigErrorWithoutOutput) {
    auto dir = temp_dir("cli_missing");
    auto out = dir / "run";
    auto res = run_cli({"verify", "--env", "pendulum", "--controller", (dir / "nope.json").string(), "--out", out.string()});
    EXPECT_EQ(res.code, kExitConfig);
    EXPECT_FALSE(fs::exists(out));
    EXPECT_FALSE(res.err.empty());
}

TEST(Cli, ImageSizeMismatchIsConfigError) {
    auto dir = temp_dir("cli_size");
    auto ctrl = pendulum_controller(dir);
    auto res = run_cli({"verify", "--env", "pendulum", "--image-size", "25", "--controller", ctrl.string(), "--out", (dir / "run").string()});
    EXPECT_EQ(res.code, kExitConfig);
    EXPECT_NE(res.err.find("1876"), std::string::npos) << res.err;  // 25 * 25 * 3 + 1 inputs expected
    EXPECT_NE(res.err.find("301"), std::string::npos) << res.err;
    EXPECT_EQ(run_cli({"verify", "--env", "pendulum", "--image-size", "12", "--controller", ctrl.string()}).code, kExitConfig);
    EXPECT_EQ(run_cli({"verify", "--env", "boat", "--controller", ctrl.string()}).code, kExitConfig);
}

TEST(Cli, ConfigFileErrorsAreReported) {
    auto dir = temp_dir("cli_config");
    auto ctrl = pendulum_controller(dir);
    std::ofstream(dir / "bad.json") << "{\n  \"env\": \"pendulum\",,\n}\n";
    auto bad = run_cli({"verify", "--config", (dir / "bad.json").string()});
    EXPECT_EQ(bad.code, kExitConfig);
    EXPECT_NE(bad.err.find("bad.json:2:"), std::string::npos) << bad.err;

    std::ofstream(dir / "type.json") << R"({"env": "pendulum", "timesteps": "five"})";
    auto type = run_cli({"verify", "--config", (dir / "type.json").string()});
    EXPECT_EQ(type.code, kExitConfig);
    EXPECT_NE(type.err.find("timesteps"), std::string::npos) << type.err;

    // Relative paths resolve against the config directory; flags override config values.
    std::ofstream(dir / "good.json") << R"({"env": "pendulum", "image_size": 10, "controller": "controller.json", "timesteps": 7, "samples": 0})";
    auto good = run_cli({"verify", "--config", (dir / "good.json").string(), "-T", "1", "--out", (dir / "run").string()});
    ASSERT_EQ(good.code, kExitOk) << good.err;
    json reach = json::parse(read_file(dir / "run" / "reach.json"));
    EXPECT_EQ(reach.at("boxes").size(), 2u);
    EXPECT_FALSE(fs::exists(dir / "run" / "slack.csv"));
}

TEST(Cli, SoundcheckFlagsShrunkBoxes) {
    auto dir = temp_dir("cli_soundcheck");
    auto ctrl = pendulum_controller(dir);
    auto run = dir / "run";
    ASSERT_EQ(run_cli({"verify", "--env", "pendulum", "--image-size", "10", "--controller", ctrl.string(), "-T", "2", "--samples",
                       "0", "--out", run.string()})
                  .code,
              kExitOk);
    auto reach = (run / "reach.json").string();
    auto ok = run_cli({"soundcheck", "--env", "pendulum", "--controller", ctrl.string(), "--reach", reach, "--check", "100",
                       "--out", (dir / "ok").string()});
    EXPECT_EQ(ok.code, kExitOk) << ok.err;
    auto shrunk = run_cli({"soundcheck", "--env", "pendulum", "--controller", ctrl.string(), "--reach", reach, "--check", "100",
                           "--shrink", "0.9", "--out", (dir / "bad").string()});
    EXPECT_EQ(shrunk.code, kExitViolations);
    json v = json::parse(read_file(dir / "bad" / "violations.json"));
    EXPECT_GT(v.at("total_violations").get<int>(), 0);
}

TEST(Cli, BadArgumentsAreConfigErrors) {
    EXPECT_EQ(run_cli({}).code, kExitConfig);
    EXPECT_EQ(run_cli({"frobnicate"}).code, kExitConfig);
    EXPECT_EQ(run_cli({"verify", "--env", "pendulum", "-T", "abc"}).code, kExitConfig);
    EXPECT_EQ(run_cli({"render", "--env", "pendulum", "--state", "1,2,3"}).code, kExitConfig);
}

TEST(Cli, RenderAndExportAndPixelBounds) {
    auto dir = temp_dir("cli_misc");
    auto r = run_cli({"render", "--env", "cartpole", "--image-size", "10", "--state", "0.1,0,0.05,0", "--out", (dir / "frames").string()});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    EXPECT_TRUE(fs::exists(dir / "frames" / "frame_000.png"));

    auto e = run_cli({"export-env", "--env", "acrobot", "--image-size", "10", "--out", (dir / "assets").string()});
    ASSERT_EQ(e.code, kExitOk) << e.err;
    EnvConfig back = load_env_manifest(dir / "assets" / "acrobot.json");
    EXPECT_EQ(back.image_size(), 10);

    auto p = run_cli({"pixel-bounds", "--env", (dir / "assets" / "acrobot.json").string(), "--out", (dir / "pb").string()});
    ASSERT_EQ(p.code, kExitOk) << p.err;
    EXPECT_TRUE(fs::exists(dir / "pb" / "pixel_bounds.json"));
    EXPECT_TRUE(fs::exists(dir / "pb" / "observation_bounds.png"));
}

TEST(Cli, DistillWritesLoadableController) {
    auto dir = temp_dir("cli_distill");
    auto path = dir / "c.json";
    auto d = run_cli({"distill", "--env", "pendulum", "--image-size", "10", "--samples", "40", "--epochs", "1", "--arch", "8,8",
                      "--out", path.string()});
    ASSERT_EQ(d.code, kExitOk) << d.err;
    MLPSpec m = load_mlp(path);
    EXPECT_EQ(m.input_dim(), 301);
    EXPECT_EQ(m.layers.size(), 3u);
    EXPECT_EQ(run_cli({"distill", "--env", "pendulum", "--arch", "8,x", "--out", path.string()}).code, kExitConfig);
}

TEST(Cli, ToolBinaryExitCodes) {
    auto dir = temp_dir("cli_tool");
    std::string tool = GEOCERT_TOOL;
    auto status = [](const std::string& cmd) {
        int s = std::system((cmd + " > /dev/null 2>&1").c_str());
        return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
    };
    EXPECT_EQ(status(tool + " --help"), 0);
    EXPECT_EQ(status(tool + " verify --env pendulum --controller " + (dir / "none.json").string()), kExitConfig);
    auto ctrl = pendulum_controller(dir);
    EXPECT_EQ(status(tool + " verify --env pendulum --image-size 10 -T 1 --samples 0 --controller " + ctrl.string() + " --out " +
                     (dir / "run").string()),
              kExitOk);
}

}  // namespace
}  // namespace geocert
