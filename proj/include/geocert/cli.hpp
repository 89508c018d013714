// Copyright (c) geocert contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "geocert/distill.hpp"
#include "geocert/envs.hpp"
#include "geocert/png.hpp"
#include "geocert/reach.hpp"
#include "geocert/svg.hpp"
#include "geocert/tensor_io.hpp"

namespace geocert {

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitRefinement = 3, kExitViolations = 4 };

/// Invalid user configuration (exit code 2).
class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

namespace cli {

inline void write_text(const std::filesystem::path& p, const std::string& s) {
    std::ofstream os(p);
    if (!os) throw std::runtime_error("cannot write " + p.string());
    os << s;
}

inline json read_json_file(const std::filesystem::path& p, const std::string& what) {
    std::ifstream is(p);
    if (!is) throw ConfigError(what + " not found: " + p.string());
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        std::size_t line = 1, col = 1;
        for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw ConfigError(p.string() + ":" + std::to_string(line) + ":" + std::to_string(col) + ": malformed JSON (" + e.what() + ")");
    }
}

inline void check_image_size(int s) {
    if (s != 0 && s != 10 && s != 25 && s != 50 && s != 100) {
        throw ConfigError("--image-size must be one of 10, 25, 50, 100 (got " + std::to_string(s) + ")");
    }
}

/// `spec` is a manifest path or a built-in environment name.
inline EnvConfig resolve_env(const std::string& spec, int image_size) {
    check_image_size(image_size);
    if (spec.empty()) throw ConfigError("--env is required");
    std::filesystem::path p(spec);
    if (std::filesystem::exists(p)) {
        try {
            return load_env_manifest(p, image_size);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("environment manifest: ") + e.what());
        } catch (const IoError& e) {
            throw ConfigError(std::string("environment manifest: ") + e.what());
        }
    }
    for (const auto& n : env_names()) {
        if (n == spec) return make_env(spec, image_size > 0 ? image_size : 25);
    }
    throw ConfigError("--env: '" + spec + "' is neither a manifest file nor one of pendulum, cartpole, acrobot");
}

inline MLPSpec resolve_controller(const std::string& path, const EnvConfig& env) {
    if (path.empty()) throw ConfigError("--controller is required");
    if (!std::filesystem::exists(path)) throw ConfigError("controller not found: " + path);
    MLPSpec m;
    try {
        m = mlp_from_json(read_json_file(path, "controller"));
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError("controller " + path + ": " + e.what());
    }
    if (m.input_dim() != env.observation_dim()) {
        throw ConfigError("controller " + path + " expects " + std::to_string(m.input_dim()) + " inputs but " + env.name + " at " +
                          std::to_string(env.image_size()) + "x" + std::to_string(env.image_size()) + " observes " +
                          std::to_string(env.observation_dim()));
    }
    if (m.output_dim() != env.control_dim) throw ConfigError("controller output dimension does not match the environment");
    return m;
}

/// "lo:hi,lo:hi,..." or "v1,v2,..." (points).
inline Box parse_box(const std::string& s, int dim, const std::string& flag) {
    std::vector<Interval> d;
    std::stringstream ss(s);
    std::string item;
    try {
        while (std::getline(ss, item, ',')) {
            auto colon = item.find(':');
            if (colon == std::string::npos) {
                double v = std::stod(item);
                d.emplace_back(v, v);
            } else {
                d.emplace_back(std::stod(item.substr(0, colon)), std::stod(item.substr(colon + 1)));
            }
        }
    } catch (const std::exception& e) {
        throw ConfigError(flag + ": cannot parse '" + s + "' (" + e.what() + ")");
    }
    if (static_cast<int>(d.size()) != dim) {
        throw ConfigError(flag + ": expected " + std::to_string(dim) + " components, got " + std::to_string(d.size()));
    }
    return Box(std::move(d));
}

inline json samples_to_json(const std::vector<std::vector<Eigen::VectorXd>>& trajs) {
    json a = json::array();
    for (const auto& tr : trajs) {
        json t = json::array();
        for (const auto& x : tr) t.push_back(vector_to_json(x));
        a.push_back(std::move(t));
    }
    return a;
}

inline std::vector<std::vector<Eigen::VectorXd>> samples_from_json(const json& j) {
    std::vector<std::vector<Eigen::VectorXd>> out;
    for (const auto& tr : j) {
        out.emplace_back();
        for (const auto& x : tr) out.back().push_back(vector_from_json(x));
    }
    return out;
}

inline void write_plots(const std::filesystem::path& out, const ReachResult& r, const std::vector<std::string>& names,
                        const std::vector<std::vector<Eigen::VectorXd>>& samples) {
    auto panels = default_panels(names);
    std::string title = r.env + " " + std::to_string(r.image_size) + "x" + std::to_string(r.image_size) + ", T=" +
                        std::to_string(r.boxes.size() - 1);
    write_text(out / "phase.svg", phase_plot_svg(r.boxes, samples, panels, title));
}

struct VerifyOptions {
    std::string env;
    std::string controller;
    std::string config;
    std::string x0;
    std::string cache_dir;
    int timesteps = 5;
    int image_size = 0;
    int samples = 100;
    int check = 0;
    int cells = GeoBoundSettings{}.cells_per_dim;
    int fit_samples = GeoBoundSettings{}.fit_samples;
    std::string out = "out";
    std::uint64_t seed = 0;
};

// Fills options the user did not pass on the command line from a JSON run config.
inline void apply_config(VerifyOptions& o, const CLI::App& app) {
    if (o.config.empty()) return;
    json j = read_json_file(o.config, "config");
    if (!j.is_object()) throw ConfigError(o.config + ": top level must be an object");
    auto take = [&](const char* key, const char* flag, auto& field) {
        if (!j.contains(key) || app.count(flag) > 0) return;
        try {
            j.at(key).get_to(field);
        } catch (const json::exception& e) {
            throw ConfigError(o.config + ": field '" + key + "': " + e.what());
        }
    };
    take("env", "--env", o.env);
    take("controller", "--controller", o.controller);
    take("timesteps", "--timesteps", o.timesteps);
    take("image_size", "--image-size", o.image_size);
    take("samples", "--samples", o.samples);
    take("check", "--check", o.check);
    take("cells", "--cells", o.cells);
    take("fit_samples", "--fit-samples", o.fit_samples);
    take("out", "--out", o.out);
    take("seed", "--seed", o.seed);
    take("x0", "--x0", o.x0);
    // Relative paths inside the config are relative to the config file.
    auto base = std::filesystem::path(o.config).parent_path();
    for (auto* p : {&o.env, &o.controller}) {
        if (!p->empty() && !std::filesystem::exists(*p) && std::filesystem::exists(base / *p)) *p = (base / *p).string();
    }
}

inline int cmd_verify(VerifyOptions o, const CLI::App& app, std::ostream& log) {
    apply_config(o, app);
    if (o.timesteps < 0) throw ConfigError("--timesteps must be >= 0");
    if (o.samples < 0 || o.check < 0) throw ConfigError("--samples and --check must be >= 0");
    EnvConfig env = resolve_env(o.env, o.image_size);
    MLPSpec mlp = resolve_controller(o.controller, env);
    Box X0 = o.x0.empty() ? env.init_set : parse_box(o.x0, env.state_dim, "--x0");
    ReachSettings rs;
    rs.geo.cells_per_dim = o.cells;
    rs.geo.fit_samples = o.fit_samples;
    try {
        rs.geo.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (!o.cache_dir.empty()) rs.cache_dir = o.cache_dir;

    std::filesystem::path out(o.out);
    std::filesystem::create_directories(out);
    json run{{"command", "verify"},     {"env", o.env},         {"controller", o.controller},   {"timesteps", o.timesteps},
             {"image_size", env.image_size()}, {"samples", o.samples}, {"check", o.check},     {"seed", o.seed},
             {"x0", box_to_json(X0)},  {"geo", geo_settings_to_json(rs.geo)}, {"threads", worker_count()}};
    write_text(out / "run_config.json", run.dump(2) + "\n");

    ReachResult r = reach_horizon(env, mlp, X0, o.timesteps, rs);
    auto trajs = sample_trajectories(env, mlp, X0, static_cast<int>(r.boxes.size()) - 1, o.samples, o.seed);
    json rj = reach_result_to_json(r);
    rj["state_names"] = env.state_names;
    if (!trajs.empty()) rj["samples"] = samples_to_json(trajs);
    write_text(out / "reach.json", rj.dump() + "\n");
    if (!trajs.empty()) write_text(out / "slack.csv", slack_csv(slackness(r, trajs)));
    write_text(out / "runtime.csv", runtime_csv(r));
    write_plots(out, r, env.state_names, trajs);
    log << "verify: " << env.name << " " << env.image_size() << "x" << env.image_size() << ", " << r.boxes.size() - 1
        << " step(s) -> " << out.string() << "\n";
    for (std::size_t t = 0; t < r.boxes.size(); ++t) {
        log << "  t=" << t << " max width " << r.boxes[t].max_width() << "\n";
    }

    int code = kExitOk;
    if (o.check > 0) {
        ViolationReport v = soundness_check(env, mlp, r, X0, o.check, o.seed);
        write_text(out / "violations.json", violations_to_json(v).dump(2) + "\n");
        log << "soundness check: " << v.total() << " violation(s) over " << o.check << " trajectories\n";
        if (v.total() > 0) code = kExitViolations;
    }
    if (!r.complete) {
        log << "stopped early: " << r.stop_reason << "\n";
        if (code == kExitOk) code = kExitRefinement;
    }
    return code;
}

}  // namespace cli

/// Entry point of the `geocert` tool. Returns the process exit code.
inline int run_command(int argc, const char* const* argv, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"geocert: reachable sets for image-based closed-loop systems"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    cli::VerifyOptions vo;
    auto* verify = app.add_subcommand("verify", "compute reachable boxes and write reach.json, slack.csv, runtime.csv, phase.svg");
    verify->add_option("--env", vo.env, "environment manifest or built-in name");
    verify->add_option("--controller", vo.controller, "controller.json");
    verify->add_option("--config", vo.config, "JSON run config (command-line flags take precedence)");
    verify->add_option("--timesteps,-T", vo.timesteps, "horizon T");
    verify->add_option("--image-size", vo.image_size, "square image size (10, 25, 50 or 100)");
    verify->add_option("--samples", vo.samples, "sampled trajectories for slackness and plots");
    verify->add_option("--check", vo.check, "run a soundness check with N trajectories");
    verify->add_option("--cells", vo.cells, "soundification cells per parameter dimension");
    verify->add_option("--fit-samples", vo.fit_samples, "plane-fit samples per parameter dimension");
    verify->add_option("--x0", vo.x0, "initial box override: lo:hi,lo:hi,...");
    verify->add_option("--cache-dir", vo.cache_dir, "pixel-bound cache directory");
    verify->add_option("--out", vo.out, "output directory");
    verify->add_option("--seed", vo.seed, "sampling seed");

    std::string pb_env, pb_out = "out", pb_state;
    int pb_size = 0, pb_cells = GeoBoundSettings{}.cells_per_dim, pb_fit = GeoBoundSettings{}.fit_samples;
    auto* pbc = app.add_subcommand("pixel-bounds", "pixel bounds for the latent range of a state box, with PNG panels");
    pbc->add_option("--env", pb_env, "environment manifest or built-in name")->required();
    pbc->add_option("--image-size", pb_size, "square image size");
    pbc->add_option("--x0", pb_state, "state box lo:hi,... (default: the initial set)");
    pbc->add_option("--cells", pb_cells, "soundification cells per parameter dimension");
    pbc->add_option("--fit-samples", pb_fit, "plane-fit samples per parameter dimension");
    pbc->add_option("--out", pb_out, "output directory");

    std::string r_env, r_out = "out", r_state, r_controller;
    int r_size = 0, r_steps = 0, r_scale = 8;
    auto* rend = app.add_subcommand("render", "render observations as PNG frames");
    rend->add_option("--env", r_env, "environment manifest or built-in name")->required();
    rend->add_option("--image-size", r_size, "square image size");
    rend->add_option("--state", r_state, "state v1,v2,... (default: center of the initial set)");
    rend->add_option("--controller", r_controller, "controller for closed-loop frames");
    rend->add_option("--timesteps,-T", r_steps, "closed-loop steps to render (needs --controller)");
    rend->add_option("--scale", r_scale, "pixel upscaling factor");
    rend->add_option("--out", r_out, "output directory");

    std::string s_env, s_controller, s_reach, s_out = "out";
    int s_size = 0, s_check = 1000;
    std::uint64_t s_seed = 0;
    double s_shrink = 1.0;
    auto* sc = app.add_subcommand("soundcheck", "check sampled trajectories against reach.json");
    sc->add_option("--env", s_env, "environment manifest or built-in name")->required();
    sc->add_option("--controller", s_controller, "controller.json")->required();
    sc->add_option("--reach", s_reach, "reach.json")->required();
    sc->add_option("--image-size", s_size, "square image size (default: from reach.json)");
    sc->add_option("--check,--samples", s_check, "number of trajectories");
    sc->add_option("--seed", s_seed, "sampling seed");
    sc->add_option("--shrink", s_shrink, "scale boxes about their centers before checking (fault injection)");
    sc->add_option("--out", s_out, "output directory");

    std::string d_env, d_out = "controller.json", d_arch = "64,64,64,64,64,64";
    int d_size = 0;
    DistillConfig dc;
    auto* dist = app.add_subcommand("distill", "behavior-clone the environment's expert into an image controller");
    dist->add_option("--env", d_env, "environment manifest or built-in name")->required();
    dist->add_option("--image-size", d_size, "square image size");
    dist->add_option("--samples", dc.samples, "training samples");
    dist->add_option("--epochs", dc.epochs, "epochs");
    dist->add_option("--lr", dc.learning_rate, "learning rate");
    dist->add_option("--batch-size", dc.batch_size, "minibatch size");
    dist->add_option("--arch", d_arch, "hidden widths, comma separated");
    dist->add_option("--seed", dc.seed, "seed");
    dist->add_option("--out", d_out, "output controller path");

    std::string p_reach, p_out = "out";
    auto* plot = app.add_subcommand("plot", "regenerate phase.svg from reach.json");
    plot->add_option("--reach", p_reach, "reach.json")->required();
    plot->add_option("--out", p_out, "output directory");

    std::string e_env, e_out = "assets";
    int e_size = 25;
    auto* exp = app.add_subcommand("export-env", "write an environment manifest with sprite tensors");
    exp->add_option("--env", e_env, "built-in environment name")->required();
    exp->add_option("--image-size", e_size, "square image size");
    exp->add_option("--out", e_out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        log << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp& e) {
        log << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    }

    try {
        if (*verify) return cli::cmd_verify(vo, *verify, log);

        if (*pbc) {
            EnvConfig env = cli::resolve_env(pb_env, pb_size);
            GeoBoundSettings geo;
            geo.cells_per_dim = pb_cells;
            geo.fit_samples = pb_fit;
            geo.validate();
            Box X = pb_state.empty() ? env.init_set : cli::parse_box(pb_state, env.state_dim, "--x0");
            std::filesystem::path out(pb_out);
            std::filesystem::create_directories(out);
            PixelBoundCache cache(out / "cache");
            LatentRange lr = latent_range(env, X);
            std::vector<PixelBoundSet> sets;
            std::size_t off = 0;
            auto panel = [&](const LinearBounds& lb, int H, int W, int C) {
                Box b = concretize(lb);
                Image lo(H, W, C), hi(H, W, C);
                for (std::size_t i = 0; i < b.size(); ++i) {
                    lo.data()[i] = b[i].lo;
                    hi.data()[i] = b[i].hi;
                }
                return std::pair{lo, hi};
            };
            json summary = json::array();
            for (const auto& e : env.scene.entities) {
                auto d = static_cast<std::size_t>(e.transform.param_dim());
                Box Ki = lr.K.slice(off, d);
                off += d;
                bool hit = false;
                sets.push_back(cache.get_or_compute(e.sprite, e.transform, Ki, geo, &hit));
                auto [lo, hi] = panel(sets.back().value_bounds, env.image_size(), env.image_size(), kColorChannels);
                write_png(out / (e.name + "_bounds.png"), hstack({lo, hi}), 8);
                summary.push_back({{"entity", e.name}, {"K", box_to_json(Ki)}, {"cache_hit", hit},
                                   {"cache_key", pixel_bounds_key(e.sprite, e.transform, Ki, geo)}});
            }
            ObservationBounds ob = blend_bounds(env.scene, sets);
            auto [lo, hi] = panel(ob.bounds, env.image_size(), env.image_size(), kColorChannels);
            Eigen::VectorXd kc = lr.K.center();
            Image mid = render(env.scene, split_params(env.scene, kc));
            write_png(out / "observation_bounds.png", hstack({lo, mid, hi}), 8);
            cli::write_text(out / "pixel_bounds.json", json{{"env", env.name}, {"state_box", box_to_json(X)}, {"entities", summary}}.dump(2) + "\n");
            log << "pixel-bounds: wrote " << sets.size() << " entity bound set(s) to " << out.string() << "\n";
            return kExitOk;
        }

        if (*rend) {
            EnvConfig env = cli::resolve_env(r_env, r_size);
            Eigen::VectorXd x = r_state.empty() ? env.init_set.center() : cli::parse_box(r_state, env.state_dim, "--state").center();
            std::vector<Eigen::VectorXd> states{x};
            if (r_steps > 0) {
                MLPSpec mlp = cli::resolve_controller(r_controller, env);
                states = simulate(env, mlp, x, r_steps);
            }
            std::filesystem::path out(r_out);
            std::filesystem::create_directories(out);
            for (std::size_t t = 0; t < states.size(); ++t) {
                Image img = render(env.scene, split_params(env.scene, latent_params(env, states[t])));
                std::ostringstream name;
                name << "frame_" << std::setw(3) << std::setfill('0') << t << ".png";
                write_png(out / name.str(), img, r_scale);
            }
            log << "render: wrote " << states.size() << " frame(s) to " << out.string() << "\n";
            return kExitOk;
        }

        if (*sc) {
            json rj = cli::read_json_file(s_reach, "reach result");
            ReachResult r;
            try {
                r = reach_result_from_json(rj);
            } catch (const std::exception& e) {
                throw ConfigError(s_reach + ": " + e.what());
            }
            EnvConfig env = cli::resolve_env(s_env, s_size > 0 ? s_size : r.image_size);
            MLPSpec mlp = cli::resolve_controller(s_controller, env);
            if (!(s_shrink > 0.0)) throw ConfigError("--shrink must be positive");
            Box X0 = r.boxes.front();
            ReachResult checked = s_shrink == 1.0 ? r : scale_boxes(r, s_shrink);
            ViolationReport v = soundness_check(env, mlp, checked, X0, s_check, s_seed);
            std::filesystem::path out(s_out);
            std::filesystem::create_directories(out);
            cli::write_text(out / "violations.json", violations_to_json(v).dump(2) + "\n");
            log << "soundcheck: " << v.total() << " violation(s) over " << v.n_trajectories << " trajectories\n";
            return v.total() > 0 ? kExitViolations : kExitOk;
        }

        if (*dist) {
            EnvConfig env = cli::resolve_env(d_env, d_size);
            std::vector<int> arch;
            std::stringstream ss(d_arch);
            std::string item;
            try {
                while (std::getline(ss, item, ',')) arch.push_back(std::stoi(item));
            } catch (const std::exception&) {
                throw ConfigError("--arch: cannot parse '" + d_arch + "'");
            }
            for (int w : arch) {
                if (w < 1) throw ConfigError("--arch: widths must be positive");
            }
            try {
                dc.validate();
            } catch (const std::invalid_argument& e) {
                throw ConfigError(e.what());
            }
            DistillResult res = distill(env, dc, arch);
            std::filesystem::path out(d_out);
            if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
            save_mlp(res.mlp, out);
            log << "distill: " << env.name << " train mse " << res.train_mse.front() << " -> " << res.train_mse.back()
                << ", validation mse " << res.validation_mse << " -> " << out.string() << "\n";
            return kExitOk;
        }

        if (*plot) {
            json rj = cli::read_json_file(p_reach, "reach result");
            ReachResult r;
            try {
                r = reach_result_from_json(rj);
            } catch (const std::exception& e) {
                throw ConfigError(p_reach + ": " + e.what());
            }
            std::vector<std::string> names;
            if (rj.contains("state_names")) {
                names = rj.at("state_names").get<std::vector<std::string>>();
            } else {
                for (std::size_t i = 0; i < r.boxes.front().size(); ++i) names.push_back("x" + std::to_string(i));
            }
            auto samples = rj.contains("samples") ? cli::samples_from_json(rj.at("samples")) : std::vector<std::vector<Eigen::VectorXd>>{};
            std::filesystem::path out(p_out);
            std::filesystem::create_directories(out);
            cli::write_plots(out, r, names, samples);
            log << "plot: wrote " << (out / "phase.svg").string() << "\n";
            return kExitOk;
        }

        if (*exp) {
            cli::check_image_size(e_size);
            bool known = false;
            for (const auto& n : env_names()) known = known || n == e_env;
            if (!known) throw ConfigError("--env must be one of pendulum, cartpole, acrobot");
            auto path = export_env_manifest(make_env(e_env, e_size), e_out);
            log << "export-env: wrote " << path.string() << "\n";
            return kExitOk;
        }
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const RefinementNeeded& e) {
        err << "refinement needed: " << e.what() << "\n";
        return kExitRefinement;
    } catch (const std::invalid_argument& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfig;
    }
    return kExitConfig;
}

}  // namespace geocert
