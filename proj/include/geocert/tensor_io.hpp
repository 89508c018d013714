// Copyright (c) geocert contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geocert/geo_bounds.hpp"
#include "geocert/graph_json.hpp"
#include "geocert/scene.hpp"

namespace geocert {

static_assert(std::endian::native == std::endian::little, "raw tensor files are little-endian");

class IoError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

inline void write_raw_f32(const std::filesystem::path& path, const std::vector<double>& data) {
    std::vector<float> f(data.begin(), data.end());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path.string());
    os.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(f.size() * sizeof(float)));
}

inline std::vector<double> read_raw_f32(const std::filesystem::path& path, std::size_t expected) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read " + path.string());
    std::vector<float> f(expected);
    is.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(expected * sizeof(float)));
    if (static_cast<std::size_t>(is.gcount()) != expected * sizeof(float) || is.peek() != EOF) {
        throw IoError(path.string() + ": expected " + std::to_string(expected) + " float32 values");
    }
    return {f.begin(), f.end()};
}

inline void write_raw_f64(std::ostream& os, const double* data, std::size_t n) {
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
}

inline void read_raw_f64(std::istream& is, double* data, std::size_t n, const std::string& what) {
    is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
    if (static_cast<std::size_t>(is.gcount()) != n * sizeof(double)) throw IoError(what + ": truncated binary data");
}

/// 64-bit FNV-1a.
class Fnv1a {
  public:
    void bytes(const void* p, std::size_t n) {
        const auto* c = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h_ ^= c[i];
            h_ *= 0x100000001b3ULL;
        }
    }
    void f64(double v) { bytes(&v, sizeof v); }
    void i64(std::int64_t v) { bytes(&v, sizeof v); }
    void str(const std::string& s) {
        i64(static_cast<std::int64_t>(s.size()));
        bytes(s.data(), s.size());
    }
    [[nodiscard]] std::uint64_t value() const { return h_; }
    [[nodiscard]] std::string hex() const {
        std::ostringstream os;
        os << std::hex << std::setw(16) << std::setfill('0') << h_;
        return os.str();
    }

  private:
    std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

inline void hash_image(Fnv1a& h, const Image& img) {
    h.i64(img.height());
    h.i64(img.width());
    h.i64(img.channels());
    h.bytes(img.data().data(), img.data().size() * sizeof(double));
}

/// Cache key for pixel bounds: sprite contents, transform, parameter box and settings.
inline std::string pixel_bounds_key(const Sprite& s, const TransformSpec& t, const Box& K, const GeoBoundSettings& cfg) {
    Fnv1a h;
    hash_image(h, s.canvas);
    hash_image(h, s.alpha);
    h.f64(s.anchor_row);
    h.f64(s.anchor_col);
    h.str(std::string(to_string(t.kind)));
    h.f64(t.center_row);
    h.f64(t.center_col);
    h.i64(t.intensity ? 1 : 0);
    if (t.intensity) {
        h.f64(t.intensity->scale);
        h.f64(t.intensity->shift);
    }
    for (const auto& d : K) {
        h.f64(d.lo);
        h.f64(d.hi);
    }
    h.i64(cfg.fit_samples);
    h.i64(cfg.cells_per_dim);
    h.i64(cfg.max_refine_depth);
    h.f64(cfg.violation_tol);
    h.i64(cfg.refine_budget);
    return h.hex();
}

/// Writes `<stem>.json` (header) and `<stem>.bin` (float64 arrays: value lower weights,
/// value lower bias, value upper weights, value upper bias, then the same for alpha; all
/// weight matrices row-major).
inline void save_pixel_bounds(const PixelBoundSet& pb, const std::filesystem::path& stem) {
    auto bin = std::filesystem::path(stem).replace_extension(".bin");
    json header{{"height", pb.height},
                {"width", pb.width},
                {"channels", kColorChannels},
                {"domain", box_to_json(pb.domain())},
                {"dtype", "float64"},
                {"data", bin.filename().string()}};
    std::ofstream os(bin, std::ios::binary);
    if (!os) throw IoError("cannot write " + bin.string());
    for (const LinearBounds* lb : {&pb.value_bounds, &pb.alpha_bounds}) {
        for (const LinearMap* m : {&lb->lower, &lb->upper}) {
            Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> w = m->weights;
            write_raw_f64(os, w.data(), static_cast<std::size_t>(w.size()));
            write_raw_f64(os, m->bias.data(), static_cast<std::size_t>(m->bias.size()));
        }
    }
    std::ofstream js(std::filesystem::path(stem).replace_extension(".json"));
    if (!js) throw IoError("cannot write header for " + stem.string());
    js << header.dump(2) << "\n";
}

inline PixelBoundSet load_pixel_bounds(const std::filesystem::path& stem) {
    auto hdr_path = std::filesystem::path(stem).replace_extension(".json");
    std::ifstream js(hdr_path);
    if (!js) throw IoError("cannot read " + hdr_path.string());
    json header = json::parse(js);
    if (header.at("dtype").get<std::string>() != "float64") throw IoError(hdr_path.string() + ": unsupported dtype");
    PixelBoundSet pb;
    pb.height = header.at("height").get<int>();
    pb.width = header.at("width").get<int>();
    Box K = box_from_json(header.at("domain"));
    auto d = static_cast<Eigen::Index>(K.size());
    auto bin = hdr_path.parent_path() / header.at("data").get<std::string>();
    std::ifstream is(bin, std::ios::binary);
    if (!is) throw IoError("cannot read " + bin.string());
    auto read_map = [&](Eigen::Index rows) {
        Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> w(rows, d);
        Eigen::VectorXd b(rows);
        read_raw_f64(is, w.data(), static_cast<std::size_t>(w.size()), bin.string());
        read_raw_f64(is, b.data(), static_cast<std::size_t>(b.size()), bin.string());
        return LinearMap(Eigen::MatrixXd(w), b);
    };
    Eigen::Index px = static_cast<Eigen::Index>(pb.height) * pb.width;
    LinearMap vlo = read_map(px * kColorChannels), vhi = read_map(px * kColorChannels);
    LinearMap alo = read_map(px), ahi = read_map(px);
    pb.value_bounds = LinearBounds(std::move(vlo), std::move(vhi), K);
    pb.alpha_bounds = LinearBounds(std::move(alo), std::move(ahi), K);
    return pb;
}

/// Directory-backed cache of pixel bounds keyed by pixel_bounds_key.
class PixelBoundCache {
  public:
    explicit PixelBoundCache(std::filesystem::path dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }

    PixelBoundSet get_or_compute(const Sprite& s, const TransformSpec& t, const Box& K, const GeoBoundSettings& cfg,
                                 bool* hit = nullptr) {
        auto stem = dir_ / pixel_bounds_key(s, t, K, cfg);
        if (std::filesystem::exists(std::filesystem::path(stem).replace_extension(".json"))) {
            try {
                auto pb = load_pixel_bounds(stem);
                if (pb.domain() == K) {
                    if (hit) *hit = true;
                    return pb;
                }
            } catch (const std::exception&) {
                // Corrupt entry: recompute and overwrite.
            }
        }
        if (hit) *hit = false;
        auto pb = pixel_bounds(s, t, K, cfg);
        save_pixel_bounds(pb, stem);
        return pb;
    }

    [[nodiscard]] const std::filesystem::path& dir() const { return dir_; }

  private:
    std::filesystem::path dir_;
};

}  // namespace geocert
