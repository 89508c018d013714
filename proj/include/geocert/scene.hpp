// Copyright (c) geocert contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "geocert/bounds.hpp"
#include "geocert/graph.hpp"

namespace geocert {

/// Dense H x W x C tensor of reals, row-major with channels innermost.
class Image {
  public:
    Image() = default;
    Image(int height, int width, int channels, double fill = 0.0)
        : h_(height), w_(width), c_(channels), data_(static_cast<std::size_t>(height * width * channels), fill) {
        if (height < 0 || width < 0 || channels <= 0) throw std::invalid_argument("invalid image shape");
    }

    [[nodiscard]] int height() const { return h_; }
    [[nodiscard]] int width() const { return w_; }
    [[nodiscard]] int channels() const { return c_; }
    [[nodiscard]] std::size_t size() const { return data_.size(); }
    [[nodiscard]] std::size_t index(int l, int k, int c) const {
        return (static_cast<std::size_t>(l) * static_cast<std::size_t>(w_) + static_cast<std::size_t>(k)) *
                   static_cast<std::size_t>(c_) +
               static_cast<std::size_t>(c);
    }
    double& at(int l, int k, int c = 0) { return data_[index(l, k, c)]; }
    [[nodiscard]] double at(int l, int k, int c = 0) const { return data_[index(l, k, c)]; }
    /// Zero outside the canvas.
    [[nodiscard]] double padded(int l, int k, int c) const {
        if (l < 0 || k < 0 || l >= h_ || k >= w_) return 0.0;
        return data_[index(l, k, c)];
    }
    [[nodiscard]] const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }
    [[nodiscard]] Eigen::VectorXd flatten() const {
        return Eigen::Map<const Eigen::VectorXd>(data_.data(), static_cast<Eigen::Index>(data_.size()));
    }

    friend bool operator==(const Image&, const Image&) = default;

  private:
    int h_ = 0;
    int w_ = 0;
    int c_ = 1;
    std::vector<double> data_;
};

inline constexpr int kColorChannels = 3;

/// Entity appearance in its canonical pose. `anchor` is the image coordinate of canvas
/// pixel (0, 0).
struct Sprite {
    Image canvas;  // H x W x 3
    Image alpha;   // H x W x 1
    double anchor_row = 0.0;
    double anchor_col = 0.0;

    [[nodiscard]] int height() const { return canvas.height(); }
    [[nodiscard]] int width() const { return canvas.width(); }

    void validate() const {
        if (canvas.channels() != kColorChannels) throw std::invalid_argument("sprite canvas must have 3 channels");
        if (alpha.channels() != 1) throw std::invalid_argument("sprite alpha must have 1 channel");
        if (canvas.height() != alpha.height() || canvas.width() != alpha.width()) {
            throw std::invalid_argument("sprite canvas and alpha differ in size");
        }
        for (double v : canvas.data()) {
            if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("sprite canvas value outside [0, 1]");
        }
        for (double v : alpha.data()) {
            if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("sprite alpha value outside [0, 1]");
        }
    }
};

enum class TransformKind { rotation, translation, rotation_then_translation };

inline std::string_view to_string(TransformKind k) {
    switch (k) {
        case TransformKind::rotation: return "rotation";
        case TransformKind::translation: return "translation";
        case TransformKind::rotation_then_translation: return "rotation_then_translation";
    }
    return "?";
}

inline TransformKind transform_kind_from_string(std::string_view s) {
    for (auto k : {TransformKind::rotation, TransformKind::translation, TransformKind::rotation_then_translation}) {
        if (to_string(k) == s) return k;
    }
    throw std::invalid_argument("unknown transform kind '" + std::string(s) + "'");
}

/// Fixed brightness/contrast change p -> scale * p + shift (clamped to [0, 1]).
struct Intensity {
    double scale = 1.0;
    double shift = 0.0;
};

/// Spatial transform of an entity. Parameters (row-major image coordinates, angles in radians):
///   rotation:                  (angle)
///   translation:               (d_row, d_col)
///   rotation_then_translation: (d_row, d_col, angle)
struct TransformSpec {
    TransformKind kind = TransformKind::rotation;
    double center_row = 0.0;
    double center_col = 0.0;
    std::optional<Intensity> intensity;

    [[nodiscard]] int param_dim() const {
        switch (kind) {
            case TransformKind::rotation: return 1;
            case TransformKind::translation: return 2;
            case TransformKind::rotation_then_translation: return 3;
        }
        return 0;
    }
};

struct Point2 {
    double row = 0.0;
    double col = 0.0;
};

/// Maps output pixel (row, col) back to continuous source coordinates.
inline Point2 spatial_inverse(const TransformSpec& t, std::span<const double> mu, double row, double col) {
    if (static_cast<int>(mu.size()) != t.param_dim()) throw std::invalid_argument("transform parameter count mismatch");
    switch (t.kind) {
        case TransformKind::translation: return {row - mu[0], col - mu[1]};
        case TransformKind::rotation:
        case TransformKind::rotation_then_translation: {
            double angle = t.kind == TransformKind::rotation ? mu[0] : mu[2];
            double dr = row - t.center_row, dc = col - t.center_col;
            if (t.kind == TransformKind::rotation_then_translation) {
                dr -= mu[0];
                dc -= mu[1];
            }
            double c = std::cos(angle), s = std::sin(angle);
            // R(-angle) applied to (dr, dc) with R(a) = [[cos a, -sin a], [sin a, cos a]].
            return {c * dr + s * dc + t.center_row, -s * dr + c * dc + t.center_col};
        }
    }
    return {row, col};
}

namespace detail {

/// Bilinear interpolation with zero padding in canvas coordinates.
inline double bilinear(const Image& img, int channel, double r, double c) {
    double fr = std::floor(r), fc = std::floor(c);
    int r0 = static_cast<int>(fr), c0 = static_cast<int>(fc);
    double tr = r - fr, tc = c - fc;
    double v00 = img.padded(r0, c0, channel), v01 = img.padded(r0, c0 + 1, channel);
    double v10 = img.padded(r0 + 1, c0, channel), v11 = img.padded(r0 + 1, c0 + 1, channel);
    return (1.0 - tr) * ((1.0 - tc) * v00 + tc * v01) + tr * ((1.0 - tc) * v10 + tc * v11);
}

inline double apply_intensity(const TransformSpec& t, double p) {
    if (!t.intensity) return p;
    double v = t.intensity->scale * p + t.intensity->shift;
    return std::clamp(v, 0.0, 1.0);
}

}  // namespace detail

/// Channel selector: colour channel index or the alpha mask.
struct Channel {
    int index = 0;
    static constexpr Channel alpha() { return {-1}; }
    [[nodiscard]] constexpr bool is_alpha() const { return index < 0; }
};

/// Value of one transformed pixel of a sprite. The intensity change applies to colour
/// channels only.
inline double sample_pixel(const Sprite& s, const TransformSpec& t, std::span<const double> mu, int l, int k, Channel ch) {
    Point2 src = spatial_inverse(t, mu, l, k);
    double r = src.row - s.anchor_row, c = src.col - s.anchor_col;
    if (ch.is_alpha()) return detail::bilinear(s.alpha, 0, r, c);
    return detail::apply_intensity(t, detail::bilinear(s.canvas, ch.index, r, c));
}

struct Entity {
    std::string name;
    Sprite sprite;
    TransformSpec transform;
    CompGraph param_map;  // state -> transform parameters
};

struct SceneConfig {
    Image background;  // H x W x 3
    std::vector<Entity> entities;

    [[nodiscard]] int height() const { return background.height(); }
    [[nodiscard]] int width() const { return background.width(); }
    [[nodiscard]] int param_dim() const {
        int d = 0;
        for (const auto& e : entities) d += e.transform.param_dim();
        return d;
    }
};

/// Transformed colour and alpha layers of one entity on the scene grid.
struct EntityLayer {
    Image color;
    Image alpha;
};

inline EntityLayer transform_entity(const Entity& e, std::span<const double> mu, int height, int width) {
    EntityLayer out{Image(height, width, kColorChannels), Image(height, width, 1)};
    for (int l = 0; l < height; ++l) {
        for (int k = 0; k < width; ++k) {
            Point2 src = spatial_inverse(e.transform, mu, l, k);
            double r = src.row - e.sprite.anchor_row, c = src.col - e.sprite.anchor_col;
            out.alpha.at(l, k) = detail::bilinear(e.sprite.alpha, 0, r, c);
            for (int ch = 0; ch < kColorChannels; ++ch) {
                out.color.at(l, k, ch) = detail::apply_intensity(e.transform, detail::bilinear(e.sprite.canvas, ch, r, c));
            }
        }
    }
    return out;
}

/// Composites `layer` over `base` in place: base * (1 - alpha) + alpha * color.
inline void composite_over(Image& base, const EntityLayer& layer) {
    for (int l = 0; l < base.height(); ++l) {
        for (int k = 0; k < base.width(); ++k) {
            double a = layer.alpha.at(l, k);
            for (int ch = 0; ch < base.channels(); ++ch) {
                base.at(l, k, ch) = base.at(l, k, ch) * (1.0 - a) + a * layer.color.at(l, k, ch);
            }
        }
    }
}

/// Exact alpha-composited observation; entities are drawn in configuration order
/// (later entities on top).
inline Image render(const SceneConfig& scene, std::span<const Eigen::VectorXd> mu_all) {
    if (mu_all.size() != scene.entities.size()) throw std::invalid_argument("render: one parameter vector per entity required");
    Image out = scene.background;
    for (std::size_t i = 0; i < scene.entities.size(); ++i) {
        const auto& e = scene.entities[i];
        const auto& mu = mu_all[i];
        if (mu.size() != e.transform.param_dim()) throw std::invalid_argument("render: parameter vector size mismatch");
        composite_over(out, transform_entity(e, std::span<const double>(mu.data(), static_cast<std::size_t>(mu.size())),
                                             scene.height(), scene.width()));
    }
    return out;
}

/// Splits a concatenated parameter vector into per-entity blocks.
inline std::vector<Eigen::VectorXd> split_params(const SceneConfig& scene, const Eigen::VectorXd& kappa) {
    if (kappa.size() != scene.param_dim()) throw std::invalid_argument("parameter vector size mismatch");
    std::vector<Eigen::VectorXd> out;
    Eigen::Index off = 0;
    for (const auto& e : scene.entities) {
        int d = e.transform.param_dim();
        out.emplace_back(kappa.segment(off, d));
        off += d;
    }
    return out;
}

}  // namespace geocert
