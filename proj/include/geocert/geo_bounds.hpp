// Copyright (c) geocert contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <queue>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "geocert/bounds.hpp"
#include "geocert/parallel.hpp"
#include "geocert/relax.hpp"
#include "geocert/scene.hpp"

namespace geocert {

struct GeoBoundSettings {
    int fit_samples = 64;      // per parameter dimension; the grid is capped at 4096 points
    int cells_per_dim = 8;
    int max_refine_depth = 4;
    double violation_tol = 1e-6;
    int refine_budget = 16;    // cell splits per pixel, channel and side

    void validate() const {
        if (fit_samples < 2) throw std::invalid_argument("fit_samples must be >= 2");
        if (cells_per_dim < 1) throw std::invalid_argument("cells_per_dim must be >= 1");
        if (max_refine_depth < 0) throw std::invalid_argument("max_refine_depth must be >= 0");
        if (!(violation_tol > 0.0)) throw std::invalid_argument("violation_tol must be positive");
        if (refine_budget < 0) throw std::invalid_argument("refine_budget must be >= 0");
    }

    friend bool operator==(const GeoBoundSettings&, const GeoBoundSettings&) = default;
};

inline constexpr int kMaxFitPoints = 4096;

/// Affine bounds, in the transform parameters, on every transformed pixel of one sprite.
/// Value rows are indexed (l * W + k) * 3 + c, alpha rows l * W + k.
struct PixelBoundSet {
    int height = 0;
    int width = 0;
    LinearBounds value_bounds;
    LinearBounds alpha_bounds;

    [[nodiscard]] const Box& domain() const { return value_bounds.domain; }
};

namespace detail {

inline constexpr double kCoordPad = 1e-9;

struct SourceRect {
    Interval row;
    Interval col;
};

// Range of x * cos(a) + y * sin(a) for fixed (x, y) and a in `angle`.
inline Interval harmonic_range(double x, double y, Interval angle) {
    double rho = std::hypot(x, y);
    if (rho == 0.0) return Interval::point(0.0);
    double phi = std::atan2(y, x);
    Interval c = cos_range({angle.lo - phi, angle.hi - phi});
    return rho * c;
}

inline Interval padded(Interval v) {
    double pad = kCoordPad * (1.0 + std::max(std::abs(v.lo), std::abs(v.hi)));
    return {v.lo - pad, v.hi + pad};
}

/// Canvas-coordinate rectangle containing the source coordinate of pixel (l, k) for
/// every parameter in `cell`.
inline SourceRect source_rect(const Sprite& s, const TransformSpec& t, const Box& cell, int l, int k) {
    if (static_cast<int>(cell.size()) != t.param_dim()) throw BoundsError("cell dimension != transform parameter count");
    Interval row, col;
    switch (t.kind) {
        case TransformKind::translation:
            row = Interval::point(l) - cell[0];
            col = Interval::point(k) - cell[1];
            break;
        case TransformKind::rotation: {
            double dr = l - t.center_row, dc = k - t.center_col;
            // row: dr cos a + dc sin a; col: dc cos a - dr sin a
            row = Interval::point(t.center_row) + harmonic_range(dr, dc, cell[0]);
            col = Interval::point(t.center_col) + harmonic_range(dc, -dr, cell[0]);
            break;
        }
        case TransformKind::rotation_then_translation: {
            Interval dr = Interval::point(l - t.center_row) - cell[0];
            Interval dc = Interval::point(k - t.center_col) - cell[1];
            bool first = true;
            for (double x : {dr.lo, dr.hi}) {
                for (double y : {dc.lo, dc.hi}) {
                    Interval r = harmonic_range(x, y, cell[2]);
                    Interval c = harmonic_range(y, -x, cell[2]);
                    row = first ? r : hull(row, r);
                    col = first ? c : hull(col, c);
                    first = false;
                }
            }
            row = Interval::point(t.center_row) + row;
            col = Interval::point(t.center_col) + col;
            break;
        }
    }
    return {padded(row - Interval::point(s.anchor_row)), padded(col - Interval::point(s.anchor_col))};
}

/// Per-sprite helper: bilinear values and exact ranges of the interpolant over
/// rectangles, for the three colour channels and alpha at once (raw, before intensity).
class SpriteSampler {
  public:
    explicit SpriteSampler(const Sprite& s) : s_(s), h_(s.height()), w_(s.width()) {
        sat_.assign(static_cast<std::size_t>((h_ + 1) * (w_ + 1)), 0);
        for (int l = 0; l < h_; ++l) {
            for (int k = 0; k < w_; ++k) {
                bool nz = s.alpha.at(l, k) != 0.0;
                for (int c = 0; c < kColorChannels; ++c) nz = nz || s.canvas.at(l, k, c) != 0.0;
                sat_[idx(l + 1, k + 1)] = sat_[idx(l, k + 1)] + sat_[idx(l + 1, k)] - sat_[idx(l, k)] + (nz ? 1 : 0);
            }
        }
    }

    [[nodiscard]] std::array<double, 4> values(double r, double c) const {
        double fr = std::floor(r), fc = std::floor(c);
        int r0 = static_cast<int>(fr), c0 = static_cast<int>(fc);
        std::array<double, 4> out{};
        if (r0 < -1 || c0 < -1 || r0 >= h_ || c0 >= w_) return out;
        double tr = r - fr, tc = c - fc;
        // Same evaluation order as detail::bilinear so point values match it bit for bit.
        for (int ch = 0; ch < 4; ++ch) {
            out[static_cast<std::size_t>(ch)] = (1.0 - tr) * ((1.0 - tc) * at(r0, c0, ch) + tc * at(r0, c0 + 1, ch)) +
                                                tr * ((1.0 - tc) * at(r0 + 1, c0, ch) + tc * at(r0 + 1, c0 + 1, ch));
        }
        return out;
    }

    /// True when the interpolant is identically zero on the rectangle.
    [[nodiscard]] bool zero_on(const SourceRect& rect) const {
        if (rect.row.hi <= -1.0 || rect.row.lo >= h_ || rect.col.hi <= -1.0 || rect.col.lo >= w_) return true;
        int l0 = std::max(0, static_cast<int>(std::floor(rect.row.lo)));
        int l1 = std::min(h_ - 1, static_cast<int>(std::ceil(rect.row.hi)));
        int k0 = std::max(0, static_cast<int>(std::floor(rect.col.lo)));
        int k1 = std::min(w_ - 1, static_cast<int>(std::ceil(rect.col.hi)));
        if (l0 > l1 || k0 > k1) return true;
        long n = sat_[idx(l1 + 1, k1 + 1)] - sat_[idx(l0, k1 + 1)] - sat_[idx(l1 + 1, k0)] + sat_[idx(l0, k0)];
        return n == 0;
    }

    /// Exact range of each channel's interpolant over the rectangle. On every unit cell
    /// the interpolant is bilinear, so extrema lie on the breakpoint grid.
    [[nodiscard]] std::array<Interval, 4> ranges(const SourceRect& rect) const {
        std::array<Interval, 4> out;
        if (zero_on(rect)) return out;
        auto breaks = [](double lo, double hi, int n) {
            lo = std::max(lo, -1.0);
            hi = std::min(hi, static_cast<double>(n));
            std::vector<double> b{lo};
            for (double v = std::floor(lo) + 1.0; v < hi; v += 1.0) b.push_back(v);
            if (hi > lo) b.push_back(hi);
            return b;
        };
        std::vector<double> rs = breaks(rect.row.lo, rect.row.hi, h_);
        std::vector<double> cs = breaks(rect.col.lo, rect.col.hi, w_);
        std::array<double, 4> lo, hi;
        lo.fill(std::numeric_limits<double>::infinity());
        hi.fill(-std::numeric_limits<double>::infinity());
        for (double r : rs) {
            for (double c : cs) {
                auto v = values(r, c);
                for (std::size_t ch = 0; ch < 4; ++ch) {
                    lo[ch] = std::min(lo[ch], v[ch]);
                    hi[ch] = std::max(hi[ch], v[ch]);
                }
            }
        }
        for (std::size_t ch = 0; ch < 4; ++ch) out[ch] = {lo[ch], hi[ch]};
        return out;
    }

  private:
    [[nodiscard]] std::size_t idx(int l, int k) const {
        return static_cast<std::size_t>(l) * static_cast<std::size_t>(w_ + 1) + static_cast<std::size_t>(k);
    }
    [[nodiscard]] double at(int l, int k, int ch) const {
        if (l < 0 || k < 0 || l >= h_ || k >= w_) return 0.0;
        return ch < kColorChannels ? s_.canvas.at(l, k, ch) : s_.alpha.at(l, k);
    }

    const Sprite& s_;
    int h_;
    int w_;
    std::vector<long> sat_;
};

inline Interval intensity_range(const TransformSpec& t, Interval raw) {
    double a = apply_intensity(t, raw.lo), b = apply_intensity(t, raw.hi);
    return {std::min(a, b), std::max(a, b)};
}

/// Ranges of the three colour channels (after intensity) and alpha over a parameter cell.
inline std::array<Interval, 4> cell_ranges(const SpriteSampler& sampler, const Sprite& s, const TransformSpec& t,
                                           const Box& cell, int l, int k) {
    std::array<Interval, 4> out;
    if (cell.degenerate()) {
        Eigen::VectorXd mu = cell.lower();
        Point2 src = spatial_inverse(t, std::span<const double>(mu.data(), static_cast<std::size_t>(mu.size())), l, k);
        auto v = sampler.values(src.row - s.anchor_row, src.col - s.anchor_col);
        for (std::size_t ch = 0; ch < 4; ++ch) out[ch] = Interval::point(v[ch]);
    } else {
        out = sampler.ranges(source_rect(s, t, cell, l, k));
    }
    for (std::size_t ch = 0; ch < kColorChannels; ++ch) out[ch] = intensity_range(t, out[ch]);
    return out;
}

}  // namespace detail

/// Sound range of one transformed pixel over every parameter in `cell`.
inline Interval interval_pixel(const Sprite& s, const TransformSpec& t, const Box& cell, int l, int k, Channel ch) {
    detail::SpriteSampler sampler(s);
    auto r = detail::cell_ranges(sampler, s, t, cell, l, k);
    return ch.is_alpha() ? r[3] : r[static_cast<std::size_t>(ch.index)];
}

namespace detail {

// A parameter sub-box in normalized coordinates u in [-1, 1]^m (free dimensions only).
struct UCell {
    Eigen::VectorXd center;
    Eigen::VectorXd half;
    int depth = 0;
};

struct Plane1 {
    Eigen::VectorXd a;  // over free normalized coordinates
    double b = 0.0;
    [[nodiscard]] double min_over(const UCell& c) const { return a.dot(c.center) + b - a.cwiseAbs().dot(c.half); }
    [[nodiscard]] double max_over(const UCell& c) const { return a.dot(c.center) + b + a.cwiseAbs().dot(c.half); }
};

class PixelBounder {
  public:
    PixelBounder(const Sprite& s, const TransformSpec& t, const Box& K, const GeoBoundSettings& cfg)
        : s_(s), t_(t), K_(K), cfg_(cfg), sampler_(s) {
        for (std::size_t i = 0; i < K.size(); ++i) {
            if (!K[i].degenerate()) free_.push_back(i);
        }
        const auto m = static_cast<int>(free_.size());
        if (m > 0) {
            int n = cfg.fit_samples;
            while (n > 2 && std::pow(static_cast<double>(n), m) > kMaxFitPoints) --n;
            build_fit_grid(n);
        }
        std::vector<double> ticks;
        for (int i = 0; i < cfg.cells_per_dim; ++i) ticks.push_back(-1.0 + (2.0 * i + 1.0) / cfg.cells_per_dim);
        std::size_t total = 1;
        for (int d = 0; d < m; ++d) total *= static_cast<std::size_t>(cfg.cells_per_dim);
        for (std::size_t idx = 0; idx < total; ++idx) {
            UCell c{Eigen::VectorXd(m), Eigen::VectorXd::Constant(m, 1.0 / cfg.cells_per_dim), 0};
            std::size_t rem = idx;
            for (int d = 0; d < m; ++d) {
                c.center[d] = ticks[rem % static_cast<std::size_t>(cfg.cells_per_dim)];
                rem /= static_cast<std::size_t>(cfg.cells_per_dim);
            }
            cells_.push_back(std::move(c));
        }
    }

    [[nodiscard]] Box to_box(const UCell& c) const {
        Box b = K_;
        for (std::size_t j = 0; j < free_.size(); ++j) {
            auto jj = static_cast<Eigen::Index>(j);
            const Interval& d = K_[free_[j]];
            double lo = d.center() + d.radius() * (c.center[jj] - c.half[jj]);
            double hi = d.center() + d.radius() * (c.center[jj] + c.half[jj]);
            if (c.center[jj] - c.half[jj] <= -1.0) lo = d.lo;
            if (c.center[jj] + c.half[jj] >= 1.0) hi = d.hi;
            b[free_[j]] = Interval(std::min(lo, hi), std::max(lo, hi));
        }
        return b;
    }

    struct Row {
        Eigen::VectorXd lo_w, hi_w;  // over K
        double lo_b = 0.0, hi_b = 0.0;
    };

    /// Bounds for the 3 colour channels and alpha of pixel (l, k).
    std::array<Row, 4> bound_pixel(int l, int k) const {
        const auto d = static_cast<Eigen::Index>(K_.size());
        std::array<Row, 4> rows;
        auto whole = cell_ranges(sampler_, s_, t_, K_, l, k);
        auto constant_row = [&](Interval v) {
            return Row{Eigen::VectorXd::Zero(d), Eigen::VectorXd::Zero(d), v.lo, v.hi};
        };
        bool any_varying = false;
        for (std::size_t ch = 0; ch < 4; ++ch) {
            rows[ch] = constant_row(whole[ch]);
            any_varying = any_varying || !whole[ch].degenerate();
        }
        if (!any_varying || free_.empty()) return rows;

        std::vector<std::array<Interval, 4>> cell_vals(cells_.size());
        for (std::size_t i = 0; i < cells_.size(); ++i) {
            cell_vals[i] = cell_ranges(sampler_, s_, t_, to_box(cells_[i]), l, k);
        }
        Eigen::MatrixXd Y = sample_values(l, k);
        Eigen::MatrixXd coef = pinv_ * Y;  // (m + 1) x 4

        for (std::size_t ch = 0; ch < 4; ++ch) {
            if (whole[ch].degenerate()) continue;
            auto ci = static_cast<Eigen::Index>(ch);
            Plane1 p{coef.col(ci).head(static_cast<Eigen::Index>(free_.size())), coef(static_cast<Eigen::Index>(free_.size()), ci)};
            double up = shift(p, cell_vals, ch, l, k, true) + cfg_.violation_tol;
            double dn = shift(p, cell_vals, ch, l, k, false) + cfg_.violation_tol;
            Row r = rows[ch];
            Eigen::VectorXd w = Eigen::VectorXd::Zero(d);
            double b = p.b;
            for (std::size_t j = 0; j < free_.size(); ++j) {
                const Interval& iv = K_[free_[j]];
                double wj = p.a[static_cast<Eigen::Index>(j)] / iv.radius();
                w[static_cast<Eigen::Index>(free_[j])] = wj;
                b -= wj * iv.center();
            }
            // Keep whichever of plane and constant is lower (upper) on average over K.
            if (p.b + up < whole[ch].hi) {
                r.hi_w = w;
                r.hi_b = b + up;
            }
            if (p.b - dn > whole[ch].lo) {
                r.lo_w = w;
                r.lo_b = b - dn;
            }
            rows[ch] = r;
        }
        return rows;
    }

  private:
    void build_fit_grid(int n) {
        const auto m = static_cast<int>(free_.size());
        std::size_t total = 1;
        for (int d = 0; d < m; ++d) total *= static_cast<std::size_t>(n);
        Eigen::MatrixXd X(static_cast<Eigen::Index>(total), m + 1);
        fit_maps_.resize(total);
        for (std::size_t idx = 0; idx < total; ++idx) {
            std::size_t rem = idx;
            Eigen::VectorXd mu = K_.center();
            auto row = static_cast<Eigen::Index>(idx);
            for (int d = 0; d < m; ++d) {
                double u = -1.0 + 2.0 * static_cast<double>(rem % static_cast<std::size_t>(n)) / (n - 1);
                rem /= static_cast<std::size_t>(n);
                X(row, d) = u;
                const Interval& iv = K_[free_[static_cast<std::size_t>(d)]];
                mu[static_cast<Eigen::Index>(free_[static_cast<std::size_t>(d)])] = iv.center() + iv.radius() * u;
            }
            X(row, m) = 1.0;
            fit_maps_[idx] = inverse_map(mu);
        }
        pinv_ = (X.transpose() * X).ldlt().solve(X.transpose());
    }

    // Inverse warp for fixed parameters as an affine map of (l, k), anchor removed.
    [[nodiscard]] Eigen::Matrix<double, 2, 3> inverse_map(const Eigen::VectorXd& mu) const {
        std::span<const double> m(mu.data(), static_cast<std::size_t>(mu.size()));
        Point2 o = spatial_inverse(t_, m, 0.0, 0.0);
        Point2 er = spatial_inverse(t_, m, 1.0, 0.0);
        Point2 ec = spatial_inverse(t_, m, 0.0, 1.0);
        Eigen::Matrix<double, 2, 3> a;
        a << er.row - o.row, ec.row - o.row, o.row - s_.anchor_row, er.col - o.col, ec.col - o.col, o.col - s_.anchor_col;
        return a;
    }

    [[nodiscard]] Eigen::MatrixXd sample_values(int l, int k) const {
        Eigen::MatrixXd Y(static_cast<Eigen::Index>(fit_maps_.size()), 4);
        Eigen::Vector3d p(l, k, 1.0);
        for (std::size_t i = 0; i < fit_maps_.size(); ++i) {
            Eigen::Vector2d src = fit_maps_[i] * p;
            auto v = sampler_.values(src[0], src[1]);
            auto ii = static_cast<Eigen::Index>(i);
            for (int ch = 0; ch < 4; ++ch) {
                double x = v[static_cast<std::size_t>(ch)];
                Y(ii, ch) = ch < kColorChannels ? apply_intensity(t_, x) : x;
            }
        }
        return Y;
    }

    [[nodiscard]] double violation(const Plane1& p, const UCell& c, Interval v, bool upper) const {
        return upper ? v.hi - p.min_over(c) : p.max_over(c) - v.lo;
    }

    // Smallest intercept offset making the plane a sound upper (lower) bound, tightened by
    // splitting the worst cells.
    double shift(const Plane1& p, const std::vector<std::array<Interval, 4>>& vals, std::size_t ch, int l, int k,
                 bool upper) const {
        using Entry = std::pair<double, std::size_t>;
        std::vector<UCell> pool = cells_;
        std::priority_queue<Entry> queue;
        for (std::size_t i = 0; i < pool.size(); ++i) queue.emplace(violation(p, pool[i], vals[i][ch], upper), i);
        const auto m = static_cast<Eigen::Index>(free_.size());
        for (int splits = 0; splits < cfg_.refine_budget; ++splits) {
            auto [worst, id] = queue.top();
            UCell parent = pool[id];
            if (parent.depth >= cfg_.max_refine_depth) break;
            queue.pop();
            for (long mask = 0; mask < (1L << m); ++mask) {
                UCell child{parent.center, parent.half / 2.0, parent.depth + 1};
                for (Eigen::Index j = 0; j < m; ++j) child.center[j] += ((mask >> j) & 1 ? 1.0 : -1.0) * child.half[j];
                auto r = cell_ranges(sampler_, s_, t_, to_box(child), l, k);
                // Sub-cell ranges never exceed the parent's, so the violation cannot grow.
                double v = std::min(worst, violation(p, child, r[ch], upper));
                pool.push_back(child);
                queue.emplace(v, pool.size() - 1);
            }
        }
        return queue.top().first;
    }

    const Sprite& s_;
    const TransformSpec& t_;
    Box K_;
    GeoBoundSettings cfg_;
    SpriteSampler sampler_;
    std::vector<std::size_t> free_;
    std::vector<UCell> cells_;
    std::vector<Eigen::Matrix<double, 2, 3>> fit_maps_;
    Eigen::MatrixXd pinv_;
};

}  // namespace detail

/// Sound per-pixel affine bounds for the sprite transformed by any parameter in K.
inline PixelBoundSet pixel_bounds(const Sprite& s, const TransformSpec& t, const Box& K,
                                  const GeoBoundSettings& settings = {}) {
    settings.validate();
    if (K.size() == 0) throw BoundsError("pixel_bounds: empty parameter box");
    if (static_cast<int>(K.size()) != t.param_dim()) {
        throw BoundsError("pixel_bounds: parameter box has " + std::to_string(K.size()) + " dimensions, transform needs " +
                          std::to_string(t.param_dim()));
    }
    const int H = s.height(), W = s.width();
    const auto d = static_cast<Eigen::Index>(K.size());
    const Eigen::Index nv = static_cast<Eigen::Index>(H) * W * kColorChannels, na = static_cast<Eigen::Index>(H) * W;
    LinearMap vlo = LinearMap::zero(nv, d), vhi = vlo, alo = LinearMap::zero(na, d), ahi = alo;

    detail::PixelBounder bounder(s, t, K, settings);
    parallel_for(static_cast<std::size_t>(H), [&](std::size_t li) {
        int l = static_cast<int>(li);
        for (int k = 0; k < W; ++k) {
            auto rows = bounder.bound_pixel(l, k);
            Eigen::Index p = static_cast<Eigen::Index>(l) * W + k;
            for (int ch = 0; ch < 4; ++ch) {
                const auto& r = rows[static_cast<std::size_t>(ch)];
                LinearMap& lo = ch < kColorChannels ? vlo : alo;
                LinearMap& hi = ch < kColorChannels ? vhi : ahi;
                Eigen::Index row = ch < kColorChannels ? p * kColorChannels + ch : p;
                lo.weights.row(row) = r.lo_w.transpose();
                lo.bias[row] = r.lo_b;
                hi.weights.row(row) = r.hi_w.transpose();
                hi.bias[row] = r.hi_b;
            }
        }
    });
    return {H, W, LinearBounds(std::move(vlo), std::move(vhi), K), LinearBounds(std::move(alo), std::move(ahi), K)};
}

}  // namespace geocert
