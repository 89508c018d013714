// Copyright (c) geocert contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>

#include "geocert/bounds.hpp"

namespace geocert {

enum class ScalarFn { relu, tanh, sigmoid, sin, cos, square, reciprocal };

inline std::string_view to_string(ScalarFn fn) {
    switch (fn) {
        case ScalarFn::relu: return "relu";
        case ScalarFn::tanh: return "tanh";
        case ScalarFn::sigmoid: return "sigmoid";
        case ScalarFn::sin: return "sin";
        case ScalarFn::cos: return "cos";
        case ScalarFn::square: return "square";
        case ScalarFn::reciprocal: return "reciprocal";
    }
    return "?";
}

inline ScalarFn scalar_fn_from_string(std::string_view s) {
    for (auto fn : {ScalarFn::relu, ScalarFn::tanh, ScalarFn::sigmoid, ScalarFn::sin, ScalarFn::cos, ScalarFn::square,
                    ScalarFn::reciprocal}) {
        if (to_string(fn) == s) return fn;
    }
    throw std::invalid_argument("unknown scalar function '" + std::string(s) + "'");
}

inline double eval_scalar(ScalarFn fn, double z) {
    switch (fn) {
        case ScalarFn::relu: return z > 0.0 ? z : 0.0;
        case ScalarFn::tanh: return std::tanh(z);
        case ScalarFn::sigmoid: return 1.0 / (1.0 + std::exp(-z));
        case ScalarFn::sin: return std::sin(z);
        case ScalarFn::cos: return std::cos(z);
        case ScalarFn::square: return z * z;
        case ScalarFn::reciprocal:
            if (z == 0.0) throw std::domain_error("reciprocal of zero");
            return 1.0 / z;
    }
    return 0.0;
}

/// Two lines sandwiching a scalar function over `input`.
struct ScalarRelaxation {
    double lower_slope = 0.0;
    double lower_intercept = 0.0;
    double upper_slope = 0.0;
    double upper_intercept = 0.0;
    Interval input;

    [[nodiscard]] double lower_at(double z) const { return lower_slope * z + lower_intercept; }
    [[nodiscard]] double upper_at(double z) const { return upper_slope * z + upper_intercept; }
};

namespace detail {

struct Line {
    double slope;
    double intercept;
};

inline Line chord(double x0, double y0, double x1, double y1) {
    double k = (y1 - y0) / (x1 - x0);
    return {k, y0 - k * x0};
}

inline Line tangent(double x, double y, double dy) { return {dy, y - dy * x}; }

// Function value and derivative on a smooth piece.
struct Smooth {
    double (*f)(double);
    double (*df)(double);
};

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }
inline double dsigmoid(double z) {
    double s = sigmoid(z);
    return s * (1.0 - s);
}
inline double dtanh(double z) {
    double t = std::tanh(z);
    return 1.0 - t * t;
}
inline double tanh_fn(double z) { return std::tanh(z); }
inline double sin_fn(double z) { return std::sin(z); }
inline double cos_fn(double z) { return std::cos(z); }
inline double neg_sin(double z) { return -std::sin(z); }
inline double neg_cos(double z) { return -std::cos(z); }
inline double square_fn(double z) { return z * z; }
inline double dsquare(double z) { return 2.0 * z; }
inline double recip(double z) { return 1.0 / z; }
inline double drecip(double z) { return -1.0 / (z * z); }

inline constexpr int kTangentSearchIterations = 50;

inline ScalarRelaxation with_slack(Line lower, Line upper, Interval in) {
    return {lower.slope, lower.intercept - kSoundnessSlack, upper.slope, upper.intercept + kSoundnessSlack, in};
}

// Convex on `in`: chord above, tangent at midpoint below.
inline ScalarRelaxation relax_convex(Smooth s, Interval in) {
    double m = in.center();
    Line up = chord(in.lo, s.f(in.lo), in.hi, s.f(in.hi));
    Line lo = tangent(m, s.f(m), s.df(m));
    return with_slack(lo, up, in);
}

// Concave on `in`: chord below, tangent at midpoint above.
inline ScalarRelaxation relax_concave(Smooth s, Interval in) {
    double m = in.center();
    Line lo = chord(in.lo, s.f(in.lo), in.hi, s.f(in.hi));
    Line up = tangent(m, s.f(m), s.df(m));
    return with_slack(lo, up, in);
}

// Convex left of `p`, concave right of `p`, with lo < p < hi and both pieces
// covering the whole interval.
inline ScalarRelaxation relax_s_shaped(Smooth s, Interval in, double p) {
    const double lo = in.lo, hi = in.hi;
    const double flo = s.f(lo), fhi = s.f(hi);

    // Upper: tangent at d in [p, hi] passing above (lo, f(lo)). gap(d) is increasing in d.
    auto upper_gap = [&](double d) { return s.f(d) + s.df(d) * (lo - d) - flo; };
    Line up{};
    if (upper_gap(hi) < 0.0) {
        up = chord(lo, flo, hi, fhi);
    } else {
        double a = p, b = hi;
        for (int it = 0; it < kTangentSearchIterations; ++it) {
            double m = 0.5 * (a + b);
            (upper_gap(m) >= 0.0 ? b : a) = m;
        }
        up = tangent(b, s.f(b), s.df(b));
    }

    // Lower: tangent at d in [lo, p] passing below (hi, f(hi)). gap(d) is decreasing in d.
    auto lower_gap = [&](double d) { return fhi - s.f(d) - s.df(d) * (hi - d); };
    Line dn{};
    if (lower_gap(lo) < 0.0) {
        dn = chord(lo, flo, hi, fhi);
    } else {
        double a = lo, b = p;
        for (int it = 0; it < kTangentSearchIterations; ++it) {
            double m = 0.5 * (a + b);
            (lower_gap(m) >= 0.0 ? a : b) = m;
        }
        dn = tangent(a, s.f(a), s.df(a));
    }
    return with_slack(dn, up, in);
}

inline ScalarRelaxation negate(const ScalarRelaxation& r) {
    return {-r.upper_slope, -r.upper_intercept, -r.lower_slope, -r.lower_intercept, r.input};
}

inline ScalarRelaxation constant_relaxation(double lo, double hi, Interval in, bool slack) {
    double e = slack ? kSoundnessSlack : 0.0;
    return {0.0, lo - e, 0.0, hi + e, in};
}

inline Interval cos_range(Interval in) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    if (in.width() >= two_pi) return {-1.0, 1.0};
    double a = std::cos(in.lo), b = std::cos(in.hi);
    double lo = std::min(a, b), hi = std::max(a, b);
    // Maxima at 2k*pi, minima at (2k+1)*pi.
    if (std::floor(in.hi / two_pi) > std::floor(in.lo / two_pi) || std::fmod(in.lo, two_pi) == 0.0) hi = 1.0;
    double shifted_lo = in.lo - std::numbers::pi, shifted_hi = in.hi - std::numbers::pi;
    if (std::floor(shifted_hi / two_pi) > std::floor(shifted_lo / two_pi)) lo = -1.0;
    return {lo, hi};
}

// Relaxation of sin on an arbitrary interval using its curvature regions
// [k*pi, (k+1)*pi] (concave for even k, convex for odd k).
inline ScalarRelaxation relax_sin(Interval in) {
    constexpr double pi = std::numbers::pi;
    Smooth s{sin_fn, cos_fn};
    if (in.width() > pi) {
        Interval r = cos_range({in.lo - pi / 2, in.hi - pi / 2});
        return constant_relaxation(r.lo, r.hi, in, true);
    }
    double k = std::floor(in.lo / pi);
    double boundary = (k + 1.0) * pi;
    bool even = std::fmod(std::abs(k), 2.0) == 0.0;
    if (in.hi <= boundary) {
        return even ? relax_concave(s, in) : relax_convex(s, in);
    }
    if (even) {
        // Concave then convex: -sin is S-shaped around the boundary.
        return negate(relax_s_shaped(Smooth{neg_sin, neg_cos}, in, boundary));
    }
    return relax_s_shaped(s, in, boundary);
}

}  // namespace detail

/// Exact range of cos over an interval.
inline Interval cos_range(Interval in) { return detail::cos_range(in); }
/// Exact range of sin over an interval.
inline Interval sin_range(Interval in) {
    return detail::cos_range({in.lo - std::numbers::pi / 2, in.hi - std::numbers::pi / 2});
}

/// Sound two-sided linear relaxation of `fn` over `input`. Exact when `fn` is affine on
/// the interval or the interval is a single point.
inline ScalarRelaxation relax_scalar(ScalarFn fn, Interval input) {
    using namespace detail;
    if (fn == ScalarFn::reciprocal && input.lo <= 0.0 && input.hi >= 0.0) {
        throw RefinementNeeded("reciprocal input interval [" + std::to_string(input.lo) + ", " +
                               std::to_string(input.hi) + "] contains zero");
    }
    if (input.degenerate()) {
        double v = eval_scalar(fn, input.lo);
        return constant_relaxation(v, v, input, false);
    }
    switch (fn) {
        case ScalarFn::relu: {
            if (input.lo >= 0.0) return {1.0, 0.0, 1.0, 0.0, input};
            if (input.hi <= 0.0) return {0.0, 0.0, 0.0, 0.0, input};
            Line up = chord(input.lo, 0.0, input.hi, input.hi);
            Line lo = input.hi >= -input.lo ? Line{1.0, 0.0} : Line{0.0, 0.0};
            return with_slack(lo, up, input);
        }
        case ScalarFn::tanh:
        case ScalarFn::sigmoid: {
            Smooth s = fn == ScalarFn::tanh ? Smooth{tanh_fn, dtanh} : Smooth{sigmoid, dsigmoid};
            if (input.hi <= 0.0) return relax_convex(s, input);
            if (input.lo >= 0.0) return relax_concave(s, input);
            return relax_s_shaped(s, input, 0.0);
        }
        case ScalarFn::sin: return relax_sin(input);
        case ScalarFn::cos: {
            // cos(z) = sin(z + pi/2)
            constexpr double h = std::numbers::pi / 2;
            ScalarRelaxation r = relax_sin({input.lo + h, input.hi + h});
            r.lower_intercept += r.lower_slope * h - kSoundnessSlack;
            r.upper_intercept += r.upper_slope * h + kSoundnessSlack;
            r.input = input;
            return r;
        }
        case ScalarFn::square: return relax_convex(Smooth{square_fn, dsquare}, input);
        case ScalarFn::reciprocal:
            return input.lo > 0.0 ? relax_convex(Smooth{recip, drecip}, input)
                                  : relax_concave(Smooth{recip, drecip}, input);
    }
    throw std::logic_error("unhandled scalar function");
}

/// Plane a*x + b*y + c in the two factors of a product.
struct Plane {
    double a = 0.0;
    double b = 0.0;
    double c = 0.0;
    [[nodiscard]] double at(double x, double y) const { return a * x + b * y + c; }
};

/// The four McCormick planes for x*y over x_range * y_range.
struct McCormickEnvelope {
    std::array<Plane, 2> lower;
    std::array<Plane, 2> upper;
    Interval x_range;
    Interval y_range;

    [[nodiscard]] double lower_at(double x, double y) const { return std::max(lower[0].at(x, y), lower[1].at(x, y)); }
    [[nodiscard]] double upper_at(double x, double y) const { return std::min(upper[0].at(x, y), upper[1].at(x, y)); }

    /// Equal-weight combination of the two planes on each side. The two planes of a side
    /// always agree at the box center, so the midpoint cannot separate them.
    [[nodiscard]] Plane lower_mid() const { return average(lower[0], lower[1]); }
    [[nodiscard]] Plane upper_mid() const { return average(upper[0], upper[1]); }

    /// Midpoint planes as LinearBounds over (x, y).
    [[nodiscard]] LinearBounds midpoint_bounds() const {
        Plane l = lower_mid(), u = upper_mid();
        Eigen::MatrixXd wl(1, 2), wu(1, 2);
        wl << l.a, l.b;
        wu << u.a, u.b;
        return {LinearMap(wl, Eigen::VectorXd::Constant(1, l.c)), LinearMap(wu, Eigen::VectorXd::Constant(1, u.c)),
                Box{x_range, y_range}};
    }

  private:
    static Plane average(const Plane& p, const Plane& q) {
        return {0.5 * (p.a + q.a), 0.5 * (p.b + q.b), 0.5 * (p.c + q.c)};
    }
};

inline McCormickEnvelope mccormick(Interval x, Interval y) {
    McCormickEnvelope e;
    e.x_range = x;
    e.y_range = y;
    if (x.degenerate()) {
        Plane p{0.0, x.lo, 0.0};
        e.lower = {p, p};
        e.upper = {p, p};
        return e;
    }
    if (y.degenerate()) {
        Plane p{y.lo, 0.0, 0.0};
        e.lower = {p, p};
        e.upper = {p, p};
        return e;
    }
    // x*y >= xl*y + yl*x - xl*yl  and  x*y >= xu*y + yu*x - xu*yu
    e.lower = {Plane{y.lo, x.lo, -x.lo * y.lo}, Plane{y.hi, x.hi, -x.hi * y.hi}};
    // x*y <= xu*y + yl*x - xu*yl  and  x*y <= xl*y + yu*x - xl*yu
    e.upper = {Plane{y.lo, x.hi, -x.hi * y.lo}, Plane{y.hi, x.lo, -x.lo * y.hi}};
    return e;
}

}  // namespace geocert
