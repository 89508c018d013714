// Copyright (c) geocert contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace geocert {

/// Slack added to the intercept of every relaxation line that is not exact.
inline constexpr double kSoundnessSlack = 1e-9;

/// Shape or domain mismatch between bound containers.
class BoundsError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// A relaxation could not be formed because an interval reached a singularity
/// (reciprocal through zero). The caller has to shrink the input set.
class RefinementNeeded : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct Interval {
    double lo = 0.0;
    double hi = 0.0;

    Interval() = default;
    Interval(double lo_, double hi_) : lo(lo_), hi(hi_) {
        if (!std::isfinite(lo) || !std::isfinite(hi) || lo > hi) {
            std::ostringstream os;
            os << "invalid interval [" << lo << ", " << hi << "]";
            throw BoundsError(os.str());
        }
    }
    static Interval point(double v) { return {v, v}; }

    [[nodiscard]] double width() const { return hi - lo; }
    [[nodiscard]] double center() const { return 0.5 * (lo + hi); }
    [[nodiscard]] double radius() const { return 0.5 * (hi - lo); }
    [[nodiscard]] bool degenerate() const { return lo == hi; }
    [[nodiscard]] bool contains(double v, double tol = 0.0) const { return v >= lo - tol && v <= hi + tol; }
    [[nodiscard]] bool contains(const Interval& o) const { return o.lo >= lo && o.hi <= hi; }

    friend bool operator==(const Interval&, const Interval&) = default;
};

inline Interval hull(const Interval& a, const Interval& b) {
    return {std::min(a.lo, b.lo), std::max(a.hi, b.hi)};
}

/// Intersection; throws if empty.
inline Interval intersect(const Interval& a, const Interval& b) {
    double lo = std::max(a.lo, b.lo);
    double hi = std::min(a.hi, b.hi);
    if (lo > hi) {
        throw BoundsError("empty interval intersection");
    }
    return {lo, hi};
}

inline Interval operator+(const Interval& a, const Interval& b) { return {a.lo + b.lo, a.hi + b.hi}; }
inline Interval operator-(const Interval& a, const Interval& b) { return {a.lo - b.hi, a.hi - b.lo}; }
inline Interval operator*(double s, const Interval& a) {
    return s >= 0 ? Interval{s * a.lo, s * a.hi} : Interval{s * a.hi, s * a.lo};
}
inline Interval operator*(const Interval& a, const Interval& b) {
    double p[4] = {a.lo * b.lo, a.lo * b.hi, a.hi * b.lo, a.hi * b.hi};
    return {*std::min_element(p, p + 4), *std::max_element(p, p + 4)};
}

/// Axis-aligned box. A zero-dimensional box is the single point of R^0.
class Box {
  public:
    Box() = default;
    explicit Box(std::vector<Interval> dims) : dims_(std::move(dims)) {}
    Box(std::initializer_list<Interval> dims) : dims_(dims) {}

    static Box from_bounds(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
        if (lo.size() != hi.size()) {
            throw BoundsError("box bound vectors differ in length");
        }
        std::vector<Interval> d;
        d.reserve(static_cast<std::size_t>(lo.size()));
        for (Eigen::Index i = 0; i < lo.size(); ++i) {
            d.emplace_back(lo[i], hi[i]);
        }
        return Box(std::move(d));
    }
    static Box point(const Eigen::VectorXd& p) { return from_bounds(p, p); }

    [[nodiscard]] std::size_t size() const { return dims_.size(); }
    const Interval& operator[](std::size_t i) const { return dims_[i]; }
    Interval& operator[](std::size_t i) { return dims_[i]; }
    [[nodiscard]] const std::vector<Interval>& dims() const { return dims_; }
    auto begin() const { return dims_.begin(); }
    auto end() const { return dims_.end(); }

    [[nodiscard]] Eigen::VectorXd lower() const {
        Eigen::VectorXd v(size());
        for (std::size_t i = 0; i < size(); ++i) v[i] = dims_[i].lo;
        return v;
    }
    [[nodiscard]] Eigen::VectorXd upper() const {
        Eigen::VectorXd v(size());
        for (std::size_t i = 0; i < size(); ++i) v[i] = dims_[i].hi;
        return v;
    }
    [[nodiscard]] Eigen::VectorXd center() const { return 0.5 * (lower() + upper()); }
    [[nodiscard]] Eigen::VectorXd radius() const { return 0.5 * (upper() - lower()); }
    [[nodiscard]] Eigen::VectorXd widths() const { return upper() - lower(); }
    [[nodiscard]] double max_width() const {
        double w = 0.0;
        for (const auto& d : dims_) w = std::max(w, d.width());
        return w;
    }
    [[nodiscard]] bool degenerate() const {
        return std::all_of(dims_.begin(), dims_.end(), [](const Interval& d) { return d.degenerate(); });
    }
    [[nodiscard]] bool contains(const Eigen::VectorXd& p, double tol = 0.0) const {
        if (static_cast<std::size_t>(p.size()) != size()) return false;
        for (std::size_t i = 0; i < size(); ++i) {
            if (!dims_[i].contains(p[static_cast<Eigen::Index>(i)], tol)) return false;
        }
        return true;
    }
    [[nodiscard]] bool contains(const Box& o) const {
        if (o.size() != size()) return false;
        for (std::size_t i = 0; i < size(); ++i) {
            if (!dims_[i].contains(o[i])) return false;
        }
        return true;
    }
    /// Sub-box of consecutive dimensions [offset, offset + count).
    [[nodiscard]] Box slice(std::size_t offset, std::size_t count) const {
        if (offset + count > size()) throw BoundsError("box slice out of range");
        return Box(std::vector<Interval>(dims_.begin() + static_cast<std::ptrdiff_t>(offset),
                                         dims_.begin() + static_cast<std::ptrdiff_t>(offset + count)));
    }

    friend bool operator==(const Box&, const Box&) = default;

  private:
    std::vector<Interval> dims_;
};

inline Box concat(const Box& a, const Box& b) {
    std::vector<Interval> d = a.dims();
    d.insert(d.end(), b.begin(), b.end());
    return Box(std::move(d));
}

inline Box intersect(const Box& a, const Box& b) {
    if (a.size() != b.size()) throw BoundsError("box intersection dimension mismatch");
    std::vector<Interval> d;
    for (std::size_t i = 0; i < a.size(); ++i) d.push_back(intersect(a[i], b[i]));
    return Box(std::move(d));
}

/// Affine map x -> weights * x + bias.
struct LinearMap {
    Eigen::MatrixXd weights;
    Eigen::VectorXd bias;

    LinearMap() = default;
    LinearMap(Eigen::MatrixXd w, Eigen::VectorXd b) : weights(std::move(w)), bias(std::move(b)) {
        if (weights.rows() != bias.size()) {
            throw BoundsError("linear map: weight rows != bias length");
        }
    }
    static LinearMap zero(Eigen::Index rows, Eigen::Index cols) {
        return {Eigen::MatrixXd::Zero(rows, cols), Eigen::VectorXd::Zero(rows)};
    }
    static LinearMap constant(const Eigen::VectorXd& b, Eigen::Index cols) {
        return {Eigen::MatrixXd::Zero(b.size(), cols), b};
    }

    [[nodiscard]] Eigen::Index rows() const { return weights.rows(); }
    [[nodiscard]] Eigen::Index cols() const { return weights.cols(); }
    [[nodiscard]] Eigen::VectorXd operator()(const Eigen::VectorXd& x) const { return weights * x + bias; }
};

/// Element-wise affine lower/upper functions of a parameter vector valid over `domain`.
struct LinearBounds {
    LinearMap lower;
    LinearMap upper;
    Box domain;

    LinearBounds() = default;
    LinearBounds(LinearMap lo, LinearMap up, Box dom) : lower(std::move(lo)), upper(std::move(up)), domain(std::move(dom)) {
        validate();
    }

    void validate() const {
        if (lower.rows() != upper.rows() || lower.cols() != upper.cols()) {
            throw BoundsError("linear bounds: lower/upper shapes differ");
        }
        if (lower.weights.rows() != lower.bias.size() || upper.weights.rows() != upper.bias.size()) {
            throw BoundsError("linear bounds: weight rows != bias length");
        }
        if (static_cast<std::size_t>(lower.cols()) != domain.size()) {
            throw BoundsError("linear bounds: map columns (" + std::to_string(lower.cols()) +
                              ") != domain dimension (" + std::to_string(domain.size()) + ")");
        }
    }

    /// Exact bounds for an affine function: lower == upper == map.
    static LinearBounds exact(const LinearMap& map, const Box& domain) { return {map, map, domain}; }
    static LinearBounds constant(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi, const Box& domain) {
        auto d = static_cast<Eigen::Index>(domain.size());
        return {LinearMap::constant(lo, d), LinearMap::constant(hi, d), domain};
    }

    [[nodiscard]] Eigen::Index rows() const { return lower.rows(); }
    [[nodiscard]] Eigen::Index dim() const { return lower.cols(); }
};

namespace detail {

inline Eigen::VectorXd concretize_rows(const LinearMap& m, const Box& domain, bool minimize) {
    Eigen::VectorXd c = domain.center();
    Eigen::VectorXd r = domain.radius();
    Eigen::VectorXd mid = m.weights * c + m.bias;
    Eigen::VectorXd spread = m.weights.cwiseAbs() * r;
    return minimize ? Eigen::VectorXd(mid - spread) : Eigen::VectorXd(mid + spread);
}

}  // namespace detail

/// Per row: [min of lower over the domain, max of upper over the domain].
inline Box concretize(const LinearBounds& lb) {
    lb.validate();
    Eigen::VectorXd lo = detail::concretize_rows(lb.lower, lb.domain, true);
    Eigen::VectorXd hi = detail::concretize_rows(lb.upper, lb.domain, false);
    std::vector<Interval> out;
    out.reserve(static_cast<std::size_t>(lo.size()));
    for (Eigen::Index i = 0; i < lo.size(); ++i) {
        double a = lo[i], b = hi[i];
        if (a > b) {
            // Crossing by rounding on degenerate bounds is tolerated; anything larger is a bug.
            if (a - b > 1e-7 * (1.0 + std::abs(a) + std::abs(b))) {
                throw BoundsError("concretize: lower bound above upper bound in row " + std::to_string(i));
            }
            std::swap(a, b);
        }
        out.emplace_back(a, b);
    }
    return Box(std::move(out));
}

/// Rows of `lb` selected by index, same domain.
inline LinearBounds select_rows(const LinearBounds& lb, const std::vector<Eigen::Index>& rows) {
    auto d = lb.dim();
    LinearMap lo = LinearMap::zero(static_cast<Eigen::Index>(rows.size()), d);
    LinearMap up = lo;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto r = rows[i];
        auto ii = static_cast<Eigen::Index>(i);
        lo.weights.row(ii) = lb.lower.weights.row(r);
        lo.bias[ii] = lb.lower.bias[r];
        up.weights.row(ii) = lb.upper.weights.row(r);
        up.bias[ii] = lb.upper.bias[r];
    }
    return {std::move(lo), std::move(up), lb.domain};
}

/// Stacks bounds that share a domain.
inline LinearBounds stack_rows(const LinearBounds& a, const LinearBounds& b) {
    if (a.domain.size() != b.domain.size()) throw BoundsError("stack_rows: domain dimension mismatch");
    auto d = a.dim();
    auto n = a.rows() + b.rows();
    LinearMap lo = LinearMap::zero(n, d);
    LinearMap up = lo;
    lo.weights << a.lower.weights, b.lower.weights;
    lo.bias << a.lower.bias, b.lower.bias;
    up.weights << a.upper.weights, b.upper.weights;
    up.bias << a.upper.bias, b.upper.bias;
    return {std::move(lo), std::move(up), a.domain};
}

/// Re-expresses bounds over `new_domain`, placing the old parameters at column `offset`.
inline LinearBounds lift(const LinearBounds& lb, const Box& new_domain, Eigen::Index offset) {
    auto d = static_cast<Eigen::Index>(new_domain.size());
    if (offset + lb.dim() > d) throw BoundsError("lift: block exceeds new domain");
    LinearMap lo = LinearMap::zero(lb.rows(), d);
    LinearMap up = lo;
    lo.weights.middleCols(offset, lb.dim()) = lb.lower.weights;
    up.weights.middleCols(offset, lb.dim()) = lb.upper.weights;
    lo.bias = lb.lower.bias;
    up.bias = lb.upper.bias;
    return {std::move(lo), std::move(up), new_domain};
}

/// Given bounds on f(k) over k in K and bounds on k(x) over X (K must contain the range
/// of k over X), returns bounds on f(k(x)) as functions of x.
inline LinearBounds substitute(const LinearBounds& outer, const LinearBounds& inner) {
    if (outer.dim() != inner.rows()) throw BoundsError("substitute: inner rows != outer domain dimension");
    Eigen::MatrixXd lp = outer.lower.weights.cwiseMax(0.0);
    Eigen::MatrixXd ln = outer.lower.weights.cwiseMin(0.0);
    Eigen::MatrixXd up = outer.upper.weights.cwiseMax(0.0);
    Eigen::MatrixXd un = outer.upper.weights.cwiseMin(0.0);
    LinearMap lo(lp * inner.lower.weights + ln * inner.upper.weights,
                 outer.lower.bias + lp * inner.lower.bias + ln * inner.upper.bias);
    LinearMap hi(up * inner.upper.weights + un * inner.lower.weights,
                 outer.upper.bias + up * inner.upper.bias + un * inner.lower.bias);
    return {std::move(lo), std::move(hi), inner.domain};
}

}  // namespace geocert
