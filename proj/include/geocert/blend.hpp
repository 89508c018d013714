// Copyright (c) geocert contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "geocert/bounds.hpp"
#include "geocert/geo_bounds.hpp"
#include "geocert/relax.hpp"
#include "geocert/scene.hpp"

namespace geocert {

/// Pixel-wise bounds on the composited observation over the concatenated parameter box.
struct ObservationBounds {
    int height = 0;
    int width = 0;
    LinearBounds bounds;  // rows (l * W + k) * 3 + c
};

namespace detail {

// Affine lower/upper rows of a quantity over the shared parameter domain.
struct AffineRange {
    Eigen::RowVectorXd lw, uw;
    double lb = 0.0, ub = 0.0;
};

// Bounds on x * y, given affine bounds on both factors, using the McCormick plane whose
// substituted form is best at the domain center.
inline AffineRange relax_product(const AffineRange& x, const AffineRange& y, const Eigen::VectorXd& center,
                                 const Eigen::VectorXd& radius) {
    auto range_of = [&](const AffineRange& v) {
        double lo = v.lw.dot(center) + v.lb - v.lw.cwiseAbs().dot(radius);
        double hi = v.uw.dot(center) + v.ub + v.uw.cwiseAbs().dot(radius);
        if (lo > hi) std::swap(lo, hi);
        return Interval(lo, hi);
    };
    Interval X = range_of(x), Y = range_of(y);
    McCormickEnvelope env = mccormick(X, Y);
    bool exact = X.degenerate() || Y.degenerate();
    double slack = exact ? 0.0 : kSoundnessSlack;

    auto substitute_plane = [&](const Plane& p, bool lower) {
        AffineRange r;
        bool ax = (p.a >= 0) == lower, by = (p.b >= 0) == lower;
        r.lw = p.a * (ax ? x.lw : x.uw) + p.b * (by ? y.lw : y.uw);
        r.lb = p.a * (ax ? x.lb : x.ub) + p.b * (by ? y.lb : y.ub) + p.c;
        return r;
    };
    AffineRange out;
    {
        AffineRange a = substitute_plane(env.lower[0], true), b = substitute_plane(env.lower[1], true);
        const AffineRange& best = a.lw.dot(center) + a.lb >= b.lw.dot(center) + b.lb ? a : b;
        out.lw = best.lw;
        out.lb = best.lb - slack;
    }
    {
        AffineRange a = substitute_plane(env.upper[0], false), b = substitute_plane(env.upper[1], false);
        const AffineRange& best = a.lw.dot(center) + a.lb <= b.lw.dot(center) + b.lb ? a : b;
        out.uw = best.lw;
        out.ub = best.lb + slack;
    }
    return out;
}

}  // namespace detail

/// Composites per-entity pixel bounds in scene order into bounds on the rendered
/// observation: B <- B * (1 - alpha_i) + alpha_i * Y_i, starting from the background.
inline ObservationBounds blend_bounds(const SceneConfig& scene, std::span<const PixelBoundSet> entity_bounds) {
    if (entity_bounds.size() != scene.entities.size()) {
        throw BoundsError("blend_bounds: " + std::to_string(entity_bounds.size()) + " bound sets for " +
                          std::to_string(scene.entities.size()) + " entities");
    }
    const int H = scene.height(), W = scene.width();
    std::vector<Interval> dims;
    for (std::size_t i = 0; i < entity_bounds.size(); ++i) {
        const auto& pb = entity_bounds[i];
        if (pb.height != H || pb.width != W) throw BoundsError("blend_bounds: entity bound image size differs from scene");
        if (static_cast<int>(pb.domain().size()) != scene.entities[i].transform.param_dim()) {
            throw BoundsError("blend_bounds: entity parameter dimension mismatch");
        }
        dims.insert(dims.end(), pb.domain().begin(), pb.domain().end());
    }
    Box kappa(std::move(dims));
    const auto D = static_cast<Eigen::Index>(kappa.size());
    const Eigen::Index N = static_cast<Eigen::Index>(H) * W * kColorChannels;
    Eigen::VectorXd center = kappa.center(), radius = kappa.radius();

    Eigen::MatrixXd lw = Eigen::MatrixXd::Zero(N, D), uw = lw;
    Eigen::VectorXd lb = scene.background.flatten(), ub = lb;

    Eigen::Index offset = 0;
    for (const auto& pb : entity_bounds) {
        const Eigen::Index d = static_cast<Eigen::Index>(pb.domain().size());
        const auto& vb = pb.value_bounds;
        const auto& ab = pb.alpha_bounds;
        parallel_for(static_cast<std::size_t>(N), [&](std::size_t ri) {
            auto r = static_cast<Eigen::Index>(ri);
            Eigen::Index p = r / kColorChannels;
            detail::AffineRange base{lw.row(r), uw.row(r), lb[r], ub[r]};
            detail::AffineRange alpha{Eigen::RowVectorXd::Zero(D), Eigen::RowVectorXd::Zero(D), ab.lower.bias[p], ab.upper.bias[p]};
            alpha.lw.segment(offset, d) = ab.lower.weights.row(p);
            alpha.uw.segment(offset, d) = ab.upper.weights.row(p);
            detail::AffineRange color{Eigen::RowVectorXd::Zero(D), Eigen::RowVectorXd::Zero(D), vb.lower.bias[r], vb.upper.bias[r]};
            color.lw.segment(offset, d) = vb.lower.weights.row(r);
            color.uw.segment(offset, d) = vb.upper.weights.row(r);
            detail::AffineRange keep{-alpha.uw, -alpha.lw, 1.0 - alpha.ub, 1.0 - alpha.lb};

            detail::AffineRange under = detail::relax_product(base, keep, center, radius);
            detail::AffineRange over = detail::relax_product(alpha, color, center, radius);
            lw.row(r) = under.lw + over.lw;
            uw.row(r) = under.uw + over.uw;
            lb[r] = under.lb + over.lb;
            ub[r] = under.ub + over.ub;
        });
        offset += d;
    }
    return {H, W, LinearBounds(LinearMap(std::move(lw), std::move(lb)), LinearMap(std::move(uw), std::move(ub)), kappa)};
}

}  // namespace geocert
