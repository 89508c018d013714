// Copyright (c) geocert contributors.
// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "geocert/envs.hpp"
#include "geocert/geo_bounds.hpp"
#include "geocert/scene.hpp"
#include "geocert/tensor_io.hpp"
#include "test_support.hpp"

namespace geocert {
namespace {

constexpr double kPi = std::numbers::pi;

double deg(double d) { return d * kPi / 180.0; }

Sprite solid_sprite(int h, int w, double r, double g, double b, double a) {
    Sprite s{Image(h, w, 3), Image(h, w, 1), 0.0, 0.0};
    for (int l = 0; l < h; ++l) {
        for (int k = 0; k < w; ++k) {
            s.canvas.at(l, k, 0) = r;
            s.canvas.at(l, k, 1) = g;
            s.canvas.at(l, k, 2) = b;
            s.alpha.at(l, k) = a;
        }
    }
    return s;
}

Sprite random_sprite(Rng& rng, int n, double density) {
    Sprite s{Image(n, n, 3), Image(n, n, 1), 0.0, 0.0};
    for (int l = 0; l < n; ++l) {
        for (int k = 0; k < n; ++k) {
            if (rng.uniform() > density) continue;
            for (int c = 0; c < 3; ++c) s.canvas.at(l, k, c) = rng.uniform();
            s.alpha.at(l, k) = rng.uniform();
        }
    }
    return s;
}

const TransformSpec kIdentityShift{TransformKind::translation, 0.0, 0.0, std::nullopt};

TEST(SpatialInverse, RotationByZeroIsIdentity) {
    TransformSpec t{TransformKind::rotation, 4.0, 6.0, std::nullopt};
    std::vector<double> mu{0.0};
    Point2 p = spatial_inverse(t, mu, 2.5, 9.0);
    EXPECT_DOUBLE_EQ(p.row, 2.5);
    EXPECT_DOUBLE_EQ(p.col, 9.0);
}

TEST(SpatialInverse, QuarterTurn) {
    TransformSpec t{TransformKind::rotation, 5.0, 5.0, std::nullopt};
    std::vector<double> mu{kPi / 2};
    Point2 p = spatial_inverse(t, mu, 5.0, 6.0);  // c + (0, 1)
    EXPECT_NEAR(p.row, 6.0, 1e-15);                // c + (1, 0)
    EXPECT_NEAR(p.col, 5.0, 1e-15);
}

TEST(SpatialInverse, Translation) {
    double mu[] = {2.0, 3.0};
    Point2 p = spatial_inverse(kIdentityShift, mu, 10, 10);
    EXPECT_EQ(p.row, 8.0);
    EXPECT_EQ(p.col, 7.0);
}

TEST(SpatialInverse, RotationThenTranslation) {
    TransformSpec t{TransformKind::rotation_then_translation, 5.0, 5.0, std::nullopt};
    double mu[] = {1.0, -2.0, kPi / 2};
    // p - c - (1, -2) = (0, 1); R(-pi/2) (0, 1) = (1, 0).
    Point2 p = spatial_inverse(t, mu, 6.0, 4.0);
    EXPECT_NEAR(p.row, 6.0, 1e-15);
    EXPECT_NEAR(p.col, 5.0, 1e-15);
    std::vector<double> bad{1.0};
    EXPECT_THROW(spatial_inverse(t, bad, 0, 0), std::invalid_argument);
}

TEST(SamplePixel, IntegerAlignedIsStoredValue) {
    Rng rng(1);
    Sprite s = random_sprite(rng, 6, 1.0);
    double mu[] = {0.0, 0.0};
    for (int l = 0; l < 6; ++l) {
        for (int k = 0; k < 6; ++k) {
            EXPECT_EQ(sample_pixel(s, kIdentityShift, mu, l, k, {1}), s.canvas.at(l, k, 1));
            EXPECT_EQ(sample_pixel(s, kIdentityShift, mu, l, k, Channel::alpha()), s.alpha.at(l, k));
        }
    }
}

TEST(SamplePixel, MidwayIsAverage) {
    Sprite s = solid_sprite(1, 2, 0, 0, 0, 0);
    s.canvas.at(0, 1, 0) = 1.0;
    double mu[] = {0.0, -0.5};  // output (0, 0) samples source (0, 0.5)
    EXPECT_DOUBLE_EQ(sample_pixel(s, kIdentityShift, mu, 0, 0, {0}), 0.5);
}

TEST(SamplePixel, OutsideCanvasIsZero) {
    Sprite s = solid_sprite(3, 3, 1, 1, 1, 1);
    double mu[] = {10.0, 0.0};
    EXPECT_EQ(sample_pixel(s, kIdentityShift, mu, 0, 0, {0}), 0.0);
    EXPECT_EQ(sample_pixel(s, kIdentityShift, mu, 0, 0, Channel::alpha()), 0.0);
}

TEST(SamplePixel, IntensityIsClampedAndSkipsAlpha) {
    Sprite s = solid_sprite(2, 2, 0.5, 0.5, 0.5, 0.5);
    TransformSpec t = kIdentityShift;
    t.intensity = Intensity{3.0, -0.2};
    double mu[] = {0.0, 0.0};
    EXPECT_EQ(sample_pixel(s, t, mu, 0, 0, {0}), 1.0);
    EXPECT_EQ(sample_pixel(s, t, mu, 0, 0, Channel::alpha()), 0.5);
    t.intensity = Intensity{0.5, 0.1};
    EXPECT_DOUBLE_EQ(sample_pixel(s, t, mu, 0, 0, {2}), 0.35);
}

// |p(mu + h) - p(mu)| <= L h with L = 2 (distance to the rotation center + 1): bilinear
// interpolation of [0, 1] data is 1-Lipschitz per source axis, and the source point moves
// at speed equal to its distance from the center.
TEST(SamplePixel, LipschitzInAngle) {
    Rng rng(3);
    Sprite s = random_sprite(rng, 12, 0.5);
    TransformSpec t{TransformKind::rotation, 5.5, 5.5, std::nullopt};
    const double h = 1e-4;
    for (int l = 0; l < 12; ++l) {
        for (int k = 0; k < 12; ++k) {
            double L = 2.0 * (std::hypot(l - 5.5, k - 5.5) + 1.0);
            for (int i = 0; i < 200; ++i) {
                std::vector<double> a{rng.uniform(-kPi, kPi)}, b{a[0] + h};
                double d = std::abs(sample_pixel(s, t, b, l, k, {0}) - sample_pixel(s, t, a, l, k, {0}));
                ASSERT_LE(d, L * h + 1e-12);
            }
        }
    }
}

TEST(Render, NoEntitiesGivesBackground) {
    Rng rng(4);
    SceneConfig scene{random_sprite(rng, 5, 1.0).canvas, {}};
    EXPECT_EQ(render(scene, {}), scene.background);
}

TEST(Render, OpaqueEntityOverBackground) {
    SceneConfig scene{Image(6, 6, 3, 0.2), {}};
    Sprite s = solid_sprite(6, 6, 0, 0, 0, 0);
    for (int l = 1; l < 4; ++l) {
        for (int k = 2; k < 5; ++k) {
            s.canvas.at(l, k, 0) = 0.9;
            s.canvas.at(l, k, 1) = 0.1 * l;
            s.canvas.at(l, k, 2) = 0.1 * k;
            s.alpha.at(l, k) = 1.0;
        }
    }
    scene.entities.push_back({"e", s, kIdentityShift, CompGraph(1)});
    std::vector<Eigen::VectorXd> mu{Eigen::Vector2d(0, 0)};
    Image out = render(scene, mu);
    for (int l = 0; l < 6; ++l) {
        for (int k = 0; k < 6; ++k) {
            for (int c = 0; c < 3; ++c) {
                double expect = s.alpha.at(l, k) == 1.0 ? s.canvas.at(l, k, c) : 0.2;
                EXPECT_DOUBLE_EQ(out.at(l, k, c), expect);
            }
        }
    }
}

TEST(Render, TwoEntitiesMatchHandExpansion) {
    Rng rng(5);
    SceneConfig scene{random_sprite(rng, 7, 1.0).canvas, {}};
    Sprite a = random_sprite(rng, 7, 0.8), b = random_sprite(rng, 7, 0.8);
    TransformSpec ta{TransformKind::rotation, 3.0, 3.0, std::nullopt};
    scene.entities.push_back({"a", a, ta, CompGraph(1)});
    scene.entities.push_back({"b", b, kIdentityShift, CompGraph(1)});
    Eigen::VectorXd ma = Eigen::VectorXd::Constant(1, 0.3), mb = Eigen::Vector2d(0.4, -0.7);
    std::vector<Eigen::VectorXd> mu{ma, mb};
    Image out = render(scene, mu);
    for (int l = 0; l < 7; ++l) {
        for (int k = 0; k < 7; ++k) {
            double a1 = sample_pixel(a, ta, std::span<const double>(ma.data(), 1), l, k, Channel::alpha());
            double a2 = sample_pixel(b, kIdentityShift, std::span<const double>(mb.data(), 2), l, k, Channel::alpha());
            for (int c = 0; c < 3; ++c) {
                double y1 = sample_pixel(a, ta, std::span<const double>(ma.data(), 1), l, k, {c});
                double y2 = sample_pixel(b, kIdentityShift, std::span<const double>(mb.data(), 2), l, k, {c});
                // Y0 (1 - a1)(1 - a2) + a1 Y1 (1 - a2) + a2 Y2
                double expect = scene.background.at(l, k, c) * (1 - a1) * (1 - a2) + a1 * y1 * (1 - a2) + a2 * y2;
                EXPECT_NEAR(out.at(l, k, c), expect, 1e-14);
            }
        }
    }
    // Opaque overlap: the later entity wins.
    SceneConfig opaque{Image(3, 3, 3, 0.0), {}};
    opaque.entities.push_back({"a", solid_sprite(3, 3, 1, 0, 0, 1), kIdentityShift, CompGraph(1)});
    opaque.entities.push_back({"b", solid_sprite(3, 3, 0, 1, 0, 1), kIdentityShift, CompGraph(1)});
    std::vector<Eigen::VectorXd> zero{Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero()};
    Image o = render(opaque, zero);
    EXPECT_EQ(o.at(1, 1, 0), 0.0);
    EXPECT_EQ(o.at(1, 1, 1), 1.0);
}

TEST(Render, OutputInUnitRangeAndAssociative) {
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        SceneConfig scene{random_sprite(rng, 8, 1.0).canvas, {}};
        TransformSpec t{TransformKind::rotation_then_translation, 3.5, 3.5, std::nullopt};
        for (int e = 0; e < 3; ++e) scene.entities.push_back({"e", random_sprite(rng, 8, 0.6), t, CompGraph(1)});
        std::vector<Eigen::VectorXd> mu;
        for (int e = 0; e < 3; ++e) mu.push_back(Eigen::Vector3d(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-kPi, kPi)));
        Image full = render(scene, mu);
        for (double v : full.data()) {
            ASSERT_GE(v, 0.0);
            ASSERT_LE(v, 1.0);
        }
        // Render the first two, then blend the third on top.
        SceneConfig prefix = scene;
        prefix.entities.pop_back();
        Image partial = render(prefix, std::span<const Eigen::VectorXd>(mu.data(), 2));
        composite_over(partial, transform_entity(scene.entities[2], std::span<const double>(mu[2].data(), 3), 8, 8));
        for (std::size_t i = 0; i < full.size(); ++i) ASSERT_NEAR(full.data()[i], partial.data()[i], 1e-14);
    }
}

TEST(Render, RejectsWrongParameterCount) {
    SceneConfig scene{Image(2, 2, 3), {}};
    scene.entities.push_back({"e", solid_sprite(2, 2, 1, 1, 1, 1), kIdentityShift, CompGraph(1)});
    EXPECT_THROW(render(scene, {}), std::invalid_argument);
}

// ---------------------------------------------------------------------------------------

TEST(IntervalPixel, DegenerateCellIsPointValue) {
    Rng rng(8);
    Sprite s = random_sprite(rng, 9, 0.7);
    TransformSpec t{TransformKind::rotation, 4.0, 4.0, std::nullopt};
    for (double a : {0.0, 0.3, 1.1, -2.0}) {
        std::vector<double> mu{a};
        for (int l = 0; l < 9; ++l) {
            for (int k = 0; k < 9; ++k) {
                Interval iv = interval_pixel(s, t, Box{{a, a}}, l, k, {0});
                double v = sample_pixel(s, t, mu, l, k, {0});
                ASSERT_TRUE(iv.contains(v));
                ASSERT_LE(iv.width(), 1e-6);
            }
        }
    }
}

TEST(IntervalPixel, SingleLitPixelArcSweep) {
    Sprite s = solid_sprite(11, 11, 0, 0, 0, 0);
    s.canvas.at(5, 9, 0) = 1.0;
    s.alpha.at(5, 9) = 1.0;
    TransformSpec t{TransformKind::rotation, 5.0, 5.0, std::nullopt};
    Box cell{{0.0, kPi / 2}};
    int lit = 0;
    for (int l = 0; l < 11; ++l) {
        for (int k = 0; k < 11; ++k) {
            Interval iv = interval_pixel(s, t, cell, l, k, {0});
            Interval ia = interval_pixel(s, t, cell, l, k, Channel::alpha());
            double hi = 0.0;
            for (int i = 0; i <= 1000; ++i) {
                std::vector<double> mu{kPi / 2 * i / 1000};
                double v = sample_pixel(s, t, mu, l, k, {0});
                hi = std::max(hi, v);
                ASSERT_TRUE(iv.contains(v)) << l << "," << k;
                ASSERT_TRUE(ia.contains(sample_pixel(s, t, mu, l, k, Channel::alpha())));
            }
            if (hi > 0.5) ++lit;
        }
    }
    EXPECT_GT(lit, 4);  // the sweep does traverse the arc
}

TEST(IntervalPixel, SubcellIsContainedInParent) {
    Rng rng(9);
    Sprite s = random_sprite(rng, 10, 0.5);
    TransformSpec t{TransformKind::rotation_then_translation, 4.5, 4.5, std::nullopt};
    for (int trial = 0; trial < 20; ++trial) {
        Box parent = testing::random_box(rng, 3, -1.0, 1.0, 1.0);
        std::vector<Interval> d;
        for (const auto& iv : parent) {
            double a = rng.uniform(iv.lo, iv.hi), b = rng.uniform(iv.lo, iv.hi);
            d.emplace_back(std::min(a, b), std::max(a, b));
        }
        Box child(d);
        for (int l = 0; l < 10; ++l) {
            for (int k = 0; k < 10; ++k) {
                for (Channel ch : {Channel{0}, Channel{2}, Channel::alpha()}) {
                    ASSERT_TRUE(interval_pixel(s, t, parent, l, k, ch).contains(interval_pixel(s, t, child, l, k, ch)));
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------------------

struct SweepStats {
    long violations = 0;
    double worst = 0.0;
};

// Checks every pixel row of `pb` at each sample mu against sample_pixel.
SweepStats sweep(const Sprite& s, const TransformSpec& t, const PixelBoundSet& pb, const std::vector<Eigen::VectorXd>& mus) {
    SweepStats st;
    const int H = pb.height, W = pb.width;
    for (const auto& mu : mus) {
        Eigen::VectorXd vl = pb.value_bounds.lower(mu), vu = pb.value_bounds.upper(mu);
        Eigen::VectorXd al = pb.alpha_bounds.lower(mu), au = pb.alpha_bounds.upper(mu);
        std::span<const double> m(mu.data(), static_cast<std::size_t>(mu.size()));
        for (int l = 0; l < H; ++l) {
            for (int k = 0; k < W; ++k) {
                Eigen::Index p = static_cast<Eigen::Index>(l) * W + k;
                auto check = [&](double v, double lo, double hi) {
                    double m1 = std::max(lo - v, v - hi);
                    if (m1 > 1e-9) {
                        ++st.violations;
                        st.worst = std::max(st.worst, m1);
                    }
                };
                for (int c = 0; c < 3; ++c) check(sample_pixel(s, t, m, l, k, {c}), vl[p * 3 + c], vu[p * 3 + c]);
                check(sample_pixel(s, t, m, l, k, Channel::alpha()), al[p], au[p]);
            }
        }
    }
    return st;
}

std::vector<Eigen::VectorXd> linspace_mu(Interval k, int n) {
    std::vector<Eigen::VectorXd> out;
    for (int i = 0; i < n; ++i) out.push_back(Eigen::VectorXd::Constant(1, i == n - 1 ? k.hi : k.lo + k.width() * i / (n - 1)));
    return out;
}

TEST(PixelBounds, DegenerateDomainIsExact) {
    EnvConfig env = make_pendulum(25);
    const Entity& e = env.scene.entities[0];
    const double a = deg(42.0);
    PixelBoundSet pb = pixel_bounds(e.sprite, e.transform, Box{{a, a}});
    Box v = concretize(pb.value_bounds), al = concretize(pb.alpha_bounds);
    std::vector<double> mu{a};
    for (int l = 0; l < 25; ++l) {
        for (int k = 0; k < 25; ++k) {
            std::size_t p = static_cast<std::size_t>(l * 25 + k);
            for (int c = 0; c < 3; ++c) {
                double x = sample_pixel(e.sprite, e.transform, mu, l, k, {c});
                ASSERT_NEAR(v[p * 3 + static_cast<std::size_t>(c)].lo, x, 1e-9);
                ASSERT_NEAR(v[p * 3 + static_cast<std::size_t>(c)].hi, x, 1e-9);
            }
            ASSERT_NEAR(al[p].lo, sample_pixel(e.sprite, e.transform, mu, l, k, Channel::alpha()), 1e-9);
            ASSERT_LE(al[p].width(), 1e-9);
        }
    }
}

TEST(PixelBounds, RotationRangeSweepHasNoViolations) {
    for (int size : {25, 50}) {
        EnvConfig env = make_pendulum(size);
        const Entity& e = env.scene.entities[0];
        Interval K(deg(40.0), deg(45.0));
        PixelBoundSet pb = pixel_bounds(e.sprite, e.transform, Box{K});
        SweepStats st = sweep(e.sprite, e.transform, pb, linspace_mu(K, 2001));
        EXPECT_EQ(st.violations, 0) << size << "px, worst " << st.worst;
    }
}

// Mean over the sweep of (upper - lower) per row, against the width of the constant
// interval interval_pixel gives over the whole K. Rows whose interval gap is at rounding
// level (below the soundness slack) count as zero-gap rows.
TEST(PixelBounds, AffineGapBeatsIntervalGap) {
    EnvConfig env = make_pendulum(25);
    const Entity& e = env.scene.entities[0];
    Interval K(deg(40.0), deg(45.0));
    PixelBoundSet pb = pixel_bounds(e.sprite, e.transform, Box{K});
    auto mus = linspace_mu(K, 201);
    double affine_sum = 0, interval_sum = 0;
    int nonzero = 0, strictly = 0;
    for (int l = 0; l < 25; ++l) {
        for (int k = 0; k < 25; ++k) {
            Eigen::Index row = (static_cast<Eigen::Index>(l) * 25 + k) * 3;
            double iw = interval_pixel(e.sprite, e.transform, Box{K}, l, k, {0}).width();
            double aw = 0;
            for (const auto& mu : mus) aw += pb.value_bounds.upper.weights.row(row).dot(mu) + pb.value_bounds.upper.bias[row] -
                                             pb.value_bounds.lower.weights.row(row).dot(mu) - pb.value_bounds.lower.bias[row];
            aw /= static_cast<double>(mus.size());
            affine_sum += aw;
            interval_sum += iw;
            if (iw > kSoundnessSlack) {
                ++nonzero;
                if (aw < iw) ++strictly;
            }
        }
    }
    EXPECT_LE(affine_sum, interval_sum);
    EXPECT_GT(nonzero, 0);
    EXPECT_GE(strictly, static_cast<int>(std::ceil(0.9 * nonzero)));
}

TEST(PixelBounds, HalvingKDoesNotIncreaseMeanGap) {
    EnvConfig env = make_pendulum(25);
    const Entity& e = env.scene.entities[0];
    auto mean_gap = [&](Interval K) {
        PixelBoundSet pb = pixel_bounds(e.sprite, e.transform, Box{K});
        double sum = 0;
        for (const auto& mu : linspace_mu(K, 101)) sum += (pb.value_bounds.upper(mu) - pb.value_bounds.lower(mu)).sum();
        return sum / 101.0;
    };
    double full = mean_gap({deg(40.0), deg(45.0)}), half = mean_gap({deg(40.0), deg(42.5)});
    EXPECT_LE(half, full);
}

TEST(PixelBounds, TranslationAndCompositeTransformsAreSound) {
    Rng rng(12);
    for (const char* name : {"cartpole", "acrobot"}) {
        EnvConfig env = make_env(name, 25);
        LatentRange lr = latent_range(env, env.init_set);
        std::size_t off = 0;
        for (const auto& e : env.scene.entities) {
            auto d = static_cast<std::size_t>(e.transform.param_dim());
            Box K = lr.K.slice(off, d);
            off += d;
            PixelBoundSet pb = pixel_bounds(e.sprite, e.transform, K);
            std::vector<Eigen::VectorXd> mus;
            for (int i = 0; i < 2000; ++i) mus.push_back(rng.in_box(K));
            SweepStats st = sweep(e.sprite, e.transform, pb, mus);
            EXPECT_EQ(st.violations, 0) << name << "/" << e.name << " worst " << st.worst;
        }
    }
}

TEST(PixelBounds, WideRandomBoxesAreSound) {
    Rng rng(13);
    for (int trial = 0; trial < 6; ++trial) {
        Sprite s = random_sprite(rng, 10, 0.4);
        TransformSpec t{trial % 2 ? TransformKind::rotation_then_translation : TransformKind::translation, 4.5, 4.5, std::nullopt};
        Box K = testing::random_box(rng, t.param_dim(), -1.0, 1.0, 1.5);
        GeoBoundSettings cfg;
        cfg.cells_per_dim = 4;
        PixelBoundSet pb = pixel_bounds(s, t, K, cfg);
        std::vector<Eigen::VectorXd> mus;
        for (int i = 0; i < 2000; ++i) mus.push_back(rng.in_box(K));
        SweepStats st = sweep(s, t, pb, mus);
        EXPECT_EQ(st.violations, 0) << "trial " << trial << " worst " << st.worst;
    }
}

TEST(PixelBounds, Errors) {
    EnvConfig env = make_pendulum(10);
    const Entity& e = env.scene.entities[0];
    EXPECT_THROW(pixel_bounds(e.sprite, e.transform, Box{}), BoundsError);
    EXPECT_THROW(pixel_bounds(e.sprite, e.transform, Box{{0, 1}, {0, 1}}), BoundsError);
    GeoBoundSettings bad;
    bad.cells_per_dim = 0;
    EXPECT_THROW(pixel_bounds(e.sprite, e.transform, Box{{0, 1}}, bad), std::invalid_argument);
}

TEST(PixelBoundCache, RoundTripAndHit) {
    auto dir = testing::temp_dir("cache");
    EnvConfig env = make_pendulum(10);
    const Entity& e = env.scene.entities[0];
    Box K{{deg(40.0), deg(45.0)}};
    PixelBoundSet pb = pixel_bounds(e.sprite, e.transform, K);
    save_pixel_bounds(pb, dir / "x");
    PixelBoundSet back = load_pixel_bounds(dir / "x");
    EXPECT_EQ(back.height, pb.height);
    EXPECT_EQ(back.value_bounds.lower.weights, pb.value_bounds.lower.weights);
    EXPECT_EQ(back.value_bounds.upper.bias, pb.value_bounds.upper.bias);
    EXPECT_EQ(back.alpha_bounds.lower.bias, pb.alpha_bounds.lower.bias);
    EXPECT_EQ(back.value_bounds.domain, K);

    PixelBoundCache cache(dir / "cache");
    bool hit = true;
    cache.get_or_compute(e.sprite, e.transform, K, {}, &hit);
    EXPECT_FALSE(hit);
    PixelBoundSet again = cache.get_or_compute(e.sprite, e.transform, K, {}, &hit);
    EXPECT_TRUE(hit);
    EXPECT_EQ(again.value_bounds.upper.weights, pb.value_bounds.upper.weights);

    std::filesystem::resize_file(dir / "x.bin", 16);
    EXPECT_THROW(load_pixel_bounds(dir / "x"), IoError);
}

}  // namespace
}  // namespace geocert
