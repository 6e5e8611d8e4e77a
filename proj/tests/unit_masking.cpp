#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "extremal/area_loss.hpp"
#include "extremal/gradcheck.hpp"
#include "extremal/mask_generator.hpp"
#include "extremal/perturbation.hpp"
#include "extremal/rng.hpp"

using namespace extremal;

namespace {

// Per-pixel Laplacian energy, the independent sharpness measure used for the
// pyramid ordering check.
double laplacian_energy(const Tensor& img) {
    const int c = img.rank() == 3 ? img.extent(0) : 1;
    const int h = img.extent(img.rank() == 3 ? 1 : 0);
    const int w = img.extent(img.rank() == 3 ? 2 : 1);
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    double acc = 0.0;
    for (int ch = 0; ch < c; ++ch) {
        const float* p = img.ptr() + ch * plane;
        for (int y = 1; y + 1 < h; ++y) {
            for (int x = 1; x + 1 < w; ++x) {
                const double v = 4.0 * p[y * w + x] - p[(y - 1) * w + x] - p[(y + 1) * w + x] -
                                 p[y * w + x - 1] - p[y * w + x + 1];
                acc += v * v;
            }
        }
    }
    return acc;
}

} // namespace

TEST_CASE("blur identity and constants") {
    Rng rng(2);
    Tensor img = rng.uniform_tensor({3, 10, 10}, 0.0f, 1.0f);
    Tensor same = gaussian_blur(img, 0.0f);
    for (std::int64_t i = 0; i < img.numel(); ++i) CHECK(same[i] == img[i]);

    Tensor flat = gaussian_blur(Tensor::full({8, 8}, 0.37f), 5.0f);
    for (float v : flat.data()) CHECK(v == doctest::Approx(0.37).epsilon(1e-6));

    CHECK_THROWS_AS(gaussian_blur(img, -1.0f), InvalidInput);
}

TEST_CASE("blur of a unit impulse matches the normalized window sum") {
    // sigma = 1 truncates at radius 3, a 7x7 window. The center output is
    // g(0)^2 / sum of the window weights, evaluated here directly.
    Tensor img = Tensor::zeros({7, 7});
    img.at(3, 3) = 1.0f;
    const Tensor out = gaussian_blur(img, 1.0f);

    double window_sum = 0.0;
    for (int dy = -3; dy <= 3; ++dy) {
        for (int dx = -3; dx <= 3; ++dx) {
            window_sum += std::exp(-0.5 * (dy * dy + dx * dx));
        }
    }
    CHECK(out.at(3, 3) == doctest::Approx(1.0 / window_sum).epsilon(1e-5));
}

TEST_CASE("fade examples") {
    Tensor x({2}, {2.0f, 4.0f});
    CHECK(fade_to_black(x, 0.0f)[0] == 2.0f);
    CHECK(fade_to_black(x, 1.0f)[0] == 0.0f);
    CHECK(fade_to_black(x, 1.0f)[1] == 0.0f);
    const Tensor half = fade_to_black(x, 0.5f);
    CHECK(half[0] == 1.0f);
    CHECK(half[1] == 2.0f);
    CHECK_THROWS_AS(fade_to_black(x, 1.5f), InvalidInput);
}

TEST_CASE("pyramid construction") {
    Rng rng(4);
    Tensor img = rng.uniform_tensor({1, 12, 12}, 0.0f, 1.0f);

    const PerturbationPyramid one = build_pyramid(img, 2.0f, 1, PerturbationKind::GaussianBlur);
    CHECK(one.level_count() == 2);
    for (std::int64_t i = 0; i < img.numel(); ++i) CHECK(one.levels[0][i] == img[i]);

    const PerturbationPyramid fade = build_pyramid(img, 1.0f, 2, PerturbationKind::FadeToBlack);
    REQUIRE(fade.level_count() == 3);
    for (std::int64_t i = 0; i < img.numel(); ++i) {
        CHECK(fade.levels[1][i] == doctest::Approx(img[i] / 2.0f));
        CHECK(fade.levels[2][i] == 0.0f);
    }

    CHECK_THROWS_AS(build_pyramid(img, 2.0f, 0, PerturbationKind::GaussianBlur), InvalidInput);
}

TEST_CASE("gaussian pyramid sharpness decreases level by level") {
    Rng rng(8);
    Tensor img = rng.uniform_tensor({1, 24, 24}, 0.0f, 1.0f);
    const PerturbationPyramid pyr = build_pyramid(img, 4.0f, 8, PerturbationKind::GaussianBlur);
    double prev = laplacian_energy(pyr.levels[0]);
    for (int l = 1; l < pyr.level_count(); ++l) {
        const double e = laplacian_energy(pyr.levels[static_cast<std::size_t>(l)]);
        CHECK(e <= prev + 1e-9);
        prev = e;
    }
}

TEST_CASE("apply_mask endpoints and midpoint") {
    Rng rng(6);
    Tensor img = rng.uniform_tensor({2, 6, 6}, 0.0f, 1.0f);
    const PerturbationPyramid pyr = build_pyramid(img, 1.0f, 1, PerturbationKind::FadeToBlack);

    Tensor keep = apply_mask_value(pyr, Tensor::ones({6, 6}));
    for (std::int64_t i = 0; i < img.numel(); ++i) CHECK(keep[i] == img[i]);

    Tensor drop = apply_mask_value(pyr, Tensor::zeros({6, 6}));
    for (std::int64_t i = 0; i < img.numel(); ++i) CHECK(drop[i] == pyr.most_perturbed()[i]);

    Tensor mid = apply_mask_value(pyr, Tensor::full({6, 6}, 0.5f));
    for (std::int64_t i = 0; i < img.numel(); ++i) {
        CHECK(mid[i] == doctest::Approx((img[i] + pyr.most_perturbed()[i]) / 2.0f));
    }

    CHECK_THROWS_AS(apply_mask_value(pyr, Tensor::full({6, 6}, 1.3f)), InvalidInput);
    CHECK_THROWS_AS(apply_mask_value(pyr, Tensor::ones({5, 6})), InvalidInput);
}

TEST_CASE("apply_mask output stays in the per-pixel level hull") {
    Rng rng(16);
    Tensor img = rng.uniform_tensor({1, 9, 9}, 0.0f, 1.0f);
    const PerturbationPyramid pyr = build_pyramid(img, 3.0f, 5, PerturbationKind::GaussianBlur);
    const Tensor mask = rng.uniform_tensor({9, 9}, 0.0f, 1.0f);
    const Tensor out = apply_mask_value(pyr, mask);
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        float lo = 1e9f, hi = -1e9f;
        for (const Tensor& level : pyr.levels) {
            lo = std::min(lo, level[i]);
            hi = std::max(hi, level[i]);
        }
        CHECK(out[i] >= lo - 1e-6f);
        CHECK(out[i] <= hi + 1e-6f);
    }
}

TEST_CASE("apply_mask is monotone for the fade kind") {
    Rng rng(17);
    Tensor img = rng.uniform_tensor({1, 5, 5}, 0.0f, 1.0f);  // non-negative image
    const PerturbationPyramid pyr = build_pyramid(img, 1.0f, 4, PerturbationKind::FadeToBlack);
    Tensor mask = rng.uniform_tensor({5, 5}, 0.0f, 0.9f);
    const Tensor before = apply_mask_value(pyr, mask);
    mask.at(2, 3) += 0.1f;
    const Tensor after = apply_mask_value(pyr, mask);
    for (std::int64_t i = 0; i < before.numel(); ++i) CHECK(after[i] >= before[i] - 1e-7f);
}

TEST_CASE("geometry formulas") {
    SmoothMaskConfig c;
    c.sigma = 20.0; c.step = 8; c.margin = 20; c.out_h = 64; c.out_w = 64;
    MaskGeometry g = derive_geometry(c);
    CHECK(g.radius == 4);   // 1 + ceil(20/8)
    CHECK(g.window == 9);
    CHECK(g.pad == 6);      // 1 + ceil(40/8)

    c.sigma = 8.0; c.step = 8; c.margin = 0;
    g = derive_geometry(c);
    CHECK(g.radius == 2);
    CHECK(g.window == 5);
    CHECK(g.pad == 2);

    c.sigma = 1.0; c.step = 1; c.margin = 0; c.out_h = 8; c.out_w = 8;
    g = derive_geometry(c);
    CHECK(g.n_h == 8);
    CHECK(g.radius == 2);
    CHECK(g.window == 5);
    CHECK(g.pad == 2);
    CHECK(g.mid_h == 8);    // 8 - 5 + 4 + 1
    CHECK(g.up_h == 8);
}

TEST_CASE("kernel profile") {
    CHECK(kernel_profile(0.0f) == 1.0f);
    CHECK(kernel_profile(1.0f) == 1.0f);
    CHECK(kernel_profile(3.0f) == doctest::Approx(std::exp(-1.0)).epsilon(1e-6));
    CHECK_THROWS_AS(kernel_profile(-0.1f), InvalidInput);
    float prev = 1.0f;
    for (float z = 1.05f; z < 6.0f; z += 0.05f) {
        const float v = kernel_profile(z);
        CHECK(v < prev);
        prev = v;
    }
}

TEST_CASE("pool weights carry a saturated slot for every pixel phase") {
    SmoothMaskConfig c;
    c.sigma = 20.0; c.step = 8; c.margin = 20; c.out_h = 64; c.out_w = 64;
    const MaskGeometry g = derive_geometry(c);
    const PoolWeights w(c, g);
    for (int ry = 0; ry < c.step; ++ry) {
        for (int rx = 0; rx < c.step; ++rx) {
            float best = 0.0f;
            for (int ky = 0; ky < g.window; ++ky) {
                for (int kx = 0; kx < g.window; ++kx) {
                    best = std::max(best, w.at(ky, kx, ry, rx));
                }
            }
            CHECK(best == 1.0f);
        }
    }
}

TEST_CASE("max_conv saturation endpoints") {
    SmoothMaskConfig c;
    c.sigma = 6.0; c.step = 4; c.margin = 6; c.out_h = 24; c.out_w = 24;
    const MaskGeometry g = derive_geometry(c);

    Tensor ones = Tensor::ones({g.n_h, g.n_w});
    const Tensor m1 = max_conv(ones, c);
    for (float v : m1.data()) CHECK(v == 1.0f);

    const Tensor m0 = max_conv(Tensor::zeros({g.n_h, g.n_w}), c);
    for (float v : m0.data()) CHECK(v == 0.0f);

    CHECK_THROWS_AS(max_conv(Tensor::ones({g.n_h + 1, g.n_w}), c), InvalidInput);
}

TEST_CASE("max_conv of a single spike is the kernel footprint") {
    SmoothMaskConfig c;
    c.sigma = 5.0; c.step = 3; c.margin = 5; c.out_h = 21; c.out_w = 21;
    const MaskGeometry g = derive_geometry(c);
    Tensor spike = Tensor::zeros({g.n_h, g.n_w});
    const int iy = 3, ix = 4;
    spike.at(iy, ix) = 1.0f;
    const Tensor m = max_conv(spike, c);
    for (int y = 0; y < c.out_h; ++y) {
        for (int x = 0; x < c.out_w; ++x) {
            const double dist = std::hypot(y - c.step * iy, x - c.step * ix);
            const float expected = kernel_profile(static_cast<float>(dist / c.sigma));
            CHECK(m.at(y, x) == doctest::Approx(expected).epsilon(1e-6));
        }
    }
}

TEST_CASE("smax window examples") {
    // Two-element window {0, 1} at T = 1/2: (0*1 + 1*e^2) / (1 + e^2).
    const float w[2] = {0.0f, 1.0f};
    const double expected = std::exp(2.0) / (1.0 + std::exp(2.0));
    CHECK(smax(w, 2, 0.5) == doctest::Approx(expected).epsilon(1e-6));
    CHECK(smax(w, 2, 0.5) == doctest::Approx(0.8808).epsilon(1e-3));

    const float tri[3] = {0.2f, 0.5f, 0.9f};
    CHECK(smax(tri, 3, 1e6) == doctest::Approx((0.2 + 0.5 + 0.9) / 3.0).epsilon(1e-6));
    CHECK(smax(tri, 3, 1e-4) == doctest::Approx(0.9).epsilon(1e-3));
    CHECK_THROWS_AS(smax(tri, 3, 0.0), InvalidInput);
}

TEST_CASE("expand saturation endpoints") {
    SmoothMaskConfig c;
    c.sigma = 6.0; c.step = 2; c.margin = 6; c.out_h = 16; c.out_w = 16; c.temperature = 1e-4;
    const MaskGenerator gen(c);
    const MaskGeometry& g = gen.geometry();

    const Tensor m1 = gen.expand_value(Tensor::ones({g.n_h, g.n_w}));
    for (float v : m1.data()) CHECK(v == doctest::Approx(1.0).epsilon(1e-4));

    const Tensor m0 = gen.expand_value(Tensor::zeros({g.n_h, g.n_w}));
    for (float v : m0.data()) CHECK(v == 0.0f);

    // At the production temperature the expansion still saturates closely.
    SmoothMaskConfig warm = c;
    warm.temperature = 0.05;
    const MaskGenerator wgen(warm);
    const Tensor w1 = wgen.expand_value(Tensor::ones({g.n_h, g.n_w}));
    for (float v : w1.data()) CHECK(v >= 0.97f);
}

TEST_CASE("expand equals the staged unpool/upsample/pool/crop pipeline") {
    SmoothMaskConfig c;
    c.sigma = 4.0; c.step = 3; c.margin = 4; c.out_h = 19; c.out_w = 13; c.temperature = 0.05;
    const MaskGenerator gen(c);
    const MaskGeometry& g = gen.geometry();
    Rng rng(23);
    const Tensor mbar = rng.uniform_tensor({g.n_h, g.n_w}, 0.0f, 1.0f);

    const Tensor pooled = gen.smax_pool(mbar);
    CHECK(pooled.extent(0) == g.up_h);
    CHECK(pooled.extent(1) == g.up_w);
    const Tensor cropped = gen.expand_value(mbar);
    for (int y = 0; y < c.out_h; ++y) {
        for (int x = 0; x < c.out_w; ++x) {
            CHECK(cropped.at(y, x) == pooled.at(y + c.margin, x + c.margin));
        }
    }
}

TEST_CASE("cold expansion matches the hard max-convolution oracle") {
    // Geometry chosen so the pooled window spans the full coarse lattice;
    // the windowed pipeline and the dense reference then agree.
    SmoothMaskConfig c;
    c.sigma = 20.0; c.step = 8; c.margin = 20; c.out_h = 32; c.out_w = 32; c.temperature = 1e-4;
    const MaskGenerator gen(c);
    Rng rng(29);
    for (int trial = 0; trial < 5; ++trial) {
        const Tensor mbar = rng.uniform_tensor({gen.geometry().n_h, gen.geometry().n_w}, 0.0f, 1.0f);
        const Tensor cold = gen.expand_value(mbar);
        const Tensor hard = max_conv(mbar, c);
        for (std::int64_t i = 0; i < cold.numel(); ++i) {
            CHECK(std::abs(cold[i] - hard[i]) < 1e-3f);
        }
    }
}

TEST_CASE("plain normalized convolution dampens saturated parameters") {
    // The smoothing alternative that motivates max-convolution: convolving
    // the parameter mask with a normalized kernel cannot keep a saturated
    // sample at one, while max-convolution can.
    SmoothMaskConfig c;
    c.sigma = 5.0; c.step = 3; c.margin = 5; c.out_h = 21; c.out_w = 21;
    const MaskGeometry g = derive_geometry(c);
    Tensor spike = Tensor::zeros({g.n_h, g.n_w});
    spike.at(3, 3) = 1.0f;

    // Normalized convolution at the spike's aligned pixel.
    double num = 0.0, den = 0.0;
    for (int iy = 0; iy < g.n_h; ++iy) {
        for (int ix = 0; ix < g.n_w; ++ix) {
            const double dist = std::hypot(c.step * (3 - iy), c.step * (3 - ix));
            const double kw = kernel_profile(static_cast<float>(dist / c.sigma));
            num += kw * spike.at(iy, ix);
            den += kw;
        }
    }
    const double damped = num / den;
    CHECK(damped < 0.5);

    const Tensor m = max_conv(spike, c);
    CHECK(m.at(3 * c.step, 3 * c.step) == 1.0f);
}

TEST_CASE("max-convolution is monotone in the parameter mask") {
    SmoothMaskConfig c;
    c.sigma = 3.0; c.step = 2; c.margin = 3; c.out_h = 14; c.out_w = 14;
    const MaskGeometry g = derive_geometry(c);
    Rng rng(31);
    Tensor mbar = rng.uniform_tensor({g.n_h, g.n_w}, 0.0f, 0.85f);
    const Tensor before = max_conv(mbar, c);
    mbar.at(2, 2) += 0.15f;
    const Tensor after = max_conv(mbar, c);
    for (std::int64_t i = 0; i < before.numel(); ++i) CHECK(after[i] >= before[i]);
}

TEST_CASE("expand is monotone up to the soft-pooling envelope") {
    // The soft max is not exactly monotone in its window values: raising a
    // value far below the pooled output increases its softmax weight and can
    // drag the average down a little (window {0,1} at T=1/2 dips from 0.8808
    // to 0.8723 when the zero rises to 0.1). At the production temperature
    // the dip is vanishing; the hard operator above is exactly monotone.
    SmoothMaskConfig c;
    c.sigma = 3.0; c.step = 2; c.margin = 3; c.out_h = 14; c.out_w = 14; c.temperature = 0.05;
    const MaskGenerator gen(c);
    Rng rng(31);
    Tensor mbar = rng.uniform_tensor({gen.geometry().n_h, gen.geometry().n_w}, 0.0f, 0.85f);
    const Tensor before = gen.expand_value(mbar);
    mbar.at(2, 2) += 0.15f;
    const Tensor after = gen.expand_value(mbar);
    for (std::int64_t i = 0; i < before.numel(); ++i) CHECK(after[i] >= before[i] - 1e-4f);
}

TEST_CASE("reference vector examples") {
    Tensor r = reference_vector(AreaTarget::from_fraction(0.5, 4));
    CHECK(r[0] == 0.0f); CHECK(r[1] == 0.0f); CHECK(r[2] == 1.0f); CHECK(r[3] == 1.0f);

    r = reference_vector(AreaTarget::from_fraction(0.0, 3));
    for (float v : r.data()) CHECK(v == 0.0f);

    r = reference_vector(AreaTarget::from_fraction(0.3, 10));
    int ones = 0;
    for (float v : r.data()) ones += v == 1.0f ? 1 : 0;
    CHECK(ones == 3);
    CHECK(r[6] == 0.0f);
    CHECK(r[7] == 1.0f);
}

TEST_CASE("area loss examples") {
    CHECK(area_loss_value(Tensor({4}, {1, 1, 0, 0}), AreaTarget::from_fraction(0.5, 4)) == doctest::Approx(0.0));
    CHECK(area_loss_value(Tensor({2}, {0.5f, 0.5f}), AreaTarget::from_fraction(0.5, 2)) == doctest::Approx(0.5));
    CHECK(area_loss_value(Tensor({4}, {1, 1, 1, 1}), AreaTarget::from_fraction(0.25, 4)) == doctest::Approx(3.0));
}

TEST_CASE("area loss is permutation invariant and matches the graph path") {
    Rng rng(37);
    Tensor m = rng.uniform_tensor({10}, 0.0f, 1.0f);
    const AreaTarget t = AreaTarget::from_fraction(0.4, 10);
    const double direct = area_loss_value(m, t);

    std::vector<float> shuffled = m.data();
    std::swap(shuffled[0], shuffled[7]);
    std::swap(shuffled[3], shuffled[9]);
    CHECK(area_loss_value(Tensor({10}, shuffled), t) == doctest::Approx(direct));

    Graph g;
    CHECK(g.value(area_loss(g, g.leaf(m), t))[0] == doctest::Approx(direct).epsilon(1e-6));
}

TEST_CASE("area loss brute force on small masks") {
    // Exhaustive check against an independent evaluation: every mask of
    // length five over the five-value grid, every split point.
    const float grid[5] = {0.0f, 0.25f, 0.5f, 0.75f, 1.0f};
    const int n = 5;
    int combos = 1;
    for (int i = 0; i < n; ++i) combos *= 5;
    for (int code = 0; code < combos; ++code) {
        int c = code;
        Tensor m({n});
        for (int i = 0; i < n; ++i) {
            m[i] = grid[c % 5];
            c /= 5;
        }
        for (int ones = 0; ones <= n; ++ones) {
            // insertion sort keeps this oracle independent of the library path
            std::vector<float> sorted(m.data());
            for (std::size_t i = 1; i < sorted.size(); ++i) {
                float key = sorted[i];
                std::size_t j = i;
                while (j > 0 && sorted[j - 1] > key) {
                    sorted[j] = sorted[j - 1];
                    --j;
                }
                sorted[j] = key;
            }
            double expected = 0.0;
            for (int i = 0; i < n; ++i) {
                const double r = i >= n - ones ? 1.0 : 0.0;
                expected += (sorted[static_cast<std::size_t>(i)] - r) * (sorted[static_cast<std::size_t>(i)] - r);
            }
            const double got = area_loss_value(m, AreaTarget::from_units(ones, n));
            CHECK(got == expected);
        }
    }
}

TEST_CASE("achieved area examples") {
    CHECK(achieved_area(Tensor({4}, {1, 0, 0, 0})) == doctest::Approx(0.25));
    CHECK(achieved_area(Tensor::ones({5})) == doctest::Approx(1.0));
    CHECK(achieved_area(Tensor({4}, {0.6f, 0.4f, 0.7f, 0.1f})) == doctest::Approx(0.5));
}
