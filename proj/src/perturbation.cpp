#include "extremal/perturbation.hpp"

#include <cmath>

namespace extremal {

namespace {

// One normalized pass along a row/column span with truncated weights.
void blur_axis(const float* in, float* out, int n, std::int64_t stride, const std::vector<double>& w, int r) {
    for (int i = 0; i < n; ++i) {
        double num = 0.0, den = 0.0;
        const int lo = std::max(-r, -i);
        const int hi = std::min(r, n - 1 - i);
        for (int d = lo; d <= hi; ++d) {
            const double g = w[static_cast<std::size_t>(d + r)];
            num += g * in[(i + d) * stride];
            den += g;
        }
        out[i * stride] = static_cast<float>(num / den);
    }
}

} // namespace

Tensor gaussian_blur(const Tensor& image, float sigma) {
    if (sigma < 0.0f) throw InvalidInput("gaussian_blur: sigma must be non-negative");
    if (image.rank() != 2 && image.rank() != 3) {
        throw InvalidInput("gaussian_blur expects HxW or CxHxW, got " + image.shape_string());
    }
    if (sigma == 0.0f) return image;

    const int c = image.rank() == 3 ? image.extent(0) : 1;
    const int h = image.extent(image.rank() == 3 ? 1 : 0);
    const int w = image.extent(image.rank() == 3 ? 2 : 1);
    const int r = static_cast<int>(std::ceil(3.0f * sigma));
    std::vector<double> weights(static_cast<std::size_t>(2 * r + 1));
    for (int d = -r; d <= r; ++d) {
        weights[static_cast<std::size_t>(d + r)] = std::exp(-0.5 * d * d / (static_cast<double>(sigma) * sigma));
    }

    // The Gaussian is separable and the truncation window is a square, so the
    // per-pixel border renormalization factorizes into the two passes.
    Tensor tmp(image.shape());
    Tensor out(image.shape());
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (int ch = 0; ch < c; ++ch) {
        const float* src = image.ptr() + ch * plane;
        float* mid = tmp.ptr() + ch * plane;
        float* dst = out.ptr() + ch * plane;
        for (int y = 0; y < h; ++y) blur_axis(src + static_cast<std::int64_t>(y) * w, mid + static_cast<std::int64_t>(y) * w, w, 1, weights, r);
        for (int x = 0; x < w; ++x) blur_axis(mid + x, dst + x, h, w, weights, r);
    }
    return out;
}

Tensor fade_to_black(const Tensor& image, float sigma) {
    if (sigma < 0.0f || sigma > 1.0f) throw InvalidInput("fade_to_black: sigma must be in [0,1]");
    Tensor out = image;
    const float s = 1.0f - sigma;
    for (auto& v : out.data()) v *= s;
    return out;
}

PerturbationPyramid build_pyramid(const Tensor& image, float sigma_max, int levels, PerturbationKind kind) {
    if (levels < 1) throw InvalidInput("build_pyramid: need at least one perturbed level");
    if (sigma_max <= 0.0f) throw InvalidInput("build_pyramid: sigma_max must be positive");
    if (kind == PerturbationKind::FadeToBlack && sigma_max > 1.0f) {
        throw InvalidInput("build_pyramid: fade intensity cannot exceed 1");
    }
    PerturbationPyramid pyr;
    pyr.sigma_max = sigma_max;
    pyr.kind = kind;
    pyr.levels.reserve(static_cast<std::size_t>(levels) + 1);
    for (int l = 0; l <= levels; ++l) {
        const float s = sigma_max * static_cast<float>(l) / static_cast<float>(levels);
        pyr.levels.push_back(kind == PerturbationKind::GaussianBlur ? gaussian_blur(image, s)
                                                                    : fade_to_black(image, s));
    }
    return pyr;
}

namespace {

void check_mask_against_pyramid(const PerturbationPyramid& pyr, const Tensor& mask) {
    if (mask.rank() != 2 || mask.extent(0) != pyr.height() || mask.extent(1) != pyr.width()) {
        throw InvalidInput("apply_mask: mask shape " + mask.shape_string() + " does not match pyramid spatial extents");
    }
    for (float v : mask.data()) {
        if (v < -1e-5f || v > 1.0f + 1e-5f) {
            throw InvalidInput("apply_mask: mask values must lie in [0,1]");
        }
    }
}

// Shared forward: writes output and, when grad_to_mask is non-null, the
// per-pixel derivative of each output w.r.t. the mask value is accumulated
// by the caller in the backward pass instead; here we only need indices.
Tensor interpolate_levels(const PerturbationPyramid& pyr, const Tensor& mask) {
    const int levels = pyr.level_count() - 1;
    const int h = pyr.height(), w = pyr.width(), c = pyr.channels();
    Tensor out(pyr.image().shape());
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const float m = std::min(std::max(mask.at(y, x), 0.0f), 1.0f);
            float level = (1.0f - m) * static_cast<float>(levels);
            int f = static_cast<int>(level);
            if (f >= levels) f = levels - 1;
            const float t = level - static_cast<float>(f);
            const std::int64_t off = static_cast<std::int64_t>(y) * w + x;
            for (int ch = 0; ch < c; ++ch) {
                const float lo = pyr.levels[static_cast<std::size_t>(f)].data()[ch * plane + off];
                const float hi = pyr.levels[static_cast<std::size_t>(f) + 1].data()[ch * plane + off];
                out.data()[ch * plane + off] = (1.0f - t) * lo + t * hi;
            }
        }
    }
    return out;
}

} // namespace

Tensor apply_mask_value(const PerturbationPyramid& pyr, const Tensor& mask) {
    check_mask_against_pyramid(pyr, mask);
    return interpolate_levels(pyr, mask);
}

Var apply_mask(Graph& g, const PerturbationPyramid& pyr, Var mask) {
    const Tensor& mv = g.value(mask);
    check_mask_against_pyramid(pyr, mv);
    Tensor out = interpolate_levels(pyr, mv);

    // The pyramid is owned by the caller and must outlive the graph.
    const PerturbationPyramid* p = &pyr;
    const int mi = mask.idx;
    return g.record(std::move(out), {mask}, [p, mi](Graph& gg, int node) {
        const Tensor& gout = gg.grad_ref(node);
        const Tensor& mv2 = gg.value_of(mi);
        Tensor& gm = gg.grad_ref(mi);
        const int levels = p->level_count() - 1;
        const int h = p->height(), w = p->width(), c = p->channels();
        const std::int64_t plane = static_cast<std::int64_t>(h) * w;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const float m = std::min(std::max(mv2.at(y, x), 0.0f), 1.0f);
                float level = (1.0f - m) * static_cast<float>(levels);
                int f = static_cast<int>(level);
                if (f >= levels) f = levels - 1;
                const std::int64_t off = static_cast<std::int64_t>(y) * w + x;
                double acc = 0.0;
                for (int ch = 0; ch < c; ++ch) {
                    const float lo = p->levels[static_cast<std::size_t>(f)].data()[ch * plane + off];
                    const float hi = p->levels[static_cast<std::size_t>(f) + 1].data()[ch * plane + off];
                    // d out / d m = L * (level_f - level_{f+1})
                    acc += static_cast<double>(gout.data()[ch * plane + off]) * static_cast<double>(levels) *
                           (static_cast<double>(lo) - static_cast<double>(hi));
                }
                gm.at(y, x) += static_cast<float>(acc);
            }
        }
    });
}

} // namespace extremal
