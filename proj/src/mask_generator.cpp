#include "extremal/mask_generator.hpp"

#include <cmath>
#include <memory>

namespace extremal {

float kernel_profile(float z) {
    if (z < 0.0f) throw InvalidInput("kernel_profile: z must be non-negative");
    if (z <= 1.0f) return 1.0f;
    const float d = z - 1.0f;
    return std::exp(-d * d / 4.0f);
}

void SmoothMaskConfig::validate() const {
    if (sigma <= 0.0) throw InvalidInput("mask config: sigma must be positive");
    if (step < 1) throw InvalidInput("mask config: step must be at least 1");
    if (margin < 0) throw InvalidInput("mask config: margin must be non-negative");
    if (temperature <= 0.0) throw InvalidInput("mask config: temperature must be positive");
    if (out_h < 1 || out_w < 1) throw InvalidInput("mask config: output extents must be positive");
    const MaskGeometry g = derive_geometry(*this);
    if (g.mid_h < 1 || g.mid_w < 1) throw InvalidInput("mask config: derived unpooled signal is empty");
    if (g.up_h < out_h + margin || g.up_w < out_w + margin) {
        throw InvalidInput("mask config: crop window exceeds the pooled surface");
    }
}

MaskGeometry derive_geometry(const SmoothMaskConfig& c) {
    MaskGeometry g;
    const double s = static_cast<double>(c.step);
    g.n_h = static_cast<int>(std::ceil(static_cast<double>(c.out_h) / s));
    g.n_w = static_cast<int>(std::ceil(static_cast<double>(c.out_w) / s));
    g.pad = 1 + static_cast<int>(std::ceil((c.sigma + c.margin) / s));
    g.radius = 1 + static_cast<int>(std::ceil(c.sigma / s));
    g.window = 2 * g.radius + 1;
    g.mid_h = g.n_h - g.window + 2 * g.pad + 1;
    g.mid_w = g.n_w - g.window + 2 * g.pad + 1;
    g.up_h = c.step * g.mid_h;
    g.up_w = c.step * g.mid_w;
    return g;
}

PoolWeights::PoolWeights(const SmoothMaskConfig& config, const MaskGeometry& geom)
    : window_(geom.window), step_(config.step) {
    table_.resize(static_cast<std::size_t>(window_) * window_ * step_ * step_);
    for (int ky = 0; ky < window_; ++ky) {
        for (int kx = 0; kx < window_; ++kx) {
            for (int ry = 0; ry < step_; ++ry) {
                for (int rx = 0; rx < step_; ++rx) {
                    // offset between output pixel and the pooled sample's
                    // position step*i + margin, reduced by periodicity
                    const double dy = ry - static_cast<double>(step_) * (ky - geom.pad) - config.margin;
                    const double dx = rx - static_cast<double>(step_) * (kx - geom.pad) - config.margin;
                    const double dist = std::sqrt(dy * dy + dx * dx);
                    table_[((static_cast<std::size_t>(ky) * window_ + kx) * step_ + ry) * step_ + rx] =
                        kernel_profile(static_cast<float>(dist / config.sigma));
                }
            }
        }
    }
}

float smax(const float* values, int count, double temperature) {
    if (count <= 0) throw InvalidInput("smax: empty window");
    if (temperature <= 0.0) throw InvalidInput("smax: temperature must be positive");
    float m = values[0];
    for (int i = 1; i < count; ++i) m = std::max(m, values[i]);
    double num = 0.0, den = 0.0;
    for (int i = 0; i < count; ++i) {
        const double e = std::exp((static_cast<double>(values[i]) - m) / temperature);
        num += values[i] * e;
        den += e;
    }
    return static_cast<float>(num / den);
}

Tensor max_conv(const Tensor& mbar, const SmoothMaskConfig& config) {
    config.validate();
    const MaskGeometry geom = derive_geometry(config);
    if (mbar.rank() != 2 || mbar.extent(0) != geom.n_h || mbar.extent(1) != geom.n_w) {
        throw InvalidInput("max_conv: parameter mask shape " + mbar.shape_string() +
                           " does not match derived lattice " + std::to_string(geom.n_h) + "x" +
                           std::to_string(geom.n_w));
    }
    const int s = config.step;
    const int max_dy = std::max(config.out_h, s * (geom.n_h - 1)) + 1;
    const int max_dx = std::max(config.out_w, s * (geom.n_w - 1)) + 1;
    std::vector<float> profile(static_cast<std::size_t>(max_dy) * max_dx);
    for (int dy = 0; dy < max_dy; ++dy) {
        for (int dx = 0; dx < max_dx; ++dx) {
            const double dist = std::sqrt(static_cast<double>(dy) * dy + static_cast<double>(dx) * dx);
            profile[static_cast<std::size_t>(dy) * max_dx + dx] =
                kernel_profile(static_cast<float>(dist / config.sigma));
        }
    }

    Tensor out({config.out_h, config.out_w});
    for (int y = 0; y < config.out_h; ++y) {
        for (int x = 0; x < config.out_w; ++x) {
            float best = 0.0f;
            for (int iy = 0; iy < geom.n_h; ++iy) {
                const int dy = std::abs(y - s * iy);
                for (int ix = 0; ix < geom.n_w; ++ix) {
                    const int dx = std::abs(x - s * ix);
                    const float v = profile[static_cast<std::size_t>(dy) * max_dx + dx] * mbar.at(iy, ix);
                    if (v > best) best = v;
                }
            }
            out.at(y, x) = best;
        }
    }
    return out;
}

MaskGenerator::MaskGenerator(SmoothMaskConfig config) : config_(config) {
    config_.validate();
    geom_ = derive_geometry(config_);
    weights_ = PoolWeights(config_, geom_);
}

void MaskGenerator::check_params(const Tensor& mbar) const {
    if (mbar.rank() != 2 || mbar.extent(0) != geom_.n_h || mbar.extent(1) != geom_.n_w) {
        throw InvalidInput("mask generator: parameter mask shape " + mbar.shape_string() +
                           " does not match lattice " + std::to_string(geom_.n_h) + "x" +
                           std::to_string(geom_.n_w));
    }
    for (float v : mbar.data()) {
        if (v < -1e-5f || v > 1.0f + 1e-5f) {
            throw InvalidInput("mask generator: parameter mask values must lie in [0,1]");
        }
    }
}

// smax over the pooled window at pre-crop pixel (uy,ux). When probs is
// non-null the normalized softmax weights are stored for the backward pass.
float MaskGenerator::pooled_at(const Tensor& mbar, int uy, int ux, float* probs) const {
    const int s = config_.step;
    const int k = geom_.window;
    const int qy = uy / s, ry = uy % s;
    const int qx = ux / s, rx = ux % s;

    float fbuf[32 * 32];
    std::vector<float> fdyn;
    float* f = fbuf;
    if (k * k > 32 * 32) {
        fdyn.resize(static_cast<std::size_t>(k) * k);
        f = fdyn.data();
    }
    float fmax = 0.0f;
    for (int ky = 0; ky < k; ++ky) {
        const int iy = qy + ky - geom_.pad;
        for (int kx = 0; kx < k; ++kx) {
            const int ix = qx + kx - geom_.pad;
            float v = 0.0f;  // out-of-range unpool samples are zero
            if (iy >= 0 && iy < geom_.n_h && ix >= 0 && ix < geom_.n_w) {
                v = weights_.at(ky, kx, ry, rx) * mbar.at(iy, ix);
            }
            f[ky * k + kx] = v;
            if (v > fmax) fmax = v;
        }
    }
    const double inv_t = 1.0 / config_.temperature;
    double num = 0.0, den = 0.0;
    for (int i = 0; i < k * k; ++i) {
        const double e = std::exp((static_cast<double>(f[i]) - fmax) * inv_t);
        num += f[i] * e;
        den += e;
        if (probs) probs[i] = static_cast<float>(e);
    }
    const float out = static_cast<float>(num / den);
    if (probs) {
        const float inv_den = static_cast<float>(1.0 / den);
        for (int i = 0; i < k * k; ++i) probs[i] *= inv_den;
    }
    return out;
}

Tensor MaskGenerator::smax_pool(const Tensor& mbar) const {
    check_params(mbar);
    Tensor out({geom_.up_h, geom_.up_w});
    for (int uy = 0; uy < geom_.up_h; ++uy) {
        for (int ux = 0; ux < geom_.up_w; ++ux) {
            out.at(uy, ux) = pooled_at(mbar, uy, ux, nullptr);
        }
    }
    return out;
}

Tensor MaskGenerator::expand_value(const Tensor& mbar) const {
    check_params(mbar);
    Tensor out({config_.out_h, config_.out_w});
    for (int y = 0; y < config_.out_h; ++y) {
        for (int x = 0; x < config_.out_w; ++x) {
            out.at(y, x) = pooled_at(mbar, y + config_.margin, x + config_.margin, nullptr);
        }
    }
    return out;
}

Var MaskGenerator::expand(Graph& g, Var mbar) const {
    const Tensor& mv = g.value(mbar);
    check_params(mv);

    const int k = geom_.window;
    const std::int64_t slots = static_cast<std::int64_t>(k) * k;
    auto probs = std::make_shared<std::vector<float>>(
        static_cast<std::size_t>(config_.out_h) * config_.out_w * slots);

    Tensor out({config_.out_h, config_.out_w});
    for (int y = 0; y < config_.out_h; ++y) {
        for (int x = 0; x < config_.out_w; ++x) {
            float* p = probs->data() + (static_cast<std::size_t>(y) * config_.out_w + x) * slots;
            out.at(y, x) = pooled_at(mv, y + config_.margin, x + config_.margin, p);
        }
    }

    const MaskGenerator* gen = this;  // generators outlive their graphs
    const int mi = mbar.idx;
    return g.record(std::move(out), {mbar}, [gen, mi, probs](Graph& gg, int node) {
        const Tensor& gout = gg.grad_ref(node);
        const Tensor& outv = gg.value_of(node);
        const Tensor& mv2 = gg.value_of(mi);
        Tensor& gm = gg.grad_ref(mi);
        const SmoothMaskConfig& c = gen->config_;
        const MaskGeometry& geom = gen->geom_;
        const int k = geom.window;
        const std::int64_t slots = static_cast<std::int64_t>(k) * k;
        const float inv_t = static_cast<float>(1.0 / c.temperature);
        for (int y = 0; y < c.out_h; ++y) {
            for (int x = 0; x < c.out_w; ++x) {
                const float go = gout.at(y, x);
                if (go == 0.0f) continue;
                const float sv = outv.at(y, x);
                const int uy = y + c.margin, ux = x + c.margin;
                const int qy = uy / c.step, ry = uy % c.step;
                const int qx = ux / c.step, rx = ux % c.step;
                const float* p = probs->data() + (static_cast<std::size_t>(y) * c.out_w + x) * slots;
                for (int ky = 0; ky < k; ++ky) {
                    const int iy = qy + ky - geom.pad;
                    if (iy < 0 || iy >= geom.n_h) continue;
                    for (int kx = 0; kx < k; ++kx) {
                        const int ix = qx + kx - geom.pad;
                        if (ix < 0 || ix >= geom.n_w) continue;
                        const float w = gen->weights_.at(ky, kx, ry, rx);
                        const float f = w * mv2.at(iy, ix);
                        // d smax / d f = p * (1 + (f - smax)/T)
                        const float ds = p[ky * k + kx] * (1.0f + (f - sv) * inv_t);
                        gm.at(iy, ix) += w * ds * go;
                    }
                }
            }
        }
    });
}

} // namespace extremal
