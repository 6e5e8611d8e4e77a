#ifndef EXTREMAL_MASK_GENERATOR_HPP
#define EXTREMAL_MASK_GENERATOR_HPP

#include <vector>

#include "extremal/graph.hpp"
#include "extremal/tensor.hpp"

namespace extremal {

// Radial kernel profile: flat (exactly 1) for z <= 1, then smooth decay
// exp(-(z-1)^2/4). z is radial pixel distance divided by sigma, so the flat
// disk has radius sigma.
float kernel_profile(float z);

// Low-resolution parameter mask on the coarse lattice, kept in [0,1] by the
// optimizer's projection step.
struct MaskParams {
    Tensor values;  // n_h x n_w
};

// Generator geometry. sigma is the kernel radius in output pixels, step the
// kernel stride in output pixels, margin a border offset that shifts the
// final crop, temperature the smax temperature.
struct SmoothMaskConfig {
    double sigma = 2.0;
    int step = 1;
    int margin = 2;
    double temperature = 0.05;
    int out_h = 64;
    int out_w = 64;

    void validate() const;
};

// Derived quantities, recomputed from the config and never stored stale:
//   n per dim   = ceil(out / step)            coarse samples
//   pad         = 1 + ceil((sigma+margin)/step)
//   radius      = 1 + ceil(sigma/step)
//   window      = 2*radius + 1                pooled samples per output pixel
//   mid per dim = n - window + 2*pad + 1      unpooled signal length
//   up per dim  = step * mid                  upsampled signal length
struct MaskGeometry {
    int n_h = 0, n_w = 0;
    int pad = 0;
    int radius = 0;
    int window = 0;
    int mid_h = 0, mid_w = 0;
    int up_h = 0, up_w = 0;
};

MaskGeometry derive_geometry(const SmoothMaskConfig& config);

// Precomputed kernel evaluations for the pooled window. In pre-crop
// coordinates sample i sits at step*i + margin, so the weight of window slot
// (ky,kx) at output pixel u depends only on (u mod step, ky, kx); the table
// holds window^2 x step^2 entries exploiting that periodicity. For every
// pixel at least one slot carries weight 1 (the profile is centrally flat)
// whenever sigma >= step and margin <= sigma.
class PoolWeights {
public:
    PoolWeights() = default;
    PoolWeights(const SmoothMaskConfig& config, const MaskGeometry& geom);

    float at(int ky, int kx, int ry, int rx) const {
        return table_[((static_cast<std::size_t>(ky) * window_ + kx) * step_ + ry) * step_ + rx];
    }
    int window() const { return window_; }
    int step() const { return step_; }

private:
    std::vector<float> table_;
    int window_ = 0;
    int step_ = 0;
};

// Temperature-controlled soft maximum of Eq-style window values: varies from
// the mean (T -> inf) to the hard max (T -> 0). Stabilized by subtracting
// max(f)/T before exponentiation, which is mathematically exact.
float smax(const float* values, int count, double temperature);

// Hard max-convolution evaluated over the full coarse lattice: per output
// pixel the maximum of kernel_profile(dist/sigma) * mbar over all samples,
// with sample i at output position step*i. This is the reference operator
// behind the masking guarantees (mbar = 1 sites stay 1, kernel-bounded
// Lipschitz constant); the windowed smax path approximates it.
Tensor max_conv(const Tensor& mbar, const SmoothMaskConfig& config);

// Expands the coarse parameter mask to full resolution: unpool with the
// derived window and padding (out-of-range samples are zero), nearest
// neighbor upsample, weighted smax pooling, then an out_h x out_w crop
// offset by the margin. Pool weights are cached at construction; instances
// are immutable and safe to share read-only across optimization threads.
class MaskGenerator {
public:
    explicit MaskGenerator(SmoothMaskConfig config);

    const SmoothMaskConfig& config() const { return config_; }
    const MaskGeometry& geometry() const { return geom_; }
    const PoolWeights& weights() const { return weights_; }

    // Uncropped pooled surface (up_h x up_w), exposed for pipeline checks.
    Tensor smax_pool(const Tensor& mbar) const;

    // Final mask (out_h x out_w).
    Tensor expand_value(const Tensor& mbar) const;

    // Differentiable expansion recorded on the graph.
    Var expand(Graph& g, Var mbar) const;

private:
    SmoothMaskConfig config_;
    MaskGeometry geom_;
    PoolWeights weights_;

    void check_params(const Tensor& mbar) const;
    float pooled_at(const Tensor& mbar, int uy, int ux, float* probs) const;
};

} // namespace extremal

#endif
