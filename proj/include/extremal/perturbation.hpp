#ifndef EXTREMAL_PERTURBATION_HPP
#define EXTREMAL_PERTURBATION_HPP

#include <vector>

#include "extremal/graph.hpp"
#include "extremal/tensor.hpp"

namespace extremal {

enum class PerturbationKind { GaussianBlur, FadeToBlack };

// Normalized Gaussian blur: per output pixel the kernel mass falling inside
// the image renormalizes the sum, so borders stay unbiased. sigma is in
// pixels; sigma = 0 returns the image unchanged. Kernel truncated at
// radius ceil(3*sigma). Accepts HxW or CxHxW.
Tensor gaussian_blur(const Tensor& image, float sigma);

// Uniform fade: (1 - sigma) * x for sigma in [0, 1].
Tensor fade_to_black(const Tensor& image, float sigma);

// L+1 progressively more perturbed copies of an image. Level 0 is the input
// itself; level l carries perturbation intensity sigma_max * l / L. Immutable
// after construction and freely shared across optimization threads.
struct PerturbationPyramid {
    std::vector<Tensor> levels;
    float sigma_max = 0.0f;
    PerturbationKind kind = PerturbationKind::GaussianBlur;

    int level_count() const { return static_cast<int>(levels.size()); }
    const Tensor& image() const { return levels.front(); }
    const Tensor& most_perturbed() const { return levels.back(); }
    int channels() const { return levels.front().rank() == 3 ? levels.front().extent(0) : 1; }
    int height() const { return levels.front().extent(levels.front().rank() == 3 ? 1 : 0); }
    int width() const { return levels.front().extent(levels.front().rank() == 3 ? 2 : 1); }
};

PerturbationPyramid build_pyramid(const Tensor& image, float sigma_max, int levels,
                                  PerturbationKind kind);

// Mask-dosed perturbation: per pixel the mask value selects a continuous
// pyramid level l(u) = (1 - m(u)) * L and the output linearly interpolates
// between the bracketing levels. mask is HxW in [0, 1].
Tensor apply_mask_value(const PerturbationPyramid& pyr, const Tensor& mask);

// Graph-recorded version, differentiable with respect to the mask.
Var apply_mask(Graph& g, const PerturbationPyramid& pyr, Var mask);

} // namespace extremal

#endif
