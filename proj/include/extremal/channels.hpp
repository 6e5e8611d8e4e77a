#ifndef EXTREMAL_CHANNELS_HPP
#define EXTREMAL_CHANNELS_HPP

#include <optional>
#include <utility>
#include <vector>

#include "extremal/models.hpp"
#include "extremal/tensor.hpp"

namespace extremal {

// Channel-game schedule: shorter run than the spatial game, with the
// constraint multiplier ramped linearly from zero to lambda_max over the
// first half of the iterations and held constant after.
struct ChannelSchedule {
    int iterations = 300;
    float momentum = 0.9f;
    float learning_rate = 0.01f;
    double lambda_max = 1500.0;

    double lambda_at(int iteration) const;
};

struct ChannelOutcome {
    Tensor mask;                      // length K_l, in [0,1]
    double score = 0.0;               // tail score of the final masked activation
    double residual = 0.0;            // area_loss(mask)/K_l
    std::vector<double> score_trace;
};

// Optimizes a per-channel mask on the split model's intermediate activation:
// the mask element-wise multiplies the activation, broadcasting along the
// spatial dimensions. No spatial smoothing is involved; the area target is an
// integer channel count.
ChannelOutcome optimize_channel_mask(const ScorerModel& model, const Tensor& image,
                                     int channel_count, const ChannelSchedule& schedule);

// Sweeps an ascending channel-count grid and returns the smallest count whose
// score reaches phi0, if any. Per-count outcomes are appended to `outcomes`
// when provided.
std::optional<int> find_extremal_channels(const ScorerModel& model, const Tensor& image,
                                          const std::vector<int>& grid, double phi0,
                                          const ChannelSchedule& schedule,
                                          std::vector<ChannelOutcome>* outcomes = nullptr);

// Weighted channel sum of the activation: H_l x W_l saliency surface.
Tensor saliency_overlay(const Tensor& channel_mask, const Tensor& activations);

// Arithmetic mean of per-image masks plus the strongest channel index
// (lowest index wins ties).
std::pair<Tensor, int> per_class_mask(const std::vector<Tensor>& masks);

struct InversionOutcome {
    Tensor image;
    std::vector<double> objective_trace;
};

// Gradient ascent on an input maximizing the dot product between the target
// activation and the model head's activation, with the input projected onto
// an L2 ball after every step (stand-in for natural-image priors, which are
// out of scope at desk scale). norm_budget <= 0 selects sqrt(numel)/2.
InversionOutcome feature_inversion(const ScorerModel& model, const Tensor& target_activation,
                                   int steps, float learning_rate, float norm_budget = 0.0f);

} // namespace extremal

#endif
