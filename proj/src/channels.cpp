#include "extremal/channels.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "extremal/area_loss.hpp"
#include "extremal/graph.hpp"

namespace extremal {

double ChannelSchedule::lambda_at(int iteration) const {
    if (iterations < 1) throw InvalidInput("channel schedule needs at least one iteration");
    const int ramp = std::max(1, iterations / 2);
    const double f = std::min(1.0, static_cast<double>(iteration) / static_cast<double>(ramp));
    return lambda_max * f;
}

ChannelOutcome optimize_channel_mask(const ScorerModel& model, const Tensor& image,
                                     int channel_count, const ChannelSchedule& schedule) {
    if (!model.splittable()) throw InvalidInput("channel attribution needs a model with a split point");
    const std::vector<int> act_shape = model.activation_shape();
    const int channels = act_shape[0];
    if (channel_count < 1 || channel_count > channels) {
        throw InvalidInput("channel count " + std::to_string(channel_count) + " out of range [1, " +
                           std::to_string(channels) + "]");
    }

    // The head does not depend on the mask; compute the activation once.
    const Tensor activation = model.head_value(image);
    const AreaTarget target = AreaTarget::from_units(channel_count, channels);

    Tensor mask = Tensor::ones({channels});
    Tensor velocity = Tensor::zeros({channels});

    ChannelOutcome outcome;
    outcome.score_trace.reserve(static_cast<std::size_t>(schedule.iterations));

    Graph g;
    for (int t = 0; t < schedule.iterations; ++t) {
        g.clear();
        const double lambda = schedule.lambda_at(t);
        Var m = g.leaf(mask);
        Var score, objective;
        try {
            Var masked = g.mul_channels(g.constant(activation), m);
            score = model.tail(g, masked);
            objective = g.sub(score, g.scale(area_loss(g, m, target), static_cast<float>(lambda)));
            g.backward(objective);
        } catch (const NumericalError& e) {
            std::ostringstream os;
            os << "channel optimization aborted at iteration " << t << ": " << e.what();
            throw NumericalError(os.str());
        }
        outcome.score_trace.push_back(g.value(score).scalar_value());

        const Tensor& grad = g.grad(m);
        for (int i = 0; i < channels; ++i) {
            velocity[i] = schedule.momentum * velocity[i] + grad[i];
            mask[i] = std::min(std::max(mask[i] + schedule.learning_rate * velocity[i], 0.0f), 1.0f);
        }
    }

    g.clear();
    Var m = g.leaf(mask);
    Var score = model.tail(g, g.mul_channels(g.constant(activation), m));
    outcome.mask = mask;
    outcome.score = g.value(score).scalar_value();
    outcome.residual = area_loss_value(mask, target) / static_cast<double>(channels);
    return outcome;
}

std::optional<int> find_extremal_channels(const ScorerModel& model, const Tensor& image,
                                          const std::vector<int>& grid, double phi0,
                                          const ChannelSchedule& schedule,
                                          std::vector<ChannelOutcome>* outcomes) {
    if (grid.empty()) throw InvalidInput("channel grid is empty");
    if (!std::is_sorted(grid.begin(), grid.end())) throw InvalidInput("channel grid must ascend");

    std::optional<int> found;
    for (int count : grid) {
        ChannelOutcome outcome = optimize_channel_mask(model, image, count, schedule);
        const double score = outcome.score;
        if (outcomes) outcomes->push_back(std::move(outcome));
        if (!found && score >= phi0) {
            found = count;
            if (!outcomes) break;  // callers wanting the curve get every grid point
        }
    }
    return found;
}

Tensor saliency_overlay(const Tensor& channel_mask, const Tensor& activations) {
    if (activations.rank() != 3) {
        throw InvalidInput("saliency_overlay: activations must be CxHxW, got " + activations.shape_string());
    }
    const int c = activations.extent(0), h = activations.extent(1), w = activations.extent(2);
    if (channel_mask.numel() != c) {
        throw InvalidInput("saliency_overlay: mask length " + std::to_string(channel_mask.numel()) +
                           " does not match channels " + std::to_string(c));
    }
    Tensor out({h, w});
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (int k = 0; k < c; ++k) {
        const float m = channel_mask[k];
        if (m == 0.0f) continue;
        for (std::int64_t i = 0; i < plane; ++i) out[i] += m * activations[k * plane + i];
    }
    return out;
}

std::pair<Tensor, int> per_class_mask(const std::vector<Tensor>& masks) {
    if (masks.empty()) throw InvalidInput("per_class_mask: empty mask list");
    const std::int64_t n = masks.front().numel();
    for (const Tensor& m : masks) {
        if (m.numel() != n) throw InvalidInput("per_class_mask: masks must share length");
    }
    Tensor mean({static_cast<int>(n)});
    for (std::int64_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (const Tensor& m : masks) acc += m[i];
        mean[i] = static_cast<float>(acc / static_cast<double>(masks.size()));
    }
    int best = 0;
    for (int i = 1; i < n; ++i) {
        if (mean[i] > mean[best]) best = i;  // ties keep the lowest index
    }
    return {std::move(mean), best};
}

InversionOutcome feature_inversion(const ScorerModel& model, const Tensor& target_activation,
                                   int steps, float learning_rate, float norm_budget) {
    if (!model.splittable()) throw InvalidInput("feature inversion needs a model with a split point");
    if (steps < 0) throw InvalidInput("feature inversion needs a non-negative step count");
    if (target_activation.shape() != model.activation_shape()) {
        throw InvalidInput("feature inversion: target shape " + target_activation.shape_string() +
                           " does not match the head output " + shape_to_string(model.activation_shape()));
    }

    const std::vector<int> in_shape = model.input_shape();
    if (norm_budget <= 0.0f) {
        norm_budget = 0.5f * std::sqrt(static_cast<float>(shape_numel(in_shape)));
    }

    Tensor image = Tensor::full(in_shape, 0.01f);
    InversionOutcome outcome;
    outcome.objective_trace.reserve(static_cast<std::size_t>(steps));

    Graph g;
    for (int t = 0; t < steps; ++t) {
        g.clear();
        Var x = g.leaf(image);
        Var objective;
        try {
            Var act = model.head(g, x);
            objective = g.sum(g.mul(g.constant(target_activation), act));
            g.backward(objective);
        } catch (const NumericalError& e) {
            std::ostringstream os;
            os << "feature inversion aborted at step " << t << ": " << e.what();
            throw NumericalError(os.str());
        }
        outcome.objective_trace.push_back(g.value(objective).scalar_value());

        const Tensor& grad = g.grad(x);
        for (std::int64_t i = 0; i < image.numel(); ++i) image[i] += learning_rate * grad[i];

        double norm_sq = 0.0;
        for (float v : image.data()) norm_sq += static_cast<double>(v) * v;
        const double norm = std::sqrt(norm_sq);
        if (norm > norm_budget) {
            const float scale = static_cast<float>(norm_budget / norm);
            for (auto& v : image.data()) v *= scale;
        }
        image.require_finite("feature inversion state");
    }

    outcome.image = std::move(image);
    return outcome;
}

} // namespace extremal
