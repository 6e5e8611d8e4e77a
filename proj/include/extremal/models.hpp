#ifndef EXTREMAL_MODELS_HPP
#define EXTREMAL_MODELS_HPP

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "extremal/graph.hpp"
#include "extremal/tensor.hpp"

namespace extremal {

// Axis-aligned rectangle, top-left corner plus extents, in pixel units.
struct Box {
    int y = 0, x = 0, h = 0, w = 0;

    bool contains(int py, int px) const { return py >= y && py < y + h && px >= x && px < x + w; }
    std::int64_t pixels() const { return static_cast<std::int64_t>(h) * w; }
};

// Pluggable differentiable map from an image tensor to a scalar score,
// recorded on a caller-owned Graph. Loaded models are immutable; each
// optimization thread runs its own Graph around the shared weights.
class ScorerModel {
public:
    virtual ~ScorerModel() = default;

    virtual std::vector<int> input_shape() const = 0;  // {C, H, W}
    virtual Var forward(Graph& g, Var image) const = 0;

    // Split support for channel attribution: forward == tail(head(x)).
    virtual bool splittable() const { return false; }
    virtual Var head(Graph& g, Var image) const;
    virtual Var tail(Graph& g, Var activation) const;
    virtual std::vector<int> activation_shape() const;

    // Convenience: score on a scratch graph.
    double score(const Tensor& image) const;
    Tensor head_value(const Tensor& image) const;
};

enum class LayerKind { Conv2d, Relu, MeanPool, Linear, PlantedBox, PlantedChannels };

struct Layer {
    LayerKind kind = LayerKind::Relu;
    Tensor weights;
    Tensor bias;
    Padding padding = Padding::Zero;
    Box box;
    float box_weight = 1.0f;
    std::vector<int> channels;
};

// A model replaying a validated layer list. The shape chain is checked at
// construction; a break reports the offending layer index.
class LayerStackModel : public ScorerModel {
public:
    LayerStackModel(std::vector<int> input_shape, std::vector<Layer> layers, int split = -1);

    std::vector<int> input_shape() const override { return input_shape_; }
    Var forward(Graph& g, Var image) const override;
    bool splittable() const override { return split_ >= 0; }
    Var head(Graph& g, Var image) const override;
    Var tail(Graph& g, Var activation) const override;
    std::vector<int> activation_shape() const override;

    const std::vector<Layer>& layers() const { return layers_; }
    int split() const { return split_; }
    const std::vector<std::vector<int>>& shape_chain() const { return shapes_; }

private:
    std::vector<int> input_shape_;
    std::vector<Layer> layers_;
    int split_;
    std::vector<std::vector<int>> shapes_;  // shape after each layer

    Var apply_range(Graph& g, Var x, std::size_t first, std::size_t last, const std::vector<int>& in_shape) const;
};

// Score = weight * mean of the image over the box (across channels); the
// ground-truth salient region is the box itself.
std::unique_ptr<LayerStackModel> planted_region_model(std::vector<int> input_shape, Box box, float weight);

// Fixed seeded conv stack head producing `total_channels` activation maps;
// the tail reads only the planted channel set, every other channel is
// provably irrelevant.
std::unique_ptr<LayerStackModel> planted_channel_model(std::vector<int> input_shape,
                                                       std::vector<int> planted_channels,
                                                       int total_channels, std::uint64_t seed);

// ModelSpec file: JSON layer list with FT1 weight blobs referenced by
// relative path.
std::unique_ptr<LayerStackModel> load_model(const std::string& spec_path);
void save_model(const LayerStackModel& model, const std::string& spec_path);

} // namespace extremal

#endif
