#include "extremal/models.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "extremal/io.hpp"
#include "extremal/rng.hpp"

namespace extremal {

using nlohmann::json;

Var ScorerModel::head(Graph&, Var) const { throw InvalidInput("model has no split point"); }
Var ScorerModel::tail(Graph&, Var) const { throw InvalidInput("model has no split point"); }
std::vector<int> ScorerModel::activation_shape() const { throw InvalidInput("model has no split point"); }

double ScorerModel::score(const Tensor& image) const {
    Graph g;
    Var x = g.leaf(image);
    return g.value(forward(g, x)).scalar_value();
}

Tensor ScorerModel::head_value(const Tensor& image) const {
    Graph g;
    Var x = g.leaf(image);
    return g.value(head(g, x));
}

namespace {

std::vector<int> layer_output_shape(const Layer& layer, const std::vector<int>& in, std::size_t index) {
    const auto fail = [&](const std::string& why) {
        throw InvalidInput("model layer " + std::to_string(index) + ": " + why);
    };
    switch (layer.kind) {
        case LayerKind::Conv2d: {
            if (in.size() != 3) fail("conv2d needs a CxHxW input, got " + shape_to_string(in));
            if (layer.weights.rank() != 4) fail("conv2d weights must be Co x Ci x kh x kw");
            if (layer.weights.extent(1) != in[0]) {
                fail("conv2d expects " + std::to_string(layer.weights.extent(1)) +
                     " input channels, chain provides " + std::to_string(in[0]));
            }
            if (layer.bias.numel() != 0 && layer.bias.numel() != layer.weights.extent(0)) {
                fail("conv2d bias length does not match output channels");
            }
            return {layer.weights.extent(0), in[1], in[2]};
        }
        case LayerKind::Relu:
            return in;
        case LayerKind::MeanPool: {
            if (in.size() != 3) fail("mean_pool needs a CxHxW input");
            return {in[0]};
        }
        case LayerKind::Linear: {
            if (layer.weights.rank() != 2) fail("linear weights must be rank 2");
            if (layer.weights.extent(1) != static_cast<int>(shape_numel(in))) {
                fail("linear expects " + std::to_string(layer.weights.extent(1)) +
                     " inputs, chain provides " + std::to_string(shape_numel(in)));
            }
            if (layer.bias.numel() != layer.weights.extent(0)) fail("linear bias length mismatch");
            return {layer.weights.extent(0)};
        }
        case LayerKind::PlantedBox: {
            if (in.size() != 3) fail("planted_box needs a CxHxW input");
            const Box& b = layer.box;
            if (b.h <= 0 || b.w <= 0) fail("planted box is empty");
            if (b.y < 0 || b.x < 0 || b.y + b.h > in[1] || b.x + b.w > in[2]) {
                fail("planted box exceeds image extents");
            }
            return {1};
        }
        case LayerKind::PlantedChannels: {
            if (in.size() != 3) fail("planted_channels needs a CxHxW input");
            if (layer.channels.empty()) fail("planted channel set is empty");
            for (int k : layer.channels) {
                if (k < 0 || k >= in[0]) fail("planted channel index out of range");
            }
            return {1};
        }
    }
    fail("unknown layer kind");
    return {};
}

Var add_channel_bias(Graph& g, Var act, const Tensor& bias, const std::vector<int>& act_shape) {
    if (bias.numel() == 0) return act;
    Var ones = g.constant(Tensor::ones(act_shape));
    return g.add(act, g.mul_channels(ones, g.constant(bias)));
}

} // namespace

LayerStackModel::LayerStackModel(std::vector<int> input_shape, std::vector<Layer> layers, int split)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)), split_(split) {
    if (input_shape_.size() != 3) throw InvalidInput("model input shape must be CxHxW");
    if (layers_.empty()) throw InvalidInput("model needs at least one layer");
    std::vector<int> shape = input_shape_;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        shape = layer_output_shape(layers_[i], shape, i);
        shapes_.push_back(shape);
    }
    if (shape_numel(shapes_.back()) != 1) {
        throw InvalidInput("model must end in a scalar score, got " + shape_to_string(shapes_.back()));
    }
    if (split_ >= 0) {
        if (split_ < 1 || split_ >= static_cast<int>(layers_.size())) {
            throw InvalidInput("model split index out of range");
        }
        if (shapes_[static_cast<std::size_t>(split_ - 1)].size() != 3) {
            throw InvalidInput("model split point must produce a CxHxW activation");
        }
    }
}

Var LayerStackModel::apply_range(Graph& g, Var x, std::size_t first, std::size_t last,
                                 const std::vector<int>& in_shape) const {
    std::vector<int> shape = in_shape;
    for (std::size_t i = first; i < last; ++i) {
        const Layer& layer = layers_[i];
        switch (layer.kind) {
            case LayerKind::Conv2d: {
                x = g.conv2d(x, g.constant(layer.weights), layer.padding);
                shape = shapes_[i];
                x = add_channel_bias(g, x, layer.bias, shape);
                break;
            }
            case LayerKind::Relu:
                x = g.relu(x);
                break;
            case LayerKind::MeanPool:
                x = g.channel_means(x);
                shape = shapes_[i];
                break;
            case LayerKind::Linear:
                x = g.linear(x, g.constant(layer.weights), g.constant(layer.bias));
                shape = shapes_[i];
                break;
            case LayerKind::PlantedBox: {
                Tensor ind(shape);
                const float unit = 1.0f / (static_cast<float>(layer.box.pixels()) * shape[0]);
                for (int c = 0; c < shape[0]; ++c) {
                    for (int y = layer.box.y; y < layer.box.y + layer.box.h; ++y) {
                        for (int xx = layer.box.x; xx < layer.box.x + layer.box.w; ++xx) {
                            ind.at(c, y, xx) = unit;
                        }
                    }
                }
                x = g.scale(g.sum(g.mul(x, g.constant(ind))), layer.box_weight);
                shape = shapes_[i];
                break;
            }
            case LayerKind::PlantedChannels: {
                Tensor ind({shape[0]});
                for (int k : layer.channels) ind[k] = 1.0f;
                x = g.sum(g.mul(g.channel_means(x), g.constant(ind)));
                shape = shapes_[i];
                break;
            }
        }
    }
    return x;
}

Var LayerStackModel::forward(Graph& g, Var image) const {
    if (g.value(image).shape() != input_shape_) {
        throw InvalidInput("model expects input " + shape_to_string(input_shape_) + ", got " +
                           g.value(image).shape_string());
    }
    return apply_range(g, image, 0, layers_.size(), input_shape_);
}

Var LayerStackModel::head(Graph& g, Var image) const {
    if (!splittable()) throw InvalidInput("model has no split point");
    if (g.value(image).shape() != input_shape_) {
        throw InvalidInput("model expects input " + shape_to_string(input_shape_) + ", got " +
                           g.value(image).shape_string());
    }
    return apply_range(g, image, 0, static_cast<std::size_t>(split_), input_shape_);
}

Var LayerStackModel::tail(Graph& g, Var activation) const {
    if (!splittable()) throw InvalidInput("model has no split point");
    const std::vector<int> act_shape = activation_shape();
    if (g.value(activation).shape() != act_shape) {
        throw InvalidInput("model tail expects " + shape_to_string(act_shape) + ", got " +
                           g.value(activation).shape_string());
    }
    return apply_range(g, activation, static_cast<std::size_t>(split_), layers_.size(), act_shape);
}

std::vector<int> LayerStackModel::activation_shape() const {
    if (!splittable()) throw InvalidInput("model has no split point");
    return shapes_[static_cast<std::size_t>(split_ - 1)];
}

std::unique_ptr<LayerStackModel> planted_region_model(std::vector<int> input_shape, Box box, float weight) {
    Layer layer;
    layer.kind = LayerKind::PlantedBox;
    layer.box = box;
    layer.box_weight = weight;
    return std::make_unique<LayerStackModel>(std::move(input_shape), std::vector<Layer>{layer});
}

std::unique_ptr<LayerStackModel> planted_channel_model(std::vector<int> input_shape,
                                                       std::vector<int> planted_channels,
                                                       int total_channels, std::uint64_t seed) {
    if (planted_channels.empty()) throw InvalidInput("planted channel set must be non-empty");
    if (input_shape.size() != 3) throw InvalidInput("model input shape must be CxHxW");
    Rng rng(seed);
    const int cin = input_shape[0];

    const auto conv_init = [&](int co, int ci) {
        const float scale = 1.0f / std::sqrt(static_cast<float>(ci) * 9.0f);
        Layer layer;
        layer.kind = LayerKind::Conv2d;
        layer.padding = Padding::Replicate;
        layer.weights = rng.normal_tensor({co, ci, 3, 3}, 0.0f, scale);
        layer.bias = Tensor::full({co}, 0.1f);  // keeps post-relu channel means positive
        return layer;
    };

    Layer relu;
    relu.kind = LayerKind::Relu;
    Layer planted;
    planted.kind = LayerKind::PlantedChannels;
    planted.channels = planted_channels;

    std::vector<Layer> layers;
    layers.push_back(conv_init(total_channels, cin));
    layers.push_back(relu);
    layers.push_back(conv_init(total_channels, total_channels));
    layers.push_back(relu);
    layers.push_back(planted);
    return std::make_unique<LayerStackModel>(std::move(input_shape), std::move(layers), 4);
}

namespace {

Tensor load_blob(const std::filesystem::path& dir, const json& j, const char* key, std::size_t index,
                 bool required) {
    if (!j.contains(key)) {
        if (required) throw InvalidInput("model layer " + std::to_string(index) + ": missing '" + key + "'");
        return Tensor();
    }
    const std::filesystem::path p = dir / j.at(key).get<std::string>();
    if (!std::filesystem::exists(p)) {
        throw InvalidInput("model layer " + std::to_string(index) + ": missing FT1 blob " + p.string());
    }
    return load_ft1(p.string());
}

} // namespace

std::unique_ptr<LayerStackModel> load_model(const std::string& spec_path) {
    json doc;
    try {
        doc = json::parse(read_text_file(spec_path));
    } catch (const json::exception& e) {
        throw InvalidInput("model spec " + spec_path + " does not parse: " + e.what());
    }
    const std::filesystem::path dir = std::filesystem::path(spec_path).parent_path();
    try {
        std::vector<int> input = doc.at("input").get<std::vector<int>>();
        std::vector<Layer> layers;
        std::size_t index = 0;
        for (const auto& lj : doc.at("layers")) {
            Layer layer;
            const std::string type = lj.at("type").get<std::string>();
            if (type == "conv2d") {
                layer.kind = LayerKind::Conv2d;
                layer.weights = load_blob(dir, lj, "weights", index, true);
                layer.bias = load_blob(dir, lj, "bias", index, false);
                const std::string pad = lj.value("padding", "zero");
                if (pad == "zero") layer.padding = Padding::Zero;
                else if (pad == "replicate") layer.padding = Padding::Replicate;
                else throw InvalidInput("model layer " + std::to_string(index) + ": unknown padding " + pad);
            } else if (type == "relu") {
                layer.kind = LayerKind::Relu;
            } else if (type == "mean_pool") {
                layer.kind = LayerKind::MeanPool;
            } else if (type == "linear") {
                layer.kind = LayerKind::Linear;
                layer.weights = load_blob(dir, lj, "weights", index, true);
                layer.bias = load_blob(dir, lj, "bias", index, true);
            } else if (type == "planted_box") {
                layer.kind = LayerKind::PlantedBox;
                const auto b = lj.at("box").get<std::vector<int>>();
                if (b.size() != 4) throw InvalidInput("model layer " + std::to_string(index) + ": box must be [y,x,h,w]");
                layer.box = Box{b[0], b[1], b[2], b[3]};
                layer.box_weight = lj.value("weight", 1.0f);
            } else if (type == "planted_channels") {
                layer.kind = LayerKind::PlantedChannels;
                layer.channels = lj.at("channels").get<std::vector<int>>();
            } else {
                throw InvalidInput("model layer " + std::to_string(index) + ": unknown type " + type);
            }
            layers.push_back(std::move(layer));
            ++index;
        }
        const int split = doc.value("split", -1);
        return std::make_unique<LayerStackModel>(std::move(input), std::move(layers), split);
    } catch (const json::exception& e) {
        throw InvalidInput("model spec " + spec_path + " is malformed: " + e.what());
    }
}

void save_model(const LayerStackModel& model, const std::string& spec_path) {
    const std::filesystem::path dir = std::filesystem::path(spec_path).parent_path();
    const std::string stem = std::filesystem::path(spec_path).stem().string();
    json doc;
    doc["input"] = model.input_shape();
    json layers = json::array();
    std::size_t index = 0;
    for (const Layer& layer : model.layers()) {
        json lj;
        const std::string prefix = stem + "_l" + std::to_string(index);
        switch (layer.kind) {
            case LayerKind::Conv2d: {
                lj["type"] = "conv2d";
                lj["weights"] = prefix + "_w.ft1";
                save_ft1((dir / (prefix + "_w.ft1")).string(), layer.weights);
                if (layer.bias.numel() > 0) {
                    lj["bias"] = prefix + "_b.ft1";
                    save_ft1((dir / (prefix + "_b.ft1")).string(), layer.bias);
                }
                lj["padding"] = layer.padding == Padding::Zero ? "zero" : "replicate";
                break;
            }
            case LayerKind::Relu: lj["type"] = "relu"; break;
            case LayerKind::MeanPool: lj["type"] = "mean_pool"; break;
            case LayerKind::Linear: {
                lj["type"] = "linear";
                lj["weights"] = prefix + "_w.ft1";
                lj["bias"] = prefix + "_b.ft1";
                save_ft1((dir / (prefix + "_w.ft1")).string(), layer.weights);
                save_ft1((dir / (prefix + "_b.ft1")).string(), layer.bias);
                break;
            }
            case LayerKind::PlantedBox:
                lj["type"] = "planted_box";
                lj["box"] = {layer.box.y, layer.box.x, layer.box.h, layer.box.w};
                lj["weight"] = layer.box_weight;
                break;
            case LayerKind::PlantedChannels:
                lj["type"] = "planted_channels";
                lj["channels"] = layer.channels;
                break;
        }
        layers.push_back(std::move(lj));
        ++index;
    }
    doc["layers"] = std::move(layers);
    if (model.split() >= 0) doc["split"] = model.split();
    write_text_file(spec_path, doc.dump(2) + "\n");
}

} // namespace extremal
