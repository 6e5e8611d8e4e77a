#ifndef EXTREMAL_GRAPH_HPP
#define EXTREMAL_GRAPH_HPP

#include <cstdint>
#include <functional>
#include <vector>

#include "extremal/tensor.hpp"

namespace extremal {

class Graph;

// Handle to a node recorded on a Graph.
struct Var {
    int idx = -1;
    bool valid() const { return idx >= 0; }
};

enum class Padding { Zero, Replicate };

// Reverse-mode tape. Nodes are recorded in execution order; backward walks the
// tape in reverse. A Graph is single-threaded; concurrent optimizations each
// own a private Graph. Cleared between optimizer steps.
class Graph {
public:
    using BackwardFn = std::function<void(Graph&, int)>;

    Var leaf(Tensor value);
    Var constant(Tensor value) { return leaf(std::move(value)); }
    Var constant_scalar(float v) { return leaf(Tensor::scalar(v)); }

    // Elementwise; shapes must match or one operand must be a scalar tensor.
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var div(Var a, Var b);
    Var add_scalar(Var a, float c);
    Var scale(Var a, float c);
    Var rsub_scalar(float c, Var a);  // c - a
    Var exp(Var a);
    Var relu(Var a);
    Var clamp(Var a, float lo, float hi);

    // Full reductions.
    Var sum(Var a);
    Var mean(Var a);
    Var max_all(Var a, std::int64_t* argmax = nullptr);

    // Cross-correlation with odd kernel extents, output spatially same-sized.
    // input H x W with kernel kh x kw, or C x H x W with kernel Co x C x kh x kw.
    // Differentiable w.r.t. both input and kernel.
    Var conv2d(Var input, Var kernel, Padding padding);

    // Flattens, sorts non-decreasing (stable on ties), reports the permutation
    // sorted position -> original index. Gradient scatters through the fixed
    // permutation.
    Var sort_with_permutation(Var a, std::vector<std::int64_t>* perm = nullptr);

    // out[o] = sum_i weight[o,i] * flatten(x)[i] + bias[o]
    Var linear(Var x, Var weight, Var bias);

    // act C x H x W times per-channel vector, broadcast along spatial dims.
    Var mul_channels(Var act, Var channel_vec);

    // Spatial mean per channel: C x H x W -> C.
    Var channel_means(Var act);

    // Extension point for fused domain ops (pyramid lookup, mask expansion).
    Var record(Tensor value, std::vector<Var> parents, BackwardFn fn);

    // Seeds the (scalar) root adjoint with one and accumulates adjoints for
    // every node the root depends on. Grads are reset on each call.
    void backward(Var root);

    const Tensor& value(Var v) const;
    const Tensor& grad(Var v) const;

    const Tensor& value_of(int node) const { return nodes_[static_cast<std::size_t>(node)].value; }
    Tensor& grad_ref(int node) { return nodes_[static_cast<std::size_t>(node)].grad; }
    const std::vector<int>& parents_of(int node) const { return nodes_[static_cast<std::size_t>(node)].parents; }

    int size() const { return static_cast<int>(nodes_.size()); }
    void clear() { nodes_.clear(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<int> parents;
        BackwardFn backward_fn;
    };

    std::vector<Node> nodes_;

    Var binary_elementwise(Var a, Var b, const char* name,
                           float (*fwd)(float, float),
                           void (*bwd)(float, float, float, float&, float&));
    void check_var(Var v, const char* op) const;
};

} // namespace extremal

#endif
