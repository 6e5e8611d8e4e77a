#include "extremal/graph.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

namespace extremal {

namespace {

bool broadcast_compatible(const Tensor& a, const Tensor& b) {
    return a.same_shape(b) || a.numel() == 1 || b.numel() == 1;
}

} // namespace

void Graph::check_var(Var v, const char* op) const {
    if (!v.valid() || v.idx >= size()) {
        throw InvalidInput(std::string(op) + ": invalid graph handle");
    }
}

Var Graph::leaf(Tensor value) { return record(std::move(value), {}, nullptr); }

Var Graph::record(Tensor value, std::vector<Var> parents, BackwardFn fn) {
    value.require_finite("graph node");
    Node node;
    node.value = std::move(value);
    node.parents.reserve(parents.size());
    for (Var p : parents) {
        check_var(p, "record");
        node.parents.push_back(p.idx);
    }
    node.backward_fn = std::move(fn);
    nodes_.push_back(std::move(node));
    return Var{size() - 1};
}

const Tensor& Graph::value(Var v) const {
    check_var(v, "value");
    return nodes_[static_cast<std::size_t>(v.idx)].value;
}

const Tensor& Graph::grad(Var v) const {
    check_var(v, "grad");
    const Tensor& g = nodes_[static_cast<std::size_t>(v.idx)].grad;
    if (g.numel() == 0) throw InvalidInput("grad: node has no adjoint (run backward on a root that reaches it)");
    return g;
}

Var Graph::binary_elementwise(Var a, Var b, const char* name,
                              float (*fwd)(float, float),
                              void (*bwd)(float, float, float, float&, float&)) {
    check_var(a, name);
    check_var(b, name);
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (!broadcast_compatible(av, bv)) {
        throw InvalidInput(std::string(name) + ": shape mismatch " + av.shape_string() + " vs " + bv.shape_string());
    }
    const bool a_scalar = av.numel() == 1 && !av.same_shape(bv);
    const bool b_scalar = bv.numel() == 1 && !bv.same_shape(av);
    const Tensor& big = a_scalar ? bv : av;

    Tensor out(big.shape());
    const std::int64_t n = big.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        const float x = a_scalar ? av[0] : av[i];
        const float y = b_scalar ? bv[0] : bv[i];
        out[i] = fwd(x, y);
    }
    const int ai = a.idx, bi = b.idx;
    return record(std::move(out), {a, b}, [=](Graph& g, int node) {
        const Tensor& gout = g.grad_ref(node);
        const Tensor& xa = g.value_of(ai);
        const Tensor& xb = g.value_of(bi);
        Tensor& ga = g.grad_ref(ai);
        Tensor& gb = g.grad_ref(bi);
        double acc_a = 0.0, acc_b = 0.0;
        for (std::int64_t i = 0; i < gout.numel(); ++i) {
            const float x = a_scalar ? xa[0] : xa[i];
            const float y = b_scalar ? xb[0] : xb[i];
            float da = 0.0f, db = 0.0f;
            bwd(x, y, gout[i], da, db);
            if (a_scalar) acc_a += da; else ga[i] += da;
            if (b_scalar) acc_b += db; else gb[i] += db;
        }
        if (a_scalar) ga[0] += static_cast<float>(acc_a);
        if (b_scalar) gb[0] += static_cast<float>(acc_b);
    });
}

Var Graph::add(Var a, Var b) {
    return binary_elementwise(a, b, "add",
        [](float x, float y) { return x + y; },
        [](float, float, float g, float& da, float& db) { da = g; db = g; });
}

Var Graph::sub(Var a, Var b) {
    return binary_elementwise(a, b, "sub",
        [](float x, float y) { return x - y; },
        [](float, float, float g, float& da, float& db) { da = g; db = -g; });
}

Var Graph::mul(Var a, Var b) {
    return binary_elementwise(a, b, "mul",
        [](float x, float y) { return x * y; },
        [](float x, float y, float g, float& da, float& db) { da = g * y; db = g * x; });
}

Var Graph::div(Var a, Var b) {
    return binary_elementwise(a, b, "div",
        [](float x, float y) { return x / y; },
        [](float x, float y, float g, float& da, float& db) { da = g / y; db = -g * x / (y * y); });
}

Var Graph::add_scalar(Var a, float c) {
    check_var(a, "add_scalar");
    Tensor out = value(a);
    for (auto& v : out.data()) v += c;
    const int ai = a.idx;
    return record(std::move(out), {a}, [=](Graph& g, int node) {
        const Tensor& gout = g.grad_ref(node);
        Tensor& ga = g.grad_ref(ai);
        for (std::int64_t i = 0; i < gout.numel(); ++i) ga[i] += gout[i];
    });
}

Var Graph::scale(Var a, float c) {
    check_var(a, "scale");
    Tensor out = value(a);
    for (auto& v : out.data()) v *= c;
    const int ai = a.idx;
    return record(std::move(out), {a}, [=](Graph& g, int node) {
        const Tensor& gout = g.grad_ref(node);
        Tensor& ga = g.grad_ref(ai);
        for (std::int64_t i = 0; i < gout.numel(); ++i) ga[i] += c * gout[i];
    });
}

Var Graph::rsub_scalar(float c, Var a) {
    check_var(a, "rsub_scalar");
    Tensor out = value(a);
    for (auto& v : out.data()) v = c - v;
    const int ai = a.idx;
    return record(std::move(out), {a}, [=](Graph& g, int node) {
        const Tensor& gout = g.grad_ref(node);
        Tensor& ga = g.grad_ref(ai);
        for (std::int64_t i = 0; i < gout.numel(); ++i) ga[i] -= gout[i];
    });
}

Var Graph::exp(Var a) {
    check_var(a, "exp");
    Tensor out = value(a);
    for (auto& v : out.data()) v = std::exp(v);
    const int ai = a.idx;
    return record(std::move(out), {a}, [=](Graph& g, int node) {
        const Tensor& gout = g.grad_ref(node);
        const Tensor& ov = g.value_of(node);
        Tensor& ga = g.grad_ref(ai);
        for (std::int64_t i = 0; i < gout.numel(); ++i) ga[i] += ov[i] * gout[i];
    });
}

Var Graph::relu(Var a) {
    check_var(a, "relu");
    Tensor out = value(a);
    for (auto& v : out.data()) v = v > 0.0f ? v : 0.0f;
    const int ai = a.idx;
    return record(std::move(out), {a}, [=](Graph& g, int node) {
        const Tensor& gout = g.grad_ref(node);
        const Tensor& xa = g.value_of(ai);
        Tensor& ga = g.grad_ref(ai);
        for (std::int64_t i = 0; i < gout.numel(); ++i) {
            if (xa[i] > 0.0f) ga[i] += gout[i];
        }
    });
}

Var Graph::clamp(Var a, float lo, float hi) {
    check_var(a, "clamp");
    if (lo > hi) throw InvalidInput("clamp: lo > hi");
    Tensor out = value(a);
    for (auto& v : out.data()) v = std::min(std::max(v, lo), hi);
    const int ai = a.idx;
    return record(std::move(out), {a}, [=](Graph& g, int node) {
        const Tensor& gout = g.grad_ref(node);
        const Tensor& xa = g.value_of(ai);
        Tensor& ga = g.grad_ref(ai);
        for (std::int64_t i = 0; i < gout.numel(); ++i) {
            if (xa[i] >= lo && xa[i] <= hi) ga[i] += gout[i];
        }
    });
}

Var Graph::sum(Var a) {
    check_var(a, "sum");
    const Tensor& av = value(a);
    double acc = 0.0;
    for (std::int64_t i = 0; i < av.numel(); ++i) acc += av[i];
    const int ai = a.idx;
    return record(Tensor::scalar(static_cast<float>(acc)), {a}, [=](Graph& g, int node) {
        const float gout = g.grad_ref(node)[0];
        Tensor& ga = g.grad_ref(ai);
        for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] += gout;
    });
}

Var Graph::mean(Var a) {
    check_var(a, "mean");
    const Tensor& av = value(a);
    const std::int64_t n = av.numel();
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) acc += av[i];
    const int ai = a.idx;
    const float inv_n = 1.0f / static_cast<float>(n);
    return record(Tensor::scalar(static_cast<float>(acc / static_cast<double>(n))), {a}, [=](Graph& g, int node) {
        const float gout = g.grad_ref(node)[0] * inv_n;
        Tensor& ga = g.grad_ref(ai);
        for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] += gout;
    });
}

Var Graph::max_all(Var a, std::int64_t* argmax) {
    check_var(a, "max_all");
    const Tensor& av = value(a);
    std::int64_t arg = 0;
    float best = av[0];
    for (std::int64_t i = 1; i < av.numel(); ++i) {
        if (av[i] > best) {  // ties keep the lowest index
            best = av[i];
            arg = i;
        }
    }
    if (argmax) *argmax = arg;
    const int ai = a.idx;
    return record(Tensor::scalar(best), {a}, [=](Graph& g, int node) {
        g.grad_ref(ai)[arg] += g.grad_ref(node)[0];
    });
}

Var Graph::conv2d(Var input, Var kernel, Padding padding) {
    check_var(input, "conv2d");
    check_var(kernel, "conv2d");
    const Tensor& in = value(input);
    const Tensor& kr = value(kernel);

    int cin = 1, h = 0, w = 0, cout = 1, kh = 0, kw = 0;
    if (in.rank() == 2 && kr.rank() == 2) {
        h = in.extent(0); w = in.extent(1);
        kh = kr.extent(0); kw = kr.extent(1);
    } else if (in.rank() == 3 && kr.rank() == 4) {
        cin = in.extent(0); h = in.extent(1); w = in.extent(2);
        cout = kr.extent(0); kh = kr.extent(2); kw = kr.extent(3);
        if (kr.extent(1) != cin) {
            throw InvalidInput("conv2d: kernel input channels " + std::to_string(kr.extent(1)) +
                               " do not match image channels " + std::to_string(cin));
        }
    } else {
        throw InvalidInput("conv2d: expected HxW input with kh x kw kernel or CxHxW with Co x C x kh x kw, got " +
                           in.shape_string() + " and " + kr.shape_string());
    }
    if (kh % 2 == 0 || kw % 2 == 0) throw InvalidInput("conv2d: kernel extents must be odd");
    const int ry = kh / 2, rx = kw / 2;
    if (kh > h + 2 * ry || kw > w + 2 * rx) throw InvalidInput("conv2d: kernel larger than padded input");

    const bool chan = in.rank() == 3;
    Tensor out(chan ? std::vector<int>{cout, h, w} : std::vector<int>{h, w});
    const auto kernel_at = [&](int co, int ci, int dy, int dx) {
        return chan ? kr.data()[((static_cast<std::size_t>(co) * cin + ci) * kh + dy) * kw + dx]
                    : kr.at(dy, dx);
    };
    const auto input_at = [&](int ci, int sy, int sx) {
        return chan ? in.at(ci, sy, sx) : in.at(sy, sx);
    };

    for (int co = 0; co < cout; ++co) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                float acc = 0.0f;
                for (int ci = 0; ci < cin; ++ci) {
                    for (int dy = 0; dy < kh; ++dy) {
                        int sy = y + dy - ry;
                        if (padding == Padding::Replicate) sy = std::clamp(sy, 0, h - 1);
                        else if (sy < 0 || sy >= h) continue;
                        for (int dx = 0; dx < kw; ++dx) {
                            int sx = x + dx - rx;
                            if (padding == Padding::Replicate) sx = std::clamp(sx, 0, w - 1);
                            else if (sx < 0 || sx >= w) continue;
                            acc += kernel_at(co, ci, dy, dx) * input_at(ci, sy, sx);
                        }
                    }
                }
                if (chan) out.at(co, y, x) = acc;
                else out.at(y, x) = acc;
            }
        }
    }

    const int ii = input.idx, ki = kernel.idx;
    return record(std::move(out), {input, kernel}, [=](Graph& g, int node) {
        const Tensor& gout = g.grad_ref(node);
        const Tensor& inv = g.value_of(ii);
        const Tensor& krv = g.value_of(ki);
        Tensor& gin = g.grad_ref(ii);
        Tensor& gkr = g.grad_ref(ki);
        const auto kr_at = [&](int co, int ci, int dy, int dx) {
            return chan ? krv.data()[((static_cast<std::size_t>(co) * cin + ci) * kh + dy) * kw + dx]
                        : krv.at(dy, dx);
        };
        for (int co = 0; co < cout; ++co) {
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    const float go = chan ? gout.at(co, y, x) : gout.at(y, x);
                    if (go == 0.0f) continue;
                    for (int ci = 0; ci < cin; ++ci) {
                        for (int dy = 0; dy < kh; ++dy) {
                            int sy = y + dy - ry;
                            if (padding == Padding::Replicate) sy = std::clamp(sy, 0, h - 1);
                            else if (sy < 0 || sy >= h) continue;
                            for (int dx = 0; dx < kw; ++dx) {
                                int sx = x + dx - rx;
                                if (padding == Padding::Replicate) sx = std::clamp(sx, 0, w - 1);
                                else if (sx < 0 || sx >= w) continue;
                                const std::size_t in_idx = chan
                                    ? (static_cast<std::size_t>(ci) * h + sy) * w + sx
                                    : static_cast<std::size_t>(sy) * w + sx;
                                const std::size_t k_idx = chan
                                    ? ((static_cast<std::size_t>(co) * cin + ci) * kh + dy) * kw + dx
                                    : static_cast<std::size_t>(dy) * kw + dx;
                                gin.data()[in_idx] += kr_at(co, ci, dy, dx) * go;
                                gkr.data()[k_idx] += inv.data()[in_idx] * go;
                            }
                        }
                    }
                }
            }
        }
    });
}

Var Graph::sort_with_permutation(Var a, std::vector<std::int64_t>* perm_out) {
    check_var(a, "sort_with_permutation");
    const Tensor& av = value(a);
    const std::int64_t n = av.numel();
    auto perm = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(n));
    std::iota(perm->begin(), perm->end(), static_cast<std::int64_t>(0));
    std::stable_sort(perm->begin(), perm->end(), [&](std::int64_t i, std::int64_t j) { return av[i] < av[j]; });
    Tensor out({static_cast<int>(n)});
    for (std::int64_t i = 0; i < n; ++i) out[i] = av[(*perm)[static_cast<std::size_t>(i)]];
    if (perm_out) *perm_out = *perm;
    const int ai = a.idx;
    return record(std::move(out), {a}, [=](Graph& g, int node) {
        const Tensor& gout = g.grad_ref(node);
        Tensor& ga = g.grad_ref(ai);
        for (std::int64_t i = 0; i < gout.numel(); ++i) {
            ga[(*perm)[static_cast<std::size_t>(i)]] += gout[i];
        }
    });
}

Var Graph::linear(Var x, Var weight, Var bias) {
    check_var(x, "linear");
    check_var(weight, "linear");
    check_var(bias, "linear");
    const Tensor& xv = value(x);
    const Tensor& wv = value(weight);
    const Tensor& bv = value(bias);
    if (wv.rank() != 2) throw InvalidInput("linear: weight must be rank 2, got " + wv.shape_string());
    const int m = wv.extent(0);
    const int n = wv.extent(1);
    if (xv.numel() != n) {
        throw InvalidInput("linear: input numel " + std::to_string(xv.numel()) +
                           " does not match weight columns " + std::to_string(n));
    }
    if (bv.numel() != m) throw InvalidInput("linear: bias length does not match weight rows");

    Tensor out({m});
    for (int o = 0; o < m; ++o) {
        double acc = bv[o];
        for (int i = 0; i < n; ++i) acc += static_cast<double>(wv.at(o, i)) * xv[i];
        out[o] = static_cast<float>(acc);
    }
    const int xi = x.idx, wi = weight.idx, bi = bias.idx;
    return record(std::move(out), {x, weight, bias}, [=](Graph& g, int node) {
        const Tensor& gout = g.grad_ref(node);
        const Tensor& xv2 = g.value_of(xi);
        const Tensor& wv2 = g.value_of(wi);
        Tensor& gx = g.grad_ref(xi);
        Tensor& gw = g.grad_ref(wi);
        Tensor& gb = g.grad_ref(bi);
        for (int o = 0; o < m; ++o) {
            const float go = gout[o];
            if (go == 0.0f) continue;
            gb[o] += go;
            for (int i = 0; i < n; ++i) {
                gx[i] += wv2.at(o, i) * go;
                gw.at(o, i) += xv2[i] * go;
            }
        }
    });
}

Var Graph::mul_channels(Var act, Var channel_vec) {
    check_var(act, "mul_channels");
    check_var(channel_vec, "mul_channels");
    const Tensor& av = value(act);
    const Tensor& cv = value(channel_vec);
    if (av.rank() != 3) throw InvalidInput("mul_channels: activation must be CxHxW, got " + av.shape_string());
    const int c = av.extent(0), h = av.extent(1), w = av.extent(2);
    if (cv.numel() != c) {
        throw InvalidInput("mul_channels: channel vector length " + std::to_string(cv.numel()) +
                           " does not match channels " + std::to_string(c));
    }
    Tensor out(av.shape());
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    for (int k = 0; k < c; ++k) {
        const float s = cv[k];
        for (std::int64_t i = 0; i < hw; ++i) out[k * hw + i] = s * av[k * hw + i];
    }
    const int ai = act.idx, ci = channel_vec.idx;
    return record(std::move(out), {act, channel_vec}, [=](Graph& g, int node) {
        const Tensor& gout = g.grad_ref(node);
        const Tensor& av2 = g.value_of(ai);
        const Tensor& cv2 = g.value_of(ci);
        Tensor& ga = g.grad_ref(ai);
        Tensor& gc = g.grad_ref(ci);
        for (int k = 0; k < c; ++k) {
            double acc = 0.0;
            const float s = cv2[k];
            for (std::int64_t i = 0; i < hw; ++i) {
                const float go = gout[k * hw + i];
                ga[k * hw + i] += s * go;
                acc += static_cast<double>(av2[k * hw + i]) * go;
            }
            gc[k] += static_cast<float>(acc);
        }
    });
}

Var Graph::channel_means(Var act) {
    check_var(act, "channel_means");
    const Tensor& av = value(act);
    if (av.rank() != 3) throw InvalidInput("channel_means: activation must be CxHxW, got " + av.shape_string());
    const int c = av.extent(0), h = av.extent(1), w = av.extent(2);
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    Tensor out({c});
    for (int k = 0; k < c; ++k) {
        double acc = 0.0;
        for (std::int64_t i = 0; i < hw; ++i) acc += av[k * hw + i];
        out[k] = static_cast<float>(acc / static_cast<double>(hw));
    }
    const int ai = act.idx;
    const float inv = 1.0f / static_cast<float>(hw);
    return record(std::move(out), {act}, [=](Graph& g, int node) {
        const Tensor& gout = g.grad_ref(node);
        Tensor& ga = g.grad_ref(ai);
        for (int k = 0; k < c; ++k) {
            const float go = gout[k] * inv;
            for (std::int64_t i = 0; i < hw; ++i) ga[k * hw + i] += go;
        }
    });
}

void Graph::backward(Var root) {
    check_var(root, "backward");
    if (value(root).numel() != 1) {
        throw InvalidInput("backward: root must be scalar, got " + value(root).shape_string());
    }

    std::vector<char> reachable(nodes_.size(), 0);
    reachable[static_cast<std::size_t>(root.idx)] = 1;
    for (int i = root.idx; i >= 0; --i) {
        if (!reachable[static_cast<std::size_t>(i)]) continue;
        for (int p : nodes_[static_cast<std::size_t>(i)].parents) reachable[static_cast<std::size_t>(p)] = 1;
    }

    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (reachable[i]) nodes_[i].grad = Tensor::zeros(nodes_[i].value.shape());
        else nodes_[i].grad = Tensor();
    }
    nodes_[static_cast<std::size_t>(root.idx)].grad = Tensor::ones(value(root).shape());

    for (int i = root.idx; i >= 0; --i) {
        if (!reachable[static_cast<std::size_t>(i)]) continue;
        Node& node = nodes_[static_cast<std::size_t>(i)];
        if (node.backward_fn) node.backward_fn(*this, i);
    }
}

} // namespace extremal
