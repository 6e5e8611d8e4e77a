#include "extremal/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>

#include "extremal/area_loss.hpp"
#include "extremal/gradcheck.hpp"
#include "extremal/mask_generator.hpp"
#include "extremal/models.hpp"
#include "extremal/perturbation.hpp"
#include "extremal/rng.hpp"

namespace extremal {

namespace {

using DVec = std::vector<double>;

// Keeps sampled values clear of relu/clamp kinks so central differences see a
// smooth function.
Tensor sample_away_from_kinks(Rng& rng, std::vector<int> shape, const std::vector<float>& kinks,
                              float lo = -2.0f, float hi = 2.0f, float clearance = 2e-2f) {
    Tensor t = rng.uniform_tensor(std::move(shape), lo, hi);
    for (auto& v : t.data()) {
        for (float k : kinks) {
            if (std::abs(v - k) < clearance) v = k + (v >= k ? clearance : -clearance) * 2.0f;
        }
    }
    return t;
}

using Builder = std::function<Var(Graph&, Var)>;

// Compares the f32 analytic gradient of the recorded composite against
// central differences of an independent double-precision re-evaluation.
void check_op(SuiteReport& report, const std::string& name, const Tensor& x0, const Builder& build,
              const ReferenceFn& reference) {
    report.count();
    Graph g;
    Var x = g.leaf(x0);
    Var y = build(g, x);
    g.backward(y);
    const Tensor analytic = g.grad(x);

    // The twin must agree with the production forward before it can serve as
    // the differencing oracle.
    const double twin = reference(DVec(x0.data().begin(), x0.data().end()));
    const double produced = g.value(y).scalar_value();
    const double agree = std::abs(twin - produced) / std::max({std::abs(twin), std::abs(produced), 1e-6});
    if (agree > 1e-4) {
        report.fail(name + ": double reference diverges from the forward value (" + std::to_string(twin) +
                    " vs " + std::to_string(produced) + ")");
        return;
    }

    const GradCheckReport r = check_gradient(reference, x0, analytic);
    if (!r.pass()) report.fail(name + ": " + r.describe());
}

// ---- double-precision twins ------------------------------------------------

DVec dconv2d(const DVec& in, int cin, int h, int w, const DVec& kernel, int cout, int kh, int kw,
             Padding padding) {
    const int ry = kh / 2, rx = kw / 2;
    DVec out(static_cast<std::size_t>(cout) * h * w, 0.0);
    for (int co = 0; co < cout; ++co) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int ci = 0; ci < cin; ++ci) {
                    for (int dy = 0; dy < kh; ++dy) {
                        int sy = y + dy - ry;
                        if (padding == Padding::Replicate) sy = std::clamp(sy, 0, h - 1);
                        else if (sy < 0 || sy >= h) continue;
                        for (int dx = 0; dx < kw; ++dx) {
                            int sx = x + dx - rx;
                            if (padding == Padding::Replicate) sx = std::clamp(sx, 0, w - 1);
                            else if (sx < 0 || sx >= w) continue;
                            acc += kernel[((static_cast<std::size_t>(co) * cin + ci) * kh + dy) * kw + dx] *
                                   in[(static_cast<std::size_t>(ci) * h + sy) * w + sx];
                        }
                    }
                }
                out[(static_cast<std::size_t>(co) * h + y) * w + x] = acc;
            }
        }
    }
    return out;
}

DVec promote(const Tensor& t) { return DVec(t.data().begin(), t.data().end()); }

double dsum(const DVec& v) {
    double acc = 0.0;
    for (double x : v) acc += x;
    return acc;
}

double ref_layer_stack(const LayerStackModel& model, DVec x) {
    std::vector<int> shape = model.input_shape();
    for (std::size_t li = 0; li < model.layers().size(); ++li) {
        const Layer& layer = model.layers()[li];
        switch (layer.kind) {
            case LayerKind::Conv2d: {
                const int cout = layer.weights.extent(0);
                x = dconv2d(x, shape[0], shape[1], shape[2], promote(layer.weights), cout,
                            layer.weights.extent(2), layer.weights.extent(3), layer.padding);
                shape = {cout, shape[1], shape[2]};
                if (layer.bias.numel() > 0) {
                    const std::size_t plane = static_cast<std::size_t>(shape[1]) * shape[2];
                    for (int c = 0; c < cout; ++c) {
                        for (std::size_t i = 0; i < plane; ++i) x[c * plane + i] += layer.bias[c];
                    }
                }
                break;
            }
            case LayerKind::Relu:
                for (auto& v : x) v = std::max(v, 0.0);
                break;
            case LayerKind::MeanPool: {
                const std::size_t plane = static_cast<std::size_t>(shape[1]) * shape[2];
                DVec pooled(static_cast<std::size_t>(shape[0]), 0.0);
                for (int c = 0; c < shape[0]; ++c) {
                    for (std::size_t i = 0; i < plane; ++i) pooled[static_cast<std::size_t>(c)] += x[c * plane + i];
                    pooled[static_cast<std::size_t>(c)] /= static_cast<double>(plane);
                }
                x = std::move(pooled);
                shape = {shape[0]};
                break;
            }
            case LayerKind::Linear: {
                const int m = layer.weights.extent(0), n = layer.weights.extent(1);
                DVec out(static_cast<std::size_t>(m), 0.0);
                for (int o = 0; o < m; ++o) {
                    double acc = layer.bias[o];
                    for (int i = 0; i < n; ++i) acc += static_cast<double>(layer.weights.at(o, i)) * x[static_cast<std::size_t>(i)];
                    out[static_cast<std::size_t>(o)] = acc;
                }
                x = std::move(out);
                shape = {m};
                break;
            }
            case LayerKind::PlantedBox: {
                const std::size_t plane = static_cast<std::size_t>(shape[1]) * shape[2];
                double acc = 0.0;
                for (int c = 0; c < shape[0]; ++c) {
                    for (int y = layer.box.y; y < layer.box.y + layer.box.h; ++y) {
                        for (int xx = layer.box.x; xx < layer.box.x + layer.box.w; ++xx) {
                            acc += x[c * plane + static_cast<std::size_t>(y) * shape[2] + xx];
                        }
                    }
                }
                acc *= static_cast<double>(layer.box_weight) / (static_cast<double>(layer.box.pixels()) * shape[0]);
                x = {acc};
                shape = {1};
                break;
            }
            case LayerKind::PlantedChannels: {
                const std::size_t plane = static_cast<std::size_t>(shape[1]) * shape[2];
                double acc = 0.0;
                for (int k : layer.channels) {
                    double ch = 0.0;
                    for (std::size_t i = 0; i < plane; ++i) ch += x[k * plane + i];
                    acc += ch / static_cast<double>(plane);
                }
                x = {acc};
                shape = {1};
                break;
            }
        }
    }
    return x[0];
}

double ref_expand_sum(const MaskGenerator& gen, const DVec& mbar) {
    const SmoothMaskConfig& c = gen.config();
    const MaskGeometry& geom = gen.geometry();
    const int k = geom.window;
    double total = 0.0;
    for (int y = 0; y < c.out_h; ++y) {
        for (int x = 0; x < c.out_w; ++x) {
            const int uy = y + c.margin, ux = x + c.margin;
            const int qy = uy / c.step, ry = uy % c.step;
            const int qx = ux / c.step, rx = ux % c.step;
            DVec f(static_cast<std::size_t>(k) * k, 0.0);
            double fmax = 0.0;
            for (int ky = 0; ky < k; ++ky) {
                const int iy = qy + ky - geom.pad;
                for (int kx = 0; kx < k; ++kx) {
                    const int ix = qx + kx - geom.pad;
                    double v = 0.0;
                    if (iy >= 0 && iy < geom.n_h && ix >= 0 && ix < geom.n_w) {
                        v = static_cast<double>(gen.weights().at(ky, kx, ry, rx)) *
                            mbar[static_cast<std::size_t>(iy) * geom.n_w + ix];
                    }
                    f[static_cast<std::size_t>(ky) * k + kx] = v;
                    fmax = std::max(fmax, v);
                }
            }
            double num = 0.0, den = 0.0;
            for (double v : f) {
                const double e = std::exp((v - fmax) / c.temperature);
                num += v * e;
                den += e;
            }
            total += num / den;
        }
    }
    return total;
}

double ref_apply_mask_mean(const PerturbationPyramid& pyr, const DVec& mask) {
    const int levels = pyr.level_count() - 1;
    const int h = pyr.height(), w = pyr.width(), c = pyr.channels();
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    double total = 0.0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double m = std::min(std::max(mask[static_cast<std::size_t>(y) * w + x], 0.0), 1.0);
            const double level = (1.0 - m) * levels;
            int f = static_cast<int>(level);
            if (f >= levels) f = levels - 1;
            const double t = level - f;
            for (int ch = 0; ch < c; ++ch) {
                const double lo = pyr.levels[static_cast<std::size_t>(f)].data()[ch * plane + y * w + x];
                const double hi = pyr.levels[static_cast<std::size_t>(f) + 1].data()[ch * plane + y * w + x];
                total += (1.0 - t) * lo + t * hi;
            }
        }
    }
    return total / (static_cast<double>(c) * h * w);
}

} // namespace

SuiteReport gradient_suite(std::uint64_t seed, int cases) {
    SuiteReport report;

    for (int c = 0; c < cases; ++c) {
        const std::uint64_t case_seed = seed * 1000003 + static_cast<std::uint64_t>(c);
        Rng local(case_seed);
        const std::string tag = " (case " + std::to_string(c) + ")";

        // Elementwise kinds on a shared small operand.
        Tensor a = sample_away_from_kinks(local, {3, 4}, {0.0f, -1.0f, 1.0f});
        Tensor b = local.uniform_tensor({3, 4}, 0.25f, 2.0f);  // safe divisor
        const DVec bd = promote(b);

        check_op(report, "add" + tag, a,
                 [&](Graph& g, Var x) { return g.sum(g.add(x, g.constant(b))); },
                 [&](const DVec& p) {
                     double acc = 0.0;
                     for (std::size_t i = 0; i < p.size(); ++i) acc += p[i] + bd[i];
                     return acc;
                 });
        check_op(report, "sub" + tag, a,
                 [&](Graph& g, Var x) { return g.sum(g.sub(x, g.constant(b))); },
                 [&](const DVec& p) {
                     double acc = 0.0;
                     for (std::size_t i = 0; i < p.size(); ++i) acc += p[i] - bd[i];
                     return acc;
                 });
        check_op(report, "mul" + tag, a,
                 [&](Graph& g, Var x) { return g.sum(g.mul(x, g.constant(b))); },
                 [&](const DVec& p) {
                     double acc = 0.0;
                     for (std::size_t i = 0; i < p.size(); ++i) acc += p[i] * bd[i];
                     return acc;
                 });
        check_op(report, "div" + tag, a,
                 [&](Graph& g, Var x) { return g.sum(g.div(x, g.constant(b))); },
                 [&](const DVec& p) {
                     double acc = 0.0;
                     for (std::size_t i = 0; i < p.size(); ++i) acc += p[i] / bd[i];
                     return acc;
                 });
        check_op(report, "div-denominator" + tag, b,
                 [&](Graph& g, Var x) { return g.sum(g.div(g.constant(a), x)); },
                 [&](const DVec& p) {
                     double acc = 0.0;
                     for (std::size_t i = 0; i < p.size(); ++i) acc += static_cast<double>(a[static_cast<std::int64_t>(i)]) / p[i];
                     return acc;
                 });
        check_op(report, "exp" + tag, a,
                 [&](Graph& g, Var x) { return g.sum(g.exp(x)); },
                 [&](const DVec& p) {
                     double acc = 0.0;
                     for (double v : p) acc += std::exp(v);
                     return acc;
                 });
        check_op(report, "relu" + tag, a,
                 [&](Graph& g, Var x) { return g.sum(g.relu(x)); },
                 [&](const DVec& p) {
                     double acc = 0.0;
                     for (double v : p) acc += std::max(v, 0.0);
                     return acc;
                 });
        check_op(report, "clamp" + tag, a,
                 [&](Graph& g, Var x) { return g.sum(g.clamp(x, -1.0f, 1.0f)); },
                 [&](const DVec& p) {
                     double acc = 0.0;
                     for (double v : p) acc += std::min(std::max(v, -1.0), 1.0);
                     return acc;
                 });
        check_op(report, "scale" + tag, a,
                 [&](Graph& g, Var x) { return g.sum(g.scale(x, -1.7f)); },
                 [&](const DVec& p) { return -1.7 * dsum(p); });
        check_op(report, "scalar-broadcast" + tag, a,
                 [&](Graph& g, Var x) { return g.sum(g.mul(x, g.constant_scalar(0.6f))); },
                 [&](const DVec& p) { return 0.6 * dsum(p); });

        // Reductions.
        check_op(report, "sum" + tag, a, [&](Graph& g, Var x) { return g.sum(x); },
                 [&](const DVec& p) { return dsum(p); });
        check_op(report, "mean" + tag, a, [&](Graph& g, Var x) { return g.mean(x); },
                 [&](const DVec& p) { return dsum(p) / static_cast<double>(p.size()); });
        Tensor spread = local.uniform_tensor({8}, -2.0f, 2.0f);  // distinct with overwhelming probability
        check_op(report, "max" + tag, spread, [&](Graph& g, Var x) { return g.max_all(x); },
                 [&](const DVec& p) { return *std::max_element(p.begin(), p.end()); });

        // Structured ops.
        Tensor img = local.uniform_tensor({2, 6, 6}, -1.0f, 1.0f);
        Tensor kernel = local.uniform_tensor({3, 2, 3, 3}, -0.5f, 0.5f);
        const DVec kd = promote(kernel);
        const DVec imgd = promote(img);
        for (Padding pad : {Padding::Zero, Padding::Replicate}) {
            const std::string pname = pad == Padding::Zero ? "zero" : "replicate";
            check_op(report, "conv2d-input-" + pname + tag, img,
                     [&](Graph& g, Var x) { return g.sum(g.conv2d(x, g.constant(kernel), pad)); },
                     [&](const DVec& p) { return dsum(dconv2d(p, 2, 6, 6, kd, 3, 3, 3, pad)); });
        }
        check_op(report, "conv2d-kernel" + tag, kernel,
                 [&](Graph& g, Var x) { return g.sum(g.conv2d(g.constant(img), x, Padding::Zero)); },
                 [&](const DVec& p) { return dsum(dconv2d(imgd, 2, 6, 6, p, 3, 3, 3, Padding::Zero)); });

        Tensor weights = local.uniform_tensor({8}, -1.0f, 1.0f);
        check_op(report, "sort" + tag, spread,
                 [&](Graph& g, Var x) {
                     return g.sum(g.mul(g.sort_with_permutation(x), g.constant(weights)));
                 },
                 [&](const DVec& p) {
                     DVec s = p;
                     std::sort(s.begin(), s.end());
                     double acc = 0.0;
                     for (std::size_t i = 0; i < s.size(); ++i) acc += s[i] * weights[static_cast<std::int64_t>(i)];
                     return acc;
                 });

        Tensor lin_w = local.uniform_tensor({3, 12}, -0.5f, 0.5f);
        Tensor lin_b = local.uniform_tensor({3}, -0.5f, 0.5f);
        check_op(report, "linear" + tag, a,
                 [&](Graph& g, Var x) { return g.sum(g.linear(x, g.constant(lin_w), g.constant(lin_b))); },
                 [&](const DVec& p) {
                     double acc = 0.0;
                     for (int o = 0; o < 3; ++o) {
                         double row = lin_b[o];
                         for (int i = 0; i < 12; ++i) row += static_cast<double>(lin_w.at(o, i)) * p[static_cast<std::size_t>(i)];
                         acc += row;
                     }
                     return acc;
                 });

        Tensor act = local.uniform_tensor({4, 3, 3}, -1.0f, 1.0f);
        Tensor cvec = local.uniform_tensor({4}, 0.0f, 1.0f);
        check_op(report, "mul_channels" + tag, act,
                 [&](Graph& g, Var x) { return g.sum(g.mul_channels(x, g.constant(cvec))); },
                 [&](const DVec& p) {
                     double acc = 0.0;
                     for (int k = 0; k < 4; ++k) {
                         for (int i = 0; i < 9; ++i) acc += static_cast<double>(cvec[k]) * p[static_cast<std::size_t>(k) * 9 + i];
                     }
                     return acc;
                 });
        check_op(report, "mul_channels-vec" + tag, cvec,
                 [&](Graph& g, Var x) { return g.sum(g.mul_channels(g.constant(act), x)); },
                 [&](const DVec& p) {
                     double acc = 0.0;
                     for (int k = 0; k < 4; ++k) {
                         double plane = 0.0;
                         for (int i = 0; i < 9; ++i) plane += act[k * 9 + i];
                         acc += p[static_cast<std::size_t>(k)] * plane;
                     }
                     return acc;
                 });
        check_op(report, "channel_means" + tag, act,
                 [&](Graph& g, Var x) { return g.sum(g.mul(g.channel_means(x), g.constant(cvec))); },
                 [&](const DVec& p) {
                     double acc = 0.0;
                     for (int k = 0; k < 4; ++k) {
                         double plane = 0.0;
                         for (int i = 0; i < 9; ++i) plane += p[static_cast<std::size_t>(k) * 9 + i];
                         acc += plane / 9.0 * cvec[k];
                     }
                     return acc;
                 });

        // Area loss away from sort ties.
        Tensor mvals = local.uniform_tensor({12}, 0.05f, 0.95f);
        const AreaTarget target = AreaTarget::from_fraction(0.5, 12);
        check_op(report, "area_loss" + tag, mvals,
                 [&](Graph& g, Var x) { return area_loss(g, x, target); },
                 [&](const DVec& p) {
                     DVec s = p;
                     std::sort(s.begin(), s.end());
                     const std::int64_t ones = target.split_point();
                     double acc = 0.0;
                     for (std::size_t i = 0; i < s.size(); ++i) {
                         const double r = static_cast<std::int64_t>(i) >= target.count - ones ? 1.0 : 0.0;
                         acc += (s[i] - r) * (s[i] - r);
                     }
                     return acc;
                 });

        // Pyramid lookup in the interior of the interpolation cells.
        Tensor base = local.uniform_tensor({2, 8, 8}, 0.0f, 1.0f);
        const PerturbationPyramid pyr = build_pyramid(base, 3.0f, 4, PerturbationKind::GaussianBlur);
        Tensor mask = local.uniform_tensor({8, 8}, 0.06f, 0.94f);
        for (auto& v : mask.data()) {  // keep clear of the interpolation knots
            const float cell = v * 4.0f;
            if (std::abs(cell - std::round(cell)) < 0.05f) v += 0.03f;
        }
        check_op(report, "apply_mask" + tag, mask,
                 [&](Graph& g, Var x) { return g.mean(apply_mask(g, pyr, x)); },
                 [&](const DVec& p) { return ref_apply_mask_mean(pyr, p); });

        // Smooth mask expansion.
        SmoothMaskConfig mc;
        mc.sigma = 2.0; mc.step = 2; mc.margin = 2; mc.temperature = 0.05; mc.out_h = 12; mc.out_w = 12;
        const MaskGenerator gen(mc);
        Tensor mbar = local.uniform_tensor({gen.geometry().n_h, gen.geometry().n_w}, 0.05f, 0.95f);
        check_op(report, "expand" + tag, mbar,
                 [&](Graph& g, Var x) { return g.sum(gen.expand(g, x)); },
                 [&](const DVec& p) { return ref_expand_sum(gen, p); });

        // Five random elementwise ops composed into one scalar.
        std::vector<int> ops;
        {
            Rng pick(case_seed ^ 0x5bd1e995);
            for (int i = 0; i < 5; ++i) ops.push_back(pick.uniform_int(0, 3));
        }
        check_op(report, "composite" + tag, a,
                 [&](Graph& g, Var x) {
                     Var y = x;
                     for (int op : ops) {
                         switch (op) {
                             case 0: y = g.add(y, g.constant(b)); break;
                             case 1: y = g.mul(y, g.constant(b)); break;
                             case 2: y = g.scale(y, 0.5f); break;
                             case 3: y = g.exp(g.scale(y, 0.3f)); break;
                         }
                     }
                     return g.mean(y);
                 },
                 [&](const DVec& p) {
                     DVec y = p;
                     for (int op : ops) {
                         for (std::size_t i = 0; i < y.size(); ++i) {
                             switch (op) {
                                 case 0: y[i] += bd[i]; break;
                                 case 1: y[i] *= bd[i]; break;
                                 case 2: y[i] *= 0.5; break;
                                 case 3: y[i] = std::exp(0.3 * y[i]); break;
                             }
                         }
                     }
                     return dsum(y) / static_cast<double>(y.size());
                 });

        // Zoo models, end to end w.r.t. the image.
        {
            Tensor zimg = local.uniform_tensor({3, 8, 8}, -1.0f, 1.0f);
            auto region = planted_region_model({3, 8, 8}, Box{2, 3, 4, 3}, 2.0f);
            check_op(report, "planted_region_model" + tag, zimg,
                     [&](Graph& g, Var x) { return region->forward(g, x); },
                     [&](const DVec& p) { return ref_layer_stack(*region, p); });

            auto channel = planted_channel_model({3, 8, 8}, {1, 4}, 6, case_seed);
            check_op(report, "planted_channel_model" + tag, zimg,
                     [&](Graph& g, Var x) { return channel->forward(g, x); },
                     [&](const DVec& p) { return ref_layer_stack(*channel, p); });

            Rng wrng(case_seed + 17);
            std::vector<Layer> layers;
            Layer conv;
            conv.kind = LayerKind::Conv2d;
            conv.weights = wrng.normal_tensor({4, 3, 3, 3}, 0.0f, 0.2f);
            conv.bias = Tensor::full({4}, 0.1f);
            conv.padding = Padding::Replicate;
            layers.push_back(conv);
            Layer relu_layer; relu_layer.kind = LayerKind::Relu;
            layers.push_back(relu_layer);
            Layer pool; pool.kind = LayerKind::MeanPool;
            layers.push_back(pool);
            Layer lin;
            lin.kind = LayerKind::Linear;
            lin.weights = wrng.normal_tensor({1, 4}, 0.0f, 0.5f);
            lin.bias = Tensor::zeros({1});
            layers.push_back(lin);
            const LayerStackModel stack({3, 8, 8}, std::move(layers));
            check_op(report, "layer_stack_model" + tag, zimg,
                     [&](Graph& g, Var x) { return stack.forward(g, x); },
                     [&](const DVec& p) { return ref_layer_stack(stack, p); });
        }
    }
    return report;
}

SuiteReport lemma_suite(std::uint64_t seed, int mask_count) {
    SuiteReport report;
    Rng rng(seed);

    SmoothMaskConfig configs[2];
    configs[0].sigma = 20.0; configs[0].step = 8; configs[0].margin = 20; configs[0].out_h = 64; configs[0].out_w = 64;
    configs[1].sigma = 2.5; configs[1].step = 1; configs[1].margin = 3; configs[1].out_h = 32; configs[1].out_w = 32;

    for (const SmoothMaskConfig& mc : configs) {
        const MaskGeometry geom = derive_geometry(mc);

        // Empirical Lipschitz bound of the kernel profile at pixel granularity.
        double kernel_lipschitz = 0.0;
        const int reach = static_cast<int>(std::ceil(std::hypot(mc.out_h, mc.out_w))) + 1;
        for (int d = 0; d < reach; ++d) {
            const double k0 = kernel_profile(static_cast<float>(d / mc.sigma));
            const double k1 = kernel_profile(static_cast<float>((d + 1) / mc.sigma));
            kernel_lipschitz = std::max(kernel_lipschitz, std::abs(k0 - k1));
        }

        for (int trial = 0; trial < mask_count; ++trial) {
            report.count();
            Tensor mbar = rng.uniform_tensor({geom.n_h, geom.n_w}, 0.0f, 1.0f);
            // Saturate a few parameters so the fixed-point guarantee is exercised.
            for (int k = 0; k < 3; ++k) {
                mbar.at(rng.uniform_int(0, geom.n_h - 1), rng.uniform_int(0, geom.n_w - 1)) = 1.0f;
            }
            const Tensor m = max_conv(mbar, mc);

            bool fine = true;
            std::ostringstream why;

            // Dominates the (floor-)upsampled parameter mask; saturated sites
            // map to exactly one at their aligned pixels.
            for (int y = 0; y < mc.out_h && fine; ++y) {
                for (int x = 0; x < mc.out_w && fine; ++x) {
                    const float up = mbar.at(std::min(y / mc.step, geom.n_h - 1), std::min(x / mc.step, geom.n_w - 1));
                    if (m.at(y, x) < up - 1e-6f || m.at(y, x) > 1.0f + 1e-6f) {
                        fine = false;
                        why << "dominance broken at (" << y << "," << x << "): m=" << m.at(y, x) << " vs " << up;
                    }
                }
            }
            for (int iy = 0; iy < geom.n_h && fine; ++iy) {
                for (int ix = 0; ix < geom.n_w && fine; ++ix) {
                    const int y = iy * mc.step, x = ix * mc.step;
                    if (y >= mc.out_h || x >= mc.out_w) continue;
                    if (mbar.at(iy, ix) == 1.0f && m.at(y, x) != 1.0f) {
                        fine = false;
                        why << "saturated site (" << iy << "," << ix << ") expanded to " << m.at(y, x);
                    }
                }
            }

            // The expansion is at most as steep as the kernel.
            double mask_lipschitz = 0.0;
            for (int y = 0; y < mc.out_h; ++y) {
                for (int x = 0; x < mc.out_w; ++x) {
                    if (x + 1 < mc.out_w) mask_lipschitz = std::max(mask_lipschitz, std::abs(static_cast<double>(m.at(y, x)) - m.at(y, x + 1)));
                    if (y + 1 < mc.out_h) mask_lipschitz = std::max(mask_lipschitz, std::abs(static_cast<double>(m.at(y, x)) - m.at(y + 1, x)));
                }
            }
            if (fine && mask_lipschitz > kernel_lipschitz + 1e-6) {
                fine = false;
                why << "mask Lipschitz " << mask_lipschitz << " exceeds kernel bound " << kernel_lipschitz;
            }

            if (!fine) report.fail("lemma suite: " + why.str());
        }
    }
    return report;
}

SuiteReport smax_suite(std::uint64_t seed) {
    SuiteReport report;
    Rng rng(seed);

    for (int trial = 0; trial < 200; ++trial) {
        report.count();
        const int n = rng.uniform_int(2, 24);
        std::vector<float> window(static_cast<std::size_t>(n));
        for (auto& v : window) v = rng.uniform(0.0f, 1.0f);

        double mean = 0.0;
        float mx = window[0];
        for (float v : window) {
            mean += v;
            mx = std::max(mx, v);
        }
        mean /= n;

        const double s_hot = smax(window.data(), n, 1e6);
        const double s_cold = smax(window.data(), n, 1e-4);
        if (std::abs(s_hot - mean) >= 1e-6) {
            report.fail("smax high-temperature limit off by " + std::to_string(std::abs(s_hot - mean)));
            continue;
        }
        if (std::abs(s_cold - mx) >= 1e-3) {
            report.fail("smax low-temperature limit off by " + std::to_string(std::abs(s_cold - mx)));
            continue;
        }

        double prev = std::numeric_limits<double>::infinity();
        for (double t : {0.01, 0.05, 0.2, 1.0, 10.0, 1e5}) {
            const double s = smax(window.data(), n, t);
            if (s < mean - 1e-6 || s > mx + 1e-6) {
                report.fail("smax escaped the [mean, max] envelope at T=" + std::to_string(t));
                break;
            }
            if (s > prev + 1e-6) {
                report.fail("smax not monotone toward the mean at T=" + std::to_string(t));
                break;
            }
            prev = s;
        }
    }

    // Near-zero temperature expansion against the hard reference, on
    // geometries whose pooled window spans the whole coarse lattice (the
    // windowed pipeline and the full reference then see the same samples).
    SmoothMaskConfig cold[2];
    cold[0].sigma = 20.0; cold[0].step = 8; cold[0].margin = 20; cold[0].out_h = 32; cold[0].out_w = 32;
    cold[1].sigma = 6.0; cold[1].step = 2; cold[1].margin = 6; cold[1].out_h = 10; cold[1].out_w = 10;
    for (SmoothMaskConfig mc : cold) {
        mc.temperature = 1e-4;
        const MaskGenerator gen(mc);
        const MaskGeometry& geom = gen.geometry();
        for (int trial = 0; trial < 10; ++trial) {
            report.count();
            const Tensor mbar = rng.uniform_tensor({geom.n_h, geom.n_w}, 0.0f, 1.0f);
            const Tensor via_smax = gen.expand_value(mbar);
            const Tensor via_max = max_conv(mbar, mc);
            double sup = 0.0;
            for (std::int64_t i = 0; i < via_smax.numel(); ++i) {
                sup = std::max(sup, std::abs(static_cast<double>(via_smax[i]) - via_max[i]));
            }
            if (sup >= 1e-3) {
                report.fail("cold smax expansion deviates from hard max-convolution by " + std::to_string(sup));
            }
        }
    }
    return report;
}

int run_selftest(std::ostream& out, std::uint64_t seed) {
    struct Entry {
        const char* name;
        SuiteReport report;
    };
    Entry entries[] = {
        {"gradient", gradient_suite(seed, 10)},
        {"lemma", lemma_suite(seed + 1, 50)},
        {"smax", smax_suite(seed + 2)},
    };
    bool all_ok = true;
    for (const Entry& e : entries) {
        out << (e.report.ok ? "[ok] " : "[FAIL] ") << e.name << " suite (" << e.report.checks << " checks)\n";
        if (!e.report.ok) {
            out << "  first counterexample: " << e.report.first_failure << "\n";
            all_ok = false;
        }
    }
    return all_ok ? 0 : 1;
}

} // namespace extremal
