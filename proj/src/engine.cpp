#include "extremal/engine.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <sstream>
#include <thread>

namespace extremal {

const char* objective_name(ObjectiveKind kind) {
    switch (kind) {
        case ObjectiveKind::Preservation: return "preservation";
        case ObjectiveKind::Deletion: return "deletion";
        case ObjectiveKind::Hybrid: return "hybrid";
    }
    return "?";
}

ObjectiveKind objective_from_name(const std::string& name) {
    if (name == "preservation") return ObjectiveKind::Preservation;
    if (name == "deletion") return ObjectiveKind::Deletion;
    if (name == "hybrid") return ObjectiveKind::Hybrid;
    throw InvalidInput("unknown objective: " + name);
}

double Schedule::lambda_at(int iteration) const {
    if (iterations < 1) throw InvalidInput("schedule needs at least one iteration");
    double lambda = lambda0;
    if (3 * iteration >= iterations) lambda *= 2.0;
    if (3 * iteration >= 2 * iterations) lambda *= 2.0;
    return lambda;
}

SmoothMaskConfig default_mask_config(int out_h, int out_w) {
    SmoothMaskConfig c;
    const int side = std::min(out_h, out_w);
    c.step = std::max(1, side / 64);
    c.sigma = std::max(1.5, 0.03 * side);
    c.margin = static_cast<int>(std::ceil(c.sigma));
    c.temperature = 0.05;
    c.out_h = out_h;
    c.out_w = out_w;
    return c;
}

float default_sigma_max(int h, int w) {
    return std::max(2.0f, 0.09f * static_cast<float>(std::min(h, w)));
}

EngineContext make_context(const Tensor& image, const EngineConfig& config) {
    if (image.rank() != 3) throw InvalidInput("engine expects a CxHxW image, got " + image.shape_string());
    const int h = image.extent(1), w = image.extent(2);
    float sigma_max = config.sigma_max > 0.0f ? config.sigma_max : default_sigma_max(h, w);
    if (config.perturbation == PerturbationKind::FadeToBlack) sigma_max = std::min(sigma_max, 1.0f);

    SmoothMaskConfig mask = config.mask;
    mask.out_h = h;
    mask.out_w = w;
    mask.validate();

    return EngineContext(build_pyramid(image, sigma_max, config.pyramid_levels, config.perturbation),
                         MaskGenerator(mask));
}

namespace {

struct ForwardParts {
    Var score;        // objective variant score
    Var mask;         // expanded full-resolution mask
};

ForwardParts build_forward(Graph& g, const ScorerModel& model, const EngineContext& ctx,
                           ObjectiveKind objective, Var mbar) {
    ForwardParts parts;
    parts.mask = ctx.generator.expand(g, mbar);
    switch (objective) {
        case ObjectiveKind::Preservation: {
            parts.score = model.forward(g, apply_mask(g, ctx.pyramid, parts.mask));
            break;
        }
        case ObjectiveKind::Deletion: {
            Var inv = g.rsub_scalar(1.0f, parts.mask);
            parts.score = g.scale(model.forward(g, apply_mask(g, ctx.pyramid, inv)), -1.0f);
            break;
        }
        case ObjectiveKind::Hybrid: {
            Var keep = model.forward(g, apply_mask(g, ctx.pyramid, parts.mask));
            Var inv = g.rsub_scalar(1.0f, parts.mask);
            Var drop = model.forward(g, apply_mask(g, ctx.pyramid, inv));
            parts.score = g.sub(keep, drop);
            break;
        }
    }
    return parts;
}

} // namespace

OptimizeOutcome optimize_mask(const ScorerModel& model, const EngineContext& ctx,
                              const AreaTarget& target, ObjectiveKind objective,
                              const Schedule& schedule) {
    const MaskGeometry& geom = ctx.generator.geometry();
    const SmoothMaskConfig& mc = ctx.generator.config();
    const std::int64_t n_out = static_cast<std::int64_t>(mc.out_h) * mc.out_w;
    if (target.count != n_out) {
        throw InvalidInput("optimize_mask: area target element count does not match the mask resolution");
    }

    // All-ones initialization: everything preserved.
    Tensor mbar = Tensor::ones({geom.n_h, geom.n_w});
    Tensor velocity = Tensor::zeros({geom.n_h, geom.n_w});

    OptimizeOutcome outcome;
    outcome.score_trace.reserve(static_cast<std::size_t>(schedule.iterations));
    outcome.residual_trace.reserve(static_cast<std::size_t>(schedule.iterations));

    Graph g;
    for (int t = 0; t < schedule.iterations; ++t) {
        g.clear();
        const double lambda = schedule.lambda_at(t);
        Var params = g.leaf(mbar);
        ForwardParts parts;
        Var loss, objective_value;
        try {
            parts = build_forward(g, model, ctx, objective, params);
            loss = area_loss(g, parts.mask, target);
            objective_value = g.sub(parts.score, g.scale(loss, static_cast<float>(lambda)));
            g.backward(objective_value);
        } catch (const NumericalError& e) {
            std::ostringstream os;
            os << "optimization aborted at iteration " << t << ": " << e.what()
               << " (last score " << (outcome.score_trace.empty() ? 0.0 : outcome.score_trace.back()) << ")";
            throw NumericalError(os.str());
        }

        outcome.score_trace.push_back(g.value(parts.score).scalar_value());
        outcome.residual_trace.push_back(g.value(loss).scalar_value() / static_cast<double>(n_out));

        const Tensor& grad = g.grad(params);
        for (std::int64_t i = 0; i < mbar.numel(); ++i) {
            velocity[i] = schedule.momentum * velocity[i] + grad[i];
            float v = mbar[i] + schedule.learning_rate * velocity[i];
            mbar[i] = std::min(std::max(v, 0.0f), 1.0f);
        }
    }

    // Score the final projected mask.
    g.clear();
    Var params = g.leaf(mbar);
    ForwardParts parts = build_forward(g, model, ctx, objective, params);
    outcome.params = MaskParams{mbar};
    outcome.mask = g.value(parts.mask);
    outcome.score = g.value(parts.score).scalar_value();
    outcome.residual = area_loss_value(outcome.mask, target) / static_cast<double>(n_out);
    return outcome;
}

AttributionResult sweep(const ScorerModel& model, const Tensor& image,
                        const std::vector<double>& areas, ObjectiveKind objective,
                        const Schedule& schedule, const EngineConfig& config, int threads) {
    if (areas.empty()) throw InvalidInput("sweep: empty area grid");
    for (double a : areas) {
        if (a <= 0.0 || a > 1.0) throw InvalidInput("sweep: areas must lie in (0, 1]");
    }
    std::vector<double> sorted_areas = areas;
    std::sort(sorted_areas.begin(), sorted_areas.end());

    const EngineContext ctx = make_context(image, config);
    const std::int64_t n = static_cast<std::int64_t>(ctx.generator.config().out_h) * ctx.generator.config().out_w;

    AttributionResult result;
    result.objective = objective;
    result.records.resize(sorted_areas.size());

    const auto run_one = [&](std::size_t idx) {
        AreaRecord& record = result.records[idx];
        record.area = sorted_areas[idx];
        try {
            OptimizeOutcome out = optimize_mask(model, ctx, AreaTarget::from_fraction(sorted_areas[idx], n),
                                                objective, schedule);
            record.params = std::move(out.params);
            record.mask = std::move(out.mask);
            record.score = out.score;
            record.residual = out.residual;
        } catch (const std::exception& e) {
            record.failed = true;
            record.error = e.what();
        }
    };

    const int workers = std::max(1, std::min<int>(threads, static_cast<int>(sorted_areas.size())));
    if (workers == 1) {
        for (std::size_t i = 0; i < sorted_areas.size(); ++i) run_one(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        for (int t = 0; t < workers; ++t) {
            pool.emplace_back([&] {
                for (std::size_t i = next.fetch_add(1); i < sorted_areas.size(); i = next.fetch_add(1)) {
                    run_one(i);
                }
            });
        }
        for (auto& th : pool) th.join();
    }
    return result;
}

std::optional<double> find_extremal(const AttributionResult& result, double phi0) {
    for (const AreaRecord& record : result.records) {  // records ascend by area
        if (record.failed) continue;
        if (record.score >= phi0) return record.area;
    }
    return std::nullopt;
}

void finalize_extremal(AttributionResult& result, double phi0) {
    result.phi0 = phi0;
    result.a_star = find_extremal(result, phi0);
    result.monotone = result.a_star.has_value() ? check_monotonicity(result) : false;
}

bool check_monotonicity(const AttributionResult& result) {
    if (!result.a_star.has_value()) {
        throw InvalidInput("check_monotonicity: result has no extremal area");
    }
    double prev = -std::numeric_limits<double>::infinity();
    for (const AreaRecord& record : result.records) {
        if (record.failed || record.area >= *result.a_star) continue;
        if (record.score < prev) return false;
        prev = record.score;
    }
    return true;
}

} // namespace extremal
