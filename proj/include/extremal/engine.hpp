#ifndef EXTREMAL_ENGINE_HPP
#define EXTREMAL_ENGINE_HPP

#include <optional>
#include <string>
#include <vector>

#include "extremal/area_loss.hpp"
#include "extremal/mask_generator.hpp"
#include "extremal/models.hpp"
#include "extremal/perturbation.hpp"

namespace extremal {

// preservation keeps the masked-in region and maximizes the score; deletion
// suppresses the score of the complement; hybrid does both at once.
enum class ObjectiveKind { Preservation, Deletion, Hybrid };

const char* objective_name(ObjectiveKind kind);
ObjectiveKind objective_from_name(const std::string& name);

// Optimizer schedule: momentum SGD over a fixed iteration count, with the
// constraint multiplier doubled at 1/3 and 2/3 of the run. Breakpoints stay
// at the same fractions when the iteration count is overridden.
struct Schedule {
    int iterations = 1600;
    float momentum = 0.9f;
    float learning_rate = 0.05f;
    double lambda0 = 300.0;

    double lambda_at(int iteration) const;
};

struct OptimizeOutcome {
    MaskParams params;                   // final coarse mask
    Tensor mask;                         // expanded full-resolution mask
    double score = 0.0;                  // objective score of the final mask
    double residual = 0.0;               // area_loss(mask)/|mask|
    std::vector<double> score_trace;     // per-iteration objective score
    std::vector<double> residual_trace;  // per-iteration normalized area loss
};

struct AreaRecord {
    double area = 0.0;
    MaskParams params;
    Tensor mask;
    double score = 0.0;
    double residual = 0.0;
    bool failed = false;
    std::string error;
};

struct AttributionResult {
    ObjectiveKind objective = ObjectiveKind::Preservation;
    std::vector<AreaRecord> records;  // ascending area
    double phi0 = 0.0;
    std::optional<double> a_star;     // absent: not extremal at the grid
    bool monotone = false;
};

// Everything the per-area optimization shares: the image pyramid and the
// cached mask generator. Immutable once built.
struct EngineContext {
    PerturbationPyramid pyramid;
    MaskGenerator generator;

    EngineContext(PerturbationPyramid pyr, MaskGenerator gen)
        : pyramid(std::move(pyr)), generator(std::move(gen)) {}
};

// Perturbation/mask configuration resolved against an image.
struct EngineConfig {
    SmoothMaskConfig mask;            // out extents filled from the image
    PerturbationKind perturbation = PerturbationKind::GaussianBlur;
    float sigma_max = 0.0f;           // 0: max(2, 0.09 * min(H, W))
    int pyramid_levels = 8;
};

// Desk-scale defaults: stride 1 with a kernel radius around 3% of the short
// side, margin equal to the radius, smax temperature 1/20.
SmoothMaskConfig default_mask_config(int out_h, int out_w);
float default_sigma_max(int h, int w);
EngineContext make_context(const Tensor& image, const EngineConfig& config);

// Momentum-SGD ascent of the objective minus lambda * area loss over the
// coarse mask, initialized with all ones and projected to [0,1] after every
// step. Deterministic for fixed inputs.
OptimizeOutcome optimize_mask(const ScorerModel& model, const EngineContext& ctx,
                              const AreaTarget& target, ObjectiveKind objective,
                              const Schedule& schedule);

// One independent optimization per area; failures are recorded per area and
// the sweep continues. threads > 1 runs areas concurrently (results are
// merged by area index, so the outcome does not depend on the thread count).
AttributionResult sweep(const ScorerModel& model, const Tensor& image,
                        const std::vector<double>& areas, ObjectiveKind objective,
                        const Schedule& schedule, const EngineConfig& config,
                        int threads = 1);

// Smallest recorded area whose score reaches phi0, if any.
std::optional<double> find_extremal(const AttributionResult& result, double phi0);

// Stamps phi0, a_star and the monotonicity flag onto the result. For the
// deletion game the qualifying condition is score >= -(1 - tau_d) * phi_x,
// handled by the caller via the phi0 it passes.
void finalize_extremal(AttributionResult& result, double phi0);

// Scores non-decreasing across every recorded pair below a_star.
bool check_monotonicity(const AttributionResult& result);

} // namespace extremal

#endif
