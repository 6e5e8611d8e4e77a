#ifndef EXTREMAL_EVALUATION_HPP
#define EXTREMAL_EVALUATION_HPP

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "extremal/engine.hpp"
#include "extremal/models.hpp"

namespace extremal {

// Ground-truth object region: a rectangle or an explicit binary mask.
struct RegionSpec {
    bool is_rect = true;
    Box rect;
    Tensor mask;  // H x W when !is_rect

    bool contains(int y, int x) const {
        return is_rect ? rect.contains(y, x) : mask.at(y, x) > 0.5f;
    }
};

struct ClassAnnotation {
    int class_id = 0;
    RegionSpec region;
    std::string model_path;  // scorer for this class
};

struct DatasetItem {
    std::string image_path;
    Tensor image;  // C x H x W
    std::vector<ClassAnnotation> classes;
    bool difficult = false;
};

struct Dataset {
    std::vector<DatasetItem> items;
};

// Manifest JSON: {"items": [{"image": "x.ft1"|"x.png", "difficult": bool,
// "classes": [{"class": id, "rect": [y,x,h,w] | "region_mask": "r.ft1",
// "model": "m.json"}]}]}. Paths resolve relative to the manifest.
Dataset load_manifest(const std::string& path);

// Sum of the binary masks blurred with sigma = 9% of the shorter side.
Tensor saliency_from_masks(const std::vector<Tensor>& binary_masks, int h, int w);

// Hit when the global saliency maximum falls inside the region; ties resolve
// to the lowest row-major index.
bool pointing_game(const Tensor& saliency, const RegionSpec& region);

struct PointingRecord {
    std::size_t item = 0;
    int class_id = 0;
    bool hit = false;
    bool failed = false;
    bool difficult = false;
    std::string error;
};

struct PointingResult {
    std::vector<PointingRecord> log;
    std::map<int, std::pair<int, int>> per_class;  // class id -> {hits, misses}
    int hits = 0;
    int misses = 0;
    int failures = 0;

    double accuracy() const { return hits + misses ? static_cast<double>(hits) / (hits + misses) : 0.0; }
    double difficult_accuracy() const;
};

struct BenchmarkConfig {
    std::vector<double> areas = {0.025, 0.05, 0.1, 0.2};
    Schedule schedule;
    EngineConfig engine;       // mask out extents come from each image
    bool mask_defaults = true; // derive sigma/step/margin per image size
    double tau = 1.0;          // phi0 = tau * model score on the clean image
    int threads = 1;
};

// Per (image, class): sweep, threshold the per-area masks at 0.5, build the
// saliency map, then point. Items run independently; per-item failures are
// counted and reported, never silently dropped.
PointingResult run_pointing_benchmark(const Dataset& dataset, const BenchmarkConfig& config);

// Fraction of items whose sweeps (all their classes) satisfy the
// monotonicity check. Items whose curves never reach phi0 count as false.
// The sweep can be replaced for testing.
using SweepFn = std::function<AttributionResult(const DatasetItem&, const ClassAnnotation&)>;
double monotonicity_rate(const Dataset& dataset, const BenchmarkConfig& config, SweepFn sweep_fn = nullptr);

} // namespace extremal

#endif
