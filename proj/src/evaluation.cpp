#include "extremal/evaluation.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <thread>

#include "extremal/io.hpp"
#include "extremal/perturbation.hpp"

namespace extremal {

using nlohmann::json;

namespace {

Tensor load_image_any(const std::string& path) {
    const std::string ext = std::filesystem::path(path).extension().string();
    Tensor t = ext == ".png" ? load_png(path) : load_ft1(path);
    if (t.rank() == 2) return Tensor({1, t.extent(0), t.extent(1)}, t.data());
    if (t.rank() != 3) throw InvalidInput("image " + path + " must be HxW or CxHxW");
    return t;
}

} // namespace

Dataset load_manifest(const std::string& path) {
    json doc;
    try {
        doc = json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        throw InvalidInput("manifest " + path + " does not parse: " + e.what());
    }
    const std::filesystem::path dir = std::filesystem::path(path).parent_path();

    Dataset ds;
    try {
        std::size_t index = 0;
        for (const auto& ij : doc.at("items")) {
            DatasetItem item;
            const std::string rel = ij.at("image").get<std::string>();
            item.image_path = (dir / rel).string();
            if (!std::filesystem::exists(item.image_path)) {
                throw InvalidInput("manifest item " + std::to_string(index) + " references missing image " +
                                   item.image_path);
            }
            item.image = load_image_any(item.image_path);
            item.difficult = ij.value("difficult", false);
            const int h = item.image.extent(1), w = item.image.extent(2);

            for (const auto& cj : ij.at("classes")) {
                ClassAnnotation ann;
                ann.class_id = cj.at("class").get<int>();
                if (cj.contains("rect")) {
                    const auto r = cj.at("rect").get<std::vector<int>>();
                    if (r.size() != 4) throw InvalidInput("manifest item " + std::to_string(index) + ": rect must be [y,x,h,w]");
                    ann.region.is_rect = true;
                    ann.region.rect = Box{r[0], r[1], r[2], r[3]};
                    const Box& b = ann.region.rect;
                    if (b.h <= 0 || b.w <= 0 || b.y < 0 || b.x < 0 || b.y + b.h > h || b.x + b.w > w) {
                        throw InvalidInput("manifest item " + std::to_string(index) + ": region out of bounds");
                    }
                } else if (cj.contains("region_mask")) {
                    ann.region.is_rect = false;
                    const std::string mrel = cj.at("region_mask").get<std::string>();
                    const std::string mpath = (dir / mrel).string();
                    if (!std::filesystem::exists(mpath)) {
                        throw InvalidInput("manifest item " + std::to_string(index) + " references missing region mask " + mpath);
                    }
                    ann.region.mask = std::filesystem::path(mpath).extension() == ".png" ? load_png_gray(mpath)
                                                                                         : load_ft1(mpath);
                    if (ann.region.mask.rank() != 2 || ann.region.mask.extent(0) != h || ann.region.mask.extent(1) != w) {
                        throw InvalidInput("manifest item " + std::to_string(index) + ": region mask extents mismatch");
                    }
                } else {
                    throw InvalidInput("manifest item " + std::to_string(index) + ": class entry needs rect or region_mask");
                }
                if (cj.contains("model")) {
                    ann.model_path = (dir / cj.at("model").get<std::string>()).string();
                    if (!std::filesystem::exists(ann.model_path)) {
                        throw InvalidInput("manifest item " + std::to_string(index) + " references missing model " + ann.model_path);
                    }
                }
                item.classes.push_back(std::move(ann));
            }
            if (item.classes.empty()) {
                throw InvalidInput("manifest item " + std::to_string(index) + " lists no classes");
            }
            ds.items.push_back(std::move(item));
            ++index;
        }
    } catch (const json::exception& e) {
        throw InvalidInput("manifest " + path + " is malformed: " + e.what());
    }
    if (ds.items.empty()) throw InvalidInput("manifest " + path + " is empty");
    return ds;
}

Tensor saliency_from_masks(const std::vector<Tensor>& binary_masks, int h, int w) {
    if (binary_masks.empty()) throw InvalidInput("saliency_from_masks: no masks");
    Tensor sum({h, w});
    for (const Tensor& m : binary_masks) {
        if (m.rank() != 2 || m.extent(0) != h || m.extent(1) != w) {
            throw InvalidInput("saliency_from_masks: mask extents mismatch");
        }
        for (std::int64_t i = 0; i < sum.numel(); ++i) sum[i] += m[i];
    }
    const float sigma = 0.09f * static_cast<float>(std::min(h, w));
    return gaussian_blur(sum, sigma);
}

bool pointing_game(const Tensor& saliency, const RegionSpec& region) {
    if (saliency.rank() != 2) throw InvalidInput("pointing_game: saliency must be HxW");
    const int h = saliency.extent(0), w = saliency.extent(1);
    if (!region.is_rect &&
        (region.mask.extent(0) != h || region.mask.extent(1) != w)) {
        throw InvalidInput("pointing_game: region extents mismatch");
    }
    std::int64_t best = 0;
    for (std::int64_t i = 1; i < saliency.numel(); ++i) {
        if (saliency[i] > saliency[best]) best = i;  // ties keep the lowest row-major index
    }
    const int by = static_cast<int>(best / w);
    const int bx = static_cast<int>(best % w);
    return region.contains(by, bx);
}

double PointingResult::difficult_accuracy() const {
    int dh = 0, dm = 0;
    for (const PointingRecord& r : log) {
        if (r.failed || !r.difficult) continue;
        if (r.hit) ++dh; else ++dm;
    }
    return dh + dm ? static_cast<double>(dh) / (dh + dm) : 0.0;
}

namespace {

EngineConfig engine_config_for_image(const BenchmarkConfig& config, const Tensor& image) {
    EngineConfig ec = config.engine;
    const int h = image.extent(1), w = image.extent(2);
    if (config.mask_defaults) ec.mask = default_mask_config(h, w);
    ec.mask.out_h = h;
    ec.mask.out_w = w;
    return ec;
}

AttributionResult default_sweep(const DatasetItem& item, const BenchmarkConfig& config,
                                const ScorerModel& model) {
    AttributionResult result = sweep(model, item.image, config.areas, ObjectiveKind::Preservation,
                                     config.schedule, engine_config_for_image(config, item.image), 1);
    finalize_extremal(result, config.tau * model.score(item.image));
    return result;
}

// Model cache keyed by path, loaded up front so worker threads only read.
std::map<std::string, std::unique_ptr<LayerStackModel>> load_models(const Dataset& ds) {
    std::map<std::string, std::unique_ptr<LayerStackModel>> models;
    for (const DatasetItem& item : ds.items) {
        for (const ClassAnnotation& ann : item.classes) {
            if (ann.model_path.empty()) {
                throw InvalidInput("benchmark item for image " + item.image_path +
                                   " lists a class without a model");
            }
            if (!models.count(ann.model_path)) models[ann.model_path] = load_model(ann.model_path);
        }
    }
    return models;
}

template <typename Fn>
void for_each_parallel(std::size_t count, int threads, Fn&& fn) {
    const int workers = std::max(1, std::min<int>(threads, static_cast<int>(count)));
    if (workers == 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

} // namespace

PointingResult run_pointing_benchmark(const Dataset& dataset, const BenchmarkConfig& config) {
    if (dataset.items.empty()) throw InvalidInput("pointing benchmark: empty dataset");
    auto models = load_models(dataset);

    struct Task {
        std::size_t item;
        const ClassAnnotation* ann;
    };
    std::vector<Task> tasks;
    for (std::size_t i = 0; i < dataset.items.size(); ++i) {
        for (const ClassAnnotation& ann : dataset.items[i].classes) tasks.push_back({i, &ann});
    }

    std::vector<PointingRecord> log(tasks.size());
    for_each_parallel(tasks.size(), config.threads, [&](std::size_t t) {
        const Task& task = tasks[t];
        const DatasetItem& item = dataset.items[task.item];
        PointingRecord& rec = log[t];
        rec.item = task.item;
        rec.class_id = task.ann->class_id;
        rec.difficult = item.difficult;
        try {
            const ScorerModel& model = *models.at(task.ann->model_path);
            AttributionResult result = default_sweep(item, config, model);
            std::vector<Tensor> binary;
            for (const AreaRecord& record : result.records) {
                if (record.failed) throw NumericalError("area " + std::to_string(record.area) + ": " + record.error);
                Tensor b = record.mask;
                for (auto& v : b.data()) v = v > 0.5f ? 1.0f : 0.0f;
                binary.push_back(std::move(b));
            }
            const Tensor saliency = saliency_from_masks(binary, item.image.extent(1), item.image.extent(2));
            rec.hit = pointing_game(saliency, task.ann->region);
        } catch (const std::exception& e) {
            rec.failed = true;
            rec.error = e.what();
        }
    });

    PointingResult result;
    result.log = std::move(log);
    for (const PointingRecord& rec : result.log) {
        if (rec.failed) {
            ++result.failures;
            continue;
        }
        auto& pc = result.per_class[rec.class_id];
        if (rec.hit) { ++result.hits; ++pc.first; }
        else { ++result.misses; ++pc.second; }
    }
    return result;
}

double monotonicity_rate(const Dataset& dataset, const BenchmarkConfig& config, SweepFn sweep_fn) {
    if (dataset.items.empty()) throw InvalidInput("monotonicity_rate: empty dataset");

    std::map<std::string, std::unique_ptr<LayerStackModel>> models;
    if (!sweep_fn) {
        models = load_models(dataset);
        sweep_fn = [&models, &config](const DatasetItem& item, const ClassAnnotation& ann) {
            return default_sweep(item, config, *models.at(ann.model_path));
        };
    }

    std::vector<char> monotone(dataset.items.size(), 0);
    for_each_parallel(dataset.items.size(), config.threads, [&](std::size_t i) {
        const DatasetItem& item = dataset.items[i];
        bool ok = true;
        for (const ClassAnnotation& ann : item.classes) {
            AttributionResult result = sweep_fn(item, ann);
            if (!result.a_star.has_value() || !check_monotonicity(result)) {
                ok = false;
                break;
            }
        }
        monotone[i] = ok ? 1 : 0;
    });

    std::int64_t good = 0;
    for (char c : monotone) good += c;
    return static_cast<double>(good) / static_cast<double>(dataset.items.size());
}

} // namespace extremal
