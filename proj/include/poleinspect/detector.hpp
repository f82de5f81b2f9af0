#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "poleinspect/artifact_io.hpp"
#include "poleinspect/corpus.hpp"
#include "poleinspect/detection.hpp"
#include "poleinspect/errors.hpp"
#include "poleinspect/geometry.hpp"
#include "poleinspect/image.hpp"
#include "poleinspect/rng.hpp"
#include "poleinspect/textio.hpp"

// The two-stage zoom-in detection cascade and its reference backend.
//
// The reference backend is a multi-scale sliding-window detector: windows at
// the sizes observed in the training annotations, each described by a
// downsampled intensity patch plus a gradient-orientation histogram (both in
// O(1) per window via integral images), scored by a logistic-link linear
// scorer trained with balanced class weights and hard-negative mining.
// Deterministic end to end; heavier learned backends plug in behind the same
// model interface.

namespace poleinspect::detector {

inline constexpr double kEdgeTau = 0.1;  // gradient threshold for EDGE_DENSITY

// ---------------------------------------------------------------------------
// Informative-half selection.
// ---------------------------------------------------------------------------

enum class HalfCriterion { Entropy, EdgeDensity };
enum class HalfChoice { Upper, Lower };

struct HalfSelection {
    HalfChoice chosen = HalfChoice::Upper;
    double upper_score = 0.0;
    double lower_score = 0.0;
    HalfCriterion criterion = HalfCriterion::Entropy;
};

/// Splits a crop at the horizontal midline (odd heights give the upper half
/// the extra row) and returns the half with the higher score: Shannon entropy
/// of the 256-bin intensity histogram, or the fraction of pixels whose
/// gradient magnitude exceeds kEdgeTau. Ties go UPPER -- caps live at the
/// apex.
inline HalfSelection select_informative_half(const img::Image& crop,
                                             HalfCriterion criterion) {
    img::require_nonempty(crop, "select_informative_half");
    if (crop.height < 2)
        throw CropTooSmall("select_informative_half: height " +
                           std::to_string(crop.height) + " < 2");
    const int mid = (crop.height + 1) / 2;
    HalfSelection sel;
    sel.criterion = criterion;
    if (criterion == HalfCriterion::Entropy) {
        sel.upper_score =
            img::shannon_entropy(img::histogram256(crop, 0, 0, crop.width, mid));
        sel.lower_score = img::shannon_entropy(
            img::histogram256(crop, 0, mid, crop.width, crop.height));
    } else {
        sel.upper_score = img::edge_density(crop, 0, 0, crop.width, mid, kEdgeTau);
        sel.lower_score =
            img::edge_density(crop, 0, mid, crop.width, crop.height, kEdgeTau);
    }
    sel.chosen = sel.upper_score >= sel.lower_score ? HalfChoice::Upper
                                                    : HalfChoice::Lower;
    return sel;
}

/// The half region chosen by a selection, in crop-local coordinates.
inline geometry::BoundingBox half_region_box(const img::Image& crop,
                                             const HalfSelection& sel,
                                             const geometry::Frame& frame) {
    const int mid = (crop.height + 1) / 2;
    geometry::BoundingBox region;
    region.frame = frame;
    region.x_min = 0;
    region.x_max = crop.width;
    if (sel.chosen == HalfChoice::Upper) {
        region.y_min = 0;
        region.y_max = mid;
    } else {
        region.y_min = mid;
        region.y_max = crop.height;
    }
    return region;
}

// ---------------------------------------------------------------------------
// Non-maximum suppression.
// ---------------------------------------------------------------------------

/// Greedy suppression by descending confidence with deterministic tie-break
/// (confidence desc, x_min asc, y_min asc). Surviving pairs overlap with IoU
/// strictly below the threshold.
inline std::vector<Detection> nms(std::vector<Detection> detections,
                                  double iou_threshold) {
    for (std::size_t i = 1; i < detections.size(); ++i)
        if (detections[i].box.frame != detections[0].box.frame)
            throw FrameMismatch("nms: detections span multiple frames");
    std::sort(detections.begin(), detections.end(),
              [](const Detection& a, const Detection& b) {
                  if (a.confidence != b.confidence) return a.confidence > b.confidence;
                  if (a.box.x_min != b.box.x_min) return a.box.x_min < b.box.x_min;
                  return a.box.y_min < b.box.y_min;
              });
    std::vector<Detection> kept;
    for (const auto& d : detections) {
        bool suppressed = false;
        for (const auto& k : kept) {
            if (geometry::iou(d.box, k.box) >= iou_threshold) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(d);
    }
    return kept;
}

// ---------------------------------------------------------------------------
// Reference backend.
// ---------------------------------------------------------------------------

inline constexpr const char* kReferenceBackend = "reference-v1";

struct BackendSpec {
    std::string backend_id = kReferenceBackend;
    /// FullImage trains on whole scene rasters; PoleCropHalf trains on the
    /// informative half of the (padded) ground-truth pole crop -- the
    /// stage-2 regime.
    enum class TrainRegion { FullImage, PoleCropHalf } train_region = TrainRegion::FullImage;
    HalfCriterion half_criterion = HalfCriterion::Entropy;
    double crop_margin_fraction = 0.05;

    int patch_grid = 6;
    int orientation_bins = 8;
    int max_templates = 5;

    int positive_jitter = 4;           // extra jittered copies per GT box
    int random_negatives_per_image = 24;
    int mining_rounds = 2;
    int mined_negatives_per_image = 10;
    double mining_threshold = 0.25;

    int epochs = 400;
    double learning_rate = 0.5;

    double nms_iou = 0.3;
    int max_detections = 100;
};

struct DetectorModel {
    std::string backend_id = kReferenceBackend;
    std::string target_class;
    int patch_grid = 6;
    int orientation_bins = 8;
    std::vector<std::pair<int, int>> templates;  // window sizes (w, h)
    std::vector<double> weights;
    double bias = 0.0;
    double nms_iou = 0.3;
    int max_detections = 100;
    std::string corpus_digest;
    std::uint64_t seed = 0;

    int feature_dim() const { return patch_grid * patch_grid + orientation_bins; }
};

namespace internal {

/// O(1) window features over one raster: patch_grid^2 box-averaged intensity
/// cells plus an L1-normalized gradient-orientation histogram.
class WindowFeatures {
public:
    WindowFeatures(const img::Image& image, int patch_grid, int orientation_bins)
        : grid_(patch_grid),
          intensity_(image),
          orient_(img::orientation_integrals(image, orientation_bins)) {}

    int dim() const { return grid_ * grid_ + static_cast<int>(orient_.size()); }

    void extract(int x0, int y0, int w, int h, std::vector<double>& out) const {
        out.resize(static_cast<std::size_t>(dim()));
        std::size_t i = 0;
        for (int gy = 0; gy < grid_; ++gy) {
            const int cy0 = y0 + gy * h / grid_;
            const int cy1 = y0 + (gy + 1) * h / grid_;
            for (int gx = 0; gx < grid_; ++gx) {
                const int cx0 = x0 + gx * w / grid_;
                const int cx1 = x0 + (gx + 1) * w / grid_;
                out[i++] = intensity_.rect_mean(cx0, cy0, cx1, cy1);
            }
        }
        double total = 0.0;
        const std::size_t hist_start = i;
        for (const auto& integral : orient_) {
            const double v = integral.rect_sum(x0, y0, x0 + w, y0 + h);
            out[i++] = v;
            total += v;
        }
        if (total > 0.0)
            for (std::size_t k = hist_start; k < out.size(); ++k) out[k] /= total;
    }

private:
    int grid_;
    img::IntegralImage intensity_;
    std::vector<img::IntegralImage> orient_;
};

inline double score_features(const DetectorModel& model,
                             const std::vector<double>& features) {
    double z = model.bias;
    for (std::size_t k = 0; k < features.size(); ++k)
        z += model.weights[k] * features[k];
    return 1.0 / (1.0 + std::exp(-z));
}

inline int window_stride(int w, int h) {
    return std::clamp(std::min(w, h) / 4, 2, 48);
}

/// Positions along one axis: start, start+s, ..., plus the flush-end
/// position so borders are always covered.
inline std::vector<int> axis_positions(int limit, int window, int stride) {
    std::vector<int> xs;
    if (window > limit) return xs;
    for (int x = 0; x + window <= limit; x += stride) xs.push_back(x);
    if (xs.empty() || xs.back() != limit - window) xs.push_back(limit - window);
    return xs;
}

struct TrainingSample {
    std::vector<double> features;
    bool positive;
};

/// Deduplicated window templates spanning the annotated size range, picked at
/// area quantiles.
inline std::vector<std::pair<int, int>> derive_templates(
    std::vector<std::pair<int, int>> sizes, int max_templates) {
    std::sort(sizes.begin(), sizes.end(), [](const auto& a, const auto& b) {
        const long long area_a = 1LL * a.first * a.second;
        const long long area_b = 1LL * b.first * b.second;
        if (area_a != area_b) return area_a < area_b;
        return a < b;
    });
    std::vector<std::pair<int, int>> templates;
    const std::size_t n = sizes.size();
    for (int q = 0; q < max_templates; ++q) {
        const double frac = max_templates == 1
                                ? 0.5
                                : 0.1 + 0.8 * q / static_cast<double>(max_templates - 1);
        const auto pick = sizes[std::min(n - 1, static_cast<std::size_t>(frac * n))];
        if (std::find(templates.begin(), templates.end(), pick) == templates.end())
            templates.push_back(pick);
    }
    return templates;
}

/// View used by stage-2 training and the cascade alike: the informative half
/// of a padded, pixel-aligned pole crop.
struct PoleHalfView {
    img::Image raster;                  // the half, as its own raster
    geometry::BoundingBox crop_box;     // integer pole crop, GLOBAL frame
    geometry::BoundingBox half_region;  // half within the crop, CROP frame
    HalfSelection selection;
};

inline std::optional<PoleHalfView> make_pole_half_view(
    const img::Image& image, const geometry::BoundingBox& pole_box,
    double margin_fraction, HalfCriterion criterion) {
    const double mw = margin_fraction * pole_box.width();
    const double mh = margin_fraction * pole_box.height();
    geometry::BoundingBox padded = pole_box;
    padded.x_min -= mw;
    padded.x_max += mw;
    padded.y_min -= mh;
    padded.y_max += mh;
    padded = geometry::clip_box(padded, {image.width, image.height});
    const int x0 = static_cast<int>(std::floor(padded.x_min));
    const int y0 = static_cast<int>(std::floor(padded.y_min));
    const int x1 = std::min(image.width, static_cast<int>(std::ceil(padded.x_max)));
    const int y1 = std::min(image.height, static_cast<int>(std::ceil(padded.y_max)));
    if (x1 - x0 < 2 || y1 - y0 < 2) return std::nullopt;

    PoleHalfView view;
    view.crop_box = geometry::BoundingBox{
        static_cast<double>(x0), static_cast<double>(y0), static_cast<double>(x1),
        static_cast<double>(y1), geometry::Frame::global()};
    img::Image crop_raster = img::crop(image, x0, y0, x1 - x0, y1 - y0);
    view.selection = select_informative_half(crop_raster, criterion);
    view.half_region = half_region_box(
        crop_raster, view.selection, geometry::Frame::crop(view.crop_box.x_min,
                                                           view.crop_box.y_min));
    view.raster = img::crop(crop_raster, static_cast<int>(view.half_region.x_min),
                            static_cast<int>(view.half_region.y_min),
                            static_cast<int>(view.half_region.width()),
                            static_cast<int>(view.half_region.height()));
    return view;
}

}  // namespace internal

// ---------------------------------------------------------------------------
// Inference.
// ---------------------------------------------------------------------------

inline constexpr std::size_t kPreNmsLimit = 600;

/// Runs the sliding-window scorer over the raster. Detections come back in
/// the raster's own frame, sorted by descending confidence, all at or above
/// the threshold and NMS-filtered. An empty result is valid. Only the
/// kPreNmsLimit highest-confidence windows enter suppression; at permissive
/// thresholds the weak tail would otherwise dominate the cost without ever
/// surviving to the capped output.
inline std::vector<Detection> detect(const DetectorModel& model,
                                     const img::Image& image,
                                     double confidence_threshold) {
    if (image.empty()) throw InvalidImage("detect: empty raster");
    const internal::WindowFeatures features(image, model.patch_grid,
                                            model.orientation_bins);
    std::vector<Detection> candidates;
    std::vector<double> buf;
    for (const auto& [tw, th] : model.templates) {
        const int sx = internal::window_stride(tw, th);
        const auto xs = internal::axis_positions(image.width, tw, sx);
        const auto ys = internal::axis_positions(image.height, th, sx);
        for (int y : ys) {
            for (int x : xs) {
                features.extract(x, y, tw, th, buf);
                const double conf = internal::score_features(model, buf);
                if (conf < confidence_threshold) continue;
                candidates.push_back(
                    {geometry::BoundingBox{static_cast<double>(x), static_cast<double>(y),
                                           static_cast<double>(x + tw),
                                           static_cast<double>(y + th),
                                           geometry::Frame::global()},
                     model.target_class, conf});
            }
        }
    }
    if (candidates.size() > kPreNmsLimit) {
        std::sort(candidates.begin(), candidates.end(),
                  [](const Detection& a, const Detection& b) {
                      if (a.confidence != b.confidence) return a.confidence > b.confidence;
                      if (a.box.x_min != b.box.x_min) return a.box.x_min < b.box.x_min;
                      return a.box.y_min < b.box.y_min;
                  });
        candidates.resize(kPreNmsLimit);
    }
    auto kept = nms(std::move(candidates), model.nms_iou);
    if (kept.size() > static_cast<std::size_t>(model.max_detections))
        kept.resize(static_cast<std::size_t>(model.max_detections));
    return kept;
}

// ---------------------------------------------------------------------------
// Training.
// ---------------------------------------------------------------------------

namespace internal {

struct RegionSample {
    img::Image raster;
    std::vector<geometry::BoundingBox> targets;  // raster-local, plain coords
};

/// The raster a detector trains on for one scene, with its target boxes.
inline std::optional<RegionSample> training_region(const corpus::LabeledImage& scene,
                                                   const std::string& target_class,
                                                   const BackendSpec& spec) {
    RegionSample region;
    if (spec.train_region == BackendSpec::TrainRegion::FullImage) {
        region.raster = scene.pixels;
        for (const auto& ann : scene.annotations)
            if (ann.class_name == target_class) region.targets.push_back(ann.box);
        return region;
    }
    const corpus::Annotation* pole = nullptr;
    for (const auto& ann : scene.annotations)
        if (ann.class_name == corpus::kWholePole) pole = &ann;
    if (!pole) return std::nullopt;
    auto view = make_pole_half_view(scene.pixels, pole->box,
                                    spec.crop_margin_fraction, spec.half_criterion);
    if (!view) return std::nullopt;
    for (const auto& ann : scene.annotations) {
        if (ann.class_name != target_class) continue;
        auto local = geometry::transform_box(ann.box, view->crop_box,
                                             geometry::TransformDirection::ToLocal);
        local.frame = view->half_region.frame;
        local = geometry::transform_box(local, view->half_region,
                                        geometry::TransformDirection::ToLocal);
        // Keep targets whose centre landed inside the selected half.
        const double cx = (local.x_min + local.x_max) / 2.0;
        const double cy = (local.y_min + local.y_max) / 2.0;
        if (cx < 0 || cy < 0 || cx >= view->raster.width || cy >= view->raster.height)
            continue;
        local.frame = geometry::Frame::global();
        local = geometry::clip_box(local, {view->raster.width, view->raster.height});
        if (local.area() > 0.0) region.targets.push_back(local);
    }
    region.raster = std::move(view->raster);
    return region;
}

inline double max_iou_with(const geometry::BoundingBox& box,
                           const std::vector<geometry::BoundingBox>& targets) {
    double best = 0.0;
    for (const auto& t : targets) best = std::max(best, geometry::iou(box, t));
    return best;
}

inline void fit_scorer(DetectorModel& model,
                       const std::vector<TrainingSample>& samples,
                       const BackendSpec& spec, bool warm_start) {
    std::size_t n_pos = 0, n_neg = 0;
    for (const auto& s : samples) (s.positive ? n_pos : n_neg) += 1;
    const double w_pos =
        n_pos <= n_neg ? static_cast<double>(n_neg) / static_cast<double>(n_pos) : 1.0;
    const double w_neg =
        n_pos <= n_neg ? 1.0 : static_cast<double>(n_pos) / static_cast<double>(n_neg);

    const std::size_t dim = static_cast<std::size_t>(model.feature_dim());
    if (!warm_start || model.weights.size() != dim) {
        model.weights.assign(dim, 0.0);
        model.bias = 0.0;
    }
    std::vector<double> grad(dim);
    const double n = static_cast<double>(samples.size());
    for (int epoch = 0; epoch < spec.epochs; ++epoch) {
        std::fill(grad.begin(), grad.end(), 0.0);
        double grad_b = 0.0;
        for (const auto& s : samples) {
            const double p = score_features(model, s.features);
            const double y = s.positive ? 1.0 : 0.0;
            const double dz = (s.positive ? w_pos : w_neg) * (p - y) / n;
            for (std::size_t k = 0; k < dim; ++k) grad[k] += dz * s.features[k];
            grad_b += dz;
        }
        for (std::size_t k = 0; k < dim; ++k)
            model.weights[k] -= spec.learning_rate * grad[k];
        model.bias -= spec.learning_rate * grad_b;
    }
}

}  // namespace internal

/// Trains a reference-backend detector for one target class. Deterministic in
/// (manifest, target_class, spec, seed); the manifest digest is recorded for
/// provenance. Training alternates scorer fits with hard-negative mining
/// sweeps over the training scenes.
inline DetectorModel train_detector(const corpus::DatasetManifest& train,
                                    const std::string& target_class,
                                    const BackendSpec& spec, std::uint64_t seed) {
    if (target_class != corpus::kWholePole && target_class != corpus::kPoleCap)
        throw InvalidParams("train_detector: unsupported target class '" +
                            target_class + "'");
    if (spec.backend_id != kReferenceBackend)
        throw InvalidParams("train_detector: unknown backend '" + spec.backend_id + "'");

    // Template sizes from the annotations.
    std::vector<std::pair<int, int>> sizes;
    for (const auto& entry : train.entries)
        for (const auto& ann : entry.annotations)
            if (ann.class_name == target_class)
                sizes.emplace_back(
                    std::max(3, static_cast<int>(std::lround(ann.box.width()))),
                    std::max(3, static_cast<int>(std::lround(ann.box.height()))));
    if (sizes.empty())
        throw EmptyTargetClass("train_detector: no '" + target_class +
                               "' annotations in the training manifest");

    DetectorModel model;
    model.backend_id = spec.backend_id;
    model.target_class = target_class;
    model.patch_grid = spec.patch_grid;
    model.orientation_bins = spec.orientation_bins;
    model.templates = internal::derive_templates(std::move(sizes), spec.max_templates);
    model.nms_iou = spec.nms_iou;
    model.max_detections = spec.max_detections;
    model.corpus_digest = corpus::manifest_digest(train);
    model.seed = seed;

    rng::Engine eng(rng::mix_seed(seed, 0xde7ec7));
    std::vector<internal::TrainingSample> samples;
    std::vector<double> buf;

    // Pass 1: positives (annotated boxes plus jittered copies) and random
    // negatives from every training scene.
    for (std::size_t idx = 0; idx < train.entries.size(); ++idx) {
        const auto scene = corpus::load_entry(train, idx);
        const auto region = internal::training_region(scene, target_class, spec);
        if (!region || region->raster.width < 4 || region->raster.height < 4) continue;
        const internal::WindowFeatures features(region->raster, spec.patch_grid,
                                                spec.orientation_bins);
        const geometry::ImageExtent extent{region->raster.width, region->raster.height};

        for (const auto& target : region->targets) {
            const int bw = std::max(3, static_cast<int>(std::lround(target.width())));
            const int bh = std::max(3, static_cast<int>(std::lround(target.height())));
            for (int j = 0; j <= spec.positive_jitter; ++j) {
                int x0 = static_cast<int>(std::lround(target.x_min));
                int y0 = static_cast<int>(std::lround(target.y_min));
                int w = bw, h = bh;
                if (j > 0) {
                    x0 += static_cast<int>(rng::uniform_int(eng, -2, 2));
                    y0 += static_cast<int>(rng::uniform_int(eng, -2, 2));
                    w = std::max(3, static_cast<int>(std::lround(bw * rng::uniform(eng, 0.9, 1.1))));
                    h = std::max(3, static_cast<int>(std::lround(bh * rng::uniform(eng, 0.9, 1.1))));
                }
                x0 = std::clamp(x0, 0, std::max(0, extent.width - w));
                y0 = std::clamp(y0, 0, std::max(0, extent.height - h));
                if (x0 + w > extent.width || y0 + h > extent.height) continue;
                const geometry::BoundingBox window{
                    static_cast<double>(x0), static_cast<double>(y0),
                    static_cast<double>(x0 + w), static_cast<double>(y0 + h)};
                if (j > 0 && geometry::iou(window, target) < 0.5) continue;
                features.extract(x0, y0, w, h, buf);
                samples.push_back({buf, true});
            }
        }

        for (int r = 0; r < spec.random_negatives_per_image; ++r) {
            const auto& [tw, th] =
                model.templates[rng::uniform_index(eng, model.templates.size())];
            if (tw > extent.width || th > extent.height) continue;
            for (int attempt = 0; attempt < 30; ++attempt) {
                const int x0 = static_cast<int>(
                    rng::uniform_index(eng, static_cast<std::uint64_t>(extent.width - tw + 1)));
                const int y0 = static_cast<int>(
                    rng::uniform_index(eng, static_cast<std::uint64_t>(extent.height - th + 1)));
                const geometry::BoundingBox window{
                    static_cast<double>(x0), static_cast<double>(y0),
                    static_cast<double>(x0 + tw), static_cast<double>(y0 + th)};
                if (internal::max_iou_with(window, region->targets) > 0.3) continue;
                features.extract(x0, y0, tw, th, buf);
                samples.push_back({buf, false});
                break;
            }
        }
    }

    internal::fit_scorer(model, samples, spec, false);

    // Mining rounds: sweep the training scenes with the current model and add
    // confident false positives as negatives, then refit warm-started.
    for (int round = 0; round < spec.mining_rounds; ++round) {
        for (std::size_t idx = 0; idx < train.entries.size(); ++idx) {
            const auto scene = corpus::load_entry(train, idx);
            const auto region = internal::training_region(scene, target_class, spec);
            if (!region || region->raster.width < 4 || region->raster.height < 4)
                continue;
            const auto detections =
                detect(model, region->raster, spec.mining_threshold);
            const internal::WindowFeatures features(region->raster, spec.patch_grid,
                                                    spec.orientation_bins);
            int added = 0;
            for (const auto& d : detections) {
                if (added >= spec.mined_negatives_per_image) break;
                if (internal::max_iou_with(d.box, region->targets) > 0.3) continue;
                features.extract(static_cast<int>(d.box.x_min),
                                 static_cast<int>(d.box.y_min),
                                 static_cast<int>(d.box.width()),
                                 static_cast<int>(d.box.height()), buf);
                samples.push_back({buf, false});
                ++added;
            }
        }
        internal::fit_scorer(model, samples, spec, true);
    }
    return model;
}

// ---------------------------------------------------------------------------
// The cascade.
// ---------------------------------------------------------------------------

struct CascadeConfig {
    double stage1_threshold = 0.5;
    double stage2_threshold = 0.25;
    double margin_fraction = 0.05;  // crop padding, per axis
    HalfCriterion half_criterion = HalfCriterion::Entropy;
    int top_k = 1;  // stage-1 regions to zoom into
};

/// Everything the cascade did for one stage-1 region, for diagnostics and for
/// the coordinate-soundness checks.
struct RegionTrace {
    Detection stage1;
    geometry::BoundingBox crop_box;     // GLOBAL, integer coordinates
    HalfSelection half;
    geometry::BoundingBox half_region;  // CROP(crop origin) frame
    std::vector<Detection> stage2_local;  // CROP(half origin) frame
};

struct CascadeResult {
    std::vector<Detection> detections;  // GLOBAL frame, NMS-filtered, sorted
    bool cascade_miss = false;          // stage 1 found nothing
    std::vector<RegionTrace> regions;
};

/// Two-stage zoom-in detection: find the pole, crop it (padded, clipped,
/// pixel-aligned), keep its informative half, detect the cap inside that
/// half, then map every detection back to the original image frame through
/// the recorded crop chain.
inline CascadeResult zoom_in_detect(const DetectorModel& stage1,
                                    const DetectorModel& stage2,
                                    const img::Image& image,
                                    const CascadeConfig& config) {
    if (stage1.target_class != corpus::kWholePole)
        throw InvalidParams("zoom_in_detect: stage-1 model must target whole_pole");
    if (stage2.target_class != corpus::kPoleCap)
        throw InvalidParams("zoom_in_detect: stage-2 model must target pole_cap");

    CascadeResult result;
    const auto stage1_dets = detect(stage1, image, config.stage1_threshold);
    if (stage1_dets.empty()) {
        result.cascade_miss = true;
        return result;
    }

    std::vector<Detection> merged;
    const int regions = std::min<int>(config.top_k, static_cast<int>(stage1_dets.size()));
    for (int r = 0; r < regions; ++r) {
        auto view = internal::make_pole_half_view(image, stage1_dets[r].box,
                                                  config.margin_fraction,
                                                  config.half_criterion);
        if (!view) continue;

        RegionTrace trace;
        trace.stage1 = stage1_dets[r];
        trace.crop_box = view->crop_box;
        trace.half = view->selection;
        trace.half_region = view->half_region;

        auto local_dets = detect(stage2, view->raster, config.stage2_threshold);
        for (auto& d : local_dets) {
            d.box.frame = geometry::Frame::crop(view->half_region.x_min,
                                                view->half_region.y_min);
            trace.stage2_local.push_back(d);
            Detection global = d;
            global.box = geometry::transform_box(
                geometry::transform_box(d.box, view->half_region,
                                        geometry::TransformDirection::ToGlobal),
                view->crop_box, geometry::TransformDirection::ToGlobal);
            merged.push_back(std::move(global));
        }
        result.regions.push_back(std::move(trace));
    }

    result.detections = nms(std::move(merged), stage2.nms_iou);
    if (result.detections.size() > static_cast<std::size_t>(stage2.max_detections))
        result.detections.resize(static_cast<std::size_t>(stage2.max_detections));
    return result;
}

// ---------------------------------------------------------------------------
// Model artifact: header fields plus the parameter vector, byte-exact
// round-trip behind a checksum.
// ---------------------------------------------------------------------------

inline constexpr const char* kDetectorKind = "detector-model";

inline std::string serialize_detector(const DetectorModel& model) {
    std::string payload;
    payload += "backend " + model.backend_id + "\n";
    payload += "target_class " + model.target_class + "\n";
    payload += "patch_grid " + std::to_string(model.patch_grid) + "\n";
    payload += "orientation_bins " + std::to_string(model.orientation_bins) + "\n";
    payload += "nms_iou " + textio::format_double(model.nms_iou) + "\n";
    payload += "max_detections " + std::to_string(model.max_detections) + "\n";
    payload += "corpus_digest " + model.corpus_digest + "\n";
    payload += "seed " + std::to_string(model.seed) + "\n";
    payload += "templates";
    for (const auto& [w, h] : model.templates)
        payload += " " + std::to_string(w) + "x" + std::to_string(h);
    payload += "\n";
    payload += "bias " + textio::format_double(model.bias) + "\n";
    payload += "weights";
    for (double w : model.weights) payload += " " + textio::format_double(w);
    payload += "\n";
    return payload;
}

inline std::string save_detector(const DetectorModel& model,
                                 const std::filesystem::path& path) {
    return artifact::save(path, kDetectorKind, serialize_detector(model)).file_digest;
}

inline DetectorModel load_detector(const std::filesystem::path& path) {
    const std::string payload = artifact::load(path, kDetectorKind);
    DetectorModel model;
    model.templates.clear();
    for (const auto line : textio::split(payload, '\n')) {
        if (line.empty()) continue;
        const auto fields = textio::split(line, ' ');
        const auto key = fields[0];
        if (key == "backend") model.backend_id = std::string(fields[1]);
        else if (key == "target_class") model.target_class = std::string(fields[1]);
        else if (key == "patch_grid") model.patch_grid = static_cast<int>(textio::parse_i64(fields[1]));
        else if (key == "orientation_bins") model.orientation_bins = static_cast<int>(textio::parse_i64(fields[1]));
        else if (key == "nms_iou") model.nms_iou = textio::parse_double(fields[1]);
        else if (key == "max_detections") model.max_detections = static_cast<int>(textio::parse_i64(fields[1]));
        else if (key == "corpus_digest") model.corpus_digest = std::string(fields[1]);
        else if (key == "seed") model.seed = textio::parse_u64(fields[1]);
        else if (key == "templates") {
            for (std::size_t i = 1; i < fields.size(); ++i) {
                const auto parts = textio::split(fields[i], 'x');
                if (parts.size() != 2)
                    throw FormatVersionError("detector artifact: bad template");
                model.templates.emplace_back(static_cast<int>(textio::parse_i64(parts[0])),
                                             static_cast<int>(textio::parse_i64(parts[1])));
            }
        } else if (key == "bias") {
            model.bias = textio::parse_double(fields[1]);
        } else if (key == "weights") {
            for (std::size_t i = 1; i < fields.size(); ++i)
                model.weights.push_back(textio::parse_double(fields[i]));
        } else {
            throw FormatVersionError("detector artifact: unknown record '" +
                                     std::string(key) + "'");
        }
    }
    if (model.weights.size() != static_cast<std::size_t>(model.feature_dim()))
        throw FormatVersionError("detector artifact: weight count mismatch");
    return model;
}

/// Structured-text diagnostics lines for one cascade call (verbose CLI mode).
inline std::string format_diagnostics(const CascadeResult& result) {
    std::string out;
    if (result.cascade_miss) return "cascade_miss\n";
    for (std::size_t r = 0; r < result.regions.size(); ++r) {
        const auto& t = result.regions[r];
        out += "region " + std::to_string(r);
        out += " stage1_conf=" + textio::format_double(t.stage1.confidence);
        out += " stage1_box=" + textio::format_double(t.stage1.box.x_min) + "," +
               textio::format_double(t.stage1.box.y_min) + "," +
               textio::format_double(t.stage1.box.x_max) + "," +
               textio::format_double(t.stage1.box.y_max);
        out += " crop=" + textio::format_double(t.crop_box.x_min) + "," +
               textio::format_double(t.crop_box.y_min) + "," +
               textio::format_double(t.crop_box.x_max) + "," +
               textio::format_double(t.crop_box.y_max);
        out += std::string(" half=") +
               (t.half.chosen == HalfChoice::Upper ? "UPPER" : "LOWER");
        out += " half_scores=" + textio::format_double(t.half.upper_score) + "," +
               textio::format_double(t.half.lower_score);
        out += " stage2_raw=" + std::to_string(t.stage2_local.size());
        out += "\n";
        for (const auto& d : t.stage2_local) {
            out += "  raw conf=" + textio::format_double(d.confidence) + " box=" +
                   textio::format_double(d.box.x_min) + "," +
                   textio::format_double(d.box.y_min) + "," +
                   textio::format_double(d.box.x_max) + "," +
                   textio::format_double(d.box.y_max) + "\n";
        }
    }
    return out;
}

}  // namespace poleinspect::detector
