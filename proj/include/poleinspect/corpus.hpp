#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "poleinspect/digest.hpp"
#include "poleinspect/errors.hpp"
#include "poleinspect/geometry.hpp"
#include "poleinspect/image.hpp"
#include "poleinspect/rng.hpp"
#include "poleinspect/textio.hpp"

// Deterministic synthetic-scene generation and dataset bookkeeping.
//
// A scene is a large grayscale raster holding one distribution pole: a
// vertical shaft, cross arms with insulator nubs in its upper part, and a
// small bright cap at the apex when the pole is healthy. The pole base is
// deliberately sparse (smooth shaft, no fittings) while the upper part is
// textured, which is the property the informative-half heuristic relies on.
// Background clutter includes short post-like distractors topped with
// cap-sized bright blobs; those are locally indistinguishable from a real cap
// at cap scale and only the enclosing pole structure disambiguates them.
//
// Everything is a pure function of (params, seed): draws happen in a fixed
// documented order from one engine, noise is bounded (sum of four uniforms),
// and rasters are quantized to 8-bit levels before leaving the generator so
// the in-memory image equals its PGM file exactly.

namespace poleinspect::corpus {

inline constexpr const char* kGeneratorVersion = "scene-v1";

inline constexpr const char* kWholePole = "whole_pole";
inline constexpr const char* kCrossArm = "cross_arm";
inline constexpr const char* kPoleCap = "pole_cap";

enum class PoleType {
    Wood,
    Concrete,
    Nailed,
    Rebutted,
    Steel,
    Aluminium,
    Unknown,
    WoodMultiTrans,
    WoodX2PT,
};

/// Condition of the pole cap: POSITIVE means the cap is missing (the defect
/// of interest), NEGATIVE means it is present.
enum class ConditionLabel { Positive, Negative };

struct SceneParams {
    geometry::ImageExtent extent{1024, 1536};
    double pole_width_fraction_min = 0.02;
    double pole_width_fraction_max = 0.05;
    int cap_size_px = 12;
    bool cap_present = true;
    double clutter_density = 0.5;
    double noise_sigma = 0.02;
    PoleType pole_type = PoleType::Wood;
    // Condition ambiguity: fraction of present caps that are weathered (dim,
    // near background intensity) and fraction of missing-cap poles that keep
    // a small residual stub at the apex. Both make the condition task hard
    // the way field imagery is hard.
    double weathered_cap_fraction = 0.35;
    double stub_fraction = 0.3;
};

struct Annotation {
    std::string class_name;
    geometry::BoundingBox box;

    bool operator==(const Annotation&) const = default;
};

struct LabeledImage {
    img::Image pixels;
    std::vector<Annotation> annotations;
    ConditionLabel condition_label = ConditionLabel::Negative;
    std::string source_id;
    PoleType pole_type = PoleType::Wood;
};

namespace internal {

inline double scene_area(const SceneParams& p) {
    return static_cast<double>(p.extent.width) * p.extent.height;
}

}  // namespace internal

inline void validate_scene_params(const SceneParams& p) {
    if (p.extent.width < 64 || p.extent.height < 64)
        throw InvalidParams("scene extent must be at least 64x64");
    if (p.cap_size_px < 4) throw InvalidParams("cap_size_px must be >= 4");
    if (p.pole_width_fraction_min <= 0.0 ||
        p.pole_width_fraction_max < p.pole_width_fraction_min ||
        p.pole_width_fraction_max > 0.2)
        throw InvalidParams("pole width fraction range invalid");
    const double cap_area = static_cast<double>(p.cap_size_px) * p.cap_size_px;
    if (cap_area / internal::scene_area(p) >= 0.001)
        throw InvalidParams("cap too large for the tiny-object regime");
    const int min_shaft =
        std::max(3, static_cast<int>(std::lround(p.pole_width_fraction_min *
                                                 p.extent.width)));
    if (p.cap_size_px > 3 * min_shaft)
        throw InvalidParams("cap larger than the pole top");
    if (p.clutter_density < 0.0 || p.clutter_density > 1.0)
        throw InvalidParams("clutter_density must be in [0, 1]");
    if (p.noise_sigma < 0.0 || p.noise_sigma > 0.2)
        throw InvalidParams("noise_sigma must be in [0, 0.2]");
    if (p.weathered_cap_fraction < 0.0 || p.weathered_cap_fraction > 1.0 ||
        p.stub_fraction < 0.0 || p.stub_fraction > 1.0)
        throw InvalidParams("condition fractions must be in [0, 1]");
}

namespace internal {

/// Bounded approximately-Gaussian noise: sum of four uniforms, normalized to
/// unit variance. No transcendental calls, tails bounded at ~3.5 sigma.
inline double bounded_noise(rng::Engine& eng) {
    const double s = rng::uniform01(eng) + rng::uniform01(eng) +
                     rng::uniform01(eng) + rng::uniform01(eng);
    return (s - 2.0) * 1.7320508075688772;  // sqrt(3)
}

inline void fill_rect(img::Image& image, int x0, int y0, int x1, int y1,
                      float value) {
    x0 = std::clamp(x0, 0, image.width);
    x1 = std::clamp(x1, 0, image.width);
    y0 = std::clamp(y0, 0, image.height);
    y1 = std::clamp(y1, 0, image.height);
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) image.at(x, y) = value;
}

inline void fill_ellipse(img::Image& image, double cx, double cy, double rx,
                         double ry, float value) {
    const int x0 = std::clamp(static_cast<int>(std::floor(cx - rx)), 0, image.width);
    const int x1 = std::clamp(static_cast<int>(std::ceil(cx + rx)) + 1, 0, image.width);
    const int y0 = std::clamp(static_cast<int>(std::floor(cy - ry)), 0, image.height);
    const int y1 = std::clamp(static_cast<int>(std::ceil(cy + ry)) + 1, 0, image.height);
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            const double dx = (x + 0.5 - cx) / rx;
            const double dy = (y + 0.5 - cy) / ry;
            if (dx * dx + dy * dy <= 1.0) image.at(x, y) = value;
        }
    }
}

struct ShaftStyle {
    double base;       // pre-illumination shaft intensity
    double grain_amp;  // vertical streak amplitude in the upper part
    int extra_arms;
    bool banded;       // horizontal banding (nailed poles)
    bool two_tone;     // lighter replaced butt (rebutted poles)
};

inline ShaftStyle shaft_style(PoleType type, rng::Engine& eng) {
    switch (type) {
        case PoleType::Wood:
            return {rng::uniform(eng, 0.28, 0.36), rng::uniform(eng, 0.05, 0.09), 0, false, false};
        case PoleType::Concrete:
            return {rng::uniform(eng, 0.52, 0.60), rng::uniform(eng, 0.01, 0.02), 0, false, false};
        case PoleType::Nailed:
            return {rng::uniform(eng, 0.28, 0.36), rng::uniform(eng, 0.04, 0.08), 0, true, false};
        case PoleType::Rebutted:
            return {rng::uniform(eng, 0.28, 0.36), rng::uniform(eng, 0.04, 0.08), 0, false, true};
        case PoleType::Steel:
            return {rng::uniform(eng, 0.18, 0.24), rng::uniform(eng, 0.005, 0.015), 0, false, false};
        case PoleType::Aluminium:
            return {rng::uniform(eng, 0.62, 0.70), rng::uniform(eng, 0.005, 0.015), 0, false, false};
        case PoleType::Unknown:
            return {rng::uniform(eng, 0.38, 0.46), rng::uniform(eng, 0.02, 0.05), 0, false, false};
        case PoleType::WoodMultiTrans:
            return {rng::uniform(eng, 0.28, 0.36), rng::uniform(eng, 0.05, 0.09), 2, false, false};
        case PoleType::WoodX2PT:
            return {rng::uniform(eng, 0.28, 0.36), rng::uniform(eng, 0.05, 0.09), 1, false, false};
    }
    throw InvalidParams("unknown pole type");
}

}  // namespace internal

/// Renders one synthetic inspection scene. Deterministic in (params, seed).
inline LabeledImage generate_scene(const SceneParams& params, std::uint64_t seed) {
    validate_scene_params(params);
    const int W = params.extent.width;
    const int H = params.extent.height;
    rng::Engine eng(rng::mix_seed(seed, 0x5ce9e));

    LabeledImage scene;
    scene.pole_type = params.pole_type;
    img::Image& image = scene.pixels;
    image = img::Image(W, H);

    // 1. Global illumination and background (vertical gradient, sky lighter
    //    at the top).
    const double illum = rng::uniform(eng, 0.88, 1.08);
    const double bg_base = rng::uniform(eng, 0.44, 0.52) * illum;
    const double bg_grad = rng::uniform(eng, 0.01, 0.05);
    for (int y = 0; y < H; ++y) {
        const float v = static_cast<float>(
            bg_base + bg_grad * (0.5 - static_cast<double>(y) / H));
        for (int x = 0; x < W; ++x) image.at(x, y) = v;
    }

    // 2. Pole placement.
    const double width_frac = rng::uniform(eng, params.pole_width_fraction_min,
                                           params.pole_width_fraction_max);
    const int shaft_w = std::max(3, static_cast<int>(std::lround(width_frac * W)));
    const int pole_cx = static_cast<int>(std::lround(rng::uniform(eng, 0.34, 0.66) * W));
    const int pole_top = static_cast<int>(std::lround(rng::uniform(eng, 0.07, 0.15) * H));
    const int pole_bot = static_cast<int>(std::lround(rng::uniform(eng, 0.90, 0.97) * H));
    const int pole_mid = (pole_top + pole_bot) / 2;
    const int shaft_x0 = pole_cx - shaft_w / 2;
    const int shaft_x1 = shaft_x0 + shaft_w;

    // 3. Shaft. The upper part carries grain texture; the base is smooth.
    const auto style = internal::shaft_style(params.pole_type, eng);
    const double shaft_base = style.base * illum;
    std::vector<double> grain(static_cast<std::size_t>(shaft_w));
    for (double& g : grain) g = rng::uniform(eng, -style.grain_amp, style.grain_amp);
    const int butt_y = style.two_tone
                           ? pole_bot - static_cast<int>(std::lround(
                                            rng::uniform(eng, 0.12, 0.25) * (pole_bot - pole_top)))
                           : pole_bot;
    const double butt_base = shaft_base + 0.12;
    for (int y = pole_top; y < pole_bot; ++y) {
        const bool upper = y < pole_mid;
        for (int x = std::max(0, shaft_x0); x < std::min(W, shaft_x1); ++x) {
            double v = (y >= butt_y) ? butt_base : shaft_base;
            if (upper) v += grain[static_cast<std::size_t>(x - shaft_x0)];
            image.at(x, y) = static_cast<float>(v);
        }
    }
    if (style.banded) {
        const int band_step = std::max(12, (pole_mid - pole_top) / 6);
        for (int y = pole_top + band_step; y < pole_mid; y += band_step)
            internal::fill_rect(image, shaft_x0, y, shaft_x1, y + 2,
                                static_cast<float>(shaft_base * 0.75));
    }

    // 4. Cross arms with insulator nubs, all in the upper 45% of the pole.
    const int pole_h = pole_bot - pole_top;
    const int n_arms = 2 + static_cast<int>(rng::uniform_index(eng, 2)) + style.extra_arms;
    double min_x = shaft_x0, max_x = shaft_x1;
    int prev_arm_bottom = pole_top + std::max(4, static_cast<int>(std::lround(0.05 * pole_h)));
    for (int a = 0; a < n_arms; ++a) {
        const int arm_th = std::max(4, static_cast<int>(std::lround(
                                           rng::uniform(eng, 0.5, 0.85) * shaft_w)));
        const int slot = prev_arm_bottom +
                         static_cast<int>(rng::uniform_index(eng, static_cast<std::uint64_t>(
                                              std::max(6, pole_h / 14))));
        const int arm_y0 = slot;
        const int arm_y1 = arm_y0 + arm_th;
        if (arm_y1 > pole_top + static_cast<int>(0.45 * pole_h)) break;
        prev_arm_bottom = arm_y1 + std::max(4, pole_h / 20);
        const int half_span = static_cast<int>(std::lround(
            rng::uniform(eng, 2.2, 4.5) * shaft_w));
        const int arm_x0 = std::max(1, pole_cx - half_span);
        const int arm_x1 = std::min(W - 1, pole_cx + half_span);
        const double arm_v = shaft_base * rng::uniform(eng, 0.78, 0.95);
        internal::fill_rect(image, arm_x0, arm_y0, arm_x1, arm_y1,
                            static_cast<float>(arm_v));
        // Insulator nubs at both ends, sitting on the arm's top edge.
        const int nub_r = std::max(2, arm_th / 3);
        const double nub_v = std::min(0.95, rng::uniform(eng, 0.68, 0.9) * illum);
        internal::fill_ellipse(image, arm_x0 + nub_r, arm_y0 - nub_r + 1.0, nub_r,
                               nub_r, static_cast<float>(nub_v));
        internal::fill_ellipse(image, arm_x1 - nub_r, arm_y0 - nub_r + 1.0, nub_r,
                               nub_r, static_cast<float>(nub_v));
        const double nub_top = arm_y0 - 2.0 * nub_r + 1.0;
        scene.annotations.push_back(
            {kCrossArm,
             geometry::BoundingBox{static_cast<double>(arm_x0), std::max(0.0, nub_top),
                                   static_cast<double>(arm_x1), static_cast<double>(arm_y1)}});
        min_x = std::min(min_x, static_cast<double>(arm_x0));
        max_x = std::max(max_x, static_cast<double>(arm_x1));
    }

    // 5. Cap at the apex (present on healthy poles): a small blob, flat or
    //    domed. Most caps are bright; a weathered minority fades towards the
    //    background intensity. Missing-cap poles sometimes keep a small dim
    //    stub of the broken cap.
    double pole_y_min = pole_top;
    if (params.cap_present) {
        const int cap_w = std::max(4, static_cast<int>(std::lround(
                                          params.cap_size_px * rng::uniform(eng, 0.85, 1.25))));
        const int cap_h = std::max(3, static_cast<int>(std::lround(
                                          cap_w * rng::uniform(eng, 0.55, 0.85))));
        const int cap_x0 = pole_cx - cap_w / 2 +
                           static_cast<int>(rng::uniform_int(eng, -2, 2));
        const int cap_y1 = pole_top;
        const int cap_y0 = cap_y1 - cap_h;
        const bool weathered = rng::uniform01(eng) < params.weathered_cap_fraction;
        const double cap_v = std::min(
            0.97, (weathered ? rng::uniform(eng, 0.40, 0.58)
                             : rng::uniform(eng, 0.62, 0.95)) *
                      illum);
        const bool domed = rng::uniform01(eng) < 0.5;
        if (domed) {
            internal::fill_ellipse(image, cap_x0 + cap_w / 2.0, cap_y1 - 0.5,
                                   cap_w / 2.0, cap_h, static_cast<float>(cap_v));
        } else {
            internal::fill_rect(image, cap_x0, cap_y0, cap_x0 + cap_w, cap_y1,
                                static_cast<float>(cap_v));
        }
        scene.annotations.push_back(
            {kPoleCap, geometry::BoundingBox{static_cast<double>(cap_x0),
                                             static_cast<double>(cap_y0),
                                             static_cast<double>(cap_x0 + cap_w),
                                             static_cast<double>(cap_y1)}});
        pole_y_min = cap_y0;
        min_x = std::min(min_x, static_cast<double>(cap_x0));
        max_x = std::max(max_x, static_cast<double>(cap_x0 + cap_w));
    } else if (rng::uniform01(eng) < params.stub_fraction) {
        const int stub_w = std::max(3, static_cast<int>(std::lround(
                                           params.cap_size_px * rng::uniform(eng, 0.35, 0.6))));
        const int stub_h = std::max(2, static_cast<int>(std::lround(
                                           stub_w * rng::uniform(eng, 0.4, 0.7))));
        const int stub_x0 = pole_cx - stub_w / 2 +
                            static_cast<int>(rng::uniform_int(eng, -2, 2));
        const double stub_v =
            std::min(0.97, rng::uniform(eng, 0.45, 0.62) * illum);
        internal::fill_rect(image, stub_x0, pole_top - stub_h, stub_x0 + stub_w,
                            pole_top, static_cast<float>(stub_v));
        // A stub is damage, not a cap: no pole_cap annotation, the condition
        // stays POSITIVE, and the pole box still starts at the shaft top.
    }
    scene.condition_label =
        params.cap_present ? ConditionLabel::Negative : ConditionLabel::Positive;

    const geometry::BoundingBox pole_box{
        std::max(0.0, min_x), std::max(0.0, pole_y_min),
        std::min(static_cast<double>(W), max_x), static_cast<double>(pole_bot)};
    scene.annotations.insert(scene.annotations.begin(), {kWholePole, pole_box});

    // 6. Clutter, kept out of the pole's bounding box: generic blobs plus
    //    short posts topped with cap-like blobs (the single-stage confusers).
    const geometry::BoundingBox exclusion{
        pole_box.x_min - 16, pole_box.y_min - 16, pole_box.x_max + 16,
        pole_box.y_max + 16, geometry::Frame::global()};
    const auto place = [&](int w, int h) -> std::pair<int, int> {
        for (int attempt = 0; attempt < 40; ++attempt) {
            const int x = static_cast<int>(rng::uniform_index(
                eng, static_cast<std::uint64_t>(std::max(1, W - w))));
            const int y = static_cast<int>(rng::uniform_index(
                eng, static_cast<std::uint64_t>(std::max(1, H - h))));
            const geometry::BoundingBox candidate{
                static_cast<double>(x), static_cast<double>(y),
                static_cast<double>(x + w), static_cast<double>(y + h),
                geometry::Frame::global()};
            if (geometry::intersection_area(candidate, exclusion) == 0.0)
                return {x, y};
        }
        return {-1, -1};
    };

    const int n_blobs = static_cast<int>(std::lround(params.clutter_density * 26));
    for (int i = 0; i < n_blobs; ++i) {
        const int w = static_cast<int>(rng::uniform_int(eng, 8, 64));
        const int h = static_cast<int>(rng::uniform_int(eng, 8, 64));
        const double v = rng::uniform(eng, 0.12, 0.88);
        const bool ellipse = rng::uniform01(eng) < 0.5;
        const auto [x, y] = place(w, h);
        if (x < 0) continue;
        if (ellipse)
            internal::fill_ellipse(image, x + w / 2.0, y + h / 2.0, w / 2.0, h / 2.0,
                                   static_cast<float>(v));
        else
            internal::fill_rect(image, x, y, x + w, y + h, static_cast<float>(v));
    }

    const int n_posts = static_cast<int>(std::lround(params.clutter_density * 12));
    for (int i = 0; i < n_posts; ++i) {
        const int post_w = std::max(3, static_cast<int>(std::lround(
                                           shaft_w * rng::uniform(eng, 0.55, 1.3))));
        const int post_h = static_cast<int>(rng::uniform_int(eng, 36, 120));
        const int blob_w = std::max(4, static_cast<int>(std::lround(
                                           params.cap_size_px * rng::uniform(eng, 0.85, 1.25))));
        const int blob_h = std::max(3, static_cast<int>(std::lround(
                                           blob_w * rng::uniform(eng, 0.55, 0.85))));
        const double blob_v = std::min(0.97, rng::uniform(eng, 0.60, 0.95) * illum);
        const double post_v = rng::uniform(eng, 0.26, 0.38) * illum;
        const bool domed = rng::uniform01(eng) < 0.5;
        const auto [x, y] = place(std::max(post_w, blob_w) + 4, post_h + blob_h + 4);
        if (x < 0) continue;
        const int post_cx = x + (std::max(post_w, blob_w) + 4) / 2;
        const int post_y0 = y + blob_h + 2;
        internal::fill_rect(image, post_cx - post_w / 2, post_y0,
                            post_cx - post_w / 2 + post_w, y + blob_h + 2 + post_h,
                            static_cast<float>(post_v));
        if (domed)
            internal::fill_ellipse(image, post_cx, post_y0 - 0.5, blob_w / 2.0,
                                   blob_h, static_cast<float>(blob_v));
        else
            internal::fill_rect(image, post_cx - blob_w / 2, post_y0 - blob_h,
                                post_cx - blob_w / 2 + blob_w, post_y0,
                                static_cast<float>(blob_v));
    }

    // 7. Sensor noise (bounded, so it never crosses the edge threshold on its
    //    own), then quantization to 8-bit levels.
    if (params.noise_sigma > 0.0) {
        for (float& v : image.pixels)
            v = static_cast<float>(v + params.noise_sigma * internal::bounded_noise(eng));
    }
    img::quantize_8bit(image);

    // Clip annotations to the extent (arm spans are already clamped, this is
    // the final guarantee of the inside-extent invariant).
    for (auto& ann : scene.annotations)
        ann.box = geometry::clip_box(ann.box, params.extent);
    return scene;
}

// ---------------------------------------------------------------------------
// Corpus generation: a manifest of scenes with controlled class imbalance.
// ---------------------------------------------------------------------------

/// What the positive/negative labels of a corpus refer to.
enum class TaskKind {
    CapMissing,  // positive = cap missing (condition label)
    PoleType,    // positive = non-wood pole type
};

struct ImbalanceConfig {
    std::size_t n_positive = 1;
    std::size_t ratio = 1;  // negatives per positive
    enum class Preset { None, PoleTypeTable3 } preset = Preset::None;
};

struct ManifestEntry {
    std::string source_id;
    std::string image_path;  // relative to the manifest directory; empty = virtual
    ConditionLabel condition = ConditionLabel::Negative;
    std::vector<Annotation> annotations;
    // In-memory provenance; not part of the manifest file format. Virtual
    // entries (no image_path) are regenerated on demand from these.
    std::uint64_t gen_seed = 0;
    PoleType pole_type = PoleType::Wood;
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::uint64_t seed = 0;
    std::string generator_version = kGeneratorVersion;
    TaskKind task = TaskKind::CapMissing;
    SceneParams params;  // shared scene recipe (virtual regeneration)
    std::filesystem::path base_dir;
};

/// The pole-type census the POLE_TYPE_TABLE3 preset reproduces, as relative
/// sampling weights. Wood is the majority (negative) class; every other type,
/// including Unknown, counts as positive.
inline const std::vector<std::pair<PoleType, std::uint32_t>>& pole_type_census() {
    static const std::vector<std::pair<PoleType, std::uint32_t>> census = {
        {PoleType::Aluminium, 1},  {PoleType::Concrete, 1027},
        {PoleType::Nailed, 2558},  {PoleType::Rebutted, 671},
        {PoleType::Steel, 10},     {PoleType::Unknown, 48},
        {PoleType::Wood, 99330},   {PoleType::WoodMultiTrans, 2},
        {PoleType::WoodX2PT, 2},
    };
    return census;
}

inline const char* pole_type_name(PoleType t) {
    switch (t) {
        case PoleType::Wood: return "wood";
        case PoleType::Concrete: return "concrete";
        case PoleType::Nailed: return "nailed";
        case PoleType::Rebutted: return "rebutted";
        case PoleType::Steel: return "steel";
        case PoleType::Aluminium: return "aluminium";
        case PoleType::Unknown: return "unknown";
        case PoleType::WoodMultiTrans: return "wood_multi_trans";
        case PoleType::WoodX2PT: return "wood_x2_pt";
    }
    return "?";
}

namespace internal {

inline PoleType sample_positive_pole_type(rng::Engine& eng) {
    std::uint64_t total = 0;
    for (const auto& [type, count] : pole_type_census())
        if (type != PoleType::Wood) total += count;
    std::uint64_t pick = rng::uniform_index(eng, total);
    for (const auto& [type, count] : pole_type_census()) {
        if (type == PoleType::Wood) continue;
        if (pick < count) return type;
        pick -= count;
    }
    return PoleType::Unknown;
}

inline std::string entry_source_id(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "scene-%06zu", index);
    return buf;
}

}  // namespace internal

/// The experiment label of an entry under the manifest's task.
inline bool is_positive(const DatasetManifest& manifest, const ManifestEntry& e) {
    if (manifest.task == TaskKind::PoleType) return e.pole_type != PoleType::Wood;
    return e.condition == ConditionLabel::Positive;
}

/// Generates a corpus of n_positive positives and n_positive*ratio negatives.
/// Entry i is generated with seed (corpus seed + i); positives come first.
/// With a non-empty out_dir the scene rasters are written as 8-bit PGM under
/// out_dir/images/ and entries reference them; otherwise entries stay virtual
/// and are re-rendered on demand.
inline DatasetManifest generate_corpus(const ImbalanceConfig& config,
                                       const SceneParams& params,
                                       std::uint64_t seed,
                                       const std::filesystem::path& out_dir = {}) {
    if (config.n_positive < 1) throw InvalidParams("n_positive must be >= 1");
    if (config.ratio < 1) throw InvalidParams("ratio must be >= 1");
    validate_scene_params(params);

    DatasetManifest manifest;
    manifest.seed = seed;
    manifest.params = params;
    manifest.task = config.preset == ImbalanceConfig::Preset::PoleTypeTable3
                        ? TaskKind::PoleType
                        : TaskKind::CapMissing;
    manifest.base_dir = out_dir;

    const std::size_t total = config.n_positive * (1 + config.ratio);
    const bool write = !out_dir.empty();
    if (write) {
        std::error_code ec;
        std::filesystem::create_directories(out_dir / "images", ec);
        if (ec) throw CorpusWriteError("cannot create " + (out_dir / "images").string());
    }

    // Pole types for preset corpora are a separate fixed-order stream so the
    // per-scene seeds stay exactly (seed + index).
    rng::Engine type_eng(rng::mix_seed(seed, 0x717e));
    for (std::size_t i = 0; i < total; ++i) {
        const bool positive = i < config.n_positive;
        SceneParams scene_params = params;
        if (manifest.task == TaskKind::PoleType) {
            scene_params.cap_present = true;
            scene_params.pole_type = positive
                                         ? internal::sample_positive_pole_type(type_eng)
                                         : PoleType::Wood;
        } else {
            scene_params.cap_present = !positive;
        }
        const std::uint64_t scene_seed = seed + i;
        const LabeledImage scene = generate_scene(scene_params, scene_seed);

        ManifestEntry entry;
        entry.source_id = internal::entry_source_id(i);
        entry.condition = scene.condition_label;
        entry.annotations = scene.annotations;
        entry.gen_seed = scene_seed;
        entry.pole_type = scene_params.pole_type;
        if (write) {
            entry.image_path = "images/" + entry.source_id + ".pgm";
            try {
                img::save_pgm(scene.pixels, out_dir / entry.image_path);
            } catch (const IoError& e) {
                throw CorpusWriteError(e.what());
            }
        }
        manifest.entries.push_back(std::move(entry));
    }
    return manifest;
}

/// Loads (or re-renders) the raster of one manifest entry.
inline img::Image load_entry_image(const DatasetManifest& manifest, std::size_t index) {
    const ManifestEntry& e = manifest.entries.at(index);
    if (!e.image_path.empty())
        return img::load_pgm(manifest.base_dir / e.image_path);
    SceneParams p = manifest.params;
    p.cap_present = e.condition == ConditionLabel::Negative;
    p.pole_type = e.pole_type;
    return generate_scene(p, e.gen_seed).pixels;
}

/// Full labeled scene for one entry.
inline LabeledImage load_entry(const DatasetManifest& manifest, std::size_t index) {
    const ManifestEntry& e = manifest.entries.at(index);
    LabeledImage scene;
    scene.pixels = load_entry_image(manifest, index);
    scene.annotations = e.annotations;
    scene.condition_label = e.condition;
    scene.source_id = e.source_id;
    scene.pole_type = e.pole_type;
    return scene;
}

// ---------------------------------------------------------------------------
// Split protocol: positives 80/20 into train/test (floor for train), the
// negatives halved into a resampling pool and the test negatives.
// ---------------------------------------------------------------------------

struct SplitScheme {
    double positive_train_fraction = 0.8;
    double negative_pool_fraction = 0.5;
};

struct SplitResult {
    DatasetManifest train;
    DatasetManifest test;
    DatasetManifest negative_pool;
};

inline SplitResult split_dataset(const DatasetManifest& manifest,
                                 const SplitScheme& scheme, std::uint64_t seed) {
    if (manifest.entries.empty()) throw InvalidParams("split_dataset: empty manifest");
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < manifest.entries.size(); ++i)
        (is_positive(manifest, manifest.entries[i]) ? pos : neg).push_back(i);
    if (pos.size() < 2)
        throw InsufficientPositives("split_dataset: need at least 2 positives, have " +
                                    std::to_string(pos.size()));

    rng::Engine eng(rng::mix_seed(seed, 0x59171));
    rng::shuffle(pos, eng);
    rng::shuffle(neg, eng);

    const std::size_t n_train_pos = static_cast<std::size_t>(
        std::floor(scheme.positive_train_fraction * static_cast<double>(pos.size())));
    const std::size_t n_pool_neg = static_cast<std::size_t>(
        std::floor(scheme.negative_pool_fraction * static_cast<double>(neg.size())));

    const auto subset = [&manifest](const std::vector<std::size_t>& idx) {
        DatasetManifest m;
        m.seed = manifest.seed;
        m.generator_version = manifest.generator_version;
        m.task = manifest.task;
        m.params = manifest.params;
        m.base_dir = manifest.base_dir;
        for (std::size_t i : idx) m.entries.push_back(manifest.entries[i]);
        return m;
    };

    SplitResult result;
    result.train = subset({pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(n_train_pos)});
    std::vector<std::size_t> test_idx(pos.begin() + static_cast<std::ptrdiff_t>(n_train_pos), pos.end());
    test_idx.insert(test_idx.end(), neg.begin() + static_cast<std::ptrdiff_t>(n_pool_neg), neg.end());
    result.test = subset(test_idx);
    result.negative_pool = subset({neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(n_pool_neg)});
    return result;
}

// ---------------------------------------------------------------------------
// Manifest file format: one header line, then one tab-separated record per
// entry: source_id, relative image path ('-' when virtual), condition label,
// and ';'-separated annotations 'class,x_min,y_min,x_max,y_max'. Byte-exact
// across runs for the same inputs.
// ---------------------------------------------------------------------------

inline std::string serialize_manifest(const DatasetManifest& manifest) {
    std::string out = "# poleinspect-manifest v1 seed=" + std::to_string(manifest.seed) +
                      " generator=" + manifest.generator_version + "\n";
    for (const auto& e : manifest.entries) {
        out += e.source_id;
        out += '\t';
        out += e.image_path.empty() ? "-" : e.image_path;
        out += '\t';
        out += e.condition == ConditionLabel::Positive ? "POSITIVE" : "NEGATIVE";
        out += '\t';
        if (e.annotations.empty()) {
            out += '-';
        } else {
            for (std::size_t a = 0; a < e.annotations.size(); ++a) {
                if (a) out += ';';
                const auto& ann = e.annotations[a];
                out += ann.class_name;
                out += ',';
                out += textio::format_double(ann.box.x_min);
                out += ',';
                out += textio::format_double(ann.box.y_min);
                out += ',';
                out += textio::format_double(ann.box.x_max);
                out += ',';
                out += textio::format_double(ann.box.y_max);
            }
        }
        out += '\n';
    }
    return out;
}

inline std::string manifest_digest(const DatasetManifest& manifest) {
    return digest::hex_digest(serialize_manifest(manifest));
}

inline void save_manifest(const DatasetManifest& manifest,
                          const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw CorpusWriteError("cannot open manifest for writing: " + path.string());
    f << serialize_manifest(manifest);
    if (!f) throw CorpusWriteError("manifest write failed: " + path.string());
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open manifest: " + path.string());
    DatasetManifest manifest;
    manifest.base_dir = path.parent_path();
    std::string line;
    if (!std::getline(f, line) || line.rfind("# poleinspect-manifest v1 ", 0) != 0)
        throw FormatVersionError("not a poleinspect manifest: " + path.string());
    for (const auto token : textio::split(std::string_view(line).substr(2), ' ')) {
        if (token.rfind("seed=", 0) == 0) manifest.seed = textio::parse_u64(token.substr(5));
        if (token.rfind("generator=", 0) == 0)
            manifest.generator_version = std::string(token.substr(10));
    }
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto fields = textio::split(line, '\t');
        if (fields.size() != 4)
            throw FormatVersionError("malformed manifest record: " + line);
        ManifestEntry e;
        e.source_id = std::string(fields[0]);
        e.image_path = fields[1] == "-" ? std::string() : std::string(fields[1]);
        if (fields[2] == "POSITIVE")
            e.condition = ConditionLabel::Positive;
        else if (fields[2] == "NEGATIVE")
            e.condition = ConditionLabel::Negative;
        else
            throw FormatVersionError("bad condition label: " + std::string(fields[2]));
        if (fields[3] != "-") {
            for (const auto ann_str : textio::split(fields[3], ';')) {
                const auto parts = textio::split(ann_str, ',');
                if (parts.size() != 5)
                    throw FormatVersionError("bad annotation: " + std::string(ann_str));
                Annotation ann;
                ann.class_name = std::string(parts[0]);
                ann.box = geometry::BoundingBox{
                    textio::parse_double(parts[1]), textio::parse_double(parts[2]),
                    textio::parse_double(parts[3]), textio::parse_double(parts[4])};
                e.annotations.push_back(std::move(ann));
            }
        }
        manifest.entries.push_back(std::move(e));
    }
    return manifest;
}

// ---------------------------------------------------------------------------
// Region crops for condition classification. The cap region is the apex of
// the pole; for healthy poles it holds the bright cap, for defective ones
// just the bare shaft end.
// ---------------------------------------------------------------------------

/// Square crop of side `side` centred on the pole apex, shifted by (dx, dy)
/// and clipped to the raster.
inline img::Image cap_region_crop(const LabeledImage& scene, int side, int dx = 0,
                                  int dy = 0) {
    const Annotation* pole = nullptr;
    for (const auto& ann : scene.annotations)
        if (ann.class_name == kWholePole) pole = &ann;
    if (!pole) throw InvalidParams("cap_region_crop: scene has no whole_pole annotation");
    const int cx = static_cast<int>(std::lround((pole->box.x_min + pole->box.x_max) / 2.0)) + dx;
    const int cy = static_cast<int>(std::lround(pole->box.y_min)) + dy;
    const int half = side / 2;
    int x0 = std::clamp(cx - half, 0, std::max(0, scene.pixels.width - side));
    int y0 = std::clamp(cy - half, 0, std::max(0, scene.pixels.height - side));
    return img::crop(scene.pixels, x0, y0, std::min(side, scene.pixels.width),
                     std::min(side, scene.pixels.height));
}

/// Square crop of the shaft midsection (pole-type classification).
inline img::Image shaft_region_crop(const LabeledImage& scene, int side, int dx = 0,
                                    int dy = 0) {
    const Annotation* pole = nullptr;
    for (const auto& ann : scene.annotations)
        if (ann.class_name == kWholePole) pole = &ann;
    if (!pole) throw InvalidParams("shaft_region_crop: scene has no whole_pole annotation");
    const int cx = static_cast<int>(std::lround((pole->box.x_min + pole->box.x_max) / 2.0)) + dx;
    const int cy = static_cast<int>(std::lround((pole->box.y_min + 2.0 * pole->box.y_max) / 3.0)) + dy;
    int x0 = std::clamp(cx - side / 2, 0, std::max(0, scene.pixels.width - side));
    int y0 = std::clamp(cy - side / 2, 0, std::max(0, scene.pixels.height - side));
    return img::crop(scene.pixels, x0, y0, std::min(side, scene.pixels.width),
                     std::min(side, scene.pixels.height));
}

}  // namespace poleinspect::corpus
