#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "poleinspect/artifact_io.hpp"
#include "poleinspect/corpus.hpp"
#include "poleinspect/detector.hpp"
#include "poleinspect/errors.hpp"
#include "poleinspect/metrics.hpp"
#include "poleinspect/trainer.hpp"
#include "poleinspect/version.hpp"

// End-to-end orchestration: generate scenes, split, train the detectors,
// compare single-stage against cascade detection, crop cap regions, run the
// imbalance experiments, and persist every artifact with a digest. One config
// file describes one full run; all seeds are explicit (a config without a
// seed is rejected, silent nondeterminism being the main reproducibility
// hazard).

namespace poleinspect::pipeline {

// ---------------------------------------------------------------------------
// Configuration.
// ---------------------------------------------------------------------------

struct CorpusSpec {
    std::size_t n_positive = 1;
    std::size_t ratio = 1;
    std::uint64_t seed = 0;
};

struct PipelineConfig {
    std::filesystem::path output_dir;

    corpus::SceneParams detection_scene;
    CorpusSpec detection_train;
    CorpusSpec detection_test;
    std::uint64_t detector_seed = 0;
    detector::BackendSpec detector_spec;        // FullImage regime
    detector::CascadeConfig cascade;
    double eval_threshold = 0.05;

    corpus::SceneParams classification_scene;
    CorpusSpec classification_corpus;
    corpus::TaskKind classification_task = corpus::TaskKind::CapMissing;
    std::uint64_t split_seed = 0;
    int crop_side = 36;
    std::string crop_source = "cascade";  // "cascade" | "apex"

    trainer::ResamplingConfig resampling;

    std::vector<std::size_t> reweight_ratios{1, 3, 6, 12};
    std::size_t reweight_n_positive = 88;
    int reweight_epochs = 120;
    std::uint64_t reweight_seed = 0;

    std::string config_digest;  // digest of the raw config text
};

namespace internal {

template <typename T>
T require(const nlohmann::json& j, const std::string& key, const char* section) {
    if (!j.contains(key))
        throw InvalidConfig(std::string("config: missing required key '") + key +
                            "' in section '" + section + "'");
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw InvalidConfig(std::string("config: bad value for '") + key + "' in '" +
                            section + "': " + e.what());
    }
}

template <typename T>
T optional_of(const nlohmann::json& j, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    return j.at(key).get<T>();
}

inline corpus::SceneParams parse_scene(const nlohmann::json& j,
                                       const corpus::SceneParams& base,
                                       const char* section) {
    (void)section;
    corpus::SceneParams p = base;
    p.extent.width = optional_of(j, "width", p.extent.width);
    p.extent.height = optional_of(j, "height", p.extent.height);
    p.cap_size_px = optional_of(j, "cap_size_px", p.cap_size_px);
    p.pole_width_fraction_min =
        optional_of(j, "pole_width_fraction_min", p.pole_width_fraction_min);
    p.pole_width_fraction_max =
        optional_of(j, "pole_width_fraction_max", p.pole_width_fraction_max);
    p.clutter_density = optional_of(j, "clutter_density", p.clutter_density);
    p.noise_sigma = optional_of(j, "noise_sigma", p.noise_sigma);
    return p;
}

inline CorpusSpec parse_corpus_spec(const nlohmann::json& j, const char* section) {
    CorpusSpec spec;
    spec.n_positive = require<std::size_t>(j, "n_positive", section);
    spec.ratio = require<std::size_t>(j, "ratio", section);
    spec.seed = require<std::uint64_t>(j, "seed", section);
    return spec;
}

}  // namespace internal

inline PipelineConfig parse_config(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidConfig(std::string("config: not valid JSON: ") + e.what());
    }

    PipelineConfig config;
    config.config_digest = digest::hex_digest(text);
    config.output_dir = internal::optional_of<std::string>(j, "output_dir", "");

    if (j.contains("scene"))
        config.detection_scene =
            internal::parse_scene(j.at("scene"), corpus::SceneParams{}, "scene");

    const auto& det = j.contains("detection") ? j.at("detection") : nlohmann::json::object();
    if (!det.is_object() || det.empty())
        throw InvalidConfig("config: missing 'detection' section");
    config.detection_train =
        internal::parse_corpus_spec(det.at("train"), "detection.train");
    config.detection_test =
        internal::parse_corpus_spec(det.at("test"), "detection.test");
    const auto& dtrainer = det.at("trainer");
    config.detector_seed =
        internal::require<std::uint64_t>(dtrainer, "seed", "detection.trainer");
    config.detector_spec.epochs =
        internal::optional_of(dtrainer, "epochs", config.detector_spec.epochs);
    config.detector_spec.mining_rounds = internal::optional_of(
        dtrainer, "mining_rounds", config.detector_spec.mining_rounds);
    config.detector_spec.learning_rate = internal::optional_of(
        dtrainer, "learning_rate", config.detector_spec.learning_rate);
    if (det.contains("cascade")) {
        const auto& c = det.at("cascade");
        config.cascade.stage1_threshold =
            internal::optional_of(c, "stage1_threshold", config.cascade.stage1_threshold);
        config.cascade.stage2_threshold =
            internal::optional_of(c, "stage2_threshold", config.cascade.stage2_threshold);
        config.cascade.margin_fraction =
            internal::optional_of(c, "margin_fraction", config.cascade.margin_fraction);
        config.cascade.top_k = internal::optional_of(c, "top_k", config.cascade.top_k);
        const std::string crit =
            internal::optional_of<std::string>(c, "half_criterion", "entropy");
        if (crit == "entropy")
            config.cascade.half_criterion = detector::HalfCriterion::Entropy;
        else if (crit == "edge_density")
            config.cascade.half_criterion = detector::HalfCriterion::EdgeDensity;
        else
            throw InvalidConfig("config: half_criterion must be 'entropy' or 'edge_density'");
    }
    config.eval_threshold = internal::optional_of(det, "eval_threshold", 0.05);

    if (!j.contains("classification"))
        throw InvalidConfig("config: missing 'classification' section");
    const auto& cls = j.at("classification");
    corpus::SceneParams cls_base;
    cls_base.extent = {384, 576};
    cls_base.clutter_density = 0.4;
    config.classification_scene =
        cls.contains("scene")
            ? internal::parse_scene(cls.at("scene"), cls_base, "classification.scene")
            : cls_base;
    config.classification_corpus =
        internal::parse_corpus_spec(cls.at("corpus"), "classification.corpus");
    const std::string task =
        internal::optional_of<std::string>(cls, "task", "cap_missing");
    if (task == "cap_missing")
        config.classification_task = corpus::TaskKind::CapMissing;
    else if (task == "pole_type")
        config.classification_task = corpus::TaskKind::PoleType;
    else
        throw InvalidConfig("config: task must be 'cap_missing' or 'pole_type'");
    config.split_seed =
        internal::require<std::uint64_t>(cls, "split_seed", "classification");
    config.crop_side = internal::optional_of(cls, "crop_side", 36);
    config.crop_source =
        internal::optional_of<std::string>(cls, "crop_source", "cascade");
    if (config.crop_source != "cascade" && config.crop_source != "apex")
        throw InvalidConfig("config: crop_source must be 'cascade' or 'apex'");

    const auto& res = cls.at("resampling");
    config.resampling.loops = internal::require<int>(res, "loops", "resampling");
    config.resampling.epochs_per_loop =
        internal::require<int>(res, "epochs_per_loop", "resampling");
    config.resampling.seed =
        internal::require<std::uint64_t>(res, "seed", "resampling");
    config.resampling.warm_start = internal::optional_of(res, "warm_start", true);

    const auto& rw = cls.at("reweight");
    config.reweight_ratios =
        internal::optional_of(rw, "ratios", std::vector<std::size_t>{1, 3, 6, 12});
    config.reweight_n_positive =
        internal::require<std::size_t>(rw, "n_positive", "reweight");
    config.reweight_epochs = internal::require<int>(rw, "epochs", "reweight");
    config.reweight_seed = internal::require<std::uint64_t>(rw, "seed", "reweight");
    return config;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open config: " + path.string());
    return parse_config(std::string(std::istreambuf_iterator<char>(f), {}));
}

// ---------------------------------------------------------------------------
// Classification samples from a manifest.
// ---------------------------------------------------------------------------

/// Outcome of the cascade crop step for one entry.
enum class CropOutcome { Detected, ApexFallback, CascadeMiss };

inline const char* crop_outcome_name(CropOutcome o) {
    switch (o) {
        case CropOutcome::Detected: return "DETECTED";
        case CropOutcome::ApexFallback: return "APEX_FALLBACK";
        case CropOutcome::CascadeMiss: return "CASCADE_MISS";
    }
    return "?";
}

struct CapCrop {
    std::string source_id;
    img::Image raster;  // empty on CascadeMiss
    metrics::BinaryLabel label = metrics::BinaryLabel::Negative;
    CropOutcome outcome = CropOutcome::Detected;
};

namespace internal {

inline trainer::Sample to_sample(const CapCrop& crop) {
    trainer::Sample s;
    s.features = trainer::extract_features(crop.raster);
    s.label = crop.label;
    s.source_id = crop.source_id;
    return s;
}

inline metrics::BinaryLabel entry_label(const corpus::DatasetManifest& manifest,
                                        const corpus::ManifestEntry& entry) {
    return corpus::is_positive(manifest, entry) ? metrics::BinaryLabel::Positive
                                                : metrics::BinaryLabel::Negative;
}

}  // namespace internal

/// Ground-truth-anchored region crops: the cap region straight from the
/// annotated pole geometry (or the shaft midsection for the pole-type task),
/// with a small deterministic placement jitter per entry. This is the fast
/// route used by the trainer-side experiments; the cascade route below is the
/// integrated one.
inline std::vector<trainer::Sample> apex_samples(const corpus::DatasetManifest& manifest,
                                                 int crop_side, std::uint64_t jitter_seed) {
    std::vector<trainer::Sample> samples;
    samples.reserve(manifest.entries.size());
    for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
        rng::Engine eng(rng::mix_seed(jitter_seed, i));
        const int dx = static_cast<int>(rng::uniform_int(eng, -3, 3));
        const int dy = static_cast<int>(rng::uniform_int(eng, -3, 3));
        const auto scene = corpus::load_entry(manifest, i);
        const img::Image crop =
            manifest.task == corpus::TaskKind::PoleType
                ? corpus::shaft_region_crop(scene, crop_side, dx, dy)
                : corpus::cap_region_crop(scene, crop_side, dx, dy);
        trainer::Sample s;
        s.features = trainer::extract_features(crop);
        s.label = internal::entry_label(manifest, manifest.entries[i]);
        s.source_id = manifest.entries[i].source_id;
        samples.push_back(std::move(s));
    }
    return samples;
}

/// Cascade-driven cap crops: zoom in on each entry, crop a fixed-size square
/// around the top stage-2 detection (or around the apex of the stage-1 box
/// when stage 2 stays silent). Entries the cascade misses entirely carry no
/// raster and are counted separately, never guessed at.
inline std::vector<CapCrop> cascade_cap_crops(const corpus::DatasetManifest& manifest,
                                              const detector::DetectorModel& stage1,
                                              const detector::DetectorModel& stage2,
                                              const detector::CascadeConfig& cascade,
                                              int crop_side) {
    std::vector<CapCrop> crops;
    crops.reserve(manifest.entries.size());
    int fallback_size = 0;
    for (const auto& [w, h] : stage2.templates) fallback_size = std::max({fallback_size, w, h});

    for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
        const img::Image image = corpus::load_entry_image(manifest, i);
        CapCrop crop;
        crop.source_id = manifest.entries[i].source_id;
        crop.label = internal::entry_label(manifest, manifest.entries[i]);

        const auto result = detector::zoom_in_detect(stage1, stage2, image, cascade);
        double cx = 0.0, cy = 0.0;
        if (result.cascade_miss) {
            crop.outcome = CropOutcome::CascadeMiss;
            crops.push_back(std::move(crop));
            continue;
        }
        if (!result.detections.empty()) {
            crop.outcome = CropOutcome::Detected;
            const auto& b = result.detections.front().box;
            cx = (b.x_min + b.x_max) / 2.0;
            cy = (b.y_min + b.y_max) / 2.0;
        } else {
            crop.outcome = CropOutcome::ApexFallback;
            const auto& pole = result.regions.front().stage1.box;
            cx = (pole.x_min + pole.x_max) / 2.0;
            cy = pole.y_min + cascade.margin_fraction * pole.height() + fallback_size;
        }
        const int x0 = std::clamp(static_cast<int>(std::lround(cx)) - crop_side / 2, 0,
                                  std::max(0, image.width - crop_side));
        const int y0 = std::clamp(static_cast<int>(std::lround(cy)) - crop_side / 2, 0,
                                  std::max(0, image.height - crop_side));
        crop.raster = img::crop(image, x0, y0, std::min(crop_side, image.width),
                                std::min(crop_side, image.height));
        crops.push_back(std::move(crop));
    }
    return crops;
}

// ---------------------------------------------------------------------------
// Reweighting sweep (ratios 1/3/6/12 by default): at each ratio, train the
// plain scorer and the inverse-frequency reweighted scorer on the same
// imbalanced sample and compare AUC on a held-out set sized at 20% of the
// training set with the same class ratio.
// ---------------------------------------------------------------------------

struct SweepPoint {
    std::size_t ratio = 1;
    std::size_t n_train_pos = 0;
    std::size_t n_train_neg = 0;
    double auc_baseline = 0.0;
    double auc_reweighted = 0.0;
};

inline std::vector<SweepPoint> reweight_sweep(const std::vector<trainer::Sample>& samples,
                                              const std::vector<std::size_t>& ratios,
                                              std::size_t n_positive, int epochs,
                                              std::uint64_t seed) {
    std::vector<std::size_t> pos_idx, neg_idx;
    for (std::size_t i = 0; i < samples.size(); ++i)
        (samples[i].label == metrics::BinaryLabel::Positive ? pos_idx : neg_idx).push_back(i);

    const std::size_t test_pos = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(0.2 * static_cast<double>(n_positive))));

    std::vector<SweepPoint> sweep;
    for (const std::size_t ratio : ratios) {
        if (ratio < 1) throw InvalidParams("reweight_sweep: ratio must be >= 1");
        const std::size_t need_pos = n_positive + test_pos;
        const std::size_t need_neg = ratio * need_pos;
        if (pos_idx.size() < need_pos || neg_idx.size() < need_neg)
            throw PoolExhausted("reweight_sweep: sample set too small for ratio " +
                                std::to_string(ratio));

        rng::Engine eng(rng::mix_seed(seed, 0x59ee9 ^ ratio));
        auto pos = pos_idx, neg = neg_idx;
        rng::shuffle(pos, eng);
        rng::shuffle(neg, eng);

        std::vector<trainer::Sample> train, test;
        for (std::size_t i = 0; i < n_positive; ++i) train.push_back(samples[pos[i]]);
        for (std::size_t i = 0; i < ratio * n_positive; ++i) train.push_back(samples[neg[i]]);
        for (std::size_t i = n_positive; i < need_pos; ++i) test.push_back(samples[pos[i]]);
        for (std::size_t i = ratio * n_positive; i < need_neg; ++i)
            test.push_back(samples[neg[i]]);

        const auto evaluate = [&test](const trainer::ClassifierModel& model) {
            std::vector<double> scores;
            std::vector<metrics::BinaryLabel> labels;
            for (const auto& s : test) {
                scores.push_back(trainer::score(model, s));
                labels.push_back(s.label);
            }
            return metrics::auc(scores, labels);
        };

        SweepPoint point;
        point.ratio = ratio;
        point.n_train_pos = n_positive;
        point.n_train_neg = ratio * n_positive;
        const auto baseline =
            trainer::train_classifier(train, trainer::ClassWeights{1.0, 1.0}, epochs, seed);
        point.auc_baseline = evaluate(baseline);
        const auto weights = trainer::class_weights(
            static_cast<std::int64_t>(n_positive),
            static_cast<std::int64_t>(ratio * n_positive));
        const auto reweighted = trainer::train_classifier(train, weights, epochs, seed);
        point.auc_reweighted = evaluate(reweighted);
        sweep.push_back(point);
    }
    return sweep;
}

inline std::string sweep_csv(const std::vector<SweepPoint>& sweep) {
    std::string out = "ratio,n_train_pos,n_train_neg,auc_baseline,auc_reweighted\n";
    for (const auto& p : sweep)
        out += std::to_string(p.ratio) + "," + std::to_string(p.n_train_pos) + "," +
               std::to_string(p.n_train_neg) + "," +
               textio::format_double(p.auc_baseline) + "," +
               textio::format_double(p.auc_reweighted) + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Report emission.
// ---------------------------------------------------------------------------

enum class ReportFormat { Csv, Text };

inline std::string render_report_csv(const metrics::EvaluationReport& report) {
    std::string out = "# poleinspect-report v1\n";
    for (const auto& [k, v] : report.metadata) out += "# " + k + "=" + v + "\n";
    out += "section,metric,iou_threshold,value\n";
    for (const auto& [name, eval] : report.detection) {
        for (const auto& [iou, ap] : eval.ap_by_iou)
            out += name + ",ap," + textio::format_double(iou) + "," +
                   textio::format_double(ap) + "\n";
        out += name + ",ap50,n/a," + textio::format_double(eval.ap50) + "\n";
        out += name + ",map_coco,n/a," + textio::format_double(eval.map_coco) + "\n";
    }
    if (report.auc)
        out += "classification,auc,n/a," + textio::format_double(*report.auc) + "\n";
    for (const auto& h : report.auc_history)
        out += "resampling,auc@loop" + std::to_string(h.loop_index) + ",n/a," +
               textio::format_double(h.auc) + "\n";
    return out;
}

inline std::string render_report_text(const metrics::EvaluationReport& report) {
    std::string out = "poleinspect evaluation report\n";
    out += "=============================\n";
    for (const auto& [k, v] : report.metadata) out += k + ": " + v + "\n";
    if (!report.detection.empty()) {
        out += "\ndetection (pole_cap)\n";
        out += "  method          ap50    map_coco\n";
        for (const auto& [name, eval] : report.detection) {
            char line[96];
            std::snprintf(line, sizeof(line), "  %-14s %.4f  %.4f\n", name.c_str(),
                          eval.ap50, eval.map_coco);
            out += line;
        }
    }
    if (report.auc) {
        char line[64];
        std::snprintf(line, sizeof(line), "\nclassification AUC: %.4f\n", *report.auc);
        out += line;
    }
    if (!report.auc_history.empty()) {
        out += "\nresampling AUC by loop\n";
        for (const auto& h : report.auc_history) {
            char line[96];
            std::snprintf(line, sizeof(line), "  loop %d (%zu pos / %zu neg): %.4f\n",
                          h.loop_index, h.n_train_pos, h.n_train_neg, h.auc);
            out += line;
        }
    }
    return out;
}

inline void emit_report(const metrics::EvaluationReport& report, ReportFormat format,
                        const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("emit_report: cannot open " + path.string());
    f << (format == ReportFormat::Csv ? render_report_csv(report)
                                      : render_report_text(report));
    if (!f) throw IoError("emit_report: write failed " + path.string());
}

/// ROC points as a plottable CSV sidecar.
inline void emit_roc_csv(const metrics::EvaluationReport& report,
                         const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("emit_roc_csv: cannot open " + path.string());
    f << "threshold,false_positive_rate,true_positive_rate\n";
    for (const auto& p : report.roc)
        f << textio::format_double(p.threshold) << ","
          << textio::format_double(p.false_positive_rate) << ","
          << textio::format_double(p.true_positive_rate) << "\n";
}

// ---------------------------------------------------------------------------
// Run manifest.
// ---------------------------------------------------------------------------

struct RunManifest {
    std::string config_digest;
    std::string tool_version = kToolVersion;
    std::vector<std::pair<std::string, std::string>> artifacts;  // name -> path
    std::vector<std::pair<std::string, std::string>> digests;    // name -> digest
    std::vector<std::pair<std::string, double>> stage_ms;
    std::vector<std::string> completed_stages;
    std::string failed_stage;  // empty on success
};

inline std::string serialize_run_manifest(const RunManifest& m) {
    std::string out;
    out += "tool_version " + m.tool_version + "\n";
    out += "config_digest " + m.config_digest + "\n";
    for (const auto& s : m.completed_stages) out += "stage_done " + s + "\n";
    if (!m.failed_stage.empty()) out += "stage_failed " + m.failed_stage + "\n";
    for (const auto& [name, path] : m.artifacts) out += "artifact " + name + " " + path + "\n";
    for (const auto& [name, d] : m.digests) out += "digest " + name + " " + d + "\n";
    for (const auto& [name, ms] : m.stage_ms)
        out += "stage_ms " + name + " " + textio::format_double(ms) + "\n";
    return out;
}

inline void save_run_manifest(const RunManifest& m, const std::filesystem::path& path) {
    artifact::save(path, "run-manifest", serialize_run_manifest(m));
}

// ---------------------------------------------------------------------------
// The full pipeline.
// ---------------------------------------------------------------------------

namespace internal {

class StageClock {
public:
    explicit StageClock(RunManifest& manifest) : manifest_(manifest) {}

    template <typename F>
    void run(const std::string& stage, F&& body) {
        const auto start = std::chrono::steady_clock::now();
        try {
            body();
        } catch (...) {
            manifest_.failed_stage = stage;
            throw;
        }
        const auto stop = std::chrono::steady_clock::now();
        manifest_.stage_ms.emplace_back(
            stage, std::chrono::duration<double, std::milli>(stop - start).count());
        manifest_.completed_stages.push_back(stage);
    }

private:
    RunManifest& manifest_;
};

}  // namespace internal

/// Runs the whole pipeline described by the config under out_dir (which
/// overrides config.output_dir when non-empty). Deterministic given the
/// config's seeds apart from recorded stage timings; re-running overwrites
/// the same artifacts with identical bytes. On a stage failure the partial
/// run manifest (completed stages plus the failed stage) is still written.
inline RunManifest run_pipeline(const PipelineConfig& config,
                                std::filesystem::path out_dir = {}) {
    if (out_dir.empty()) out_dir = config.output_dir;
    if (out_dir.empty()) throw InvalidConfig("run_pipeline: no output directory");
    std::filesystem::create_directories(out_dir);

    RunManifest manifest;
    manifest.config_digest = config.config_digest;
    internal::StageClock clock(manifest);

    const auto add_artifact = [&manifest, &out_dir](const std::string& name,
                                                    const std::filesystem::path& path,
                                                    const std::string& digest_hex) {
        manifest.artifacts.emplace_back(name,
                                        std::filesystem::relative(path, out_dir).string());
        manifest.digests.emplace_back(name, digest_hex);
    };

    try {
        // -- corpora ---------------------------------------------------------
        corpus::DatasetManifest det_train, det_test, cls_corpus;
        clock.run("generate", [&] {
            auto scene = config.detection_scene;
            scene.cap_present = true;
            det_train = corpus::generate_corpus(
                {config.detection_train.n_positive, config.detection_train.ratio},
                scene, config.detection_train.seed, out_dir / "detection_train");
            det_test = corpus::generate_corpus(
                {config.detection_test.n_positive, config.detection_test.ratio}, scene,
                config.detection_test.seed, out_dir / "detection_test");
            corpus::ImbalanceConfig cls_cfg{config.classification_corpus.n_positive,
                                            config.classification_corpus.ratio};
            if (config.classification_task == corpus::TaskKind::PoleType)
                cls_cfg.preset = corpus::ImbalanceConfig::Preset::PoleTypeTable3;
            cls_corpus = corpus::generate_corpus(cls_cfg, config.classification_scene,
                                                 config.classification_corpus.seed,
                                                 out_dir / "classification");
            // Manifests live inside their corpus directories so the relative
            // image paths resolve after a reload.
            corpus::save_manifest(det_train,
                                  out_dir / "detection_train" / "corpus.manifest");
            corpus::save_manifest(det_test,
                                  out_dir / "detection_test" / "corpus.manifest");
            corpus::save_manifest(cls_corpus,
                                  out_dir / "classification" / "corpus.manifest");
            add_artifact("detection_train_manifest",
                         out_dir / "detection_train" / "corpus.manifest",
                         artifact::file_digest(out_dir / "detection_train" / "corpus.manifest"));
            add_artifact("detection_test_manifest",
                         out_dir / "detection_test" / "corpus.manifest",
                         artifact::file_digest(out_dir / "detection_test" / "corpus.manifest"));
            add_artifact("classification_manifest",
                         out_dir / "classification" / "corpus.manifest",
                         artifact::file_digest(out_dir / "classification" / "corpus.manifest"));
        });

        // -- detectors -------------------------------------------------------
        detector::DetectorModel stage1, stage2, single;
        clock.run("train-detector", [&] {
            auto full_spec = config.detector_spec;
            full_spec.train_region = detector::BackendSpec::TrainRegion::FullImage;
            auto crop_spec = config.detector_spec;
            crop_spec.train_region = detector::BackendSpec::TrainRegion::PoleCropHalf;
            crop_spec.half_criterion = config.cascade.half_criterion;
            crop_spec.crop_margin_fraction = config.cascade.margin_fraction;

            stage1 = detector::train_detector(det_train, corpus::kWholePole, full_spec,
                                              config.detector_seed);
            stage2 = detector::train_detector(det_train, corpus::kPoleCap, crop_spec,
                                              config.detector_seed + 1);
            single = detector::train_detector(det_train, corpus::kPoleCap, full_spec,
                                              config.detector_seed + 2);
            add_artifact("stage1_model", out_dir / "stage1.model",
                         detector::save_detector(stage1, out_dir / "stage1.model"));
            add_artifact("stage2_model", out_dir / "stage2.model",
                         detector::save_detector(stage2, out_dir / "stage2.model"));
            add_artifact("single_stage_model", out_dir / "single_stage.model",
                         detector::save_detector(single, out_dir / "single_stage.model"));
        });

        // -- detection evaluation ---------------------------------------------
        metrics::EvaluationReport detection_report;
        clock.run("evaluate-detection", [&] {
            std::vector<std::vector<detector::Detection>> single_dets, cascade_dets;
            std::vector<std::vector<geometry::BoundingBox>> gt;
            int misses = 0;
            for (std::size_t i = 0; i < det_test.entries.size(); ++i) {
                const img::Image image = corpus::load_entry_image(det_test, i);
                gt.emplace_back();
                for (const auto& ann : det_test.entries[i].annotations)
                    if (ann.class_name == corpus::kPoleCap) gt.back().push_back(ann.box);
                single_dets.push_back(
                    detector::detect(single, image, config.eval_threshold));
                auto eval_cascade = config.cascade;
                eval_cascade.stage2_threshold = config.eval_threshold;
                const auto result =
                    detector::zoom_in_detect(stage1, stage2, image, eval_cascade);
                if (result.cascade_miss) ++misses;
                cascade_dets.push_back(result.detections);
            }
            detection_report.detection["single_stage"] =
                metrics::evaluate_detection(single_dets, gt);
            detection_report.detection["cascade"] =
                metrics::evaluate_detection(cascade_dets, gt);
            detection_report.metadata = {
                {"config_digest", config.config_digest},
                {"detection_train_digest", corpus::manifest_digest(det_train)},
                {"detection_test_digest", corpus::manifest_digest(det_test)},
                {"cascade_misses", std::to_string(misses)},
                {"test_scenes", std::to_string(det_test.entries.size())},
            };
            emit_report(detection_report, ReportFormat::Csv,
                        out_dir / "detection_report.csv");
            emit_report(detection_report, ReportFormat::Text,
                        out_dir / "detection_report.txt");
            add_artifact("detection_report_csv", out_dir / "detection_report.csv",
                         artifact::file_digest(out_dir / "detection_report.csv"));
            add_artifact("detection_report_txt", out_dir / "detection_report.txt",
                         artifact::file_digest(out_dir / "detection_report.txt"));
        });

        // -- cap crops ---------------------------------------------------------
        std::vector<trainer::Sample> cls_samples;
        std::vector<std::pair<std::string, CropOutcome>> crop_outcomes;
        clock.run("crop-caps", [&] {
            if (config.crop_source == "apex") {
                cls_samples =
                    apex_samples(cls_corpus, config.crop_side, config.split_seed);
                return;
            }
            const auto crops = cascade_cap_crops(cls_corpus, stage1, stage2,
                                                 config.cascade, config.crop_side);
            std::filesystem::create_directories(out_dir / "crops");
            std::string crops_manifest = "# poleinspect-crops v1\n";
            for (const auto& crop : crops) {
                crop_outcomes.emplace_back(crop.source_id, crop.outcome);
                std::string path = "-";
                if (crop.outcome != CropOutcome::CascadeMiss) {
                    path = "crops/" + crop.source_id + ".pgm";
                    img::save_pgm(crop.raster, out_dir / path);
                    cls_samples.push_back(internal::to_sample(crop));
                }
                crops_manifest += crop.source_id + "\t" + path + "\t" +
                                  (crop.label == metrics::BinaryLabel::Positive
                                       ? "POSITIVE"
                                       : "NEGATIVE") +
                                  "\t" + crop_outcome_name(crop.outcome) + "\n";
            }
            std::ofstream f(out_dir / "crops.manifest", std::ios::binary);
            f << crops_manifest;
            add_artifact("crops_manifest", out_dir / "crops.manifest",
                         artifact::file_digest(out_dir / "crops.manifest"));
        });

        // -- imbalance experiments ----------------------------------------------
        metrics::EvaluationReport classification_report;
        clock.run("resample-train", [&] {
            // Partition samples by the split protocol: the sample set mirrors
            // the corpus entry order, so split indices carry over by id.
            std::map<std::string, const trainer::Sample*> by_id;
            for (const auto& s : cls_samples) by_id[s.source_id] = &s;
            const auto split =
                corpus::split_dataset(cls_corpus, corpus::SplitScheme{}, config.split_seed);
            std::vector<trainer::Sample> positives, pool, test;
            for (const auto& e : split.train.entries)
                if (by_id.count(e.source_id)) positives.push_back(*by_id[e.source_id]);
            for (const auto& e : split.negative_pool.entries)
                if (by_id.count(e.source_id)) pool.push_back(*by_id[e.source_id]);
            for (const auto& e : split.test.entries)
                if (by_id.count(e.source_id)) test.push_back(*by_id[e.source_id]);

            const auto [model, history] =
                trainer::resampling_train(positives, pool, test, config.resampling);
            add_artifact("classifier_model", out_dir / "classifier.model",
                         trainer::save_classifier(model, out_dir / "classifier.model"));
            {
                std::ofstream f(out_dir / "auc_history.csv", std::ios::binary);
                f << trainer::auc_history_csv(history);
            }
            add_artifact("auc_history_csv", out_dir / "auc_history.csv",
                         artifact::file_digest(out_dir / "auc_history.csv"));

            std::vector<double> scores;
            std::vector<metrics::BinaryLabel> labels;
            for (const auto& s : test) {
                scores.push_back(trainer::score(model, s));
                labels.push_back(s.label);
            }
            classification_report.roc = metrics::roc_curve(scores, labels);
            classification_report.auc = metrics::auc(scores, labels);
            classification_report.auc_history = history;
        });

        clock.run("reweight-sweep", [&] {
            const auto sweep =
                reweight_sweep(cls_samples, config.reweight_ratios,
                               config.reweight_n_positive, config.reweight_epochs,
                               config.reweight_seed);
            {
                std::ofstream f(out_dir / "reweight_sweep.csv", std::ios::binary);
                f << sweep_csv(sweep);
            }
            add_artifact("reweight_sweep_csv", out_dir / "reweight_sweep.csv",
                         artifact::file_digest(out_dir / "reweight_sweep.csv"));

            classification_report.metadata = {
                {"config_digest", config.config_digest},
                {"classification_digest", corpus::manifest_digest(cls_corpus)},
            };
            int cascade_misses = 0;
            for (const auto& [id, outcome] : crop_outcomes)
                if (outcome == CropOutcome::CascadeMiss) ++cascade_misses;
            classification_report.metadata.emplace_back("crop_cascade_misses",
                                                        std::to_string(cascade_misses));
            for (const auto& p : sweep) {
                classification_report.metadata.emplace_back(
                    "reweight_auc_baseline_ratio_" + std::to_string(p.ratio),
                    textio::format_double(p.auc_baseline));
                classification_report.metadata.emplace_back(
                    "reweight_auc_reweighted_ratio_" + std::to_string(p.ratio),
                    textio::format_double(p.auc_reweighted));
            }
            emit_report(classification_report, ReportFormat::Csv,
                        out_dir / "classification_report.csv");
            emit_report(classification_report, ReportFormat::Text,
                        out_dir / "classification_report.txt");
            emit_roc_csv(classification_report, out_dir / "roc_points.csv");
            add_artifact("classification_report_csv",
                         out_dir / "classification_report.csv",
                         artifact::file_digest(out_dir / "classification_report.csv"));
            add_artifact("classification_report_txt",
                         out_dir / "classification_report.txt",
                         artifact::file_digest(out_dir / "classification_report.txt"));
            add_artifact("roc_points_csv", out_dir / "roc_points.csv",
                         artifact::file_digest(out_dir / "roc_points.csv"));
        });
    } catch (...) {
        save_run_manifest(manifest, out_dir / "run_manifest.txt");
        throw;
    }

    save_run_manifest(manifest, out_dir / "run_manifest.txt");
    return manifest;
}

}  // namespace poleinspect::pipeline
