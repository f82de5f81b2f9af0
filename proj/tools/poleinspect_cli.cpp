// poleinspect: synthetic-scene pole inspection pipeline.
//
// Subcommands mirror the pipeline stages so runs are independently resumable:
// every stage reads the same JSON config and works inside the --out
// directory. Exit codes identify the failing stage.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "poleinspect/pipeline.hpp"

namespace fs = std::filesystem;
using namespace poleinspect;

namespace {

// Stage-specific exit codes (0 = success).
enum ExitCode : int {
    kOk = 0,
    kConfigError = 2,
    kGenerateError = 3,
    kSplitError = 4,
    kTrainDetectorError = 5,
    kDetectError = 6,
    kEvaluateError = 7,
    kCropCapsError = 8,
    kTrainClassifierError = 9,
    kResampleError = 10,
    kReweightError = 11,
    kIoError = 12,
};

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    bool verbose = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "JSON config file")->required();
    cmd->add_option("--out", args.out_dir, "output directory (overrides config)");
    cmd->add_flag("--verbose", args.verbose, "print diagnostics");
}

fs::path resolve_out(const pipeline::PipelineConfig& config, const CommonArgs& args) {
    fs::path out = args.out_dir.empty() ? config.output_dir : fs::path(args.out_dir);
    if (out.empty()) throw InvalidConfig("no output directory (config output_dir or --out)");
    fs::create_directories(out);
    return out;
}

// The raw JSON is needed for sections the typed config does not carry.
nlohmann::json load_raw_config(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open config: " + path);
    return nlohmann::json::parse(std::string(std::istreambuf_iterator<char>(f), {}));
}

void generate_stage(const pipeline::PipelineConfig& config, const fs::path& out) {
    auto scene = config.detection_scene;
    const auto train = corpus::generate_corpus(
        {config.detection_train.n_positive, config.detection_train.ratio}, scene,
        config.detection_train.seed, out / "detection_train");
    const auto test = corpus::generate_corpus(
        {config.detection_test.n_positive, config.detection_test.ratio}, scene,
        config.detection_test.seed, out / "detection_test");
    corpus::ImbalanceConfig cls_cfg{config.classification_corpus.n_positive,
                                    config.classification_corpus.ratio};
    if (config.classification_task == corpus::TaskKind::PoleType)
        cls_cfg.preset = corpus::ImbalanceConfig::Preset::PoleTypeTable3;
    const auto cls = corpus::generate_corpus(cls_cfg, config.classification_scene,
                                             config.classification_corpus.seed,
                                             out / "classification");
    corpus::save_manifest(train, out / "detection_train" / "corpus.manifest");
    corpus::save_manifest(test, out / "detection_test" / "corpus.manifest");
    corpus::save_manifest(cls, out / "classification" / "corpus.manifest");
    std::printf("generated %zu detection train, %zu detection test, %zu classification scenes\n",
                train.entries.size(), test.entries.size(), cls.entries.size());
}

std::vector<trainer::Sample> classification_samples(const pipeline::PipelineConfig& config,
                                                    const fs::path& out) {
    // Prefer cascade crops when the crop stage already ran; otherwise fall
    // back to ground-truth apex crops of the classification corpus.
    const fs::path crops_manifest = out / "crops.manifest";
    std::vector<trainer::Sample> samples;
    if (config.crop_source == "cascade" && fs::exists(crops_manifest)) {
        std::ifstream f(crops_manifest, std::ios::binary);
        std::string line;
        std::getline(f, line);  // header
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            const auto fields = textio::split(line, '\t');
            if (fields.size() != 4 || fields[1] == "-") continue;
            trainer::Sample s;
            s.source_id = std::string(fields[0]);
            s.label = fields[2] == "POSITIVE" ? metrics::BinaryLabel::Positive
                                              : metrics::BinaryLabel::Negative;
            s.features = trainer::extract_features(img::load_pgm(out / fields[1]));
            samples.push_back(std::move(s));
        }
        return samples;
    }
    const auto manifest = corpus::load_manifest(out / "classification" / "corpus.manifest");
    return pipeline::apex_samples(manifest, config.crop_side, config.split_seed);
}

struct SplitSamples {
    std::vector<trainer::Sample> positives, pool, test;
};

SplitSamples split_samples(const pipeline::PipelineConfig& config, const fs::path& out) {
    const auto manifest = corpus::load_manifest(out / "classification" / "corpus.manifest");
    const auto samples = classification_samples(config, out);
    std::map<std::string, const trainer::Sample*> by_id;
    for (const auto& s : samples) by_id[s.source_id] = &s;
    const auto split = corpus::split_dataset(manifest, {}, config.split_seed);
    SplitSamples result;
    for (const auto& e : split.train.entries)
        if (by_id.count(e.source_id)) result.positives.push_back(*by_id[e.source_id]);
    for (const auto& e : split.negative_pool.entries)
        if (by_id.count(e.source_id)) result.pool.push_back(*by_id[e.source_id]);
    for (const auto& e : split.test.entries)
        if (by_id.count(e.source_id)) result.test.push_back(*by_id[e.source_id]);
    return result;
}

int run_command(const std::string& command, const CommonArgs& args) {
    const auto config = pipeline::load_config(args.config_path);

    if (command == "run") {
        const fs::path out = resolve_out(config, args);
        const auto manifest = pipeline::run_pipeline(config, out);
        std::printf("run complete: %zu artifacts in %s\n", manifest.artifacts.size(),
                    out.string().c_str());
        if (args.verbose)
            for (const auto& [name, path] : manifest.artifacts)
                std::printf("  %s -> %s\n", name.c_str(), path.c_str());
        return kOk;
    }

    if (command == "generate") {
        generate_stage(config, resolve_out(config, args));
        return kOk;
    }

    if (command == "split") {
        const fs::path out = resolve_out(config, args);
        const auto manifest = corpus::load_manifest(out / "classification" / "corpus.manifest");
        const auto split = corpus::split_dataset(manifest, {}, config.split_seed);
        // Split manifests stay beside the corpus manifest so the shared
        // relative image paths keep resolving.
        corpus::save_manifest(split.train, out / "classification" / "train.manifest");
        corpus::save_manifest(split.test, out / "classification" / "test.manifest");
        corpus::save_manifest(split.negative_pool, out / "classification" / "pool.manifest");
        std::printf("split: %zu train positives, %zu pool, %zu test\n",
                    split.train.entries.size(), split.negative_pool.entries.size(),
                    split.test.entries.size());
        return kOk;
    }

    if (command == "train-detector") {
        const fs::path out = resolve_out(config, args);
        const auto train = corpus::load_manifest(out / "detection_train" / "corpus.manifest");
        auto full_spec = config.detector_spec;
        full_spec.train_region = detector::BackendSpec::TrainRegion::FullImage;
        auto crop_spec = config.detector_spec;
        crop_spec.train_region = detector::BackendSpec::TrainRegion::PoleCropHalf;
        crop_spec.half_criterion = config.cascade.half_criterion;
        crop_spec.crop_margin_fraction = config.cascade.margin_fraction;
        const auto stage1 = detector::train_detector(train, corpus::kWholePole,
                                                     full_spec, config.detector_seed);
        const auto stage2 = detector::train_detector(train, corpus::kPoleCap, crop_spec,
                                                     config.detector_seed + 1);
        const auto single = detector::train_detector(train, corpus::kPoleCap, full_spec,
                                                     config.detector_seed + 2);
        detector::save_detector(stage1, out / "stage1.model");
        detector::save_detector(stage2, out / "stage2.model");
        detector::save_detector(single, out / "single_stage.model");
        std::printf("trained stage1 (%zu templates), stage2 (%zu), single (%zu)\n",
                    stage1.templates.size(), stage2.templates.size(),
                    single.templates.size());
        return kOk;
    }

    if (command == "detect") {
        const auto raw = load_raw_config(args.config_path);
        if (!raw.contains("detect"))
            throw InvalidConfig("config: missing 'detect' section");
        const auto& d = raw.at("detect");
        const std::string image_path = d.at("image").get<std::string>();
        const double threshold = d.value("threshold", 0.5);
        const img::Image image = img::load_pgm(image_path);

        std::vector<detector::Detection> detections;
        if (d.contains("stage1") && d.contains("stage2")) {
            const auto stage1 = detector::load_detector(d.at("stage1").get<std::string>());
            const auto stage2 = detector::load_detector(d.at("stage2").get<std::string>());
            auto cascade = config.cascade;
            cascade.stage2_threshold = threshold;
            const auto result = detector::zoom_in_detect(stage1, stage2, image, cascade);
            if (args.verbose) std::fputs(detector::format_diagnostics(result).c_str(), stdout);
            detections = result.detections;
        } else if (d.contains("model")) {
            const auto model = detector::load_detector(d.at("model").get<std::string>());
            detections = detector::detect(model, image, threshold);
        } else {
            throw InvalidConfig("config: 'detect' needs 'model' or 'stage1'+'stage2'");
        }
        for (const auto& det : detections)
            std::printf("%s %s %s %s %s %s\n", det.class_name.c_str(),
                        textio::format_double(det.confidence).c_str(),
                        textio::format_double(det.box.x_min).c_str(),
                        textio::format_double(det.box.y_min).c_str(),
                        textio::format_double(det.box.x_max).c_str(),
                        textio::format_double(det.box.y_max).c_str());
        return kOk;
    }

    if (command == "evaluate-detection") {
        const fs::path out = resolve_out(config, args);
        const auto test = corpus::load_manifest(out / "detection_test" / "corpus.manifest");
        const auto stage1 = detector::load_detector(out / "stage1.model");
        const auto stage2 = detector::load_detector(out / "stage2.model");
        const auto single = detector::load_detector(out / "single_stage.model");

        std::vector<std::vector<detector::Detection>> single_dets, cascade_dets;
        std::vector<std::vector<geometry::BoundingBox>> gt;
        for (std::size_t i = 0; i < test.entries.size(); ++i) {
            const img::Image image = corpus::load_entry_image(test, i);
            gt.emplace_back();
            for (const auto& ann : test.entries[i].annotations)
                if (ann.class_name == corpus::kPoleCap) gt.back().push_back(ann.box);
            single_dets.push_back(detector::detect(single, image, config.eval_threshold));
            auto cascade = config.cascade;
            cascade.stage2_threshold = config.eval_threshold;
            const auto result = detector::zoom_in_detect(stage1, stage2, image, cascade);
            if (args.verbose) std::fputs(detector::format_diagnostics(result).c_str(), stdout);
            cascade_dets.push_back(result.detections);
        }
        metrics::EvaluationReport report;
        report.detection["single_stage"] = metrics::evaluate_detection(single_dets, gt);
        report.detection["cascade"] = metrics::evaluate_detection(cascade_dets, gt);
        report.metadata = {{"config_digest", config.config_digest},
                           {"test_scenes", std::to_string(test.entries.size())}};
        pipeline::emit_report(report, pipeline::ReportFormat::Csv,
                              out / "detection_report.csv");
        pipeline::emit_report(report, pipeline::ReportFormat::Text,
                              out / "detection_report.txt");
        std::printf("single ap50=%s cascade ap50=%s\n",
                    textio::format_double(report.detection["single_stage"].ap50).c_str(),
                    textio::format_double(report.detection["cascade"].ap50).c_str());
        return kOk;
    }

    if (command == "crop-caps") {
        const fs::path out = resolve_out(config, args);
        const auto cls = corpus::load_manifest(out / "classification" / "corpus.manifest");
        const auto stage1 = detector::load_detector(out / "stage1.model");
        const auto stage2 = detector::load_detector(out / "stage2.model");
        const auto crops = pipeline::cascade_cap_crops(cls, stage1, stage2,
                                                       config.cascade, config.crop_side);
        fs::create_directories(out / "crops");
        std::string manifest = "# poleinspect-crops v1\n";
        std::size_t misses = 0;
        for (const auto& crop : crops) {
            std::string path = "-";
            if (crop.outcome == pipeline::CropOutcome::CascadeMiss) {
                ++misses;
            } else {
                path = "crops/" + crop.source_id + ".pgm";
                img::save_pgm(crop.raster, out / path);
            }
            manifest += crop.source_id + "\t" + path + "\t" +
                        (crop.label == metrics::BinaryLabel::Positive ? "POSITIVE"
                                                                      : "NEGATIVE") +
                        "\t" + pipeline::crop_outcome_name(crop.outcome) + "\n";
        }
        std::ofstream f(out / "crops.manifest", std::ios::binary);
        f << manifest;
        std::printf("cropped %zu scenes (%zu cascade misses)\n", crops.size(), misses);
        return kOk;
    }

    if (command == "train-classifier") {
        const fs::path out = resolve_out(config, args);
        const auto raw = load_raw_config(args.config_path);
        const auto& tc = raw.contains("train_classifier") ? raw.at("train_classifier")
                                                          : nlohmann::json::object();
        if (!tc.contains("epochs") || !tc.contains("seed"))
            throw InvalidConfig("config: 'train_classifier' needs 'epochs' and 'seed'");
        const int epochs = tc.at("epochs").get<int>();
        const std::uint64_t seed = tc.at("seed").get<std::uint64_t>();
        const std::string weighting = tc.value("weighting", "inverse_frequency");

        const auto parts = split_samples(config, out);
        std::vector<trainer::Sample> train = parts.positives;
        train.insert(train.end(), parts.pool.begin(), parts.pool.end());
        std::size_t n_pos = 0, n_neg = 0;
        for (const auto& s : train)
            (s.label == metrics::BinaryLabel::Positive ? n_pos : n_neg) += 1;
        const auto weights = weighting == "inverse_frequency"
                                 ? trainer::class_weights(static_cast<std::int64_t>(n_pos),
                                                          static_cast<std::int64_t>(n_neg))
                                 : trainer::ClassWeights{1.0, 1.0};
        const auto model = trainer::train_classifier(train, weights, epochs, seed);
        trainer::save_classifier(model, out / "classifier.model");

        std::vector<double> scores;
        std::vector<metrics::BinaryLabel> labels;
        for (const auto& s : parts.test) {
            scores.push_back(trainer::score(model, s));
            labels.push_back(s.label);
        }
        std::printf("trained on %zu pos / %zu neg; test AUC %s\n", n_pos, n_neg,
                    textio::format_double(metrics::auc(scores, labels)).c_str());
        return kOk;
    }

    if (command == "resample-train") {
        const fs::path out = resolve_out(config, args);
        const auto parts = split_samples(config, out);
        const auto [model, history] = trainer::resampling_train(
            parts.positives, parts.pool, parts.test, config.resampling);
        trainer::save_classifier(model, out / "classifier.model");
        std::ofstream f(out / "auc_history.csv", std::ios::binary);
        f << trainer::auc_history_csv(history);
        for (const auto& h : history)
            std::printf("loop %d: auc %s\n", h.loop_index,
                        textio::format_double(h.auc).c_str());
        return kOk;
    }

    if (command == "reweight-sweep") {
        const fs::path out = resolve_out(config, args);
        const auto samples = classification_samples(config, out);
        const auto sweep = pipeline::reweight_sweep(samples, config.reweight_ratios,
                                                    config.reweight_n_positive,
                                                    config.reweight_epochs,
                                                    config.reweight_seed);
        std::ofstream f(out / "reweight_sweep.csv", std::ios::binary);
        f << pipeline::sweep_csv(sweep);
        for (const auto& p : sweep)
            std::printf("ratio %zu: baseline %s reweighted %s\n", p.ratio,
                        textio::format_double(p.auc_baseline).c_str(),
                        textio::format_double(p.auc_reweighted).c_str());
        return kOk;
    }

    throw InvalidConfig("unknown command: " + command);
}

int error_code_for(const std::string& command) {
    static const std::map<std::string, int> codes = {
        {"generate", kGenerateError},       {"split", kSplitError},
        {"train-detector", kTrainDetectorError}, {"detect", kDetectError},
        {"evaluate-detection", kEvaluateError},  {"crop-caps", kCropCapsError},
        {"train-classifier", kTrainClassifierError},
        {"resample-train", kResampleError}, {"reweight-sweep", kReweightError},
    };
    const auto it = codes.find(command);
    return it == codes.end() ? kIoError : it->second;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"synthetic-scene pole inspection pipeline"};
    app.require_subcommand(1);

    const std::vector<std::string> commands = {
        "generate",        "split",         "train-detector",
        "detect",          "evaluate-detection", "crop-caps",
        "train-classifier", "resample-train", "reweight-sweep",
        "run"};
    std::map<std::string, CommonArgs> args;
    for (const auto& name : commands)
        add_common(app.add_subcommand(name), args[name]);

    CLI11_PARSE(app, argc, argv);

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        return run_command(command, args[command]);
    } catch (const InvalidConfig& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kConfigError;
    } catch (const Error& e) {
        std::fprintf(stderr, "%s failed: %s\n", command.c_str(), e.what());
        return error_code_for(command);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "%s failed: %s\n", command.c_str(), e.what());
        return kIoError;
    }
}
