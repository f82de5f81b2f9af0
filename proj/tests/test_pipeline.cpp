#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>

#include "poleinspect/pipeline.hpp"

using namespace poleinspect;
namespace fs = std::filesystem;

namespace {

std::string tiny_config_text() {
    // Mirrors tests/data/tiny_config.json, kept inline so the unit test does
    // not depend on the working directory.
    return R"({
      "scene": {"width": 448, "height": 672, "clutter_density": 0.4, "noise_sigma": 0.02},
      "detection": {
        "train": {"n_positive": 5, "ratio": 1, "seed": 101},
        "test": {"n_positive": 5, "ratio": 1, "seed": 202},
        "trainer": {"seed": 303, "epochs": 200, "mining_rounds": 1},
        "cascade": {"stage1_threshold": 0.5, "stage2_threshold": 0.25},
        "eval_threshold": 0.05
      },
      "classification": {
        "scene": {"width": 384, "height": 576, "clutter_density": 0.4, "noise_sigma": 0.02},
        "corpus": {"n_positive": 10, "ratio": 3, "seed": 404},
        "split_seed": 505,
        "crop_side": 36,
        "crop_source": "cascade",
        "resampling": {"loops": 2, "epochs_per_loop": 40, "seed": 606},
        "reweight": {"ratios": [1, 2], "n_positive": 6, "epochs": 40, "seed": 707}
      }
    })";
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    return std::string(std::istreambuf_iterator<char>(f), {});
}

std::vector<trainer::Sample> synthetic_samples(std::size_t n_pos, std::size_t n_neg) {
    rng::Engine eng(8080);
    std::vector<trainer::Sample> samples;
    for (std::size_t i = 0; i < n_pos + n_neg; ++i) {
        const bool pos = i < n_pos;
        trainer::Sample s;
        for (int k = 0; k < 6; ++k)
            s.features.push_back(rng::uniform01(eng) + (pos ? 0.35 : 0.0));
        s.label = pos ? metrics::BinaryLabel::Positive : metrics::BinaryLabel::Negative;
        s.source_id = (pos ? "p" : "n") + std::to_string(i);
        samples.push_back(std::move(s));
    }
    return samples;
}

}  // namespace

TEST_CASE("config parsing requires explicit seeds") {
    CHECK_THROWS_AS(pipeline::parse_config("not json"), InvalidConfig);
    CHECK_THROWS_AS(pipeline::parse_config("{}"), InvalidConfig);

    // Remove one required seed: rejected.
    auto text = tiny_config_text();
    const auto pos = text.find("\"split_seed\": 505,");
    REQUIRE(pos != std::string::npos);
    text.erase(pos, std::string("\"split_seed\": 505,").size());
    CHECK_THROWS_AS(pipeline::parse_config(text), InvalidConfig);

    const auto config = pipeline::parse_config(tiny_config_text());
    CHECK(config.detection_train.seed == 101);
    CHECK(config.classification_corpus.seed == 404);
    CHECK(config.resampling.seed == 606);
    CHECK(config.reweight_seed == 707);
    CHECK(config.detection_scene.extent.width == 448);
    CHECK(config.classification_scene.extent.width == 384);
    CHECK(config.crop_source == "cascade");
    CHECK(config.config_digest.size() == 16);
}

TEST_CASE("report emission round-trips values at full precision") {
    metrics::EvaluationReport report;
    metrics::DetectionEval single, cascade;
    for (double t : metrics::coco_iou_thresholds()) {
        single.ap_by_iou[t] = 0.5;
        cascade.ap_by_iou[t] = 0.8;
    }
    single.ap50 = 0.5;
    single.map_coco = 0.5;
    cascade.ap50 = 0.8123456789012345;
    cascade.map_coco = 0.8;
    report.detection["single_stage"] = single;
    report.detection["cascade"] = cascade;
    report.auc = 0.875;
    report.auc_history = {{0, 88, 88, 0.9}, {1, 88, 88, 0.95}};
    report.metadata = {{"seed", "7"}};

    const auto text = pipeline::render_report_text(report);
    CHECK(text.find("single_stage") != std::string::npos);
    CHECK(text.find("cascade") != std::string::npos);
    CHECK(text.find("0.5000") != std::string::npos);
    CHECK(text.find("0.8123") != std::string::npos);
    CHECK(text.find("resampling AUC by loop") != std::string::npos);

    const auto csv = pipeline::render_report_csv(report);
    bool found_exact = false;
    for (const auto line : textio::split(csv, '\n')) {
        const auto fields = textio::split(line, ',');
        if (fields.size() == 4 && fields[0] == "cascade" && fields[1] == "ap50")
            found_exact = textio::parse_double(fields[3]) == cascade.ap50;
    }
    CHECK(found_exact);
}

TEST_CASE("reweight sweep is deterministic and shaped by its ratios") {
    const auto samples = synthetic_samples(20, 60);
    const auto sweep = pipeline::reweight_sweep(samples, {1, 2}, 8, 50, 99);
    REQUIRE(sweep.size() == 2);
    CHECK(sweep[0].ratio == 1);
    CHECK(sweep[0].n_train_pos == 8);
    CHECK(sweep[0].n_train_neg == 8);
    CHECK(sweep[1].ratio == 2);
    CHECK(sweep[1].n_train_neg == 16);
    // Balanced case: identical weights, identical models, identical AUC.
    CHECK(sweep[0].auc_baseline == sweep[0].auc_reweighted);

    const auto again = pipeline::reweight_sweep(samples, {1, 2}, 8, 50, 99);
    for (std::size_t i = 0; i < sweep.size(); ++i) {
        CHECK(sweep[i].auc_baseline == again[i].auc_baseline);
        CHECK(sweep[i].auc_reweighted == again[i].auc_reweighted);
    }

    CHECK_THROWS_AS(pipeline::reweight_sweep(samples, {50}, 8, 50, 99), PoolExhausted);
}

TEST_CASE("apex samples are deterministic and labeled by the manifest") {
    corpus::SceneParams params;
    params.extent = {384, 576};
    const auto manifest = corpus::generate_corpus({4, 2}, params, 1900);
    const auto a = pipeline::apex_samples(manifest, 36, 5);
    const auto b = pipeline::apex_samples(manifest, 36, 5);
    REQUIRE(a.size() == manifest.entries.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].features == b[i].features);
        CHECK((a[i].label == metrics::BinaryLabel::Positive) ==
              corpus::is_positive(manifest, manifest.entries[i]));
    }
}

TEST_CASE("tiny full pipeline run: artifacts, determinism, resumability") {
    const auto config = pipeline::parse_config(tiny_config_text());
    const auto base = fs::temp_directory_path() / "poleinspect_pipeline_test";
    fs::remove_all(base);
    const auto out1 = base / "run1";
    const auto out2 = base / "run2";

    const auto manifest1 = pipeline::run_pipeline(config, out1);
    CHECK(manifest1.failed_stage.empty());
    CHECK(manifest1.artifacts.size() >= 6);
    for (const auto& [name, rel] : manifest1.artifacts) {
        INFO(name);
        CHECK(fs::exists(out1 / rel));
    }
    CHECK(fs::exists(out1 / "run_manifest.txt"));

    // Determinism: a second run produces byte-identical reports and models.
    const auto manifest2 = pipeline::run_pipeline(config, out2);
    REQUIRE(manifest2.digests.size() == manifest1.digests.size());
    for (std::size_t i = 0; i < manifest1.digests.size(); ++i) {
        INFO(manifest1.digests[i].first);
        CHECK(manifest1.digests[i].first == manifest2.digests[i].first);
        CHECK(manifest1.digests[i].second == manifest2.digests[i].second);
    }

    // Idempotent re-run into the same directory.
    const auto detection_report_before = slurp(out1 / "detection_report.csv");
    const auto manifest1b = pipeline::run_pipeline(config, out1);
    CHECK(slurp(out1 / "detection_report.csv") == detection_report_before);

    // The emitted corpus manifest files load back and reference real images.
    const auto loaded = corpus::load_manifest(out1 / "classification" / "corpus.manifest");
    REQUIRE(loaded.entries.size() == 40);
    CHECK_NOTHROW(corpus::load_entry_image(loaded, 0));

    // The AUC history CSV has one row per configured loop.
    const auto history = slurp(out1 / "auc_history.csv");
    CHECK(std::count(history.begin(), history.end(), '\n') == 3);  // header + 2 loops

    // Run manifest is a checksummed artifact with the config digest inside.
    const auto payload = artifact::load(out1 / "run_manifest.txt", "run-manifest");
    CHECK(payload.find("config_digest " + config.config_digest) != std::string::npos);
    CHECK(payload.find("stage_done reweight-sweep") != std::string::npos);

    fs::remove_all(base);
}
