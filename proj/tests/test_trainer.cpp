#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <filesystem>
#include <set>

#include "poleinspect/rng.hpp"
#include "poleinspect/trainer.hpp"

using namespace poleinspect;
using metrics::BinaryLabel;
using trainer::ClassifierModel;
using trainer::ClassWeights;
using trainer::Sample;

namespace {

Sample sample2(double a, double b, BinaryLabel label, const std::string& id) {
    return Sample{{a, b}, label, id};
}

// Linearly separable toy set in two features.
std::vector<Sample> separable_set() {
    std::vector<Sample> samples;
    rng::Engine eng(5);
    for (int i = 0; i < 25; ++i) {
        samples.push_back(sample2(rng::uniform(eng, 0.65, 1.0), rng::uniform(eng, 0.0, 1.0),
                                  BinaryLabel::Positive, "p" + std::to_string(i)));
        samples.push_back(sample2(rng::uniform(eng, 0.0, 0.35), rng::uniform(eng, 0.0, 1.0),
                                  BinaryLabel::Negative, "n" + std::to_string(i)));
    }
    return samples;
}

std::vector<Sample> random_batch(rng::Engine& eng, std::size_t n, std::size_t dim) {
    std::vector<Sample> samples;
    for (std::size_t i = 0; i < n; ++i) {
        Sample s;
        for (std::size_t k = 0; k < dim; ++k)
            s.features.push_back(rng::uniform(eng, -1.0, 1.0));
        s.label = rng::uniform01(eng) < 0.5 ? BinaryLabel::Positive : BinaryLabel::Negative;
        s.source_id = "r" + std::to_string(i);
        samples.push_back(std::move(s));
    }
    return samples;
}

}  // namespace

TEST_CASE("extract_features layout and constant input") {
    img::Image zero(16, 16, 0.0f);
    const auto f = trainer::extract_features(zero);
    REQUIRE(f.size() == 96);
    CHECK(f[0] == 1.0);  // histogram one-hot at bin 0
    for (std::size_t i = 1; i < 32; ++i) CHECK(f[i] == 0.0);
    for (std::size_t i = 32; i < 96; ++i) CHECK(f[i] == 0.0);

    CHECK(trainer::extract_features(zero) == f);
    CHECK_THROWS_AS(trainer::extract_features(img::Image{}), InvalidImage);
}

TEST_CASE("extract_features is local: one pixel touches few entries") {
    rng::Engine eng(77);
    img::Image crop(32, 32);
    for (float& v : crop.pixels) v = static_cast<float>(rng::uniform01(eng));
    img::quantize_8bit(crop);
    const auto base = trainer::extract_features(crop);

    auto changed = crop;
    changed.at(13, 21) = changed.at(13, 21) < 0.5f ? 0.9f : 0.1f;
    const auto after = trainer::extract_features(changed);

    int hist_diffs = 0, grid_diffs = 0;
    for (std::size_t i = 0; i < 32; ++i)
        if (base[i] != after[i]) ++hist_diffs;
    for (std::size_t i = 32; i < 96; ++i)
        if (base[i] != after[i]) ++grid_diffs;
    CHECK(hist_diffs <= 2);
    CHECK(grid_diffs <= 1);
}

TEST_CASE("class_weights inverse-frequency rule") {
    const auto w = trainer::class_weights(10, 1000);
    CHECK(w.w_pos == 100.0);
    CHECK(w.w_neg == 1.0);

    const auto balanced = trainer::class_weights(50, 50);
    CHECK(balanced.w_pos == 1.0);
    CHECK(balanced.w_neg == 1.0);

    const auto flipped = trainer::class_weights(1000, 10);
    CHECK(flipped.w_pos == 1.0);
    CHECK(flipped.w_neg == 100.0);

    CHECK_THROWS_AS(trainer::class_weights(0, 10), InvalidCounts);
    CHECK_THROWS_AS(trainer::class_weights(10, 0), InvalidCounts);
}

TEST_CASE("class_weights mirror property") {
    rng::Engine eng(3);
    for (int trial = 0; trial < 100; ++trial) {
        const auto a = rng::uniform_int(eng, 1, 5000);
        const auto b = rng::uniform_int(eng, 1, 5000);
        const auto ab = trainer::class_weights(a, b);
        const auto ba = trainer::class_weights(b, a);
        CHECK(ab.w_pos == ba.w_neg);
        CHECK(ab.w_neg == ba.w_pos);
        CHECK(std::min(ab.w_pos, ab.w_neg) == 1.0);
    }
}

TEST_CASE("weighted_loss closed forms") {
    // Single positive at score 0.5 with w_pos = 2: loss = 2 ln 2.
    CHECK(trainer::weighted_loss({0.5}, {BinaryLabel::Positive}, {2.0, 1.0}) ==
          Catch::Approx(2.0 * std::log(2.0)).epsilon(1e-12));

    // Near-perfect scores give near-zero loss regardless of weights.
    const double eps = trainer::kScoreEpsilon;
    const double tiny = trainer::weighted_loss(
        {1.0 - eps, eps}, {BinaryLabel::Positive, BinaryLabel::Negative}, {7.0, 3.0});
    CHECK(tiny <= 7.0 * 2.0 * eps);

    CHECK_THROWS_AS(trainer::weighted_loss({0.5, 0.5}, {BinaryLabel::Positive}, {1, 1}),
                    ShapeMismatch);
}

TEST_CASE("weighted_loss matches independent scalar recomputation") {
    const std::vector<double> scores{0.8, 0.3, 0.6, 0.1};
    const std::vector<BinaryLabel> labels{BinaryLabel::Positive, BinaryLabel::Negative,
                                          BinaryLabel::Positive, BinaryLabel::Negative};
    const ClassWeights w{3.0, 1.5};
    const double expected = (3.0 * -std::log(0.8) + 1.5 * -std::log(0.7) +
                             3.0 * -std::log(0.6) + 1.5 * -std::log(0.9)) /
                            4.0;
    CHECK(trainer::weighted_loss(scores, labels, w) ==
          Catch::Approx(expected).margin(1e-9));
}

TEST_CASE("weighted_loss with unit weights is plain mean cross-entropy") {
    rng::Engine eng(9);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = static_cast<int>(rng::uniform_int(eng, 1, 30));
        std::vector<double> scores;
        std::vector<BinaryLabel> labels;
        double plain = 0.0;
        for (int i = 0; i < n; ++i) {
            const double s = rng::uniform(eng, 0.01, 0.99);
            const bool pos = rng::uniform01(eng) < 0.5;
            scores.push_back(s);
            labels.push_back(pos ? BinaryLabel::Positive : BinaryLabel::Negative);
            plain += pos ? -std::log(s) : -std::log(1.0 - s);
        }
        plain /= n;
        CHECK(trainer::weighted_loss(scores, labels, {1.0, 1.0}) ==
              Catch::Approx(plain).margin(1e-12));
    }
}

TEST_CASE("doubling both weights exactly doubles the loss") {
    rng::Engine eng(10);
    std::vector<double> scores;
    std::vector<BinaryLabel> labels;
    for (int i = 0; i < 16; ++i) {
        scores.push_back(rng::uniform(eng, 0.05, 0.95));
        labels.push_back(i % 3 == 0 ? BinaryLabel::Positive : BinaryLabel::Negative);
    }
    const double base = trainer::weighted_loss(scores, labels, {3.0, 1.0});
    const double doubled = trainer::weighted_loss(scores, labels, {6.0, 2.0});
    CHECK(doubled == 2.0 * base);  // exact: scaling by a power of two
}

TEST_CASE("analytic gradient matches central finite differences") {
    rng::Engine eng(1234);
    for (int trial = 0; trial < 5; ++trial) {
        const std::size_t dim = 8;
        const auto batch = random_batch(eng, 24, dim);
        ClassifierModel model;
        for (std::size_t k = 0; k < dim; ++k)
            model.weights.push_back(rng::uniform(eng, -0.8, 0.8));
        model.bias = rng::uniform(eng, -0.5, 0.5);
        const ClassWeights w{4.0, 1.0};

        std::vector<double> grad_w;
        double grad_b = 0.0;
        trainer::loss_and_gradient(model, batch, w, grad_w, grad_b);

        const double h = 1e-5;
        auto loss_at = [&batch, &w](const ClassifierModel& m) {
            std::vector<double> scores;
            std::vector<BinaryLabel> labels;
            for (const auto& s : batch) {
                scores.push_back(trainer::score(m, s));
                labels.push_back(s.label);
            }
            return trainer::weighted_loss(scores, labels, w);
        };
        for (std::size_t k = 0; k <= dim; ++k) {
            ClassifierModel up = model, down = model;
            if (k < dim) {
                up.weights[k] += h;
                down.weights[k] -= h;
            } else {
                up.bias += h;
                down.bias -= h;
            }
            const double fd = (loss_at(up) - loss_at(down)) / (2.0 * h);
            const double analytic = k < dim ? grad_w[k] : grad_b;
            const double rel = std::abs(fd - analytic) /
                               std::max({std::abs(fd), std::abs(analytic), 1e-8});
            CHECK(rel <= 1e-4);
        }
    }
}

TEST_CASE("training contract: fresh zero model and determinism") {
    const auto samples = separable_set();
    const auto zero = trainer::train_classifier(samples, {1, 1}, 0, 42);
    for (const auto& s : samples) CHECK(trainer::score(zero, s) == 0.5);

    const auto a = trainer::train_classifier(samples, {1, 1}, 200, 42);
    const auto b = trainer::train_classifier(samples, {1, 1}, 200, 42);
    CHECK(a.weights == b.weights);
    CHECK(a.bias == b.bias);
}

TEST_CASE("training reaches full accuracy on a separable set") {
    const auto samples = separable_set();
    const auto model = trainer::train_classifier(samples, {1, 1}, 2000, 1);
    int correct = 0;
    double pos_mean = 0.0, neg_mean = 0.0;
    int n_pos = 0, n_neg = 0;
    for (const auto& s : samples) {
        const double p = trainer::score(model, s);
        const bool predicted_pos = p >= 0.5;
        if (predicted_pos == (s.label == BinaryLabel::Positive)) ++correct;
        if (s.label == BinaryLabel::Positive) {
            pos_mean += p;
            ++n_pos;
        } else {
            neg_mean += p;
            ++n_neg;
        }
    }
    CHECK(correct == static_cast<int>(samples.size()));
    CHECK(pos_mean / n_pos > neg_mean / n_neg);
}

TEST_CASE("training errors") {
    std::vector<Sample> one_class{sample2(0.1, 0.2, BinaryLabel::Positive, "a"),
                                  sample2(0.3, 0.4, BinaryLabel::Positive, "b")};
    CHECK_THROWS_AS(trainer::train_classifier(one_class, {1, 1}, 10, 0),
                    SingleClassInput);
    CHECK_THROWS_AS(trainer::train_classifier({}, {1, 1}, 10, 0), SingleClassInput);

    const auto model = trainer::train_classifier(separable_set(), {1, 1}, 5, 0);
    Sample wrong_dim;
    wrong_dim.features = {0.1, 0.2, 0.3};
    CHECK_THROWS_AS(trainer::score(model, wrong_dim), ShapeMismatch);
}

TEST_CASE("warm start equals one continuous run") {
    const auto samples = separable_set();
    const auto part1 = trainer::train_classifier(samples, {1, 1}, 60, 9);
    const auto part2 = trainer::train_classifier(samples, {1, 1}, 40, 9, &part1);
    const auto full = trainer::train_classifier(samples, {1, 1}, 100, 9);
    CHECK(part2.weights == full.weights);
    CHECK(part2.bias == full.bias);
    CHECK(part2.history.size() == 2);
}

TEST_CASE("loss decreases monotonically along the descent path") {
    const auto samples = separable_set();
    std::vector<double> scores(samples.size());
    std::vector<BinaryLabel> labels(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) labels[i] = samples[i].label;

    ClassifierModel model = trainer::train_classifier(samples, {1, 1}, 0, 0);
    double prev = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 40; ++k) {
        model = trainer::train_classifier(samples, {1, 1}, 1, 0, &model);
        for (std::size_t i = 0; i < samples.size(); ++i)
            scores[i] = trainer::score(model, samples[i]);
        const double loss = trainer::weighted_loss(scores, labels, {1, 1});
        CHECK(loss <= prev + 1e-12);
        prev = loss;
    }
}

TEST_CASE("scaled weights with inversely scaled step retrace the trajectory") {
    // Gradient steps with (2w, step/2) equal steps with (w, step): the
    // doubling is exact in floating point, so trajectories match bitwise.
    const auto samples = separable_set();
    const ClassWeights w{3.0, 1.0};
    const ClassWeights w2{6.0, 2.0};
    ClassifierModel a, b;
    a.weights.assign(2, 0.0);
    b.weights.assign(2, 0.0);
    std::vector<double> grad;
    double grad_b = 0.0;
    for (int step = 0; step < 50; ++step) {
        trainer::loss_and_gradient(a, samples, w, grad, grad_b);
        for (std::size_t k = 0; k < 2; ++k) a.weights[k] -= 0.1 * grad[k];
        a.bias -= 0.1 * grad_b;
        trainer::loss_and_gradient(b, samples, w2, grad, grad_b);
        for (std::size_t k = 0; k < 2; ++k) b.weights[k] -= (0.1 / 2.0) * grad[k];
        b.bias -= (0.1 / 2.0) * grad_b;
    }
    for (std::size_t k = 0; k < 2; ++k)
        CHECK(a.weights[k] == Catch::Approx(b.weights[k]).margin(1e-9));
    CHECK(a.bias == Catch::Approx(b.bias).margin(1e-9));
}

TEST_CASE("sample_balanced_negatives basics") {
    std::vector<Sample> pool;
    for (int i = 0; i < 1000; ++i)
        pool.push_back(sample2(i * 0.001, 0.0, BinaryLabel::Negative,
                               "pool" + std::to_string(i)));

    // Pool of exactly n: the whole pool comes back (as a set).
    std::vector<Sample> tiny(pool.begin(), pool.begin() + 7);
    const auto all = trainer::sample_balanced_negatives(tiny, 7, 3, 5);
    std::multiset<std::string> got, want;
    for (const auto& s : all) got.insert(s.source_id);
    for (const auto& s : tiny) want.insert(s.source_id);
    CHECK(got == want);

    // Deterministic per (seed, loop).
    const auto a = trainer::sample_balanced_negatives(pool, 88, 1, 5);
    const auto b = trainer::sample_balanced_negatives(pool, 88, 1, 5);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].source_id == b[i].source_id);

    // Distinct loops draw independently: the fixed-seed subsets differ.
    const auto loop2 = trainer::sample_balanced_negatives(pool, 88, 2, 5);
    std::set<std::string> ids1, ids2;
    for (const auto& s : a) ids1.insert(s.source_id);
    for (const auto& s : loop2) ids2.insert(s.source_id);
    CHECK(ids1 != ids2);
    CHECK(ids1.size() == 88);  // without replacement within a loop
    CHECK(ids2.size() == 88);

    CHECK_THROWS_AS(trainer::sample_balanced_negatives(tiny, 8, 0, 5), PoolExhausted);
}

TEST_CASE("resampling_train degenerate and structural contracts") {
    rng::Engine eng(2024);
    std::vector<Sample> positives, pool, test;
    for (int i = 0; i < 30; ++i)
        positives.push_back(sample2(rng::uniform(eng, 0.6, 1.0), rng::uniform(eng, 0, 1),
                                    BinaryLabel::Positive, "p" + std::to_string(i)));
    for (int i = 0; i < 200; ++i)
        pool.push_back(sample2(rng::uniform(eng, 0.0, 0.45), rng::uniform(eng, 0, 1),
                               BinaryLabel::Negative, "n" + std::to_string(i)));
    for (int i = 0; i < 40; ++i) {
        const bool pos = i % 2 == 0;
        test.push_back(sample2(pos ? rng::uniform(eng, 0.6, 1.0) : rng::uniform(eng, 0.0, 0.45),
                               rng::uniform(eng, 0, 1),
                               pos ? BinaryLabel::Positive : BinaryLabel::Negative,
                               "t" + std::to_string(i)));
    }

    trainer::ResamplingConfig config;
    config.loops = 1;
    config.epochs_per_loop = 50;
    config.seed = 77;

    // loops=1 equals a single train + AUC evaluation on the loop-1 sample.
    const auto [model, history] = trainer::resampling_train(positives, pool, test, config);
    REQUIRE(history.size() == 1);
    auto train_set = positives;
    const auto negs = trainer::sample_balanced_negatives(pool, positives.size(), 0, 77);
    train_set.insert(train_set.end(), negs.begin(), negs.end());
    const auto direct = trainer::train_classifier(train_set, {1, 1}, 50, 77);
    CHECK(model.weights == direct.weights);
    std::vector<double> scores;
    std::vector<BinaryLabel> labels;
    for (const auto& s : test) {
        scores.push_back(trainer::score(direct, s));
        labels.push_back(s.label);
    }
    CHECK(history[0].auc == metrics::auc(scores, labels));
    CHECK(history[0].n_train_pos == positives.size());
    CHECK(history[0].n_train_neg == positives.size());  // balanced by construction

    // Warm start is vacuous on the first loop.
    auto cold = config;
    cold.warm_start = false;
    const auto [cold_model, cold_history] =
        trainer::resampling_train(positives, pool, test, cold);
    CHECK(cold_model.weights == model.weights);
    CHECK(cold_history[0].auc == history[0].auc);

    // Full determinism of the history.
    auto five = config;
    five.loops = 5;
    const auto [m1, h1] = trainer::resampling_train(positives, pool, test, five);
    const auto [m2, h2] = trainer::resampling_train(positives, pool, test, five);
    REQUIRE(h1.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(h1[i].auc == h2[i].auc);
        CHECK(h1[i].n_train_neg == positives.size());
    }
    CHECK(m1.weights == m2.weights);
}

TEST_CASE("classifier artifact round-trip and tamper detection") {
    const auto model = trainer::train_classifier(separable_set(), {2.5, 1.0}, 120, 4);
    const auto dir = std::filesystem::temp_directory_path() / "poleinspect_trainer_test";
    std::filesystem::create_directories(dir);
    const auto path = dir / "classifier.model";

    const auto digest1 = trainer::save_classifier(model, path);
    const auto loaded = trainer::load_classifier(path);
    CHECK(loaded.weights == model.weights);
    CHECK(loaded.bias == model.bias);
    REQUIRE(loaded.history.size() == model.history.size());
    CHECK(loaded.history.back().sample_digest == model.history.back().sample_digest);
    CHECK(loaded.history.back().final_loss == model.history.back().final_loss);

    // Behaviourally identical scores.
    for (const auto& s : separable_set())
        CHECK(trainer::score(loaded, s) == trainer::score(model, s));

    // Byte-exact re-save.
    const auto path2 = dir / "classifier2.model";
    const auto digest2 = trainer::save_classifier(loaded, path2);
    CHECK(digest1 == digest2);

    // Tampering trips the checksum.
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(60);
    f.put('Z');
    f.close();
    CHECK_THROWS_AS(trainer::load_classifier(path), ChecksumError);

    // Kind mismatch is a format error.
    const auto other = dir / "other.artifact";
    poleinspect::artifact::save(other, "something-else", "x 1\n");
    CHECK_THROWS_AS(trainer::load_classifier(other), FormatVersionError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("auc history csv shape") {
    std::vector<metrics::LoopStats> history{{0, 88, 88, 0.91}, {1, 88, 88, 0.95}};
    const auto csv = trainer::auc_history_csv(history);
    CHECK(csv == "loop_index,n_train_pos,n_train_neg,auc\n0,88,88,0.91\n1,88,88,0.95\n");
}
