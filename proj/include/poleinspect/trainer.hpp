#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "poleinspect/artifact_io.hpp"
#include "poleinspect/digest.hpp"
#include "poleinspect/errors.hpp"
#include "poleinspect/image.hpp"
#include "poleinspect/metrics.hpp"
#include "poleinspect/rng.hpp"
#include "poleinspect/textio.hpp"

// Imbalanced-classification trainer: a logistic-link linear scorer trained by
// deterministic full-batch gradient descent, plus the two schemes built on
// top of it -- iterative balanced negative resampling with warm-start
// retraining, and inverse-frequency loss reweighting.

namespace poleinspect::trainer {

using metrics::BinaryLabel;

inline constexpr int kHistogramBins = 32;
inline constexpr int kPoolGrid = 8;
inline constexpr int kFeatureDim = kHistogramBins + kPoolGrid * kPoolGrid;  // 96
inline constexpr double kScoreEpsilon = 1e-7;
inline constexpr double kGradientStep = 0.1;

struct Sample {
    std::vector<double> features;
    BinaryLabel label = BinaryLabel::Negative;
    std::string source_id;
};

struct ClassWeights {
    double w_pos = 1.0;
    double w_neg = 1.0;
};

/// One train_classifier invocation, as recorded in the model history.
struct TrainRecord {
    int epochs = 0;
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;
    double w_pos = 1.0;
    double w_neg = 1.0;
    double final_loss = 0.0;
    std::string sample_digest;
};

struct ClassifierModel {
    std::vector<double> weights;
    double bias = 0.0;
    std::vector<TrainRecord> history;

    int feature_dim() const { return static_cast<int>(weights.size()); }
};

// ---------------------------------------------------------------------------
// Features: 32-bin intensity histogram (L1-normalized) concatenated with an
// 8x8 mean-pooled intensity grid. Length 96.
// ---------------------------------------------------------------------------

inline std::vector<double> extract_features(const img::Image& crop) {
    img::require_nonempty(crop, "extract_features");
    std::vector<double> features(static_cast<std::size_t>(kFeatureDim), 0.0);

    for (float v : crop.pixels) {
        int bin = static_cast<int>(v * kHistogramBins);
        bin = std::clamp(bin, 0, kHistogramBins - 1);
        features[static_cast<std::size_t>(bin)] += 1.0;
    }
    const double total = static_cast<double>(crop.pixels.size());
    for (int b = 0; b < kHistogramBins; ++b) features[static_cast<std::size_t>(b)] /= total;

    for (int gy = 0; gy < kPoolGrid; ++gy) {
        const int y0 = gy * crop.height / kPoolGrid;
        const int y1 = (gy + 1) * crop.height / kPoolGrid;
        for (int gx = 0; gx < kPoolGrid; ++gx) {
            const int x0 = gx * crop.width / kPoolGrid;
            const int x1 = (gx + 1) * crop.width / kPoolGrid;
            const std::size_t cell =
                static_cast<std::size_t>(kHistogramBins + gy * kPoolGrid + gx);
            const int n = (x1 - x0) * (y1 - y0);
            if (n <= 0) continue;  // degenerate cells of very small crops
            double sum = 0.0;
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) sum += crop.at(x, y);
            features[cell] = sum / n;
        }
    }
    return features;
}

// ---------------------------------------------------------------------------
// Inverse-frequency class weights: the minority class is weighted by the
// count ratio, the majority class by 1, so both classes contribute equally
// to the loss (10 positives vs 1000 negatives -> w_pos = 100, w_neg = 1).
// ---------------------------------------------------------------------------

inline ClassWeights class_weights(std::int64_t n_pos, std::int64_t n_neg) {
    if (n_pos < 1 || n_neg < 1)
        throw InvalidCounts("class_weights: both counts must be >= 1");
    ClassWeights w;
    if (n_pos <= n_neg) {
        w.w_pos = static_cast<double>(n_neg) / static_cast<double>(n_pos);
        w.w_neg = 1.0;
    } else {
        w.w_pos = 1.0;
        w.w_neg = static_cast<double>(n_pos) / static_cast<double>(n_neg);
    }
    return w;
}

// ---------------------------------------------------------------------------
// Weighted cross-entropy loss.
// ---------------------------------------------------------------------------

/// Mean over samples of w(label) * crossentropy(score, label), scores clamped
/// to [eps, 1 - eps].
inline double weighted_loss(const std::vector<double>& scores,
                            const std::vector<BinaryLabel>& labels,
                            const ClassWeights& weights) {
    if (scores.size() != labels.size())
        throw ShapeMismatch("weighted_loss: scores and labels differ in length");
    if (scores.empty()) throw ShapeMismatch("weighted_loss: empty batch");
    double sum = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const double s = std::clamp(scores[i], kScoreEpsilon, 1.0 - kScoreEpsilon);
        if (labels[i] == BinaryLabel::Positive)
            sum += weights.w_pos * -std::log(s);
        else
            sum += weights.w_neg * -std::log(1.0 - s);
    }
    return sum / static_cast<double>(scores.size());
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

inline double score(const ClassifierModel& model, const Sample& sample) {
    if (sample.features.size() != model.weights.size())
        throw ShapeMismatch("score: feature dimension " +
                            std::to_string(sample.features.size()) + " != model " +
                            std::to_string(model.weights.size()));
    double z = model.bias;
    for (std::size_t i = 0; i < sample.features.size(); ++i)
        z += model.weights[i] * sample.features[i];
    return sigmoid(z);
}

/// Loss over a batch plus its analytic gradient with respect to (weights,
/// bias). The gradient is of the clamped loss: samples sitting outside the
/// clamp interval contribute zero.
inline double loss_and_gradient(const ClassifierModel& model,
                                const std::vector<Sample>& samples,
                                const ClassWeights& weights,
                                std::vector<double>& grad_w, double& grad_b) {
    grad_w.assign(model.weights.size(), 0.0);
    grad_b = 0.0;
    std::vector<double> scores(samples.size());
    std::vector<BinaryLabel> labels(samples.size());
    const double n = static_cast<double>(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double s = score(model, samples[i]);
        scores[i] = s;
        labels[i] = samples[i].label;
        if (s <= kScoreEpsilon || s >= 1.0 - kScoreEpsilon) continue;
        const double y = samples[i].label == BinaryLabel::Positive ? 1.0 : 0.0;
        const double w =
            samples[i].label == BinaryLabel::Positive ? weights.w_pos : weights.w_neg;
        const double dz = w * (s - y) / n;
        for (std::size_t k = 0; k < model.weights.size(); ++k)
            grad_w[k] += dz * samples[i].features[k];
        grad_b += dz;
    }
    return weighted_loss(scores, labels, weights);
}

namespace internal {

inline std::string sample_digest(const std::vector<Sample>& samples) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& s : samples) {
        h = digest::fnv1a64(s.source_id, h);
        h = digest::fnv1a64(s.label == BinaryLabel::Positive ? "+" : "-", h);
    }
    return digest::to_hex(h);
}

}  // namespace internal

// ---------------------------------------------------------------------------
// Training: deterministic full-batch gradient descent, step 0.1. FRESH init
// is all-zero parameters (a zero model scores 0.5 everywhere); passing a
// previous model continues from its parameters (warm start).
// ---------------------------------------------------------------------------

inline ClassifierModel train_classifier(const std::vector<Sample>& samples,
                                        const ClassWeights& weights, int epochs,
                                        std::uint64_t seed,
                                        const ClassifierModel* init = nullptr) {
    (void)seed;  // full-batch descent is deterministic; the seed is part of
                 // the call contract and the provenance records only
    if (samples.empty()) throw SingleClassInput("train_classifier: empty sample set");
    std::size_t n_pos = 0, n_neg = 0;
    for (const auto& s : samples)
        (s.label == BinaryLabel::Positive ? n_pos : n_neg) += 1;
    if (n_pos == 0 || n_neg == 0)
        throw SingleClassInput("train_classifier: both classes required");
    const std::size_t dim = samples.front().features.size();
    for (const auto& s : samples)
        if (s.features.size() != dim)
            throw ShapeMismatch("train_classifier: inconsistent feature length");

    ClassifierModel model;
    if (init) {
        if (init->weights.size() != dim)
            throw ShapeMismatch("train_classifier: init model dimension mismatch");
        model = *init;
    } else {
        model.weights.assign(dim, 0.0);
        model.bias = 0.0;
    }

    std::vector<double> grad_w;
    double grad_b = 0.0;
    double loss = 0.0;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        loss = loss_and_gradient(model, samples, weights, grad_w, grad_b);
        for (std::size_t k = 0; k < dim; ++k)
            model.weights[k] -= kGradientStep * grad_w[k];
        model.bias -= kGradientStep * grad_b;
    }
    if (epochs == 0) {
        std::vector<double> scores;
        std::vector<BinaryLabel> labels;
        for (const auto& s : samples) {
            scores.push_back(score(model, s));
            labels.push_back(s.label);
        }
        loss = weighted_loss(scores, labels, weights);
    }

    TrainRecord record;
    record.epochs = epochs;
    record.n_pos = n_pos;
    record.n_neg = n_neg;
    record.w_pos = weights.w_pos;
    record.w_neg = weights.w_neg;
    record.final_loss = loss;
    record.sample_digest = internal::sample_digest(samples);
    model.history.push_back(record);
    return model;
}

// ---------------------------------------------------------------------------
// Balanced negative resampling.
// ---------------------------------------------------------------------------

/// Uniform sample of n pool entries without replacement. Deterministic in
/// (seed, loop_index); distinct loop indices draw independently, so entries
/// may recur across loops.
inline std::vector<Sample> sample_balanced_negatives(const std::vector<Sample>& pool,
                                                     std::size_t n,
                                                     std::uint64_t loop_index,
                                                     std::uint64_t seed) {
    if (pool.size() < n)
        throw PoolExhausted("sample_balanced_negatives: pool of " +
                            std::to_string(pool.size()) + " cannot provide " +
                            std::to_string(n));
    rng::Engine eng(rng::mix_seed(seed, 0xba1a0ced ^ loop_index));
    std::vector<Sample> out;
    out.reserve(n);
    for (std::size_t i : rng::sample_indices(eng, pool.size(), n))
        out.push_back(pool[i]);
    return out;
}

struct ResamplingConfig {
    int loops = 5;
    int epochs_per_loop = 80;
    std::uint64_t seed = 0;
    bool warm_start = true;
};

/// Loop i: draw |positives| negatives from the pool, retrain (warm-started
/// from the previous loop unless disabled) with unit weights -- each loop is
/// balanced by construction -- then record AUC on the fixed test set.
inline std::pair<ClassifierModel, std::vector<metrics::LoopStats>> resampling_train(
    const std::vector<Sample>& positives, const std::vector<Sample>& pool,
    const std::vector<Sample>& test, const ResamplingConfig& config) {
    if (config.loops < 1) throw InvalidParams("resampling_train: loops must be >= 1");
    if (positives.empty()) throw SingleClassInput("resampling_train: no positives");

    std::vector<double> test_scores(test.size());
    std::vector<BinaryLabel> test_labels(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) test_labels[i] = test[i].label;

    ClassifierModel model;
    std::vector<metrics::LoopStats> history;
    for (int loop = 0; loop < config.loops; ++loop) {
        auto train_set = positives;
        const auto negatives = sample_balanced_negatives(
            pool, positives.size(), static_cast<std::uint64_t>(loop), config.seed);
        train_set.insert(train_set.end(), negatives.begin(), negatives.end());

        const ClassifierModel* init =
            (config.warm_start && loop > 0) ? &model : nullptr;
        model = train_classifier(train_set, ClassWeights{1.0, 1.0},
                                 config.epochs_per_loop, config.seed, init);

        for (std::size_t i = 0; i < test.size(); ++i)
            test_scores[i] = score(model, test[i]);
        history.push_back({loop, positives.size(), negatives.size(),
                           metrics::auc(test_scores, test_labels)});
    }
    return {std::move(model), std::move(history)};
}

// ---------------------------------------------------------------------------
// Classifier artifact: format-versioned, checksummed, byte-exact round-trip.
// ---------------------------------------------------------------------------

inline constexpr const char* kClassifierKind = "classifier-model";

inline std::string serialize_classifier(const ClassifierModel& model) {
    std::string payload = "dim " + std::to_string(model.weights.size()) + "\n";
    payload += "bias " + textio::format_double(model.bias) + "\n";
    payload += "weights";
    for (double w : model.weights) payload += " " + textio::format_double(w);
    payload += "\n";
    for (const auto& r : model.history) {
        payload += "history " + std::to_string(r.epochs) + " " +
                   std::to_string(r.n_pos) + " " + std::to_string(r.n_neg) + " " +
                   textio::format_double(r.w_pos) + " " +
                   textio::format_double(r.w_neg) + " " +
                   textio::format_double(r.final_loss) + " " + r.sample_digest + "\n";
    }
    return payload;
}

inline std::string save_classifier(const ClassifierModel& model,
                                   const std::filesystem::path& path) {
    return artifact::save(path, kClassifierKind, serialize_classifier(model)).file_digest;
}

inline ClassifierModel load_classifier(const std::filesystem::path& path) {
    const std::string payload = artifact::load(path, kClassifierKind);
    ClassifierModel model;
    std::size_t dim = 0;
    for (const auto line : textio::split(payload, '\n')) {
        if (line.empty()) continue;
        const auto fields = textio::split(line, ' ');
        if (fields[0] == "dim") {
            dim = textio::parse_u64(fields[1]);
        } else if (fields[0] == "bias") {
            model.bias = textio::parse_double(fields[1]);
        } else if (fields[0] == "weights") {
            if (fields.size() != dim + 1)
                throw FormatVersionError("classifier artifact: weight count mismatch");
            for (std::size_t i = 1; i < fields.size(); ++i)
                model.weights.push_back(textio::parse_double(fields[i]));
        } else if (fields[0] == "history") {
            if (fields.size() != 8)
                throw FormatVersionError("classifier artifact: bad history record");
            TrainRecord r;
            r.epochs = static_cast<int>(textio::parse_i64(fields[1]));
            r.n_pos = textio::parse_u64(fields[2]);
            r.n_neg = textio::parse_u64(fields[3]);
            r.w_pos = textio::parse_double(fields[4]);
            r.w_neg = textio::parse_double(fields[5]);
            r.final_loss = textio::parse_double(fields[6]);
            r.sample_digest = std::string(fields[7]);
            model.history.push_back(std::move(r));
        } else {
            throw FormatVersionError("classifier artifact: unknown record '" +
                                     std::string(fields[0]) + "'");
        }
    }
    return model;
}

/// AUC history CSV: loop_index,n_train_pos,n_train_neg,auc.
inline std::string auc_history_csv(const std::vector<metrics::LoopStats>& history) {
    std::string out = "loop_index,n_train_pos,n_train_neg,auc\n";
    for (const auto& h : history)
        out += std::to_string(h.loop_index) + "," + std::to_string(h.n_train_pos) +
               "," + std::to_string(h.n_train_neg) + "," +
               textio::format_double(h.auc) + "\n";
    return out;
}

}  // namespace poleinspect::trainer
