#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "poleinspect/detection.hpp"
#include "poleinspect/errors.hpp"
#include "poleinspect/geometry.hpp"

// Evaluation primitives: COCO-style average precision for detection, ROC
// curve and AUC for classification.

namespace poleinspect::metrics {

struct PRPoint {
    double precision = 0.0;
    double recall = 0.0;
    double confidence_threshold = 0.0;
};

struct ROCPoint {
    double false_positive_rate = 0.0;
    double true_positive_rate = 0.0;
    double threshold = 0.0;
};

/// Per-loop record of a resampling run.
struct LoopStats {
    int loop_index = 0;
    std::size_t n_train_pos = 0;
    std::size_t n_train_neg = 0;
    double auc = 0.0;
};

struct DetectionEval {
    std::map<double, double> ap_by_iou;  // IoU threshold -> AP
    double ap50 = 0.0;
    double map_coco = 0.0;
};

struct EvaluationReport {
    // Detection results keyed by method label (e.g. "single_stage", "cascade").
    std::map<std::string, DetectionEval> detection;
    std::vector<ROCPoint> roc;
    std::optional<double> auc;
    std::vector<LoopStats> auc_history;
    // Run metadata: seeds, corpus digests, config digest. Order-preserving
    // map so emitted files are byte-stable.
    std::vector<std::pair<std::string, std::string>> metadata;
};

namespace internal {

// One ranked decision: a detection's confidence and whether it claimed a
// ground-truth box. Tie order across images is (confidence desc, image index
// asc, per-image rank asc) and is fixed so evaluation is deterministic.
struct RankedDecision {
    double confidence;
    std::size_t image;
    std::size_t rank;
    bool is_tp;
};

inline std::vector<detector::Detection> sorted_by_confidence(
    std::vector<detector::Detection> dets) {
    std::stable_sort(dets.begin(), dets.end(),
                     [](const detector::Detection& a, const detector::Detection& b) {
                         if (a.confidence != b.confidence)
                             return a.confidence > b.confidence;
                         if (a.box.x_min != b.box.x_min) return a.box.x_min < b.box.x_min;
                         return a.box.y_min < b.box.y_min;
                     });
    return dets;
}

}  // namespace internal

/// COCO-protocol average precision at one IoU threshold.
///
/// Matching is greedy per image: detections in descending confidence claim
/// the still-unmatched ground-truth box of highest IoU >= threshold (ties:
/// lowest ground-truth index). AP is the area under the precision-recall
/// curve with monotone-interpolated precision, integrated over every recall
/// change point.
///
/// Empty ground truth with detections present is 0 by convention; empty
/// ground truth and no detections leaves the metric undefined.
inline double average_precision(
    const std::vector<std::vector<detector::Detection>>& detections,
    const std::vector<std::vector<geometry::BoundingBox>>& ground_truth,
    double iou_threshold) {
    if (detections.size() != ground_truth.size())
        throw ShapeMismatch("average_precision: per-image sequences differ in length");

    std::size_t total_gt = 0;
    for (const auto& g : ground_truth) total_gt += g.size();
    std::size_t total_det = 0;
    for (const auto& d : detections) total_det += d.size();
    if (total_gt == 0) {
        if (total_det == 0)
            throw UndefinedMetric("average_precision: no ground truth and no detections");
        return 0.0;
    }

    std::vector<internal::RankedDecision> ranked;
    ranked.reserve(total_det);
    for (std::size_t i = 0; i < detections.size(); ++i) {
        const auto dets = internal::sorted_by_confidence(detections[i]);
        const auto& gts = ground_truth[i];
        std::vector<bool> claimed(gts.size(), false);
        for (std::size_t r = 0; r < dets.size(); ++r) {
            double best_iou = 0.0;
            std::size_t best_j = gts.size();
            for (std::size_t j = 0; j < gts.size(); ++j) {
                if (claimed[j]) continue;
                const double v = geometry::iou(dets[r].box, gts[j]);
                if (v >= iou_threshold && v > best_iou) {
                    best_iou = v;
                    best_j = j;
                }
            }
            const bool tp = best_j < gts.size();
            if (tp) claimed[best_j] = true;
            ranked.push_back({dets[r].confidence, i, r, tp});
        }
    }

    std::sort(ranked.begin(), ranked.end(),
              [](const internal::RankedDecision& a, const internal::RankedDecision& b) {
                  if (a.confidence != b.confidence) return a.confidence > b.confidence;
                  if (a.image != b.image) return a.image < b.image;
                  return a.rank < b.rank;
              });

    // Precision at each rank, then interpolate: precision at recall r is the
    // maximum precision achieved at any recall >= r.
    const std::size_t n = ranked.size();
    std::vector<double> precision(n), recall(n);
    std::size_t tp = 0;
    for (std::size_t k = 0; k < n; ++k) {
        if (ranked[k].is_tp) ++tp;
        precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
        recall[k] = static_cast<double>(tp) / static_cast<double>(total_gt);
    }
    for (std::size_t k = n; k-- > 1;)
        precision[k - 1] = std::max(precision[k - 1], precision[k]);

    double ap = 0.0;
    double prev_recall = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        if (recall[k] > prev_recall) {
            ap += (recall[k] - prev_recall) * precision[k];
            prev_recall = recall[k];
        }
    }
    return ap;
}

/// The ten COCO IoU thresholds 0.50, 0.55, ..., 0.95.
inline std::vector<double> coco_iou_thresholds() {
    std::vector<double> t;
    for (int k = 0; k < 10; ++k) t.push_back((50 + 5 * k) / 100.0);
    return t;
}

/// Mean AP over the COCO IoU thresholds.
inline double map_coco(
    const std::vector<std::vector<detector::Detection>>& detections,
    const std::vector<std::vector<geometry::BoundingBox>>& ground_truth) {
    double sum = 0.0;
    const auto thresholds = coco_iou_thresholds();
    for (double t : thresholds)
        sum += average_precision(detections, ground_truth, t);
    return sum / static_cast<double>(thresholds.size());
}

/// Evaluates AP at every COCO threshold plus ap50 / map_coco in one pass.
inline DetectionEval evaluate_detection(
    const std::vector<std::vector<detector::Detection>>& detections,
    const std::vector<std::vector<geometry::BoundingBox>>& ground_truth) {
    DetectionEval eval;
    double sum = 0.0;
    for (double t : coco_iou_thresholds()) {
        const double ap = average_precision(detections, ground_truth, t);
        eval.ap_by_iou[t] = ap;
        sum += ap;
    }
    eval.map_coco = sum / 10.0;
    eval.ap50 = eval.ap_by_iou.at(0.5);
    return eval;
}

enum class BinaryLabel : std::uint8_t { Negative = 0, Positive = 1 };

namespace internal {

inline void require_both_classes(const std::vector<BinaryLabel>& labels,
                                 const char* who) {
    bool pos = false, neg = false;
    for (auto l : labels) (l == BinaryLabel::Positive ? pos : neg) = true;
    if (!pos || !neg)
        throw UndefinedMetric(std::string(who) + ": both classes required");
}

}  // namespace internal

/// ROC curve with one point per distinct score (descending threshold), equal
/// scores grouped into a single step, plus the (0,0) and (1,1) endpoints.
inline std::vector<ROCPoint> roc_curve(const std::vector<double>& scores,
                                       const std::vector<BinaryLabel>& labels) {
    if (scores.size() != labels.size())
        throw ShapeMismatch("roc_curve: scores and labels differ in length");
    internal::require_both_classes(labels, "roc_curve");

    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&scores](std::size_t a, std::size_t b) {
        return scores[a] > scores[b];
    });

    std::size_t n_pos = 0, n_neg = 0;
    for (auto l : labels) (l == BinaryLabel::Positive ? n_pos : n_neg) += 1;

    std::vector<ROCPoint> curve;
    curve.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
    std::size_t tp = 0, fp = 0, i = 0;
    while (i < order.size()) {
        const double s = scores[order[i]];
        while (i < order.size() && scores[order[i]] == s) {
            (labels[order[i]] == BinaryLabel::Positive ? tp : fp) += 1;
            ++i;
        }
        curve.push_back({static_cast<double>(fp) / static_cast<double>(n_neg),
                         static_cast<double>(tp) / static_cast<double>(n_pos), s});
    }
    return curve;
}

/// Area under the ROC curve by trapezoidal integration. With tied scores
/// grouped into single steps this equals the Mann-Whitney statistic (ties
/// counted 1/2) exactly.
inline double auc(const std::vector<double>& scores,
                  const std::vector<BinaryLabel>& labels) {
    const auto curve = roc_curve(scores, labels);
    double area = 0.0;
    for (std::size_t i = 1; i < curve.size(); ++i) {
        const double dx =
            curve[i].false_positive_rate - curve[i - 1].false_positive_rate;
        area += dx * (curve[i].true_positive_rate +
                      curve[i - 1].true_positive_rate) / 2.0;
    }
    return area;
}

}  // namespace poleinspect::metrics
