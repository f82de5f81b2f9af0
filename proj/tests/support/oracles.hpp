#pragma once

// Independent oracles used by the test suites. These deliberately recompute
// everything from first principles (pixel counting, pairwise enumeration,
// full staircase scans) and share no code with the library implementations
// they check.

#include <algorithm>
#include <cstdint>
#include <vector>

#include "poleinspect/detection.hpp"
#include "poleinspect/geometry.hpp"
#include "poleinspect/metrics.hpp"

namespace oracles {

/// IoU of two integer-coordinate boxes by counting lattice cells. A cell
/// (x, y) belongs to a box when x_min <= x < x_max and y_min <= y < y_max,
/// matching the half-open box convention.
inline double pixel_iou(const poleinspect::geometry::BoundingBox& a,
                        const poleinspect::geometry::BoundingBox& b,
                        std::int64_t* union_cells_out = nullptr) {
    const auto lo_x = static_cast<std::int64_t>(std::min(a.x_min, b.x_min));
    const auto hi_x = static_cast<std::int64_t>(std::max(a.x_max, b.x_max));
    const auto lo_y = static_cast<std::int64_t>(std::min(a.y_min, b.y_min));
    const auto hi_y = static_cast<std::int64_t>(std::max(a.y_max, b.y_max));
    std::int64_t inter = 0, uni = 0;
    for (std::int64_t y = lo_y; y < hi_y; ++y) {
        for (std::int64_t x = lo_x; x < hi_x; ++x) {
            const bool in_a = x >= a.x_min && x < a.x_max && y >= a.y_min && y < a.y_max;
            const bool in_b = x >= b.x_min && x < b.x_max && y >= b.y_min && y < b.y_max;
            if (in_a && in_b) ++inter;
            if (in_a || in_b) ++uni;
        }
    }
    if (union_cells_out) *union_cells_out = uni;
    if (uni == 0) return 0.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

/// Mann-Whitney AUC: fraction of (positive, negative) pairs where the
/// positive scores higher, ties counted 1/2.
inline double mann_whitney_auc(const std::vector<double>& scores,
                               const std::vector<poleinspect::metrics::BinaryLabel>& labels) {
    using poleinspect::metrics::BinaryLabel;
    double wins = 0.0;
    std::int64_t pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != BinaryLabel::Positive) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != BinaryLabel::Negative) continue;
            ++pairs;
            if (scores[i] > scores[j])
                wins += 1.0;
            else if (scores[i] == scores[j])
                wins += 0.5;
        }
    }
    return wins / static_cast<double>(pairs);
}

/// Brute-force average precision: independent greedy matching, then a full
/// staircase scan that recomputes precision/recall by counting prefixes and
/// finds the interpolated precision at each recall level with a fresh pass.
inline double brute_force_ap(
    const std::vector<std::vector<poleinspect::detector::Detection>>& detections,
    const std::vector<std::vector<poleinspect::geometry::BoundingBox>>& ground_truth,
    double iou_threshold) {
    struct Entry {
        double conf;
        std::size_t image;
        std::size_t rank;
        bool tp;
    };

    std::size_t total_gt = 0;
    for (const auto& g : ground_truth) total_gt += g.size();

    std::vector<Entry> entries;
    for (std::size_t i = 0; i < detections.size(); ++i) {
        // Per-image confidence order (ties by x_min, then y_min).
        std::vector<poleinspect::detector::Detection> dets = detections[i];
        std::stable_sort(dets.begin(), dets.end(), [](const auto& a, const auto& b) {
            if (a.confidence != b.confidence) return a.confidence > b.confidence;
            if (a.box.x_min != b.box.x_min) return a.box.x_min < b.box.x_min;
            return a.box.y_min < b.box.y_min;
        });
        std::vector<bool> used(ground_truth[i].size(), false);
        for (std::size_t r = 0; r < dets.size(); ++r) {
            bool tp = false;
            double best = -1.0;
            std::size_t pick = used.size();
            for (std::size_t j = 0; j < used.size(); ++j) {
                if (used[j]) continue;
                const double v = poleinspect::geometry::iou(dets[r].box, ground_truth[i][j]);
                if (v >= iou_threshold && v > best) {
                    best = v;
                    pick = j;
                }
            }
            if (pick < used.size()) {
                used[pick] = true;
                tp = true;
            }
            entries.push_back({dets[r].confidence, i, r, tp});
        }
    }

    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        if (a.conf != b.conf) return a.conf > b.conf;
        if (a.image != b.image) return a.image < b.image;
        return a.rank < b.rank;
    });

    const std::size_t n = entries.size();
    auto precision_at = [&entries](std::size_t k) {  // over the first k entries
        std::size_t tp = 0;
        for (std::size_t i = 0; i < k; ++i) tp += entries[i].tp ? 1 : 0;
        return static_cast<double>(tp) / static_cast<double>(k);
    };
    auto recall_at = [&entries, total_gt](std::size_t k) {
        std::size_t tp = 0;
        for (std::size_t i = 0; i < k; ++i) tp += entries[i].tp ? 1 : 0;
        return static_cast<double>(tp) / static_cast<double>(total_gt);
    };

    // Distinct recall levels in ascending order.
    std::vector<double> levels;
    for (std::size_t k = 1; k <= n; ++k) levels.push_back(recall_at(k));
    std::sort(levels.begin(), levels.end());
    levels.erase(std::unique(levels.begin(), levels.end()), levels.end());

    double ap = 0.0;
    double prev = 0.0;
    for (double r : levels) {
        if (r <= prev) continue;
        double best_p = 0.0;  // max precision at recall >= r
        for (std::size_t k = 1; k <= n; ++k)
            if (recall_at(k) >= r) best_p = std::max(best_p, precision_at(k));
        ap += (r - prev) * best_p;
        prev = r;
    }
    return ap;
}

}  // namespace oracles
