#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "poleinspect/errors.hpp"

// Box arithmetic shared by detection and evaluation. Boxes use half-open
// continuous coordinates: a box covers [x_min, x_max) x [y_min, y_max) and
// its area is (x_max - x_min) * (y_max - y_min), which makes IoU exact for
// axis-aligned boxes and agrees with pixel counting for integer coordinates.
//
// Every box carries an explicit reference frame. Cascade bugs live at the
// crop boundary, so a frame mismatch is a detectable error, not a comment.

namespace poleinspect::geometry {

struct Frame {
    enum class Kind { Global, Crop };

    Kind kind = Kind::Global;
    // Origin of this frame expressed in the parent frame's coordinates.
    // Meaningful only for Kind::Crop.
    double origin_x = 0.0;
    double origin_y = 0.0;

    static Frame global() { return Frame{}; }
    static Frame crop(double ox, double oy) {
        return Frame{Kind::Crop, ox, oy};
    }

    bool operator==(const Frame&) const = default;

    std::string describe() const {
        if (kind == Kind::Global) return "GLOBAL";
        return "CROP(" + std::to_string(origin_x) + "," +
               std::to_string(origin_y) + ")";
    }
};

struct BoundingBox {
    double x_min = 0.0;
    double y_min = 0.0;
    double x_max = 0.0;
    double y_max = 0.0;
    Frame frame{};

    double width() const { return x_max - x_min; }
    double height() const { return y_max - y_min; }
    double area() const { return width() * height(); }

    bool operator==(const BoundingBox&) const = default;
};

struct ImageExtent {
    int width = 0;
    int height = 0;
};

inline bool finite(const BoundingBox& b) {
    return std::isfinite(b.x_min) && std::isfinite(b.y_min) &&
           std::isfinite(b.x_max) && std::isfinite(b.y_max);
}

/// Checks the box invariants: finite coordinates, non-negative extents.
inline void validate_box(const BoundingBox& b) {
    if (!finite(b)) throw InvalidParams("bounding box has non-finite coordinates");
    if (b.x_min > b.x_max || b.y_min > b.y_max)
        throw InvalidParams("bounding box has negative extent");
}

/// Intersection area of two boxes (frames assumed equal).
inline double intersection_area(const BoundingBox& a, const BoundingBox& b) {
    const double w = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
    const double h = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
    if (w <= 0.0 || h <= 0.0) return 0.0;
    return w * h;
}

/// Intersection over union in [0, 1]. Zero-area union yields 0 by convention
/// so AP matching never divides by zero.
inline double iou(const BoundingBox& a, const BoundingBox& b) {
    if (a.frame != b.frame)
        throw FrameMismatch("iou: boxes in different frames (" +
                            a.frame.describe() + " vs " + b.frame.describe() + ")");
    validate_box(a);
    validate_box(b);
    const double inter = intersection_area(a, b);
    const double uni = a.area() + b.area() - inter;
    if (uni <= 0.0) return 0.0;
    return inter / uni;
}

/// Clamps a box to [0, width] x [0, height]. Total and idempotent; the frame
/// tag is preserved.
inline BoundingBox clip_box(const BoundingBox& b, const ImageExtent& extent) {
    validate_box(b);
    BoundingBox r = b;
    const double w = static_cast<double>(extent.width);
    const double h = static_cast<double>(extent.height);
    r.x_min = std::clamp(r.x_min, 0.0, w);
    r.x_max = std::clamp(r.x_max, 0.0, w);
    r.y_min = std::clamp(r.y_min, 0.0, h);
    r.y_max = std::clamp(r.y_max, 0.0, h);
    return r;
}

enum class TransformDirection { ToLocal, ToGlobal };

/// Translates a box across one crop boundary.
///
/// ToLocal: `b` and `crop` share a frame; the result is `b` expressed in
/// crop-local coordinates with frame CROP(crop origin).
/// ToGlobal: `b` is crop-local (frame CROP(crop origin)); the result is `b`
/// expressed in the crop's own frame.
///
/// The two directions are exact inverses: translations by the same values,
/// no scaling, no floating drift for pixel-scale coordinates.
inline BoundingBox transform_box(const BoundingBox& b, const BoundingBox& crop,
                                 TransformDirection direction) {
    validate_box(b);
    validate_box(crop);
    BoundingBox r = b;
    if (direction == TransformDirection::ToLocal) {
        if (b.frame != crop.frame)
            throw FrameMismatch("transform_box ToLocal: box frame " +
                                b.frame.describe() + " != crop frame " +
                                crop.frame.describe());
        r.x_min -= crop.x_min;
        r.x_max -= crop.x_min;
        r.y_min -= crop.y_min;
        r.y_max -= crop.y_min;
        r.frame = Frame::crop(crop.x_min, crop.y_min);
    } else {
        const Frame expected = Frame::crop(crop.x_min, crop.y_min);
        if (b.frame != expected)
            throw FrameMismatch("transform_box ToGlobal: box frame " +
                                b.frame.describe() + " != " + expected.describe());
        r.x_min += crop.x_min;
        r.x_max += crop.x_min;
        r.y_min += crop.y_min;
        r.y_max += crop.y_min;
        r.frame = crop.frame;
    }
    return r;
}

}  // namespace poleinspect::geometry
