#pragma once

#include <string>

#include "poleinspect/geometry.hpp"

namespace poleinspect::detector {

/// A scored box emitted by a detector, in the frame of the raster it was
/// detected on.
struct Detection {
    geometry::BoundingBox box;
    std::string class_name;
    double confidence = 0.0;

    bool operator==(const Detection&) const = default;
};

}  // namespace poleinspect::detector
