#include <catch2/catch_amalgamated.hpp>

#include "poleinspect/geometry.hpp"
#include "poleinspect/rng.hpp"
#include "support/oracles.hpp"

using namespace poleinspect;
using geometry::BoundingBox;
using geometry::Frame;
using geometry::ImageExtent;
using geometry::TransformDirection;

namespace {

BoundingBox box(double x0, double y0, double x1, double y1,
                Frame frame = Frame::global()) {
    return BoundingBox{x0, y0, x1, y1, frame};
}

}  // namespace

TEST_CASE("iou identity and disjoint cases") {
    const auto a = box(3, 4, 10, 20);
    CHECK(geometry::iou(a, a) == 1.0);
    CHECK(geometry::iou(box(0, 0, 10, 10), box(20, 20, 30, 30)) == 0.0);
    CHECK(geometry::iou(box(0, 0, 10, 10), box(5, 0, 15, 10)) ==
          Catch::Approx(50.0 / 150.0).epsilon(1e-12));
}

TEST_CASE("iou zero-area union is zero by convention") {
    const auto degenerate = box(5, 5, 5, 5);
    CHECK(geometry::iou(degenerate, degenerate) == 0.0);
}

TEST_CASE("iou rejects frame mismatch") {
    const auto a = box(0, 0, 10, 10);
    const auto b = box(0, 0, 10, 10, Frame::crop(1, 2));
    CHECK_THROWS_AS(geometry::iou(a, b), FrameMismatch);
}

TEST_CASE("iou rejects invalid boxes") {
    CHECK_THROWS_AS(geometry::iou(box(10, 0, 0, 10), box(0, 0, 1, 1)), InvalidParams);
    CHECK_THROWS_AS(
        geometry::iou(box(0, 0, std::numeric_limits<double>::quiet_NaN(), 1),
                      box(0, 0, 1, 1)),
        InvalidParams);
}

TEST_CASE("iou properties: symmetric, in range, 1 iff identical") {
    rng::Engine eng(20240401);
    for (int trial = 0; trial < 500; ++trial) {
        const auto rand_box = [&eng]() {
            const double x0 = rng::uniform(eng, 0, 50);
            const double y0 = rng::uniform(eng, 0, 50);
            return box(x0, y0, x0 + rng::uniform(eng, 0, 30),
                       y0 + rng::uniform(eng, 0, 30));
        };
        const auto a = rand_box();
        const auto b = rand_box();
        const double ab = geometry::iou(a, b);
        CHECK(ab == geometry::iou(b, a));
        CHECK(ab >= 0.0);
        CHECK(ab <= 1.0);
        if (ab == 1.0) {
            CHECK(a == b);
            CHECK(a.area() > 0.0);
        }
    }
}

TEST_CASE("iou agrees with pixel-count oracle on integer boxes") {
    rng::Engine eng(777);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto rand_box = [&eng]() {
            const double x0 = static_cast<double>(rng::uniform_int(eng, 0, 40));
            const double y0 = static_cast<double>(rng::uniform_int(eng, 0, 40));
            return box(x0, y0, x0 + static_cast<double>(rng::uniform_int(eng, 1, 24)),
                       y0 + static_cast<double>(rng::uniform_int(eng, 1, 24)));
        };
        const auto a = rand_box();
        const auto b = rand_box();
        std::int64_t union_cells = 0;
        const double oracle = oracles::pixel_iou(a, b, &union_cells);
        const double tol = 1.0 / static_cast<double>(union_cells);
        CHECK(std::abs(geometry::iou(a, b) - oracle) <= tol);
    }
}

TEST_CASE("clip_box clamps to the extent and is idempotent") {
    const ImageExtent extent{100, 100};
    CHECK(geometry::clip_box(box(-5, -5, 10, 10), extent) == box(0, 0, 10, 10));
    CHECK(geometry::clip_box(box(0, 0, 50, 50), extent) == box(0, 0, 50, 50));
    CHECK(geometry::clip_box(box(90, 90, 200, 300), extent) == box(90, 90, 100, 100));

    rng::Engine eng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const auto b = box(rng::uniform(eng, -50, 150), rng::uniform(eng, -50, 150),
                           rng::uniform(eng, 150, 400), rng::uniform(eng, 150, 400));
        const auto once = geometry::clip_box(b, extent);
        CHECK(geometry::clip_box(once, extent) == once);
        CHECK(once.frame == b.frame);
    }
}

TEST_CASE("transform_box translation examples") {
    const auto crop = box(100, 200, 400, 800);
    const auto local = geometry::transform_box(box(100, 200, 110, 210), crop,
                                               TransformDirection::ToLocal);
    CHECK(local == box(0, 0, 10, 10, Frame::crop(100, 200)));

    const auto global = geometry::transform_box(
        box(3, 4, 8, 9, Frame::crop(50, 60)), box(50, 60, 90, 100),
        TransformDirection::ToGlobal);
    CHECK(global == box(53, 64, 58, 69));
}

TEST_CASE("transform_box frame checks") {
    const auto crop = box(10, 10, 50, 50);
    CHECK_THROWS_AS(
        geometry::transform_box(box(0, 0, 5, 5, Frame::crop(1, 1)), crop,
                                TransformDirection::ToLocal),
        FrameMismatch);
    CHECK_THROWS_AS(geometry::transform_box(box(0, 0, 5, 5), crop,
                                            TransformDirection::ToGlobal),
                    FrameMismatch);
    CHECK_THROWS_AS(
        geometry::transform_box(box(0, 0, 5, 5, Frame::crop(9, 10)), crop,
                                TransformDirection::ToGlobal),
        FrameMismatch);
}

TEST_CASE("transform_box round-trips are exact") {
    // Pixel-scale coordinates: multiples of 1/4 up to 5000, integer crop
    // origins, mirroring what the cascade actually produces.
    rng::Engine eng(31337);
    for (int trial = 0; trial < 1000; ++trial) {
        const double x0 = static_cast<double>(rng::uniform_int(eng, 0, 20000)) / 4.0;
        const double y0 = static_cast<double>(rng::uniform_int(eng, 0, 20000)) / 4.0;
        const auto b = box(x0, y0,
                           x0 + static_cast<double>(rng::uniform_int(eng, 0, 4000)) / 4.0,
                           y0 + static_cast<double>(rng::uniform_int(eng, 0, 4000)) / 4.0);
        const double cx = static_cast<double>(rng::uniform_int(eng, 0, 5000));
        const double cy = static_cast<double>(rng::uniform_int(eng, 0, 5000));
        const auto crop = box(cx, cy, cx + 500, cy + 500);

        const auto local = geometry::transform_box(b, crop, TransformDirection::ToLocal);
        const auto back = geometry::transform_box(local, crop, TransformDirection::ToGlobal);
        CHECK(back == b);  // bitwise equality, not approximate

        // And the other composition order, starting from a local box.
        const auto as_local = box(x0, y0, b.x_max, b.y_max, Frame::crop(cx, cy));
        const auto up = geometry::transform_box(as_local, crop, TransformDirection::ToGlobal);
        const auto down = geometry::transform_box(up, crop, TransformDirection::ToLocal);
        CHECK(down == as_local);
    }
}

TEST_CASE("transform_box composes across nested crops") {
    // A half-region inside a crop: mapping a detection up two levels matches
    // adding both origins, and the frame tags track each level.
    const auto crop = box(100, 220, 400, 820);                       // global
    const auto half = box(0, 0, 300, 300, Frame::crop(100, 220));    // crop-local
    const auto det = box(10, 20, 30, 40, Frame::crop(0, 0));         // half-local

    const auto in_crop = geometry::transform_box(det, half, TransformDirection::ToGlobal);
    CHECK(in_crop.frame == Frame::crop(100, 220));
    const auto in_global = geometry::transform_box(in_crop, crop, TransformDirection::ToGlobal);
    CHECK(in_global == box(110, 240, 130, 260));
}
