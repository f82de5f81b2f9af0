#include <catch2/catch_amalgamated.hpp>
#include <filesystem>

#include "poleinspect/image.hpp"
#include "poleinspect/rng.hpp"

using namespace poleinspect;
using img::Image;

namespace {

Image random_quantized(int w, int h, rng::Engine& eng) {
    Image image(w, h);
    for (float& v : image.pixels)
        v = static_cast<float>(rng::uniform01(eng));
    img::quantize_8bit(image);
    return image;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), {});
}

}  // namespace

TEST_CASE("pgm round-trip is exact for quantized rasters") {
    rng::Engine eng(99);
    const auto image = random_quantized(37, 23, eng);
    const auto dir = std::filesystem::temp_directory_path() / "poleinspect_img_test";
    std::filesystem::create_directories(dir);
    const auto path = dir / "roundtrip.pgm";

    img::save_pgm(image, path);
    const auto loaded = img::load_pgm(path);
    REQUIRE(loaded.width == image.width);
    REQUIRE(loaded.height == image.height);
    CHECK(loaded.pixels == image.pixels);

    const auto path2 = dir / "roundtrip2.pgm";
    img::save_pgm(loaded, path2);
    CHECK(slurp(path) == slurp(path2));
    std::filesystem::remove_all(dir);
}

TEST_CASE("quantize is idempotent") {
    rng::Engine eng(100);
    auto image = random_quantized(16, 16, eng);
    auto again = image;
    img::quantize_8bit(again);
    CHECK(again.pixels == image.pixels);
}

TEST_CASE("crop extracts the expected window") {
    Image image(10, 10);
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 10; ++x) image.at(x, y) = static_cast<float>(y * 10 + x) / 255.0f;
    const auto c = img::crop(image, 3, 4, 4, 2);
    REQUIRE(c.width == 4);
    REQUIRE(c.height == 2);
    CHECK(c.at(0, 0) == image.at(3, 4));
    CHECK(c.at(3, 1) == image.at(6, 5));
    CHECK_THROWS_AS(img::crop(image, 8, 8, 5, 5), InvalidParams);
}

TEST_CASE("entropy of flat and two-level rasters") {
    Image flat(8, 8, 0.5f);
    img::quantize_8bit(flat);
    CHECK(img::shannon_entropy(img::histogram256(flat, 0, 0, 8, 8)) == 0.0);

    Image two(8, 8, 0.0f);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 4; ++x) two.at(x, y) = 1.0f;
    CHECK(img::shannon_entropy(img::histogram256(two, 0, 0, 8, 8)) ==
          Catch::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("edge density is zero on a flat raster") {
    Image flat(12, 9, 0.25f);
    CHECK(img::edge_density(flat, 0, 0, 12, 9, 0.1) == 0.0);
}

TEST_CASE("integral image matches naive rectangle sums") {
    rng::Engine eng(4242);
    const auto image = random_quantized(21, 17, eng);
    const img::IntegralImage integral(image);
    for (int trial = 0; trial < 300; ++trial) {
        const int x0 = static_cast<int>(rng::uniform_int(eng, 0, 20));
        const int y0 = static_cast<int>(rng::uniform_int(eng, 0, 16));
        const int x1 = static_cast<int>(rng::uniform_int(eng, x0, 21));
        const int y1 = static_cast<int>(rng::uniform_int(eng, y0, 17));
        double naive = 0.0;
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) naive += image.at(x, y);
        CHECK(integral.rect_sum(x0, y0, x1, y1) == Catch::Approx(naive).margin(1e-9));
    }
}

TEST_CASE("orientation integrals partition the gradient magnitude") {
    rng::Engine eng(5150);
    const auto image = random_quantized(24, 24, eng);
    const auto integrals = img::orientation_integrals(image, 8);
    REQUIRE(integrals.size() == 8);

    double total = 0.0;
    for (const auto& integral : integrals)
        total += integral.rect_sum(0, 0, image.width, image.height);

    double expected = 0.0;
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x) {
            double gx, gy;
            img::gradient_at(image, x, y, gx, gy);
            expected += std::sqrt(gx * gx + gy * gy);
        }
    CHECK(total == Catch::Approx(expected).margin(1e-9));
}
