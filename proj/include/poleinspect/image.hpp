#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "poleinspect/errors.hpp"

// Grayscale raster support. Pixels are stored as floats in [0, 1]; generated
// scenes are quantized to multiples of 1/255 so that the in-memory raster and
// its 8-bit PGM file are the same image bit for bit.

namespace poleinspect::img {

struct Image {
    int width = 0;
    int height = 0;
    std::vector<float> pixels;  // row-major, [0, 1]

    Image() = default;
    Image(int w, int h, float fill = 0.0f)
        : width(w), height(h),
          pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {}

    bool empty() const { return width <= 0 || height <= 0 || pixels.empty(); }

    float at(int x, int y) const {
        return pixels[static_cast<std::size_t>(y) * width + x];
    }
    float& at(int x, int y) {
        return pixels[static_cast<std::size_t>(y) * width + x];
    }
};

inline void require_nonempty(const Image& image, const char* who) {
    if (image.empty()) throw InvalidImage(std::string(who) + ": empty raster");
}

/// Snaps every pixel to the nearest of the 256 representable 8-bit levels.
inline void quantize_8bit(Image& image) {
    for (float& v : image.pixels) {
        const float c = std::clamp(v, 0.0f, 1.0f);
        v = static_cast<float>(std::lround(c * 255.0f)) / 255.0f;
    }
}

inline std::uint8_t to_byte(float v) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

/// Copies the rectangle [x0, x0+w) x [y0, y0+h); must lie inside the raster.
inline Image crop(const Image& image, int x0, int y0, int w, int h) {
    require_nonempty(image, "crop");
    if (x0 < 0 || y0 < 0 || w <= 0 || h <= 0 || x0 + w > image.width ||
        y0 + h > image.height)
        throw InvalidParams("crop: rectangle outside raster");
    Image out(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(x, y) = image.at(x0 + x, y0 + y);
    return out;
}

// ---------------------------------------------------------------------------
// PGM (binary P5) I/O. Lossless 8-bit grayscale; header + raw bytes, so the
// files are diffable and byte-stable across runs.
// ---------------------------------------------------------------------------

inline void save_pgm(const Image& image, const std::filesystem::path& path) {
    require_nonempty(image, "save_pgm");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("save_pgm: cannot open " + path.string());
    f << "P5\n" << image.width << " " << image.height << "\n255\n";
    std::vector<std::uint8_t> row(static_cast<std::size_t>(image.width));
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) row[static_cast<std::size_t>(x)] = to_byte(image.at(x, y));
        f.write(reinterpret_cast<const char*>(row.data()),
                static_cast<std::streamsize>(row.size()));
    }
    if (!f) throw IoError("save_pgm: write failed for " + path.string());
}

inline Image load_pgm(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("load_pgm: cannot open " + path.string());
    auto next_token = [&f, &path]() {
        std::string tok;
        while (f >> tok) {
            if (tok[0] == '#') {
                std::string rest;
                std::getline(f, rest);
                continue;
            }
            return tok;
        }
        throw InvalidImage("load_pgm: truncated header in " + path.string());
    };
    if (next_token() != "P5")
        throw InvalidImage("load_pgm: not a binary PGM: " + path.string());
    const int w = std::stoi(next_token());
    const int h = std::stoi(next_token());
    const int maxval = std::stoi(next_token());
    if (w <= 0 || h <= 0 || maxval != 255)
        throw InvalidImage("load_pgm: unsupported header in " + path.string());
    f.get();  // single whitespace after maxval
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(w) * h);
    f.read(reinterpret_cast<char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
    if (f.gcount() != static_cast<std::streamsize>(bytes.size()))
        throw InvalidImage("load_pgm: truncated pixel data in " + path.string());
    Image image(w, h);
    for (std::size_t i = 0; i < bytes.size(); ++i)
        image.pixels[i] = static_cast<float>(bytes[i]) / 255.0f;
    return image;
}

// ---------------------------------------------------------------------------
// Histograms, entropy and edges. These back the informative-half heuristic:
// the pole base is sparse, so the half with more intensity diversity (or more
// edge pixels) is the one holding the arms and the cap.
// ---------------------------------------------------------------------------

/// 256-bin intensity histogram over the rectangle [x0, x1) x [y0, y1).
inline std::array<std::uint32_t, 256> histogram256(const Image& image, int x0,
                                                   int y0, int x1, int y1) {
    std::array<std::uint32_t, 256> hist{};
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) ++hist[to_byte(image.at(x, y))];
    return hist;
}

/// Shannon entropy (bits) of a histogram.
inline double shannon_entropy(const std::array<std::uint32_t, 256>& hist) {
    std::uint64_t total = 0;
    for (auto c : hist) total += c;
    if (total == 0) return 0.0;
    double h = 0.0;
    for (auto c : hist) {
        if (c == 0) continue;
        const double p = static_cast<double>(c) / static_cast<double>(total);
        h -= p * std::log2(p);
    }
    return h;
}

/// Gradient by central differences with replicated borders.
inline void gradient_at(const Image& image, int x, int y, double& gx,
                        double& gy) {
    const int xl = std::max(0, x - 1), xr = std::min(image.width - 1, x + 1);
    const int yu = std::max(0, y - 1), yd = std::min(image.height - 1, y + 1);
    gx = (static_cast<double>(image.at(xr, y)) - image.at(xl, y)) / 2.0;
    gy = (static_cast<double>(image.at(x, yd)) - image.at(x, yu)) / 2.0;
}

/// Fraction of pixels in [x0, x1) x [y0, y1) whose gradient magnitude exceeds
/// tau.
inline double edge_density(const Image& image, int x0, int y0, int x1, int y1,
                           double tau) {
    const std::int64_t n =
        static_cast<std::int64_t>(x1 - x0) * static_cast<std::int64_t>(y1 - y0);
    if (n <= 0) return 0.0;
    std::int64_t edges = 0;
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            double gx, gy;
            gradient_at(image, x, y, gx, gy);
            if (std::sqrt(gx * gx + gy * gy) > tau) ++edges;
        }
    }
    return static_cast<double>(edges) / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Integral images. Window features over arbitrary rectangles in O(1).
// ---------------------------------------------------------------------------

class IntegralImage {
public:
    IntegralImage() = default;

    explicit IntegralImage(const Image& image) {
        init(image.width, image.height);
        for (int y = 0; y < height_; ++y)
            for (int x = 0; x < width_; ++x) set_cell(x, y, image.at(x, y));
        accumulate();
    }

    /// Builds from an arbitrary per-pixel value function.
    template <typename F>
    IntegralImage(int width, int height, F&& value) {
        init(width, height);
        for (int y = 0; y < height_; ++y)
            for (int x = 0; x < width_; ++x) set_cell(x, y, value(x, y));
        accumulate();
    }

    /// Sum over [x0, x1) x [y0, y1).
    double rect_sum(int x0, int y0, int x1, int y1) const {
        return at(x1, y1) - at(x0, y1) - at(x1, y0) + at(x0, y0);
    }

    double rect_mean(int x0, int y0, int x1, int y1) const {
        const double n = static_cast<double>(x1 - x0) * (y1 - y0);
        if (n <= 0.0) return 0.0;
        return rect_sum(x0, y0, x1, y1) / n;
    }

    int width() const { return width_; }
    int height() const { return height_; }

private:
    void init(int w, int h) {
        width_ = w;
        height_ = h;
        sums_.assign(static_cast<std::size_t>(w + 1) * (h + 1), 0.0);
    }

    double at(int x, int y) const {
        return sums_[static_cast<std::size_t>(y) * (width_ + 1) + x];
    }

    void set_cell(int x, int y, double v) {
        sums_[static_cast<std::size_t>(y + 1) * (width_ + 1) + (x + 1)] = v;
    }

    void accumulate() {
        for (int y = 1; y <= height_; ++y) {
            double row = 0.0;
            const std::size_t base = static_cast<std::size_t>(y) * (width_ + 1);
            const std::size_t above = base - (width_ + 1);
            for (int x = 1; x <= width_; ++x) {
                row += sums_[base + x];
                sums_[base + x] = row + sums_[above + x];
            }
        }
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<double> sums_;
};

/// Per-orientation-bin integral images of gradient magnitude. Bin k covers
/// angles [-pi + k*2pi/bins, -pi + (k+1)*2pi/bins).
inline std::vector<IntegralImage> orientation_integrals(const Image& image,
                                                        int bins) {
    require_nonempty(image, "orientation_integrals");
    const int w = image.width, h = image.height;
    std::vector<std::vector<double>> planes(
        static_cast<std::size_t>(bins),
        std::vector<double>(static_cast<std::size_t>(w) * h, 0.0));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double gx, gy;
            gradient_at(image, x, y, gx, gy);
            const double mag = std::sqrt(gx * gx + gy * gy);
            if (mag <= 0.0) continue;
            const double angle = std::atan2(gy, gx);  // (-pi, pi]
            int bin = static_cast<int>((angle + std::numbers::pi) /
                                       (2.0 * std::numbers::pi) * bins);
            bin = std::clamp(bin, 0, bins - 1);
            planes[static_cast<std::size_t>(bin)]
                  [static_cast<std::size_t>(y) * w + x] = mag;
        }
    }
    std::vector<IntegralImage> out;
    out.reserve(static_cast<std::size_t>(bins));
    for (int b = 0; b < bins; ++b) {
        const auto& plane = planes[static_cast<std::size_t>(b)];
        out.emplace_back(w, h, [&plane, w](int x, int y) {
            return plane[static_cast<std::size_t>(y) * w + x];
        });
    }
    return out;
}

}  // namespace poleinspect::img
