#pragma once

// Rasters and the binary Netpbm formats used for every image on disk:
// P5 (grayscale, 8- or 16-bit) and P6 (RGB, 8- or 16-bit).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace actnet {

// Interleaved row-major raster with samples scaled to [0, 1].
struct Image {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 1;
    std::vector<double> pixels;

    Image() = default;
    Image(std::size_t w, std::size_t h, std::size_t c, double fill = 0.0)
        : width(w), height(h), channels(c), pixels(w * h * c, fill) {}

    double& at(std::size_t row, std::size_t col, std::size_t ch = 0) {
        return pixels[(row * width + col) * channels + ch];
    }
    double at(std::size_t row, std::size_t col, std::size_t ch = 0) const {
        return pixels[(row * width + col) * channels + ch];
    }
};

// Instance label map: 0 is background, k > 0 is instance k.
struct LabeledMask {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::int32_t> labels;

    LabeledMask() = default;
    LabeledMask(std::size_t w, std::size_t h) : width(w), height(h), labels(w * h, 0) {}

    std::int32_t& at(std::size_t row, std::size_t col) { return labels[row * width + col]; }
    std::int32_t at(std::size_t row, std::size_t col) const { return labels[row * width + col]; }
    std::int32_t max_label() const;
};

class ImageIoError : public std::runtime_error {
public:
    ImageIoError(const std::filesystem::path& path, const std::string& what)
        : std::runtime_error(path.string() + ": " + what), path_(path) {}
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

// ITU-R 601 luma: 0.299 R + 0.587 G + 0.114 B. Grayscale input is returned as is.
Image to_luma(const Image& image);

Image read_pnm(const std::filesystem::path& path);
// Writes P5 for one channel, P6 for three; samples are clamped and rounded to 8 bits.
void write_pnm(const std::filesystem::path& path, const Image& image);

// Label masks are stored as 16-bit P5 files; label values above 65535 are rejected.
LabeledMask read_label_mask(const std::filesystem::path& path);
void write_label_mask(const std::filesystem::path& path, const LabeledMask& mask);

}  // namespace actnet
