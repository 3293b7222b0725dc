#include "actnet/image.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

namespace actnet {

std::int32_t LabeledMask::max_label() const {
    std::int32_t m = 0;
    for (auto v : labels) m = std::max(m, v);
    return m;
}

Image to_luma(const Image& image) {
    if (image.channels == 1) return image;
    if (image.channels != 3) throw std::invalid_argument("to_luma: expected 1 or 3 channels");
    Image out(image.width, image.height, 1);
    for (std::size_t i = 0; i < image.width * image.height; ++i) {
        const double* px = &image.pixels[i * 3];
        out.pixels[i] = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
    }
    return out;
}

namespace {

struct RawPnm {
    char kind = 0;  // '5' or '6'
    std::size_t width = 0;
    std::size_t height = 0;
    unsigned maxval = 0;
    std::vector<unsigned> samples;
};

RawPnm read_raw(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageIoError(path, "cannot open file");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::size_t pos = 0;
    auto fail = [&](const std::string& what) { throw ImageIoError(path, what + " at byte " + std::to_string(pos)); };
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
        fail("not a binary PGM/PPM (expected P5 or P6)");
    }
    RawPnm raw;
    raw.kind = static_cast<char>(bytes[1]);
    pos = 2;
    auto next_number = [&]() -> unsigned long {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(bytes[pos])) {
                ++pos;
            } else {
                break;
            }
        }
        if (pos >= bytes.size() || !std::isdigit(bytes[pos])) fail("malformed header");
        unsigned long v = 0;
        while (pos < bytes.size() && std::isdigit(bytes[pos])) {
            v = v * 10 + (bytes[pos] - '0');
            if (v > 1u << 24) fail("header value too large");
            ++pos;
        }
        return v;
    };
    raw.width = next_number();
    raw.height = next_number();
    raw.maxval = static_cast<unsigned>(next_number());
    if (raw.width == 0 || raw.height == 0) fail("zero image dimension");
    if (raw.maxval == 0 || raw.maxval > 65535) fail("maxval out of range");
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) fail("missing whitespace after header");
    ++pos;
    const std::size_t channels = raw.kind == '6' ? 3 : 1;
    const std::size_t count = raw.width * raw.height * channels;
    const std::size_t bps = raw.maxval > 255 ? 2 : 1;
    if (bytes.size() - pos < count * bps) fail("truncated pixel data");
    raw.samples.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        unsigned v = bytes[pos + i * bps];
        if (bps == 2) v = (v << 8) | bytes[pos + i * bps + 1];
        if (v > raw.maxval) {
            pos += i * bps;
            fail("sample exceeds maxval");
        }
        raw.samples[i] = v;
    }
    return raw;
}

void write_raw(const std::filesystem::path& path, char kind, std::size_t w, std::size_t h, unsigned maxval,
               const std::vector<unsigned>& samples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ImageIoError(path, "cannot open file for writing");
    out << 'P' << kind << '\n' << w << ' ' << h << '\n' << maxval << '\n';
    std::vector<unsigned char> bytes;
    bytes.reserve(samples.size() * (maxval > 255 ? 2 : 1));
    for (unsigned v : samples) {
        if (maxval > 255) bytes.push_back(static_cast<unsigned char>(v >> 8));
        bytes.push_back(static_cast<unsigned char>(v & 0xff));
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ImageIoError(path, "write failed");
}

}  // namespace

Image read_pnm(const std::filesystem::path& path) {
    const RawPnm raw = read_raw(path);
    Image img(raw.width, raw.height, raw.kind == '6' ? 3 : 1);
    const double scale = 1.0 / raw.maxval;
    for (std::size_t i = 0; i < raw.samples.size(); ++i) img.pixels[i] = raw.samples[i] * scale;
    return img;
}

void write_pnm(const std::filesystem::path& path, const Image& image) {
    if (image.channels != 1 && image.channels != 3) throw ImageIoError(path, "only 1 or 3 channels supported");
    std::vector<unsigned> samples(image.pixels.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        samples[i] = static_cast<unsigned>(std::lround(std::clamp(image.pixels[i], 0.0, 1.0) * 255.0));
    }
    write_raw(path, image.channels == 3 ? '6' : '5', image.width, image.height, 255, samples);
}

LabeledMask read_label_mask(const std::filesystem::path& path) {
    const RawPnm raw = read_raw(path);
    if (raw.kind != '5') throw ImageIoError(path, "label mask must be a grayscale PGM");
    LabeledMask mask(raw.width, raw.height);
    for (std::size_t i = 0; i < raw.samples.size(); ++i) mask.labels[i] = static_cast<std::int32_t>(raw.samples[i]);
    return mask;
}

void write_label_mask(const std::filesystem::path& path, const LabeledMask& mask) {
    std::vector<unsigned> samples(mask.labels.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (mask.labels[i] < 0 || mask.labels[i] > 65535) throw ImageIoError(path, "label outside 16-bit range");
        samples[i] = static_cast<unsigned>(mask.labels[i]);
    }
    write_raw(path, '5', mask.width, mask.height, 65535, samples);
}

}  // namespace actnet
