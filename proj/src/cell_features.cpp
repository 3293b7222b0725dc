#include "actnet/cell_features.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace actnet::features {

LabeledMask label_components(const LabeledMask& mask) {
    if (mask.labels.size() != mask.width * mask.height) throw std::invalid_argument("label_components: bad mask size");
    LabeledMask out(mask.width, mask.height);
    std::int32_t next = 0;
    std::vector<std::size_t> stack;
    for (std::size_t start = 0; start < mask.labels.size(); ++start) {
        const std::int32_t value = mask.labels[start];
        if (value < 0) throw std::invalid_argument("label_components: negative label");
        if (value == 0 || out.labels[start] != 0) continue;
        ++next;
        out.labels[start] = next;
        stack.push_back(start);
        while (!stack.empty()) {
            const std::size_t idx = stack.back();
            stack.pop_back();
            const std::size_t r = idx / mask.width, c = idx % mask.width;
            auto visit = [&](std::size_t n) {
                if (mask.labels[n] == value && out.labels[n] == 0) {
                    out.labels[n] = next;
                    stack.push_back(n);
                }
            };
            if (r > 0) visit(idx - mask.width);
            if (r + 1 < mask.height) visit(idx + mask.width);
            if (c > 0) visit(idx - 1);
            if (c + 1 < mask.width) visit(idx + 1);
        }
    }
    return out;
}

std::vector<CellInstance> collect_instances(const LabeledMask& mask) {
    const std::int32_t k = mask.max_label();
    std::vector<CellInstance> cells(static_cast<std::size_t>(k));
    for (std::size_t r = 0; r < mask.height; ++r) {
        for (std::size_t c = 0; c < mask.width; ++c) {
            const std::int32_t l = mask.at(r, c);
            if (l < 0) throw std::invalid_argument("collect_instances: negative label");
            if (l == 0) continue;
            auto& cell = cells[static_cast<std::size_t>(l - 1)];
            if (cell.pixels.empty()) {
                cell.label = l;
                cell.bbox = {r, c, r, c};
            }
            cell.pixels.push_back({r, c});
            cell.bbox.min_row = std::min(cell.bbox.min_row, r);
            cell.bbox.min_col = std::min(cell.bbox.min_col, c);
            cell.bbox.max_row = std::max(cell.bbox.max_row, r);
            cell.bbox.max_col = std::max(cell.bbox.max_col, c);
        }
    }
    for (auto& cell : cells) {
        if (cell.pixels.empty()) {
            throw std::invalid_argument("collect_instances: labels are not contiguous 1.." + std::to_string(k));
        }
        double sr = 0.0, sc = 0.0;
        for (const auto& p : cell.pixels) {
            sr += static_cast<double>(p.row);
            sc += static_cast<double>(p.col);
        }
        const double n = static_cast<double>(cell.pixels.size());
        cell.centroid_row = sr / n;
        cell.centroid_col = sc / n;
    }
    return cells;
}

namespace {

// Occupancy of a cell over its bounding box, optionally padded.
class LocalGrid {
public:
    LocalGrid(const CellInstance& cell, std::size_t pad)
        : r0_(static_cast<long>(cell.bbox.min_row) - static_cast<long>(pad)),
          c0_(static_cast<long>(cell.bbox.min_col) - static_cast<long>(pad)),
          h_(cell.bbox.max_row - cell.bbox.min_row + 1 + 2 * pad),
          w_(cell.bbox.max_col - cell.bbox.min_col + 1 + 2 * pad),
          cells_(h_ * w_, -1) {
        for (std::size_t i = 0; i < cell.pixels.size(); ++i) {
            cells_[index(static_cast<long>(cell.pixels[i].row), static_cast<long>(cell.pixels[i].col))] =
                static_cast<long>(i);
        }
    }
    // Pixel index into cell.pixels, or -1 when outside the instance.
    long lookup(long row, long col) const {
        const long lr = row - r0_, lc = col - c0_;
        if (lr < 0 || lc < 0 || lr >= static_cast<long>(h_) || lc >= static_cast<long>(w_)) return -1;
        return cells_[static_cast<std::size_t>(lr) * w_ + static_cast<std::size_t>(lc)];
    }

private:
    std::size_t index(long row, long col) const {
        return static_cast<std::size_t>(row - r0_) * w_ + static_cast<std::size_t>(col - c0_);
    }
    long r0_, c0_;
    std::size_t h_, w_;
    std::vector<long> cells_;
};

struct Point {
    long long x, y;
};

long long cross(const Point& o, const Point& a, const Point& b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

// Twice the area of the convex hull (monotone chain).
long long hull_area2(std::vector<Point> pts) {
    std::sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
    pts.erase(std::unique(pts.begin(), pts.end(), [](const Point& a, const Point& b) { return a.x == b.x && a.y == b.y; }),
              pts.end());
    if (pts.size() < 3) return 0;
    std::vector<Point> hull(2 * pts.size());
    std::size_t k = 0;
    for (const auto& p : pts) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
        hull[k++] = p;
    }
    for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
        while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    hull.resize(k - 1);
    long long a2 = 0;
    for (std::size_t i = 0; i < hull.size(); ++i) {
        const auto& p = hull[i];
        const auto& q = hull[(i + 1) % hull.size()];
        a2 += p.x * q.y - q.x * p.y;
    }
    return a2 < 0 ? -a2 : a2;
}

}  // namespace

Morphology morphology_features(const CellInstance& cell) {
    if (cell.pixels.empty()) throw std::invalid_argument("morphology_features: empty instance");
    Morphology m;
    const double n = static_cast<double>(cell.pixels.size());
    m.area = n;
    m.centroid_row = cell.centroid_row;
    m.centroid_col = cell.centroid_col;

    // Moments about the centroid, in bounding-box-local coordinates so the
    // result does not depend on where the instance sits in the image.
    const double lr = cell.centroid_row - static_cast<double>(cell.bbox.min_row);
    const double lc = cell.centroid_col - static_cast<double>(cell.bbox.min_col);
    double srr = 0.0, scc = 0.0, src = 0.0;
    for (const auto& p : cell.pixels) {
        const double dr = static_cast<double>(p.row - cell.bbox.min_row) - lr;
        const double dc = static_cast<double>(p.col - cell.bbox.min_col) - lc;
        srr += dr * dr;
        scc += dc * dc;
        src += dr * dc;
    }
    const double var_r = srr / n + 1.0 / 12.0;
    const double var_c = scc / n + 1.0 / 12.0;
    const double cov = src / n;
    const double half_sum = 0.5 * (var_r + var_c);
    const double root = std::sqrt(0.25 * (var_r - var_c) * (var_r - var_c) + cov * cov);
    const double l1 = half_sum + root;
    const double l2 = std::max(half_sum - root, 0.0);
    m.max_axis = 4.0 * std::sqrt(l1);
    m.min_axis = 4.0 * std::sqrt(l2);
    m.eccentricity = std::sqrt(std::max(0.0, 1.0 - l2 / l1));
    m.orientation = 0.5 * std::atan2(2.0 * cov, var_c - var_r);
    if (m.orientation <= -std::numbers::pi / 2) m.orientation += std::numbers::pi;

    const LocalGrid grid(cell, 0);
    std::vector<Point> corners;
    std::size_t boundary = 0;
    for (const auto& p : cell.pixels) {
        const long r = static_cast<long>(p.row), c = static_cast<long>(p.col);
        const bool interior = grid.lookup(r - 1, c) >= 0 && grid.lookup(r + 1, c) >= 0 &&
                              grid.lookup(r, c - 1) >= 0 && grid.lookup(r, c + 1) >= 0;
        if (interior) continue;
        ++boundary;
        const long long x = static_cast<long long>(p.col - cell.bbox.min_col);
        const long long y = static_cast<long long>(p.row - cell.bbox.min_row);
        corners.push_back({x, y});
        corners.push_back({x + 1, y});
        corners.push_back({x, y + 1});
        corners.push_back({x + 1, y + 1});
    }
    m.perimeter = static_cast<double>(boundary);
    const double hull = 0.5 * static_cast<double>(hull_area2(std::move(corners)));
    m.solidity = hull > 0.0 ? std::min(1.0, n / hull) : 1.0;
    return m;
}

IntensityStats intensity_features(const CellInstance& cell, const Image& gray, const LabeledMask& mask,
                                  std::size_t ring_width) {
    if (cell.pixels.empty()) throw std::invalid_argument("intensity_features: empty instance");
    if (gray.channels != 1) throw std::invalid_argument("intensity_features: expected a single-channel image");
    if (gray.width != mask.width || gray.height != mask.height) {
        throw std::invalid_argument("intensity_features: image and mask dimensions differ");
    }
    IntensityStats s;
    const double n = static_cast<double>(cell.pixels.size());
    double lo = std::numeric_limits<double>::infinity(), hi = -lo, total = 0.0;
    std::array<std::size_t, 256> hist{};
    for (const auto& p : cell.pixels) {
        const double v = gray.at(p.row, p.col);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
        total += v;
        const auto bin = static_cast<std::size_t>(std::clamp(std::floor(v * 256.0), 0.0, 255.0));
        ++hist[bin];
    }
    s.mean = total / n;
    if (hi > lo) {
        double m2 = 0.0, m3 = 0.0;
        for (const auto& p : cell.pixels) {
            const double d = gray.at(p.row, p.col) - s.mean;
            m2 += d * d;
            m3 += d * d * d;
        }
        m2 /= n;
        m3 /= n;
        s.std = std::sqrt(m2);
        s.skewness = s.std > 0.0 ? m3 / (m2 * s.std) : 0.0;
    } else {
        s.mean = lo;
    }
    for (std::size_t count : hist) {
        if (count == 0) continue;
        const double p = static_cast<double>(count) / n;
        s.entropy -= p * std::log(p);
    }

    const long rw = static_cast<long>(ring_width);
    const LocalGrid grid(cell, ring_width);
    const long h = static_cast<long>(gray.height), w = static_cast<long>(gray.width);
    const long r0 = static_cast<long>(cell.bbox.min_row) - rw, c0 = static_cast<long>(cell.bbox.min_col) - rw;
    const long r1 = static_cast<long>(cell.bbox.max_row) + rw, c1 = static_cast<long>(cell.bbox.max_col) + rw;
    double ring_total = 0.0;
    std::size_t ring_count = 0;
    for (long r = std::max(0L, r0); r <= std::min(h - 1, r1); ++r) {
        for (long c = std::max(0L, c0); c <= std::min(w - 1, c1); ++c) {
            if (mask.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) != 0) continue;
            bool near = false;
            for (long dr = -rw; dr <= rw && !near; ++dr)
                for (long dc = -rw; dc <= rw && !near; ++dc) near = grid.lookup(r + dr, c + dc) >= 0;
            if (!near) continue;
            ring_total += gray.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
            ++ring_count;
        }
    }
    s.fg_bg_diff = ring_count ? s.mean - ring_total / static_cast<double>(ring_count) : 0.0;
    return s;
}

std::vector<double> glcm_matrix(const CellInstance& cell, const Image& gray, const GlcmConfig& config) {
    if (config.levels < 1) throw std::invalid_argument("glcm_matrix: need at least one level");
    if (gray.channels != 1) throw std::invalid_argument("glcm_matrix: expected a single-channel image");
    const std::size_t levels = config.levels;
    std::vector<double> counts(levels * levels, 0.0);
    if (cell.pixels.size() < 2) return counts;

    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& p : cell.pixels) {
        lo = std::min(lo, gray.at(p.row, p.col));
        hi = std::max(hi, gray.at(p.row, p.col));
    }
    std::vector<std::size_t> level(cell.pixels.size(), 0);
    if (hi > lo) {
        for (std::size_t i = 0; i < cell.pixels.size(); ++i) {
            const double q = (gray.at(cell.pixels[i].row, cell.pixels[i].col) - lo) / (hi - lo);
            level[i] = std::min(levels - 1, static_cast<std::size_t>(q * static_cast<double>(levels)));
        }
    }
    const LocalGrid grid(cell, 0);
    const long d = static_cast<long>(config.distance);
    double total = 0.0;
    for (std::size_t i = 0; i < cell.pixels.size(); ++i) {
        const long r = static_cast<long>(cell.pixels[i].row), c = static_cast<long>(cell.pixels[i].col);
        for (const auto& [dr, dc] : config.directions) {
            const long j = grid.lookup(r + d * dr, c + d * dc);
            if (j < 0) continue;
            const std::size_t a = level[i], b = level[static_cast<std::size_t>(j)];
            counts[a * levels + b] += 1.0;
            counts[b * levels + a] += 1.0;
            total += 2.0;
        }
    }
    if (total > 0.0)
        for (double& v : counts) v /= total;
    return counts;
}

TextureStats texture_stats(const std::vector<double>& glcm, std::size_t levels) {
    if (glcm.size() != levels * levels) throw std::invalid_argument("texture_stats: matrix size mismatch");
    TextureStats t;
    double mass = 0.0;
    for (std::size_t i = 0; i < levels; ++i) {
        for (std::size_t j = 0; j < levels; ++j) {
            const double p = glcm[i * levels + j];
            const double diff = i > j ? static_cast<double>(i - j) : static_cast<double>(j - i);
            t.dissimilarity += p * diff;
            t.homogeneity += p / (1.0 + diff);
            t.asm_ += p * p;
            mass += p;
        }
    }
    if (mass == 0.0) return {};
    t.energy = std::sqrt(t.asm_);
    return t;
}

TextureStats glcm_features(const CellInstance& cell, const Image& gray, const GlcmConfig& config) {
    return texture_stats(glcm_matrix(cell, gray, config), config.levels);
}

FeatureVector describe_instance(const CellInstance& cell, const Image& gray, const LabeledMask& mask,
                                const FeatureConfig& config) {
    const Morphology m = morphology_features(cell);
    const IntensityStats s = intensity_features(cell, gray, mask, config.ring_width);
    const TextureStats t = glcm_features(cell, gray, config.glcm);
    FeatureVector f;
    f.g = {s.mean,       m.orientation, m.solidity, m.perimeter,    m.min_axis,     m.max_axis,
           m.area,       m.eccentricity, s.fg_bg_diff, s.std,       s.skewness,     s.entropy,
           t.dissimilarity, t.homogeneity, t.asm_, t.energy};
    f.centroid_row = m.centroid_row;
    f.centroid_col = m.centroid_col;
    return f;
}

std::vector<FeatureVector> extract_node_features(const Image& image, const LabeledMask& mask,
                                                 const FeatureConfig& config) {
    if (image.width != mask.width || image.height != mask.height) {
        throw std::invalid_argument("extract_node_features: image and mask dimensions differ");
    }
    const Image gray = to_luma(image);
    const auto cells = collect_instances(mask);
    std::vector<FeatureVector> out;
    out.reserve(cells.size());
    for (const auto& cell : cells) out.push_back(describe_instance(cell, gray, mask, config));
    return out;
}

}  // namespace actnet::features
