#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <numbers>

#include "agpc/data.hpp"
#include "agpc/errors.hpp"
#include "agpc/ops.hpp"

namespace agpc {

namespace fs = std::filesystem;

std::string to_string(Anchor anchor) {
    switch (anchor) {
        case Anchor::TopLeft: return "tl";
        case Anchor::BottomLeft: return "bl";
        case Anchor::TopRight: return "tr";
        case Anchor::BottomRight: return "br";
        case Anchor::Center: return "c";
    }
    return "?";
}

Pixel crop_origin(int height, int width, Pixel centroid, Anchor anchor, int crop) {
    if (height < crop || width < crop)
        throw UsageError("image " + std::to_string(height) + "x" + std::to_string(width) + " is smaller than the " +
                         std::to_string(crop) + " px crop");
    const int near = kCornerInset, far = crop - 1 - kCornerInset;
    int dy = crop / 2, dx = crop / 2;
    switch (anchor) {
        case Anchor::TopLeft: dy = near, dx = near; break;
        case Anchor::BottomLeft: dy = far, dx = near; break;
        case Anchor::TopRight: dy = near, dx = far; break;
        case Anchor::BottomRight: dy = far, dx = far; break;
        case Anchor::Center: break;
    }
    return {std::clamp(centroid.row - dy, 0, height - crop), std::clamp(centroid.col - dx, 0, width - crop)};
}

namespace {

double snap(double v) {
    const double r = std::round(v);
    return std::abs(v - r) < 1e-9 ? r : v;
}

/// Maps output (y, x) to its source location for a counterclockwise rotation.
struct RotationMap {
    double cy, cx, c, s;

    RotationMap(Eigen::Index rows, Eigen::Index cols, double angle_deg, std::optional<std::pair<double, double>> center) {
        cy = center ? center->first : (static_cast<double>(rows) - 1) / 2;
        cx = center ? center->second : (static_cast<double>(cols) - 1) / 2;
        const double t = angle_deg * std::numbers::pi / 180.0;
        c = std::cos(t);
        s = std::sin(t);
    }

    std::pair<double, double> source(int y, int x) const {
        const double dy = y - cy, dx = x - cx;
        return {snap(cy + c * dy + s * dx), snap(cx - s * dy + c * dx)};
    }
};

}  // namespace

Image rotate_image(const Image& image, double angle_deg, std::optional<std::pair<double, double>> center) {
    const RotationMap map(image.rows(), image.cols(), angle_deg, center);
    const int h = static_cast<int>(image.rows()), w = static_cast<int>(image.cols());
    Image out = Image::Zero(h, w);
    auto tap = [&](int y, int x) { return (y >= 0 && y < h && x >= 0 && x < w) ? static_cast<double>(image(y, x)) : 0.0; };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const auto [sy, sx] = map.source(y, x);
            const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
            const double fy = sy - y0, fx = sx - x0;
            if (fy == 0 && fx == 0) {
                out(y, x) = static_cast<float>(tap(y0, x0));
                continue;
            }
            const double v = (1 - fy) * ((1 - fx) * tap(y0, x0) + fx * tap(y0, x0 + 1)) +
                             fy * ((1 - fx) * tap(y0 + 1, x0) + fx * tap(y0 + 1, x0 + 1));
            out(y, x) = static_cast<float>(v);
        }
    return out;
}

Mask rotate_mask(const Mask& mask, double angle_deg, std::optional<std::pair<double, double>> center) {
    const RotationMap map(mask.rows(), mask.cols(), angle_deg, center);
    const int h = static_cast<int>(mask.rows()), w = static_cast<int>(mask.cols());
    Mask out = Mask::Zero(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const auto [sy, sx] = map.source(y, x);
            const long ry = std::lround(sy), rx = std::lround(sx);
            if (ry >= 0 && ry < h && rx >= 0 && rx < w) out(y, x) = mask(ry, rx) ? 1 : 0;
        }
    return out;
}

Resized resize_to_square(const Image& image, const Mask& mask, const std::vector<Pixel>& centroids, int side) {
    if (image.rows() != mask.rows() || image.cols() != mask.cols()) throw ShapeError("image and mask extents differ");
    if (side < 1) throw UsageError("resize side must be positive");
    const int h = static_cast<int>(image.rows()), w = static_cast<int>(image.cols());
    const double scale = static_cast<double>(side) / std::max(h, w);
    const int nh = std::clamp(static_cast<int>(std::lround(h * scale)), 1, side);
    const int nw = std::clamp(static_cast<int>(std::lround(w * scale)), 1, side);

    Resized out;
    out.image = Image::Zero(side, side);
    out.mask = Mask::Zero(side, side);
    {
        NoGradGuard guard;
        auto t = Tensor<float>::from({1, 1, h, w}, Buffer<float>(image.data(), image.data() + image.size()));
        const auto r = bilinear_resize(t, nh, nw);
        out.image.topLeftCorner(nh, nw) = Eigen::Map<const Image>(r.data().data(), nh, nw);
    }
    for (int y = 0; y < nh; ++y)
        for (int x = 0; x < nw; ++x) {
            const int sy = std::min(h - 1, static_cast<int>((y + 0.5) * h / nh));
            const int sx = std::min(w - 1, static_cast<int>((x + 0.5) * w / nw));
            out.mask(y, x) = mask(sy, sx) ? 1 : 0;
        }

    constexpr int kSearch = 8;
    for (const Pixel& c : centroids) {
        const int my = std::clamp(static_cast<int>(std::lround((c.row + 0.5) * nh / h - 0.5)), 0, nh - 1);
        const int mx = std::clamp(static_cast<int>(std::lround((c.col + 0.5) * nw / w - 0.5)), 0, nw - 1);
        std::optional<Pixel> best;
        int best_d = 0;
        for (int y = std::max(0, my - kSearch); y <= std::min(nh - 1, my + kSearch); ++y)
            for (int x = std::max(0, mx - kSearch); x <= std::min(nw - 1, mx + kSearch); ++x) {
                const int d = (y - my) * (y - my) + (x - mx) * (x - mx);
                if (out.mask(y, x) && (!best || d < best_d)) best = Pixel{y, x}, best_d = d;
            }
        if (best) out.centroids.push_back(*best);
    }
    return out;
}

DatasetIndex augment_sirst(const DatasetIndex& index, const std::string& split, std::uint64_t seed, const fs::path& out_dir) {
    if (split != "train" && split != "test") throw UsageError("split must be 'train' or 'test', got '" + split + "'");
    fs::create_directories(out_dir / "images");
    fs::create_directories(out_dir / "masks");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> jitter(-kAngleJitter, kAngleJitter);

    DatasetIndex result;
    result.split = split;
    for (std::size_t i = 0; i < index.entries.size(); ++i) {
        const IndexEntry& entry = index.entries[i];
        if (entry.centroids.empty()) {
            std::cerr << "warning: skipping " << entry.image.string() << " (no target centroids)\n";
            continue;
        }
        const Resized resized = resize_to_square(read_image(entry.image), read_mask(entry.mask), entry.centroids, 512);
        if (resized.centroids.size() != entry.centroids.size())
            std::cerr << "warning: " << entry.image.string() << ": " << entry.centroids.size() - resized.centroids.size()
                      << " target(s) vanished after resizing\n";

        char prefix[32];
        std::snprintf(prefix, sizeof prefix, "%05zu_", i);
        const std::string stem = prefix + entry.image.stem().string();
        for (std::size_t k = 0; k < resized.centroids.size(); ++k) {
            const Pixel c = resized.centroids[k];
            for (Anchor anchor : kAnchors) {
                const Pixel origin = crop_origin(512, 512, c, anchor);
                const Image image = crop(resized.image, origin, kCropSize);
                const Mask mask = crop(resized.mask, origin, kCropSize);
                const Pixel local{c.row - origin.row, c.col - origin.col};
                const std::string base = stem + "_t" + std::to_string(k) + "_" + to_string(anchor);

                auto emit = [&](const std::string& name, const Image& img, const Mask& m) {
                    const fs::path ip = out_dir / "images" / (name + ".pgm");
                    const fs::path mp = out_dir / "masks" / (name + ".pgm");
                    write_image(ip, img);
                    write_mask(mp, m);
                    result.entries.push_back({ip.lexically_normal(), mp.lexically_normal(), {local}});
                };
                if (split == "test") {
                    emit(base, image, mask);
                    continue;
                }
                for (double angle : kBaseAngles) {
                    const double theta = angle + jitter(rng);
                    const std::pair<double, double> pivot{local.row, local.col};
                    char suffix[16];
                    std::snprintf(suffix, sizeof suffix, "_r%03d", static_cast<int>(angle));
                    emit(base + suffix, rotate_image(image, theta, pivot), rotate_mask(mask, theta, pivot));
                }
            }
        }
    }
    return result;
}

}  // namespace agpc
