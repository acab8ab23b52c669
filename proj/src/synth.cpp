#include <algorithm>
#include <cmath>
#include <cstdio>

#include "agpc/data.hpp"
#include "agpc/errors.hpp"

namespace agpc {

namespace fs = std::filesystem;

void SceneSpec::validate() const {
    if (size < 2 * border + 1 || size < 8) throw UsageError("scene size too small for the border");
    if (min_targets < 1 || max_targets < min_targets) throw UsageError("target count range must satisfy 1 <= min <= max");
    if (sigma_min <= 0 || sigma_max < sigma_min || sigma_max > 2.5) throw UsageError("target sigma range must lie in (0, 2.5]");
    if (contrast_min <= 0 || contrast_max < contrast_min) throw UsageError("target contrast range must be positive");
    if (clutter_amplitude < 0 || clutter_smoothing < 0 || sensor_noise < 0) throw UsageError("noise parameters must be nonnegative");
}

namespace {

/// Separable Gaussian blur with edge replication.
Image smooth(const Image& in, double sigma) {
    if (sigma <= 0) return in;
    const int radius = static_cast<int>(std::ceil(3 * sigma));
    std::vector<float> kernel(static_cast<std::size_t>(2 * radius + 1));
    double total = 0;
    for (int i = -radius; i <= radius; ++i) total += kernel[static_cast<std::size_t>(i + radius)] = static_cast<float>(std::exp(-i * i / (2 * sigma * sigma)));
    for (auto& k : kernel) k = static_cast<float>(k / total);

    const int h = static_cast<int>(in.rows()), w = static_cast<int>(in.cols());
    Image tmp(h, w), out(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            float acc = 0;
            for (int i = -radius; i <= radius; ++i) acc += kernel[static_cast<std::size_t>(i + radius)] * in(y, std::clamp(x + i, 0, w - 1));
            tmp(y, x) = acc;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            float acc = 0;
            for (int i = -radius; i <= radius; ++i) acc += kernel[static_cast<std::size_t>(i + radius)] * tmp(std::clamp(y + i, 0, h - 1), x);
            out(y, x) = acc;
        }
    return out;
}

}  // namespace

Scene generate_scene(const SceneSpec& spec, std::mt19937_64& rng) {
    spec.validate();
    const int n = spec.size;
    std::normal_distribution<double> gauss(0.0, 1.0);

    Image clutter(n, n);
    for (Eigen::Index i = 0; i < clutter.size(); ++i) clutter.data()[i] = static_cast<float>(gauss(rng));
    clutter = smooth(clutter, spec.clutter_smoothing);
    const double mean = clutter.mean();
    const double stddev = std::sqrt((clutter.array() - mean).square().mean());
    const double gain = stddev > 0 ? spec.clutter_amplitude / stddev : 0.0;
    Image image = ((clutter.array() - static_cast<float>(mean)) * static_cast<float>(gain) + static_cast<float>(spec.background)).matrix();
    for (Eigen::Index i = 0; i < image.size(); ++i) image.data()[i] += static_cast<float>(spec.sensor_noise * gauss(rng));

    Scene scene;
    scene.mask = Mask::Zero(n, n);
    std::uniform_int_distribution<int> count_dist(spec.min_targets, spec.max_targets);
    std::uniform_int_distribution<int> pos_dist(spec.border, n - 1 - spec.border);
    std::uniform_real_distribution<double> sigma_dist(spec.sigma_min, spec.sigma_max);
    std::uniform_real_distribution<double> contrast_dist(spec.contrast_min, spec.contrast_max);
    const int targets = count_dist(rng);
    for (int t = 0; t < targets; ++t) {
        Pixel c{};
        bool placed = false;
        for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
            c = {pos_dist(rng), pos_dist(rng)};
            placed = std::none_of(scene.centroids.begin(), scene.centroids.end(), [&](const Pixel& o) {
                return std::max(std::abs(o.row - c.row), std::abs(o.col - c.col)) < 12;
            });
        }
        const double sigma = sigma_dist(rng), contrast = contrast_dist(rng);
        if (!placed) continue;
        const int reach = static_cast<int>(std::ceil(4 * sigma));
        for (int y = std::max(0, c.row - reach); y <= std::min(n - 1, c.row + reach); ++y)
            for (int x = std::max(0, c.col - reach); x <= std::min(n - 1, c.col + reach); ++x) {
                const double g = std::exp(-((y - c.row) * (y - c.row) + (x - c.col) * (x - c.col)) / (2 * sigma * sigma));
                image(y, x) += static_cast<float>(contrast * g);
                if (g >= 0.5) scene.mask(y, x) = 1;
            }
        scene.centroids.push_back(c);
    }
    // 8-bit quantization so in-memory scenes equal their on-disk form.
    scene.image = (image.array().max(0.f).min(1.f) * 255.f).round() / 255.f;
    return scene;
}

std::vector<Scene> generate_scenes(const SceneSpec& spec, int count, std::uint64_t seed) {
    if (count < 0) throw UsageError("scene count must be nonnegative");
    std::mt19937_64 rng(seed);
    std::vector<Scene> scenes;
    scenes.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) scenes.push_back(generate_scene(spec, rng));
    return scenes;
}

DatasetIndex synth_generate(const SceneSpec& spec, int count, std::uint64_t seed, const fs::path& out_dir, const std::string& split) {
    const auto scenes = generate_scenes(spec, count, seed);
    fs::create_directories(out_dir / "images");
    fs::create_directories(out_dir / "masks");
    DatasetIndex index;
    index.split = split;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "synth_%05zu.pgm", i);
        const fs::path ip = (out_dir / "images" / name).lexically_normal();
        const fs::path mp = (out_dir / "masks" / name).lexically_normal();
        write_image(ip, scenes[i].image);
        write_mask(mp, scenes[i].mask);
        index.entries.push_back({ip, mp, scenes[i].centroids});
    }
    save_index(index, out_dir / "index.csv");
    return index;
}

}  // namespace agpc
