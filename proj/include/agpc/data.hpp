#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "agpc/image.hpp"

namespace agpc {

// ---- PGM (binary P5) -------------------------------------------------------------------------

struct PgmData {
    int width = 0, height = 0, maxval = 0;
    std::vector<std::uint16_t> samples;  // row-major, raw values in [0, maxval]
};

/// Header whitespace and '#' comments are accepted. 16-bit samples are big-endian.
PgmData decode_pgm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_pgm(const PgmData& pgm);

PgmData read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const PgmData& pgm);

/// Samples divided by maxval.
Image read_image(const std::filesystem::path& path);
/// round(clamp(v, 0, 1) * maxval); maxval 255 or 65535.
void write_image(const std::filesystem::path& path, const Image& image, int maxval = 255);
/// 8-bit {0,255} only; anything else is a ValidationError.
Mask read_mask(const std::filesystem::path& path);
void write_mask(const std::filesystem::path& path, const Mask& mask);

/// Per-map min/max normalization to 8 bits (a constant map becomes 0).
Image normalize_unit(const Image& image);

/// "Pf" little-endian float map, rows stored bottom to top.
void write_pfm(const std::filesystem::path& path, const Image& image);
Image read_pfm(const std::filesystem::path& path);

// ---- Dataset index ---------------------------------------------------------------------------

struct IndexEntry {
    std::filesystem::path image, mask;
    std::vector<Pixel> centroids;
    friend bool operator==(const IndexEntry&, const IndexEntry&) = default;
};

struct DatasetIndex {
    std::string split = "train";
    std::vector<IndexEntry> entries;
    friend bool operator==(const DatasetIndex&, const DatasetIndex&) = default;
};

/// Lines "image,mask,cy:cx;cy:cx"; an optional "# split=<name>" line sets the split. Relative paths
/// are resolved against the index file's directory.
DatasetIndex load_index(const std::filesystem::path& path);
/// Paths under the index directory are written relative to it.
void save_index(const DatasetIndex& index, const std::filesystem::path& path);
DatasetIndex merge_indices(const DatasetIndex& a, const DatasetIndex& b);
/// Checks files exist, masks are binary and match image extents, and each centroid is a positive
/// mask pixel. Throws ValidationError listing every offending entry.
void validate_index(const DatasetIndex& index);

// ---- Geometry --------------------------------------------------------------------------------

enum class Anchor { TopLeft, BottomLeft, TopRight, BottomRight, Center };
inline constexpr Anchor kAnchors[] = {Anchor::TopLeft, Anchor::BottomLeft, Anchor::TopRight, Anchor::BottomRight,
                                      Anchor::Center};
std::string to_string(Anchor anchor);

inline constexpr int kCropSize = 256;
inline constexpr int kCornerInset = 16;

/// Origin of a crop that places `centroid` at the anchor position (16 px from the touched edges for
/// corners, at crop/2 for the center), clamped into the image. Throws UsageError if the image is
/// smaller than the crop.
Pixel crop_origin(int height, int width, Pixel centroid, Anchor anchor, int crop = kCropSize);

template <typename Raster>
Raster crop(const Raster& raster, Pixel origin, int size) {
    return raster.block(origin.row, origin.col, size, size);
}

/// Counterclockwise rotation about `center` (default: the geometric center). Image samples are
/// bilinear, mask samples nearest; everything outside the source frame is 0.
Image rotate_image(const Image& image, double angle_deg, std::optional<std::pair<double, double>> center = {});
Mask rotate_mask(const Mask& mask, double angle_deg, std::optional<std::pair<double, double>> center = {});

/// Aspect-preserving resize of the long side to `side`, zero-padded at the bottom/right to a square.
struct Resized {
    Image image;
    Mask mask;
    std::vector<Pixel> centroids;  // mapped, then snapped to the nearest positive mask pixel
};
Resized resize_to_square(const Image& image, const Mask& mask, const std::vector<Pixel>& centroids, int side = 512);

// ---- Augmentation ----------------------------------------------------------------------------

inline constexpr double kBaseAngles[] = {0, 45, 90, 135, 180};
inline constexpr double kAngleJitter = 10.0;

/// Per target: 5 anchored 256x256 crops; for "train" each crop also gets 5 rotations (base angle
/// plus uniform jitter) about the target, for "test" none. Writes images/ and masks/ under
/// `out_dir` and returns the new index (split preserved). Entries without centroids are skipped.
DatasetIndex augment_sirst(const DatasetIndex& index, const std::string& split, std::uint64_t seed,
                           const std::filesystem::path& out_dir);

// ---- Synthetic scenes ------------------------------------------------------------------------

struct SceneSpec {
    int size = 256;
    double background = 0.3;
    double clutter_amplitude = 0.06;  // std of the smoothed clutter field
    double clutter_smoothing = 4.0;   // Gaussian smoothing sigma in px
    double sensor_noise = 0.01;
    int min_targets = 1, max_targets = 3;
    double sigma_min = 0.8, sigma_max = 2.5;
    double contrast_min = 0.3, contrast_max = 0.6;
    int border = 12;  // target centers keep this distance from the frame

    void validate() const;
};

struct Scene {
    Image image;
    Mask mask;
    std::vector<Pixel> centroids;
};

/// Targets are isotropic Gaussians added over clutter; the mask keeps pixels >= half the peak.
Scene generate_scene(const SceneSpec& spec, std::mt19937_64& rng);
std::vector<Scene> generate_scenes(const SceneSpec& spec, int count, std::uint64_t seed);

/// Writes images/, masks/ and index.csv under `out_dir`.
DatasetIndex synth_generate(const SceneSpec& spec, int count, std::uint64_t seed, const std::filesystem::path& out_dir,
                            const std::string& split = "train");

}  // namespace agpc
