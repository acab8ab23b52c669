#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "agpc/data.hpp"
#include "agpc/errors.hpp"

namespace agpc {

namespace {

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void dump(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ValidationError("failed writing " + path.string());
}

bool is_space(std::uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

class HeaderReader {
public:
    explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    void skip_separators() {
        while (pos_ < bytes_.size()) {
            if (is_space(bytes_[pos_])) {
                ++pos_;
            } else if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else {
                break;
            }
        }
    }

    int number(const char* what, long max) {
        skip_separators();
        const std::size_t start = pos_;
        long value = 0;
        while (pos_ < bytes_.size() && bytes_[pos_] >= '0' && bytes_[pos_] <= '9') {
            value = value * 10 + (bytes_[pos_] - '0');
            if (value > max) throw FormatError(std::string(what) + " out of range", start);
            ++pos_;
        }
        if (pos_ == start) throw FormatError(std::string("expected ") + what, start);
        return static_cast<int>(value);
    }

    std::size_t& pos() { return pos_; }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

PgmData decode_pgm(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw FormatError("not a binary PGM (missing P5 magic)", 0);
    HeaderReader header(bytes);
    header.pos() = 2;
    PgmData pgm;
    pgm.width = header.number("width", 1 << 20);
    pgm.height = header.number("height", 1 << 20);
    pgm.maxval = header.number("maxval", 65535);
    std::size_t& pos = header.pos();
    if (pgm.width < 1 || pgm.height < 1) throw FormatError("PGM extents must be positive", pos);
    if (pgm.maxval < 1) throw FormatError("PGM maxval must be positive", pos);
    if (pos >= bytes.size() || !is_space(bytes[pos])) throw FormatError("expected whitespace after maxval", pos);
    ++pos;

    const std::size_t count = static_cast<std::size_t>(pgm.width) * static_cast<std::size_t>(pgm.height);
    const std::size_t width_bytes = pgm.maxval < 256 ? 1 : 2;
    if (bytes.size() - pos < count * width_bytes)
        throw FormatError("truncated PGM payload: need " + std::to_string(count * width_bytes) + " bytes", bytes.size());
    pgm.samples.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t at = pos + i * width_bytes;
        const std::uint16_t v = width_bytes == 1 ? bytes[at] : static_cast<std::uint16_t>((bytes[at] << 8) | bytes[at + 1]);
        if (v > pgm.maxval) throw FormatError("PGM sample exceeds maxval", at);
        pgm.samples[i] = v;
    }
    return pgm;
}

std::vector<std::uint8_t> encode_pgm(const PgmData& pgm) {
    if (pgm.width < 1 || pgm.height < 1 || pgm.maxval < 1 || pgm.maxval > 65535)
        throw UsageError("invalid PGM header values");
    if (pgm.samples.size() != static_cast<std::size_t>(pgm.width) * static_cast<std::size_t>(pgm.height))
        throw UsageError("PGM sample count does not match extents");
    const std::string header = "P5\n" + std::to_string(pgm.width) + " " + std::to_string(pgm.height) + "\n" +
                               std::to_string(pgm.maxval) + "\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    for (std::uint16_t v : pgm.samples) {
        if (v > pgm.maxval) throw UsageError("PGM sample exceeds maxval");
        if (pgm.maxval < 256) {
            out.push_back(static_cast<std::uint8_t>(v));
        } else {
            out.push_back(static_cast<std::uint8_t>(v >> 8));
            out.push_back(static_cast<std::uint8_t>(v & 0xFF));
        }
    }
    return out;
}

PgmData read_pgm(const std::filesystem::path& path) {
    return decode_pgm(slurp(path));
}

void write_pgm(const std::filesystem::path& path, const PgmData& pgm) { dump(path, encode_pgm(pgm)); }

Image read_image(const std::filesystem::path& path) {
    const PgmData pgm = read_pgm(path);
    Image out(pgm.height, pgm.width);
    const float maxval = static_cast<float>(pgm.maxval);
    for (std::size_t i = 0; i < pgm.samples.size(); ++i) out.data()[i] = static_cast<float>(pgm.samples[i]) / maxval;
    return out;
}

void write_image(const std::filesystem::path& path, const Image& image, int maxval) {
    if (maxval != 255 && maxval != 65535) throw UsageError("image maxval must be 255 or 65535");
    PgmData pgm{static_cast<int>(image.cols()), static_cast<int>(image.rows()), maxval, {}};
    pgm.samples.resize(static_cast<std::size_t>(image.size()));
    for (Eigen::Index i = 0; i < image.size(); ++i) {
        const double v = std::clamp(static_cast<double>(image.data()[i]), 0.0, 1.0);
        pgm.samples[static_cast<std::size_t>(i)] = static_cast<std::uint16_t>(std::lround(v * maxval));
    }
    write_pgm(path, pgm);
}

Mask read_mask(const std::filesystem::path& path) {
    const PgmData pgm = read_pgm(path);
    if (pgm.maxval != 255) throw ValidationError(path.string() + ": mask must be 8-bit");
    Mask out(pgm.height, pgm.width);
    for (std::size_t i = 0; i < pgm.samples.size(); ++i) {
        const auto v = pgm.samples[i];
        if (v != 0 && v != 255) throw ValidationError(path.string() + ": mask is not binary {0,255}");
        out.data()[i] = v ? 1 : 0;
    }
    return out;
}

void write_mask(const std::filesystem::path& path, const Mask& mask) {
    PgmData pgm{static_cast<int>(mask.cols()), static_cast<int>(mask.rows()), 255, {}};
    pgm.samples.resize(static_cast<std::size_t>(mask.size()));
    for (Eigen::Index i = 0; i < mask.size(); ++i) pgm.samples[static_cast<std::size_t>(i)] = mask.data()[i] ? 255 : 0;
    write_pgm(path, pgm);
}

Image normalize_unit(const Image& image) {
    if (image.size() == 0) return image;
    const float lo = image.minCoeff(), hi = image.maxCoeff();
    if (!(hi > lo)) return Image::Zero(image.rows(), image.cols());
    return (image.array() - lo) / (hi - lo);
}

void write_pfm(const std::filesystem::path& path, const Image& image) {
    const std::string header = "Pf\n" + std::to_string(image.cols()) + " " + std::to_string(image.rows()) + "\n-1.0\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    static_assert(std::endian::native == std::endian::little, "PFM writer assumes a little-endian host");
    for (Eigen::Index r = image.rows() - 1; r >= 0; --r) {
        const auto* row = reinterpret_cast<const std::uint8_t*>(image.row(r).data());
        out.insert(out.end(), row, row + image.cols() * sizeof(float));
    }
    dump(path, out);
}

Image read_pfm(const std::filesystem::path& path) {
    const auto bytes = slurp(path);
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != 'f') throw FormatError("not a grayscale PFM (missing Pf magic)", 0);
    HeaderReader header(bytes);
    header.pos() = 2;
    const int width = header.number("width", 1 << 20);
    const int height = header.number("height", 1 << 20);
    header.skip_separators();
    std::size_t& pos = header.pos();
    const std::size_t scale_start = pos;
    while (pos < bytes.size() && !is_space(bytes[pos])) ++pos;
    double scale = 0;
    try {
        scale = std::stod(std::string(bytes.begin() + static_cast<std::ptrdiff_t>(scale_start), bytes.begin() + static_cast<std::ptrdiff_t>(pos)));
    } catch (const std::exception&) {
        throw FormatError("bad PFM scale", scale_start);
    }
    if (scale == 0 || pos >= bytes.size()) throw FormatError("bad PFM scale", scale_start);
    ++pos;
    const std::size_t need = static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * sizeof(float);
    if (width < 1 || height < 1) throw FormatError("PFM extents must be positive", pos);
    if (bytes.size() - pos < need) throw FormatError("truncated PFM payload", bytes.size());
    Image out(height, width);
    const bool swap = (scale > 0) == (std::endian::native == std::endian::little);
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c) {
            std::uint32_t raw;
            std::memcpy(&raw, bytes.data() + pos + (static_cast<std::size_t>(height - 1 - r) * width + c) * 4, 4);
            if (swap) raw = __builtin_bswap32(raw);
            out(r, c) = std::bit_cast<float>(raw);
        }
    return out;
}

}  // namespace agpc
