#include <fstream>
#include <sstream>

#include "agpc/data.hpp"
#include "agpc/errors.hpp"

namespace agpc {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

int parse_coord(const std::string& text, std::size_t offset) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(text, &used);
        if (used == text.size()) return v;
    } catch (const std::exception&) {
    }
    throw FormatError("bad centroid coordinate '" + text + "'", offset);
}

}  // namespace

DatasetIndex load_index(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open index " + path.string());
    const fs::path dir = path.parent_path();
    DatasetIndex index;
    std::string raw;
    std::size_t offset = 0;
    while (std::getline(in, raw)) {
        const std::size_t line_start = offset;
        offset += raw.size() + 1;
        const std::string line = trim(raw);
        if (line.empty()) continue;
        if (line.front() == '#') {
            const std::string body = trim(line.substr(1));
            if (body.rfind("split=", 0) == 0) index.split = trim(body.substr(6));
            continue;
        }
        std::vector<std::string> fields;
        std::stringstream ss(line);
        for (std::string f; std::getline(ss, f, ',');) fields.push_back(trim(f));
        if (line.back() == ',') fields.emplace_back();
        if (fields.size() < 2 || fields.size() > 3 || fields[0].empty() || fields[1].empty())
            throw FormatError(path.string() + ": expected image,mask,cy:cx[;cy:cx...]", line_start);

        IndexEntry entry;
        auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p).lexically_normal() : (dir / p).lexically_normal(); };
        entry.image = resolve(fields[0]);
        entry.mask = resolve(fields[1]);
        if (fields.size() == 3 && !fields[2].empty()) {
            std::stringstream cs(fields[2]);
            for (std::string item; std::getline(cs, item, ';');) {
                item = trim(item);
                const auto colon = item.find(':');
                if (colon == std::string::npos) throw FormatError(path.string() + ": centroid must be cy:cx", line_start);
                entry.centroids.push_back({parse_coord(trim(item.substr(0, colon)), line_start),
                                           parse_coord(trim(item.substr(colon + 1)), line_start)});
            }
        }
        index.entries.push_back(std::move(entry));
    }
    return index;
}

void save_index(const DatasetIndex& index, const fs::path& path) {
    const fs::path dir = path.parent_path();
    auto relative = [&](const fs::path& p) {
        fs::path rel = p.lexically_relative(dir.empty() ? fs::path(".") : dir);
        if (rel.empty()) rel = fs::absolute(p).lexically_normal();
        const std::string s = rel.generic_string();
        if (s.find(',') != std::string::npos || s.find('\n') != std::string::npos)
            throw UsageError("index paths may not contain commas or newlines: " + s);
        return s;
    };
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write index " + path.string());
    out << "# split=" << index.split << '\n';
    for (const auto& e : index.entries) {
        out << relative(e.image) << ',' << relative(e.mask) << ',';
        for (std::size_t i = 0; i < e.centroids.size(); ++i) out << (i ? ";" : "") << e.centroids[i].row << ':' << e.centroids[i].col;
        out << '\n';
    }
    if (!out) throw ValidationError("failed writing index " + path.string());
}

DatasetIndex merge_indices(const DatasetIndex& a, const DatasetIndex& b) {
    DatasetIndex out = a;
    out.entries.insert(out.entries.end(), b.entries.begin(), b.entries.end());
    return out;
}

void validate_index(const DatasetIndex& index) {
    std::vector<std::string> problems;
    for (std::size_t i = 0; i < index.entries.size(); ++i) {
        const auto& e = index.entries[i];
        auto report = [&](const std::string& why) {
            problems.push_back("entry " + std::to_string(i) + " (" + e.image.string() + "): " + why);
        };
        if (!fs::exists(e.image)) {
            report("image file missing");
            continue;
        }
        if (!fs::exists(e.mask)) {
            report("mask file missing " + e.mask.string());
            continue;
        }
        try {
            const PgmData image = read_pgm(e.image);
            const Mask mask = read_mask(e.mask);
            if (mask.rows() != image.height || mask.cols() != image.width) {
                report("mask extent differs from image");
                continue;
            }
            for (const Pixel& c : e.centroids) {
                if (c.row < 0 || c.col < 0 || c.row >= mask.rows() || c.col >= mask.cols())
                    report("centroid " + std::to_string(c.row) + ":" + std::to_string(c.col) + " outside the image");
                else if (!mask(c.row, c.col))
                    report("centroid " + std::to_string(c.row) + ":" + std::to_string(c.col) + " is not on a mask pixel");
            }
        } catch (const std::exception& ex) {
            report(ex.what());
        }
    }
    if (!problems.empty()) {
        std::string msg = std::to_string(problems.size()) + " index problem(s):";
        for (const auto& p : problems) msg += "\n  " + p;
        throw ValidationError(msg);
    }
}

}  // namespace agpc
