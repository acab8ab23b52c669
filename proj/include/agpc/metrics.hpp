#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "agpc/image.hpp"

namespace agpc {

/// Dataset-wide pixel counters.
struct ConfusionCounts {
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;

    std::int64_t total() const { return tp + fp + fn + tn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp, fp += o.fp, fn += o.fn, tn += o.tn;
        return *this;
    }
    friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct BinarizeRule {
    enum class Kind { Fixed, HalfMax };
    Kind kind = Kind::Fixed;
    double threshold = 0.5;

    static BinarizeRule fixed(double t) { return {Kind::Fixed, t}; }
    /// T = 0.5 * max(map); a map with no positive value binarizes to all zeros.
    static BinarizeRule half_max() { return {Kind::HalfMax, 0.0}; }
};

/// pixel >= T -> 1.
Mask binarize_saliency(const Image& map, BinarizeRule rule);

/// Adds the counts of one prediction; nonzero mask entries are positives.
void accumulate(ConfusionCounts& counts, const Mask& pred, const Mask& truth);

struct Scores {
    double precision = 0, recall = 0, fmeasure = 0, miou = 0;
};

/// Zero denominators yield 0.
Scores prf_miou(const ConfusionCounts& counts);
/// F from precision and recall alone (0 when both are 0).
double fmeasure(double precision, double recall);

struct RocPoint {
    double threshold, fpr, tpr;
};

/// Sweeps +inf, then 256 thresholds from max down to min of all scores, then -inf. A pixel is
/// positive when score >= threshold. Consecutive duplicate (fpr, tpr) points collapse to the first.
std::vector<RocPoint> roc_curve(const std::vector<Image>& scores, const std::vector<Mask>& truths);

/// Rate pair for one threshold, counted directly.
ConfusionCounts counts_at(const std::vector<Image>& scores, const std::vector<Mask>& truths, double threshold);

/// Trapezoidal area; throws UsageError unless fpr is nondecreasing.
double auc(const std::vector<RocPoint>& points);
double auc(const std::vector<std::pair<double, double>>& points);

/// metric,value
void write_metric_csv(const std::filesystem::path& path, const std::vector<std::pair<std::string, double>>& rows);
/// threshold,fpr,tpr
void write_roc_csv(const std::filesystem::path& path, const std::vector<RocPoint>& points);

}  // namespace agpc
