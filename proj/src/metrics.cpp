#include "agpc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "agpc/errors.hpp"

namespace agpc {

namespace {

double ratio(std::int64_t num, std::int64_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

void check_pairs(const std::vector<Image>& scores, const std::vector<Mask>& truths) {
    if (scores.size() != truths.size()) throw UsageError("score and truth lists differ in length");
    for (std::size_t i = 0; i < scores.size(); ++i)
        if (scores[i].rows() != truths[i].rows() || scores[i].cols() != truths[i].cols())
            throw UsageError("score map " + std::to_string(i) + " does not match its truth mask");
}

std::string format_double(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream out;
    out << std::setprecision(17) << v;
    return out.str();
}

}  // namespace

Mask binarize_saliency(const Image& map, BinarizeRule rule) {
    if (rule.kind == BinarizeRule::Kind::HalfMax) {
        const float peak = map.size() ? map.maxCoeff() : 0.f;
        if (!(peak > 0.f)) return Mask::Zero(map.rows(), map.cols());
        return (map.array() >= 0.5f * peak).cast<std::uint8_t>();
    }
    return (map.cast<double>().array() >= rule.threshold).cast<std::uint8_t>();
}

void accumulate(ConfusionCounts& counts, const Mask& pred, const Mask& truth) {
    if (pred.rows() != truth.rows() || pred.cols() != truth.cols())
        throw UsageError("prediction and truth masks differ in shape");
    for (Eigen::Index i = 0; i < pred.size(); ++i) {
        const bool p = pred.data()[i] != 0, t = truth.data()[i] != 0;
        if (p && t) ++counts.tp;
        else if (p) ++counts.fp;
        else if (t) ++counts.fn;
        else ++counts.tn;
    }
}

double fmeasure(double precision, double recall) {
    return precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
}

Scores prf_miou(const ConfusionCounts& c) {
    Scores s;
    s.precision = ratio(c.tp, c.tp + c.fp);
    s.recall = ratio(c.tp, c.tp + c.fn);
    s.fmeasure = fmeasure(s.precision, s.recall);
    s.miou = ratio(c.tp, c.tp + c.fp + c.fn);
    return s;
}

ConfusionCounts counts_at(const std::vector<Image>& scores, const std::vector<Mask>& truths, double threshold) {
    check_pairs(scores, truths);
    ConfusionCounts c;
    for (std::size_t i = 0; i < scores.size(); ++i) accumulate(c, binarize_saliency(scores[i], BinarizeRule::fixed(threshold)), truths[i]);
    return c;
}

std::vector<RocPoint> roc_curve(const std::vector<Image>& scores, const std::vector<Mask>& truths) {
    check_pairs(scores, truths);
    std::vector<double> pos, neg;
    for (std::size_t i = 0; i < scores.size(); ++i)
        for (Eigen::Index j = 0; j < scores[i].size(); ++j)
            (truths[i].data()[j] ? pos : neg).push_back(scores[i].data()[j]);
    std::sort(pos.begin(), pos.end());
    std::sort(neg.begin(), neg.end());
    auto at_least = [](const std::vector<double>& v, double t) {
        return static_cast<std::int64_t>(v.end() - std::lower_bound(v.begin(), v.end(), t));
    };

    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> thresholds{inf};
    if (!pos.empty() || !neg.empty()) {
        const double lo = std::min(pos.empty() ? inf : pos.front(), neg.empty() ? inf : neg.front());
        const double hi = std::max(pos.empty() ? -inf : pos.back(), neg.empty() ? -inf : neg.back());
        for (int k = 255; k >= 0; --k) thresholds.push_back(lo + (hi - lo) * k / 255.0);
    }
    thresholds.push_back(-inf);

    std::vector<RocPoint> points;
    for (double t : thresholds) {
        const double tpr = ratio(at_least(pos, t), static_cast<std::int64_t>(pos.size()));
        const double fpr = ratio(at_least(neg, t), static_cast<std::int64_t>(neg.size()));
        if (!points.empty() && points.back().fpr == fpr && points.back().tpr == tpr) continue;
        points.push_back({t, fpr, tpr});
    }
    return points;
}

double auc(const std::vector<std::pair<double, double>>& points) {
    double area = 0;
    for (std::size_t i = 1; i < points.size(); ++i) {
        const auto [x0, y0] = points[i - 1];
        const auto [x1, y1] = points[i];
        if (x1 < x0) throw UsageError("ROC points must be sorted by FPR");
        area += (x1 - x0) * (y0 + y1) / 2;
    }
    return area;
}

double auc(const std::vector<RocPoint>& points) {
    std::vector<std::pair<double, double>> xy;
    xy.reserve(points.size());
    for (const auto& p : points) xy.emplace_back(p.fpr, p.tpr);
    return auc(xy);
}

void write_metric_csv(const std::filesystem::path& path, const std::vector<std::pair<std::string, double>>& rows) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << "metric,value\n";
    for (const auto& [name, value] : rows) out << name << ',' << format_double(value) << '\n';
}

void write_roc_csv(const std::filesystem::path& path, const std::vector<RocPoint>& points) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << "threshold,fpr,tpr\n";
    for (const auto& p : points) out << format_double(p.threshold) << ',' << format_double(p.fpr) << ',' << format_double(p.tpr) << '\n';
}

}  // namespace agpc
