#include "agpc/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "agpc/errors.hpp"
#include "op_support.hpp"

namespace agpc {

void TrainConfig::validate() const {
    if (batch_size < 1 || epochs < 0) throw UsageError("batch_size must be positive and epochs nonnegative");
    if (base_lr <= 0 || momentum < 0 || weight_decay < 0 || softiou_eps <= 0)
        throw UsageError("learning rate and eps must be positive; momentum and weight decay nonnegative");
}

std::map<std::string, std::string> TrainConfig::to_map() const {
    auto num = [](double v) {
        std::ostringstream out;
        out << std::setprecision(17) << v;
        return out.str();
    };
    return {{"batch_size", std::to_string(batch_size)}, {"epochs", std::to_string(epochs)},
            {"base_lr", num(base_lr)},                 {"momentum", num(momentum)},
            {"weight_decay", num(weight_decay)},       {"seed", std::to_string(seed)},
            {"softiou_eps", num(softiou_eps)}};
}

TrainConfig TrainConfig::from_map(std::map<std::string, std::string>& values) {
    TrainConfig cfg;
    auto take = [&](const char* key, auto&& apply) {
        if (auto it = values.find(key); it != values.end()) {
            try {
                std::size_t used = 0;
                apply(it->second, used);
                if (used != it->second.size()) throw std::invalid_argument(it->second);
            } catch (const std::logic_error&) {
                throw UsageError(std::string("config key '") + key + "': bad value '" + it->second + "'");
            }
            values.erase(it);
        }
    };
    take("batch_size", [&](const std::string& v, std::size_t& used) { cfg.batch_size = std::stoi(v, &used); });
    take("epochs", [&](const std::string& v, std::size_t& used) { cfg.epochs = std::stoi(v, &used); });
    take("base_lr", [&](const std::string& v, std::size_t& used) { cfg.base_lr = std::stod(v, &used); });
    take("momentum", [&](const std::string& v, std::size_t& used) { cfg.momentum = std::stod(v, &used); });
    take("weight_decay", [&](const std::string& v, std::size_t& used) { cfg.weight_decay = std::stod(v, &used); });
    take("seed", [&](const std::string& v, std::size_t& used) { cfg.seed = std::stoull(v, &used); });
    take("softiou_eps", [&](const std::string& v, std::size_t& used) { cfg.softiou_eps = std::stod(v, &used); });
    cfg.validate();
    return cfg;
}

template <typename Scalar>
Tensor<Scalar> soft_iou_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target, double eps) {
    if (pred.shape() != target.shape())
        throw UsageError("soft_iou_loss shape mismatch: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
    const auto p = pred.data();
    const auto y = target.data();
    double sp = 0, sy = 0, spy = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        sp += p[i];
        sy += y[i];
        spy += static_cast<double>(p[i]) * y[i];
    }
    const double inter = spy + eps, uni = sp + sy - spy + eps;
    const double loss = 1.0 - inter / uni;

    auto pi = pred.impl_ptr();
    auto yi = target.impl_ptr();
    return make_result<Scalar>({1}, {static_cast<Scalar>(loss)}, "soft_iou_loss", {pred},
                               [pi, yi, inter, uni](std::span<const Scalar> grad) {
                                   Scalar* gp = detail::grad_ptr(pi);
                                   if (!gp) return;
                                   const double g = grad[0];
                                   const double u2 = uni * uni;
                                   for (std::size_t i = 0; i < pi->data.size(); ++i) {
                                       const double yv = yi->data[i];
                                       gp[i] += static_cast<Scalar>(-g * (yv * uni - inter * (1 - yv)) / u2);
                                   }
                               });
}

Dataset load_dataset(const DatasetIndex& index) {
    Dataset out;
    out.reserve(index.entries.size());
    for (const auto& e : index.entries) {
        Sample s{read_image(e.image), read_mask(e.mask)};
        if (s.image.rows() != s.mask.rows() || s.image.cols() != s.mask.cols())
            throw ValidationError(e.image.string() + ": mask extent differs from image");
        out.push_back(std::move(s));
    }
    return out;
}

Dataset to_dataset(const std::vector<Scene>& scenes) {
    Dataset out;
    out.reserve(scenes.size());
    for (const auto& s : scenes) out.push_back({s.image, s.mask});
    return out;
}

namespace {

std::pair<Tensor<float>, Tensor<float>> make_batch(const Dataset& data, const std::vector<std::size_t>& order,
                                                   std::size_t begin, std::size_t end) {
    std::vector<const Image*> images;
    std::vector<const Mask*> masks;
    for (std::size_t i = begin; i < end; ++i) {
        images.push_back(&data[order[i]].image);
        masks.push_back(&data[order[i]].mask);
    }
    return {to_batch<float>(images), to_batch<float>(masks)};
}

}  // namespace

TrainResult train(AgpcNet<float>& model, OptimizerState<float>& optimizer, const Dataset& data, const TrainConfig& cfg,
                  const TrainHooks& hooks) {
    cfg.validate();
    if (data.empty()) throw UsageError("cannot train on an empty dataset");
    optimizer.momentum = cfg.momentum;
    optimizer.weight_decay = cfg.weight_decay;
    optimizer.base_lr = cfg.base_lr;

    const std::size_t n = data.size(), batch = static_cast<std::size_t>(cfg.batch_size);
    const long per_epoch = static_cast<long>((n + batch - 1) / batch);
    TrainResult result;
    result.total_iter = per_epoch * cfg.epochs;

    std::mt19937_64 shuffle_rng(cfg.seed ^ 0x5DEECE66DULL);
    std::vector<std::size_t> order(n);
    auto params = model.parameters().tensors();
    long iter = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (std::size_t begin = 0; begin < n; begin += batch, ++iter) {
            const auto [x, y] = make_batch(data, order, begin, std::min(n, begin + batch));
            for (auto& p : params) p.zero_grad();
            auto loss = soft_iou_loss(model.forward(x, Mode::Train), y, cfg.softiou_eps);
            backward(loss);
            const double lr = poly_lr(cfg.base_lr, iter, result.total_iter);
            sgd_step(optimizer, params, lr);
            const LossRecord record{iter, lr, static_cast<double>(loss.item())};
            result.log.push_back(record);
            if (hooks.on_iteration) hooks.on_iteration(record);
        }
        if (hooks.on_epoch_end) hooks.on_epoch_end(epoch);
    }
    result.final_lr = result.total_iter > 0 ? poly_lr(cfg.base_lr, result.total_iter, result.total_iter) : cfg.base_lr;
    return result;
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& log) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << "iter,lr,loss\n" << std::setprecision(9);
    for (const auto& r : log) out << r.iter << ',' << r.lr << ',' << r.loss << '\n';
}

std::vector<Image> predict(AgpcNet<float>& model, const Dataset& data, int batch_size) {
    if (batch_size < 1) throw UsageError("batch size must be positive");
    NoGradGuard guard;
    std::vector<Image> maps;
    maps.reserve(data.size());
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t begin = 0;
    while (begin < data.size()) {
        // Batches never mix extents.
        std::size_t end = begin + 1;
        while (end < data.size() && end - begin < static_cast<std::size_t>(batch_size) &&
               data[end].image.rows() == data[begin].image.rows() && data[end].image.cols() == data[begin].image.cols())
            ++end;
        const auto [x, y] = make_batch(data, order, begin, end);
        const auto out = model.forward(x, Mode::Eval);
        for (int i = 0; i < out.dim(0); ++i) maps.push_back(slice_image(out, i));
        begin = end;
    }
    return maps;
}

EvalReport evaluate_maps(const std::vector<Image>& maps, const Dataset& data, double threshold) {
    if (maps.size() != data.size()) throw UsageError("one saliency map per sample is required");
    EvalReport report;
    std::vector<Mask> truths;
    truths.reserve(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        accumulate(report.counts, binarize_saliency(maps[i], BinarizeRule::fixed(threshold)), data[i].mask);
        truths.push_back(data[i].mask);
    }
    report.scores = prf_miou(report.counts);
    report.auc = auc(roc_curve(maps, truths));
    return report;
}

EvalReport evaluate(AgpcNet<float>& model, const Dataset& data, double threshold) {
    return evaluate_maps(predict(model, data), data, threshold);
}

std::vector<std::pair<std::string, double>> EvalReport::rows() const {
    return {{"precision", scores.precision}, {"recall", scores.recall}, {"fmeasure", scores.fmeasure},
            {"miou", scores.miou},           {"auc", auc},              {"tp", static_cast<double>(counts.tp)},
            {"fp", static_cast<double>(counts.fp)}, {"fn", static_cast<double>(counts.fn)}, {"tn", static_cast<double>(counts.tn)}};
}

template Tensor<float> soft_iou_loss(const Tensor<float>&, const Tensor<float>&, double);
template Tensor<double> soft_iou_loss(const Tensor<double>&, const Tensor<double>&, double);

}  // namespace agpc
