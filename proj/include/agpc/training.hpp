#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "agpc/data.hpp"
#include "agpc/metrics.hpp"
#include "agpc/network.hpp"

namespace agpc {

struct TrainConfig {
    int batch_size = 8;
    int epochs = 5;
    double base_lr = 0.05;
    double momentum = 0.9;
    double weight_decay = 0.0004;
    std::uint64_t seed = 0;
    double softiou_eps = 1e-6;

    void validate() const;
    std::map<std::string, std::string> to_map() const;
    /// Applies the keys it knows and erases them from `values`.
    static TrainConfig from_map(std::map<std::string, std::string>& values);
};

/// 1 - (sum p*y + eps) / (sum p + sum y - sum p*y + eps). Differentiable in `pred` only.
template <typename Scalar>
Tensor<Scalar> soft_iou_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target, double eps = 1e-6);

struct Sample {
    Image image;
    Mask mask;
};
using Dataset = std::vector<Sample>;

Dataset load_dataset(const DatasetIndex& index);
Dataset to_dataset(const std::vector<Scene>& scenes);

struct LossRecord {
    long iter;
    double lr, loss;
};

struct TrainResult {
    std::vector<LossRecord> log;
    long total_iter = 0;
    double final_lr = 0;  // poly schedule evaluated at total_iter
};

struct TrainHooks {
    std::function<void(const LossRecord&)> on_iteration;
    std::function<void(int epoch)> on_epoch_end;  // epoch counts from 1
};

/// Seeded shuffle per epoch, SoftIoU, SGD with momentum and weight decay at the poly rate for
/// iteration i of epochs * ceil(N / batch). Throws UsageError on an empty dataset.
TrainResult train(AgpcNet<float>& model, OptimizerState<float>& optimizer, const Dataset& data, const TrainConfig& cfg,
                  const TrainHooks& hooks = {});

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& log);

/// Eval-mode sigmoid maps, one per sample.
std::vector<Image> predict(AgpcNet<float>& model, const Dataset& data, int batch_size = 8);

struct EvalReport {
    ConfusionCounts counts;
    Scores scores;
    double auc = 0;

    std::vector<std::pair<std::string, double>> rows() const;
};

/// Confusion counts at a fixed threshold accumulated over the dataset, plus the ROC area.
EvalReport evaluate_maps(const std::vector<Image>& maps, const Dataset& data, double threshold = 0.5);
EvalReport evaluate(AgpcNet<float>& model, const Dataset& data, double threshold = 0.5);

}  // namespace agpc
