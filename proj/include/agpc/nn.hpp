#pragma once

#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "agpc/ops.hpp"
#include "agpc/tensor.hpp"

namespace agpc {

enum class Mode { Train, Eval };

/// Named learnable parameters and persistent buffers (running statistics) of a model,
/// in registration order. Handles alias the model's storage.
template <typename Scalar>
struct ParameterSet {
    std::vector<std::pair<std::string, Tensor<Scalar>>> params;
    std::vector<std::pair<std::string, Tensor<Scalar>>> buffers;

    void add_param(std::string name, const Tensor<Scalar>& t) { params.emplace_back(std::move(name), t); }
    void add_buffer(std::string name, const Tensor<Scalar>& t) { buffers.emplace_back(std::move(name), t); }

    std::vector<Tensor<Scalar>> tensors() const {
        std::vector<Tensor<Scalar>> out;
        out.reserve(params.size());
        for (const auto& [name, t] : params) out.push_back(t);
        return out;
    }
    std::int64_t count() const {
        std::int64_t n = 0;
        for (const auto& [name, t] : params) n += t.numel();
        return n;
    }
};

template <typename Scalar>
class Conv2d {
public:
    Conv2d() = default;
    /// Kernel extent must be 1, 3 or 7.
    Conv2d(int in_channels, int out_channels, int kernel, int stride = 1, int padding = 0, bool with_bias = true);

    Tensor<Scalar> forward(const Tensor<Scalar>& x) const { return conv2d(x, weight, bias, stride_, padding_); }
    void register_into(const std::string& prefix, ParameterSet<Scalar>& set) const;

    int in_channels() const { return weight.dim(1); }
    int out_channels() const { return weight.dim(0); }
    int kernel() const { return weight.dim(2); }
    int stride() const { return stride_; }
    int padding() const { return padding_; }

    Tensor<Scalar> weight;  // out x in x k x k
    Tensor<Scalar> bias;    // out, or undefined

private:
    int stride_ = 1;
    int padding_ = 0;
};

/// Kernel ~ Normal(0, sqrt(2 / (in * k * k))), bias zero.
template <typename Scalar>
void kaiming_init(Conv2d<Scalar>& layer, std::mt19937_64& rng);

template <typename Scalar>
class BatchNorm2d {
public:
    static constexpr double kEps = 1e-5;
    static constexpr double kMomentum = 0.1;

    BatchNorm2d() = default;
    explicit BatchNorm2d(int channels);

    /// Eval mode before any training update uses the initial statistics (mean 0, var 1).
    Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode);
    void register_into(const std::string& prefix, ParameterSet<Scalar>& set) const;

    Tensor<Scalar> gamma, beta;
    Tensor<Scalar> running_mean, running_var;
};

/// Convolution followed by batch normalization and an optional ReLU.
template <typename Scalar>
struct ConvBn {
    ConvBn() = default;
    ConvBn(int in_channels, int out_channels, int kernel, int stride, int padding, std::mt19937_64& rng);

    Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode, bool apply_relu);
    void register_into(const std::string& prefix, ParameterSet<Scalar>& set) const;

    Conv2d<Scalar> conv;
    BatchNorm2d<Scalar> bn;
};

/// Two 3x3 conv+BN stages with a ReLU between them, added to the (projected) input.
template <typename Scalar>
class ResidualBlock {
public:
    ResidualBlock() = default;
    ResidualBlock(int in_channels, int out_channels, int stride, std::mt19937_64& rng);

    Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode);
    void register_into(const std::string& prefix, ParameterSet<Scalar>& set) const;

    ConvBn<Scalar> first, second;
    std::optional<ConvBn<Scalar>> projection;
};

template <typename Scalar>
struct OptimizerState {
    double momentum = 0.9;
    double weight_decay = 0.0004;
    double base_lr = 0.05;
    std::vector<Tensor<Scalar>> velocity;  // mirrors parameter shapes once initialized
};

/// g' = g + wd * w; v = momentum * v + g'; w -= lr * v. Parameters without a gradient use g = 0.
template <typename Scalar>
void sgd_step(OptimizerState<Scalar>& state, std::vector<Tensor<Scalar>>& params, double lr);

/// base * (1 - iter / total)^0.9
double poly_lr(double base, long iter, long total);

}  // namespace agpc
