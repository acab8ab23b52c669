#include "agpc/nn.hpp"

#include <cmath>

namespace agpc {

template <typename Scalar>
Conv2d<Scalar>::Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, bool with_bias)
    : stride_(stride), padding_(padding) {
    if (kernel != 1 && kernel != 3 && kernel != 7) throw UsageError("conv kernel must be 1, 3 or 7");
    if (in_channels < 1 || out_channels < 1) throw UsageError("conv channel counts must be positive");
    weight = Tensor<Scalar>::zeros({out_channels, in_channels, kernel, kernel}, true);
    if (with_bias) bias = Tensor<Scalar>::zeros({out_channels}, true);
}

template <typename Scalar>
void Conv2d<Scalar>::register_into(const std::string& prefix, ParameterSet<Scalar>& set) const {
    set.add_param(prefix + ".weight", weight);
    if (bias.defined()) set.add_param(prefix + ".bias", bias);
}

template <typename Scalar>
void kaiming_init(Conv2d<Scalar>& layer, std::mt19937_64& rng) {
    const double fan_in = static_cast<double>(layer.in_channels()) * layer.kernel() * layer.kernel();
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (auto& w : layer.weight.values()) w = static_cast<Scalar>(dist(rng));
    if (layer.bias.defined()) std::fill(layer.bias.values().begin(), layer.bias.values().end(), Scalar(0));
}

template <typename Scalar>
BatchNorm2d<Scalar>::BatchNorm2d(int channels)
    : gamma(Tensor<Scalar>::full({channels}, Scalar(1), true)),
      beta(Tensor<Scalar>::zeros({channels}, true)),
      running_mean(Tensor<Scalar>::zeros({channels})),
      running_var(Tensor<Scalar>::full({channels}, Scalar(1))) {}

template <typename Scalar>
Tensor<Scalar> BatchNorm2d<Scalar>::forward(const Tensor<Scalar>& x, Mode mode) {
    return batch_norm(x, gamma, beta, running_mean, running_var, mode == Mode::Train, static_cast<Scalar>(kMomentum),
                      static_cast<Scalar>(kEps));
}

template <typename Scalar>
void BatchNorm2d<Scalar>::register_into(const std::string& prefix, ParameterSet<Scalar>& set) const {
    set.add_param(prefix + ".gamma", gamma);
    set.add_param(prefix + ".beta", beta);
    set.add_buffer(prefix + ".running_mean", running_mean);
    set.add_buffer(prefix + ".running_var", running_var);
}

template <typename Scalar>
ConvBn<Scalar>::ConvBn(int in_channels, int out_channels, int kernel, int stride, int padding, std::mt19937_64& rng)
    : conv(in_channels, out_channels, kernel, stride, padding, false), bn(out_channels) {
    kaiming_init(conv, rng);
}

template <typename Scalar>
Tensor<Scalar> ConvBn<Scalar>::forward(const Tensor<Scalar>& x, Mode mode, bool apply_relu) {
    auto y = bn.forward(conv.forward(x), mode);
    return apply_relu ? relu(y) : y;
}

template <typename Scalar>
void ConvBn<Scalar>::register_into(const std::string& prefix, ParameterSet<Scalar>& set) const {
    conv.register_into(prefix + ".conv", set);
    bn.register_into(prefix + ".bn", set);
}

template <typename Scalar>
ResidualBlock<Scalar>::ResidualBlock(int in_channels, int out_channels, int stride, std::mt19937_64& rng)
    : first(in_channels, out_channels, 3, stride, 1, rng), second(out_channels, out_channels, 3, 1, 1, rng) {
    if (stride != 1 || in_channels != out_channels) projection.emplace(in_channels, out_channels, 1, stride, 0, rng);
}

template <typename Scalar>
Tensor<Scalar> ResidualBlock<Scalar>::forward(const Tensor<Scalar>& x, Mode mode) {
    auto branch = second.forward(first.forward(x, mode, true), mode, false);
    auto skip = projection ? projection->forward(x, mode, false) : x;
    return relu(branch + skip);
}

template <typename Scalar>
void ResidualBlock<Scalar>::register_into(const std::string& prefix, ParameterSet<Scalar>& set) const {
    first.register_into(prefix + ".first", set);
    second.register_into(prefix + ".second", set);
    if (projection) projection->register_into(prefix + ".projection", set);
}

template <typename Scalar>
void sgd_step(OptimizerState<Scalar>& state, std::vector<Tensor<Scalar>>& params, double lr) {
    if (state.velocity.empty())
        for (const auto& p : params) state.velocity.push_back(Tensor<Scalar>::zeros(p.shape()));
    if (state.velocity.size() != params.size()) throw UsageError("optimizer state does not match parameter list");
    const auto momentum = static_cast<Scalar>(state.momentum);
    const auto decay = static_cast<Scalar>(state.weight_decay);
    const auto step = static_cast<Scalar>(lr);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        auto& v = state.velocity[i];
        if (v.shape() != p.shape())
            throw UsageError("velocity shape " + shape_str(v.shape()) + " does not match parameter " + shape_str(p.shape()));
        auto w = p.data();
        auto vel = v.data();
        const bool has_grad = p.has_grad();
        for (std::size_t j = 0; j < w.size(); ++j) {
            const Scalar g = (has_grad ? p.grad()[j] : Scalar(0)) + decay * w[j];
            vel[j] = momentum * vel[j] + g;
            w[j] -= step * vel[j];
        }
    }
}

double poly_lr(double base, long iter, long total) {
    if (total <= 0) throw UsageError("poly_lr requires total_iter > 0");
    if (iter < 0 || iter > total) throw UsageError("poly_lr iteration outside [0, total_iter]");
    return base * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(total), 0.9);
}

template class Conv2d<float>;
template class Conv2d<double>;
template class BatchNorm2d<float>;
template class BatchNorm2d<double>;
template struct ConvBn<float>;
template struct ConvBn<double>;
template class ResidualBlock<float>;
template class ResidualBlock<double>;
template void kaiming_init(Conv2d<float>&, std::mt19937_64&);
template void kaiming_init(Conv2d<double>&, std::mt19937_64&);
template void sgd_step(OptimizerState<float>&, std::vector<Tensor<float>>&, double);
template void sgd_step(OptimizerState<double>&, std::vector<Tensor<double>>&, double);

}  // namespace agpc
