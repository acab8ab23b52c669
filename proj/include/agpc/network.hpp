#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "agpc/attention.hpp"

namespace agpc {

struct ModelConfig {
    std::vector<int> backbone_widths{16, 32, 64};
    int blocks_per_stage = 2;
    std::vector<int> patch_sizes{3, 5, 6, 8};
    int r_c = 16;
    int r_n = 4;
    GuideMode gca_type = GuideMode::PatchWise;
    bool cpm_enabled = true;
    bool afm_enabled = true;
    int input_size = 256;

    /// Throws UsageError unless there are three strictly increasing widths and every knob is positive.
    void validate() const;
    std::map<std::string, std::string> to_map() const;
    /// Applies the keys it knows and erases them from `values`.
    static ModelConfig from_map(std::map<std::string, std::string>& values);
};

/// Flat key=value text; blank lines and lines starting with '#' are ignored.
std::map<std::string, std::string> read_key_values(const std::filesystem::path& path);
void write_key_values(const std::filesystem::path& path, const std::map<std::string, std::string>& values);

/// Three-stage encoder outputs at /2, /4 and /8.
template <typename Scalar>
struct BackboneFeatures {
    Tensor<Scalar> f1, f2, deep;
};

/// Intermediate maps exposed for heatmap dumps.
template <typename Scalar>
struct ForwardTrace {
    Tensor<Scalar> cpm_input, cpm_output;
};

/// Initial foreground probability of the output layer (its bias is logit(prior)).
inline constexpr double kOutputPrior = 0.01;

/// Backbone -> context pyramid -> two asymmetric fusions -> upsample -> sigmoid head.
template <typename Scalar>
class AgpcNet {
public:
    AgpcNet(const ModelConfig& config, std::uint64_t seed);

    BackboneFeatures<Scalar> backbone(const Tensor<Scalar>& image, Mode mode);
    /// image: N x 1 x H x W with H, W divisible by 8. Returns N x 1 x H x W saliency in (0,1).
    Tensor<Scalar> forward(const Tensor<Scalar>& image, Mode mode, ForwardTrace<Scalar>* trace = nullptr);

    /// Parameters and running statistics in a fixed registration order.
    ParameterSet<Scalar> parameters() const;
    const ModelConfig& config() const { return config_; }

    ConvBn<Scalar> stem;
    std::vector<std::vector<ResidualBlock<Scalar>>> stages;
    std::optional<CPM<Scalar>> context;
    AFM<Scalar> fuse_mid, fuse_low;
    ConvBn<Scalar> head_hidden;
    Conv2d<Scalar> head_out;

private:
    ModelConfig config_;
};

/// Binary layout, all integers little-endian:
///   "AGPC" | u32 version=1 | u32 count | count x tensor
///   [ u32 count | count x tensor ]           (optional optimizer section)
///   tensor := u16 name_len | name (UTF-8) | u8 ndim | ndim x u32 dim | float32 values
struct NamedTensor {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

struct CheckpointData {
    std::vector<NamedTensor> tensors;
    std::optional<std::vector<NamedTensor>> optimizer;
};

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
/// Throws FormatError naming the byte offset on bad magic, version or truncation.
CheckpointData read_checkpoint(const std::filesystem::path& path);

template <typename Scalar>
void save_checkpoint(const AgpcNet<Scalar>& model, const OptimizerState<Scalar>* optimizer,
                     const std::filesystem::path& path);

/// Builds a model from `config` and fills every parameter and buffer from the file; names and
/// shapes must match exactly. Restores optimizer velocities into `optimizer` when both exist.
template <typename Scalar>
AgpcNet<Scalar> load_checkpoint(const std::filesystem::path& path, const ModelConfig& config,
                                OptimizerState<Scalar>* optimizer = nullptr);

}  // namespace agpc
