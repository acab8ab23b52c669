#include "agpc/network.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <unordered_map>

namespace agpc {

namespace {

std::string join_ints(const std::vector<int>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) out += (i ? "," : "") + std::to_string(values[i]);
    return out;
}

int parse_int(const std::string& key, const std::string& text) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(text, &used);
        if (used != text.size()) throw std::invalid_argument(text);
        return v;
    } catch (const std::exception&) {
        throw UsageError("config key '" + key + "': expected an integer, got '" + text + "'");
    }
}

std::vector<int> parse_int_list(const std::string& key, const std::string& text) {
    std::vector<int> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) out.push_back(parse_int(key, item));
    if (out.empty()) throw UsageError("config key '" + key + "' is empty");
    return out;
}

bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1" || text == "on") return true;
    if (text == "false" || text == "0" || text == "off") return false;
    throw UsageError("config key '" + key + "': expected true/false, got '" + text + "'");
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

void ModelConfig::validate() const {
    if (backbone_widths.size() != 3) throw UsageError("backbone_widths must list exactly three stage widths");
    for (std::size_t i = 0; i < backbone_widths.size(); ++i) {
        if (backbone_widths[i] < 1) throw UsageError("backbone widths must be positive");
        if (i > 0 && backbone_widths[i] <= backbone_widths[i - 1]) throw UsageError("backbone widths must strictly increase");
    }
    if (blocks_per_stage < 1) throw UsageError("blocks_per_stage must be positive");
    if (patch_sizes.empty()) throw UsageError("patch_sizes must not be empty");
    for (int p : patch_sizes)
        if (p < 1) throw UsageError("patch sizes must be positive");
    if (r_c < 1 || r_n < 1) throw UsageError("reduction ratios must be positive");
    if (input_size < 8 || input_size % 8 != 0) throw UsageError("input_size must be a positive multiple of 8");
}

std::map<std::string, std::string> ModelConfig::to_map() const {
    return {{"backbone_widths", join_ints(backbone_widths)},
            {"blocks_per_stage", std::to_string(blocks_per_stage)},
            {"patch_sizes", join_ints(patch_sizes)},
            {"r_c", std::to_string(r_c)},
            {"r_n", std::to_string(r_n)},
            {"gca_type", to_string(gca_type)},
            {"cpm_enabled", cpm_enabled ? "true" : "false"},
            {"afm_enabled", afm_enabled ? "true" : "false"},
            {"input_size", std::to_string(input_size)}};
}

ModelConfig ModelConfig::from_map(std::map<std::string, std::string>& values) {
    ModelConfig cfg;
    auto take = [&](const char* key, auto&& apply) {
        if (auto it = values.find(key); it != values.end()) {
            apply(it->second);
            values.erase(it);
        }
    };
    take("backbone_widths", [&](const std::string& v) { cfg.backbone_widths = parse_int_list("backbone_widths", v); });
    take("blocks_per_stage", [&](const std::string& v) { cfg.blocks_per_stage = parse_int("blocks_per_stage", v); });
    take("patch_sizes", [&](const std::string& v) { cfg.patch_sizes = parse_int_list("patch_sizes", v); });
    take("r_c", [&](const std::string& v) { cfg.r_c = parse_int("r_c", v); });
    take("r_n", [&](const std::string& v) { cfg.r_n = parse_int("r_n", v); });
    take("gca_type", [&](const std::string& v) { cfg.gca_type = parse_guide_mode(v); });
    take("cpm_enabled", [&](const std::string& v) { cfg.cpm_enabled = parse_bool("cpm_enabled", v); });
    take("afm_enabled", [&](const std::string& v) { cfg.afm_enabled = parse_bool("afm_enabled", v); });
    take("input_size", [&](const std::string& v) { cfg.input_size = parse_int("input_size", v); });
    cfg.validate();
    return cfg;
}

std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file " + path.string());
    std::map<std::string, std::string> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty() || line.front() == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw UsageError(path.string() + ":" + std::to_string(line_no) + ": expected key=value");
        out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return out;
}

void write_key_values(const std::filesystem::path& path, const std::map<std::string, std::string>& values) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path.string());
    for (const auto& [k, v] : values) out << k << '=' << v << '\n';
}

// ---------------------------------------------------------------------------------------------

template <typename Scalar>
AgpcNet<Scalar>::AgpcNet(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    std::mt19937_64 rng(seed);
    const auto& w = config_.backbone_widths;
    stem = ConvBn<Scalar>(1, w[0], 3, 1, 1, rng);
    int in = w[0];
    for (int width : w) {
        std::vector<ResidualBlock<Scalar>> blocks;
        blocks.emplace_back(in, width, 2, rng);
        for (int b = 1; b < config_.blocks_per_stage; ++b) blocks.emplace_back(width, width, 1, rng);
        stages.push_back(std::move(blocks));
        in = width;
    }
    if (config_.cpm_enabled) context.emplace(w[2], config_.r_c, config_.r_n, config_.patch_sizes, config_.gca_type, rng);
    fuse_mid = AFM<Scalar>(w[1], w[2], config_.afm_enabled, rng);
    fuse_low = AFM<Scalar>(w[0], w[1], config_.afm_enabled, rng);
    const int hidden = w[0];
    head_hidden = ConvBn<Scalar>(w[0], hidden, 3, 1, 1, rng);
    head_out = Conv2d<Scalar>(hidden, 1, 1, 1, 0, true);
    kaiming_init(head_out, rng);
    // Targets cover well under 1% of pixels; starting the sigmoid near that prior keeps SoftIoU
    // gradients from stalling on a half-lit background.
    head_out.bias[0] = static_cast<Scalar>(std::log(kOutputPrior / (1 - kOutputPrior)));
}

template <typename Scalar>
BackboneFeatures<Scalar> AgpcNet<Scalar>::backbone(const Tensor<Scalar>& image, Mode mode) {
    if (image.rank() != 4 || image.dim(1) != 1) throw ShapeError("expected N x 1 x H x W image, got " + shape_str(image.shape()));
    if (image.dim(2) % 8 != 0 || image.dim(3) % 8 != 0)
        throw UsageError("image extents must be divisible by 8, got " + shape_str(image.shape()));
    auto x = stem.forward(image, mode, true);
    std::vector<Tensor<Scalar>> outs;
    for (auto& stage : stages) {
        for (auto& block : stage) x = block.forward(x, mode);
        outs.push_back(x);
    }
    return {outs[0], outs[1], outs[2]};
}

template <typename Scalar>
Tensor<Scalar> AgpcNet<Scalar>::forward(const Tensor<Scalar>& image, Mode mode, ForwardTrace<Scalar>* trace) {
    auto features = backbone(image, mode);
    auto c = context ? context->forward(features.deep, mode) : features.deep;
    if (trace) *trace = {features.deep, c};
    auto d2 = fuse_mid.forward(features.f2, c, mode);
    auto d1 = fuse_low.forward(features.f1, d2, mode);
    auto up = bilinear_resize(d1, image.dim(2), image.dim(3));
    return sigmoid(head_out.forward(head_hidden.forward(up, mode, true)));
}

template <typename Scalar>
ParameterSet<Scalar> AgpcNet<Scalar>::parameters() const {
    ParameterSet<Scalar> set;
    stem.register_into("stem", set);
    for (std::size_t s = 0; s < stages.size(); ++s)
        for (std::size_t b = 0; b < stages[s].size(); ++b)
            stages[s][b].register_into("stage" + std::to_string(s + 1) + ".block" + std::to_string(b), set);
    if (context) context->register_into("cpm", set);
    fuse_mid.register_into("afm_mid", set);
    fuse_low.register_into("afm_low", set);
    head_hidden.register_into("head.hidden", set);
    head_out.register_into("head.out", set);
    return set;
}

// ---------------------------------------------------------------------------------------------
// Checkpoint I/O

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class ByteWriter {
public:
    template <typename T>
    void put(T v) {
        const auto* p = reinterpret_cast<const char*>(&v);
        bytes_.insert(bytes_.end(), p, p + sizeof(T));
    }
    void put_bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const char*>(data);
        bytes_.insert(bytes_.end(), p, p + n);
    }
    const std::vector<char>& bytes() const { return bytes_; }

private:
    std::vector<char> bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

    template <typename T>
    T get(const char* what) {
        T v;
        get_bytes(&v, sizeof(T), what);
        return v;
    }
    void get_bytes(void* out, std::size_t n, const char* what) {
        if (bytes_.size() - pos_ < n) throw FormatError(std::string("truncated checkpoint while reading ") + what, pos_);
        std::memcpy(out, bytes_.data() + pos_, n);
        pos_ += n;
    }
    bool at_end() const { return pos_ == bytes_.size(); }
    std::size_t offset() const { return pos_; }

private:
    std::vector<char> bytes_;
    std::size_t pos_ = 0;
};

void write_section(ByteWriter& out, const std::vector<NamedTensor>& tensors) {
    out.put(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        if (t.name.size() > 0xFFFF) throw UsageError("tensor name too long: " + t.name);
        if (t.shape.size() > 0xFF) throw UsageError("tensor rank too large: " + t.name);
        if (static_cast<std::int64_t>(t.values.size()) != shape_numel(t.shape)) throw ShapeError("tensor size mismatch: " + t.name);
        out.put(static_cast<std::uint16_t>(t.name.size()));
        out.put_bytes(t.name.data(), t.name.size());
        out.put(static_cast<std::uint8_t>(t.shape.size()));
        for (int d : t.shape) out.put(static_cast<std::uint32_t>(d));
        out.put_bytes(t.values.data(), t.values.size() * sizeof(float));
    }
}

std::vector<NamedTensor> read_section(ByteReader& in) {
    const auto count = in.get<std::uint32_t>("tensor count");
    std::vector<NamedTensor> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        const auto name_len = in.get<std::uint16_t>("name length");
        t.name.resize(name_len);
        in.get_bytes(t.name.data(), name_len, "tensor name");
        const auto ndim = in.get<std::uint8_t>("rank");
        std::int64_t numel = 1;
        for (int d = 0; d < ndim; ++d) {
            const std::size_t at = in.offset();
            const auto extent = in.get<std::uint32_t>("dimension");
            if (extent == 0 || extent > 0x7FFFFFFF) throw FormatError("invalid dimension in '" + t.name + "'", at);
            t.shape.push_back(static_cast<int>(extent));
            numel *= extent;
            if (numel > (std::int64_t{1} << 34)) throw FormatError("tensor '" + t.name + "' is implausibly large", at);
        }
        t.values.resize(static_cast<std::size_t>(numel));
        in.get_bytes(t.values.data(), t.values.size() * sizeof(float), "tensor values");
        out.push_back(std::move(t));
    }
    return out;
}

template <typename Scalar>
std::vector<NamedTensor> to_named(const std::vector<std::pair<std::string, Tensor<Scalar>>>& tensors, const std::string& prefix = {}) {
    std::vector<NamedTensor> out;
    for (const auto& [name, t] : tensors)
        out.push_back({prefix + name, t.shape(), std::vector<float>(t.values().begin(), t.values().end())});
    return out;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
    ByteWriter out;
    out.put_bytes("AGPC", 4);
    out.put(std::uint32_t{1});
    write_section(out, data.tensors);
    if (data.optimizer) write_section(out, *data.optimizer);
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw ValidationError("cannot write checkpoint " + path.string());
    file.write(out.bytes().data(), static_cast<std::streamsize>(out.bytes().size()));
    if (!file) throw ValidationError("failed writing checkpoint " + path.string());
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw ValidationError("cannot open checkpoint " + path.string());
    ByteReader in(std::vector<char>(std::istreambuf_iterator<char>(file), {}));
    char magic[4];
    in.get_bytes(magic, 4, "magic");
    if (std::memcmp(magic, "AGPC", 4) != 0) throw FormatError("bad checkpoint magic", 0);
    const auto version = in.get<std::uint32_t>("version");
    if (version != 1) throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
    CheckpointData data;
    data.tensors = read_section(in);
    if (!in.at_end()) data.optimizer = read_section(in);
    if (!in.at_end()) throw FormatError("trailing bytes after checkpoint", in.offset());
    return data;
}

template <typename Scalar>
void save_checkpoint(const AgpcNet<Scalar>& model, const OptimizerState<Scalar>* optimizer,
                     const std::filesystem::path& path) {
    const auto set = model.parameters();
    CheckpointData data;
    data.tensors = to_named(set.params);
    auto buffers = to_named(set.buffers);
    data.tensors.insert(data.tensors.end(), buffers.begin(), buffers.end());
    if (optimizer && !optimizer->velocity.empty()) {
        if (optimizer->velocity.size() != set.params.size()) throw UsageError("optimizer state does not match model");
        std::vector<std::pair<std::string, Tensor<Scalar>>> named;
        for (std::size_t i = 0; i < set.params.size(); ++i) named.emplace_back(set.params[i].first, optimizer->velocity[i]);
        data.optimizer = to_named(named, "velocity.");
    }
    write_checkpoint(path, data);
}

template <typename Scalar>
AgpcNet<Scalar> load_checkpoint(const std::filesystem::path& path, const ModelConfig& config,
                                OptimizerState<Scalar>* optimizer) {
    const CheckpointData data = read_checkpoint(path);
    AgpcNet<Scalar> model(config, 0);
    auto set = model.parameters();
    std::unordered_map<std::string, const NamedTensor*> by_name;
    for (const auto& t : data.tensors) by_name[t.name] = &t;

    auto fill = [&](const std::string& name, Tensor<Scalar>& target, const std::unordered_map<std::string, const NamedTensor*>& source) {
        auto it = source.find(name);
        if (it == source.end()) throw ValidationError("checkpoint " + path.string() + " lacks tensor '" + name + "'");
        if (it->second->shape != target.shape())
            throw ValidationError("checkpoint tensor '" + name + "' has shape " + shape_str(it->second->shape) +
                                  ", model expects " + shape_str(target.shape()));
        std::transform(it->second->values.begin(), it->second->values.end(), target.values().begin(),
                       [](float v) { return static_cast<Scalar>(v); });
    };
    if (data.tensors.size() != set.params.size() + set.buffers.size())
        throw ValidationError("checkpoint holds " + std::to_string(data.tensors.size()) + " tensors, model has " +
                              std::to_string(set.params.size() + set.buffers.size()));
    for (auto& [name, t] : set.params) fill(name, t, by_name);
    for (auto& [name, t] : set.buffers) fill(name, t, by_name);

    if (optimizer && data.optimizer) {
        std::unordered_map<std::string, const NamedTensor*> velocities;
        for (const auto& t : *data.optimizer) velocities[t.name] = &t;
        optimizer->velocity.clear();
        for (auto& [name, t] : set.params) {
            auto v = Tensor<Scalar>::zeros(t.shape());
            fill("velocity." + name, v, velocities);
            optimizer->velocity.push_back(v);
        }
    }
    return model;
}

template class AgpcNet<float>;
template class AgpcNet<double>;
template void save_checkpoint(const AgpcNet<float>&, const OptimizerState<float>*, const std::filesystem::path&);
template void save_checkpoint(const AgpcNet<double>&, const OptimizerState<double>*, const std::filesystem::path&);
template AgpcNet<float> load_checkpoint(const std::filesystem::path&, const ModelConfig&, OptimizerState<float>*);
template AgpcNet<double> load_checkpoint(const std::filesystem::path&, const ModelConfig&, OptimizerState<double>*);

}  // namespace agpc
