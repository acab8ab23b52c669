// agpcnet: command-line front end for data generation, training, evaluation and baselines.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "agpc/baselines.hpp"
#include "agpc/data.hpp"
#include "agpc/errors.hpp"
#include "agpc/metrics.hpp"
#include "agpc/network.hpp"
#include "agpc/training.hpp"

#ifndef AGPC_VERSION
#define AGPC_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using namespace agpc;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kInternal = 3 };

using KeyValues = std::map<std::string, std::string>;

std::string num(double v) {
    std::ostringstream out;
    out << std::setprecision(17) << v;
    return out.str();
}

// The manifest goes in first so a failed run still records what was asked for.
fs::path prepare_out(const fs::path& out, const std::string& subcommand, const KeyValues& values) {
    fs::create_directories(out);
    KeyValues manifest = values;
    manifest["subcommand"] = subcommand;
    manifest["tool_version"] = AGPC_VERSION;
    manifest["out"] = out.string();
    write_key_values(out / "manifest.txt", manifest);
    return out;
}

void add_prefixed(KeyValues& into, const std::string& prefix, const KeyValues& values) {
    for (const auto& [k, v] : values) into[prefix + k] = v;
}

struct Configs {
    ModelConfig model;
    TrainConfig train;
};

Configs parse_config(const fs::path& path) {
    KeyValues values = read_key_values(path);
    Configs c{ModelConfig::from_map(values), TrainConfig::from_map(values)};
    if (!values.empty()) throw UsageError(path.string() + ": unknown key '" + values.begin()->first + "'");
    return c;
}

// Falls back to the config.txt that `train` leaves next to its checkpoints.
ModelConfig model_config_for(const fs::path& checkpoint, const std::string& explicit_config) {
    fs::path path = explicit_config;
    if (path.empty()) {
        for (const fs::path& dir : {checkpoint.parent_path(), checkpoint.parent_path().parent_path()})
            if (fs::exists(dir / "config.txt")) {
                path = dir / "config.txt";
                break;
            }
        if (path.empty()) throw UsageError("no --config given and no config.txt next to " + checkpoint.string());
    }
    return parse_config(path).model;
}

std::string score_stem(const IndexEntry& entry) { return entry.image.stem().string(); }

void check_unique_stems(const DatasetIndex& index) {
    std::set<std::string> seen;
    for (const auto& e : index.entries)
        if (!seen.insert(score_stem(e)).second) throw UsageError("duplicate image name '" + score_stem(e) + "' in index");
}

void warn_duplicate_scales(const ModelConfig& cfg) {
    if (!cfg.cpm_enabled) return;
    const int deep = cfg.input_size / 8;
    for (const auto& [a, b] : duplicate_scales(cfg.patch_sizes, deep, deep))
        std::cerr << "warning: patch sizes " << a << " and " << b << " give the same scale on a " << deep << "x" << deep
                  << " map\n";
}

std::string epoch_name(int epoch) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "epoch_%03d.agpc", epoch);
    return buf;
}

// Mean absolute activation over channels of sample 0.
Image channel_energy(const Tensor<float>& t) {
    const int c = t.dim(1), h = t.dim(2), w = t.dim(3);
    Image out = Image::Zero(h, w);
    const float* p = t.data().data();
    for (int k = 0; k < c; ++k)
        for (int i = 0; i < h * w; ++i) out.data()[i] += std::abs(p[static_cast<std::size_t>(k) * h * w + i]);
    return out / static_cast<float>(c);
}

// ---- subcommands -----------------------------------------------------------------------------

struct SynthArgs {
    int count = 0;
    std::uint64_t seed = 0;
    int size = 256;
    std::string split = "train", out;
};

int run_synth(const SynthArgs& a) {
    SceneSpec spec;
    spec.size = a.size;
    spec.validate();
    if (a.count < 0) throw UsageError("--count must be nonnegative");
    const fs::path out = prepare_out(a.out, "synth",
                                     {{"count", std::to_string(a.count)}, {"seed", std::to_string(a.seed)},
                                      {"size", std::to_string(a.size)}, {"split", a.split}});
    const auto index = synth_generate(spec, a.count, a.seed, out, a.split);
    std::cout << index.entries.size() << " scenes written to " << out.string() << '\n';
    return kOk;
}

struct AugmentArgs {
    std::string index, split, out;
    std::uint64_t seed = 0;
};

int run_augment(const AugmentArgs& a) {
    if (a.split != "train" && a.split != "test") throw UsageError("--split must be train or test");
    const auto source = load_index(a.index);
    const fs::path out = prepare_out(a.out, "augment",
                                     {{"index", a.index}, {"split", a.split}, {"seed", std::to_string(a.seed)}});
    const auto result = augment_sirst(source, a.split, a.seed, out);
    save_index(result, out / "index.csv");
    std::cout << result.entries.size() << " " << a.split << " pairs written to " << out.string() << '\n';
    return kOk;
}

struct TrainArgs {
    std::string index, config, out;
};

int run_train(const TrainArgs& a) {
    const Configs cfg = parse_config(a.config);
    KeyValues resolved;
    add_prefixed(resolved, "", cfg.model.to_map());
    add_prefixed(resolved, "", cfg.train.to_map());
    KeyValues manifest{{"index", a.index}, {"config", a.config}};
    add_prefixed(manifest, "config.", resolved);
    const fs::path out = prepare_out(a.out, "train", manifest);
    write_key_values(out / "config.txt", resolved);
    warn_duplicate_scales(cfg.model);

    const Dataset data = load_dataset(load_index(a.index));
    AgpcNet<float> model(cfg.model, cfg.train.seed);
    OptimizerState<float> optimizer;
    const fs::path ckpt_dir = out / "checkpoints";
    fs::create_directories(ckpt_dir);
    save_checkpoint(model, &optimizer, ckpt_dir / epoch_name(0));

    TrainHooks hooks;
    hooks.on_epoch_end = [&](int epoch) { save_checkpoint(model, &optimizer, ckpt_dir / epoch_name(epoch)); };
    const TrainResult result = train(model, optimizer, data, cfg.train, hooks);
    write_loss_csv(out / "loss.csv", result.log);
    save_checkpoint(model, &optimizer, out / "model.agpc");
    std::cout << result.total_iter << " iterations, final loss "
              << (result.log.empty() ? std::string("n/a") : num(result.log.back().loss)) << '\n';
    return kOk;
}

struct EvalArgs {
    std::string checkpoint, index, out, config;
    double threshold = 0.5;
    bool dump_scores = false;
};

int run_eval(const EvalArgs& a) {
    if (!(a.threshold >= 0 && a.threshold <= 1)) throw UsageError("--threshold must lie in [0, 1]");
    const ModelConfig mc = model_config_for(a.checkpoint, a.config);
    const auto index = load_index(a.index);
    if (a.dump_scores) check_unique_stems(index);
    const fs::path out = prepare_out(a.out, "eval",
                                     {{"checkpoint", a.checkpoint}, {"index", a.index}, {"config", a.config},
                                      {"threshold", num(a.threshold)}, {"dump_scores", a.dump_scores ? "1" : "0"}});
    AgpcNet<float> model = load_checkpoint<float>(a.checkpoint, mc);
    const Dataset data = load_dataset(index);
    const auto maps = predict(model, data);
    const EvalReport report = evaluate_maps(maps, data, a.threshold);
    write_metric_csv(out / "metrics.csv", report.rows());
    std::vector<Mask> truths;
    for (const auto& s : data) truths.push_back(s.mask);
    write_roc_csv(out / "roc.csv", roc_curve(maps, truths));
    if (a.dump_scores) {
        fs::create_directories(out / "scores");
        for (std::size_t i = 0; i < maps.size(); ++i) write_pfm(out / "scores" / (score_stem(index.entries[i]) + ".pfm"), maps[i]);
    }
    for (const auto& [k, v] : report.rows()) std::cout << k << ' ' << num(v) << '\n';
    return kOk;
}

struct InferArgs {
    std::string checkpoint, image, out, config;
    bool dump_heatmaps = false;
};

int run_infer(const InferArgs& a) {
    const ModelConfig mc = model_config_for(a.checkpoint, a.config);
    if (a.dump_heatmaps && !mc.cpm_enabled) throw UsageError("--dump-heatmaps needs a model with the context pyramid");
    const fs::path out = prepare_out(a.out, "infer",
                                     {{"checkpoint", a.checkpoint}, {"image", a.image}, {"config", a.config},
                                      {"dump_heatmaps", a.dump_heatmaps ? "1" : "0"}});
    AgpcNet<float> model = load_checkpoint<float>(a.checkpoint, mc);
    const Image image = read_image(a.image);
    if (image.rows() % 8 || image.cols() % 8) throw UsageError("image extents must be multiples of 8");
    ForwardTrace<float> trace;
    Image saliency;
    {
        NoGradGuard guard;
        const auto batch = to_batch<float>(std::vector<const Image*>{&image});
        saliency = slice_image(model.forward(batch, Mode::Eval, a.dump_heatmaps ? &trace : nullptr), 0);
    }
    write_image(out / "saliency.pgm", saliency);
    write_pfm(out / "saliency.pfm", saliency);
    if (a.dump_heatmaps) {
        write_image(out / "cpm_input.pgm", normalize_unit(channel_energy(trace.cpm_input)));
        write_image(out / "cpm_output.pgm", normalize_unit(channel_energy(trace.cpm_output)));
    }
    std::cout << "saliency max " << num(saliency.maxCoeff()) << '\n';
    return kOk;
}

struct BaselineArgs {
    std::string method = "tophat", index, out;
    int size = 5;
};

int run_baseline(const BaselineArgs& a) {
    if (a.method != "tophat") throw UsageError("unknown baseline method '" + a.method + "'");
    const auto se = disk_element(a.size);
    const auto index = load_index(a.index);
    check_unique_stems(index);
    const fs::path out = prepare_out(a.out, "baseline",
                                     {{"method", a.method}, {"index", a.index}, {"size", std::to_string(a.size)}});
    const fs::path scores = out / "scores";
    fs::create_directories(scores);
    for (const auto& e : index.entries) {
        const Image response = tophat(read_image(e.image), se);
        const float peak = response.maxCoeff();
        write_image(scores / (score_stem(e) + ".pgm"), peak > 0 ? Image(response / peak) : response);
        write_pfm(scores / (score_stem(e) + ".pfm"), response);
    }
    std::cout << index.entries.size() << " saliency maps written to " << scores.string() << '\n';
    return kOk;
}

struct RocArgs {
    std::string scores_dir, index, out;
};

int run_roc(const RocArgs& a) {
    const auto index = load_index(a.index);
    check_unique_stems(index);
    const fs::path out = prepare_out(a.out, "roc", {{"scores_dir", a.scores_dir}, {"index", a.index}});
    std::vector<Image> scores;
    std::vector<Mask> truths;
    for (const auto& e : index.entries) {
        const fs::path pfm = fs::path(a.scores_dir) / (score_stem(e) + ".pfm");
        const fs::path pgm = fs::path(a.scores_dir) / (score_stem(e) + ".pgm");
        if (fs::exists(pfm)) scores.push_back(read_pfm(pfm));
        else if (fs::exists(pgm)) scores.push_back(read_image(pgm));
        else throw ValidationError("no score map for " + e.image.string() + " in " + a.scores_dir);
        truths.push_back(read_mask(e.mask));
        if (scores.back().rows() != truths.back().rows() || scores.back().cols() != truths.back().cols())
            throw ValidationError("score map for " + e.image.string() + " does not match its mask");
    }
    const auto points = roc_curve(scores, truths);
    write_roc_csv(out / "roc.csv", points);
    const double area = auc(points);
    write_metric_csv(out / "auc.csv", {{"auc", area}});
    std::cout << "auc " << num(area) << '\n';
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Infrared small-target segmentation toolkit"};
    app.set_version_flag("--version", AGPC_VERSION);
    app.require_subcommand(1);

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "Generate a synthetic scene corpus");
    s->add_option("--count", synth.count, "Number of scenes")->required();
    s->add_option("--seed", synth.seed, "Random seed")->required();
    s->add_option("--out", synth.out, "Output directory")->required();
    s->add_option("--size", synth.size, "Scene side in pixels")->capture_default_str();
    s->add_option("--split", synth.split, "Split name recorded in the index")->capture_default_str();

    AugmentArgs augment;
    auto* g = app.add_subcommand("augment", "Anchored crops and rotations around every target");
    g->add_option("--index", augment.index, "Source index CSV")->required();
    g->add_option("--split", augment.split, "train or test")->required();
    g->add_option("--seed", augment.seed, "Random seed")->required();
    g->add_option("--out", augment.out, "Output directory")->required();

    TrainArgs train_args;
    auto* t = app.add_subcommand("train", "Train a model");
    t->add_option("--index", train_args.index, "Training index CSV")->required();
    t->add_option("--config", train_args.config, "key=value config file")->required();
    t->add_option("--out", train_args.out, "Output directory")->required();

    EvalArgs eval;
    auto* e = app.add_subcommand("eval", "Score a checkpoint on an index");
    e->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required();
    e->add_option("--index", eval.index, "Evaluation index CSV")->required();
    e->add_option("--out", eval.out, "Output directory")->required();
    e->add_option("--config", eval.config, "Config file (default: config.txt beside the checkpoint)");
    e->add_option("--threshold", eval.threshold, "Binarization threshold")->capture_default_str();
    e->add_flag("--dump-scores", eval.dump_scores, "Write raw saliency maps as PFM for roc");

    InferArgs infer;
    auto* i = app.add_subcommand("infer", "Saliency map for one image");
    i->add_option("--checkpoint", infer.checkpoint, "Checkpoint file")->required();
    i->add_option("--image", infer.image, "Input PGM")->required();
    i->add_option("--out", infer.out, "Output directory")->required();
    i->add_option("--config", infer.config, "Config file (default: config.txt beside the checkpoint)");
    i->add_flag("--dump-heatmaps", infer.dump_heatmaps, "Also write context pyramid input/output energy maps");

    BaselineArgs baseline;
    auto* b = app.add_subcommand("baseline", "Model-driven baseline saliency maps");
    b->add_option("--method", baseline.method, "Baseline method (tophat)")->required();
    b->add_option("--index", baseline.index, "Index CSV")->required();
    b->add_option("--out", baseline.out, "Output directory")->required();
    b->add_option("--size", baseline.size, "Structuring element size")->capture_default_str();

    RocArgs roc;
    auto* r = app.add_subcommand("roc", "ROC curve of stored saliency maps");
    r->add_option("--scores-dir", roc.scores_dir, "Directory of <image stem>.pfm or .pgm maps")->required();
    r->add_option("--index", roc.index, "Index CSV with the truth masks")->required();
    r->add_option("--out", roc.out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (s->parsed()) return run_synth(synth);
        if (g->parsed()) return run_augment(augment);
        if (t->parsed()) return run_train(train_args);
        if (e->parsed()) return run_eval(eval);
        if (i->parsed()) return run_infer(infer);
        if (b->parsed()) return run_baseline(baseline);
        if (r->parsed()) return run_roc(roc);
        return kUsage;
    } catch (const std::invalid_argument& err) {  // UsageError, ShapeError
        std::cerr << "error: " << err.what() << '\n';
        return kUsage;
    } catch (const FormatError& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kData;
    } catch (const ValidationError& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kData;
    } catch (const fs::filesystem_error& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kData;
    } catch (const std::exception& err) {
        std::cerr << "internal error: " << err.what() << '\n';
        return kInternal;
    }
}
