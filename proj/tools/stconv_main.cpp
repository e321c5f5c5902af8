// Command-line front end: dataset generation/conversion, training,
// evaluation, ablation sweeps, causality probing and gradient checking.

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "stconv/checkpoint.hpp"
#include "stconv/data.hpp"
#include "stconv/gradcheck.hpp"
#include "stconv/metrics.hpp"
#include "stconv/model.hpp"
#include "stconv/textio.hpp"
#include "stconv/train.hpp"

#include "stconv/probe.hpp"

namespace fs = std::filesystem;
using namespace stconv;

namespace {

constexpr const char* kVersion = "stconv 0.1.0";

// ---------------------------------------------------------------------------
// Run directory with a manifest listing every artifact the command writes.
// ---------------------------------------------------------------------------
class RunDir {
public:
    explicit RunDir(const std::string& out, const std::string& command) : dir_(out) {
        if (out.empty()) throw std::runtime_error("--out is required");
        fs::create_directories(dir_);
        if (fs::exists(dir_ / "manifest.txt"))
            throw std::runtime_error("run directory already holds a manifest: " + out);
        kv_["command"] = command;
        kv_["version"] = kVersion;
    }

    std::string file(const std::string& rel) const { return (dir_ / rel).string(); }

    void set(const std::string& key, const std::string& value) { kv_[key] = value; }
    void set(const std::string& key, std::int64_t value) { kv_[key] = std::to_string(value); }
    void set(const std::string& key, double value) { kv_[key] = format_double(value); }

    void add_input(const std::string& name, const std::string& path) {
        kv_["input." + name] = path;
        kv_["input." + name + ".digest"] = hex64(file_digest(path));
    }

    void note_output(const std::string& rel) {
        kv_["output." + std::to_string(outputs_++)] = rel;
    }

    void finalize() { kv_write_file((dir_ / "manifest.txt").string(), kv_); }

private:
    fs::path dir_;
    KvMap kv_;
    int outputs_ = 0;
};

struct CommonOpts {
    std::uint64_t seed = 0;
    bool deterministic = false;
    std::string precision = "single";
    std::string out;
};

void add_common(CLI::App* cmd, CommonOpts& o, bool with_out = true) {
    cmd->add_option("--seed", o.seed, "run seed");
    cmd->add_flag("--deterministic", o.deterministic,
                  "bitwise-reproducible mode (zeroes wall-clock columns)");
    cmd->add_option("--precision", o.precision, "scalar precision")
        ->check(CLI::IsMember({"single", "double"}));
    if (with_out) cmd->add_option("--out", o.out, "output run directory")->required();
}

struct ModelOpts {
    std::string variant = "reversed";
    std::int64_t layers = 3, kt = 5, kd = 5, filters = 32, t_in = 5, t_out = 5, channels = 1;
    double dropout = 0.0;
    bool no_growth = false;

    void add_flags(CLI::App* cmd) {
        cmd->add_option("--variant", variant,
                        "causal | reversed | no-causal | std-3dcnn | encoder-decoder | "
                        "two-plus-one-d | no-temporal | inverted");
        cmd->add_option("--layers", layers, "layers per block");
        cmd->add_option("--kt", kt, "temporal kernel size");
        cmd->add_option("--kd", kd, "spatial kernel size (odd)");
        cmd->add_option("--filters", filters, "base filter count");
        cmd->add_option("--t-in", t_in, "input sequence length");
        cmd->add_option("--t-out", t_out, "prediction horizon");
        cmd->add_option("--channels", channels, "data channels");
        cmd->add_option("--dropout", dropout, "dropout rate in [0,1)");
        cmd->add_flag("--no-filter-growth", no_growth, "hold filters constant across layers");
    }

    ModelConfig to_config() const {
        ModelConfig cfg;
        cfg.variant = variant_from_name(variant);
        cfg.layers = layers;
        cfg.kernel_time = kt;
        cfg.kernel_space = kd;
        cfg.filters = filters;
        cfg.t_in = t_in;
        cfg.t_out = t_out;
        cfg.channels = channels;
        cfg.dropout = dropout;
        cfg.filter_growth = !no_growth;
        cfg.validate();
        return cfg;
    }
};

struct DataOpts {
    std::string data;
    std::int64_t stride = 1;
    std::string ratios = "0.6,0.2,0.2";
    bool normalize = false;

    void add_flags(CLI::App* cmd) {
        cmd->add_option("--data", data, "gseq dataset path")->required();
        cmd->add_option("--stride", stride, "window stride");
        cmd->add_option("--ratios", ratios, "train,val,test split ratios");
        cmd->add_flag("--normalize", normalize, "z-score per channel, fitted on the train split");
    }

    SplitRatios parse_ratios() const {
        const auto parts = split(ratios, ',');
        if (parts.size() != 3) throw std::runtime_error("--ratios expects three comma-separated values");
        return {std::stod(parts[0]), std::stod(parts[1]), std::stod(parts[2])};
    }
};

struct SchedOpts {
    std::int64_t epochs = 50, batch = 32, patience = 16;
    double lr = 1e-3, decay = 0.99, eps = 1e-8;

    void add_flags(CLI::App* cmd) {
        cmd->add_option("--epochs", epochs, "epoch budget");
        cmd->add_option("--batch", batch, "mini-batch size");
        cmd->add_option("--patience", patience, "early-stopping patience");
        cmd->add_option("--lr", lr, "learning rate");
        cmd->add_option("--decay", decay, "squared-gradient decay");
        cmd->add_option("--eps", eps, "optimizer epsilon");
    }

    TrainSchedule to_schedule(const CommonOpts& common) const {
        TrainSchedule s;
        s.max_epochs = epochs;
        s.batch_size = batch;
        s.patience = patience;
        s.lr = lr;
        s.decay = decay;
        s.eps = eps;
        s.seed = common.seed;
        s.deterministic = common.deterministic;
        return s;
    }
};

void record_config(RunDir& run, const ModelConfig& cfg, const TrainSchedule& sched,
                   const DataOpts& data) {
    for (const auto& [k, v] : kv_parse(cfg.serialize())) run.set("model." + k, v);
    run.set("model.digest", hex64(cfg.digest()));
    run.set("schedule.epochs", sched.max_epochs);
    run.set("schedule.batch", sched.batch_size);
    run.set("schedule.patience", sched.patience);
    run.set("schedule.lr", sched.lr);
    run.set("schedule.decay", sched.decay);
    run.set("schedule.eps", sched.eps);
    run.set("seed", static_cast<std::int64_t>(sched.seed));
    run.set("deterministic", sched.deterministic ? "1" : "0");
    run.set("data.stride", data.stride);
    run.set("data.ratios", data.ratios);
    run.set("data.normalize", data.normalize ? "1" : "0");
}

struct LoadedData {
    DatasetSplits splits;
    Normalizer normalizer;
};

LoadedData load_splits(const DataOpts& opts, std::int64_t t_in, std::int64_t t_out) {
    auto grid = std::make_shared<GridSeq>(read_gseq(opts.data));
    auto all = make_windows(grid, t_in, t_out, opts.stride);
    LoadedData out{split_windows(all, opts.parse_ratios()), Normalizer::none()};
    if (opts.normalize) {
        out.normalizer = Normalizer::fit_zscore(out.splits.train);
        if (!out.normalizer.warning().empty())
            std::cerr << "warning: " << out.normalizer.warning() << "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------
template <typename S>
int run_train(const CommonOpts& common, const ModelOpts& mopts, const DataOpts& dopts,
              const SchedOpts& sopts) {
    const ModelConfig cfg = mopts.to_config();
    LoadedData data = load_splits(dopts, cfg.t_in, cfg.t_out); // before any directory exists
    const TrainSchedule sched = sopts.to_schedule(common);

    RunDir run(common.out, "train");
    run.add_input("data", dopts.data);
    run.set("precision", common.precision);
    record_config(run, cfg, sched, dopts);

    Rng rng(common.seed);
    Model<S> model(cfg, rng);
    std::cout << "training " << variant_name(cfg.variant) << ": " << model.parameter_count()
              << " parameters, " << data.splits.train.num_samples() << "/"
              << data.splits.val.num_samples() << "/" << data.splits.test.num_samples()
              << " train/val/test samples\n";

    TrainReport report = train_model(model, data.splits.train, data.splits.val, sched,
                                     data.normalizer, &std::cout);

    write_text_file(run.file("config.cfg"), cfg.serialize());
    run.note_output("config.cfg");
    write_text_file(run.file("train_report.csv"), report.to_csv());
    run.note_output("train_report.csv");

    const bool diverged = report.stop_reason.rfind("divergence", 0) == 0;
    if (!diverged) {
        save_checkpoint(run.file("checkpoint.stck"), model);
        run.note_output("checkpoint.stck");
    }
    run.set("result.stop_reason", report.stop_reason);
    run.set("result.best_epoch", report.best_epoch);
    run.set("result.best_val_rmse", report.best_val_rmse);
    run.finalize();

    std::cout << "stop: " << report.stop_reason << "; best epoch " << report.best_epoch
              << " val_rmse " << format_double(report.best_val_rmse) << "\n";
    return diverged ? 1 : 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------
std::string metrics_csv_header() { return "model,config_digest,horizon,split,samples,rmse,mae\n"; }

std::string metrics_csv_row(const ModelConfig& cfg, const std::string& split_name,
                            const EvalResult& r) {
    std::string row = variant_name(cfg.variant);
    row += ',';
    row += hex64(cfg.digest());
    row += ',';
    row += std::to_string(cfg.t_out);
    row += ',';
    row += split_name;
    row += ',';
    row += std::to_string(r.samples);
    row += ',';
    row += format_double(r.rmse);
    row += ',';
    row += format_double(r.mae);
    row += '\n';
    return row;
}

template <typename S>
int run_eval(const CommonOpts& common, const std::string& checkpoint_path,
             const std::string& config_path, const DataOpts& dopts, const std::string& split_name,
             std::int64_t batch, std::int64_t sample_index, bool samples_only) {
    const std::string cfg_path =
        config_path.empty() ? (fs::path(checkpoint_path).parent_path() / "config.cfg").string()
                            : config_path;
    const ModelConfig cfg = ModelConfig::parse(read_text_file(cfg_path));
    LoadedData data = load_splits(dopts, cfg.t_in, cfg.t_out);

    Rng rng(common.seed);
    Model<S> model(cfg, rng);
    load_checkpoint(checkpoint_path, model); // digest mismatch rejected here

    const WindowedDataset* ds = nullptr;
    if (split_name == "train")
        ds = &data.splits.train;
    else if (split_name == "val")
        ds = &data.splits.val;
    else if (split_name == "test")
        ds = &data.splits.test;
    else
        throw std::runtime_error("--split must be train, val or test");

    RunDir run(common.out, "eval");
    run.add_input("checkpoint", checkpoint_path);
    run.add_input("config", cfg_path);
    run.add_input("data", dopts.data);
    run.set("precision", common.precision);
    run.set("split", split_name);
    run.set("model.digest", hex64(cfg.digest()));

    MetricOptions mopt;
    mopt.per_element = !samples_only;
    const EvalResult r = evaluate_model(model, *ds, batch, data.normalizer, mopt);

    write_text_file(run.file("metrics.csv"), metrics_csv_header() + metrics_csv_row(cfg, split_name, r));
    run.note_output("metrics.csv");

    std::string steps = "step,rmse,mae,cum_rmse,cum_mae\n";
    for (std::size_t t = 0; t < r.curves.rmse.size(); ++t) {
        steps += std::to_string(t + 1);
        steps += ',';
        steps += format_double(r.curves.rmse[t]);
        steps += ',';
        steps += format_double(r.curves.mae[t]);
        steps += ',';
        steps += format_double(r.curves.cum_rmse[t]);
        steps += ',';
        steps += format_double(r.curves.cum_mae[t]);
        steps += '\n';
    }
    write_text_file(run.file("per_step.csv"), steps);
    run.note_output("per_step.csv");

    // heatmap frames for one sample: target vs prediction, min-max scaled
    if (sample_index >= ds->num_samples())
        throw std::runtime_error("--sample-index " + std::to_string(sample_index) +
                                 " out of range (samples " + std::to_string(ds->num_samples()) + ")");
    Tensor<S> x, y;
    std::vector<std::int64_t> ids{sample_index};
    ds->fetch(ids, x, y);
    Tensor<S> xn = x;
    data.normalizer.apply(xn);
    NoGradGuard guard;
    ExecContext ctx{Mode::eval, 0, 0};
    Tensor<S> pred = model.forward(Var<S>::constant(xn), ctx).value();
    data.normalizer.invert(pred);

    std::string scale = "file,min,max\n";
    const std::int64_t H = y.extent(3), W = y.extent(4);
    auto emit = [&](const Tensor<S>& frames, const char* prefix, std::int64_t t) {
        double lo = frames.at(std::int64_t(0), std::int64_t(0), t, std::int64_t(0), std::int64_t(0));
        double hi = lo;
        for (std::int64_t yy = 0; yy < H; ++yy)
            for (std::int64_t xx = 0; xx < W; ++xx) {
                const double v = frames.at(std::int64_t(0), std::int64_t(0), t, yy, xx);
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        const double span = hi > lo ? hi - lo : 1.0;
        std::vector<unsigned char> px(static_cast<std::size_t>(H * W));
        for (std::int64_t yy = 0; yy < H; ++yy)
            for (std::int64_t xx = 0; xx < W; ++xx) {
                const double v = frames.at(std::int64_t(0), std::int64_t(0), t, yy, xx);
                px[static_cast<std::size_t>(yy * W + xx)] =
                    static_cast<unsigned char>(255.0 * (v - lo) / span + 0.5);
            }
        const std::string name = std::string(prefix) + std::to_string(t) + ".pgm";
        write_pgm(run.file(name), px, H, W);
        run.note_output(name);
        scale += name + ',' + format_double(lo) + ',' + format_double(hi) + '\n';
    };
    for (std::int64_t t = 0; t < y.extent(2); ++t) {
        emit(y, "heatmap_target_", t);
        emit(pred, "heatmap_pred_", t);
    }
    write_text_file(run.file("heatmap_scale.csv"), scale);
    run.note_output("heatmap_scale.csv");
    run.finalize();

    std::cout << "eval " << split_name << ": rmse " << format_double(r.rmse) << " mae "
              << format_double(r.mae) << " over " << r.samples << " samples\n";
    return 0;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------
template <typename S>
int run_ablate(const CommonOpts& common, const ModelOpts& mopts, const DataOpts& dopts,
               const SchedOpts& sopts, const std::vector<std::string>& tags) {
    if (tags.empty()) throw std::runtime_error("ablate: empty tag suite");
    const ModelConfig base = mopts.to_config();
    LoadedData data = load_splits(dopts, base.t_in, base.t_out);
    const TrainSchedule sched = sopts.to_schedule(common);

    RunDir run(common.out, "ablate");
    run.add_input("data", dopts.data);
    run.set("precision", common.precision);
    record_config(run, base, sched, dopts);
    run.set("tags", [&] {
        std::string joined;
        for (const auto& t : tags) joined += (joined.empty() ? "" : ",") + t;
        return joined;
    }());

    std::string csv = "tag,status,rmse,mae,params,train_seconds,best_epoch,error\n";
    const EvalResult persistence = persistence_baseline(data.splits.test);
    csv += "persistence,ok," + format_double(persistence.rmse) + ',' +
           format_double(persistence.mae) + ",0,0,0,\n";

    int failures = 0;
    for (const auto& tag : tags) {
        std::cout << "ablate: " << tag << "\n";
        try {
            const ModelConfig cfg =
                tag == "causal" || tag == "reversed"
                    ? [&] {
                          ModelConfig c = base;
                          c.variant = variant_from_name(tag);
                          return c;
                      }()
                    : apply_ablation_tag(base, tag);
            Rng rng(common.seed);
            Model<S> model(cfg, rng);
            const auto t0 = std::chrono::steady_clock::now();
            TrainReport report =
                train_model(model, data.splits.train, data.splits.val, sched, data.normalizer);
            const auto t1 = std::chrono::steady_clock::now();
            if (report.stop_reason.rfind("divergence", 0) == 0)
                throw std::runtime_error(report.stop_reason);
            const EvalResult r =
                evaluate_model(model, data.splits.test, sched.batch_size, data.normalizer);
            const double seconds =
                sched.deterministic ? 0.0 : std::chrono::duration<double>(t1 - t0).count();
            csv += tag + ",ok," + format_double(r.rmse) + ',' + format_double(r.mae) + ',' +
                   std::to_string(model.parameter_count()) + ',' + format_fixed(seconds, 3) + ',' +
                   std::to_string(report.best_epoch) + ",\n";
        } catch (const std::exception& e) {
            ++failures;
            std::string msg = e.what();
            for (auto& ch : msg)
                if (ch == ',' || ch == '\n') ch = ';';
            csv += tag + ",error,,,,,," + msg + '\n';
        }
    }
    write_text_file(run.file("ablation.csv"), csv);
    run.note_output("ablation.csv");
    run.finalize();
    std::cout << csv;
    return failures == 0 ? 0 : 1;
}

// ---------------------------------------------------------------------------
// probe-causality
// ---------------------------------------------------------------------------
template <typename S>
int run_probe(const CommonOpts& common, const ModelOpts& mopts, std::int64_t models,
              std::int64_t positions) {
    const ModelConfig cfg = mopts.to_config();
    double worst = 0;
    for (std::int64_t m = 0; m < models; ++m) {
        Rng rng(splitmix64(common.seed + static_cast<std::uint64_t>(m)));
        Model<S> model(cfg, rng);
        stconv::prime_norm_stats(model, rng);
        const auto report = stconv::leakage_probe(model, rng, static_cast<int>(positions),
                                                           model.is_causal_variant());
        std::cout << "model " << m << ": " << report.probes << " probes, max deviation "
                  << format_double(report.max_deviation) << "\n";
        worst = std::max(worst, report.max_deviation);
    }
    std::cout << "variant " << variant_name(cfg.variant) << ": max deviation at protected indices "
              << format_double(worst) << (worst == 0.0 ? " (causal)" : " (violation)") << "\n";
    return worst == 0.0 ? 0 : 1;
}

// ---------------------------------------------------------------------------
// make-synth / convert
// ---------------------------------------------------------------------------
int run_make_synth(const CommonOpts& common, const SynthSpec& spec) {
    GridSeq grid = gen_synthetic(spec);
    RunDir run(common.out, "make-synth");
    run.set("kind", synth_kind_name(spec.kind));
    run.set("frames", grid.t_total);
    run.set("height", grid.h);
    run.set("width", grid.w);
    run.set("seed", static_cast<std::int64_t>(spec.seed));
    write_gseq(run.file("data.gseq"), grid);
    run.note_output("data.gseq");
    run.set("output.data.digest", hex64(file_digest(run.file("data.gseq"))));
    run.finalize();
    std::cout << "wrote " << run.file("data.gseq") << " (" << grid.t_total << "x" << grid.h << "x"
              << grid.w << ")\n";
    return 0;
}

int run_convert(const CommonOpts& common, const std::string& raw, const RawImportOptions& opt) {
    RawImportResult res = import_raw(raw, opt); // validated before the run dir exists
    RunDir run(common.out, "convert");
    run.add_input("raw", raw);
    run.set("axis_order", opt.axis_order);
    run.set("big_endian", opt.big_endian ? "1" : "0");
    run.set("nan_filled", res.nan_count);
    write_gseq(run.file("data.gseq"), res.grid);
    run.note_output("data.gseq");
    run.finalize();
    std::cout << "converted " << raw << "; NaNs filled: " << res.nan_count << "\n";
    return 0;
}

int run_grad_check(const CommonOpts& common) {
    // double precision regardless of --precision
    const auto results = run_gradient_checks(common.seed);
    bool all_pass = true;
    for (const auto& r : results) {
        std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << ": max rel err "
                  << format_double(r.max_err) << " (tol " << format_double(r.tol) << ")\n";
        all_pass = all_pass && r.pass;
    }
    return all_pass ? 0 : 1;
}

template <typename Fn>
int dispatch_precision(const std::string& precision, Fn&& fn) {
    if (precision == "double") return fn(double{});
    return fn(float{});
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{std::string(kVersion) +
                 " - spatiotemporal sequence-to-sequence forecasting toolkit"};
    app.require_subcommand(1);
    app.set_config("--config", "",
                   "flat key=value file scoped as <subcommand>.<flag>=<value>; "
                   "command-line flags win");

    CommonOpts synth_common;
    SynthSpec synth_spec;
    std::string synth_kind = "advecting-blobs";
    auto* synth = app.add_subcommand("make-synth", "generate a synthetic gseq dataset");
    add_common(synth, synth_common);
    synth->add_option("--kind", synth_kind, "advecting-blobs | traveling-wave | noise-floor");
    synth->add_option("--frames", synth_spec.t_total, "series length");
    synth->add_option("--height", synth_spec.h, "grid height");
    synth->add_option("--width", synth_spec.w, "grid width");
    synth->add_option("--blobs", synth_spec.blob_count, "blob count");
    synth->add_option("--blob-sigma", synth_spec.blob_sigma, "blob width");
    synth->add_option("--vel-y", synth_spec.vel_y, "blob velocity, rows/frame");
    synth->add_option("--vel-x", synth_spec.vel_x, "blob velocity, cols/frame");
    synth->add_option("--noise-std", synth_spec.blob_noise_std, "additive noise on blobs");
    synth->add_option("--disp-y", synth_spec.disp_y, "wave displacement, rows/frame");
    synth->add_option("--disp-x", synth_spec.disp_x, "wave displacement, cols/frame");
    synth->add_option("--freq-y", synth_spec.freq_y, "wave frequency over rows");
    synth->add_option("--freq-x", synth_spec.freq_x, "wave frequency over cols");
    synth->add_option("--amplitude", synth_spec.amplitude, "wave amplitude");
    synth->add_option("--mean", synth_spec.noise_mean, "noise mean");
    synth->add_option("--std", synth_spec.noise_std, "noise standard deviation");

    CommonOpts conv_common;
    std::string conv_raw;
    RawImportOptions conv_opt;
    double conv_fill = 0;
    bool conv_has_fill = false;
    auto* convert = app.add_subcommand("convert", "import a raw float32 dump into gseq");
    add_common(convert, conv_common);
    convert->add_option("--raw", conv_raw, "raw float32 file")->required();
    convert->add_option("--frames", conv_opt.t_total, "time extent")->required();
    convert->add_option("--height", conv_opt.h, "grid height")->required();
    convert->add_option("--width", conv_opt.w, "grid width")->required();
    convert->add_option("--channels", conv_opt.c, "channel count");
    convert->add_option("--axis-order", conv_opt.axis_order, "thwc | cthw");
    convert->add_flag("--big-endian", conv_opt.big_endian, "byteswap on import");
    auto* fill_opt = convert->add_option("--fill-nan", conv_fill, "replace NaNs with this value");

    CommonOpts train_common;
    ModelOpts train_model_opts;
    DataOpts train_data;
    SchedOpts train_sched;
    auto* train = app.add_subcommand("train", "train a model and write a checkpoint");
    add_common(train, train_common);
    train_model_opts.add_flags(train);
    train_data.add_flags(train);
    train_sched.add_flags(train);

    CommonOpts eval_common;
    DataOpts eval_data;
    std::string eval_checkpoint, eval_config, eval_split = "test";
    std::int64_t eval_batch = 32, eval_sample = 0;
    bool eval_samples_only = false;
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint and emit figures");
    add_common(eval, eval_common);
    eval->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();
    eval->add_option("--model-config", eval_config, "config file (default: sibling config.cfg)");
    eval_data.add_flags(eval);
    eval->add_option("--split", eval_split, "train | val | test");
    eval->add_option("--batch", eval_batch, "evaluation batch size");
    eval->add_option("--sample-index", eval_sample, "sample to render as heatmaps");
    eval->add_flag("--normalize-by-samples", eval_samples_only,
                   "divide metric sums by the sample count only");

    CommonOpts abl_common;
    ModelOpts abl_model;
    DataOpts abl_data;
    SchedOpts abl_sched;
    std::vector<std::string> abl_tags;
    auto* ablate = app.add_subcommand("ablate", "train a suite of model variants");
    add_common(ablate, abl_common);
    abl_model.add_flags(ablate);
    abl_data.add_flags(ablate);
    abl_sched.add_flags(ablate);
    ablate->add_option("--tags", abl_tags, "variant tags (default: the seven ablation arms)")
        ->delimiter(',');

    CommonOpts probe_common;
    ModelOpts probe_model;
    std::int64_t probe_models = 5, probe_positions = 20;
    auto* probe = app.add_subcommand("probe-causality", "randomized future-leakage probes");
    add_common(probe, probe_common, false);
    probe_model.add_flags(probe);
    probe->add_option("--models", probe_models, "random models per variant");
    probe->add_option("--positions", probe_positions, "perturbation positions per model");

    CommonOpts gc_common;
    auto* gc = app.add_subcommand("grad-check", "finite-difference gradient verification");
    add_common(gc, gc_common, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (synth->parsed()) {
            synth_spec.kind = synth_kind_from_name(synth_kind);
            synth_spec.seed = synth_common.seed;
            return run_make_synth(synth_common, synth_spec);
        }
        if (convert->parsed()) {
            if (fill_opt->count() > 0) conv_has_fill = true;
            if (conv_has_fill) conv_opt.nan_fill = static_cast<float>(conv_fill);
            return run_convert(conv_common, conv_raw, conv_opt);
        }
        if (train->parsed())
            return dispatch_precision(train_common.precision, [&](auto tag) {
                return run_train<decltype(tag)>(train_common, train_model_opts, train_data,
                                                train_sched);
            });
        if (eval->parsed())
            return dispatch_precision(eval_common.precision, [&](auto tag) {
                return run_eval<decltype(tag)>(eval_common, eval_checkpoint, eval_config, eval_data,
                                               eval_split, eval_batch, eval_sample,
                                               eval_samples_only);
            });
        if (ablate->parsed()) {
            if (abl_tags.empty())
                abl_tags.assign(std::begin(kAblationTags), std::end(kAblationTags));
            return dispatch_precision(abl_common.precision, [&](auto tag) {
                return run_ablate<decltype(tag)>(abl_common, abl_model, abl_data, abl_sched,
                                                 abl_tags);
            });
        }
        if (probe->parsed())
            return dispatch_precision(probe_common.precision, [&](auto tag) {
                return run_probe<decltype(tag)>(probe_common, probe_model, probe_models,
                                                probe_positions);
            });
        if (gc->parsed()) return run_grad_check(gc_common);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
