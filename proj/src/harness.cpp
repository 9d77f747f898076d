#include "batunet/harness.hpp"

#include "batunet/checkpoint.hpp"
#include "batunet/parallel.hpp"
#include "batunet/volume_io.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <map>

namespace batunet {

namespace {

using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

/// Line-delimited JSON event log, written in one piece when the command ends.
class RunLog {
  public:
    RunLog(std::string command, bool verbose) : command_(std::move(command)), verbose_(verbose) {}

    void event(const std::string &name, ojson body = ojson::object()) {
        ojson line;
        line["event"] = name;
        for (auto &[k, v] : body.items())
            line[k] = v;
        lines_.push_back(line.dump());
        if (verbose_)
            std::cerr << "[" << command_ << "] " << lines_.back() << "\n";
    }

    void write(const OutputLayout &out) const {
        std::string text;
        for (const auto &l : lines_)
            text += l + "\n";
        save_file_atomic(out.logs() / (command_ + ".jsonl"), text);
    }

  private:
    std::string command_;
    bool verbose_;
    std::vector<std::string> lines_;
};

class Stopwatch {
  public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

  private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// Wall-clock time lives outside the run log so the log stays replayable byte for byte.
void write_timing(const OutputLayout &out, const std::string &command, const Stopwatch &sw) {
    ojson j{{"command", command}, {"seconds", sw.seconds()}};
    save_file_atomic(out.logs() / (command + ".timing.json"), j.dump() + "\n");
}

void ensure_dir(const fs::path &p) {
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec)
        throw IoError("cannot create directory " + p.string() + ": " + ec.message());
}

OutputLayout prepare(const ExperimentConfig &cfg) {
    cfg.validate();
    OutputLayout out{cfg.out_dir};
    ensure_dir(out.logs());
    return out;
}

// Config snapshot for run logs: everything that affects numbers, nothing
// machine-specific (output directory, thread count).
ojson config_snapshot(const ExperimentConfig &cfg) {
    auto j = ojson::parse(config_to_json(cfg));
    j.erase("output_dir");
    j.erase("threads");
    return j;
}

std::string relative(const OutputLayout &out, const fs::path &p) { return fs::relative(p, out.root).generic_string(); }

struct Splits {
    LoadedDataset data;
    std::vector<SegSample> train;
    std::vector<SegSample> val;
};

Splits load_splits(const OutputLayout &out) {
    if (!fs::exists(out.dataset() / "manifest.json"))
        throw UsageError("no dataset at " + out.dataset().string() + " (run gen-data first)");
    Splits s{load_dataset(out.dataset()), {}, {}};
    std::map<std::string, const SegSample *> by_id;
    for (const auto &sample : s.data.samples)
        by_id[sample.id] = &sample;
    auto pick = [&](const std::vector<std::string> &ids, std::vector<SegSample> &dst) {
        for (const auto &id : ids) {
            auto it = by_id.find(id);
            if (it == by_id.end())
                throw InvalidInput("dataset: split references unknown id " + id);
            dst.push_back(*it->second);
        }
    };
    pick(s.data.manifest.split.train, s.train);
    pick(s.data.manifest.split.val, s.val);
    if (s.train.empty() || s.val.empty())
        throw InvalidInput("dataset: empty train or validation split");
    return s;
}

UNetConfig unet_for(const ExperimentConfig &cfg, const Splits &s) {
    UNetConfig c = cfg.unet_config();
    c.input_shape = s.train.front().image.shape();
    try {
        c.validate();
    } catch (const InvalidInput &e) {
        throw UsageError(std::string("dataset shape incompatible with the network: ") + e.what());
    }
    return c;
}

ojson epoch_json(const EpochLog &e) {
    return {{"epoch", e.epoch},
            {"train_loss", e.train_loss},
            {"train_acc", e.train_acc},
            {"val_loss", e.val_loss},
            {"val_acc", e.val_acc}};
}

ojson counts_json(const ConfusionCounts &c) { return {{"tp", c.tp}, {"tn", c.tn}, {"fp", c.fp}, {"fn", c.fn}}; }

std::vector<ojson> read_jsonl(const fs::path &path) {
    if (!fs::exists(path))
        throw UsageError("run log " + path.string() + " not found");
    const auto bytes = load_file(path);
    std::vector<ojson> events;
    std::string line;
    for (char ch : bytes) {
        if (ch == '\n') {
            if (!line.empty())
                events.push_back(ojson::parse(line));
            line.clear();
        } else {
            line += ch;
        }
    }
    if (!line.empty())
        events.push_back(ojson::parse(line));
    return events;
}

std::size_t inner_threads(std::size_t threads, std::size_t workers) { return std::max<std::size_t>(1, threads / workers); }

} // namespace

std::string curves_csv(const std::vector<EpochLog> &log) {
    std::string s(kCurvesHeader);
    s += "\n";
    for (const auto &e : log)
        s += fmt::format("{},{},{},{},{}\n", e.epoch, e.train_loss, e.train_acc, e.val_loss, e.val_acc);
    return s;
}

std::string sweep_csv(const std::vector<SweepEntry> &sweep) {
    std::string s(kSweepHeader);
    s += "\n";
    for (const auto &e : sweep)
        s += fmt::format("{},{},{},{},{},{},{},{},{},{}\n", e.threshold, e.counts.tp, e.counts.tn, e.counts.fp,
                         e.counts.fn, e.metrics.accuracy, e.metrics.precision, e.metrics.recall, e.metrics.f1,
                         e.metrics.specificity);
    return s;
}

std::string roc_csv(const RocCurve &roc) {
    std::string s(kRocHeader);
    s += "\n";
    for (const auto &p : roc.points)
        s += fmt::format("{},{}\n", p.fpr, p.tpr);
    return s;
}

std::string pgm_image(const std::vector<double> &pixels, std::size_t width, std::size_t height) {
    if (pixels.size() != width * height)
        throw ShapeError("pgm_image: pixel count does not match dimensions");
    std::string s = fmt::format("P5\n{} {}\n255\n", width, height);
    for (double v : pixels)
        s.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
    return s;
}

std::vector<double> centre_slice(const VolumeD &v) {
    const auto &s = v.shape();
    std::vector<double> px;
    px.reserve(s.d * s.h);
    for (std::size_t z = 0; z < s.d; ++z)
        for (std::size_t y = 0; y < s.h; ++y)
            px.push_back(v(0, z, y, s.w / 2));
    return px;
}

std::vector<double> centre_slice(const MaskVolume &m) {
    std::vector<double> px;
    px.reserve(m.shape.d * m.shape.h);
    for (std::size_t z = 0; z < m.shape.d; ++z)
        for (std::size_t y = 0; y < m.shape.h; ++y)
            px.push_back(m(z, y, m.shape.w / 2));
    return px;
}

ReportRow make_report_row(const ConfusionCounts &counts, double auc) {
    const auto m = metric_set(counts);
    return {100.0 * m.accuracy, m.precision, m.recall, m.f1, auc, 100.0 * m.recall, 100.0 * m.specificity};
}

std::string report_csv(const ReportRow &r) {
    return fmt::format("{}\nbatunet,{:.2f},{:.4f},{:.4f},{:.4f},{:.4f},{:.2f},{:.2f}\n", kReportHeader, r.accuracy_pct,
                       r.precision, r.recall, r.f1, r.auc, r.sensitivity_pct, r.specificity_pct);
}

std::string report_text(const ReportRow &r, const ConfusionCounts &c, double threshold) {
    std::string s;
    s += fmt::format("{:<14}{:>10}{:>11}{:>8}{:>10}{:>8}{:>13}{:>13}\n", "Model", "Accuracy%", "Precision", "Recall",
                     "F1-Score", "AUC", "Sensitivity", "Specificity");
    s += fmt::format("{:<14}{:>10.2f}{:>11.4f}{:>8.4f}{:>10.4f}{:>8.4f}{:>13.2f}{:>13.2f}\n", "batunet", r.accuracy_pct,
                     r.precision, r.recall, r.f1, r.auc, r.sensitivity_pct, r.specificity_pct);
    s += fmt::format("\noperating threshold {}: TP={} TN={} FP={} FN={}\n", threshold, c.tp, c.tn, c.fp, c.fn);
    return s;
}

GenDataResult cmd_gen_data(const ExperimentConfig &cfg, const std::optional<fs::path> &import_dir) {
    Stopwatch sw;
    const auto out = prepare(cfg);
    RunLog log("gen-data", cfg.verbose);
    log.event("config", config_snapshot(cfg));

    std::vector<SegSample> samples;
    DatasetManifest manifest;
    manifest.seed = cfg.seed;
    manifest.spec = cfg.synth_spec();
    if (import_dir) {
        samples = import_raw_dataset(*import_dir, cfg.synth.target_shape);
        manifest.synthetic = false;
        manifest.spec.num_samples = samples.size();
    } else {
        samples = generate_dataset(manifest.spec, cfg.threads);
    }
    for (const auto &s : samples)
        manifest.ids.push_back(s.id);
    manifest.split = split_dataset(manifest.ids, cfg.split_ratio, cfg.split_seed());

    save_dataset(out.dataset(), samples, manifest);
    const auto shape = samples.front().image.shape();
    log.event("dataset", {{"samples", samples.size()},
                          {"shape", {shape.d, shape.h, shape.w}},
                          {"synthetic", manifest.synthetic},
                          {"train", manifest.split.train},
                          {"val", manifest.split.val}});
    log.event("artifact", {{"path", relative(out, out.dataset() / "manifest.json")}});
    log.write(out);
    write_timing(out, "gen-data", sw);
    if (cfg.verbose)
        std::cerr << "gen-data: " << samples.size() << " samples of shape " << to_string(shape) << "\n";
    return {samples.size(), shape, out.dataset()};
}

OptimizeResult cmd_optimize(const ExperimentConfig &cfg) {
    Stopwatch sw;
    const auto out = prepare(cfg);
    const auto splits = load_splits(out);
    const auto unet_cfg = unet_for(cfg, splits);
    auto bat_cfg = cfg.bat_config();
    bat_cfg.workers = std::min(cfg.threads, bat_cfg.num_bats);
    const std::size_t inner = inner_threads(cfg.threads, bat_cfg.workers);

    RunLog log("optimize", cfg.verbose);
    log.event("config", config_snapshot(cfg));

    // Every candidate trains from the same initial weights and shuffling
    // seed, so fitness differences come from the hyperparameters alone.
    const auto base = init_model(unet_cfg, cfg.init_seed());
    auto fitness = [&](const Hyperparams &hp, const EvalContext &) {
        TrainOptions opts;
        opts.augment = cfg.augment;
        opts.threads = inner;
        auto r = train(base, splits.train, splits.val, hp, cfg.proxy_epochs, cfg.train_seed(), opts);
        const double loss = r.log.back().val_loss;
        if (!std::isfinite(loss))
            throw NumericFailure("proxy training produced a non-finite validation loss");
        return loss;
    };

    auto log_history = [&](const BatRunHistory &h) {
        std::size_t next_eval = 0;
        auto flush_evals = [&](std::size_t iteration) {
            for (; next_eval < h.evaluations.size() && h.evaluations[next_eval].iteration == iteration; ++next_eval) {
                const auto &e = h.evaluations[next_eval];
                const auto hp = decode_position(e.position, bat_cfg.bounds);
                log.event("bat_evaluation", {{"iteration", e.iteration},
                                             {"bat", e.bat},
                                             {"position", e.position},
                                             {"learning_rate", hp.learning_rate},
                                             {"batch_size", hp.batch_size},
                                             {"fitness", e.fitness},
                                             {"cached", e.cached}});
            }
        };
        flush_evals(0);
        for (const auto &it : h.iterations) {
            flush_evals(it.iteration);
            ojson bats = ojson::array();
            for (const auto &b : it.bats)
                bats.push_back({{"position", b.bat.x},
                                {"velocity", b.bat.v},
                                {"frequency", b.bat.frequency},
                                {"loudness", b.bat.loudness},
                                {"pulse_rate", b.bat.pulse_rate},
                                {"fitness", b.bat.fitness},
                                {"local_walk", b.local_walk},
                                {"accepted", b.accepted}});
            log.event("bat_iteration",
                      {{"iteration", it.iteration}, {"best", it.best}, {"best_fitness", it.best_fitness}, {"bats", bats}});
        }
    };

    BatResult result;
    try {
        result = optimize_hyperparams(bat_cfg, fitness);
    } catch (const FitnessError &e) {
        if (e.partial_history())
            log_history(*e.partial_history());
        log.event("error", {{"message", e.what()}, {"bat", e.bat()}, {"position", e.position()}});
        log.write(out);
        throw;
    }
    log_history(result.history);
    log.event("bat_best", {{"learning_rate", result.best.learning_rate},
                           {"batch_size", result.best.batch_size},
                           {"position", result.history.best},
                           {"fitness", result.history.best_fitness},
                           {"evaluations", result.history.evaluation_count},
                           {"stopped_early", result.history.stopped_early}});

    ensure_dir(out.best_hyperparams().parent_path());
    ojson best{{"learning_rate", result.best.learning_rate},
               {"batch_size", result.best.batch_size},
               {"position", result.history.best},
               {"fitness", result.history.best_fitness}};
    save_file_atomic(out.best_hyperparams(), best.dump(2) + "\n");
    log.event("artifact", {{"path", relative(out, out.best_hyperparams())}});
    log.write(out);
    write_timing(out, "optimize", sw);
    if (cfg.verbose)
        std::cerr << fmt::format("optimize: best learning rate {:.6g}, batch size {} (val loss {:.6g}, {} evaluations)\n",
                                 result.best.learning_rate, result.best.batch_size, result.history.best_fitness,
                                 result.history.evaluation_count);
    return {result.best, std::move(result.history)};
}

TrainCmdResult cmd_train(const ExperimentConfig &cfg, const std::optional<Hyperparams> &hp_arg) {
    Stopwatch sw;
    const auto out = prepare(cfg);
    Hyperparams hp;
    std::string source = "argument";
    if (hp_arg) {
        hp = *hp_arg;
    } else {
        if (!fs::exists(out.best_hyperparams()))
            throw UsageError("no hyperparameters given and " + out.best_hyperparams().string() +
                             " not found (run optimize first or pass --lr/--batch-size)");
        const auto bytes = load_file(out.best_hyperparams());
        const auto j = ojson::parse(std::string(bytes.begin(), bytes.end()));
        hp.learning_rate = j.at("learning_rate").get<double>();
        hp.batch_size = j.at("batch_size").get<std::size_t>();
        source = relative(out, out.best_hyperparams());
    }
    if (!std::isfinite(hp.learning_rate) || hp.learning_rate < 0.0 || hp.batch_size < 1)
        throw UsageError("invalid hyperparameters: learning rate must be finite and >= 0, batch size >= 1");

    const auto splits = load_splits(out);
    const auto unet_cfg = unet_for(cfg, splits);
    RunLog log("train", cfg.verbose);
    log.event("config", config_snapshot(cfg));
    log.event("hyperparams", {{"learning_rate", hp.learning_rate}, {"batch_size", hp.batch_size}, {"source", source}});

    TrainOptions opts;
    opts.augment = cfg.augment;
    opts.threads = cfg.threads;
    opts.on_epoch = [&](const EpochLog &e) { log.event("epoch", epoch_json(e)); };
    auto result = train(init_model(unet_cfg, cfg.init_seed()), splits.train, splits.val, hp, cfg.epochs,
                        cfg.train_seed(), opts);

    ensure_dir(out.checkpoint().parent_path());
    save_file_atomic(out.checkpoint(), save_checkpoint(result.model));
    save_file_atomic(out.curves(), curves_csv(result.log));
    log.event("artifact", {{"path", relative(out, out.checkpoint())}});
    log.event("artifact", {{"path", relative(out, out.curves())}});
    log.write(out);
    write_timing(out, "train", sw);
    return {hp, std::move(result.log), out.checkpoint()};
}

EvaluateResult cmd_evaluate(const ExperimentConfig &cfg, const std::optional<fs::path> &checkpoint) {
    Stopwatch sw;
    const auto out = prepare(cfg);
    const fs::path ckpt = checkpoint.value_or(out.checkpoint());
    if (!fs::exists(ckpt))
        throw UsageError("checkpoint " + ckpt.string() + " not found (run train first)");
    const auto model = load_checkpoint(load_file(ckpt));
    const auto splits = load_splits(out);
    if (!(model.config().input_shape == splits.val.front().image.shape()))
        throw CheckpointError("checkpoint expects input " + to_string(model.config().input_shape) +
                              " but the dataset has " + to_string(splits.val.front().image.shape()));

    RunLog log("evaluate", cfg.verbose);
    log.event("config", config_snapshot(cfg));

    const auto &val = splits.val;
    std::vector<VolumeD> probs(val.size());
    parallel_for(val.size(), cfg.threads, [&](std::size_t i) { probs[i] = unet_forward(model, val[i].image); });

    std::vector<double> scores;
    std::vector<std::uint8_t> labels;
    for (std::size_t i = 0; i < val.size(); ++i) {
        scores.insert(scores.end(), probs[i].data().data(), probs[i].data().data() + probs[i].size());
        labels.insert(labels.end(), val[i].mask.data.begin(), val[i].mask.data.end());
    }

    EvaluateResult r;
    r.sweep = threshold_sweep(scores, labels, cfg.thresholds);
    r.operating_point = best_f1(r.sweep);
    r.roc = roc_auc(scores, labels);
    std::vector<MaskVolume> preds, truths;
    for (std::size_t i = 0; i < val.size(); ++i) {
        preds.push_back(mask_from_probs(probs[i], r.operating_point.threshold));
        truths.push_back(val[i].mask);
        r.ids.push_back(val[i].id);
    }
    r.dice = dice_per_sample(preds, truths);

    const auto dir = out.eval();
    ensure_dir(dir / "heatmaps");
    save_file_atomic(dir / "sweep.csv", sweep_csv(r.sweep));
    const auto &op = r.operating_point;
    save_file_atomic(dir / "confusion.csv", fmt::format("{}\n{},{},{},{},{}\n", kConfusionHeader, op.threshold,
                                                        op.counts.tp, op.counts.tn, op.counts.fp, op.counts.fn));
    save_file_atomic(dir / "roc.csv", roc_csv(r.roc));
    std::string dice_text(kDiceHeader);
    dice_text += "\n";
    for (std::size_t i = 0; i < r.ids.size(); ++i)
        dice_text += fmt::format("{},{}\n", r.ids[i], r.dice.values[i]);
    save_file_atomic(dir / "dice.csv", dice_text);
    ojson dice_json{{"threshold", op.threshold},     {"mean", r.dice.mean},
                    {"median", r.dice.median},       {"q1", r.dice.q1},
                    {"q3", r.dice.q3},               {"whisker_low", r.dice.whisker_low},
                    {"whisker_high", r.dice.whisker_high}, {"outliers", r.dice.outliers}};
    save_file_atomic(dir / "dice_summary.json", dice_json.dump(2) + "\n");

    const auto &shape = val.front().image.shape();
    std::vector<std::string> heatmaps;
    for (std::size_t i = 0; i < val.size(); ++i) {
        const std::pair<const char *, std::vector<double>> panels[] = {{"image", centre_slice(val[i].image)},
                                                                       {"prob", centre_slice(probs[i])},
                                                                       {"truth", centre_slice(val[i].mask)}};
        for (const auto &[name, px] : panels) {
            const auto path = dir / "heatmaps" / fmt::format("{}_{}.pgm", val[i].id, name);
            save_file_atomic(path, pgm_image(px, shape.h, shape.d));
            heatmaps.push_back(relative(out, path));
        }
    }

    for (const auto &e : r.sweep) {
        auto j = counts_json(e.counts);
        j["threshold"] = e.threshold;
        j["f1"] = e.metrics.f1;
        log.event("sweep_entry", j);
    }
    auto opj = counts_json(op.counts);
    opj["threshold"] = op.threshold;
    log.event("operating_point", opj);
    log.event("roc", {{"auc", r.roc.auc}, {"points", r.roc.points.size()}});
    log.event("dice", dice_json);
    for (const char *name : {"sweep.csv", "confusion.csv", "roc.csv", "dice.csv", "dice_summary.json"})
        log.event("artifact", {{"path", relative(out, dir / name)}});
    for (const auto &h : heatmaps)
        log.event("artifact", {{"path", h}});
    log.write(out);
    write_timing(out, "evaluate", sw);
    if (cfg.verbose)
        std::cerr << fmt::format("evaluate: threshold {} F1 {:.4f} AUC {:.4f} mean Dice {:.4f}\n", op.threshold,
                                 op.metrics.f1, r.roc.auc, r.dice.mean);
    return r;
}

ReportResult cmd_report(const ExperimentConfig &cfg) {
    Stopwatch sw;
    const auto out = prepare(cfg);
    const auto events = read_jsonl(out.logs() / "evaluate.jsonl");
    std::optional<ConfusionCounts> counts;
    std::optional<double> auc;
    double threshold = 0.0;
    for (const auto &e : events) {
        const auto name = e.value("event", "");
        if (name == "operating_point") {
            counts = ConfusionCounts{e.at("tp").get<std::uint64_t>(), e.at("tn").get<std::uint64_t>(),
                                     e.at("fp").get<std::uint64_t>(), e.at("fn").get<std::uint64_t>()};
            threshold = e.at("threshold").get<double>();
        } else if (name == "roc") {
            auc = e.at("auc").get<double>();
        }
    }
    if (!counts || !auc)
        throw UsageError("evaluate run log is incomplete (missing operating_point or roc event)");
    if (counts->total() == 0)
        throw UsageError("evaluate run log has an empty confusion matrix");

    ReportResult r;
    r.row = make_report_row(*counts, *auc);
    r.csv = report_csv(r.row);
    r.text = report_text(r.row, *counts, threshold);
    ensure_dir(out.report());
    save_file_atomic(out.report() / "summary.csv", r.csv);
    save_file_atomic(out.report() / "summary.txt", r.text);

    RunLog log("report", cfg.verbose);
    log.event("config", config_snapshot(cfg));
    log.event("report", {{"accuracy_pct", r.row.accuracy_pct},
                         {"precision", r.row.precision},
                         {"recall", r.row.recall},
                         {"f1", r.row.f1},
                         {"auc", r.row.auc},
                         {"sensitivity_pct", r.row.sensitivity_pct},
                         {"specificity_pct", r.row.specificity_pct}});
    log.event("artifact", {{"path", relative(out, out.report() / "summary.csv")}});
    log.event("artifact", {{"path", relative(out, out.report() / "summary.txt")}});
    log.write(out);
    write_timing(out, "report", sw);
    return r;
}

std::vector<fs::path> list_outputs(const fs::path &root) {
    std::vector<fs::path> files;
    for (const auto &e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file())
            files.push_back(fs::relative(e.path(), root));
    std::sort(files.begin(), files.end());
    return files;
}

} // namespace batunet
