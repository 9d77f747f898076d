// batunet: experiment driver. Each subcommand reads and writes artifacts
// under --out, so stages can be rerun independently.
#include "batunet/harness.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

using namespace batunet;

namespace {

enum Exit { kOk = 0, kUsage = 2, kData = 3, kNumeric = 4 };

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::optional<std::size_t> threads;
    bool verbose = false;
};

ExperimentConfig resolve(const Globals &g) {
    ExperimentConfig cfg = g.config.empty() ? ExperimentConfig{} : load_config(g.config);
    if (g.seed)
        cfg.seed = *g.seed;
    if (!g.out.empty())
        cfg.out_dir = g.out;
    if (g.threads)
        cfg.threads = *g.threads;
    cfg.verbose = g.verbose;
    cfg.validate();
    return cfg;
}

void print_eval(const EvaluateResult &r) {
    const auto &op = r.operating_point;
    std::printf("best threshold %g: F1 %.4f precision %.4f recall %.4f\n", op.threshold, op.metrics.f1,
                op.metrics.precision, op.metrics.recall);
    std::printf("AUC %.4f\n", r.roc.auc);
    std::printf("Dice over %zu validation samples: mean %.4f median %.4f (q1 %.4f, q3 %.4f)\n", r.dice.values.size(),
                r.dice.mean, r.dice.median, r.dice.q1, r.dice.q3);
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"3D U-Net segmentation with Bat Algorithm hyperparameter search"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config, "JSON experiment config")->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed, "master seed (overrides config)");
    app.add_option("--out", g.out, "output directory (overrides config)");
    app.add_option("--threads", g.threads, "worker threads")->check(CLI::PositiveNumber);
    app.add_flag("--verbose", g.verbose, "log events to stderr");

    auto *gen = app.add_subcommand("gen-data", "generate (or import) the dataset");
    std::string import_dir;
    gen->add_option("--import", import_dir, "directory of <id>.img.vol3/<id>.mask.vol3 pairs")
        ->check(CLI::ExistingDirectory);

    auto *opt = app.add_subcommand("optimize", "Bat Algorithm search over learning rate and batch size");

    auto *trn = app.add_subcommand("train", "final training run");
    std::optional<double> lr;
    std::optional<std::size_t> batch;
    trn->add_option("--lr", lr, "learning rate (default: optimize/best.json)");
    trn->add_option("--batch-size", batch, "batch size (default: optimize/best.json)");

    auto *ev = app.add_subcommand("evaluate", "threshold sweep, ROC, Dice and heatmaps on the validation split");
    std::string ckpt;
    ev->add_option("--checkpoint", ckpt, "checkpoint (default: train/model.unc1)");

    auto *rep = app.add_subcommand("report", "summary table from the evaluate run log");
    auto *pipe = app.add_subcommand("pipeline", "gen-data, optimize, train, evaluate and report in sequence");

    for (auto *sub : {gen, opt, trn, ev, rep, pipe})
        sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        const auto cfg = resolve(g);
        if (gen->parsed() || pipe->parsed()) {
            auto r = cmd_gen_data(cfg, import_dir.empty() ? std::nullopt : std::optional<std::filesystem::path>(import_dir));
            std::printf("%zu samples of shape %s written to %s\n", r.samples, to_string(r.shape).c_str(),
                        r.dir.string().c_str());
        }
        if (opt->parsed() || pipe->parsed()) {
            auto r = cmd_optimize(cfg);
            std::printf("best learning rate %.6g, batch size %zu (validation loss %.6g, %zu evaluations)\n",
                        r.best.learning_rate, r.best.batch_size, r.history.best_fitness, r.history.evaluation_count);
        }
        if (trn->parsed() || pipe->parsed()) {
            if (lr.has_value() != batch.has_value())
                throw UsageError("--lr and --batch-size must be given together");
            std::optional<Hyperparams> hp;
            if (lr)
                hp = Hyperparams{*lr, *batch};
            auto r = cmd_train(cfg, hp);
            const auto &last = r.log.back();
            std::printf("trained %zu epochs (lr %.6g, batch %zu): val loss %.6g, val acc %.6f\n", r.log.size(),
                        r.hyperparams.learning_rate, r.hyperparams.batch_size, last.val_loss, last.val_acc);
        }
        if (ev->parsed() || pipe->parsed())
            print_eval(cmd_evaluate(cfg, ckpt.empty() ? std::nullopt : std::optional<std::filesystem::path>(ckpt)));
        if (rep->parsed() || pipe->parsed())
            std::fputs(cmd_report(cfg).text.c_str(), stdout);
    } catch (const UsageError &e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kUsage;
    } catch (const InvalidInput &e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return kUsage;
    } catch (const CheckpointError &e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return kUsage;
    } catch (const NumericFailure &e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kNumeric;
    } catch (const FitnessError &e) {
        std::cerr << "fitness evaluation failed: " << e.what() << "\n";
        return kNumeric;
    } catch (const Error &e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kData;
    }
    return kOk;
}
