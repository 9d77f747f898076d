#pragma once

#include "batunet/bat.hpp"
#include "batunet/data.hpp"
#include "batunet/metrics.hpp"
#include "batunet/training.hpp"
#include "batunet/unet.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace batunet {

/// Bad command line, config file, or missing prerequisite artifact.
class UsageError : public Error {
  public:
    using Error::Error;
};

inline constexpr int kConfigSchemaVersion = 1;

/// Everything one experiment needs. The master seed determines every derived seed.
struct ExperimentConfig {
    std::uint64_t seed = 42;
    SynthSpec synth;
    std::size_t base_filters = 4;
    BatConfig bat;
    std::size_t epochs = 10;
    std::size_t proxy_epochs = 2;
    double split_ratio = 0.8;
    bool augment = true;
    std::vector<double> thresholds = default_threshold_grid();
    std::filesystem::path out_dir = "out";
    std::size_t threads = 1;
    bool verbose = false;

    void validate() const;

    SynthSpec synth_spec() const;  // with the derived data seed
    UNetConfig unet_config() const; // input shape = synth.target_shape
    BatConfig bat_config() const;   // with the derived search seed
    std::uint64_t split_seed() const;
    std::uint64_t init_seed() const;
    std::uint64_t train_seed() const;
};

/// Parses the JSON config document; unknown keys and a wrong
/// schema_version are rejected with UsageError.
ExperimentConfig config_from_json(const std::string &text);
std::string config_to_json(const ExperimentConfig &cfg);
ExperimentConfig load_config(const std::filesystem::path &path);

/// Output layout under cfg.out_dir.
struct OutputLayout {
    std::filesystem::path root;
    std::filesystem::path dataset() const { return root / "dataset"; }
    std::filesystem::path logs() const { return root / "logs"; }
    std::filesystem::path best_hyperparams() const { return root / "optimize" / "best.json"; }
    std::filesystem::path checkpoint() const { return root / "train" / "model.unc1"; }
    std::filesystem::path curves() const { return root / "train" / "curves.csv"; }
    std::filesystem::path eval() const { return root / "eval"; }
    std::filesystem::path report() const { return root / "report"; }
    std::filesystem::path timings() const { return logs() / "timings.jsonl"; }
};

// CSV schemas.
inline constexpr std::string_view kCurvesHeader = "epoch,train_loss,train_acc,val_loss,val_acc";
inline constexpr std::string_view kSweepHeader = "threshold,tp,tn,fp,fn,accuracy,precision,recall,f1,specificity";
inline constexpr std::string_view kRocHeader = "fpr,tpr";
inline constexpr std::string_view kConfusionHeader = "threshold,tp,tn,fp,fn";
inline constexpr std::string_view kDiceHeader = "id,dice";
inline constexpr std::string_view kReportHeader =
    "model,accuracy_pct,precision,recall,f1,auc,sensitivity_pct,specificity_pct";

std::string curves_csv(const std::vector<EpochLog> &log);
std::string sweep_csv(const std::vector<SweepEntry> &sweep);
std::string roc_csv(const RocCurve &roc);

/// Binary PGM (P5, maxval 255), values clamped to [0,1] and scaled.
std::string pgm_image(const std::vector<double> &pixels, std::size_t width, std::size_t height);

/// Centre slice orthogonal to w: a d x h image (rows = d).
std::vector<double> centre_slice(const VolumeD &v);
std::vector<double> centre_slice(const MaskVolume &m);

/// One row of the summary table.
struct ReportRow {
    double accuracy_pct = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double auc = 0.0;
    double sensitivity_pct = 0.0;
    double specificity_pct = 0.0;
};

ReportRow make_report_row(const ConfusionCounts &counts, double auc);
std::string report_csv(const ReportRow &row);
std::string report_text(const ReportRow &row, const ConfusionCounts &counts, double threshold);

struct GenDataResult {
    std::size_t samples = 0;
    Shape3 shape{};
    std::filesystem::path dir;
};
struct OptimizeResult {
    Hyperparams best;
    BatRunHistory history;
};
struct TrainCmdResult {
    Hyperparams hyperparams;
    std::vector<EpochLog> log;
    std::filesystem::path checkpoint;
};
struct EvaluateResult {
    std::vector<SweepEntry> sweep;
    SweepEntry operating_point;
    RocCurve roc;
    DiceSummary dice;
    std::vector<std::string> ids;
};
struct ReportResult {
    ReportRow row;
    std::string csv;
    std::string text;
};

/// Writes the dataset (synthetic, or imported raw VOL3 pairs) and its manifest.
GenDataResult cmd_gen_data(const ExperimentConfig &cfg, const std::optional<std::filesystem::path> &import_dir = {});
/// Bat search whose fitness is the validation loss after a proxy training run.
OptimizeResult cmd_optimize(const ExperimentConfig &cfg);
/// Final training; hyperparameters from `hp` or else from the optimize output.
TrainCmdResult cmd_train(const ExperimentConfig &cfg, const std::optional<Hyperparams> &hp = {});
EvaluateResult cmd_evaluate(const ExperimentConfig &cfg, const std::optional<std::filesystem::path> &checkpoint = {});
ReportResult cmd_report(const ExperimentConfig &cfg);

/// Every artifact path under cfg.out_dir written by the commands, sorted.
std::vector<std::filesystem::path> list_outputs(const std::filesystem::path &root);

} // namespace batunet
