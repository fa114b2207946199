#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fleet/composite.hpp"
#include "fleet/metrics.hpp"
#include "fleet/ssl.hpp"

namespace fleet {

// One training/evaluation configuration (a cell of the ablation grid).
struct RunConfig {
    std::string name = "run";
    std::string data_dir;
    std::string encoder_ckpt;  // empty or "none": train from scratch
    bool freeze_encoder = false;
    bool wheel_features = true;
    bool mask_one_wheel = false;
    double lr = 6e-5;
    int batch = 64;
    int epochs = 10;
    int labels_per_class = 0;  // 0 = use the full training split
    double train_fraction = 0.8;
    std::uint64_t split_seed = 4242;  // shared across cells so they see one split
    EncoderConfig encoder;
    std::optional<DetectionNoise> eval_noise;
};

// Deterministically shrinks the training manifest to n labelled samples per
// class (no-op when n == 0).
Manifest subsample_labels(const Manifest& train, int per_class, std::uint64_t seed);

// Runs prediction over every record and writes report.json plus a
// per-class CSV next to it. Deterministic given noise_seed.
ClassificationReport evaluate(const CompositeModel& model, const Manifest& test,
                              const std::string& dataset_root,
                              const DetectionNoise* noise, std::uint64_t noise_seed,
                              const std::string& out_dir);

struct RunResult {
    ClassificationReport report;
    double train_seconds = 0.0;
    double eval_seconds = 0.0;
};

// Full cell: split the dataset, build the model (scratch or from a
// pretraining checkpoint), train, save under out_dir, evaluate on the held
// out split. "{seed}" in encoder_ckpt is substituted with the seed.
RunResult run_cell(const RunConfig& cfg, std::uint64_t seed, const std::string& out_dir);

struct CellSummary {
    std::string name;
    std::vector<std::uint64_t> seeds;
    std::vector<ClassificationReport> reports;  // one per finished seed
    std::vector<double> seconds;
    bool ok = true;
    std::string error;

    double mean_top1() const;
    double stdev_top1() const;
};

// Grid runner: every cell x seed, optionally on worker threads
// (threads <= 1 is fully sequential). Failed cells are recorded, not fatal.
std::vector<CellSummary> ablate(const std::vector<RunConfig>& grid,
                                const std::vector<std::uint64_t>& seeds,
                                const std::string& out_dir, int threads);

std::string ablation_table_csv(const std::vector<CellSummary>& cells);

// Worker-thread cap from FLEET_THREADS (default 1).
int env_thread_limit();

}  // namespace fleet
