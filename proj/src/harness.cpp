#include "fleet/harness.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "fleet/errors.hpp"

namespace fleet {

namespace {

namespace fs = std::filesystem;

double elapsed_seconds(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string substitute_seed(std::string path, std::uint64_t seed) {
    const std::string tag = "{seed}";
    const auto pos = path.find(tag);
    if (pos != std::string::npos) path.replace(pos, tag.size(), std::to_string(seed));
    return path;
}

}  // namespace

Manifest subsample_labels(const Manifest& train, int per_class, std::uint64_t seed) {
    if (per_class <= 0) return train;
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < train.records.size(); ++i)
        by_class[train.records[i].label].push_back(i);
    std::vector<char> keep(train.records.size(), 0);
    for (auto& [cls, idx] : by_class) {
        Rng rng(derive_seed(seed, "subsample", static_cast<std::uint64_t>(cls)));
        rng.shuffle(idx.begin(), idx.end());
        const std::size_t n = std::min(idx.size(), static_cast<std::size_t>(per_class));
        for (std::size_t i = 0; i < n; ++i) keep[idx[i]] = 1;
    }
    Manifest out;
    out.config = train.config;
    for (std::size_t i = 0; i < train.records.size(); ++i)
        if (keep[i]) out.records.push_back(train.records[i]);
    return out;
}

ClassificationReport evaluate(const CompositeModel& model, const Manifest& test,
                              const std::string& dataset_root,
                              const DetectionNoise* noise, std::uint64_t noise_seed,
                              const std::string& out_dir) {
    if (test.records.empty()) throw ValueError("evaluate: empty test manifest");
    ConfusionMatrix confusion{};
    for (std::size_t i = 0; i < test.records.size(); ++i) {
        const SampleRecord& rec = test.records[i];
        Rng noise_rng(derive_seed(noise_seed, "noise", i));
        const int pred = predict(model, rec, dataset_root, noise, noise_rng);
        confusion[static_cast<std::size_t>(rec.label - 1)][static_cast<std::size_t>(pred - 1)] += 1;
    }
    ClassificationReport report = compute_report(confusion);
    if (!out_dir.empty()) {
        std::error_code ec;
        fs::create_directories(out_dir, ec);
        write_text_file((fs::path(out_dir) / "report.json").string(),
                        report_to_json_string(report));
        write_text_file((fs::path(out_dir) / "report_classes.csv").string(),
                        report_to_csv(report));
    }
    return report;
}

RunResult run_cell(const RunConfig& cfg, std::uint64_t seed, const std::string& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create run dir " + out_dir + ": " + ec.message());

    const Manifest full = load_manifest(cfg.data_dir);
    auto [train_m, test_m] = split_manifest(full, cfg.train_fraction, cfg.split_seed);
    train_m = subsample_labels(train_m, cfg.labels_per_class, seed);

    CompositeConfig mc;
    mc.encoder = cfg.encoder;
    mc.use_wheel_features = cfg.wheel_features;
    mc.freeze_encoder = cfg.freeze_encoder;

    Rng init_rng(derive_seed(seed, "model"));
    CompositeModel model = [&] {
        if (cfg.encoder_ckpt.empty() || cfg.encoder_ckpt == "none") {
            return CompositeModel::init(mc, init_rng);
        }
        return load_pretrained_encoder(substitute_seed(cfg.encoder_ckpt, seed), mc,
                                       cfg.freeze_encoder, init_rng);
    }();

    TrainConfig tc;
    tc.lr = cfg.lr;
    tc.batch_size = cfg.batch;
    tc.epochs = cfg.epochs;
    tc.mask_one_wheel = cfg.mask_one_wheel;
    tc.seed = seed;

    const auto t0 = std::chrono::steady_clock::now();
    std::vector<PreppedSample> samples = prep_samples(train_m, cfg.data_dir, cfg.encoder);
    std::ofstream log(fs::path(out_dir) / "train_log.csv");
    train(model, samples, tc, log ? &log : nullptr);
    RunResult result;
    result.train_seconds = elapsed_seconds(t0);

    model.save(out_dir);
    {
        // Record the split so evaluation reuses exactly the same test set.
        nlohmann::ordered_json j;
        j["data_dir"] = cfg.data_dir;
        j["train_fraction"] = cfg.train_fraction;
        j["split_seed"] = cfg.split_seed;
        j["labels_per_class"] = cfg.labels_per_class;
        j["seed"] = seed;
        j["lr"] = cfg.lr;
        j["batch"] = cfg.batch;
        j["epochs"] = cfg.epochs;
        j["mask_one_wheel"] = cfg.mask_one_wheel;
        j["encoder_ckpt"] = cfg.encoder_ckpt;
        write_text_file((fs::path(out_dir) / "run.json").string(), j.dump(2) + "\n");
    }

    const auto t1 = std::chrono::steady_clock::now();
    const DetectionNoise* noise = cfg.eval_noise ? &*cfg.eval_noise : nullptr;
    result.report = evaluate(model, test_m, cfg.data_dir, noise,
                             derive_seed(seed, "eval"), out_dir);
    result.eval_seconds = elapsed_seconds(t1);
    return result;
}

double CellSummary::mean_top1() const {
    if (reports.empty()) return 0.0;
    double s = 0.0;
    for (const auto& r : reports) s += r.top1_accuracy;
    return s / static_cast<double>(reports.size());
}

double CellSummary::stdev_top1() const {
    if (reports.size() < 2) return 0.0;
    const double m = mean_top1();
    double s = 0.0;
    for (const auto& r : reports) s += (r.top1_accuracy - m) * (r.top1_accuracy - m);
    return std::sqrt(s / static_cast<double>(reports.size() - 1));
}

std::vector<CellSummary> ablate(const std::vector<RunConfig>& grid,
                                const std::vector<std::uint64_t>& seeds,
                                const std::string& out_dir, int threads) {
    if (grid.empty() || seeds.empty()) throw ValueError("ablate: empty grid or seed list");
    for (std::size_t i = 1; i < grid.size(); ++i) {
        if (grid[i].data_dir != grid[0].data_dir ||
            !(grid[i].encoder == grid[0].encoder)) {
            throw ValueError("ablate: grid cells must share dataset and encoder shape");
        }
    }
    std::error_code ec;
    fs::create_directories(out_dir, ec);

    std::vector<CellSummary> cells(grid.size());
    for (std::size_t c = 0; c < grid.size(); ++c) {
        cells[c].name = grid[c].name;
        cells[c].seeds = seeds;
        cells[c].reports.resize(seeds.size());
        cells[c].seconds.resize(seeds.size(), 0.0);
    }

    struct Job {
        std::size_t cell;
        std::size_t seed_idx;
    };
    std::vector<Job> jobs;
    for (std::size_t c = 0; c < grid.size(); ++c)
        for (std::size_t s = 0; s < seeds.size(); ++s) jobs.push_back({c, s});

    std::vector<std::string> errors(grid.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t j = next.fetch_add(1);
            if (j >= jobs.size()) return;
            const Job job = jobs[j];
            const RunConfig& cfg = grid[job.cell];
            const std::uint64_t seed = seeds[job.seed_idx];
            const std::string cell_dir =
                (fs::path(out_dir) / (cfg.name + "_seed" + std::to_string(seed))).string();
            try {
                RunResult r = run_cell(cfg, seed, cell_dir);
                cells[job.cell].reports[job.seed_idx] = r.report;
                cells[job.cell].seconds[job.seed_idx] = r.train_seconds + r.eval_seconds;
            } catch (const std::exception& e) {
                cells[job.cell].ok = false;
                errors[job.cell] = e.what();
            }
        }
    };

    const int n_threads = std::max(1, threads);
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (std::size_t c = 0; c < grid.size(); ++c) cells[c].error = errors[c];

    write_text_file((fs::path(out_dir) / "table.csv").string(), ablation_table_csv(cells));
    return cells;
}

std::string ablation_table_csv(const std::vector<CellSummary>& cells) {
    std::ostringstream os;
    os << "name,seeds,top1_mean,top1_std,wap_mean,wap_std,war_mean,war_std,seconds_mean,status\n";
    char buf[256];
    for (const CellSummary& c : cells) {
        if (!c.ok) {
            os << c.name << "," << c.seeds.size() << ",,,,,,,,failed: " << c.error << "\n";
            continue;
        }
        auto stats = [&](auto getter) {
            double mean = 0.0;
            for (const auto& r : c.reports) mean += getter(r);
            mean /= static_cast<double>(c.reports.size());
            double sd = 0.0;
            if (c.reports.size() > 1) {
                for (const auto& r : c.reports) sd += (getter(r) - mean) * (getter(r) - mean);
                sd = std::sqrt(sd / static_cast<double>(c.reports.size() - 1));
            }
            return std::pair<double, double>{mean, sd};
        };
        const auto [t1m, t1s] = stats([](const ClassificationReport& r) { return r.top1_accuracy; });
        const auto [wpm, wps] =
            stats([](const ClassificationReport& r) { return r.weighted_avg_precision; });
        const auto [wrm, wrs] =
            stats([](const ClassificationReport& r) { return r.weighted_avg_recall; });
        double sec = 0.0;
        for (const double s : c.seconds) sec += s;
        sec /= static_cast<double>(c.seconds.size());
        std::snprintf(buf, sizeof(buf), "%s,%zu,%.2f,%.2f,%.2f,%.2f,%.2f,%.2f,%.1f,ok\n",
                      c.name.c_str(), c.seeds.size(), 100.0 * t1m, 100.0 * t1s,
                      100.0 * wpm, 100.0 * wps, 100.0 * wrm, 100.0 * wrs, sec);
        os << buf;
    }
    return os.str();
}

int env_thread_limit() {
    const char* env = std::getenv("FLEET_THREADS");
    if (!env) return 1;
    const int v = std::atoi(env);
    return v >= 1 ? v : 1;
}

}  // namespace fleet
