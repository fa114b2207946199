// fleet: synthetic vehicle-classification experiment harness.
//
// Subcommands: generate, pretrain, train, eval, ablate. Every flag has a
// config-file equivalent (flat JSON, same key as the long flag); explicit
// command-line flags win over the file.

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fleet/composite.hpp"
#include "fleet/errors.hpp"
#include "fleet/fleet_gen.hpp"
#include "fleet/harness.hpp"
#include "fleet/json_config.hpp"
#include "fleet/metrics.hpp"
#include "fleet/ssl.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json load_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw fleet::IoError("cannot open config file: " + path);
    return json::parse(is);
}

// Applies config-file values to options the user did not pass explicitly.
struct ConfigBinder {
    std::map<std::string, std::pair<CLI::Option*, std::function<void(const json&)>>> entries;

    template <typename T>
    void bind(CLI::Option* opt, const std::string& key, T& var) {
        entries[key] = {opt, [&var](const json& j) { var = j.get<T>(); }};
    }

    void apply(const json& cfg) {
        for (auto& [key, entry] : entries) {
            if (entry.first->count() == 0 && cfg.contains(key)) {
                entry.second(cfg.at(key));
            }
        }
    }
};

std::map<int, int> parse_class_spec(const std::string& classes, int count_per_class) {
    if (classes == "balanced" || classes == "imbalanced") {
        return fleet::profile_counts(classes, count_per_class);
    }
    // Explicit "class:count,class:count,..." list.
    std::map<int, int> counts;
    std::stringstream ss(classes);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) {
            throw fleet::ValueError("bad class spec entry '" + item +
                                    "', expected class:count");
        }
        counts[std::stoi(item.substr(0, colon))] = std::stoi(item.substr(colon + 1));
    }
    return counts;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) seeds.push_back(std::stoull(item));
    }
    if (seeds.empty()) throw fleet::ValueError("no seeds given");
    return seeds;
}

std::vector<fleet::Image> load_pretrain_pool(const std::string& data_dir,
                                             const fleet::EncoderConfig& enc,
                                             bool crop_to_vehicle) {
    const fleet::Manifest m = fleet::load_manifest(data_dir);
    if (m.records.empty()) throw fleet::ValueError("pretrain pool manifest is empty");
    std::vector<fleet::Image> pool;
    pool.reserve(m.records.size());
    for (const auto& rec : m.records) {
        fleet::Image img = fleet::read_pgm((fs::path(data_dir) / rec.image_path).string());
        if (crop_to_vehicle) {
            img = fleet::crop_and_resize(img, rec.vehicle_bbox, enc.image_size, enc.image_size);
        } else if (img.width != enc.image_size || img.height != enc.image_size) {
            img = fleet::crop_and_resize(
                img, fleet::Box{0, 0, double(img.width), double(img.height)},
                enc.image_size, enc.image_size);
        }
        pool.push_back(std::move(img));
    }
    return pool;
}

fleet::RunConfig run_config_from_json(const json& j, const json& cell) {
    fleet::RunConfig rc;
    rc.data_dir = j.at("data").get<std::string>();
    if (j.contains("encoder")) fleet::encoder_config_update(rc.encoder, j["encoder"]);
    if (j.contains("lr")) rc.lr = j["lr"].get<double>();
    if (j.contains("batch")) rc.batch = j["batch"].get<int>();
    if (j.contains("epochs")) rc.epochs = j["epochs"].get<int>();
    if (j.contains("labels_per_class")) rc.labels_per_class = j["labels_per_class"].get<int>();
    if (j.contains("train_fraction")) rc.train_fraction = j["train_fraction"].get<double>();
    if (j.contains("split_seed")) rc.split_seed = j["split_seed"].get<std::uint64_t>();

    rc.name = cell.at("name").get<std::string>();
    if (cell.contains("pretrain")) rc.encoder_ckpt = cell["pretrain"].get<std::string>();
    if (cell.contains("freeze")) rc.freeze_encoder = cell["freeze"].get<bool>();
    if (cell.contains("wheels")) rc.wheel_features = cell["wheels"].get<bool>();
    if (cell.contains("mask")) rc.mask_one_wheel = cell["mask"].get<bool>();
    if (cell.contains("lr")) rc.lr = cell["lr"].get<double>();
    if (cell.contains("epochs")) rc.epochs = cell["epochs"].get<int>();
    if (cell.contains("labels_per_class")) rc.labels_per_class = cell["labels_per_class"].get<int>();
    return rc;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"synthetic axle-based vehicle classification harness"};
    app.require_subcommand(1);

    // ---- generate ----
    auto* gen = app.add_subcommand("generate", "render a synthetic dataset");
    std::string gen_classes = "balanced", gen_out, gen_config;
    int gen_count = 10, gen_size = 64;
    std::uint64_t gen_seed = 1;
    ConfigBinder gen_bind;
    gen_bind.bind(gen->add_option("--classes", gen_classes,
                                  "balanced | imbalanced | class:count,..."),
                  "classes", gen_classes);
    gen_bind.bind(gen->add_option("--count-per-class", gen_count, "samples per class"),
                  "count_per_class", gen_count);
    gen_bind.bind(gen->add_option("--size", gen_size, "image size in pixels"), "size", gen_size);
    gen_bind.bind(gen->add_option("--seed", gen_seed, "generation seed"), "seed", gen_seed);
    gen_bind.bind(gen->add_option("--out", gen_out, "output directory")->required(), "out",
                  gen_out);
    gen->add_option("--config", gen_config, "JSON config file");

    // ---- pretrain ----
    auto* pre = app.add_subcommand("pretrain", "self-supervised encoder pretraining");
    std::string pre_objective = "data2vec", pre_data, pre_config, pre_out;
    std::uint64_t pre_seed = 1;
    int pre_epochs = -1, pre_batch = -1;
    double pre_lr = -1.0;
    bool pre_no_crop = false;
    ConfigBinder pre_bind;
    pre_bind.bind(pre->add_option("--objective", pre_objective, "dino | data2vec"),
                  "objective", pre_objective);
    pre_bind.bind(pre->add_option("--data", pre_data, "unlabeled pool dataset dir")->required(),
                  "data", pre_data);
    pre_bind.bind(pre->add_option("--seed", pre_seed, "pretraining seed"), "seed", pre_seed);
    pre_bind.bind(pre->add_option("--out", pre_out, "checkpoint path")->required(), "out",
                  pre_out);
    pre_bind.bind(pre->add_option("--epochs", pre_epochs, "passes over the pool"), "epochs",
                  pre_epochs);
    pre_bind.bind(pre->add_option("--batch", pre_batch, "batch size"), "batch", pre_batch);
    pre_bind.bind(pre->add_option("--lr", pre_lr, "learning rate"), "lr", pre_lr);
    pre->add_option("--config", pre_config, "JSON config file (full PretrainConfig)");
    pre->add_flag("--no-crop", pre_no_crop, "feed full frames instead of vehicle crops");

    // ---- train ----
    auto* tr = app.add_subcommand("train", "supervised composite training");
    std::string tr_data, tr_ckpt = "none", tr_out, tr_config;
    bool tr_freeze = false, tr_wheels = true, tr_mask = false, tr_mask_features = false;
    double tr_lr = 6e-5, tr_fraction = 0.8;
    int tr_batch = 64, tr_epochs = 10, tr_labels = 0;
    std::uint64_t tr_seed = 1, tr_split_seed = 4242;
    json tr_encoder_json;
    ConfigBinder tr_bind;
    tr_bind.bind(tr->add_option("--data", tr_data, "dataset dir")->required(), "data", tr_data);
    tr_bind.bind(tr->add_option("--encoder-ckpt", tr_ckpt, "pretrained checkpoint or 'none'"),
                 "encoder_ckpt", tr_ckpt);
    tr_bind.bind(tr->add_option("--freeze-encoder", tr_freeze, "train only the head"),
                 "freeze_encoder", tr_freeze);
    tr_bind.bind(tr->add_option("--wheel-features", tr_wheels, "fuse wheel positional features"),
                 "wheel_features", tr_wheels);
    tr_bind.bind(tr->add_option("--mask-one-wheel", tr_mask, "mask one random wheel per sample"),
                 "mask_one_wheel", tr_mask);
    tr_bind.bind(tr->add_option("--mask-wheel-features-too", tr_mask_features,
                                "also drop the masked wheel from the feature vector"),
                 "mask_wheel_features_too", tr_mask_features);
    tr_bind.bind(tr->add_option("--lr", tr_lr, "learning rate"), "lr", tr_lr);
    tr_bind.bind(tr->add_option("--batch", tr_batch, "batch size"), "batch", tr_batch);
    tr_bind.bind(tr->add_option("--epochs", tr_epochs, "training epochs"), "epochs", tr_epochs);
    tr_bind.bind(tr->add_option("--seed", tr_seed, "training seed"), "seed", tr_seed);
    tr_bind.bind(tr->add_option("--labels-per-class", tr_labels,
                                "subsample the training split (0 = all)"),
                 "labels_per_class", tr_labels);
    tr_bind.bind(tr->add_option("--train-fraction", tr_fraction, "train split fraction"),
                 "train_fraction", tr_fraction);
    tr_bind.bind(tr->add_option("--split-seed", tr_split_seed, "split seed"), "split_seed",
                 tr_split_seed);
    tr_bind.bind(tr->add_option("--out", tr_out, "output model dir")->required(), "out", tr_out);
    tr->add_option("--config", tr_config, "JSON config file");

    // ---- eval ----
    auto* ev = app.add_subcommand("eval", "evaluate a trained model");
    std::string ev_model, ev_data, ev_noise = "none", ev_out = "report.json";
    std::uint64_t ev_seed = 1;
    ConfigBinder ev_bind;
    ev_bind.bind(ev->add_option("--model", ev_model, "model dir")->required(), "model", ev_model);
    ev_bind.bind(ev->add_option("--data", ev_data, "dataset dir")->required(), "data", ev_data);
    ev_bind.bind(ev->add_option("--noise", ev_noise, "detection noise JSON or 'none'"), "noise",
                 ev_noise);
    ev_bind.bind(ev->add_option("--seed", ev_seed, "noise seed"), "seed", ev_seed);
    ev_bind.bind(ev->add_option("--out", ev_out, "report JSON path"), "out", ev_out);
    std::string ev_config;
    ev->add_option("--config", ev_config, "JSON config file");

    // ---- ablate ----
    auto* ab = app.add_subcommand("ablate", "run a grid of training configurations");
    std::string ab_grid, ab_seeds = "1,2,3", ab_out = "table.csv";
    ConfigBinder ab_bind;
    ab_bind.bind(ab->add_option("--grid", ab_grid, "grid JSON file")->required(), "grid", ab_grid);
    ab_bind.bind(ab->add_option("--seeds", ab_seeds, "comma-separated seeds"), "seeds", ab_seeds);
    ab_bind.bind(ab->add_option("--out", ab_out, "output table CSV"), "out", ab_out);
    std::string ab_config;
    ab->add_option("--config", ab_config, "JSON config file");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            if (!gen_config.empty()) gen_bind.apply(load_json_file(gen_config));
            const auto counts = parse_class_spec(gen_classes, gen_count);
            const fleet::Manifest m =
                fleet::generate_dataset(counts, gen_size, gen_seed, gen_out);
            std::string profile = gen_classes;
            if (profile != "balanced" && profile != "imbalanced") profile = "explicit";
            fleet::Manifest tagged = m;
            tagged.config.profile = profile;
            fleet::save_manifest(tagged, gen_out);
            std::cout << "generated " << m.records.size() << " samples in " << gen_out << "\n";
        } else if (pre->parsed()) {
            fleet::PretrainConfig cfg;
            bool crop_to_vehicle = true;
            if (!pre_config.empty()) {
                const json j = load_json_file(pre_config);
                pre_bind.apply(j);
                fleet::pretrain_config_update(cfg, j);
                if (j.contains("crop_to_vehicle")) crop_to_vehicle = j["crop_to_vehicle"].get<bool>();
            } else {
                fleet::pretrain_config_update(cfg, json::object());
            }
            cfg.objective = pre_objective;
            if (pre_epochs >= 0) cfg.epochs = pre_epochs;
            if (pre_batch > 0) cfg.batch_size = pre_batch;
            if (pre_lr > 0) cfg.lr = pre_lr;
            if (pre_no_crop) crop_to_vehicle = false;
            const auto pool = load_pretrain_pool(pre_data, cfg.encoder, crop_to_vehicle);
            const auto stats = fleet::pretrain<float>(pool, cfg, pre_seed, pre_out,
                                                      pre_out + ".curve.csv");
            std::cout << "pretrained " << cfg.objective << " for " << stats.steps
                      << " steps, loss " << stats.first_loss << " -> " << stats.final_loss
                      << ", checkpoint " << pre_out << "\n";
        } else if (tr->parsed()) {
            if (!tr_config.empty()) {
                const json j = load_json_file(tr_config);
                tr_bind.apply(j);
                if (j.contains("encoder")) tr_encoder_json = j["encoder"];
            }
            fleet::RunConfig rc;
            rc.name = "train";
            rc.data_dir = tr_data;
            rc.encoder_ckpt = tr_ckpt;
            rc.freeze_encoder = tr_freeze;
            rc.wheel_features = tr_wheels;
            rc.mask_one_wheel = tr_mask;
            rc.lr = tr_lr;
            rc.batch = tr_batch;
            rc.epochs = tr_epochs;
            rc.labels_per_class = tr_labels;
            rc.train_fraction = tr_fraction;
            rc.split_seed = tr_split_seed;
            if (!tr_encoder_json.is_null()) fleet::encoder_config_update(rc.encoder, tr_encoder_json);
            const auto result = fleet::run_cell(rc, tr_seed, tr_out);
            std::cout << "trained in " << result.train_seconds << "s; top-1 "
                      << 100.0 * result.report.top1_accuracy << "% on the held-out split; model in "
                      << tr_out << "\n";
        } else if (ev->parsed()) {
            if (!ev_config.empty()) ev_bind.apply(load_json_file(ev_config));
            const fleet::CompositeModel model = fleet::CompositeModel::load(ev_model);
            const fleet::Manifest full = fleet::load_manifest(ev_data);
            fleet::Manifest test = full;
            const fs::path run_json = fs::path(ev_model) / "run.json";
            if (fs::exists(run_json)) {
                const json j = load_json_file(run_json.string());
                auto [train_m, test_m] = fleet::split_manifest(
                    full, j.at("train_fraction").get<double>(),
                    j.at("split_seed").get<std::uint64_t>());
                test = std::move(test_m);
            }
            std::optional<fleet::DetectionNoise> noise;
            std::uint64_t noise_seed = ev_seed;
            if (ev_noise != "none" && !ev_noise.empty()) {
                const json nj = load_json_file(ev_noise);
                noise = fleet::detection_noise_from_json(nj);
                if (nj.contains("seed")) noise_seed = nj["seed"].get<std::uint64_t>();
            }
            const auto report = fleet::evaluate(model, test, ev_data,
                                                noise ? &*noise : nullptr, noise_seed, "");
            fleet::write_text_file(ev_out, fleet::report_to_json_string(report));
            fleet::write_text_file(ev_out + ".classes.csv", fleet::report_to_csv(report));
            std::cout << "top-1 " << 100.0 * report.top1_accuracy << "% over "
                      << report.total << " samples; report in " << ev_out << "\n";
        } else if (ab->parsed()) {
            if (!ab_config.empty()) ab_bind.apply(load_json_file(ab_config));
            const json grid_json = load_json_file(ab_grid);
            std::vector<fleet::RunConfig> grid;
            for (const auto& cell : grid_json.at("cells")) {
                grid.push_back(run_config_from_json(grid_json, cell));
            }
            const auto seeds = parse_seed_list(ab_seeds);
            const fs::path out_path(ab_out);
            const std::string run_dir =
                out_path.has_parent_path() ? out_path.parent_path().string() : ".";
            const auto cells = fleet::ablate(grid, seeds, run_dir, fleet::env_thread_limit());
            const std::string table = fleet::ablation_table_csv(cells);
            fleet::write_text_file(ab_out, table);
            std::cout << table;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
