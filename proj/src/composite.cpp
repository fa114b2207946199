#include "fleet/composite.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "fleet/checkpoint.hpp"
#include "fleet/errors.hpp"
#include "fleet/json_config.hpp"

namespace fleet {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

// Frozen encoders carry requires_grad=false so their forward passes build
// no graph at all; the head always tracks gradients.
void apply_grad_flags(CompositeModel& m) {
    m.encoder.set_requires_grad(!m.cfg.freeze_encoder);
    ParamSet<float> hp = m.head.parameters();
    hp.set_requires_grad(true);
}

}  // namespace

CompositeModel CompositeModel::init(const CompositeConfig& cfg, Rng& rng) {
    cfg.encoder.validate();
    CompositeModel m;
    m.cfg = cfg;
    m.encoder = EncoderParams<float>::init(cfg.encoder, rng);
    m.head = ProjectionHead<float>::init(
        {cfg.fusion_input(), cfg.head_hidden, cfg.num_classes}, rng);
    m.head.gelu_tanh = cfg.encoder.gelu_tanh;
    apply_grad_flags(m);
    return m;
}

ParamSet<float> CompositeModel::all_parameters() const {
    ParamSet<float> ps = encoder.parameters();
    ps.append(head.parameters());
    return ps;
}

ParamSet<float> CompositeModel::trainable_parameters() const {
    if (cfg.freeze_encoder) return head.parameters();
    return all_parameters();
}

void CompositeModel::save(const std::string& dir) const {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create model dir " + dir + ": " + ec.message());
    save_checkpoint((fs::path(dir) / "model.axf").string(), all_parameters());
    ordered_json j;
    j["encoder"] = encoder_config_to_json(cfg.encoder);
    j["use_wheel_features"] = cfg.use_wheel_features;
    j["freeze_encoder"] = cfg.freeze_encoder;
    j["mask_wheel_features_too"] = cfg.mask_wheel_features_too;
    j["head_hidden"] = cfg.head_hidden;
    j["num_classes"] = cfg.num_classes;
    j["wheel_capacity"] = cfg.wheel_capacity;
    std::ofstream os(fs::path(dir) / "model.json");
    if (!os) throw IoError("cannot write model.json in " + dir);
    os << j.dump(2) << "\n";
}

CompositeModel CompositeModel::load(const std::string& dir) {
    std::ifstream is(fs::path(dir) / "model.json");
    if (!is) throw IoError("missing model.json in " + dir);
    json j = json::parse(is);
    CompositeConfig cfg;
    cfg.encoder = encoder_config_from_json(j.at("encoder"));
    cfg.use_wheel_features = j.at("use_wheel_features").get<bool>();
    cfg.freeze_encoder = j.at("freeze_encoder").get<bool>();
    cfg.mask_wheel_features_too = j.at("mask_wheel_features_too").get<bool>();
    cfg.head_hidden = j.at("head_hidden").get<int>();
    cfg.num_classes = j.at("num_classes").get<int>();
    cfg.wheel_capacity = j.at("wheel_capacity").get<int>();

    Rng dummy(0);
    CompositeModel m = init(cfg, dummy);
    ParamSet<float> ps = m.all_parameters();
    load_checkpoint_into((fs::path(dir) / "model.axf").string(), ps);
    apply_grad_flags(m);
    return m;
}

CompositeModel load_pretrained_encoder(const std::string& ckpt_path,
                                       CompositeConfig cfg, bool freeze, Rng& rng) {
    cfg.freeze_encoder = freeze;
    CompositeModel m = CompositeModel::init(cfg, rng);
    ParamSet<float> enc = m.encoder.parameters();
    load_checkpoint_into(ckpt_path, enc);
    apply_grad_flags(m);
    return m;
}

PreppedSample prep_sample(const SampleRecord& rec, const std::string& dataset_root,
                          const EncoderConfig& enc) {
    PreppedSample p;
    p.id = rec.id;
    p.label = rec.label;
    const Image raw = read_pgm((fs::path(dataset_root) / rec.image_path).string());
    p.image = crop_and_resize(raw, rec.vehicle_bbox, enc.image_size, enc.image_size);
    for (const Box& w : rec.wheels) {
        p.wheels.push_back(transform_box(w, rec.vehicle_bbox, enc.image_size, enc.image_size));
    }
    p.feature = normalize_wheel_positions(p.wheels);
    return p;
}

std::vector<PreppedSample> prep_samples(const Manifest& m, const std::string& dataset_root,
                                        const EncoderConfig& enc) {
    std::vector<PreppedSample> out;
    out.reserve(m.records.size());
    for (const SampleRecord& r : m.records) out.push_back(prep_sample(r, dataset_root, enc));
    return out;
}

TensorF wheel_feature_tensor(const WheelFeature& f, int capacity) {
    const std::size_t width = static_cast<std::size_t>(capacity) + 1;
    std::vector<float> data(width, 0.0f);
    for (int i = 0; i < capacity && i < kWheelCapacity; ++i) {
        data[static_cast<std::size_t>(i)] = static_cast<float>(f.spacings[static_cast<std::size_t>(i)]);
    }
    data.back() = static_cast<float>(f.wheel_count);
    return TensorF::from_data({1, width}, std::move(data));
}

namespace {

TensorF fuse_and_classify(const CompositeModel& model, const TensorF& summary,
                          const WheelFeature& feature) {
    if (!model.cfg.use_wheel_features) return model.head.forward(summary);
    TensorF wf = wheel_feature_tensor(feature, model.cfg.wheel_capacity);
    return model.head.forward(concat_cols(summary, wf));
}

}  // namespace

TensorF composite_forward(const CompositeModel& model, const Image& img,
                          const WheelFeature& feature, const MaskSpec* mask) {
    if (img.width != model.cfg.encoder.image_size ||
        img.height != model.cfg.encoder.image_size) {
        throw ShapeError("composite_forward: image " + std::to_string(img.width) + "x" +
                         std::to_string(img.height) + " does not match encoder input " +
                         std::to_string(model.cfg.encoder.image_size));
    }
    auto res = encode_image(model.encoder, img, mask);
    TensorF summary = summary_representation(model.cfg.encoder, res);
    return fuse_and_classify(model, summary, feature);
}

namespace {

// Chooses this sample's mask (one random wheel) if masking is on. Consumes
// rng identically whether or not the encoder is frozen or cached.
struct SampleMask {
    MaskSpec spec;
    int wheel_index = -1;
};

SampleMask choose_mask(const PreppedSample& s, const EncoderConfig& enc, bool mask_on,
                       Rng& rng) {
    SampleMask m;
    if (!mask_on || s.wheels.empty()) return m;
    m.wheel_index = static_cast<int>(pick_random_wheel(s.wheels.size(), rng));
    auto idx = wheel_patch_indices(s.wheels[static_cast<std::size_t>(m.wheel_index)],
                                   enc.image_size, enc.patch_size);
    if (idx.empty()) {
        m.wheel_index = -1;  // wheel fell outside the frame; train unmasked
        return m;
    }
    m.spec.indices = std::move(idx);
    m.spec.ratio = static_cast<double>(m.spec.indices.size()) /
                   static_cast<double>(enc.num_patches());
    return m;
}

TensorF frozen_summary(const CompositeModel& model, const PreppedSample& s,
                       const SampleMask& mask, EncoderCache* cache) {
    const std::string key = s.id + "#" + std::to_string(mask.wheel_index);
    if (cache) {
        auto it = cache->entries.find(key);
        if (it != cache->entries.end()) {
            return TensorF::from_data({1, it->second.size()},
                                      std::vector<float>(it->second));
        }
    }
    auto res = encode_image(model.encoder, s.image, mask.spec.empty() ? nullptr : &mask.spec);
    TensorF summary = summary_representation(model.cfg.encoder, res);
    if (cache) {
        cache->entries.emplace(key, std::vector<float>(summary.data().begin(),
                                                       summary.data().end()));
    }
    return summary.detach();
}

}  // namespace

float train_step(CompositeModel& model, const std::vector<const PreppedSample*>& batch,
                 const TrainConfig& cfg, Rng& rng, AdamState<float>& opt,
                 EncoderCache* cache) {
    if (batch.empty()) throw ValueError("train_step: empty batch");
    ParamSet<float> trainable = model.trainable_parameters();
    trainable.zero_grad();

    TensorF batch_loss;
    for (std::size_t bi = 0; bi < batch.size(); ++bi) {
        const PreppedSample& s = *batch[bi];
        const SampleMask mask = choose_mask(s, model.cfg.encoder, cfg.mask_one_wheel, rng);

        WheelFeature feature = s.feature;
        if (model.cfg.mask_wheel_features_too && mask.wheel_index >= 0) {
            std::vector<Box> kept;
            for (std::size_t i = 0; i < s.wheels.size(); ++i) {
                if (static_cast<int>(i) != mask.wheel_index) kept.push_back(s.wheels[i]);
            }
            feature = normalize_wheel_positions(kept);
        }

        TensorF logits;
        if (model.cfg.freeze_encoder) {
            TensorF summary = frozen_summary(model, s, mask, cache);
            logits = model.cfg.use_wheel_features
                         ? model.head.forward(concat_cols(
                               summary, wheel_feature_tensor(feature, model.cfg.wheel_capacity)))
                         : model.head.forward(summary);
        } else {
            logits = composite_forward(model, s.image, feature,
                                       mask.spec.empty() ? nullptr : &mask.spec);
        }
        TensorF probs = softmax_rows(logits);
        TensorF onehot = TensorF::zeros({1, static_cast<std::size_t>(model.cfg.num_classes)});
        onehot.at(static_cast<std::size_t>(s.label - 1)) = 1.0f;
        TensorF loss = cross_entropy_soft(onehot, probs);
        batch_loss = bi == 0 ? loss : add(batch_loss, loss);
    }
    batch_loss = scale(batch_loss, 1.0f / static_cast<float>(batch.size()));
    const float loss_value = batch_loss.item();
    if (!std::isfinite(loss_value)) {
        throw NumericError("train_step: non-finite batch loss");
    }
    batch_loss.backward();
    adam_step(trainable, opt, static_cast<float>(cfg.lr));
    return loss_value;
}

float train(CompositeModel& model, const std::vector<PreppedSample>& samples,
            const TrainConfig& cfg, std::ostream* log_csv) {
    if (samples.empty()) throw ValueError("train: no samples");
    if (cfg.batch_size < 1) throw ValueError("train: batch size must be >= 1");
    AdamState<float> opt;
    EncoderCache cache;
    Rng rng(derive_seed(cfg.seed, "train"));
    if (log_csv) *log_csv << "epoch,step,loss\n";

    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    float epoch_mean = 0.0f;
    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order.begin(), order.end());
        float epoch_sum = 0.0f;
        long epoch_steps = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<const PreppedSample*> batch;
            batch.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) batch.push_back(&samples[order[i]]);
            const float loss = train_step(model, batch, cfg, rng, opt,
                                          model.cfg.freeze_encoder ? &cache : nullptr);
            epoch_sum += loss;
            ++epoch_steps;
            if (log_csv) *log_csv << epoch << "," << step << "," << loss << "\n";
            ++step;
        }
        epoch_mean = epoch_steps > 0 ? epoch_sum / static_cast<float>(epoch_steps) : 0.0f;
    }
    return epoch_mean;
}

int predict(const CompositeModel& model, const SampleRecord& rec,
            const std::string& dataset_root, const DetectionNoise* noise,
            Rng& noise_rng) {
    const Image raw = read_pgm((fs::path(dataset_root) / rec.image_path).string());
    std::vector<Box> wheels = rec.wheels;
    if (noise) {
        wheels = perturb_detections(wheels, *noise, noise_rng, raw.width);
    }
    const Image img =
        crop_and_resize(raw, rec.vehicle_bbox, model.cfg.encoder.image_size,
                        model.cfg.encoder.image_size);
    std::vector<Box> transformed;
    for (const Box& w : wheels) {
        transformed.push_back(transform_box(w, rec.vehicle_bbox, model.cfg.encoder.image_size,
                                            model.cfg.encoder.image_size));
    }
    const WheelFeature feature = normalize_wheel_positions(transformed);
    TensorF logits = composite_forward(model, img, feature, nullptr);
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i) {
        if (logits[i] > logits[best]) best = i;
    }
    return static_cast<int>(best) + 1;
}

}  // namespace fleet
