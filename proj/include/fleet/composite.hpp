#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "fleet/fleet_gen.hpp"
#include "fleet/ssl.hpp"
#include "fleet/vit.hpp"
#include "fleet/wheels.hpp"

namespace fleet {

struct CompositeConfig {
    EncoderConfig encoder;
    bool use_wheel_features = true;
    bool freeze_encoder = false;
    bool mask_wheel_features_too = false;  // ablation: drop the masked wheel from the feature vector
    int head_hidden = 128;
    int num_classes = kNumClasses;
    int wheel_capacity = kWheelCapacity;

    // Fusion head input width: encoder dim, plus spacings and wheel count
    // when wheel features are enabled.
    int fusion_input() const {
        return encoder.dim + (use_wheel_features ? wheel_capacity + 1 : 0);
    }
};

// ViT encoder + wheel-feature fusion head.
struct CompositeModel {
    CompositeConfig cfg;
    EncoderParams<float> encoder;
    ProjectionHead<float> head;

    static CompositeModel init(const CompositeConfig& cfg, Rng& rng);

    // Everything, for checkpoints ("vit.*" + "head.*").
    ParamSet<float> all_parameters() const;
    // What the optimizer updates: the head, plus the encoder unless frozen.
    ParamSet<float> trainable_parameters() const;

    void save(const std::string& dir) const;
    static CompositeModel load(const std::string& dir);
};

// Fresh model whose encoder tensors are loaded bit-exactly from a
// pretraining checkpoint ("vit.*" entries; objective heads are discarded).
// The fusion head is freshly initialized from `rng`.
CompositeModel load_pretrained_encoder(const std::string& ckpt_path,
                                       CompositeConfig cfg, bool freeze,
                                       Rng& rng);

// One sample preprocessed for the encoder: cropped/resized image, wheel
// boxes mapped through the same affine transform, and the fixed-length
// wheel feature.
struct PreppedSample {
    std::string id;
    Image image;
    std::vector<Box> wheels;
    WheelFeature feature;
    int label = 0;
};

PreppedSample prep_sample(const SampleRecord& rec, const std::string& dataset_root,
                          const EncoderConfig& enc);
std::vector<PreppedSample> prep_samples(const Manifest& m, const std::string& dataset_root,
                                        const EncoderConfig& enc);

TensorF wheel_feature_tensor(const WheelFeature& f, int capacity);

// Forward pass to 13 logits. With wheel features disabled the wheel inputs
// are omitted from the head entirely, not zeroed.
TensorF composite_forward(const CompositeModel& model, const Image& img,
                          const WheelFeature& feature, const MaskSpec* mask = nullptr);

struct TrainConfig {
    double lr = 6e-5;
    int batch_size = 64;
    int epochs = 1;
    bool mask_one_wheel = false;
    std::uint64_t seed = 0;
};

// Caches frozen-encoder summaries keyed by (sample, masked wheel) so
// freeze-encoder runs do not recompute identical forward passes. Results
// are bit-identical to the uncached path.
struct EncoderCache {
    std::unordered_map<std::string, std::vector<float>> entries;
};

// One optimizer step over a batch: per-sample random-wheel masking when
// enabled, softmax cross-entropy against the one-hot label, Adam update on
// the trainable set. The wheel feature keeps the masked wheel unless
// mask_wheel_features_too is set. Returns the batch loss.
float train_step(CompositeModel& model, const std::vector<const PreppedSample*>& batch,
                 const TrainConfig& cfg, Rng& rng, AdamState<float>& opt,
                 EncoderCache* cache = nullptr);

// Full training loop; appends "epoch,step,loss" lines to log_csv when
// non-null. Returns the mean loss of the final epoch.
float train(CompositeModel& model, const std::vector<PreppedSample>& samples,
            const TrainConfig& cfg, std::ostream* log_csv = nullptr);

// End-to-end prediction for one record: crop, optional detection noise,
// wheel features, unmasked forward, argmax. Returns a label in 1..13.
int predict(const CompositeModel& model, const SampleRecord& rec,
            const std::string& dataset_root, const DetectionNoise* noise,
            Rng& noise_rng);

}  // namespace fleet
