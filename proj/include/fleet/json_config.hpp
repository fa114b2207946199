#pragma once

#include <json.hpp>

#include "fleet/harness.hpp"
#include "fleet/ssl.hpp"
#include "fleet/vit.hpp"
#include "fleet/wheels.hpp"

// JSON (de)serialization for configuration structs, shared by model
// sidecars, the CLI, and grid files. Missing keys keep their defaults.
namespace fleet {

inline nlohmann::ordered_json encoder_config_to_json(const EncoderConfig& e) {
    nlohmann::ordered_json j;
    j["image_size"] = e.image_size;
    j["patch_size"] = e.patch_size;
    j["channels"] = e.channels;
    j["dim"] = e.dim;
    j["depth"] = e.depth;
    j["heads"] = e.heads;
    j["mlp_ratio"] = e.mlp_ratio;
    j["mask_token_enabled"] = e.mask_token_enabled;
    j["sinusoidal_pos"] = e.sinusoidal_pos;
    j["mean_pool"] = e.mean_pool;
    j["gelu_tanh"] = e.gelu_tanh;
    return j;
}

inline void encoder_config_update(EncoderConfig& e, const nlohmann::json& j) {
    if (j.contains("image_size")) e.image_size = j["image_size"].get<int>();
    if (j.contains("patch_size")) e.patch_size = j["patch_size"].get<int>();
    if (j.contains("channels")) e.channels = j["channels"].get<int>();
    if (j.contains("dim")) e.dim = j["dim"].get<int>();
    if (j.contains("depth")) e.depth = j["depth"].get<int>();
    if (j.contains("heads")) e.heads = j["heads"].get<int>();
    if (j.contains("mlp_ratio")) e.mlp_ratio = j["mlp_ratio"].get<double>();
    if (j.contains("mask_token_enabled")) e.mask_token_enabled = j["mask_token_enabled"].get<bool>();
    if (j.contains("sinusoidal_pos")) e.sinusoidal_pos = j["sinusoidal_pos"].get<bool>();
    if (j.contains("mean_pool")) e.mean_pool = j["mean_pool"].get<bool>();
    if (j.contains("gelu_tanh")) e.gelu_tanh = j["gelu_tanh"].get<bool>();
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
    EncoderConfig e;
    encoder_config_update(e, j);
    return e;
}

inline void pretrain_config_update(PretrainConfig& c, const nlohmann::json& j) {
    if (j.contains("encoder")) encoder_config_update(c.encoder, j["encoder"]);
    if (j.contains("objective")) c.objective = j["objective"].get<std::string>();
    if (j.contains("epochs")) c.epochs = j["epochs"].get<int>();
    if (j.contains("batch")) c.batch_size = j["batch"].get<int>();
    if (j.contains("lr")) c.lr = j["lr"].get<double>();
    if (j.contains("ema_momentum")) c.ema_momentum = j["ema_momentum"].get<double>();
    if (j.contains("tau_student")) c.tau_student = j["tau_student"].get<double>();
    if (j.contains("tau_teacher")) c.tau_teacher = j["tau_teacher"].get<double>();
    if (j.contains("center_momentum")) c.center_momentum = j["center_momentum"].get<double>();
    if (j.contains("prototypes")) c.prototypes = j["prototypes"].get<int>();
    if (j.contains("head_hidden")) c.head_hidden = j["head_hidden"].get<int>();
    if (j.contains("mask_ratio")) c.mask_ratio = j["mask_ratio"].get<double>();
    if (j.contains("mask_block")) c.mask_block = j["mask_block"].get<int>();
    if (j.contains("k_layers")) c.k_layers = j["k_layers"].get<int>();
    if (j.contains("smooth_l1_beta")) c.smooth_l1_beta = j["smooth_l1_beta"].get<double>();
    if (j.contains("collapse_threshold")) c.collapse_threshold = j["collapse_threshold"].get<double>();
    if (j.contains("n_global")) c.views.n_global = j["n_global"].get<int>();
    if (j.contains("n_local")) c.views.n_local = j["n_local"].get<int>();
    if (j.contains("global_scale_lo")) c.views.global_scale_lo = j["global_scale_lo"].get<double>();
    if (j.contains("global_scale_hi")) c.views.global_scale_hi = j["global_scale_hi"].get<double>();
    if (j.contains("local_scale_lo")) c.views.local_scale_lo = j["local_scale_lo"].get<double>();
    if (j.contains("local_scale_hi")) c.views.local_scale_hi = j["local_scale_hi"].get<double>();
    c.views.global_size = c.encoder.image_size;
    c.views.local_size = c.encoder.image_size / 2;
    c.views.min_crop = c.encoder.patch_size;
}

inline DetectionNoise detection_noise_from_json(const nlohmann::json& j) {
    DetectionNoise n;
    if (j.contains("jitter_px")) n.jitter_sigma = j["jitter_px"].get<double>();
    if (j.contains("drop_prob")) n.drop_prob = j["drop_prob"].get<double>();
    if (j.contains("spurious_prob")) n.spurious_prob = j["spurious_prob"].get<double>();
    return n;
}

}  // namespace fleet
