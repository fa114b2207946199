#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "fleet/checkpoint.hpp"
#include "fleet/vit.hpp"

namespace fleet {

// Small MLP head: linear layers with GELU between them (none after the
// last). Used for the DINO prototype head, the masked-prediction regressor,
// and the fusion classifier.
template <typename T>
struct ProjectionHead {
    std::vector<Tensor<T>> weights;
    std::vector<Tensor<T>> biases;
    bool gelu_tanh = false;

    static ProjectionHead init(const std::vector<int>& dims, Rng& rng) {
        if (dims.size() < 2) throw ValueError("projection head needs >= 2 dims");
        ProjectionHead h;
        for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
            h.weights.push_back(Tensor<T>::randn(
                {static_cast<std::size_t>(dims[i]), static_cast<std::size_t>(dims[i + 1])},
                rng, T(0.02), true));
            h.biases.push_back(Tensor<T>::zeros({static_cast<std::size_t>(dims[i + 1])}));
        }
        return h;
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        Tensor<T> h = x;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            h = add_rowwise(matmul(h, weights[i]), biases[i]);
            if (i + 1 < weights.size()) h = gelu(h, gelu_tanh);
        }
        return h;
    }

    ParamSet<T> parameters(const std::string& prefix = "head.") const {
        ParamSet<T> ps;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            ps.add(prefix + "l" + std::to_string(i) + ".w", weights[i]);
            ps.add(prefix + "l" + std::to_string(i) + ".b", biases[i]);
        }
        return ps;
    }

    ProjectionHead clone() const {
        ProjectionHead h;
        h.gelu_tanh = gelu_tanh;
        for (const auto& w : weights) h.weights.push_back(w.clone());
        for (const auto& b : biases) h.biases.push_back(b.clone());
        return h;
    }
};

// teacher <- m * teacher + (1 - m) * student, elementwise over matching
// parameter sets. The only way teacher parameters ever change.
template <typename T>
void ema_update(ParamSet<T>& teacher, const ParamSet<T>& student, T momentum) {
    if (!(momentum >= T(0) && momentum <= T(1))) {
        throw ValueError("ema_update: momentum must lie in [0,1]");
    }
    if (teacher.size() != student.size()) {
        throw ShapeError("ema_update: parameter count mismatch (" +
                         std::to_string(teacher.size()) + " vs " +
                         std::to_string(student.size()) + ")");
    }
    for (std::size_t i = 0; i < teacher.size(); ++i) {
        auto& t = teacher.tensors[i];
        const auto& s = student.tensors[i];
        if (teacher.names[i] != student.names[i] || t.shape() != s.shape()) {
            throw ShapeError("ema_update: structure mismatch at " + teacher.names[i]);
        }
        auto td = t.data();
        auto sd = s.data();
        for (std::size_t j = 0; j < td.size(); ++j)
            td[j] = momentum * td[j] + (T(1) - momentum) * sd[j];
    }
}

// ---------------------------------------------------------------------------
// Views (DINO)

struct ViewConfig {
    int n_global = 2;
    int n_local = 4;
    double global_scale_lo = 0.5, global_scale_hi = 1.0;
    double local_scale_lo = 0.2, local_scale_hi = 0.5;
    int global_size = 64;
    int local_size = 32;
    int min_crop = 8;  // a crop smaller than one patch is rejected
};

struct ViewSet {
    std::vector<Image> global_views;
    std::vector<Image> local_views;
    std::vector<Box> crops;  // source rectangles, globals first
};

inline ViewSet make_views(const Image& img, Rng& rng, const ViewConfig& cfg) {
    auto check_range = [](double lo, double hi, const char* which) {
        if (!(lo > 0.0 && lo <= hi && hi <= 1.0)) {
            throw ValueError(std::string("make_views: invalid ") + which +
                             " scale range [" + std::to_string(lo) + "," +
                             std::to_string(hi) + "]");
        }
    };
    check_range(cfg.global_scale_lo, cfg.global_scale_hi, "global");
    if (cfg.n_local > 0) check_range(cfg.local_scale_lo, cfg.local_scale_hi, "local");

    ViewSet out;
    const double base = std::min(img.width, img.height);
    auto crop_once = [&](double lo, double hi, int target) {
        const double scale = rng.uniform(lo, hi);
        const double side = std::floor(std::sqrt(scale) * base);
        if (side < cfg.min_crop) {
            throw ValueError("make_views: crop side " + std::to_string(side) +
                             " smaller than minimum " + std::to_string(cfg.min_crop));
        }
        const double x0 = std::floor(rng.uniform(0.0, img.width - side + 1e-9));
        const double y0 = std::floor(rng.uniform(0.0, img.height - side + 1e-9));
        Box crop{x0, y0, x0 + side, y0 + side};
        out.crops.push_back(crop);
        return crop_and_resize(img, crop, target, target);
    };
    for (int i = 0; i < cfg.n_global; ++i)
        out.global_views.push_back(crop_once(cfg.global_scale_lo, cfg.global_scale_hi, cfg.global_size));
    for (int i = 0; i < cfg.n_local; ++i)
        out.local_views.push_back(crop_once(cfg.local_scale_lo, cfg.local_scale_hi, cfg.local_size));
    return out;
}

// ---------------------------------------------------------------------------
// DINO objective

// Cross-entropy between the centered, sharpened teacher distribution and
// each student view's distribution, averaged over all (teacher global,
// student view) pairs with different view indices. Teacher logits are
// treated as constants.
template <typename T>
Tensor<T> dino_loss(const std::vector<Tensor<T>>& student_logits,
                    const std::vector<Tensor<T>>& teacher_logits, T tau_student,
                    T tau_teacher, const std::vector<T>& center) {
    if (!(tau_student > T(0)) || !(tau_teacher > T(0))) {
        throw ValueError("dino_loss: temperatures must be > 0");
    }
    if (teacher_logits.empty() || student_logits.empty()) {
        throw ValueError("dino_loss: need at least one view on each side");
    }
    Tensor<T> total;
    int pairs = 0;
    for (std::size_t ti = 0; ti < teacher_logits.size(); ++ti) {
        const Tensor<T>& t = teacher_logits[ti];
        const std::size_t k = t.size();
        if (center.size() != k) {
            throw ShapeError("dino_loss: center length " + std::to_string(center.size()) +
                             " vs prototype count " + std::to_string(k));
        }
        // softmax((t - c) / tau_t), computed outside the graph
        std::vector<T> pt(k);
        T mx = t[0] - center[0];
        for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, t[j] - center[j]);
        T sum = 0;
        for (std::size_t j = 0; j < k; ++j) {
            pt[j] = std::exp(((t[j] - center[j]) - mx) / tau_teacher);
            sum += pt[j];
        }
        for (std::size_t j = 0; j < k; ++j) pt[j] /= sum;
        Tensor<T> target = Tensor<T>::from_data({1, k}, std::move(pt));

        for (std::size_t si = 0; si < student_logits.size(); ++si) {
            if (si == ti) continue;  // same global view on both sides
            Tensor<T> ps = softmax_rows(student_logits[si], tau_student);
            Tensor<T> h = cross_entropy_soft(target, ps);
            total = pairs == 0 ? h : add(total, h);
            ++pairs;
        }
    }
    if (pairs == 0) throw ValueError("dino_loss: no valid teacher/student pairs");
    return scale(total, T(1) / static_cast<T>(pairs));
}

// c' = momentum * c + (1 - momentum) * mean over the batch of teacher logits.
template <typename T>
std::vector<T> update_center(const std::vector<T>& center,
                             const std::vector<Tensor<T>>& teacher_logits,
                             T momentum) {
    if (!(momentum >= T(0) && momentum < T(1))) {
        throw ValueError("update_center: momentum must lie in [0,1)");
    }
    if (teacher_logits.empty()) throw ValueError("update_center: empty batch");
    std::vector<T> mean(center.size(), T(0));
    for (const auto& t : teacher_logits) {
        if (t.size() != center.size()) {
            throw ShapeError("update_center: logit width mismatch");
        }
        for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += t[j];
    }
    std::vector<T> out(center.size());
    for (std::size_t j = 0; j < out.size(); ++j) {
        mean[j] /= static_cast<T>(teacher_logits.size());
        out[j] = momentum * center[j] + (T(1) - momentum) * mean[j];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Masking (data2vec, wheel masking)

// Exactly ceil(ratio * n_patches) unique sorted indices. block_size > 1
// draws square blocks on the patch grid (clipped at the edges) until the
// target count is reached, then trims in insertion order.
inline MaskSpec make_mask(std::size_t n_patches, double ratio, Rng& rng,
                          int block_size = 1) {
    if (!(ratio >= 0.0 && ratio <= 1.0)) {
        throw ValueError("make_mask: ratio must lie in [0,1]");
    }
    MaskSpec spec;
    const auto target = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n_patches)));
    if (target == 0) return spec;
    if (block_size <= 1) {
        std::vector<std::size_t> all(n_patches);
        for (std::size_t i = 0; i < n_patches; ++i) all[i] = i;
        rng.shuffle(all.begin(), all.end());
        spec.indices.assign(all.begin(), all.begin() + target);
    } else {
        const int grid = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n_patches))));
        if (static_cast<std::size_t>(grid) * grid != n_patches) {
            throw ValueError("make_mask: block masking needs a square patch grid");
        }
        std::vector<bool> taken(n_patches, false);
        std::vector<std::size_t> picked;
        while (picked.size() < target) {
            const int r0 = static_cast<int>(rng.uniform_index(grid));
            const int c0 = static_cast<int>(rng.uniform_index(grid));
            for (int r = r0; r < std::min(r0 + block_size, grid); ++r) {
                for (int c = c0; c < std::min(c0 + block_size, grid); ++c) {
                    const std::size_t idx = static_cast<std::size_t>(r) * grid + c;
                    if (!taken[idx]) {
                        taken[idx] = true;
                        picked.push_back(idx);
                    }
                }
            }
        }
        picked.resize(target);
        spec.indices = std::move(picked);
    }
    std::sort(spec.indices.begin(), spec.indices.end());
    spec.ratio = static_cast<double>(target) / static_cast<double>(n_patches);
    return spec;
}

// ---------------------------------------------------------------------------
// data2vec objective

// Regression targets: the top k_layers teacher layer outputs, each
// instance-normalized per channel over the patch tokens, averaged. The
// class token is excluded and no gradients are tracked.
template <typename T>
Tensor<T> data2vec_targets(const EncodeResult<T>& teacher_out, int k_layers) {
    const int depth = static_cast<int>(teacher_out.layers.size());
    if (k_layers < 1 || k_layers > depth) {
        throw ValueError("data2vec_targets: k_layers " + std::to_string(k_layers) +
                         " out of range [1," + std::to_string(depth) + "]");
    }
    const std::size_t rows = teacher_out.layers[0].rows();
    const std::size_t d = teacher_out.layers[0].cols();
    const std::size_t n = rows - 1;
    std::vector<T> acc(n * d, T(0));
    for (int l = depth - k_layers; l < depth; ++l) {
        const auto& layer = teacher_out.layers[static_cast<std::size_t>(l)];
        for (std::size_t j = 0; j < d; ++j) {
            T mean = 0;
            for (std::size_t i = 0; i < n; ++i) mean += layer[(i + 1) * d + j];
            mean /= static_cast<T>(n);
            T var = 0;
            for (std::size_t i = 0; i < n; ++i) {
                const T dv = layer[(i + 1) * d + j] - mean;
                var += dv * dv;
            }
            var /= static_cast<T>(n);
            const T inv = T(1) / std::sqrt(var + T(1e-6));
            for (std::size_t i = 0; i < n; ++i)
                acc[i * d + j] += (layer[(i + 1) * d + j] - mean) * inv;
        }
    }
    const T inv_k = T(1) / static_cast<T>(k_layers);
    for (T& v : acc) v *= inv_k;
    return Tensor<T>::from_data({n, d}, std::move(acc));
}

// Smooth-L1 between predictions and targets, restricted to the masked
// patch rows. Both inputs are N x d in patch order (no class token).
template <typename T>
Tensor<T> data2vec_loss(const Tensor<T>& student_patch_pred, const Tensor<T>& targets,
                        const MaskSpec& mask, T beta) {
    if (mask.empty()) {
        throw ValueError("data2vec_loss: empty mask, nothing to predict");
    }
    if (student_patch_pred.shape() != targets.shape()) {
        throw ShapeError("data2vec_loss: prediction " + shape_str(student_patch_pred.shape()) +
                         " vs targets " + shape_str(targets.shape()));
    }
    Tensor<T> pred_rows = gather_rows(student_patch_pred, mask.indices);
    Tensor<T> target_rows = gather_rows(targets, mask.indices);
    return smooth_l1(pred_rows, target_rows, beta);
}

// ---------------------------------------------------------------------------
// Pretraining driver

struct PretrainConfig {
    EncoderConfig encoder;
    std::string objective = "data2vec";  // "dino" | "data2vec"
    int epochs = 4;
    int batch_size = 16;
    double lr = 1e-3;
    double ema_momentum = 0.996;
    // DINO
    ViewConfig views;
    double tau_student = 0.1;
    double tau_teacher = 0.04;
    double center_momentum = 0.9;
    int prototypes = 256;
    int head_hidden = 128;
    // data2vec
    double mask_ratio = 0.6;
    int mask_block = 2;
    int k_layers = 0;  // 0 = all layers
    double smooth_l1_beta = 1.0;
    double collapse_threshold = 1e-6;
};

struct PretrainStats {
    long steps = 0;
    double first_loss = 0.0;
    double final_loss = 0.0;
};

namespace detail {

// Collapse probe: mean over patch tokens of the final normed output. The
// class token is flat across images at initialization (zeroed output
// projections), so it cannot serve as the probe.
template <typename T>
std::vector<T> patch_mean_summary(const EncodeResult<T>& r) {
    const std::size_t rows = r.normed.rows(), d = r.normed.cols();
    std::vector<T> out(d, T(0));
    for (std::size_t i = 1; i < rows; ++i)
        for (std::size_t j = 0; j < d; ++j) out[j] += r.normed[i * d + j];
    for (T& v : out) v /= static_cast<T>(rows - 1);
    return out;
}

// Mean per-dimension variance across a batch of equal-length vectors.
template <typename T>
double batch_variance(const std::vector<std::vector<T>>& batch) {
    if (batch.size() < 2) return 0.0;
    const std::size_t d = batch[0].size();
    double total = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        double mean = 0.0;
        for (const auto& v : batch) mean += static_cast<double>(v[j]);
        mean /= static_cast<double>(batch.size());
        double var = 0.0;
        for (const auto& v : batch) {
            const double dv = static_cast<double>(v[j]) - mean;
            var += dv * dv;
        }
        total += var / static_cast<double>(batch.size());
    }
    return total / static_cast<double>(d);
}

}  // namespace detail

// Runs self-supervised pretraining over an in-memory pool of images and
// writes the encoder+head checkpoint plus a per-step loss curve CSV
// ("step,loss,teacher_variance"). Deterministic for a given seed.
template <typename T>
PretrainStats pretrain(const std::vector<Image>& pool, const PretrainConfig& cfg,
                       std::uint64_t seed, const std::string& ckpt_path,
                       const std::string& curve_path) {
    if (pool.empty()) throw ValueError("pretrain: empty image pool");
    if (cfg.objective != "dino" && cfg.objective != "data2vec") {
        throw ValueError("pretrain: unknown objective '" + cfg.objective + "'");
    }
    cfg.encoder.validate();
    const bool is_dino = cfg.objective == "dino";

    Rng init_rng(derive_seed(seed, "init"));
    EncoderParams<T> student = EncoderParams<T>::init(cfg.encoder, init_rng);
    ProjectionHead<T> head =
        is_dino ? ProjectionHead<T>::init({cfg.encoder.dim, cfg.head_hidden,
                                           cfg.head_hidden, cfg.prototypes},
                                          init_rng)
                : ProjectionHead<T>::init({cfg.encoder.dim, cfg.encoder.dim}, init_rng);
    head.gelu_tanh = cfg.encoder.gelu_tanh;

    ParamSet<T> trainable = student.parameters();
    trainable.append(head.parameters());
    trainable.set_requires_grad(true);

    // The DINO teacher mirrors encoder + head; the data2vec teacher mirrors
    // the encoder only (the regression head belongs to the student).
    EncoderParams<T> teacher = student.clone();
    teacher.set_requires_grad(false);
    ProjectionHead<T> teacher_head = head.clone();
    ParamSet<T> teacher_params = teacher.parameters();
    ParamSet<T> ema_source = student.parameters();
    if (is_dino) {
        teacher_params.append(teacher_head.parameters());
        teacher_params.set_requires_grad(false);
        ema_source.append(head.parameters());
    }

    std::vector<T> center(static_cast<std::size_t>(cfg.prototypes), T(0));
    AdamState<T> opt;
    const int k_layers = cfg.k_layers > 0 ? cfg.k_layers : cfg.encoder.depth;
    const T ema_m = static_cast<T>(cfg.ema_momentum);

    std::ofstream curve(curve_path);
    if (!curve) throw IoError("cannot open loss curve for writing: " + curve_path);
    curve << "step,loss,teacher_variance\n";

    PretrainStats stats;
    std::vector<std::size_t> order(pool.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(derive_seed(seed, "shuffle"));

    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order.begin(), order.end());
        for (std::size_t start = 0; start + cfg.batch_size <= order.size();
             start += cfg.batch_size) {
            trainable.zero_grad();
            Tensor<T> batch_loss;
            std::vector<std::vector<T>> teacher_summaries;
            std::vector<Tensor<T>> center_batch;
            for (int bi = 0; bi < cfg.batch_size; ++bi) {
                const std::size_t idx = order[start + static_cast<std::size_t>(bi)];
                const Image& img = pool[idx];
                Rng sample_rng(derive_seed(seed, "sample", static_cast<std::uint64_t>(step),
                                           static_cast<std::uint64_t>(idx)));
                Tensor<T> loss;
                if (is_dino) {
                    ViewSet views = make_views(img, sample_rng, cfg.views);
                    std::vector<Tensor<T>> teacher_logits;
                    for (const Image& gv : views.global_views) {
                        auto tr = encode_image(teacher, gv);
                        teacher_summaries.push_back(detail::patch_mean_summary(tr));
                        teacher_logits.push_back(
                            teacher_head.forward(summary_representation(teacher.cfg, tr)));
                        center_batch.push_back(teacher_logits.back());
                    }
                    std::vector<Tensor<T>> student_logits;
                    for (const Image& gv : views.global_views) {
                        auto sr = encode_image(student, gv);
                        student_logits.push_back(
                            head.forward(summary_representation(student.cfg, sr)));
                    }
                    for (const Image& lv : views.local_views) {
                        auto sr = encode_image(student, lv);
                        student_logits.push_back(
                            head.forward(summary_representation(student.cfg, sr)));
                    }
                    loss = dino_loss(student_logits, teacher_logits,
                                     static_cast<T>(cfg.tau_student),
                                     static_cast<T>(cfg.tau_teacher), center);
                } else {
                    auto tr = encode_image(teacher, img);
                    teacher_summaries.push_back(detail::patch_mean_summary(tr));
                    Tensor<T> targets = data2vec_targets(tr, k_layers);
                    MaskSpec mask = make_mask(
                        static_cast<std::size_t>(cfg.encoder.num_patches()),
                        cfg.mask_ratio, sample_rng, cfg.mask_block);
                    auto sr = encode_image(student, img, &mask);
                    Tensor<T> patches =
                        row_range(sr.layers.back(), 1, sr.layers.back().rows());
                    Tensor<T> pred = head.forward(patches);
                    loss = data2vec_loss(pred, targets, mask,
                                         static_cast<T>(cfg.smooth_l1_beta));
                }
                batch_loss = bi == 0 ? loss : add(batch_loss, loss);
            }
            batch_loss = scale(batch_loss, T(1) / static_cast<T>(cfg.batch_size));
            batch_loss.backward();
            adam_step(trainable, opt, static_cast<T>(cfg.lr));
            ema_update(teacher_params, ema_source, ema_m);
            if (is_dino) center = update_center(center, center_batch,
                                                static_cast<T>(cfg.center_momentum));

            const double variance = detail::batch_variance(teacher_summaries);
            const double loss_value = static_cast<double>(batch_loss.item());
            if (step == 0) stats.first_loss = loss_value;
            stats.final_loss = loss_value;
            curve << step << "," << loss_value << "," << variance << "\n";
            if (teacher_summaries.size() >= 2 && variance < cfg.collapse_threshold) {
                throw CollapseError("pretrain: teacher output variance " +
                                    std::to_string(variance) + " below " +
                                    std::to_string(cfg.collapse_threshold) +
                                    " at step " + std::to_string(step) +
                                    " (objective collapsed)");
            }
            ++step;
        }
    }
    stats.steps = step;

    ParamSet<T> to_save = student.parameters();
    to_save.append(head.parameters());
    save_checkpoint(ckpt_path, to_save);
    return stats;
}

}  // namespace fleet
