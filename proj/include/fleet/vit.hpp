#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fleet/adam.hpp"
#include "fleet/image.hpp"
#include "fleet/ops.hpp"
#include "fleet/rng.hpp"

namespace fleet {

struct EncoderConfig {
    int image_size = 64;
    int patch_size = 8;
    int channels = 1;
    int dim = 64;
    int depth = 4;
    int heads = 4;
    double mlp_ratio = 2.0;
    bool mask_token_enabled = true;
    bool sinusoidal_pos = false;  // fixed sinusoidal table instead of learned
    bool mean_pool = false;       // pooled patch mean instead of the class token
    bool gelu_tanh = false;

    int grid() const { return image_size / patch_size; }
    int num_patches() const { return grid() * grid(); }
    int patch_dim() const { return patch_size * patch_size * channels; }
    int mlp_hidden() const { return static_cast<int>(mlp_ratio * dim); }

    void validate() const {
        if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0) {
            throw ValueError("encoder config: image size " + std::to_string(image_size) +
                             " must be divisible by patch size " + std::to_string(patch_size));
        }
        if (channels != 1 && channels != 3) throw ValueError("encoder config: channels must be 1 or 3");
        if (depth < 1) throw ValueError("encoder config: depth must be >= 1");
        if (dim <= 0 || heads <= 0 || dim % heads != 0) {
            throw ValueError("encoder config: dim " + std::to_string(dim) +
                             " must be divisible by heads " + std::to_string(heads));
        }
        if (mlp_ratio <= 0.0) throw ValueError("encoder config: mlp_ratio must be > 0");
    }

    bool operator==(const EncoderConfig&) const = default;
};

// Set of patches masked out of the encoder input. Indices are sorted,
// unique patch positions; the class token is never maskable.
struct MaskSpec {
    std::vector<std::size_t> indices;
    double ratio = 0.0;

    bool empty() const { return indices.empty(); }
};

template <typename T>
struct BlockParams {
    Tensor<T> ln1_gamma, ln1_beta;
    Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor<T> ln2_gamma, ln2_beta;
    Tensor<T> w1, b1, w2, b2;
};

template <typename T>
struct EncoderParams {
    EncoderConfig cfg;
    Tensor<T> patch_proj;  // patch_dim x dim
    Tensor<T> patch_bias;  // dim
    Tensor<T> cls_token;   // 1 x dim
    Tensor<T> pos_embed;   // (N+1) x dim
    Tensor<T> mask_token;  // 1 x dim
    Tensor<T> final_gamma, final_beta;
    std::vector<BlockParams<T>> blocks;

    static EncoderParams init(const EncoderConfig& cfg, Rng& rng);

    // Named view sharing storage with this struct; names are stable and
    // define the checkpoint layout ("vit.*").
    ParamSet<T> parameters() const;

    EncoderParams clone() const;
    void set_requires_grad(bool v);
};

template <typename T>
struct EncodeResult {
    std::vector<Tensor<T>> layers;            // depth outputs, each (N+1) x dim
    Tensor<T> normed;                         // final layer norm of the last output
    std::vector<std::vector<Tensor<T>>> attention;  // per layer, per head (when captured)
};

// Splits a {channels, H, W} tensor into flattened P x P patches, row-major
// over the patch grid: {N, P*P*channels}.
template <typename T>
Tensor<T> patchify(const Tensor<T>& image, int patch_size) {
    if (image.rank() != 3) {
        throw ShapeError("patchify: expected {channels, H, W}, got " + shape_str(image.shape()));
    }
    const std::size_t c = image.shape()[0], h = image.shape()[1], w = image.shape()[2];
    const auto p = static_cast<std::size_t>(patch_size);
    if (p == 0 || h % p != 0 || w % p != 0) {
        throw ShapeError("patchify: image " + std::to_string(h) + "x" + std::to_string(w) +
                         " not divisible by patch size " + std::to_string(patch_size));
    }
    const std::size_t gh = h / p, gw = w / p;
    std::vector<T> out(c * h * w);
    std::size_t o = 0;
    for (std::size_t gy = 0; gy < gh; ++gy)
        for (std::size_t gx = 0; gx < gw; ++gx)
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t py = 0; py < p; ++py)
                    for (std::size_t px = 0; px < p; ++px)
                        out[o++] = image[ch * h * w + (gy * p + py) * w + (gx * p + px)];
    return Tensor<T>::from_data({gh * gw, p * p * c}, std::move(out));
}

// Inverse of patchify; used to verify the partition is lossless.
template <typename T>
Tensor<T> unpatchify(const Tensor<T>& patches, int patch_size, int channels, int h, int w) {
    const auto p = static_cast<std::size_t>(patch_size);
    const std::size_t c = static_cast<std::size_t>(channels);
    const std::size_t gh = h / p, gw = w / p;
    if (patches.rows() != gh * gw || patches.cols() != p * p * c) {
        throw ShapeError("unpatchify: patch tensor " + shape_str(patches.shape()) +
                         " does not match target geometry");
    }
    std::vector<T> out(c * h * w);
    std::size_t o = 0;
    for (std::size_t gy = 0; gy < gh; ++gy)
        for (std::size_t gx = 0; gx < gw; ++gx)
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t py = 0; py < p; ++py)
                    for (std::size_t px = 0; px < p; ++px)
                        out[ch * h * w + (gy * p + py) * w + (gx * p + px)] = patches[o++];
    return Tensor<T>::from_data({c, static_cast<std::size_t>(h), static_cast<std::size_t>(w)},
                                std::move(out));
}

namespace detail {

// Bilinear recombination weights mapping a (src x src + 1) positional table
// (class position first) onto a (dst x dst + 1) one.
inline std::vector<RowMix> pos_grid_mixes(int src_grid, int dst_grid) {
    std::vector<RowMix> mixes;
    mixes.push_back(RowMix{{{0, 1.0}}});  // class position maps to itself
    for (int r = 0; r < dst_grid; ++r) {
        for (int c = 0; c < dst_grid; ++c) {
            double sy = 0.0, sx = 0.0;
            if (dst_grid > 1) {
                sy = static_cast<double>(r) * (src_grid - 1) / (dst_grid - 1);
                sx = static_cast<double>(c) * (src_grid - 1) / (dst_grid - 1);
            }
            const int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
            const int y1 = std::min(y0 + 1, src_grid - 1), x1 = std::min(x0 + 1, src_grid - 1);
            const double fy = sy - y0, fx = sx - x0;
            RowMix m;
            auto idx = [src_grid](int y, int x) {
                return static_cast<std::size_t>(1 + y * src_grid + x);
            };
            m.terms = {{idx(y0, x0), (1 - fy) * (1 - fx)},
                       {idx(y0, x1), (1 - fy) * fx},
                       {idx(y1, x0), fy * (1 - fx)},
                       {idx(y1, x1), fy * fx}};
            mixes.push_back(std::move(m));
        }
    }
    return mixes;
}

template <typename T>
Tensor<T> sinusoidal_table(std::size_t positions, std::size_t dim) {
    std::vector<T> data(positions * dim);
    for (std::size_t pos = 0; pos < positions; ++pos) {
        for (std::size_t j = 0; j < dim; ++j) {
            const double rate = std::pow(10000.0, -2.0 * static_cast<double>(j / 2) / static_cast<double>(dim));
            const double angle = static_cast<double>(pos) * rate;
            data[pos * dim + j] = static_cast<T>(j % 2 == 0 ? std::sin(angle) : std::cos(angle));
        }
    }
    return Tensor<T>::from_data({positions, dim}, std::move(data));
}

}  // namespace detail

template <typename T>
EncoderParams<T> EncoderParams<T>::init(const EncoderConfig& cfg, Rng& rng) {
    cfg.validate();
    EncoderParams<T> p;
    p.cfg = cfg;
    const auto d = static_cast<std::size_t>(cfg.dim);
    const auto pd = static_cast<std::size_t>(cfg.patch_dim());
    const auto n1 = static_cast<std::size_t>(cfg.num_patches() + 1);
    const T sigma = T(0.02);
    p.patch_proj = Tensor<T>::randn({pd, d}, rng, sigma, true);
    p.patch_bias = Tensor<T>::zeros({d});
    p.cls_token = Tensor<T>::randn({1, d}, rng, sigma, true);
    p.pos_embed = cfg.sinusoidal_pos ? detail::sinusoidal_table<T>(n1, d)
                                     : Tensor<T>::randn({n1, d}, rng, sigma, true);
    p.mask_token = Tensor<T>::randn({1, d}, rng, sigma, true);
    p.final_gamma = Tensor<T>::full({d}, T(1));
    p.final_beta = Tensor<T>::zeros({d});
    const auto hiddens = static_cast<std::size_t>(cfg.mlp_hidden());
    for (int l = 0; l < cfg.depth; ++l) {
        BlockParams<T> b;
        b.ln1_gamma = Tensor<T>::full({d}, T(1));
        b.ln1_beta = Tensor<T>::zeros({d});
        b.wq = Tensor<T>::randn({d, d}, rng, sigma, true);
        b.bq = Tensor<T>::zeros({d});
        b.wk = Tensor<T>::randn({d, d}, rng, sigma, true);
        b.bk = Tensor<T>::zeros({d});
        b.wv = Tensor<T>::randn({d, d}, rng, sigma, true);
        b.bv = Tensor<T>::zeros({d});
        b.wo = Tensor<T>::zeros({d, d});  // zero output projections: identity residual at init
        b.bo = Tensor<T>::zeros({d});
        b.ln2_gamma = Tensor<T>::full({d}, T(1));
        b.ln2_beta = Tensor<T>::zeros({d});
        b.w1 = Tensor<T>::randn({d, hiddens}, rng, sigma, true);
        b.b1 = Tensor<T>::zeros({hiddens});
        b.w2 = Tensor<T>::zeros({hiddens, d});
        b.b2 = Tensor<T>::zeros({d});
        p.blocks.push_back(std::move(b));
    }
    return p;
}

template <typename T>
ParamSet<T> EncoderParams<T>::parameters() const {
    ParamSet<T> ps;
    ps.add("vit.embed.proj", patch_proj);
    ps.add("vit.embed.bias", patch_bias);
    ps.add("vit.cls_token", cls_token);
    if (!cfg.sinusoidal_pos) ps.add("vit.pos_embed", pos_embed);
    ps.add("vit.mask_token", mask_token);
    for (std::size_t l = 0; l < blocks.size(); ++l) {
        const std::string pre = "vit.block" + std::to_string(l) + ".";
        const auto& b = blocks[l];
        ps.add(pre + "ln1.gamma", b.ln1_gamma);
        ps.add(pre + "ln1.beta", b.ln1_beta);
        ps.add(pre + "attn.wq", b.wq);
        ps.add(pre + "attn.bq", b.bq);
        ps.add(pre + "attn.wk", b.wk);
        ps.add(pre + "attn.bk", b.bk);
        ps.add(pre + "attn.wv", b.wv);
        ps.add(pre + "attn.bv", b.bv);
        ps.add(pre + "attn.wo", b.wo);
        ps.add(pre + "attn.bo", b.bo);
        ps.add(pre + "ln2.gamma", b.ln2_gamma);
        ps.add(pre + "ln2.beta", b.ln2_beta);
        ps.add(pre + "mlp.w1", b.w1);
        ps.add(pre + "mlp.b1", b.b1);
        ps.add(pre + "mlp.w2", b.w2);
        ps.add(pre + "mlp.b2", b.b2);
    }
    ps.add("vit.final.gamma", final_gamma);
    ps.add("vit.final.beta", final_beta);
    return ps;
}

template <typename T>
EncoderParams<T> EncoderParams<T>::clone() const {
    EncoderParams<T> out;
    out.cfg = cfg;
    out.patch_proj = patch_proj.clone();
    out.patch_bias = patch_bias.clone();
    out.cls_token = cls_token.clone();
    out.pos_embed = pos_embed.clone();
    out.mask_token = mask_token.clone();
    out.final_gamma = final_gamma.clone();
    out.final_beta = final_beta.clone();
    for (const auto& b : blocks) {
        BlockParams<T> nb;
        nb.ln1_gamma = b.ln1_gamma.clone();
        nb.ln1_beta = b.ln1_beta.clone();
        nb.wq = b.wq.clone();
        nb.bq = b.bq.clone();
        nb.wk = b.wk.clone();
        nb.bk = b.bk.clone();
        nb.wv = b.wv.clone();
        nb.bv = b.bv.clone();
        nb.wo = b.wo.clone();
        nb.bo = b.bo.clone();
        nb.ln2_gamma = b.ln2_gamma.clone();
        nb.ln2_beta = b.ln2_beta.clone();
        nb.w1 = b.w1.clone();
        nb.b1 = b.b1.clone();
        nb.w2 = b.w2.clone();
        nb.b2 = b.b2.clone();
        out.blocks.push_back(std::move(nb));
    }
    return out;
}

template <typename T>
void EncoderParams<T>::set_requires_grad(bool v) {
    ParamSet<T> ps = parameters();
    ps.set_requires_grad(v);
    if (cfg.sinusoidal_pos) pos_embed.set_requires_grad(false);
}

// Embeds flattened patches: projection + optional mask-token substitution,
// class token prepended, positional embeddings added. `mixes` resamples the
// positional table when the patch grid differs from the configured one.
template <typename T>
Tensor<T> embed_tokens(const EncoderParams<T>& p, const Tensor<T>& patches,
                       const MaskSpec* mask, int grid_override = 0) {
    const std::size_t n = patches.rows();
    if (patches.cols() != static_cast<std::size_t>(p.cfg.patch_dim())) {
        throw ShapeError("embed: patch width " + shape_str(patches.shape()) +
                         " does not match projection " + shape_str(p.patch_proj.shape()));
    }
    Tensor<T> x = add_rowwise(matmul(patches, p.patch_proj), p.patch_bias);
    if (mask && !mask->empty()) {
        if (!p.cfg.mask_token_enabled) {
            throw ValueError("embed: mask given but mask token is disabled");
        }
        for (const std::size_t i : mask->indices) {
            if (i >= n) {
                throw ValueError("embed: mask index " + std::to_string(i) +
                                 " out of range for " + std::to_string(n) + " patches");
            }
        }
        x = replace_rows(x, mask->indices, p.mask_token);
    }
    Tensor<T> tokens = concat_rows(p.cls_token, x);
    const int native_grid = p.cfg.grid();
    const int grid = grid_override > 0 ? grid_override : native_grid;
    if (grid == native_grid) {
        return add(tokens, p.pos_embed);
    }
    Tensor<T> pos = mix_rows(p.pos_embed, detail::pos_grid_mixes(native_grid, grid));
    return add(tokens, pos);
}

// One pre-norm transformer block: x + MHSA(LN(x)), then + MLP(LN(.)).
// Appends per-head attention matrices to `attn_out` when it is non-null.
template <typename T>
Tensor<T> attention_block(const BlockParams<T>& b, const Tensor<T>& x, int heads,
                          bool gelu_tanh, std::vector<Tensor<T>>* attn_out = nullptr) {
    const std::size_t d = x.cols();
    const std::size_t dh = d / static_cast<std::size_t>(heads);
    Tensor<T> h = layer_norm(x, b.ln1_gamma, b.ln1_beta);
    Tensor<T> q = add_rowwise(matmul(h, b.wq), b.bq);
    Tensor<T> k = add_rowwise(matmul(h, b.wk), b.bk);
    Tensor<T> v = add_rowwise(matmul(h, b.wv), b.bv);
    const T inv_sqrt_dh = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    Tensor<T> heads_out;
    for (int hd = 0; hd < heads; ++hd) {
        const std::size_t c0 = hd * dh, c1 = (hd + 1) * dh;
        Tensor<T> qh = col_range(q, c0, c1);
        Tensor<T> kh = col_range(k, c0, c1);
        Tensor<T> vh = col_range(v, c0, c1);
        Tensor<T> scores = scale(matmul_nt(qh, kh), inv_sqrt_dh);
        Tensor<T> weights = softmax_rows(scores);
        if (attn_out) attn_out->push_back(weights);
        Tensor<T> ctx = matmul(weights, vh);
        heads_out = hd == 0 ? ctx : concat_cols(heads_out, ctx);
    }
    Tensor<T> attn = add_rowwise(matmul(heads_out, b.wo), b.bo);
    Tensor<T> x1 = add(x, attn);
    Tensor<T> h2 = layer_norm(x1, b.ln2_gamma, b.ln2_beta);
    Tensor<T> mlp = add_rowwise(
        matmul(gelu(add_rowwise(matmul(h2, b.w1), b.b1), gelu_tanh), b.w2), b.b2);
    return add(x1, mlp);
}

// Full encoder pass over pre-extracted patches. The patch grid is inferred
// from the patch count, so smaller views reuse the same weights.
template <typename T>
EncodeResult<T> encode_patches(const EncoderParams<T>& p, const Tensor<T>& patches,
                               const MaskSpec* mask = nullptr,
                               bool capture_attention = false) {
    const auto n = patches.rows();
    const int grid = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
    if (static_cast<std::size_t>(grid) * grid != n) {
        throw ShapeError("encode: patch count " + std::to_string(n) + " is not a square grid");
    }
    EncodeResult<T> result;
    Tensor<T> x = embed_tokens(p, patches, mask, grid);
    for (int l = 0; l < p.cfg.depth; ++l) {
        std::vector<Tensor<T>> attn;
        x = attention_block(p.blocks[l], x, p.cfg.heads, p.cfg.gelu_tanh,
                            capture_attention ? &attn : nullptr);
        result.layers.push_back(x);
        if (capture_attention) result.attention.push_back(std::move(attn));
    }
    result.normed = layer_norm(x, p.final_gamma, p.final_beta);
    return result;
}

template <typename T>
EncodeResult<T> encode_image(const EncoderParams<T>& p, const Image& img,
                             const MaskSpec* mask = nullptr,
                             bool capture_attention = false) {
    Tensor<T> patches = patchify(image_to_tensor<T>(img), p.cfg.patch_size);
    return encode_patches(p, patches, mask, capture_attention);
}

// Summary representation fed to heads: class token (row 0) of the final
// normed output, or the mean over patch tokens when mean_pool is set.
template <typename T>
Tensor<T> summary_representation(const EncoderConfig& cfg, const EncodeResult<T>& r) {
    if (cfg.mean_pool) {
        return mean_rows(row_range(r.normed, 1, r.normed.rows()));
    }
    return row_range(r.normed, 0, 1);
}

}  // namespace fleet
