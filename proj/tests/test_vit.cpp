#include <doctest.h>

#include <cmath>

#include "fleet/vit.hpp"
#include "gradcheck.hpp"

using namespace fleet;

namespace {

Image random_image(int size, Rng& rng) {
    Image img(size, size);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.uniform_index(256));
    return img;
}

EncoderConfig tiny_config() {
    EncoderConfig cfg;
    cfg.image_size = 32;
    cfg.patch_size = 8;
    cfg.dim = 16;
    cfg.depth = 2;
    cfg.heads = 2;
    return cfg;
}

}  // namespace

TEST_CASE("patchify: 224/16 gives the 196-patch (14x14) grid") {
    auto img = TensorD::zeros({1, 224, 224});
    auto patches = patchify(img, 16);
    CHECK(patches.rows() == 196);
    CHECK(patches.cols() == 256);
}

TEST_CASE("patchify: whole-image patch and exact reassembly") {
    Rng rng(3);
    auto img = testutil::random_tensor({1, 32, 32}, rng);
    auto single = patchify(img, 32);
    CHECK(single.rows() == 1);
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(single[i] == img[i]);

    auto img64 = testutil::random_tensor({1, 64, 64}, rng);
    auto patches = patchify(img64, 8);
    CHECK(patches.rows() == 64);
    auto back = unpatchify(patches, 8, 1, 64, 64);
    for (std::size_t i = 0; i < img64.size(); ++i) CHECK(back[i] == img64[i]);
}

TEST_CASE("patchify: non-divisible size names the offending geometry") {
    auto img = TensorD::zeros({1, 30, 30});
    CHECK_THROWS_WITH_AS(patchify(img, 8), doctest::Contains("30"), ShapeError);
}

TEST_CASE("embed: zero patches and zero projection leave positional structure") {
    EncoderConfig cfg = tiny_config();
    Rng rng(5);
    auto params = EncoderParams<double>::init(cfg, rng);
    for (std::size_t i = 0; i < params.patch_proj.size(); ++i) params.patch_proj.at(i) = 0.0;
    auto patches = TensorD::zeros({static_cast<std::size_t>(cfg.num_patches()),
                                   static_cast<std::size_t>(cfg.patch_dim())});
    auto tokens = embed_tokens(params, patches, nullptr);
    const std::size_t d = static_cast<std::size_t>(cfg.dim);
    REQUIRE(tokens.rows() == static_cast<std::size_t>(cfg.num_patches() + 1));
    // Token 0 = class token + its position; the rest are pure positions.
    for (std::size_t j = 0; j < d; ++j) {
        CHECK(tokens[j] == doctest::Approx(params.cls_token[j] + params.pos_embed[j]));
    }
    for (std::size_t t = 1; t < tokens.rows(); ++t) {
        for (std::size_t j = 0; j < d; ++j) {
            CHECK(tokens[t * d + j] == doctest::Approx(params.pos_embed[t * d + j]));
        }
    }
}

TEST_CASE("embed: permuting two patches moves exactly those two content terms") {
    EncoderConfig cfg = tiny_config();
    Rng rng(6);
    auto params = EncoderParams<double>::init(cfg, rng);
    auto patches = testutil::random_tensor({static_cast<std::size_t>(cfg.num_patches()),
                                            static_cast<std::size_t>(cfg.patch_dim())},
                                           rng);
    auto swapped = patches.clone();
    const std::size_t pd = static_cast<std::size_t>(cfg.patch_dim());
    for (std::size_t j = 0; j < pd; ++j) {
        std::swap(swapped.at(2 * pd + j), swapped.at(5 * pd + j));
    }
    auto a = embed_tokens(params, patches, nullptr);
    auto b = embed_tokens(params, swapped, nullptr);
    const std::size_t d = static_cast<std::size_t>(cfg.dim);
    for (std::size_t t = 0; t < a.rows(); ++t) {
        bool changed = false;
        for (std::size_t j = 0; j < d; ++j) {
            if (a[t * d + j] != b[t * d + j]) changed = true;
        }
        const bool expected_changed = (t == 3 || t == 6);  // patch rows are offset by the class token
        CHECK(changed == expected_changed);
    }
}

TEST_CASE("embed: 196 patches at width 64 give 197 tokens of width 64") {
    EncoderConfig cfg;
    cfg.image_size = 224;
    cfg.patch_size = 16;
    cfg.dim = 64;
    cfg.depth = 1;
    cfg.heads = 4;
    Rng rng(7);
    auto params = EncoderParams<float>::init(cfg, rng);
    auto patches = TensorF::zeros({196, 256});
    auto tokens = embed_tokens(params, patches, nullptr);
    CHECK(tokens.rows() == 197);
    CHECK(tokens.cols() == 64);
}

TEST_CASE("attention: weight rows sum to 1 at every layer on random input") {
    EncoderConfig cfg = tiny_config();
    Rng rng(8);
    auto params = EncoderParams<float>::init(cfg, rng);
    // Give wo nonzero values so deeper layers see non-identity inputs.
    for (auto& b : params.blocks) {
        for (std::size_t i = 0; i < b.wo.size(); ++i)
            b.wo.at(i) = static_cast<float>(rng.uniform(-0.1, 0.1));
    }
    auto res = encode_image(params, random_image(cfg.image_size, rng), nullptr, true);
    REQUIRE(res.attention.size() == static_cast<std::size_t>(cfg.depth));
    for (const auto& layer : res.attention) {
        REQUIRE(layer.size() == static_cast<std::size_t>(cfg.heads));
        for (const auto& w : layer) {
            for (std::size_t r = 0; r < w.rows(); ++r) {
                double sum = 0.0;
                for (std::size_t c = 0; c < w.cols(); ++c) sum += w[r * w.cols() + c];
                CHECK(std::abs(sum - 1.0) < 1e-6);
            }
        }
    }
}

TEST_CASE("attention: zero output projections make the block an identity") {
    EncoderConfig cfg = tiny_config();
    Rng rng(9);
    auto params = EncoderParams<float>::init(cfg, rng);  // wo and w2 start at zero
    Rng xrng(10);
    auto x = testutil::random_tensor({17, 16}, xrng);
    TensorF xf = TensorF::zeros({17, 16});
    for (std::size_t i = 0; i < x.size(); ++i) xf.at(i) = static_cast<float>(x[i]);
    auto y = attention_block(params.blocks[0], xf, cfg.heads, cfg.gelu_tanh);
    for (std::size_t i = 0; i < xf.size(); ++i) CHECK(y[i] == xf[i]);
}

TEST_CASE("attention: a single token attends only to itself") {
    EncoderConfig cfg = tiny_config();
    Rng rng(11);
    auto params = EncoderParams<float>::init(cfg, rng);
    auto x = TensorF::from_data({1, 16}, std::vector<float>(16, 0.25f));
    std::vector<TensorF> attn;
    attention_block(params.blocks[0], x, cfg.heads, cfg.gelu_tanh, &attn);
    REQUIRE(attn.size() == static_cast<std::size_t>(cfg.heads));
    for (const auto& w : attn) {
        REQUIRE(w.size() == 1);
        CHECK(w[0] == 1.0f);
    }
}

TEST_CASE("encode: empty mask equals unmasked, masked pixels are invisible") {
    EncoderConfig cfg = tiny_config();
    Rng rng(12);
    auto params = EncoderParams<float>::init(cfg, rng);
    Image img = random_image(cfg.image_size, rng);

    MaskSpec empty;
    auto r1 = encode_image(params, img);
    auto r2 = encode_image(params, img, &empty);
    for (std::size_t l = 0; l < r1.layers.size(); ++l) {
        for (std::size_t i = 0; i < r1.layers[l].size(); ++i) {
            CHECK(r1.layers[l][i] == r2.layers[l][i]);
        }
    }

    // Change pixels strictly inside masked patches: bit-identical outputs.
    MaskSpec mask;
    mask.indices = {0, 5, 9};
    Image altered = img;
    const int grid = cfg.grid();
    for (const std::size_t idx : mask.indices) {
        const int gy = static_cast<int>(idx) / grid, gx = static_cast<int>(idx) % grid;
        for (int y = 0; y < cfg.patch_size; ++y)
            for (int x = 0; x < cfg.patch_size; ++x)
                altered.at(gx * cfg.patch_size + x, gy * cfg.patch_size + y) =
                    static_cast<std::uint8_t>(rng.uniform_index(256));
    }
    auto m1 = encode_image(params, img, &mask);
    auto m2 = encode_image(params, altered, &mask);
    for (std::size_t l = 0; l < m1.layers.size(); ++l) {
        for (std::size_t i = 0; i < m1.layers[l].size(); ++i) {
            CHECK(m1.layers[l][i] == m2.layers[l][i]);
        }
    }
}

TEST_CASE("encode: full mask output is independent of all pixel content") {
    EncoderConfig cfg = tiny_config();
    Rng rng(13);
    auto params = EncoderParams<float>::init(cfg, rng);
    MaskSpec full;
    for (int i = 0; i < cfg.num_patches(); ++i) full.indices.push_back(static_cast<std::size_t>(i));
    auto a = encode_image(params, random_image(cfg.image_size, rng), &full);
    auto b = encode_image(params, random_image(cfg.image_size, rng), &full);
    for (std::size_t i = 0; i < a.normed.size(); ++i) CHECK(a.normed[i] == b.normed[i]);
}

TEST_CASE("encode: out-of-range mask index rejected") {
    EncoderConfig cfg = tiny_config();
    Rng rng(14);
    auto params = EncoderParams<float>::init(cfg, rng);
    MaskSpec bad;
    bad.indices = {static_cast<std::size_t>(cfg.num_patches())};
    Image img = random_image(cfg.image_size, rng);
    CHECK_THROWS_AS(encode_image(params, img, &bad), ValueError);
}

TEST_CASE("encode: layer outputs keep shape (N+1) x d across random configs") {
    Rng meta(15);
    for (int trial = 0; trial < 6; ++trial) {
        EncoderConfig cfg;
        const int grids[] = {2, 4, 8};
        cfg.patch_size = 8;
        cfg.image_size = cfg.patch_size * grids[meta.uniform_index(3)];
        const int dims[] = {8, 16, 32};
        cfg.dim = dims[meta.uniform_index(3)];
        cfg.heads = 2;
        cfg.depth = 1 + static_cast<int>(meta.uniform_index(3));
        Rng rng(trial + 100);
        auto params = EncoderParams<float>::init(cfg, rng);
        auto res = encode_image(params, random_image(cfg.image_size, rng));
        REQUIRE(res.layers.size() == static_cast<std::size_t>(cfg.depth));
        for (const auto& layer : res.layers) {
            CHECK(layer.rows() == static_cast<std::size_t>(cfg.num_patches() + 1));
            CHECK(layer.cols() == static_cast<std::size_t>(cfg.dim));
        }
    }
}

TEST_CASE("encode: classification loss reaches encoder parameters") {
    EncoderConfig cfg = tiny_config();
    Rng rng(16);
    auto params = EncoderParams<float>::init(cfg, rng);
    ParamSet<float> ps = params.parameters();
    ps.set_requires_grad(true);
    ps.zero_grad();
    auto res = encode_image(params, random_image(cfg.image_size, rng));
    auto loss = mean_all(mul(res.normed, res.normed));
    loss.backward();
    double total = 0.0;
    for (const auto& t : ps.tensors) {
        if (!t.has_grad()) continue;
        for (const float g : t.grad()) total += std::abs(g);
    }
    CHECK(total > 0.0);
}

TEST_CASE("encode: smaller views reuse the positional table by interpolation") {
    EncoderConfig cfg;
    cfg.image_size = 64;
    cfg.patch_size = 8;
    cfg.dim = 16;
    cfg.depth = 1;
    cfg.heads = 2;
    Rng rng(17);
    auto params = EncoderParams<float>::init(cfg, rng);
    Image half = random_image(32, rng);
    auto res = encode_image(params, half);
    CHECK(res.normed.rows() == 17);  // 16 patches + class token

    // Same-size interpolation is exact.
    auto mixes = detail::pos_grid_mixes(8, 8);
    auto same = mix_rows(params.pos_embed, mixes);
    for (std::size_t i = 0; i < same.size(); ++i) {
        CHECK(same[i] == doctest::Approx(params.pos_embed[i]));
    }
}

TEST_CASE("encoder: sinusoidal positional table is fixed and never trained") {
    EncoderConfig cfg = tiny_config();
    cfg.sinusoidal_pos = true;
    Rng rng(18);
    auto params = EncoderParams<float>::init(cfg, rng);
    ParamSet<float> ps = params.parameters();
    for (const auto& name : ps.names) CHECK(name != "vit.pos_embed");
}
