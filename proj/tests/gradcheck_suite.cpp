// Central-difference checks for every differentiable operation, shared by
// the unit tests and the acceptance suite.

#include "gradcheck.hpp"

#include "fleet/ssl.hpp"
#include "fleet/vit.hpp"

namespace testutil {

using namespace fleet;

namespace {

// Fixed random projection so matrix-valued ops reduce to a scalar loss.
TensorD projector(const Shape& shape, Rng& rng) {
    return random_tensor(shape, rng);
}

TensorD to_scalar(const TensorD& x, const TensorD& r) {
    return sum_all(mul(x, r));
}

// Normalized probability vector bounded away from the clamping floor.
TensorD random_probs(std::size_t k, Rng& rng) {
    std::vector<double> p(k);
    double sum = 0.0;
    for (auto& v : p) {
        v = 0.05 + rng.uniform();
        sum += v;
    }
    for (auto& v : p) v /= sum;
    return TensorD::from_data({1, k}, std::move(p));
}

}  // namespace

std::vector<OpCheckResult> gradcheck_all_ops(int instances, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<OpCheckResult> results;

    auto run = [&](const std::string& name,
                   const std::function<double(Rng&)>& one_instance) {
        double worst = 0.0;
        for (int i = 0; i < instances; ++i) worst = std::max(worst, one_instance(rng));
        results.push_back({name, worst});
    };

    auto dims = [&](Rng& r) {
        return std::pair<std::size_t, std::size_t>{2 + r.uniform_index(3),
                                                   2 + r.uniform_index(3)};
    };

    run("add", [&](Rng& r) {
        auto [m, n] = dims(r);
        std::vector<TensorD> in{random_tensor({m, n}, r), random_tensor({m, n}, r)};
        TensorD proj = projector({m, n}, r);
        return max_grad_discrepancy(
            in, [&](auto& v) { return to_scalar(add(v[0], v[1]), proj); });
    });
    run("sub", [&](Rng& r) {
        auto [m, n] = dims(r);
        std::vector<TensorD> in{random_tensor({m, n}, r), random_tensor({m, n}, r)};
        TensorD proj = projector({m, n}, r);
        return max_grad_discrepancy(
            in, [&](auto& v) { return to_scalar(sub(v[0], v[1]), proj); });
    });
    run("mul", [&](Rng& r) {
        auto [m, n] = dims(r);
        std::vector<TensorD> in{random_tensor({m, n}, r), random_tensor({m, n}, r)};
        TensorD proj = projector({m, n}, r);
        return max_grad_discrepancy(
            in, [&](auto& v) { return to_scalar(mul(v[0], v[1]), proj); });
    });
    run("scale", [&](Rng& r) {
        auto [m, n] = dims(r);
        const double s = r.uniform(-2.0, 2.0);
        std::vector<TensorD> in{random_tensor({m, n}, r)};
        TensorD proj = projector({m, n}, r);
        return max_grad_discrepancy(
            in, [&](auto& v) { return to_scalar(scale(v[0], s), proj); });
    });
    run("neg", [&](Rng& r) {
        auto [m, n] = dims(r);
        std::vector<TensorD> in{random_tensor({m, n}, r)};
        TensorD proj = projector({m, n}, r);
        return max_grad_discrepancy(in,
                                    [&](auto& v) { return to_scalar(neg(v[0]), proj); });
    });
    run("add_rowwise", [&](Rng& r) {
        auto [m, n] = dims(r);
        std::vector<TensorD> in{random_tensor({m, n}, r), random_tensor({n}, r)};
        TensorD proj = projector({m, n}, r);
        return max_grad_discrepancy(
            in, [&](auto& v) { return to_scalar(add_rowwise(v[0], v[1]), proj); });
    });
    run("matmul", [&](Rng& r) {
        auto [m, k] = dims(r);
        const std::size_t n = 2 + r.uniform_index(3);
        std::vector<TensorD> in{random_tensor({m, k}, r), random_tensor({k, n}, r)};
        TensorD proj = projector({m, n}, r);
        return max_grad_discrepancy(
            in, [&](auto& v) { return to_scalar(matmul(v[0], v[1]), proj); });
    });
    run("matmul_nt", [&](Rng& r) {
        auto [m, k] = dims(r);
        const std::size_t n = 2 + r.uniform_index(3);
        std::vector<TensorD> in{random_tensor({m, k}, r), random_tensor({n, k}, r)};
        TensorD proj = projector({m, n}, r);
        return max_grad_discrepancy(
            in, [&](auto& v) { return to_scalar(matmul_nt(v[0], v[1]), proj); });
    });
    run("transpose", [&](Rng& r) {
        auto [m, n] = dims(r);
        std::vector<TensorD> in{random_tensor({m, n}, r)};
        TensorD proj = projector({n, m}, r);
        return max_grad_discrepancy(
            in, [&](auto& v) { return to_scalar(transpose(v[0]), proj); });
    });
    run("softmax", [&](Rng& r) {
        auto [m, n] = dims(r);
        const double tau = r.uniform(0.05, 2.0);
        std::vector<TensorD> in{random_tensor({m, n}, r)};
        TensorD proj = projector({m, n}, r);
        return max_grad_discrepancy(
            in, [&](auto& v) { return to_scalar(softmax_rows(v[0], tau), proj); });
    });
    run("layer_norm", [&](Rng& r) {
        auto [m, n] = dims(r);
        const std::size_t c = n + 2;  // avoid near-constant tiny rows
        std::vector<TensorD> in{random_tensor({m, c}, r), random_tensor({c}, r),
                                random_tensor({c}, r)};
        TensorD proj = projector({m, c}, r);
        return max_grad_discrepancy(in, [&](auto& v) {
            return to_scalar(layer_norm(v[0], v[1], v[2]), proj);
        });
    });
    run("gelu_exact", [&](Rng& r) {
        auto [m, n] = dims(r);
        std::vector<TensorD> in{random_tensor({m, n}, r)};
        TensorD proj = projector({m, n}, r);
        return max_grad_discrepancy(
            in, [&](auto& v) { return to_scalar(gelu(v[0]), proj); });
    });
    run("gelu_tanh", [&](Rng& r) {
        auto [m, n] = dims(r);
        std::vector<TensorD> in{random_tensor({m, n}, r)};
        TensorD proj = projector({m, n}, r);
        return max_grad_discrepancy(
            in, [&](auto& v) { return to_scalar(gelu(v[0], true), proj); });
    });
    run("cross_entropy_soft", [&](Rng& r) {
        const std::size_t k = 3 + r.uniform_index(4);
        std::vector<TensorD> in{random_probs(k, r), random_probs(k, r)};
        return max_grad_discrepancy(
            in, [&](auto& v) { return cross_entropy_soft(v[0], v[1]); });
    });
    run("smooth_l1", [&](Rng& r) {
        auto [m, n] = dims(r);
        const double beta = r.uniform(0.4, 1.2);
        // Keep |pred - target| away from the kink at beta.
        TensorD pred = random_tensor({m, n}, r);
        TensorD target = TensorD::zeros({m, n});
        for (std::size_t i = 0; i < target.size(); ++i) {
            double diff = r.uniform(-2.0, 2.0);
            while (std::abs(std::abs(diff) - beta) < 0.02) diff = r.uniform(-2.0, 2.0);
            target.at(i) = pred[i] - diff;
        }
        std::vector<TensorD> in{pred, target};
        return max_grad_discrepancy(
            in, [&](auto& v) { return smooth_l1(v[0], v[1], beta); });
    });
    run("sum_all", [&](Rng& r) {
        auto [m, n] = dims(r);
        std::vector<TensorD> in{random_tensor({m, n}, r)};
        return max_grad_discrepancy(in, [&](auto& v) { return sum_all(v[0]); });
    });
    run("mean_all", [&](Rng& r) {
        auto [m, n] = dims(r);
        std::vector<TensorD> in{random_tensor({m, n}, r)};
        return max_grad_discrepancy(in, [&](auto& v) { return mean_all(v[0]); });
    });
    run("mean_rows", [&](Rng& r) {
        auto [m, n] = dims(r);
        std::vector<TensorD> in{random_tensor({m, n}, r)};
        TensorD proj = projector({1, n}, r);
        return max_grad_discrepancy(
            in, [&](auto& v) { return to_scalar(mean_rows(v[0]), proj); });
    });
    run("gather_rows", [&](Rng& r) {
        auto [m, n] = dims(r);
        std::vector<std::size_t> idx;
        for (int i = 0; i < 4; ++i) idx.push_back(r.uniform_index(m));  // duplicates allowed
        std::vector<TensorD> in{random_tensor({m, n}, r)};
        TensorD proj = projector({idx.size(), n}, r);
        return max_grad_discrepancy(
            in, [&](auto& v) { return to_scalar(gather_rows(v[0], idx), proj); });
    });
    run("col_range", [&](Rng& r) {
        const std::size_t m = 2 + r.uniform_index(3), n = 4;
        std::vector<TensorD> in{random_tensor({m, n}, r)};
        TensorD proj = projector({m, 2}, r);
        return max_grad_discrepancy(
            in, [&](auto& v) { return to_scalar(col_range(v[0], 1, 3), proj); });
    });
    run("concat_rows", [&](Rng& r) {
        auto [m, n] = dims(r);
        const std::size_t m2 = 1 + r.uniform_index(3);
        std::vector<TensorD> in{random_tensor({m, n}, r), random_tensor({m2, n}, r)};
        TensorD proj = projector({m + m2, n}, r);
        return max_grad_discrepancy(
            in, [&](auto& v) { return to_scalar(concat_rows(v[0], v[1]), proj); });
    });
    run("concat_cols", [&](Rng& r) {
        auto [m, n] = dims(r);
        const std::size_t n2 = 1 + r.uniform_index(3);
        std::vector<TensorD> in{random_tensor({m, n}, r), random_tensor({m, n2}, r)};
        TensorD proj = projector({m, n + n2}, r);
        return max_grad_discrepancy(
            in, [&](auto& v) { return to_scalar(concat_cols(v[0], v[1]), proj); });
    });
    run("replace_rows", [&](Rng& r) {
        const std::size_t m = 4, n = 3;
        std::vector<std::size_t> rows{0, 2};
        std::vector<TensorD> in{random_tensor({m, n}, r), random_tensor({1, n}, r)};
        TensorD proj = projector({m, n}, r);
        return max_grad_discrepancy(in, [&](auto& v) {
            return to_scalar(replace_rows(v[0], rows, v[1]), proj);
        });
    });
    run("mix_rows", [&](Rng& r) {
        const std::size_t m = 5, n = 3;
        std::vector<RowMix> mixes;
        for (int t = 0; t < 3; ++t) {
            RowMix mix;
            mix.terms = {{r.uniform_index(m), r.uniform(0.0, 1.0)},
                         {r.uniform_index(m), r.uniform(0.0, 1.0)}};
            mixes.push_back(mix);
        }
        std::vector<TensorD> in{random_tensor({m, n}, r)};
        TensorD proj = projector({mixes.size(), n}, r);
        return max_grad_discrepancy(
            in, [&](auto& v) { return to_scalar(mix_rows(v[0], mixes), proj); });
    });

    // Composite paths: a tiny encoder block end to end, the DINO pair loss
    // with respect to student logits, and the masked-prediction loss.
    run("encoder_end_to_end", [&](Rng& r) {
        EncoderConfig cfg;
        cfg.image_size = 8;
        cfg.patch_size = 4;
        cfg.dim = 8;
        cfg.depth = 1;
        cfg.heads = 2;
        cfg.mlp_ratio = 2.0;
        EncoderParams<double> params = EncoderParams<double>::init(cfg, r);
        // Perturb the zero-initialized output projections so their
        // gradients are informative too.
        for (auto& b : params.blocks) {
            for (std::size_t i = 0; i < b.wo.size(); ++i) b.wo.at(i) = r.uniform(-0.1, 0.1);
            for (std::size_t i = 0; i < b.w2.size(); ++i) b.w2.at(i) = r.uniform(-0.1, 0.1);
        }
        ParamSet<double> ps = params.parameters();
        std::vector<TensorD> in = ps.tensors;
        in.push_back(random_tensor({4, 16}, r));  // patches
        TensorD proj = projector({5, 8}, r);
        MaskSpec mask;
        mask.indices = {1, 2};
        return max_grad_discrepancy(in, [&](auto& v) {
            auto res = encode_patches(params, v.back(), &mask);
            return to_scalar(res.normed, proj);
        });
    });
    run("dino_loss_student", [&](Rng& r) {
        const std::size_t k = 5;
        std::vector<TensorD> teacher{random_tensor({1, k}, r), random_tensor({1, k}, r)};
        std::vector<double> center(k);
        for (auto& c : center) c = r.uniform(-0.5, 0.5);
        std::vector<TensorD> in{random_tensor({1, k}, r), random_tensor({1, k}, r),
                                random_tensor({1, k}, r)};
        return max_grad_discrepancy(in, [&](auto& v) {
            std::vector<TensorD> student(v.begin(), v.end());
            return dino_loss(student, teacher, 0.1, 0.04, center);
        });
    });
    run("data2vec_loss_student", [&](Rng& r) {
        const std::size_t n = 6, d = 4;
        TensorD targets = random_tensor({n, d}, r);
        MaskSpec mask;
        mask.indices = {0, 2, 5};
        std::vector<TensorD> in{random_tensor({n, d}, r)};
        return max_grad_discrepancy(in, [&](auto& v) {
            return data2vec_loss(v[0], targets, mask, 1.0);
        });
    });

    return results;
}

}  // namespace testutil
