// Finite-difference verification suite covering every differentiable op and
// a full tiny model. Used by both the grad-check CLI command and the
// acceptance tests.
#pragma once

#include <deque>
#include <set>

#include "mowe/gradcheck.hpp"
#include "mowe/model.hpp"
#include "mowe/train.hpp"

namespace mowe {

struct GradSuiteCase {
    std::string name;
    double max_err = 0.0;
    double tol = 1e-4;
    bool pass = true;
};

namespace detail {

inline Tensor rand_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.vec()) v = rng.uniform(lo, hi);
    return t;
}

// weighted sum against fixed coefficients, exercising every output coordinate
inline Tensor weighted_sum(const Tensor& out, const Tensor& coeff) { return sum(mul(out, coeff)); }

inline std::vector<int64_t> sample_coords(int64_t size, int count, Rng& rng) {
    std::vector<int64_t> coords;
    if (size <= count) {
        for (int64_t i = 0; i < size; ++i) coords.push_back(i);
        return coords;
    }
    std::set<int64_t> seen;
    while (static_cast<int>(seen.size()) < count) seen.insert(static_cast<int64_t>(rng.bits() % static_cast<uint64_t>(size)));
    coords.assign(seen.begin(), seen.end());
    return coords;
}

}  // namespace detail

// Fingerprinted MoE forward for checks whose Top-K selection must stay fixed
// under perturbation.
inline double check_op(GradSuiteCase& c, double err) {
    c.max_err = std::max(c.max_err, err);
    return err;
}

inline std::vector<GradSuiteCase> run_gradient_suite(int seeds = 20, bool include_model = true) {
    std::deque<GradSuiteCase> cases;  // stable references while cases accumulate
    auto add_case = [&](const std::string& name, double tol = 1e-4) -> GradSuiteCase& {
        cases.push_back({name, 0.0, tol, true});
        return cases.back();
    };

    using detail::rand_tensor;
    using detail::weighted_sum;

    auto& c_matmul = add_case("matmul");
    auto& c_softmax = add_case("softmax");
    auto& c_topk = add_case("top_k_softmax");
    auto& c_conv = add_case("conv2d");
    auto& c_convg = add_case("conv2d_grouped");
    auto& c_ln = add_case("layer_norm");
    auto& c_gelu = add_case("gelu");
    auto& c_relu = add_case("relu");
    auto& c_elem = add_case("add_mul_scale");
    auto& c_rows = add_case("rowwise_ops");
    auto& c_gap = add_case("global_avg_pool");
    auto& c_layout = add_case("reshape_transpose_concat");
    auto& c_gather = add_case("gather_scatter_slice");
    auto& c_patch = add_case("patch_fold");
    auto& c_ce = add_case("cross_entropy");
    auto& c_cem = add_case("cross_entropy_map");
    auto& c_l1 = add_case("l1_loss");
    auto& c_mse = add_case("mse_loss");
    auto& c_attn = add_case("attention_block");
    auto& c_expert = add_case("expert_block");
    auto& c_moe = add_case("moe_ffn_block");

    for (int s = 0; s < seeds; ++s) {
        Rng rng(derive_seed(9000, "gradsuite", s));

        {  // matmul, both operands
            Tensor a = rand_tensor({3, 4}, rng), b = rand_tensor({4, 5}, rng);
            Tensor w = rand_tensor({3, 5}, rng);
            check_op(c_matmul, finite_diff_check([&](const Tensor& x) { return weighted_sum(matmul(x, b), w); }, a));
            check_op(c_matmul, finite_diff_check([&](const Tensor& x) { return weighted_sum(matmul(a, x), w); }, b));
        }
        {  // softmax over both axes
            Tensor x = rand_tensor({3, 5}, rng, -2.0, 2.0);
            Tensor w = rand_tensor({3, 5}, rng);
            check_op(c_softmax, finite_diff_check([&](const Tensor& t) { return weighted_sum(softmax(t, -1), w); }, x));
            check_op(c_softmax, finite_diff_check([&](const Tensor& t) { return weighted_sum(softmax(t, 0), w); }, x));
        }
        {  // softmax over top-k mask, straight-through selection
            Tensor x = rand_tensor({4, 6}, rng, -2.0, 2.0);
            Tensor w = rand_tensor({4, 6}, rng);
            GradCheckOptions opt;
            opt.branch_fingerprint = [&] {
                uint64_t h = 0;
                for (int r = 0; r < 4; ++r)
                    for (int i : top_k_row_indices(x.data() + r * 6, 6, 2)) h = hash_combine(h, static_cast<uint64_t>(i));
                return h;
            };
            check_op(c_topk, finite_diff_check(
                                 [&](const Tensor& t) { return weighted_sum(softmax(top_k_mask(t, 2), -1), w); }, x,
                                 opt));
        }
        {  // conv2d wrt input, weights and bias
            Tensor x = rand_tensor({2, 5, 5}, rng);
            Tensor w = rand_tensor({3, 2, 3, 3}, rng);
            Tensor b = rand_tensor({3}, rng);
            Tensor coeff = rand_tensor({3, 5, 5}, rng);
            auto f = [&](const Tensor&) { return weighted_sum(conv2d(x, w, b, 1, 1, 1), coeff); };
            check_op(c_conv, finite_diff_check_inplace([&] { return f(x); }, x));
            check_op(c_conv, finite_diff_check_inplace([&] { return f(w); }, w));
            check_op(c_conv, finite_diff_check_inplace([&] { return f(b); }, b));
        }
        {  // depthwise + strided conv
            Tensor x = rand_tensor({4, 6, 6}, rng);
            Tensor w = rand_tensor({4, 1, 3, 3}, rng);
            Tensor b = rand_tensor({4}, rng);
            Tensor coeff = rand_tensor({4, 3, 3}, rng);
            auto f = [&] { return weighted_sum(conv2d(x, w, b, 2, 1, 4), coeff); };
            check_op(c_convg, finite_diff_check_inplace(f, x));
            check_op(c_convg, finite_diff_check_inplace(f, w));
        }
        {  // layer_norm wrt all three inputs
            Tensor x = rand_tensor({3, 8}, rng);
            Tensor g = rand_tensor({8}, rng, 0.5, 1.5);
            Tensor b = rand_tensor({8}, rng);
            Tensor coeff = rand_tensor({3, 8}, rng);
            auto f = [&] { return weighted_sum(layer_norm(x, g, b), coeff); };
            check_op(c_ln, finite_diff_check_inplace(f, x));
            check_op(c_ln, finite_diff_check_inplace(f, g));
            check_op(c_ln, finite_diff_check_inplace(f, b));
        }
        {
            Tensor x = rand_tensor({4, 5}, rng, -2.0, 2.0);
            Tensor coeff = rand_tensor({4, 5}, rng);
            check_op(c_gelu, finite_diff_check([&](const Tensor& t) { return weighted_sum(gelu(t), coeff); }, x));
        }
        {  // relu away from the kink
            Tensor x = rand_tensor({4, 5}, rng, -2.0, 2.0);
            for (double& v : x.vec())
                if (std::abs(v) < 0.05) v = v < 0 ? -0.05 : 0.05;
            Tensor coeff = rand_tensor({4, 5}, rng);
            check_op(c_relu, finite_diff_check([&](const Tensor& t) { return weighted_sum(relu(t), coeff); }, x));
        }
        {
            Tensor a = rand_tensor({3, 4}, rng), b = rand_tensor({3, 4}, rng);
            Tensor coeff = rand_tensor({3, 4}, rng);
            check_op(c_elem, finite_diff_check(
                                 [&](const Tensor& t) {
                                     return weighted_sum(add(scale(mul(t, b), 1.7), add_scalar(sub(t, b), 0.3)), coeff);
                                 },
                                 a));
        }
        {
            Tensor a = rand_tensor({4, 3}, rng);
            Tensor bias = rand_tensor({3}, rng);
            Tensor s = rand_tensor({4}, rng, 0.2, 1.5);
            Tensor coeff = rand_tensor({4, 3}, rng);
            auto f = [&] { return weighted_sum(scale_rows(add_rowwise(a, bias), s), coeff); };
            check_op(c_rows, finite_diff_check_inplace(f, a));
            check_op(c_rows, finite_diff_check_inplace(f, bias));
            check_op(c_rows, finite_diff_check_inplace(f, s));
        }
        {
            Tensor a = rand_tensor({5, 3}, rng);
            Tensor coeff = rand_tensor({3}, rng);
            check_op(c_gap, finite_diff_check(
                                [&](const Tensor& t) { return weighted_sum(global_avg_pool(t), coeff); }, a));
        }
        {
            Tensor a = rand_tensor({2, 6}, rng), b = rand_tensor({2, 3}, rng);
            Tensor coeff = rand_tensor({9, 2}, rng);
            auto f = [&] {
                Tensor cat = concat({a, b}, 1);                      // [2 x 9]
                return weighted_sum(transpose2d(reshape(cat, {2, 9})), coeff);
            };
            check_op(c_layout, finite_diff_check_inplace(f, a));
            check_op(c_layout, finite_diff_check_inplace(f, b));
        }
        {
            Tensor a = rand_tensor({5, 4}, rng);
            Tensor rows = rand_tensor({3, 4}, rng);
            Tensor coeff = rand_tensor({5, 4}, rng);
            std::vector<int> idx = {4, 0, 2};
            auto f = [&] {
                Tensor picked = gather_rows(a, idx);
                Tensor sl = slice_cols(scatter_add_rows(a, idx, add(picked, rows)), 1, 4);
                Tensor ge = gather_elems(a, {0, 7, 13});
                return add(weighted_sum(sl, slice_cols(coeff, 1, 4)), sum(ge));
            };
            check_op(c_gather, finite_diff_check_inplace(f, a));
            check_op(c_gather, finite_diff_check_inplace(f, rows));
        }
        {
            Tensor x = rand_tensor({2, 4, 4}, rng);
            Tensor coeff = rand_tensor({2, 4, 4}, rng);
            check_op(c_patch, finite_diff_check(
                                  [&](const Tensor& t) {
                                      return weighted_sum(fold_patches(extract_patches(t, 2), 2, 4, 4, 2), coeff);
                                  },
                                  x));
        }
        {
            Tensor logits = rand_tensor({5}, rng, -2.0, 2.0);
            check_op(c_ce, finite_diff_check([&](const Tensor& t) { return cross_entropy(t, 2); }, logits));
        }
        {
            Tensor logits = rand_tensor({3, 3, 4}, rng, -2.0, 2.0);
            std::vector<int> labels(12);
            for (auto& l : labels) l = rng.uniform_int(0, 2);
            check_op(c_cem, finite_diff_check([&](const Tensor& t) { return cross_entropy_map(t, labels); }, logits));
        }
        {  // l1 at points away from the kink
            Tensor a = rand_tensor({3, 4}, rng);
            Tensor b = a.detach();
            for (double& v : b.vec()) v += (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.2, 0.6);
            check_op(c_l1, finite_diff_check([&](const Tensor& t) { return l1_loss(t, b); }, a));
            check_op(c_mse, finite_diff_check([&](const Tensor& t) { return mse_loss(t, b); }, a));
        }
        {  // attention block wrt tokens and projections
            Attention attn;
            attn.init(8, 2, derive_seed(31, "attn", s));
            Tensor tokens = rand_tensor({5, 8}, rng);
            Tensor coeff = rand_tensor({5, 8}, rng);
            auto f = [&] { return weighted_sum(attn.forward(tokens), coeff); };
            check_op(c_attn, finite_diff_check_inplace(f, tokens));
            check_op(c_attn, finite_diff_check_inplace(f, attn.wq.w));
            check_op(c_attn, finite_diff_check_inplace(f, attn.wv.w));
            check_op(c_attn, finite_diff_check_inplace(f, attn.ln.gamma));
        }
        {  // expert with conv branch
            Expert ex;
            ex.init(6, 12, 3, derive_seed(32, "expert", s));
            Tensor tokens = rand_tensor({4, 6}, rng);
            Tensor coeff = rand_tensor({4, 6}, rng);
            auto f = [&] { return weighted_sum(ex.forward(tokens, 2, 2), coeff); };
            check_op(c_expert, finite_diff_check_inplace(f, tokens));
            check_op(c_expert, finite_diff_check_inplace(f, ex.conv.w));
            check_op(c_expert, finite_diff_check_inplace(f, ex.fc1.w));
        }
        {  // sparse MoE FFN: gradients w.r.t. tokens, router and experts
            ModelConfig mc;
            mc.height = mc.width = 8;
            mc.patch_size = 4;  // 2x2 token grid
            mc.embed_dim = 6;
            mc.heads = 2;
            mc.num_experts = 3;
            mc.top_k = 2;
            mc.expert_groups = {{2, 1}, {1, 3}};
            mc.cls_dim = 4;
            mc.router = RouterKind::Weather;
            MoeFfn moe;
            moe.init(mc, derive_seed(33, "moe", s));
            Tensor tokens = rand_tensor({4, 6}, rng);
            Tensor wtok = rand_tensor({4, 4}, rng);
            Tensor coeff = rand_tensor({4, 6}, rng);
            std::vector<RoutingRecord> rec(1);
            auto f = [&] {
                Tensor out = moe.forward(tokens, &wtok, 2, 2, &rec[0]);
                return weighted_sum(out, coeff);
            };
            GradCheckOptions opt;
            opt.branch_fingerprint = [&] { return routing_fingerprint(rec); };
            check_op(c_moe, finite_diff_check_inplace(f, tokens, opt));
            check_op(c_moe, finite_diff_check_inplace(f, moe.router.gate, opt));
            check_op(c_moe, finite_diff_check_inplace(f, moe.router.adapt1.w, opt));
            check_op(c_moe, finite_diff_check_inplace(f, moe.experts[2].conv.w, opt));
            check_op(c_moe, finite_diff_check_inplace(f, moe.experts[0].fc1.w, opt));
        }
    }

    if (include_model) {
        auto& c_model = add_case("full_tiny_model");
        for (int s = 0; s < seeds; ++s) {
            Rng rng(derive_seed(9100, "model-grad", s));
            ModelConfig mc;
            mc.height = mc.width = 16;
            mc.patch_size = 4;
            mc.embed_dim = 8;
            mc.depth = 1;
            mc.heads = 2;
            mc.num_experts = 2;
            mc.top_k = 1;
            mc.expert_groups = {{1, 1}, {1, 3}};
            mc.head_channels = 4;
            mc.cls_depth = 1;
            mc.cls_dim = 8;
            MoweModel model(mc, derive_seed(34, "model", s));

            Tensor img = detail::rand_tensor({3, 16, 16}, rng, 0.0, 1.0);
            Tensor target = detail::rand_tensor({3, 16, 16}, rng, 0.0, 1.0);
            {  // keep the L1 away from its kink so central differences stay valid
                RestoreResult probe = model.restore(img);
                for (int64_t i = 0; i < target.size(); ++i) {
                    double d = probe.pred[i] - target[i];
                    if (std::abs(d) < 1e-3) target[i] -= (d >= 0 ? 2e-3 : -2e-3);
                }
            }

            std::vector<RoutingRecord>* last_records = nullptr;
            RestoreResult shared_res;
            auto f = [&] {
                shared_res = model.restore(img);
                last_records = &shared_res.records;
                return add(l1_loss(shared_res.pred, target), scale(cross_entropy(shared_res.weather_logits, 1), 0.1));
            };
            GradCheckOptions opt;
            opt.branch_fingerprint = [&] { return routing_fingerprint(*last_records); };

            Rng coord_rng(derive_seed(9200, "coords", s));
            for (auto& p : model.params()) {
                GradCheckOptions popt = opt;
                popt.coords = detail::sample_coords(p.tensor.size(), 4, coord_rng);
                check_op(c_model, finite_diff_check_inplace(f, p.tensor, popt));
            }
        }
    }

    for (auto& c : cases) c.pass = c.max_err < c.tol;
    return {cases.begin(), cases.end()};
}

}  // namespace mowe
