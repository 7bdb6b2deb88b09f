#include <catch2/catch_amalgamated.hpp>

#include "mowe/gradsuite.hpp"

using namespace mowe;

// Every differentiable op (and composed blocks) against central finite
// differences, randomized shapes, 20 seeds.
TEST_CASE("gradient suite passes at 1e-4 over 20 seeds") {
    auto cases = run_gradient_suite(20);
    CHECK(cases.size() >= 20);
    for (const auto& c : cases) {
        INFO(c.name << " max_err=" << c.max_err);
        CHECK(c.max_err < c.tol);
    }
}

TEST_CASE("full MoE block gradient stays below 1e-4") {
    // small-dims MoE forward is itself the oracle target named by the checker
    ModelConfig mc;
    mc.height = mc.width = 8;
    mc.patch_size = 4;
    mc.embed_dim = 6;
    mc.heads = 2;
    mc.num_experts = 3;
    mc.top_k = 2;
    mc.expert_groups = {{2, 1}, {1, 3}};
    mc.cls_dim = 4;
    mc.router = RouterKind::Weather;

    for (int s = 0; s < 5; ++s) {
        MoeFfn moe;
        moe.init(mc, derive_seed(41, "moe-grad", s));
        Rng rng(derive_seed(42, "moe-data", s));
        Tensor tokens = Tensor::randn({4, 6}, rng);
        Tensor wtok = Tensor::randn({4, 4}, rng);
        Tensor coeff = Tensor::randn({4, 6}, rng);
        RoutingRecord rec;
        auto f = [&] { return sum(mul(moe.forward(tokens, &wtok, 2, 2, &rec), coeff)); };
        GradCheckOptions opt;
        opt.branch_fingerprint = [&] {
            uint64_t h = 0;
            for (int id : rec.selected) h = hash_combine(h, static_cast<uint64_t>(id));
            return h;
        };
        CHECK(finite_diff_check_inplace(f, tokens, opt) < 1e-4);
        CHECK(finite_diff_check_inplace(f, moe.router.gate, opt) < 1e-4);
    }
}
