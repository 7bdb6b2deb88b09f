#include <catch2/catch_amalgamated.hpp>

#include "mowe/gradcheck.hpp"
#include "mowe/ops.hpp"

using namespace mowe;

TEST_CASE("tensor basics and invariants") {
    Tensor t = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.size() == 6);
    CHECK(t.dim(0) == 2);
    CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1.0}), ShapeError);
    CHECK_THROWS_AS(t.item(), UsageError);

    Tensor d = t.detach();
    d[0] = 99;
    CHECK(t[0] == 1.0);  // detach copies
}

TEST_CASE("matmul identity and hand cases") {
    Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor out = matmul(eye, a);
    for (int i = 0; i < 4; ++i) CHECK(out[i] == a[i]);

    Tensor row = Tensor::from_data({1, 2}, {1, 2});
    Tensor col = Tensor::from_data({2, 1}, {3, 4});
    CHECK(matmul(row, col).item() == 11.0);

    CHECK_THROWS_AS(matmul(row, row), ShapeError);
}

TEST_CASE("matmul gradient matches finite differences") {
    Rng rng(404);
    Tensor a = Tensor::randn({3, 3}, rng);
    Tensor b = Tensor::randn({3, 3}, rng);
    double err = finite_diff_check([&](const Tensor& x) { return sum(matmul(x, b)); }, a);
    CHECK(err < 1e-6);
    err = finite_diff_check([&](const Tensor& x) { return sum(matmul(a, x)); }, b);
    CHECK(err < 1e-6);
}

TEST_CASE("softmax values") {
    Tensor x = Tensor::from_data({2}, {0, 0});
    Tensor s = softmax(x);
    CHECK(s[0] == Catch::Approx(0.5).margin(1e-12));
    CHECK(s[1] == Catch::Approx(0.5).margin(1e-12));

    // [3, 1, 2] with entry 1 masked to -inf: two-term softmax = 1/(1+e^-1)
    double ninf = -std::numeric_limits<double>::infinity();
    Tensor masked = Tensor::from_data({3}, {3, ninf, 2});
    Tensor sm = softmax(masked);
    double expected_hi = 1.0 / (1.0 + std::exp(-1.0));
    CHECK(sm[0] == Catch::Approx(expected_hi).margin(1e-12));
    CHECK(sm[1] == 0.0);
    CHECK(sm[2] == Catch::Approx(1.0 - expected_hi).margin(1e-12));
    CHECK(sm[0] == Catch::Approx(0.7311).margin(5e-5));
    CHECK(sm[2] == Catch::Approx(0.2689).margin(5e-5));
}

TEST_CASE("softmax properties: rows sum to one, shift invariance") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor x = Tensor::randn({4, 6}, rng, 3.0);
        Tensor s = softmax(x, -1);
        for (int r = 0; r < 4; ++r) {
            double total = 0;
            for (int j = 0; j < 6; ++j) {
                double v = s[r * 6 + j];
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
                total += v;
            }
            CHECK(total == Catch::Approx(1.0).margin(1e-9));
        }
        double c = rng.uniform(-5.0, 5.0);
        Tensor s2 = softmax(add_scalar(x, c), -1);
        for (int64_t i = 0; i < s.size(); ++i) CHECK(s2[i] == Catch::Approx(s[i]).margin(1e-12));
    }
    CHECK_THROWS_AS(softmax(Tensor(Shape{3, 0})), ShapeError);
}

TEST_CASE("top_k_mask selection and tie-break") {
    Tensor x = Tensor::from_data({3}, {3, 1, 2});
    Tensor full = top_k_mask(x, 3);
    for (int i = 0; i < 3; ++i) CHECK(full[i] == x[i]);  // k = M leaves input unchanged

    Tensor k2 = top_k_mask(x, 2);
    CHECK(k2[0] == 3.0);
    CHECK(std::isinf(k2[1]));
    CHECK(k2[1] < 0);
    CHECK(k2[2] == 2.0);

    // ties break to the lowest index
    Tensor tie = top_k_mask(Tensor::from_data({3}, {5, 5, 1}), 1);
    CHECK(tie[0] == 5.0);
    CHECK(std::isinf(tie[1]));
    CHECK(std::isinf(tie[2]));

    CHECK_THROWS_AS(top_k_mask(x, 0), ParamError);
    CHECK_THROWS_AS(top_k_mask(x, 4), ParamError);
}

TEST_CASE("top_k_mask + softmax leaves exactly k nonzeros per row") {
    Rng rng(99);
    for (int trial = 0; trial < 30; ++trial) {
        int m = rng.uniform_int(2, 9);
        int k = rng.uniform_int(1, m);
        Tensor x = Tensor::randn({5, m}, rng, 2.0);
        Tensor g = softmax(top_k_mask(x, k), -1);
        for (int r = 0; r < 5; ++r) {
            int nonzero = 0;
            double total = 0;
            for (int j = 0; j < m; ++j) {
                if (g[r * m + j] > 0.0) ++nonzero;
                total += g[r * m + j];
            }
            CHECK(nonzero == k);
            CHECK(total == Catch::Approx(1.0).margin(1e-9));
        }
    }
}

TEST_CASE("brute-force top-k oracle agrees") {
    Rng rng(123);
    for (int trial = 0; trial < 50; ++trial) {
        int m = rng.uniform_int(2, 8);
        int k = rng.uniform_int(1, m);
        Tensor x = Tensor::randn({m}, rng, 1.0);
        Tensor masked = top_k_mask(x, k);
        // oracle: exhaustive selection by (value desc, index asc)
        std::vector<int> idx(m);
        for (int i = 0; i < m; ++i) idx[i] = i;
        std::sort(idx.begin(), idx.end(), [&](int a, int b) {
            if (x[a] != x[b]) return x[a] > x[b];
            return a < b;
        });
        std::vector<bool> keep(m, false);
        for (int i = 0; i < k; ++i) keep[idx[i]] = true;
        for (int i = 0; i < m; ++i) {
            if (keep[i]) CHECK(masked[i] == x[i]);
            else CHECK((std::isinf(masked[i]) && masked[i] < 0));
        }
    }
}

TEST_CASE("conv2d basic behavior") {
    // depthwise 1x1 kernel of value 1, zero bias: identity
    Rng rng(5);
    Tensor x = Tensor::randn({3, 4, 4}, rng);
    Tensor w(Shape{3, 1, 1, 1}, 1.0);
    Tensor b(Shape{3});
    Tensor y = conv2d(x, w, b, 1, 0, 3);
    for (int64_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);

    // depthwise 3x3 all-ones, padding 1, constant input c: interior pixels 9c
    double c = 0.37;
    Tensor xc(Shape{2, 5, 5}, c);
    Tensor w3(Shape{2, 1, 3, 3}, 1.0);
    Tensor b2(Shape{2});
    Tensor y3 = conv2d(xc, w3, b2, 1, 1, 2);
    CHECK(y3.dim(1) == 5);
    for (int ch = 0; ch < 2; ++ch)
        for (int i = 1; i < 4; ++i)
            for (int j = 1; j < 4; ++j)
                CHECK(pixel(y3, ch, i, j) == Catch::Approx(9 * c).margin(1e-12));
    // corners see a 2x2 neighborhood
    CHECK(pixel(y3, 0, 0, 0) == Catch::Approx(4 * c).margin(1e-12));

    CHECK_THROWS_AS(conv2d(x, Tensor(Shape{3, 1, 9, 9}, 1.0), b, 1, 0, 3), ShapeError);
    CHECK_THROWS_AS(conv2d(x, w, b, 1, 0, 2), ShapeError);  // groups must divide channels
}

TEST_CASE("conv2d gradient vs finite differences on 1x4x4") {
    Rng rng(6);
    Tensor x = Tensor::randn({1, 4, 4}, rng);
    Tensor w = Tensor::randn({2, 1, 3, 3}, rng);
    Tensor b = Tensor::randn({2}, rng);
    double err = finite_diff_check_inplace([&] { return sum(conv2d(x, w, b, 1, 1, 1)); }, w);
    CHECK(err < 1e-5);
    err = finite_diff_check_inplace([&] { return sum(conv2d(x, w, b, 1, 1, 1)); }, x);
    CHECK(err < 1e-5);
}

TEST_CASE("conv2d groups=1 equals depthwise+pointwise composition on 1-channel input") {
    Rng rng(17);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor x = Tensor::randn({1, 6, 6}, rng);
        Tensor g = Tensor::randn({1, 1, 3, 3}, rng);   // shared spatial kernel
        Tensor p = Tensor::randn({4, 1, 1, 1}, rng);   // pointwise mixing
        Tensor zb1(Shape{1}), zb4(Shape{4});
        // full conv with w[o] = p_o * g
        Tensor w(Shape{4, 1, 3, 3});
        for (int o = 0; o < 4; ++o)
            for (int i = 0; i < 9; ++i) w[o * 9 + i] = p[o] * g[i];
        Tensor direct = conv2d(x, w, zb4, 1, 1, 1);
        Tensor composed = conv2d(conv2d(x, g, zb1, 1, 1, 1), p, zb4, 1, 0, 1);
        for (int64_t i = 0; i < direct.size(); ++i)
            CHECK(direct[i] == Catch::Approx(composed[i]).margin(1e-12));
    }
}

TEST_CASE("layer_norm definition") {
    // constant token: variance 0 absorbed by eps, output = beta
    Tensor x(Shape{2, 8}, 3.14);
    Tensor gamma(Shape{8}, 1.0);
    Tensor beta(Shape{8}, 0.0);
    Tensor y = layer_norm(x, gamma, beta);
    for (int64_t i = 0; i < y.size(); ++i) CHECK(y[i] == Catch::Approx(0.0).margin(1e-12));

    // output mean ~ beta, std ~ |gamma|
    Rng rng(8);
    Tensor xr = Tensor::randn({4, 32}, rng, 2.5);
    Tensor g2(Shape{32}, 1.7);
    Tensor b2(Shape{32}, 0.4);
    Tensor yr = layer_norm(xr, g2, b2);
    for (int r = 0; r < 4; ++r) {
        double mu = 0, var = 0;
        for (int j = 0; j < 32; ++j) mu += yr[r * 32 + j];
        mu /= 32;
        for (int j = 0; j < 32; ++j) var += (yr[r * 32 + j] - mu) * (yr[r * 32 + j] - mu);
        var /= 32;
        CHECK(mu == Catch::Approx(0.4).margin(1e-6));
        CHECK(std::sqrt(var) == Catch::Approx(1.7).epsilon(1e-3));
    }
    CHECK_THROWS_AS(layer_norm(xr, g2, b2, 0.0), ParamError);
}

TEST_CASE("layer_norm gradient on 2x8") {
    Rng rng(9);
    Tensor x = Tensor::randn({2, 8}, rng);
    Tensor g = Tensor::randn({8}, rng, 0.5);
    Tensor b = Tensor::randn({8}, rng);
    for (double& v : g.vec()) v += 1.0;
    Tensor coeff = Tensor::randn({2, 8}, rng);
    auto f = [&] { return sum(mul(layer_norm(x, g, b), coeff)); };
    CHECK(finite_diff_check_inplace(f, x) < 1e-5);
    CHECK(finite_diff_check_inplace(f, g) < 1e-5);
    CHECK(finite_diff_check_inplace(f, b) < 1e-5);
}

TEST_CASE("supporting ops") {
    // GAP of constant tokens gives c per channel
    Tensor tokens(Shape{6, 3}, 0.0);
    for (int r = 0; r < 6; ++r) {
        tokens[r * 3 + 0] = 1.5;
        tokens[r * 3 + 1] = -2.0;
        tokens[r * 3 + 2] = 0.25;
    }
    Tensor pooled = global_avg_pool(tokens);
    CHECK(pooled[0] == Catch::Approx(1.5).margin(1e-12));
    CHECK(pooled[1] == Catch::Approx(-2.0).margin(1e-12));
    CHECK(pooled[2] == Catch::Approx(0.25).margin(1e-12));

    // confident correct logits give ~0 cross-entropy
    Tensor logits = Tensor::from_data({4}, {20.0, -5.0, -5.0, -5.0});
    CHECK(cross_entropy(logits, 0).item() == Catch::Approx(0.0).margin(1e-9));
    CHECK_THROWS_AS(cross_entropy(logits, 4), ParamError);

    Rng rng(10);
    Tensor a = Tensor::randn({3, 3}, rng);
    CHECK(l1_loss(a, a).item() == 0.0);
    CHECK(mse_loss(a, a).item() == 0.0);

    // concat + slice round trip
    Tensor left = Tensor::randn({2, 3}, rng);
    Tensor right = Tensor::randn({2, 2}, rng);
    Tensor cat = concat({left, right}, 1);
    CHECK(cat.dim(1) == 5);
    Tensor back = slice_cols(cat, 0, 3);
    for (int64_t i = 0; i < left.size(); ++i) CHECK(back[i] == left[i]);

    CHECK_THROWS_AS(add(left, right), ShapeError);
    CHECK_THROWS_AS(mul(left, right), ShapeError);
}

TEST_CASE("backward basics") {
    // d/dx sum(x^2) at [1,2] is [2,4]
    Tensor x = Tensor::from_data({2}, {1, 2}).set_requires_grad(true);
    Tape tape;
    {
        Tape::Scope scope(tape);
        Tensor loss = sum(mul(x, x));
        tape.backward(loss);
    }
    CHECK(x.grad()[0] == Catch::Approx(2.0).margin(1e-12));
    CHECK(x.grad()[1] == Catch::Approx(4.0).margin(1e-12));

    // repeated backward accumulates
    {
        Tape::Scope scope(tape);
        tape.backward(sum(mul(x, x)));
    }
    CHECK(x.grad()[0] > 2.0);

    // zero-dependency parameter keeps a zero gradient
    Tensor unused = Tensor::from_data({3}, {1, 2, 3}).set_requires_grad(true);
    Tape tape2;
    {
        Tape::Scope scope(tape2);
        Tensor y = Tensor::from_data({2}, {1, 1}).set_requires_grad(true);
        tape2.backward(sum(y));
    }
    for (double g : unused.grad()) CHECK(g == 0.0);

    // non-scalar loss is a usage error
    Tape tape3;
    Tape::Scope scope(tape3);
    Tensor vec = Tensor::from_data({2}, {1, 2}).set_requires_grad(true);
    CHECK_THROWS_AS(tape3.backward(vec), UsageError);
}

TEST_CASE("finite_diff_check calibration cases") {
    Rng rng(11);
    // quadratic form: error < 1e-8
    Tensor q = Tensor::randn({6}, rng);
    Tensor qa = Tensor::randn({6}, rng);
    double err = finite_diff_check([&](const Tensor& t) { return sum(mul(mul(t, t), qa)); }, q);
    CHECK(err < 1e-8);

    // linear: error < 1e-10
    Tensor l = Tensor::randn({6}, rng);
    err = finite_diff_check([&](const Tensor& t) { return sum(mul(t, qa)); }, l);
    CHECK(err < 1e-10);

    CHECK_THROWS_AS(finite_diff_check([&](const Tensor& t) { return sum(t); }, l, {.h = 1e-9}), ParamError);
}

TEST_CASE("non-finite forward values raise NumericError") {
    Tensor big(Shape{2}, 1e308);
    CHECK_THROWS_AS(mul(big, big), NumericError);
    double ninf = -std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(top_k_mask(Tensor::from_data({2}, {ninf, 1.0}), 1), NumericError);
}

TEST_CASE("straight-through gradient of softmax over top_k_mask") {
    Rng rng(12);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor x = Tensor::randn({6}, rng, 2.0);
        Tensor w = Tensor::randn({6}, rng);
        // restrict finite differences to the selected coordinates
        std::vector<int> sel = top_k_row_indices(x.data(), 6, 3);
        GradCheckOptions opt;
        for (int i : sel) opt.coords.push_back(i);
        opt.branch_fingerprint = [&] {
            uint64_t h = 0;
            for (int i : top_k_row_indices(x.data(), 6, 3)) h = hash_combine(h, static_cast<uint64_t>(i));
            return h;
        };
        double err = finite_diff_check(
            [&](const Tensor& t) { return sum(mul(softmax(top_k_mask(t, 3), -1), w)); }, x, opt);
        CHECK(err < 1e-4);

        // masked logits receive exactly zero gradient
        Tensor y = x.clone().set_requires_grad(true);
        Tape tape;
        {
            Tape::Scope scope(tape);
            tape.backward(sum(mul(softmax(top_k_mask(y, 3), -1), w)));
        }
        std::vector<bool> kept(6, false);
        for (int i : sel) kept[static_cast<size_t>(i)] = true;
        for (int i = 0; i < 6; ++i)
            if (!kept[static_cast<size_t>(i)]) CHECK(y.grad()[static_cast<size_t>(i)] == 0.0);
    }
}
