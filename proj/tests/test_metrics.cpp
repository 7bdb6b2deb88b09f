#include <catch2/catch_amalgamated.hpp>

#include "mowe/recognition.hpp"
#include "mowe/sweep.hpp"

using namespace mowe;

namespace {

// Literal SSIM reference: direct weighted statistics per window position,
// straight from the definition. Independent of the separable-filter path in
// the library.
double ssim_reference(const Tensor& a, const Tensor& b) {
    Tensor ga = to_gray(a), gb = to_gray(b);
    int h = ga.dim(0), w = ga.dim(1);
    const int win = 11;
    const double sigma = 1.5;
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;

    double weights[11][11];
    double total_w = 0;
    for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
            double dy = i - 5.0, dx = j - 5.0;
            weights[i][j] = std::exp(-(dy * dy + dx * dx) / (2 * sigma * sigma));
            total_w += weights[i][j];
        }
    for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) weights[i][j] /= total_w;

    double total = 0;
    int count = 0;
    for (int y = 0; y + win <= h; ++y)
        for (int x = 0; x + win <= w; ++x) {
            double mx = 0, my = 0;
            for (int i = 0; i < win; ++i)
                for (int j = 0; j < win; ++j) {
                    mx += weights[i][j] * ga[(y + i) * static_cast<int64_t>(w) + x + j];
                    my += weights[i][j] * gb[(y + i) * static_cast<int64_t>(w) + x + j];
                }
            double vx = 0, vy = 0, cov = 0;
            for (int i = 0; i < win; ++i)
                for (int j = 0; j < win; ++j) {
                    double da = ga[(y + i) * static_cast<int64_t>(w) + x + j] - mx;
                    double db = gb[(y + i) * static_cast<int64_t>(w) + x + j] - my;
                    vx += weights[i][j] * da * da;
                    vy += weights[i][j] * db * db;
                    cov += weights[i][j] * da * db;
                }
            total += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            ++count;
        }
    return total / count;
}

}  // namespace

TEST_CASE("psnr definition and sentinel") {
    Tensor a = gen_clean_scene(1, 32, 32);
    CHECK(std::isinf(psnr(a, a)));  // +inf sentinel on identical inputs

    // uniform difference of 0.1 -> 20 dB
    Tensor x(Shape{3, 16, 16}, 0.4);
    Tensor y(Shape{3, 16, 16}, 0.5);
    CHECK(psnr(x, y) == Catch::Approx(20.0).margin(1e-9));

    Tensor b = gen_clean_scene(2, 32, 32);
    CHECK(psnr(a, b) == Catch::Approx(psnr(b, a)).margin(1e-12));

    CHECK_THROWS_AS(psnr(a, Tensor(Shape{3, 16, 16})), ShapeError);
}

TEST_CASE("psnr strictly decreases under increasing noise amplitude") {
    Tensor base = gen_clean_scene(3, 32, 32);
    Rng rng(17);
    Tensor noise = Tensor::randn({3, 32, 32}, rng);
    double prev = 1e18;
    for (double amp : {0.01, 0.02, 0.05, 0.1, 0.2}) {
        Tensor noisy = base.detach();
        for (int64_t i = 0; i < noisy.size(); ++i) noisy[i] = clamp(noisy[i] + amp * noise[i], 0.0, 1.0);
        double v = psnr(base, noisy);
        CHECK(v < prev);
        prev = v;
    }
}

TEST_CASE("ssim identity, symmetry and inversion") {
    Tensor x = gen_clean_scene(4, 32, 32);
    CHECK(ssim(x, x) == Catch::Approx(1.0).margin(1e-9));

    // binary checkerboard against its inverse
    Tensor cb(Shape{3, 16, 16});
    for (int y = 0; y < 16; ++y)
        for (int xpos = 0; xpos < 16; ++xpos)
            for (int c = 0; c < 3; ++c) pixel_ref(cb, c, y, xpos) = ((y + xpos) % 2 == 0) ? 1.0 : 0.0;
    Tensor inv = cb.detach();
    for (double& v : inv.vec()) v = 1.0 - v;
    CHECK(ssim(cb, inv) <= 0.0);

    Tensor y = gen_clean_scene(5, 32, 32);
    CHECK(ssim(x, y) == Catch::Approx(ssim(y, x)).margin(1e-12));

    CHECK_THROWS_AS(ssim(Tensor(Shape{3, 8, 8}), Tensor(Shape{3, 8, 8})), ShapeError);
}

TEST_CASE("ssim matches the literal reference implementation on 5 random pairs") {
    for (int s = 0; s < 5; ++s) {
        Tensor a = gen_clean_scene(derive_seed(61, "ssim-a", s), 24, 24);
        Tensor b = apply_fog(a, FogParams{0.3 + 0.3 * s, {0.9, 0.9, 0.9}});
        if (s % 2 == 1) b = apply_rain(b, RainParams{0.4, 6.0, 8.0, 0.4}, s);
        CHECK(ssim(a, b) == Catch::Approx(ssim_reference(a, b)).margin(1e-6));
    }
}

TEST_CASE("spearman correlation") {
    std::vector<double> xs = {1, 2, 3, 4, 5, 6};
    std::vector<double> up = {10, 20, 25, 40, 55, 100};
    std::vector<double> down = {9, 7, 5, 3, 2, 1};
    auto r1 = spearman_rho(xs, up);
    CHECK(r1.defined);
    CHECK(r1.rho == Catch::Approx(1.0).margin(1e-12));
    auto r2 = spearman_rho(xs, down);
    CHECK(r2.rho == Catch::Approx(-1.0).margin(1e-12));

    auto r3 = spearman_rho(xs, std::vector<double>(6, 3.0));
    CHECK_FALSE(r3.defined);  // constant series flagged undefined

    CHECK_THROWS_AS(spearman_rho({1, 2}, {1, 2}), ParamError);
    CHECK_THROWS_AS(spearman_rho(xs, {1, 2}), ShapeError);
}

namespace {

RecognitionTrainConfig shared_rec_cfg() {
    RecognitionTrainConfig cfg;
    cfg.scenes = 16;
    cfg.height = cfg.width = 32;
    cfg.epochs = 40;
    cfg.seed = 7;
    return cfg;
}

const RecognitionTrainResult& shared_recognition() {
    static RecognitionTrainResult result = train_recognition_model(shared_rec_cfg());
    return result;
}

}  // namespace

TEST_CASE("recognition model trains to usable pixel accuracy") {
    RecognitionTrainConfig cfg = shared_rec_cfg();
    const auto& result = shared_recognition();
    INFO("train pixel accuracy " << result.train_accuracy);
    CHECK(result.train_accuracy > 0.85);

    // frozen model round-trips through the shared container format
    Checkpoint ckpt = recognition_to_checkpoint(result.model);
    RecognitionModel loaded = recognition_from_checkpoint(ckpt);
    SceneRender probe = render_scene(derive_seed(cfg.seed, "r-scene", 0), 32, 32);
    auto a = result.model.forward(probe.image);
    auto b = loaded.forward(probe.image);
    for (int64_t i = 0; i < a.logits.size(); ++i) CHECK(a.logits[i] == b.logits[i]);
}

TEST_CASE("m_pa identity, gamma semantics and fog monotonicity") {
    const RecognitionModel& r = shared_recognition().model;

    SceneRender scene = render_scene(derive_seed(88, "mpa", 0), 32, 32);
    const Tensor& clean = scene.image;

    // identical inputs: feature term exactly 0, total equals the CE floor
    MpaBreakdown same = m_pa_breakdown(clean, clean, r, 1.0);
    CHECK(same.feature == 0.0);
    CHECK(same.total == Catch::Approx(same.ce).margin(0.0));

    // gamma = 0 reduces to the FCN cross-entropy protocol
    Tensor foggy = apply_fog(clean, FogParams{0.6, {0.9, 0.9, 0.9}});
    MpaBreakdown g0 = m_pa_breakdown(foggy, clean, r, 0.0);
    CHECK(g0.total == Catch::Approx(g0.ce).margin(0.0));

    // m_pa consumes only images: the weather label never enters the call
    double direct = m_pa(foggy, clean, r, 1.0);
    CHECK(direct == m_pa_breakdown(foggy, clean, r, 1.0).total);

    // strictly increasing along the fog sweep
    double prev = -1.0;
    for (double beta : {0.0, 0.2, 0.4, 0.8, 1.6}) {
        Tensor degraded = beta == 0.0 ? clean.detach() : apply_fog(clean, FogParams{beta, {0.9, 0.9, 0.9}});
        double v = m_pa(degraded, clean, r, 1.0);
        CHECK(v > prev);
        prev = v;
    }
}

TEST_CASE("metric sweep produces monotone-friendly series") {
    const RecognitionModel& r = shared_recognition().model;

    SweepConfig sc;
    sc.scenes = 4;
    sc.levels = 4;
    sc.height = sc.width = 32;
    auto rows = run_metric_sweep(sc, r, 1.0);
    CHECK(rows.size() == 16);
    // within each scene, m_pa rises with intensity
    for (int s = 0; s < 4; ++s)
        for (int l = 1; l < 4; ++l) CHECK(rows[s * 4 + l].m_pa > rows[s * 4 + l - 1].m_pa);
}
