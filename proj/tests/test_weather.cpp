#include <catch2/catch_amalgamated.hpp>

#include "mowe/metrics.hpp"
#include "mowe/weather.hpp"

using namespace mowe;

namespace {

double frac_pixels_differing(const Tensor& a, const Tensor& b) {
    int h = a.dim(1), w = a.dim(2);
    int64_t plane = static_cast<int64_t>(h) * w;
    int64_t diff = 0;
    for (int64_t p = 0; p < plane; ++p) {
        for (int c = 0; c < 3; ++c)
            if (std::abs(a[c * plane + p] - b[c * plane + p]) > 0.5 / 255.0) {
                ++diff;
                break;
            }
    }
    return static_cast<double>(diff) / static_cast<double>(plane);
}

}  // namespace

TEST_CASE("scene generation is deterministic and in range") {
    Tensor a = gen_clean_scene(0, 48, 48);
    Tensor b = gen_clean_scene(0, 48, 48);
    REQUIRE(a.size() == b.size());
    for (int64_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    for (double v : a.vec()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    CHECK_THROWS_AS(gen_clean_scene(0, 8, 48), ParamError);
}

TEST_CASE("distinct seeds give distinct scenes (>10% of pixels over 50 pairs)") {
    for (int pair = 0; pair < 50; ++pair) {
        Tensor a = gen_clean_scene(derive_seed(7, "pair-a", pair), 32, 32);
        Tensor b = gen_clean_scene(derive_seed(7, "pair-b", pair), 32, 32);
        CHECK(frac_pixels_differing(a, b) > 0.10);
    }
}

TEST_CASE("scene masks cover the five segment classes across seeds") {
    std::array<int64_t, kNumSegClasses> totals{};
    for (int s = 0; s < 30; ++s) {
        SceneRender r = render_scene(derive_seed(21, "mask", s), 32, 32);
        REQUIRE(r.mask.size() == 32 * 32);
        for (int m : r.mask) {
            REQUIRE(m >= 0);
            REQUIRE(m < kNumSegClasses);
            totals[static_cast<size_t>(m)] += 1;
        }
    }
    for (int64_t t : totals) CHECK(t > 0);
}

TEST_CASE("fog model") {
    Tensor img = gen_clean_scene(3, 32, 32);

    FogParams identity{0.0, {0.9, 0.9, 0.9}};
    Tensor same = apply_fog(img, identity);
    for (int64_t i = 0; i < img.size(); ++i) CHECK(same[i] == Catch::Approx(img[i]).margin(1e-12));

    FogParams dense{50.0, {0.8, 0.85, 0.9}};
    Tensor depth_one(Shape{32, 32}, 1.0);
    Tensor fogged = apply_fog(img, dense, &depth_one);
    int64_t plane = 32 * 32;
    for (int64_t p = 0; p < plane; ++p) {
        CHECK(fogged[p] == Catch::Approx(0.8).margin(1e-6));
        CHECK(fogged[plane + p] == Catch::Approx(0.85).margin(1e-6));
    }

    // beta=1, depth=1, A=1, J=0 -> 1 - e^-1
    Tensor black(Shape{3, 32, 32}, 0.0);
    FogParams unit{1.0, {1.0, 1.0, 1.0}};
    Tensor v = apply_fog(black, unit, &depth_one);
    for (int64_t i = 0; i < v.size(); ++i) CHECK(v[i] == Catch::Approx(1.0 - std::exp(-1.0)).margin(1e-12));

    CHECK_THROWS_AS(apply_fog(img, FogParams{-1.0, {0.9, 0.9, 0.9}}), ParamError);
    CHECK_THROWS_AS(apply_fog(img, FogParams{1.0, {1.5, 0.9, 0.9}}), ParamError);
}

TEST_CASE("rain model") {
    Tensor img = gen_clean_scene(11, 48, 48);
    RainParams none{0.0, 8.0, 10.0, 0.4};
    Tensor same = apply_rain(img, none, 5);
    for (int64_t i = 0; i < img.size(); ++i) CHECK(same[i] == img[i]);

    RainParams p{0.5, 8.0, 10.0, 0.4};
    Tensor rained = apply_rain(img, p, 5);
    double mean_in = 0, mean_out = 0;
    for (int64_t i = 0; i < img.size(); ++i) {
        mean_in += img[i];
        mean_out += rained[i];
    }
    CHECK(mean_out >= mean_in);  // streaks only brighten

    // density 0.5 covers strictly more pixels than 0.1 at the same seed
    RainParams lo = p;
    lo.density = 0.1;
    auto m_hi = rain_pixel_mask(48, 48, p, 5);
    auto m_lo = rain_pixel_mask(48, 48, lo, 5);
    int64_t n_hi = 0, n_lo = 0;
    for (size_t i = 0; i < m_hi.size(); ++i) {
        n_hi += m_hi[i];
        n_lo += m_lo[i];
        // prefix property: low-density streaks are a subset
        if (m_lo[i]) CHECK(m_hi[i] == 1);
    }
    CHECK(n_hi > n_lo);
}

TEST_CASE("snow and mix") {
    Tensor img = gen_clean_scene(13, 48, 48);
    SnowParams none{0.0, 1.0, 2.0};
    Tensor same = apply_snow(img, none, 9);
    for (int64_t i = 0; i < img.size(); ++i) CHECK(same[i] == img[i]);

    // mix{fog, rain} equals manual composition with the same derived seeds
    MixParams mp;
    mp.components = {WeatherKind::Fog, WeatherKind::Rain};
    mp.fog = {1.1, {0.9, 0.9, 0.88}};
    mp.rain = {0.45, 8.0, -8.0, 0.45};
    uint64_t seed = 77;
    Tensor mixed = apply_mix(img, mp, seed);
    Tensor manual = apply_rain(apply_fog(img, mp.fog), mp.rain, mix_component_seed(seed, WeatherKind::Rain));
    for (int64_t i = 0; i < mixed.size(); ++i) CHECK(mixed[i] == manual[i]);

    MixParams bad;
    bad.components = {WeatherKind::Fog};
    CHECK_THROWS_AS(apply_mix(img, bad, 1), ParamError);
    MixParams clearbad;
    clearbad.components = {WeatherKind::Fog, WeatherKind::Clear};
    CHECK_THROWS_AS(apply_mix(img, clearbad, 1), ParamError);
}

TEST_CASE("mix of all three degrades SSIM below each single weather at matched intensities") {
    for (int s = 0; s < 20; ++s) {
        Tensor img = gen_clean_scene(derive_seed(31, "mixssim", s), 48, 48);
        FogParams fog{1.2, {0.9, 0.9, 0.9}};
        RainParams rain{0.5, 8.0, 5.0, 0.45};
        SnowParams snow{0.5, 1.0, 2.0};
        uint64_t seed = derive_seed(32, "mixseed", s);

        MixParams mp;
        mp.components = {WeatherKind::Fog, WeatherKind::Rain, WeatherKind::Snow};
        mp.fog = fog;
        mp.rain = rain;
        mp.snow = snow;
        double s_mix = ssim(img, apply_mix(img, mp, seed));
        double s_fog = ssim(img, apply_fog(img, fog));
        double s_rain = ssim(img, apply_rain(img, rain, mix_component_seed(seed, WeatherKind::Rain)));
        double s_snow = ssim(img, apply_snow(img, snow, mix_component_seed(seed, WeatherKind::Snow)));
        CHECK(s_mix < s_fog);
        CHECK(s_mix < s_rain);
        CHECK(s_mix < s_snow);
    }
}

TEST_CASE("psnr decreases strictly as intensity rises (5-point sweeps)") {
    for (int s = 0; s < 5; ++s) {
        Tensor img = gen_clean_scene(derive_seed(41, "mono", s), 48, 48);
        uint64_t seed = derive_seed(42, "monoseed", s);

        double beta[] = {0.2, 0.5, 0.9, 1.4, 2.0};
        double prev = 1e9;
        for (double b : beta) {
            double v = psnr(img, apply_fog(img, FogParams{b, {0.9, 0.9, 0.9}}));
            CHECK(v < prev);
            prev = v;
        }

        double dens[] = {0.1, 0.3, 0.5, 0.7, 0.9};
        prev = 1e9;
        for (double d : dens) {
            double v = psnr(img, apply_rain(img, RainParams{d, 8.0, 10.0, 0.45}, seed));
            CHECK(v < prev);
            prev = v;
        }

        prev = 1e9;
        for (double d : dens) {
            double v = psnr(img, apply_snow(img, SnowParams{d, 1.0, 2.0}, seed));
            CHECK(v < prev);
            prev = v;
        }
    }
}

TEST_CASE("degradations stay in range and finite") {
    for (int s = 0; s < 10; ++s) {
        Rng rng(derive_seed(51, "range", s));
        Tensor img = gen_clean_scene(derive_seed(52, "range-scene", s), 32, 32);
        for (int k = 0; k < kNumWeatherKinds; ++k) {
            auto kind = static_cast<WeatherKind>(k);
            WeatherParams p = sample_weather_params(kind, 32, rng, 1.3);
            Tensor out = degrade(img, p, derive_seed(53, "range-app", s, k));
            for (double v : out.vec()) {
                CHECK(std::isfinite(v));
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
            }
        }
    }
}

TEST_CASE("build_dataset structure") {
    DatasetConfig cfg;
    cfg.count_per_kind = 10;
    cfg.height = cfg.width = 32;
    cfg.seed = 5;
    DatasetSplit split = build_dataset(cfg);
    CHECK(split.train.size() == 35);
    CHECK(split.val.size() == 5);
    CHECK(split.test.size() == 10);

    std::array<int, kNumWeatherKinds> hist{};
    for (const auto* s : split.all()) {
        hist[static_cast<size_t>(s->label)] += 1;
        CHECK(same_shape(s->clean.shape(), s->degraded.shape()));
        if (s->label == WeatherKind::Clear) {
            for (int64_t i = 0; i < s->clean.size(); ++i) CHECK(s->clean[i] == s->degraded[i]);
        } else {
            bool differs = false;
            for (int64_t i = 0; i < s->clean.size(); ++i)
                if (s->clean[i] != s->degraded[i]) differs = true;
            CHECK(differs);
        }
    }
    for (int h : hist) CHECK(h == 10);  // uniform label histogram

    // scenes are split-disjoint
    std::set<uint64_t> train_seeds, test_seeds;
    for (const auto& s : split.train) train_seeds.insert(s.seed);
    for (const auto& s : split.test) test_seeds.insert(s.seed);
    for (uint64_t t : test_seeds) CHECK(train_seeds.count(t) == 0);

    // identical config -> identical samples
    DatasetSplit again = build_dataset(cfg);
    REQUIRE(again.train.size() == split.train.size());
    for (size_t i = 0; i < split.train.size(); ++i) {
        CHECK(split.train[i].id == again.train[i].id);
        for (int64_t j = 0; j < split.train[i].degraded.size(); ++j)
            CHECK(split.train[i].degraded[j] == again.train[i].degraded[j]);
    }

    DatasetConfig bad = cfg;
    bad.count_per_kind = 0;
    CHECK_THROWS_AS(build_dataset(bad), ParamError);
}
