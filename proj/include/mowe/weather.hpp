// Procedural multi-weather data: clean scene rendering, rain/fog/snow/mix
// degradations, and dataset assembly with a line-delimited manifest.
#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>

#include "mowe/image.hpp"

namespace mowe {

enum class WeatherKind { Rain = 0, Fog = 1, Snow = 2, Clear = 3, Mix = 4 };

constexpr int kNumWeatherKinds = 5;

inline const char* weather_name(WeatherKind k) {
    switch (k) {
        case WeatherKind::Rain: return "rain";
        case WeatherKind::Fog: return "fog";
        case WeatherKind::Snow: return "snow";
        case WeatherKind::Clear: return "clear";
        case WeatherKind::Mix: return "mix";
    }
    return "?";
}

inline WeatherKind weather_from_name(const std::string& s) {
    for (int i = 0; i < kNumWeatherKinds; ++i)
        if (s == weather_name(static_cast<WeatherKind>(i))) return static_cast<WeatherKind>(i);
    throw ParamError("unknown weather kind: " + s);
}

// Segmentation classes emitted with every rendered scene.
enum SegClass { kSegSky = 0, kSegGround = 1, kSegRect = 2, kSegDisk = 3, kSegTriangle = 4 };
constexpr int kNumSegClasses = 5;

// ---------------------------------------------------------------------------
// Clean scene rendering

struct SceneRender {
    Tensor image;           // [3 x H x W] in [0,1]
    std::vector<int> mask;  // H*W segmentation labels
};

namespace detail {

inline std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
    h = h - std::floor(h);
    double c = v * s;
    double hp = h * 6.0;
    double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1) { r = c; g = x; }
    else if (hp < 2) { r = x; g = c; }
    else if (hp < 3) { g = c; b = x; }
    else if (hp < 4) { g = x; b = c; }
    else if (hp < 5) { r = x; b = c; }
    else { r = c; b = x; }
    double m = v - c;
    return {r + m, g + m, b + m};
}

}  // namespace detail

// Deterministic composite: gradient sky, textured ground, 3-8 colored
// objects (rectangles, disks, triangles). Pure function of (seed, H, W).
inline SceneRender render_scene(uint64_t seed, int h, int w) {
    if (h < 16 || w < 16) throw ParamError("render_scene: H and W must be >= 16");
    Rng rng(derive_seed(seed, "scene"));
    SceneRender out;
    out.image = Tensor(Shape{3, h, w});
    out.mask.assign(static_cast<size_t>(h) * w, kSegSky);
    Tensor& img = out.image;

    int horizon = static_cast<int>(std::lround(h * rng.uniform(0.45, 0.65)));
    double sky_hue = rng.uniform(0.52, 0.65);
    auto sky_top = detail::hsv_to_rgb(sky_hue, rng.uniform(0.25, 0.55), rng.uniform(0.75, 0.95));
    auto sky_bot = detail::hsv_to_rgb(sky_hue + rng.uniform(-0.05, 0.05), rng.uniform(0.05, 0.25),
                                      rng.uniform(0.85, 1.0));
    auto ground_base = detail::hsv_to_rgb(rng.uniform(0.05, 0.32), rng.uniform(0.3, 0.6), rng.uniform(0.35, 0.6));
    double tex_fx = rng.uniform(0.18, 0.5);
    double tex_fy = rng.uniform(0.18, 0.5);
    double tex_phase = rng.uniform(0.0, 2.0 * M_PI);
    double tex_amp = rng.uniform(0.03, 0.08);

    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (y < horizon) {
                double t = static_cast<double>(y) / std::max(1, horizon - 1);
                for (int c = 0; c < 3; ++c)
                    pixel_ref(img, c, y, x) = clamp(sky_top[static_cast<size_t>(c)] * (1 - t) +
                                                        sky_bot[static_cast<size_t>(c)] * t, 0.0, 1.0);
            } else {
                double tex = tex_amp * std::sin(tex_fx * x + tex_fy * y + tex_phase) +
                             0.5 * tex_amp * std::sin(2.7 * tex_fx * x - 1.9 * tex_fy * y);
                double shade = 1.0 - 0.25 * (static_cast<double>(y - horizon) / std::max(1, h - horizon));
                for (int c = 0; c < 3; ++c)
                    pixel_ref(img, c, y, x) = clamp(ground_base[static_cast<size_t>(c)] * shade + tex, 0.0, 1.0);
                out.mask[static_cast<size_t>(y) * w + x] = kSegGround;
            }
        }

    int n_objects = rng.uniform_int(3, 8);
    double base_hue = rng.uniform(0.0, 1.0);
    int smin = std::min(h, w);
    for (int i = 0; i < n_objects; ++i) {
        int type = rng.uniform_int(0, 2);  // 0 rect, 1 disk, 2 triangle
        double hue = base_hue + 0.381966 * i;  // spaced hues keep colors distinct
        auto col = detail::hsv_to_rgb(hue, rng.uniform(0.6, 0.95), rng.uniform(0.55, 0.95));
        int size = static_cast<int>(std::lround(smin * rng.uniform(0.14, 0.3)));
        size = std::max(size, 4);
        int cx = rng.uniform_int(size / 2, w - 1 - size / 2);
        int cy = rng.uniform_int(horizon / 2, h - 1 - size / 2);

        auto put = [&](int y, int x, int seg) {
            if (y < 0 || y >= h || x < 0 || x >= w) return;
            for (int c = 0; c < 3; ++c) pixel_ref(img, c, y, x) = col[static_cast<size_t>(c)];
            out.mask[static_cast<size_t>(y) * w + x] = seg;
        };

        if (type == 0) {
            int hw = size / 2, hh = std::max(2, static_cast<int>(size * rng.uniform(0.3, 0.6)));
            for (int y = cy - hh; y <= cy + hh; ++y)
                for (int x = cx - hw; x <= cx + hw; ++x) put(y, x, kSegRect);
        } else if (type == 1) {
            int r = size / 2;
            for (int y = cy - r; y <= cy + r; ++y)
                for (int x = cx - r; x <= cx + r; ++x)
                    if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) put(y, x, kSegDisk);
        } else {
            int bh = size, bw = size;
            for (int dy = 0; dy <= bh; ++dy) {
                int half = static_cast<int>(std::lround(0.5 * bw * dy / std::max(1, bh)));
                for (int x = cx - half; x <= cx + half; ++x) put(cy - bh / 2 + dy, x, kSegTriangle);
            }
        }
    }
    return out;
}

inline Tensor gen_clean_scene(uint64_t seed, int h, int w) { return render_scene(seed, h, w).image; }

// ---------------------------------------------------------------------------
// Degradations

struct FogParams {
    double beta = 1.0;
    std::array<double, 3> airlight = {0.9, 0.9, 0.9};
};

struct RainParams {
    double density = 0.5;     // in [0,1]
    double length = 10.0;     // mean streak length in pixels
    double angle_deg = 0.0;   // from vertical
    double brightness = 0.4;  // additive intensity
};

struct SnowParams {
    double density = 0.5;  // in [0,1]
    double radius_min = 0.8;
    double radius_max = 2.2;
};

// default depth: vertical ramp, far (1) at the top row down to 0 at the bottom
inline Tensor default_depth_ramp(int h, int w) {
    Tensor d(Shape{h, w});
    for (int y = 0; y < h; ++y) {
        double v = 1.0 - static_cast<double>(y) / std::max(1, h - 1);
        for (int x = 0; x < w; ++x) d[static_cast<int64_t>(y) * w + x] = v;
    }
    return d;
}

// atmospheric scattering: I = J*t + A*(1-t), t = exp(-beta * depth)
inline Tensor apply_fog(const Tensor& img, const FogParams& p, const Tensor* depth_map = nullptr) {
    check_image(img, "apply_fog");
    if (p.beta < 0) throw ParamError("apply_fog: beta must be >= 0");
    for (double a : p.airlight)
        if (a < 0.0 || a > 1.0) throw ParamError("apply_fog: airlight must lie in [0,1]");
    int h = img.dim(1), w = img.dim(2);
    Tensor depth = depth_map ? depth_map->detach() : default_depth_ramp(h, w);
    if (depth.rank() != 2 || depth.dim(0) != h || depth.dim(1) != w)
        throw ShapeError("apply_fog: depth map must be [H x W]");
    Tensor out(img.shape());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double t = std::exp(-p.beta * depth[static_cast<int64_t>(y) * w + x]);
            for (int c = 0; c < 3; ++c)
                pixel_ref(out, c, y, x) =
                    clamp(pixel(img, c, y, x) * t + p.airlight[static_cast<size_t>(c)] * (1.0 - t), 0.0, 1.0);
        }
    return out;
}

namespace detail {

// Streak parameters depend only on (seed, streak index), so a lower density
// draws a strict prefix of a higher density's streaks.
template <typename Fn>
inline void for_each_rain_pixel(int h, int w, const RainParams& p, uint64_t seed, Fn&& fn) {
    if (p.density < 0.0 || p.density > 1.0) throw ParamError("apply_rain: density must lie in [0,1]");
    if (p.length < 1.0) throw ParamError("apply_rain: length must be >= 1");
    int n_streaks = static_cast<int>(std::lround(p.density * h * w / 40.0));
    for (int i = 0; i < n_streaks; ++i) {
        Rng r(derive_seed(seed, "streak", i));
        double x0 = r.uniform(0.0, w - 1.0);
        double y0 = r.uniform(0.0, h - 1.0);
        double len = p.length * r.uniform(0.7, 1.3);
        double ang = (p.angle_deg + r.uniform(-6.0, 6.0)) * M_PI / 180.0;
        double alpha = r.uniform(0.5, 0.9);
        double dx = std::sin(ang), dy = std::cos(ang);
        int last_x = -1, last_y = -1;
        for (double t = 0.0; t <= len; t += 0.5) {
            int x = static_cast<int>(std::lround(x0 + dx * t));
            int y = static_cast<int>(std::lround(y0 + dy * t));
            if (x == last_x && y == last_y) continue;
            last_x = x;
            last_y = y;
            if (x < 0 || x >= w || y < 0 || y >= h) continue;
            fn(y, x, alpha);
        }
    }
}

}  // namespace detail

inline Tensor apply_rain(const Tensor& img, const RainParams& p, uint64_t seed) {
    check_image(img, "apply_rain");
    int h = img.dim(1), w = img.dim(2);
    Tensor out = img.detach();
    detail::for_each_rain_pixel(h, w, p, seed, [&](int y, int x, double alpha) {
        for (int c = 0; c < 3; ++c)
            pixel_ref(out, c, y, x) = clamp(pixel_ref(out, c, y, x) + alpha * p.brightness, 0.0, 1.0);
    });
    return out;
}

// rasterized streak coverage, used by tests to count affected pixels
inline std::vector<uint8_t> rain_pixel_mask(int h, int w, const RainParams& p, uint64_t seed) {
    std::vector<uint8_t> mask(static_cast<size_t>(h) * w, 0);
    detail::for_each_rain_pixel(h, w, p, seed, [&](int y, int x, double) {
        mask[static_cast<size_t>(y) * w + x] = 1;
    });
    return mask;
}

inline Tensor apply_snow(const Tensor& img, const SnowParams& p, uint64_t seed) {
    check_image(img, "apply_snow");
    if (p.density < 0.0 || p.density > 1.0) throw ParamError("apply_snow: density must lie in [0,1]");
    if (p.radius_min <= 0.0 || p.radius_max < p.radius_min) throw ParamError("apply_snow: bad radius range");
    int h = img.dim(1), w = img.dim(2);
    Tensor out = img.detach();
    int n_flakes = static_cast<int>(std::lround(p.density * h * w / 30.0));
    for (int i = 0; i < n_flakes; ++i) {
        Rng r(derive_seed(seed, "flake", i));
        double cx = r.uniform(0.0, w - 1.0);
        double cy = r.uniform(0.0, h - 1.0);
        double rad = r.uniform(p.radius_min, p.radius_max);
        double a0 = r.uniform(0.55, 0.9);
        int reach = static_cast<int>(std::ceil(rad * 1.5));
        for (int y = static_cast<int>(cy) - reach; y <= static_cast<int>(cy) + reach; ++y) {
            if (y < 0 || y >= h) continue;
            for (int x = static_cast<int>(cx) - reach; x <= static_cast<int>(cx) + reach; ++x) {
                if (x < 0 || x >= w) continue;
                double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                double a = a0 * std::exp(-2.0 * d2 / (rad * rad));
                if (a < 0.02) continue;
                for (int c = 0; c < 3; ++c) {
                    double v = pixel_ref(out, c, y, x);
                    pixel_ref(out, c, y, x) = clamp(v + a * (1.0 - v), 0.0, 1.0);
                }
            }
        }
    }
    return out;
}

struct MixParams {
    std::vector<WeatherKind> components;  // subset of {Rain, Fog, Snow}, at least two
    FogParams fog;
    RainParams rain;
    SnowParams snow;
};

inline uint64_t mix_component_seed(uint64_t seed, WeatherKind k) {
    return derive_seed(seed, "mix", static_cast<int>(k));
}

// fixed composition order: attenuation first (fog), then particles (rain, snow)
inline Tensor apply_mix(const Tensor& img, const MixParams& p, uint64_t seed) {
    check_image(img, "apply_mix");
    if (p.components.size() < 2) throw ParamError("apply_mix: need at least two components");
    for (WeatherKind c : p.components)
        if (c != WeatherKind::Rain && c != WeatherKind::Fog && c != WeatherKind::Snow)
            throw ParamError("apply_mix: components must be drawn from {rain, fog, snow}");
    auto has = [&](WeatherKind k) {
        for (WeatherKind c : p.components)
            if (c == k) return true;
        return false;
    };
    Tensor out = img.detach();
    if (has(WeatherKind::Fog)) out = apply_fog(out, p.fog);
    if (has(WeatherKind::Rain)) out = apply_rain(out, p.rain, mix_component_seed(seed, WeatherKind::Rain));
    if (has(WeatherKind::Snow)) out = apply_snow(out, p.snow, mix_component_seed(seed, WeatherKind::Snow));
    return out;
}

// ---------------------------------------------------------------------------
// Per-sample generation parameters

struct WeatherParams {
    WeatherKind kind = WeatherKind::Clear;
    FogParams fog;
    RainParams rain;
    SnowParams snow;
    std::vector<WeatherKind> components;  // for Mix

    std::string serialize() const;
    static WeatherParams parse(WeatherKind kind, const std::string& text);
};

namespace detail {

inline std::string fmt_num(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace detail

inline std::string WeatherParams::serialize() const {
    using detail::fmt_num;
    std::ostringstream os;
    auto fog_str = [&] {
        os << "beta=" << fmt_num(fog.beta) << ",aira=" << fmt_num(fog.airlight[0]) << ","
           << fmt_num(fog.airlight[1]) << "," << fmt_num(fog.airlight[2]);
    };
    auto rain_str = [&] {
        os << "rden=" << fmt_num(rain.density) << ",rlen=" << fmt_num(rain.length)
           << ",rang=" << fmt_num(rain.angle_deg) << ",rbri=" << fmt_num(rain.brightness);
    };
    auto snow_str = [&] {
        os << "sden=" << fmt_num(snow.density) << ",srad=" << fmt_num(snow.radius_min) << ","
           << fmt_num(snow.radius_max);
    };
    switch (kind) {
        case WeatherKind::Clear: os << "none=1"; break;
        case WeatherKind::Fog: fog_str(); break;
        case WeatherKind::Rain: rain_str(); break;
        case WeatherKind::Snow: snow_str(); break;
        case WeatherKind::Mix: {
            os << "comps=";
            for (size_t i = 0; i < components.size(); ++i) {
                if (i) os << "+";
                os << weather_name(components[i]);
            }
            os << ",";
            fog_str();
            os << ",";
            rain_str();
            os << ",";
            snow_str();
            break;
        }
    }
    return os.str();
}

inline WeatherParams WeatherParams::parse(WeatherKind kind, const std::string& text) {
    WeatherParams p;
    p.kind = kind;
    std::map<std::string, std::vector<double>> nums;
    std::string comps;
    size_t pos = 0;
    std::string cur_key;
    while (pos < text.size()) {
        size_t eq = text.find('=', pos);
        size_t next_comma = text.find(',', pos);
        if (eq != std::string::npos && (next_comma == std::string::npos || eq < next_comma)) {
            cur_key = text.substr(pos, eq - pos);
            pos = eq + 1;
        }
        size_t end = text.find(',', pos);
        if (end == std::string::npos) end = text.size();
        std::string val = text.substr(pos, end - pos);
        if (cur_key == "comps") comps = val;
        else if (cur_key != "none" && !val.empty()) nums[cur_key].push_back(std::stod(val));
        pos = end + 1;
    }
    auto get = [&](const std::string& k, size_t i, double fallback) {
        auto it = nums.find(k);
        if (it == nums.end() || i >= it->second.size()) return fallback;
        return it->second[i];
    };
    p.fog.beta = get("beta", 0, p.fog.beta);
    p.fog.airlight = {get("aira", 0, 0.9), get("aira", 1, 0.9), get("aira", 2, 0.9)};
    p.rain.density = get("rden", 0, p.rain.density);
    p.rain.length = get("rlen", 0, p.rain.length);
    p.rain.angle_deg = get("rang", 0, p.rain.angle_deg);
    p.rain.brightness = get("rbri", 0, p.rain.brightness);
    p.snow.density = get("sden", 0, p.snow.density);
    p.snow.radius_min = get("srad", 0, p.snow.radius_min);
    p.snow.radius_max = get("srad", 1, p.snow.radius_max);
    if (!comps.empty()) {
        size_t s = 0;
        while (s < comps.size()) {
            size_t e = comps.find('+', s);
            if (e == std::string::npos) e = comps.size();
            p.components.push_back(weather_from_name(comps.substr(s, e - s)));
            s = e + 1;
        }
    }
    return p;
}

// intensity ranges for dataset sampling; `intensity` scales severity so
// small resolutions (where particle coverage shrinks with H) can be pushed
// into a comparably hard regime
inline WeatherParams sample_weather_params(WeatherKind kind, int h, Rng& rng, double intensity = 1.0) {
    WeatherParams p;
    p.kind = kind;
    auto draw_fog = [&](double scale) {
        scale *= intensity;
        p.fog.beta = rng.uniform(0.9, 1.8) * scale;
        double base = rng.uniform(0.82, 0.95);
        for (int c = 0; c < 3; ++c) p.fog.airlight[static_cast<size_t>(c)] = clamp(base + rng.uniform(-0.02, 0.02), 0.0, 1.0);
    };
    auto draw_rain = [&](double scale) {
        scale *= intensity;
        p.rain.density = clamp(rng.uniform(0.3, 0.7) * scale, 0.0, 1.0);
        p.rain.length = std::max(2.0, h * rng.uniform(0.12, 0.2));
        p.rain.angle_deg = rng.uniform(-25.0, 25.0);
        p.rain.brightness = clamp(rng.uniform(0.3, 0.55) * std::sqrt(scale), 0.0, 0.8);
    };
    auto draw_snow = [&](double scale) {
        scale *= intensity;
        p.snow.density = clamp(rng.uniform(0.35, 0.7) * scale, 0.0, 1.0);
        p.snow.radius_min = std::max(0.7, h * 0.012);
        p.snow.radius_max = std::max(p.snow.radius_min + 0.3, h * 0.035);
    };
    switch (kind) {
        case WeatherKind::Clear: break;
        case WeatherKind::Fog: draw_fog(1.0); break;
        case WeatherKind::Rain: draw_rain(1.0); break;
        case WeatherKind::Snow: draw_snow(1.0); break;
        case WeatherKind::Mix: {
            static const std::array<std::array<WeatherKind, 3>, 4> choices = {{
                {WeatherKind::Fog, WeatherKind::Rain, WeatherKind::Rain},
                {WeatherKind::Fog, WeatherKind::Snow, WeatherKind::Snow},
                {WeatherKind::Rain, WeatherKind::Snow, WeatherKind::Snow},
                {WeatherKind::Fog, WeatherKind::Rain, WeatherKind::Snow},
            }};
            int pick = rng.uniform_int(0, 3);
            p.components.assign(choices[static_cast<size_t>(pick)].begin(), choices[static_cast<size_t>(pick)].end());
            if (pick != 3) p.components.resize(2);
            // fog damped so mixes read as genuine mixtures rather than fog
            draw_fog(0.55);
            draw_rain(0.85);
            draw_snow(0.85);
            break;
        }
    }
    return p;
}

inline Tensor degrade(const Tensor& clean, const WeatherParams& p, uint64_t seed) {
    switch (p.kind) {
        case WeatherKind::Clear: return clean.detach();
        case WeatherKind::Fog: return apply_fog(clean, p.fog);
        case WeatherKind::Rain: return apply_rain(clean, p.rain, seed);
        case WeatherKind::Snow: return apply_snow(clean, p.snow, seed);
        case WeatherKind::Mix: {
            MixParams mp{p.components, p.fog, p.rain, p.snow};
            return apply_mix(clean, mp, seed);
        }
    }
    throw ParamError("degrade: bad weather kind");
}

// ---------------------------------------------------------------------------
// Dataset

struct WeatherSample {
    int id = 0;
    WeatherKind label = WeatherKind::Clear;
    Tensor clean;
    Tensor degraded;
    uint64_t seed = 0;  // scene seed
    WeatherParams params;
};

struct DatasetConfig {
    int count_per_kind = 10;
    int height = 64;
    int width = 64;
    uint64_t seed = 0;
    double intensity = 1.0;    // degradation severity multiplier
    std::string out_dir;       // empty = in-memory only
    bool write_files = false;
};

struct DatasetSplit {
    std::vector<WeatherSample> train, val, test;

    std::vector<const WeatherSample*> all() const {
        std::vector<const WeatherSample*> v;
        for (const auto* part : {&train, &val, &test})
            for (const auto& s : *part) v.push_back(&s);
        return v;
    }
};

// 7:1:2 by scene; matches the manifest loader
inline void split_counts(int scenes, int& n_train, int& n_val) {
    n_train = static_cast<int>(scenes * 0.7);
    n_val = static_cast<int>(scenes * 0.1);
}

inline uint64_t scene_seed(uint64_t base, int scene) { return derive_seed(base, "scene-seed", scene); }

inline DatasetSplit build_dataset(const DatasetConfig& cfg) {
    if (cfg.count_per_kind < 1) throw ParamError("build_dataset: count_per_kind must be >= 1");
    if (cfg.height < 16 || cfg.width < 16) throw ParamError("build_dataset: resolution must be >= 16");
    int scenes = cfg.count_per_kind;
    int n_train, n_val;
    split_counts(scenes, n_train, n_val);

    namespace fs = std::filesystem;
    std::ofstream manifest;
    if (cfg.write_files) {
        if (cfg.out_dir.empty()) throw ParamError("build_dataset: out_dir required when writing files");
        fs::create_directories(fs::path(cfg.out_dir) / "clean");
        fs::create_directories(fs::path(cfg.out_dir) / "degraded");
        manifest.open((fs::path(cfg.out_dir) / "manifest.txt").string());
        if (!manifest) throw ParamError("build_dataset: cannot write manifest in " + cfg.out_dir);
        manifest << "# mowe-dataset v1 scenes=" << scenes << " height=" << cfg.height << " width=" << cfg.width
                 << " seed=" << cfg.seed << "\n";
    }

    DatasetSplit split;
    char idbuf[16];
    for (int s = 0; s < scenes; ++s) {
        uint64_t sseed = scene_seed(cfg.seed, s);
        Tensor clean = quantize_image(gen_clean_scene(sseed, cfg.height, cfg.width));
        for (int k = 0; k < kNumWeatherKinds; ++k) {
            auto kind = static_cast<WeatherKind>(k);
            WeatherSample sample;
            sample.id = s * kNumWeatherKinds + k;
            sample.label = kind;
            sample.seed = sseed;
            sample.clean = clean;
            Rng prng(derive_seed(cfg.seed, "wx-params", s, k));
            sample.params = sample_weather_params(kind, cfg.height, prng, cfg.intensity);
            uint64_t dseed = derive_seed(cfg.seed, "wx-apply", s, k);
            sample.degraded = kind == WeatherKind::Clear ? clean : quantize_image(degrade(clean, sample.params, dseed));

            if (cfg.write_files) {
                std::snprintf(idbuf, sizeof(idbuf), "%05d", sample.id);
                std::string cpath = std::string("clean/") + idbuf + ".ppm";
                std::string dpath = std::string("degraded/") + idbuf + ".ppm";
                write_ppm((fs::path(cfg.out_dir) / cpath).string(), sample.clean);
                write_ppm((fs::path(cfg.out_dir) / dpath).string(), sample.degraded);
                manifest << "id=" << sample.id << " weather=" << weather_name(kind) << " clean=" << cpath
                         << " degraded=" << dpath << " seed=" << sseed
                         << " params=" << sample.params.serialize() << "\n";
            }

            if (s < n_train) split.train.push_back(std::move(sample));
            else if (s < n_train + n_val) split.val.push_back(std::move(sample));
            else split.test.push_back(std::move(sample));
        }
    }
    return split;
}

inline DatasetSplit load_dataset(const std::string& manifest_path) {
    namespace fs = std::filesystem;
    std::ifstream in(manifest_path);
    if (!in) throw ParamError("load_dataset: cannot open " + manifest_path);
    fs::path base = fs::path(manifest_path).parent_path();

    std::string header;
    std::getline(in, header);
    int scenes = -1;
    {
        std::istringstream hs(header);
        std::string tok;
        while (hs >> tok) {
            auto eq = tok.find('=');
            if (eq != std::string::npos && tok.substr(0, eq) == "scenes") scenes = std::stoi(tok.substr(eq + 1));
        }
    }
    if (scenes <= 0) throw ParamError("load_dataset: manifest header missing scene count");
    int n_train, n_val;
    split_counts(scenes, n_train, n_val);

    DatasetSplit split;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string tok;
        std::map<std::string, std::string> kv;
        while (ls >> tok) {
            auto eq = tok.find('=');
            if (eq == std::string::npos) throw ParamError("load_dataset: malformed manifest token: " + tok);
            kv[tok.substr(0, eq)] = tok.substr(eq + 1);
        }
        WeatherSample s;
        s.id = std::stoi(kv.at("id"));
        s.label = weather_from_name(kv.at("weather"));
        s.seed = std::stoull(kv.at("seed"));
        s.clean = read_ppm((base / kv.at("clean")).string());
        s.degraded = read_ppm((base / kv.at("degraded")).string());
        s.params = WeatherParams::parse(s.label, kv.at("params"));
        int scene = s.id / kNumWeatherKinds;
        if (scene < n_train) split.train.push_back(std::move(s));
        else if (scene < n_train + n_val) split.val.push_back(std::move(s));
        else split.test.push_back(std::move(s));
    }
    return split;
}

}  // namespace mowe
