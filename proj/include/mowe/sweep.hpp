// Degradation intensity sweep relating M_pa, PSNR and the recognition
// model's pixel error, used by the metric-sweep command and the metric
// validity checks.
#pragma once

#include "mowe/config.hpp"
#include "mowe/eval.hpp"

namespace mowe {

struct SweepRow {
    int scene = 0;
    WeatherKind kind = WeatherKind::Fog;
    int level = 0;
    double intensity = 0.0;  // in [0,1]
    double m_pa = 0.0;
    double psnr_db = 0.0;
    double pixel_err = 0.0;  // 1 - pixel accuracy of R on the degraded image
};

inline WeatherParams sweep_params(WeatherKind kind, double intensity, int height) {
    WeatherParams p;
    p.kind = kind;
    p.fog.beta = 1.8 * intensity;
    p.fog.airlight = {0.9, 0.9, 0.9};
    p.rain.density = 0.8 * intensity;
    p.rain.length = std::max(2.0, height * 0.16);
    p.rain.angle_deg = 12.0;
    p.rain.brightness = 0.5;
    p.snow.density = 0.8 * intensity;
    p.snow.radius_min = std::max(0.7, height * 0.012);
    p.snow.radius_max = std::max(p.snow.radius_min + 0.3, height * 0.035);
    if (kind == WeatherKind::Mix) {
        p.components = {WeatherKind::Fog, WeatherKind::Rain, WeatherKind::Snow};
        p.fog.beta *= 0.6;
        p.rain.density *= 0.6;
        p.snow.density *= 0.6;
    }
    return p;
}

inline std::vector<SweepRow> run_metric_sweep(const SweepConfig& cfg, const RecognitionModel& recognition,
                                              double gamma) {
    static const WeatherKind cycle[4] = {WeatherKind::Fog, WeatherKind::Rain, WeatherKind::Snow, WeatherKind::Mix};
    if (cfg.scenes < 1 || cfg.levels < 2) throw ParamError("metric sweep: need >= 1 scene and >= 2 levels");
    std::vector<SweepRow> rows;
    for (int s = 0; s < cfg.scenes; ++s) {
        SceneRender scene = render_scene(derive_seed(cfg.seed, "sweep-scene", s), cfg.height, cfg.width);
        WeatherKind kind = cycle[s % 4];
        for (int level = 0; level < cfg.levels; ++level) {
            double intensity = static_cast<double>(level) / (cfg.levels - 1);
            WeatherParams params = sweep_params(kind, intensity, cfg.height);
            Tensor degraded = level == 0 ? scene.image.detach()
                                         : degrade(scene.image, params, derive_seed(cfg.seed, "sweep-app", s, level));
            SweepRow row;
            row.scene = s;
            row.kind = kind;
            row.level = level;
            row.intensity = intensity;
            row.m_pa = m_pa(degraded, scene.image, recognition, gamma);
            row.psnr_db = psnr(degraded, scene.image);
            row.pixel_err = 1.0 - pixel_accuracy(recognition.predict_classes(degraded), scene.mask);
            rows.push_back(row);
        }
    }
    return rows;
}

struct SweepCorrelation {
    SpearmanResult mpa_vs_err;
    SpearmanResult psnr_vs_err;
};

inline SweepCorrelation sweep_correlations(const std::vector<SweepRow>& rows) {
    std::vector<double> mpa, ps, err;
    for (const auto& r : rows) {
        mpa.push_back(r.m_pa);
        err.push_back(r.pixel_err);
        ps.push_back(std::isfinite(r.psnr_db) ? r.psnr_db : 99.0);  // cap the identity sentinel for ranking
    }
    return {spearman_rho(mpa, err), spearman_rho(ps, err)};
}

inline void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
    out << "scene,kind,level,intensity,m_pa,psnr,pixel_err\n";
    for (const auto& r : rows)
        out << r.scene << "," << weather_name(r.kind) << "," << r.level << "," << r.intensity << "," << r.m_pa
            << "," << r.psnr_db << "," << r.pixel_err << "\n";
}

}  // namespace mowe
