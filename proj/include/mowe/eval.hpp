// Evaluation over dataset splits: per-image PSNR / SSIM / M_pa rows with
// per-weather means, classifier confidence stats, and routing analysis.
#pragma once

#include "mowe/recognition.hpp"
#include "mowe/train.hpp"

namespace mowe {

struct MetricRow {
    int id = 0;
    WeatherKind weather = WeatherKind::Clear;
    double psnr = 0.0;
    double ssim = 0.0;
    double m_pa = 0.0;
};

struct MetricReport {
    std::vector<MetricRow> rows;
    // means indexed by WeatherKind; count 0 leaves the slot at 0
    std::array<double, kNumWeatherKinds> mean_psnr{}, mean_ssim{}, mean_mpa{};
    std::array<int, kNumWeatherKinds> counts{};
    double overall_psnr = 0.0, overall_ssim = 0.0, overall_mpa = 0.0;

    void finalize() {
        std::array<double, kNumWeatherKinds> sp{}, ss{}, sm{};
        double tp = 0, ts = 0, tm = 0;
        int finite_psnr = 0;
        for (const auto& r : rows) {
            size_t k = static_cast<size_t>(r.weather);
            counts[k] += 1;
            ss[k] += r.ssim;
            sm[k] += r.m_pa;
            ts += r.ssim;
            tm += r.m_pa;
            if (std::isfinite(r.psnr)) {
                sp[k] += r.psnr;
                tp += r.psnr;
                ++finite_psnr;
            }
        }
        int finite_by_kind[kNumWeatherKinds] = {0};
        for (const auto& r : rows)
            if (std::isfinite(r.psnr)) finite_by_kind[static_cast<size_t>(r.weather)] += 1;
        for (size_t k = 0; k < kNumWeatherKinds; ++k) {
            if (finite_by_kind[k]) mean_psnr[k] = sp[k] / finite_by_kind[k];
            else if (counts[k]) mean_psnr[k] = std::numeric_limits<double>::infinity();
            if (counts[k]) {
                mean_ssim[k] = ss[k] / counts[k];
                mean_mpa[k] = sm[k] / counts[k];
            }
        }
        if (finite_psnr) overall_psnr = tp / finite_psnr;
        if (!rows.empty()) {
            overall_ssim = ts / static_cast<double>(rows.size());
            overall_mpa = tm / static_cast<double>(rows.size());
        }
    }
};

// restored output clamped to [0,1] for evaluation
inline Tensor restore_clamped(const MoweModel& model, const Tensor& degraded) {
    return clamp01(model.restore(degraded).pred);
}

// passthrough=true scores the degraded images themselves (identity
// restorer), giving the dataset's lower bound
inline MetricReport evaluate_samples(const MoweModel* model, const std::vector<const WeatherSample*>& samples,
                                     const RecognitionModel* recognition, double gamma, bool passthrough) {
    MetricReport report;
    for (const WeatherSample* s : samples) {
        Tensor out = passthrough ? s->degraded : restore_clamped(*model, s->degraded);
        MetricRow row;
        row.id = s->id;
        row.weather = s->label;
        row.psnr = psnr(out, s->clean);
        row.ssim = ssim(out, s->clean);
        row.m_pa = recognition ? m_pa(out, s->clean, *recognition, gamma) : 0.0;
        report.rows.push_back(row);
    }
    report.finalize();
    return report;
}

// mean PSNR over the four degraded kinds (rain/fog/snow/mix)
inline double mean_degraded_psnr(const MetricReport& rep) {
    double total = 0.0;
    int kinds = 0;
    for (WeatherKind k : {WeatherKind::Rain, WeatherKind::Fog, WeatherKind::Snow, WeatherKind::Mix}) {
        if (rep.counts[static_cast<size_t>(k)] == 0) continue;
        total += rep.mean_psnr[static_cast<size_t>(k)];
        ++kinds;
    }
    return kinds ? total / kinds : 0.0;
}

// ---------------------------------------------------------------------------
// Classifier confidence (max softmax) split into Mix vs single-weather sets

struct ConfidenceStats {
    double mean_mix = 0.0;
    double mean_single = 0.0;
    int n_mix = 0, n_single = 0;
};

inline ConfidenceStats classifier_confidence(const MoweModel& model, const std::vector<const WeatherSample*>& samples) {
    ConfidenceStats st;
    for (const WeatherSample* s : samples) {
        auto out = model.classify_weather(s->degraded);
        auto probs = softmax_values(out.logits.vec());
        double conf = *std::max_element(probs.begin(), probs.end());
        if (s->label == WeatherKind::Mix) {
            st.mean_mix += conf;
            st.n_mix += 1;
        } else {
            st.mean_single += conf;
            st.n_single += 1;
        }
    }
    if (st.n_mix) st.mean_mix /= st.n_mix;
    if (st.n_single) st.mean_single /= st.n_single;
    return st;
}

// ---------------------------------------------------------------------------
// Routing-score table over a sample set (gate mass aggregated across blocks)

inline std::vector<std::vector<double>> routing_table(const MoweModel& model,
                                                      const std::vector<const WeatherSample*>& samples) {
    std::vector<ImageRouting> items;
    for (const WeatherSample* s : samples) {
        RestoreResult res = model.restore(s->degraded);
        items.push_back({s->label, collect_gate_sums(res.records)});
    }
    return routing_scores(items, model.cfg.num_experts);
}

// ---------------------------------------------------------------------------
// CSV writers (per-weather layout mirrors the derain/dehaze/desnow/mixed/
// average reporting convention)

inline void write_metric_csv(std::ostream& out, const MetricReport& rep) {
    out << "id,weather,psnr,ssim,m_pa\n";
    for (const auto& r : rep.rows)
        out << r.id << "," << weather_name(r.weather) << "," << r.psnr << "," << r.ssim << "," << r.m_pa << "\n";
    out << "mean,rain," << rep.mean_psnr[0] << "," << rep.mean_ssim[0] << "," << rep.mean_mpa[0] << "\n";
    out << "mean,fog," << rep.mean_psnr[1] << "," << rep.mean_ssim[1] << "," << rep.mean_mpa[1] << "\n";
    out << "mean,snow," << rep.mean_psnr[2] << "," << rep.mean_ssim[2] << "," << rep.mean_mpa[2] << "\n";
    out << "mean,clear," << rep.mean_psnr[3] << "," << rep.mean_ssim[3] << "," << rep.mean_mpa[3] << "\n";
    out << "mean,mix," << rep.mean_psnr[4] << "," << rep.mean_ssim[4] << "," << rep.mean_mpa[4] << "\n";
    out << "mean,average," << rep.overall_psnr << "," << rep.overall_ssim << "," << rep.overall_mpa << "\n";
}

inline void write_routing_csv(std::ostream& out, const std::vector<std::vector<double>>& table) {
    out << "weather";
    if (!table.empty())
        for (size_t e = 0; e < table[0].size(); ++e) out << ",e" << e;
    out << "\n";
    for (size_t wk = 0; wk < table.size(); ++wk) {
        out << weather_name(static_cast<WeatherKind>(wk));
        for (double v : table[wk]) out << "," << v;
        out << "\n";
    }
}

}  // namespace mowe
