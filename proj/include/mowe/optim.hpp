// Adam with bias correction, operating on a named parameter list.
#pragma once

#include "mowe/model.hpp"

namespace mowe {

struct AdamConfig {
    double lr = 2e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    int64_t step = 0;
    std::vector<std::vector<double>> m, v;  // first/second moments, per param

    void init(const ParamList& params) {
        step = 0;
        m.clear();
        v.clear();
        for (const auto& p : params) {
            m.emplace_back(static_cast<size_t>(p.tensor.size()), 0.0);
            v.emplace_back(static_cast<size_t>(p.tensor.size()), 0.0);
        }
    }
};

// frozen[i] slots are skipped entirely (moments untouched); lr_scale, when
// given, multiplies the step size per parameter (param-group learning rates)
inline void adam_step(const ParamList& params, AdamState& state, const AdamConfig& cfg,
                      const std::vector<bool>* frozen = nullptr, const std::vector<double>* lr_scale = nullptr) {
    if (state.m.size() != params.size()) throw UsageError("adam_step: state does not match parameter list");
    state.step += 1;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        if (frozen && (*frozen)[i]) continue;
        Tensor t = params[i].tensor;
        if (state.m[i].size() != static_cast<size_t>(t.size()))
            throw ShapeError("adam_step: moment shape mismatch for " + params[i].name);
        double lr = cfg.lr * (lr_scale ? (*lr_scale)[i] : 1.0);
        const auto& g = t.grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        double* data = t.data();
        for (size_t j = 0; j < m.size(); ++j) {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            double mhat = m[j] / bc1;
            double vhat = v[j] / bc2;
            data[j] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

}  // namespace mowe
