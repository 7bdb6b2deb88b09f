// Signal-fidelity metrics: PSNR, windowed SSIM, Spearman rank correlation.
#pragma once

#include <algorithm>
#include <limits>

#include "mowe/image.hpp"

namespace mowe {

inline double mse_value(const Tensor& a, const Tensor& b) {
    if (!same_shape(a.shape(), b.shape())) throw ShapeError("mse: shape mismatch");
    double acc = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

// 10*log10(peak^2 / MSE); identical inputs report the +inf sentinel
inline double psnr(const Tensor& a, const Tensor& b, double peak = 1.0) {
    double m = mse_value(a, b);
    if (m == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / m);
}

namespace detail {

inline std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> w(static_cast<size_t>(size));
    double c = (size - 1) / 2.0;
    double total = 0.0;
    for (int i = 0; i < size; ++i) {
        w[static_cast<size_t>(i)] = std::exp(-0.5 * (i - c) * (i - c) / (sigma * sigma));
        total += w[static_cast<size_t>(i)];
    }
    for (double& v : w) v /= total;
    return w;
}

// separable Gaussian filter, valid region only: output is (H-size+1) x (W-size+1)
inline std::vector<double> gauss_filter_valid(const std::vector<double>& img, int h, int w,
                                              const std::vector<double>& win) {
    int k = static_cast<int>(win.size());
    int hw = w - k + 1, hh = h - k + 1;
    std::vector<double> tmp(static_cast<size_t>(h) * hw);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < hw; ++x) {
            double acc = 0.0;
            for (int i = 0; i < k; ++i) acc += img[static_cast<size_t>(y) * w + x + i] * win[static_cast<size_t>(i)];
            tmp[static_cast<size_t>(y) * hw + x] = acc;
        }
    std::vector<double> out(static_cast<size_t>(hh) * hw);
    for (int y = 0; y < hh; ++y)
        for (int x = 0; x < hw; ++x) {
            double acc = 0.0;
            for (int i = 0; i < k; ++i) acc += tmp[static_cast<size_t>(y + i) * hw + x] * win[static_cast<size_t>(i)];
            out[static_cast<size_t>(y) * hw + x] = acc;
        }
    return out;
}

}  // namespace detail

// Standard windowed SSIM on channel-mean grayscale: 11x11 Gaussian window
// (sigma 1.5), C1=(0.01)^2, C2=(0.03)^2 at unit peak, mean over windows.
inline double ssim(const Tensor& a, const Tensor& b) {
    if (!same_shape(a.shape(), b.shape())) throw ShapeError("ssim: shape mismatch");
    Tensor ga = to_gray(a), gb = to_gray(b);
    int h = ga.dim(0), w = ga.dim(1);
    constexpr int kWin = 11;
    constexpr double kSigma = 1.5;
    if (h < kWin || w < kWin) throw ShapeError("ssim: image smaller than the 11x11 window");
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;

    auto win = detail::gaussian_window(kWin, kSigma);
    const auto& va = ga.vec();
    const auto& vb = gb.vec();
    std::vector<double> aa(va.size()), bb(vb.size()), ab(va.size());
    for (size_t i = 0; i < va.size(); ++i) {
        aa[i] = va[i] * va[i];
        bb[i] = vb[i] * vb[i];
        ab[i] = va[i] * vb[i];
    }
    auto mu_a = detail::gauss_filter_valid(va, h, w, win);
    auto mu_b = detail::gauss_filter_valid(vb, h, w, win);
    auto m_aa = detail::gauss_filter_valid(aa, h, w, win);
    auto m_bb = detail::gauss_filter_valid(bb, h, w, win);
    auto m_ab = detail::gauss_filter_valid(ab, h, w, win);

    double total = 0.0;
    for (size_t i = 0; i < mu_a.size(); ++i) {
        double ma = mu_a[i], mb = mu_b[i];
        double var_a = m_aa[i] - ma * ma;
        double var_b = m_bb[i] - mb * mb;
        double cov = m_ab[i] - ma * mb;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
    }
    return total / static_cast<double>(mu_a.size());
}

// ---------------------------------------------------------------------------
// Spearman rank correlation

struct SpearmanResult {
    double rho = 0.0;
    bool defined = false;  // false when either series is constant
};

namespace detail {

inline std::vector<double> average_ranks(const std::vector<double>& v) {
    size_t n = v.size();
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t x, size_t y) { return v[x] < v[y]; });
    std::vector<double> ranks(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (size_t t = i; t <= j; ++t) ranks[order[t]] = avg;
        i = j + 1;
    }
    return ranks;
}

}  // namespace detail

inline SpearmanResult spearman_rho(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw ShapeError("spearman_rho: series length mismatch");
    if (xs.size() < 5) throw ParamError("spearman_rho: need at least 5 points");
    auto rx = detail::average_ranks(xs);
    auto ry = detail::average_ranks(ys);
    double mx = 0, my = 0;
    for (size_t i = 0; i < rx.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= static_cast<double>(rx.size());
    my /= static_cast<double>(ry.size());
    double sxy = 0, sxx = 0, syy = 0;
    for (size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    SpearmanResult res;
    if (sxx == 0.0 || syy == 0.0) return res;
    res.rho = sxy / std::sqrt(sxx * syy);
    res.defined = true;
    return res;
}

}  // namespace mowe
