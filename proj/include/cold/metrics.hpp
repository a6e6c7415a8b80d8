#pragma once

// Evaluation metrics and calibration analysis: Lin's concordance correlation
// coefficient, macro precision/recall/F1, expected calibration error with
// reliability bins, random-search temperature scaling, Spearman rank
// correlation and the paired t-test (two-sided, via a continued-fraction
// incomplete beta; absolute error below 1e-8).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cold/array.hpp"
#include "cold/rng.hpp"

namespace cold {

// ---- CCC (Eq. 9, covariance form) ------------------------------------------

// 2 cov / (var* + var^ + (mu* - mu^)^2) with population statistics; defined
// as 0 when both sequences are constant with equal means.
inline double ccc(const std::vector<double>& y_true, const std::vector<double>& y_pred) {
    if (y_true.size() != y_pred.size())
        throw std::invalid_argument("ccc: length mismatch");
    const std::size_t n = y_true.size();
    if (n < 2) throw std::invalid_argument("ccc: needs at least 2 samples");
    double mu_t = 0.0, mu_p = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mu_t += y_true[i];
        mu_p += y_pred[i];
    }
    mu_t /= n;
    mu_p /= n;
    double cov = 0.0, var_t = 0.0, var_p = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dt = y_true[i] - mu_t;
        const double dp = y_pred[i] - mu_p;
        cov += dt * dp;
        var_t += dt * dt;
        var_p += dp * dp;
    }
    cov /= n;
    var_t /= n;
    var_p /= n;
    const double denom = var_t + var_p + (mu_t - mu_p) * (mu_t - mu_p);
    if (denom < 1e-300) return 0.0;
    return 2.0 * cov / denom;
}

// ---- macro precision / recall / F1 -------------------------------------------

struct MacroPrf1 {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// Unweighted average over K classes; a class with no predictions contributes
// precision 0 (and recall 0 when absent from the truth).
inline MacroPrf1 macro_prf1(const std::vector<int>& pred, const std::vector<int>& truth,
                            int k = 3) {
    if (pred.empty() || pred.size() != truth.size())
        throw std::invalid_argument("macro_prf1: empty or misaligned labels");
    std::vector<std::size_t> tp(k, 0), fp(k, 0), fn(k, 0);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] < 0 || pred[i] >= k || truth[i] < 0 || truth[i] >= k)
            throw std::invalid_argument("macro_prf1: label outside [0, K)");
        if (pred[i] == truth[i]) {
            ++tp[pred[i]];
        } else {
            ++fp[pred[i]];
            ++fn[truth[i]];
        }
    }
    MacroPrf1 m;
    for (int c = 0; c < k; ++c) {
        const double p = tp[c] + fp[c] ? static_cast<double>(tp[c]) / (tp[c] + fp[c]) : 0.0;
        const double r = tp[c] + fn[c] ? static_cast<double>(tp[c]) / (tp[c] + fn[c]) : 0.0;
        m.precision += p;
        m.recall += r;
        m.f1 += (p + r > 0.0) ? 2.0 * p * r / (p + r) : 0.0;
    }
    m.precision /= k;
    m.recall /= k;
    m.f1 /= k;
    return m;
}

// ---- reliability bins and ECE (Eq. 10) -----------------------------------------

struct ReliabilityBin {
    double low = 0.0;
    double high = 0.0;
    std::size_t count = 0;
    double mean_confidence = 0.0;
    double mean_accuracy = 0.0;
};

struct ReliabilityBins {
    std::size_t m = 10;
    std::size_t total = 0;
    std::vector<ReliabilityBin> bins;
};

// Equal-width bins over [0, 1]; the last bin is right-closed.
inline ReliabilityBins build_reliability(const std::vector<double>& confidences,
                                         const std::vector<bool>& correct, std::size_t m) {
    if (confidences.empty() || confidences.size() != correct.size())
        throw std::invalid_argument("reliability: empty or misaligned inputs");
    if (m < 1) throw std::invalid_argument("reliability: need at least one bin");
    ReliabilityBins rb;
    rb.m = m;
    rb.total = confidences.size();
    rb.bins.resize(m);
    for (std::size_t b = 0; b < m; ++b) {
        rb.bins[b].low = static_cast<double>(b) / m;
        rb.bins[b].high = static_cast<double>(b + 1) / m;
    }
    for (std::size_t i = 0; i < confidences.size(); ++i) {
        const double c = confidences[i];
        if (c < 0.0 || c > 1.0)
            throw std::invalid_argument("reliability: confidence outside [0, 1]");
        const std::size_t b =
            std::min(m - 1, static_cast<std::size_t>(c * static_cast<double>(m)));
        rb.bins[b].count += 1;
        rb.bins[b].mean_confidence += c;
        rb.bins[b].mean_accuracy += correct[i] ? 1.0 : 0.0;
    }
    for (auto& bin : rb.bins) {
        if (bin.count) {
            bin.mean_confidence /= bin.count;
            bin.mean_accuracy /= bin.count;
        }
    }
    return rb;
}

inline double ece_of(const ReliabilityBins& rb) {
    double e = 0.0;
    for (const auto& bin : rb.bins)
        if (bin.count)
            e += (static_cast<double>(bin.count) / rb.total) *
                 std::abs(bin.mean_accuracy - bin.mean_confidence);
    return e;
}

inline double ece(const std::vector<double>& confidences, const std::vector<bool>& correct,
                  std::size_t m = 10) {
    return ece_of(build_reliability(confidences, correct, m));
}

// ---- temperature scaling ----------------------------------------------------------

struct CalibrationReport {
    double ece_before = 0.0;
    double temperature = 1.0;
    double ece_after = 0.0;
    ReliabilityBins bins_before;
    ReliabilityBins bins_after;
};

namespace detail {

inline double max_softmax_confidence(const Array& logits, std::size_t row, double temp) {
    const std::size_t k = logits.cols();
    double mx = logits.at(row, 0) / temp;
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits.at(row, j) / temp);
    double denom = 0.0, top = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
        const double e = std::exp(logits.at(row, j) / temp - mx);
        denom += e;
        top = std::max(top, e);
    }
    return top / denom;
}

}  // namespace detail

// Candidate set {1.0} plus 100 log-uniform draws in [1e-2, 1e3]; returns the
// temperature minimizing ECE on the given data. Including T=1 guarantees
// ece_after <= ece_before.
inline CalibrationReport temperature_search(const Array& logits,
                                            const std::vector<int>& truth, std::size_t m,
                                            Rng& rng) {
    if (logits.rank() != 2 || logits.rows() != truth.size() || truth.empty())
        throw std::invalid_argument("temperature_search: logits/labels misaligned");
    const std::size_t n = logits.rows();
    const std::size_t k = logits.cols();

    std::vector<bool> correct(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t arg = 0;
        for (std::size_t j = 1; j < k; ++j)
            if (logits.at(i, j) > logits.at(i, arg)) arg = j;
        correct[i] = static_cast<int>(arg) == truth[i];
    }

    auto ece_at = [&](double temp) {
        std::vector<double> conf(n);
        for (std::size_t i = 0; i < n; ++i)
            conf[i] = detail::max_softmax_confidence(logits, i, temp);
        return ece(conf, correct, m);
    };

    std::vector<double> candidates{1.0};
    const double llo = std::log(1e-2), lhi = std::log(1e3);
    for (int i = 0; i < 100; ++i) candidates.push_back(std::exp(rng.uniform(llo, lhi)));

    CalibrationReport report;
    report.ece_before = ece_at(1.0);
    double best = report.ece_before;
    double best_t = 1.0;
    for (double cand : candidates) {
        const double e = ece_at(cand);
        if (e < best) {
            best = e;
            best_t = cand;
        }
    }
    report.temperature = best_t;
    report.ece_after = best;

    std::vector<double> conf1(n), conf2(n);
    for (std::size_t i = 0; i < n; ++i) {
        conf1[i] = detail::max_softmax_confidence(logits, i, 1.0);
        conf2[i] = detail::max_softmax_confidence(logits, i, best_t);
    }
    report.bins_before = build_reliability(conf1, correct, m);
    report.bins_after = build_reliability(conf2, correct, m);
    return report;
}

// ---- Spearman rank correlation -------------------------------------------------------

namespace detail {

inline std::vector<double> average_ranks(const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
        const double avg = 0.5 * (i + j) + 1.0;  // 1-based average rank
        for (std::size_t q = i; q <= j; ++q) ranks[idx[q]] = avg;
        i = j + 1;
    }
    return ranks;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double cov = 0.0, vx = 0.0, vy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        cov += (x[i] - mx) * (y[i] - my);
        vx += (x[i] - mx) * (x[i] - mx);
        vy += (y[i] - my) * (y[i] - my);
    }
    if (vx < 1e-300 || vy < 1e-300) return 0.0;
    return cov / std::sqrt(vx * vy);
}

}  // namespace detail

// Pearson correlation of average ranks (ties averaged); constant input -> 0.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2)
        throw std::invalid_argument("spearman: needs two aligned samples of length >= 2");
    return detail::pearson(detail::average_ranks(x), detail::average_ranks(y));
}

// ---- paired t-test ----------------------------------------------------------------------

namespace detail {

// Continued fraction for the regularized incomplete beta (Lentz's method).
inline double betacf(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 1e-14;
    constexpr double kTiny = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) break;
    }
    return h;
}

inline double incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double bt = std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                               a * std::log(x) + b * std::log(1.0 - x));
    if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
    return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

// P(T > t) for Student's t with nu degrees of freedom, t >= 0.
inline double student_t_sf(double t, double nu) {
    const double x = nu / (nu + t * t);
    return 0.5 * incomplete_beta(0.5 * nu, 0.5, x);
}

}  // namespace detail

struct TTestResult {
    double t = 0.0;
    double p = 1.0;
    bool degenerate = false;  // zero-variance differences with nonzero mean
};

inline TTestResult paired_t_test(const std::vector<double>& errors_a,
                                 const std::vector<double>& errors_b) {
    if (errors_a.size() != errors_b.size() || errors_a.size() < 2)
        throw std::invalid_argument("paired_t_test: needs aligned samples of length >= 2");
    const std::size_t n = errors_a.size();
    double mean_d = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean_d += errors_a[i] - errors_b[i];
    mean_d /= n;
    double var_d = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = errors_a[i] - errors_b[i] - mean_d;
        var_d += d * d;
    }
    var_d /= (n - 1);

    TTestResult r;
    if (var_d == 0.0) {
        if (mean_d == 0.0) return {0.0, 1.0, false};
        return {mean_d > 0 ? std::numeric_limits<double>::infinity()
                           : -std::numeric_limits<double>::infinity(),
                0.0, true};
    }
    r.t = mean_d / std::sqrt(var_d / n);
    r.p = 2.0 * detail::student_t_sf(std::abs(r.t), static_cast<double>(n - 1));
    if (r.p > 1.0) r.p = 1.0;
    return r;
}

// ---- reliability CSV ----------------------------------------------------------------------

namespace detail {

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace detail

// Columns: bin_low,bin_high,count,mean_confidence,mean_accuracy. Empty bins
// write empty mean fields.
inline void reliability_export(const ReliabilityBins& rb, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("reliability_export: cannot write " + path);
    out << "bin_low,bin_high,count,mean_confidence,mean_accuracy\n";
    for (const auto& bin : rb.bins) {
        out << detail::fmt_double(bin.low) << ',' << detail::fmt_double(bin.high) << ','
            << bin.count << ',';
        if (bin.count)
            out << detail::fmt_double(bin.mean_confidence) << ','
                << detail::fmt_double(bin.mean_accuracy);
        else
            out << ',';
        out << '\n';
    }
    if (!out) throw std::runtime_error("reliability_export: write failed for " + path);
}

inline ReliabilityBins reliability_import(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("reliability_import: cannot read " + path);
    std::string line;
    std::getline(in, line);  // header
    ReliabilityBins rb;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        ReliabilityBin bin;
        std::getline(ss, field, ',');
        bin.low = std::stod(field);
        std::getline(ss, field, ',');
        bin.high = std::stod(field);
        std::getline(ss, field, ',');
        bin.count = static_cast<std::size_t>(std::stoull(field));
        std::getline(ss, field, ',');
        bin.mean_confidence = field.empty() ? 0.0 : std::stod(field);
        std::getline(ss, field, ',');
        bin.mean_accuracy = field.empty() ? 0.0 : std::stod(field);
        rb.total += bin.count;
        rb.bins.push_back(bin);
    }
    rb.m = rb.bins.size();
    return rb;
}

}  // namespace cold
