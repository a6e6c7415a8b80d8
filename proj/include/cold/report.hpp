#pragma once

// Cross-run aggregation: comparison tables over eval/ablation/robustness run
// directories plus the paired t-test matrix over per-sequence errors.

#include <filesystem>
#include <iomanip>

#include "cold/harness.hpp"

namespace cold {

struct RunRecord {
    std::string label;
    json metrics;                         // from metrics.json, when present
    std::optional<json> robustness;      // from robustness.json
    std::optional<json> ablation;        // from ablation.json
};

inline RunRecord read_run_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::exists(dir)) throw std::invalid_argument("report: missing run dir " + dir);
    RunRecord rec;
    rec.label = fs::path(dir).filename().string();
    if (rec.label.empty()) rec.label = fs::path(dir).parent_path().filename().string();
    const auto metrics_path = fs::path(dir) / "metrics.json";
    if (fs::exists(metrics_path)) {
        std::ifstream in(metrics_path);
        rec.metrics = json::parse(in);
    }
    const auto robust_path = fs::path(dir) / "robustness.json";
    if (fs::exists(robust_path)) {
        std::ifstream in(robust_path);
        rec.robustness = json::parse(in);
    }
    const auto ablation_path = fs::path(dir) / "ablation.json";
    if (fs::exists(ablation_path)) {
        std::ifstream in(ablation_path);
        rec.ablation = json::parse(in);
    }
    if (rec.metrics.is_null() && !rec.robustness && !rec.ablation)
        throw std::invalid_argument("report: no metrics/robustness/ablation in " + dir);
    return rec;
}

namespace detail {

inline std::string num_or_dash(const json& j, const char* key) {
    if (!j.contains(key) || j[key].is_null()) return "-";
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << j[key].get<double>();
    return os.str();
}

}  // namespace detail

// Plain-text comparison tables plus the t-test matrix.
inline std::string render_report_text(const std::vector<RunRecord>& runs) {
    std::ostringstream os;
    os << "== model comparison ==\n";
    os << std::left << std::setw(28) << "run" << std::setw(10) << "ccc_v" << std::setw(10)
       << "ccc_a" << std::setw(10) << "ccc_avg" << std::setw(10) << "P" << std::setw(10)
       << "R" << std::setw(10) << "F1" << std::setw(12) << "ece_before" << std::setw(12)
       << "ece_after" << '\n';
    for (const auto& r : runs) {
        if (r.metrics.is_null()) continue;
        os << std::left << std::setw(28) << r.label;
        for (const char* key : {"ccc_valence", "ccc_arousal", "ccc_avg", "precision",
                                "recall", "f1"})
            os << std::setw(10) << detail::num_or_dash(r.metrics, key);
        os << std::setw(12) << detail::num_or_dash(r.metrics, "ece_before") << std::setw(12)
           << detail::num_or_dash(r.metrics, "ece_after") << '\n';
    }

    bool any_robust = false;
    for (const auto& r : runs) any_robust |= r.robustness.has_value();
    if (any_robust) {
        os << "\n== robustness (clean vs corrupted) ==\n";
        os << std::left << std::setw(28) << "run" << std::setw(12) << "clean_avg"
           << std::setw(14) << "corrupted_avg" << std::setw(14) << "relative_drop" << '\n';
        for (const auto& r : runs) {
            if (!r.robustness) continue;
            const json& rb = *r.robustness;
            os << std::left << std::setw(28) << r.label << std::setw(12)
               << detail::num_or_dash(rb["clean"], "ccc_avg") << std::setw(14)
               << detail::num_or_dash(rb["corrupted"], "ccc_avg");
            if (!rb["clean"]["ccc_avg"].is_null() && !rb["corrupted"]["ccc_avg"].is_null()) {
                const double c = rb["clean"]["ccc_avg"].get<double>();
                const double k = rb["corrupted"]["ccc_avg"].get<double>();
                os << std::setw(14) << std::fixed << std::setprecision(4)
                   << (c != 0.0 ? (c - k) / std::abs(c) : 0.0);
            } else {
                os << std::setw(14) << "-";
            }
            os << '\n';
        }
    }

    bool any_ablation = false;
    for (const auto& r : runs) any_ablation |= r.ablation.has_value();
    if (any_ablation) {
        os << "\n== ablation (validation CCC) ==\n";
        os << std::left << std::setw(28) << "configuration" << std::setw(10) << "ccc_v"
           << std::setw(10) << "ccc_a" << '\n';
        for (const auto& r : runs) {
            if (!r.ablation) continue;
            for (const auto& row : *r.ablation)
                os << std::left << std::setw(28) << row["name"].get<std::string>()
                   << std::setw(10) << detail::num_or_dash(row, "ccc_valence")
                   << std::setw(10) << detail::num_or_dash(row, "ccc_arousal") << '\n';
        }
    }

    // paired t-tests over per-sequence errors (runs evaluated on one split)
    std::vector<const RunRecord*> testable;
    for (const auto& r : runs)
        if (!r.metrics.is_null() && r.metrics.contains("per_sequence_error"))
            testable.push_back(&r);
    if (testable.size() >= 2 ||
        (testable.size() == 1 &&
         testable[0]->metrics["per_sequence_error"].size() >= 2)) {
        os << "\n== paired t-tests on per-sequence error (two-sided) ==\n";
        for (const auto* a : testable) {
            for (const auto* b : testable) {
                const auto ea = a->metrics["per_sequence_error"].get<std::vector<double>>();
                const auto eb = b->metrics["per_sequence_error"].get<std::vector<double>>();
                if (ea.size() != eb.size() || ea.size() < 2) continue;
                TTestResult tt = paired_t_test(ea, eb);
                os << "(" << a->label << ", " << b->label << ") p=" << std::scientific
                   << std::setprecision(2) << tt.p << (tt.degenerate ? " (degenerate)" : "")
                   << '\n';
            }
        }
    }
    return os.str();
}

inline std::string render_report_csv(const std::vector<RunRecord>& runs) {
    std::ostringstream os;
    os << "kind,label,ccc_valence,ccc_arousal,ccc_avg,precision,recall,f1,ece_before,"
          "ece_after\n";
    auto raw = [](const json& j, const char* key) {
        if (!j.contains(key) || j[key].is_null()) return std::string();
        return detail::fmt_double(j[key].get<double>());
    };
    for (const auto& r : runs) {
        if (!r.metrics.is_null()) {
            os << "eval," << r.label;
            for (const char* key : {"ccc_valence", "ccc_arousal", "ccc_avg", "precision",
                                    "recall", "f1", "ece_before", "ece_after"})
                os << ',' << raw(r.metrics, key);
            os << '\n';
        }
        if (r.robustness) {
            os << "robust_clean," << r.label << ',' << raw((*r.robustness)["clean"], "ccc_valence")
               << ',' << raw((*r.robustness)["clean"], "ccc_arousal") << ','
               << raw((*r.robustness)["clean"], "ccc_avg") << ",,,,,\n";
            os << "robust_corrupted," << r.label << ','
               << raw((*r.robustness)["corrupted"], "ccc_valence") << ','
               << raw((*r.robustness)["corrupted"], "ccc_arousal") << ','
               << raw((*r.robustness)["corrupted"], "ccc_avg") << ",,,,,\n";
        }
        if (r.ablation) {
            for (const auto& row : *r.ablation)
                os << "ablation," << row["name"].get<std::string>() << ','
                   << raw(row, "ccc_valence") << ',' << raw(row, "ccc_arousal") << ",,,,,,\n";
        }
    }
    return os.str();
}

}  // namespace cold
