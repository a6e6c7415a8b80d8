#pragma once

// Synthetic two-modality sequence corpus. Each sequence carries a smooth
// latent valence/arousal trajectory (a band-limited sinusoid mixture); each
// modality emits features through a fixed random linear map of the
// trajectory and its derivative, plus Gaussian noise at a per-frame
// scheduled SNR. Everything is deterministic under the corpus seed.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cold/encoders.hpp"
#include "cold/losses.hpp"
#include "cold/rng.hpp"

namespace cold {

using nlohmann::json;

struct SnrSegment {
    double fraction = 1.0;  // share of the sequence length
    double snr = 10.0;
};

struct CorruptionConfig {
    double fraction = 0.5;
    bool contiguous = true;
};

struct ClassBinning {
    double t_lo = -0.05;
    double t_hi = 0.05;
};

enum class LabelMode { per_frame, per_sequence };

struct SynthSpec {
    std::uint64_t seed = 1;
    std::size_t n_train = 200;
    std::size_t n_val = 40;
    std::size_t n_test = 40;
    std::size_t frames = 150;  // 30 s at a 5 fps analog
    std::size_t feat_dim_v = 16;
    std::size_t feat_dim_a = 16;
    LabelMode label_mode = LabelMode::per_frame;
    std::vector<SnrSegment> snr_schedule_v{{1.0, 10.0}};
    std::vector<SnrSegment> snr_schedule_a{{1.0, 10.0}};
    CorruptionConfig corruption;

    void validate() const {
        if (n_train < 1 || n_val < 1 || n_test < 1)
            throw std::invalid_argument("SynthSpec: split counts must be >= 1");
        if (frames < 2) throw std::invalid_argument("SynthSpec: frames must be >= 2");
        if (feat_dim_v < 1 || feat_dim_a < 1)
            throw std::invalid_argument("SynthSpec: feature widths must be >= 1");
        for (const auto* sched : {&snr_schedule_v, &snr_schedule_a}) {
            if (sched->empty()) throw std::invalid_argument("SynthSpec: empty SNR schedule");
            double total = 0.0;
            for (const auto& seg : *sched) {
                if (seg.snr <= 0.0) throw std::invalid_argument("SynthSpec: SNR must be > 0");
                if (seg.fraction <= 0.0)
                    throw std::invalid_argument("SynthSpec: segment fraction must be > 0");
                total += seg.fraction;
            }
            if (std::abs(total - 1.0) > 1e-9)
                throw std::invalid_argument("SynthSpec: SNR segment fractions must sum to 1");
        }
        if (corruption.fraction < 0.0 || corruption.fraction > 1.0)
            throw std::invalid_argument("SynthSpec: corruption fraction must be in [0, 1]");
    }
};

struct LabeledSequence {
    std::size_t id = 0;
    FeatureSequence z_v{'V', {}};
    FeatureSequence z_a{'A', {}};
    Array targets;        // (N x 2) per-frame or (1 x 2) per-sequence
    FrameClasses classes;  // binned labels, aligned with targets rows
    std::vector<bool> mask_v;  // true where the frame was corrupted
    std::vector<bool> mask_a;
    std::vector<double> snr_v;  // scheduled SNR per frame (generation metadata)
    std::vector<double> snr_a;
};

struct Corpus {
    SynthSpec spec;
    std::vector<LabeledSequence> train;
    std::vector<LabeledSequence> val;
    std::vector<LabeledSequence> test;
    double feature_rms_v = 1.0;  // corpus noise scale used by corruption
    double feature_rms_a = 1.0;

    const std::vector<LabeledSequence>& split(const std::string& name) const {
        if (name == "train") return train;
        if (name == "val") return val;
        if (name == "test") return test;
        throw std::invalid_argument("unknown split: " + name);
    }
};

// ---- label binning (3-way at -0.05 / +0.05, boundaries -> neutral) ------------

inline int bin_labels(double value, const ClassBinning& binning = {}) {
    if (value < -1.0 || value > 1.0)
        throw std::invalid_argument("bin_labels: value outside [-1, 1]");
    if (value < binning.t_lo) return 0;
    if (value <= binning.t_hi) return 1;
    return 2;
}

// ---- class weights: cross-entropy divided by relative bin size ------------------

// weight_k = total/count_k, normalized to mean 1 over the classes that are
// present; absent classes get weight 0 and are reported back to the caller.
struct ClassWeightResult {
    std::vector<double> weights;
    std::vector<int> omitted;
};

inline ClassWeightResult class_weights(const std::vector<std::size_t>& counts) {
    ClassWeightResult r;
    r.weights.assign(counts.size(), 0.0);
    std::size_t total = 0;
    for (std::size_t c : counts) total += c;
    if (total == 0) throw std::invalid_argument("class_weights: no samples");
    double sum = 0.0;
    std::size_t present = 0;
    for (std::size_t k = 0; k < counts.size(); ++k) {
        if (counts[k] == 0) {
            r.omitted.push_back(static_cast<int>(k));
            continue;
        }
        r.weights[k] = static_cast<double>(total) / static_cast<double>(counts[k]);
        sum += r.weights[k];
        ++present;
    }
    const double mean = sum / static_cast<double>(present);
    for (auto& w : r.weights) w /= mean;
    return r;
}

// ---- minority oversampling -------------------------------------------------------

// Sampling probability per item proportional to 1/count(class(item)), drawn
// with replacement; one epoch visits corpus-size items.
inline std::vector<std::size_t> weighted_sampler(const std::vector<int>& labels, Rng& rng) {
    if (labels.empty()) throw std::invalid_argument("weighted_sampler: empty labels");
    int max_label = 0;
    for (int l : labels) max_label = std::max(max_label, l);
    std::vector<std::size_t> counts(static_cast<std::size_t>(max_label) + 1, 0);
    for (int l : labels) {
        if (l < 0) throw std::invalid_argument("weighted_sampler: negative label");
        ++counts[static_cast<std::size_t>(l)];
    }
    std::vector<double> cumulative(labels.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        acc += 1.0 / static_cast<double>(counts[static_cast<std::size_t>(labels[i])]);
        cumulative[i] = acc;
    }
    std::vector<std::size_t> order(labels.size());
    for (auto& o : order) {
        const double u = rng.uniform() * acc;
        o = static_cast<std::size_t>(
            std::lower_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
        if (o >= labels.size()) o = labels.size() - 1;
    }
    return order;
}

// ---- generation ---------------------------------------------------------------------

namespace detail {

struct Sinusoid {
    double amp, freq, phase;
};

// scheduled SNR per frame
inline std::vector<double> snr_per_frame(const std::vector<SnrSegment>& sched,
                                         std::size_t n) {
    std::vector<double> snr(n);
    std::size_t frame = 0;
    double consumed = 0.0;
    for (std::size_t s = 0; s < sched.size(); ++s) {
        consumed += sched[s].fraction;
        const std::size_t end =
            (s + 1 == sched.size())
                ? n
                : std::min(n, static_cast<std::size_t>(consumed * static_cast<double>(n)));
        for (; frame < end; ++frame) snr[frame] = sched[s].snr;
    }
    for (; frame < n; ++frame) snr[frame] = sched.back().snr;
    return snr;
}

constexpr double kCleanScale = 0.5;  // approximate RMS of noise-free features

inline LabeledSequence generate_sequence(const SynthSpec& spec, std::size_t id,
                                         const Array& map_v, const Array& map_a, Rng rng) {
    const std::size_t n = spec.frames;
    LabeledSequence seq;
    seq.id = id;
    seq.z_v = {'V', Array({n, spec.feat_dim_v})};
    seq.z_a = {'A', Array({n, spec.feat_dim_a})};
    seq.mask_v.assign(n, false);
    seq.mask_a.assign(n, false);
    seq.snr_v = snr_per_frame(spec.snr_schedule_v, n);
    seq.snr_a = snr_per_frame(spec.snr_schedule_a, n);

    // latent trajectory: 3 random-phase sinusoids per emotion dimension, with
    // enough high-frequency content that frames cannot be interpolated from
    // far-away context alone
    Array traj({n, 2}), deriv({n, 2});
    for (int d = 0; d < 2; ++d) {
        std::vector<Sinusoid> waves(3);
        for (auto& w : waves)
            w = {rng.uniform(0.5, 1.5), rng.uniform(0.5, 8.0),
                 rng.uniform(0.0, 6.283185307179586)};
        double max_y = 0.0, max_dy = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double x = static_cast<double>(i) / static_cast<double>(n);
            double y = 0.0, dy = 0.0;
            for (const auto& w : waves) {
                const double arg = 6.283185307179586 * w.freq * x + w.phase;
                y += w.amp * std::sin(arg);
                dy += w.amp * w.freq * std::cos(arg);
            }
            traj.at(i, d) = y;
            deriv.at(i, d) = dy;
            max_y = std::max(max_y, std::abs(y));
            max_dy = std::max(max_dy, std::abs(dy));
        }
        for (std::size_t i = 0; i < n; ++i) {
            traj.at(i, d) /= (max_y > 0.0 ? max_y : 1.0);
            deriv.at(i, d) /= (max_dy > 0.0 ? max_dy : 1.0);
        }
    }

    // emissions: fixed linear map of (trajectory, derivative) + scheduled noise
    auto emit = [&](const Array& map, Array& out, const std::vector<double>& snr) {
        const std::size_t d_out = out.cols();
        for (std::size_t i = 0; i < n; ++i) {
            const double s[4] = {traj.at(i, 0), traj.at(i, 1), deriv.at(i, 0),
                                 deriv.at(i, 1)};
            const double noise_std = kCleanScale / snr[i];
            for (std::size_t j = 0; j < d_out; ++j) {
                double v = 0.0;
                for (std::size_t k = 0; k < 4; ++k) v += map.at(k, j) * s[k];
                out.at(i, j) = v + noise_std * rng.normal();
            }
        }
    };
    emit(map_v, seq.z_v.frames, seq.snr_v);
    emit(map_a, seq.z_a.frames, seq.snr_a);

    if (spec.label_mode == LabelMode::per_frame) {
        seq.targets = traj;
    } else {
        seq.targets = Array({1, 2});
        for (int d = 0; d < 2; ++d) {
            double m = 0.0;
            for (std::size_t i = 0; i < n; ++i) m += traj.at(i, d);
            seq.targets.at(0, d) = m / static_cast<double>(n);
        }
    }
    seq.classes.resize(seq.targets.rows());
    for (std::size_t i = 0; i < seq.targets.rows(); ++i)
        seq.classes[i] = {bin_labels(seq.targets.at(i, 0)), bin_labels(seq.targets.at(i, 1))};
    return seq;
}

}  // namespace detail

inline Corpus generate(const SynthSpec& spec) {
    spec.validate();
    Rng master = Rng::seeded(spec.seed);

    // fixed per-corpus emission maps
    Array map_v({4, spec.feat_dim_v}), map_a({4, spec.feat_dim_a});
    Rng map_rng = master.fork(0xfeed);
    for (auto& v : map_v.data) v = 0.5 * map_rng.normal();
    for (auto& v : map_a.data) v = 0.5 * map_rng.normal();

    Corpus corpus;
    corpus.spec = spec;
    const std::size_t counts[3] = {spec.n_train, spec.n_val, spec.n_test};
    std::vector<LabeledSequence>* splits[3] = {&corpus.train, &corpus.val, &corpus.test};
    std::size_t id = 0;
    for (int s = 0; s < 3; ++s) {
        for (std::size_t k = 0; k < counts[s]; ++k, ++id) {
            Rng seq_rng = master.fork(0x1000 * (s + 1) + id);
            splits[s]->push_back(
                detail::generate_sequence(spec, id, map_v, map_a, seq_rng));
        }
    }

    // corpus noise scale for feature-level corruption
    auto rms_of = [&](bool visual) {
        double acc = 0.0;
        std::size_t cnt = 0;
        for (const auto& seq : corpus.train) {
            const Array& z = visual ? seq.z_v.frames : seq.z_a.frames;
            for (double v : z.data) acc += v * v;
            cnt += z.numel();
        }
        return std::sqrt(acc / static_cast<double>(cnt));
    };
    corpus.feature_rms_v = rms_of(true);
    corpus.feature_rms_a = rms_of(false);
    return corpus;
}

// ---- feature-level corruption (face-masking analog) -----------------------------

// Replaces floor(fraction * N) frames of one modality with pure noise at the
// corpus scale; labels and the other modality stay untouched.
inline LabeledSequence corrupt_modality(const LabeledSequence& seq, char modality,
                                        double fraction, bool contiguous, Rng& rng,
                                        double noise_scale) {
    if (fraction < 0.0 || fraction > 1.0)
        throw std::invalid_argument("corrupt_modality: fraction outside [0, 1]");
    LabeledSequence out = seq;
    Array& z = modality == 'V' ? out.z_v.frames : out.z_a.frames;
    std::vector<bool>& mask = modality == 'V' ? out.mask_v : out.mask_a;
    const std::size_t n = z.rows();
    const std::size_t count = static_cast<std::size_t>(fraction * static_cast<double>(n));
    if (count == 0) return out;

    std::vector<std::size_t> chosen;
    if (contiguous) {
        const std::size_t start = count >= n ? 0 : rng.index(n - count + 1);
        for (std::size_t i = 0; i < count; ++i) chosen.push_back(start + i);
    } else {
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t j = i + rng.index(n - i);
            std::swap(idx[i], idx[j]);
            chosen.push_back(idx[i]);
        }
    }
    for (std::size_t i : chosen) {
        mask[i] = true;
        for (std::size_t j = 0; j < z.cols(); ++j)
            z.at(i, j) = noise_scale * rng.normal();
    }
    return out;
}

// ---- persistence ------------------------------------------------------------------

inline void to_json(json& j, const SnrSegment& s) {
    j = json{{"fraction", s.fraction}, {"snr", s.snr}};
}
inline void from_json(const json& j, SnrSegment& s) {
    j.at("fraction").get_to(s.fraction);
    j.at("snr").get_to(s.snr);
}

inline void to_json(json& j, const CorruptionConfig& c) {
    j = json{{"fraction", c.fraction}, {"contiguous", c.contiguous}};
}
inline void from_json(const json& j, CorruptionConfig& c) {
    j.at("fraction").get_to(c.fraction);
    j.at("contiguous").get_to(c.contiguous);
}

inline void to_json(json& j, const SynthSpec& s) {
    j = json{{"seed", s.seed},
             {"n_train", s.n_train},
             {"n_val", s.n_val},
             {"n_test", s.n_test},
             {"frames", s.frames},
             {"feat_dim_v", s.feat_dim_v},
             {"feat_dim_a", s.feat_dim_a},
             {"label_mode", s.label_mode == LabelMode::per_frame ? "per_frame"
                                                                 : "per_sequence"},
             {"snr_schedule_v", s.snr_schedule_v},
             {"snr_schedule_a", s.snr_schedule_a},
             {"corruption", s.corruption}};
}

inline void from_json(const json& j, SynthSpec& s) {
    j.at("seed").get_to(s.seed);
    j.at("n_train").get_to(s.n_train);
    j.at("n_val").get_to(s.n_val);
    j.at("n_test").get_to(s.n_test);
    j.at("frames").get_to(s.frames);
    j.at("feat_dim_v").get_to(s.feat_dim_v);
    j.at("feat_dim_a").get_to(s.feat_dim_a);
    const std::string mode = j.at("label_mode").get<std::string>();
    if (mode == "per_frame")
        s.label_mode = LabelMode::per_frame;
    else if (mode == "per_sequence")
        s.label_mode = LabelMode::per_sequence;
    else
        throw std::invalid_argument("SynthSpec: bad label_mode " + mode);
    j.at("snr_schedule_v").get_to(s.snr_schedule_v);
    j.at("snr_schedule_a").get_to(s.snr_schedule_a);
    if (j.contains("corruption")) j.at("corruption").get_to(s.corruption);
}

namespace detail {

inline json matrix_to_json(const Array& a) {
    json rows = json::array();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        json row = json::array();
        for (std::size_t j = 0; j < a.cols(); ++j) row.push_back(a.at(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Array matrix_from_json(const json& j) {
    const std::size_t r = j.size();
    if (r == 0) throw std::invalid_argument("corpus: empty matrix");
    const std::size_t c = j[0].size();
    Array a({r, c});
    for (std::size_t i = 0; i < r; ++i) {
        if (j[i].size() != c) throw std::invalid_argument("corpus: ragged matrix");
        for (std::size_t k = 0; k < c; ++k) a.at(i, k) = j[i][k].get<double>();
    }
    return a;
}

inline json sequence_to_json(const LabeledSequence& s) {
    json j;
    j["id"] = s.id;
    j["z_v"] = matrix_to_json(s.z_v.frames);
    j["z_a"] = matrix_to_json(s.z_a.frames);
    j["targets"] = matrix_to_json(s.targets);
    j["mask_v"] = s.mask_v;
    j["mask_a"] = s.mask_a;
    j["snr_v"] = s.snr_v;
    j["snr_a"] = s.snr_a;
    return j;
}

inline LabeledSequence sequence_from_json(const json& j, const SynthSpec& spec) {
    LabeledSequence s;
    s.id = j.at("id").get<std::size_t>();
    s.z_v = {'V', matrix_from_json(j.at("z_v"))};
    s.z_a = {'A', matrix_from_json(j.at("z_a"))};
    s.targets = matrix_from_json(j.at("targets"));
    s.mask_v = j.at("mask_v").get<std::vector<bool>>();
    s.mask_a = j.at("mask_a").get<std::vector<bool>>();
    s.snr_v = j.at("snr_v").get<std::vector<double>>();
    s.snr_a = j.at("snr_a").get<std::vector<double>>();

    const std::size_t n = spec.frames;
    if (s.z_v.frames.rows() != n || s.z_a.frames.rows() != n)
        throw std::invalid_argument("corpus: frame count mismatch");
    if (s.z_v.frames.cols() != spec.feat_dim_v || s.z_a.frames.cols() != spec.feat_dim_a)
        throw std::invalid_argument("corpus: feature width mismatch");
    if (s.mask_v.size() != n || s.mask_a.size() != n)
        throw std::invalid_argument("corpus: mask length mismatch");
    if (s.targets.cols() != 2)
        throw std::invalid_argument("corpus: targets must have 2 columns");
    for (double v : s.targets.data)
        if (v < -1.0 || v > 1.0)
            throw std::invalid_argument("corpus: target outside [-1, 1]");

    s.classes.resize(s.targets.rows());
    for (std::size_t i = 0; i < s.targets.rows(); ++i)
        s.classes[i] = {bin_labels(s.targets.at(i, 0)), bin_labels(s.targets.at(i, 1))};
    return s;
}

}  // namespace detail

inline void save_corpus(const Corpus& corpus, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    json meta;
    meta["version"] = 1;
    meta["spec"] = corpus.spec;
    meta["feature_rms_v"] = corpus.feature_rms_v;
    meta["feature_rms_a"] = corpus.feature_rms_a;
    {
        std::ofstream out(fs::path(dir) / "spec.json");
        if (!out) throw std::runtime_error("save_corpus: cannot write spec.json");
        out << meta.dump(2) << '\n';
    }
    const std::pair<const char*, const std::vector<LabeledSequence>*> splits[] = {
        {"train", &corpus.train}, {"val", &corpus.val}, {"test", &corpus.test}};
    for (const auto& [name, seqs] : splits) {
        std::ofstream out(fs::path(dir) / (std::string(name) + ".jsonl"));
        if (!out) throw std::runtime_error("save_corpus: cannot write split " +
                                           std::string(name));
        for (const auto& s : *seqs) out << detail::sequence_to_json(s).dump() << '\n';
    }
}

inline Corpus load_corpus(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream meta_in(fs::path(dir) / "spec.json");
    if (!meta_in) throw std::runtime_error("load_corpus: missing spec.json in " + dir);
    json meta = json::parse(meta_in);
    if (!meta.contains("version") || meta["version"].get<int>() != 1)
        throw std::runtime_error("load_corpus: unsupported corpus version");
    Corpus corpus;
    corpus.spec = meta.at("spec").get<SynthSpec>();
    corpus.spec.validate();
    corpus.feature_rms_v = meta.at("feature_rms_v").get<double>();
    corpus.feature_rms_a = meta.at("feature_rms_a").get<double>();

    const std::pair<const char*, std::vector<LabeledSequence>*> splits[] = {
        {"train", &corpus.train}, {"val", &corpus.val}, {"test", &corpus.test}};
    for (const auto& [name, seqs] : splits) {
        std::ifstream in(fs::path(dir) / (std::string(name) + ".jsonl"));
        if (!in) throw std::runtime_error("load_corpus: missing split " + std::string(name));
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            seqs->push_back(detail::sequence_from_json(json::parse(line), corpus.spec));
        }
    }
    if (corpus.train.size() != corpus.spec.n_train || corpus.val.size() != corpus.spec.n_val ||
        corpus.test.size() != corpus.spec.n_test)
        throw std::runtime_error("load_corpus: split sizes disagree with spec");
    return corpus;
}

}  // namespace cold
