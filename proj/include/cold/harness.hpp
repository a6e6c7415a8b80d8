#pragma once

// Training and evaluation harness: Adam with decoupled weight decay, cosine
// annealing with warm restarts, the mini-batch loop over Eq. 8, checkpoint
// IO, split evaluation with optional corruption and temperature scaling,
// and the ablation grid runner.

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cold/losses.hpp"
#include "cold/metrics.hpp"
#include "cold/synthdata.hpp"

namespace cold {

// ---- optimizer ---------------------------------------------------------------

struct OptimizerState {
    std::map<std::string, Array> m;
    std::map<std::string, Array> v;
    std::size_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Standard Adam with bias correction; decoupled weight decay shrinks the
// parameters before the Adam delta. Non-finite gradients skip the update and
// report false.
inline bool adam_step(ParamStore& params, const std::map<std::string, Array>& grads,
                      OptimizerState& state, double lr, double weight_decay) {
    for (const auto& [name, g] : grads) {
        if (!g.all_finite()) return false;
        if (!params.count(name))
            throw std::invalid_argument("adam_step: gradient for unknown parameter " + name);
        if (!params.at(name).same_shape(g))
            throw std::invalid_argument("adam_step: gradient shape mismatch for " + name);
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (auto& [name, p] : params) {
        auto git = grads.find(name);
        if (git == grads.end()) continue;
        const Array& g = git->second;
        Array& m = state.m.try_emplace(name, Array(p.shape)).first->second;
        Array& v = state.v.try_emplace(name, Array(p.shape)).first->second;
        for (std::size_t i = 0; i < p.numel(); ++i) {
            if (weight_decay != 0.0) p[i] *= 1.0 - lr * weight_decay;
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
    return true;
}

// ---- learning-rate schedule -----------------------------------------------------

// Cosine annealing with warm restarts; periods grow by `mult` starting from
// `first_period` epochs, lr_min = 0. A period contains its right endpoint,
// so the last step of a cycle reaches zero before the restart.
inline double cosine_warm_restart_lr(std::size_t step, std::size_t steps_per_epoch,
                                     double base_lr, double first_period = 1.0,
                                     double mult = 2.0) {
    if (steps_per_epoch == 0)
        throw std::invalid_argument("cosine_warm_restart_lr: steps_per_epoch must be > 0");
    const double epoch =
        static_cast<double>(step) / static_cast<double>(steps_per_epoch);
    double start = 0.0, period = first_period;
    while (epoch > start + period + 1e-12) {
        start += period;
        period *= mult;
    }
    const double t = (epoch - start) / period;
    return 0.5 * base_lr * (1.0 + std::cos(3.14159265358979323846 * t));
}

// ---- configuration ----------------------------------------------------------------

struct SchedulerConfig {
    double first_restart_epochs = 1.0;
    double period_mult = 2.0;
};

struct TrainConfig {
    FusionMode fusion = FusionMode::cold;
    Task task = Task::regression;
    std::size_t batch_size = 4;
    double base_lr = 5e-3;
    double weight_decay = 1e-4;
    LossWeights loss_weights;
    SchedulerConfig scheduler;
    std::size_t epochs = 30;
    std::uint64_t seed = 1;
    EncoderConfig enc;  // hidden/layers/bidirectional/dropout; feat dims from corpus
    bool grads_through_distances = false;

    void validate() const {
        if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size >= 1");
        if (base_lr <= 0.0) throw std::invalid_argument("TrainConfig: base_lr > 0");
        if (weight_decay < 0.0) throw std::invalid_argument("TrainConfig: weight_decay >= 0");
        if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs >= 1");
        if (scheduler.first_restart_epochs <= 0.0 || scheduler.period_mult < 1.0)
            throw std::invalid_argument("TrainConfig: bad scheduler parameters");
        loss_weights.validate();
        enc.validate();
    }
};

inline void to_json(json& j, const LossWeights& w) {
    j = json{{"co_v", w.co_v}, {"co_a", w.co_a}, {"co_av", w.co_av}, {"regu", w.regu}};
}
inline void from_json(const json& j, LossWeights& w) {
    j.at("co_v").get_to(w.co_v);
    j.at("co_a").get_to(w.co_a);
    j.at("co_av").get_to(w.co_av);
    j.at("regu").get_to(w.regu);
}

inline void to_json(json& j, const SchedulerConfig& s) {
    j = json{{"first_restart_epochs", s.first_restart_epochs},
             {"period_mult", s.period_mult}};
}
inline void from_json(const json& j, SchedulerConfig& s) {
    j.at("first_restart_epochs").get_to(s.first_restart_epochs);
    j.at("period_mult").get_to(s.period_mult);
}

inline void to_json(json& j, const EncoderConfig& e) {
    j = json{{"hidden", e.hidden},
             {"layers", e.layers},
             {"bidirectional", e.bidirectional},
             {"dropout", e.dropout},
             {"sigma_floor", e.sigma_floor}};
}
inline void from_json(const json& j, EncoderConfig& e) {
    j.at("hidden").get_to(e.hidden);
    j.at("layers").get_to(e.layers);
    j.at("bidirectional").get_to(e.bidirectional);
    j.at("dropout").get_to(e.dropout);
    if (j.contains("sigma_floor")) j.at("sigma_floor").get_to(e.sigma_floor);
}

inline void to_json(json& j, const TrainConfig& c) {
    j = json{{"fusion", to_string(c.fusion)},
             {"task", to_string(c.task)},
             {"batch_size", c.batch_size},
             {"base_lr", c.base_lr},
             {"weight_decay", c.weight_decay},
             {"loss_weights", c.loss_weights},
             {"scheduler", c.scheduler},
             {"epochs", c.epochs},
             {"seed", c.seed},
             {"encoder", c.enc},
             {"grads_through_distances", c.grads_through_distances}};
}
inline void from_json(const json& j, TrainConfig& c) {
    c.fusion = fusion_mode_from(j.at("fusion").get<std::string>());
    c.task = task_from(j.at("task").get<std::string>());
    if (j.contains("batch_size")) j.at("batch_size").get_to(c.batch_size);
    if (j.contains("base_lr")) j.at("base_lr").get_to(c.base_lr);
    if (j.contains("weight_decay")) j.at("weight_decay").get_to(c.weight_decay);
    if (j.contains("loss_weights")) j.at("loss_weights").get_to(c.loss_weights);
    if (j.contains("scheduler")) j.at("scheduler").get_to(c.scheduler);
    if (j.contains("epochs")) j.at("epochs").get_to(c.epochs);
    if (j.contains("seed")) j.at("seed").get_to(c.seed);
    if (j.contains("encoder")) j.at("encoder").get_to(c.enc);
    if (j.contains("grads_through_distances"))
        j.at("grads_through_distances").get_to(c.grads_through_distances);
}

inline ModelConfig model_config_for(const TrainConfig& cfg, const SynthSpec& spec) {
    ModelConfig mc;
    mc.fusion = cfg.fusion;
    mc.task = cfg.task;
    mc.feat_dim_v = spec.feat_dim_v;
    mc.feat_dim_a = spec.feat_dim_a;
    mc.enc = cfg.enc;
    mc.per_sequence_labels = spec.label_mode == LabelMode::per_sequence;
    return mc;
}

// ---- checkpoints ------------------------------------------------------------------

inline json checkpoint_to_json(const ParamStore& params, const ModelConfig& mc) {
    json j;
    j["version"] = 1;
    j["fusion"] = to_string(mc.fusion);
    j["task"] = to_string(mc.task);
    j["feat_dim_v"] = mc.feat_dim_v;
    j["feat_dim_a"] = mc.feat_dim_a;
    j["per_sequence_labels"] = mc.per_sequence_labels;
    j["encoder"] = mc.enc;
    json p;
    for (const auto& [name, value] : params)
        p[name] = json{{"shape", value.shape}, {"data", value.data}};
    j["params"] = std::move(p);
    return j;
}

inline void save_checkpoint(const ParamStore& params, const ModelConfig& mc,
                            const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_checkpoint: cannot write " + path);
    out << checkpoint_to_json(params, mc).dump(1) << '\n';
}

struct Checkpoint {
    ParamStore params;
    ModelConfig model;
};

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_checkpoint: cannot read " + path);
    json j = json::parse(in);
    if (!j.contains("version") || j["version"].get<int>() != 1)
        throw std::runtime_error("load_checkpoint: unsupported checkpoint version");
    Checkpoint ck;
    ck.model.fusion = fusion_mode_from(j.at("fusion").get<std::string>());
    ck.model.task = task_from(j.at("task").get<std::string>());
    j.at("feat_dim_v").get_to(ck.model.feat_dim_v);
    j.at("feat_dim_a").get_to(ck.model.feat_dim_a);
    j.at("per_sequence_labels").get_to(ck.model.per_sequence_labels);
    j.at("encoder").get_to(ck.model.enc);
    for (const auto& [name, pj] : j.at("params").items()) {
        Array a(pj.at("shape").get<std::vector<std::size_t>>(),
                pj.at("data").get<std::vector<double>>());
        ck.params.emplace(name, std::move(a));
    }
    return ck;
}

// ---- evaluation ----------------------------------------------------------------------

struct CorruptOptions {
    char modality = 'V';
    double fraction = 0.5;
    bool contiguous = true;
    std::uint64_t seed = 99;
};

struct EvalOptions {
    std::optional<CorruptOptions> corrupt;
    bool temperature_scaling = false;
    std::size_t ece_bins = 10;
    std::uint64_t temp_search_seed = 7;
};

struct TraceRow {
    std::size_t seq = 0;
    std::size_t frame = 0;
    double w_v = 0, w_a = 0;                // cold only, else NaN
    double sigma_norm_v = 0, sigma_norm_a = 0;
    double pred_valence = 0, pred_arousal = 0;      // fused branch
    double pred_v_valence = 0, pred_v_arousal = 0;  // unimodal branches, else NaN
    double pred_a_valence = 0, pred_a_arousal = 0;
    double target_valence = 0, target_arousal = 0;
    bool masked_v = false, masked_a = false;
};

struct EvalResult {
    json metrics;  // the metrics summary object
    std::vector<TraceRow> traces;
    std::optional<ReliabilityBins> reliability;        // pooled over both dims
    std::vector<double> per_sequence_error;            // t-test pairing unit
};

namespace detail {

inline int argmax3(const Array& a, std::size_t row, std::size_t off) {
    int best = 0;
    for (int j = 1; j < 3; ++j)
        if (a.at(row, off + j) > a.at(row, off + best)) best = j;
    return best;
}

inline void softmax3_inplace(double* p) {
    const double mx = std::max(p[0], std::max(p[1], p[2]));
    double s = 0.0;
    for (int j = 0; j < 3; ++j) {
        p[j] = std::exp(p[j] - mx);
        s += p[j];
    }
    for (int j = 0; j < 3; ++j) p[j] /= s;
}

}  // namespace detail

// Eval-mode forward over a split with the metrics of §5.2, per-frame traces
// and optional corruption / temperature scaling.
inline EvalResult evaluate(const ParamStore& params, const ModelConfig& mc,
                           const Corpus& corpus, const std::string& split_name,
                           const EvalOptions& opts = {}) {
    const auto& split_ref = corpus.split(split_name);
    if (split_ref.empty()) throw std::invalid_argument("evaluate: empty split");
    if (corpus.spec.feat_dim_v != mc.feat_dim_v || corpus.spec.feat_dim_a != mc.feat_dim_a)
        throw std::invalid_argument(
            "evaluate: corpus feature widths do not match the checkpoint");
    if ((corpus.spec.label_mode == LabelMode::per_sequence) != mc.per_sequence_labels)
        throw std::invalid_argument("evaluate: label mode does not match the checkpoint");

    std::vector<LabeledSequence> corrupted;
    std::vector<const LabeledSequence*> seqs;
    if (opts.corrupt) {
        Rng rng = Rng::seeded(opts.corrupt->seed);
        const double scale =
            opts.corrupt->modality == 'V' ? corpus.feature_rms_v : corpus.feature_rms_a;
        corrupted.reserve(split_ref.size());
        for (const auto& s : split_ref)
            corrupted.push_back(corrupt_modality(s, opts.corrupt->modality,
                                                 opts.corrupt->fraction,
                                                 opts.corrupt->contiguous, rng, scale));
        for (const auto& s : corrupted) seqs.push_back(&s);
    } else {
        for (const auto& s : split_ref) seqs.push_back(&s);
    }

    const bool cls = mc.task == Task::classification;
    EvalResult result;

    std::vector<double> pred_val, pred_aro, true_val, true_aro;  // regression pools
    std::vector<int> pred_cls_v, pred_cls_a, true_cls_v, true_cls_a;
    std::vector<double> conf_pool;
    std::vector<bool> correct_pool;
    std::vector<std::vector<double>> logit_rows[2];  // per dim, for temp scaling
    std::vector<int> logit_truth[2];

    const std::size_t eval_batch = 4;
    for (std::size_t base = 0; base < seqs.size(); base += eval_batch) {
        const std::size_t bsz = std::min(eval_batch, seqs.size() - base);
        std::vector<const Array*> z_v(bsz), z_a(bsz);
        for (std::size_t b = 0; b < bsz; ++b) {
            z_v[b] = &seqs[base + b]->z_v.frames;
            z_a[b] = &seqs[base + b]->z_a.frames;
        }
        Tape t;
        ParamVars pv = enter_params(t, params);
        RunContext run;  // eval mode
        auto fwd = forward_batch(t, pv, mc, z_v, z_a, run);

        for (std::size_t b = 0; b < bsz; ++b) {
            const LabeledSequence& seq = *seqs[base + b];
            const Array y_av = t.value(fwd[b].y_av);
            const bool probs = fwd[b].fused_is_probs;
            std::optional<Array> y_v, y_a, w_v, w_a, s_v, s_a;
            if (fwd[b].y_v) y_v = t.value(*fwd[b].y_v);
            if (fwd[b].y_a) y_a = t.value(*fwd[b].y_a);
            if (fwd[b].weights) {
                w_v = t.value(fwd[b].weights->v);
                w_a = t.value(fwd[b].weights->a);
                Tape tn;
                s_v = tn.value(l2norm_rows(tn.leaf(t.value(fwd[b].lat_v->sigma))));
                s_a = tn.value(l2norm_rows(tn.leaf(t.value(fwd[b].lat_a->sigma))));
            }

            const std::size_t rows = seq.targets.rows();
            double seq_err = 0.0;
            for (std::size_t i = 0; i < rows; ++i) {
                TraceRow row;
                row.seq = seq.id;
                row.frame = i;
                const double nan = std::nan("");
                row.w_v = w_v ? (*w_v)[i] : nan;
                row.w_a = w_a ? (*w_a)[i] : nan;
                row.sigma_norm_v = s_v ? (*s_v)[i] : nan;
                row.sigma_norm_a = s_a ? (*s_a)[i] : nan;
                row.target_valence = seq.targets.at(i, 0);
                row.target_arousal = seq.targets.at(i, 1);
                row.masked_v = i < seq.mask_v.size() && seq.mask_v[i];
                row.masked_a = i < seq.mask_a.size() && seq.mask_a[i];

                if (!cls) {
                    row.pred_valence = y_av.at(i, 0);
                    row.pred_arousal = y_av.at(i, 1);
                    row.pred_v_valence = y_v ? y_v->at(i, 0) : nan;
                    row.pred_v_arousal = y_v ? y_v->at(i, 1) : nan;
                    row.pred_a_valence = y_a ? y_a->at(i, 0) : nan;
                    row.pred_a_arousal = y_a ? y_a->at(i, 1) : nan;
                    pred_val.push_back(row.pred_valence);
                    pred_aro.push_back(row.pred_arousal);
                    true_val.push_back(row.target_valence);
                    true_aro.push_back(row.target_arousal);
                    seq_err += 0.5 * (std::abs(row.pred_valence - row.target_valence) +
                                      std::abs(row.pred_arousal - row.target_arousal));
                } else {
                    double frame_err = 0.0;
                    for (int d = 0; d < 2; ++d) {
                        double p[3] = {y_av.at(i, 3 * d + 0), y_av.at(i, 3 * d + 1),
                                       y_av.at(i, 3 * d + 2)};
                        if (!probs) detail::softmax3_inplace(p);
                        const int arg = p[0] >= p[1] && p[0] >= p[2] ? 0
                                        : (p[1] >= p[2] ? 1 : 2);
                        const int truth = seq.classes[i][d];
                        (d == 0 ? pred_cls_v : pred_cls_a).push_back(arg);
                        (d == 0 ? true_cls_v : true_cls_a).push_back(truth);
                        conf_pool.push_back(p[arg]);
                        correct_pool.push_back(arg == truth);
                        frame_err += arg == truth ? 0.0 : 0.5;
                        // temperature scaling runs on logits (or log-probs)
                        std::vector<double> lrow(3);
                        for (int jd = 0; jd < 3; ++jd)
                            lrow[jd] = probs
                                           ? std::log(std::max(y_av.at(i, 3 * d + jd),
                                                               kLogClamp))
                                           : y_av.at(i, 3 * d + jd);
                        logit_rows[d].push_back(std::move(lrow));
                        logit_truth[d].push_back(truth);
                        (d == 0 ? row.pred_valence : row.pred_arousal) =
                            static_cast<double>(arg);
                        if (y_v) {
                            const int uv = detail::argmax3(*y_v, i, 3 * d);
                            (d == 0 ? row.pred_v_valence : row.pred_v_arousal) = uv;
                        }
                        if (y_a) {
                            const int ua = detail::argmax3(*y_a, i, 3 * d);
                            (d == 0 ? row.pred_a_valence : row.pred_a_arousal) = ua;
                        }
                        row.target_valence = seq.targets.at(i, 0);
                        row.target_arousal = seq.targets.at(i, 1);
                    }
                    seq_err += frame_err;
                }
                result.traces.push_back(row);
            }
            result.per_sequence_error.push_back(seq_err / static_cast<double>(rows));
        }
    }

    json m;
    m["t_tests"] = json::array();
    if (!cls) {
        m["ccc_valence"] = ccc(true_val, pred_val);
        m["ccc_arousal"] = ccc(true_aro, pred_aro);
        m["ccc_avg"] =
            0.5 * (m["ccc_valence"].get<double>() + m["ccc_arousal"].get<double>());
        m["precision"] = nullptr;
        m["recall"] = nullptr;
        m["f1"] = nullptr;
        m["ece_before"] = nullptr;
        m["ece_after"] = nullptr;
    } else {
        MacroPrf1 pv1 = macro_prf1(pred_cls_v, true_cls_v);
        MacroPrf1 pa1 = macro_prf1(pred_cls_a, true_cls_a);
        m["ccc_valence"] = nullptr;
        m["ccc_arousal"] = nullptr;
        m["ccc_avg"] = nullptr;
        m["precision"] = 0.5 * (pv1.precision + pa1.precision);
        m["recall"] = 0.5 * (pv1.recall + pa1.recall);
        m["f1"] = 0.5 * (pv1.f1 + pa1.f1);
        m["precision_valence"] = pv1.precision;
        m["recall_valence"] = pv1.recall;
        m["f1_valence"] = pv1.f1;
        m["precision_arousal"] = pa1.precision;
        m["recall_arousal"] = pa1.recall;
        m["f1_arousal"] = pa1.f1;
        result.reliability = build_reliability(conf_pool, correct_pool, opts.ece_bins);
        const double ece_pooled = ece_of(*result.reliability);
        m["ece_before"] = ece_pooled;
        if (opts.temperature_scaling) {
            double before = 0.0, after = 0.0;
            json temps = json::array();
            for (int d = 0; d < 2; ++d) {
                Array logits({logit_rows[d].size(), 3});
                for (std::size_t i = 0; i < logit_rows[d].size(); ++i)
                    for (int jd = 0; jd < 3; ++jd) logits.at(i, jd) = logit_rows[d][i][jd];
                Rng rng = Rng::seeded(opts.temp_search_seed + d);
                CalibrationReport rep =
                    temperature_search(logits, logit_truth[d], opts.ece_bins, rng);
                before += 0.5 * rep.ece_before;
                after += 0.5 * rep.ece_after;
                temps.push_back(json{{"dim", d == 0 ? "valence" : "arousal"},
                                     {"temperature", rep.temperature},
                                     {"ece_before", rep.ece_before},
                                     {"ece_after", rep.ece_after}});
            }
            m["ece_before"] = before;
            m["ece_after"] = after;
            m["temperature_scaling"] = std::move(temps);
        } else {
            m["ece_after"] = nullptr;
        }
    }
    m["per_sequence_error"] = result.per_sequence_error;
    m["split"] = split_name;
    m["task"] = to_string(mc.task);
    m["fusion"] = to_string(mc.fusion);
    if (opts.corrupt) {
        m["corruption"] = json{{"modality", std::string(1, opts.corrupt->modality)},
                               {"fraction", opts.corrupt->fraction},
                               {"contiguous", opts.corrupt->contiguous},
                               {"seed", opts.corrupt->seed}};
    }
    result.metrics = std::move(m);
    return result;
}

// ---- training loop ----------------------------------------------------------------------

struct TrainLogLine {
    std::size_t step = 0;
    double lr = 0.0;
    LossBreakdown loss;
};

struct TrainResult {
    ParamStore params;       // best-validation snapshot
    ModelConfig model;
    std::vector<TrainLogLine> log;
    double best_val_metric = 0.0;
    std::string selection_metric;
    std::size_t best_epoch = 0;
    std::size_t skipped_steps = 0;  // non-finite gradients
};

namespace detail {

inline double validation_metric(const ParamStore& params, const ModelConfig& mc,
                                const Corpus& corpus) {
    EvalResult ev = evaluate(params, mc, corpus, "val");
    if (mc.task == Task::regression) return ev.metrics["ccc_avg"].get<double>();
    return ev.metrics["f1"].get<double>();
}

inline int sequence_class(const LabeledSequence& seq) {
    double mv = 0.0, ma = 0.0;
    for (std::size_t i = 0; i < seq.targets.rows(); ++i) {
        mv += seq.targets.at(i, 0);
        ma += seq.targets.at(i, 1);
    }
    mv /= static_cast<double>(seq.targets.rows());
    ma /= static_cast<double>(seq.targets.rows());
    return 3 * bin_labels(mv) + bin_labels(ma);
}

}  // namespace detail

// Runs mini-batch optimization of Eq. 8 (baselines reduce to plain L_emo) and
// returns the checkpoint with the best validation average CCC (regression)
// or macro F1 (classification). Deterministic given (config, corpus).
inline TrainResult train(const TrainConfig& cfg, const Corpus& corpus) {
    cfg.validate();
    const ModelConfig mc = model_config_for(cfg, corpus.spec);
    if (corpus.train.empty()) throw std::invalid_argument("train: empty train split");
    if (mc.per_sequence_labels && cfg.fusion == FusionMode::cold && cfg.batch_size < 2)
        throw std::invalid_argument(
            "train: per-sequence cold training needs batch_size >= 2");

    Rng init_rng = Rng::seeded(cfg.seed);
    Rng order_rng = init_rng.fork(1);
    Rng noise_rng = init_rng.fork(2);
    Rng dropout_rng = init_rng.fork(3);

    ParamStore params = init_model_params(mc, init_rng);

    // class weights from train-split counts (classification only)
    ClassWeights class_wts;
    if (cfg.task == Task::classification) {
        for (int d = 0; d < 2; ++d) {
            std::vector<std::size_t> counts(3, 0);
            for (const auto& seq : corpus.train)
                for (const auto& c : seq.classes) ++counts[c[d]];
            ClassWeightResult cw = class_weights(counts);
            class_wts.per_dim[d] = cw.weights;
        }
    }

    const std::size_t n_train = corpus.train.size();
    const std::size_t steps_per_epoch =
        std::max<std::size_t>(1, (n_train + cfg.batch_size - 1) / cfg.batch_size);

    TrainResult result;
    result.model = mc;
    result.selection_metric = cfg.task == Task::regression ? "ccc_avg" : "macro_f1";
    result.best_val_metric = -std::numeric_limits<double>::infinity();

    OptimizerState opt;
    std::size_t step = 0;
    int nonfinite_streak = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        // epoch order: minority-oversampled for classification, shuffle otherwise
        std::vector<std::size_t> order(n_train);
        if (cfg.task == Task::classification) {
            std::vector<int> labels(n_train);
            for (std::size_t i = 0; i < n_train; ++i)
                labels[i] = detail::sequence_class(corpus.train[i]);
            order = weighted_sampler(labels, order_rng);
        } else {
            std::iota(order.begin(), order.end(), 0);
            for (std::size_t i = n_train; i > 1; --i)
                std::swap(order[i - 1], order[order_rng.index(i)]);
        }

        for (std::size_t base = 0; base < n_train; base += cfg.batch_size) {
            const std::size_t bsz = std::min(cfg.batch_size, n_train - base);
            if (mc.per_sequence_labels && cfg.fusion == FusionMode::cold && bsz < 2)
                break;  // COLD vectors need >= 2 items in this mode
            std::vector<const Array*> z_v(bsz), z_a(bsz);
            BatchTargets targets;
            for (std::size_t b = 0; b < bsz; ++b) {
                const LabeledSequence& seq = corpus.train[order[base + b]];
                z_v[b] = &seq.z_v.frames;
                z_a[b] = &seq.z_a.frames;
                targets.regression.push_back(&seq.targets);
                targets.classes.push_back(&seq.classes);
            }

            const double lr =
                cosine_warm_restart_lr(step, steps_per_epoch, cfg.base_lr,
                                       cfg.scheduler.first_restart_epochs,
                                       cfg.scheduler.period_mult);

            Tape t;
            ParamVars pv = enter_params(t, params);
            RunContext run;
            run.train = true;
            run.noise = NoiseSource{&noise_rng};
            run.dropout_rng = &dropout_rng;

            LossBreakdown breakdown;
            bool ok = true;
            try {
                auto fwd = forward_batch(t, pv, mc, z_v, z_a, run);
                LossGraph lg = build_batch_loss(t, mc, fwd, targets, cfg.loss_weights,
                                                class_wts, cfg.grads_through_distances);
                breakdown = lg.values;
                t.backward(lg.total);
            } catch (const std::runtime_error& e) {
                ok = false;  // non-finite forward/loss: skip this step
            }

            if (!ok) {
                if (++nonfinite_streak >= 3)
                    throw std::runtime_error(
                        "train: loss non-finite for 3 consecutive steps (diverged) at step " +
                        std::to_string(step));
                ++result.skipped_steps;
                ++step;
                continue;
            }
            nonfinite_streak = 0;

            std::map<std::string, Array> grads;
            for (const auto& [name, var] : pv.vars) grads.emplace(name, t.grad(var));
            if (!adam_step(params, grads, opt, lr, cfg.weight_decay))
                ++result.skipped_steps;

            result.log.push_back({step, lr, breakdown});
            ++step;
        }

        const double metric = detail::validation_metric(params, mc, corpus);
        if (metric > result.best_val_metric) {
            result.best_val_metric = metric;
            result.params = params;
            result.best_epoch = epoch;
        }
    }
    if (result.params.empty()) result.params = params;
    return result;
}

inline json train_log_to_json(const TrainLogLine& line) {
    return json{{"step", line.step},       {"lr", line.lr},
                {"l_emo", line.loss.emo},  {"l_co_v", line.loss.co_v},
                {"l_co_a", line.loss.co_a}, {"l_co_av", line.loss.co_av},
                {"l_regu", line.loss.regu}, {"l_total", line.loss.total}};
}

inline void write_train_log(const std::vector<TrainLogLine>& log, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_train_log: cannot write " + path);
    for (const auto& line : log) out << train_log_to_json(line).dump() << '\n';
}

// ---- ablation grid (Table 8 shape) ----------------------------------------------------

struct AblationRow {
    std::string name;
    LossWeights weights;
    double ccc_valence = 0.0;
    double ccc_arousal = 0.0;
};

inline std::vector<AblationRow> ablation_grid(const LossWeights& base) {
    return {
        {"all_constraints", base},
        {"no_intramodal", {0.0, 0.0, base.co_av, base.regu}},
        {"no_crossmodal", {base.co_v, base.co_a, 0.0, base.regu}},
        {"no_regularisation", {base.co_v, base.co_a, base.co_av, 0.0}},
        {"no_constraints", {0.0, 0.0, 0.0, 0.0}},
    };
}

// Trains the five configurations in cold mode and reports validation CCC.
inline std::vector<AblationRow> run_ablation(const TrainConfig& base_cfg,
                                             const Corpus& corpus) {
    if (base_cfg.task != Task::regression)
        throw std::invalid_argument("run_ablation: the grid is a regression experiment");
    std::vector<AblationRow> rows = ablation_grid(base_cfg.loss_weights);
    for (AblationRow& row : rows) {
        TrainConfig cfg = base_cfg;
        cfg.fusion = FusionMode::cold;
        cfg.loss_weights = row.weights;
        TrainResult tr = train(cfg, corpus);
        EvalResult ev = evaluate(tr.params, tr.model, corpus, "val");
        row.ccc_valence = ev.metrics["ccc_valence"].get<double>();
        row.ccc_arousal = ev.metrics["ccc_arousal"].get<double>();
    }
    return rows;
}

// ---- trace CSV -------------------------------------------------------------------------

inline void write_traces_csv(const std::vector<TraceRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_traces_csv: cannot write " + path);
    out << "seq,frame,w_v,w_a,sigma_norm_v,sigma_norm_a,pred_valence,pred_arousal,"
           "pred_v_valence,pred_v_arousal,pred_a_valence,pred_a_arousal,"
           "target_valence,target_arousal,masked_v,masked_a\n";
    auto cell = [](double v) { return std::isnan(v) ? std::string() : detail::fmt_double(v); };
    for (const TraceRow& r : rows) {
        out << r.seq << ',' << r.frame << ',' << cell(r.w_v) << ',' << cell(r.w_a) << ','
            << cell(r.sigma_norm_v) << ',' << cell(r.sigma_norm_a) << ','
            << cell(r.pred_valence) << ',' << cell(r.pred_arousal) << ','
            << cell(r.pred_v_valence) << ',' << cell(r.pred_v_arousal) << ','
            << cell(r.pred_a_valence) << ',' << cell(r.pred_a_arousal) << ','
            << cell(r.target_valence) << ',' << cell(r.target_arousal) << ','
            << (r.masked_v ? 1 : 0) << ',' << (r.masked_a ? 1 : 0) << '\n';
    }
}

}  // namespace cold
