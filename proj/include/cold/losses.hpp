#pragma once

// Training objective: emotion loss (inverse CCC + MSE, or class-weighted
// cross-entropy), the softmax distributional-matching loss that imposes the
// calibration and ordinality constraints on variance-norm vectors, the
// variance-collapse regularizer, and their weighted total.

#include <array>
#include <vector>

#include "cold/fusion.hpp"

namespace cold {

struct DistanceVector {
    std::vector<double> values;  // per item, >= 0
    char modality = 'V';         // 'V', 'A' or 'X' for the interleaved pair
};

struct VarianceNormVector {
    std::vector<double> values;  // 1 / ||sigma_i||_2, > 0
    char modality = 'V';
};

struct LossWeights {
    double co_v = 1e-3;
    double co_a = 1e-3;
    double co_av = 1e-3;
    double regu = 1e-4;

    void validate() const {
        if (co_v < 0 || co_a < 0 || co_av < 0 || regu < 0)
            throw std::invalid_argument("LossWeights: weights must be >= 0");
    }
};

struct LossBreakdown {
    double emo = 0.0;
    double co_v = 0.0;
    double co_a = 0.0;
    double co_av = 0.0;
    double regu = 0.0;
    double total = 0.0;
};

// Per-dimension class weights for 3-way classification (unit by default).
struct ClassWeights {
    std::array<std::vector<double>, 2> per_dim{std::vector<double>{1.0, 1.0, 1.0},
                                               std::vector<double>{1.0, 1.0, 1.0}};
};

using FrameClasses = std::vector<std::array<int, 2>>;  // per frame: (valence, arousal)

namespace detail {

constexpr double kCccEps = 1e-12;

// Differentiable CCC in covariance form over a single column pair.
inline Var ccc_column(Tape& t, Var pred_col, const std::vector<double>& target) {
    const std::size_t n = target.size();
    double mu_t = 0.0;
    for (double v : target) mu_t += v;
    mu_t /= static_cast<double>(n);
    double var_t = 0.0;
    for (double v : target) var_t += (v - mu_t) * (v - mu_t);
    var_t /= static_cast<double>(n);

    Array centered_t({n, 1});
    for (std::size_t i = 0; i < n; ++i) centered_t[i] = target[i] - mu_t;

    Var mu_p = mean(pred_col);
    Var centered_p = sub(pred_col, mu_p);
    Var cov = mean(mul(centered_p, t.leaf(centered_t)));
    Var var_p = mean(square(centered_p));
    Var mean_gap = square(sub(mu_p, t.scalar(mu_t)));
    Var denom = add(add(var_p, t.scalar(var_t + kCccEps)), mean_gap);
    return div(mul(cov, t.scalar(2.0)), denom);
}

inline Array one_hot_rows(const FrameClasses& cls, int dim,
                          const std::vector<double>& weights) {
    Array oh({cls.size(), 3});
    for (std::size_t i = 0; i < cls.size(); ++i) {
        const int c = cls[i][dim];
        if (c < 0 || c > 2) throw std::invalid_argument("class index out of range");
        oh.at(i, c) = weights.empty() ? 1.0 : weights[static_cast<std::size_t>(c)];
    }
    return oh;
}

}  // namespace detail

// ---- emotion prediction loss -------------------------------------------------

// Regression branch: mean over the 2 dims of (1 - CCC) plus MSE.
inline Var regression_branch_loss(Tape& t, Var preds, const Array& targets) {
    const Array& pv = t.value(preds);
    if (!pv.same_shape(targets)) detail::shape_error("emotion_loss", pv, targets);
    if (pv.rows() < 1) throw std::invalid_argument("emotion_loss: empty batch");
    Var one = t.scalar(1.0);
    Var acc = t.scalar(0.0);
    for (int d = 0; d < 2; ++d) {
        std::vector<double> col(pv.rows());
        for (std::size_t i = 0; i < pv.rows(); ++i) col[i] = targets.at(i, d);
        Var ccc = detail::ccc_column(t, slice(preds, 1, d, 1), col);
        acc = add(acc, sub(one, ccc));
    }
    Var inv_ccc = mul(acc, t.scalar(0.5));
    Var mse = mean(square(sub(preds, t.leaf(targets))));
    return add(inv_ccc, mse);
}

// Classification branch: class-weighted cross-entropy, mean over frames and
// the 2 dims. `is_probs` marks inputs that are already distributions.
inline Var classification_branch_loss(Tape& t, Var preds, const FrameClasses& cls,
                                      const ClassWeights& weights, bool is_probs = false) {
    const Array& pv = t.value(preds);
    if (pv.rows() != cls.size() || pv.cols() != 6)
        throw std::invalid_argument("emotion_loss: logits must be (N x 6) aligned to labels");
    if (cls.empty()) throw std::invalid_argument("emotion_loss: empty batch");
    const double n = static_cast<double>(cls.size());
    Var acc = t.scalar(0.0);
    for (int d = 0; d < 2; ++d) {
        Var group = slice(preds, 1, 3 * d, 3);
        Var logp = is_probs
                       ? log(add(group, t.leaf(Array::full({cls.size(), 3}, kLogClamp))))
                       : log_softmax(group, 1);
        Var picked = mul(logp, t.leaf(detail::one_hot_rows(cls, d, weights.per_dim[d])));
        acc = add(acc, sum(picked));
    }
    return mul(acc, t.scalar(-0.5 / n));
}

// Value-level mirrors: equal-weight average over the provided branches.
inline double emotion_loss(const std::vector<Array>& branch_preds, const Array& targets,
                           const ClassWeights& = {}) {
    if (branch_preds.empty()) throw std::invalid_argument("emotion_loss: no branches");
    Tape t;
    Var acc = t.scalar(0.0);
    for (const Array& y : branch_preds)
        acc = add(acc, regression_branch_loss(t, t.leaf(y), targets));
    return t.scalar_value(acc) / static_cast<double>(branch_preds.size());
}

inline double emotion_loss(const std::vector<Array>& branch_preds, const FrameClasses& cls,
                           const ClassWeights& weights) {
    if (branch_preds.empty()) throw std::invalid_argument("emotion_loss: no branches");
    Tape t;
    Var acc = t.scalar(0.0);
    for (const Array& y : branch_preds)
        acc = add(acc, classification_branch_loss(t, t.leaf(y), cls, weights));
    return t.scalar_value(acc) / static_cast<double>(branch_preds.size());
}

// ---- distance vectors ---------------------------------------------------------

// Regression distance: per-item MSE over the 2 emotion dims.
inline Var distance_vector_node(Tape& t, Var preds, const Array& targets) {
    const Array& pv = t.value(preds);
    if (!pv.same_shape(targets)) detail::shape_error("distance_vector", pv, targets);
    return row_mean(square(sub(preds, t.leaf(targets))));
}

// Classification distance: per-item cross-entropy, mean over the 2 dims.
inline Var distance_vector_node(Tape& t, Var preds, const FrameClasses& cls,
                                bool is_probs = false) {
    const Array& pv = t.value(preds);
    if (pv.rows() != cls.size() || pv.cols() != 6)
        throw std::invalid_argument("distance_vector: logits must be (N x 6)");
    Var acc;
    for (int d = 0; d < 2; ++d) {
        Var group = slice(preds, 1, 3 * d, 3);
        Var logp = is_probs
                       ? log(add(group, t.leaf(Array::full({cls.size(), 3}, kLogClamp))))
                       : log_softmax(group, 1);
        Var ce = row_sum(mul(logp, t.leaf(detail::one_hot_rows(cls, d, {}))));
        acc = d == 0 ? ce : add(acc, ce);
    }
    return mul(acc, t.scalar(-0.5));
}

inline DistanceVector distance_vector(const Array& preds, const Array& targets,
                                      char modality = 'V') {
    Tape t;
    return {t.value(distance_vector_node(t, t.leaf(preds), targets)).data, modality};
}

inline DistanceVector distance_vector(const Array& preds, const FrameClasses& cls,
                                      char modality = 'V') {
    Tape t;
    return {t.value(distance_vector_node(t, t.leaf(preds), cls)).data, modality};
}

// ---- variance-norm vectors (Eq. 5) --------------------------------------------

inline Var variance_norm_node(Tape& t, Var sigma) {
    return reciprocal(l2norm_rows(sigma));
}

inline VarianceNormVector variance_norm_vector(const LatentSequence& latent,
                                               char modality = 'V') {
    Tape t;
    return {t.value(variance_norm_node(t, t.leaf(latent.sigma))).data, modality};
}

// ---- softmax distributional matching (Eq. 6) -----------------------------------

// Symmetric KL between softmax(D) and softmax(S). Distances enter as
// constants unless grads_through_distances is set, so by default the loss
// shapes only the variance side.
inline Var cold_loss_node(Tape& t, Var distances, Var scores,
                          bool grads_through_distances = false) {
    const Array& dv = t.value(distances);
    const Array& sv = t.value(scores);
    if (dv.numel() != sv.numel())
        detail::shape_error("cold_loss", dv, sv);
    if (dv.numel() < 2)
        throw std::invalid_argument("cold_loss: needs at least 2 items, got " +
                                    std::to_string(dv.numel()));
    Var d = grads_through_distances ? distances : t.detach(distances);
    Var lp = log_softmax(d, 0);
    Var lq = log_softmax(scores, 0);
    Var p = exp(lp);
    Var q = exp(lq);
    Var kl_pq = sum(mul(p, sub(lp, lq)));
    Var kl_qp = sum(mul(q, sub(lq, lp)));
    return add(kl_pq, kl_qp);
}

inline double cold_loss(const DistanceVector& d, const VarianceNormVector& s) {
    Tape t;
    Var loss = cold_loss_node(t, t.leaf(Array({d.values.size()}, d.values)),
                              t.leaf(Array({s.values.size()}, s.values)));
    return t.scalar_value(loss);
}

// ---- crossmodal interleaving ----------------------------------------------------

// [a1, v1, a2, v2, ...]: audio entry first for every frame.
inline Var interleave_node(Tape& t, Var audio, Var visual) {
    const Array& av = t.value(audio);
    const Array& vv = t.value(visual);
    if (av.rank() != 1 || vv.rank() != 1 || av.numel() != vv.numel())
        detail::shape_error("crossmodal_vectors", av, vv);
    std::vector<Var> parts;
    parts.reserve(2 * av.numel());
    for (std::size_t i = 0; i < av.numel(); ++i) {
        parts.push_back(slice(audio, 0, i, 1));
        parts.push_back(slice(visual, 0, i, 1));
    }
    return concat(parts, 0);
}

inline std::pair<DistanceVector, VarianceNormVector> crossmodal_vectors(
    const DistanceVector& d_v, const DistanceVector& d_a, const VarianceNormVector& s_v,
    const VarianceNormVector& s_a) {
    if (d_v.values.size() != d_a.values.size() || s_v.values.size() != s_a.values.size() ||
        d_v.values.size() != s_v.values.size())
        throw std::invalid_argument("crossmodal_vectors: length mismatch");
    DistanceVector d{{}, 'X'};
    VarianceNormVector s{{}, 'X'};
    d.values.reserve(2 * d_v.values.size());
    s.values.reserve(2 * s_v.values.size());
    for (std::size_t i = 0; i < d_v.values.size(); ++i) {
        d.values.push_back(d_a.values[i]);
        d.values.push_back(d_v.values[i]);
        s.values.push_back(s_a.values[i]);
        s.values.push_back(s_v.values[i]);
    }
    return {d, s};
}

// ---- variance regularizer (Eq. 7) -------------------------------------------------

// KL(N(mu, sigma) || N(0, I)), mean over frames and dimensions.
inline Var variance_regularizer_node(Tape& t, const LatentVars& latent) {
    Var s2 = square(latent.sigma);
    const Array& mv = t.value(latent.mu);
    Var ones = t.leaf(Array::full(mv.shape, 1.0), "ones");
    Var inner = sub(sub(add(ones, log(s2)), square(latent.mu)), s2);
    return mul(mean(inner), t.scalar(-0.5));
}

inline double variance_regularizer(const LatentSequence& latent) {
    Tape t;
    LatentVars lv{t.leaf(latent.mu), t.leaf(latent.sigma)};
    return t.scalar_value(variance_regularizer_node(t, lv));
}

// ---- Eq. 8 total ---------------------------------------------------------------------

struct LossGraph {
    Var total;
    LossBreakdown values;
};

inline LossGraph total_loss(Tape& t, Var emo, Var co_v, Var co_a, Var co_av, Var regu,
                            const LossWeights& w) {
    w.validate();
    const double parts[] = {t.scalar_value(emo), t.scalar_value(co_v), t.scalar_value(co_a),
                            t.scalar_value(co_av), t.scalar_value(regu)};
    for (double p : parts)
        if (!std::isfinite(p))
            throw std::runtime_error("total_loss: non-finite loss component");
    Var total = emo;
    if (w.co_v != 0.0) total = add(total, mul(co_v, t.scalar(w.co_v)));
    if (w.co_a != 0.0) total = add(total, mul(co_a, t.scalar(w.co_a)));
    if (w.co_av != 0.0) total = add(total, mul(co_av, t.scalar(w.co_av)));
    if (w.regu != 0.0) total = add(total, mul(regu, t.scalar(w.regu)));
    LossBreakdown b;
    b.emo = parts[0];
    b.co_v = parts[1];
    b.co_a = parts[2];
    b.co_av = parts[3];
    b.regu = parts[4];
    b.total = t.scalar_value(total);
    return {total, b};
}

// ---- batch objective used by the training loop ----------------------------------------

struct BatchTargets {
    // regression targets per sequence: (N x 2) per-frame or (1 x 2) pooled
    std::vector<const Array*> regression;
    // classification labels per sequence (length N or 1)
    std::vector<const FrameClasses*> classes;
};

// Builds Eq. 8 for one batch. COLD vectors span the frames of each sequence
// under per-frame labels and span the batch under per-sequence labels.
inline LossGraph build_batch_loss(Tape& t, const ModelConfig& cfg,
                                  const std::vector<SeqForward>& fwd,
                                  const BatchTargets& targets, const LossWeights& weights,
                                  const ClassWeights& class_weights,
                                  bool grads_through_distances = false) {
    if (fwd.empty()) throw std::invalid_argument("build_batch_loss: empty batch");
    const std::size_t batch = fwd.size();
    const bool has_unimodal = fwd[0].y_v.has_value();
    const bool is_cold = fwd[0].lat_v.has_value();
    const bool cls_task = cfg.task == Task::classification;

    // pooled predictions per branch (frames of the whole batch stacked)
    auto pooled = [&](auto pick) {
        std::vector<Var> parts;
        parts.reserve(batch);
        for (const SeqForward& f : fwd) parts.push_back(pick(f));
        return batch == 1 ? parts[0] : concat(parts, 0);
    };

    Var emo;
    if (cls_task) {
        FrameClasses all;
        for (const FrameClasses* c : targets.classes) all.insert(all.end(), c->begin(), c->end());
        Var fused = pooled([](const SeqForward& f) { return f.y_av; });
        emo = classification_branch_loss(t, fused, all, class_weights, fwd[0].fused_is_probs);
        if (has_unimodal) {
            Var lv = classification_branch_loss(
                t, pooled([](const SeqForward& f) { return *f.y_v; }), all, class_weights);
            Var la = classification_branch_loss(
                t, pooled([](const SeqForward& f) { return *f.y_a; }), all, class_weights);
            emo = mul(add(emo, add(lv, la)), t.scalar(1.0 / 3.0));
        }
    } else {
        std::size_t rows = 0;
        for (const Array* a : targets.regression) rows += a->rows();
        Array all({rows, 2});
        std::size_t off = 0;
        for (const Array* a : targets.regression) {
            std::copy(a->data.begin(), a->data.end(), all.data.begin() + off);
            off += a->numel();
        }
        Var fused = pooled([](const SeqForward& f) { return f.y_av; });
        emo = regression_branch_loss(t, fused, all);
        if (has_unimodal) {
            Var lv = regression_branch_loss(
                t, pooled([](const SeqForward& f) { return *f.y_v; }), all);
            Var la = regression_branch_loss(
                t, pooled([](const SeqForward& f) { return *f.y_a; }), all);
            emo = mul(add(emo, add(lv, la)), t.scalar(1.0 / 3.0));
        }
    }

    Var zero = t.scalar(0.0);
    Var co_v = zero, co_a = zero, co_av = zero, regu = zero;

    // terms with a zero weight are disabled and never built
    const bool want_v = is_cold && weights.co_v != 0.0;
    const bool want_a = is_cold && weights.co_a != 0.0;
    const bool want_x = is_cold && weights.co_av != 0.0;
    const bool want_r = is_cold && weights.regu != 0.0;

    if (want_v || want_a || want_x || want_r) {
        auto distance_of = [&](Var preds, std::size_t b) {
            if (cls_task)
                return distance_vector_node(t, preds, *targets.classes[b]);
            return distance_vector_node(t, preds, *targets.regression[b]);
        };

        Var inv_b = t.scalar(1.0 / static_cast<double>(batch));
        if (want_r) {
            Var acc_r = zero;
            for (std::size_t b = 0; b < batch; ++b)
                acc_r = add(acc_r, add(variance_regularizer_node(t, *fwd[b].lat_v),
                                       variance_regularizer_node(t, *fwd[b].lat_a)));
            regu = mul(acc_r, inv_b);
        }

        if (want_v || want_a || want_x) {
            if (!cfg.per_sequence_labels) {
                // vectors span the N frames of each sequence, averaged over batch
                Var acc_v = zero, acc_a = zero, acc_x = zero;
                for (std::size_t b = 0; b < batch; ++b) {
                    Var d_v = distance_of(*fwd[b].y_v, b);
                    Var d_a = distance_of(*fwd[b].y_a, b);
                    Var s_v = variance_norm_node(t, fwd[b].lat_v->sigma);
                    Var s_a = variance_norm_node(t, fwd[b].lat_a->sigma);
                    if (want_v)
                        acc_v = add(acc_v,
                                    cold_loss_node(t, d_v, s_v, grads_through_distances));
                    if (want_a)
                        acc_a = add(acc_a,
                                    cold_loss_node(t, d_a, s_a, grads_through_distances));
                    if (want_x)
                        acc_x = add(acc_x, cold_loss_node(t, interleave_node(t, d_a, d_v),
                                                          interleave_node(t, s_a, s_v),
                                                          grads_through_distances));
                }
                co_v = mul(acc_v, inv_b);
                co_a = mul(acc_a, inv_b);
                co_av = mul(acc_x, inv_b);
            } else {
                // vectors span the batch: one distance / one score per sequence
                std::vector<Var> dv_parts, da_parts, sv_parts, sa_parts;
                for (std::size_t b = 0; b < batch; ++b) {
                    dv_parts.push_back(distance_of(*fwd[b].y_v, b));
                    da_parts.push_back(distance_of(*fwd[b].y_a, b));
                    sv_parts.push_back(reciprocal(mean(l2norm_rows(fwd[b].lat_v->sigma))));
                    sa_parts.push_back(reciprocal(mean(l2norm_rows(fwd[b].lat_a->sigma))));
                }
                Var d_v = concat(dv_parts, 0);
                Var d_a = concat(da_parts, 0);
                Var s_v = concat(sv_parts, 0);
                Var s_a = concat(sa_parts, 0);
                if (want_v) co_v = cold_loss_node(t, d_v, s_v, grads_through_distances);
                if (want_a) co_a = cold_loss_node(t, d_a, s_a, grads_through_distances);
                if (want_x)
                    co_av = cold_loss_node(t, interleave_node(t, d_a, d_v),
                                           interleave_node(t, s_a, s_v),
                                           grads_through_distances);
            }
        }
    }

    return total_loss(t, emo, co_v, co_a, co_av, regu, weights);
}

}  // namespace cold
