#pragma once

// Variance-weighted COLD context fusion plus the three model-agnostic
// baselines (feature, prediction and temporal-context fusion). The forward
// passes build tape graphs; thin value-level wrappers expose the same math
// on plain arrays.

#include <optional>
#include <vector>

#include "cold/encoders.hpp"

namespace cold {

struct FusionWeights {
    std::vector<double> w_v;
    std::vector<double> w_a;
};

struct PredictionSet {
    std::optional<Array> y_v;
    std::optional<Array> y_a;
    Array y_av;
};

struct WeightVars {
    Var v;  // (N)
    Var a;  // (N)
};

// ---- Eq. 2: fusion weights from context variance norms --------------------

inline WeightVars cold_weights(Tape& t, Var sigma_v, Var sigma_a) {
    const Array& sv = t.value(sigma_v);
    const Array& sa = t.value(sigma_a);
    if (!sv.same_shape(sa)) detail::shape_error("cold_weights", sv, sa);
    Var nv = l2norm_rows(sigma_v);
    Var na = l2norm_rows(sigma_a);
    const Array& nvv = t.value(nv);
    const Array& nav = t.value(na);
    for (std::size_t i = 0; i < nvv.numel(); ++i)
        if (nvv[i] + nav[i] < 1e-12)
            throw std::invalid_argument("cold_weights: both variance norms collapsed");
    Var denom = add(nv, na);
    return {div(nv, denom), div(na, denom)};
}

inline FusionWeights cold_weights(const Array& sigma_v, const Array& sigma_a) {
    Tape t;
    WeightVars w = cold_weights(t, t.leaf(sigma_v), t.leaf(sigma_a));
    return {t.value(w.v).data, t.value(w.a).data};
}

// ---- Eq. 1: linear context fusion ------------------------------------------

inline Var fuse_context(Tape& t, Var h_v, Var h_a, const WeightVars& w) {
    const Array& hv = t.value(h_v);
    const Array& ha = t.value(h_a);
    if (!hv.same_shape(ha)) detail::shape_error("fuse_context", hv, ha);
    if (t.value(w.v).numel() != hv.rows())
        detail::shape_error("fuse_context", hv, t.value(w.v));
    return add(scale_rows(h_v, w.v), scale_rows(h_a, w.a));
}

// ---- prediction fusion (value level) ----------------------------------------
//
// Generic confidence-weighted convex combination; rows are items, confidences
// are per row and get normalized per row.
inline Array prediction_fusion(const Array& y_v, const Array& y_a,
                               const std::vector<double>& conf_v,
                               const std::vector<double>& conf_a) {
    if (!y_v.same_shape(y_a)) detail::shape_error("prediction_fusion", y_v, y_a);
    if (conf_v.size() != y_v.rows() || conf_a.size() != y_v.rows())
        throw std::invalid_argument("prediction_fusion: confidence length mismatch");
    Array out = y_v;
    const std::size_t c = y_v.cols();
    for (std::size_t i = 0; i < y_v.rows(); ++i) {
        const double denom = conf_v[i] + conf_a[i];
        const double wv = denom > 0.0 ? conf_v[i] / denom : 0.5;
        for (std::size_t j = 0; j < c; ++j)
            out.at(i, j) = wv * y_v.at(i, j) + (1.0 - wv) * y_a.at(i, j);
    }
    return out;
}

// ---- model configuration -----------------------------------------------------

enum class FusionMode { feature, prediction, context, cold };
enum class Task { regression, classification };

inline const char* to_string(FusionMode m) {
    switch (m) {
        case FusionMode::feature: return "feature";
        case FusionMode::prediction: return "prediction";
        case FusionMode::context: return "context";
        case FusionMode::cold: return "cold";
    }
    return "?";
}

inline const char* to_string(Task t) {
    return t == Task::regression ? "regression" : "classification";
}

inline FusionMode fusion_mode_from(const std::string& s) {
    if (s == "feature") return FusionMode::feature;
    if (s == "prediction") return FusionMode::prediction;
    if (s == "context") return FusionMode::context;
    if (s == "cold") return FusionMode::cold;
    throw std::invalid_argument("unknown fusion mode: " + s);
}

inline Task task_from(const std::string& s) {
    if (s == "regression") return Task::regression;
    if (s == "classification") return Task::classification;
    throw std::invalid_argument("unknown task: " + s);
}

struct ModelConfig {
    FusionMode fusion = FusionMode::cold;
    Task task = Task::regression;
    std::size_t feat_dim_v = 16;
    std::size_t feat_dim_a = 16;
    EncoderConfig enc;  // feat_dim field is overridden per use
    bool per_sequence_labels = false;

    std::size_t out_dim() const { return task == Task::regression ? 2 : 6; }

    EncoderConfig encoder_for(std::size_t feat_dim) const {
        EncoderConfig e = enc;
        e.feat_dim = feat_dim;
        return e;
    }
};

inline void init_output_head(ParamStore& p, const std::string& prefix, std::size_t in,
                             std::size_t out, Rng& rng) {
    p[prefix + ".w"] = init_uniform({in, out}, in, rng);
    p[prefix + ".b"] = init_uniform({out}, in, rng);
}

inline ParamStore init_model_params(const ModelConfig& cfg, Rng& rng) {
    ParamStore p;
    const std::size_t c = cfg.enc.context_dim();
    const std::size_t out = cfg.out_dim();
    switch (cfg.fusion) {
        case FusionMode::feature:
            init_gru_params(p, "av", cfg.encoder_for(cfg.feat_dim_v + cfg.feat_dim_a), rng);
            init_output_head(p, "av.fc", c, out, rng);
            break;
        case FusionMode::prediction:
            init_gru_params(p, "v", cfg.encoder_for(cfg.feat_dim_v), rng);
            init_gru_params(p, "a", cfg.encoder_for(cfg.feat_dim_a), rng);
            init_output_head(p, "v.fc", c, out, rng);
            init_output_head(p, "a.fc", c, out, rng);
            if (cfg.task == Task::regression) {
                init_output_head(p, "v.conf", c, 1, rng);
                init_output_head(p, "a.conf", c, 1, rng);
            }
            break;
        case FusionMode::context:
            init_gru_params(p, "v", cfg.encoder_for(cfg.feat_dim_v), rng);
            init_gru_params(p, "a", cfg.encoder_for(cfg.feat_dim_a), rng);
            init_output_head(p, "v.fc", c, out, rng);
            init_output_head(p, "a.fc", c, out, rng);
            init_output_head(p, "av.fc", 2 * c, out, rng);
            break;
        case FusionMode::cold:
            init_gru_params(p, "v", cfg.encoder_for(cfg.feat_dim_v), rng);
            init_gru_params(p, "a", cfg.encoder_for(cfg.feat_dim_a), rng);
            init_latent_head_params(p, "v.head", cfg.enc, rng);
            init_latent_head_params(p, "a.head", cfg.enc, rng);
            init_output_head(p, "v.fc", c, out, rng);
            init_output_head(p, "a.fc", c, out, rng);
            init_output_head(p, "av.fc", c, out, rng);
            break;
    }
    return p;
}

namespace detail {

inline Var output_head(Tape& t, const ParamVars& pv, const std::string& prefix, Var h,
                       Task task) {
    Var y = add_rowvec(matmul(h, pv.at(prefix + ".w")), pv.at(prefix + ".b"));
    return task == Task::regression ? tanh(y) : y;
}

// mean over rows: (N x C) -> (1 x C) via a constant 1/N row
inline Var pool_rows(Tape& t, Var x) {
    const std::size_t n = t.value(x).rows();
    Var ones = t.leaf(Array::full({1, n}, 1.0 / static_cast<double>(n)), "pool");
    return matmul(ones, x);
}

}  // namespace detail

// Per-sequence forward outputs. Predictions are (N x out) for per-frame
// labels and (1 x out) when pooled per sequence. For classification the
// prediction-fusion branch emits probabilities instead of logits.
struct SeqForward {
    Var y_av;
    std::optional<Var> y_v;
    std::optional<Var> y_a;
    std::optional<LatentVars> lat_v;
    std::optional<LatentVars> lat_a;
    std::optional<WeightVars> weights;
    bool fused_is_probs = false;
};

// Runs one batch of aligned (Z_V, Z_A) pairs through the configured fusion
// model. All sequences must share a frame count.
inline std::vector<SeqForward> forward_batch(Tape& t, const ParamVars& pv,
                                             const ModelConfig& cfg,
                                             const std::vector<const Array*>& z_v,
                                             const std::vector<const Array*>& z_a,
                                             RunContext& run) {
    if (z_v.empty() || z_v.size() != z_a.size())
        throw std::invalid_argument("forward_batch: empty or misaligned batch");
    const std::size_t batch = z_v.size();
    for (std::size_t b = 0; b < batch; ++b)
        if (z_v[b]->rows() != z_a[b]->rows())
            throw std::invalid_argument("forward_batch: modality frame counts differ");

    std::vector<Var> feats_v(batch), feats_a(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        feats_v[b] = t.leaf(*z_v[b], "z_v");
        feats_a[b] = t.leaf(*z_a[b], "z_a");
    }

    std::vector<SeqForward> out(batch);
    const Task task = cfg.task;

    auto maybe_pool = [&](Var y) {
        return cfg.per_sequence_labels ? detail::pool_rows(t, y) : y;
    };

    switch (cfg.fusion) {
        case FusionMode::feature: {
            std::vector<Var> z(batch);
            for (std::size_t b = 0; b < batch; ++b)
                z[b] = concat({feats_v[b], feats_a[b]}, 1);
            std::vector<Var> h = gru_encode_batch(
                t, pv, "av", z, cfg.encoder_for(cfg.feat_dim_v + cfg.feat_dim_a), run);
            for (std::size_t b = 0; b < batch; ++b)
                out[b].y_av = maybe_pool(detail::output_head(t, pv, "av.fc", h[b], task));
            break;
        }
        case FusionMode::prediction: {
            std::vector<Var> h_v =
                gru_encode_batch(t, pv, "v", feats_v, cfg.encoder_for(cfg.feat_dim_v), run);
            std::vector<Var> h_a =
                gru_encode_batch(t, pv, "a", feats_a, cfg.encoder_for(cfg.feat_dim_a), run);
            for (std::size_t b = 0; b < batch; ++b) {
                Var y_v = detail::output_head(t, pv, "v.fc", h_v[b], task);
                Var y_a = detail::output_head(t, pv, "a.fc", h_a[b], task);
                out[b].y_v = maybe_pool(y_v);
                out[b].y_a = maybe_pool(y_a);
                if (task == Task::regression) {
                    Var e_v = exp(row_sum(detail::output_head(t, pv, "v.conf", h_v[b],
                                                              Task::classification)));
                    Var e_a = exp(row_sum(detail::output_head(t, pv, "a.conf", h_a[b],
                                                              Task::classification)));
                    Var denom = add(e_v, e_a);
                    Var fused = add(scale_rows(y_v, div(e_v, denom)),
                                    scale_rows(y_a, div(e_a, denom)));
                    out[b].y_av = maybe_pool(fused);
                } else {
                    // max-probability confidences are taken as constants
                    Var p_v = concat({softmax(slice(y_v, 1, 0, 3), 1),
                                      softmax(slice(y_v, 1, 3, 3), 1)},
                                     1);
                    Var p_a = concat({softmax(slice(y_a, 1, 0, 3), 1),
                                      softmax(slice(y_a, 1, 3, 3), 1)},
                                     1);
                    const Array& pvv = t.value(p_v);
                    const Array& pav = t.value(p_a);
                    const std::size_t n = pvv.rows();
                    Array wv({n}), wa({n});
                    for (std::size_t i = 0; i < n; ++i) {
                        auto maxp = [&](const Array& arr, std::size_t off) {
                            double m = arr.at(i, off);
                            for (std::size_t j = 1; j < 3; ++j)
                                m = std::max(m, arr.at(i, off + j));
                            return m;
                        };
                        const double cv = 0.5 * (maxp(pvv, 0) + maxp(pvv, 3));
                        const double ca = 0.5 * (maxp(pav, 0) + maxp(pav, 3));
                        wv[i] = cv / (cv + ca);
                        wa[i] = ca / (cv + ca);
                    }
                    Var fused = add(scale_rows(p_v, t.leaf(std::move(wv), "conf")),
                                    scale_rows(p_a, t.leaf(std::move(wa), "conf")));
                    out[b].y_av = maybe_pool(fused);
                    out[b].fused_is_probs = true;
                }
            }
            break;
        }
        case FusionMode::context: {
            std::vector<Var> h_v =
                gru_encode_batch(t, pv, "v", feats_v, cfg.encoder_for(cfg.feat_dim_v), run);
            std::vector<Var> h_a =
                gru_encode_batch(t, pv, "a", feats_a, cfg.encoder_for(cfg.feat_dim_a), run);
            for (std::size_t b = 0; b < batch; ++b) {
                out[b].y_v = maybe_pool(detail::output_head(t, pv, "v.fc", h_v[b], task));
                out[b].y_a = maybe_pool(detail::output_head(t, pv, "a.fc", h_a[b], task));
                Var joint = concat({h_v[b], h_a[b]}, 1);
                out[b].y_av = maybe_pool(detail::output_head(t, pv, "av.fc", joint, task));
            }
            break;
        }
        case FusionMode::cold: {
            std::vector<Var> g_v =
                gru_encode_batch(t, pv, "v", feats_v, cfg.encoder_for(cfg.feat_dim_v), run);
            std::vector<Var> g_a =
                gru_encode_batch(t, pv, "a", feats_a, cfg.encoder_for(cfg.feat_dim_a), run);
            for (std::size_t b = 0; b < batch; ++b) {
                LatentVars lat_v = latent_head(t, pv, "v.head", g_v[b], cfg.enc);
                LatentVars lat_a = latent_head(t, pv, "a.head", g_a[b], cfg.enc);
                Var h_v = sample_context(t, lat_v, run);
                Var h_a = sample_context(t, lat_a, run);
                WeightVars w = cold_weights(t, lat_v.sigma, lat_a.sigma);
                Var h_va = fuse_context(t, h_v, h_a, w);
                out[b].y_v = maybe_pool(detail::output_head(t, pv, "v.fc", h_v, task));
                out[b].y_a = maybe_pool(detail::output_head(t, pv, "a.fc", h_a, task));
                out[b].y_av = maybe_pool(detail::output_head(t, pv, "av.fc", h_va, task));
                out[b].lat_v = lat_v;
                out[b].lat_a = lat_a;
                out[b].weights = w;
            }
            break;
        }
    }
    return out;
}

// ---- single-sequence convenience wrappers (value level) ---------------------

inline PredictionSet feature_fusion_forward(const FeatureSequence& z_v,
                                            const FeatureSequence& z_a,
                                            const ParamStore& params,
                                            const ModelConfig& cfg, RunContext& run) {
    Tape t;
    ParamVars pv = enter_params(t, params);
    auto fwd = forward_batch(t, pv, cfg, {&z_v.frames}, {&z_a.frames}, run);
    return {std::nullopt, std::nullopt, t.value(fwd[0].y_av)};
}

inline PredictionSet context_fusion_forward(const FeatureSequence& z_v,
                                            const FeatureSequence& z_a,
                                            const ParamStore& params,
                                            const ModelConfig& cfg, RunContext& run) {
    Tape t;
    ParamVars pv = enter_params(t, params);
    auto fwd = forward_batch(t, pv, cfg, {&z_v.frames}, {&z_a.frames}, run);
    return {t.value(*fwd[0].y_v), t.value(*fwd[0].y_a), t.value(fwd[0].y_av)};
}

struct ColdForwardResult {
    PredictionSet predictions;
    LatentSequence latent_v;
    LatentSequence latent_a;
    FusionWeights weights;
};

inline ColdForwardResult cold_forward(const FeatureSequence& z_v, const FeatureSequence& z_a,
                                      const ParamStore& params, const ModelConfig& cfg,
                                      RunContext& run) {
    Tape t;
    ParamVars pv = enter_params(t, params);
    auto fwd = forward_batch(t, pv, cfg, {&z_v.frames}, {&z_a.frames}, run);
    ColdForwardResult r;
    r.predictions = {t.value(*fwd[0].y_v), t.value(*fwd[0].y_a), t.value(fwd[0].y_av)};
    r.latent_v = {t.value(fwd[0].lat_v->mu), t.value(fwd[0].lat_v->sigma)};
    r.latent_a = {t.value(fwd[0].lat_a->mu), t.value(fwd[0].lat_a->sigma)};
    r.weights = {t.value(fwd[0].weights->v).data, t.value(fwd[0].weights->a).data};
    return r;
}

}  // namespace cold
