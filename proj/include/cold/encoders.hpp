#pragma once

// Unimodal temporal encoders: an optional per-frame projection backbone, a
// stacked (optionally bidirectional) GRU, and the latent head that turns
// hidden states into per-frame mean/variance vectors. Everything builds
// graph nodes on a Tape so gradients flow end to end.

#include <optional>
#include <string>
#include <vector>

#include "cold/autodiff.hpp"
#include "cold/params.hpp"
#include "cold/rng.hpp"

namespace cold {

struct FeatureSequence {
    char modality = 'V';  // 'V' or 'A'
    Array frames;         // N x D
};

struct EncoderConfig {
    std::size_t feat_dim = 16;  // D
    std::size_t hidden = 32;    // H
    std::size_t layers = 2;
    bool bidirectional = true;
    double dropout = 0.5;  // between GRU layers, train mode only
    double sigma_floor = 1e-4;

    std::size_t context_dim() const { return bidirectional ? 2 * hidden : hidden; }

    void validate() const {
        if (hidden < 1 || layers < 1 || feat_dim < 1)
            throw std::invalid_argument("EncoderConfig: widths and layer count must be >= 1");
        if (dropout < 0.0 || dropout >= 1.0)
            throw std::invalid_argument("EncoderConfig: dropout must be in [0, 1)");
    }
};

// Per-frame mean and variance of the context distribution (values only).
struct LatentSequence {
    Array mu;     // N x C
    Array sigma;  // N x C, entries >= sigma_floor
};

// Graph-side latent pair.
struct LatentVars {
    Var mu;
    Var sigma;
};

// Controls stochastic behaviour of a forward pass. Gradient checks run with
// train=true, noise pinned to zero and dropout_rng=nullptr so the graph is a
// deterministic function of the parameters.
struct RunContext {
    bool train = false;
    NoiseSource noise;
    Rng* dropout_rng = nullptr;
};

// ---- feature backbone (f_V / f_A stand-in) --------------------------------

struct BackboneConfig {
    enum class Kind { identity, affine_tanh } kind = Kind::identity;
    std::size_t in_dim = 16;
    std::size_t out_dim = 16;
};

inline void init_backbone_params(ParamStore& params, const std::string& prefix,
                                 const BackboneConfig& cfg, Rng& rng) {
    if (cfg.kind == BackboneConfig::Kind::identity) return;
    params[prefix + ".bb.w"] = init_uniform({cfg.in_dim, cfg.out_dim}, cfg.in_dim, rng);
    params[prefix + ".bb.b"] = init_uniform({cfg.out_dim}, cfg.in_dim, rng);
}

inline Var backbone_project(Tape& t, const ParamVars& pv, const std::string& prefix,
                            Var raw, const BackboneConfig& cfg) {
    const Array& rv = t.value(raw);
    if (!rv.all_finite()) throw std::invalid_argument("backbone_project: non-finite input");
    if (rv.cols() != cfg.in_dim)
        throw std::invalid_argument("backbone_project: input width " +
                                    std::to_string(rv.cols()) + " != configured " +
                                    std::to_string(cfg.in_dim));
    if (cfg.kind == BackboneConfig::Kind::identity) {
        if (cfg.in_dim != cfg.out_dim)
            throw std::invalid_argument("backbone_project: identity needs equal widths");
        return raw;
    }
    return tanh(add_rowvec(matmul(raw, pv.at(prefix + ".bb.w")), pv.at(prefix + ".bb.b")));
}

// ---- GRU stack -------------------------------------------------------------

// Gate layout inside the 3H axis: [reset | update | candidate].
inline void init_gru_params(ParamStore& params, const std::string& prefix,
                            const EncoderConfig& cfg, Rng& rng) {
    cfg.validate();
    const std::size_t h = cfg.hidden;
    std::size_t in = cfg.feat_dim;
    const int dirs = cfg.bidirectional ? 2 : 1;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        for (int d = 0; d < dirs; ++d) {
            const std::string p =
                prefix + ".gru.l" + std::to_string(l) + (d == 0 ? ".f" : ".b");
            params[p + ".w_ih"] = init_uniform({in, 3 * h}, in, rng);
            params[p + ".w_hh"] = init_uniform({h, 3 * h}, h, rng);
            params[p + ".b_ih"] = init_uniform({3 * h}, h, rng);
            params[p + ".b_hh"] = init_uniform({3 * h}, h, rng);
        }
        in = static_cast<std::size_t>(dirs) * h;
    }
}

namespace detail {

// One GRU direction over a list of (B x in) timestep nodes.
inline std::vector<Var> gru_direction(Tape& t, const ParamVars& pv, const std::string& p,
                                      const std::vector<Var>& xs, std::size_t batch,
                                      std::size_t hidden, bool reverse) {
    Var w_ih = pv.at(p + ".w_ih");
    Var w_hh = pv.at(p + ".w_hh");
    Var b_ih = pv.at(p + ".b_ih");
    Var b_hh = pv.at(p + ".b_hh");
    const std::size_t n = xs.size();
    const std::size_t h = hidden;
    Var hs = t.leaf(Array({batch, h}));  // zero initial state
    Var one = t.scalar(1.0);
    std::vector<Var> out(n);
    for (std::size_t step = 0; step < n; ++step) {
        const std::size_t ti = reverse ? n - 1 - step : step;
        Var xb = add_rowvec(matmul(xs[ti], w_ih), b_ih);
        Var hb = add_rowvec(matmul(hs, w_hh), b_hh);
        Var r = sigmoid(add(slice(xb, 1, 0, h), slice(hb, 1, 0, h)));
        Var z = sigmoid(add(slice(xb, 1, h, h), slice(hb, 1, h, h)));
        Var cand = tanh(add(slice(xb, 1, 2 * h, h), mul(r, slice(hb, 1, 2 * h, h))));
        hs = add(mul(sub(one, z), cand), mul(z, hs));
        out[ti] = hs;
    }
    return out;
}

inline Var dropout_mask(Tape& t, std::size_t rows, std::size_t cols, double rate,
                        Rng& rng) {
    Array m({rows, cols});
    const double keep = 1.0 - rate;
    for (auto& v : m.data) v = (rng.uniform() < keep) ? 1.0 / keep : 0.0;
    return t.leaf(std::move(m), "dropout");
}

}  // namespace detail

// Encodes a batch of equal-length sequences. `features` holds one (N x D)
// node per sequence; the result holds one (N x C) context node per sequence.
inline std::vector<Var> gru_encode_batch(Tape& t, const ParamVars& pv,
                                         const std::string& prefix,
                                         const std::vector<Var>& features,
                                         const EncoderConfig& cfg, const RunContext& run) {
    cfg.validate();
    if (features.empty()) throw std::invalid_argument("gru_encode: empty batch");
    const std::size_t batch = features.size();
    const std::size_t n = t.value(features[0]).rows();
    for (Var f : features) {
        const Array& fv = t.value(f);
        if (fv.rows() != n || fv.cols() != cfg.feat_dim)
            throw std::invalid_argument("gru_encode: feature shape " + fv.shape_str() +
                                        " does not match batch/config");
    }

    // (B x D) node per timestep, rows in batch order
    std::vector<Var> xs(n);
    for (std::size_t ti = 0; ti < n; ++ti) {
        std::vector<Var> rows;
        rows.reserve(batch);
        for (std::size_t b = 0; b < batch; ++b) rows.push_back(slice(features[b], 0, ti, 1));
        xs[ti] = batch == 1 ? rows[0] : concat(rows, 0);
    }

    const bool use_dropout = run.train && cfg.dropout > 0.0 && run.dropout_rng != nullptr;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        const std::string lp = prefix + ".gru.l" + std::to_string(l);
        std::vector<Var> fwd =
            detail::gru_direction(t, pv, lp + ".f", xs, batch, cfg.hidden, false);
        if (cfg.bidirectional) {
            std::vector<Var> bwd =
                detail::gru_direction(t, pv, lp + ".b", xs, batch, cfg.hidden, true);
            for (std::size_t ti = 0; ti < n; ++ti) xs[ti] = concat({fwd[ti], bwd[ti]}, 1);
        } else {
            xs = std::move(fwd);
        }
        if (use_dropout && l + 1 < cfg.layers) {
            for (std::size_t ti = 0; ti < n; ++ti) {
                Var mask = detail::dropout_mask(t, batch, cfg.context_dim(), cfg.dropout,
                                                *run.dropout_rng);
                xs[ti] = mul(xs[ti], mask);
            }
        }
    }

    // reassemble per-sequence (N x C) matrices
    std::vector<Var> contexts(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        if (batch == 1) {
            contexts[0] = concat(xs, 0);
            break;
        }
        std::vector<Var> rows(n);
        for (std::size_t ti = 0; ti < n; ++ti) rows[ti] = slice(xs[ti], 0, b, 1);
        contexts[b] = concat(rows, 0);
    }

    for (std::size_t b = 0; b < batch; ++b)
        if (!t.value(contexts[b]).all_finite())
            throw std::runtime_error("gru_encode: non-finite activation");
    return contexts;
}

inline Var gru_encode(Tape& t, const ParamVars& pv, const std::string& prefix, Var features,
                      const EncoderConfig& cfg, const RunContext& run) {
    return gru_encode_batch(t, pv, prefix, {features}, cfg, run)[0];
}

// ---- latent head ------------------------------------------------------------

inline void init_latent_head_params(ParamStore& params, const std::string& prefix,
                                    const EncoderConfig& cfg, Rng& rng) {
    const std::size_t c = cfg.context_dim();
    params[prefix + ".mu.w"] = init_uniform({c, c}, c, rng);
    params[prefix + ".mu.b"] = init_uniform({c}, c, rng);
    params[prefix + ".sigma.w"] = init_uniform({c, c}, c, rng);
    params[prefix + ".sigma.b"] = init_uniform({c}, c, rng);
}

// mu = affine(hidden); sigma = softplus(affine(hidden)) + sigma_floor
inline LatentVars latent_head(Tape& t, const ParamVars& pv, const std::string& prefix,
                              Var hidden, const EncoderConfig& cfg) {
    const Array& hv = t.value(hidden);
    if (!hv.all_finite()) throw std::invalid_argument("latent_head: non-finite input");
    Var mu = add_rowvec(matmul(hidden, pv.at(prefix + ".mu.w")), pv.at(prefix + ".mu.b"));
    Var pre =
        add_rowvec(matmul(hidden, pv.at(prefix + ".sigma.w")), pv.at(prefix + ".sigma.b"));
    Var floor = t.leaf(Array::full({hv.rows(), hv.cols()}, cfg.sigma_floor), "sigma_floor");
    Var sigma = add(softplus(pre), floor);
    return {mu, sigma};
}

// Train mode draws h = mu + sigma * z through the reparameterization path;
// eval mode returns the mean node itself.
inline Var sample_context(Tape& t, const LatentVars& latent, RunContext& run) {
    if (!run.train) return latent.mu;
    const Array& mv = t.value(latent.mu);
    Array z(mv.shape);
    for (auto& v : z.data) v = run.noise.normal();
    return add(latent.mu, mul(latent.sigma, t.leaf(std::move(z), "noise")));
}

}  // namespace cold
