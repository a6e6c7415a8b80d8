#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "cold/fusion.hpp"

using namespace cold;

namespace {

Array random_frames(std::size_t n, std::size_t d, std::uint64_t seed, double lo = -1.0,
                    double hi = 1.0) {
    Rng rng = Rng::seeded(seed);
    Array a({n, d});
    for (auto& v : a.data) v = rng.uniform(lo, hi);
    return a;
}

ModelConfig tiny_config(FusionMode mode, Task task = Task::regression) {
    ModelConfig cfg;
    cfg.fusion = mode;
    cfg.task = task;
    cfg.feat_dim_v = 3;
    cfg.feat_dim_a = 3;
    cfg.enc.feat_dim = 3;
    cfg.enc.hidden = 2;
    cfg.enc.layers = 1;
    cfg.enc.bidirectional = true;
    cfg.enc.dropout = 0.0;
    return cfg;
}

}  // namespace

TEST_CASE("cold_weights arithmetic", "[fusion]") {
    SECTION("equal norms split 50/50") {
        // C=4 rows of 0.5 have unit norm
        Array s = Array::full({2, 4}, 0.5);
        FusionWeights w = cold_weights(s, s);
        for (double v : w.w_v) REQUIRE(v == Catch::Approx(0.5).margin(1e-15));
        for (double v : w.w_a) REQUIRE(v == Catch::Approx(0.5).margin(1e-15));
    }

    SECTION("norm ratio 3:1 gives weights 0.75/0.25") {
        Array sv = Array::full({1, 4}, 1.5);  // norm 3
        Array sa = Array::full({1, 4}, 0.5);  // norm 1
        FusionWeights w = cold_weights(sv, sa);
        REQUIRE(w.w_v[0] == Catch::Approx(0.75).margin(1e-12));
        REQUIRE(w.w_a[0] == Catch::Approx(0.25).margin(1e-12));
    }

    SECTION("weights stay on the simplex for random positive sigmas") {
        Rng rng = Rng::seeded(17);
        for (int k = 0; k < 100; ++k) {
            Array sv({100, 4}), sa({100, 4});
            for (auto& v : sv.data) v = rng.uniform(1e-4, 5.0);
            for (auto& v : sa.data) v = rng.uniform(1e-4, 5.0);
            FusionWeights w = cold_weights(sv, sa);
            for (std::size_t i = 0; i < 100; ++i) {
                REQUIRE(w.w_v[i] >= 0.0);
                REQUIRE(w.w_v[i] <= 1.0);
                REQUIRE(w.w_v[i] + w.w_a[i] == Catch::Approx(1.0).margin(1e-12));
            }
        }
    }

    SECTION("shared positive scale cancels") {
        Array sv = random_frames(5, 4, 2, 0.1, 2.0);
        Array sa = random_frames(5, 4, 3, 0.1, 2.0);
        Array sv2 = sv, sa2 = sa;
        for (auto& v : sv2.data) v *= 3.7;
        for (auto& v : sa2.data) v *= 3.7;
        FusionWeights w1 = cold_weights(sv, sa);
        FusionWeights w2 = cold_weights(sv2, sa2);
        for (std::size_t i = 0; i < 5; ++i)
            REQUIRE(w1.w_v[i] == Catch::Approx(w2.w_v[i]).margin(1e-12));
    }

    SECTION("differentiable w.r.t. both sigmas") {
        const Array sv = random_frames(3, 4, 5, 0.2, 2.0);
        const Array sa = random_frames(3, 4, 6, 0.2, 2.0);
        ParamStore p{{"sv", sv}, {"sa", sa}};
        auto loss = [](Tape& t, const ParamVars& pv) {
            WeightVars w = cold_weights(t, pv.at("sv"), pv.at("sa"));
            return add(mean(square(w.v)), mean(exp(w.a)));
        };
        REQUIRE(grad_check_params(loss, p, 1e-5) < 1e-4);
    }
}

TEST_CASE("fuse_context", "[fusion]") {
    Tape t;
    Var h_v = t.leaf(random_frames(3, 4, 7));
    Var h_a = t.leaf(random_frames(3, 4, 8));

    SECTION("degenerate weight (1,0) returns h_V") {
        WeightVars w{t.leaf(Array({3}, {1, 1, 1})), t.leaf(Array({3}, {0, 0, 0}))};
        Var fused = fuse_context(t, h_v, h_a, w);
        REQUIRE(t.value(fused).data == t.value(h_v).data);
    }

    SECTION("equal weights cancel opposite contexts") {
        Array neg = t.value(h_v);
        for (auto& v : neg.data) v = -v;
        WeightVars w{t.leaf(Array::full({3}, 0.5)), t.leaf(Array::full({3}, 0.5))};
        Var fused = fuse_context(t, h_v, t.leaf(neg), w);
        for (double v : t.value(fused).data) REQUIRE(v == Catch::Approx(0.0).margin(1e-15));
    }

    SECTION("shape mismatch rejected") {
        WeightVars w{t.leaf(Array({3}, {1, 1, 1})), t.leaf(Array({3}, {0, 0, 0}))};
        REQUIRE_THROWS_AS(fuse_context(t, h_v, t.leaf(random_frames(3, 5, 9)), w),
                          std::invalid_argument);
    }

    SECTION("gradient check through weights and contexts") {
        ParamStore p{{"h_v", random_frames(3, 4, 10)},
                     {"h_a", random_frames(3, 4, 11)},
                     {"sv", random_frames(3, 4, 12, 0.2, 2.0)},
                     {"sa", random_frames(3, 4, 13, 0.2, 2.0)}};
        auto loss = [](Tape& tt, const ParamVars& pv) {
            WeightVars w = cold_weights(tt, pv.at("sv"), pv.at("sa"));
            return mean(square(fuse_context(tt, pv.at("h_v"), pv.at("h_a"), w)));
        };
        REQUIRE(grad_check_params(loss, p, 1e-5) < 1e-4);
    }
}

TEST_CASE("prediction_fusion value rule", "[fusion]") {
    SECTION("identical unimodal predictions are a fixed point") {
        Array y = random_frames(4, 2, 14);
        Array f = prediction_fusion(y, y, {0.3, 0.9, 0.5, 0.1}, {0.6, 0.2, 0.5, 0.7});
        for (std::size_t i = 0; i < y.numel(); ++i)
            REQUIRE(f[i] == Catch::Approx(y[i]).margin(1e-15));
    }

    SECTION("degenerate confidence picks one branch") {
        Array y_v = random_frames(2, 2, 15);
        Array y_a = random_frames(2, 2, 16);
        Array f = prediction_fusion(y_v, y_a, {1.0, 1.0}, {0.0, 0.0});
        REQUIRE(f.data == y_v.data);
    }

    SECTION("hand case: equal confidences average the distributions") {
        Array y_v({1, 3}, {0.6, 0.3, 0.1});
        Array y_a({1, 3}, {0.2, 0.2, 0.6});
        Array f = prediction_fusion(y_v, y_a, {0.6}, {0.6});
        REQUIRE(f[0] == Catch::Approx(0.4).margin(1e-12));
        REQUIRE(f[1] == Catch::Approx(0.25).margin(1e-12));
        REQUIRE(f[2] == Catch::Approx(0.35).margin(1e-12));
    }
}

TEST_CASE("feature fusion forward", "[fusion]") {
    ModelConfig cfg = tiny_config(FusionMode::feature);
    Rng rng = Rng::seeded(20);
    ParamStore p = init_model_params(cfg, rng);
    RunContext run;

    SECTION("concatenated width feeds a single stream") {
        FeatureSequence z_v{'V', random_frames(4, 3, 21)};
        FeatureSequence z_a{'A', random_frames(4, 3, 22)};
        PredictionSet ps = feature_fusion_forward(z_v, z_a, p, cfg, run);
        REQUIRE(ps.y_av.shape == std::vector<std::size_t>{4, 2});
        REQUIRE_FALSE(ps.y_v.has_value());

        // duplicate modality == single stream over the tiled input
        PredictionSet dup = feature_fusion_forward(z_v, z_v, p, cfg, run);
        Tape t;
        ParamVars pv = enter_params(t, p);
        Array tiled({4, 6});
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 3; ++j) {
                tiled.at(i, j) = z_v.frames.at(i, j);
                tiled.at(i, 3 + j) = z_v.frames.at(i, j);
            }
        Var h = gru_encode(t, pv, "av", t.leaf(tiled), cfg.encoder_for(6), run);
        Var y = tanh(add_rowvec(matmul(h, pv.at("av.fc.w")), pv.at("av.fc.b")));
        REQUIRE(dup.y_av.data == t.value(y).data);
    }

    SECTION("frame count mismatch rejected") {
        FeatureSequence z_v{'V', random_frames(4, 3, 23)};
        FeatureSequence z_a{'A', random_frames(5, 3, 24)};
        REQUIRE_THROWS_AS(feature_fusion_forward(z_v, z_a, p, cfg, run),
                          std::invalid_argument);
    }

    SECTION("gradient check") {
        const Array zv = random_frames(3, 3, 25);
        const Array za = random_frames(3, 3, 26);
        auto loss = [&](Tape& t, const ParamVars& pv) {
            RunContext rc;
            auto fwd = forward_batch(t, pv, cfg, {&zv}, {&za}, rc);
            return mean(square(fwd[0].y_av));
        };
        REQUIRE(grad_check_params(loss, p, 1e-5) < 1e-4);
    }
}

TEST_CASE("context fusion forward", "[fusion]") {
    ModelConfig cfg = tiny_config(FusionMode::context, Task::classification);
    Rng rng = Rng::seeded(30);
    ParamStore p = init_model_params(cfg, rng);
    RunContext run;

    SECTION("zero contexts produce the head bias") {
        ParamStore zeroed = p;
        for (auto& [k, v] : zeroed)
            if (k.find(".gru.") != std::string::npos)
                std::fill(v.data.begin(), v.data.end(), 0.0);
        FeatureSequence z{'V', Array({3, 3})};
        PredictionSet ps = context_fusion_forward(z, z, zeroed, cfg, run);
        const Array& bias = zeroed["av.fc.b"];
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 6; ++j)
                REQUIRE(ps.y_av.at(i, j) == Catch::Approx(bias[j]).margin(1e-15));
    }

    SECTION("fused head consumes both contexts") {
        REQUIRE(p["av.fc.w"].rows() == 2 * cfg.enc.context_dim());
    }

    SECTION("gradient check") {
        const Array zv = random_frames(3, 3, 31);
        const Array za = random_frames(3, 3, 32);
        auto loss = [&](Tape& t, const ParamVars& pv) {
            RunContext rc;
            auto fwd = forward_batch(t, pv, cfg, {&zv}, {&za}, rc);
            return add(mean(square(fwd[0].y_av)),
                       add(mean(square(*fwd[0].y_v)), mean(square(*fwd[0].y_a))));
        };
        REQUIRE(grad_check_params(loss, p, 1e-5) < 1e-4);
    }
}

TEST_CASE("cold forward", "[fusion]") {
    ModelConfig cfg = tiny_config(FusionMode::cold);
    Rng rng = Rng::seeded(40);
    ParamStore p = init_model_params(cfg, rng);

    FeatureSequence z_v{'V', random_frames(5, 3, 41)};
    FeatureSequence z_a{'A', random_frames(5, 3, 42)};

    SECTION("eval mode is bitwise deterministic") {
        RunContext run;
        ColdForwardResult r1 = cold_forward(z_v, z_a, p, cfg, run);
        ColdForwardResult r2 = cold_forward(z_v, z_a, p, cfg, run);
        REQUIRE(r1.predictions.y_av.data == r2.predictions.y_av.data);
        REQUIRE(r1.weights.w_v == r2.weights.w_v);
        REQUIRE(r1.latent_v.sigma.data == r2.latent_v.sigma.data);
    }

    SECTION("identical features and shared parameters give 0.5 weights") {
        ParamStore shared = p;
        for (auto& [k, v] : shared)
            if (k.rfind("a.", 0) == 0) v = shared.at("v" + k.substr(1));
        RunContext run;
        ColdForwardResult r = cold_forward(z_v, z_v, shared, cfg, run);
        for (double w : r.weights.w_v) REQUIRE(w == Catch::Approx(0.5).margin(1e-12));
    }

    SECTION("variance collapse in one modality drives the other weight to 1") {
        Array sv = Array::full({4, 4}, 0.7);
        Array sa = Array::full({4, 4}, 1e-4);
        FusionWeights w = cold_weights(sv, sa);
        for (double v : w.w_v) REQUIRE(v > 0.999);
    }

    SECTION("end-to-end gradient check on a 3-frame toy") {
        FeatureSequence z3_v{'V', random_frames(3, 3, 43)};
        FeatureSequence z3_a{'A', random_frames(3, 3, 44)};
        auto loss = [&](Tape& t, const ParamVars& pv) {
            RunContext rc;
            rc.train = true;  // sampling path with pinned-zero noise
            auto fwd = forward_batch(t, pv, cfg, {&z3_v.frames}, {&z3_a.frames}, rc);
            Var branches = add(mean(square(fwd[0].y_av)),
                               add(mean(square(*fwd[0].y_v)), mean(square(*fwd[0].y_a))));
            return add(branches, mean(mul(fwd[0].weights->v, fwd[0].weights->v)));
        };
        REQUIRE(grad_check_params(loss, p, 1e-5) < 1e-4);
    }
}
