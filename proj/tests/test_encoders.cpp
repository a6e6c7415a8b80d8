#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "cold/encoders.hpp"

using namespace cold;

namespace {

ParamStore random_encoder_params(const std::string& prefix, const EncoderConfig& cfg,
                                 std::uint64_t seed, bool with_head = true) {
    Rng rng = Rng::seeded(seed);
    ParamStore p;
    init_gru_params(p, prefix, cfg, rng);
    if (with_head) init_latent_head_params(p, prefix + ".head", cfg, rng);
    return p;
}

Array random_frames(std::size_t n, std::size_t d, std::uint64_t seed) {
    Rng rng = Rng::seeded(seed);
    Array a({n, d});
    for (auto& v : a.data) v = rng.uniform(-1.0, 1.0);
    return a;
}

}  // namespace

TEST_CASE("backbone projection", "[encoders]") {
    SECTION("identity kind passes features through unchanged") {
        BackboneConfig cfg{BackboneConfig::Kind::identity, 4, 4};
        Tape t;
        ParamVars pv;
        Array x = random_frames(3, 4, 11);
        Var out = backbone_project(t, pv, "v", t.leaf(x), cfg);
        REQUIRE(t.value(out).data == x.data);
    }

    SECTION("width mismatch rejected") {
        BackboneConfig cfg{BackboneConfig::Kind::identity, 4, 4};
        Tape t;
        ParamVars pv;
        REQUIRE_THROWS_AS(backbone_project(t, pv, "v", t.leaf(random_frames(3, 5, 1)), cfg),
                          std::invalid_argument);
    }

    SECTION("zero weights give all-zero output") {
        BackboneConfig cfg{BackboneConfig::Kind::affine_tanh, 4, 3};
        ParamStore p;
        p["v.bb.w"] = Array({4, 3});
        p["v.bb.b"] = Array({3});
        Tape t;
        ParamVars pv = enter_params(t, p);
        Var out = backbone_project(t, pv, "v", t.leaf(random_frames(5, 4, 2)), cfg);
        for (double v : t.value(out).data) REQUIRE(v == 0.0);
    }

    SECTION("gradient check through the affine backbone") {
        BackboneConfig cfg{BackboneConfig::Kind::affine_tanh, 4, 3};
        Rng rng = Rng::seeded(5);
        ParamStore p;
        init_backbone_params(p, "v", cfg, rng);
        const Array x = random_frames(4, 4, 6);
        auto loss = [&](Tape& t, const ParamVars& pv) {
            return mean(square(backbone_project(t, pv, "v", t.leaf(x), cfg)));
        };
        REQUIRE(grad_check_params(loss, p, 1e-5) < 1e-4);
    }
}

TEST_CASE("gru_encode shape and fixed-point behaviour", "[encoders]") {
    EncoderConfig cfg;
    cfg.feat_dim = 3;
    cfg.hidden = 2;
    cfg.layers = 2;
    cfg.bidirectional = true;
    cfg.dropout = 0.0;
    RunContext run;

    SECTION("N=1 sequence gives 1 x C output") {
        ParamStore p = random_encoder_params("v", cfg, 3, false);
        Tape t;
        ParamVars pv = enter_params(t, p);
        Var h = gru_encode(t, pv, "v", t.leaf(random_frames(1, 3, 4)), cfg, run);
        REQUIRE(t.value(h).shape == std::vector<std::size_t>{1, cfg.context_dim()});
    }

    SECTION("all-zero input and params settle at the zero fixed point") {
        ParamStore p = random_encoder_params("v", cfg, 3, false);
        for (auto& [k, v] : p) std::fill(v.data.begin(), v.data.end(), 0.0);
        Tape t;
        ParamVars pv = enter_params(t, p);
        Var h = gru_encode(t, pv, "v", t.leaf(Array({4, 3})), cfg, run);
        const Array& hv = t.value(h);
        for (double v : hv.data) REQUIRE(v == 0.0);
        for (std::size_t i = 1; i < 4; ++i)
            for (std::size_t j = 0; j < cfg.context_dim(); ++j)
                REQUIRE(hv.at(i, j) == hv.at(0, j));
    }

    SECTION("gradients w.r.t. every GRU parameter match finite differences") {
        ParamStore p = random_encoder_params("v", cfg, 9, false);
        const Array x = random_frames(5, 3, 10);
        RunContext rc;
        auto loss = [&](Tape& t, const ParamVars& pv) {
            return mean(square(gru_encode(t, pv, "v", t.leaf(x), cfg, rc)));
        };
        REQUIRE(grad_check_params(loss, p, 1e-5) < 1e-4);
    }
}

TEST_CASE("bidirectional symmetry", "[encoders]") {
    // Reversing the input and swapping the forward/backward parameter blocks
    // must reverse the output sequence.
    EncoderConfig cfg;
    cfg.feat_dim = 3;
    cfg.hidden = 2;
    cfg.layers = 2;
    cfg.bidirectional = true;
    cfg.dropout = 0.0;
    RunContext run;

    ParamStore p = random_encoder_params("v", cfg, 21, false);
    ParamStore swapped = p;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        const std::string base = "v.gru.l" + std::to_string(l);
        for (const char* leafname : {".w_ih", ".w_hh", ".b_ih", ".b_hh"})
            std::swap(swapped[base + ".f" + leafname], swapped[base + ".b" + leafname]);
        if (l == 0) continue;
        // Layers above the first consume [fwd | bwd] concatenations, whose
        // halves also trade places, so swap the matching w_ih row blocks.
        for (const char* dir : {".f", ".b"}) {
            Array& w = swapped[base + dir + ".w_ih"];
            const std::size_t half = cfg.hidden, width = w.cols();
            for (std::size_t rrow = 0; rrow < half; ++rrow)
                for (std::size_t ccol = 0; ccol < width; ++ccol)
                    std::swap(w.at(rrow, ccol), w.at(half + rrow, ccol));
        }
    }
    // In the swapped run the concatenation order is [old-bwd | old-fwd], so
    // compare half-blocks crosswise.
    const Array x = random_frames(6, 3, 22);
    Array xrev({6, 3});
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 3; ++j) xrev.at(i, j) = x.at(5 - i, j);

    Tape t1, t2;
    ParamVars pv1 = enter_params(t1, p);
    ParamVars pv2 = enter_params(t2, swapped);
    const Array h = t1.value(gru_encode(t1, pv1, "v", t1.leaf(x), cfg, run));
    const Array hr = t2.value(gru_encode(t2, pv2, "v", t2.leaf(xrev), cfg, run));

    const std::size_t half = cfg.hidden;
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < half; ++j) {
            REQUIRE(h.at(i, j) == Catch::Approx(hr.at(5 - i, half + j)).margin(1e-12));
            REQUIRE(h.at(i, half + j) == Catch::Approx(hr.at(5 - i, j)).margin(1e-12));
        }
}

TEST_CASE("latent head", "[encoders]") {
    EncoderConfig cfg;
    cfg.feat_dim = 3;
    cfg.hidden = 2;
    cfg.layers = 1;
    cfg.bidirectional = true;

    SECTION("zero hidden and zero params give mu 0, sigma softplus(0)+floor") {
        ParamStore p;
        Rng rng = Rng::seeded(1);
        init_latent_head_params(p, "v.head", cfg, rng);
        for (auto& [k, v] : p) std::fill(v.data.begin(), v.data.end(), 0.0);
        Tape t;
        ParamVars pv = enter_params(t, p);
        LatentVars lat = latent_head(t, pv, "v.head", t.leaf(Array({3, 4})), cfg);
        for (double v : t.value(lat.mu).data) REQUIRE(v == 0.0);
        for (double v : t.value(lat.sigma).data)
            REQUIRE(v == Catch::Approx(std::log(2.0) + cfg.sigma_floor).margin(1e-12));
    }

    SECTION("sigma floor holds for 1e4 random inputs") {
        ParamStore p;
        Rng rng = Rng::seeded(2);
        init_latent_head_params(p, "v.head", cfg, rng);
        Rng inputs = Rng::seeded(3);
        for (int k = 0; k < 10; ++k) {
            Array h({1000, 4});
            for (auto& v : h.data) v = inputs.uniform(-50.0, 50.0);
            Tape t;
            ParamVars pv = enter_params(t, p);
            LatentVars lat = latent_head(t, pv, "v.head", t.leaf(h), cfg);
            for (double v : t.value(lat.sigma).data) REQUIRE(v >= cfg.sigma_floor);
        }
    }

    SECTION("gradient check through both heads") {
        ParamStore p;
        Rng rng = Rng::seeded(4);
        init_latent_head_params(p, "v.head", cfg, rng);
        const Array h = random_frames(3, 4, 5);
        auto loss = [&](Tape& t, const ParamVars& pv) {
            LatentVars lat = latent_head(t, pv, "v.head", t.leaf(h), cfg);
            return add(mean(square(lat.mu)), mean(square(lat.sigma)));
        };
        REQUIRE(grad_check_params(loss, p, 1e-5) < 1e-4);
    }
}

TEST_CASE("sample_context", "[encoders]") {
    Tape t;
    LatentVars lat{t.leaf(Array({2, 2}, {0.3, -0.7, 1.1, 0.0})),
                   t.leaf(Array({2, 2}, {0.5, 1.2, 0.25, 2.0}))};

    SECTION("eval mode returns the mean bitwise") {
        RunContext run;
        run.train = false;
        Var h = sample_context(t, lat, run);
        REQUIRE(h.id == lat.mu.id);
        REQUIRE(t.value(h).data == t.value(lat.mu).data);
    }

    SECTION("train mode with pinned noise equals the mean") {
        RunContext run;
        run.train = true;
        run.noise = NoiseSource{nullptr};
        Var h = sample_context(t, lat, run);
        for (std::size_t i = 0; i < 4; ++i)
            REQUIRE(t.value(h)[i] == t.value(lat.mu)[i]);
    }

    SECTION("sample statistics match mu and sigma") {
        const double mu = 0.3, sigma = 0.5;
        Rng noise = Rng::seeded(77);
        const int draws = 100000;
        double s1 = 0.0, s2 = 0.0;
        for (int k = 0; k < draws; ++k) {
            Tape tt;
            LatentVars l1{tt.leaf(Array({1, 1}, {mu})), tt.leaf(Array({1, 1}, {sigma}))};
            RunContext run;
            run.train = true;
            run.noise = NoiseSource{&noise};
            const double v = tt.value(sample_context(tt, l1, run))[0];
            s1 += v;
            s2 += v * v;
        }
        const double m = s1 / draws;
        const double sd = std::sqrt(s2 / draws - m * m);
        REQUIRE(std::abs(m - mu) < 0.01 * sigma);
        REQUIRE(std::abs(sd - sigma) < 0.02 * sigma);
    }

    SECTION("reparameterization path carries gradients into mu and sigma") {
        Rng noise = Rng::seeded(5);
        Array z({2, 2});
        for (auto& v : z.data) v = noise.normal();
        // Frozen z keeps the graph a fixed function for the FD oracle.
        ParamStore p;
        p["mu"] = Array({2, 2}, {0.3, -0.7, 1.1, 0.0});
        p["sigma"] = Array({2, 2}, {0.5, 1.2, 0.25, 2.0});
        auto loss = [&](Tape& tt, const ParamVars& pv) {
            Var h = add(pv.at("mu"), mul(pv.at("sigma"), tt.leaf(z)));
            return mean(square(h));
        };
        REQUIRE(grad_check_params(loss, p, 1e-5) < 1e-4);
    }
}

TEST_CASE("train-mode forward is deterministic given a seeded rng", "[encoders]") {
    EncoderConfig cfg;
    cfg.feat_dim = 3;
    cfg.hidden = 2;
    cfg.layers = 2;
    cfg.bidirectional = true;
    cfg.dropout = 0.5;
    ParamStore p = random_encoder_params("v", cfg, 31, false);
    const Array x = random_frames(5, 3, 32);

    auto run_once = [&] {
        Rng drop = Rng::seeded(100);
        RunContext run;
        run.train = true;
        run.dropout_rng = &drop;
        Tape t;
        ParamVars pv = enter_params(t, p);
        return t.value(gru_encode(t, pv, "v", t.leaf(x), cfg, run)).data;
    };
    REQUIRE(run_once() == run_once());
}
