#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "cold/synthdata.hpp"

using namespace cold;

namespace {

// Ridge-regularized least squares, solved by Gaussian elimination. Used as
// the recovery oracle for generated corpora.
std::vector<double> least_squares(const std::vector<std::vector<double>>& x,
                                  const std::vector<double>& y) {
    const std::size_t n = x.size(), d = x[0].size();
    std::vector<std::vector<double>> a(d, std::vector<double>(d + 1, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < d; ++p) {
            for (std::size_t q = 0; q < d; ++q) a[p][q] += x[i][p] * x[i][q];
            a[p][d] += x[i][p] * y[i];
        }
    for (std::size_t p = 0; p < d; ++p) a[p][p] += 1e-9;
    for (std::size_t col = 0; col < d; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < d; ++r)
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        std::swap(a[col], a[piv]);
        for (std::size_t r = 0; r < d; ++r) {
            if (r == col || a[r][col] == 0.0) continue;
            const double f = a[r][col] / a[col][col];
            for (std::size_t q = col; q <= d; ++q) a[r][q] -= f * a[col][q];
        }
    }
    std::vector<double> w(d);
    for (std::size_t p = 0; p < d; ++p) w[p] = a[p][d] / a[p][p];
    return w;
}

double recovery_mse(const std::vector<const LabeledSequence*>& seqs, bool visual,
                    std::size_t lo, std::size_t hi) {
    std::vector<std::vector<double>> x;
    std::vector<double> y;
    for (const auto* s : seqs)
        for (std::size_t i = lo; i < hi; ++i) {
            const Array& z = visual ? s->z_v.frames : s->z_a.frames;
            std::vector<double> row(z.cols());
            for (std::size_t j = 0; j < z.cols(); ++j) row[j] = z.at(i, j);
            x.push_back(std::move(row));
            y.push_back(s->targets.at(i, 0));  // valence
        }
    const std::vector<double> w = least_squares(x, y);
    double mse = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double pred = 0.0;
        for (std::size_t j = 0; j < w.size(); ++j) pred += w[j] * x[i][j];
        mse += (pred - y[i]) * (pred - y[i]);
    }
    return mse / static_cast<double>(x.size());
}

SynthSpec small_spec() {
    SynthSpec spec;
    spec.seed = 5;
    spec.n_train = 6;
    spec.n_val = 2;
    spec.n_test = 2;
    spec.frames = 40;
    spec.feat_dim_v = 8;
    spec.feat_dim_a = 8;
    return spec;
}

}  // namespace

TEST_CASE("corpus generation determinism", "[synthdata]") {
    SynthSpec spec = small_spec();
    Corpus c1 = generate(spec);
    Corpus c2 = generate(spec);
    REQUIRE(c1.train.size() == 6);
    REQUIRE(c1.train[0].z_v.frames.data == c2.train[0].z_v.frames.data);
    REQUIRE(c1.test[1].z_a.frames.data == c2.test[1].z_a.frames.data);
    REQUIRE(c1.train[3].targets.data == c2.train[3].targets.data);
    REQUIRE(c1.feature_rms_v == c2.feature_rms_v);
}

TEST_CASE("high SNR features linearly encode the targets", "[synthdata][oracle]") {
    SynthSpec spec = small_spec();
    spec.n_train = 10;
    spec.snr_schedule_v = {{1.0, 1e6}};
    spec.snr_schedule_a = {{1.0, 1e6}};
    Corpus c = generate(spec);
    std::vector<const LabeledSequence*> seqs;
    for (const auto& s : c.train) seqs.push_back(&s);
    REQUIRE(recovery_mse(seqs, true, 0, spec.frames) < 1e-3);
    REQUIRE(recovery_mse(seqs, false, 0, spec.frames) < 1e-3);
}

TEST_CASE("anti-phase SNR schedules alternate informativeness", "[synthdata][oracle]") {
    SynthSpec spec = small_spec();
    spec.n_train = 12;
    spec.frames = 80;
    spec.snr_schedule_v = {{0.5, 20.0}, {0.5, 0.3}};
    spec.snr_schedule_a = {{0.5, 0.3}, {0.5, 20.0}};
    Corpus c = generate(spec);
    std::vector<const LabeledSequence*> seqs;
    for (const auto& s : c.train) seqs.push_back(&s);

    const double v_first = recovery_mse(seqs, true, 0, 40);
    const double v_second = recovery_mse(seqs, true, 40, 80);
    const double a_first = recovery_mse(seqs, false, 0, 40);
    const double a_second = recovery_mse(seqs, false, 40, 80);
    REQUIRE(v_first < v_second);   // V informative early
    REQUIRE(a_second < a_first);   // A informative late
    REQUIRE(v_first < a_first);    // per-segment ordering flips between modalities
    REQUIRE(a_second < v_second);
}

TEST_CASE("label binning", "[synthdata]") {
    SECTION("paper thresholds with closed neutral boundaries") {
        REQUIRE(bin_labels(0.0) == 1);
        REQUIRE(bin_labels(-0.5) == 0);
        REQUIRE(bin_labels(0.05) == 1);
        REQUIRE(bin_labels(-0.05) == 1);
        REQUIRE(bin_labels(0.0501) == 2);
        REQUIRE(bin_labels(1.0) == 2);
        REQUIRE(bin_labels(-1.0) == 0);
    }

    SECTION("partitions the interval") {
        Rng rng = Rng::seeded(3);
        for (int i = 0; i < 10000; ++i) {
            const int c = bin_labels(rng.uniform(-1.0, 1.0));
            REQUIRE(c >= 0);
            REQUIRE(c <= 2);
        }
    }

    SECTION("out-of-range rejected") {
        REQUIRE_THROWS_AS(bin_labels(1.2), std::invalid_argument);
        REQUIRE_THROWS_AS(bin_labels(-1.2), std::invalid_argument);
    }
}

TEST_CASE("class weights", "[synthdata]") {
    SECTION("counts [50,25,25] normalize to [0.6, 1.2, 1.2]") {
        ClassWeightResult r = class_weights({50, 25, 25});
        REQUIRE(r.weights[0] == Catch::Approx(0.6).margin(1e-12));
        REQUIRE(r.weights[1] == Catch::Approx(1.2).margin(1e-12));
        REQUIRE(r.weights[2] == Catch::Approx(1.2).margin(1e-12));
        REQUIRE(r.omitted.empty());
    }

    SECTION("balanced counts give unit weights") {
        ClassWeightResult r = class_weights({30, 30, 30});
        for (double w : r.weights) REQUIRE(w == Catch::Approx(1.0).margin(1e-12));
    }

    SECTION("rare classes outweigh the majority by the count ratio") {
        // total/count rule: weight ratio before normalization is 98:1
        ClassWeightResult r = class_weights({98, 1, 1});
        REQUIRE(r.weights[1] / r.weights[0] == Catch::Approx(98.0).margin(1e-9));
        REQUIRE(r.weights[2] == r.weights[1]);
    }

    SECTION("zero-count class omitted") {
        ClassWeightResult r = class_weights({10, 0, 10});
        REQUIRE(r.omitted == std::vector<int>{1});
        REQUIRE(r.weights[1] == 0.0);
        REQUIRE(r.weights[0] == Catch::Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("weighted sampler", "[synthdata]") {
    SECTION("balanced classes sample uniformly") {
        std::vector<int> labels;
        for (int i = 0; i < 60; ++i) labels.push_back(i % 3);
        Rng rng = Rng::seeded(4);
        auto order = weighted_sampler(labels, rng);
        REQUIRE(order.size() == labels.size());
        std::vector<int> freq(3, 0);
        Rng rng2 = Rng::seeded(5);
        for (int rep = 0; rep < 200; ++rep)
            for (std::size_t i : weighted_sampler(labels, rng2)) ++freq[labels[i]];
        const double total = 200.0 * 60.0;
        for (int c = 0; c < 3; ++c)
            REQUIRE(freq[c] / total == Catch::Approx(1.0 / 3).margin(0.02));
    }

    SECTION("counts [90,10] resample to roughly even classes") {
        std::vector<int> labels(100, 0);
        for (int i = 90; i < 100; ++i) labels[i] = 1;
        Rng rng = Rng::seeded(6);
        std::size_t hits[2] = {0, 0};
        std::size_t draws = 0;
        for (int rep = 0; rep < 1000; ++rep)
            for (std::size_t i : weighted_sampler(labels, rng)) {
                ++hits[labels[i]];
                ++draws;
            }
        REQUIRE(static_cast<double>(hits[0]) / draws == Catch::Approx(0.5).margin(0.02));
        REQUIRE(static_cast<double>(hits[1]) / draws == Catch::Approx(0.5).margin(0.02));
    }

    SECTION("fixed seed reproduces the order") {
        std::vector<int> labels{0, 0, 1, 2, 1, 0};
        Rng r1 = Rng::seeded(7), r2 = Rng::seeded(7);
        REQUIRE(weighted_sampler(labels, r1) == weighted_sampler(labels, r2));
    }
}

TEST_CASE("corrupt_modality", "[synthdata]") {
    SynthSpec spec = small_spec();
    spec.frames = 150;
    Corpus c = generate(spec);
    const LabeledSequence& seq = c.train[0];

    SECTION("fraction 0 is the identity") {
        Rng rng = Rng::seeded(8);
        LabeledSequence out = corrupt_modality(seq, 'V', 0.0, true, rng, c.feature_rms_v);
        REQUIRE(out.z_v.frames.data == seq.z_v.frames.data);
        for (bool m : out.mask_v) REQUIRE_FALSE(m);
    }

    SECTION("fraction 1 replaces the whole modality") {
        Rng rng = Rng::seeded(9);
        LabeledSequence out = corrupt_modality(seq, 'A', 1.0, false, rng, c.feature_rms_a);
        for (bool m : out.mask_a) REQUIRE(m);
        std::size_t unchanged = 0;
        for (std::size_t i = 0; i < out.z_a.frames.numel(); ++i)
            if (out.z_a.frames[i] == seq.z_a.frames[i]) ++unchanged;
        REQUIRE(unchanged == 0);
    }

    SECTION("fraction 0.5 contiguous marks exactly 75 consecutive frames") {
        Rng rng = Rng::seeded(10);
        LabeledSequence out = corrupt_modality(seq, 'V', 0.5, true, rng, c.feature_rms_v);
        std::size_t count = 0, first = 150, last = 0;
        for (std::size_t i = 0; i < 150; ++i)
            if (out.mask_v[i]) {
                ++count;
                first = std::min(first, i);
                last = std::max(last, i);
            }
        REQUIRE(count == 75);
        REQUIRE(last - first + 1 == 75);
    }

    SECTION("the untouched modality and the targets stay bitwise identical") {
        Rng rng = Rng::seeded(11);
        LabeledSequence out = corrupt_modality(seq, 'V', 0.5, false, rng, c.feature_rms_v);
        REQUIRE(out.z_a.frames.data == seq.z_a.frames.data);
        REQUIRE(out.targets.data == seq.targets.data);
        for (bool m : out.mask_a) REQUIRE_FALSE(m);
    }
}

TEST_CASE("corpus persistence round trip", "[synthdata]") {
    namespace fs = std::filesystem;
    const std::string dir = (fs::temp_directory_path() / "cold_corpus_test").string();
    SynthSpec spec = small_spec();
    Corpus c = generate(spec);
    save_corpus(c, dir);

    SECTION("loader reproduces the corpus bitwise") {
        Corpus back = load_corpus(dir);
        REQUIRE(back.train.size() == c.train.size());
        REQUIRE(back.train[2].z_v.frames.data == c.train[2].z_v.frames.data);
        REQUIRE(back.val[0].targets.data == c.val[0].targets.data);
        REQUIRE(back.test[1].classes == c.test[1].classes);
        REQUIRE(back.feature_rms_a == c.feature_rms_a);
    }

    SECTION("validation rejects tampered content") {
        // out-of-range target
        std::ofstream out(fs::path(dir) / "val.jsonl", std::ios::app);
        json bad = detail::sequence_to_json(c.val[0]);
        bad["targets"][0][0] = 2.5;
        out << bad.dump() << '\n';
        out.close();
        REQUIRE_THROWS(load_corpus(dir));
    }

    fs::remove_all(dir);
}
