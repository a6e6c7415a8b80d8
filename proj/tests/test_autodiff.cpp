#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "cold/autodiff.hpp"
#include "cold/rng.hpp"

using namespace cold;

namespace {

Array random_array(std::vector<std::size_t> shape, Rng& rng, double lo = -2.0,
                   double hi = 2.0) {
    Array a(std::move(shape));
    for (auto& v : a.data) v = rng.uniform(lo, hi);
    return a;
}

}  // namespace

TEST_CASE("forward values of basic primitives", "[autodiff]") {
    Tape t;

    SECTION("sigmoid(0) = 0.5") {
        Var y = sigmoid(t.scalar(0.0));
        REQUIRE(t.scalar_value(y) == Catch::Approx(0.5).margin(1e-15));
    }

    SECTION("softmax of a constant vector is uniform") {
        Var y = softmax(t.leaf(Array({3}, {1.7, 1.7, 1.7})), 0);
        for (std::size_t i = 0; i < 3; ++i)
            REQUIRE(t.value(y)[i] == Catch::Approx(1.0 / 3.0).margin(1e-15));
    }

    SECTION("matmul shape contract") {
        Var a = t.leaf(Array({2, 3}, {1, 2, 3, 4, 5, 6}));
        Var b = t.leaf(Array({3, 4}, std::vector<double>(12, 1.0)));
        Var y = matmul(a, b);
        REQUIRE(t.value(y).shape == std::vector<std::size_t>{2, 4});
        REQUIRE(t.value(y).at(0, 0) == Catch::Approx(6.0));
        REQUIRE(t.value(y).at(1, 3) == Catch::Approx(15.0));
    }

    SECTION("softplus matches log1p(exp)") {
        Var y = softplus(t.scalar(0.0));
        REQUIRE(t.scalar_value(y) == Catch::Approx(std::log(2.0)).margin(1e-15));
    }
}

TEST_CASE("backward populates exact gradients for hand cases", "[autodiff]") {
    SECTION("d sigmoid / dx at 0 is 0.25") {
        Tape t;
        Var x = t.scalar(0.0);
        Var y = sigmoid(x);
        t.backward(y);
        REQUIRE(t.grad(x)[0] == Catch::Approx(0.25).margin(1e-15));
    }

    SECTION("d sum(x*x) / dx = 2x") {
        Tape t;
        Var x = t.leaf(Array({2}, {1.0, 2.0}));
        Var y = sum(mul(x, x));
        t.backward(y);
        REQUIRE(t.grad(x)[0] == Catch::Approx(2.0));
        REQUIRE(t.grad(x)[1] == Catch::Approx(4.0));
    }

    SECTION("unreachable nodes get zero grad") {
        Tape t;
        Var x = t.leaf(Array({2}, {1.0, 2.0}));
        Var unused = exp(x);
        Var y = sum(x);
        t.backward(y);
        REQUIRE(t.grad(unused)[0] == 0.0);
        REQUIRE(t.grad(unused)[1] == 0.0);
        REQUIRE(t.grad(x)[0] == 1.0);
    }

    SECTION("repeated backward is idempotent") {
        Tape t;
        Var x = t.leaf(Array({2}, {1.0, 2.0}));
        Var y = sum(mul(x, x));
        t.backward(y);
        const Array first = t.grad(x);
        t.backward(y);
        REQUIRE(t.grad(x).data == first.data);
    }

    SECTION("non-scalar root rejected") {
        Tape t;
        Var x = t.leaf(Array({2}, {1.0, 2.0}));
        REQUIRE_THROWS_AS(t.backward(x), std::invalid_argument);
    }
}

TEST_CASE("error contracts", "[autodiff]") {
    Tape t;
    Var a = t.leaf(Array({2, 3}, std::vector<double>(6, 1.0)));
    Var b = t.leaf(Array({3, 3}, std::vector<double>(9, 1.0)));

    SECTION("shape mismatch names the op and both shapes") {
        try {
            add(a, b);
            FAIL("expected a shape error");
        } catch (const std::invalid_argument& e) {
            const std::string msg = e.what();
            REQUIRE(msg.find("add") != std::string::npos);
            REQUIRE(msg.find("(2x3)") != std::string::npos);
            REQUIRE(msg.find("(3x3)") != std::string::npos);
        }
    }

    SECTION("log/div/sqrt of non-positive operands rejected") {
        Var z = t.leaf(Array({2}, {1.0, 0.0}));
        Var n = t.leaf(Array({2}, {1.0, -1.0}));
        REQUIRE_THROWS_AS(log(z), std::invalid_argument);
        REQUIRE_THROWS_AS(log(n), std::invalid_argument);
        REQUIRE_THROWS_AS(div(a, t.leaf(Array({2, 3}, {1, 1, 1, 1, 0, 1}))),
                          std::invalid_argument);
        REQUIRE_THROWS_AS(sqrt(z), std::invalid_argument);
        REQUIRE_THROWS_AS(reciprocal(z), std::invalid_argument);
    }
}

TEST_CASE("tape evaluation is deterministic", "[autodiff]") {
    Rng rng = Rng::seeded(7);
    const Array x = random_array({4, 4}, rng);
    auto run = [&] {
        Tape t;
        Var v = t.leaf(x);
        Var y = mean(tanh(matmul(v, v)));
        t.backward(y);
        return std::pair{t.scalar_value(y), t.grad(v).data};
    };
    auto [y1, g1] = run();
    auto [y2, g2] = run();
    REQUIRE(y1 == y2);
    REQUIRE(g1 == g2);
}

// Every primitive, checked against central finite differences at random
// points: relative error < 1e-4 at step 1e-5.
TEST_CASE("finite-difference sweep over all primitives", "[autodiff][oracle]") {
    Rng rng = Rng::seeded(42);
    const double step = 1e-5;
    const double tol = 1e-4;

    struct Case {
        const char* name;
        std::function<Var(Tape&, Var)> fn;
        std::function<Array(Rng&)> point;
    };

    auto vec6 = [](Rng& r) {
        Rng rr = r.fork(r.next_u64());
        return random_array({6}, rr);
    };
    auto vec6pos = [](Rng& r) {
        Rng rr = r.fork(r.next_u64());
        return random_array({6}, rr, 0.3, 2.0);
    };
    auto mat23 = [](Rng& r) {
        Rng rr = r.fork(r.next_u64());
        return random_array({2, 3}, rr);
    };

    const std::vector<Case> cases = {
        {"add", [](Tape& t, Var x) { return sum(mul(add(x, x), x)); }, vec6},
        {"sub", [](Tape& t, Var x) { return sum(square(sub(x, mul(x, x)))); }, vec6},
        {"mul", [](Tape& t, Var x) { return sum(mul(x, exp(x))); }, vec6},
        {"div",
         [](Tape& t, Var x) {
             Var shifted = add(mul(x, x), t.scalar(1.0) * x / x);  // keep positive
             return sum(div(x, shifted));
         },
         vec6},
        {"matmul",
         [](Tape& t, Var x) {
             Var w = t.leaf(Array({3, 2}, {0.5, -1.0, 2.0, 0.25, -0.75, 1.5}));
             return sum(tanh(matmul(x, w)));
         },
         mat23},
        {"concat",
         [](Tape& t, Var x) {
             Var c = concat({slice(x, 0, 0, 3), slice(x, 0, 3, 3)}, 0);
             return mean(square(c));
         },
         vec6},
        {"slice",
         [](Tape& t, Var x) { return sum(mul(slice(x, 1, 1, 2), slice(x, 1, 0, 2))); },
         mat23},
        {"exp", [](Tape& t, Var x) { return mean(exp(x)); }, vec6},
        {"log", [](Tape& t, Var x) { return mean(log(x)); }, vec6pos},
        {"tanh", [](Tape& t, Var x) { return sum(tanh(x)); }, vec6},
        {"sigmoid", [](Tape& t, Var x) { return sum(sigmoid(x)); }, vec6},
        {"softplus", [](Tape& t, Var x) { return sum(softplus(x)); }, vec6},
        {"softmax",
         [](Tape& t, Var x) {
             Var p = softmax(x, 0);
             Var w = t.leaf(Array({6}, {1, -2, 3, 0.5, -1, 2}));
             return sum(mul(p, w));
         },
         vec6},
        {"sum", [](Tape& t, Var x) { return sum(square(x)); }, vec6},
        {"mean", [](Tape& t, Var x) { return mean(square(x)); }, vec6},
        {"row_sum", [](Tape& t, Var x) { return sum(square(row_sum(x))); }, mat23},
        {"row_mean", [](Tape& t, Var x) { return sum(square(row_mean(x))); }, mat23},
        {"square", [](Tape& t, Var x) { return mean(square(x)); }, vec6},
        {"sqrt", [](Tape& t, Var x) { return sum(sqrt(x)); }, vec6pos},
        {"l2norm", [](Tape& t, Var x) { return sum(square(l2norm_rows(x))); }, mat23},
        {"reciprocal", [](Tape& t, Var x) { return sum(reciprocal(x)); }, vec6pos},
        {"add_rowvec",
         [](Tape& t, Var x) {
             Var v = t.leaf(Array({3}, {0.5, -0.25, 1.0}));
             return sum(tanh(add_rowvec(x, v)));
         },
         mat23},
        {"scale_rows",
         [](Tape& t, Var x) {
             Var s = t.leaf(Array({2}, {0.5, -1.5}));
             return sum(square(scale_rows(x, s)));
         },
         mat23},
    };

    const int points_per_case = 200 / static_cast<int>(cases.size()) + 9;
    for (const auto& c : cases) {
        double worst = 0.0;
        for (int k = 0; k < points_per_case; ++k)
            worst = std::max(worst, grad_check(c.fn, c.point(rng), step));
        INFO(c.name);
        REQUIRE(worst < tol);
    }
}

TEST_CASE("grad_check contract", "[autodiff]") {
    SECTION("linear function is exact") {
        const Array a({4}, {1.0, -2.0, 3.0, 0.5});
        auto f = [&](Tape& t, Var x) { return sum(mul(x, t.leaf(a))); };
        Rng rng = Rng::seeded(3);
        const double err = grad_check(f, random_array({4}, rng), 1e-5);
        REQUIRE(err < 1e-10);
    }

    SECTION("step = 0 rejected") {
        auto f = [](Tape& t, Var x) { return sum(x); };
        REQUIRE_THROWS_AS(grad_check(f, Array({2}, {1.0, 2.0}), 0.0),
                          std::invalid_argument);
    }

    SECTION("non-scalar function rejected") {
        auto f = [](Tape& t, Var x) { return exp(x); };
        REQUIRE_THROWS_AS(grad_check(f, Array({2}, {1.0, 2.0}), 1e-5),
                          std::invalid_argument);
    }
}

TEST_CASE("softmax shift invariance and row variant", "[autodiff]") {
    Tape t;
    Var x = t.leaf(Array({4}, {0.1, -1.0, 2.0, 0.7}));
    Var xs = add(x, t.leaf(Array({4}, {5.0, 5.0, 5.0, 5.0})));
    const Array p1 = t.value(softmax(x, 0));
    const Array p2 = t.value(softmax(xs, 0));
    for (std::size_t i = 0; i < 4; ++i)
        REQUIRE(p1[i] == Catch::Approx(p2[i]).margin(1e-12));

    Var m = t.leaf(Array({2, 3}, {1, 2, 3, -1, 0, 1}));
    const Array pm = t.value(softmax(m, 1));
    REQUIRE(pm.at(0, 0) + pm.at(0, 1) + pm.at(0, 2) == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(pm.at(1, 0) + pm.at(1, 1) + pm.at(1, 2) == Catch::Approx(1.0).margin(1e-12));
}
