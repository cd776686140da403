#include <array>
#include <cstring>
#include <fstream>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "ivaloc/parameters.hpp"
#include "ivaloc/tensor.hpp"
#include "gradient_cases.hpp"

using namespace ivaloc;
using ivaloc::testing::random_tensor;

namespace {

std::vector<double> values(const Var& v) { return {v.value().begin(), v.value().end()}; }

constexpr double kGradTol = 1e-4;

}  // namespace

TEST_CASE("conv1d") {
    Tape t;
    SUBCASE("identity kernel") {
        const Var x = t.leaf({1, 5}, {1, -2, 3, 4, 5});
        const Var y = conv1d(x, t.leaf({1, 1, 3}, {0, 1, 0}), t.leaf({1}, {0}));
        CHECK(values(y) == std::vector<double>{1, -2, 3, 4, 5});
    }
    SUBCASE("box kernel with zero padding") {
        const Var y = conv1d(t.leaf({1, 3}, {1, 2, 3}), t.leaf({1, 1, 3}, {1, 1, 1}), t.leaf({1}, {0}));
        CHECK(values(y) == std::vector<double>{3, 6, 5});
    }
    SUBCASE("same padding keeps the length") {
        const Tensor x = random_tensor({12, 1250}, 1);
        const Tensor w = random_tensor({64, 12, 3}, 2);
        const Var y = conv1d(t.leaf(x), t.leaf(w), t.leaf(Tensor({64})));
        CHECK(y.shape() == Shape{64, 1250});
    }
    SUBCASE("channel mismatch") {
        CHECK_THROWS_AS(conv1d(t.leaf(Tensor({3, 8})), t.leaf(Tensor({2, 2, 3})), t.leaf(Tensor({2}))), ShapeError);
    }
}

TEST_CASE("maxpool1d") {
    Tape t;
    CHECK(values(maxpool1d(t.leaf({1, 4}, {1, 3, 2, 5}))) == std::vector<double>{3, 5});
    CHECK(values(maxpool1d(t.leaf({1, 2}, {-1, -3}))) == std::vector<double>{-1});
    const Var odd = maxpool1d(t.leaf(random_tensor({2, 625}, 4)));
    CHECK(odd.shape() == Shape{2, 312});
    std::size_t len = 1250;
    for (std::size_t expect : {625u, 312u, 156u, 78u}) {
        len = maxpool1d(t.leaf(Tensor({1, len}))).shape()[1];
        CHECK(len == expect);
    }
    CHECK_THROWS_AS(maxpool1d(t.leaf(Tensor({1, 1}))), ShapeError);
}

TEST_CASE("dense") {
    Tape t;
    CHECK(values(dense(t.leaf({2}, {4, 5}), t.leaf({1, 2}, {1, 2}), t.leaf({1}, {3}))) == std::vector<double>{17});
    CHECK(values(dense(t.leaf({2}, {4, 5}), t.leaf({2, 2}, {1, 0, 0, 1}), t.leaf({2}, {0, 0}))) ==
          std::vector<double>{4, 5});
    CHECK(values(dense(t.leaf({2}, {4, 5}), t.leaf(Tensor({3, 2})), t.leaf({3}, {7, 8, 9}))) ==
          std::vector<double>{7, 8, 9});
    CHECK_THROWS_AS(dense(t.leaf(Tensor({3})), t.leaf(Tensor({1, 2})), t.leaf(Tensor({1}))), ShapeError);
}

TEST_CASE("activations") {
    Tape t;
    CHECK(sigmoid(t.leaf({1}, {0.0})).item() == 0.5);
    CHECK(leaky_relu(t.leaf({1}, {-1.0})).item() == doctest::Approx(-0.01));
    CHECK(ivaloc::tanh(t.leaf({1}, {0.0})).item() == 0.0);
    CHECK(std::abs(sigmoid(t.leaf({1}, {std::log(3.0)})).item() - 0.75) < 1e-9);

    const auto uniform = values(softmax(t.leaf({3}, {2.5, 2.5, 2.5})));
    for (double v : uniform) CHECK(v == doctest::Approx(1.0 / 3.0));

    const Tensor x = random_tensor({7}, 5, -5, 5);
    Tensor shifted = x;
    for (double& v : shifted.data) v += 123.4;
    const auto a = values(softmax(t.leaf(x))), b = values(softmax(t.leaf(shifted)));
    CHECK(std::abs(std::accumulate(a.begin(), a.end(), 0.0) - 1.0) < 1e-9);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-9);

    // Axis handling on a matrix.
    const Var m = softmax(t.leaf({2, 3}, {1, 2, 3, 1, 1, 1}), 1);
    CHECK(m.value()[3] == doctest::Approx(1.0 / 3.0));
    const Var cols = softmax(t.leaf({2, 2}, {0, 5, 0, 5}), 0);
    for (double v : cols.value()) CHECK(v == doctest::Approx(0.5));
}

TEST_CASE("primitives stay finite on large inputs") {
    Tape t;
    const Var x = t.leaf({6}, {-1e6, -1e3, -1, 1, 1e3, 1e6});
    for (const Var& y : {sigmoid(x), ivaloc::tanh(x), leaky_relu(x), softmax(x)})
        for (double v : y.value()) CHECK(std::isfinite(v));
    for (double z : {-1e6, 1e6}) {
        Tape u;
        CHECK(std::isfinite(bce_with_logits(u.leaf({1}, {z}), 1.0).item()));
        CHECK(std::isfinite(bce_with_logits(u.leaf({1}, {z}), 0.0).item()));
    }
}

TEST_CASE("dropout") {
    Rng rng(42);
    Tape t;
    const Tensor x = random_tensor({100}, 6);
    const Var v = t.leaf(x);
    CHECK(values(dropout(v, 0.0, true, rng)) == x.data);
    CHECK(values(dropout(v, 0.7, false, rng)) == x.data);
    CHECK_THROWS_AS(dropout(v, 1.0, true, rng), ContractError);
    CHECK_THROWS_AS(dropout(v, -0.1, true, rng), ContractError);

    // Monte-Carlo estimate of the inverted-dropout expectation.
    const std::size_t n = 100000;
    const Var ones = t.leaf(Tensor({n}, 1.0));
    const auto y = values(dropout(ones, 0.2, true, rng));
    const double kept = static_cast<double>(std::count_if(y.begin(), y.end(), [](double a) { return a != 0.0; })) / n;
    const double mean = std::accumulate(y.begin(), y.end(), 0.0) / n;
    CHECK(std::abs(kept - 0.8) < 0.01);
    CHECK(std::abs(mean - 1.0) < 0.02);
}

TEST_CASE("lstm cell") {
    SUBCASE("zero parameters keep the zero state") {
        Tape t;
        const LstmWeights w{t.leaf(Tensor({8, 3})), t.leaf(Tensor({8, 2})), t.leaf(Tensor({8}))};
        const LstmState s = lstm_cell_step(t.leaf(random_tensor({3}, 7)), {t.leaf(Tensor({2})), t.leaf(Tensor({2}))}, w);
        CHECK(values(s.h) == std::vector<double>{0, 0});
        CHECK(values(s.c) == std::vector<double>{0, 0});
    }
    SUBCASE("full-sized cell") {
        Tape t;
        const LstmWeights w{t.leaf(random_tensor({256, 512}, 8)), t.leaf(random_tensor({256, 64}, 9)),
                            t.leaf(Tensor({256}))};
        const LstmState s =
            lstm_cell_step(t.leaf(random_tensor({512}, 10)), {t.leaf(Tensor({64})), t.leaf(Tensor({64}))}, w);
        CHECK(s.h.size() == 64);
    }
    SUBCASE("scalar hand computation") {
        // Gate order i, f, g, o; only W_g = 1 and b_o = 100 are non-zero, x = 1.
        Tape t;
        const LstmWeights w{t.leaf({4, 1}, {0, 0, 1, 0}), t.leaf({4, 1}, {0, 0, 0, 0}), t.leaf({4}, {0, 0, 0, 100})};
        const LstmState s = lstm_cell_step(t.leaf({1}, {1.0}), {t.leaf({1}, {0.0}), t.leaf({1}, {0.0})}, w);
        CHECK(std::abs(s.c.item() - 0.380797) < 1e-4);
        CHECK(std::abs(s.h.item() - 0.363399) < 1e-4);
    }
}

TEST_CASE("backward basics") {
    SUBCASE("identity loss") {
        Tape t;
        const Var x = t.leaf({1}, {3.0}, true);
        t.backward(x);
        CHECK(t.grad(x)[0] == 1.0);
    }
    SUBCASE("sigmoid slope at zero") {
        Tape t;
        const Var w = t.leaf({1}, {0.0}, true);
        const Var x = t.leaf({1}, {1.0});
        t.backward(sigmoid(mul(w, x)));
        CHECK(t.grad(w)[0] == doctest::Approx(0.25));
    }
    SUBCASE("unused leaves get zero gradient") {
        Tape t;
        const Var used = t.leaf({2}, {1, 2}, true);
        const Var unused = t.leaf({3}, {1, 2, 3}, true);
        t.backward(sum(used));
        for (double g : t.grad(unused)) CHECK(g == 0.0);
    }
    SUBCASE("contract errors") {
        Tape t;
        const Var x = t.leaf({2}, {1, 2}, true);
        CHECK_THROWS_AS(t.backward(x), ContractError);
        const Var s = sum(x);
        CHECK_THROWS_AS(t.grad(x), ContractError);
        t.backward(s);
        CHECK_THROWS_AS(t.backward(s), ContractError);
        CHECK_THROWS_AS(sum(x), ContractError);
        Tape other;
        CHECK_THROWS_AS(other.backward(s), ContractError);
        CHECK_THROWS_AS(add(x, other.leaf({2}, {0, 0})), ContractError);
    }
}

TEST_CASE("finite_diff_check on a quadratic") {
    const ScalarFn square = [](Tape&, std::span<const Var> in) { return mul(in[0], in[0]); };
    CHECK(finite_diff_check(square, {Tensor({1}, {3.0})}) < 1e-7);

    Tape t;
    const Var x = t.leaf({1}, {3.0}, true);
    t.backward(mul(x, x));
    CHECK(t.grad(x)[0] == 6.0);
}

TEST_CASE("analytic gradients match central differences") {
    for (const auto& c : ivaloc::testing::primitive_gradient_cases()) {
        const double err = finite_diff_check(c.f, c.point);
        INFO(c.name << " relative error " << err);
        CHECK(err < kGradTol);
    }
}

TEST_CASE("parameter initialization and checkpoints") {
    Rng rng(5);
    ParameterSet ps;
    ps.add("w", {8, 4, 3}, Initializer::GlorotUniform, rng);
    ps.add("u", {16, 4}, Initializer::OrthogonalBlocks, rng);
    ps.add("b", {16}, Initializer::LstmForgetBias, rng);
    CHECK_THROWS_AS(ps.add("b", {2}, Initializer::Zeros, rng), ConfigError);
    CHECK(ps.scalar_count() == 96 + 64 + 16);
    CHECK(ps.all_finite());

    const double limit = std::sqrt(6.0 / (4 * 3 + 8 * 3));
    for (double v : ps[0].tensor.data) CHECK(std::abs(v) <= limit);

    // Each 4x4 block of the recurrent matrix is orthogonal.
    const auto& u = ps[1].tensor.data;
    for (std::size_t b = 0; b < 4; ++b)
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 4; ++j) {
                double dot = 0;
                for (std::size_t k = 0; k < 4; ++k) dot += u[b * 16 + i * 4 + k] * u[b * 16 + j * 4 + k];
                CHECK(dot == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-12));
            }
    for (std::size_t i = 0; i < 16; ++i) CHECK(ps[2].tensor.data[i] == (i >= 4 && i < 8 ? 1.0 : 0.0));

    const auto path = std::filesystem::temp_directory_path() / "ivaloc_test_ckpt.bin";
    save_checkpoint(path, "format=test\n", ps);
    const Checkpoint ck = load_checkpoint(path);
    CHECK(ck.header == "format=test\n");
    REQUIRE(ck.parameters.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(ck.parameters[i].name == ps[i].name);
        CHECK(ck.parameters[i].tensor.shape == ps[i].tensor.shape);
        CHECK(std::memcmp(ck.parameters[i].tensor.data.data(), ps[i].tensor.data.data(),
                          ps[i].tensor.data.size() * sizeof(double)) == 0);
    }

    ParameterSet other;
    Rng rng2(1);
    other.add("w", {8, 4, 3}, Initializer::Zeros, rng2);
    CHECK_THROWS_AS(restore_parameters(other, ck), VersionError);

    {
        std::ofstream junk(path, std::ios::binary | std::ios::trunc);
        junk << "not a checkpoint";
    }
    CHECK_THROWS_AS(load_checkpoint(path), VersionError);
    std::filesystem::remove(path);
}
