#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "bln/tensor.hpp"
#include "grad_check.hpp"

using namespace bln;
using bln::testing::max_fd_rel_err;

namespace {

std::vector<double> rand_vec(std::size_t n, std::mt19937_64& rng, double lo = -2.0,
                             double hi = 2.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(n);
    for (double& x : v) x = d(rng);
    return v;
}

}  // namespace

TEST_CASE("matmul value: [[1,2]] x [[3],[4]] = [[11]]") {
    Tape t;
    Tensor a = t.leaf({1, 2}, {1, 2});
    Tensor b = t.leaf({2, 1}, {3, 4});
    Tensor c = matmul(a, b);
    CHECK(c.shape() == Shape{1, 1});
    CHECK(c.values()[0] == doctest::Approx(11.0));
}

TEST_CASE("matmul gradient matches finite differences") {
    std::mt19937_64 rng(7);
    const std::size_t m = 3, k = 4, n = 2;
    std::vector<double> av = rand_vec(m * k, rng), bv = rand_vec(k * n, rng);
    auto loss_of_a = [&](const std::vector<double>& x) {
        Tape t;
        Tensor a = t.leaf({m, k}, x);
        Tensor b = t.leaf({k, n}, bv);
        return reduce_all(matmul(a, b), Reduce::sum).scalar();
    };
    Tape t;
    Tensor a = t.leaf({m, k}, av);
    Tensor b = t.leaf({k, n}, bv);
    Tensor loss = reduce_all(matmul(a, b), Reduce::sum);
    GradientMap gm = t.backward(loss);
    CHECK(max_fd_rel_err(loss_of_a, av, gm.at(a)) <= 1e-6);
}

TEST_CASE("stop_gradient: d(sg(x)*x)/dx equals the forward value") {
    Tape t;
    Tensor x = t.leaf({1}, {3.0});
    Tensor loss = reduce_all(mul(stop_gradient(x), x), Reduce::sum);
    GradientMap gm = t.backward(loss);
    CHECK(gm.at(x)[0] == doctest::Approx(3.0));  // only the non-sg factor contributes
}

TEST_CASE("stop_gradient blocks the sweep entirely") {
    Tape t;
    Tensor x = t.leaf({3}, {1.0, 2.0, 3.0});
    Tensor loss = reduce_all(square(stop_gradient(x)), Reduce::sum);
    GradientMap gm = t.backward(loss);
    CHECK(gm.at(x) == std::vector<double>{0.0, 0.0, 0.0});
    CHECK(!gm.touched(x));
}

TEST_CASE("conv2d: all-ones 3x3 kernel on all-ones 3x3 image") {
    Tape t;
    Tensor x = t.leaf({1, 1, 3, 3}, std::vector<double>(9, 1.0));
    Tensor k = t.leaf({1, 1, 3, 3}, std::vector<double>(9, 1.0));
    Tensor y = conv2d(x, k);
    CHECK(y.shape() == Shape{1, 1, 3, 3});
    const std::vector<double>& v = y.values();
    CHECK(v[4] == doctest::Approx(9.0));  // center: full overlap
    for (std::size_t c : {std::size_t{0}, std::size_t{2}, std::size_t{6}, std::size_t{8}})
        CHECK(v[c] == doctest::Approx(4.0));  // corners: 2x2 overlap
}

TEST_CASE("conv2d kernel gradient matches finite differences") {
    std::mt19937_64 rng(8);
    std::vector<double> xv = rand_vec(2 * 5 * 5, rng);
    std::vector<double> kv = rand_vec(3 * 2 * 3 * 3, rng);
    auto loss_of_k = [&](const std::vector<double>& w) {
        Tape t;
        Tensor x = t.leaf({1, 2, 5, 5}, xv);
        Tensor k = t.leaf({3, 2, 3, 3}, w);
        return reduce_all(square(conv2d(x, k)), Reduce::sum).scalar();
    };
    Tape t;
    Tensor x = t.leaf({1, 2, 5, 5}, xv);
    Tensor k = t.leaf({3, 2, 3, 3}, kv);
    Tensor loss = reduce_all(square(conv2d(x, k)), Reduce::sum);
    GradientMap gm = t.backward(loss);
    CHECK(max_fd_rel_err(loss_of_k, kv, gm.at(k)) <= 1e-5);
}

TEST_CASE("maxpool2d matches a brute-force window scan") {
    std::mt19937_64 rng(9);
    std::vector<double> xv = rand_vec(2 * 3 * 4 * 4, rng);
    Tape t;
    Tensor x = t.leaf({2, 3, 4, 4}, xv);
    Tensor y = maxpool2d(x);
    CHECK(y.shape() == Shape{2, 3, 2, 2});
    const std::vector<double>& v = y.values();
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t i = 0; i < 2; ++i)
                for (std::size_t j = 0; j < 2; ++j) {
                    const std::size_t base = ((n * 3 + c) * 4 + 2 * i) * 4 + 2 * j;
                    const double want = std::max(std::max(xv[base], xv[base + 1]),
                                                 std::max(xv[base + 4], xv[base + 5]));
                    CHECK(v[((n * 3 + c) * 2 + i) * 2 + j] == doctest::Approx(want));
                }
}

TEST_CASE("maxpool2d drops an odd trailing row/column") {
    Tape t;
    std::vector<double> xv(5 * 5);
    for (std::size_t i = 0; i < xv.size(); ++i) xv[i] = static_cast<double>(i);
    Tensor x = t.leaf({1, 1, 5, 5}, xv);
    Tensor y = maxpool2d(x);
    CHECK(y.shape() == Shape{1, 1, 2, 2});
    CHECK(y.values() == std::vector<double>{6, 8, 16, 18});
}

TEST_CASE("isrlu value at x=-0.5, alpha=4") {
    Tape t;
    Tensor x = t.leaf({1}, {-0.5});
    Tensor y = isrlu(x, 4.0);
    CHECK(y.values()[0] == doctest::Approx(-0.5 / std::sqrt(2.0)).epsilon(1e-9));
}

TEST_CASE("isrlu is the identity for non-negative inputs") {
    Tape t;
    Tensor x = t.leaf({3}, {0.0, 1.0, 2.5});
    Tensor y = isrlu(x, 4.0);
    CHECK(y.values() == std::vector<double>{0.0, 1.0, 2.5});
}

TEST_CASE("elementwise op gradients match finite differences") {
    std::mt19937_64 rng(10);
    std::vector<double> xv = rand_vec(12, rng, 0.2, 2.0);  // positive: log/sqrt domain
    auto check_op = [&](auto op) {
        auto f = [&](const std::vector<double>& v) {
            Tape t;
            Tensor x = t.leaf({12}, v);
            return reduce_all(op(x), Reduce::sum).scalar();
        };
        Tape t;
        Tensor x = t.leaf({12}, xv);
        Tensor loss = reduce_all(op(x), Reduce::sum);
        GradientMap gm = t.backward(loss);
        CHECK(max_fd_rel_err(f, xv, gm.at(x)) <= 1e-6);
    };
    check_op([](const Tensor& x) { return exp(x); });
    check_op([](const Tensor& x) { return log(x); });
    check_op([](const Tensor& x) { return square(x); });
    check_op([](const Tensor& x) { return sqrt(x); });
    check_op([](const Tensor& x) { return reciprocal(x); });
    check_op([](const Tensor& x) { return isrlu(x, 4.0); });
    check_op([](const Tensor& x) { return leaky_relu(x, 0.3); });
    check_op([](const Tensor& x) { return abs(x); });
    check_op([](const Tensor& x) { return scale(shift(x, 0.3), -1.7); });
}

TEST_CASE("domain errors: log, sqrt, reciprocal, div") {
    Tape t;
    Tensor neg = t.leaf({1}, {-1.0});
    Tensor zero = t.leaf({1}, {0.0});
    Tensor one = t.leaf({1}, {1.0});
    CHECK_THROWS_AS((void)log(neg), DomainError);
    CHECK_THROWS_AS((void)log(zero), DomainError);
    CHECK_THROWS_AS((void)sqrt(neg), DomainError);
    CHECK_THROWS_AS((void)reciprocal(zero), DomainError);
    CHECK_THROWS_AS((void)div(one, zero), DomainError);
}

TEST_CASE("broadcasting add/mul with reduced gradients") {
    std::mt19937_64 rng(11);
    std::vector<double> av = rand_vec(6, rng);  // [2,3]
    std::vector<double> bv = rand_vec(3, rng);  // [3] broadcast over rows
    Tape t;
    Tensor a = t.leaf({2, 3}, av);
    Tensor b = t.leaf({3}, bv);
    Tensor loss = reduce_all(mul(add(a, b), add(a, b)), Reduce::sum);
    GradientMap gm = t.backward(loss);

    auto f_b = [&](const std::vector<double>& v) {
        Tape tt;
        Tensor aa = tt.leaf({2, 3}, av);
        Tensor bb = tt.leaf({3}, v);
        return reduce_all(mul(add(aa, bb), add(aa, bb)), Reduce::sum).scalar();
    };
    CHECK(max_fd_rel_err(f_b, bv, gm.at(b)) <= 1e-6);
    CHECK(gm.at(b).size() == 3);  // gradient reduced back to operand shape
}

TEST_CASE("broadcast shape mismatch throws") {
    Tape t;
    Tensor a = t.leaf({2, 3}, std::vector<double>(6, 1.0));
    Tensor b = t.leaf({4}, std::vector<double>(4, 1.0));
    CHECK_THROWS_AS((void)add(a, b), ShapeError);
}

TEST_CASE("reduce mean gradient is 1/n everywhere") {
    Tape t;
    Tensor x = t.leaf({2, 5}, std::vector<double>(10, 3.0));
    Tensor loss = reduce_all(x, Reduce::mean);
    GradientMap gm = t.backward(loss);
    for (double g : gm.at(x)) CHECK(g == doctest::Approx(0.1));
}

TEST_CASE("reduce over axes removes them from the shape") {
    Tape t;
    std::vector<double> xv{1, 2, 3, 4, 5, 6};
    Tensor x = t.leaf({2, 3}, xv);
    Tensor rows = reduce(x, Reduce::sum, {1});
    CHECK(rows.shape() == Shape{2});
    CHECK(rows.values() == std::vector<double>{6, 15});
    Tensor cols = reduce(x, Reduce::mean, {0});
    CHECK(cols.shape() == Shape{3});
    CHECK(cols.values() == std::vector<double>{2.5, 3.5, 4.5});
    Tensor ident = reduce(x, Reduce::sum, {});
    CHECK(ident.shape() == Shape{2, 3});
}

TEST_CASE("reshape round-trips values and gradients") {
    Tape t;
    Tensor x = t.leaf({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor y = reshape(x, {3, 2});
    CHECK(y.shape() == Shape{3, 2});
    CHECK(y.values() == x.values());
    Tensor loss = reduce_all(square(y), Reduce::sum);
    GradientMap gm = t.backward(loss);
    CHECK(gm.at(x) == std::vector<double>{2, 4, 6, 8, 10, 12});
    CHECK_THROWS_AS((void)reshape(x, Shape{4, 2}), ShapeError);
}

TEST_CASE("softmax cross-entropy: confident correct prediction is near zero") {
    Tape t;
    Tensor logits = t.leaf({1, 2}, {10.0, -10.0});
    Tensor loss = softmax_cross_entropy(logits, {0});
    CHECK(loss.scalar() == doctest::Approx(2.06e-9).epsilon(0.01));
}

TEST_CASE("softmax cross-entropy equals hand value for uniform logits") {
    Tape t;
    Tensor logits = t.leaf({2, 3}, std::vector<double>(6, 0.5));
    Tensor loss = softmax_cross_entropy(logits, {0, 2});
    CHECK(loss.scalar() == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("softmax cross-entropy is stable under large logit shifts") {
    Tape t;
    Tensor a = t.leaf({1, 3}, {1000.0, 1001.0, 999.0});
    Tensor b = t.leaf({1, 3}, {0.0, 1.0, -1.0});
    CHECK(softmax_cross_entropy(a, {1}).scalar() ==
          doctest::Approx(softmax_cross_entropy(b, {1}).scalar()).epsilon(1e-12));
}

TEST_CASE("softmax cross-entropy gradient matches finite differences") {
    std::mt19937_64 rng(12);
    std::vector<double> lv = rand_vec(4 * 3, rng);
    const std::vector<std::size_t> labels{0, 2, 1, 1};
    auto f = [&](const std::vector<double>& v) {
        Tape t;
        Tensor logits = t.leaf({4, 3}, v);
        return softmax_cross_entropy(logits, labels).scalar();
    };
    Tape t;
    Tensor logits = t.leaf({4, 3}, lv);
    Tensor loss = softmax_cross_entropy(logits, labels);
    GradientMap gm = t.backward(loss);
    CHECK(max_fd_rel_err(f, lv, gm.at(logits)) <= 1e-6);
}

TEST_CASE("softmax cross-entropy rejects bad labels") {
    Tape t;
    Tensor logits = t.leaf({2, 3}, std::vector<double>(6, 0.0));
    CHECK_THROWS_AS((void)softmax_cross_entropy(logits, {0, 3}), IndexError);
    CHECK_THROWS_AS((void)softmax_cross_entropy(logits, {0}), ShapeError);
}

TEST_CASE("per-row cross-entropy means to the scalar version") {
    std::mt19937_64 rng(13);
    std::vector<double> lv = rand_vec(5 * 3, rng);
    const std::vector<std::size_t> labels{0, 1, 2, 0, 1};
    Tape t;
    Tensor logits = t.leaf({5, 3}, lv);
    Tensor rows = softmax_cross_entropy_per_row(logits, labels);
    CHECK(rows.shape() == Shape{5});
    Tensor mean_of_rows = reduce_all(rows, Reduce::mean);
    Tensor direct = softmax_cross_entropy(logits, labels);
    CHECK(mean_of_rows.scalar() == doctest::Approx(direct.scalar()).epsilon(1e-14));
}

TEST_CASE("backward requires a scalar and rejects foreign tensors") {
    Tape t;
    Tensor x = t.leaf({2}, {1.0, 2.0});
    CHECK_THROWS_AS((void)t.backward(x), ContractError);
}

TEST_CASE("backward seed scales every gradient") {
    Tape t;
    Tensor x = t.leaf({2}, {3.0, 4.0});
    Tensor loss = reduce_all(square(x), Reduce::sum);
    GradientMap gm = t.backward(loss, 0.5);
    CHECK(gm.at(x) == std::vector<double>{3.0, 4.0});
}

TEST_CASE("softmax_rows sums to one per row") {
    std::vector<double> logits{1.0, 2.0, 3.0, -1.0, 0.0, 1.0};
    std::vector<double> p = softmax_rows(logits, 2, 3);
    CHECK(p[0] + p[1] + p[2] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p[3] + p[4] + p[5] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p[2] > p[1]);
    CHECK(p[1] > p[0]);
}
