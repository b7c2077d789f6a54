#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mmc/autodiff.hpp"
#include "mmc/rng.hpp"

using namespace mmc;
using namespace mmc::ad;

namespace {

Array random_array(std::vector<int> shape, Rng& rng, double lo = -1.5, double hi = 1.5) {
    Array a(shape, 0.0);
    for (double& v : a.data) v = rng.uniform(lo, hi);
    return a;
}

}  // namespace

TEST_CASE("polynomial derivative: d/dx(x*x) at x=3 is 6") {
    Var x = leaf(Array::scalar(3.0));
    Var loss = mul(x, x);
    backward(loss);
    CHECK(x.grad().at(0L) == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("linear map: loss = sum(2x) has gradient [2,2,2]") {
    Var x = leaf(Array::from({3}, {0.3, -1.0, 5.0}));
    Var loss = sum_all(scale(x, 2.0));
    backward(loss);
    for (int i = 0; i < 3; ++i) CHECK(x.grad().at(i) == 2.0);
}

TEST_CASE("softmax of a constant row is uniform") {
    Var x = leaf(Array::from({3}, {0.0, 0.0, 0.0}));
    Var p = softmax_last(x);
    for (int i = 0; i < 3; ++i) CHECK(p.val().at(i) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("stop_grad blocks the backward path entirely") {
    Var x = leaf(Array::from({4}, {1.0, -2.0, 0.5, 3.0}));
    Var loss = sum_all(square(stop_grad(x)));
    backward(loss);
    for (int i = 0; i < 4; ++i) CHECK(x.grad().at(i) == 0.0);
}

TEST_CASE("gradient of a node not on the loss path is zero") {
    Var x = leaf(Array::from({2}, {1.0, 2.0}));
    Var y = leaf(Array::from({2}, {5.0, 6.0}));
    Var loss = sum_all(square(x));
    backward(loss);
    // y never entered the graph; its grad array is untouched (empty)
    CHECK(y.node->grad.data.empty());

    // a constant that does enter the graph through stop_grad gets zero grad
    Var c = leaf(Array::from({2}, {7.0, 8.0}));
    Var loss2 = sum_all(mul(x, stop_grad(c)));
    backward(loss2);
    CHECK(c.grad().at(0L) == 0.0);
    CHECK(c.grad().at(1L) == 0.0);
}

TEST_CASE("backward requires a scalar loss") {
    Var x = leaf(Array::from({2}, {1.0, 2.0}));
    CHECK_THROWS_WITH_AS(backward(x), doctest::Contains("scalar"), std::runtime_error);
}

TEST_CASE("shape mismatch errors name both shapes") {
    Var a = leaf(Array({2, 3}, 1.0));
    Var b = leaf(Array({3, 2}, 1.0));
    CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("(2,3)"), std::runtime_error);
    CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("(3,2)"), std::runtime_error);
}

TEST_CASE("gather index out of range errors") {
    Var a = leaf(Array({4, 2}, 1.0));
    CHECK_THROWS_WITH_AS(rows(a, {0, 4}), doctest::Contains("out of range"), std::runtime_error);
    Var b = leaf(Array({2, 3}, 1.0));
    CHECK_THROWS_WITH_AS(take_last(b, {0, 3}), doctest::Contains("out of range"),
                         std::runtime_error);
}

TEST_CASE("gradcheck: sum of squares is exact up to rounding") {
    Rng rng(11);
    Array x = random_array({5}, rng);
    const double err = gradcheck([](const Var& v) { return sum_all(square(v)); }, x, 1e-5);
    CHECK(err < 1e-9);
}

TEST_CASE("gradcheck: layernorm then sum matches finite differences") {
    Rng rng(12);
    for (int trial = 0; trial < 5; ++trial) {
        Array x = random_array({3, 7}, rng);
        const double err =
            gradcheck([](const Var& v) { return sum_all(layernorm_last(v)); }, x, 1e-5);
        CHECK(err < 1e-6);
    }
}

TEST_CASE("gradcheck: function with internal stop-gradient checks the surrogate") {
    Rng rng(13);
    Array x = random_array({6}, rng);
    // f(x) = sum(x * sg(x)): the surrogate treats sg(x) as constant, so df/dx = sg(x)
    Var vx = leaf(x);
    Var loss = sum_all(mul(vx, stop_grad(vx)));
    backward(loss);
    for (long i = 0; i < x.numel(); ++i)
        CHECK(vx.grad().at(i) == doctest::Approx(x.at(i)).epsilon(1e-12));
}

TEST_CASE("every primitive passes gradcheck on 10 random inputs") {
    struct Case {
        const char* name;
        std::vector<int> shape;
        double lo, hi;
        std::function<Var(const Var&)> fn;
    };
    // each scalar-valued composition isolates one primitive
    const std::vector<Case> cases = {
        {"add", {3, 4}, -1.5, 1.5,
         [](const Var& v) { return sum_all(mul(add(v, scale(v, 0.5)), scale(v, 2.0))); }},
        {"sub", {3, 4}, -1.5, 1.5,
         [](const Var& v) { return sum_all(square(sub(v, scale(v, 0.3)))); }},
        {"mul", {3, 4}, -1.5, 1.5,
         [](const Var& v) { return sum_all(mul(v, add_scalar(v, 2.0))); }},
        {"div", {3, 4}, 0.5, 1.5,
         [](const Var& v) { return sum_all(div(add_scalar(v, 3.0), v)); }},
        {"matmul", {4, 4}, -1.0, 1.0,
         [](const Var& v) { return sum_all(square(matmul(v, add_scalar(v, 1.0)))); }},
        {"transpose", {3, 5}, -1.0, 1.0,
         [](const Var& v) { return sum_all(square(matmul(v, transpose(v)))); }},
        {"reshape", {2, 6}, -1.0, 1.0,
         [](const Var& v) { return sum_all(square(reshape(v, {3, 4}))); }},
        {"concat", {2, 3}, -1.0, 1.0,
         [](const Var& v) { return sum_all(square(concat({v, scale(v, 2.0)}, 1))); }},
        {"slice", {4, 6}, -1.0, 1.0,
         [](const Var& v) { return sum_all(square(slice(v, 1, 1, 3))); }},
        {"rows", {5, 3}, -1.0, 1.0,
         [](const Var& v) { return sum_all(square(rows(v, {0, 2, 2, 4}))); }},
        {"take_last", {4, 3}, -1.0, 1.0,
         [](const Var& v) { return sum_all(square(take_last(v, {2, 0, 1, 1}))); }},
        {"broadcast_row", {5}, -1.0, 1.0,
         [](const Var& v) { return sum_all(square(broadcast_row(v, 3))); }},
        {"sum_axis0", {3, 4}, -1.0, 1.0,
         [](const Var& v) { return sum_all(square(sum_axis(v, 0))); }},
        {"sum_axis1", {3, 4}, -1.0, 1.0,
         [](const Var& v) { return sum_all(square(sum_axis(v, 1))); }},
        {"mean_axis", {3, 4}, -1.0, 1.0,
         [](const Var& v) { return sum_all(square(mean_axis(v, 1))); }},
        {"mean_all", {7}, -1.0, 1.0, [](const Var& v) { return mean_all(square(v)); }},
        {"exp", {3, 3}, -1.0, 1.0, [](const Var& v) { return sum_all(exp_(v)); }},
        {"log", {3, 3}, 0.3, 2.0, [](const Var& v) { return sum_all(log_(v)); }},
        {"sqrt", {3, 3}, 0.3, 2.0, [](const Var& v) { return sum_all(sqrt_(v)); }},
        {"square", {3, 3}, -1.5, 1.5, [](const Var& v) { return sum_all(square(v)); }},
        {"abs_smooth", {3, 3}, 0.2, 1.5,
         [](const Var& v) { return sum_all(abs_smooth(scale(v, -1.0))); }},
        {"relu", {3, 3}, 0.2, 1.5,
         [](const Var& v) { return sum_all(relu(sub(v, add_scalar(scale(v, 2.0), 0.05)))); }},
        {"sin", {3, 3}, -1.5, 1.5, [](const Var& v) { return sum_all(sin_(v)); }},
        {"cos", {3, 3}, -1.5, 1.5, [](const Var& v) { return sum_all(cos_(v)); }},
        {"min_const", {3, 3}, -1.5, 1.5,
         [](const Var& v) { return sum_all(min_const(v, 0.1)); }},
        {"softmax_last", {3, 5}, -1.5, 1.5,
         [](const Var& v) { return sum_all(mul(softmax_last(v), add_scalar(v, 1.0))); }},
        {"logsumexp_last", {3, 5}, -1.5, 1.5,
         [](const Var& v) { return sum_all(logsumexp_last(v)); }},
        {"layernorm_last", {3, 6}, -1.5, 1.5,
         [](const Var& v) { return sum_all(mul(layernorm_last(v), add_scalar(v, 0.5))); }},
        {"norm_last", {4, 3}, 0.2, 1.5,
         [](const Var& v) { return sum_all(norm_last(v)); }},
        {"cumsum_time", {5, 3}, -1.0, 1.0,
         [](const Var& v) { return sum_all(square(cumsum_time(v))); }},
        {"add_scalar", {3, 3}, -1.0, 1.0,
         [](const Var& v) { return sum_all(square(add_scalar(v, 0.7))); }},
        {"scale", {3, 3}, -1.0, 1.0, [](const Var& v) { return sum_all(square(scale(v, -2.5))); }},
    };

    Rng rng(99);
    for (const auto& c : cases) {
        double worst = 0.0;
        for (int trial = 0; trial < 10; ++trial) {
            Array x = random_array(c.shape, rng, c.lo, c.hi);
            worst = std::max(worst, gradcheck(c.fn, x, 1e-5));
        }
        INFO("primitive: " << c.name);
        CHECK(worst < 1e-6);
    }
}

TEST_CASE("min_const gradient is exactly zero at and above the constant") {
    Var x = leaf(Array::from({3}, {0.5, 1.0, 2.0}));
    Var loss = sum_all(min_const(x, 1.0));
    backward(loss);
    CHECK(x.grad().at(0) == 1.0);
    CHECK(x.grad().at(1) == 0.0);
    CHECK(x.grad().at(2) == 0.0);
}

TEST_CASE("straight_through: forward is the hard value, backward is identity") {
    Var soft = leaf(Array::from({2, 2}, {0.1, 0.2, 0.3, 0.4}));
    Array hard = Array::from({2, 2}, {1.0, 0.0, 0.0, 1.0});
    Var st = straight_through(scale(soft, 3.0), hard);
    for (long i = 0; i < 4; ++i) CHECK(st.val().at(i) == hard.at(i));
    Var loss = sum_all(mul(st, st));
    backward(loss);
    // d loss/d soft = 3 * 2*hard elementwise through the pass-through
    CHECK(soft.grad().at(0L) == doctest::Approx(6.0));
    CHECK(soft.grad().at(1L) == doctest::Approx(0.0));
}

TEST_CASE("backward is deterministic: two runs give bit-identical grads") {
    Rng rng(7);
    Array x = random_array({6, 6}, rng);
    Var vx = leaf(x);
    Var h = layernorm_last(matmul(vx, transpose(vx)));
    Var loss = sum_all(mul(softmax_last(h), h));

    backward(loss);
    const std::vector<double> g1 = vx.grad().data;
    backward(loss);
    const std::vector<double> g2 = vx.grad().data;
    CHECK(g1 == g2);
}

TEST_CASE("gradient accumulates over multiple consumers") {
    Var x = leaf(Array::scalar(2.0));
    Var a = mul(x, x);         // x^2
    Var b = scale(x, 3.0);     // 3x
    Var loss = add(a, b);      // x^2 + 3x, d/dx = 2x + 3 = 7
    backward(loss);
    CHECK(x.grad().at(0L) == doctest::Approx(7.0).epsilon(1e-12));
}

TEST_CASE("non-finite forward values raise an error") {
    Var x = leaf(Array::scalar(-1.0));
    CHECK_THROWS_WITH_AS(log_(x), doctest::Contains("non-finite"), std::runtime_error);
}
