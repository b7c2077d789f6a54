#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "mmc/editing.hpp"

using namespace mmc;
using ad::Var;

namespace {

Array random_array(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Array a(shape, 0.0);
    for (double& v : a.data) v = rng.uniform(lo, hi);
    return a;
}

}  // namespace

TEST_CASE("gumbel closed form and sample statistics") {
    // inverse transform at u = 1/e gives exactly 0
    CHECK(std::abs(-std::log(-std::log(1.0 / std::exp(1.0)))) < 1e-12);

    Rng rng(123);
    double mean = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) mean += rng.gumbel();
    mean /= n;
    CHECK(mean == doctest::Approx(0.5772).epsilon(0.02));  // Euler-Mascheroni

    Rng a(7), b(7);
    Array ga = gumbel_noise({4, 5}, a);
    Array gb = gumbel_noise({4, 5}, b);
    CHECK(ga.data == gb.data);
}

TEST_CASE("gumbel_softmax reduces to softmax without noise") {
    Rng rng(3);
    Array l = random_array({3, 6}, rng, -2.0, 2.0);
    Var p = gumbel_softmax(ad::leaf(l), Array{}, 1.0);
    Var ref = ad::softmax_last(ad::leaf(l));
    for (long i = 0; i < p.val().numel(); ++i)
        CHECK(p.val().at(i) == doctest::Approx(ref.val().at(i)).epsilon(1e-14));
}

TEST_CASE("gumbel_softmax near-zero temperature is one-hot at the argmax") {
    Array l = Array::from({1, 4}, {0.3, 1.7, -0.2, 0.9});
    Var p = gumbel_softmax(ad::leaf(l), Array{}, 1e-8);
    CHECK(std::abs(p.val().at(0, 1) - 1.0) < 1e-12);
    CHECK(std::abs(p.val().at(0, 0)) < 1e-12);
    CHECK(std::abs(p.val().at(0, 2)) < 1e-12);
    CHECK(std::abs(p.val().at(0, 3)) < 1e-12);
}

TEST_CASE("gumbel_softmax rows sum to one and are shift invariant") {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        Array l = random_array({4, 8}, rng, -3.0, 3.0);
        Array g = gumbel_noise({4, 8}, rng);
        Var p = gumbel_softmax(ad::leaf(l), g, 0.7);
        for (int r = 0; r < 4; ++r) {
            double s = 0.0;
            for (int j = 0; j < 8; ++j) s += p.val().at(r, j);
            CHECK(std::abs(s - 1.0) < 1e-12);
        }
        Array shifted = l;
        for (int r = 0; r < 4; ++r)
            for (int j = 0; j < 8; ++j) shifted.at(r, j) += 10.0 * (r + 1);
        Var p2 = gumbel_softmax(ad::leaf(shifted), g, 0.7);
        for (long i = 0; i < p.val().numel(); ++i)
            CHECK(p.val().at(i) == doctest::Approx(p2.val().at(i)).epsilon(1e-12));
    }
}

TEST_CASE("hard_sample is the argmax of logits plus noise") {
    Array l = Array::from({2, 3}, {0.0, 1.0, 0.5, 2.0, -1.0, 0.0});
    auto ids = hard_sample(l, Array{});
    CHECK(ids == std::vector<int>{1, 0});
    Array g({2, 3}, 0.0);
    g.at(0, 2) = 5.0;
    auto ids2 = hard_sample(l, g);
    CHECK(ids2 == std::vector<int>{2, 0});
}

TEST_CASE("dcse_embed forward is always an exact table row") {
    Rng rng(9);
    const int t = 6, K = 10, d = 4;
    for (int trial = 0; trial < 20; ++trial) {
        Array l = random_array({t, K}, rng, -2.0, 2.0);
        Array g = gumbel_noise({t, K}, rng);
        Array table = random_array({K, d}, rng);
        Var p = gumbel_softmax(ad::leaf(l), g, 1.0);
        Var e = dcse_embed(p, ad::leaf(table));
        auto ids = hard_sample(l, g);
        for (int i = 0; i < t; ++i)
            for (int k = 0; k < d; ++k)
                CHECK(e.val().at(i, k) == table.at(ids[static_cast<size_t>(i)], k));
    }
}

TEST_CASE("dcse_embed one-hot routes table gradient to the selected row only") {
    Array p = Array::from({1, 3}, {0.0, 0.0, 1.0});
    Var table = ad::leaf(Array::from({3, 2}, {1.0, 2.0, 3.0, 4.0, 5.0, 6.0}));
    Var e = dcse_embed(ad::leaf(p), table);
    CHECK(e.val().at(0, 0) == 5.0);
    CHECK(e.val().at(0, 1) == 6.0);
    ad::backward(ad::sum_all(e));
    CHECK(table.grad().at(0, 0) == 0.0);
    CHECK(table.grad().at(1, 0) == 0.0);
    CHECK(table.grad().at(2, 0) == 1.0);
    CHECK(table.grad().at(2, 1) == 1.0);
}

TEST_CASE("dcse_embed uniform probabilities: hard forward, mean-of-rows backward") {
    const int K = 4, d = 2;
    Array p({1, K}, 1.0 / K);
    Var table = ad::leaf(Array::from({K, d}, {1, 2, 3, 4, 5, 6, 7, 8}));
    Var e = dcse_embed(ad::leaf(p), table);
    // tie resolves to row 0
    CHECK(e.val().at(0, 0) == 1.0);
    CHECK(e.val().at(0, 1) == 2.0);
    ad::backward(ad::sum_all(e));
    for (int j = 0; j < K; ++j)
        for (int k = 0; k < d; ++k) CHECK(table.grad().at(j, k) == doctest::Approx(0.25));
}

TEST_CASE("dcse_embed backward matches finite differences of the soft surrogate") {
    Rng rng(21);
    const int t = 3, K = 6, d = 4;
    Array l = random_array({t, K}, rng, -1.5, 1.5);
    Array g = gumbel_noise({t, K}, rng);
    Array table = random_array({K, d}, rng);
    Array w = random_array({t, d}, rng);

    Var vl = ad::leaf(l);
    Var loss = ad::sum_all(
        ad::mul(dcse_embed(gumbel_softmax(vl, g, 1.0), ad::constant(table)), ad::constant(w)));
    ad::backward(loss);

    // surrogate: sum(w . (p @ table)) with the same fixed noise
    auto soft = [&](const Array& logits) {
        Var p = gumbel_softmax(ad::leaf(logits), g, 1.0);
        return ad::sum_all(ad::mul(ad::matmul(p, ad::constant(table)), ad::constant(w)))
            .val()
            .at(0L);
    };
    for (long i = 0; i < l.numel(); ++i) {
        Array lp = l, lm = l;
        lp.at(i) += 1e-6;
        lm.at(i) -= 1e-6;
        const double fd = (soft(lp) - soft(lm)) / 2e-6;
        CHECK(std::abs(vl.grad().at(i) - fd) < 1e-6);
    }
}

TEST_CASE("masked target loss: exact hits, 3-4-5 offsets, loop oracle") {
    const int T = 4, J = 2;
    SpatialControl s;
    s.targets = Array({T, J, 3}, 0.0);
    s.mask = Array({T, J}, 0.0);
    Array pos({T, J, 3}, 0.0);

    s.mask.at(1, 0) = 1.0;
    for (int k = 0; k < 3; ++k) {
        s.targets.at(1, 0, k) = 0.4 + 0.1 * k;
        pos.at(1, 0, k) = 0.4 + 0.1 * k;
    }
    Var l0 = masked_target_loss(ad::leaf(pos), s);
    CHECK(l0.val().at(0L) < 1e-5);  // smooth-abs floor at sqrt(1e-12)

    // off by (0.3, 0, 0.4) -> 0.5
    pos.at(1, 0, 0) += 0.3;
    pos.at(1, 0, 2) += 0.4;
    Var l1 = masked_target_loss(ad::leaf(pos), s);
    CHECK(l1.val().at(0L) == doctest::Approx(0.5).epsilon(1e-9));

    // random instance against an independent per-entry loop
    Rng rng(11);
    SpatialControl sr;
    sr.targets = Array({T, J, 3}, 0.0);
    sr.mask = Array({T, J}, 0.0);
    Array posr = random_array({T, J, 3}, rng);
    int active = 0;
    for (int n = 0; n < T; ++n)
        for (int j = 0; j < J; ++j)
            if (rng.uniform() < 0.5) {
                sr.mask.at(n, j) = 1.0;
                ++active;
                for (int k = 0; k < 3; ++k) sr.targets.at(n, j, k) = rng.uniform(-1.0, 1.0);
            }
    if (active == 0) {
        sr.mask.at(0, 0) = 1.0;
        active = 1;
    }
    double oracle = 0.0;
    for (int n = 0; n < T; ++n)
        for (int j = 0; j < J; ++j) {
            if (sr.mask.at(n, j) == 0.0) continue;
            double d2 = 0.0;
            for (int k = 0; k < 3; ++k) {
                const double diff = sr.targets.at(n, j, k) - posr.at(n, j, k);
                d2 += diff * diff;
            }
            oracle += std::sqrt(d2 + 1e-12);
        }
    oracle /= active;
    Var lr = masked_target_loss(ad::leaf(posr), sr);
    CHECK(lr.val().at(0L) == doctest::Approx(oracle).epsilon(1e-12));
}

TEST_CASE("masked target loss ignores target values at unmasked entries") {
    const int T = 3, J = 2;
    SpatialControl s;
    s.targets = Array({T, J, 3}, 0.0);
    s.mask = Array({T, J}, 0.0);
    s.mask.at(0, 0) = 1.0;
    s.targets.at(0, 0, 1) = 0.7;
    Rng rng(4);
    Array pos = random_array({T, J, 3}, rng);
    const double base = masked_target_loss(ad::leaf(pos), s).val().at(0L);

    SpatialControl s2 = s;
    for (int n = 0; n < T; ++n)
        for (int j = 0; j < J; ++j)
            if (s2.mask.at(n, j) == 0.0)
                for (int k = 0; k < 3; ++k) s2.targets.at(n, j, k) = rng.uniform(-5.0, 5.0);
    CHECK(masked_target_loss(ad::leaf(pos), s2).val().at(0L) == base);
}

TEST_CASE("masked target loss requires an active control entry") {
    SpatialControl s;
    s.targets = Array({2, 2, 3}, 0.0);
    s.mask = Array({2, 2}, 0.0);
    Array pos({2, 2, 3}, 0.0);
    CHECK_THROWS_WITH_AS(masked_target_loss(ad::leaf(pos), s), doctest::Contains("no active"),
                         std::runtime_error);
}

TEST_CASE("combined train loss weighting") {
    Var nll = ad::leaf(Array::scalar(2.0));
    Var ls = ad::leaf(Array::scalar(0.5));
    CHECK(combined_train_loss(nll, ls, 1.0).val().at(0L) == 2.0);
    CHECK(combined_train_loss(nll, ls, 0.0).val().at(0L) == 0.5);
    CHECK(combined_train_loss(nll, ls, 0.1).val().at(0L) == doctest::Approx(0.65).epsilon(1e-12));
}

TEST_CASE("sdf_sphere basic geometry") {
    const double c[3] = {1.0, 2.0, 3.0};
    const double at_center[3] = {1.0, 2.0, 3.0};
    CHECK(sdf_sphere(at_center, c, 0.8) == doctest::Approx(-0.8));
    const double on_surface[3] = {1.8, 2.0, 3.0};
    CHECK(sdf_sphere(on_surface, c, 0.8) == doctest::Approx(0.0));
    const double far[3] = {1.0 + 1.6, 2.0, 3.0};
    CHECK(sdf_sphere(far, c, 0.8) == doctest::Approx(0.8));
}

TEST_CASE("obstacle loss clamps beyond the safe distance with exactly zero gradient") {
    const int T = 2, J = 2;
    Array pos({T, J, 3}, 0.0);
    for (int n = 0; n < T; ++n)
        for (int j = 0; j < J; ++j) pos.at(n, j, 0) = 10.0 + n + j;  // far away in +x

    Obstacle ob;
    ob.center = Array::from({3}, {0.0, 0.0, 0.0});
    ob.radius = 1.0;
    ob.safe_distance = 0.5;
    Array sel({T, J}, 1.0);

    Var vpos = ad::leaf(pos);
    Var loss = obstacle_loss(vpos, {ob}, sel);
    CHECK(loss.val().at(0L) == doctest::Approx(-0.5 * T * J).epsilon(1e-12));
    ad::backward(loss);
    for (long i = 0; i < vpos.grad().numel(); ++i) CHECK(vpos.grad().at(i) == 0.0);
}

TEST_CASE("obstacle loss: point at the center of a unit sphere contributes +1") {
    Array pos({1, 1, 3}, 0.0);
    Obstacle ob;
    ob.center = Array::from({3}, {0.0, 0.0, 0.0});
    ob.radius = 1.0;
    ob.safe_distance = 0.5;
    Array sel({1, 1}, 1.0);
    Var loss = obstacle_loss(ad::leaf(pos), {ob}, sel);
    // SDF at the center is -1 (up to the norm smoothing), so -min(-1, 0.5) = 1
    CHECK(loss.val().at(0L) == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("obstacle descent direction points radially outward inside the safe band") {
    Array pos({1, 1, 3}, 0.0);
    pos.at(0, 0, 0) = 1.2;  // outside radius 1, inside radius + d
    Obstacle ob;
    ob.center = Array::from({3}, {0.0, 0.0, 0.0});
    ob.radius = 1.0;
    ob.safe_distance = 0.5;
    Array sel({1, 1}, 1.0);

    Var vpos = ad::leaf(pos);
    Var loss = obstacle_loss(vpos, {ob}, sel);
    ad::backward(loss);

    // finite-difference oracle for the gradient
    auto eval = [&](const Array& p) {
        return obstacle_loss(ad::leaf(p), {ob}, sel).val().at(0L);
    };
    double dot = 0.0;
    for (int k = 0; k < 3; ++k) {
        Array pp = pos, pm = pos;
        pp.at(0, 0, k) += 1e-6;
        pm.at(0, 0, k) -= 1e-6;
        const double fd = (eval(pp) - eval(pm)) / 2e-6;
        CHECK(std::abs(fd - vpos.grad().at(k)) < 1e-6);
        dot += -vpos.grad().at(k) * (pos.at(0, 0, k) - ob.center.at(k));
    }
    CHECK(dot > 0.0);  // -grad (descent direction) pushes away from the center
}

TEST_CASE("obstacle loss supports per-frame moving centers") {
    const int T = 3;
    Array pos({T, 1, 3}, 0.0);
    Obstacle ob;
    ob.center = Array({T, 3}, 0.0);
    for (int n = 0; n < T; ++n) ob.center.at(n, 0) = 10.0 * n;  // moves away
    ob.radius = 1.0;
    ob.safe_distance = 0.5;
    Array sel({T, 1}, 1.0);
    Var loss = obstacle_loss(ad::leaf(pos), {ob}, sel);
    // frame 0 overlaps (contribution 1), frames 1..2 are clamped (-0.5 each)
    CHECK(loss.val().at(0L) == doctest::Approx(1.0 - 0.5 - 0.5).epsilon(1e-5));
}

TEST_CASE("mask embedding is the codebook mean, order independent") {
    Array table = Array::from({2, 2}, {0.0, 0.0, 2.0, 2.0});
    Array m = mask_embedding(table);
    CHECK(m.at(0) == 1.0);
    CHECK(m.at(1) == 1.0);

    Rng rng(8);
    Array t2 = Array({5, 3}, 0.0);
    for (double& v : t2.data) v = rng.uniform(-1.0, 1.0);
    Array m1 = mask_embedding(t2);
    // permute rows
    Array t3 = t2;
    for (int k = 0; k < 3; ++k) {
        std::swap(t3.at(0, k), t3.at(4, k));
        std::swap(t3.at(1, k), t3.at(3, k));
    }
    Array m2 = mask_embedding(t3);
    for (int k = 0; k < 3; ++k) CHECK(std::abs(m1.at(k) - m2.at(k)) <= 1e-12);

    Array empty({0, 3}, 0.0);
    CHECK_THROWS_WITH_AS(mask_embedding(empty), doctest::Contains("empty codebook"),
                         std::runtime_error);
}

TEST_CASE("provisional embeddings substitute the mask row at MASK positions") {
    Array table = Array::from({3, 2}, {1, 1, 2, 2, 6, 6});
    const int mask_id = 3;
    Array e = provisional_embeddings({0, mask_id, 2}, mask_id, table);
    CHECK(e.at(0, 0) == 1.0);
    CHECK(e.at(1, 0) == 3.0);  // mean of rows
    CHECK(e.at(2, 0) == 6.0);
}

TEST_CASE("logit_edit: constant loss leaves logits untouched") {
    Rng rng(2);
    Array l = random_array({2, 4}, rng);
    Array out = logit_edit(
        l, [](const Var& v) { return ad::sum_all(ad::stop_grad(v)); }, 0.06, 5);
    CHECK(out.data == l.data);
}

TEST_CASE("logit_edit single step matches the finite-difference oracle") {
    Rng rng(14);
    Array l = random_array({1, 2}, rng);
    Array w = Array::from({1, 2}, {0.8, -0.3});
    auto loss_fn = [&](const Var& v) {
        return ad::sum_all(ad::mul(ad::softmax_last(v), ad::constant(w)));
    };
    const double eta = 0.06;
    Array out = logit_edit(l, loss_fn, eta, 1);
    for (long i = 0; i < l.numel(); ++i) {
        Array lp = l, lm = l;
        lp.at(i) += 1e-6;
        lm.at(i) -= 1e-6;
        const double fd = (loss_fn(ad::leaf(lp)).val().at(0L) -
                           loss_fn(ad::leaf(lm)).val().at(0L)) /
                          2e-6;
        CHECK(std::abs(out.at(i) - (l.at(i) - eta * fd)) < 1e-6);
    }
}

TEST_CASE("edit loops with eta=0 or zero steps are identities") {
    Rng rng(6);
    Array e = random_array({3, 4}, rng);
    auto loss_fn = [](const Var& v) { return ad::sum_all(ad::square(v)); };
    CHECK(codebook_edit(e, loss_fn, 0.06, 0).data == e.data);
    CHECK(codebook_edit(e, loss_fn, 0.0, 7).data == e.data);
    CHECK(logit_edit(e, loss_fn, 0.0, 7).data == e.data);
}

TEST_CASE("codebook_edit follows the analytic quadratic descent trajectory") {
    // loss = ||e A - b||^2 with a fixed linear "decoder" A
    Rng rng(19);
    const int t = 2, d = 3, f = 4;
    Array e0 = random_array({t, d}, rng);
    Array A = random_array({d, f}, rng);
    Array b = random_array({t, f}, rng);
    auto loss_fn = [&](const Var& v) {
        return ad::sum_all(ad::square(ad::sub(ad::matmul(v, ad::constant(A)), ad::constant(b))));
    };
    const double eta = 0.05;
    const int steps = 20;
    Array got = codebook_edit(e0, loss_fn, eta, steps);

    // analytic recurrence: e <- e - eta * 2 (e A - b) A^T
    Array e = e0;
    for (int s = 0; s < steps; ++s) {
        Array r({t, f}, 0.0);
        for (int i = 0; i < t; ++i)
            for (int j = 0; j < f; ++j) {
                double acc = -b.at(i, j);
                for (int k = 0; k < d; ++k) acc += e.at(i, k) * A.at(k, j);
                r.at(i, j) = acc;
            }
        for (int i = 0; i < t; ++i)
            for (int k = 0; k < d; ++k) {
                double gkj = 0.0;
                for (int j = 0; j < f; ++j) gkj += 2.0 * r.at(i, j) * A.at(k, j);
                e.at(i, k) -= eta * gkj;
            }
    }
    for (long i = 0; i < e.numel(); ++i) CHECK(std::abs(got.at(i) - e.at(i)) < 1e-9);
}

TEST_CASE("edit trace records the loss per step") {
    Rng rng(33);
    Array e = random_array({2, 2}, rng);
    EditTrace trace;
    codebook_edit(e, [](const Var& v) { return ad::sum_all(ad::square(v)); }, 0.1, 4, &trace);
    REQUIRE(trace.losses.size() == 5);  // 4 pre-step values + final
    for (size_t i = 1; i < trace.losses.size(); ++i) CHECK(trace.losses[i] < trace.losses[i - 1]);
}
