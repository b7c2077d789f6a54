#include "mmc/editing.hpp"

#include <cmath>
#include <fstream>

namespace mmc {

void EditConfig::validate() const {
    check(logit_steps >= 0 && code_steps >= 0, "edit config: step counts must be >= 0");
    check(eta_logits > 0.0 && eta_code > 0.0, "edit config: step sizes must be > 0");
    check(tau > 0.0, "edit config: temperature must be > 0");
}

Array Obstacle::center_at(int frame) const {
    if (center.ndim() == 1) {
        check(center.dim(0) == 3, "obstacle: center must be (3) or (T,3)");
        return center;
    }
    check(center.ndim() == 2 && center.dim(1) == 3, "obstacle: center must be (3) or (T,3)");
    check(frame >= 0 && frame < center.dim(0), "obstacle: frame outside the center track");
    Array c({3}, 0.0);
    for (int k = 0; k < 3; ++k) c.at(k) = center.at(frame, k);
    return c;
}

Array gumbel_noise(const std::vector<int>& shape, Rng& rng) {
    Array g(shape, 0.0);
    for (double& v : g.data) v = rng.gumbel();
    return g;
}

ad::Var gumbel_softmax(const ad::Var& logits, const Array& noise, double tau) {
    check(tau > 0.0, "gumbel_softmax: temperature must be > 0");
    ad::Var noisy = logits;
    if (!noise.data.empty()) {
        check(noise.shape == logits.shape(), "gumbel_softmax: noise shape " +
                                                 shape_str(noise.shape) + " vs logits " +
                                                 shape_str(logits.shape()));
        noisy = ad::add(logits, ad::constant(noise));
    }
    return ad::softmax_last(ad::scale(noisy, 1.0 / tau));
}

std::vector<int> hard_sample(const Array& logits, const Array& noise) {
    const int t = logits.dim(0), K = logits.dim(1);
    if (!noise.data.empty())
        check(noise.shape == logits.shape, "hard_sample: noise shape mismatch");
    std::vector<int> ids(static_cast<size_t>(t), 0);
    for (int i = 0; i < t; ++i) {
        int best = 0;
        double best_v = logits.at(i, 0) + (noise.data.empty() ? 0.0 : noise.at(i, 0));
        for (int j = 1; j < K; ++j) {
            const double v = logits.at(i, j) + (noise.data.empty() ? 0.0 : noise.at(i, j));
            if (v > best_v) {
                best_v = v;
                best = j;
            }
        }
        ids[static_cast<size_t>(i)] = best;
    }
    return ids;
}

ad::Var dcse_embed(const ad::Var& probs, const ad::Var& table) {
    const int t = probs.val().dim(0), K = probs.val().dim(1);
    check(table.val().ndim() == 2 && table.val().dim(0) == K,
          "dcse_embed: table rows " + shape_str(table.shape()) + " do not match probs " +
              shape_str(probs.shape()));
    ad::Var soft = ad::matmul(probs, table);

    std::vector<int> ids(static_cast<size_t>(t), 0);
    for (int i = 0; i < t; ++i) {
        int best = 0;
        for (int j = 1; j < K; ++j)
            if (probs.val().at(i, j) > probs.val().at(i, best)) best = j;
        ids[static_cast<size_t>(i)] = best;
    }
    const int d = table.val().dim(1);
    Array hard({t, d}, 0.0);
    for (int i = 0; i < t; ++i)
        for (int k = 0; k < d; ++k) hard.at(i, k) = table.val().at(ids[static_cast<size_t>(i)], k);
    return ad::straight_through(soft, std::move(hard));
}

// Entries with mask 0 contribute nothing, whatever their target values; the
// zero-at-unmasked convention is enforced where controls are built or loaded.
ad::Var masked_target_loss(const ad::Var& positions, const SpatialControl& s) {
    const long active = s.active_count();
    check(active > 0, "consistency loss: control mask has no active entries");
    const int T = s.targets.dim(0), J = s.targets.dim(1);
    check(positions.val().ndim() == 3 && positions.val().dim(0) == T &&
              positions.val().dim(1) == J,
          "consistency loss: positions " + shape_str(positions.shape()) +
              " do not match control " + shape_str(s.targets.shape));

    Array targets_flat = Array::from({T * J, 3}, s.targets.data);
    Array mask_flat = Array::from({T * J}, s.mask.data);
    ad::Var diff = ad::sub(ad::reshape(positions, {T * J, 3}), ad::constant(targets_flat));
    ad::Var dist = ad::norm_last(diff, 1e-12);
    ad::Var masked = ad::mul(dist, ad::constant(mask_flat));
    return ad::scale(ad::sum_all(masked), 1.0 / static_cast<double>(active));
}

ad::Var consistency_loss(const ad::Var& code_embeddings, const SpatialControl& s,
                         const TokenizerWeights& tokenizer) {
    ad::Var features = tokenizer.decode(code_embeddings);
    ad::Var positions = recover_global(features, s.targets.dim(1));
    return masked_target_loss(positions, s);
}

ad::Var combined_train_loss(const ad::Var& nll, const ad::Var& ls, double alpha) {
    check(alpha >= 0.0 && alpha <= 1.0, "combined loss: alpha must be in [0,1]");
    return ad::add(ad::scale(nll, alpha), ad::scale(ls, 1.0 - alpha));
}

double sdf_sphere(const double p[3], const double center[3], double radius) {
    check(radius > 0.0, "sdf_sphere: radius must be > 0");
    double d2 = 0.0;
    for (int k = 0; k < 3; ++k) d2 += (p[k] - center[k]) * (p[k] - center[k]);
    return std::sqrt(d2) - radius;
}

ad::Var obstacle_loss(const ad::Var& positions, const std::vector<Obstacle>& obstacles,
                      const Array& selector) {
    check(!obstacles.empty(), "obstacle_loss: need at least one obstacle");
    const int T = positions.val().dim(0), J = positions.val().dim(1);
    check(selector.ndim() == 2 && selector.dim(0) == T && selector.dim(1) == J,
          "obstacle_loss: selector " + shape_str(selector.shape) + " does not match positions");

    std::vector<int> sel;
    for (int n = 0; n < T; ++n)
        for (int j = 0; j < J; ++j)
            if (selector.at(n, j) != 0.0) sel.push_back(n * J + j);
    check(!sel.empty(), "obstacle_loss: selector has no active entries");

    ad::Var pos_flat = ad::reshape(positions, {T * J, 3});
    ad::Var picked = ad::rows(pos_flat, sel);  // (M, 3)
    const int M = static_cast<int>(sel.size());

    ad::Var total;
    for (const auto& ob : obstacles) {
        check(ob.radius > 0.0, "obstacle_loss: radius must be > 0");
        check(ob.safe_distance >= 0.0, "obstacle_loss: safe distance must be >= 0");
        Array centers({M, 3}, 0.0);
        for (int m = 0; m < M; ++m) {
            const Array c = ob.center_at(sel[static_cast<size_t>(m)] / J);
            for (int k = 0; k < 3; ++k) centers.at(m, k) = c.at(k);
        }
        ad::Var sdf = ad::add_scalar(
            ad::norm_last(ad::sub(picked, ad::constant(centers)), 1e-12), -ob.radius);
        ad::Var term = ad::scale(ad::sum_all(ad::min_const(sdf, ob.safe_distance)), -1.0);
        total = total.valid() ? ad::add(total, term) : term;
    }
    return total;
}

Array mask_embedding(const Array& table) {
    check(table.ndim() == 2 && table.dim(0) > 0, "mask_embedding: empty codebook");
    const int K = table.dim(0), d = table.dim(1);
    Array m({d}, 0.0);
    for (int j = 0; j < K; ++j)
        for (int k = 0; k < d; ++k) m.at(k) += table.at(j, k);
    for (int k = 0; k < d; ++k) m.at(k) /= K;
    return m;
}

Array provisional_embeddings(const std::vector<int>& base_ids, int mask_id, const Array& table) {
    const int t = static_cast<int>(base_ids.size());
    const int d = table.dim(1);
    const Array mask_row = mask_embedding(table);
    Array e({t, d}, 0.0);
    for (int i = 0; i < t; ++i) {
        const int id = base_ids[static_cast<size_t>(i)];
        if (id == mask_id) {
            for (int k = 0; k < d; ++k) e.at(i, k) = mask_row.at(k);
        } else {
            check(id >= 0 && id < table.dim(0), "provisional_embeddings: id out of range");
            for (int k = 0; k < d; ++k) e.at(i, k) = table.at(id, k);
        }
    }
    return e;
}

namespace {

Array descend(const char* what, const Array& x0,
              const std::function<ad::Var(const ad::Var&)>& loss_fn, double eta, int steps,
              EditTrace* trace) {
    check(eta >= 0.0, std::string(what) + ": step size must be >= 0");
    check(steps >= 0, std::string(what) + ": step count must be >= 0");
    Array x = x0;
    for (int step = 0; step < steps; ++step) {
        ad::Var vx = ad::leaf(x);
        ad::Var loss = loss_fn(vx);
        check(loss.val().numel() == 1, std::string(what) + ": loss must be scalar");
        if (trace) trace->losses.push_back(loss.val().at(0L));
        ad::backward(loss);
        const Array& g = vx.grad();
        if (!g.all_finite())
            fail(std::string(what) + ": non-finite gradient at step " + std::to_string(step));
        for (long i = 0; i < x.numel(); ++i) x.at(i) -= eta * g.at(i);
    }
    if (trace) trace->losses.push_back(loss_fn(ad::leaf(x)).val().at(0L));
    return x;
}

}  // namespace

Array logit_edit(const Array& logits, const std::function<ad::Var(const ad::Var&)>& loss_fn,
                 double eta, int steps, EditTrace* trace) {
    return descend("logit_edit", logits, loss_fn, eta, steps, trace);
}

Array codebook_edit(const Array& embeddings, const std::function<ad::Var(const ad::Var&)>& loss_fn,
                    double eta, int steps, EditTrace* trace) {
    return descend("codebook_edit", embeddings, loss_fn, eta, steps, trace);
}

void write_trace_csv(const std::string& path, const EditTrace& trace) {
    std::ofstream f(path);
    check(f.good(), "write_trace_csv: cannot open " + path);
    f << "step,loss\n";
    for (size_t i = 0; i < trace.losses.size(); ++i) f << i << "," << trace.losses[i] << "\n";
}

}  // namespace mmc
