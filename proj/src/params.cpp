#include "mmc/params.hpp"

#include <cmath>

namespace mmc {

ad::Var ParamSet::add(const std::string& name, Array init) {
    check(index_of(name) < 0, "params: duplicate name '" + name + "'");
    names.push_back(name);
    vars.push_back(ad::leaf(std::move(init)));
    return vars.back();
}

ad::Var ParamSet::get(const std::string& name) const {
    const int i = index_of(name);
    check(i >= 0, "params: unknown name '" + name + "'");
    return vars[static_cast<size_t>(i)];
}

int ParamSet::index_of(const std::string& name) const {
    for (size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return static_cast<int>(i);
    return -1;
}

long ParamSet::total_size() const {
    long n = 0;
    for (const auto& v : vars) n += v.val().numel();
    return n;
}

Array normal_init(std::vector<int> shape, double stddev, Rng& rng) {
    Array a(shape, 0.0);
    for (double& v : a.data) v = rng.normal(0.0, stddev);
    return a;
}

ad::Var affine(const ad::Var& x, const ad::Var& w, const ad::Var& b) {
    return ad::add(ad::matmul(x, w), ad::broadcast_row(b, x.val().dim(0)));
}

void AdamW::init(const ParamSet& p) {
    m.clear();
    v.clear();
    for (const auto& var : p.vars) {
        m.push_back(Array::zeros(var.val().shape));
        v.push_back(Array::zeros(var.val().shape));
    }
    steps = 0;
}

void AdamW::step(ParamSet& p, double lr) {
    check(m.size() == p.vars.size(), "adamw: step before init");
    ++steps;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(steps));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(steps));
    for (size_t i = 0; i < p.vars.size(); ++i) {
        Array& val = p.vars[i].node->value;
        const Array& g = p.vars[i].node->grad;
        check(g.same_shape(val), "adamw: param '" + p.names[i] +
                                     "' has no gradient from the last backward pass");
        Array& mi = m[i];
        Array& vi = v[i];
        for (long k = 0; k < val.numel(); ++k) {
            const double gk = g.at(k);
            mi.at(k) = beta1 * mi.at(k) + (1.0 - beta1) * gk;
            vi.at(k) = beta2 * vi.at(k) + (1.0 - beta2) * gk * gk;
            const double mhat = mi.at(k) / bc1;
            const double vhat = vi.at(k) / bc2;
            val.at(k) -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * val.at(k));
        }
    }
}

double warmup_lr(long step, long warmup, double peak) {
    if (warmup <= 0 || step >= warmup) return peak;
    return peak * static_cast<double>(step + 1) / static_cast<double>(warmup);
}

}  // namespace mmc
