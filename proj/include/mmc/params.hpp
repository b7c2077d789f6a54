#pragma once

#include <string>
#include <vector>

#include "mmc/array.hpp"
#include "mmc/autodiff.hpp"
#include "mmc/rng.hpp"

namespace mmc {

// Ordered set of named trainable leaves. Order is the checkpoint blob order.
struct ParamSet {
    std::vector<std::string> names;
    std::vector<ad::Var> vars;

    ad::Var add(const std::string& name, Array init);
    ad::Var get(const std::string& name) const;
    int index_of(const std::string& name) const;  // -1 if absent
    long total_size() const;
};

Array normal_init(std::vector<int> shape, double stddev, Rng& rng);

// y = x W + b  (b broadcast over rows)
ad::Var affine(const ad::Var& x, const ad::Var& w, const ad::Var& b);

// AdamW with decoupled weight decay. step() consumes the grads produced by the
// most recent backward(); every tracked param must have been reached.
struct AdamW {
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-8;
    double weight_decay = 0.0;

    std::vector<Array> m, v;
    long steps = 0;

    void init(const ParamSet& p);
    void step(ParamSet& p, double lr);
};

// Linear warmup to `peak` over `warmup` steps, constant afterwards.
double warmup_lr(long step, long warmup, double peak);

}  // namespace mmc
