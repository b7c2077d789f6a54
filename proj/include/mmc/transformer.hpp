#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "mmc/editing.hpp"
#include "mmc/kinematics.hpp"
#include "mmc/params.hpp"
#include "mmc/tokenizer.hpp"

namespace mmc {

struct TransformerConfig {
    int codes = 64;      // K; MASK sentinel is id == codes
    int classes = 8;     // C; NULL label row is index == classes
    int layers = 4;      // L
    int embed = 64;
    int heads = 4;
    int max_tokens = 16;  // positions 1..max_tokens; slot 0 carries the label
    int code_dim = 32;    // codebook embedding width (residual-head input)
    int levels = 2;       // residual levels incl. the base level
    int window = 4;       // frames per token (spatial projection input)
    int joints = 6;
    double label_dropout = 0.1;
    double alpha = 0.1;  // masked-loss weight in the control objective

    int mask_id() const { return codes; }
    int null_label() const { return classes; }
};

// Token ids in [0, K) with the MASK sentinel (== K) allowed.
struct MaskedTokens {
    std::vector<int> ids;

    int length() const { return static_cast<int>(ids.size()); }
    int masked_count(int mask_id) const;
};

struct Condition {
    int label = 0;  // class id, or TransformerConfig::null_label() for CFG
    std::optional<SpatialControl> spatial;
};

struct BaseWeights {
    TransformerConfig cfg;
    ParamSet params;
};

// Trainable replica of the base layers plus the spatial projection and one
// zero-initialized connector per layer.
struct ControlWeights {
    TransformerConfig cfg;
    ParamSet params;
};

// cos(pi * i / (2 I)): fraction of tokens still masked after step i.
// Defined on 0 <= i <= I so the final step resolves every token.
double mask_schedule(int step, int total);

// Replaces ceil(ratio * t) uniformly chosen positions with MASK.
MaskedTokens corrupt(const std::vector<int>& base_ids, double ratio, int mask_id, Rng& rng);

// Bidirectional masked transformer over [label slot | motion tokens].
ad::Var forward_base(const MaskedTokens& x, int label, const BaseWeights& w);

// Base forward with the control branch added: the control stream sees the input
// embedding plus the projected spatial windows; each base layer output receives
// the zero-initialized connector of the matching control layer output.
ad::Var forward_controlled(const MaskedTokens& x, const Condition& c, const BaseWeights& base,
                           const ControlWeights& ctrl);

// l_uncond + scale * (l_cond - l_uncond)
ad::Var cfg_logits(const ad::Var& cond, const ad::Var& uncond, double scale);
Array cfg_logits(const Array& cond, const Array& uncond, double scale);

// Mean over masked positions of -log softmax(logits)[target].
ad::Var masked_nll(const ad::Var& logits, const std::vector<int>& targets,
                   const std::vector<int>& mask_positions);

// Residual-level classifier: running sum of earlier-level embeddings (t, d)
// plus a level embedding -> logits (t, K) for that level's codebook.
ad::Var forward_residual(const ad::Var& embedding_sum, int level, const BaseWeights& w);

// Reverts the keep_masked lowest-confidence non-frozen positions to MASK;
// confidence is the probability of each position's current id. Ties resolve to
// the lower position index.
MaskedTokens confidence_remask(const Array& probs, const std::vector<int>& sampled,
                               int keep_masked, const std::vector<int>& frozen, int mask_id);

BaseWeights init_base(const TransformerConfig& cfg, uint64_t seed);
ControlWeights init_control(const BaseWeights& base, uint64_t seed);

struct MaskedTrainConfig {
    int iterations = 500;
    int batch = 16;
    int warmup = 50;
    double peak_lr = 1.5e-3;
    uint64_t seed = 2;
};

TrainCurve train_base(BaseWeights& w, const std::vector<SyntheticSample>& dataset,
                      const TokenizerWeights& tokenizer, const MaskedTrainConfig& tc);

struct ControlTrainConfig {
    int iterations = 300;
    int batch = 8;
    int warmup = 30;
    double peak_lr = 1e-3;
    uint64_t seed = 3;
    std::vector<int> density_levels = {1, 2, 5, 16, 64};  // frames per controlled joint
};

// Trains only the control branch; base and tokenizer stay frozen. The objective
// is alpha * masked NLL + (1 - alpha) * consistency through differentiable
// sampling, with controls built from ground-truth trajectories.
TrainCurve train_control(ControlWeights& ctrl, const BaseWeights& base,
                         const TokenizerWeights& tokenizer,
                         const std::vector<SyntheticSample>& dataset,
                         const ControlTrainConfig& tc);

// Pools the spatial control into per-token windows: each token row is its
// window of S (w*J*3 values) and sigma (w*J values), flattened.
Array spatial_windows(const SpatialControl& s, int window);

}  // namespace mmc
