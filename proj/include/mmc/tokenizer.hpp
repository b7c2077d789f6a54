#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "mmc/kinematics.hpp"
#include "mmc/params.hpp"

namespace mmc {

// Residual-quantization codebook: `levels` tables of K x d embeddings. Level 0
// is the base book the masked transformer predicts over.
struct Codebook {
    int codes = 0;   // K
    int dim = 0;     // d
    int levels = 0;  // V
    std::vector<Array> tables;  // each (K, d)
};

// Discrete token ids, one id per level per downsampled position.
struct TokenSeq {
    std::vector<std::vector<int>> ids;  // [level][position], values in [0, K)

    int length() const { return ids.empty() ? 0 : static_cast<int>(ids[0].size()); }
    int levels() const { return static_cast<int>(ids.size()); }
    const std::vector<int>& base() const { return ids[0]; }
};

struct TokenizerConfig {
    int feature_dim = 19;
    int codes = 64;       // K
    int dim = 32;         // d
    int levels = 2;       // V
    int hidden = 64;
    double beta = 0.25;   // commitment weight
    int downsample = 4;   // two strided blocks of 2
};

struct TokenizerTrainConfig {
    int iterations = 600;
    int batch = 16;
    int warmup = 60;
    double peak_lr = 2e-3;
    uint64_t seed = 1;
};

struct TokenizerWeights {
    TokenizerConfig cfg;
    ParamSet params;  // encoder + decoder + codebook tables ("cb<level>")

    // snapshot of the codebook tables held in `params`
    Codebook codebook() const;

    // (T, F) features -> (T/4, d) latent; differentiable
    ad::Var encode(const ad::Var& features) const;
    // (t, d) latent or summed code embeddings -> (4t, F) features; differentiable
    ad::Var decode(const ad::Var& latent) const;

    Array encode(const Array& features) const;
    Array decode(const Array& latent) const;

    TokenSeq tokenize(const MotionFeatures& f) const;
    // summed code embeddings for a token sequence -> (t, d)
    Array embed_tokens(const TokenSeq& tokens) const;
};

// Nearest codebook row by squared Euclidean distance; ties take the lowest
// index. Returns (ids, gathered embeddings).
std::pair<std::vector<int>, Array> quantize(const Array& z, const Array& table);

// Successive quantization of the residual across levels. Returns the token ids
// and the per-level embeddings (each (t, d)); the decoded latent is their sum.
std::pair<TokenSeq, std::vector<Array>> residual_quantize(const Array& z, const Codebook& book);

// ||sg(z) - e||^2 + beta * ||z - sg(e)||^2, summed per element, averaged over
// the t rows of z.
ad::Var vq_loss(const ad::Var& z, const ad::Var& e, double beta);

TokenizerWeights init_tokenizer(const TokenizerConfig& cfg, uint64_t seed);

struct TrainCurve {
    std::vector<double> losses;  // one entry per iteration
};

TrainCurve train_tokenizer(TokenizerWeights& w, const std::vector<SyntheticSample>& dataset,
                           const TokenizerTrainConfig& tc);

}  // namespace mmc
