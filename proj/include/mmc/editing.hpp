#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mmc/autodiff.hpp"
#include "mmc/kinematics.hpp"
#include "mmc/rng.hpp"
#include "mmc/tokenizer.hpp"

namespace mmc {

// Inference-time editing knobs. Logit steps run inside every generation
// iteration; codebook steps run once on the final embeddings.
struct EditConfig {
    double eta_logits = 0.06;
    int logit_steps = 0;
    double eta_code = 0.06;
    int code_steps = 100;
    double tau = 1.0;
    double consistency_weight = 1.0;
    double obstacle_weight = 1.0;

    void validate() const;
};

struct Obstacle {
    Array center;         // (3) fixed or (T,3) per frame
    double radius = 0.0;
    double safe_distance = 0.0;  // gradient vanishes beyond this SDF value

    Array center_at(int frame) const;  // (3)
};

// i.i.d. Gumbel(0,1) noise of the given shape.
Array gumbel_noise(const std::vector<int>& shape, Rng& rng);

// softmax((logits + g) / tau) row-wise; an empty noise array means g = 0.
ad::Var gumbel_softmax(const ad::Var& logits, const Array& noise, double tau);

// argmax over (logits + noise) per row: the Gumbel-max categorical sample.
// Ties resolve to the lowest index. Empty noise -> plain argmax.
std::vector<int> hard_sample(const Array& logits, const Array& noise);

// Straight-through codebook lookup: the forward value is exactly the table row
// of each row's argmax of `probs`; the backward pass behaves as probs @ table.
// Works against any embedding table that shares the row indexing.
ad::Var dcse_embed(const ad::Var& probs, const ad::Var& table);

// Masked mean Euclidean distance between controlled target entries and the
// matching recovered joint positions (positions: (T,J,3) Var).
ad::Var masked_target_loss(const ad::Var& positions, const SpatialControl& s);

// Full consistency pipeline: code embeddings -> decoder -> global recovery ->
// masked distance against the control targets.
ad::Var consistency_loss(const ad::Var& code_embeddings, const SpatialControl& s,
                         const TokenizerWeights& tokenizer);

// alpha * nll + (1 - alpha) * ls
ad::Var combined_train_loss(const ad::Var& nll, const ad::Var& ls, double alpha);

double sdf_sphere(const double p[3], const double center[3], double radius);

// Sum over obstacles and selected (frame, joint) entries of -min(SDF, d).
// `selector` is a (T,J) 0/1 array choosing which joints repel.
ad::Var obstacle_loss(const ad::Var& positions, const std::vector<Obstacle>& obstacles,
                      const Array& selector);

// Decoder-space stand-in for MASK: the mean of the base-level codebook rows.
Array mask_embedding(const Array& table);

// Code embeddings for a partially masked token sequence: resolved positions use
// their codebook rows, MASK positions use mask_embedding().
Array provisional_embeddings(const std::vector<int>& base_ids, int mask_id, const Array& table);

struct EditTrace {
    std::vector<double> losses;  // loss before each step, then the final value
};

// Plain gradient descent on the logits: l <- l - eta * dL/dl for `steps` steps.
Array logit_edit(const Array& logits, const std::function<ad::Var(const ad::Var&)>& loss_fn,
                 double eta, int steps, EditTrace* trace = nullptr);

// Same descent on the selected embedding vectors fed to the decoder; the stored
// codebook is never touched.
Array codebook_edit(const Array& embeddings, const std::function<ad::Var(const ad::Var&)>& loss_fn,
                    double eta, int steps, EditTrace* trace = nullptr);

void write_trace_csv(const std::string& path, const EditTrace& trace);

}  // namespace mmc
