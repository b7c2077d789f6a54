#pragma once

#include <string>

#include "mmc/pipeline.hpp"
#include "mmc/tokenizer.hpp"
#include "mmc/transformer.hpp"

namespace mmc {

// Checkpoints are a JSON manifest (version, kind, config, seed, parameter names
// and shapes in blob order) next to a raw little-endian float64 blob.
// load(save(w)) is bit-exact.

void save_tokenizer(const std::string& stem, const TokenizerWeights& w, uint64_t seed);
TokenizerWeights load_tokenizer(const std::string& stem);

void save_base(const std::string& stem, const BaseWeights& w, uint64_t seed);
BaseWeights load_base(const std::string& stem);

void save_control(const std::string& stem, const ControlWeights& w, uint64_t seed);
ControlWeights load_control(const std::string& stem, const BaseWeights& base);

// hex FNV-1a of a file's bytes, for reproducibility checks
std::string file_hash(const std::string& path);

bool file_exists(const std::string& path);

}  // namespace mmc
