#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mmc/editing.hpp"
#include "mmc/metrics.hpp"
#include "mmc/transformer.hpp"

namespace mmc {

struct Models {
    const TokenizerWeights* tokenizer = nullptr;
    const BaseWeights* base = nullptr;
    const ControlWeights* control = nullptr;
};

struct GenerationRequest {
    int label = 0;
    int frames = 64;  // T, divisible by the token window
    std::optional<SpatialControl> spatial;
    std::vector<Obstacle> obstacles;
    Array obstacle_joints;  // (T,J) 0/1 selector; required when obstacles given
    int iterations = 10;    // I
    double cfg_scale = 4.0;
    double cfg_scale_residual = 5.0;  // stored for completeness; the residual
                                      // head is unconditional so it cancels out
    EditConfig edit;
    uint64_t seed = 0;
    bool trace = false;
    bool use_control_branch = true;

    void validate(const TransformerConfig& cfg) const;
};

struct GenerationResult {
    GlobalMotion motion;
    TokenSeq tokens;
    std::optional<KeyframeErrors> keyframes;  // filled when a control was given

    // (I, t) max softmax probability per token, recorded when trace is on
    Array confidence_before;
    Array confidence_after;

    bool obstacle_violation = false;
    double min_obstacle_sdf = 0.0;
    std::vector<std::string> violation_report;
};

// Iterative masked decoding with classifier-free guidance, per-iteration logit
// editing, confidence remasking, residual-level prediction, and a final
// codebook-editing pass. Deterministic for a fixed request seed.
GenerationResult generate(const GenerationRequest& req, const Models& m);

// generate() with the obstacle contract enforced: at least one obstacle and a
// non-empty joint selector. Never throws on unsatisfiable obstacles; the result
// carries a violation report instead.
GenerationResult avoid(const GenerationRequest& req, const Models& m);

struct ControlPoint {
    std::string joint;
    int frame = 0;
    double target[3] = {0.0, 0.0, 0.0};
};

// Builds a SpatialControl from named (joint, frame, position) entries.
// Duplicate entries with conflicting targets are an error.
SpatialControl control_any(const std::vector<ControlPoint>& points, int frames, int joints);

// Alternating-x waypoint pattern for a single joint, advancing in +z.
SpatialControl zigzag_control(const std::string& joint, int frames, int joints, double amplitude,
                              int period, double speed, double height);

struct TimelinePrompt {
    int label = 0;
    std::vector<int> joints;  // body-part set, non-empty
    int begin = 0;            // frame window [begin, end)
    int end = 0;
};

// Sequential body-part control: pass 0 generates from base_label; each prompt
// then regenerates with its own label while all joints outside its body-part
// set (and its own joints outside the window) are anchored to the current
// result. Later prompts win where they overlap.
GenerationResult timeline(const std::vector<TimelinePrompt>& prompts, int base_label,
                          const GenerationRequest& req, const Models& m);

// Writes the (I, t) confidence matrices recorded during generation.
// Errors if the generation ran without tracing.
void confidence_trace(const GenerationResult& result, const std::string& before_path,
                      const std::string& after_path);

}  // namespace mmc
