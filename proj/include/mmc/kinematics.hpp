#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmc/array.hpp"
#include "mmc/autodiff.hpp"

namespace mmc {

// Canonical skeleton. Joint 0 is the pelvis/root; the order below also fixes the
// enumeration order of joint subsets in the evaluation harness.
inline constexpr int kNumJoints = 6;
const std::vector<std::string>& joint_names();
int joint_index(const std::string& name);  // -1 if unknown

// Per-frame layout: [yaw angular velocity (rad/frame), planar velocity x, planar
// velocity z (units/frame), root height y (units), then (J-1) joint offsets
// (x,y,z) in the root-local frame]. F = 4 + 3*(J-1).
struct MotionFeatures {
    Array frames;  // (T, F)
    int num_frames() const { return frames.dim(0); }
    int feature_dim() const { return frames.dim(1); }
    int num_joints() const;
};

struct GlobalMotion {
    Array positions;  // (T, J, 3)
    int num_frames() const { return positions.dim(0); }
    int num_joints() const { return positions.dim(1); }
};

// Target positions with a binary mask marking which (frame, joint) entries are
// constraints. Unmasked target entries are exactly zero.
struct SpatialControl {
    Array targets;  // (T, J, 3)
    Array mask;     // (T, J), values in {0, 1}

    bool empty() const;
    long active_count() const;
    void validate() const;
};

struct SyntheticSample {
    MotionFeatures features;
    GlobalMotion global;
    int label = 0;
    std::string text_tag;
};

int feature_dim_for_joints(int joints);
int joints_for_feature_dim(int feature_dim);  // errors if layout impossible

// Differentiable recovery of absolute joint positions from local features.
// Root yaw is the running sum of yaw velocities; planar position is the running
// sum of per-frame velocities rotated by the running yaw; other joints are the
// root plus yaw-rotated local offsets. Returns a (T, J, 3) Var.
ad::Var recover_global(const ad::Var& features, int joints);
GlobalMotion recover_global(const MotionFeatures& f);

// Inverse of recover_global up to the heading convention: heading is estimated
// from the root's planar displacement; frames with no measurable displacement
// reuse the previous frame's heading (frame 0 defaults to +z).
MotionFeatures extract_features(const GlobalMotion& g);

const std::vector<std::string>& motion_class_names();  // 8 classes
inline constexpr int kNumClasses = 8;

// Procedural motion corpus. Deterministic for a fixed seed; labels are balanced
// round-robin; per-class speed/radius/amplitude jitter.
std::vector<SyntheticSample> make_dataset(int n, int frames, int joints, uint64_t seed);

// JSON-lines persistence: one object per sample with fields
// {"label": int, "text_tag": str, "global": [[[x,y,z] x J] x T]}.
void write_motion_jsonl(const std::string& path, const std::vector<SyntheticSample>& samples);
std::vector<SyntheticSample> read_motion_jsonl(const std::string& path);

}  // namespace mmc
