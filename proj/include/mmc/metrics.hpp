#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmc/kinematics.hpp"

namespace mmc {

struct KeyframeErrors {
    double traj_err = 0.0;  // 1 if any controlled entry exceeds the threshold
    double loc_err = 0.0;   // fraction of controlled entries exceeding it
    double avg_err = 0.0;   // mean distance over controlled entries
};

// Distances between generated joint positions and the controlled targets.
// The 0.5-unit threshold mirrors the 50 cm convention.
KeyframeErrors keyframe_errors(const GlobalMotion& gen, const SpatialControl& s,
                               double threshold = 0.5);

// Fraction of frames in which a grounded foot (height < height_eps) slides
// farther than slide_eps in the plane since the previous frame.
double foot_skate(const GlobalMotion& gen, double height_eps = 0.05, double slide_eps = 0.025);

// Mean over `pairs` random sample pairs of the per-frame, per-joint L2 distance.
double diversity_proxy(const std::vector<GlobalMotion>& samples, int pairs, uint64_t seed);

// All 63 non-empty subsets of the six named joints, enumerated by subset size
// and then lexicographically by joint index.
std::vector<std::vector<int>> cross_combinations();

struct MetricReport {
    std::string name;        // density level / joint set / suite row label
    double traj_err = 0.0;
    double loc_err = 0.0;
    double avg_err = 0.0;
    double foot_skate = 0.0;
    double diversity = 0.0;
    double masked_nll = 0.0;  // held-out quality proxy
    double label_acc = 0.0;   // classifier proxy
    int sample_count = 0;
};

void write_report_csv(const std::string& path, const std::vector<MetricReport>& rows);
void write_report_json(const std::string& path, const std::vector<MetricReport>& rows,
                       const std::string& config_hash);

}  // namespace mmc
