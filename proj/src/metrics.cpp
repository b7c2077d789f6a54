#include "mmc/metrics.hpp"

#include <cmath>
#include <fstream>

#include "mmc/rng.hpp"
#include "json.hpp"

namespace mmc {

KeyframeErrors keyframe_errors(const GlobalMotion& gen, const SpatialControl& s,
                               double threshold) {
    const int T = s.targets.dim(0), J = s.targets.dim(1);
    check(gen.num_frames() == T && gen.num_joints() == J,
          "keyframe_errors: motion " + shape_str(gen.positions.shape) +
              " does not match control " + shape_str(s.targets.shape));
    long active = 0, over = 0;
    double sum = 0.0;
    for (int n = 0; n < T; ++n)
        for (int j = 0; j < J; ++j) {
            if (s.mask.at(n, j) == 0.0) continue;
            ++active;
            double d2 = 0.0;
            for (int k = 0; k < 3; ++k) {
                const double diff = gen.positions.at(n, j, k) - s.targets.at(n, j, k);
                d2 += diff * diff;
            }
            const double d = std::sqrt(d2);
            sum += d;
            if (d > threshold) ++over;
        }
    check(active > 0, "keyframe_errors: control mask has no active entries");
    KeyframeErrors out;
    out.avg_err = sum / static_cast<double>(active);
    out.loc_err = static_cast<double>(over) / static_cast<double>(active);
    out.traj_err = over > 0 ? 1.0 : 0.0;
    return out;
}

double foot_skate(const GlobalMotion& gen, double height_eps, double slide_eps) {
    const int T = gen.num_frames();
    const int J = gen.num_joints();
    const int feet[2] = {joint_index("left_foot"), joint_index("right_foot")};
    check(feet[0] < J && feet[1] < J, "foot_skate: skeleton is missing the foot joints");
    if (T < 2) return 0.0;
    int skating = 0;
    for (int n = 1; n < T; ++n) {
        bool slid = false;
        for (int f : feet) {
            if (gen.positions.at(n, f, 1) >= height_eps) continue;
            const double dx = gen.positions.at(n, f, 0) - gen.positions.at(n - 1, f, 0);
            const double dz = gen.positions.at(n, f, 2) - gen.positions.at(n - 1, f, 2);
            if (std::sqrt(dx * dx + dz * dz) > slide_eps) slid = true;
        }
        if (slid) ++skating;
    }
    return static_cast<double>(skating) / static_cast<double>(T - 1);
}

double diversity_proxy(const std::vector<GlobalMotion>& samples, int pairs, uint64_t seed) {
    check(samples.size() >= 2, "diversity_proxy: need at least 2 samples");
    check(pairs >= 1, "diversity_proxy: need at least 1 pair");
    Rng rng = Rng::substream(seed, "eval-pairs");
    const int n = static_cast<int>(samples.size());
    double total = 0.0;
    for (int p = 0; p < pairs; ++p) {
        const int a = rng.uniform_int(0, n - 1);
        int b = rng.uniform_int(0, n - 2);
        if (b >= a) ++b;
        const auto& ga = samples[static_cast<size_t>(a)].positions;
        const auto& gb = samples[static_cast<size_t>(b)].positions;
        check(ga.shape == gb.shape, "diversity_proxy: sample shape mismatch");
        const int T = samples[static_cast<size_t>(a)].num_frames();
        const int J = samples[static_cast<size_t>(a)].num_joints();
        double acc = 0.0;
        for (int t = 0; t < T; ++t)
            for (int j = 0; j < J; ++j) {
                double d2 = 0.0;
                for (int k = 0; k < 3; ++k) {
                    const double diff = ga.at(t, j, k) - gb.at(t, j, k);
                    d2 += diff * diff;
                }
                acc += std::sqrt(d2);
            }
        total += acc / static_cast<double>(T * J);
    }
    return total / static_cast<double>(pairs);
}

std::vector<std::vector<int>> cross_combinations() {
    std::vector<std::vector<int>> out;
    for (int size = 1; size <= kNumJoints; ++size) {
        // lexicographic enumeration of index tuples of the given size
        std::vector<int> idx(static_cast<size_t>(size));
        for (int i = 0; i < size; ++i) idx[static_cast<size_t>(i)] = i;
        while (true) {
            out.push_back(idx);
            int pos = size - 1;
            while (pos >= 0 && idx[static_cast<size_t>(pos)] == kNumJoints - size + pos) --pos;
            if (pos < 0) break;
            ++idx[static_cast<size_t>(pos)];
            for (int i = pos + 1; i < size; ++i)
                idx[static_cast<size_t>(i)] = idx[static_cast<size_t>(i - 1)] + 1;
        }
    }
    return out;
}

void write_report_csv(const std::string& path, const std::vector<MetricReport>& rows) {
    std::ofstream f(path);
    check(f.good(), "write_report_csv: cannot open " + path);
    f << "Name,Traj. Err. (50 cm),Loc. Err. (50 cm),Avg. Err.,Foot Skating Ratio,Diversity,"
         "Masked NLL,Label Acc.,Samples\n";
    for (const auto& r : rows)
        f << r.name << "," << r.traj_err << "," << r.loc_err << "," << r.avg_err << ","
          << r.foot_skate << "," << r.diversity << "," << r.masked_nll << "," << r.label_acc
          << "," << r.sample_count << "\n";
}

void write_report_json(const std::string& path, const std::vector<MetricReport>& rows,
                       const std::string& config_hash) {
    nlohmann::json j;
    j["config_hash"] = config_hash;
    auto arr = nlohmann::json::array();
    for (const auto& r : rows) {
        nlohmann::json row;
        row["name"] = r.name;
        row["traj_err"] = r.traj_err;
        row["loc_err"] = r.loc_err;
        row["avg_err"] = r.avg_err;
        row["foot_skate"] = r.foot_skate;
        row["diversity"] = r.diversity;
        row["masked_nll"] = r.masked_nll;
        row["label_acc"] = r.label_acc;
        row["sample_count"] = r.sample_count;
        arr.push_back(std::move(row));
    }
    j["rows"] = std::move(arr);
    std::ofstream f(path);
    check(f.good(), "write_report_json: cannot open " + path);
    f << j.dump(2) << "\n";
}

}  // namespace mmc
