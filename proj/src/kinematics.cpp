#include "mmc/kinematics.hpp"

#include <cmath>
#include <fstream>

#include "mmc/rng.hpp"
#include "json.hpp"

namespace mmc {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kHeadingEps = 1e-8;

double wrap_pi(double a) {
    while (a > kPi) a -= 2.0 * kPi;
    while (a < -kPi) a += 2.0 * kPi;
    return a;
}

}  // namespace

const std::vector<std::string>& joint_names() {
    static const std::vector<std::string> names = {"pelvis",     "left_foot",  "right_foot",
                                                   "head",       "left_wrist", "right_wrist"};
    return names;
}

int joint_index(const std::string& name) {
    const auto& names = joint_names();
    for (size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return static_cast<int>(i);
    return -1;
}

int MotionFeatures::num_joints() const { return joints_for_feature_dim(feature_dim()); }

bool SpatialControl::empty() const { return active_count() == 0; }

long SpatialControl::active_count() const {
    long n = 0;
    for (double v : mask.data) n += (v != 0.0) ? 1 : 0;
    return n;
}

void SpatialControl::validate() const {
    check(targets.ndim() == 3 && targets.dim(2) == 3,
          "spatial control: targets must be (T,J,3), got " + shape_str(targets.shape));
    check(mask.ndim() == 2 && mask.dim(0) == targets.dim(0) && mask.dim(1) == targets.dim(1),
          "spatial control: mask shape " + shape_str(mask.shape) + " does not match targets " +
              shape_str(targets.shape));
    const int T = targets.dim(0), J = targets.dim(1);
    for (int n = 0; n < T; ++n)
        for (int j = 0; j < J; ++j) {
            const double m = mask.at(n, j);
            check(m == 0.0 || m == 1.0, "spatial control: mask entries must be 0 or 1");
            if (m == 0.0)
                for (int k = 0; k < 3; ++k)
                    check(targets.at(n, j, k) == 0.0,
                          "spatial control: unmasked target at frame " + std::to_string(n) +
                              ", joint " + std::to_string(j) + " must be zero");
        }
}

int feature_dim_for_joints(int joints) { return 4 + 3 * (joints - 1); }

int joints_for_feature_dim(int feature_dim) {
    const int rem = feature_dim - 4;
    check(rem >= 3 && rem % 3 == 0, "features: dimension " + std::to_string(feature_dim) +
                                        " does not match layout 4 + 3*(J-1)");
    return rem / 3 + 1;
}

ad::Var recover_global(const ad::Var& features, int joints) {
    const int T = features.val().dim(0);
    const int F = features.val().dim(1);
    check(F == feature_dim_for_joints(joints),
          "recover_global: feature dim " + std::to_string(F) + " does not match J=" +
              std::to_string(joints) + " (expected " +
              std::to_string(feature_dim_for_joints(joints)) + ")");
    using namespace ad;

    Var yaw_vel = slice(features, 1, 0, 1);  // (T,1)
    Var vx = slice(features, 1, 1, 1);
    Var vz = slice(features, 1, 2, 1);
    Var height = slice(features, 1, 3, 1);

    Var theta = cumsum_time(yaw_vel);
    Var c = cos_(theta);
    Var s = sin_(theta);

    // world-frame root displacement per frame, then integrate
    Var gx = add(mul(c, vx), mul(s, vz));
    Var gz = sub(mul(c, vz), mul(s, vx));
    Var px = cumsum_time(gx);
    Var pz = cumsum_time(gz);

    std::vector<Var> cols;
    cols.reserve(static_cast<size_t>(joints) * 3);
    cols.push_back(px);
    cols.push_back(height);
    cols.push_back(pz);
    for (int j = 1; j < joints; ++j) {
        const int base = 4 + 3 * (j - 1);
        Var ox = slice(features, 1, base + 0, 1);
        Var oy = slice(features, 1, base + 1, 1);
        Var oz = slice(features, 1, base + 2, 1);
        cols.push_back(add(px, add(mul(c, ox), mul(s, oz))));
        cols.push_back(add(height, oy));
        cols.push_back(add(pz, sub(mul(c, oz), mul(s, ox))));
    }
    Var flat = concat(cols, 1);  // (T, 3J)
    return reshape(flat, {T, joints, 3});
}

GlobalMotion recover_global(const MotionFeatures& f) {
    ad::Var out = recover_global(ad::constant(f.frames), f.num_joints());
    return GlobalMotion{out.val()};
}

MotionFeatures extract_features(const GlobalMotion& g) {
    const int T = g.num_frames();
    const int J = g.num_joints();
    check(T >= 2, "extract_features: need at least 2 frames, got " + std::to_string(T));
    const int F = feature_dim_for_joints(J);
    Array out({T, F}, 0.0);

    double prev_x = 0.0, prev_z = 0.0;
    double prev_phi = 0.0;   // wrapped heading of the previous frame
    double theta = 0.0;      // unwrapped running yaw
    for (int n = 0; n < T; ++n) {
        const double rx = g.positions.at(n, 0, 0);
        const double ry = g.positions.at(n, 0, 1);
        const double rz = g.positions.at(n, 0, 2);
        const double dx = rx - prev_x;
        const double dz = rz - prev_z;

        double phi = prev_phi;
        if (std::sqrt(dx * dx + dz * dz) >= kHeadingEps) phi = std::atan2(dx, dz);
        const double yaw_vel = wrap_pi(phi - prev_phi);
        theta += yaw_vel;

        const double c = std::cos(theta);
        const double s = std::sin(theta);
        out.at(n, 0) = yaw_vel;
        out.at(n, 1) = c * dx - s * dz;  // R_y(-theta) applied to the displacement
        out.at(n, 2) = s * dx + c * dz;
        out.at(n, 3) = ry;
        for (int j = 1; j < J; ++j) {
            const double ox = g.positions.at(n, j, 0) - rx;
            const double oy = g.positions.at(n, j, 1) - ry;
            const double oz = g.positions.at(n, j, 2) - rz;
            const int base = 4 + 3 * (j - 1);
            out.at(n, base + 0) = c * ox - s * oz;
            out.at(n, base + 1) = oy;
            out.at(n, base + 2) = s * ox + c * oz;
        }
        prev_x = rx;
        prev_z = rz;
        prev_phi = phi;
    }
    return MotionFeatures{std::move(out)};
}

const std::vector<std::string>& motion_class_names() {
    static const std::vector<std::string> names = {
        "walk-straight", "walk-circle-ccw", "walk-circle-cw", "zigzag",
        "wave-hand-stand", "walk-and-wave", "stand-still", "side-step"};
    return names;
}

namespace {

struct PoseParams {
    // neutral offsets in the root-local frame
    double head_y = 0.70;
    double wrist_x = 0.30, wrist_y = -0.15;
    double foot_x = 0.12, foot_y = -0.88;
    double pelvis_h = 0.90;

    // gait
    double gait_period = 16.0, gait_phase = 0.0;
    double foot_swing = 0.22, foot_lift = 0.06, arm_swing = 0.15, bob = 0.015;

    // wave
    bool wave = false;
    double wave_period = 8.0, wave_amp = 0.15, wave_phase = 0.0;

    bool gait = true;
};

// Root planar path + path-aligned body pose -> global positions.
Array assemble(int T, const std::vector<double>& path_x, const std::vector<double>& path_z,
               const PoseParams& p) {
    Array g({T, kNumJoints, 3}, 0.0);
    double prev_x = 0.0, prev_z = 0.0, phi = 0.0;
    for (int n = 0; n < T; ++n) {
        const double dx = path_x[static_cast<size_t>(n)] - prev_x;
        const double dz = path_z[static_cast<size_t>(n)] - prev_z;
        if (std::sqrt(dx * dx + dz * dz) >= kHeadingEps) phi = std::atan2(dx, dz);
        prev_x = path_x[static_cast<size_t>(n)];
        prev_z = path_z[static_cast<size_t>(n)];

        const double ph = 2.0 * kPi * n / p.gait_period + p.gait_phase;
        const double gait_on = p.gait ? 1.0 : 0.0;
        const double height = p.pelvis_h + gait_on * p.bob * std::sin(2.0 * ph);

        // local offsets: [x, y, z] per joint, joint order matches joint_names()
        double off[kNumJoints][3] = {
            {0.0, 0.0, 0.0},
            {p.foot_x, p.foot_y, 0.0},    // left foot
            {-p.foot_x, p.foot_y, 0.0},   // right foot
            {0.0, p.head_y, 0.0},         // head
            {p.wrist_x, p.wrist_y, 0.0},  // left wrist
            {-p.wrist_x, p.wrist_y, 0.0}  // right wrist
        };
        if (p.gait) {
            const double swing = std::sin(ph);
            off[1][2] += p.foot_swing * swing;
            off[2][2] -= p.foot_swing * swing;
            off[1][1] += p.foot_lift * std::max(0.0, swing);
            off[2][1] += p.foot_lift * std::max(0.0, -swing);
            off[4][2] -= p.arm_swing * swing;
            off[5][2] += p.arm_swing * swing;
        }
        if (p.wave) {
            const double wph = 2.0 * kPi * n / p.wave_period + p.wave_phase;
            off[5][1] = 0.45 + p.wave_amp * std::sin(wph);
            off[5][0] = -p.wrist_x + 0.08 * std::cos(wph);
        }

        const double c = std::cos(phi), s = std::sin(phi);
        for (int j = 0; j < kNumJoints; ++j) {
            const double ox = off[j][0], oy = off[j][1], oz = off[j][2];
            g.at(n, j, 0) = path_x[static_cast<size_t>(n)] + c * ox + s * oz;
            g.at(n, j, 1) = height + oy;
            g.at(n, j, 2) = path_z[static_cast<size_t>(n)] + c * oz - s * ox;
        }
    }
    return g;
}

double triangle_wave(double u) {  // period 1, range [-1, 1]
    const double f = u - std::floor(u);
    return 4.0 * std::abs(f - 0.5) - 1.0;
}

Array build_class_motion(int cls, int T, Rng& rng) {
    PoseParams p;
    p.gait_period = rng.uniform(14.0, 18.0);
    p.gait_phase = rng.uniform(0.0, 2.0 * kPi);
    p.foot_swing = rng.uniform(0.16, 0.26);
    p.foot_lift = rng.uniform(0.04, 0.08);
    p.arm_swing = rng.uniform(0.10, 0.20);
    p.pelvis_h = rng.uniform(0.85, 0.95);

    std::vector<double> xs(static_cast<size_t>(T), 0.0), zs(static_cast<size_t>(T), 0.0);
    switch (cls) {
        case 0: {  // walk-straight
            const double v = rng.uniform(0.03, 0.06);
            for (int n = 0; n < T; ++n) zs[static_cast<size_t>(n)] = v * n;
            break;
        }
        case 1:
        case 2: {  // walk-circle-ccw / walk-circle-cw
            const double r = rng.uniform(0.5, 0.9);
            const double loop = rng.uniform(0.85, 1.2);
            const double omega = (cls == 1 ? 1.0 : -1.0) * loop * 2.0 * kPi / T;
            const double a0 = rng.uniform(0.0, 2.0 * kPi);
            for (int n = 0; n < T; ++n) {
                xs[static_cast<size_t>(n)] = r * (std::cos(a0 + omega * n) - std::cos(a0));
                zs[static_cast<size_t>(n)] = r * (std::sin(a0 + omega * n) - std::sin(a0));
            }
            break;
        }
        case 3: {  // zigzag
            const double v = rng.uniform(0.03, 0.05);
            const double period = rng.uniform(12.0, 20.0);
            const double amp = rng.uniform(0.25, 0.5);
            for (int n = 0; n < T; ++n) {
                zs[static_cast<size_t>(n)] = v * n;
                xs[static_cast<size_t>(n)] = amp * triangle_wave(n / period);
            }
            break;
        }
        case 4: {  // wave-hand-stand
            p.gait = false;
            p.wave = true;
            p.wave_period = rng.uniform(6.0, 10.0);
            p.wave_amp = rng.uniform(0.10, 0.20);
            p.wave_phase = rng.uniform(0.0, 2.0 * kPi);
            break;
        }
        case 5: {  // walk-and-wave
            const double v = rng.uniform(0.03, 0.06);
            for (int n = 0; n < T; ++n) zs[static_cast<size_t>(n)] = v * n;
            p.wave = true;
            p.wave_period = rng.uniform(6.0, 10.0);
            p.wave_amp = rng.uniform(0.10, 0.20);
            p.wave_phase = rng.uniform(0.0, 2.0 * kPi);
            break;
        }
        case 6: {  // stand-still: constant pose, so no gait phase advance at all
            p.gait = false;
            p.wrist_x = rng.uniform(0.26, 0.34);
            p.head_y = rng.uniform(0.66, 0.74);
            break;
        }
        case 7: {  // side-step
            const double period = rng.uniform(16.0, 24.0);
            const double amp = rng.uniform(0.3, 0.5);
            for (int n = 0; n < T; ++n)
                xs[static_cast<size_t>(n)] = amp * std::sin(2.0 * kPi * n / period);
            break;
        }
        default:
            fail("make_dataset: unknown class " + std::to_string(cls));
    }
    return assemble(T, xs, zs, p);
}

}  // namespace

std::vector<SyntheticSample> make_dataset(int n, int frames, int joints, uint64_t seed) {
    check(frames >= 4 && frames % 4 == 0,
          "make_dataset: frame count must be >= 4 and divisible by 4, got " +
              std::to_string(frames));
    check(joints >= 2 && joints <= kNumJoints,
          "make_dataset: joints must be in [2," + std::to_string(kNumJoints) + "], got " +
              std::to_string(joints));

    std::vector<SyntheticSample> out;
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int cls = i % kNumClasses;  // balanced, remainder round-robin
        Rng rng = Rng::substream(seed, "dataset", static_cast<uint64_t>(i));
        Array g6 = build_class_motion(cls, frames, rng);

        Array g({frames, joints, 3}, 0.0);
        for (int t = 0; t < frames; ++t)
            for (int j = 0; j < joints; ++j)
                for (int k = 0; k < 3; ++k) g.at(t, j, k) = g6.at(t, j, k);

        SyntheticSample s;
        s.features = extract_features(GlobalMotion{std::move(g)});
        s.global = recover_global(s.features);  // exact feature/global consistency
        s.label = cls;
        s.text_tag = motion_class_names()[static_cast<size_t>(cls)];
        out.push_back(std::move(s));
    }
    return out;
}

void write_motion_jsonl(const std::string& path, const std::vector<SyntheticSample>& samples) {
    std::ofstream f(path);
    check(f.good(), "write_motion_jsonl: cannot open " + path);
    for (const auto& s : samples) {
        nlohmann::json j;
        j["label"] = s.label;
        j["text_tag"] = s.text_tag;
        auto frames = nlohmann::json::array();
        const int T = s.global.num_frames(), J = s.global.num_joints();
        for (int n = 0; n < T; ++n) {
            auto row = nlohmann::json::array();
            for (int q = 0; q < J; ++q)
                row.push_back({s.global.positions.at(n, q, 0), s.global.positions.at(n, q, 1),
                               s.global.positions.at(n, q, 2)});
            frames.push_back(std::move(row));
        }
        j["global"] = std::move(frames);
        f << j.dump() << "\n";
    }
}

std::vector<SyntheticSample> read_motion_jsonl(const std::string& path) {
    std::ifstream f(path);
    check(f.good(), "read_motion_jsonl: cannot open " + path);
    std::vector<SyntheticSample> out;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        check(!j.is_discarded() && j.contains("label") && j.contains("global"),
              "read_motion_jsonl: malformed record at line " + std::to_string(line_no));
        const auto& frames = j["global"];
        const int T = static_cast<int>(frames.size());
        check(T >= 2, "read_motion_jsonl: too few frames at line " + std::to_string(line_no));
        const int J = static_cast<int>(frames[0].size());
        Array g({T, J, 3}, 0.0);
        for (int n = 0; n < T; ++n)
            for (int q = 0; q < J; ++q)
                for (int k = 0; k < 3; ++k) g.at(n, q, k) = frames[n][q][k].get<double>();
        SyntheticSample s;
        s.global = GlobalMotion{std::move(g)};
        s.features = extract_features(s.global);
        s.label = j["label"].get<int>();
        s.text_tag = j.value("text_tag", std::string());
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace mmc
