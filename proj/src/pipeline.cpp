#include "mmc/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace mmc {

namespace {

using ad::Var;

std::vector<double> softmax_row(const Array& logits, int row) {
    const int K = logits.dim(1);
    std::vector<double> p(static_cast<size_t>(K));
    double mx = logits.at(row, 0);
    for (int j = 1; j < K; ++j) mx = std::max(mx, logits.at(row, j));
    double z = 0.0;
    for (int j = 0; j < K; ++j) {
        p[static_cast<size_t>(j)] = std::exp(logits.at(row, j) - mx);
        z += p[static_cast<size_t>(j)];
    }
    for (double& v : p) v /= z;
    return p;
}

Array softmax_all(const Array& logits) {
    Array out = logits;
    for (int i = 0; i < logits.dim(0); ++i) {
        auto p = softmax_row(logits, i);
        for (int j = 0; j < logits.dim(1); ++j) out.at(i, j) = p[static_cast<size_t>(j)];
    }
    return out;
}

// Editing objective shared by the logit and codebook passes: decoded positions
// against the spatial targets plus the obstacle field.
struct EditObjective {
    const GenerationRequest* req;
    const Models* m;

    bool active() const {
        return (req->spatial.has_value() || !req->obstacles.empty());
    }

    Var loss_from_positions(const Var& positions) const {
        Var loss;
        if (req->spatial.has_value()) {
            Var c = ad::scale(masked_target_loss(positions, *req->spatial),
                              req->edit.consistency_weight);
            loss = c;
        }
        if (!req->obstacles.empty()) {
            Var o = ad::scale(obstacle_loss(positions, req->obstacles, req->obstacle_joints),
                              req->edit.obstacle_weight);
            loss = loss.valid() ? ad::add(loss, o) : o;
        }
        return loss;
    }

    Var loss_from_embeddings(const Var& embeddings) const {
        Var feats = m->tokenizer->decode(embeddings);
        Var positions = recover_global(feats, m->base->cfg.joints);
        return loss_from_positions(positions);
    }
};

}  // namespace

void GenerationRequest::validate(const TransformerConfig& cfg) const {
    check(frames >= cfg.window && frames % cfg.window == 0,
          "generate: frame count " + std::to_string(frames) + " must be a positive multiple of " +
              std::to_string(cfg.window));
    check(frames / cfg.window <= cfg.max_tokens,
          "generate: frame count " + std::to_string(frames) + " exceeds the trained maximum " +
              std::to_string(cfg.max_tokens * cfg.window));
    check(iterations >= 1, "generate: iteration count must be >= 1");
    check(label >= 0 && label <= cfg.null_label(), "generate: label out of range");
    edit.validate();
    if (spatial.has_value()) {
        spatial->validate();
        check(spatial->targets.dim(0) == frames, "generate: control frames " +
                                                     std::to_string(spatial->targets.dim(0)) +
                                                     " != requested length " +
                                                     std::to_string(frames));
        check(spatial->targets.dim(1) == cfg.joints,
              "generate: control skeleton has " + std::to_string(spatial->targets.dim(1)) +
                  " joints, model expects " + std::to_string(cfg.joints));
        check(!spatial->empty(), "generate: spatial control has no active entries");
    }
    if (!obstacles.empty())
        check(obstacle_joints.ndim() == 2 && obstacle_joints.dim(0) == frames &&
                  obstacle_joints.dim(1) == cfg.joints,
              "generate: obstacle joint selector must be (T,J)");
}

GenerationResult generate(const GenerationRequest& req, const Models& m) {
    check(m.tokenizer && m.base, "generate: tokenizer and base weights are required");
    const TransformerConfig& cfg = m.base->cfg;
    req.validate(cfg);
    const bool controlled = req.use_control_branch && req.spatial.has_value();
    if (controlled) check(m.control, "generate: control weights are required for spatial input");

    const int t = req.frames / cfg.window;
    const int I = req.iterations;
    const int mask_id = cfg.mask_id();
    const Codebook book = m.tokenizer->codebook();

    EditObjective objective{&req, &m};

    MaskedTokens x;
    x.ids.assign(static_cast<size_t>(t), mask_id);

    GenerationResult result;
    if (req.trace) {
        result.confidence_before = Array({I, t}, 0.0);
        result.confidence_after = Array({I, t}, 0.0);
    }

    for (int i = 0; i < I; ++i) {
        Rng noise_rng = Rng::substream(req.seed, "gumbel", static_cast<uint64_t>(i));
        const Array noise = gumbel_noise({t, cfg.codes}, noise_rng);

        Array l_cond, l_uncond;
        if (controlled) {
            Condition cond{req.label, req.spatial};
            Condition uncond{cfg.null_label(), req.spatial};
            l_cond = forward_controlled(x, cond, *m.base, *m.control).val();
            l_uncond = forward_controlled(x, uncond, *m.base, *m.control).val();
        } else {
            l_cond = forward_base(x, req.label, *m.base).val();
            l_uncond = forward_base(x, cfg.null_label(), *m.base).val();
        }
        Array logits = cfg_logits(l_cond, l_uncond, req.cfg_scale);

        if (req.trace)
            for (int p = 0; p < t; ++p) {
                const auto probs = softmax_row(logits, p);
                result.confidence_before.at(i, p) = *std::max_element(probs.begin(), probs.end());
            }

        if (objective.active() && req.edit.logit_steps > 0) {
            // embeddings: still-masked positions flow through differentiable
            // sampling of the edited logits; resolved positions stay fixed
            Array hold_mask({t, book.dim}, 0.0);
            Array held(Array({t, book.dim}, 0.0));
            for (int p = 0; p < t; ++p) {
                if (x.ids[static_cast<size_t>(p)] == mask_id) {
                    for (int k = 0; k < book.dim; ++k) hold_mask.at(p, k) = 1.0;
                } else {
                    for (int k = 0; k < book.dim; ++k)
                        held.at(p, k) = book.tables[0].at(x.ids[static_cast<size_t>(p)], k);
                }
            }
            auto loss_fn = [&](const Var& vl) {
                Var p = gumbel_softmax(vl, noise, req.edit.tau);
                Var e_dcse = dcse_embed(p, ad::constant(book.tables[0]));
                Var e = ad::add(ad::mul(e_dcse, ad::constant(hold_mask)), ad::constant(held));
                return objective.loss_from_embeddings(e);
            };
            logits = logit_edit(logits, loss_fn, req.edit.eta_logits, req.edit.logit_steps);
        }

        if (req.trace)
            for (int p = 0; p < t; ++p) {
                const auto probs = softmax_row(logits, p);
                result.confidence_after.at(i, p) = *std::max_element(probs.begin(), probs.end());
            }

        // hard Gumbel draw at still-masked positions; resolved ids stay put
        const std::vector<int> draw = hard_sample(logits, noise);
        std::vector<int> full = x.ids;
        for (int p = 0; p < t; ++p)
            if (full[static_cast<size_t>(p)] == mask_id) full[static_cast<size_t>(p)] = draw[static_cast<size_t>(p)];

        const int keep = static_cast<int>(std::floor(mask_schedule(i + 1, I) * t));
        x = confidence_remask(softmax_all(logits), full, keep, {}, mask_id);
    }

    check(x.masked_count(mask_id) == 0, "generate: unresolved MASK tokens after the last iteration");

    // residual levels, decoded greedily on top of the running embedding sum
    TokenSeq tokens;
    tokens.ids.push_back(x.ids);
    Array e_sum({t, book.dim}, 0.0);
    for (int p = 0; p < t; ++p)
        for (int k = 0; k < book.dim; ++k)
            e_sum.at(p, k) = book.tables[0].at(x.ids[static_cast<size_t>(p)], k);
    for (int v = 1; v < cfg.levels; ++v) {
        Array rlogits = forward_residual(ad::constant(e_sum), v, *m.base).val();
        const std::vector<int> rids = hard_sample(rlogits, Array{});
        tokens.ids.push_back(rids);
        for (int p = 0; p < t; ++p)
            for (int k = 0; k < book.dim; ++k)
                e_sum.at(p, k) += book.tables[static_cast<size_t>(v)].at(rids[static_cast<size_t>(p)], k);
    }

    if (objective.active() && req.edit.code_steps > 0) {
        auto loss_fn = [&](const Var& ve) { return objective.loss_from_embeddings(ve); };
        e_sum = codebook_edit(e_sum, loss_fn, req.edit.eta_code, req.edit.code_steps);
    }

    Array feats = m.tokenizer->decode(e_sum);
    result.motion = recover_global(MotionFeatures{feats});
    result.tokens = std::move(tokens);

    if (req.spatial.has_value())
        result.keyframes = keyframe_errors(result.motion, *req.spatial);

    if (!req.obstacles.empty()) {
        double min_sdf = 0.0;
        bool first = true;
        for (int n = 0; n < req.frames; ++n)
            for (int j = 0; j < cfg.joints; ++j) {
                if (req.obstacle_joints.at(n, j) == 0.0) continue;
                double p[3];
                for (int k = 0; k < 3; ++k) p[k] = result.motion.positions.at(n, j, k);
                for (const auto& ob : req.obstacles) {
                    const Array c = ob.center_at(n);
                    const double cd[3] = {c.at(0), c.at(1), c.at(2)};
                    const double sdf = sdf_sphere(p, cd, ob.radius);
                    if (first || sdf < min_sdf) {
                        min_sdf = sdf;
                        first = false;
                    }
                    if (sdf < 0.0) {
                        std::ostringstream os;
                        os << "joint " << joint_names()[static_cast<size_t>(j)] << " frame " << n
                           << " penetrates obstacle (sdf " << sdf << ")";
                        result.violation_report.push_back(os.str());
                    }
                }
            }
        result.min_obstacle_sdf = min_sdf;
        result.obstacle_violation = !result.violation_report.empty();
    }
    return result;
}

GenerationResult avoid(const GenerationRequest& req, const Models& m) {
    check(!req.obstacles.empty(), "avoid: at least one obstacle is required");
    bool any = false;
    if (req.obstacle_joints.ndim() == 2)
        for (double v : req.obstacle_joints.data) any = any || (v != 0.0);
    check(any, "avoid: the obstacle joint selector has no active entries");
    return generate(req, m);
}

SpatialControl control_any(const std::vector<ControlPoint>& points, int frames, int joints) {
    check(!points.empty(), "control_any: empty control set");
    SpatialControl s;
    s.targets = Array({frames, joints, 3}, 0.0);
    s.mask = Array({frames, joints}, 0.0);
    for (const auto& p : points) {
        const int j = joint_index(p.joint);
        check(j >= 0 && j < joints, "control_any: unknown joint '" + p.joint + "'");
        check(p.frame >= 0 && p.frame < frames,
              "control_any: frame " + std::to_string(p.frame) + " outside [0," +
                  std::to_string(frames) + ")");
        if (s.mask.at(p.frame, j) != 0.0) {
            for (int k = 0; k < 3; ++k)
                check(s.targets.at(p.frame, j, k) == p.target[k],
                      "control_any: conflicting targets for joint '" + p.joint + "' at frame " +
                          std::to_string(p.frame));
            continue;
        }
        s.mask.at(p.frame, j) = 1.0;
        for (int k = 0; k < 3; ++k) s.targets.at(p.frame, j, k) = p.target[k];
    }
    return s;
}

SpatialControl zigzag_control(const std::string& joint, int frames, int joints, double amplitude,
                              int period, double speed, double height) {
    check(period >= 2, "zigzag_control: period must be >= 2");
    std::vector<ControlPoint> points;
    for (int n = 0; n < frames; ++n) {
        // triangle wave: alternating x, steady advance in z
        const double u = static_cast<double>(n) / period;
        const double f = u - std::floor(u);
        const double tri = 4.0 * std::abs(f - 0.5) - 1.0;
        ControlPoint p;
        p.joint = joint;
        p.frame = n;
        p.target[0] = amplitude * tri;
        p.target[1] = height;
        p.target[2] = speed * n;
        points.push_back(p);
    }
    return control_any(points, frames, joints);
}

GenerationResult timeline(const std::vector<TimelinePrompt>& prompts, int base_label,
                          const GenerationRequest& req, const Models& m) {
    GenerationRequest pass = req;
    pass.label = base_label;
    pass.spatial.reset();
    pass.seed = Rng::substream(req.seed, "timeline", 0).next_u64();
    GenerationResult current = generate(pass, m);

    const int T = req.frames;
    const int J = m.base->cfg.joints;
    for (size_t k = 0; k < prompts.size(); ++k) {
        const auto& pr = prompts[k];
        check(!pr.joints.empty(), "timeline: prompt " + std::to_string(k) + " has no joints");
        check(pr.begin >= 0 && pr.begin < pr.end && pr.end <= T,
              "timeline: prompt " + std::to_string(k) + " window outside [0," + std::to_string(T) +
                  ")");
        std::vector<bool> in_set(static_cast<size_t>(J), false);
        for (int j : pr.joints) {
            check(j >= 0 && j < J, "timeline: joint index out of range");
            in_set[static_cast<size_t>(j)] = true;
        }

        // anchor every joint outside the prompt's body-part set over all frames,
        // and the prompt's own joints outside its window
        SpatialControl s;
        s.targets = Array({T, J, 3}, 0.0);
        s.mask = Array({T, J}, 0.0);
        long active = 0;
        for (int n = 0; n < T; ++n)
            for (int j = 0; j < J; ++j) {
                const bool anchored =
                    !in_set[static_cast<size_t>(j)] || n < pr.begin || n >= pr.end;
                if (!anchored) continue;
                s.mask.at(n, j) = 1.0;
                ++active;
                for (int c = 0; c < 3; ++c)
                    s.targets.at(n, j, c) = current.motion.positions.at(n, j, c);
            }

        GenerationRequest step = req;
        step.label = pr.label;
        step.seed = Rng::substream(req.seed, "timeline", k + 1).next_u64();
        if (active == 0) {
            // the prompt covers every joint and frame: plain regeneration
            step.spatial.reset();
        } else {
            step.spatial = std::move(s);
        }
        current = generate(step, m);
    }
    return current;
}

void confidence_trace(const GenerationResult& result, const std::string& before_path,
                      const std::string& after_path) {
    check(!result.confidence_before.data.empty(),
          "confidence_trace: generation ran without tracing enabled");
    auto dump = [](const std::string& path, const Array& a) {
        std::ofstream f(path);
        check(f.good(), "confidence_trace: cannot open " + path);
        for (int i = 0; i < a.dim(0); ++i) {
            for (int j = 0; j < a.dim(1); ++j) f << (j ? "," : "") << a.at(i, j);
            f << "\n";
        }
    };
    dump(before_path, result.confidence_before);
    dump(after_path, result.confidence_after);
}

}  // namespace mmc
