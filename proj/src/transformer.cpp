#include "mmc/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mmc {

namespace {

constexpr double kPi = 3.14159265358979323846;

using ad::Var;

Var layer_forward(const ParamSet& p, const std::string& pre, const Var& x, int heads) {
    const int e = x.val().dim(1);
    const int dh = e / heads;

    Var a = ad::layernorm_last(x);
    Var q = affine(a, p.get(pre + "_wq"), p.get(pre + "_bq"));
    Var k = affine(a, p.get(pre + "_wk"), p.get(pre + "_bk"));
    Var v = affine(a, p.get(pre + "_wv"), p.get(pre + "_bv"));

    std::vector<Var> head_out;
    head_out.reserve(static_cast<size_t>(heads));
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int h = 0; h < heads; ++h) {
        Var qh = ad::slice(q, 1, h * dh, dh);
        Var kh = ad::slice(k, 1, h * dh, dh);
        Var vh = ad::slice(v, 1, h * dh, dh);
        Var scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt);
        head_out.push_back(ad::matmul(ad::softmax_last(scores), vh));
    }
    Var att = affine(ad::concat(head_out, 1), p.get(pre + "_wo"), p.get(pre + "_bo"));
    Var x1 = ad::add(x, att);

    Var f = ad::layernorm_last(x1);
    Var ff = affine(ad::relu(affine(f, p.get(pre + "_ff_w1"), p.get(pre + "_ff_b1"))),
                    p.get(pre + "_ff_w2"), p.get(pre + "_ff_b2"));
    return ad::add(x1, ff);
}

// [label slot | motion tokens] with positional embeddings added
Var embed_input(const MaskedTokens& x, int label, const BaseWeights& w) {
    const auto& cfg = w.cfg;
    const int t = x.length();
    check(t >= 1 && t <= cfg.max_tokens, "transformer: sequence length " + std::to_string(t) +
                                             " outside [1," + std::to_string(cfg.max_tokens) + "]");
    for (int id : x.ids)
        check(id >= 0 && id <= cfg.mask_id(),
              "transformer: token id " + std::to_string(id) + " out of range");
    check(label >= 0 && label <= cfg.null_label(),
          "transformer: label " + std::to_string(label) + " out of range");

    Var tok = ad::rows(w.params.get("tok_emb"), x.ids);
    Var lab = ad::rows(w.params.get("label_emb"), {label});
    Var seq = ad::concat({lab, tok}, 0);
    Var pos = ad::slice(w.params.get("pos_emb"), 0, 0, t + 1);
    return ad::add(seq, pos);
}

Var run_base_layers(const Var& h0, const BaseWeights& w) {
    Var h = h0;
    for (int k = 0; k < w.cfg.layers; ++k) h = layer_forward(w.params, "l" + std::to_string(k), h, w.cfg.heads);
    return h;
}

Var head_logits(const Var& h, const BaseWeights& w, int t) {
    Var norm = ad::layernorm_last(h);
    Var motion = ad::slice(norm, 0, 1, t);
    return affine(motion, w.params.get("head_w"), w.params.get("head_b"));
}

}  // namespace

int MaskedTokens::masked_count(int mask_id) const {
    int n = 0;
    for (int id : ids) n += (id == mask_id) ? 1 : 0;
    return n;
}

double mask_schedule(int step, int total) {
    check(total >= 1, "mask_schedule: total iterations must be >= 1");
    check(step >= 0 && step <= total, "mask_schedule: step " + std::to_string(step) +
                                          " outside [0," + std::to_string(total) + "]");
    return std::cos(kPi * static_cast<double>(step) / (2.0 * static_cast<double>(total)));
}

MaskedTokens corrupt(const std::vector<int>& base_ids, double ratio, int mask_id, Rng& rng) {
    check(ratio > 0.0 && ratio <= 1.0, "corrupt: ratio must be in (0,1]");
    const int t = static_cast<int>(base_ids.size());
    const int m = static_cast<int>(std::ceil(ratio * t));

    // partial Fisher-Yates: the first m entries are a uniform sample
    std::vector<int> idx(static_cast<size_t>(t));
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < m; ++i) {
        const int j = rng.uniform_int(i, t - 1);
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    MaskedTokens out;
    out.ids = base_ids;
    for (int i = 0; i < m; ++i) out.ids[static_cast<size_t>(idx[static_cast<size_t>(i)])] = mask_id;
    return out;
}

ad::Var forward_base(const MaskedTokens& x, int label, const BaseWeights& w) {
    Var h = run_base_layers(embed_input(x, label, w), w);
    return head_logits(h, w, x.length());
}

Array spatial_windows(const SpatialControl& s, int window) {
    const int T = s.targets.dim(0), J = s.targets.dim(1);
    check(window >= 1 && T % window == 0, "spatial_windows: frame count " + std::to_string(T) +
                                              " not divisible by window " + std::to_string(window));
    const int t = T / window;
    const int width = window * J * 3 + window * J;
    Array out({t, width}, 0.0);
    for (int i = 0; i < t; ++i) {
        int col = 0;
        for (int wf = 0; wf < window; ++wf)
            for (int j = 0; j < J; ++j)
                for (int k = 0; k < 3; ++k) out.at(i, col++) = s.targets.at(i * window + wf, j, k);
        for (int wf = 0; wf < window; ++wf)
            for (int j = 0; j < J; ++j) out.at(i, col++) = s.mask.at(i * window + wf, j);
    }
    return out;
}

ad::Var forward_controlled(const MaskedTokens& x, const Condition& c, const BaseWeights& base,
                           const ControlWeights& ctrl) {
    check(c.spatial.has_value(), "forward_controlled: spatial condition is required");
    const auto& cfg = base.cfg;
    const int t = x.length();
    check(c.spatial->targets.dim(0) == cfg.window * t,
          "forward_controlled: control frame count " + std::to_string(c.spatial->targets.dim(0)) +
              " != window * tokens = " + std::to_string(cfg.window * t));

    Var h0 = embed_input(x, c.label, base);

    Array win = spatial_windows(*c.spatial, cfg.window);
    Var sp = affine(ad::constant(win), ctrl.params.get("sp_w"), ctrl.params.get("sp_b"));
    Var sp_full = ad::concat({ad::constant(Array({1, cfg.embed}, 0.0)), sp}, 0);
    Var cstream = ad::add(h0, sp_full);

    Var b = h0;
    for (int k = 0; k < cfg.layers; ++k) {
        const std::string ks = std::to_string(k);
        cstream = layer_forward(ctrl.params, "cl" + ks, cstream, cfg.heads);
        b = layer_forward(base.params, "l" + ks, b, cfg.heads);
        b = ad::add(b, affine(cstream, ctrl.params.get("zero" + ks + "_w"),
                              ctrl.params.get("zero" + ks + "_b")));
    }
    return head_logits(b, base, t);
}

ad::Var cfg_logits(const ad::Var& cond, const ad::Var& uncond, double scale) {
    check(cond.val().same_shape(uncond.val()), "cfg_logits: shape mismatch " +
                                                   shape_str(cond.shape()) + " vs " +
                                                   shape_str(uncond.shape()));
    return ad::add(uncond, ad::scale(ad::sub(cond, uncond), scale));
}

Array cfg_logits(const Array& cond, const Array& uncond, double scale) {
    check(cond.same_shape(uncond), "cfg_logits: shape mismatch");
    Array out = uncond;
    for (long i = 0; i < out.numel(); ++i)
        out.at(i) += scale * (cond.at(i) - uncond.at(i));
    return out;
}

ad::Var masked_nll(const ad::Var& logits, const std::vector<int>& targets,
                   const std::vector<int>& mask_positions) {
    check(!mask_positions.empty(), "masked_nll: empty mask set");
    check(static_cast<int>(targets.size()) == logits.val().dim(0),
          "masked_nll: targets length mismatch");
    Var sel = ad::rows(logits, mask_positions);
    std::vector<int> sel_targets;
    sel_targets.reserve(mask_positions.size());
    for (int pos : mask_positions) sel_targets.push_back(targets[static_cast<size_t>(pos)]);
    Var lse = ad::logsumexp_last(sel);
    Var tgt = ad::take_last(sel, sel_targets);
    return ad::scale(ad::sum_all(ad::sub(lse, tgt)), 1.0 / static_cast<double>(mask_positions.size()));
}

ad::Var forward_residual(const ad::Var& embedding_sum, int level, const BaseWeights& w) {
    check(level >= 1 && level < w.cfg.levels,
          "forward_residual: level " + std::to_string(level) + " outside [1," +
              std::to_string(w.cfg.levels - 1) + "]");
    const int t = embedding_sum.val().dim(0);
    Var h = affine(embedding_sum, w.params.get("res_in_w"), w.params.get("res_in_b"));
    Var lvl = ad::broadcast_row(ad::rows(w.params.get("res_lvl_emb"), {level - 1}), t);
    Var a = ad::relu(ad::add(h, lvl));
    return affine(a, w.params.get("res_out_w"), w.params.get("res_out_b"));
}

MaskedTokens confidence_remask(const Array& probs, const std::vector<int>& sampled,
                               int keep_masked, const std::vector<int>& frozen, int mask_id) {
    const int t = probs.dim(0);
    check(static_cast<int>(sampled.size()) == t, "confidence_remask: sampled length mismatch");
    std::vector<bool> is_frozen(static_cast<size_t>(t), false);
    for (int f : frozen) {
        check(f >= 0 && f < t, "confidence_remask: frozen position out of range");
        is_frozen[static_cast<size_t>(f)] = true;
    }
    const int free_count = t - static_cast<int>(frozen.size());
    check(keep_masked >= 0 && keep_masked <= free_count,
          "confidence_remask: count " + std::to_string(keep_masked) + " outside [0," +
              std::to_string(free_count) + "]");

    std::vector<std::pair<double, int>> order;  // (confidence, position)
    for (int i = 0; i < t; ++i) {
        if (is_frozen[static_cast<size_t>(i)]) continue;
        const int id = sampled[static_cast<size_t>(i)];
        check(id >= 0 && id < probs.dim(1), "confidence_remask: sampled id out of range");
        order.emplace_back(probs.at(i, id), i);
    }
    std::sort(order.begin(), order.end());

    MaskedTokens out;
    out.ids = sampled;
    for (int i = 0; i < keep_masked; ++i)
        out.ids[static_cast<size_t>(order[static_cast<size_t>(i)].second)] = mask_id;
    return out;
}

BaseWeights init_base(const TransformerConfig& cfg, uint64_t seed) {
    check(cfg.embed % cfg.heads == 0, "transformer: embed must divide evenly across heads");
    BaseWeights w;
    w.cfg = cfg;
    Rng rng = Rng::substream(seed, "base-init");
    const int e = cfg.embed, K = cfg.codes;

    w.params.add("tok_emb", normal_init({K + 1, e}, 0.02, rng));
    w.params.add("pos_emb", normal_init({cfg.max_tokens + 1, e}, 0.02, rng));
    w.params.add("label_emb", normal_init({cfg.classes + 1, e}, 0.02, rng));
    for (int k = 0; k < cfg.layers; ++k) {
        const std::string pre = "l" + std::to_string(k);
        const double s = 1.0 / std::sqrt(static_cast<double>(e));
        for (const char* nm : {"_wq", "_wk", "_wv", "_wo"})
            w.params.add(pre + nm, normal_init({e, e}, s, rng));
        for (const char* nm : {"_bq", "_bk", "_bv", "_bo"}) w.params.add(pre + nm, Array({e}, 0.0));
        w.params.add(pre + "_ff_w1", normal_init({e, 4 * e}, s, rng));
        w.params.add(pre + "_ff_b1", Array({4 * e}, 0.0));
        w.params.add(pre + "_ff_w2", normal_init({4 * e, e}, 1.0 / std::sqrt(4.0 * e), rng));
        w.params.add(pre + "_ff_b2", Array({e}, 0.0));
    }
    w.params.add("head_w", normal_init({e, K}, 1.0 / std::sqrt(static_cast<double>(e)), rng));
    w.params.add("head_b", Array({K}, 0.0));

    w.params.add("res_in_w",
                 normal_init({cfg.code_dim, e}, 1.0 / std::sqrt(static_cast<double>(cfg.code_dim)), rng));
    w.params.add("res_in_b", Array({e}, 0.0));
    w.params.add("res_lvl_emb", normal_init({std::max(1, cfg.levels - 1), e}, 0.02, rng));
    w.params.add("res_out_w", normal_init({e, K}, 1.0 / std::sqrt(static_cast<double>(e)), rng));
    w.params.add("res_out_b", Array({K}, 0.0));
    return w;
}

ControlWeights init_control(const BaseWeights& base, uint64_t seed) {
    ControlWeights c;
    c.cfg = base.cfg;
    Rng rng = Rng::substream(seed, "control-init");
    const int e = base.cfg.embed;

    // trainable replica of every base layer
    for (int k = 0; k < base.cfg.layers; ++k) {
        const std::string src = "l" + std::to_string(k);
        const std::string dst = "cl" + std::to_string(k);
        for (const char* nm : {"_wq", "_wk", "_wv", "_wo", "_bq", "_bk", "_bv", "_bo", "_ff_w1",
                               "_ff_b1", "_ff_w2", "_ff_b2"})
            c.params.add(dst + nm, base.params.get(src + nm).val());
    }
    const int width = base.cfg.window * base.cfg.joints * 4;
    c.params.add("sp_w", normal_init({width, e}, 1.0 / std::sqrt(static_cast<double>(width)), rng));
    c.params.add("sp_b", Array({e}, 0.0));
    for (int k = 0; k < base.cfg.layers; ++k) {
        c.params.add("zero" + std::to_string(k) + "_w", Array({e, e}, 0.0));
        c.params.add("zero" + std::to_string(k) + "_b", Array({e}, 0.0));
    }
    return c;
}

namespace {

std::vector<int> masked_positions(const MaskedTokens& x, int mask_id) {
    std::vector<int> out;
    for (int i = 0; i < x.length(); ++i)
        if (x.ids[static_cast<size_t>(i)] == mask_id) out.push_back(i);
    return out;
}

bool drop_label(Rng& rng, double rate) { return rng.uniform() < rate; }

// ratio for one training step, matched to the inference-time cosine schedule
double sample_mask_ratio(Rng& rng) { return std::cos(kPi * rng.uniform() / 2.0); }

Array level_embedding_sum(const TokenSeq& tokens, const Codebook& book, int upto_level) {
    const int t = tokens.length(), d = book.dim;
    Array e({t, d}, 0.0);
    for (int v = 0; v < upto_level; ++v)
        for (int i = 0; i < t; ++i) {
            const int id = tokens.ids[static_cast<size_t>(v)][static_cast<size_t>(i)];
            for (int k = 0; k < d; ++k) e.at(i, k) += book.tables[static_cast<size_t>(v)].at(id, k);
        }
    return e;
}

}  // namespace

TrainCurve train_base(BaseWeights& w, const std::vector<SyntheticSample>& dataset,
                      const TokenizerWeights& tokenizer, const MaskedTrainConfig& tc) {
    check(!dataset.empty(), "train_base: empty dataset");
    const Codebook book = tokenizer.codebook();
    std::vector<TokenSeq> tokens;
    tokens.reserve(dataset.size());
    for (const auto& s : dataset) tokens.push_back(tokenizer.tokenize(s.features));

    AdamW opt;
    opt.init(w.params);
    TrainCurve curve;

    for (int it = 0; it < tc.iterations; ++it) {
        Rng rng = Rng::substream(tc.seed, "base-batch", static_cast<uint64_t>(it));
        std::vector<Var> losses;
        for (int b = 0; b < tc.batch; ++b) {
            const int si = rng.uniform_int(0, static_cast<int>(dataset.size()) - 1);
            const TokenSeq& seq = tokens[static_cast<size_t>(si)];
            const int label =
                drop_label(rng, w.cfg.label_dropout) ? w.cfg.null_label() : dataset[static_cast<size_t>(si)].label;

            MaskedTokens x = corrupt(seq.base(), sample_mask_ratio(rng), w.cfg.mask_id(), rng);
            const std::vector<int> mpos = masked_positions(x, w.cfg.mask_id());
            if (mpos.empty()) continue;  // ratio in (0,1] makes this unreachable; belt only

            Var logits = forward_base(x, label, w);
            Var loss = masked_nll(logits, seq.base(), mpos);

            // residual levels are predicted from the running embedding sum
            std::vector<int> all_pos(static_cast<size_t>(seq.length()));
            std::iota(all_pos.begin(), all_pos.end(), 0);
            for (int v = 1; v < w.cfg.levels; ++v) {
                Var e_sum = ad::constant(level_embedding_sum(seq, book, v));
                Var rlogits = forward_residual(e_sum, v, w);
                loss = ad::add(loss, masked_nll(rlogits, seq.ids[static_cast<size_t>(v)], all_pos));
            }
            losses.push_back(loss);
        }
        Var total = losses[0];
        for (size_t i = 1; i < losses.size(); ++i) total = ad::add(total, losses[i]);
        total = ad::scale(total, 1.0 / static_cast<double>(losses.size()));

        const double lv = total.val().at(0L);
        if (!std::isfinite(lv))
            fail("train_base: loss diverged (non-finite) at iteration " + std::to_string(it));
        curve.losses.push_back(lv);

        ad::backward(total);
        opt.step(w.params, warmup_lr(it, tc.warmup, tc.peak_lr));
    }
    return curve;
}

namespace {

SpatialControl random_ground_truth_control(const SyntheticSample& s, Rng& rng,
                                           const std::vector<int>& density_levels) {
    const int T = s.global.num_frames(), J = s.global.num_joints();
    SpatialControl sc;
    sc.targets = Array({T, J, 3}, 0.0);
    sc.mask = Array({T, J}, 0.0);

    int joint_count = 1;
    const double roll = rng.uniform();
    if (roll > 0.75)
        joint_count = 3;
    else if (roll > 0.5)
        joint_count = 2;
    std::vector<int> joints(static_cast<size_t>(J));
    std::iota(joints.begin(), joints.end(), 0);
    for (int i = 0; i < joint_count; ++i) {
        const int j = rng.uniform_int(i, J - 1);
        std::swap(joints[static_cast<size_t>(i)], joints[static_cast<size_t>(j)]);
    }

    const int level = density_levels[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int>(density_levels.size()) - 1))];
    const int frames = std::min(level, T);
    for (int jc = 0; jc < joint_count; ++jc) {
        const int j = joints[static_cast<size_t>(jc)];
        std::vector<int> fidx(static_cast<size_t>(T));
        std::iota(fidx.begin(), fidx.end(), 0);
        for (int i = 0; i < frames; ++i) {
            const int r = rng.uniform_int(i, T - 1);
            std::swap(fidx[static_cast<size_t>(i)], fidx[static_cast<size_t>(r)]);
        }
        for (int i = 0; i < frames; ++i) {
            const int n = fidx[static_cast<size_t>(i)];
            sc.mask.at(n, j) = 1.0;
            for (int k = 0; k < 3; ++k) sc.targets.at(n, j, k) = s.global.positions.at(n, j, k);
        }
    }
    return sc;
}

}  // namespace

TrainCurve train_control(ControlWeights& ctrl, const BaseWeights& base,
                         const TokenizerWeights& tokenizer,
                         const std::vector<SyntheticSample>& dataset,
                         const ControlTrainConfig& tc) {
    check(!dataset.empty(), "train_control: empty dataset");
    const Codebook book = tokenizer.codebook();
    std::vector<TokenSeq> tokens;
    tokens.reserve(dataset.size());
    for (const auto& s : dataset) tokens.push_back(tokenizer.tokenize(s.features));

    AdamW opt;
    opt.init(ctrl.params);  // base and tokenizer stay frozen
    TrainCurve curve;
    const double alpha = base.cfg.alpha;

    for (int it = 0; it < tc.iterations; ++it) {
        Rng rng = Rng::substream(tc.seed, "ctrl-batch", static_cast<uint64_t>(it));
        std::vector<Var> losses;
        for (int b = 0; b < tc.batch; ++b) {
            const int si = rng.uniform_int(0, static_cast<int>(dataset.size()) - 1);
            const auto& sample = dataset[static_cast<size_t>(si)];
            const TokenSeq& seq = tokens[static_cast<size_t>(si)];

            Condition cond;
            cond.label = drop_label(rng, base.cfg.label_dropout) ? base.cfg.null_label()
                                                                 : sample.label;
            cond.spatial = random_ground_truth_control(sample, rng, tc.density_levels);

            MaskedTokens x = corrupt(seq.base(), sample_mask_ratio(rng), base.cfg.mask_id(), rng);
            const std::vector<int> mpos = masked_positions(x, base.cfg.mask_id());
            if (mpos.empty()) continue;

            Var logits = forward_controlled(x, cond, base, ctrl);
            Var l_mask = masked_nll(logits, seq.base(), mpos);

            // consistency through differentiable sampling of the base level,
            // with the ground-truth residual levels added as constants
            Array noise = gumbel_noise(logits.val().shape, rng);
            Var p = gumbel_softmax(logits, noise, 1.0);
            Var e0 = dcse_embed(p, ad::constant(book.tables[0]));
            Var e = e0;
            if (base.cfg.levels > 1) {
                Array rest = level_embedding_sum(seq, book, base.cfg.levels);
                const Array base_part = level_embedding_sum(seq, book, 1);
                for (long i = 0; i < rest.numel(); ++i) rest.at(i) -= base_part.at(i);
                e = ad::add(e0, ad::constant(rest));
            }
            Var l_s = consistency_loss(e, *cond.spatial, tokenizer);
            losses.push_back(combined_train_loss(l_mask, l_s, alpha));
        }
        Var total = losses[0];
        for (size_t i = 1; i < losses.size(); ++i) total = ad::add(total, losses[i]);
        total = ad::scale(total, 1.0 / static_cast<double>(losses.size()));

        const double lv = total.val().at(0L);
        if (!std::isfinite(lv))
            fail("train_control: loss diverged (non-finite) at iteration " + std::to_string(it));
        curve.losses.push_back(lv);

        ad::backward(total);
        opt.step(ctrl.params, warmup_lr(it, tc.warmup, tc.peak_lr));
    }
    return curve;
}

}  // namespace mmc
