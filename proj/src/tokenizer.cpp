#include "mmc/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mmc {

namespace {

using ad::Var;

// strided pair-merge block: (m, in) -> (m, h) with a linear skip
Var block_down(const ParamSet& p, const std::string& pre, const Var& x) {
    Var h = relu(affine(x, p.get(pre + "_w1"), p.get(pre + "_b1")));
    Var y = affine(h, p.get(pre + "_w2"), p.get(pre + "_b2"));
    return ad::add(y, ad::matmul(x, p.get(pre + "_r")));
}

// upsampling block: (m, h) -> (2m, h) via a width-doubling linear and reshape
Var block_up(const ParamSet& p, const std::string& pre, const Var& x, int hidden) {
    Var h = relu(affine(x, p.get(pre + "_w1"), p.get(pre + "_b1")));
    Var y = affine(h, p.get(pre + "_w2"), p.get(pre + "_b2"));
    Var u = ad::add(y, ad::matmul(x, p.get(pre + "_r")));
    return ad::reshape(u, {2 * x.val().dim(0), hidden});
}

}  // namespace

Codebook TokenizerWeights::codebook() const {
    Codebook book;
    book.codes = cfg.codes;
    book.dim = cfg.dim;
    book.levels = cfg.levels;
    for (int v = 0; v < cfg.levels; ++v)
        book.tables.push_back(params.get("cb" + std::to_string(v)).val());
    return book;
}

ad::Var TokenizerWeights::encode(const ad::Var& features) const {
    const int T = features.val().dim(0);
    const int F = features.val().dim(1);
    check(F == cfg.feature_dim, "tokenizer: feature dim " + std::to_string(F) + " != configured " +
                                    std::to_string(cfg.feature_dim));
    check(T % cfg.downsample == 0, "tokenizer: frame count " + std::to_string(T) +
                                       " not divisible by " + std::to_string(cfg.downsample));
    Var x = ad::reshape(features, {T / 2, 2 * F});
    Var h1 = block_down(params, "enc1", x);
    Var x2 = ad::reshape(h1, {T / 4, 2 * cfg.hidden});
    Var h2 = block_down(params, "enc2", x2);
    return affine(h2, params.get("enc_out_w"), params.get("enc_out_b"));
}

ad::Var TokenizerWeights::decode(const ad::Var& latent) const {
    const int t = latent.val().dim(0);
    check(latent.val().dim(1) == cfg.dim, "tokenizer: latent dim " +
                                              std::to_string(latent.val().dim(1)) +
                                              " != configured " + std::to_string(cfg.dim));
    Var y = affine(latent, params.get("dec_in_w"), params.get("dec_in_b"));
    Var u1 = block_up(params, "dec1", y, cfg.hidden);
    Var u2 = block_up(params, "dec2", u1, cfg.hidden);
    (void)t;
    return affine(u2, params.get("dec_out_w"), params.get("dec_out_b"));
}

Array TokenizerWeights::encode(const Array& features) const {
    return encode(ad::constant(features)).val();
}

Array TokenizerWeights::decode(const Array& latent) const {
    return decode(ad::constant(latent)).val();
}

TokenSeq TokenizerWeights::tokenize(const MotionFeatures& f) const {
    return residual_quantize(encode(f.frames), codebook()).first;
}

Array TokenizerWeights::embed_tokens(const TokenSeq& tokens) const {
    const Codebook book = codebook();
    check(tokens.levels() <= book.levels, "tokenizer: token seq has more levels than codebook");
    const int t = tokens.length();
    Array e({t, book.dim}, 0.0);
    for (int v = 0; v < tokens.levels(); ++v) {
        const Array& table = book.tables[static_cast<size_t>(v)];
        for (int i = 0; i < t; ++i) {
            const int id = tokens.ids[static_cast<size_t>(v)][static_cast<size_t>(i)];
            check(id >= 0 && id < book.codes, "tokenizer: token id out of range");
            for (int k = 0; k < book.dim; ++k) e.at(i, k) += table.at(id, k);
        }
    }
    return e;
}

std::pair<std::vector<int>, Array> quantize(const Array& z, const Array& table) {
    check(table.ndim() == 2 && table.dim(0) > 0, "quantize: empty codebook");
    check(z.ndim() == 2 && z.dim(1) == table.dim(1),
          "quantize: dim mismatch " + shape_str(z.shape) + " vs " + shape_str(table.shape));
    const int t = z.dim(0), K = table.dim(0), d = table.dim(1);

    // argmin ||z - c||^2 = argmin (||c||^2 - 2 z.c); ties resolved by strict <
    std::vector<double> norms(static_cast<size_t>(K), 0.0);
    for (int j = 0; j < K; ++j) {
        double s = 0.0;
        for (int k = 0; k < d; ++k) s += table.at(j, k) * table.at(j, k);
        norms[static_cast<size_t>(j)] = s;
    }
    std::vector<int> ids(static_cast<size_t>(t), 0);
    Array emb({t, d}, 0.0);
    for (int i = 0; i < t; ++i) {
        double best = 0.0;
        int best_j = -1;
        for (int j = 0; j < K; ++j) {
            double dot = 0.0;
            for (int k = 0; k < d; ++k) dot += z.at(i, k) * table.at(j, k);
            const double score = norms[static_cast<size_t>(j)] - 2.0 * dot;
            if (best_j < 0 || score < best) {
                best = score;
                best_j = j;
            }
        }
        ids[static_cast<size_t>(i)] = best_j;
        for (int k = 0; k < d; ++k) emb.at(i, k) = table.at(best_j, k);
    }
    return {std::move(ids), std::move(emb)};
}

std::pair<TokenSeq, std::vector<Array>> residual_quantize(const Array& z, const Codebook& book) {
    check(book.levels >= 1 && static_cast<int>(book.tables.size()) == book.levels,
          "residual_quantize: codebook must have at least one level");
    TokenSeq seq;
    std::vector<Array> embs;
    Array r = z;
    for (int v = 0; v < book.levels; ++v) {
        auto [ids, e] = quantize(r, book.tables[static_cast<size_t>(v)]);
        for (long i = 0; i < r.numel(); ++i) r.at(i) -= e.at(i);
        seq.ids.push_back(std::move(ids));
        embs.push_back(std::move(e));
    }
    return {std::move(seq), std::move(embs)};
}

ad::Var vq_loss(const ad::Var& z, const ad::Var& e, double beta) {
    check(z.val().same_shape(e.val()), "vq_loss: shape mismatch " + shape_str(z.shape()) +
                                           " vs " + shape_str(e.shape()));
    using namespace ad;
    Var codebook_term = sum_all(square(sub(stop_grad(z), e)));
    Var commit_term = sum_all(square(sub(z, stop_grad(e))));
    return scale(add(codebook_term, scale(commit_term, beta)), 1.0 / z.val().dim(0));
}

TokenizerWeights init_tokenizer(const TokenizerConfig& cfg, uint64_t seed) {
    TokenizerWeights w;
    w.cfg = cfg;
    Rng rng = Rng::substream(seed, "tokenizer-init");
    const int F = cfg.feature_dim, h = cfg.hidden, d = cfg.dim, K = cfg.codes;
    auto lin = [&](const std::string& name, int in, int out) {
        w.params.add(name + "_w1", normal_init({in, h}, 1.0 / std::sqrt(in), rng));
        w.params.add(name + "_b1", Array({h}, 0.0));
        w.params.add(name + "_w2", normal_init({h, out}, 1.0 / std::sqrt(h), rng));
        w.params.add(name + "_b2", Array({out}, 0.0));
        w.params.add(name + "_r", normal_init({in, out}, 1.0 / std::sqrt(in), rng));
    };
    lin("enc1", 2 * F, h);
    lin("enc2", 2 * h, h);
    w.params.add("enc_out_w", normal_init({h, d}, 1.0 / std::sqrt(h), rng));
    w.params.add("enc_out_b", Array({d}, 0.0));

    w.params.add("dec_in_w", normal_init({d, h}, 1.0 / std::sqrt(d), rng));
    w.params.add("dec_in_b", Array({h}, 0.0));
    lin("dec1", h, 2 * h);
    lin("dec2", h, 2 * h);
    w.params.add("dec_out_w", normal_init({h, F}, 1.0 / std::sqrt(h), rng));
    w.params.add("dec_out_b", Array({F}, 0.0));

    w.params.add("cb0", normal_init({K, d}, 0.3, rng));
    for (int v = 1; v < cfg.levels; ++v)
        w.params.add("cb" + std::to_string(v), normal_init({K, d}, 0.05, rng));
    return w;
}

namespace {

// Farthest-point selection: spreads K rows across the pool so that early
// assignments cover the latent cloud.
Array farthest_point_rows(const Array& pool, int K) {
    const int n = pool.dim(0), d = pool.dim(1);
    Array out({K, d}, 0.0);
    std::vector<double> min_d2(static_cast<size_t>(n), 0.0);
    int pick = 0;  // start from the row with the largest norm
    double best = -1.0;
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int k = 0; k < d; ++k) s += pool.at(i, k) * pool.at(i, k);
        if (s > best) {
            best = s;
            pick = i;
        }
    }
    for (int j = 0; j < K; ++j) {
        for (int k = 0; k < d; ++k) out.at(j, k) = pool.at(pick, k);
        if (j + 1 == K) break;
        int next = 0;
        double far = -1.0;
        for (int i = 0; i < n; ++i) {
            double d2 = 0.0;
            for (int k = 0; k < d; ++k) {
                const double diff = pool.at(i, k) - pool.at(pick, k);
                d2 += diff * diff;
            }
            if (j == 0 || d2 < min_d2[static_cast<size_t>(i)]) min_d2[static_cast<size_t>(i)] = d2;
            if (min_d2[static_cast<size_t>(i)] > far) {
                far = min_d2[static_cast<size_t>(i)];
                next = i;
            }
        }
        pick = next;
    }

    // Lloyd refinement concentrates codes where the pool mass is
    for (int iter = 0; iter < 8; ++iter) {
        std::vector<int> assign(static_cast<size_t>(n), 0);
        for (int i = 0; i < n; ++i) {
            int best_j = 0;
            double best_d = -1.0;
            for (int j = 0; j < K; ++j) {
                double d2 = 0.0;
                for (int k = 0; k < d; ++k) {
                    const double diff = pool.at(i, k) - out.at(j, k);
                    d2 += diff * diff;
                }
                if (best_d < 0.0 || d2 < best_d) {
                    best_d = d2;
                    best_j = j;
                }
            }
            assign[static_cast<size_t>(i)] = best_j;
        }
        Array sums({K, d}, 0.0);
        std::vector<int> counts(static_cast<size_t>(K), 0);
        for (int i = 0; i < n; ++i) {
            const int j = assign[static_cast<size_t>(i)];
            counts[static_cast<size_t>(j)]++;
            for (int k = 0; k < d; ++k) sums.at(j, k) += pool.at(i, k);
        }
        for (int j = 0; j < K; ++j) {
            if (counts[static_cast<size_t>(j)] == 0) continue;  // keep the old center
            for (int k = 0; k < d; ++k) out.at(j, k) = sums.at(j, k) / counts[static_cast<size_t>(j)];
        }
    }
    return out;
}

// Seed every codebook level from encoder latents (and their residuals) of a
// spread of dataset samples, so training starts with live codes.
void data_init_codebook(TokenizerWeights& w, const std::vector<SyntheticSample>& dataset) {
    const int K = w.cfg.codes, d = w.cfg.dim;
    const int want = std::min<int>(static_cast<int>(dataset.size()), 32);
    std::vector<Array> latents;
    long total_rows = 0;
    for (int i = 0; i < want; ++i) {
        const auto& s = dataset[static_cast<size_t>(i) * dataset.size() / want];
        latents.push_back(w.encode(s.features.frames));
        total_rows += latents.back().dim(0);
    }
    Array pool({static_cast<int>(total_rows), d}, 0.0);
    {
        int r = 0;
        for (const auto& z : latents)
            for (int i = 0; i < z.dim(0); ++i, ++r)
                for (int k = 0; k < d; ++k) pool.at(r, k) = z.at(i, k);
    }

    w.params.get("cb0").mutable_val() = farthest_point_rows(pool, K);
    Array residual = pool;
    for (int v = 1; v < w.cfg.levels; ++v) {
        auto [ids, e] =
            quantize(residual, w.params.get("cb" + std::to_string(v - 1)).val());
        for (long i = 0; i < residual.numel(); ++i) residual.at(i) -= e.at(i);
        w.params.get("cb" + std::to_string(v)).mutable_val() = farthest_point_rows(residual, K);
    }
}

}  // namespace

TrainCurve train_tokenizer(TokenizerWeights& w, const std::vector<SyntheticSample>& dataset,
                           const TokenizerTrainConfig& tc) {
    check(!dataset.empty(), "train_tokenizer: empty dataset");

    AdamW opt;
    opt.init(w.params);
    TrainCurve curve;
    curve.losses.reserve(static_cast<size_t>(tc.iterations));

    // The first quarter trains encoder/decoder on plain reconstruction; the
    // codebook is then seeded by k-means over the settled latent cloud and the
    // quantized objective takes over. Codes are never re-seeded afterwards.
    const int pretrain = tc.iterations / 4;
    const int V = w.cfg.levels;
    for (int it = 0; it < tc.iterations; ++it) {
        if (it == pretrain) data_init_codebook(w, dataset);
        const bool quantized = it >= pretrain;

        Rng batch_rng = Rng::substream(tc.seed, "tokenizer-batch", static_cast<uint64_t>(it));
        std::vector<ad::Var> losses;
        for (int b = 0; b < tc.batch; ++b) {
            const auto& s = dataset[static_cast<size_t>(
                batch_rng.uniform_int(0, static_cast<int>(dataset.size()) - 1))];
            ad::Var f = ad::constant(s.features.frames);
            ad::Var z = w.encode(f);

            ad::Var decoder_in = z;
            ad::Var vq_total;
            if (quantized) {
                // quantize against the current tables, routing gradients per the
                // stop-gradient structure of the VQ objective
                ad::Var r = z;
                Array e_sum(z.val().shape, 0.0);
                for (int v = 0; v < V; ++v) {
                    ad::Var table = w.params.get("cb" + std::to_string(v));
                    auto [ids, e_val] = quantize(r.val(), table.val());
                    ad::Var e = ad::rows(table, ids);
                    ad::Var term = vq_loss(r, e, w.cfg.beta);
                    vq_total = vq_total.valid() ? ad::add(vq_total, term) : term;
                    for (long i = 0; i < e_sum.numel(); ++i) e_sum.at(i) += e_val.at(i);
                    if (v + 1 < V) r = ad::sub(r, ad::stop_grad(e));
                }
                // straight-through: decode the quantized latent, copy gradients to z
                decoder_in = ad::straight_through(z, e_sum);
            } else {
                // keep the (untouched) codebook reachable so the optimizer state
                // stays aligned; contributes exactly zero
                ad::Var cb = w.params.get("cb0");
                ad::Var zero = ad::scale(ad::sum_all(cb), 0.0);
                for (int v = 1; v < V; ++v)
                    zero = ad::add(zero, ad::scale(ad::sum_all(w.params.get("cb" + std::to_string(v))), 0.0));
                vq_total = zero;
            }

            ad::Var out = w.decode(decoder_in);
            ad::Var rec = ad::mean_all(ad::square(ad::sub(out, f)));
            losses.push_back(vq_total.valid() ? ad::add(rec, vq_total) : rec);
        }
        ad::Var loss = losses[0];
        for (size_t i = 1; i < losses.size(); ++i) loss = ad::add(loss, losses[i]);
        loss = ad::scale(loss, 1.0 / tc.batch);

        const double lv = loss.val().at(0L);
        if (!std::isfinite(lv))
            fail("train_tokenizer: loss diverged (non-finite) at iteration " + std::to_string(it));
        curve.losses.push_back(lv);

        ad::backward(loss);
        opt.step(w.params, warmup_lr(it, tc.warmup, tc.peak_lr));
    }
    return curve;
}

}  // namespace mmc
