#include "mmc/autodiff.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <string>
#include <unordered_set>
#include <utility>

namespace mmc::ad {

namespace {

thread_local long g_next_id = 0;

Var make_node(const char* op, Array value, std::vector<NodePtr> parents,
              std::function<void(Node&)> backprop) {
    if (!value.all_finite()) fail(std::string("autodiff: non-finite value produced by op '") + op + "'");
    auto n = std::make_shared<Node>();
    n->id = g_next_id++;
    n->op = op;
    n->value = std::move(value);
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
    return Var(n);
}

void check_same_shape(const char* op, const Var& a, const Var& b) {
    if (!a.val().same_shape(b.val()))
        fail(std::string("autodiff: shape mismatch in '") + op + "': " + shape_str(a.shape()) +
             " vs " + shape_str(b.shape()));
}

long outer_size(const std::vector<int>& shape, int axis) {
    long n = 1;
    for (int i = 0; i < axis; ++i) n *= shape[static_cast<size_t>(i)];
    return n;
}

long inner_size(const std::vector<int>& shape, int axis) {
    long n = 1;
    for (int i = axis + 1; i < static_cast<int>(shape.size()); ++i) n *= shape[static_cast<size_t>(i)];
    return n;
}

}  // namespace

Var leaf(Array value) {
    if (!value.all_finite()) fail("autodiff: non-finite value in leaf");
    return make_node("leaf", std::move(value), {}, nullptr);
}

Var constant(Array value) { return leaf(std::move(value)); }

Var add(const Var& a, const Var& b) {
    check_same_shape("add", a, b);
    Array out = a.val();
    for (long i = 0; i < out.numel(); ++i) out.at(i) += b.val().at(i);
    return make_node("add", std::move(out), {a.node, b.node}, [](Node& self) {
        for (long i = 0; i < self.grad.numel(); ++i) {
            self.parents[0]->grad.at(i) += self.grad.at(i);
            self.parents[1]->grad.at(i) += self.grad.at(i);
        }
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape("sub", a, b);
    Array out = a.val();
    for (long i = 0; i < out.numel(); ++i) out.at(i) -= b.val().at(i);
    return make_node("sub", std::move(out), {a.node, b.node}, [](Node& self) {
        for (long i = 0; i < self.grad.numel(); ++i) {
            self.parents[0]->grad.at(i) += self.grad.at(i);
            self.parents[1]->grad.at(i) -= self.grad.at(i);
        }
    });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape("mul", a, b);
    Array out = a.val();
    for (long i = 0; i < out.numel(); ++i) out.at(i) *= b.val().at(i);
    return make_node("mul", std::move(out), {a.node, b.node}, [](Node& self) {
        const Array& av = self.parents[0]->value;
        const Array& bv = self.parents[1]->value;
        for (long i = 0; i < self.grad.numel(); ++i) {
            self.parents[0]->grad.at(i) += self.grad.at(i) * bv.at(i);
            self.parents[1]->grad.at(i) += self.grad.at(i) * av.at(i);
        }
    });
}

Var div(const Var& a, const Var& b) {
    check_same_shape("div", a, b);
    Array out = a.val();
    for (long i = 0; i < out.numel(); ++i) out.at(i) /= b.val().at(i);
    return make_node("div", std::move(out), {a.node, b.node}, [](Node& self) {
        const Array& av = self.parents[0]->value;
        const Array& bv = self.parents[1]->value;
        for (long i = 0; i < self.grad.numel(); ++i) {
            const double inv = 1.0 / bv.at(i);
            self.parents[0]->grad.at(i) += self.grad.at(i) * inv;
            self.parents[1]->grad.at(i) -= self.grad.at(i) * av.at(i) * inv * inv;
        }
    });
}

Var add_scalar(const Var& a, double c) {
    Array out = a.val();
    for (double& v : out.data) v += c;
    return make_node("add_scalar", std::move(out), {a.node}, [](Node& self) {
        for (long i = 0; i < self.grad.numel(); ++i) self.parents[0]->grad.at(i) += self.grad.at(i);
    });
}

Var scale(const Var& a, double c) {
    Array out = a.val();
    for (double& v : out.data) v *= c;
    return make_node("scale", std::move(out), {a.node}, [c](Node& self) {
        for (long i = 0; i < self.grad.numel(); ++i)
            self.parents[0]->grad.at(i) += c * self.grad.at(i);
    });
}

Var matmul(const Var& a, const Var& b) {
    if (a.val().ndim() != 2 || b.val().ndim() != 2 || a.val().dim(1) != b.val().dim(0))
        fail("autodiff: shape mismatch in 'matmul': " + shape_str(a.shape()) + " vs " +
             shape_str(b.shape()));
    const int m = a.val().dim(0), k = a.val().dim(1), n = b.val().dim(1);
    Array out({m, n}, 0.0);
    const double* A = a.val().data.data();
    const double* B = b.val().data.data();
    double* O = out.data.data();
    for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
            const double av = A[i * k + p];
            const double* brow = B + p * n;
            double* orow = O + i * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return make_node("matmul", std::move(out), {a.node, b.node}, [m, k, n](Node& self) {
        const double* G = self.grad.data.data();
        const double* A = self.parents[0]->value.data.data();
        const double* B = self.parents[1]->value.data.data();
        double* GA = self.parents[0]->grad.data.data();
        double* GB = self.parents[1]->grad.data.data();
        // GA += G * B^T
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
                const double g = G[i * n + j];
                if (g == 0.0) continue;
                const double* brow = B;
                for (int p = 0; p < k; ++p) GA[i * k + p] += g * brow[p * n + j];
            }
        // GB += A^T * G
        for (int i = 0; i < m; ++i)
            for (int p = 0; p < k; ++p) {
                const double av = A[i * k + p];
                if (av == 0.0) continue;
                const double* grow = G + i * n;
                double* gbrow = GB + p * n;
                for (int j = 0; j < n; ++j) gbrow[j] += av * grow[j];
            }
    });
}

Var transpose(const Var& a) {
    check(a.val().ndim() == 2, "autodiff: transpose expects 2-D, got " + shape_str(a.shape()));
    const int m = a.val().dim(0), n = a.val().dim(1);
    Array out({n, m}, 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(j, i) = a.val().at(i, j);
    return make_node("transpose", std::move(out), {a.node}, [m, n](Node& self) {
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) self.parents[0]->grad.at(i, j) += self.grad.at(j, i);
    });
}

Var reshape(const Var& a, std::vector<int> shape) {
    Array out = Array::from(shape, a.val().data);
    check(out.numel() == a.val().numel(), "autodiff: reshape " + shape_str(a.shape()) + " -> " +
                                              shape_str(shape) + " changes element count");
    return make_node("reshape", std::move(out), {a.node}, [](Node& self) {
        for (long i = 0; i < self.grad.numel(); ++i) self.parents[0]->grad.at(i) += self.grad.at(i);
    });
}

Var concat(const std::vector<Var>& parts, int axis) {
    check(!parts.empty(), "autodiff: concat of zero parts");
    const auto& first = parts[0].val().shape;
    check(axis >= 0 && axis < static_cast<int>(first.size()), "autodiff: concat axis out of range");
    std::vector<int> out_shape = first;
    int total = 0;
    for (const Var& p : parts) {
        const auto& s = p.val().shape;
        check(s.size() == first.size(), "autodiff: concat rank mismatch");
        for (size_t i = 0; i < s.size(); ++i)
            if (static_cast<int>(i) != axis)
                check(s[i] == first[i], "autodiff: shape mismatch in 'concat': " + shape_str(s) +
                                            " vs " + shape_str(first));
        total += s[static_cast<size_t>(axis)];
    }
    out_shape[static_cast<size_t>(axis)] = total;

    const long outer = outer_size(first, axis);
    const long inner = inner_size(first, axis);
    Array out(out_shape, 0.0);
    std::vector<NodePtr> parents;
    std::vector<int> widths;
    for (const Var& p : parts) {
        parents.push_back(p.node);
        widths.push_back(p.val().shape[static_cast<size_t>(axis)]);
    }
    {
        double* O = out.data.data();
        for (long o = 0; o < outer; ++o) {
            long off = o * total * inner;
            for (size_t pi = 0; pi < parts.size(); ++pi) {
                const double* P = parts[pi].val().data.data();
                const long w = widths[pi] * inner;
                std::memcpy(O + off, P + o * w, static_cast<size_t>(w) * sizeof(double));
                off += w;
            }
        }
    }
    return make_node("concat", std::move(out), std::move(parents),
                     [outer, inner, total, widths](Node& self) {
                         const double* G = self.grad.data.data();
                         for (long o = 0; o < outer; ++o) {
                             long off = o * total * inner;
                             for (size_t pi = 0; pi < self.parents.size(); ++pi) {
                                 double* PG = self.parents[pi]->grad.data.data();
                                 const long w = widths[pi] * inner;
                                 for (long i = 0; i < w; ++i) PG[o * w + i] += G[off + i];
                                 off += w;
                             }
                         }
                     });
}

Var slice(const Var& a, int axis, int start, int len) {
    const auto& s = a.val().shape;
    check(axis >= 0 && axis < static_cast<int>(s.size()), "autodiff: slice axis out of range");
    const int d = s[static_cast<size_t>(axis)];
    check(start >= 0 && len >= 0 && start + len <= d,
          "autodiff: slice [" + std::to_string(start) + "," + std::to_string(start + len) +
              ") out of range for axis size " + std::to_string(d));
    std::vector<int> out_shape = s;
    out_shape[static_cast<size_t>(axis)] = len;
    const long outer = outer_size(s, axis);
    const long inner = inner_size(s, axis);
    Array out(out_shape, 0.0);
    {
        const double* A = a.val().data.data();
        double* O = out.data.data();
        for (long o = 0; o < outer; ++o)
            std::memcpy(O + o * len * inner, A + (o * d + start) * inner,
                        static_cast<size_t>(len) * inner * sizeof(double));
    }
    return make_node("slice", std::move(out), {a.node}, [outer, inner, d, start, len](Node& self) {
        const double* G = self.grad.data.data();
        double* PG = self.parents[0]->grad.data.data();
        for (long o = 0; o < outer; ++o)
            for (long i = 0; i < len * inner; ++i) PG[(o * d + start) * inner + i] += G[o * len * inner + i];
    });
}

Var rows(const Var& a, const std::vector<int>& idx) {
    check(a.val().ndim() >= 1, "autodiff: rows expects rank >= 1");
    const int n = a.val().dim(0);
    const long w = a.val().numel() / n;
    for (int i : idx)
        check(i >= 0 && i < n, "autodiff: gather index " + std::to_string(i) +
                                   " out of range [0," + std::to_string(n) + ")");
    std::vector<int> out_shape = a.val().shape;
    out_shape[0] = static_cast<int>(idx.size());
    Array out(out_shape, 0.0);
    for (size_t r = 0; r < idx.size(); ++r)
        std::memcpy(out.data.data() + r * w, a.val().data.data() + static_cast<size_t>(idx[r]) * w,
                    static_cast<size_t>(w) * sizeof(double));
    return make_node("rows", std::move(out), {a.node}, [idx, w](Node& self) {
        double* PG = self.parents[0]->grad.data.data();
        const double* G = self.grad.data.data();
        for (size_t r = 0; r < idx.size(); ++r)
            for (long i = 0; i < w; ++i) PG[static_cast<size_t>(idx[r]) * w + i] += G[r * w + i];
    });
}

Var take_last(const Var& a, const std::vector<int>& idx) {
    check(a.val().ndim() == 2, "autodiff: take_last expects 2-D, got " + shape_str(a.shape()));
    const int n = a.val().dim(0), m = a.val().dim(1);
    check(static_cast<int>(idx.size()) == n, "autodiff: take_last index count mismatch");
    for (int i : idx)
        check(i >= 0 && i < m, "autodiff: gather index " + std::to_string(i) +
                                   " out of range [0," + std::to_string(m) + ")");
    Array out({n}, 0.0);
    for (int r = 0; r < n; ++r) out.at(r) = a.val().at(r, idx[static_cast<size_t>(r)]);
    return make_node("take_last", std::move(out), {a.node}, [idx, m](Node& self) {
        for (long r = 0; r < self.grad.numel(); ++r)
            self.parents[0]->grad.at(static_cast<int>(r), idx[static_cast<size_t>(r)]) +=
                self.grad.at(r);
        (void)m;
    });
}

Var broadcast_row(const Var& v, int n) {
    const long d = v.val().numel();
    check(v.val().ndim() == 1 || (v.val().ndim() == 2 && v.val().dim(0) == 1),
          "autodiff: broadcast_row expects (d) or (1,d), got " + shape_str(v.shape()));
    Array out({n, static_cast<int>(d)}, 0.0);
    for (int r = 0; r < n; ++r)
        std::memcpy(out.data.data() + static_cast<size_t>(r) * d, v.val().data.data(),
                    static_cast<size_t>(d) * sizeof(double));
    return make_node("broadcast_row", std::move(out), {v.node}, [n, d](Node& self) {
        for (int r = 0; r < n; ++r)
            for (long j = 0; j < d; ++j)
                self.parents[0]->grad.at(j) += self.grad.at(static_cast<long>(r) * d + j);
    });
}

Var sum_all(const Var& a) {
    double s = 0.0;
    for (double v : a.val().data) s += v;
    return make_node("sum_all", Array::scalar(s), {a.node}, [](Node& self) {
        const double g = self.grad.at(0L);
        for (long i = 0; i < self.parents[0]->grad.numel(); ++i) self.parents[0]->grad.at(i) += g;
    });
}

Var mean_all(const Var& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.val().numel())); }

Var sum_axis(const Var& a, int axis) {
    const auto& s = a.val().shape;
    check(axis >= 0 && axis < static_cast<int>(s.size()), "autodiff: sum_axis out of range");
    const int d = s[static_cast<size_t>(axis)];
    const long outer = outer_size(s, axis);
    const long inner = inner_size(s, axis);
    std::vector<int> out_shape;
    for (int i = 0; i < static_cast<int>(s.size()); ++i)
        if (i != axis) out_shape.push_back(s[static_cast<size_t>(i)]);
    if (out_shape.empty()) out_shape.push_back(1);
    Array out(out_shape, 0.0);
    for (long o = 0; o < outer; ++o)
        for (int k = 0; k < d; ++k)
            for (long i = 0; i < inner; ++i)
                out.at(o * inner + i) += a.val().at((o * d + k) * inner + i);
    return make_node("sum_axis", std::move(out), {a.node}, [outer, inner, d](Node& self) {
        for (long o = 0; o < outer; ++o)
            for (int k = 0; k < d; ++k)
                for (long i = 0; i < inner; ++i)
                    self.parents[0]->grad.at((o * d + k) * inner + i) +=
                        self.grad.at(o * inner + i);
    });
}

Var mean_axis(const Var& a, int axis) {
    return scale(sum_axis(a, axis), 1.0 / a.val().dim(axis));
}

namespace {

template <typename F, typename DF>
Var unary(const char* op, const Var& a, F f, DF df) {
    Array out = a.val();
    for (double& v : out.data) v = f(v);
    return make_node(op, std::move(out), {a.node}, [df](Node& self) {
        const Array& x = self.parents[0]->value;
        const Array& y = self.value;
        for (long i = 0; i < self.grad.numel(); ++i)
            self.parents[0]->grad.at(i) += self.grad.at(i) * df(x.at(i), y.at(i));
    });
}

}  // namespace

Var exp_(const Var& a) {
    return unary("exp", a, [](double x) { return std::exp(x); },
                 [](double, double y) { return y; });
}

Var log_(const Var& a) {
    return unary("log", a, [](double x) { return std::log(x); },
                 [](double x, double) { return 1.0 / x; });
}

Var sqrt_(const Var& a) {
    return unary("sqrt", a, [](double x) { return std::sqrt(x); },
                 [](double, double y) { return 0.5 / y; });
}

Var square(const Var& a) {
    return unary("square", a, [](double x) { return x * x; },
                 [](double x, double) { return 2.0 * x; });
}

Var abs_smooth(const Var& a, double eps) {
    return unary("abs_smooth", a, [eps](double x) { return std::sqrt(x * x + eps); },
                 [](double x, double y) { return x / y; });
}

Var relu(const Var& a) {
    return unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
                 [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sin_(const Var& a) {
    return unary("sin", a, [](double x) { return std::sin(x); },
                 [](double x, double) { return std::cos(x); });
}

Var cos_(const Var& a) {
    return unary("cos", a, [](double x) { return std::cos(x); },
                 [](double x, double) { return -std::sin(x); });
}

Var min_const(const Var& a, double c) {
    return unary("min_const", a, [c](double x) { return x < c ? x : c; },
                 [c](double x, double) { return x < c ? 1.0 : 0.0; });
}

Var softmax_last(const Var& a) {
    const auto& s = a.val().shape;
    check(!s.empty(), "autodiff: softmax_last on empty shape");
    const int d = s.back();
    const long rows_n = a.val().numel() / d;
    Array out = a.val();
    for (long r = 0; r < rows_n; ++r) {
        double* row = out.data.data() + r * d;
        double mx = row[0];
        for (int j = 1; j < d; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (int j = 0; j < d; ++j) {
            row[j] = std::exp(row[j] - mx);
            z += row[j];
        }
        for (int j = 0; j < d; ++j) row[j] /= z;
    }
    return make_node("softmax_last", std::move(out), {a.node}, [rows_n, d](Node& self) {
        for (long r = 0; r < rows_n; ++r) {
            const double* p = self.value.data.data() + r * d;
            const double* g = self.grad.data.data() + r * d;
            double dot = 0.0;
            for (int j = 0; j < d; ++j) dot += g[j] * p[j];
            double* pg = self.parents[0]->grad.data.data() + r * d;
            for (int j = 0; j < d; ++j) pg[j] += (g[j] - dot) * p[j];
        }
    });
}

Var logsumexp_last(const Var& a) {
    const auto& s = a.val().shape;
    check(s.size() >= 1, "autodiff: logsumexp_last on empty shape");
    const int d = s.back();
    const long rows_n = a.val().numel() / d;
    std::vector<int> out_shape(s.begin(), s.end() - 1);
    if (out_shape.empty()) out_shape.push_back(1);
    Array out(out_shape, 0.0);
    for (long r = 0; r < rows_n; ++r) {
        const double* row = a.val().data.data() + r * d;
        double mx = row[0];
        for (int j = 1; j < d; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (int j = 0; j < d; ++j) z += std::exp(row[j] - mx);
        out.at(r) = mx + std::log(z);
    }
    return make_node("logsumexp_last", std::move(out), {a.node}, [rows_n, d](Node& self) {
        for (long r = 0; r < rows_n; ++r) {
            const double* row = self.parents[0]->value.data.data() + r * d;
            const double lse = self.value.at(r);
            const double g = self.grad.at(r);
            double* pg = self.parents[0]->grad.data.data() + r * d;
            for (int j = 0; j < d; ++j) pg[j] += g * std::exp(row[j] - lse);
        }
    });
}

Var layernorm_last(const Var& a, double eps) {
    const auto& s = a.val().shape;
    const int d = s.back();
    const long rows_n = a.val().numel() / d;
    Array out = a.val();
    std::vector<double> inv_std(static_cast<size_t>(rows_n));
    for (long r = 0; r < rows_n; ++r) {
        double* row = out.data.data() + r * d;
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += row[j];
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            const double c = row[j] - mean;
            var += c * c;
        }
        var /= d;
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<size_t>(r)] = inv;
        for (int j = 0; j < d; ++j) row[j] = (row[j] - mean) * inv;
    }
    return make_node("layernorm_last", std::move(out), {a.node},
                     [rows_n, d, inv_std](Node& self) {
                         for (long r = 0; r < rows_n; ++r) {
                             const double* xhat = self.value.data.data() + r * d;
                             const double* g = self.grad.data.data() + r * d;
                             const double inv = inv_std[static_cast<size_t>(r)];
                             double g_mean = 0.0, gx_mean = 0.0;
                             for (int j = 0; j < d; ++j) {
                                 g_mean += g[j];
                                 gx_mean += g[j] * xhat[j];
                             }
                             g_mean /= d;
                             gx_mean /= d;
                             double* pg = self.parents[0]->grad.data.data() + r * d;
                             for (int j = 0; j < d; ++j)
                                 pg[j] += inv * (g[j] - g_mean - xhat[j] * gx_mean);
                         }
                     });
}

Var norm_last(const Var& a, double eps) {
    const auto& s = a.val().shape;
    const int d = s.back();
    const long rows_n = a.val().numel() / d;
    std::vector<int> out_shape(s.begin(), s.end() - 1);
    if (out_shape.empty()) out_shape.push_back(1);
    Array out(out_shape, 0.0);
    for (long r = 0; r < rows_n; ++r) {
        const double* row = a.val().data.data() + r * d;
        double sq = 0.0;
        for (int j = 0; j < d; ++j) sq += row[j] * row[j];
        out.at(r) = std::sqrt(sq + eps);
    }
    return make_node("norm_last", std::move(out), {a.node}, [rows_n, d](Node& self) {
        for (long r = 0; r < rows_n; ++r) {
            const double* row = self.parents[0]->value.data.data() + r * d;
            const double y = self.value.at(r);
            const double g = self.grad.at(r);
            double* pg = self.parents[0]->grad.data.data() + r * d;
            for (int j = 0; j < d; ++j) pg[j] += g * row[j] / y;
        }
    });
}

Var cumsum_time(const Var& a) {
    const auto& s = a.val().shape;
    check(!s.empty(), "autodiff: cumsum_time on empty shape");
    const int t = s[0];
    const long w = a.val().numel() / t;
    Array out = a.val();
    for (int n = 1; n < t; ++n)
        for (long i = 0; i < w; ++i) out.at(n * w + i) += out.at((n - 1) * w + i);
    return make_node("cumsum_time", std::move(out), {a.node}, [t, w](Node& self) {
        // reverse cumulative sum of the incoming gradient
        std::vector<double> acc(static_cast<size_t>(w), 0.0);
        for (int n = t - 1; n >= 0; --n)
            for (long i = 0; i < w; ++i) {
                acc[static_cast<size_t>(i)] += self.grad.at(n * w + i);
                self.parents[0]->grad.at(n * w + i) += acc[static_cast<size_t>(i)];
            }
    });
}

Var stop_grad(const Var& a) {
    return make_node("stop_grad", a.val(), {a.node}, nullptr);
}

Var straight_through(const Var& soft, Array hard_value) {
    check(soft.val().same_shape(hard_value),
          "autodiff: shape mismatch in 'straight_through': " + shape_str(soft.shape()) + " vs " +
              shape_str(hard_value.shape));
    return make_node("straight_through", std::move(hard_value), {soft.node}, [](Node& self) {
        for (long i = 0; i < self.grad.numel(); ++i) self.parents[0]->grad.at(i) += self.grad.at(i);
    });
}

void backward(const Var& loss) {
    check(loss.valid(), "autodiff: backward on empty Var");
    check(loss.val().numel() == 1,
          "autodiff: backward requires a scalar loss, got " + shape_str(loss.shape()));

    // iterative post-order DFS; parents visited in declaration order
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(loss.node.get(), 0);
    seen.insert(loss.node.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* n : order) n->grad = Array::zeros(n->value.shape);
    loss.node->grad.at(0L) = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop) n->backprop(*n);
    }
}

double gradcheck(const std::function<Var(const Var&)>& f, const Array& x, double h) {
    check(h > 0.0, "gradcheck: h must be positive");
    Var vx = leaf(x);
    Var loss = f(vx);
    check(loss.val().numel() == 1, "gradcheck: f must return a scalar");
    check(loss.val().all_finite(), "gradcheck: f(x) is not finite");
    backward(loss);
    const Array analytic = vx.grad();

    double max_err = 0.0;
    for (long i = 0; i < x.numel(); ++i) {
        Array xp = x, xm = x;
        xp.at(i) += h;
        xm.at(i) -= h;
        const double fp = f(leaf(xp)).val().at(0L);
        const double fm = f(leaf(xm)).val().at(0L);
        const double fd = (fp - fm) / (2.0 * h);
        const double a = analytic.at(i);
        const double err = std::abs(a - fd) / std::max(1.0, std::abs(a));
        max_err = std::max(max_err, err);
    }
    return max_err;
}

}  // namespace mmc::ad
