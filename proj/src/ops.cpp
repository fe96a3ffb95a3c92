#include "deepbayes/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "deepbayes/errors.hpp"

namespace deepbayes {

namespace {

constexpr double kNegHalfLog2Pi = -0.9189385332046727;  // -0.5 ln(2 pi)

struct TapeCtx {
    GradientTape* tape = nullptr;
    int node(const Tensor& t) const { return tape ? tape->node_of(t) : -1; }
    bool recording(std::initializer_list<int> nodes) const {
        if (!tape) return false;
        for (int n : nodes) {
            if (n >= 0) return true;
        }
        return false;
    }
};

TapeCtx ctx() {
    GradientTape* t = GradientTape::active();
    if (t != nullptr && t->consumed()) t = nullptr;
    return TapeCtx{t};
}

// Right-aligned broadcast plan for a binary elementwise op.
struct BroadcastPlan {
    std::vector<std::size_t> out_shape;
    std::vector<std::size_t> stride_a, stride_b;
};

BroadcastPlan plan_broadcast(const char* op, const Tensor& a,
                             const Tensor& b) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    const std::size_t rank = std::max(sa.size(), sb.size());
    BroadcastPlan plan;
    plan.out_shape.assign(rank, 1);
    for (std::size_t i = 0; i < rank; ++i) {
        const std::size_t da =
            i < sa.size() ? sa[sa.size() - 1 - i] : std::size_t{1};
        const std::size_t db =
            i < sb.size() ? sb[sb.size() - 1 - i] : std::size_t{1};
        if (da != db && da != 1 && db != 1) {
            throw ShapeError(std::string(op) + ": shapes " +
                             shape_to_string(sa) + " and " +
                             shape_to_string(sb) + " do not broadcast");
        }
        plan.out_shape[rank - 1 - i] = std::max(da, db);
    }
    auto strides_for = [&](const std::vector<std::size_t>& s) {
        std::vector<std::size_t> native(s.size());
        std::size_t acc = 1;
        for (std::size_t i = s.size(); i-- > 0;) {
            native[i] = acc;
            acc *= s[i];
        }
        std::vector<std::size_t> out(rank, 0);
        for (std::size_t i = 0; i < rank; ++i) {
            if (i < s.size()) {
                const std::size_t d = s[s.size() - 1 - i];
                out[rank - 1 - i] = (d == 1) ? 0 : native[s.size() - 1 - i];
            }
        }
        return out;
    };
    plan.stride_a = strides_for(sa);
    plan.stride_b = strides_for(sb);
    return plan;
}

template <typename F>
Tensor broadcast_apply(const char* op, const Tensor& a, const Tensor& b,
                       F&& f) {
    if (a.shape() == b.shape()) {
        Tensor out(a.shape());
        const double* pa = a.data();
        const double* pb = b.data();
        double* po = out.data();
        for (std::size_t i = 0; i < out.size(); ++i) po[i] = f(pa[i], pb[i]);
        return out;
    }
    // Fast paths only when the other operand's shape is the output shape.
    if (b.size() == 1 && b.rank() <= a.rank()) {
        Tensor out(a.shape());
        const double* pa = a.data();
        const double vb = b.at(0);
        double* po = out.data();
        for (std::size_t i = 0; i < out.size(); ++i) po[i] = f(pa[i], vb);
        return out;
    }
    if (a.size() == 1 && a.rank() <= b.rank()) {
        Tensor out(b.shape());
        const double va = a.at(0);
        const double* pb = b.data();
        double* po = out.data();
        for (std::size_t i = 0; i < out.size(); ++i) po[i] = f(va, pb[i]);
        return out;
    }
    const BroadcastPlan plan = plan_broadcast(op, a, b);
    Tensor out(plan.out_shape);
    const std::size_t rank = plan.out_shape.size();
    std::vector<std::size_t> idx(rank, 0);
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    std::size_t oa = 0, ob = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        po[i] = f(pa[oa], pb[ob]);
        for (std::size_t ax = rank; ax-- > 0;) {
            ++idx[ax];
            oa += plan.stride_a[ax];
            ob += plan.stride_b[ax];
            if (idx[ax] < plan.out_shape[ax]) break;
            oa -= plan.stride_a[ax] * plan.out_shape[ax];
            ob -= plan.stride_b[ax] * plan.out_shape[ax];
            idx[ax] = 0;
        }
    }
    return out;
}

// Sum g over the axes that were broadcast to reach g's shape from
// `target`; inverse of broadcasting for gradients.
Tensor reduce_to_shape(const Tensor& g, const std::vector<std::size_t>& target) {
    if (g.shape() == target) return g;
    const std::size_t rank = g.rank();
    std::vector<std::size_t> native(target.size());
    std::size_t acc = 1;
    for (std::size_t i = target.size(); i-- > 0;) {
        native[i] = acc;
        acc *= target[i];
    }
    std::vector<std::size_t> stride(rank, 0);
    for (std::size_t i = 0; i < rank; ++i) {
        if (i < target.size()) {
            const std::size_t d = target[target.size() - 1 - i];
            stride[rank - 1 - i] = (d == 1) ? 0 : native[target.size() - 1 - i];
        }
    }
    Tensor out = Tensor::zeros(target);
    std::vector<std::size_t> idx(rank, 0);
    const double* pg = g.data();
    double* po = out.data();
    std::size_t off = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        po[off] += pg[i];
        for (std::size_t ax = rank; ax-- > 0;) {
            ++idx[ax];
            off += stride[ax];
            if (idx[ax] < g.dim(ax)) break;
            off -= stride[ax] * g.dim(ax);
            idx[ax] = 0;
        }
    }
    return out;
}

template <typename FwdF, typename GradA, typename GradB>
Tensor binary_op(const char* op, const Tensor& a, const Tensor& b, FwdF&& f,
                 GradA&& grad_a, GradB&& grad_b) {
    Tensor out = broadcast_apply(op, a, b, f);
    const TapeCtx tc = ctx();
    const int na = tc.node(a), nb = tc.node(b);
    if (tc.recording({na, nb})) {
        tc.tape->record(out, {na, nb},
                        [a, b, grad_a, grad_b](const Tensor& gout,
                                               GradSink& sink) {
                            sink.add(0, reduce_to_shape(grad_a(gout, a, b),
                                                        a.shape()));
                            sink.add(1, reduce_to_shape(grad_b(gout, a, b),
                                                        b.shape()));
                        });
    }
    return out;
}

template <typename FwdF, typename GradF>
Tensor unary_op(const Tensor& t, FwdF&& f, GradF&& df) {
    Tensor out(t.shape());
    const double* p = t.data();
    double* po = out.data();
    for (std::size_t i = 0; i < t.size(); ++i) po[i] = f(p[i]);
    const TapeCtx tc = ctx();
    const int n = tc.node(t);
    if (tc.recording({n})) {
        tc.tape->record(out, {n}, [t, out, df](const Tensor& gout,
                                               GradSink& sink) {
            Tensor g(t.shape());
            const double* px = t.data();
            const double* py = out.data();
            const double* pg = gout.data();
            double* pd = g.data();
            for (std::size_t i = 0; i < g.size(); ++i) {
                pd[i] = pg[i] * df(px[i], py[i]);
            }
            sink.add(0, g);
        });
    }
    return out;
}

std::size_t last_dim(const char* op, const Tensor& t) {
    if (t.rank() == 0) {
        throw ShapeError(std::string(op) + ": needs at least one axis, got " +
                         t.shape_str());
    }
    return t.dim(t.rank() - 1);
}

std::vector<std::size_t> drop_last(const std::vector<std::size_t>& shape) {
    return std::vector<std::size_t>(shape.begin(), shape.end() - 1);
}

}  // namespace

// ---------------------------------------------------------------- binary

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        "add", a, b, [](double x, double y) { return x + y; },
        [](const Tensor& g, const Tensor&, const Tensor&) { return g; },
        [](const Tensor& g, const Tensor&, const Tensor&) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](const Tensor& g, const Tensor&, const Tensor&) { return g; },
        [](const Tensor& g, const Tensor&, const Tensor&) {
            return broadcast_apply("sub", g, Tensor::scalar(-1.0),
                                   [](double x, double y) { return x * y; });
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](const Tensor& g, const Tensor&, const Tensor& bb) {
            return broadcast_apply("mul", g, bb,
                                   [](double x, double y) { return x * y; });
        },
        [](const Tensor& g, const Tensor& aa, const Tensor&) {
            return broadcast_apply("mul", g, aa,
                                   [](double x, double y) { return x * y; });
        });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op(
        "div", a, b, [](double x, double y) { return x / y; },
        [](const Tensor& g, const Tensor&, const Tensor& bb) {
            return broadcast_apply("div", g, bb,
                                   [](double x, double y) { return x / y; });
        },
        [](const Tensor& g, const Tensor& aa, const Tensor& bb) {
            Tensor num = broadcast_apply(
                "div", g, aa, [](double x, double y) { return x * y; });
            return broadcast_apply("div", num, bb, [](double x, double y) {
                return -x / (y * y);
            });
        });
}

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
Tensor operator+(const Tensor& a, double b) { return add(a, Tensor::scalar(b)); }
Tensor operator-(const Tensor& a, double b) { return sub(a, Tensor::scalar(b)); }
Tensor operator*(const Tensor& a, double b) { return mul(a, Tensor::scalar(b)); }
Tensor operator/(const Tensor& a, double b) { return div(a, Tensor::scalar(b)); }
Tensor operator+(double a, const Tensor& b) { return add(Tensor::scalar(a), b); }
Tensor operator-(double a, const Tensor& b) { return sub(Tensor::scalar(a), b); }
Tensor operator*(double a, const Tensor& b) { return mul(Tensor::scalar(a), b); }
Tensor operator-(const Tensor& a) { return mul(a, Tensor::scalar(-1.0)); }

// ----------------------------------------------------------------- unary

Tensor relu(const Tensor& t) {
    return unary_op(
        t, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& t) {
    return unary_op(
        t, [](double x) { return std::exp(x); },
        [](double, double y) { return y; });
}

Tensor log(const Tensor& t) {
    return unary_op(
        t, [](double x) { return std::log(x); },
        [](double x, double) { return 1.0 / x; });
}

Tensor tanh(const Tensor& t) {
    return unary_op(
        t, [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor sqrt(const Tensor& t) {
    return unary_op(
        t, [](double x) { return std::sqrt(x); },
        [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Tensor abs(const Tensor& t) {
    return unary_op(
        t, [](double x) { return std::abs(x); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& t) {
    return unary_op(
        t, [](double x) { return x * x; },
        [](double x, double) { return 2.0 * x; });
}

Tensor sign(const Tensor& t) {
    return unary_op(
        t, [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); },
        [](double, double) { return 0.0; });
}

Tensor clip(const Tensor& t, double lo, double hi) {
    if (!(lo <= hi)) throw NumericError("clip: lo must not exceed hi");
    return unary_op(
        t,
        [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
        [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------- matmul

namespace {

Tensor mm_nn(const Tensor& a, const Tensor& b) {
    const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
    Tensor out({n, m});
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t l = 0; l < k; ++l) {
            const double av = pa[i * k + l];
            if (av == 0.0) continue;
            const double* brow = pb + l * m;
            double* orow = po + i * m;
            for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

// g [n,m] x b [k,m] -> [n,k]  (g @ b^T)
Tensor mm_nt(const Tensor& g, const Tensor& b) {
    const std::size_t n = g.dim(0), m = g.dim(1), k = b.dim(0);
    Tensor out({n, k});
    const double* pg = g.data();
    const double* pb = b.data();
    double* po = out.data();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t l = 0; l < k; ++l) {
            const double* grow = pg + i * m;
            const double* brow = pb + l * m;
            double acc = 0.0;
            for (std::size_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
            po[i * k + l] = acc;
        }
    }
    return out;
}

// a [n,k] x g [n,m] -> [k,m]  (a^T @ g)
Tensor mm_tn(const Tensor& a, const Tensor& g) {
    const std::size_t n = a.dim(0), k = a.dim(1), m = g.dim(1);
    Tensor out({k, m});
    const double* pa = a.data();
    const double* pg = g.data();
    double* po = out.data();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t l = 0; l < k; ++l) {
            const double av = pa[i * k + l];
            if (av == 0.0) continue;
            const double* grow = pg + i * m;
            double* orow = po + l * m;
            for (std::size_t j = 0; j < m; ++j) orow[j] += av * grow[j];
        }
    }
    return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: incompatible shapes " + a.shape_str() +
                         " and " + b.shape_str());
    }
    Tensor out = mm_nn(a, b);
    const TapeCtx tc = ctx();
    const int na = tc.node(a), nb = tc.node(b);
    if (tc.recording({na, nb})) {
        tc.tape->record(out, {na, nb},
                        [a, b](const Tensor& gout, GradSink& sink) {
                            sink.add(0, mm_nt(gout, b));
                            sink.add(1, mm_tn(a, gout));
                        });
    }
    return out;
}

// ------------------------------------------------------------ reductions

Tensor sum(const Tensor& t) {
    double acc = 0.0;
    const double* p = t.data();
    for (std::size_t i = 0; i < t.size(); ++i) acc += p[i];
    Tensor out = Tensor::scalar(acc);
    const TapeCtx tc = ctx();
    const int n = tc.node(t);
    if (tc.recording({n})) {
        tc.tape->record(out, {n}, [t](const Tensor& gout, GradSink& sink) {
            sink.add(0, Tensor::full(t.shape(), gout.at(0)));
        });
    }
    return out;
}

Tensor mean(const Tensor& t) {
    if (t.size() == 0) throw ShapeError("mean: empty tensor");
    const double inv = 1.0 / static_cast<double>(t.size());
    double acc = 0.0;
    const double* p = t.data();
    for (std::size_t i = 0; i < t.size(); ++i) acc += p[i];
    Tensor out = Tensor::scalar(acc * inv);
    const TapeCtx tc = ctx();
    const int n = tc.node(t);
    if (tc.recording({n})) {
        tc.tape->record(out, {n}, [t, inv](const Tensor& gout, GradSink& sink) {
            sink.add(0, Tensor::full(t.shape(), gout.at(0) * inv));
        });
    }
    return out;
}

Tensor sum_last(const Tensor& t) {
    const std::size_t m = last_dim("sum_last", t);
    const std::size_t rows = t.size() / std::max<std::size_t>(m, 1);
    Tensor out(drop_last(t.shape()));
    const double* p = t.data();
    double* po = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t j = 0; j < m; ++j) acc += p[r * m + j];
        po[r] = acc;
    }
    const TapeCtx tc = ctx();
    const int n = tc.node(t);
    if (tc.recording({n})) {
        tc.tape->record(out, {n}, [t, rows, m](const Tensor& gout,
                                               GradSink& sink) {
            Tensor g(t.shape());
            const double* pg = gout.data();
            double* pd = g.data();
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t j = 0; j < m; ++j) pd[r * m + j] = pg[r];
            }
            sink.add(0, g);
        });
    }
    return out;
}

Tensor max_last(const Tensor& t) {
    const std::size_t m = last_dim("max_last", t);
    if (m == 0) throw ShapeError("max_last: empty last axis");
    const std::size_t rows = t.size() / m;
    Tensor out(drop_last(t.shape()));
    std::vector<std::size_t> arg(rows, 0);
    const double* p = t.data();
    double* po = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < m; ++j) {
            if (p[r * m + j] > p[r * m + best]) best = j;
        }
        arg[r] = best;
        po[r] = p[r * m + best];
    }
    const TapeCtx tc = ctx();
    const int n = tc.node(t);
    if (tc.recording({n})) {
        tc.tape->record(out, {n}, [t, arg, m](const Tensor& gout,
                                              GradSink& sink) {
            Tensor g = Tensor::zeros(t.shape());
            const double* pg = gout.data();
            double* pd = g.data();
            for (std::size_t r = 0; r < arg.size(); ++r) {
                pd[r * m + arg[r]] = pg[r];
            }
            sink.add(0, g);
        });
    }
    return out;
}

Tensor log_sum_exp(const Tensor& t) {
    const std::size_t m = last_dim("log_sum_exp", t);
    if (m == 0) throw ShapeError("log_sum_exp: empty last axis");
    const std::size_t rows = t.size() / m;
    Tensor out(drop_last(t.shape()));
    const double* p = t.data();
    double* po = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = p + r * m;
        double mx = row[0];
        for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
        if (!std::isfinite(mx)) {
            po[r] = mx;  // all -inf stays -inf; inf propagates
            continue;
        }
        double acc = 0.0;
        for (std::size_t j = 0; j < m; ++j) acc += std::exp(row[j] - mx);
        po[r] = mx + std::log(acc);
    }
    const TapeCtx tc = ctx();
    const int n = tc.node(t);
    if (tc.recording({n})) {
        tc.tape->record(out, {n}, [t, out, rows, m](const Tensor& gout,
                                                    GradSink& sink) {
            // d lse / d x_j = softmax(x)_j
            Tensor g(t.shape());
            const double* px = t.data();
            const double* py = out.data();
            const double* pg = gout.data();
            double* pd = g.data();
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t j = 0; j < m; ++j) {
                    pd[r * m + j] =
                        std::isfinite(py[r])
                            ? pg[r] * std::exp(px[r * m + j] - py[r])
                            : 0.0;
                }
            }
            sink.add(0, g);
        });
    }
    return out;
}

Tensor softmax(const Tensor& t) {
    const std::size_t m = last_dim("softmax", t);
    if (m == 0) throw ShapeError("softmax: empty last axis");
    const std::size_t rows = t.size() / m;
    Tensor out(t.shape());
    const double* p = t.data();
    double* po = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = p + r * m;
        double* orow = po + r * m;
        double mx = row[0];
        for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
        double acc = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            orow[j] = std::exp(row[j] - mx);
            acc += orow[j];
        }
        for (std::size_t j = 0; j < m; ++j) orow[j] /= acc;
    }
    const TapeCtx tc = ctx();
    const int n = tc.node(t);
    if (tc.recording({n})) {
        tc.tape->record(out, {n}, [out, rows, m](const Tensor& gout,
                                                 GradSink& sink) {
            Tensor g(out.shape());
            const double* ps = out.data();
            const double* pg = gout.data();
            double* pd = g.data();
            for (std::size_t r = 0; r < rows; ++r) {
                double dot = 0.0;
                for (std::size_t j = 0; j < m; ++j) {
                    dot += pg[r * m + j] * ps[r * m + j];
                }
                for (std::size_t j = 0; j < m; ++j) {
                    pd[r * m + j] = ps[r * m + j] * (pg[r * m + j] - dot);
                }
            }
            sink.add(0, g);
        });
    }
    return out;
}

Tensor log_softmax(const Tensor& t) {
    const std::size_t m = last_dim("log_softmax", t);
    if (m == 0) throw ShapeError("log_softmax: empty last axis");
    const std::size_t rows = t.size() / m;
    Tensor out(t.shape());
    const double* p = t.data();
    double* po = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = p + r * m;
        double* orow = po + r * m;
        double mx = row[0];
        for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
        double acc = 0.0;
        for (std::size_t j = 0; j < m; ++j) acc += std::exp(row[j] - mx);
        const double lse = mx + std::log(acc);
        for (std::size_t j = 0; j < m; ++j) orow[j] = row[j] - lse;
    }
    const TapeCtx tc = ctx();
    const int n = tc.node(t);
    if (tc.recording({n})) {
        tc.tape->record(out, {n}, [out, rows, m](const Tensor& gout,
                                                 GradSink& sink) {
            Tensor g(out.shape());
            const double* py = out.data();
            const double* pg = gout.data();
            double* pd = g.data();
            for (std::size_t r = 0; r < rows; ++r) {
                double gsum = 0.0;
                for (std::size_t j = 0; j < m; ++j) gsum += pg[r * m + j];
                for (std::size_t j = 0; j < m; ++j) {
                    pd[r * m + j] =
                        pg[r * m + j] - std::exp(py[r * m + j]) * gsum;
                }
            }
            sink.add(0, g);
        });
    }
    return out;
}

Tensor norm_l1(const Tensor& t) { return sum(abs(t)); }

Tensor norm_l2(const Tensor& t) { return sqrt(sum(square(t))); }

// ------------------------------------------------------------- shape ops

Tensor reshape(const Tensor& t, std::vector<std::size_t> shape) {
    if (shape_size(shape) != t.size()) {
        throw ShapeError("reshape: cannot view " + t.shape_str() + " as " +
                         shape_to_string(shape));
    }
    Tensor out(shape, t.values());
    const TapeCtx tc = ctx();
    const int n = tc.node(t);
    if (tc.recording({n})) {
        tc.tape->record(out, {n}, [t](const Tensor& gout, GradSink& sink) {
            sink.add(0, Tensor(t.shape(), gout.values()));
        });
    }
    return out;
}

Tensor concat_last(const Tensor& a, const Tensor& b) {
    if (a.rank() != b.rank() || a.rank() == 0 ||
        !std::equal(a.shape().begin(), a.shape().end() - 1,
                    b.shape().begin())) {
        throw ShapeError("concat_last: shapes " + a.shape_str() + " and " +
                         b.shape_str() + " do not align");
    }
    const std::size_t ma = a.dim(a.rank() - 1);
    const std::size_t mb = b.dim(b.rank() - 1);
    const std::size_t rows = a.size() / std::max<std::size_t>(ma, 1);
    std::vector<std::size_t> shape = a.shape();
    shape.back() = ma + mb;
    Tensor out(shape);
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy(pa + r * ma, pa + (r + 1) * ma, po + r * (ma + mb));
        std::copy(pb + r * mb, pb + (r + 1) * mb, po + r * (ma + mb) + ma);
    }
    const TapeCtx tc = ctx();
    const int na = tc.node(a), nb = tc.node(b);
    if (tc.recording({na, nb})) {
        tc.tape->record(out, {na, nb},
                        [a, b, rows, ma, mb](const Tensor& gout,
                                             GradSink& sink) {
                            Tensor ga(a.shape());
                            Tensor gb(b.shape());
                            const double* pg = gout.data();
                            for (std::size_t r = 0; r < rows; ++r) {
                                std::copy(pg + r * (ma + mb),
                                          pg + r * (ma + mb) + ma,
                                          ga.data() + r * ma);
                                std::copy(pg + r * (ma + mb) + ma,
                                          pg + (r + 1) * (ma + mb),
                                          gb.data() + r * mb);
                            }
                            sink.add(0, ga);
                            sink.add(1, gb);
                        });
    }
    return out;
}

Tensor slice_last(const Tensor& t, std::size_t start, std::size_t len) {
    const std::size_t m = last_dim("slice_last", t);
    if (start + len > m) {
        throw ShapeError("slice_last: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") exceeds last axis of " +
                         t.shape_str());
    }
    const std::size_t rows = t.size() / std::max<std::size_t>(m, 1);
    std::vector<std::size_t> shape = t.shape();
    shape.back() = len;
    Tensor out(shape);
    const double* p = t.data();
    double* po = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy(p + r * m + start, p + r * m + start + len, po + r * len);
    }
    const TapeCtx tc = ctx();
    const int n = tc.node(t);
    if (tc.recording({n})) {
        tc.tape->record(out, {n}, [t, rows, m, start, len](const Tensor& gout,
                                                           GradSink& sink) {
            Tensor g = Tensor::zeros(t.shape());
            const double* pg = gout.data();
            double* pd = g.data();
            for (std::size_t r = 0; r < rows; ++r) {
                std::copy(pg + r * len, pg + (r + 1) * len,
                          pd + r * m + start);
            }
            sink.add(0, g);
        });
    }
    return out;
}

Tensor stack_last(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("stack_last: no tensors given");
    const std::size_t k = parts.size();
    const std::vector<std::size_t>& base = parts.front().shape();
    for (const Tensor& p : parts) {
        if (p.shape() != base) {
            throw ShapeError("stack_last: mismatched shapes " +
                             shape_to_string(base) + " vs " + p.shape_str());
        }
    }
    const std::size_t rows = parts.front().size();
    std::vector<std::size_t> shape = base;
    shape.push_back(k);
    Tensor out(shape);
    double* po = out.data();
    for (std::size_t j = 0; j < k; ++j) {
        const double* pp = parts[j].data();
        for (std::size_t r = 0; r < rows; ++r) po[r * k + j] = pp[r];
    }
    const TapeCtx tc = ctx();
    std::vector<int> nodes(k, -1);
    bool any = false;
    if (tc.tape) {
        for (std::size_t j = 0; j < k; ++j) {
            nodes[j] = tc.node(parts[j]);
            any = any || nodes[j] >= 0;
        }
    }
    if (tc.tape && any) {
        const std::vector<std::size_t> base_shape = base;
        tc.tape->record(out, nodes,
                        [base_shape, rows, k](const Tensor& gout,
                                              GradSink& sink) {
                            const double* pg = gout.data();
                            for (std::size_t j = 0; j < k; ++j) {
                                Tensor g(base_shape);
                                double* pd = g.data();
                                for (std::size_t r = 0; r < rows; ++r) {
                                    pd[r] = pg[r * k + j];
                                }
                                sink.add(j, g);
                            }
                        });
    }
    return out;
}

// ------------------------------------------------------------ composites

Tensor gaussian_log_density(const Tensor& x, const Tensor& mean,
                            const Tensor& log_var) {
    if (!log_var.all_finite()) {
        throw NumericError("gaussian_log_density: non-finite log_var");
    }
    const Tensor lv = clip(log_var, kLogVarFloor,
                           std::numeric_limits<double>::infinity());
    const Tensor diff = sub(x, mean);
    const Tensor quad = mul(square(diff), exp(-lv));
    const Tensor terms =
        add(Tensor::scalar(kNegHalfLog2Pi),
            sub(mul(Tensor::scalar(-0.5), lv), mul(Tensor::scalar(0.5), quad)));
    return sum_last(terms);
}

Tensor reparameterize(const Tensor& mean, const Tensor& log_var,
                      RngStream& rng) {
    if (mean.shape() != log_var.shape()) {
        throw ShapeError("reparameterize: mean " + mean.shape_str() +
                         " vs log_var " + log_var.shape_str());
    }
    const Tensor lv = clip(log_var, kLogVarFloor,
                           std::numeric_limits<double>::infinity());
    const Tensor eps(mean.shape(), rng.normals(mean.size()));
    return add(mean, mul(exp(mul(Tensor::scalar(0.5), lv)), eps));
}

// ------------------------------------------------------ plain helpers

std::vector<std::size_t> argmax_last(const Tensor& t) {
    const std::size_t m = last_dim("argmax_last", t);
    if (m == 0) throw ShapeError("argmax_last: empty last axis");
    const std::size_t rows = t.size() / m;
    std::vector<std::size_t> out(rows, 0);
    const double* p = t.data();
    for (std::size_t r = 0; r < rows; ++r) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < m; ++j) {
            if (p[r * m + j] > p[r * m + best]) best = j;
        }
        out[r] = best;
    }
    return out;
}

Tensor one_hot(const std::vector<std::size_t>& labels, std::size_t classes) {
    Tensor out = Tensor::zeros({labels.size(), classes});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= classes) {
            throw ShapeError("one_hot: label " + std::to_string(labels[i]) +
                             " out of range [0," + std::to_string(classes) +
                             ")");
        }
        out.data()[i * classes + labels[i]] = 1.0;
    }
    return out;
}

Tensor take_row(const Tensor& t, std::size_t row) {
    if (t.rank() != 2 || row >= t.dim(0)) {
        throw ShapeError("take_row: row " + std::to_string(row) +
                         " out of range for " + t.shape_str());
    }
    const std::size_t m = t.dim(1);
    std::vector<double> vals(t.data() + row * m, t.data() + (row + 1) * m);
    return Tensor({m}, std::move(vals));
}

}  // namespace deepbayes
