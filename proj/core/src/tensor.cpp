#include "hlora/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>

namespace hlora {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << "x";
        os << s[i];
    }
    os << "]";
    return os.str();
}

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
}

namespace {

void check_shape(const Shape& s) {
    if (s.empty()) throw DimensionError("tensor shape must have at least one dimension");
    for (int d : s) {
        if (d <= 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(s));
    }
}

int rows_of(const Shape& s) { return s.size() == 1 ? 1 : s[0]; }
int cols_of(const Shape& s) { return s.size() == 1 ? s[0] : s[1]; }

void require_2d(const Tensor& t, const char* what) {
    if (t.shape().size() > 2) {
        throw DimensionError(std::string(what) + " expects a 1D or 2D tensor, got " +
                             shape_str(t.shape()));
    }
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    check_shape(shape);
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->data.assign(shape_numel(shape), 0.0);
    t.impl_->shape = std::move(shape);
    t.impl_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (double& v : t.impl_->data) v = value;
    return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    check_shape(shape);
    if (shape_numel(shape) != data.size()) {
        throw DimensionError("data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    }
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(data);
    t.impl_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

int Tensor::rows() const { return rows_of(impl_->shape); }
int Tensor::cols() const { return cols_of(impl_->shape); }

std::vector<double>& Tensor::grad_buffer() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
    return impl_->grad;
}

double Tensor::item() const {
    if (!is_scalar()) {
        throw DimensionError("item() requires a single-element tensor, got " +
                             shape_str(impl_->shape));
    }
    return impl_->data[0];
}

double Tensor::at(int r, int c) const {
    return impl_->data[static_cast<std::size_t>(r) * cols() + c];
}

Tensor Graph::make_result(Shape shape, bool track) {
    Tensor t = Tensor::zeros(std::move(shape));
    t.impl_->requires_grad = track;
    t.impl_->owner = this;
    return t;
}

Tensor Graph::matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul lhs");
    require_2d(b, "matmul rhs");
    const int m = rows_of(a.shape());
    const int p = cols_of(a.shape());
    const int p2 = rows_of(b.shape());
    const int n = cols_of(b.shape());
    if (p != p2) {
        throw DimensionError("matmul inner dimensions differ: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    const bool track = tracked(a) || tracked(b);
    Shape out_shape = (a.shape().size() == 1) ? Shape{n} : Shape{m, n};
    Tensor out = make_result(std::move(out_shape), track);

    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data_mut().data();
    for (int i = 0; i < m; ++i) {
        const double* arow = pa + static_cast<std::size_t>(i) * p;
        double* orow = po + static_cast<std::size_t>(i) * n;
        for (int kk = 0; kk < p; ++kk) {
            const double av = arow[kk];
            if (av == 0.0) continue;
            const double* brow = pb + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }

    if (track) {
        record([a = a, b = b, out = out, m, p, n]() mutable {
            if (!out.has_grad()) return;
            const double* g = out.grad().data();
            if (a.requires_grad()) {
                // da = g * b^T
                double* da = a.grad_buffer().data();
                const double* pb2 = b.data().data();
                for (int i = 0; i < m; ++i) {
                    const double* grow = g + static_cast<std::size_t>(i) * n;
                    double* darow = da + static_cast<std::size_t>(i) * p;
                    for (int kk = 0; kk < p; ++kk) {
                        const double* brow = pb2 + static_cast<std::size_t>(kk) * n;
                        double acc = 0.0;
                        for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        darow[kk] += acc;
                    }
                }
            }
            if (b.requires_grad()) {
                // db = a^T * g
                double* db = b.grad_buffer().data();
                const double* pa2 = a.data().data();
                for (int kk = 0; kk < p; ++kk) {
                    double* dbrow = db + static_cast<std::size_t>(kk) * n;
                    for (int i = 0; i < m; ++i) {
                        const double av = pa2[static_cast<std::size_t>(i) * p + kk];
                        if (av == 0.0) continue;
                        const double* grow = g + static_cast<std::size_t>(i) * n;
                        for (int j = 0; j < n; ++j) dbrow[j] += av * grow[j];
                    }
                }
            }
        });
    }
    return out;
}

Tensor Graph::elementwise(const Tensor& a, const Tensor& b, EwKind kind) {
    const bool a_scalar = a.is_scalar();
    const bool b_scalar = b.is_scalar();
    if (!a_scalar && !b_scalar && a.shape() != b.shape()) {
        throw DimensionError("elementwise shapes differ: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    const Tensor& lead = a_scalar ? b : a;
    const bool track = tracked(a) || tracked(b);
    Tensor out = make_result(lead.shape(), track);

    const std::size_t n = out.size();
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data_mut().data();
    for (std::size_t i = 0; i < n; ++i) {
        const double av = a_scalar ? pa[0] : pa[i];
        const double bv = b_scalar ? pb[0] : pb[i];
        po[i] = (kind == EwKind::add) ? av + bv : av * bv;
    }

    if (track) {
        record([a = a, b = b, out = out, kind, a_scalar, b_scalar, n]() mutable {
            if (!out.has_grad()) return;
            const double* g = out.grad().data();
            const double* pa2 = a.data().data();
            const double* pb2 = b.data().data();
            if (a.requires_grad()) {
                double* da = a.grad_buffer().data();
                for (std::size_t i = 0; i < n; ++i) {
                    const double gi =
                        (kind == EwKind::add) ? g[i] : g[i] * (b_scalar ? pb2[0] : pb2[i]);
                    da[a_scalar ? 0 : i] += gi;
                }
            }
            if (b.requires_grad()) {
                double* db = b.grad_buffer().data();
                for (std::size_t i = 0; i < n; ++i) {
                    const double gi =
                        (kind == EwKind::add) ? g[i] : g[i] * (a_scalar ? pa2[0] : pa2[i]);
                    db[b_scalar ? 0 : i] += gi;
                }
            }
        });
    }
    return out;
}

Tensor Graph::scale(const Tensor& a, double factor) {
    const bool track = tracked(a);
    Tensor out = make_result(a.shape(), track);
    const std::size_t n = out.size();
    const double* pa = a.data().data();
    double* po = out.data_mut().data();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * factor;
    if (track) {
        record([a = a, out = out, factor, n]() mutable {
            if (!out.has_grad()) return;
            const double* g = out.grad().data();
            double* da = a.grad_buffer().data();
            for (std::size_t i = 0; i < n; ++i) da[i] += g[i] * factor;
        });
    }
    return out;
}

Tensor Graph::add_bias(const Tensor& a, const Tensor& bias) {
    require_2d(a, "add_bias input");
    const int m = rows_of(a.shape());
    const int n = cols_of(a.shape());
    if (static_cast<int>(bias.size()) != n) {
        throw DimensionError("bias length " + std::to_string(bias.size()) +
                             " does not match column count " + std::to_string(n));
    }
    const bool track = tracked(a) || tracked(bias);
    Tensor out = make_result(a.shape(), track);
    const double* pa = a.data().data();
    const double* pbias = bias.data().data();
    double* po = out.data_mut().data();
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            po[static_cast<std::size_t>(i) * n + j] = pa[static_cast<std::size_t>(i) * n + j] + pbias[j];
        }
    }
    if (track) {
        record([a = a, bias = bias, out = out, m, n]() mutable {
            if (!out.has_grad()) return;
            const double* g = out.grad().data();
            if (a.requires_grad()) {
                double* da = a.grad_buffer().data();
                const std::size_t total = static_cast<std::size_t>(m) * n;
                for (std::size_t i = 0; i < total; ++i) da[i] += g[i];
            }
            if (bias.requires_grad()) {
                double* db = bias.grad_buffer().data();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) db[j] += g[static_cast<std::size_t>(i) * n + j];
            }
        });
    }
    return out;
}

Tensor Graph::softmax_rows(const Tensor& a) {
    require_2d(a, "softmax_rows");
    const int m = rows_of(a.shape());
    const int n = cols_of(a.shape());
    const bool track = tracked(a);
    Tensor out = make_result(a.shape(), track);
    const double* pa = a.data().data();
    double* po = out.data_mut().data();
    for (int i = 0; i < m; ++i) {
        const double* row = pa + static_cast<std::size_t>(i) * n;
        double* orow = po + static_cast<std::size_t>(i) * n;
        double mx = row[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (int j = 0; j < n; ++j) {
            orow[j] = std::exp(row[j] - mx);
            denom += orow[j];
        }
        for (int j = 0; j < n; ++j) orow[j] /= denom;
    }
    if (track) {
        record([a = a, out = out, m, n]() mutable {
            if (!out.has_grad()) return;
            const double* g = out.grad().data();
            const double* p = out.data().data();
            double* da = a.grad_buffer().data();
            for (int i = 0; i < m; ++i) {
                const double* grow = g + static_cast<std::size_t>(i) * n;
                const double* prow = p + static_cast<std::size_t>(i) * n;
                double dot = 0.0;
                for (int j = 0; j < n; ++j) dot += grow[j] * prow[j];
                double* darow = da + static_cast<std::size_t>(i) * n;
                for (int j = 0; j < n; ++j) darow[j] += prow[j] * (grow[j] - dot);
            }
        });
    }
    return out;
}

Tensor Graph::gelu(const Tensor& a) {
    const bool track = tracked(a);
    Tensor out = make_result(a.shape(), track);
    const std::size_t n = out.size();
    const double* pa = a.data().data();
    double* po = out.data_mut().data();
    const double inv_sqrt2 = 0.70710678118654752440;
    for (std::size_t i = 0; i < n; ++i) {
        po[i] = 0.5 * pa[i] * (1.0 + std::erf(pa[i] * inv_sqrt2));
    }
    if (track) {
        record([a = a, out = out, n, inv_sqrt2]() mutable {
            if (!out.has_grad()) return;
            const double* g = out.grad().data();
            const double* x = a.data().data();
            double* da = a.grad_buffer().data();
            const double inv_sqrt2pi = 0.39894228040143267794;
            for (std::size_t i = 0; i < n; ++i) {
                const double cdf = 0.5 * (1.0 + std::erf(x[i] * inv_sqrt2));
                const double pdf = inv_sqrt2pi * std::exp(-0.5 * x[i] * x[i]);
                da[i] += g[i] * (cdf + x[i] * pdf);
            }
        });
    }
    return out;
}

Tensor Graph::rmsnorm_rows(const Tensor& a) {
    require_2d(a, "rmsnorm_rows");
    const int m = rows_of(a.shape());
    const int n = cols_of(a.shape());
    constexpr double eps = 1e-8;
    const bool track = tracked(a);
    Tensor out = make_result(a.shape(), track);
    const double* pa = a.data().data();
    double* po = out.data_mut().data();
    for (int i = 0; i < m; ++i) {
        const double* row = pa + static_cast<std::size_t>(i) * n;
        double ms = 0.0;
        for (int j = 0; j < n; ++j) ms += row[j] * row[j];
        ms = ms / n + eps;
        const double s = 1.0 / std::sqrt(ms);
        double* orow = po + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) orow[j] = row[j] * s;
    }
    if (track) {
        record([a = a, out = out, m, n]() mutable {
            if (!out.has_grad()) return;
            const double* g = out.grad().data();
            const double* x = a.data().data();
            double* da = a.grad_buffer().data();
            for (int i = 0; i < m; ++i) {
                const double* grow = g + static_cast<std::size_t>(i) * n;
                const double* xrow = x + static_cast<std::size_t>(i) * n;
                double ms = 0.0, dot = 0.0;
                for (int j = 0; j < n; ++j) ms += xrow[j] * xrow[j];
                ms = ms / n + eps;
                const double s = 1.0 / std::sqrt(ms);
                for (int j = 0; j < n; ++j) dot += grow[j] * xrow[j];
                const double coef = dot * s / (static_cast<double>(n) * ms);
                double* darow = da + static_cast<std::size_t>(i) * n;
                for (int j = 0; j < n; ++j) darow[j] += s * grow[j] - coef * xrow[j];
            }
        });
    }
    return out;
}

Tensor Graph::gather_rows(const Tensor& table, const std::vector<int>& ids) {
    require_2d(table, "gather_rows table");
    const int v = rows_of(table.shape());
    const int d = cols_of(table.shape());
    for (int id : ids) {
        if (id < 0 || id >= v) {
            throw VocabularyError("gather_rows id " + std::to_string(id) +
                                  " outside table rows [0, " + std::to_string(v) + ")");
        }
    }
    const int m = static_cast<int>(ids.size());
    if (m == 0) throw DimensionError("gather_rows requires at least one id");
    const bool track = tracked(table);
    Tensor out = make_result({m, d}, track);
    const double* pt = table.data().data();
    double* po = out.data_mut().data();
    for (int i = 0; i < m; ++i) {
        const double* src = pt + static_cast<std::size_t>(ids[i]) * d;
        double* dst = po + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < d; ++j) dst[j] = src[j];
    }
    if (track) {
        record([table = table, out = out, ids, m, d]() mutable {
            if (!out.has_grad()) return;
            const double* g = out.grad().data();
            double* dt = table.grad_buffer().data();
            for (int i = 0; i < m; ++i) {
                double* dst = dt + static_cast<std::size_t>(ids[i]) * d;
                const double* src = g + static_cast<std::size_t>(i) * d;
                for (int j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

Tensor Graph::concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows requires at least one part");
    const int n = cols_of(parts[0].shape());
    int total_rows = 0;
    bool track = false;
    for (const Tensor& p : parts) {
        require_2d(p, "concat_rows part");
        if (cols_of(p.shape()) != n) {
            throw DimensionError("concat_rows column mismatch: " + shape_str(parts[0].shape()) +
                                 " vs " + shape_str(p.shape()));
        }
        total_rows += rows_of(p.shape());
        track = track || tracked(p);
    }
    Tensor out = make_result({total_rows, n}, track);
    double* po = out.data_mut().data();
    std::size_t off = 0;
    for (const Tensor& p : parts) {
        const auto src = p.data();
        for (std::size_t i = 0; i < src.size(); ++i) po[off + i] = src[i];
        off += src.size();
    }
    if (track) {
        record([parts = parts, out = out]() mutable {
            if (!out.has_grad()) return;
            const double* g = out.grad().data();
            std::size_t off2 = 0;
            for (Tensor& p : parts) {
                const std::size_t sz = p.size();
                if (p.requires_grad()) {
                    double* dp = p.grad_buffer().data();
                    for (std::size_t i = 0; i < sz; ++i) dp[i] += g[off2 + i];
                }
                off2 += sz;
            }
        });
    }
    return out;
}

Tensor Graph::slice_rows(const Tensor& a, int begin, int end) {
    require_2d(a, "slice_rows");
    const int m = rows_of(a.shape());
    const int n = cols_of(a.shape());
    if (begin < 0 || end > m || begin >= end) {
        throw DimensionError("slice_rows range [" + std::to_string(begin) + ", " +
                             std::to_string(end) + ") invalid for " + std::to_string(m) + " rows");
    }
    const bool track = tracked(a);
    Tensor out = make_result({end - begin, n}, track);
    const double* pa = a.data().data() + static_cast<std::size_t>(begin) * n;
    double* po = out.data_mut().data();
    const std::size_t sz = out.size();
    for (std::size_t i = 0; i < sz; ++i) po[i] = pa[i];
    if (track) {
        record([a = a, out = out, begin, n, sz]() mutable {
            if (!out.has_grad()) return;
            const double* g = out.grad().data();
            double* da = a.grad_buffer().data() + static_cast<std::size_t>(begin) * n;
            for (std::size_t i = 0; i < sz; ++i) da[i] += g[i];
        });
    }
    return out;
}

Tensor Graph::slice_cols(const Tensor& a, int begin, int end) {
    require_2d(a, "slice_cols");
    const int m = rows_of(a.shape());
    const int n = cols_of(a.shape());
    if (begin < 0 || end > n || begin >= end) {
        throw DimensionError("slice_cols range [" + std::to_string(begin) + ", " +
                             std::to_string(end) + ") invalid for " + std::to_string(n) +
                             " columns");
    }
    const int w = end - begin;
    const bool track = tracked(a);
    Tensor out = make_result({m, w}, track);
    const double* pa = a.data().data();
    double* po = out.data_mut().data();
    for (int i = 0; i < m; ++i) {
        const double* src = pa + static_cast<std::size_t>(i) * n + begin;
        double* dst = po + static_cast<std::size_t>(i) * w;
        for (int j = 0; j < w; ++j) dst[j] = src[j];
    }
    if (track) {
        record([a = a, out = out, begin, m, n, w]() mutable {
            if (!out.has_grad()) return;
            const double* g = out.grad().data();
            double* da = a.grad_buffer().data();
            for (int i = 0; i < m; ++i) {
                double* dst = da + static_cast<std::size_t>(i) * n + begin;
                const double* src = g + static_cast<std::size_t>(i) * w;
                for (int j = 0; j < w; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

Tensor Graph::expand_cols(const Tensor& w, int repeat, double factor) {
    require_2d(w, "expand_cols");
    if (repeat < 1) throw DimensionError("expand_cols repeat must be >= 1");
    const int m = rows_of(w.shape());
    const int k = cols_of(w.shape());
    const int out_cols = k * repeat;
    const bool track = tracked(w);
    Tensor out = make_result({m, out_cols}, track);
    const double* pw = w.data().data();
    double* po = out.data_mut().data();
    for (int i = 0; i < m; ++i) {
        const double* wrow = pw + static_cast<std::size_t>(i) * k;
        double* orow = po + static_cast<std::size_t>(i) * out_cols;
        for (int e = 0; e < k; ++e) {
            const double v = factor * wrow[e];
            for (int t = 0; t < repeat; ++t) orow[e * repeat + t] = v;
        }
    }
    if (track) {
        record([w = w, out = out, m, k, repeat, factor, out_cols]() mutable {
            if (!out.has_grad()) return;
            const double* g = out.grad().data();
            double* dw = w.grad_buffer().data();
            for (int i = 0; i < m; ++i) {
                const double* grow = g + static_cast<std::size_t>(i) * out_cols;
                double* dwrow = dw + static_cast<std::size_t>(i) * k;
                for (int e = 0; e < k; ++e) {
                    double acc = 0.0;
                    for (int t = 0; t < repeat; ++t) acc += grow[e * repeat + t];
                    dwrow[e] += factor * acc;
                }
            }
        });
    }
    return out;
}

Tensor Graph::causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads) {
    require_2d(q, "attention q");
    if (q.shape() != k.shape() || q.shape() != v.shape()) {
        throw DimensionError("attention operands must share a shape: " + shape_str(q.shape()) +
                             ", " + shape_str(k.shape()) + ", " + shape_str(v.shape()));
    }
    const int n = rows_of(q.shape());
    const int d = cols_of(q.shape());
    if (heads < 1 || d % heads != 0) {
        throw DimensionError("head count " + std::to_string(heads) + " must divide width " +
                             std::to_string(d));
    }
    const int hd = d / heads;
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const bool track = tracked(q) || tracked(k) || tracked(v);
    Tensor out = make_result(q.shape(), track);

    // Per-head lower-triangular attention probabilities, kept for backward.
    auto probs = std::make_shared<std::vector<double>>(
        static_cast<std::size_t>(heads) * n * n, 0.0);

    const double* pq = q.data().data();
    const double* pk = k.data().data();
    const double* pv = v.data().data();
    double* po = out.data_mut().data();
    for (int h = 0; h < heads; ++h) {
        double* ph = probs->data() + static_cast<std::size_t>(h) * n * n;
        const int col0 = h * hd;
        for (int i = 0; i < n; ++i) {
            const double* qi = pq + static_cast<std::size_t>(i) * d + col0;
            double* prow = ph + static_cast<std::size_t>(i) * n;
            double mx = -1e300;
            for (int j = 0; j <= i; ++j) {
                const double* kj = pk + static_cast<std::size_t>(j) * d + col0;
                double s = 0.0;
                for (int t = 0; t < hd; ++t) s += qi[t] * kj[t];
                s *= inv_scale;
                prow[j] = s;
                mx = std::max(mx, s);
            }
            double denom = 0.0;
            for (int j = 0; j <= i; ++j) {
                prow[j] = std::exp(prow[j] - mx);
                denom += prow[j];
            }
            double* orow = po + static_cast<std::size_t>(i) * d + col0;
            for (int j = 0; j <= i; ++j) {
                prow[j] /= denom;
                const double* vj = pv + static_cast<std::size_t>(j) * d + col0;
                for (int t = 0; t < hd; ++t) orow[t] += prow[j] * vj[t];
            }
        }
    }

    if (track) {
        record([q = q, k = k, v = v, out = out, probs, heads, n, d, hd, inv_scale]() mutable {
            if (!out.has_grad()) return;
            const double* g = out.grad().data();
            const double* pq2 = q.data().data();
            const double* pk2 = k.data().data();
            const double* pv2 = v.data().data();
            double* dq = q.requires_grad() ? q.grad_buffer().data() : nullptr;
            double* dk = k.requires_grad() ? k.grad_buffer().data() : nullptr;
            double* dv = v.requires_grad() ? v.grad_buffer().data() : nullptr;
            std::vector<double> dp(static_cast<std::size_t>(n), 0.0);
            for (int h = 0; h < heads; ++h) {
                const double* ph = probs->data() + static_cast<std::size_t>(h) * n * n;
                const int col0 = h * hd;
                for (int i = 0; i < n; ++i) {
                    const double* grow = g + static_cast<std::size_t>(i) * d + col0;
                    const double* prow = ph + static_cast<std::size_t>(i) * n;
                    // dP[i,j] = g_i . v_j ; dV_j += P[i,j] * g_i
                    double dot = 0.0;
                    for (int j = 0; j <= i; ++j) {
                        const double* vj = pv2 + static_cast<std::size_t>(j) * d + col0;
                        double s = 0.0;
                        for (int t = 0; t < hd; ++t) s += grow[t] * vj[t];
                        dp[j] = s;
                        dot += s * prow[j];
                        if (dv) {
                            double* dvj = dv + static_cast<std::size_t>(j) * d + col0;
                            for (int t = 0; t < hd; ++t) dvj[t] += prow[j] * grow[t];
                        }
                    }
                    // softmax backward restricted to the causal prefix
                    const double* qi = pq2 + static_cast<std::size_t>(i) * d + col0;
                    for (int j = 0; j <= i; ++j) {
                        const double ds = prow[j] * (dp[j] - dot) * inv_scale;
                        if (ds == 0.0) continue;
                        const double* kj = pk2 + static_cast<std::size_t>(j) * d + col0;
                        if (dq) {
                            double* dqi = dq + static_cast<std::size_t>(i) * d + col0;
                            for (int t = 0; t < hd; ++t) dqi[t] += ds * kj[t];
                        }
                        if (dk) {
                            double* dkj = dk + static_cast<std::size_t>(j) * d + col0;
                            for (int t = 0; t < hd; ++t) dkj[t] += ds * qi[t];
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor Graph::cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                            const std::vector<uint8_t>& mask) {
    require_2d(logits, "cross_entropy logits");
    const int m = rows_of(logits.shape());
    const int vocab = cols_of(logits.shape());
    if (static_cast<int>(targets.size()) != m || static_cast<int>(mask.size()) != m) {
        throw DimensionError("cross_entropy targets/mask length must equal row count " +
                             std::to_string(m));
    }
    int count = 0;
    for (int i = 0; i < m; ++i) {
        if (!mask[i]) continue;
        ++count;
        if (targets[i] < 0 || targets[i] >= vocab) {
            throw VocabularyError("cross_entropy target " + std::to_string(targets[i]) +
                                  " outside vocabulary [0, " + std::to_string(vocab) + ")");
        }
    }
    if (count == 0) throw DimensionError("cross_entropy requires at least one unmasked position");

    const bool track = tracked(logits);
    Tensor out = make_result({1}, track);
    const double* pl = logits.data().data();
    double loss = 0.0;
    for (int i = 0; i < m; ++i) {
        if (!mask[i]) continue;
        const double* row = pl + static_cast<std::size_t>(i) * vocab;
        double mx = row[0];
        for (int j = 1; j < vocab; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (int j = 0; j < vocab; ++j) denom += std::exp(row[j] - mx);
        loss += (mx + std::log(denom)) - row[targets[i]];
    }
    out.data_mut()[0] = loss / count;

    if (track) {
        record([logits = logits, out = out, targets, mask, m, vocab, count]() mutable {
            if (!out.has_grad()) return;
            const double gscale = out.grad()[0] / count;
            const double* pl2 = logits.data().data();
            double* dl = logits.grad_buffer().data();
            for (int i = 0; i < m; ++i) {
                if (!mask[i]) continue;
                const double* row = pl2 + static_cast<std::size_t>(i) * vocab;
                double* drow = dl + static_cast<std::size_t>(i) * vocab;
                double mx = row[0];
                for (int j = 1; j < vocab; ++j) mx = std::max(mx, row[j]);
                double denom = 0.0;
                for (int j = 0; j < vocab; ++j) denom += std::exp(row[j] - mx);
                for (int j = 0; j < vocab; ++j) {
                    const double p = std::exp(row[j] - mx) / denom;
                    drow[j] += gscale * (p - (j == targets[i] ? 1.0 : 0.0));
                }
            }
        });
    }
    return out;
}

Tensor Graph::sum(const Tensor& a) {
    const bool track = tracked(a);
    Tensor out = make_result({1}, track);
    double acc = 0.0;
    for (double v : a.data()) acc += v;
    out.data_mut()[0] = acc;
    if (track) {
        record([a = a, out = out]() mutable {
            if (!out.has_grad()) return;
            const double g = out.grad()[0];
            double* da = a.grad_buffer().data();
            const std::size_t n = a.size();
            for (std::size_t i = 0; i < n; ++i) da[i] += g;
        });
    }
    return out;
}

void Graph::backward(const Tensor& loss) {
    if (ran_backward_) {
        throw ConfigError("backward already ran on this graph; build a fresh graph per pass");
    }
    if (!loss.defined() || !loss.is_scalar()) {
        throw DimensionError("backward requires a scalar loss");
    }
    if (loss.impl_->owner != this) {
        throw ConfigError("backward loss is not a result of this graph");
    }
    ran_backward_ = true;
    const_cast<Tensor&>(loss).grad_buffer()[0] = 1.0;
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
}

}  // namespace hlora
