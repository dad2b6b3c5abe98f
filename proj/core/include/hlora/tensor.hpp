#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hlora/errors.hpp"

namespace hlora {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

// Dense row-major tensor of 64-bit reals with an optional gradient slot.
// Copying a Tensor copies the handle; storage is shared. Values are written
// once at creation (or by the optimizer between passes); ops never mutate
// their inputs.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::size_t size() const { return impl_->data.size(); }
    bool is_scalar() const { return defined() && impl_->data.size() == 1; }

    // 2D conveniences; a 1D tensor counts as a single row.
    int rows() const;
    int cols() const;

    std::span<const double> data() const { return impl_->data; }
    std::span<double> data_mut() { return impl_->data; }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool v) { impl_->requires_grad = v; }

    bool has_grad() const { return impl_ && !impl_->grad.empty(); }
    std::span<const double> grad() const { return impl_->grad; }
    // Allocates a zeroed grad buffer on first touch.
    std::vector<double>& grad_buffer();
    void drop_grad() { impl_->grad.clear(); }

    double item() const;
    double at(int r, int c) const;

    // Handle identity: two Tensors sharing storage compare equal.
    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

private:
    struct Impl {
        Shape shape;
        std::vector<double> data;
        std::vector<double> grad;  // empty until backward touches it
        bool requires_grad = false;
        const void* owner = nullptr;  // graph that produced this tensor, null for leaves
    };
    std::shared_ptr<Impl> impl_;

    friend class Graph;
};

enum class EwKind { add, mul };

// Define-by-run tape. Every op executes eagerly and, when any input requires
// grad, appends one backward step; backward() replays the tape in reverse
// append order, visiting each node exactly once. A graph is built per forward
// pass and discarded; running backward twice on the same graph is an error.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // a[m x p] * b[p x n] -> [m x n]
    Tensor matmul(const Tensor& a, const Tensor& b);

    // Pointwise add/mul on identical shapes; a scalar operand broadcasts.
    Tensor elementwise(const Tensor& a, const Tensor& b, EwKind kind);
    Tensor add(const Tensor& a, const Tensor& b) { return elementwise(a, b, EwKind::add); }
    Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(a, b, EwKind::mul); }

    // Multiply by a compile-time-fixed constant (no gradient for the constant).
    Tensor scale(const Tensor& a, double factor);

    // a[m x n] + bias broadcast over rows; bias has n entries.
    Tensor add_bias(const Tensor& a, const Tensor& bias);

    // Row-wise softmax with per-row max subtraction.
    Tensor softmax_rows(const Tensor& a);

    // Gaussian-error activation, exact erf form.
    Tensor gelu(const Tensor& a);

    // Row-wise RMS normalization (unit gain).
    Tensor rmsnorm_rows(const Tensor& a);

    // out[i, :] = table[ids[i], :]
    Tensor gather_rows(const Tensor& table, const std::vector<int>& ids);

    // Vertical concatenation; all parts share a column count.
    Tensor concat_rows(const std::vector<Tensor>& parts);

    // Rows [begin, end) of a.
    Tensor slice_rows(const Tensor& a, int begin, int end);

    // Columns [begin, end) of a.
    Tensor slice_cols(const Tensor& a, int begin, int end);

    // w[n x k] -> [n x (k*r)]: column block e (width r) is factor * w[:, e].
    Tensor expand_cols(const Tensor& w, int repeat, double factor);

    // Multi-head causal self-attention over q,k,v [n x d_model].
    Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads);

    // Mean negative log-softmax over rows where mask is true. targets[i] is
    // the class id for row i (only read where masked).
    Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                         const std::vector<uint8_t>& mask);

    Tensor sum(const Tensor& a);

    // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. All
    // requires_grad leaves that participated get populated grads.
    void backward(const Tensor& loss);

    std::size_t tape_size() const { return tape_.size(); }

private:
    Tensor make_result(Shape shape, bool track);
    void record(std::function<void()> step) { tape_.emplace_back(std::move(step)); }
    static bool tracked(const Tensor& t) { return t.defined() && t.impl_->requires_grad; }

    std::vector<std::function<void()>> tape_;
    bool ran_backward_ = false;
};

}  // namespace hlora
