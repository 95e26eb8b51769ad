#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <vector>

#include "alora/error.hpp"

namespace alora {

namespace detail {

struct Node {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<double> value;
    std::vector<double> grad;     // empty until a backward pass touches it
    bool requires_grad = false;   // leaf parameter flag
    bool needs_grad = false;      // true if a gradient must flow through here

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

}  // namespace detail

// Dense row-major matrix of 64-bit reals with an optional gradient slot.
// Value data is immutable once an op has produced it; only the grad slot
// mutates afterwards. Copying a Tensor copies the handle, not the storage.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(size_t rows, size_t cols, bool requires_grad = false);
    static Tensor full(size_t rows, size_t cols, double v, bool requires_grad = false);
    static Tensor from_data(std::vector<double> data, size_t rows, size_t cols,
                            bool requires_grad = false);
    static Tensor scalar(double v);
    static Tensor row(std::vector<double> data, bool requires_grad = false);
    static Tensor wrap(std::shared_ptr<detail::Node> n) { return Tensor(std::move(n)); }

    bool defined() const { return node_ != nullptr; }
    size_t rows() const { return node_->rows; }
    size_t cols() const { return node_->cols; }
    size_t size() const { return node_->value.size(); }

    double at(size_t r, size_t c) const { return node_->value[r * node_->cols + c]; }
    double item() const;

    const std::vector<double>& data() const { return node_->value; }
    // Direct mutation is reserved for leaf setup (initializers, optimizer
    // updates); never call it on an op output.
    std::vector<double>& mut_data() { return node_->value; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg);

    bool has_grad() const { return node_ && !node_->grad.empty(); }
    const std::vector<double>& grad() const;
    std::vector<double>& mut_grad();
    void zero_grad();

    // Deep copy with no autograd history.
    Tensor detached_copy() const;

    std::shared_ptr<detail::Node> node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
    std::shared_ptr<detail::Node> node_;
};

// Ordered record of the primitive ops of one forward pass. backward()
// replays the record in exact reverse order, which is a reverse
// topological order because ops are appended as they execute.
//
// A Tape is confined to the thread that activates it. Forward ops run
// without recording when no tape is active on the current thread.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Seeds d(root)/d(root) = 1 and accumulates into every recorded
    // node that needs a gradient. root must be 1x1. Single use.
    void backward(const Tensor& root);

    size_t size() const { return entries_.size(); }
    bool consumed() const { return consumed_; }

    static Tape* active();
    void record(std::function<void()> fn) { entries_.push_back(std::move(fn)); }

    // Activates a tape on the current thread for the scope's lifetime.
    class Scope {
    public:
        explicit Scope(Tape& t);
        ~Scope();
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        Tape* prev_;
    };

private:
    std::vector<std::function<void()>> entries_;
    bool consumed_ = false;
};

// ---- primitive operations -------------------------------------------------
// All ops are pure: they allocate a fresh output node and, when a tape is
// active and gradients are required, record one backward entry.

Tensor matmul(const Tensor& a, const Tensor& b);

// b may have the same shape as a, or be a 1xN row vector broadcast over
// a's rows.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double s);

// Scales column j of a by v[j]. The vector overload treats the scales as
// constants; the tensor overload (v is 1xN) is differentiable in both
// arguments.
Tensor scale_cols(const Tensor& a, const std::vector<double>& v);
Tensor scale_cols(const Tensor& a, const Tensor& v);

Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
// tanh approximation: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3))).
Tensor gelu(const Tensor& x);

// Row-wise normalization with affine parameters (gamma/beta are 1xN).
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 double eps = 1e-5);

Tensor softmax_rows(const Tensor& x);

// Mean negative log-softmax of the target class, stabilized by per-row
// max subtraction. targets holds one class index per logits row.
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& targets);

Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor concat_rows(const std::vector<Tensor>& parts);

Tensor transpose(const Tensor& a);
Tensor slice_cols(const Tensor& a, size_t start, size_t count);
Tensor mean_rows(const Tensor& a);

// Gathers rows of table by id (differentiable w.r.t. table via scatter-add).
Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids);

}  // namespace alora
