#include "alora/tensor.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <utility>

namespace alora {

namespace {

thread_local Tape* g_active_tape = nullptr;

using NodePtr = std::shared_ptr<detail::Node>;

NodePtr new_node(size_t rows, size_t cols) {
    auto n = std::make_shared<detail::Node>();
    n->rows = rows;
    n->cols = cols;
    n->value.assign(rows * cols, 0.0);
    return n;
}

std::string shape_str(const detail::Node& n) {
    std::ostringstream os;
    os << n.rows << "x" << n.cols;
    return os.str();
}

[[noreturn]] void throw_dim(const char* op, const detail::Node& a, const detail::Node& b) {
    std::ostringstream os;
    os << op << ": incompatible shapes " << shape_str(a) << " and " << shape_str(b);
    throw DimensionError(os.str());
}

bool tracks(const Tensor& t) { return t.node()->needs_grad || t.node()->requires_grad; }

// Records a backward entry when a tape is active and any input needs a
// gradient; marks the output accordingly.
template <typename Fn>
Tensor finish(NodePtr out, bool inputs_need, Fn&& backward_fn) {
    out->needs_grad = inputs_need && g_active_tape != nullptr;
    Tensor t = Tensor::wrap(std::move(out));
    if (t.node()->needs_grad) g_active_tape->record(std::forward<Fn>(backward_fn));
    return t;
}

// Output gradient of a node, or nullptr when nothing flowed there.
const std::vector<double>* out_grad(const NodePtr& n) {
    return n->grad.empty() ? nullptr : &n->grad;
}

bool wants(const NodePtr& n) { return n->needs_grad || n->requires_grad; }

}  // namespace

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(size_t rows, size_t cols, bool requires_grad) {
    auto n = new_node(rows, cols);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::full(size_t rows, size_t cols, double v, bool requires_grad) {
    auto n = new_node(rows, cols);
    n->value.assign(rows * cols, v);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::from_data(std::vector<double> data, size_t rows, size_t cols, bool requires_grad) {
    if (data.size() != rows * cols)
        throw DimensionError("from_data: " + std::to_string(data.size()) + " values for shape " +
                             std::to_string(rows) + "x" + std::to_string(cols));
    auto n = std::make_shared<detail::Node>();
    n->rows = rows;
    n->cols = cols;
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v) { return from_data({v}, 1, 1); }

Tensor Tensor::row(std::vector<double> data, bool requires_grad) {
    size_t n = data.size();
    return from_data(std::move(data), 1, n, requires_grad);
}

double Tensor::item() const {
    if (size() != 1) throw DimensionError("item: tensor is " + shape_str(*node_) + ", not 1x1");
    return node_->value[0];
}

void Tensor::set_requires_grad(bool rg) { node_->requires_grad = rg; }

const std::vector<double>& Tensor::grad() const {
    if (!has_grad()) throw StateError("grad: no gradient has been accumulated");
    return node_->grad;
}

std::vector<double>& Tensor::mut_grad() {
    node_->ensure_grad();
    return node_->grad;
}

void Tensor::zero_grad() {
    if (node_) node_->grad.clear();
}

Tensor Tensor::detached_copy() const {
    Tensor t = Tensor::from_data(node_->value, node_->rows, node_->cols);
    t.node()->requires_grad = node_->requires_grad;
    return t;
}

// ---- Tape ------------------------------------------------------------------

Tape* Tape::active() { return g_active_tape; }

Tape::Scope::Scope(Tape& t) : prev_(g_active_tape) { g_active_tape = &t; }
Tape::Scope::~Scope() { g_active_tape = prev_; }

void Tape::backward(const Tensor& root) {
    if (consumed_) throw StateError("Tape::backward: tape already consumed");
    if (root.size() != 1) throw DimensionError("Tape::backward: root must be a 1x1 scalar");
    consumed_ = true;
    root.node()->ensure_grad();
    root.node()->grad[0] = 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
}

// ---- ops -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    auto an = a.node(), bn = b.node();
    if (an->cols != bn->rows) throw_dim("matmul", *an, *bn);
    size_t m = an->rows, k = an->cols, n = bn->cols;
    auto out = new_node(m, n);
    {
        const double* A = an->value.data();
        const double* B = bn->value.data();
        double* C = out->value.data();
        for (size_t i = 0; i < m; ++i)
            for (size_t p = 0; p < k; ++p) {
                double av = A[i * k + p];
                if (av == 0.0) continue;
                const double* brow = B + p * n;
                double* crow = C + i * n;
                for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
    }
    return finish(out, tracks(a) || tracks(b), [an, bn, on = out, m, k, n] {
        const auto* g = out_grad(on);
        if (!g) return;
        if (wants(an)) {
            an->ensure_grad();  // dA = dC * B^T
            for (size_t i = 0; i < m; ++i)
                for (size_t p = 0; p < k; ++p) {
                    double s = 0.0;
                    const double* grow = g->data() + i * n;
                    const double* brow = bn->value.data() + p * n;
                    for (size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
                    an->grad[i * k + p] += s;
                }
        }
        if (wants(bn)) {
            bn->ensure_grad();  // dB = A^T * dC
            for (size_t p = 0; p < k; ++p)
                for (size_t i = 0; i < m; ++i) {
                    double av = an->value[i * k + p];
                    if (av == 0.0) continue;
                    const double* grow = g->data() + i * n;
                    double* brow = bn->grad.data() + p * n;
                    for (size_t j = 0; j < n; ++j) brow[j] += av * grow[j];
                }
        }
    });
}

namespace {

enum class Broadcast { None, Row };

Broadcast check_broadcast(const char* op, const detail::Node& a, const detail::Node& b) {
    if (a.rows == b.rows && a.cols == b.cols) return Broadcast::None;
    if (b.rows == 1 && b.cols == a.cols) return Broadcast::Row;
    throw_dim(op, a, b);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    auto an = a.node(), bn = b.node();
    Broadcast bc = check_broadcast("add", *an, *bn);
    auto out = new_node(an->rows, an->cols);
    size_t cols = an->cols;
    for (size_t i = 0; i < an->value.size(); ++i)
        out->value[i] = an->value[i] + (bc == Broadcast::None ? bn->value[i] : bn->value[i % cols]);
    return finish(out, tracks(a) || tracks(b), [an, bn, on = out, bc, cols] {
        const auto* g = out_grad(on);
        if (!g) return;
        if (wants(an)) {
            an->ensure_grad();
            for (size_t i = 0; i < g->size(); ++i) an->grad[i] += (*g)[i];
        }
        if (wants(bn)) {
            bn->ensure_grad();
            if (bc == Broadcast::None)
                for (size_t i = 0; i < g->size(); ++i) bn->grad[i] += (*g)[i];
            else
                for (size_t i = 0; i < g->size(); ++i) bn->grad[i % cols] += (*g)[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    auto an = a.node(), bn = b.node();
    Broadcast bc = check_broadcast("mul", *an, *bn);
    auto out = new_node(an->rows, an->cols);
    size_t cols = an->cols;
    auto bval = [&](size_t i) { return bc == Broadcast::None ? bn->value[i] : bn->value[i % cols]; };
    for (size_t i = 0; i < an->value.size(); ++i) out->value[i] = an->value[i] * bval(i);
    return finish(out, tracks(a) || tracks(b), [an, bn, on = out, bc, cols] {
        const auto* g = out_grad(on);
        if (!g) return;
        auto bval = [&](size_t i) { return bc == Broadcast::None ? bn->value[i] : bn->value[i % cols]; };
        if (wants(an)) {
            an->ensure_grad();
            for (size_t i = 0; i < g->size(); ++i) an->grad[i] += (*g)[i] * bval(i);
        }
        if (wants(bn)) {
            bn->ensure_grad();
            if (bc == Broadcast::None)
                for (size_t i = 0; i < g->size(); ++i) bn->grad[i] += (*g)[i] * an->value[i];
            else
                for (size_t i = 0; i < g->size(); ++i) bn->grad[i % cols] += (*g)[i] * an->value[i];
        }
    });
}

Tensor scale(const Tensor& a, double s) {
    auto an = a.node();
    auto out = new_node(an->rows, an->cols);
    for (size_t i = 0; i < an->value.size(); ++i) out->value[i] = an->value[i] * s;
    return finish(out, tracks(a), [an, on = out, s] {
        const auto* g = out_grad(on);
        if (!g || !wants(an)) return;
        an->ensure_grad();
        for (size_t i = 0; i < g->size(); ++i) an->grad[i] += (*g)[i] * s;
    });
}

Tensor scale_cols(const Tensor& a, const std::vector<double>& v) {
    auto an = a.node();
    if (v.size() != an->cols)
        throw DimensionError("scale_cols: " + std::to_string(v.size()) + " scales for " +
                             shape_str(*an));
    auto out = new_node(an->rows, an->cols);
    size_t cols = an->cols;
    for (size_t i = 0; i < an->value.size(); ++i) out->value[i] = an->value[i] * v[i % cols];
    return finish(out, tracks(a), [an, on = out, v, cols] {
        const auto* g = out_grad(on);
        if (!g || !wants(an)) return;
        an->ensure_grad();
        for (size_t i = 0; i < g->size(); ++i) an->grad[i] += (*g)[i] * v[i % cols];
    });
}

Tensor scale_cols(const Tensor& a, const Tensor& v) {
    auto an = a.node(), vn = v.node();
    if (vn->rows != 1 || vn->cols != an->cols) throw_dim("scale_cols", *an, *vn);
    auto out = new_node(an->rows, an->cols);
    size_t cols = an->cols;
    for (size_t i = 0; i < an->value.size(); ++i) out->value[i] = an->value[i] * vn->value[i % cols];
    return finish(out, tracks(a) || tracks(v), [an, vn, on = out, cols] {
        const auto* g = out_grad(on);
        if (!g) return;
        if (wants(an)) {
            an->ensure_grad();
            for (size_t i = 0; i < g->size(); ++i) an->grad[i] += (*g)[i] * vn->value[i % cols];
        }
        if (wants(vn)) {
            vn->ensure_grad();
            for (size_t i = 0; i < g->size(); ++i) vn->grad[i % cols] += (*g)[i] * an->value[i];
        }
    });
}

namespace {

double sigmoid_stable(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

Tensor sigmoid(const Tensor& x) {
    auto xn = x.node();
    auto out = new_node(xn->rows, xn->cols);
    for (size_t i = 0; i < xn->value.size(); ++i) out->value[i] = sigmoid_stable(xn->value[i]);
    return finish(out, tracks(x), [xn, on = out] {
        const auto* g = out_grad(on);
        if (!g || !wants(xn)) return;
        xn->ensure_grad();
        for (size_t i = 0; i < g->size(); ++i) {
            double s = on->value[i];
            xn->grad[i] += (*g)[i] * s * (1.0 - s);
        }
    });
}

Tensor relu(const Tensor& x) {
    auto xn = x.node();
    auto out = new_node(xn->rows, xn->cols);
    for (size_t i = 0; i < xn->value.size(); ++i) out->value[i] = xn->value[i] > 0.0 ? xn->value[i] : 0.0;
    return finish(out, tracks(x), [xn, on = out] {
        const auto* g = out_grad(on);
        if (!g || !wants(xn)) return;
        xn->ensure_grad();
        for (size_t i = 0; i < g->size(); ++i)
            if (xn->value[i] > 0.0) xn->grad[i] += (*g)[i];
    });
}

Tensor gelu(const Tensor& x) {
    constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double kA = 0.044715;
    auto xn = x.node();
    auto out = new_node(xn->rows, xn->cols);
    for (size_t i = 0; i < xn->value.size(); ++i) {
        double v = xn->value[i];
        out->value[i] = 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v)));
    }
    return finish(out, tracks(x), [xn, on = out] {
        const auto* g = out_grad(on);
        if (!g || !wants(xn)) return;
        xn->ensure_grad();
        for (size_t i = 0; i < g->size(); ++i) {
            double v = xn->value[i];
            double u = kC * (v + kA * v * v * v);
            double t = std::tanh(u);
            double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kC * (1.0 + 3.0 * kA * v * v);
            xn->grad[i] += (*g)[i] * d;
        }
    });
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    auto xn = x.node(), gn = gamma.node(), bn = beta.node();
    if (gn->rows != 1 || gn->cols != xn->cols) throw_dim("layernorm(gamma)", *xn, *gn);
    if (bn->rows != 1 || bn->cols != xn->cols) throw_dim("layernorm(beta)", *xn, *bn);
    size_t rows = xn->rows, cols = xn->cols;
    auto out = new_node(rows, cols);
    // Cache the normalized values and inverse stddevs for the backward pass.
    auto xhat = std::make_shared<std::vector<double>>(rows * cols);
    auto inv = std::make_shared<std::vector<double>>(rows);
    for (size_t r = 0; r < rows; ++r) {
        const double* row = xn->value.data() + r * cols;
        double mean = 0.0;
        for (size_t j = 0; j < cols; ++j) mean += row[j];
        mean /= static_cast<double>(cols);
        double var = 0.0;
        for (size_t j = 0; j < cols; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<double>(cols);
        double is = 1.0 / std::sqrt(var + eps);
        (*inv)[r] = is;
        for (size_t j = 0; j < cols; ++j) {
            double xh = (row[j] - mean) * is;
            (*xhat)[r * cols + j] = xh;
            out->value[r * cols + j] = gn->value[j] * xh + bn->value[j];
        }
    }
    bool need = tracks(x) || tracks(gamma) || tracks(beta);
    return finish(out, need, [xn, gn, bn, on = out, xhat, inv, rows, cols] {
        const auto* g = out_grad(on);
        if (!g) return;
        if (wants(gn)) {
            gn->ensure_grad();
            for (size_t r = 0; r < rows; ++r)
                for (size_t j = 0; j < cols; ++j) gn->grad[j] += (*g)[r * cols + j] * (*xhat)[r * cols + j];
        }
        if (wants(bn)) {
            bn->ensure_grad();
            for (size_t r = 0; r < rows; ++r)
                for (size_t j = 0; j < cols; ++j) bn->grad[j] += (*g)[r * cols + j];
        }
        if (wants(xn)) {
            xn->ensure_grad();
            for (size_t r = 0; r < rows; ++r) {
                double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                for (size_t j = 0; j < cols; ++j) {
                    double dxh = (*g)[r * cols + j] * gn->value[j];
                    mean_dxhat += dxh;
                    mean_dxhat_xhat += dxh * (*xhat)[r * cols + j];
                }
                mean_dxhat /= static_cast<double>(cols);
                mean_dxhat_xhat /= static_cast<double>(cols);
                for (size_t j = 0; j < cols; ++j) {
                    double dxh = (*g)[r * cols + j] * gn->value[j];
                    xn->grad[r * cols + j] +=
                        (*inv)[r] * (dxh - mean_dxhat - (*xhat)[r * cols + j] * mean_dxhat_xhat);
                }
            }
        }
    });
}

Tensor softmax_rows(const Tensor& x) {
    auto xn = x.node();
    size_t rows = xn->rows, cols = xn->cols;
    auto out = new_node(rows, cols);
    for (size_t r = 0; r < rows; ++r) {
        const double* row = xn->value.data() + r * cols;
        double mx = row[0];
        for (size_t j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (size_t j = 0; j < cols; ++j) {
            double e = std::exp(row[j] - mx);
            out->value[r * cols + j] = e;
            sum += e;
        }
        for (size_t j = 0; j < cols; ++j) out->value[r * cols + j] /= sum;
    }
    return finish(out, tracks(x), [xn, on = out, rows, cols] {
        const auto* g = out_grad(on);
        if (!g || !wants(xn)) return;
        xn->ensure_grad();
        for (size_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (size_t j = 0; j < cols; ++j) dot += (*g)[r * cols + j] * on->value[r * cols + j];
            for (size_t j = 0; j < cols; ++j) {
                double p = on->value[r * cols + j];
                xn->grad[r * cols + j] += p * ((*g)[r * cols + j] - dot);
            }
        }
    });
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
    auto ln = logits.node();
    size_t rows = ln->rows, cols = ln->cols;
    if (targets.size() != rows)
        throw DimensionError("softmax_cross_entropy: " + std::to_string(targets.size()) +
                             " targets for " + std::to_string(rows) + " rows");
    for (int t : targets)
        if (t < 0 || static_cast<size_t>(t) >= cols)
            throw IndexError("softmax_cross_entropy: target " + std::to_string(t) +
                             " out of range [0, " + std::to_string(cols) + ")");
    auto probs = std::make_shared<std::vector<double>>(rows * cols);
    double loss = 0.0;
    for (size_t r = 0; r < rows; ++r) {
        const double* row = ln->value.data() + r * cols;
        double mx = row[0];
        for (size_t j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (size_t j = 0; j < cols; ++j) {
            double e = std::exp(row[j] - mx);
            (*probs)[r * cols + j] = e;
            sum += e;
        }
        double logsum = std::log(sum);
        for (size_t j = 0; j < cols; ++j) (*probs)[r * cols + j] /= sum;
        size_t t = static_cast<size_t>(targets[r]);
        loss += -(row[t] - mx - logsum);
    }
    loss /= static_cast<double>(rows);
    auto out = new_node(1, 1);
    out->value[0] = loss;
    return finish(out, tracks(logits), [ln, on = out, probs, targets, rows, cols] {
        const auto* g = out_grad(on);
        if (!g || !wants(ln)) return;
        ln->ensure_grad();
        double scale = (*g)[0] / static_cast<double>(rows);
        for (size_t r = 0; r < rows; ++r)
            for (size_t j = 0; j < cols; ++j) {
                double p = (*probs)[r * cols + j];
                double onehot = (static_cast<size_t>(targets[r]) == j) ? 1.0 : 0.0;
                ln->grad[r * cols + j] += scale * (p - onehot);
            }
    });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    auto an = a.node(), bn = b.node();
    if (an->rows != bn->rows) throw_dim("concat_cols", *an, *bn);
    size_t rows = an->rows, ca = an->cols, cb = bn->cols;
    auto out = new_node(rows, ca + cb);
    for (size_t r = 0; r < rows; ++r) {
        for (size_t j = 0; j < ca; ++j) out->value[r * (ca + cb) + j] = an->value[r * ca + j];
        for (size_t j = 0; j < cb; ++j) out->value[r * (ca + cb) + ca + j] = bn->value[r * cb + j];
    }
    return finish(out, tracks(a) || tracks(b), [an, bn, on = out, rows, ca, cb] {
        const auto* g = out_grad(on);
        if (!g) return;
        if (wants(an)) {
            an->ensure_grad();
            for (size_t r = 0; r < rows; ++r)
                for (size_t j = 0; j < ca; ++j) an->grad[r * ca + j] += (*g)[r * (ca + cb) + j];
        }
        if (wants(bn)) {
            bn->ensure_grad();
            for (size_t r = 0; r < rows; ++r)
                for (size_t j = 0; j < cb; ++j) bn->grad[r * cb + j] += (*g)[r * (ca + cb) + ca + j];
        }
    });
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
    auto an = a.node(), bn = b.node();
    if (an->cols != bn->cols) throw_dim("concat_rows", *an, *bn);
    size_t cols = an->cols, ra = an->rows, rb = bn->rows;
    auto out = new_node(ra + rb, cols);
    std::copy(an->value.begin(), an->value.end(), out->value.begin());
    std::copy(bn->value.begin(), bn->value.end(), out->value.begin() + ra * cols);
    return finish(out, tracks(a) || tracks(b), [an, bn, on = out, ra, rb, cols] {
        const auto* g = out_grad(on);
        if (!g) return;
        if (wants(an)) {
            an->ensure_grad();
            for (size_t i = 0; i < ra * cols; ++i) an->grad[i] += (*g)[i];
        }
        if (wants(bn)) {
            bn->ensure_grad();
            for (size_t i = 0; i < rb * cols; ++i) bn->grad[i] += (*g)[ra * cols + i];
        }
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ArgumentError("concat_rows: no parts");
    Tensor acc = parts[0];
    for (size_t i = 1; i < parts.size(); ++i) acc = concat_rows(acc, parts[i]);
    return acc;
}

Tensor transpose(const Tensor& a) {
    auto an = a.node();
    size_t rows = an->rows, cols = an->cols;
    auto out = new_node(cols, rows);
    for (size_t r = 0; r < rows; ++r)
        for (size_t j = 0; j < cols; ++j) out->value[j * rows + r] = an->value[r * cols + j];
    return finish(out, tracks(a), [an, on = out, rows, cols] {
        const auto* g = out_grad(on);
        if (!g || !wants(an)) return;
        an->ensure_grad();
        for (size_t r = 0; r < rows; ++r)
            for (size_t j = 0; j < cols; ++j) an->grad[r * cols + j] += (*g)[j * rows + r];
    });
}

Tensor slice_cols(const Tensor& a, size_t start, size_t count) {
    auto an = a.node();
    if (start + count > an->cols)
        throw IndexError("slice_cols: [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") exceeds " + std::to_string(an->cols) +
                         " columns");
    size_t rows = an->rows, cols = an->cols;
    auto out = new_node(rows, count);
    for (size_t r = 0; r < rows; ++r)
        for (size_t j = 0; j < count; ++j) out->value[r * count + j] = an->value[r * cols + start + j];
    return finish(out, tracks(a), [an, on = out, rows, cols, start, count] {
        const auto* g = out_grad(on);
        if (!g || !wants(an)) return;
        an->ensure_grad();
        for (size_t r = 0; r < rows; ++r)
            for (size_t j = 0; j < count; ++j) an->grad[r * cols + start + j] += (*g)[r * count + j];
    });
}

Tensor mean_rows(const Tensor& a) {
    auto an = a.node();
    size_t rows = an->rows, cols = an->cols;
    auto out = new_node(1, cols);
    for (size_t r = 0; r < rows; ++r)
        for (size_t j = 0; j < cols; ++j) out->value[j] += an->value[r * cols + j];
    for (size_t j = 0; j < cols; ++j) out->value[j] /= static_cast<double>(rows);
    return finish(out, tracks(a), [an, on = out, rows, cols] {
        const auto* g = out_grad(on);
        if (!g || !wants(an)) return;
        an->ensure_grad();
        double inv = 1.0 / static_cast<double>(rows);
        for (size_t r = 0; r < rows; ++r)
            for (size_t j = 0; j < cols; ++j) an->grad[r * cols + j] += (*g)[j] * inv;
    });
}

Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids) {
    auto tn = table.node();
    size_t vocab = tn->rows, dim = tn->cols;
    for (int id : ids)
        if (id < 0 || static_cast<size_t>(id) >= vocab)
            throw IndexError("embedding_rows: id " + std::to_string(id) + " out of range [0, " +
                             std::to_string(vocab) + ")");
    auto out = new_node(ids.size(), dim);
    for (size_t r = 0; r < ids.size(); ++r)
        std::copy(tn->value.begin() + static_cast<size_t>(ids[r]) * dim,
                  tn->value.begin() + (static_cast<size_t>(ids[r]) + 1) * dim,
                  out->value.begin() + r * dim);
    return finish(out, tracks(table), [tn, on = out, ids, dim] {
        const auto* g = out_grad(on);
        if (!g || !wants(tn)) return;
        tn->ensure_grad();
        for (size_t r = 0; r < ids.size(); ++r)
            for (size_t j = 0; j < dim; ++j)
                tn->grad[static_cast<size_t>(ids[r]) * dim + j] += (*g)[r * dim + j];
    });
}

}  // namespace alora
