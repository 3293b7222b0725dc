#include "actnet/tensor.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace actnet {

using detail::Node;

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

namespace {

thread_local std::uint64_t tape_clock = 0;

std::shared_ptr<Node> new_leaf(Shape shape, std::vector<double> values) {
    if (shape_numel(shape) != values.size()) {
        throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match " +
                                    std::to_string(values.size()) + " values");
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->seq = ++tape_clock;
    return node;
}

void check_finite(const std::vector<double>& values, const char* op) {
    for (double v : values) {
        if (!std::isfinite(v)) throw std::domain_error(std::string(op) + ": non-finite value produced");
    }
}

std::vector<double>& grad_of(Node& n) {
    if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
}

Tensor record(const char* op, Shape shape, std::vector<double> value,
              std::vector<std::shared_ptr<Node>> inputs, std::function<void(Node&)> bw) {
    check_finite(value, op);
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->leaf = false;
    node->seq = ++tape_clock;
    const bool tracked = std::any_of(inputs.begin(), inputs.end(),
                                     [](const auto& in) { return in->requires_grad; });
    if (tracked) {
        node->requires_grad = true;
        node->inputs = std::move(inputs);
        node->backward = std::move(bw);
    }
    return Tensor(std::move(node));
}

const Node& nd(const Tensor& t) {
    if (!t.defined()) throw std::invalid_argument("tensor op: undefined tensor");
    return *t.node();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.rank() != rank) {
        throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) +
                                    ", got " + shape_str(t.shape()));
    }
}

// Elementwise unary op with derivative expressed through (input, output).
template <class F, class D>
Tensor unary(const char* op, const Tensor& x, F f, D dfdx) {
    const auto& xv = nd(x).value;
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
    return record(op, x.shape(), std::move(out), {x.node()}, [dfdx](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad) return;
        auto& gi = grad_of(in);
        for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += self.grad[i] * dfdx(in.value[i], self.value[i]);
    });
}

std::size_t last_dim(const Tensor& t) { return t.rank() == 0 ? 1 : t.shape().back(); }

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor() = default;

Tensor Tensor::zeros(Shape shape) {
    const auto n = shape_numel(shape);
    return Tensor(new_leaf(std::move(shape), std::vector<double>(n, 0.0)));
}

Tensor Tensor::full(Shape shape, double value) {
    const auto n = shape_numel(shape);
    return Tensor(new_leaf(std::move(shape), std::vector<double>(n, value)));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
    check_finite(values, "Tensor::from");
    return Tensor(new_leaf(std::move(shape), std::move(values)));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return from({rows, cols}, std::move(values));
}

const Shape& Tensor::shape() const { return nd(*this).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) throw std::out_of_range("Tensor::dim: axis out of range");
    return s[axis];
}

std::size_t Tensor::numel() const { return nd(*this).value.size(); }

std::span<const double> Tensor::data() const { return nd(*this).value; }

std::span<double> Tensor::mutable_data() {
    if (!is_leaf()) throw std::logic_error("Tensor::mutable_data: only leaf tensors are writable");
    return node_->value;
}

double Tensor::item() const {
    if (numel() != 1) throw std::invalid_argument("Tensor::item: tensor has " + std::to_string(numel()) + " elements");
    return data()[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
    require_rank(*this, 2, "Tensor::at");
    return data()[r * shape()[1] + c];
}

bool Tensor::requires_grad() const { return nd(*this).requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
    if (!is_leaf()) throw std::logic_error("set_requires_grad: only leaf tensors can be toggled");
    node_->requires_grad = on;
    if (on) grad_of(*node_);
    return *this;
}

bool Tensor::is_leaf() const { return nd(*this).leaf; }

std::span<const double> Tensor::grad() const {
    if (!requires_grad()) throw std::logic_error("Tensor::grad: tensor is detached from the tape");
    return grad_of(*node_);
}

std::span<double> Tensor::mutable_grad() {
    if (!requires_grad()) throw std::logic_error("Tensor::mutable_grad: tensor is detached from the tape");
    return grad_of(*node_);
}

void Tensor::zero_grad() {
    if (node_ && node_->requires_grad) grad_of(*node_).assign(node_->value.size(), 0.0);
}

Tensor Tensor::detach() const { return Tensor(new_leaf(shape(), nd(*this).value)); }

Tensor Tensor::clone() const { return detach(); }

// ---------------------------------------------------------------------------
// Backward

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw std::invalid_argument("backward: loss must be a scalar");
    }
    if (!loss.requires_grad()) {
        throw std::logic_error("backward: loss is not on the tape (nothing requires grad)");
    }
    Node* root = loss.node().get();
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{root};
    seen.insert(root);
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (const auto& in : n->inputs) {
            if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in.get());
        }
    }
    std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->seq > b->seq; });
    for (Node* n : order) {
        if (!n->leaf) n->grad.assign(n->value.size(), 0.0);
    }
    grad_of(*root)[0] += 1.0;
    for (Node* n : order) {
        if (!n->leaf && n->backward) n->backward(*n);
    }
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    const auto& av = nd(a).value;
    const auto& bv = nd(b).value;
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return record("add", a.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
        for (auto& in : self.inputs) {
            if (!in->requires_grad) continue;
            auto& g = grad_of(*in);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    const auto& av = nd(a).value;
    const auto& bv = nd(b).value;
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    return record("sub", a.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
        if (self.inputs[0]->requires_grad) {
            auto& g = grad_of(*self.inputs[0]);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (self.inputs[1]->requires_grad) {
            auto& g = grad_of(*self.inputs[1]);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    const auto& av = nd(a).value;
    const auto& bv = nd(b).value;
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return record("mul", a.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
        Node& a = *self.inputs[0];
        Node& b = *self.inputs[1];
        if (a.requires_grad) {
            auto& g = grad_of(a);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * b.value[i];
        }
        if (b.requires_grad) {
            auto& g = grad_of(b);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * a.value[i];
        }
    });
}

Tensor scale(const Tensor& a, double factor) {
    return unary("scale", a, [factor](double x) { return x * factor; },
                 [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
    return unary("add_scalar", a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
    require_rank(x, 2, "add_row_bias");
    const std::size_t n = x.dim(0), f = x.dim(1);
    if (bias.numel() != f) throw std::invalid_argument("add_row_bias: bias size mismatch");
    const auto& xv = nd(x).value;
    const auto& bv = nd(bias).value;
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < f; ++j) out[i * f + j] = xv[i * f + j] + bv[j];
    return record("add_row_bias", x.shape(), std::move(out), {x.node(), bias.node()}, [n, f](Node& self) {
        if (self.inputs[0]->requires_grad) {
            auto& g = grad_of(*self.inputs[0]);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (self.inputs[1]->requires_grad) {
            auto& g = grad_of(*self.inputs[1]);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < f; ++j) g[j] += self.grad[i * f + j];
        }
    });
}

Tensor mul_col(const Tensor& x, const Tensor& c) {
    require_rank(x, 2, "mul_col");
    const std::size_t n = x.dim(0), f = x.dim(1);
    if (c.numel() != n) throw std::invalid_argument("mul_col: column size mismatch");
    const auto& xv = nd(x).value;
    const auto& cv = nd(c).value;
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < f; ++j) out[i * f + j] = xv[i * f + j] * cv[i];
    return record("mul_col", x.shape(), std::move(out), {x.node(), c.node()}, [n, f](Node& self) {
        Node& x = *self.inputs[0];
        Node& c = *self.inputs[1];
        if (x.requires_grad) {
            auto& g = grad_of(x);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < f; ++j) g[i * f + j] += self.grad[i * f + j] * c.value[i];
        }
        if (c.requires_grad) {
            auto& g = grad_of(c);
            for (std::size_t i = 0; i < n; ++i) {
                double acc = 0.0;
                for (std::size_t j = 0; j < f; ++j) acc += self.grad[i * f + j] * x.value[i * f + j];
                g[i] += acc;
            }
        }
    });
}

Tensor mul_scalar_tensor(const Tensor& a, const Tensor& s) {
    if (s.numel() != 1) throw std::invalid_argument("mul_scalar_tensor: scale must have one element");
    const auto& av = nd(a).value;
    const double k = nd(s).value[0];
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * k;
    return record("mul_scalar_tensor", a.shape(), std::move(out), {a.node(), s.node()}, [](Node& self) {
        Node& a = *self.inputs[0];
        Node& s = *self.inputs[1];
        if (a.requires_grad) {
            auto& g = grad_of(a);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s.value[0];
        }
        if (s.requires_grad) {
            double acc = 0.0;
            for (std::size_t i = 0; i < a.value.size(); ++i) acc += self.grad[i] * a.value[i];
            grad_of(s)[0] += acc;
        }
    });
}

Tensor relu(const Tensor& x) {
    return unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
                 [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& x) {
    return unary("tanh", x, [](double v) { return std::tanh(v); },
                 [](double, double out) { return 1.0 - out * out; });
}

Tensor sigmoid(const Tensor& x) {
    return unary("sigmoid", x,
                 [](double v) {
                     if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
                     const double e = std::exp(v);
                     return e / (1.0 + e);
                 },
                 [](double, double out) { return out * (1.0 - out); });
}

Tensor square(const Tensor& x) {
    return unary("square", x, [](double v) { return v * v; }, [](double in, double) { return 2.0 * in; });
}

Tensor reciprocal(const Tensor& x) {
    return unary("reciprocal", x, [](double v) { return 1.0 / v; }, [](double, double out) { return -out * out; });
}

Tensor log_clamped(const Tensor& x, double floor) {
    return unary("log_clamped", x, [floor](double v) { return std::log(std::max(v, floor)); },
                 [floor](double in, double) { return in > floor ? 1.0 / in : 0.0; });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
    const auto& xv = nd(x).value;
    double acc = 0.0;
    for (double v : xv) acc += v;
    return record("sum", {1}, {acc}, {x.node()}, [](Node& self) {
        auto& g = grad_of(*self.inputs[0]);
        for (double& gi : g) gi += self.grad[0];
    });
}

Tensor mean(const Tensor& x) {
    const auto& xv = nd(x).value;
    if (xv.empty()) throw std::invalid_argument("mean: empty tensor");
    double acc = 0.0;
    for (double v : xv) acc += v;
    const double n = static_cast<double>(xv.size());
    return record("mean", {1}, {acc / n}, {x.node()}, [n](Node& self) {
        auto& g = grad_of(*self.inputs[0]);
        for (double& gi : g) gi += self.grad[0] / n;
    });
}

Tensor sum_rows(const Tensor& x) {
    require_rank(x, 2, "sum_rows");
    const std::size_t n = x.dim(0), f = x.dim(1);
    const auto& xv = nd(x).value;
    std::vector<double> out(f, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < f; ++j) out[j] += xv[i * f + j];
    return record("sum_rows", {1, f}, std::move(out), {x.node()}, [n, f](Node& self) {
        auto& g = grad_of(*self.inputs[0]);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < f; ++j) g[i * f + j] += self.grad[j];
    });
}

Tensor mean_rows(const Tensor& x) {
    require_rank(x, 2, "mean_rows");
    const std::size_t n = x.dim(0), f = x.dim(1);
    if (n == 0) throw std::invalid_argument("mean_rows: no rows");
    const auto& xv = nd(x).value;
    std::vector<double> out(f, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < f; ++j) out[j] += xv[i * f + j];
    const double inv = 1.0 / static_cast<double>(n);
    for (double& v : out) v *= inv;
    return record("mean_rows", {1, f}, std::move(out), {x.node()}, [n, f, inv](Node& self) {
        auto& g = grad_of(*self.inputs[0]);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < f; ++j) g[i * f + j] += self.grad[j] * inv;
    });
}

Tensor sum_cols(const Tensor& x) {
    require_rank(x, 2, "sum_cols");
    const std::size_t n = x.dim(0), f = x.dim(1);
    const auto& xv = nd(x).value;
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < f; ++j) out[i] += xv[i * f + j];
    return record("sum_cols", {n, 1}, std::move(out), {x.node()}, [n, f](Node& self) {
        auto& g = grad_of(*self.inputs[0]);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < f; ++j) g[i * f + j] += self.grad[i];
    });
}

// ---------------------------------------------------------------------------
// Linear algebra and shape

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw std::invalid_argument("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
    }
    const auto& av = nd(a).value;
    const auto& bv = nd(b).value;
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double* orow = &out[i * n];
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            const double* brow = &bv[p * n];
            for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
        }
    }
    return record("matmul", {m, n}, std::move(out), {a.node(), b.node()}, [m, k, n](Node& self) {
        Node& a = *self.inputs[0];
        Node& b = *self.inputs[1];
        const auto& g = self.grad;
        if (a.requires_grad) {
            auto& ga = grad_of(a);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * b.value[p * n + j];
                    ga[i * k + p] += acc;
                }
        }
        if (b.requires_grad) {
            auto& gb = grad_of(b);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double aip = a.value[i * k + p];
                    double* grow = &gb[p * n];
                    for (std::size_t j = 0; j < n; ++j) grow[j] += aip * g[i * n + j];
                }
        }
    });
}

Tensor transpose(const Tensor& a) {
    require_rank(a, 2, "transpose");
    const std::size_t r = a.dim(0), c = a.dim(1);
    const auto& av = nd(a).value;
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
    return record("transpose", {c, r}, std::move(out), {a.node()}, [r, c](Node& self) {
        auto& g = grad_of(*self.inputs[0]);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw std::invalid_argument("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
    }
    return record("reshape", std::move(shape), nd(x).value, {x.node()}, [](Node& self) {
        auto& g = grad_of(*self.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

// ---------------------------------------------------------------------------
// Softmax family

namespace {

std::vector<double> softmax_rows(const std::vector<double>& x, std::size_t cols) {
    std::vector<double> out(x.size());
    const std::size_t rows = cols ? x.size() / cols : 0;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = &x[r * cols];
        double* o = &out[r * cols];
        const double mx = *std::max_element(in, in + cols);
        double z = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            o[j] = std::exp(in[j] - mx);
            z += o[j];
        }
        for (std::size_t j = 0; j < cols; ++j) o[j] /= z;
    }
    return out;
}

std::vector<double> log_softmax_rows(const std::vector<double>& x, std::size_t cols) {
    std::vector<double> out(x.size());
    const std::size_t rows = cols ? x.size() / cols : 0;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = &x[r * cols];
        double* o = &out[r * cols];
        const double mx = *std::max_element(in, in + cols);
        double z = 0.0;
        for (std::size_t j = 0; j < cols; ++j) z += std::exp(in[j] - mx);
        const double lz = std::log(z);
        for (std::size_t j = 0; j < cols; ++j) o[j] = in[j] - mx - lz;
    }
    return out;
}

}  // namespace

Tensor softmax(const Tensor& logits) {
    const std::size_t cols = last_dim(logits);
    if (cols == 0) throw std::invalid_argument("softmax: empty class axis");
    auto out = softmax_rows(nd(logits).value, cols);
    return record("softmax", logits.shape(), std::move(out), {logits.node()}, [cols](Node& self) {
        auto& g = grad_of(*self.inputs[0]);
        const std::size_t rows = self.value.size() / cols;
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = &self.value[r * cols];
            const double* gy = &self.grad[r * cols];
            double dot = 0.0;
            for (std::size_t j = 0; j < cols; ++j) dot += gy[j] * y[j];
            for (std::size_t j = 0; j < cols; ++j) g[r * cols + j] += y[j] * (gy[j] - dot);
        }
    });
}

Tensor log_softmax(const Tensor& logits) {
    const std::size_t cols = last_dim(logits);
    if (cols == 0) throw std::invalid_argument("log_softmax: empty class axis");
    auto out = log_softmax_rows(nd(logits).value, cols);
    return record("log_softmax", logits.shape(), std::move(out), {logits.node()}, [cols](Node& self) {
        auto& g = grad_of(*self.inputs[0]);
        const std::size_t rows = self.value.size() / cols;
        for (std::size_t r = 0; r < rows; ++r) {
            double gsum = 0.0;
            for (std::size_t j = 0; j < cols; ++j) gsum += self.grad[r * cols + j];
            for (std::size_t j = 0; j < cols; ++j) {
                g[r * cols + j] += self.grad[r * cols + j] - std::exp(self.value[r * cols + j]) * gsum;
            }
        }
    });
}

Tensor soft_target_cross_entropy(const Tensor& logits, const Tensor& targets) {
    require_rank(logits, 2, "soft_target_cross_entropy");
    require_same_shape(logits, targets, "soft_target_cross_entropy");
    if (targets.requires_grad()) {
        throw std::invalid_argument("soft_target_cross_entropy: targets must be constant");
    }
    const std::size_t b = logits.dim(0), m = logits.dim(1);
    if (b == 0 || m == 0) throw std::invalid_argument("soft_target_cross_entropy: empty batch");
    const auto logp = log_softmax_rows(nd(logits).value, m);
    const auto& t = nd(targets).value;
    double total = 0.0;
    for (std::size_t r = 0; r < b; ++r) {
        double row = 0.0;
        for (std::size_t j = 0; j < m; ++j) row += t[r * m + j] * logp[r * m + j];
        total += row;
    }
    const double bn = static_cast<double>(b);
    auto tcopy = t;
    return record("soft_target_cross_entropy", {1}, {-total / bn}, {logits.node()},
                  [logp, tcopy, b, m, bn](Node& self) {
                      auto& g = grad_of(*self.inputs[0]);
                      const double gs = self.grad[0] / bn;
                      for (std::size_t r = 0; r < b; ++r) {
                          double tsum = 0.0;
                          for (std::size_t j = 0; j < m; ++j) tsum += tcopy[r * m + j];
                          for (std::size_t j = 0; j < m; ++j) {
                              const double p = std::exp(logp[r * m + j]);
                              g[r * m + j] += gs * (p * tsum - tcopy[r * m + j]);
                          }
                      }
                  });
}

// ---------------------------------------------------------------------------
// Gather / concat

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    const std::size_t n = parts[0].dim(0);
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    std::vector<std::shared_ptr<Node>> inputs;
    for (const auto& p : parts) {
        require_rank(p, 2, "concat_cols");
        if (p.dim(0) != n) throw std::invalid_argument("concat_cols: row count mismatch");
        widths.push_back(p.dim(1));
        total += p.dim(1);
        inputs.push_back(p.node());
    }
    std::vector<double> out(n * total);
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto& v = nd(parts[k]).value;
        for (std::size_t i = 0; i < n; ++i)
            std::copy_n(&v[i * widths[k]], widths[k], &out[i * total + off]);
        off += widths[k];
    }
    return record("concat_cols", {n, total}, std::move(out), std::move(inputs), [n, widths, total](Node& self) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < self.inputs.size(); ++k) {
            if (self.inputs[k]->requires_grad) {
                auto& g = grad_of(*self.inputs[k]);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < widths[k]; ++j) g[i * widths[k] + j] += self.grad[i * total + off + j];
            }
            off += widths[k];
        }
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
    const std::size_t f = parts[0].dim(1);
    std::size_t rows = 0;
    std::vector<std::shared_ptr<Node>> inputs;
    std::vector<double> out;
    for (const auto& p : parts) {
        require_rank(p, 2, "concat_rows");
        if (p.dim(1) != f) throw std::invalid_argument("concat_rows: column count mismatch");
        rows += p.dim(0);
        inputs.push_back(p.node());
        const auto& v = nd(p).value;
        out.insert(out.end(), v.begin(), v.end());
    }
    return record("concat_rows", {rows, f}, std::move(out), std::move(inputs), [](Node& self) {
        std::size_t off = 0;
        for (auto& in : self.inputs) {
            const std::size_t len = in->value.size();
            if (in->requires_grad) {
                auto& g = grad_of(*in);
                for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[off + i];
            }
            off += len;
        }
    });
}

Tensor broadcast_rows(const Tensor& row, std::size_t n) {
    const std::size_t f = row.numel();
    const auto& rv = nd(row).value;
    std::vector<double> out(n * f);
    for (std::size_t i = 0; i < n; ++i) std::copy(rv.begin(), rv.end(), out.begin() + static_cast<std::ptrdiff_t>(i * f));
    return record("broadcast_rows", {n, f}, std::move(out), {row.node()}, [n, f](Node& self) {
        auto& g = grad_of(*self.inputs[0]);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < f; ++j) g[j] += self.grad[i * f + j];
    });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
    require_rank(x, 2, "gather_rows");
    const std::size_t n = x.dim(0), f = x.dim(1);
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    const auto& xv = nd(x).value;
    std::vector<double> out(idx.size() * f);
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] >= n) throw std::out_of_range("gather_rows: row index out of range");
        std::copy_n(&xv[idx[r] * f], f, &out[r * f]);
    }
    return record("gather_rows", {idx.size(), f}, std::move(out), {x.node()}, [idx, f](Node& self) {
        auto& g = grad_of(*self.inputs[0]);
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (std::size_t j = 0; j < f; ++j) g[idx[r] * f + j] += self.grad[r * f + j];
    });
}

Tensor normalize_l2(const Tensor& v) {
    const auto& vv = nd(v).value;
    double sq = 0.0;
    for (double x : vv) sq += x * x;
    const double norm = std::sqrt(sq);
    std::vector<double> out(vv.size(), 0.0);
    if (norm > 0.0)
        for (std::size_t i = 0; i < vv.size(); ++i) out[i] = vv[i] / norm;
    return record("normalize_l2", v.shape(), std::move(out), {v.node()}, [norm](Node& self) {
        if (norm == 0.0) return;
        auto& g = grad_of(*self.inputs[0]);
        double dot = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) dot += self.value[i] * self.grad[i];
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += (self.grad[i] - self.value[i] * dot) / norm;
    });
}

// ---------------------------------------------------------------------------
// Graph aggregation

Tensor scatter_aggregate(const Tensor& x, std::span<const Edge> edges, Aggregation mode) {
    require_rank(x, 2, "scatter_aggregate");
    const std::size_t n = x.dim(0), f = x.dim(1);
    std::vector<Edge> es(edges.begin(), edges.end());
    std::vector<double> scale(n, 1.0);
    if (mode == Aggregation::mean) {
        std::vector<std::size_t> deg(n, 0);
        for (const auto& e : es) {
            if (e.dst < n) ++deg[e.dst];
        }
        for (std::size_t i = 0; i < n; ++i) scale[i] = deg[i] ? 1.0 / static_cast<double>(deg[i]) : 0.0;
    }
    const auto& xv = nd(x).value;
    std::vector<double> out(n * f, 0.0);
    for (const auto& e : es) {
        if (e.src >= n || e.dst >= n) throw std::out_of_range("scatter_aggregate: edge index out of range");
        for (std::size_t j = 0; j < f; ++j) out[e.dst * f + j] += xv[e.src * f + j];
    }
    if (mode == Aggregation::mean)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < f; ++j) out[i * f + j] *= scale[i];
    return record("scatter_aggregate", {n, f}, std::move(out), {x.node()}, [es, scale, f](Node& self) {
        auto& g = grad_of(*self.inputs[0]);
        for (const auto& e : es)
            for (std::size_t j = 0; j < f; ++j) g[e.src * f + j] += self.grad[e.dst * f + j] * scale[e.dst];
    });
}

Tensor spmm(const SparseMatrix& a, const Tensor& x) {
    require_rank(x, 2, "spmm");
    if (x.dim(0) != a.cols) throw std::invalid_argument("spmm: operator columns do not match rows of x");
    if (a.row_ptr.size() != a.rows + 1) throw std::invalid_argument("spmm: malformed CSR row pointer");
    const std::size_t f = x.dim(1);
    const auto& xv = nd(x).value;
    std::vector<double> out(a.rows * f, 0.0);
    for (std::size_t r = 0; r < a.rows; ++r) {
        for (std::size_t p = a.row_ptr[r]; p < a.row_ptr[r + 1]; ++p) {
            const double w = a.weights[p];
            const double* src = &xv[a.col_idx[p] * f];
            double* dst = &out[r * f];
            for (std::size_t j = 0; j < f; ++j) dst[j] += w * src[j];
        }
    }
    // The operator is shared by every layer of a forward pass; capture by pointer-owning copy.
    auto op = std::make_shared<const SparseMatrix>(a);
    return record("spmm", {a.rows, f}, std::move(out), {x.node()}, [op, f](Node& self) {
        auto& g = grad_of(*self.inputs[0]);
        for (std::size_t r = 0; r < op->rows; ++r) {
            for (std::size_t p = op->row_ptr[r]; p < op->row_ptr[r + 1]; ++p) {
                const double w = op->weights[p];
                double* dst = &g[op->col_idx[p] * f];
                const double* src = &self.grad[r * f];
                for (std::size_t j = 0; j < f; ++j) dst[j] += w * src[j];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Convolution

namespace {

// Output positions o in [lo, hi) for which o*stride + offset lands in [0, extent).
std::pair<std::size_t, std::size_t> valid_range(std::size_t out_extent, std::size_t stride, std::ptrdiff_t offset,
                                                std::size_t extent) {
    const auto s = static_cast<std::ptrdiff_t>(stride);
    std::ptrdiff_t lo = 0;
    if (offset < 0) lo = (-offset + s - 1) / s;
    std::ptrdiff_t hi = (static_cast<std::ptrdiff_t>(extent) - 1 - offset);
    hi = hi < 0 ? 0 : hi / s + 1;
    hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(out_extent));
    if (hi < lo) hi = lo;
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, std::size_t stride, std::size_t padding) {
    require_rank(x, 3, "conv2d");
    require_rank(kernel, 4, "conv2d");
    if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
    const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::size_t cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    if (kernel.dim(1) != cin) throw std::invalid_argument("conv2d: kernel input channels do not match input");
    if (kh > h + 2 * padding || kw > w + 2 * padding) {
        throw std::invalid_argument("conv2d: kernel larger than padded input, output would be empty");
    }
    const bool has_bias = bias.defined();
    if (has_bias && bias.numel() != cout) throw std::invalid_argument("conv2d: bias size mismatch");
    const std::size_t ho = (h + 2 * padding - kh) / stride + 1;
    const std::size_t wo = (w + 2 * padding - kw) / stride + 1;
    const auto& xv = nd(x).value;
    const auto& kv = nd(kernel).value;
    const auto pad = static_cast<std::ptrdiff_t>(padding);

    std::vector<double> out(cout * ho * wo, 0.0);
    for (std::size_t co = 0; co < cout; ++co) {
        double* oc = &out[co * ho * wo];
        if (has_bias) std::fill(oc, oc + ho * wo, nd(bias).value[co]);
        for (std::size_t ci = 0; ci < cin; ++ci) {
            const double* xc = &xv[ci * h * w];
            for (std::size_t ki = 0; ki < kh; ++ki) {
                const auto [oh0, oh1] = valid_range(ho, stride, static_cast<std::ptrdiff_t>(ki) - pad, h);
                for (std::size_t kj = 0; kj < kw; ++kj) {
                    const double wt = kv[((co * cin + ci) * kh + ki) * kw + kj];
                    const auto [ow0, ow1] = valid_range(wo, stride, static_cast<std::ptrdiff_t>(kj) - pad, w);
                    for (std::size_t oh = oh0; oh < oh1; ++oh) {
                        const double* xr = xc + (oh * stride + ki - padding) * w;
                        double* orow = oc + oh * wo;
                        for (std::size_t ow = ow0; ow < ow1; ++ow) orow[ow] += wt * xr[ow * stride + kj - padding];
                    }
                }
            }
        }
    }

    std::vector<std::shared_ptr<Node>> inputs{x.node(), kernel.node()};
    if (has_bias) inputs.push_back(bias.node());
    return record("conv2d", {cout, ho, wo}, std::move(out), std::move(inputs),
                  [=](Node& self) {
                      Node& xn = *self.inputs[0];
                      Node& kn = *self.inputs[1];
                      const auto& g = self.grad;
                      std::vector<double>* gx = xn.requires_grad ? &grad_of(xn) : nullptr;
                      std::vector<double>* gk = kn.requires_grad ? &grad_of(kn) : nullptr;
                      for (std::size_t co = 0; co < cout; ++co) {
                          const double* gc = &g[co * ho * wo];
                          for (std::size_t ci = 0; ci < cin; ++ci) {
                              const double* xc = &xn.value[ci * h * w];
                              for (std::size_t ki = 0; ki < kh; ++ki) {
                                  const auto [oh0, oh1] =
                                      valid_range(ho, stride, static_cast<std::ptrdiff_t>(ki) - pad, h);
                                  for (std::size_t kj = 0; kj < kw; ++kj) {
                                      const std::size_t kidx = ((co * cin + ci) * kh + ki) * kw + kj;
                                      const double wt = kn.value[kidx];
                                      const auto [ow0, ow1] =
                                          valid_range(wo, stride, static_cast<std::ptrdiff_t>(kj) - pad, w);
                                      double acc = 0.0;
                                      for (std::size_t oh = oh0; oh < oh1; ++oh) {
                                          const std::size_t row = (oh * stride + ki - padding) * w;
                                          const double* grow = gc + oh * wo;
                                          if (gx) {
                                              double* gxr = gx->data() + ci * h * w + row;
                                              for (std::size_t ow = ow0; ow < ow1; ++ow)
                                                  gxr[ow * stride + kj - padding] += wt * grow[ow];
                                          }
                                          const double* xr = xc + row;
                                          for (std::size_t ow = ow0; ow < ow1; ++ow)
                                              acc += grow[ow] * xr[ow * stride + kj - padding];
                                      }
                                      if (gk) (*gk)[kidx] += acc;
                                  }
                              }
                          }
                      }
                      if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
                          auto& gb = grad_of(*self.inputs[2]);
                          for (std::size_t co = 0; co < cout; ++co) {
                              double acc = 0.0;
                              for (std::size_t i = 0; i < ho * wo; ++i) acc += g[co * ho * wo + i];
                              gb[co] += acc;
                          }
                      }
                  });
}

Tensor global_avg_pool(const Tensor& x) {
    require_rank(x, 3, "global_avg_pool");
    const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
    if (hw == 0) throw std::invalid_argument("global_avg_pool: empty feature map");
    const auto& xv = nd(x).value;
    std::vector<double> out(c, 0.0);
    for (std::size_t k = 0; k < c; ++k) {
        double acc = 0.0;
        for (std::size_t i = 0; i < hw; ++i) acc += xv[k * hw + i];
        out[k] = acc / static_cast<double>(hw);
    }
    return record("global_avg_pool", {1, c}, std::move(out), {x.node()}, [c, hw](Node& self) {
        auto& g = grad_of(*self.inputs[0]);
        const double inv = 1.0 / static_cast<double>(hw);
        for (std::size_t k = 0; k < c; ++k)
            for (std::size_t i = 0; i < hw; ++i) g[k * hw + i] += self.grad[k] * inv;
    });
}

Tensor upsample_nearest2x(const Tensor& x) {
    require_rank(x, 3, "upsample_nearest2x");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const auto& xv = nd(x).value;
    std::vector<double> out(c * 4 * h * w);
    for (std::size_t k = 0; k < c; ++k)
        for (std::size_t i = 0; i < 2 * h; ++i)
            for (std::size_t j = 0; j < 2 * w; ++j) out[(k * 2 * h + i) * 2 * w + j] = xv[(k * h + i / 2) * w + j / 2];
    return record("upsample_nearest2x", {c, 2 * h, 2 * w}, std::move(out), {x.node()}, [c, h, w](Node& self) {
        auto& g = grad_of(*self.inputs[0]);
        for (std::size_t k = 0; k < c; ++k)
            for (std::size_t i = 0; i < 2 * h; ++i)
                for (std::size_t j = 0; j < 2 * w; ++j)
                    g[(k * h + i / 2) * w + j / 2] += self.grad[(k * 2 * h + i) * 2 * w + j];
    });
}

Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng, bool training) {
    if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must lie in [0, 1)");
    if (!training || p == 0.0) return x;
    const auto& xv = nd(x).value;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double keep_scale = 1.0 / (1.0 - p);
    std::vector<double> mask(xv.size());
    for (double& m : mask) m = u(rng) < p ? 0.0 : keep_scale;
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i];
    return record("dropout", x.shape(), std::move(out), {x.node()}, [mask](Node& self) {
        auto& g = grad_of(*self.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
    });
}

// ---------------------------------------------------------------------------
// Parameters

Tensor ParameterSet::add(std::string name, Tensor init) {
    if (find(name)) throw std::invalid_argument("ParameterSet: duplicate parameter name '" + name + "'");
    if (!init.is_leaf()) init = init.detach();
    init.set_requires_grad(true);
    Parameter p;
    p.name = std::move(name);
    p.m.assign(init.numel(), 0.0);
    p.v.assign(init.numel(), 0.0);
    p.value = init;
    params_.push_back(std::move(p));
    return init;
}

const Parameter* ParameterSet::find(const std::string& name) const {
    for (const auto& p : params_)
        if (p.name == name) return &p;
    return nullptr;
}

Parameter* ParameterSet::find(const std::string& name) {
    for (auto& p : params_)
        if (p.name == name) return &p;
    return nullptr;
}

void ParameterSet::zero_grad() {
    for (auto& p : params_) p.value.zero_grad();
}

void ParameterSet::set_requires_grad(bool on) {
    for (auto& p : params_) p.value.set_requires_grad(on);
}

std::size_t ParameterSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
}

Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    std::vector<double> values(shape_numel(shape));
    for (double& v : values) v = u(rng);
    return Tensor::from(std::move(shape), std::move(values));
}

}  // namespace actnet
