#pragma once

// Dense 64-bit tensors with define-by-run reverse-mode differentiation.
//
// Every op that consumes a tensor requiring gradients records a node on the
// calling thread's tape. Nodes carry a per-thread sequence number, so the
// tape order is the execution order; backward() replays the reachable nodes
// in exactly the reverse of that order and accumulates into each input's
// gradient buffer (a tensor used k times receives k contributions).

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace actnet {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    bool leaf = true;
    std::uint64_t seq = 0;
    std::vector<std::shared_ptr<Node>> inputs;
    // Reads this node's grad and accumulates into the inputs' grads.
    std::function<void(Node&)> backward;
};

}  // namespace detail

class Tensor {
public:
    Tensor();

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor from(Shape shape, std::vector<double> values);
    static Tensor scalar(double value);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

    const Shape& shape() const;
    std::size_t dim(std::size_t axis) const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;
    bool defined() const { return static_cast<bool>(node_); }

    std::span<const double> data() const;
    // Mutable storage; only allowed on leaves (parameters, inputs).
    std::span<double> mutable_data();
    double item() const;
    double at(std::size_t i) const { return data()[i]; }
    double at(std::size_t r, std::size_t c) const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool on);
    bool is_leaf() const;

    // Gradient from the most recent backward pass. Throws if this tensor
    // does not require gradients.
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    // Same values, cut from the tape.
    Tensor detach() const;
    Tensor clone() const;

    bool same_node(const Tensor& other) const { return node_ == other.node_; }

    // Internal: used by op implementations.
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    const std::shared_ptr<detail::Node>& node() const { return node_; }

private:
    std::shared_ptr<detail::Node> node_;
};

// Reverse pass from a scalar loss. Leaf gradients accumulate across calls;
// intermediate gradients are reset at the start of every pass.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Ops. Matrices are rank-2 [rows, cols]; feature maps are rank-3 [C, H, W].

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
// x[N,F] + bias broadcast over rows; bias has F elements.
Tensor add_row_bias(const Tensor& x, const Tensor& bias);
// x[N,F] * c[N,1], broadcast along columns.
Tensor mul_col(const Tensor& x, const Tensor& c);
// a * s where s is a one-element tensor.
Tensor mul_scalar_tensor(const Tensor& a, const Tensor& s);

Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor square(const Tensor& x);
Tensor reciprocal(const Tensor& x);
// ln(max(x, floor)); derivative is zero where the clamp is active.
Tensor log_clamped(const Tensor& x, double floor);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// [N,F] -> [1,F]
Tensor sum_rows(const Tensor& x);
Tensor mean_rows(const Tensor& x);
// [N,F] -> [N,1]
Tensor sum_cols(const Tensor& x);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& x, Shape shape);

// Row-wise softmax over the last axis, max-subtracted.
Tensor softmax(const Tensor& logits);
Tensor log_softmax(const Tensor& logits);
// -(1/B) sum_b sum_m targets[b,m] * log_softmax(logits)[b,m]; targets are constant.
Tensor soft_target_cross_entropy(const Tensor& logits, const Tensor& targets);

Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
// [1,F] -> [N,F]
Tensor broadcast_rows(const Tensor& row, std::size_t n);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
// v / ||v||; the zero vector maps to zero.
Tensor normalize_l2(const Tensor& v);

struct Edge {
    std::size_t src = 0;
    std::size_t dst = 0;
    friend bool operator==(const Edge&, const Edge&) = default;
    friend auto operator<=>(const Edge&, const Edge&) = default;
};

enum class Aggregation { sum, mean };

// out[dst] aggregates x[src] over every edge src->dst.
Tensor scatter_aggregate(const Tensor& x, std::span<const Edge> edges, Aggregation mode);

// Constant sparse operator applied as out[row] += weight * x[col].
struct SparseMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::size_t> row_ptr;  // CSR, size rows + 1
    std::vector<std::size_t> col_idx;
    std::vector<double> weights;
};
Tensor spmm(const SparseMatrix& a, const Tensor& x);

// Cross-correlation. x [C_in,H,W], kernel [C_out,C_in,kh,kw], bias [C_out] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, std::size_t stride,
              std::size_t padding);
// [C,H,W] -> [1,C]
Tensor global_avg_pool(const Tensor& x);
// [C,H,W] -> [C,2H,2W]
Tensor upsample_nearest2x(const Tensor& x);

// Inverted dropout; identity when !training or p == 0.
Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng, bool training);

// ---------------------------------------------------------------------------

struct Parameter {
    std::string name;
    Tensor value;
    std::vector<double> m;  // first moment
    std::vector<double> v;  // second moment
};

class ParameterSet {
public:
    // Registers a trainable tensor; names must be unique.
    Tensor add(std::string name, Tensor init);
    std::vector<Parameter>& items() { return params_; }
    const std::vector<Parameter>& items() const { return params_; }
    const Parameter* find(const std::string& name) const;
    Parameter* find(const std::string& name);
    void zero_grad();
    void set_requires_grad(bool on);
    std::size_t scalar_count() const;

private:
    std::vector<Parameter> params_;
};

// Glorot-uniform initialised tensor of the given shape.
Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

}  // namespace actnet
