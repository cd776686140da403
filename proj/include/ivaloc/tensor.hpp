#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ivaloc/error.hpp"

namespace ivaloc {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major value tensor. Carries an optional gradient buffer so it can
/// act as a leaf of a differentiation tape.
struct Tensor {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;

    Tensor() = default;
    explicit Tensor(Shape s, double fill = 0.0);
    Tensor(Shape s, std::vector<double> values);

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::span<double> row(std::size_t r);
    std::span<const double> row(std::size_t r) const;
    double& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }
};

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
public:
    Var() = default;

    const Shape& shape() const;
    std::size_t size() const;
    std::span<const double> value() const;
    double item() const;
    Tensor to_tensor() const;

    Tape* tape() const { return tape_; }
    std::size_t id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Reverse-mode differentiation tape. Nodes are appended in evaluation order,
/// so the node list is always topologically sorted; backward walks it once in
/// reverse. A tape is single-use: a second backward() is a contract error.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Leaf holding a copy of `t`.
    Var leaf(const Tensor& t);
    Var leaf(Shape shape, std::vector<double> values, bool requires_grad = false);
    /// Leaf viewing external storage that must outlive the tape.
    Var view(const Shape& shape, std::span<const double> values, bool requires_grad);

    Var record(std::string op, Shape shape, std::vector<double> values,
               std::vector<std::size_t> inputs, BackwardFn backward);

    void backward(const Var& loss);
    bool backward_done() const { return backward_done_; }

    /// d(loss)/d(var) after backward(); zeros for nodes that did not reach the loss.
    std::span<const double> grad(const Var& v) const;

    std::size_t node_count() const { return nodes_.size(); }

    // Used by backward rules.
    std::span<const double> value_of(std::size_t id) const;
    const Shape& shape_of(std::size_t id) const { return nodes_[id].shape; }
    std::span<double> grad_of(std::size_t id) { return nodes_[id].grad; }
    bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }

private:
    struct Node {
        std::string op;
        Shape shape;
        std::vector<double> value;
        std::span<const double> external;
        bool is_view = false;
        bool requires_grad = false;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        std::vector<double> grad;
    };

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

// ---------------------------------------------------------------------------
// Primitives. All inputs must live on the same tape.

/// "Same" zero-padded stride-1 convolution. x: Cin x L, w: Cout x Cin x K (K odd), b: Cout.
Var conv1d(const Var& x, const Var& w, const Var& b);
/// Max pooling along the last axis of a C x L tensor; trailing remainder is dropped.
Var maxpool1d(const Var& x, std::size_t window = 2, std::size_t stride = 2);
/// w * x + b, with x of length n, w m x n, b m.
Var dense(const Var& x, const Var& w, const Var& b);
/// w * x without bias.
Var matvec(const Var& w, const Var& x);
/// Applies dense() to every row of X (T x n) -> T x m.
Var dense_rows(const Var& x, const Var& w, const Var& b);

Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);

Var tanh(const Var& x);
Var sigmoid(const Var& x);
Var leaky_relu(const Var& x, double slope = 0.01);
/// Softmax over `axis` of a rank-1 or rank-2 tensor.
Var softmax(const Var& x, std::size_t axis = 0);

/// Inverted dropout: survivors are scaled by 1/(1-p) during training, identity otherwise.
Var dropout(const Var& x, double p, bool training, Rng& rng);

Var slice(const Var& x, std::size_t offset, std::size_t length);
Var concat(std::span<const Var> parts);
Var row(const Var& x, std::size_t r);
Var stack_rows(std::span<const Var> rows);
Var transpose(const Var& x);
Var reshape(const Var& x, Shape shape);
/// Mean over the last axis of a C x L tensor -> C.
Var mean_last_axis(const Var& x);
/// sum_t weights[t] * x[t, :] for x: T x n, weights: T.
Var weighted_sum_rows(const Var& x, const Var& weights);
Var sum(const Var& x);
/// Binary cross-entropy of a scalar logit against label y in {0,1}, in the
/// overflow-safe form softplus(z) - y*z.
Var bce_with_logits(const Var& logit, double label);

struct LstmWeights {
    Var input;      // 4H x D, gate blocks ordered i, f, g, o
    Var recurrent;  // 4H x H
    Var bias;       // 4H
};

struct LstmState {
    Var h;
    Var c;
};

/// One step of a standard LSTM cell.
LstmState lstm_cell_step(const Var& x, const LstmState& prev, const LstmWeights& w);
/// Cell update from precomputed gate pre-activations (W x + b) plus U h_prev.
LstmState lstm_cell_from_projection(const Var& projected, const LstmState& prev, const Var& recurrent);

// ---------------------------------------------------------------------------
// Gradient verification.

using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

struct FiniteDiffOptions {
    double step = 1e-5;
    /// Coordinates probed per input tensor; 0 probes all of them.
    std::size_t max_coords_per_input = 0;
    std::uint64_t seed = 0;
};

/// Max over probed coordinates of |analytic - central difference| / max(1, |central difference|).
double finite_diff_check(const ScalarFn& f, const std::vector<Tensor>& point,
                         const FiniteDiffOptions& options = {});

}  // namespace ivaloc
