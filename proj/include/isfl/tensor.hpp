#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "isfl/errors.hpp"

namespace isfl {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string format_shape(const Shape& shape);

namespace detail {

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad; // empty until first touched by backward
    bool requires_grad = false;
};

// Allocates the gradient buffer (zeros) on first access.
std::vector<double>& grad_ref(TensorNode& node);

} // namespace detail

// Dense n-dimensional array of doubles, row-major. Copies are shallow
// handles to the same storage; ops return fresh tensors.
class Tensor {
public:
    Tensor(); // scalar zero, shape {1}
    explicit Tensor(Shape shape); // zeros
    Tensor(Shape shape, std::vector<double> values);
    Tensor(Shape shape, double fill);

    static Tensor scalar(double v);

    const Shape& shape() const { return node_->shape; }
    std::size_t size() const { return node_->data.size(); }
    std::size_t ndim() const { return node_->shape.size(); }

    double* data() { return node_->data.data(); }
    const double* data() const { return node_->data.data(); }
    std::vector<double>& values() { return node_->data; }
    const std::vector<double>& values() const { return node_->data; }

    double item() const; // size-1 tensors only
    double& at(std::initializer_list<std::size_t> index);
    double at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool v) { node_->requires_grad = v; }

    // Gradient accumulated by the most recent backward pass; zeros if the
    // tensor was unreachable from the loss.
    std::vector<double>& grad() { return detail::grad_ref(*node_); }
    const std::vector<double>& grad() const { return detail::grad_ref(*node_); }
    void zero_grad();

    // Deep copy of values (no grad, no requires_grad).
    Tensor clone() const;

    const std::shared_ptr<detail::TensorNode>& node() const { return node_; }

private:
    std::shared_ptr<detail::TensorNode> node_;
};

Tensor randn(Shape shape, double stddev, std::mt19937_64& rng);

// Ordered record of executed ops for one forward pass (define-by-run).
// Constructing a Tape makes it the active tape for the current thread;
// ops record a backward rule on it whenever an input requires grad.
// backward() replays the rules in reverse recording order exactly once,
// accumulating gradients additively into every reachable tensor.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active();

    void record(std::function<void()> backward_rule);
    std::size_t op_count() const { return rules_.size(); }

    void backward(const Tensor& loss);

private:
    std::vector<std::function<void()>> rules_;
    Tape* prev_ = nullptr;
};

// ---- forward ops -----------------------------------------------------
// All ops validate shapes (throwing ShapeError naming both shapes), check
// the result for non-finite values (throwing NumericError), and record a
// backward rule on the active tape when gradients are being tracked.

Tensor add(const Tensor& a, const Tensor& b); // numpy-style broadcasting
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b); // elementwise, broadcasting
Tensor scale(const Tensor& a, double s);
Tensor matmul(const Tensor& a, const Tensor& b); // batched over leading dims

Tensor sigmoid(const Tensor& x);
Tensor tanh_op(const Tensor& x);
Tensor gelu(const Tensor& x); // tanh approximation
Tensor softmax_last(const Tensor& x); // max-subtracted, over last axis
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double epsilon = 1e-5); // population variance, last axis

// table: (V, D); ids: row-major with the given shape; out: id_shape + {D}.
Tensor embedding(const Tensor& table, const std::vector<int>& ids, Shape id_shape);

Tensor reshape(const Tensor& x, Shape shape);
Tensor swap_axes(const Tensor& x, std::size_t axis_a, std::size_t axis_b);
Tensor concat_last(const Tensor& a, const Tensor& b);

// Slice pooling: pick one position along axis 1 of a (B, L, D) tensor.
Tensor select_axis1(const Tensor& x, std::size_t index);
// Mean pooling over axis 1 of a (B, L, D) tensor.
Tensor mean_axis1(const Tensor& x);

Tensor sum_all(const Tensor& x);  // -> shape {1}
Tensor mean_all(const Tensor& x); // -> shape {1}

// Mean cross-entropy of (B, C) logits against integer labels in [0, C).
Tensor cross_entropy_with_logits(const Tensor& logits, const std::vector<int>& labels);

// Inverted dropout; identity when rate == 0.
Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// ---- parameters ------------------------------------------------------

struct Parameter {
    std::string name;
    Tensor value;            // requires_grad = true; gradient lives in value.grad()
    bool weight_decay = true;
};

// Parameters in registration order; order is part of the checkpoint layout.
class ParameterStore {
public:
    Tensor add(std::string name, Shape shape, double init_stddev,
               std::mt19937_64& rng, bool weight_decay = true);
    Tensor add_constant(std::string name, Shape shape, double value,
                        bool weight_decay = true);

    Parameter* find(const std::string& name);
    const Parameter* find(const std::string& name) const;

    std::span<Parameter> list() { return params_; }
    std::span<const Parameter> list() const { return params_; }
    std::size_t count() const { return params_.size(); }

    void zero_grads();
    std::size_t total_values() const;

private:
    Tensor register_param(std::string name, Tensor value, bool weight_decay);
    std::vector<Parameter> params_;
};

// ---- gradient checking -----------------------------------------------

// Max over all entries of all params of
//   |analytic - central_difference| / max(1, |analytic|, |numeric|).
// A non-finite intermediate is reported as +infinity, never thrown.
double check_gradient(const std::function<Tensor()>& f,
                      std::span<Tensor> params, double step);

} // namespace isfl
