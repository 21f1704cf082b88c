#include "isfl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace isfl {

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string format_shape(const Shape& shape) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

namespace detail {

std::vector<double>& grad_ref(TensorNode& node) {
    if (node.grad.size() != node.data.size()) node.grad.assign(node.data.size(), 0.0);
    return node.grad;
}

} // namespace detail

namespace {

using detail::TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

void validate_shape(const Shape& shape) {
    for (std::size_t d : shape) {
        if (d == 0) throw ShapeError("tensor shape has a zero dimension " + format_shape(shape));
    }
}

void check_finite(const std::vector<double>& v, const char* op) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw NumericError(std::string(op) + ": non-finite value produced");
        }
    }
}

bool tracking(std::initializer_list<const Tensor*> inputs) {
    if (!Tape::active()) return false;
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

std::vector<std::size_t> row_strides(const Shape& s) {
    std::vector<std::size_t> st(s.size());
    std::size_t acc = 1;
    for (std::size_t i = s.size(); i-- > 0;) {
        st[i] = acc;
        acc *= s[i];
    }
    return st;
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    const std::size_t rank = std::max(a.size(), b.size());
    Shape out(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (da != db && da != 1 && db != 1) {
            throw ShapeError(std::string(op) + ": shapes " + format_shape(a) + " and " +
                             format_shape(b) + " are not broadcastable");
        }
        out[i] = std::max(da, db);
    }
    return out;
}

// Strides of `in` viewed as broadcast to `out` (0 on broadcast axes).
std::vector<std::size_t> bcast_strides(const Shape& in, const Shape& out) {
    const auto ist = row_strides(in);
    std::vector<std::size_t> st(out.size(), 0);
    const std::size_t pad = out.size() - in.size();
    for (std::size_t i = 0; i < in.size(); ++i) {
        st[pad + i] = (in[i] == 1 && out[pad + i] != 1) ? 0 : ist[i];
    }
    return st;
}

// Visits every element of the broadcast output shape in row-major order,
// passing (out_index, a_offset, b_offset) to f.
template <typename F>
void for_each_bcast(const Shape& out_shape, const std::vector<std::size_t>& sa,
                    const std::vector<std::size_t>& sb, F&& f) {
    const std::size_t n = numel(out_shape);
    const std::size_t rank = out_shape.size();
    std::vector<std::size_t> idx(rank, 0);
    std::size_t ao = 0, bo = 0;
    for (std::size_t i = 0; i < n; ++i) {
        f(i, ao, bo);
        for (std::size_t d = rank; d-- > 0;) {
            ++idx[d];
            ao += sa[d];
            bo += sb[d];
            if (idx[d] < out_shape[d]) break;
            ao -= sa[d] * out_shape[d];
            bo -= sb[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}

// C[m,n] += sum_k A[m,k] * B[k,n]
void mm_nn_acc(double* c, const double* a, const double* b, std::size_t m_dim,
               std::size_t k_dim, std::size_t n_dim) {
    for (std::size_t m = 0; m < m_dim; ++m) {
        double* crow = c + m * n_dim;
        const double* arow = a + m * k_dim;
        for (std::size_t k = 0; k < k_dim; ++k) {
            const double amk = arow[k];
            const double* brow = b + k * n_dim;
            for (std::size_t n = 0; n < n_dim; ++n) crow[n] += amk * brow[n];
        }
    }
}

// C[m,n] += sum_k A[m,k] * B[n,k]   (B used transposed, B is n_dim x k_dim)
void mm_nt_acc(double* c, const double* a, const double* b, std::size_t m_dim,
               std::size_t k_dim, std::size_t n_dim) {
    for (std::size_t m = 0; m < m_dim; ++m) {
        const double* arow = a + m * k_dim;
        double* crow = c + m * n_dim;
        for (std::size_t n = 0; n < n_dim; ++n) {
            const double* brow = b + n * k_dim;
            double s = 0.0;
            for (std::size_t k = 0; k < k_dim; ++k) s += arow[k] * brow[k];
            crow[n] += s;
        }
    }
}

// C[k,n] += sum_m A[m,k] * B[m,n]   (A used transposed, C is k_dim x n_dim)
void mm_tn_acc(double* c, const double* a, const double* b, std::size_t m_dim,
               std::size_t k_dim, std::size_t n_dim) {
    for (std::size_t m = 0; m < m_dim; ++m) {
        const double* arow = a + m * k_dim;
        const double* brow = b + m * n_dim;
        for (std::size_t k = 0; k < k_dim; ++k) {
            const double amk = arow[k];
            double* crow = c + k * n_dim;
            for (std::size_t n = 0; n < n_dim; ++n) crow[n] += amk * brow[n];
        }
    }
}

Tensor binary_elementwise(const Tensor& a, const Tensor& b, const char* op_name,
                          bool is_mul) {
    const Shape out_shape = broadcast_shape(a.shape(), b.shape(), op_name);
    Tensor out(out_shape);
    const auto sa = bcast_strides(a.shape(), out_shape);
    const auto sb = bcast_strides(b.shape(), out_shape);

    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    if (a.shape() == b.shape()) {
        const std::size_t n = out.size();
        if (is_mul) {
            for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
        } else {
            for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
        }
    } else if (is_mul) {
        for_each_bcast(out_shape, sa, sb,
                       [&](std::size_t i, std::size_t ao, std::size_t bo) { po[i] = pa[ao] * pb[bo]; });
    } else {
        for_each_bcast(out_shape, sa, sb,
                       [&](std::size_t i, std::size_t ao, std::size_t bo) { po[i] = pa[ao] + pb[bo]; });
    }
    check_finite(out.values(), op_name);

    if (tracking({&a, &b})) {
        out.set_requires_grad(true);
        NodePtr an = a.node(), bn = b.node(), on = out.node();
        Tape::active()->record([an, bn, on, sa, sb, out_shape, is_mul]() {
            const auto& go = detail::grad_ref(*on);
            const bool need_a = an->requires_grad;
            const bool need_b = bn->requires_grad;
            auto* ga = need_a ? &detail::grad_ref(*an) : nullptr;
            auto* gb = need_b ? &detail::grad_ref(*bn) : nullptr;
            const double* pa = an->data.data();
            const double* pb = bn->data.data();
            for_each_bcast(out_shape, sa, sb, [&](std::size_t i, std::size_t ao, std::size_t bo) {
                if (is_mul) {
                    if (need_a) (*ga)[ao] += go[i] * pb[bo];
                    if (need_b) (*gb)[bo] += go[i] * pa[ao];
                } else {
                    if (need_a) (*ga)[ao] += go[i];
                    if (need_b) (*gb)[bo] += go[i];
                }
            });
        });
    }
    return out;
}

// Shared scaffolding for elementwise unary ops whose derivative can be
// written in terms of input and output values.
Tensor unary_elementwise(const Tensor& x, const char* op_name,
                         const std::function<double(double)>& fwd,
                         const std::function<double(double, double)>& dfdx_from_x_y) {
    Tensor out(x.shape());
    const double* px = x.data();
    double* po = out.data();
    const std::size_t n = x.size();
    for (std::size_t i = 0; i < n; ++i) po[i] = fwd(px[i]);
    check_finite(out.values(), op_name);

    if (tracking({&x})) {
        out.set_requires_grad(true);
        NodePtr xn = x.node(), on = out.node();
        Tape::active()->record([xn, on, dfdx_from_x_y]() {
            const auto& go = detail::grad_ref(*on);
            auto& gx = detail::grad_ref(*xn);
            for (std::size_t i = 0; i < gx.size(); ++i) {
                gx[i] += go[i] * dfdx_from_x_y(xn->data[i], on->data[i]);
            }
        });
    }
    return out;
}

} // namespace

// ---- Tensor ------------------------------------------------------------

Tensor::Tensor() : Tensor(Shape{1}) {}

Tensor::Tensor(Shape shape) : node_(std::make_shared<detail::TensorNode>()) {
    validate_shape(shape);
    node_->data.assign(numel(shape), 0.0);
    node_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : node_(std::make_shared<detail::TensorNode>()) {
    validate_shape(shape);
    if (values.size() != numel(shape)) {
        throw ShapeError("tensor data length " + std::to_string(values.size()) +
                         " does not match shape " + format_shape(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(values);
}

Tensor::Tensor(Shape shape, double fill) : node_(std::make_shared<detail::TensorNode>()) {
    validate_shape(shape);
    node_->data.assign(numel(shape), fill);
    node_->shape = std::move(shape);
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

double Tensor::item() const {
    if (size() != 1) {
        throw ShapeError("item(): tensor of shape " + format_shape(shape()) + " is not a scalar");
    }
    return node_->data[0];
}

double& Tensor::at(std::initializer_list<std::size_t> index) {
    const auto st = row_strides(shape());
    if (index.size() != st.size()) {
        throw ShapeError("at(): index rank " + std::to_string(index.size()) +
                         " does not match shape " + format_shape(shape()));
    }
    std::size_t off = 0, d = 0;
    for (std::size_t i : index) {
        if (i >= shape()[d]) throw ShapeError("at(): index out of range for " + format_shape(shape()));
        off += i * st[d++];
    }
    return node_->data[off];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
    return const_cast<Tensor*>(this)->at(index);
}

void Tensor::zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }

Tensor Tensor::clone() const {
    return Tensor(shape(), values());
}

Tensor randn(Shape shape, double stddev, std::mt19937_64& rng) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : t.values()) v = dist(rng);
    return t;
}

// ---- Tape ----------------------------------------------------------------

namespace {
thread_local Tape* t_active_tape = nullptr;
}

Tape::Tape() : prev_(t_active_tape) { t_active_tape = this; }

Tape::~Tape() { t_active_tape = prev_; }

Tape* Tape::active() { return t_active_tape; }

void Tape::record(std::function<void()> backward_rule) {
    rules_.push_back(std::move(backward_rule));
}

void Tape::backward(const Tensor& loss) {
    if (loss.size() != 1) {
        throw ShapeError("backward: loss must be a scalar, got shape " + format_shape(loss.shape()));
    }
    detail::grad_ref(*loss.node())[0] = 1.0;
    for (auto it = rules_.rbegin(); it != rules_.rend(); ++it) (*it)();
}

// ---- binary ops ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) { return binary_elementwise(a, b, "add", false); }

Tensor mul(const Tensor& a, const Tensor& b) { return binary_elementwise(a, b, "mul", true); }

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor scale(const Tensor& a, double s) {
    return unary_elementwise(
        a, "scale", [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() < 2 || sb.size() < 2) {
        throw ShapeError("matmul: operands must have rank >= 2, got " + format_shape(sa) +
                         " and " + format_shape(sb));
    }
    const std::size_t m_dim = sa[sa.size() - 2];
    const std::size_t k_dim = sa[sa.size() - 1];
    const std::size_t k2 = sb[sb.size() - 2];
    const std::size_t n_dim = sb[sb.size() - 1];
    if (k_dim != k2) {
        throw ShapeError("matmul: inner dimensions differ between " + format_shape(sa) +
                         " and " + format_shape(sb));
    }
    const Shape lead_a(sa.begin(), sa.end() - 2);
    const Shape lead_b(sb.begin(), sb.end() - 2);
    if (!lead_a.empty() && !lead_b.empty() && lead_a != lead_b) {
        throw ShapeError("matmul: batch dimensions differ between " + format_shape(sa) +
                         " and " + format_shape(sb));
    }
    const Shape& lead = lead_a.empty() ? lead_b : lead_a;
    const std::size_t batches = numel(lead);
    const std::size_t stride_a = lead_a.empty() ? 0 : m_dim * k_dim;
    const std::size_t stride_b = lead_b.empty() ? 0 : k_dim * n_dim;

    Shape out_shape = lead;
    out_shape.push_back(m_dim);
    out_shape.push_back(n_dim);
    Tensor out(out_shape);
    for (std::size_t t = 0; t < batches; ++t) {
        mm_nn_acc(out.data() + t * m_dim * n_dim, a.data() + t * stride_a,
                  b.data() + t * stride_b, m_dim, k_dim, n_dim);
    }
    check_finite(out.values(), "matmul");

    if (tracking({&a, &b})) {
        out.set_requires_grad(true);
        NodePtr an = a.node(), bn = b.node(), on = out.node();
        Tape::active()->record([an, bn, on, batches, stride_a, stride_b, m_dim, k_dim, n_dim]() {
            const auto& go = detail::grad_ref(*on);
            if (an->requires_grad) {
                auto& ga = detail::grad_ref(*an);
                for (std::size_t t = 0; t < batches; ++t) {
                    mm_nt_acc(ga.data() + t * stride_a, go.data() + t * m_dim * n_dim,
                              bn->data.data() + t * stride_b, m_dim, n_dim, k_dim);
                }
            }
            if (bn->requires_grad) {
                auto& gb = detail::grad_ref(*bn);
                for (std::size_t t = 0; t < batches; ++t) {
                    mm_tn_acc(gb.data() + t * stride_b, an->data.data() + t * stride_a,
                              go.data() + t * m_dim * n_dim, m_dim, k_dim, n_dim);
                }
            }
        });
    }
    return out;
}

// ---- unary ops -------------------------------------------------------------

Tensor sigmoid(const Tensor& x) {
    return unary_elementwise(
        x, "sigmoid",
        [](double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh_op(const Tensor& x) {
    return unary_elementwise(
        x, "tanh", [](double v) { return std::tanh(v); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor gelu(const Tensor& x) {
    constexpr double kC = 0.044715;
    const double kRoot = std::sqrt(2.0 / std::numbers::pi);
    return unary_elementwise(
        x, "gelu",
        [=](double v) { return 0.5 * v * (1.0 + std::tanh(kRoot * (v + kC * v * v * v))); },
        [=](double v, double) {
            const double u = kRoot * (v + kC * v * v * v);
            const double t = std::tanh(u);
            return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kRoot * (1.0 + 3.0 * kC * v * v);
        });
}

Tensor softmax_last(const Tensor& x) {
    if (x.ndim() < 1) throw ShapeError("softmax: tensor has no axes");
    const std::size_t width = x.shape().back();
    const std::size_t rows = x.size() / width;
    Tensor out(x.shape());
    const double* px = x.data();
    double* po = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = px + r * width;
        double* orow = po + r * width;
        double mx = row[0];
        for (std::size_t j = 1; j < width; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < width; ++j) {
            orow[j] = std::exp(row[j] - mx);
            sum += orow[j];
        }
        for (std::size_t j = 0; j < width; ++j) orow[j] /= sum;
    }
    check_finite(out.values(), "softmax");

    if (tracking({&x})) {
        out.set_requires_grad(true);
        NodePtr xn = x.node(), on = out.node();
        Tape::active()->record([xn, on, rows, width]() {
            const auto& go = detail::grad_ref(*on);
            auto& gx = detail::grad_ref(*xn);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* y = on->data.data() + r * width;
                const double* g = go.data() + r * width;
                double dot = 0.0;
                for (std::size_t j = 0; j < width; ++j) dot += g[j] * y[j];
                double* out_g = gx.data() + r * width;
                for (std::size_t j = 0; j < width; ++j) out_g[j] += y[j] * (g[j] - dot);
            }
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double epsilon) {
    if (x.ndim() < 1) throw ShapeError("layer_norm: tensor has no axes");
    const std::size_t width = x.shape().back();
    if (gain.size() != width || bias.size() != width) {
        throw ShapeError("layer_norm: gain/bias shapes " + format_shape(gain.shape()) + "/" +
                         format_shape(bias.shape()) + " do not match last axis of " +
                         format_shape(x.shape()));
    }
    const std::size_t rows = x.size() / width;
    Tensor out(x.shape());
    auto xhat = std::make_shared<std::vector<double>>(x.size());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    const double* px = x.data();
    const double* pg = gain.data();
    const double* pb = bias.data();
    double* po = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = px + r * width;
        double mean = 0.0;
        for (std::size_t j = 0; j < width; ++j) mean += row[j];
        mean /= static_cast<double>(width);
        double var = 0.0;
        for (std::size_t j = 0; j < width; ++j) {
            const double d = row[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(width);
        const double inv = 1.0 / std::sqrt(var + epsilon);
        (*inv_std)[r] = inv;
        for (std::size_t j = 0; j < width; ++j) {
            const double xh = (row[j] - mean) * inv;
            (*xhat)[r * width + j] = xh;
            po[r * width + j] = xh * pg[j] + pb[j];
        }
    }
    check_finite(out.values(), "layer_norm");

    if (tracking({&x, &gain, &bias})) {
        out.set_requires_grad(true);
        NodePtr xn = x.node(), gn = gain.node(), bn = bias.node(), on = out.node();
        Tape::active()->record([xn, gn, bn, on, xhat, inv_std, rows, width]() {
            const auto& go = detail::grad_ref(*on);
            const double* pg = gn->data.data();
            for (std::size_t r = 0; r < rows; ++r) {
                const double* g = go.data() + r * width;
                const double* xh = xhat->data() + r * width;
                if (gn->requires_grad) {
                    auto& gg = detail::grad_ref(*gn);
                    for (std::size_t j = 0; j < width; ++j) gg[j] += g[j] * xh[j];
                }
                if (bn->requires_grad) {
                    auto& gb = detail::grad_ref(*bn);
                    for (std::size_t j = 0; j < width; ++j) gb[j] += g[j];
                }
                if (xn->requires_grad) {
                    auto& gx = detail::grad_ref(*xn);
                    double m1 = 0.0, m2 = 0.0;
                    for (std::size_t j = 0; j < width; ++j) {
                        const double dxh = g[j] * pg[j];
                        m1 += dxh;
                        m2 += dxh * xh[j];
                    }
                    m1 /= static_cast<double>(width);
                    m2 /= static_cast<double>(width);
                    const double inv = (*inv_std)[r];
                    double* out_g = gx.data() + r * width;
                    for (std::size_t j = 0; j < width; ++j) {
                        const double dxh = g[j] * pg[j];
                        out_g[j] += inv * (dxh - m1 - xh[j] * m2);
                    }
                }
            }
        });
    }
    return out;
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids, Shape id_shape) {
    if (table.ndim() != 2) {
        throw ShapeError("embedding: table must be rank 2, got " + format_shape(table.shape()));
    }
    if (ids.size() != numel(id_shape)) {
        throw ShapeError("embedding: " + std::to_string(ids.size()) + " ids do not fill shape " +
                         format_shape(id_shape));
    }
    const std::size_t vocab = table.shape()[0];
    const std::size_t width = table.shape()[1];
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
            throw ShapeError("embedding: id " + std::to_string(id) + " outside table of " +
                             std::to_string(vocab) + " rows");
        }
    }
    Shape out_shape = id_shape;
    out_shape.push_back(width);
    Tensor out(out_shape);
    const double* pt = table.data();
    double* po = out.data();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        std::copy_n(pt + static_cast<std::size_t>(ids[i]) * width, width, po + i * width);
    }

    if (tracking({&table})) {
        out.set_requires_grad(true);
        NodePtr tn = table.node(), on = out.node();
        Tape::active()->record([tn, on, ids, width]() {
            const auto& go = detail::grad_ref(*on);
            auto& gt = detail::grad_ref(*tn);
            for (std::size_t i = 0; i < ids.size(); ++i) {
                double* trow = gt.data() + static_cast<std::size_t>(ids[i]) * width;
                const double* grow = go.data() + i * width;
                for (std::size_t j = 0; j < width; ++j) trow[j] += grow[j];
            }
        });
    }
    return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (numel(shape) != x.size()) {
        throw ShapeError("reshape: cannot view " + format_shape(x.shape()) + " as " +
                         format_shape(shape));
    }
    Tensor out(std::move(shape), x.values());
    if (tracking({&x})) {
        out.set_requires_grad(true);
        NodePtr xn = x.node(), on = out.node();
        Tape::active()->record([xn, on]() {
            const auto& go = detail::grad_ref(*on);
            auto& gx = detail::grad_ref(*xn);
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
        });
    }
    return out;
}

Tensor swap_axes(const Tensor& x, std::size_t axis_a, std::size_t axis_b) {
    if (axis_a >= x.ndim() || axis_b >= x.ndim()) {
        throw ShapeError("swap_axes: axes (" + std::to_string(axis_a) + ", " +
                         std::to_string(axis_b) + ") out of range for " + format_shape(x.shape()));
    }
    Shape out_shape = x.shape();
    std::swap(out_shape[axis_a], out_shape[axis_b]);
    const auto in_strides = row_strides(x.shape());
    auto src_strides = in_strides; // strides of the source, indexed by out axes
    std::swap(src_strides[axis_a], src_strides[axis_b]);

    Tensor out(out_shape);
    const std::size_t rank = out_shape.size();
    const double* px = x.data();
    double* po = out.data();
    std::vector<std::size_t> idx(rank, 0);
    std::size_t src = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        po[i] = px[src];
        for (std::size_t d = rank; d-- > 0;) {
            ++idx[d];
            src += src_strides[d];
            if (idx[d] < out_shape[d]) break;
            src -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }

    if (tracking({&x})) {
        out.set_requires_grad(true);
        NodePtr xn = x.node(), on = out.node();
        Tape::active()->record([xn, on, out_shape, src_strides, rank]() {
            const auto& go = detail::grad_ref(*on);
            auto& gx = detail::grad_ref(*xn);
            std::vector<std::size_t> idx(rank, 0);
            std::size_t src = 0;
            for (std::size_t i = 0; i < go.size(); ++i) {
                gx[src] += go[i];
                for (std::size_t d = rank; d-- > 0;) {
                    ++idx[d];
                    src += src_strides[d];
                    if (idx[d] < out_shape[d]) break;
                    src -= src_strides[d] * out_shape[d];
                    idx[d] = 0;
                }
            }
        });
    }
    return out;
}

Tensor concat_last(const Tensor& a, const Tensor& b) {
    if (a.ndim() != b.ndim() || a.ndim() < 1) {
        throw ShapeError("concat: rank mismatch between " + format_shape(a.shape()) + " and " +
                         format_shape(b.shape()));
    }
    for (std::size_t i = 0; i + 1 < a.ndim(); ++i) {
        if (a.shape()[i] != b.shape()[i]) {
            throw ShapeError("concat: leading dims differ between " + format_shape(a.shape()) +
                             " and " + format_shape(b.shape()));
        }
    }
    const std::size_t wa = a.shape().back();
    const std::size_t wb = b.shape().back();
    const std::size_t rows = a.size() / wa;
    Shape out_shape = a.shape();
    out_shape.back() = wa + wb;
    Tensor out(out_shape);
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(a.data() + r * wa, wa, out.data() + r * (wa + wb));
        std::copy_n(b.data() + r * wb, wb, out.data() + r * (wa + wb) + wa);
    }

    if (tracking({&a, &b})) {
        out.set_requires_grad(true);
        NodePtr an = a.node(), bn = b.node(), on = out.node();
        Tape::active()->record([an, bn, on, rows, wa, wb]() {
            const auto& go = detail::grad_ref(*on);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* grow = go.data() + r * (wa + wb);
                if (an->requires_grad) {
                    auto& ga = detail::grad_ref(*an);
                    for (std::size_t j = 0; j < wa; ++j) ga[r * wa + j] += grow[j];
                }
                if (bn->requires_grad) {
                    auto& gb = detail::grad_ref(*bn);
                    for (std::size_t j = 0; j < wb; ++j) gb[r * wb + j] += grow[wa + j];
                }
            }
        });
    }
    return out;
}

Tensor select_axis1(const Tensor& x, std::size_t index) {
    if (x.ndim() != 3) {
        throw ShapeError("select_axis1: expected rank-3 tensor, got " + format_shape(x.shape()));
    }
    const std::size_t batch = x.shape()[0], len = x.shape()[1], width = x.shape()[2];
    if (index >= len) {
        throw ShapeError("select_axis1: index " + std::to_string(index) + " out of range for " +
                         format_shape(x.shape()));
    }
    Tensor out(Shape{batch, width});
    for (std::size_t b = 0; b < batch; ++b) {
        std::copy_n(x.data() + (b * len + index) * width, width, out.data() + b * width);
    }
    if (tracking({&x})) {
        out.set_requires_grad(true);
        NodePtr xn = x.node(), on = out.node();
        Tape::active()->record([xn, on, batch, len, width, index]() {
            const auto& go = detail::grad_ref(*on);
            auto& gx = detail::grad_ref(*xn);
            for (std::size_t b = 0; b < batch; ++b) {
                double* dst = gx.data() + (b * len + index) * width;
                const double* src = go.data() + b * width;
                for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

Tensor mean_axis1(const Tensor& x) {
    if (x.ndim() != 3) {
        throw ShapeError("mean_axis1: expected rank-3 tensor, got " + format_shape(x.shape()));
    }
    const std::size_t batch = x.shape()[0], len = x.shape()[1], width = x.shape()[2];
    Tensor out(Shape{batch, width});
    const double inv = 1.0 / static_cast<double>(len);
    for (std::size_t b = 0; b < batch; ++b) {
        double* orow = out.data() + b * width;
        for (std::size_t l = 0; l < len; ++l) {
            const double* row = x.data() + (b * len + l) * width;
            for (std::size_t j = 0; j < width; ++j) orow[j] += row[j] * inv;
        }
    }
    check_finite(out.values(), "mean_axis1");
    if (tracking({&x})) {
        out.set_requires_grad(true);
        NodePtr xn = x.node(), on = out.node();
        Tape::active()->record([xn, on, batch, len, width, inv]() {
            const auto& go = detail::grad_ref(*on);
            auto& gx = detail::grad_ref(*xn);
            for (std::size_t b = 0; b < batch; ++b) {
                const double* src = go.data() + b * width;
                for (std::size_t l = 0; l < len; ++l) {
                    double* dst = gx.data() + (b * len + l) * width;
                    for (std::size_t j = 0; j < width; ++j) dst[j] += src[j] * inv;
                }
            }
        });
    }
    return out;
}

namespace {

Tensor reduce_all(const Tensor& x, bool take_mean, const char* op_name) {
    double sum = 0.0;
    for (double v : x.values()) sum += v;
    const double factor = take_mean ? 1.0 / static_cast<double>(x.size()) : 1.0;
    Tensor out = Tensor::scalar(sum * factor);
    check_finite(out.values(), op_name);
    if (tracking({&x})) {
        out.set_requires_grad(true);
        NodePtr xn = x.node(), on = out.node();
        Tape::active()->record([xn, on, factor]() {
            const double g = detail::grad_ref(*on)[0] * factor;
            auto& gx = detail::grad_ref(*xn);
            for (double& v : gx) v += g;
        });
    }
    return out;
}

} // namespace

Tensor sum_all(const Tensor& x) { return reduce_all(x, false, "sum"); }

Tensor mean_all(const Tensor& x) { return reduce_all(x, true, "mean"); }

Tensor cross_entropy_with_logits(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.ndim() != 2) {
        throw ShapeError("cross_entropy: logits must be rank 2, got " + format_shape(logits.shape()));
    }
    const std::size_t batch = logits.shape()[0];
    const std::size_t classes = logits.shape()[1];
    if (labels.size() != batch) {
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                         std::to_string(batch));
    }
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= classes) {
            throw ShapeError("cross_entropy: label " + std::to_string(y) + " outside " +
                             std::to_string(classes) + " classes");
        }
    }
    auto probs = std::make_shared<std::vector<double>>(logits.size());
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
        const double* row = logits.data() + b * classes;
        double mx = row[0];
        for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
        double sum = 0.0;
        for (std::size_t c = 0; c < classes; ++c) {
            const double e = std::exp(row[c] - mx);
            (*probs)[b * classes + c] = e;
            sum += e;
        }
        for (std::size_t c = 0; c < classes; ++c) (*probs)[b * classes + c] /= sum;
        total += (mx + std::log(sum)) - row[static_cast<std::size_t>(labels[b])];
    }
    Tensor out = Tensor::scalar(total / static_cast<double>(batch));
    check_finite(out.values(), "cross_entropy");

    if (tracking({&logits})) {
        out.set_requires_grad(true);
        NodePtr ln = logits.node(), on = out.node();
        Tape::active()->record([ln, on, probs, labels, batch, classes]() {
            const double g = detail::grad_ref(*on)[0] / static_cast<double>(batch);
            auto& gl = detail::grad_ref(*ln);
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t c = 0; c < classes; ++c) {
                    const double onehot = (static_cast<std::size_t>(labels[b]) == c) ? 1.0 : 0.0;
                    gl[b * classes + c] += g * ((*probs)[b * classes + c] - onehot);
                }
            }
        });
    }
    return out;
}

Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng) {
    if (rate < 0.0 || rate >= 1.0) {
        throw ConfigError("dropout: rate must be in [0, 1), got " + std::to_string(rate));
    }
    if (rate == 0.0) return x;
    const double keep = 1.0 - rate;
    auto mask = std::make_shared<std::vector<double>>(x.size());
    std::bernoulli_distribution dist(keep);
    for (double& m : *mask) m = dist(rng) ? 1.0 / keep : 0.0;

    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = x.data()[i] * (*mask)[i];
    if (tracking({&x})) {
        out.set_requires_grad(true);
        NodePtr xn = x.node(), on = out.node();
        Tape::active()->record([xn, on, mask]() {
            const auto& go = detail::grad_ref(*on);
            auto& gx = detail::grad_ref(*xn);
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] * (*mask)[i];
        });
    }
    return out;
}

// ---- ParameterStore ---------------------------------------------------------

Tensor ParameterStore::register_param(std::string name, Tensor value, bool weight_decay) {
    if (find(name) != nullptr) {
        throw ConfigError("parameter '" + name + "' registered twice");
    }
    value.set_requires_grad(true);
    params_.push_back(Parameter{std::move(name), value, weight_decay});
    return params_.back().value;
}

Tensor ParameterStore::add(std::string name, Shape shape, double init_stddev,
                           std::mt19937_64& rng, bool weight_decay) {
    Tensor value = init_stddev == 0.0 ? Tensor(std::move(shape))
                                      : randn(std::move(shape), init_stddev, rng);
    return register_param(std::move(name), std::move(value), weight_decay);
}

Tensor ParameterStore::add_constant(std::string name, Shape shape, double value,
                                    bool weight_decay) {
    return register_param(std::move(name), Tensor(std::move(shape), value), weight_decay);
}

Parameter* ParameterStore::find(const std::string& name) {
    for (auto& p : params_) {
        if (p.name == name) return &p;
    }
    return nullptr;
}

const Parameter* ParameterStore::find(const std::string& name) const {
    return const_cast<ParameterStore*>(this)->find(name);
}

void ParameterStore::zero_grads() {
    for (auto& p : params_) p.value.zero_grad();
}

std::size_t ParameterStore::total_values() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
}

// ---- gradient checking --------------------------------------------------------

double check_gradient(const std::function<Tensor()>& f, std::span<Tensor> params,
                      double step) {
    if (step <= 0.0) throw ConfigError("check_gradient: step must be > 0");
    constexpr double kInf = std::numeric_limits<double>::infinity();

    std::vector<std::vector<double>> analytic;
    try {
        for (auto& p : params) p.zero_grad();
        Tape tape;
        Tensor loss = f();
        tape.backward(loss);
        for (auto& p : params) analytic.push_back(p.grad());
    } catch (const NumericError&) {
        return kInf;
    }

    double max_err = 0.0;
    try {
        for (std::size_t pi = 0; pi < params.size(); ++pi) {
            auto& vals = params[pi].values();
            for (std::size_t i = 0; i < vals.size(); ++i) {
                const double orig = vals[i];
                vals[i] = orig + step;
                const double f_plus = f().item();
                vals[i] = orig - step;
                const double f_minus = f().item();
                vals[i] = orig;
                if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) return kInf;
                const double numeric = (f_plus - f_minus) / (2.0 * step);
                const double a = analytic[pi][i];
                const double err =
                    std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
                max_err = std::max(max_err, err);
            }
        }
    } catch (const NumericError&) {
        return kInf;
    }
    return max_err;
}

} // namespace isfl
