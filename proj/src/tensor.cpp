#include "ivaloc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace ivaloc {

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), data(shape_size(shape), fill) {}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    if (shape_size(shape) != data.size())
        throw ShapeError("tensor: shape " + shape_string(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
}

std::span<double> Tensor::row(std::size_t r) {
    const std::size_t cols = shape.size() > 1 ? shape[1] : shape[0];
    return std::span<double>(data).subspan(r * cols, cols);
}

std::span<const double> Tensor::row(std::size_t r) const {
    const std::size_t cols = shape.size() > 1 ? shape[1] : shape[0];
    return std::span<const double>(data).subspan(r * cols, cols);
}

// ---------------------------------------------------------------------------

const Shape& Var::shape() const { return tape_->shape_of(id_); }
std::size_t Var::size() const { return value().size(); }
std::span<const double> Var::value() const { return tape_->value_of(id_); }

double Var::item() const {
    auto v = value();
    if (v.size() != 1) throw ShapeError("item() on non-scalar " + shape_string(shape()));
    return v[0];
}

Tensor Var::to_tensor() const {
    auto v = value();
    return Tensor(shape(), std::vector<double>(v.begin(), v.end()));
}

Var Tape::leaf(const Tensor& t) { return leaf(t.shape, t.data, t.requires_grad); }

Var Tape::leaf(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape_size(shape) != values.size()) throw ShapeError("leaf: shape/value size mismatch");
    Node n;
    n.op = "leaf";
    n.shape = std::move(shape);
    n.value = std::move(values);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::view(const Shape& shape, std::span<const double> values, bool requires_grad) {
    if (shape_size(shape) != values.size()) throw ShapeError("view: shape/value size mismatch");
    Node n;
    n.op = "view";
    n.shape = shape;
    n.external = values;
    n.is_view = true;
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string op, Shape shape, std::vector<double> values,
                 std::vector<std::size_t> inputs, BackwardFn backward) {
    if (backward_done_) throw ContractError("tape: cannot record after backward()");
    Node n;
    n.op = std::move(op);
    n.shape = std::move(shape);
    n.value = std::move(values);
    n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                  [this](std::size_t i) { return nodes_[i].requires_grad; });
    n.inputs = std::move(inputs);
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

std::span<const double> Tape::value_of(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.is_view ? n.external : std::span<const double>(n.value);
}

void Tape::backward(const Var& loss) {
    if (loss.tape() != this) throw ContractError("backward: loss belongs to another tape");
    if (backward_done_) throw ContractError("backward: tape already consumed; re-run the forward pass");
    if (loss.size() != 1) throw ContractError("backward: loss must be scalar, got " + shape_string(loss.shape()));
    backward_done_ = true;
    for (auto& n : nodes_)
        if (n.requires_grad) n.grad.assign(value_of(&n - nodes_.data()).size(), 0.0);
    Node& root = nodes_[loss.id()];
    if (!root.requires_grad) return;
    root.grad[0] = 1.0;
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (n.requires_grad && n.backward) n.backward(*this, id);
    }
}

std::span<const double> Tape::grad(const Var& v) const {
    if (!backward_done_) throw ContractError("grad: backward() has not run");
    const Node& n = nodes_[v.id()];
    if (!n.requires_grad) throw ContractError("grad: node does not track gradients");
    return n.grad;
}

// ---------------------------------------------------------------------------

namespace {

Tape& same_tape(std::initializer_list<const Var*> vars) {
    Tape* t = nullptr;
    for (const Var* v : vars) {
        if (!v->valid()) throw ContractError("operation on an unbound Var");
        if (t && v->tape() != t) throw ContractError("operation mixes tapes");
        t = v->tape();
    }
    return *t;
}

void require_rank(const Var& v, std::size_t rank, const char* op) {
    if (v.shape().size() != rank)
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(v.shape()));
}

template <typename Fwd, typename Deriv>
Var unary(const char* name, const Var& x, Fwd fwd, Deriv deriv) {
    Tape& t = same_tape({&x});
    auto xv = x.value();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
    const std::size_t xi = x.id();
    return t.record(name, x.shape(), std::move(out), {xi}, [xi, deriv](Tape& tp, std::size_t self) {
        auto g = tp.grad_of(self);
        auto y = tp.value_of(self);
        auto xv = tp.value_of(xi);
        auto gx = tp.grad_of(xi);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xv[i], y[i]);
    });
}

double stable_sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

Var conv1d(const Var& x, const Var& w, const Var& b) {
    Tape& t = same_tape({&x, &w, &b});
    require_rank(x, 2, "conv1d");
    require_rank(w, 3, "conv1d");
    require_rank(b, 1, "conv1d");
    const std::size_t cin = x.shape()[0], len = x.shape()[1];
    const std::size_t cout = w.shape()[0], k = w.shape()[2];
    if (w.shape()[1] != cin)
        throw ShapeError("conv1d: input has " + std::to_string(cin) + " channels, weights expect " +
                         std::to_string(w.shape()[1]));
    if (b.shape()[0] != cout) throw ShapeError("conv1d: bias length mismatch");
    if (k % 2 == 0) throw ShapeError("conv1d: kernel size must be odd");
    const long pad = static_cast<long>(k / 2);
    const long L = static_cast<long>(len);

    auto xv = x.value(), wv = w.value(), bv = b.value();
    std::vector<double> out(cout * len);
    for (std::size_t c = 0; c < cout; ++c) {
        double* o = out.data() + c * len;
        std::fill(o, o + len, bv[c]);
        for (std::size_t i = 0; i < cin; ++i) {
            const double* xi = xv.data() + i * len;
            for (std::size_t kk = 0; kk < k; ++kk) {
                const double wt = wv[(c * cin + i) * k + kk];
                const long shift = static_cast<long>(kk) - pad;
                const long lo = std::max(0L, -shift), hi = std::min(L, L - shift);
                for (long tt = lo; tt < hi; ++tt) o[tt] += wt * xi[tt + shift];
            }
        }
    }
    const std::size_t xid = x.id(), wid = w.id(), bid = b.id();
    return t.record("conv1d", {cout, len}, std::move(out), {xid, wid, bid},
                    [=](Tape& tp, std::size_t self) {
                        auto g = tp.grad_of(self);
                        auto xv = tp.value_of(xid);
                        auto wv = tp.value_of(wid);
                        const bool gx = tp.needs_grad(xid), gw = tp.needs_grad(wid), gb = tp.needs_grad(bid);
                        for (std::size_t c = 0; c < cout; ++c) {
                            const double* gc = g.data() + c * len;
                            if (gb) {
                                double s = 0;
                                for (std::size_t tt = 0; tt < len; ++tt) s += gc[tt];
                                tp.grad_of(bid)[c] += s;
                            }
                            for (std::size_t i = 0; i < cin; ++i) {
                                const double* xi = xv.data() + i * len;
                                for (std::size_t kk = 0; kk < k; ++kk) {
                                    const std::size_t widx = (c * cin + i) * k + kk;
                                    const long shift = static_cast<long>(kk) - pad;
                                    const long lo = std::max(0L, -shift), hi = std::min(L, L - shift);
                                    if (gw) {
                                        double s = 0;
                                        for (long tt = lo; tt < hi; ++tt) s += gc[tt] * xi[tt + shift];
                                        tp.grad_of(wid)[widx] += s;
                                    }
                                    if (gx) {
                                        double* dxi = tp.grad_of(xid).data() + i * len;
                                        const double wt = wv[widx];
                                        for (long tt = lo; tt < hi; ++tt) dxi[tt + shift] += wt * gc[tt];
                                    }
                                }
                            }
                        }
                    });
}

Var maxpool1d(const Var& x, std::size_t window, std::size_t stride) {
    Tape& t = same_tape({&x});
    require_rank(x, 2, "maxpool1d");
    const std::size_t ch = x.shape()[0], len = x.shape()[1];
    if (window == 0 || stride == 0) throw ShapeError("maxpool1d: window and stride must be positive");
    if (len < window)
        throw ShapeError("maxpool1d: length " + std::to_string(len) + " shorter than window " +
                         std::to_string(window));
    const std::size_t out_len = (len - window) / stride + 1;
    auto xv = x.value();
    std::vector<double> out(ch * out_len);
    std::vector<std::size_t> argmax(ch * out_len);
    for (std::size_t c = 0; c < ch; ++c) {
        for (std::size_t o = 0; o < out_len; ++o) {
            const std::size_t start = c * len + o * stride;
            std::size_t best = start;
            for (std::size_t j = 1; j < window; ++j)
                if (xv[start + j] > xv[best]) best = start + j;
            out[c * out_len + o] = xv[best];
            argmax[c * out_len + o] = best;
        }
    }
    const std::size_t xid = x.id();
    return t.record("maxpool1d", {ch, out_len}, std::move(out), {xid},
                    [xid, argmax = std::move(argmax)](Tape& tp, std::size_t self) {
                        auto g = tp.grad_of(self);
                        auto gx = tp.grad_of(xid);
                        for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
                    });
}

Var matvec(const Var& w, const Var& x) {
    Tape& t = same_tape({&w, &x});
    require_rank(w, 2, "matvec");
    require_rank(x, 1, "matvec");
    const std::size_t m = w.shape()[0], n = w.shape()[1];
    if (x.shape()[0] != n)
        throw ShapeError("matvec: weights " + shape_string(w.shape()) + " vs input " + shape_string(x.shape()));
    auto wv = w.value(), xv = x.value();
    std::vector<double> out(m);
    for (std::size_t r = 0; r < m; ++r) {
        const double* wr = wv.data() + r * n;
        double s = 0;
        for (std::size_t c = 0; c < n; ++c) s += wr[c] * xv[c];
        out[r] = s;
    }
    const std::size_t wid = w.id(), xid = x.id();
    return t.record("matvec", {m}, std::move(out), {wid, xid}, [=](Tape& tp, std::size_t self) {
        auto g = tp.grad_of(self);
        if (tp.needs_grad(wid)) {
            auto xv = tp.value_of(xid);
            auto gw = tp.grad_of(wid);
            for (std::size_t r = 0; r < m; ++r)
                for (std::size_t c = 0; c < n; ++c) gw[r * n + c] += g[r] * xv[c];
        }
        if (tp.needs_grad(xid)) {
            auto wv = tp.value_of(wid);
            auto gx = tp.grad_of(xid);
            for (std::size_t r = 0; r < m; ++r)
                for (std::size_t c = 0; c < n; ++c) gx[c] += g[r] * wv[r * n + c];
        }
    });
}

Var dense(const Var& x, const Var& w, const Var& b) {
    require_rank(b, 1, "dense");
    if (w.valid() && w.shape().size() == 2 && b.shape()[0] != w.shape()[0])
        throw ShapeError("dense: bias length mismatch");
    return add(matvec(w, x), b);
}

Var dense_rows(const Var& x, const Var& w, const Var& b) {
    Tape& t = same_tape({&x, &w, &b});
    require_rank(x, 2, "dense_rows");
    require_rank(w, 2, "dense_rows");
    require_rank(b, 1, "dense_rows");
    const std::size_t rows = x.shape()[0], n = x.shape()[1], m = w.shape()[0];
    if (w.shape()[1] != n || b.shape()[0] != m)
        throw ShapeError("dense_rows: weights " + shape_string(w.shape()) + " vs input " +
                         shape_string(x.shape()));
    auto xv = x.value(), wv = w.value(), bv = b.value();
    std::vector<double> out(rows * m);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xv.data() + r * n;
        for (std::size_t j = 0; j < m; ++j) {
            const double* wr = wv.data() + j * n;
            double s = bv[j];
            for (std::size_t c = 0; c < n; ++c) s += wr[c] * xr[c];
            out[r * m + j] = s;
        }
    }
    const std::size_t xid = x.id(), wid = w.id(), bid = b.id();
    return t.record("dense_rows", {rows, m}, std::move(out), {xid, wid, bid}, [=](Tape& tp, std::size_t self) {
        auto g = tp.grad_of(self);
        auto xv = tp.value_of(xid);
        auto wv = tp.value_of(wid);
        const bool gx = tp.needs_grad(xid), gw = tp.needs_grad(wid), gb = tp.needs_grad(bid);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* xr = xv.data() + r * n;
            for (std::size_t j = 0; j < m; ++j) {
                const double gj = g[r * m + j];
                if (gj == 0.0) continue;
                if (gb) tp.grad_of(bid)[j] += gj;
                if (gw) {
                    double* gwr = tp.grad_of(wid).data() + j * n;
                    for (std::size_t c = 0; c < n; ++c) gwr[c] += gj * xr[c];
                }
                if (gx) {
                    double* gxr = tp.grad_of(xid).data() + r * n;
                    const double* wr = wv.data() + j * n;
                    for (std::size_t c = 0; c < n; ++c) gxr[c] += gj * wr[c];
                }
            }
        }
    });
}

Var add(const Var& a, const Var& b) {
    Tape& t = same_tape({&a, &b});
    if (a.size() != b.size())
        throw ShapeError("add: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    auto av = a.value(), bv = b.value();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    const std::size_t aid = a.id(), bid = b.id();
    return t.record("add", a.shape(), std::move(out), {aid, bid}, [aid, bid](Tape& tp, std::size_t self) {
        auto g = tp.grad_of(self);
        for (std::size_t id : {aid, bid}) {
            if (!tp.needs_grad(id)) continue;
            auto gi = tp.grad_of(id);
            for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    Tape& t = same_tape({&a, &b});
    if (a.size() != b.size())
        throw ShapeError("mul: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    auto av = a.value(), bv = b.value();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    const std::size_t aid = a.id(), bid = b.id();
    return t.record("mul", a.shape(), std::move(out), {aid, bid}, [aid, bid](Tape& tp, std::size_t self) {
        auto g = tp.grad_of(self);
        auto av = tp.value_of(aid), bv = tp.value_of(bid);
        if (tp.needs_grad(aid)) {
            auto ga = tp.grad_of(aid);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
        }
        if (tp.needs_grad(bid)) {
            auto gb = tp.grad_of(bid);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
        }
    });
}

Var scale(const Var& a, double factor) {
    return unary("scale", a, [factor](double v) { return v * factor; },
                 [factor](double, double) { return factor; });
}

Var tanh(const Var& x) {
    return unary("tanh", x, [](double v) { return std::tanh(v); },
                 [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& x) {
    return unary("sigmoid", x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var leaky_relu(const Var& x, double slope) {
    return unary("leaky_relu", x, [slope](double v) { return v > 0 ? v : slope * v; },
                 [slope](double v, double) { return v > 0 ? 1.0 : slope; });
}

Var softmax(const Var& x, std::size_t axis) {
    Tape& t = same_tape({&x});
    const Shape& s = x.shape();
    if (s.empty() || s.size() > 2 || axis >= s.size())
        throw ShapeError("softmax: unsupported shape " + shape_string(s) + " / axis " + std::to_string(axis));
    // View the tensor as `outer` groups of `n` elements spaced `stride` apart.
    const std::size_t rows = s.size() == 2 ? s[0] : 1, cols = s.back();
    const std::size_t n = axis == s.size() - 1 ? cols : rows;
    const std::size_t groups = x.size() / n;
    const std::size_t stride = axis == s.size() - 1 ? 1 : cols;
    auto base = [=](std::size_t gi) { return axis == s.size() - 1 ? gi * cols : gi; };

    auto xv = x.value();
    std::vector<double> out(xv.size());
    for (std::size_t gi = 0; gi < groups; ++gi) {
        const std::size_t b0 = base(gi);
        double mx = xv[b0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xv[b0 + j * stride]);
        double z = 0;
        for (std::size_t j = 0; j < n; ++j) z += (out[b0 + j * stride] = std::exp(xv[b0 + j * stride] - mx));
        for (std::size_t j = 0; j < n; ++j) out[b0 + j * stride] /= z;
    }
    const std::size_t xid = x.id();
    return t.record("softmax", s, std::move(out), {xid}, [=](Tape& tp, std::size_t self) {
        auto g = tp.grad_of(self);
        auto y = tp.value_of(self);
        auto gx = tp.grad_of(xid);
        for (std::size_t gi = 0; gi < groups; ++gi) {
            const std::size_t b0 = base(gi);
            double dot = 0;
            for (std::size_t j = 0; j < n; ++j) dot += g[b0 + j * stride] * y[b0 + j * stride];
            for (std::size_t j = 0; j < n; ++j) {
                const std::size_t k = b0 + j * stride;
                gx[k] += y[k] * (g[k] - dot);
            }
        }
    });
}

Var dropout(const Var& x, double p, bool training, Rng& rng) {
    if (!(p >= 0.0 && p < 1.0)) throw ContractError("dropout: probability must lie in [0, 1), got " + std::to_string(p));
    if (!training || p == 0.0) return x;
    Tape& t = same_tape({&x});
    std::bernoulli_distribution keep(1.0 - p);
    const double inv = 1.0 / (1.0 - p);
    std::vector<double> mask(x.size());
    for (auto& m : mask) m = keep(rng) ? inv : 0.0;
    auto xv = x.value();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i];
    const std::size_t xid = x.id();
    return t.record("dropout", x.shape(), std::move(out), {xid},
                    [xid, mask = std::move(mask)](Tape& tp, std::size_t self) {
                        auto g = tp.grad_of(self);
                        auto gx = tp.grad_of(xid);
                        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
                    });
}

Var slice(const Var& x, std::size_t offset, std::size_t length) {
    Tape& t = same_tape({&x});
    require_rank(x, 1, "slice");
    if (offset + length > x.size()) throw ShapeError("slice: range out of bounds");
    auto xv = x.value();
    std::vector<double> out(xv.begin() + offset, xv.begin() + offset + length);
    const std::size_t xid = x.id();
    return t.record("slice", {length}, std::move(out), {xid}, [=](Tape& tp, std::size_t self) {
        auto g = tp.grad_of(self);
        auto gx = tp.grad_of(xid);
        for (std::size_t i = 0; i < length; ++i) gx[offset + i] += g[i];
    });
}

Var concat(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    Tape& t = same_tape({&parts[0]});
    std::vector<double> out;
    std::vector<std::size_t> ids;
    for (const Var& p : parts) {
        same_tape({&parts[0], &p});
        require_rank(p, 1, "concat");
        auto v = p.value();
        out.insert(out.end(), v.begin(), v.end());
        ids.push_back(p.id());
    }
    const std::size_t total = out.size();
    return t.record("concat", {total}, std::move(out), ids, [ids](Tape& tp, std::size_t self) {
        auto g = tp.grad_of(self);
        std::size_t off = 0;
        for (std::size_t id : ids) {
            const std::size_t n = tp.value_of(id).size();
            if (tp.needs_grad(id)) {
                auto gi = tp.grad_of(id);
                for (std::size_t i = 0; i < n; ++i) gi[i] += g[off + i];
            }
            off += n;
        }
    });
}

Var row(const Var& x, std::size_t r) {
    Tape& t = same_tape({&x});
    require_rank(x, 2, "row");
    const std::size_t rows = x.shape()[0], cols = x.shape()[1];
    if (r >= rows) throw ShapeError("row: index out of range");
    auto xv = x.value();
    std::vector<double> out(xv.begin() + r * cols, xv.begin() + (r + 1) * cols);
    const std::size_t xid = x.id();
    return t.record("row", {cols}, std::move(out), {xid}, [=](Tape& tp, std::size_t self) {
        auto g = tp.grad_of(self);
        auto gx = tp.grad_of(xid);
        for (std::size_t i = 0; i < cols; ++i) gx[r * cols + i] += g[i];
    });
}

Var stack_rows(std::span<const Var> rows) {
    if (rows.empty()) throw ShapeError("stack_rows: no inputs");
    const std::size_t cols = rows[0].size();
    std::vector<Var> flat(rows.begin(), rows.end());
    for (const Var& r : flat) {
        require_rank(r, 1, "stack_rows");
        if (r.size() != cols) throw ShapeError("stack_rows: ragged rows");
    }
    return reshape(concat(flat), {rows.size(), cols});
}

Var transpose(const Var& x) {
    Tape& t = same_tape({&x});
    require_rank(x, 2, "transpose");
    const std::size_t rows = x.shape()[0], cols = x.shape()[1];
    auto xv = x.value();
    std::vector<double> out(xv.size());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = xv[r * cols + c];
    const std::size_t xid = x.id();
    return t.record("transpose", {cols, rows}, std::move(out), {xid}, [=](Tape& tp, std::size_t self) {
        auto g = tp.grad_of(self);
        auto gx = tp.grad_of(xid);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[c * rows + r];
    });
}

Var reshape(const Var& x, Shape shape) {
    Tape& t = same_tape({&x});
    if (shape_size(shape) != x.size())
        throw ShapeError("reshape: " + shape_string(x.shape()) + " -> " + shape_string(shape));
    auto xv = x.value();
    const std::size_t xid = x.id();
    return t.record("reshape", std::move(shape), std::vector<double>(xv.begin(), xv.end()), {xid},
                    [xid](Tape& tp, std::size_t self) {
                        auto g = tp.grad_of(self);
                        auto gx = tp.grad_of(xid);
                        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                    });
}

Var mean_last_axis(const Var& x) {
    Tape& t = same_tape({&x});
    require_rank(x, 2, "mean_last_axis");
    const std::size_t rows = x.shape()[0], cols = x.shape()[1];
    auto xv = x.value();
    std::vector<double> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0;
        for (std::size_t c = 0; c < cols; ++c) s += xv[r * cols + c];
        out[r] = s / static_cast<double>(cols);
    }
    const std::size_t xid = x.id();
    return t.record("mean_last_axis", {rows}, std::move(out), {xid}, [=](Tape& tp, std::size_t self) {
        auto g = tp.grad_of(self);
        auto gx = tp.grad_of(xid);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[r] / static_cast<double>(cols);
    });
}

Var weighted_sum_rows(const Var& x, const Var& weights) {
    Tape& t = same_tape({&x, &weights});
    require_rank(x, 2, "weighted_sum_rows");
    require_rank(weights, 1, "weighted_sum_rows");
    const std::size_t rows = x.shape()[0], cols = x.shape()[1];
    if (weights.size() != rows) throw ShapeError("weighted_sum_rows: weight count mismatch");
    auto xv = x.value(), wv = weights.value();
    std::vector<double> out(cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[c] += wv[r] * xv[r * cols + c];
    const std::size_t xid = x.id(), wid = weights.id();
    return t.record("weighted_sum_rows", {cols}, std::move(out), {xid, wid}, [=](Tape& tp, std::size_t self) {
        auto g = tp.grad_of(self);
        auto xv = tp.value_of(xid), wv = tp.value_of(wid);
        if (tp.needs_grad(xid)) {
            auto gx = tp.grad_of(xid);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += wv[r] * g[c];
        }
        if (tp.needs_grad(wid)) {
            auto gw = tp.grad_of(wid);
            for (std::size_t r = 0; r < rows; ++r) {
                double s = 0;
                for (std::size_t c = 0; c < cols; ++c) s += xv[r * cols + c] * g[c];
                gw[r] += s;
            }
        }
    });
}

Var sum(const Var& x) {
    Tape& t = same_tape({&x});
    auto xv = x.value();
    const double s = std::accumulate(xv.begin(), xv.end(), 0.0);
    const std::size_t xid = x.id();
    return t.record("sum", {1}, {s}, {xid}, [xid](Tape& tp, std::size_t self) {
        const double g = tp.grad_of(self)[0];
        for (double& gx : tp.grad_of(xid)) gx += g;
    });
}

Var bce_with_logits(const Var& logit, double label) {
    Tape& t = same_tape({&logit});
    if (logit.size() != 1) throw ShapeError("bce_with_logits: logit must be scalar");
    if (label != 0.0 && label != 1.0) throw ContractError("bce_with_logits: label must be 0 or 1");
    const double z = logit.value()[0];
    const double loss = std::max(z, 0.0) - z * label + std::log1p(std::exp(-std::abs(z)));
    const std::size_t zid = logit.id();
    return t.record("bce_with_logits", {1}, {loss}, {zid}, [zid, label](Tape& tp, std::size_t self) {
        const double z = tp.value_of(zid)[0];
        tp.grad_of(zid)[0] += tp.grad_of(self)[0] * (stable_sigmoid(z) - label);
    });
}

LstmState lstm_cell_from_projection(const Var& projected, const LstmState& prev, const Var& recurrent) {
    const std::size_t hidden = prev.h.size();
    if (projected.size() != 4 * hidden) throw ShapeError("lstm: projection must have 4*hidden entries");
    if (recurrent.shape() != Shape{4 * hidden, hidden}) throw ShapeError("lstm: recurrent weights must be 4H x H");
    const Var pre = add(projected, matvec(recurrent, prev.h));
    const Var in_gate = sigmoid(slice(pre, 0, hidden));
    const Var forget_gate = sigmoid(slice(pre, hidden, hidden));
    const Var candidate = tanh(slice(pre, 2 * hidden, hidden));
    const Var out_gate = sigmoid(slice(pre, 3 * hidden, hidden));
    const Var c = add(mul(forget_gate, prev.c), mul(in_gate, candidate));
    return {mul(out_gate, tanh(c)), c};
}

LstmState lstm_cell_step(const Var& x, const LstmState& prev, const LstmWeights& w) {
    require_rank(x, 1, "lstm_cell_step");
    if (prev.h.size() != prev.c.size()) throw ShapeError("lstm_cell_step: h/c size mismatch");
    if (w.input.shape().size() != 2 || w.input.shape()[1] != x.size())
        throw ShapeError("lstm_cell_step: input weights must be 4H x " + std::to_string(x.size()));
    return lstm_cell_from_projection(dense(x, w.input, w.bias), prev, w.recurrent);
}

// ---------------------------------------------------------------------------

double finite_diff_check(const ScalarFn& f, const std::vector<Tensor>& point, const FiniteDiffOptions& options) {
    std::vector<std::vector<double>> analytic;
    {
        Tape tape;
        std::vector<Var> inputs;
        for (const Tensor& p : point) inputs.push_back(tape.leaf(p.shape, p.data, true));
        Var out = f(tape, inputs);
        tape.backward(out);
        for (const Var& v : inputs) {
            auto g = tape.grad(v);
            analytic.emplace_back(g.begin(), g.end());
        }
    }

    auto evaluate = [&](const std::vector<Tensor>& at) {
        Tape tape;
        std::vector<Var> inputs;
        for (const Tensor& p : at) inputs.push_back(tape.leaf(p.shape, p.data, false));
        return f(tape, inputs).item();
    };

    Rng rng(options.seed);
    std::vector<Tensor> probe = point;
    double worst = 0.0;
    for (std::size_t k = 0; k < point.size(); ++k) {
        std::vector<std::size_t> coords(point[k].size());
        std::iota(coords.begin(), coords.end(), 0);
        if (options.max_coords_per_input > 0 && coords.size() > options.max_coords_per_input) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(options.max_coords_per_input);
        }
        for (std::size_t i : coords) {
            const double orig = point[k].data[i];
            probe[k].data[i] = orig + options.step;
            const double up = evaluate(probe);
            probe[k].data[i] = orig - options.step;
            const double down = evaluate(probe);
            probe[k].data[i] = orig;
            const double numeric = (up - down) / (2.0 * options.step);
            worst = std::max(worst, std::abs(analytic[k][i] - numeric) / std::max(1.0, std::abs(numeric)));
        }
    }
    return worst;
}

}  // namespace ivaloc
