#include "amf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace amf {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ", ";
        os << s[i];
    }
    os << ")";
    return os.str();
}

static void check_shape_positive(const char* op, const Shape& s) {
    for (int64_t d : s) {
        if (d <= 0) throw ShapeError(std::string(op) + ": non-positive dimension in " + shape_str(s));
    }
}

// ---- Tensor ----

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    check_shape_positive("from_data", shape);
    if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
        throw ShapeError("from_data: data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    }
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    int64_t n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    int64_t n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value) {
    return from_data(Shape{}, std::vector<double>{value}, false);
}

int64_t Tensor::dim(int axis) const {
    int r = rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw ShapeError("dim: axis out of range for " + shape_str(shape()));
    return node_->shape[axis];
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item: tensor " + shape_str(shape()) + " is not a scalar");
    return node_->data[0];
}

const std::vector<double>& Tensor::grad() const {
    if (node_->grad.empty()) {
        throw Error("grad: no gradient populated; call backward() on a loss reaching this tensor");
    }
    return node_->grad;
}

void Tensor::zero_grad() {
    node_->grad.clear();
}

// ---- OpGraph / backward ----

OpGraph::OpGraph(const NodePtr& root) {
    // Iterative post-order DFS over requires_grad ancestry: inputs before
    // consumers, root last.
    std::unordered_set<TensorNode*> visited;
    std::vector<std::pair<TensorNode*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        bool descended = false;
        while (idx < node->parents.size()) {
            TensorNode* p = node->parents[idx++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
                descended = true;
                break;
            }
        }
        if (!descended && stack.back().second >= stack.back().first->parents.size()) {
            order_.push_back(stack.back().first);
            stack.pop_back();
        }
    }
}

void Tensor::backward() const {
    if (numel() != 1) {
        throw ShapeError("backward: loss must be scalar, got " + shape_str(shape()));
    }
    if (!node_->requires_grad) return;  // constant graph: nothing reachable

    OpGraph graph(node_);
    const auto& order = graph.order();
    std::unordered_map<TensorNode*, size_t> pos;
    pos.reserve(order.size() * 2);
    for (size_t i = 0; i < order.size(); ++i) pos[order[i]] = i;

    // Pass-local gradient buffers; folded into persistent grads at the end so
    // repeated backward calls accumulate cleanly.
    std::vector<std::vector<double>> buf(order.size());
    buf[order.size() - 1].assign(1, 1.0);

    for (size_t i = order.size(); i-- > 0;) {
        TensorNode* n = order[i];
        auto& g = buf[i];
        if (g.empty()) continue;
        if (n->backward_fn) {
            std::vector<std::vector<double>*> gp(n->parents.size(), nullptr);
            for (size_t j = 0; j < n->parents.size(); ++j) {
                TensorNode* p = n->parents[j].get();
                if (!p->requires_grad) continue;
                auto& pb = buf[pos[p]];
                if (pb.empty()) pb.assign(static_cast<size_t>(p->numel()), 0.0);
                gp[j] = &pb;
            }
            n->backward_fn(*n, g, gp);
        }
        if (n->grad.empty()) n->grad.assign(g.size(), 0.0);
        for (size_t k = 0; k < g.size(); ++k) n->grad[k] += g[k];
        g.clear();
        g.shrink_to_fit();
    }
}

Tensor make_op(const char* op, Shape shape, std::vector<double> data,
               std::vector<Tensor> parents, BackwardFn backward_fn) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
        throw ShapeError(std::string(op) + ": output data length mismatch for " + shape_str(shape));
    }
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->op = op;
    bool rg = false;
    for (const auto& p : parents) rg = rg || p.requires_grad();
    n->requires_grad = rg;
    if (rg) {
        n->parents.reserve(parents.size());
        for (auto& p : parents) n->parents.push_back(p.node());
        n->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(n));
}

// ---- binary elementwise with leading-batch broadcast ----

namespace {

struct BinPlan {
    Shape out;
    bool swap = false;   // true: a is the tiled (smaller) operand
    int64_t block = 1;   // numel of the smaller operand
};

bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    size_t off = big.size() - small.size();
    for (size_t i = 0; i < small.size(); ++i) {
        if (small[i] != big[off + i]) return false;
    }
    return true;
}

BinPlan binary_plan(const char* op, const Tensor& a, const Tensor& b) {
    BinPlan p;
    if (a.shape() == b.shape()) {
        p.out = a.shape();
        p.block = a.numel();
        return p;
    }
    if (b.numel() == 1) {
        p.out = a.shape();
        p.block = 1;
        return p;
    }
    if (a.numel() == 1) {
        p.out = b.shape();
        p.swap = true;
        p.block = 1;
        return p;
    }
    if (is_suffix(b.shape(), a.shape())) {
        p.out = a.shape();
        p.block = b.numel();
        return p;
    }
    if (is_suffix(a.shape(), b.shape())) {
        p.out = b.shape();
        p.swap = true;
        p.block = a.numel();
        return p;
    }
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    BinPlan p = binary_plan("add", a, b);
    const auto& A = a.data();
    const auto& B = b.data();
    std::vector<double> out(shape_numel(p.out));
    const int64_t blk = p.block;
    if (!p.swap) {
        for (size_t i = 0; i < out.size(); ++i) out[i] = A[i] + B[i % blk];
    } else {
        for (size_t i = 0; i < out.size(); ++i) out[i] = A[i % blk] + B[i];
    }
    return make_op("add", p.out, std::move(out), {a, b},
                   [p](const TensorNode&, const std::vector<double>& g,
                       const std::vector<std::vector<double>*>& gp) {
                       auto* gfull = p.swap ? gp[1] : gp[0];
                       auto* gtile = p.swap ? gp[0] : gp[1];
                       if (gfull) {
                           for (size_t i = 0; i < g.size(); ++i) (*gfull)[i] += g[i];
                       }
                       if (gtile) {
                           for (size_t i = 0; i < g.size(); ++i) {
                               (*gtile)[i % static_cast<size_t>(p.block)] += g[i];
                           }
                       }
                   });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    BinPlan p = binary_plan("sub", a, b);
    const auto& A = a.data();
    const auto& B = b.data();
    std::vector<double> out(shape_numel(p.out));
    const int64_t blk = p.block;
    if (!p.swap) {
        for (size_t i = 0; i < out.size(); ++i) out[i] = A[i] - B[i % blk];
    } else {
        for (size_t i = 0; i < out.size(); ++i) out[i] = A[i % blk] - B[i];
    }
    return make_op("sub", p.out, std::move(out), {a, b},
                   [p](const TensorNode&, const std::vector<double>& g,
                       const std::vector<std::vector<double>*>& gp) {
                       const size_t blk = static_cast<size_t>(p.block);
                       if (!p.swap) {
                           if (gp[0]) for (size_t i = 0; i < g.size(); ++i) (*gp[0])[i] += g[i];
                           if (gp[1]) for (size_t i = 0; i < g.size(); ++i) (*gp[1])[i % blk] -= g[i];
                       } else {
                           if (gp[0]) for (size_t i = 0; i < g.size(); ++i) (*gp[0])[i % blk] += g[i];
                           if (gp[1]) for (size_t i = 0; i < g.size(); ++i) (*gp[1])[i] -= g[i];
                       }
                   });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    BinPlan p = binary_plan("mul", a, b);
    const auto& A = a.data();
    const auto& B = b.data();
    std::vector<double> out(shape_numel(p.out));
    const int64_t blk = p.block;
    if (!p.swap) {
        for (size_t i = 0; i < out.size(); ++i) out[i] = A[i] * B[i % blk];
    } else {
        for (size_t i = 0; i < out.size(); ++i) out[i] = A[i % blk] * B[i];
    }
    return make_op("mul", p.out, std::move(out), {a, b},
                   [p](const TensorNode& self, const std::vector<double>& g,
                       const std::vector<std::vector<double>*>& gp) {
                       const auto& A = self.parents[0]->data;
                       const auto& B = self.parents[1]->data;
                       const size_t blk = static_cast<size_t>(p.block);
                       if (!p.swap) {
                           if (gp[0]) for (size_t i = 0; i < g.size(); ++i) (*gp[0])[i] += g[i] * B[i % blk];
                           if (gp[1]) for (size_t i = 0; i < g.size(); ++i) (*gp[1])[i % blk] += g[i] * A[i];
                       } else {
                           if (gp[0]) for (size_t i = 0; i < g.size(); ++i) (*gp[0])[i % blk] += g[i] * B[i];
                           if (gp[1]) for (size_t i = 0; i < g.size(); ++i) (*gp[1])[i] += g[i] * A[i % blk];
                       }
                   });
}

Tensor div(const Tensor& a, const Tensor& b) {
    BinPlan p = binary_plan("div", a, b);
    const auto& B = b.data();
    for (double v : B) {
        if (v == 0.0) throw DomainError("div: zero denominator element");
    }
    const auto& A = a.data();
    std::vector<double> out(shape_numel(p.out));
    const int64_t blk = p.block;
    if (!p.swap) {
        for (size_t i = 0; i < out.size(); ++i) out[i] = A[i] / B[i % blk];
    } else {
        for (size_t i = 0; i < out.size(); ++i) out[i] = A[i % blk] / B[i];
    }
    return make_op("div", p.out, std::move(out), {a, b},
                   [p](const TensorNode& self, const std::vector<double>& g,
                       const std::vector<std::vector<double>*>& gp) {
                       const auto& A = self.parents[0]->data;
                       const auto& B = self.parents[1]->data;
                       const size_t blk = static_cast<size_t>(p.block);
                       if (!p.swap) {
                           if (gp[0]) for (size_t i = 0; i < g.size(); ++i) (*gp[0])[i] += g[i] / B[i % blk];
                           if (gp[1]) {
                               for (size_t i = 0; i < g.size(); ++i) {
                                   double bv = B[i % blk];
                                   (*gp[1])[i % blk] -= g[i] * A[i] / (bv * bv);
                               }
                           }
                       } else {
                           if (gp[0]) for (size_t i = 0; i < g.size(); ++i) (*gp[0])[i % blk] += g[i] / B[i];
                           if (gp[1]) {
                               for (size_t i = 0; i < g.size(); ++i) {
                                   double bv = B[i];
                                   (*gp[1])[i] -= g[i] * A[i % blk] / (bv * bv);
                               }
                           }
                       }
                   });
}

Tensor affine(const Tensor& x, double alpha, double beta) {
    const auto& X = x.data();
    std::vector<double> out(X.size());
    for (size_t i = 0; i < X.size(); ++i) out[i] = alpha * X[i] + beta;
    return make_op("affine", x.shape(), std::move(out), {x},
                   [alpha](const TensorNode&, const std::vector<double>& g,
                           const std::vector<std::vector<double>*>& gp) {
                       if (gp[0]) for (size_t i = 0; i < g.size(); ++i) (*gp[0])[i] += alpha * g[i];
                   });
}

Tensor div_scalar(const Tensor& x, double c) {
    if (c == 0.0) throw DomainError("div_scalar: division by zero");
    return affine(x, 1.0 / c, 0.0);
}

// ---- unary ops ----

namespace {

template <class Fwd, class Bwd>
Tensor unary_op(const char* name, const Tensor& x, Fwd f, Bwd df) {
    const auto& X = x.data();
    std::vector<double> out(X.size());
    for (size_t i = 0; i < X.size(); ++i) out[i] = f(X[i]);
    return make_op(name, x.shape(), std::move(out), {x},
                   [df](const TensorNode& self, const std::vector<double>& g,
                        const std::vector<std::vector<double>*>& gp) {
                       if (!gp[0]) return;
                       const auto& X = self.parents[0]->data;
                       const auto& Y = self.data;
                       for (size_t i = 0; i < g.size(); ++i) (*gp[0])[i] += g[i] * df(X[i], Y[i]);
                   });
}

double stable_sigmoid(double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    double e = std::exp(v);
    return e / (1.0 + e);
}

double stable_softplus(double v) {
    // log(1 + e^v) without overflow on either side
    return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
}

}  // namespace

Tensor neg(const Tensor& x) {
    return unary_op("neg", x, [](double v) { return -v; },
                    [](double, double) { return -1.0; });
}

Tensor abs(const Tensor& x) {
    // derivative at 0 is 0 (subgradient midpoint)
    return unary_op("abs", x, [](double v) { return std::abs(v); },
                    [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor exp(const Tensor& x) {
    return unary_op("exp", x, [](double v) { return std::exp(v); },
                    [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
    for (double v : x.data()) {
        if (v <= 0.0) throw DomainError("log: non-positive argument " + std::to_string(v));
    }
    return unary_op("log", x, [](double v) { return std::log(v); },
                    [](double v, double) { return 1.0 / v; });
}

Tensor tanh(const Tensor& x) {
    return unary_op("tanh", x, [](double v) { return std::tanh(v); },
                    [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
    return unary_op("sigmoid", x, stable_sigmoid,
                    [](double, double y) { return y * (1.0 - y); });
}

Tensor silu(const Tensor& x) {
    return unary_op("silu", x, [](double v) { return v * stable_sigmoid(v); },
                    [](double v, double) {
                        double s = stable_sigmoid(v);
                        return s * (1.0 + v * (1.0 - s));
                    });
}

Tensor softplus(const Tensor& x) {
    return unary_op("softplus", x, stable_softplus,
                    [](double v, double) { return stable_sigmoid(v); });
}

// ---- reductions ----

Tensor sum_all(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    return make_op("sum_all", Shape{}, {s}, {x},
                   [](const TensorNode& self, const std::vector<double>& g,
                      const std::vector<std::vector<double>*>& gp) {
                       if (!gp[0]) return;
                       const size_t n = self.parents[0]->data.size();
                       for (size_t i = 0; i < n; ++i) (*gp[0])[i] += g[0];
                   });
}

Tensor mean_all(const Tensor& x) {
    if (x.numel() == 0) throw ShapeError("mean_all: empty tensor");
    double s = 0.0;
    for (double v : x.data()) s += v;
    double inv = 1.0 / static_cast<double>(x.numel());
    return make_op("mean_all", Shape{}, {s * inv}, {x},
                   [inv](const TensorNode& self, const std::vector<double>& g,
                         const std::vector<std::vector<double>*>& gp) {
                       if (!gp[0]) return;
                       const size_t n = self.parents[0]->data.size();
                       for (size_t i = 0; i < n; ++i) (*gp[0])[i] += g[0] * inv;
                   });
}

namespace {

struct AxisPlan {
    int64_t outer, mid, inner;
    Shape out_shape;
};

AxisPlan axis_plan(const char* op, const Tensor& x, int axis) {
    int r = x.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) {
        throw ShapeError(std::string(op) + ": axis out of range for " + shape_str(x.shape()));
    }
    AxisPlan p{1, x.shape()[axis], 1, {}};
    for (int i = 0; i < axis; ++i) p.outer *= x.shape()[i];
    for (int i = axis + 1; i < r; ++i) p.inner *= x.shape()[i];
    for (int i = 0; i < r; ++i) {
        if (i != axis) p.out_shape.push_back(x.shape()[i]);
    }
    return p;
}

Tensor reduce_axis(const char* name, const Tensor& x, int axis, double scale) {
    AxisPlan p = axis_plan(name, x, axis);
    const auto& X = x.data();
    std::vector<double> out(static_cast<size_t>(p.outer * p.inner), 0.0);
    for (int64_t o = 0; o < p.outer; ++o) {
        for (int64_t m = 0; m < p.mid; ++m) {
            const double* src = X.data() + (o * p.mid + m) * p.inner;
            double* dst = out.data() + o * p.inner;
            for (int64_t i = 0; i < p.inner; ++i) dst[i] += src[i];
        }
    }
    if (scale != 1.0) {
        for (double& v : out) v *= scale;
    }
    return make_op(name, p.out_shape, std::move(out), {x},
                   [p, scale](const TensorNode&, const std::vector<double>& g,
                              const std::vector<std::vector<double>*>& gp) {
                       if (!gp[0]) return;
                       for (int64_t o = 0; o < p.outer; ++o) {
                           const double* gsrc = g.data() + o * p.inner;
                           for (int64_t m = 0; m < p.mid; ++m) {
                               double* dst = gp[0]->data() + (o * p.mid + m) * p.inner;
                               for (int64_t i = 0; i < p.inner; ++i) dst[i] += gsrc[i] * scale;
                           }
                       }
                   });
}

}  // namespace

Tensor sum_axis(const Tensor& x, int axis) { return reduce_axis("sum_axis", x, axis, 1.0); }

Tensor mean_axis(const Tensor& x, int axis) {
    AxisPlan p = axis_plan("mean_axis", x, axis);
    return reduce_axis("mean_axis", x, axis, 1.0 / static_cast<double>(p.mid));
}

// ---- shape ops ----

Tensor concat_last(const Tensor& a, const Tensor& b) {
    if (a.rank() != b.rank() || a.rank() == 0) {
        throw ShapeError("concat_last: ranks differ or scalar: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    for (int i = 0; i + 1 < a.rank(); ++i) {
        if (a.shape()[i] != b.shape()[i]) {
            throw ShapeError("concat_last: leading dims differ: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
        }
    }
    int64_t la = a.shape().back(), lb = b.shape().back();
    Shape out_shape = a.shape();
    out_shape.back() = la + lb;
    int64_t rows = a.numel() / la;
    std::vector<double> out(static_cast<size_t>(rows * (la + lb)));
    const auto& A = a.data();
    const auto& B = b.data();
    for (int64_t r = 0; r < rows; ++r) {
        std::memcpy(out.data() + r * (la + lb), A.data() + r * la, la * sizeof(double));
        std::memcpy(out.data() + r * (la + lb) + la, B.data() + r * lb, lb * sizeof(double));
    }
    return make_op("concat_last", out_shape, std::move(out), {a, b},
                   [rows, la, lb](const TensorNode&, const std::vector<double>& g,
                                  const std::vector<std::vector<double>*>& gp) {
                       for (int64_t r = 0; r < rows; ++r) {
                           const double* gr = g.data() + r * (la + lb);
                           if (gp[0]) {
                               double* d = gp[0]->data() + r * la;
                               for (int64_t i = 0; i < la; ++i) d[i] += gr[i];
                           }
                           if (gp[1]) {
                               double* d = gp[1]->data() + r * lb;
                               for (int64_t i = 0; i < lb; ++i) d[i] += gr[la + i];
                           }
                       }
                   });
}

Tensor slice_last(const Tensor& x, int64_t start, int64_t end) {
    if (x.rank() == 0) throw ShapeError("slice_last: scalar input");
    int64_t last = x.shape().back();
    if (start < 0 || end > last || start >= end) {
        throw ShapeError("slice_last: range [" + std::to_string(start) + ", " + std::to_string(end) +
                         ") invalid for " + shape_str(x.shape()));
    }
    Shape out_shape = x.shape();
    out_shape.back() = end - start;
    int64_t rows = x.numel() / last;
    int64_t w = end - start;
    std::vector<double> out(static_cast<size_t>(rows * w));
    const auto& X = x.data();
    for (int64_t r = 0; r < rows; ++r) {
        std::memcpy(out.data() + r * w, X.data() + r * last + start, w * sizeof(double));
    }
    return make_op("slice_last", out_shape, std::move(out), {x},
                   [rows, last, start, w](const TensorNode&, const std::vector<double>& g,
                                          const std::vector<std::vector<double>*>& gp) {
                       if (!gp[0]) return;
                       for (int64_t r = 0; r < rows; ++r) {
                           double* d = gp[0]->data() + r * last + start;
                           const double* gr = g.data() + r * w;
                           for (int64_t i = 0; i < w; ++i) d[i] += gr[i];
                       }
                   });
}

Tensor reshape(const Tensor& x, Shape shape) {
    check_shape_positive("reshape", shape);
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    std::vector<double> out = x.data();
    return make_op("reshape", std::move(shape), std::move(out), {x},
                   [](const TensorNode&, const std::vector<double>& g,
                      const std::vector<std::vector<double>*>& gp) {
                       if (!gp[0]) return;
                       for (size_t i = 0; i < g.size(); ++i) (*gp[0])[i] += g[i];
                   });
}

// ---- matmul family ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() == 0 || b.rank() == 0 || a.rank() > 2 || b.rank() > 2) {
        throw ShapeError("matmul: expects 1-D or 2-D operands, got " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    const bool a_vec = a.rank() == 1;
    const bool b_vec = b.rank() == 1;
    const int64_t m = a_vec ? 1 : a.shape()[0];
    const int64_t k = a_vec ? a.shape()[0] : a.shape()[1];
    const int64_t k2 = b_vec ? b.shape()[0] : b.shape()[0];
    const int64_t n = b_vec ? 1 : b.shape()[1];
    if (k != k2) {
        throw ShapeError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    const auto& A = a.data();
    const auto& B = b.data();
    std::vector<double> out(static_cast<size_t>(m * n), 0.0);
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = A.data() + i * k;
        double* orow = out.data() + i * n;
        for (int64_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            if (av == 0.0) continue;
            const double* brow = B.data() + kk * n;
            for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    Shape out_shape;
    if (a_vec && b_vec) out_shape = Shape{};
    else if (a_vec) out_shape = Shape{n};
    else if (b_vec) out_shape = Shape{m};
    else out_shape = Shape{m, n};
    return make_op("matmul", out_shape, std::move(out), {a, b},
                   [m, k, n](const TensorNode& self, const std::vector<double>& g,
                             const std::vector<std::vector<double>*>& gp) {
                       const auto& A = self.parents[0]->data;
                       const auto& B = self.parents[1]->data;
                       if (gp[0]) {
                           // gA = g * B^T
                           for (int64_t i = 0; i < m; ++i) {
                               const double* grow = g.data() + i * n;
                               double* da = gp[0]->data() + i * k;
                               for (int64_t kk = 0; kk < k; ++kk) {
                                   const double* brow = B.data() + kk * n;
                                   double s = 0.0;
                                   for (int64_t j = 0; j < n; ++j) s += grow[j] * brow[j];
                                   da[kk] += s;
                               }
                           }
                       }
                       if (gp[1]) {
                           // gB = A^T * g
                           for (int64_t kk = 0; kk < k; ++kk) {
                               double* db = gp[1]->data() + kk * n;
                               for (int64_t i = 0; i < m; ++i) {
                                   const double av = A[i * k + kk];
                                   if (av == 0.0) continue;
                                   const double* grow = g.data() + i * n;
                                   for (int64_t j = 0; j < n; ++j) db[j] += av * grow[j];
                               }
                           }
                       }
                   });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1]) {
        throw ShapeError("matmul_nt: expects (m,k) x (n,k), got " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    const int64_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
    const auto& A = a.data();
    const auto& B = b.data();
    std::vector<double> out(static_cast<size_t>(m * n));
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = A.data() + i * k;
        for (int64_t j = 0; j < n; ++j) {
            const double* brow = B.data() + j * k;
            double s = 0.0;
            for (int64_t kk = 0; kk < k; ++kk) s += arow[kk] * brow[kk];
            out[i * n + j] = s;
        }
    }
    return make_op("matmul_nt", Shape{m, n}, std::move(out), {a, b},
                   [m, k, n](const TensorNode& self, const std::vector<double>& g,
                             const std::vector<std::vector<double>*>& gp) {
                       const auto& A = self.parents[0]->data;
                       const auto& B = self.parents[1]->data;
                       if (gp[0]) {
                           // gA = g * B
                           for (int64_t i = 0; i < m; ++i) {
                               const double* grow = g.data() + i * n;
                               double* da = gp[0]->data() + i * k;
                               for (int64_t j = 0; j < n; ++j) {
                                   const double gv = grow[j];
                                   if (gv == 0.0) continue;
                                   const double* brow = B.data() + j * k;
                                   for (int64_t kk = 0; kk < k; ++kk) da[kk] += gv * brow[kk];
                               }
                           }
                       }
                       if (gp[1]) {
                           // gB = g^T * A
                           for (int64_t j = 0; j < n; ++j) {
                               double* db = gp[1]->data() + j * k;
                               for (int64_t i = 0; i < m; ++i) {
                                   const double gv = g[i * n + j];
                                   if (gv == 0.0) continue;
                                   const double* arow = A.data() + i * k;
                                   for (int64_t kk = 0; kk < k; ++kk) db[kk] += gv * arow[kk];
                               }
                           }
                       }
                   });
}

// ---- softmax / layer norm ----

Tensor softmax_last(const Tensor& x) {
    if (x.rank() == 0) throw ShapeError("softmax_last: scalar input");
    const int64_t d = x.shape().back();
    const int64_t rows = x.numel() / d;
    const auto& X = x.data();
    std::vector<double> out(X.size());
    for (int64_t r = 0; r < rows; ++r) {
        const double* src = X.data() + r * d;
        double* dst = out.data() + r * d;
        double mx = src[0];
        for (int64_t i = 1; i < d; ++i) mx = std::max(mx, src[i]);
        double s = 0.0;
        for (int64_t i = 0; i < d; ++i) {
            dst[i] = std::exp(src[i] - mx);
            s += dst[i];
        }
        for (int64_t i = 0; i < d; ++i) dst[i] /= s;
    }
    return make_op("softmax_last", x.shape(), std::move(out), {x},
                   [rows, d](const TensorNode& self, const std::vector<double>& g,
                             const std::vector<std::vector<double>*>& gp) {
                       if (!gp[0]) return;
                       const auto& Y = self.data;
                       for (int64_t r = 0; r < rows; ++r) {
                           const double* y = Y.data() + r * d;
                           const double* gr = g.data() + r * d;
                           double dot = 0.0;
                           for (int64_t i = 0; i < d; ++i) dot += gr[i] * y[i];
                           double* dst = gp[0]->data() + r * d;
                           for (int64_t i = 0; i < d; ++i) dst[i] += y[i] * (gr[i] - dot);
                       }
                   });
}

Tensor layer_norm_last(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (x.rank() == 0) throw ShapeError("layer_norm_last: scalar input");
    const int64_t d = x.shape().back();
    if (gamma.rank() != 1 || gamma.shape()[0] != d || beta.rank() != 1 || beta.shape()[0] != d) {
        throw ShapeError("layer_norm_last: affine params " + shape_str(gamma.shape()) + "/" +
                         shape_str(beta.shape()) + " do not match last dim of " + shape_str(x.shape()));
    }
    const int64_t rows = x.numel() / d;
    const auto& X = x.data();
    const auto& G = gamma.data();
    const auto& B = beta.data();
    auto xhat = std::make_shared<std::vector<double>>(X.size());
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
    std::vector<double> out(X.size());
    for (int64_t r = 0; r < rows; ++r) {
        const double* src = X.data() + r * d;
        double mean = 0.0;
        for (int64_t i = 0; i < d; ++i) mean += src[i];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t i = 0; i < d; ++i) {
            double c = src[i] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        double inv = 1.0 / std::sqrt(var + eps);
        (*inv_std)[static_cast<size_t>(r)] = inv;
        double* xh = xhat->data() + r * d;
        double* dst = out.data() + r * d;
        for (int64_t i = 0; i < d; ++i) {
            xh[i] = (src[i] - mean) * inv;
            dst[i] = xh[i] * G[i] + B[i];
        }
    }
    return make_op(
        "layer_norm_last", x.shape(), std::move(out), {x, gamma, beta},
        [rows, d, xhat, inv_std](const TensorNode& self, const std::vector<double>& g,
                                 const std::vector<std::vector<double>*>& gp) {
            const auto& G = self.parents[1]->data;
            for (int64_t r = 0; r < rows; ++r) {
                const double* gr = g.data() + r * d;
                const double* xh = xhat->data() + r * d;
                if (gp[0]) {
                    const double inv = (*inv_std)[static_cast<size_t>(r)];
                    double m1 = 0.0, m2 = 0.0;
                    for (int64_t i = 0; i < d; ++i) {
                        double gx = gr[i] * G[i];
                        m1 += gx;
                        m2 += gx * xh[i];
                    }
                    m1 /= static_cast<double>(d);
                    m2 /= static_cast<double>(d);
                    double* dst = gp[0]->data() + r * d;
                    for (int64_t i = 0; i < d; ++i) {
                        double gx = gr[i] * G[i];
                        dst[i] += inv * (gx - m1 - xh[i] * m2);
                    }
                }
                if (gp[1]) {
                    for (int64_t i = 0; i < d; ++i) (*gp[1])[i] += gr[i] * xh[i];
                }
                if (gp[2]) {
                    for (int64_t i = 0; i < d; ++i) (*gp[2])[i] += gr[i];
                }
            }
        });
}

// ---- convolutions / pooling ----

Tensor conv1d_depthwise(const Tensor& x, const Tensor& w, const Tensor& bias) {
    if (x.rank() != 2 && x.rank() != 3) {
        throw ShapeError("conv1d_depthwise: expects (L,C) or (B,L,C), got " + shape_str(x.shape()));
    }
    const bool batched = x.rank() == 3;
    const int64_t Bn = batched ? x.shape()[0] : 1;
    const int64_t L = x.shape()[batched ? 1 : 0];
    const int64_t C = x.shape().back();
    if (w.rank() != 2 || w.shape()[1] != C) {
        throw ShapeError("conv1d_depthwise: weight " + shape_str(w.shape()) + " does not match input " +
                         shape_str(x.shape()));
    }
    const int64_t K = w.shape()[0];
    if (K < 1) throw ShapeError("conv1d_depthwise: kernel width must be >= 1");
    if (bias.rank() != 1 || bias.shape()[0] != C) {
        throw ShapeError("conv1d_depthwise: bias " + shape_str(bias.shape()) + " does not match channels");
    }
    const auto& X = x.data();
    const auto& W = w.data();
    const auto& Bv = bias.data();
    std::vector<double> out(X.size());
    for (int64_t b = 0; b < Bn; ++b) {
        const double* xb = X.data() + b * L * C;
        double* ob = out.data() + b * L * C;
        for (int64_t l = 0; l < L; ++l) {
            double* orow = ob + l * C;
            for (int64_t c = 0; c < C; ++c) orow[c] = Bv[c];
            for (int64_t kk = 0; kk < K; ++kk) {
                const int64_t t = l + kk - (K - 1);  // causal: left pad K-1
                if (t < 0) continue;
                const double* xrow = xb + t * C;
                const double* wrow = W.data() + kk * C;
                for (int64_t c = 0; c < C; ++c) orow[c] += wrow[c] * xrow[c];
            }
        }
    }
    return make_op("conv1d_depthwise", x.shape(), std::move(out), {x, w, bias},
                   [Bn, L, C, K](const TensorNode& self, const std::vector<double>& g,
                                 const std::vector<std::vector<double>*>& gp) {
                       const auto& X = self.parents[0]->data;
                       const auto& W = self.parents[1]->data;
                       for (int64_t b = 0; b < Bn; ++b) {
                           const double* xb = X.data() + b * L * C;
                           const double* gb = g.data() + b * L * C;
                           for (int64_t l = 0; l < L; ++l) {
                               const double* grow = gb + l * C;
                               if (gp[2]) {
                                   for (int64_t c = 0; c < C; ++c) (*gp[2])[c] += grow[c];
                               }
                               for (int64_t kk = 0; kk < K; ++kk) {
                                   const int64_t t = l + kk - (K - 1);
                                   if (t < 0) continue;
                                   if (gp[0]) {
                                       double* dst = gp[0]->data() + (b * L + t) * C;
                                       const double* wrow = W.data() + kk * C;
                                       for (int64_t c = 0; c < C; ++c) dst[c] += grow[c] * wrow[c];
                                   }
                                   if (gp[1]) {
                                       double* dw = gp[1]->data() + kk * C;
                                       const double* xrow = xb + t * C;
                                       for (int64_t c = 0; c < C; ++c) dw[c] += grow[c] * xrow[c];
                                   }
                               }
                           }
                       }
                   });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias) {
    if (x.rank() != 4) throw ShapeError("conv2d: expects (B,H,W,Ci), got " + shape_str(x.shape()));
    if (w.rank() != 4) throw ShapeError("conv2d: weight expects (Kh,Kw,Ci,Co), got " + shape_str(w.shape()));
    const int64_t Bn = x.shape()[0], H = x.shape()[1], Wd = x.shape()[2], Ci = x.shape()[3];
    const int64_t Kh = w.shape()[0], Kw = w.shape()[1], Co = w.shape()[3];
    if (w.shape()[2] != Ci) {
        throw ShapeError("conv2d: input channels mismatch: " + shape_str(x.shape()) + " vs " +
                         shape_str(w.shape()));
    }
    if (Kh % 2 == 0 || Kw % 2 == 0) throw ShapeError("conv2d: kernel dims must be odd for same padding");
    if (bias.rank() != 1 || bias.shape()[0] != Co) {
        throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match out channels");
    }
    const int64_t ph = Kh / 2, pw = Kw / 2;
    const auto& X = x.data();
    const auto& W = w.data();
    const auto& Bv = bias.data();
    std::vector<double> out(static_cast<size_t>(Bn * H * Wd * Co));
    std::vector<double> acc(static_cast<size_t>(Co));
    for (int64_t b = 0; b < Bn; ++b) {
        for (int64_t h = 0; h < H; ++h) {
            for (int64_t wq = 0; wq < Wd; ++wq) {
                for (int64_t co = 0; co < Co; ++co) acc[co] = Bv[co];
                for (int64_t kh = 0; kh < Kh; ++kh) {
                    const int64_t ih = h + kh - ph;
                    if (ih < 0 || ih >= H) continue;
                    for (int64_t kw = 0; kw < Kw; ++kw) {
                        const int64_t iw = wq + kw - pw;
                        if (iw < 0 || iw >= Wd) continue;
                        const double* xp = X.data() + ((b * H + ih) * Wd + iw) * Ci;
                        const double* wp = W.data() + (kh * Kw + kw) * Ci * Co;
                        for (int64_t ci = 0; ci < Ci; ++ci) {
                            const double xv = xp[ci];
                            if (xv == 0.0) continue;
                            const double* wrow = wp + ci * Co;
                            for (int64_t co = 0; co < Co; ++co) acc[co] += xv * wrow[co];
                        }
                    }
                }
                std::memcpy(out.data() + ((b * H + h) * Wd + wq) * Co, acc.data(), Co * sizeof(double));
            }
        }
    }
    return make_op(
        "conv2d", Shape{Bn, H, Wd, Co}, std::move(out), {x, w, bias},
        [Bn, H, Wd, Ci, Kh, Kw, Co, ph, pw](const TensorNode& self, const std::vector<double>& g,
                                            const std::vector<std::vector<double>*>& gp) {
            const auto& X = self.parents[0]->data;
            const auto& W = self.parents[1]->data;
            for (int64_t b = 0; b < Bn; ++b) {
                for (int64_t h = 0; h < H; ++h) {
                    for (int64_t wq = 0; wq < Wd; ++wq) {
                        const double* grow = g.data() + ((b * H + h) * Wd + wq) * Co;
                        if (gp[2]) {
                            for (int64_t co = 0; co < Co; ++co) (*gp[2])[co] += grow[co];
                        }
                        for (int64_t kh = 0; kh < Kh; ++kh) {
                            const int64_t ih = h + kh - ph;
                            if (ih < 0 || ih >= H) continue;
                            for (int64_t kw = 0; kw < Kw; ++kw) {
                                const int64_t iw = wq + kw - pw;
                                if (iw < 0 || iw >= Wd) continue;
                                const int64_t xoff = ((b * H + ih) * Wd + iw) * Ci;
                                const int64_t woff = (kh * Kw + kw) * Ci * Co;
                                for (int64_t ci = 0; ci < Ci; ++ci) {
                                    const double* wrow = W.data() + woff + ci * Co;
                                    if (gp[0]) {
                                        double s = 0.0;
                                        for (int64_t co = 0; co < Co; ++co) s += grow[co] * wrow[co];
                                        (*gp[0])[xoff + ci] += s;
                                    }
                                    if (gp[1]) {
                                        const double xv = X[xoff + ci];
                                        if (xv != 0.0) {
                                            double* dw = gp[1]->data() + woff + ci * Co;
                                            for (int64_t co = 0; co < Co; ++co) dw[co] += xv * grow[co];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
}

namespace {

void check_pool_input(const char* op, const Tensor& x) {
    if (x.rank() != 4) throw ShapeError(std::string(op) + ": expects (B,H,W,C), got " + shape_str(x.shape()));
    if (x.shape()[1] % 2 != 0 || x.shape()[2] % 2 != 0) {
        throw ShapeError(std::string(op) + ": H and W must be even, got " + shape_str(x.shape()));
    }
}

}  // namespace

Tensor mean_pool2x2(const Tensor& x) {
    check_pool_input("mean_pool2x2", x);
    const int64_t Bn = x.shape()[0], H = x.shape()[1], W = x.shape()[2], C = x.shape()[3];
    const int64_t Ho = H / 2, Wo = W / 2;
    const auto& X = x.data();
    std::vector<double> out(static_cast<size_t>(Bn * Ho * Wo * C));
    for (int64_t b = 0; b < Bn; ++b) {
        for (int64_t h = 0; h < Ho; ++h) {
            for (int64_t w = 0; w < Wo; ++w) {
                double* dst = out.data() + ((b * Ho + h) * Wo + w) * C;
                for (int64_t c = 0; c < C; ++c) dst[c] = 0.0;
                for (int64_t dh = 0; dh < 2; ++dh) {
                    for (int64_t dw = 0; dw < 2; ++dw) {
                        const double* src = X.data() + ((b * H + 2 * h + dh) * W + 2 * w + dw) * C;
                        for (int64_t c = 0; c < C; ++c) dst[c] += 0.25 * src[c];
                    }
                }
            }
        }
    }
    return make_op("mean_pool2x2", Shape{Bn, Ho, Wo, C}, std::move(out), {x},
                   [Bn, H, W, C, Ho, Wo](const TensorNode&, const std::vector<double>& g,
                                         const std::vector<std::vector<double>*>& gp) {
                       if (!gp[0]) return;
                       for (int64_t b = 0; b < Bn; ++b) {
                           for (int64_t h = 0; h < Ho; ++h) {
                               for (int64_t w = 0; w < Wo; ++w) {
                                   const double* gr = g.data() + ((b * Ho + h) * Wo + w) * C;
                                   for (int64_t dh = 0; dh < 2; ++dh) {
                                       for (int64_t dw = 0; dw < 2; ++dw) {
                                           double* dst = gp[0]->data() +
                                                         ((b * H + 2 * h + dh) * W + 2 * w + dw) * C;
                                           for (int64_t c = 0; c < C; ++c) dst[c] += 0.25 * gr[c];
                                       }
                                   }
                               }
                           }
                       }
                   });
}

Tensor max_pool2x2(const Tensor& x) {
    check_pool_input("max_pool2x2", x);
    const int64_t Bn = x.shape()[0], H = x.shape()[1], W = x.shape()[2], C = x.shape()[3];
    const int64_t Ho = H / 2, Wo = W / 2;
    const auto& X = x.data();
    std::vector<double> out(static_cast<size_t>(Bn * Ho * Wo * C));
    auto arg = std::make_shared<std::vector<int64_t>>(out.size());
    for (int64_t b = 0; b < Bn; ++b) {
        for (int64_t h = 0; h < Ho; ++h) {
            for (int64_t w = 0; w < Wo; ++w) {
                const int64_t obase = ((b * Ho + h) * Wo + w) * C;
                for (int64_t c = 0; c < C; ++c) {
                    double best = -std::numeric_limits<double>::infinity();
                    int64_t best_idx = 0;
                    for (int64_t dh = 0; dh < 2; ++dh) {
                        for (int64_t dw = 0; dw < 2; ++dw) {
                            const int64_t idx = ((b * H + 2 * h + dh) * W + 2 * w + dw) * C + c;
                            if (X[idx] > best) {
                                best = X[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out[obase + c] = best;
                    (*arg)[obase + c] = best_idx;
                }
            }
        }
    }
    return make_op("max_pool2x2", Shape{Bn, Ho, Wo, C}, std::move(out), {x},
                   [arg](const TensorNode&, const std::vector<double>& g,
                         const std::vector<std::vector<double>*>& gp) {
                       if (!gp[0]) return;
                       for (size_t i = 0; i < g.size(); ++i) (*gp[0])[(*arg)[i]] += g[i];
                   });
}

// ---- gather / mask / normalize ----

Tensor embedding_rows(const Tensor& table, const std::vector<int64_t>& indices) {
    if (table.rank() != 2) throw ShapeError("embedding_rows: table must be 2-D, got " + shape_str(table.shape()));
    const int64_t V = table.shape()[0], D = table.shape()[1];
    for (int64_t idx : indices) {
        if (idx < 0 || idx >= V) {
            throw DomainError("embedding_rows: index " + std::to_string(idx) + " out of range [0, " +
                              std::to_string(V) + ")");
        }
    }
    const int64_t n = static_cast<int64_t>(indices.size());
    const auto& T = table.data();
    std::vector<double> out(static_cast<size_t>(n * D));
    for (int64_t i = 0; i < n; ++i) {
        std::memcpy(out.data() + i * D, T.data() + indices[i] * D, D * sizeof(double));
    }
    auto idx_copy = std::make_shared<std::vector<int64_t>>(indices);
    return make_op("embedding_rows", Shape{n, D}, std::move(out), {table},
                   [idx_copy, D](const TensorNode&, const std::vector<double>& g,
                                 const std::vector<std::vector<double>*>& gp) {
                       if (!gp[0]) return;
                       for (size_t i = 0; i < idx_copy->size(); ++i) {
                           double* dst = gp[0]->data() + (*idx_copy)[i] * D;
                           const double* gr = g.data() + i * D;
                           for (int64_t j = 0; j < D; ++j) dst[j] += gr[j];
                       }
                   });
}

Tensor mask(const Tensor& x, const Tensor& m) {
    if (m.requires_grad()) throw Error("mask: mask must be a constant tensor");
    for (double v : m.data()) {
        if (v != 0.0 && v != 1.0) throw DomainError("mask: mask entries must be 0 or 1");
    }
    return mul(x, m);
}

Tensor l2_normalize_last(const Tensor& x, double eps) {
    if (x.rank() == 0) throw ShapeError("l2_normalize_last: scalar input");
    const int64_t d = x.shape().back();
    const int64_t rows = x.numel() / d;
    const auto& X = x.data();
    auto inv_norm = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
    std::vector<double> out(X.size());
    for (int64_t r = 0; r < rows; ++r) {
        const double* src = X.data() + r * d;
        double s = 0.0;
        for (int64_t i = 0; i < d; ++i) s += src[i] * src[i];
        double inv = 1.0 / std::sqrt(s + eps);
        (*inv_norm)[static_cast<size_t>(r)] = inv;
        double* dst = out.data() + r * d;
        for (int64_t i = 0; i < d; ++i) dst[i] = src[i] * inv;
    }
    return make_op("l2_normalize_last", x.shape(), std::move(out), {x},
                   [rows, d, inv_norm](const TensorNode& self, const std::vector<double>& g,
                                       const std::vector<std::vector<double>*>& gp) {
                       if (!gp[0]) return;
                       const auto& Y = self.data;
                       for (int64_t r = 0; r < rows; ++r) {
                           const double inv = (*inv_norm)[static_cast<size_t>(r)];
                           const double* y = Y.data() + r * d;
                           const double* gr = g.data() + r * d;
                           double dot = 0.0;
                           for (int64_t i = 0; i < d; ++i) dot += gr[i] * y[i];
                           double* dst = gp[0]->data() + r * d;
                           for (int64_t i = 0; i < d; ++i) dst[i] += inv * (gr[i] - y[i] * dot);
                       }
                   });
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b, double eps) {
    if (a.shape() != b.shape()) {
        throw ShapeError("cosine_similarity: shapes differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    return sum_axis(mul(l2_normalize_last(a, eps), l2_normalize_last(b, eps)), -1);
}

Tensor stack_seq(const std::vector<Tensor>& tokens) {
    if (tokens.empty()) throw ShapeError("stack_seq: empty token list");
    const Shape& s0 = tokens[0].shape();
    if (s0.size() != 2) throw ShapeError("stack_seq: tokens must be (B,D), got " + shape_str(s0));
    for (const auto& t : tokens) {
        if (t.shape() != s0) {
            throw ShapeError("stack_seq: token shapes differ: " + shape_str(s0) + " vs " +
                             shape_str(t.shape()));
        }
    }
    const int64_t B = s0[0], D = s0[1];
    const int64_t n = static_cast<int64_t>(tokens.size());
    std::vector<double> out(static_cast<size_t>(B * n * D));
    for (int64_t i = 0; i < n; ++i) {
        const auto& T = tokens[i].data();
        for (int64_t b = 0; b < B; ++b) {
            std::memcpy(out.data() + (b * n + i) * D, T.data() + b * D, D * sizeof(double));
        }
    }
    return make_op("stack_seq", Shape{B, n, D}, std::move(out), tokens,
                   [B, n, D](const TensorNode&, const std::vector<double>& g,
                             const std::vector<std::vector<double>*>& gp) {
                       for (int64_t i = 0; i < n; ++i) {
                           if (!gp[i]) continue;
                           for (int64_t b = 0; b < B; ++b) {
                               double* dst = gp[i]->data() + b * D;
                               const double* gr = g.data() + (b * n + i) * D;
                               for (int64_t j = 0; j < D; ++j) dst[j] += gr[j];
                           }
                       }
                   });
}

Tensor seq_select(const Tensor& x, int64_t t) {
    if (x.rank() != 3) throw ShapeError("seq_select: expects (B,L,D), got " + shape_str(x.shape()));
    const int64_t B = x.shape()[0], L = x.shape()[1], D = x.shape()[2];
    if (t < 0 || t >= L) {
        throw ShapeError("seq_select: position " + std::to_string(t) + " out of range for " +
                         shape_str(x.shape()));
    }
    const auto& X = x.data();
    std::vector<double> out(static_cast<size_t>(B * D));
    for (int64_t b = 0; b < B; ++b) {
        std::memcpy(out.data() + b * D, X.data() + (b * L + t) * D, D * sizeof(double));
    }
    return make_op("seq_select", Shape{B, D}, std::move(out), {x},
                   [B, L, D, t](const TensorNode&, const std::vector<double>& g,
                                const std::vector<std::vector<double>*>& gp) {
                       if (!gp[0]) return;
                       for (int64_t b = 0; b < B; ++b) {
                           double* dst = gp[0]->data() + (b * L + t) * D;
                           const double* gr = g.data() + b * D;
                           for (int64_t j = 0; j < D; ++j) dst[j] += gr[j];
                       }
                   });
}

// ---- gradient checking ----

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
    Tensor leaf = Tensor::from_data(x.shape(), x.data(), true);
    Tensor loss = f(leaf);
    if (loss.numel() != 1) throw ShapeError("grad_check: f must return a scalar");
    loss.backward();
    std::vector<double> analytic = leaf.has_grad() ? leaf.grad() : std::vector<double>(x.data().size(), 0.0);

    double max_err = 0.0;
    std::vector<double> probe = x.data();
    for (size_t i = 0; i < probe.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + eps;
        double fp = f(Tensor::from_data(x.shape(), probe, false)).item();
        probe[i] = orig - eps;
        double fm = f(Tensor::from_data(x.shape(), probe, false)).item();
        probe[i] = orig;
        double numeric = (fp - fm) / (2.0 * eps);
        double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
        max_err = std::max(max_err, err);
    }
    return max_err;
}

}  // namespace amf
