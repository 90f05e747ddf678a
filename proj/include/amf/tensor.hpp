#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "amf/error.hpp"

namespace amf {

// Dense row-major tensor of 64-bit floats participating in a reverse-mode
// differentiation graph. Rank 0 (empty shape) is a scalar.
using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

// Backward closure: given the node and the gradient of the loss w.r.t. its
// output, accumulate into the per-parent gradient buffers. A null buffer
// means that parent does not need a gradient.
using BackwardFn = std::function<void(const TensorNode& self,
                                      const std::vector<double>& gout,
                                      const std::vector<std::vector<double>*>& gparents)>;

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    // Persistent accumulated gradient; filled by backward() for every
    // requires_grad node, and added to on repeated calls.
    std::vector<double> grad;
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<NodePtr> parents;
    BackwardFn backward_fn;

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
};

class Tensor {
public:
    Tensor() = default;

    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int64_t numel() const { return node_->numel(); }
    int64_t dim(int axis) const;
    bool requires_grad() const { return node_->requires_grad; }
    const char* op() const { return node_->op; }

    const std::vector<double>& data() const { return node_->data; }
    // Leaf mutation hook for initializers and the optimizer. Graph nodes are
    // immutable after creation.
    std::vector<double>& raw_data() { return node_->data; }

    double item() const;

    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<double>& grad() const;
    void zero_grad();

    // Reverse-mode sweep from a scalar. Gradients of every reachable
    // requires_grad tensor are accumulated into their grad buffers; calling
    // again without zero_grad adds a second contribution.
    void backward() const;

    NodePtr node() const { return node_; }
    explicit Tensor(NodePtr n) : node_(std::move(n)) {}

private:
    NodePtr node_;
};

// Topologically ordered record of the primitive ops reachable from a root.
// Reverse traversal visits each node exactly once, children before parents.
class OpGraph {
public:
    explicit OpGraph(const NodePtr& root);
    const std::vector<TensorNode*>& order() const { return order_; }

private:
    std::vector<TensorNode*> order_;
};

// Factory for primitive ops. Result requires grad iff any parent does; for
// all-constant inputs the node is detached (no tape is built).
Tensor make_op(const char* op, Shape shape, std::vector<double> data,
               std::vector<Tensor> parents, BackwardFn backward_fn);

// ---- op catalogue ----

Tensor matmul(const Tensor& a, const Tensor& b);
// a (m,k) x b (n,k)^T -> (m,n); avoids materializing transposes.
Tensor matmul_nt(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

// alpha * x + beta, elementwise with scalar constants.
Tensor affine(const Tensor& x, double alpha, double beta);
inline Tensor scale(const Tensor& x, double c) { return affine(x, c, 0.0); }
inline Tensor add_scalar(const Tensor& x, double c) { return affine(x, 1.0, c); }
Tensor div_scalar(const Tensor& x, double c);

Tensor neg(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor softplus(const Tensor& x);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor sum_axis(const Tensor& x, int axis);
Tensor mean_axis(const Tensor& x, int axis);

Tensor concat_last(const Tensor& a, const Tensor& b);
Tensor slice_last(const Tensor& x, int64_t start, int64_t end);
Tensor reshape(const Tensor& x, Shape shape);

Tensor softmax_last(const Tensor& x);
Tensor layer_norm_last(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       double eps = 1e-5);

// Depthwise causal 1-D convolution along the sequence axis.
// x (B,L,C) or (L,C), w (K,C), optional bias (C); left pad of K-1 zeros.
Tensor conv1d_depthwise(const Tensor& x, const Tensor& w, const Tensor& bias);

// 2-D convolution, stride 1, zero 'same' padding, channels-last.
// x (B,H,W,Ci), w (Kh,Kw,Ci,Co), bias (Co) -> (B,H,W,Co).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias);

// 2x2 window, stride 2. H and W must be even.
Tensor mean_pool2x2(const Tensor& x);
Tensor max_pool2x2(const Tensor& x);

// Gather rows of a (V,D) table -> (n,D); gradient scatters back into rows.
Tensor embedding_rows(const Tensor& table, const std::vector<int64_t>& indices);

// Elementwise multiply by a constant 0/1 mask (same shape or broadcastable
// suffix). Mask entries are validated.
Tensor mask(const Tensor& x, const Tensor& m);

Tensor l2_normalize_last(const Tensor& x, double eps = 1e-12);
// Cosine similarity over the last axis; reduces it away.
Tensor cosine_similarity(const Tensor& a, const Tensor& b, double eps = 1e-12);

// Stack n tensors of shape (B,D) into (B,n,D).
Tensor stack_seq(const std::vector<Tensor>& tokens);
// Select sequence position t of x (B,L,D) -> (B,D).
Tensor seq_select(const Tensor& x, int64_t t);

// ---- gradient checking ----

// Max over coordinates of |analytic - central difference| / max(1, |central|).
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double eps = 1e-5);

}  // namespace amf
