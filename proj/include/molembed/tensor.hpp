#pragma once

#include <cstdint>
#include <deque>

#include "molembed/aligned.hpp"
#include <functional>
#include <string>
#include <vector>

namespace molembed::nn {

/// Dense row-major tensor of 64-bit reals.
struct Tensor {
    std::vector<int> shape;
    AVec data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s);
    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
    static Tensor from(std::vector<int> s, AVec d);
    static Tensor scalar(double v) { return from({1}, {v}); }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }
    int rows() const { return shape[0]; }
    int cols() const { return shape[1]; }
    double item() const;  // single-element tensors only

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    bool finite() const;
};

int64_t numel_of(const std::vector<int>& shape);

class Tape;

/// Handle to a node on a tape. Cheap to copy; invalidated by Tape::clear().
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Tensor& val() const;
    Tensor& grad() const;
};

/// Reverse-mode tape. Nodes are recorded in evaluation order; backward()
/// walks them in reverse. Parameters live outside the tape and receive
/// accumulated gradients through param().
class Tape {
public:
    Var leaf(Tensor value, bool needs_grad = false);
    Var constant(Tensor value) { return leaf(std::move(value), false); }
    /// External parameter: value is read through the pointer, gradients
    /// accumulate into *grad_sink (which must match the value's shape).
    Var param(const Tensor* value, Tensor* grad_sink);

    void backward(Var loss);
    void clear();
    size_t size() const { return nodes_.size(); }

    // --- op-author interface ---
    struct Node {
        Tensor value;                        // owned unless external
        const Tensor* vptr = nullptr;        // always valid
        Tensor grad;                         // owned unless external sink
        Tensor* gptr = nullptr;              // valid after ensure_grad
        bool needs_grad = false;
        bool external = false;
        std::function<void()> backprop;      // may be empty (leaves)
    };
    Var record(Tensor value, bool needs_grad);
    /// Ops attach the backward closure after recording, so the closure can
    /// capture the output Var itself.
    void set_backprop(Var v, std::function<void()> fn);
    const Tensor& value_of(Var v) const { return *nodes_[v.id].vptr; }
    Tensor& grad_of(Var v);
    bool grad_present(Var v) const;
    bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

private:
    void ensure_grad(int id);
    std::deque<Node> nodes_;  // deque: node addresses stay stable as it grows
};

// ---- differentiable operations ----

Var matmul(Var a, Var b);                           // [N,I] x [I,O]
Var linear(Var x, Var w, Var b);                    // x*W + b, b broadcast over rows
Var embed_rows(Var w, std::vector<int> ids);        // gather rows of [V,F] -> [N,F]
Var add(Var a, Var b);                              // same shape
Var add_rowvec(Var a, Var b);                       // [N,F] + [F]
Var sub(Var a, Var b);
Var mul(Var a, Var b);                              // elementwise
Var mul_colvec(Var a, Var c);                       // [N,F] * [N,1], broadcast across columns
Var affine(Var a, double k, double c);              // k*a + c
Var exp_scaled(Var a, double k);                    // exp(k*a)
Var sigmoid(Var a);
Var tanh_op(Var a);
Var relu(Var a);
Var slice_cols(Var a, int c0, int c1);              // [N,F] -> [N,c1-c0)
Var concat_cols(Var a, Var b);
Var reshape(Var a, std::vector<int> shape);
Var pad1d(Var x, int left, int right);              // [N,C,L] zero padding on L
Var conv1d(Var x, Var w, Var b, int stride = 1);    // x[N,Ci,L], w[Co,Ci,k], b[Co]
Var global_avg_pool(Var x);                         // [N,C,L] -> [N,C]
Var norm_rows(Var x, Var gamma, Var beta, double eps = 1e-5);
                                                    // normalize over last dim; per-channel affine
Var mean_all(Var a);                                // scalar
Var sum_all(Var a);
Var kl_gaussian(Var mu, Var logvar);                // per-row [N,1]
Var mse_loss(Var pred, Tensor target);              // scalar, mean over elements
Var bce_with_logits(Var logits, Tensor target01);   // scalar, mean over rows

/// -sum over masked positions of w[target] * log softmax(logits)[target].
/// logits [N,V]; the weight normalizer is applied by the caller.
Var weighted_nll(Var logits, std::vector<int> targets, std::vector<double> class_weights,
                 std::vector<uint8_t> mask);

/// Spec-shaped weighted cross entropy over a [N,L,V] logits tensor:
/// weight-normalized mean over masked positions.
Var weighted_cross_entropy(Var logits3, const std::vector<std::vector<int>>& targets,
                           const std::vector<double>& class_weights,
                           const std::vector<std::vector<uint8_t>>& mask);

/// Standard GRU cell: z = sig(Wz x + Uz h + bz), r = sig(Wr x + Ur h + br),
/// hcand = tanh(Wh x + Uh (r .* h) + bh), h' = (1-z) .* h + z .* hcand.
/// Gate weights are fused: wx_zr [I,2H], uh_zr [H,2H], b_zr [2H].
struct GruVars {
    Var wx_zr, uh_zr, b_zr;
    Var wx_h, uh_h, b_h;
};
Var gru_step(Var x, Var h_prev, const GruVars& p);
/// Inner step used by sequence loops: input contributions are precomputed
/// ([N,2H] gate part and [N,H] candidate part, biases already added).
Var gru_step_pre(Var pre_zr, Var pre_h, Var h_prev, Var uh_zr, Var uh_h);

}  // namespace molembed::nn
