#include "molembed/tensor.hpp"

#include <Eigen/Core>
#include <cmath>

#include "molembed/errors.hpp"

namespace molembed::nn {

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<Mat>;
using CMapM = Eigen::Map<const Mat>;
using MapV = Eigen::Map<Eigen::VectorXd>;
using CMapV = Eigen::Map<const Eigen::VectorXd>;

MapM mat2(Tensor& t) { return MapM(t.data.data(), t.shape[0], t.shape[1]); }
CMapM mat2(const Tensor& t) { return CMapM(t.data.data(), t.shape[0], t.shape[1]); }
MapV vec(Tensor& t) { return MapV(t.data.data(), static_cast<long>(t.data.size())); }
CMapV vec(const Tensor& t) { return CMapV(t.data.data(), static_cast<long>(t.data.size())); }

void require(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

void require_2d(const Tensor& t, const char* who) {
    require(t.ndim() == 2, std::string(who) + ": expected a 2-D tensor");
}

}  // namespace

int64_t numel_of(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d < 0) throw ShapeError("negative dimension");
        n *= d;
    }
    return n;
}

Tensor::Tensor(std::vector<int> s) : shape(std::move(s)), data(numel_of(shape), 0.0) {}

Tensor Tensor::from(std::vector<int> s, AVec d) {
    Tensor t;
    t.shape = std::move(s);
    if (numel_of(t.shape) != static_cast<int64_t>(d.size()))
        throw ShapeError("data length does not match shape");
    t.data = std::move(d);
    return t;
}

double Tensor::item() const {
    if (data.size() != 1) throw ShapeError("item() on non-scalar tensor");
    return data[0];
}

bool Tensor::finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

// ---- Tape ----

const Tensor& Var::val() const { return tape->value_of(*this); }
Tensor& Var::grad() const { return tape->grad_of(*this); }

Var Tape::leaf(Tensor value, bool needs_grad) { return record(std::move(value), needs_grad); }

Var Tape::param(const Tensor* value, Tensor* grad_sink) {
    Node node;
    node.vptr = value;
    node.gptr = grad_sink;
    node.needs_grad = true;
    node.external = true;
    nodes_.push_back(std::move(node));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(Tensor value, bool needs_grad) {
    Node node;
    node.value = std::move(value);
    node.needs_grad = needs_grad;
    nodes_.push_back(std::move(node));
    Node& stored = nodes_.back();
    stored.vptr = &stored.value;
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::set_backprop(Var v, std::function<void()> fn) {
    nodes_[v.id].backprop = std::move(fn);
}

void Tape::ensure_grad(int id) {
    Node& node = nodes_[id];
    if (node.external) return;  // sink pre-sized by the parameter store
    if (node.grad.data.empty()) {
        node.grad = Tensor(node.vptr->shape);
        node.gptr = &node.grad;
    }
}

Tensor& Tape::grad_of(Var v) {
    ensure_grad(v.id);
    return *nodes_[v.id].gptr;
}

bool Tape::grad_present(Var v) const {
    const Node& node = nodes_[v.id];
    return node.external || !node.grad.data.empty();
}

void Tape::backward(Var loss) {
    require(value_of(loss).numel() == 1, "backward() needs a scalar loss");
    grad_of(loss).data[0] += 1.0;
    for (int id = loss.id; id >= 0; --id) {
        Node& node = nodes_[id];
        if (!node.needs_grad || !node.backprop) continue;
        if (!node.external && node.grad.data.empty()) continue;  // nothing flowed here
        node.backprop();
    }
}

void Tape::clear() { nodes_.clear(); }

// ---- ops ----

namespace {

bool any_grad(std::initializer_list<Var> vs) {
    for (Var v : vs)
        if (v.tape->needs_grad(v)) return true;
    return false;
}

}  // namespace

Var matmul(Var a, Var b) {
    Tape& t = *a.tape;
    const Tensor& A = t.value_of(a);
    const Tensor& B = t.value_of(b);
    require_2d(A, "matmul lhs");
    require_2d(B, "matmul rhs");
    require(A.cols() == B.rows(), "matmul: inner dimensions disagree");
    Tensor y({A.rows(), B.cols()});
    mat2(y) = mat2(A) * mat2(B);
    Var out = t.record(std::move(y), any_grad({a, b}));
    if (t.needs_grad(out)) {
        t.set_backprop(out, [&t, a, b, out]() {
            const Tensor& g = t.grad_of(out);
            if (t.needs_grad(a)) mat2(t.grad_of(a)) += mat2(g) * mat2(t.value_of(b)).transpose();
            if (t.needs_grad(b)) mat2(t.grad_of(b)) += mat2(t.value_of(a)).transpose() * mat2(g);
        });
    }
    return out;
}

Var linear(Var x, Var w, Var b) { return add_rowvec(matmul(x, w), b); }

Var embed_rows(Var w, std::vector<int> ids) {
    Tape& t = *w.tape;
    const Tensor& W = t.value_of(w);
    require_2d(W, "embed_rows table");
    const int n = static_cast<int>(ids.size());
    const int f = W.cols();
    Tensor y({n, f});
    for (int i = 0; i < n; ++i) {
        require(ids[i] >= 0 && ids[i] < W.rows(), "embed_rows: id out of range");
        std::copy_n(W.data.data() + static_cast<size_t>(ids[i]) * f, f,
                    y.data.data() + static_cast<size_t>(i) * f);
    }
    Var out = t.record(std::move(y), t.needs_grad(w));
    if (t.needs_grad(out)) {
        t.set_backprop(out, [&t, w, out, ids = std::move(ids), f]() {
            const Tensor& g = t.grad_of(out);
            Tensor& gw = t.grad_of(w);
            for (size_t i = 0; i < ids.size(); ++i) {
                double* dst = gw.data.data() + static_cast<size_t>(ids[i]) * f;
                const double* src = g.data.data() + i * f;
                for (int j = 0; j < f; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

Var add(Var a, Var b) {
    Tape& t = *a.tape;
    require(t.value_of(a).same_shape(t.value_of(b)), "add: shape mismatch");
    Tensor y(t.value_of(a).shape);
    vec(y) = vec(t.value_of(a)) + vec(t.value_of(b));
    Var out = t.record(std::move(y), any_grad({a, b}));
    if (t.needs_grad(out)) {
        t.set_backprop(out, [&t, a, b, out]() {
            const Tensor& g = t.grad_of(out);
            if (t.needs_grad(a)) vec(t.grad_of(a)) += vec(g);
            if (t.needs_grad(b)) vec(t.grad_of(b)) += vec(g);
        });
    }
    return out;
}

Var add_rowvec(Var a, Var b) {
    Tape& t = *a.tape;
    const Tensor& A = t.value_of(a);
    const Tensor& B = t.value_of(b);
    require_2d(A, "add_rowvec lhs");
    require(B.numel() == A.cols(), "add_rowvec: vector length != columns");
    Tensor y(A.shape);
    mat2(y) = mat2(A).rowwise() + vec(B).transpose();
    Var out = t.record(std::move(y), any_grad({a, b}));
    if (t.needs_grad(out)) {
        t.set_backprop(out, [&t, a, b, out]() {
            const Tensor& g = t.grad_of(out);
            if (t.needs_grad(a)) vec(t.grad_of(a)) += vec(g);
            if (t.needs_grad(b)) vec(t.grad_of(b)) += mat2(g).colwise().sum().transpose();
        });
    }
    return out;
}

Var sub(Var a, Var b) {
    Tape& t = *a.tape;
    require(t.value_of(a).same_shape(t.value_of(b)), "sub: shape mismatch");
    Tensor y(t.value_of(a).shape);
    vec(y) = vec(t.value_of(a)) - vec(t.value_of(b));
    Var out = t.record(std::move(y), any_grad({a, b}));
    if (t.needs_grad(out)) {
        t.set_backprop(out, [&t, a, b, out]() {
            const Tensor& g = t.grad_of(out);
            if (t.needs_grad(a)) vec(t.grad_of(a)) += vec(g);
            if (t.needs_grad(b)) vec(t.grad_of(b)) -= vec(g);
        });
    }
    return out;
}

Var mul(Var a, Var b) {
    Tape& t = *a.tape;
    require(t.value_of(a).same_shape(t.value_of(b)), "mul: shape mismatch");
    Tensor y(t.value_of(a).shape);
    vec(y) = vec(t.value_of(a)).cwiseProduct(vec(t.value_of(b)));
    Var out = t.record(std::move(y), any_grad({a, b}));
    if (t.needs_grad(out)) {
        t.set_backprop(out, [&t, a, b, out]() {
            const Tensor& g = t.grad_of(out);
            if (t.needs_grad(a))
                vec(t.grad_of(a)) += vec(g).cwiseProduct(vec(t.value_of(b)));
            if (t.needs_grad(b))
                vec(t.grad_of(b)) += vec(g).cwiseProduct(vec(t.value_of(a)));
        });
    }
    return out;
}

Var mul_colvec(Var a, Var c) {
    Tape& t = *a.tape;
    const Tensor& A = t.value_of(a);
    const Tensor& C = t.value_of(c);
    require_2d(A, "mul_colvec lhs");
    require(C.ndim() == 2 && C.cols() == 1 && C.rows() == A.rows(),
            "mul_colvec: column vector shape mismatch");
    Tensor y(A.shape);
    mat2(y) = mat2(A).array().colwise() * vec(C).array();
    Var out = t.record(std::move(y), any_grad({a, c}));
    if (t.needs_grad(out)) {
        t.set_backprop(out, [&t, a, c, out]() {
            const Tensor& g = t.grad_of(out);
            if (t.needs_grad(a))
                mat2(t.grad_of(a)) += (mat2(g).array().colwise() * vec(t.value_of(c)).array()).matrix();
            if (t.needs_grad(c))
                vec(t.grad_of(c)) += mat2(g).cwiseProduct(mat2(t.value_of(a))).rowwise().sum();
        });
    }
    return out;
}

Var affine(Var a, double k, double c) {
    Tape& t = *a.tape;
    Tensor y(t.value_of(a).shape);
    vec(y) = k * vec(t.value_of(a)).array() + c;
    Var out = t.record(std::move(y), t.needs_grad(a));
    if (t.needs_grad(out)) {
        t.set_backprop(out, [&t, a, out, k]() { vec(t.grad_of(a)) += k * vec(t.grad_of(out)); });
    }
    return out;
}

Var exp_scaled(Var a, double k) {
    Tape& t = *a.tape;
    Tensor y(t.value_of(a).shape);
    vec(y) = (k * vec(t.value_of(a)).array()).exp();
    Var out = t.record(std::move(y), t.needs_grad(a));
    if (t.needs_grad(out)) {
        t.set_backprop(out, [&t, a, out, k]() {
            vec(t.grad_of(a)).array() +=
                k * vec(t.value_of(out)).array() * vec(t.grad_of(out)).array();
        });
    }
    return out;
}

Var sigmoid(Var a) {
    Tape& t = *a.tape;
    Tensor y(t.value_of(a).shape);
    vec(y) = 1.0 / (1.0 + (-vec(t.value_of(a)).array()).exp());
    Var out = t.record(std::move(y), t.needs_grad(a));
    if (t.needs_grad(out)) {
        t.set_backprop(out, [&t, a, out]() {
            auto yv = vec(t.value_of(out)).array();
            vec(t.grad_of(a)).array() += yv * (1.0 - yv) * vec(t.grad_of(out)).array();
        });
    }
    return out;
}

Var tanh_op(Var a) {
    Tape& t = *a.tape;
    Tensor y(t.value_of(a).shape);
    vec(y) = vec(t.value_of(a)).array().tanh();
    Var out = t.record(std::move(y), t.needs_grad(a));
    if (t.needs_grad(out)) {
        t.set_backprop(out, [&t, a, out]() {
            auto yv = vec(t.value_of(out)).array();
            vec(t.grad_of(a)).array() += (1.0 - yv * yv) * vec(t.grad_of(out)).array();
        });
    }
    return out;
}

Var relu(Var a) {
    Tape& t = *a.tape;
    Tensor y(t.value_of(a).shape);
    vec(y) = vec(t.value_of(a)).array().max(0.0);
    Var out = t.record(std::move(y), t.needs_grad(a));
    if (t.needs_grad(out)) {
        t.set_backprop(out, [&t, a, out]() {
            auto xv = vec(t.value_of(a)).array();
            vec(t.grad_of(a)).array() +=
                (xv > 0.0).cast<double>() * vec(t.grad_of(out)).array();
        });
    }
    return out;
}

Var slice_cols(Var a, int c0, int c1) {
    Tape& t = *a.tape;
    const Tensor& A = t.value_of(a);
    require_2d(A, "slice_cols");
    require(0 <= c0 && c0 < c1 && c1 <= A.cols(), "slice_cols: bad range");
    Tensor y({A.rows(), c1 - c0});
    mat2(y) = mat2(A).middleCols(c0, c1 - c0);
    Var out = t.record(std::move(y), t.needs_grad(a));
    if (t.needs_grad(out)) {
        t.set_backprop(out, [&t, a, out, c0, c1]() {
            mat2(t.grad_of(a)).middleCols(c0, c1 - c0) += mat2(t.grad_of(out));
        });
    }
    return out;
}

Var concat_cols(Var a, Var b) {
    Tape& t = *a.tape;
    const Tensor& A = t.value_of(a);
    const Tensor& B = t.value_of(b);
    require_2d(A, "concat_cols lhs");
    require(B.ndim() == 2 && B.rows() == A.rows(), "concat_cols: row mismatch");
    Tensor y({A.rows(), A.cols() + B.cols()});
    mat2(y).leftCols(A.cols()) = mat2(A);
    mat2(y).rightCols(B.cols()) = mat2(B);
    Var out = t.record(std::move(y), any_grad({a, b}));
    if (t.needs_grad(out)) {
        int ca = A.cols(), cb = B.cols();
        t.set_backprop(out, [&t, a, b, out, ca, cb]() {
            const Tensor& g = t.grad_of(out);
            if (t.needs_grad(a)) mat2(t.grad_of(a)) += mat2(g).leftCols(ca);
            if (t.needs_grad(b)) mat2(t.grad_of(b)) += mat2(g).rightCols(cb);
        });
    }
    return out;
}

Var reshape(Var a, std::vector<int> shape) {
    Tape& t = *a.tape;
    const Tensor& A = t.value_of(a);
    require(numel_of(shape) == A.numel(), "reshape: element count mismatch");
    Tensor y = Tensor::from(std::move(shape), A.data);
    Var out = t.record(std::move(y), t.needs_grad(a));
    if (t.needs_grad(out)) {
        t.set_backprop(out, [&t, a, out]() { vec(t.grad_of(a)) += vec(t.grad_of(out)); });
    }
    return out;
}

Var pad1d(Var x, int left, int right) {
    Tape& t = *x.tape;
    const Tensor& X = t.value_of(x);
    require(X.ndim() == 3, "pad1d: expected [N,C,L]");
    require(left >= 0 && right >= 0, "pad1d: negative padding");
    const int n = X.shape[0], c = X.shape[1], l = X.shape[2];
    const int lp = l + left + right;
    Tensor y({n, c, lp});
    for (int i = 0; i < n * c; ++i)
        std::copy_n(X.data.data() + static_cast<size_t>(i) * l, l,
                    y.data.data() + static_cast<size_t>(i) * lp + left);
    Var out = t.record(std::move(y), t.needs_grad(x));
    if (t.needs_grad(out)) {
        t.set_backprop(out, [&t, x, out, n, c, l, lp, left]() {
            Tensor& gx = t.grad_of(x);
            const Tensor& g = t.grad_of(out);
            for (int i = 0; i < n * c; ++i) {
                double* dst = gx.data.data() + static_cast<size_t>(i) * l;
                const double* src = g.data.data() + static_cast<size_t>(i) * lp + left;
                for (int j = 0; j < l; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

Var conv1d(Var x, Var w, Var b, int stride) {
    Tape& t = *x.tape;
    const Tensor& X = t.value_of(x);
    const Tensor& W = t.value_of(w);
    const Tensor& B = t.value_of(b);
    require(X.ndim() == 3, "conv1d: input must be [N,Cin,L]");
    require(W.ndim() == 3, "conv1d: kernels must be [Cout,Cin,k]");
    require(stride >= 1, "conv1d: stride must be >= 1");
    const int n = X.shape[0], cin = X.shape[1], l = X.shape[2];
    const int cout = W.shape[0], k = W.shape[2];
    require(W.shape[1] == cin, "conv1d: channel mismatch");
    require(B.numel() == cout, "conv1d: bias length != Cout");
    require(l >= k, "conv1d: input shorter than kernel");
    const int lo = (l - k) / stride + 1;

    Tensor y({n, cout, lo});
    auto xat = [&](int ni, int ci, int li) {
        return X.data[(static_cast<size_t>(ni) * cin + ci) * l + li];
    };
    for (int ni = 0; ni < n; ++ni)
        for (int co = 0; co < cout; ++co) {
            double* yrow = y.data.data() + (static_cast<size_t>(ni) * cout + co) * lo;
            const double* wrow = W.data.data() + static_cast<size_t>(co) * cin * k;
            for (int to = 0; to < lo; ++to) {
                double acc = B.data[co];
                int start = to * stride;
                for (int ci = 0; ci < cin; ++ci)
                    for (int j = 0; j < k; ++j) acc += xat(ni, ci, start + j) * wrow[ci * k + j];
                yrow[to] = acc;
            }
        }
    Var out = t.record(std::move(y), any_grad({x, w, b}));
    if (t.needs_grad(out)) {
        t.set_backprop(out, [&t, x, w, b, out, n, cin, l, cout, k, lo, stride]() {
            const Tensor& g = t.grad_of(out);
            const Tensor& X2 = t.value_of(x);
            const Tensor& W2 = t.value_of(w);
            bool gx_needed = t.needs_grad(x), gw_needed = t.needs_grad(w),
                 gb_needed = t.needs_grad(b);
            Tensor* gx = gx_needed ? &t.grad_of(x) : nullptr;
            Tensor* gw = gw_needed ? &t.grad_of(w) : nullptr;
            Tensor* gb = gb_needed ? &t.grad_of(b) : nullptr;
            for (int ni = 0; ni < n; ++ni)
                for (int co = 0; co < cout; ++co) {
                    const double* grow = g.data.data() + (static_cast<size_t>(ni) * cout + co) * lo;
                    const double* wrow = W2.data.data() + static_cast<size_t>(co) * cin * k;
                    for (int to = 0; to < lo; ++to) {
                        double gv = grow[to];
                        if (gv == 0.0) continue;
                        if (gb_needed) gb->data[co] += gv;
                        int start = to * stride;
                        for (int ci = 0; ci < cin; ++ci) {
                            size_t xbase = (static_cast<size_t>(ni) * cin + ci) * l + start;
                            size_t wbase = static_cast<size_t>(ci) * k;
                            for (int j = 0; j < k; ++j) {
                                if (gx) gx->data[xbase + j] += gv * wrow[wbase + j];
                                if (gw)
                                    gw->data[static_cast<size_t>(co) * cin * k + wbase + j] +=
                                        gv * X2.data[xbase + j];
                            }
                        }
                    }
                }
        });
    }
    return out;
}

Var global_avg_pool(Var x) {
    Tape& t = *x.tape;
    const Tensor& X = t.value_of(x);
    require(X.ndim() == 3, "global_avg_pool: expected [N,C,L]");
    const int n = X.shape[0], c = X.shape[1], l = X.shape[2];
    Tensor y({n, c});
    for (int i = 0; i < n * c; ++i) {
        const double* row = X.data.data() + static_cast<size_t>(i) * l;
        double s = 0.0;
        for (int j = 0; j < l; ++j) s += row[j];
        y.data[i] = s / l;
    }
    Var out = t.record(std::move(y), t.needs_grad(x));
    if (t.needs_grad(out)) {
        t.set_backprop(out, [&t, x, out, n, c, l]() {
            Tensor& gx = t.grad_of(x);
            const Tensor& g = t.grad_of(out);
            for (int i = 0; i < n * c; ++i) {
                double gv = g.data[i] / l;
                double* row = gx.data.data() + static_cast<size_t>(i) * l;
                for (int j = 0; j < l; ++j) row[j] += gv;
            }
        });
    }
    return out;
}

Var norm_rows(Var x, Var gamma, Var beta, double eps) {
    Tape& t = *x.tape;
    const Tensor& X = t.value_of(x);
    require(X.ndim() == 3, "norm_rows: expected [N,C,L]");
    const int n = X.shape[0], c = X.shape[1], l = X.shape[2];
    require(t.value_of(gamma).numel() == c && t.value_of(beta).numel() == c,
            "norm_rows: gamma/beta must have one entry per channel");
    require(l >= 2, "norm_rows: needs L >= 2");
    Tensor y(X.shape);
    Tensor xhat(X.shape);     // cached for backward
    Tensor inv_sd({n, c});
    const Tensor& G = t.value_of(gamma);
    const Tensor& Bt = t.value_of(beta);
    for (int i = 0; i < n * c; ++i) {
        const double* row = X.data.data() + static_cast<size_t>(i) * l;
        double mean = 0.0;
        for (int j = 0; j < l; ++j) mean += row[j];
        mean /= l;
        double var = 0.0;
        for (int j = 0; j < l; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= l;
        double isd = 1.0 / std::sqrt(var + eps);
        inv_sd.data[i] = isd;
        int ch = i % c;
        double* yrow = y.data.data() + static_cast<size_t>(i) * l;
        double* hrow = xhat.data.data() + static_cast<size_t>(i) * l;
        for (int j = 0; j < l; ++j) {
            hrow[j] = (row[j] - mean) * isd;
            yrow[j] = G.data[ch] * hrow[j] + Bt.data[ch];
        }
    }
    Var out = t.record(std::move(y), any_grad({x, gamma, beta}));
    if (t.needs_grad(out)) {
        t.set_backprop(out, [&t, x, gamma, beta, out, n, c, l, xhat = std::move(xhat),
                             inv_sd = std::move(inv_sd)]() {
            const Tensor& g = t.grad_of(out);
            const Tensor& G = t.value_of(gamma);
            bool need_x = t.needs_grad(x);
            Tensor* gx = need_x ? &t.grad_of(x) : nullptr;
            Tensor* gg = t.needs_grad(gamma) ? &t.grad_of(gamma) : nullptr;
            Tensor* gb = t.needs_grad(beta) ? &t.grad_of(beta) : nullptr;
            for (int i = 0; i < n * c; ++i) {
                int ch = i % c;
                const double* grow = g.data.data() + static_cast<size_t>(i) * l;
                const double* hrow = xhat.data.data() + static_cast<size_t>(i) * l;
                double gsum = 0.0, ghsum = 0.0;
                for (int j = 0; j < l; ++j) {
                    gsum += grow[j];
                    ghsum += grow[j] * hrow[j];
                }
                if (gg) gg->data[ch] += ghsum;
                if (gb) gb->data[ch] += gsum;
                if (need_x) {
                    double k = G.data[ch] * inv_sd.data[i];
                    double* xrow = gx->data.data() + static_cast<size_t>(i) * l;
                    for (int j = 0; j < l; ++j)
                        xrow[j] += k * (grow[j] - gsum / l - hrow[j] * ghsum / l);
                }
            }
        });
    }
    return out;
}

Var mean_all(Var a) {
    Tape& t = *a.tape;
    const Tensor& A = t.value_of(a);
    require(A.numel() > 0, "mean_all over empty tensor");
    Tensor y = Tensor::scalar(vec(A).mean());
    Var out = t.record(std::move(y), t.needs_grad(a));
    if (t.needs_grad(out)) {
        double inv = 1.0 / static_cast<double>(A.numel());
        t.set_backprop(out, [&t, a, out, inv]() {
            vec(t.grad_of(a)).array() += inv * t.grad_of(out).data[0];
        });
    }
    return out;
}

Var sum_all(Var a) {
    Tape& t = *a.tape;
    Tensor y = Tensor::scalar(vec(t.value_of(a)).sum());
    Var out = t.record(std::move(y), t.needs_grad(a));
    if (t.needs_grad(out)) {
        t.set_backprop(out, [&t, a, out]() {
            vec(t.grad_of(a)).array() += t.grad_of(out).data[0];
        });
    }
    return out;
}

Var kl_gaussian(Var mu, Var logvar) {
    Tape& t = *mu.tape;
    const Tensor& M = t.value_of(mu);
    const Tensor& L = t.value_of(logvar);
    require_2d(M, "kl_gaussian mu");
    require(M.same_shape(L), "kl_gaussian: mu/logvar shape mismatch");
    const int n = M.rows(), d = M.cols();
    Tensor y({n, 1});
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int j = 0; j < d; ++j) {
            double m = M.data[static_cast<size_t>(i) * d + j];
            double lv = L.data[static_cast<size_t>(i) * d + j];
            acc += m * m + std::exp(lv) - 1.0 - lv;
        }
        y.data[i] = 0.5 * acc;
    }
    Var out = t.record(std::move(y), any_grad({mu, logvar}));
    if (t.needs_grad(out)) {
        t.set_backprop(out, [&t, mu, logvar, out, n, d]() {
            const Tensor& g = t.grad_of(out);
            const Tensor& M = t.value_of(mu);
            const Tensor& L = t.value_of(logvar);
            Tensor* gm = t.needs_grad(mu) ? &t.grad_of(mu) : nullptr;
            Tensor* gl = t.needs_grad(logvar) ? &t.grad_of(logvar) : nullptr;
            for (int i = 0; i < n; ++i) {
                double gv = g.data[i];
                for (int j = 0; j < d; ++j) {
                    size_t idx = static_cast<size_t>(i) * d + j;
                    if (gm) gm->data[idx] += gv * M.data[idx];
                    if (gl) gl->data[idx] += gv * 0.5 * (std::exp(L.data[idx]) - 1.0);
                }
            }
        });
    }
    return out;
}

Var mse_loss(Var pred, Tensor target) {
    Tape& t = *pred.tape;
    const Tensor& P = t.value_of(pred);
    require(P.same_shape(target), "mse_loss: shape mismatch");
    require(P.numel() > 0, "mse_loss over empty tensor");
    double acc = 0.0;
    for (int64_t i = 0; i < P.numel(); ++i) {
        double d = P.data[i] - target.data[i];
        acc += d * d;
    }
    Var out = t.record(Tensor::scalar(acc / static_cast<double>(P.numel())), t.needs_grad(pred));
    if (t.needs_grad(out)) {
        t.set_backprop(out, [&t, pred, out, target = std::move(target)]() {
            const Tensor& P = t.value_of(pred);
            Tensor& gp = t.grad_of(pred);
            double k = 2.0 * t.grad_of(out).data[0] / static_cast<double>(P.numel());
            for (int64_t i = 0; i < P.numel(); ++i)
                gp.data[i] += k * (P.data[i] - target.data[i]);
        });
    }
    return out;
}

Var bce_with_logits(Var logits, Tensor target01) {
    Tape& t = *logits.tape;
    const Tensor& Z = t.value_of(logits);
    require(Z.same_shape(target01), "bce_with_logits: shape mismatch");
    const int64_t n = Z.numel();
    require(n > 0, "bce_with_logits over empty tensor");
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double z = Z.data[i], y = target01.data[i];
        acc += std::max(z, 0.0) - y * z + std::log1p(std::exp(-std::fabs(z)));
    }
    Var out = t.record(Tensor::scalar(acc / static_cast<double>(n)), t.needs_grad(logits));
    if (t.needs_grad(out)) {
        t.set_backprop(out, [&t, logits, out, target01 = std::move(target01), n]() {
            const Tensor& Z = t.value_of(logits);
            Tensor& gz = t.grad_of(logits);
            double k = t.grad_of(out).data[0] / static_cast<double>(n);
            for (int64_t i = 0; i < n; ++i) {
                double p = 1.0 / (1.0 + std::exp(-Z.data[i]));
                gz.data[i] += k * (p - target01.data[i]);
            }
        });
    }
    return out;
}

Var weighted_nll(Var logits, std::vector<int> targets, std::vector<double> class_weights,
                 std::vector<uint8_t> mask) {
    Tape& t = *logits.tape;
    const Tensor& Z = t.value_of(logits);
    require_2d(Z, "weighted_nll logits");
    const int n = Z.rows(), v = Z.cols();
    require(static_cast<int>(targets.size()) == n, "weighted_nll: targets length != rows");
    require(static_cast<int>(class_weights.size()) == v, "weighted_nll: weights length != vocab");
    require(static_cast<int>(mask.size()) == n, "weighted_nll: mask length != rows");

    // softmax cached for the backward pass
    Tensor probs({n, v});
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        const double* zrow = Z.data.data() + static_cast<size_t>(i) * v;
        double* prow = probs.data.data() + static_cast<size_t>(i) * v;
        double zmax = zrow[0];
        for (int j = 1; j < v; ++j) zmax = std::max(zmax, zrow[j]);
        double sum = 0.0;
        for (int j = 0; j < v; ++j) {
            prow[j] = std::exp(zrow[j] - zmax);
            sum += prow[j];
        }
        for (int j = 0; j < v; ++j) prow[j] /= sum;
        if (!mask[i]) continue;
        int tgt = targets[i];
        require(tgt >= 0 && tgt < v, "weighted_nll: target out of range");
        loss -= class_weights[tgt] * (std::log(prow[tgt] > 0 ? prow[tgt] : 1e-300));
    }
    Var out = t.record(Tensor::scalar(loss), t.needs_grad(logits));
    if (t.needs_grad(out)) {
        t.set_backprop(out, [&t, logits, out, probs = std::move(probs),
                             targets = std::move(targets), class_weights = std::move(class_weights),
                             mask = std::move(mask), n, v]() {
            Tensor& gz = t.grad_of(logits);
            double g = t.grad_of(out).data[0];
            for (int i = 0; i < n; ++i) {
                if (!mask[i]) continue;
                double w = g * class_weights[targets[i]];
                const double* prow = probs.data.data() + static_cast<size_t>(i) * v;
                double* grow = gz.data.data() + static_cast<size_t>(i) * v;
                for (int j = 0; j < v; ++j) grow[j] += w * prow[j];
                grow[targets[i]] -= w;
            }
        });
    }
    return out;
}

Var weighted_cross_entropy(Var logits3, const std::vector<std::vector<int>>& targets,
                           const std::vector<double>& class_weights,
                           const std::vector<std::vector<uint8_t>>& mask) {
    Tape& t = *logits3.tape;
    const Tensor& Z = t.value_of(logits3);
    require(Z.ndim() == 3, "weighted_cross_entropy: logits must be [N,L,V]");
    const int n = Z.shape[0], l = Z.shape[1], v = Z.shape[2];
    require(static_cast<int>(targets.size()) == n && static_cast<int>(mask.size()) == n,
            "weighted_cross_entropy: batch size mismatch");
    std::vector<int> flat_targets(static_cast<size_t>(n) * l, 0);
    std::vector<uint8_t> flat_mask(static_cast<size_t>(n) * l, 0);
    double denom = 0.0;
    for (int i = 0; i < n; ++i) {
        require(static_cast<int>(targets[i].size()) == l && static_cast<int>(mask[i].size()) == l,
                "weighted_cross_entropy: sequence length mismatch");
        for (int j = 0; j < l; ++j) {
            flat_targets[static_cast<size_t>(i) * l + j] = targets[i][j];
            flat_mask[static_cast<size_t>(i) * l + j] = mask[i][j];
            if (mask[i][j]) denom += class_weights.at(targets[i][j]);
        }
    }
    require(denom > 0.0, "weighted_cross_entropy: empty mask");
    Var flat = reshape(logits3, {n * l, v});
    Var nll = weighted_nll(flat, std::move(flat_targets), class_weights, std::move(flat_mask));
    return affine(nll, 1.0 / denom, 0.0);
}

Var gru_step_pre(Var pre_zr, Var pre_h, Var h_prev, Var uh_zr, Var uh_h) {
    Tape& t = *h_prev.tape;
    const int h = t.value_of(h_prev).cols();
    Var gates = sigmoid(add(pre_zr, matmul(h_prev, uh_zr)));
    Var z = slice_cols(gates, 0, h);
    Var r = slice_cols(gates, h, 2 * h);
    Var cand = tanh_op(add(pre_h, matmul(mul(r, h_prev), uh_h)));
    // (1-z) .* h + z .* cand  ==  h + z .* (cand - h)
    return add(h_prev, mul(z, sub(cand, h_prev)));
}

Var gru_step(Var x, Var h_prev, const GruVars& p) {
    Var pre_zr = add_rowvec(matmul(x, p.wx_zr), p.b_zr);
    Var pre_h = add_rowvec(matmul(x, p.wx_h), p.b_h);
    return gru_step_pre(pre_zr, pre_h, h_prev, p.uh_zr, p.uh_h);
}

}  // namespace molembed::nn
