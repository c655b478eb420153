#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "fenet/errors.hpp"

namespace fenet {

// Shape of a dense tensor, rank <= 2. Scalars are rank-1 tensors of size 1.
struct Shape {
    int rank = 1;
    int d0 = 1;
    int d1 = 1;

    int numel() const { return rank == 2 ? d0 * d1 : d0; }
    bool operator==(const Shape&) const = default;

    static Shape vec(int n) { return Shape{1, n, 1}; }
    static Shape mat(int r, int c) { return Shape{2, r, c}; }
    static Shape scalar() { return Shape{1, 1, 1}; }
};

// Named parameter tensor living outside any tape. `grad` is the accumulator
// the trainer reduces batch gradients into; `m`/`v` are optimizer moments.
template <typename T>
struct Param {
    std::string name;
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    std::vector<T> m, v;

    Param() = default;
    Param(std::string n, Shape s)
        : name(std::move(n)), shape(s),
          value(static_cast<size_t>(s.numel()), T(0)),
          grad(static_cast<size_t>(s.numel()), T(0)) {}

    int size() const { return shape.numel(); }
    void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

template <typename T>
class Tape;

// Lightweight handle to a node on a tape.
template <typename T>
struct Var {
    Tape<T>* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
};

// Mean/stddev pair over a vector, as tape variables.
template <typename T>
struct DiagGaussianVar {
    Var<T> mean;
    Var<T> std;
};

enum class Op : uint8_t {
    Leaf,
    Matmul,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Tanh,
    Relu,
    Softplus,
    Sigmoid,
    Exp,
    Log,
    Square,
    Sum,
    Mean,
    Concat,
    Slice,
    ClampMin,
    StopGrad,
    Scale,
    AddConst,
    Expand,
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::Matmul: return "matmul";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Div: return "div";
        case Op::Neg: return "neg";
        case Op::Tanh: return "tanh";
        case Op::Relu: return "relu";
        case Op::Softplus: return "softplus";
        case Op::Sigmoid: return "sigmoid";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Square: return "square";
        case Op::Sum: return "sum";
        case Op::Mean: return "mean";
        case Op::Concat: return "concat";
        case Op::Slice: return "slice";
        case Op::ClampMin: return "clamp_min";
        case Op::StopGrad: return "stop_gradient";
        case Op::Scale: return "scale";
        case Op::AddConst: return "add_const";
        case Op::Expand: return "expand";
    }
    return "?";
}

// Reverse-mode tape over dense tensors. Construction and backward are
// single-threaded; independent tapes may run on independent threads.
// Gradient accumulation follows node index order, so a graph built twice
// from the same inputs backpropagates to bit-identical gradients.
template <typename T>
class Tape {
public:
    void reset() {
        nodes_.clear();
        buf_.clear();
        grad_.clear();
        aux_.clear();
    }

    size_t num_nodes() const { return nodes_.size(); }

    // ---- leaves ----------------------------------------------------------

    Var<T> leaf(Shape shape, const T* data, bool requires_grad) {
        int id = new_node(Op::Leaf, shape, -1, -1, requires_grad);
        std::memcpy(&buf_[nodes_[id].off], data, sizeof(T) * shape.numel());
        check_finite(id);
        return Var<T>{this, id};
    }

    Var<T> leaf(const Param<T>& p, bool requires_grad = true) {
        return leaf(p.shape, p.value.data(), requires_grad);
    }

    Var<T> constant(Shape shape, const T* data) { return leaf(shape, data, false); }

    Var<T> constant_scalar(T v) { return leaf(Shape::scalar(), &v, false); }

    Var<T> zeros(Shape shape, bool requires_grad = false) {
        std::vector<T> z(static_cast<size_t>(shape.numel()), T(0));
        return leaf(shape, z.data(), requires_grad);
    }

    // ---- elementwise binary ----------------------------------------------

    Var<T> add(Var<T> a, Var<T> b) { return ew_binary(Op::Add, a, b); }
    Var<T> sub(Var<T> a, Var<T> b) { return ew_binary(Op::Sub, a, b); }
    Var<T> mul(Var<T> a, Var<T> b) { return ew_binary(Op::Mul, a, b); }
    Var<T> div(Var<T> a, Var<T> b) { return ew_binary(Op::Div, a, b); }

    // ---- elementwise unary -----------------------------------------------

    Var<T> neg(Var<T> a) { return ew_unary(Op::Neg, a); }
    Var<T> tanh(Var<T> a) { return ew_unary(Op::Tanh, a); }
    Var<T> relu(Var<T> a) { return ew_unary(Op::Relu, a); }
    Var<T> softplus(Var<T> a) { return ew_unary(Op::Softplus, a); }
    Var<T> sigmoid(Var<T> a) { return ew_unary(Op::Sigmoid, a); }
    Var<T> exp(Var<T> a) { return ew_unary(Op::Exp, a); }
    Var<T> log(Var<T> a) { return ew_unary(Op::Log, a); }
    Var<T> square(Var<T> a) { return ew_unary(Op::Square, a); }

    Var<T> scale(Var<T> a, T c) { return ew_unary(Op::Scale, a, c); }
    Var<T> add_const(Var<T> a, T c) { return ew_unary(Op::AddConst, a, c); }
    // max(x, c); zero gradient at and below the threshold (free-nats clip).
    Var<T> clamp_min(Var<T> a, T c) { return ew_unary(Op::ClampMin, a, c); }

    // Forward values unchanged bit for bit; blocks all gradient flow.
    Var<T> stop_gradient(Var<T> a) {
        Shape sa = node(a).shape;
        int id = new_node(Op::StopGrad, sa, a.id, -1, false);
        std::memcpy(&buf_[nodes_[id].off], &buf_[node(a).off],
                    sizeof(T) * sa.numel());
        return Var<T>{this, id};
    }

    // ---- linear algebra / structure --------------------------------------

    // A (m x k) times B: rank-1 B of length k gives a length-m vector,
    // rank-2 B (k x n) gives an (m x n) matrix.
    Var<T> matmul(Var<T> a, Var<T> b) {
        Shape sa = node(a).shape;
        Shape sb = node(b).shape;
        if (sa.rank != 2)
            throw DimensionError("matmul: left operand must be rank-2");
        int m = sa.d0, k = sa.d1;
        Shape out;
        if (sb.rank == 1) {
            if (sb.d0 != k) throw DimensionError(shape_msg("matmul", a, b));
            out = Shape::vec(m);
        } else {
            if (sb.d0 != k) throw DimensionError(shape_msg("matmul", a, b));
            out = Shape::mat(m, sb.d1);
        }
        int id = new_node(Op::Matmul, out, a.id, b.id, needs_grad(a) || needs_grad(b));
        const T* pa = vals(a);
        const T* pb = vals(b);
        T* po = &buf_[nodes_[id].off];
        int n = (sb.rank == 1) ? 1 : sb.d1;
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < n; ++j) {
                T acc = T(0);
                for (int l = 0; l < k; ++l) acc += pa[i * k + l] * pb[l * n + j];
                po[i * n + j] = acc;
            }
        }
        check_finite(id);
        return Var<T>{this, id};
    }

    Var<T> concat(std::span<const Var<T>> parts) {
        if (parts.empty()) throw DimensionError("concat: no inputs");
        int total = 0;
        bool req = false;
        for (const auto& p : parts) {
            if (node(p).shape.rank != 1)
                throw DimensionError("concat: rank-1 inputs only");
            total += node(p).shape.d0;
            req = req || needs_grad(p);
        }
        int aux_begin = static_cast<int>(aux_.size());
        for (const auto& p : parts) aux_.push_back(p.id);
        int id = new_node(Op::Concat, Shape::vec(total), -1, -1, req);
        nodes_[id].i0 = aux_begin;
        nodes_[id].i1 = static_cast<int>(parts.size());
        T* po = &buf_[nodes_[id].off];
        for (const auto& p : parts) {
            const Node& np = node(p);
            std::memcpy(po, &buf_[np.off], sizeof(T) * np.shape.d0);
            po += np.shape.d0;
        }
        return Var<T>{this, id};
    }

    Var<T> concat(Var<T> a, Var<T> b) {
        const Var<T> parts[2] = {a, b};
        return concat(std::span<const Var<T>>(parts, 2));
    }

    Var<T> slice(Var<T> a, int offset, int len) {
        Shape sa = node(a).shape;
        if (sa.rank != 1) throw DimensionError("slice: rank-1 input only");
        if (offset < 0 || len <= 0 || offset + len > sa.d0)
            throw DimensionError("slice: range out of bounds");
        int id = new_node(Op::Slice, Shape::vec(len), a.id, -1, needs_grad(a));
        nodes_[id].i0 = offset;
        nodes_[id].i1 = len;
        std::memcpy(&buf_[nodes_[id].off], &buf_[node(a).off] + offset,
                    sizeof(T) * len);
        return Var<T>{this, id};
    }

    // Repeat a scalar into a length-n vector.
    Var<T> expand(Var<T> a, int n) {
        if (node(a).shape.numel() != 1)
            throw DimensionError("expand: scalar input only");
        int id = new_node(Op::Expand, Shape::vec(n), a.id, -1, needs_grad(a));
        T v = buf_[node(a).off];
        T* po = &buf_[nodes_[id].off];
        for (int i = 0; i < n; ++i) po[i] = v;
        return Var<T>{this, id};
    }

    // ---- reductions -------------------------------------------------------

    Var<T> sum(Var<T> a) { return reduce(Op::Sum, a); }
    Var<T> mean(Var<T> a) { return reduce(Op::Mean, a); }

    // ---- access ------------------------------------------------------------

    Shape shape(Var<T> v) const { return node(v).shape; }

    std::span<const T> values(Var<T> v) const {
        const Node& n = node(v);
        return {&buf_[n.off], static_cast<size_t>(n.shape.numel())};
    }

    T value0(Var<T> v) const { return buf_[node(v).off]; }

    std::span<const T> grad(Var<T> v) const {
        const Node& n = node(v);
        return {&grad_[n.off], static_cast<size_t>(n.shape.numel())};
    }

    bool needs_grad(Var<T> v) const { return node(v).req; }

    // ---- backward ----------------------------------------------------------

    // Reverse pass from a scalar root. Each node is visited exactly once, in
    // reverse construction order. Grads of earlier backward calls are cleared.
    void backward(Var<T> root) {
        if (root.tape != this) throw ContractError("backward: var from another tape");
        if (node(root).shape.numel() != 1)
            throw ContractError("backward: root must be scalar");
        grad_.assign(buf_.size(), T(0));
        grad_[node(root).off] = T(1);
        for (int i = root.id; i >= 0; --i) {
            const Node& n = nodes_[i];
            if (!n.req || n.op == Op::Leaf) continue;
            backward_node(n);
        }
    }

private:
    struct Node {
        Op op = Op::Leaf;
        bool req = false;
        Shape shape;
        int in0 = -1, in1 = -1;
        int off = 0;
        int i0 = 0, i1 = 0; // slice offset/len, concat aux begin/count
        T c = T(0);         // scalar constant for Scale/AddConst/ClampMin
    };

    std::vector<Node> nodes_;
    std::vector<T> buf_;
    std::vector<T> grad_;
    std::vector<int> aux_;

    const Node& node(Var<T> v) const {
        if (v.tape != this) throw ContractError("var does not belong to this tape");
        return nodes_[static_cast<size_t>(v.id)];
    }

    const T* vals(Var<T> v) const { return &buf_[node(v).off]; }

    int new_node(Op op, Shape shape, int in0, int in1, bool req) {
        Node n;
        n.op = op;
        n.req = req;
        n.shape = shape;
        n.in0 = in0;
        n.in1 = in1;
        n.off = static_cast<int>(buf_.size());
        buf_.resize(buf_.size() + static_cast<size_t>(shape.numel()), T(0));
        nodes_.push_back(n);
        return static_cast<int>(nodes_.size()) - 1;
    }

    std::string shape_msg(const char* what, Var<T> a, Var<T> b) const {
        const Shape& sa = node(a).shape;
        const Shape& sb = node(b).shape;
        return std::string(what) + ": shape mismatch (" + std::to_string(sa.d0) +
               "x" + std::to_string(sa.d1) + " vs " + std::to_string(sb.d0) + "x" +
               std::to_string(sb.d1) + ")";
    }

    void check_finite(int id) {
        const Node& n = nodes_[static_cast<size_t>(id)];
        const T* p = &buf_[n.off];
        int sz = n.shape.numel();
        for (int i = 0; i < sz; ++i) {
            if (!std::isfinite(static_cast<double>(p[i])))
                throw NumericError(std::string("non-finite value from op '") +
                                   op_name(n.op) + "'");
        }
    }

    Var<T> ew_binary(Op op, Var<T> a, Var<T> b) {
        Shape sa = node(a).shape;
        Shape sb = node(b).shape;
        if (!(sa == sb)) throw DimensionError(shape_msg(op_name(op), a, b));
        int id = new_node(op, sa, a.id, b.id, needs_grad(a) || needs_grad(b));
        const T* pa = vals(a);
        const T* pb = vals(b);
        T* po = &buf_[nodes_[id].off];
        int sz = sa.numel();
        switch (op) {
            case Op::Add: for (int i = 0; i < sz; ++i) po[i] = pa[i] + pb[i]; break;
            case Op::Sub: for (int i = 0; i < sz; ++i) po[i] = pa[i] - pb[i]; break;
            case Op::Mul: for (int i = 0; i < sz; ++i) po[i] = pa[i] * pb[i]; break;
            case Op::Div: for (int i = 0; i < sz; ++i) po[i] = pa[i] / pb[i]; break;
            default: throw ContractError("ew_binary: bad op");
        }
        check_finite(id);
        return Var<T>{this, id};
    }

    Var<T> ew_unary(Op op, Var<T> a, T c = T(0)) {
        Shape sa = node(a).shape;
        int id = new_node(op, sa, a.id, -1, needs_grad(a));
        nodes_[id].c = c;
        const T* pa = vals(a);
        T* po = &buf_[nodes_[id].off];
        int sz = sa.numel();
        switch (op) {
            case Op::Neg: for (int i = 0; i < sz; ++i) po[i] = -pa[i]; break;
            case Op::Tanh: for (int i = 0; i < sz; ++i) po[i] = std::tanh(pa[i]); break;
            case Op::Relu:
                for (int i = 0; i < sz; ++i) po[i] = pa[i] > T(0) ? pa[i] : T(0);
                break;
            case Op::Softplus:
                for (int i = 0; i < sz; ++i) po[i] = softplus_scalar(pa[i]);
                break;
            case Op::Sigmoid:
                for (int i = 0; i < sz; ++i) po[i] = sigmoid_scalar(pa[i]);
                break;
            case Op::Exp: for (int i = 0; i < sz; ++i) po[i] = std::exp(pa[i]); break;
            case Op::Log: for (int i = 0; i < sz; ++i) po[i] = std::log(pa[i]); break;
            case Op::Square: for (int i = 0; i < sz; ++i) po[i] = pa[i] * pa[i]; break;
            case Op::Scale: for (int i = 0; i < sz; ++i) po[i] = pa[i] * c; break;
            case Op::AddConst: for (int i = 0; i < sz; ++i) po[i] = pa[i] + c; break;
            case Op::ClampMin:
                for (int i = 0; i < sz; ++i) po[i] = pa[i] > c ? pa[i] : c;
                break;
            default: throw ContractError("ew_unary: bad op");
        }
        check_finite(id);
        return Var<T>{this, id};
    }

    Var<T> reduce(Op op, Var<T> a) {
        Shape sa = node(a).shape;
        int id = new_node(op, Shape::scalar(), a.id, -1, needs_grad(a));
        const T* pa = vals(a);
        int sz = sa.numel();
        T acc = T(0);
        for (int i = 0; i < sz; ++i) acc += pa[i];
        buf_[nodes_[id].off] = (op == Op::Mean) ? acc / static_cast<T>(sz) : acc;
        check_finite(id);
        return Var<T>{this, id};
    }

    static T softplus_scalar(T x) {
        if (x > T(0)) return x + std::log1p(std::exp(-x));
        return std::log1p(std::exp(x));
    }

    static T sigmoid_scalar(T x) {
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        T e = std::exp(x);
        return e / (T(1) + e);
    }

    void add_into(int node_id, const T* g, int sz) {
        if (node_id < 0) return;
        const Node& n = nodes_[static_cast<size_t>(node_id)];
        if (!n.req) return;
        T* dst = &grad_[n.off];
        for (int i = 0; i < sz; ++i) dst[i] += g[i];
    }

    void backward_node(const Node& n) {
        const T* g = &grad_[n.off];
        int sz = n.shape.numel();
        switch (n.op) {
            case Op::Add: {
                add_into(n.in0, g, sz);
                add_into(n.in1, g, sz);
                break;
            }
            case Op::Sub: {
                add_into(n.in0, g, sz);
                if (n.in1 >= 0 && nodes_[n.in1].req) {
                    T* dst = &grad_[nodes_[n.in1].off];
                    for (int i = 0; i < sz; ++i) dst[i] -= g[i];
                }
                break;
            }
            case Op::Mul: {
                const T* pa = &buf_[nodes_[n.in0].off];
                const T* pb = &buf_[nodes_[n.in1].off];
                if (nodes_[n.in0].req) {
                    T* dst = &grad_[nodes_[n.in0].off];
                    for (int i = 0; i < sz; ++i) dst[i] += g[i] * pb[i];
                }
                if (nodes_[n.in1].req) {
                    T* dst = &grad_[nodes_[n.in1].off];
                    for (int i = 0; i < sz; ++i) dst[i] += g[i] * pa[i];
                }
                break;
            }
            case Op::Div: {
                const T* pa = &buf_[nodes_[n.in0].off];
                const T* pb = &buf_[nodes_[n.in1].off];
                if (nodes_[n.in0].req) {
                    T* dst = &grad_[nodes_[n.in0].off];
                    for (int i = 0; i < sz; ++i) dst[i] += g[i] / pb[i];
                }
                if (nodes_[n.in1].req) {
                    T* dst = &grad_[nodes_[n.in1].off];
                    for (int i = 0; i < sz; ++i)
                        dst[i] -= g[i] * pa[i] / (pb[i] * pb[i]);
                }
                break;
            }
            case Op::Neg: {
                if (nodes_[n.in0].req) {
                    T* dst = &grad_[nodes_[n.in0].off];
                    for (int i = 0; i < sz; ++i) dst[i] -= g[i];
                }
                break;
            }
            case Op::Tanh: {
                if (nodes_[n.in0].req) {
                    const T* y = &buf_[n.off];
                    T* dst = &grad_[nodes_[n.in0].off];
                    for (int i = 0; i < sz; ++i) dst[i] += g[i] * (T(1) - y[i] * y[i]);
                }
                break;
            }
            case Op::Relu: {
                if (nodes_[n.in0].req) {
                    const T* x = &buf_[nodes_[n.in0].off];
                    T* dst = &grad_[nodes_[n.in0].off];
                    for (int i = 0; i < sz; ++i) dst[i] += x[i] > T(0) ? g[i] : T(0);
                }
                break;
            }
            case Op::Softplus: {
                if (nodes_[n.in0].req) {
                    const T* x = &buf_[nodes_[n.in0].off];
                    T* dst = &grad_[nodes_[n.in0].off];
                    for (int i = 0; i < sz; ++i) dst[i] += g[i] * sigmoid_scalar(x[i]);
                }
                break;
            }
            case Op::Sigmoid: {
                if (nodes_[n.in0].req) {
                    const T* y = &buf_[n.off];
                    T* dst = &grad_[nodes_[n.in0].off];
                    for (int i = 0; i < sz; ++i) dst[i] += g[i] * y[i] * (T(1) - y[i]);
                }
                break;
            }
            case Op::Exp: {
                if (nodes_[n.in0].req) {
                    const T* y = &buf_[n.off];
                    T* dst = &grad_[nodes_[n.in0].off];
                    for (int i = 0; i < sz; ++i) dst[i] += g[i] * y[i];
                }
                break;
            }
            case Op::Log: {
                if (nodes_[n.in0].req) {
                    const T* x = &buf_[nodes_[n.in0].off];
                    T* dst = &grad_[nodes_[n.in0].off];
                    for (int i = 0; i < sz; ++i) dst[i] += g[i] / x[i];
                }
                break;
            }
            case Op::Square: {
                if (nodes_[n.in0].req) {
                    const T* x = &buf_[nodes_[n.in0].off];
                    T* dst = &grad_[nodes_[n.in0].off];
                    for (int i = 0; i < sz; ++i) dst[i] += T(2) * g[i] * x[i];
                }
                break;
            }
            case Op::Scale: {
                if (nodes_[n.in0].req) {
                    T* dst = &grad_[nodes_[n.in0].off];
                    for (int i = 0; i < sz; ++i) dst[i] += g[i] * n.c;
                }
                break;
            }
            case Op::AddConst: {
                add_into(n.in0, g, sz);
                break;
            }
            case Op::ClampMin: {
                if (nodes_[n.in0].req) {
                    const T* x = &buf_[nodes_[n.in0].off];
                    T* dst = &grad_[nodes_[n.in0].off];
                    for (int i = 0; i < sz; ++i)
                        dst[i] += x[i] > n.c ? g[i] : T(0);
                }
                break;
            }
            case Op::Matmul: {
                const Node& a = nodes_[n.in0];
                const Node& b = nodes_[n.in1];
                int m = a.shape.d0, k = a.shape.d1;
                int nn = (b.shape.rank == 1) ? 1 : b.shape.d1;
                const T* pa = &buf_[a.off];
                const T* pb = &buf_[b.off];
                if (a.req) {
                    T* da = &grad_[a.off];
                    for (int i = 0; i < m; ++i)
                        for (int l = 0; l < k; ++l) {
                            T acc = T(0);
                            for (int j = 0; j < nn; ++j)
                                acc += g[i * nn + j] * pb[l * nn + j];
                            da[i * k + l] += acc;
                        }
                }
                if (b.req) {
                    T* db = &grad_[b.off];
                    for (int l = 0; l < k; ++l)
                        for (int j = 0; j < nn; ++j) {
                            T acc = T(0);
                            for (int i = 0; i < m; ++i)
                                acc += pa[i * k + l] * g[i * nn + j];
                            db[l * nn + j] += acc;
                        }
                }
                break;
            }
            case Op::Concat: {
                int pos = 0;
                for (int p = 0; p < n.i1; ++p) {
                    int cid = aux_[static_cast<size_t>(n.i0 + p)];
                    const Node& c = nodes_[static_cast<size_t>(cid)];
                    int csz = c.shape.d0;
                    if (c.req) {
                        T* dst = &grad_[c.off];
                        for (int i = 0; i < csz; ++i) dst[i] += g[pos + i];
                    }
                    pos += csz;
                }
                break;
            }
            case Op::Slice: {
                if (nodes_[n.in0].req) {
                    T* dst = &grad_[nodes_[n.in0].off] + n.i0;
                    for (int i = 0; i < n.i1; ++i) dst[i] += g[i];
                }
                break;
            }
            case Op::Expand: {
                if (nodes_[n.in0].req) {
                    T acc = T(0);
                    for (int i = 0; i < sz; ++i) acc += g[i];
                    grad_[nodes_[n.in0].off] += acc;
                }
                break;
            }
            case Op::Sum: {
                if (nodes_[n.in0].req) {
                    int isz = nodes_[n.in0].shape.numel();
                    T* dst = &grad_[nodes_[n.in0].off];
                    for (int i = 0; i < isz; ++i) dst[i] += g[0];
                }
                break;
            }
            case Op::Mean: {
                if (nodes_[n.in0].req) {
                    int isz = nodes_[n.in0].shape.numel();
                    T gi = g[0] / static_cast<T>(isz);
                    T* dst = &grad_[nodes_[n.in0].off];
                    for (int i = 0; i < isz; ++i) dst[i] += gi;
                }
                break;
            }
            case Op::StopGrad:
            case Op::Leaf:
                break;
        }
    }
};

// ---- operator sugar --------------------------------------------------------

template <typename T> Var<T> operator+(Var<T> a, Var<T> b) { return a.tape->add(a, b); }
template <typename T> Var<T> operator-(Var<T> a, Var<T> b) { return a.tape->sub(a, b); }
template <typename T> Var<T> operator*(Var<T> a, Var<T> b) { return a.tape->mul(a, b); }
template <typename T> Var<T> operator/(Var<T> a, Var<T> b) { return a.tape->div(a, b); }
template <typename T> Var<T> operator-(Var<T> a) { return a.tape->neg(a); }
template <typename T> Var<T> operator*(Var<T> a, T c) { return a.tape->scale(a, c); }
template <typename T> Var<T> operator*(T c, Var<T> a) { return a.tape->scale(a, c); }

// ---- distribution ops --------------------------------------------------------

template <typename T>
void require_positive_std(const Tape<T>& tape, Var<T> std_var, const char* what) {
    for (T s : tape.values(std_var)) {
        if (!(s > T(0))) throw DomainError(std::string(what) + ": stddev must be positive");
    }
}

// Negative log density of a diagonal Gaussian at x, summed over dimensions:
// sum_i [ ln s_i + 0.5 ln 2pi + (x_i - mu_i)^2 / (2 s_i^2) ].
template <typename T>
Var<T> gaussian_nll(Var<T> x, const DiagGaussianVar<T>& dist) {
    Tape<T>& tape = *x.tape;
    require_positive_std(tape, dist.std, "gaussian_nll");
    if (!(tape.shape(x) == tape.shape(dist.mean)))
        throw DimensionError("gaussian_nll: x/mean shape mismatch");
    int n = tape.shape(x).numel();
    Var<T> z = tape.div(tape.sub(x, dist.mean), dist.std);
    Var<T> quad = tape.scale(tape.sum(tape.square(z)), T(0.5));
    Var<T> logdet = tape.sum(tape.log(dist.std));
    T konst = static_cast<T>(0.5 * static_cast<double>(n) *
                             std::log(2.0 * std::numbers::pi));
    return tape.add_const(tape.add(logdet, quad), konst);
}

// KL(q || p) between diagonal Gaussians, summed over dimensions:
// sum_i [ ln(sp_i/sq_i) + (sq_i^2 + (mq_i - mp_i)^2) / (2 sp_i^2) - 1/2 ].
template <typename T>
Var<T> kl_diag_gaussian(const DiagGaussianVar<T>& q, const DiagGaussianVar<T>& p) {
    Tape<T>& tape = *q.mean.tape;
    require_positive_std(tape, q.std, "kl_diag_gaussian");
    require_positive_std(tape, p.std, "kl_diag_gaussian");
    if (!(tape.shape(q.mean) == tape.shape(p.mean)))
        throw DimensionError("kl_diag_gaussian: mean shape mismatch");
    int n = tape.shape(q.mean).numel();
    Var<T> logratio = tape.sub(tape.sum(tape.log(p.std)), tape.sum(tape.log(q.std)));
    Var<T> num = tape.add(tape.square(q.std), tape.square(tape.sub(q.mean, p.mean)));
    Var<T> den = tape.scale(tape.square(p.std), T(2));
    Var<T> frac = tape.sum(tape.div(num, den));
    return tape.add_const(tape.add(logratio, frac), static_cast<T>(-0.5 * n));
}

// ---- parameter binding -------------------------------------------------------

// Imports each parameter onto a tape at most once per forward build and hands
// back the cached leaf afterwards.
template <typename T>
class ParamBind {
public:
    explicit ParamBind(Tape<T>& tape, bool with_grad = true)
        : tape_(&tape), with_grad_(with_grad) {}

    ParamBind(const ParamBind&) = delete;
    ParamBind& operator=(const ParamBind&) = delete;

    Var<T> operator()(Param<T>& p) {
        auto it = cache_.find(&p);
        if (it != cache_.end()) return it->second;
        Var<T> v = tape_->leaf(p, with_grad_);
        cache_.emplace(&p, v);
        return v;
    }

    Tape<T>& tape() { return *tape_; }

    // Gradient of the most recent backward pass wrt `p`; zeros if the
    // parameter never entered the graph.
    void grad_of(Param<T>& p, std::vector<T>& out) const {
        out.assign(static_cast<size_t>(p.size()), T(0));
        auto it = cache_.find(&p);
        if (it == cache_.end()) return;
        auto g = tape_->grad(it->second);
        std::copy(g.begin(), g.end(), out.begin());
    }

private:
    Tape<T>* tape_;
    bool with_grad_;
    std::unordered_map<Param<T>*, Var<T>> cache_;
};

// ---- finite-difference oracle ------------------------------------------------

// Rebuilds the scalar function through `build` and compares its reverse-mode
// gradient against central differences, coordinate by coordinate. `build`
// receives a fresh tape and binder on every call and must be deterministic
// across calls (reseed any noise internally). Returns max over coordinates of
// |g_ad - g_fd| / max(1, |g_fd|).
template <typename T, typename BuildFn>
double grad_check(BuildFn&& build, std::span<Param<T>* const> params, double eps) {
    Tape<T> tape;
    ParamBind<T> bind(tape, true);
    Var<T> y = build(tape, bind);
    if (tape.shape(y).numel() != 1)
        throw ContractError("grad_check: function must be scalar-valued");
    tape.backward(y);

    std::unordered_map<const Param<T>*, std::vector<double>> g_ad;
    std::vector<T> tmp;
    for (Param<T>* p : params) {
        bind.grad_of(*p, tmp);
        g_ad[p] = std::vector<double>(tmp.begin(), tmp.end());
    }

    auto eval = [&]() -> double {
        Tape<T> t;
        ParamBind<T> b(t, false);
        Var<T> y2 = build(t, b);
        return static_cast<double>(t.value0(y2));
    };

    double max_rel = 0.0;
    for (Param<T>* p : params) {
        for (int i = 0; i < p->size(); ++i) {
            T orig = p->value[static_cast<size_t>(i)];
            p->value[static_cast<size_t>(i)] = orig + static_cast<T>(eps);
            double fp = eval();
            p->value[static_cast<size_t>(i)] = orig - static_cast<T>(eps);
            double fm = eval();
            p->value[static_cast<size_t>(i)] = orig;
            double g_fd = (fp - fm) / (2.0 * eps);
            double rel = std::abs(g_ad[p][static_cast<size_t>(i)] - g_fd) /
                         std::max(1.0, std::abs(g_fd));
            if (rel > max_rel) max_rel = rel;
        }
    }
    return max_rel;
}

} // namespace fenet
