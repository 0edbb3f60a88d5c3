#include "ripple/tape.hpp"

#include <algorithm>
#include <cmath>

namespace ripple::ad {

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

// True when `small` is a suffix of `big`, i.e. small tiles over the leading
// axes of big (bias-style broadcast).
bool suffix_broadcast(const Shape& big, const Shape& small) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

std::int64_t last_dim(const Tensor& t) {
    require(t.rank() >= 1, "op needs rank >= 1");
    return t.shape.back();
}

}  // namespace

const Node& Tape::node(Value v) const {
    if (!v.valid() || static_cast<size_t>(v.id) >= nodes_.size())
        throw std::invalid_argument("invalid tape value handle");
    return nodes_[static_cast<size_t>(v.id)];
}

Node& Tape::node(Value v) {
    return const_cast<Node&>(static_cast<const Tape*>(this)->node(v));
}

void Tape::check_finite(const Tensor& t, const char* op_name) const {
    for (double x : t.data)
        if (!std::isfinite(x))
            throw NumericError(std::string("non-finite value produced by op '") + op_name + "'");
}

Value Tape::push(Node n) {
    require(!backward_done_, "tape is single-use; no ops after backward()");
    nodes_.push_back(std::move(n));
    grads_.emplace_back();
    return Value{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Value Tape::leaf(const Tensor& t, bool force_grad) {
    check_finite(t, "leaf");
    Node n;
    n.op = Op::Leaf;
    n.out = t;
    n.needs_grad = t.requires_grad || force_grad;
    return push(std::move(n));
}

Value Tape::constant(Tensor t) {
    check_finite(t, "constant");
    Node n;
    n.op = Op::Leaf;
    n.out = std::move(t);
    n.needs_grad = false;
    return push(std::move(n));
}

Value Tape::add(Value a, Value b) {
    const Tensor& ta = node(a).out;
    const Tensor& tb = node(b).out;
    require(suffix_broadcast(ta.shape, tb.shape),
            "add: shape mismatch " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    Node n;
    n.op = Op::Add;
    n.inputs = {a.id, b.id};
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    n.out = Tensor(ta.shape);
    const std::int64_t bn = tb.numel();
    for (std::int64_t i = 0; i < ta.numel(); ++i)
        n.out.data[i] = ta.data[i] + tb.data[i % bn];
    check_finite(n.out, "add");
    return push(std::move(n));
}

Value Tape::sub(Value a, Value b) {
    const Tensor& ta = node(a).out;
    const Tensor& tb = node(b).out;
    require(ta.same_shape(tb), "sub: shape mismatch");
    Node n;
    n.op = Op::Sub;
    n.inputs = {a.id, b.id};
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    n.out = Tensor(ta.shape);
    for (std::int64_t i = 0; i < ta.numel(); ++i) n.out.data[i] = ta.data[i] - tb.data[i];
    check_finite(n.out, "sub");
    return push(std::move(n));
}

Value Tape::mul(Value a, Value b) {
    const Tensor& ta = node(a).out;
    const Tensor& tb = node(b).out;
    require(suffix_broadcast(ta.shape, tb.shape),
            "mul: shape mismatch " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    Node n;
    n.op = Op::Mul;
    n.inputs = {a.id, b.id};
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    n.out = Tensor(ta.shape);
    const std::int64_t bn = tb.numel();
    for (std::int64_t i = 0; i < ta.numel(); ++i)
        n.out.data[i] = ta.data[i] * tb.data[i % bn];
    check_finite(n.out, "mul");
    return push(std::move(n));
}

Value Tape::scalar_mul(Value a, double s) {
    const Tensor& ta = node(a).out;
    Node n;
    n.op = Op::ScalarMul;
    n.inputs = {a.id};
    n.needs_grad = node(a).needs_grad;
    n.darg = s;
    n.out = Tensor(ta.shape);
    for (std::int64_t i = 0; i < ta.numel(); ++i) n.out.data[i] = s * ta.data[i];
    check_finite(n.out, "scalar_mul");
    return push(std::move(n));
}

Value Tape::matmul(Value a, Value b) {
    const Tensor& ta = node(a).out;
    const Tensor& tb = node(b).out;
    require(ta.rank() == 2 && tb.rank() == 2, "matmul: operands must be 2-D");
    require(ta.shape[1] == tb.shape[0],
            "matmul: inner dimensions differ, " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    const std::int64_t m = ta.shape[0], k = ta.shape[1], p = tb.shape[1];
    Node n;
    n.op = Op::MatMul;
    n.inputs = {a.id, b.id};
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    n.out = Tensor({m, p});
    const double* A = ta.data.data();
    const double* B = tb.data.data();
    double* O = n.out.data.data();
    for (std::int64_t i = 0; i < m; ++i) {
        double* orow = O + i * p;
        for (std::int64_t t = 0; t < k; ++t) {
            const double aik = A[i * k + t];
            const double* brow = B + t * p;
            for (std::int64_t j = 0; j < p; ++j) orow[j] += aik * brow[j];
        }
    }
    check_finite(n.out, "matmul");
    return push(std::move(n));
}

Value Tape::transpose(Value a) {
    const Tensor& ta = node(a).out;
    require(ta.rank() == 2, "transpose: operand must be 2-D");
    const std::int64_t m = ta.shape[0], p = ta.shape[1];
    Node n;
    n.op = Op::Transpose;
    n.inputs = {a.id};
    n.needs_grad = node(a).needs_grad;
    n.out = Tensor({p, m});
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < p; ++j) n.out.data[j * m + i] = ta.data[i * p + j];
    return push(std::move(n));
}

Value Tape::relu(Value a) {
    const Tensor& ta = node(a).out;
    Node n;
    n.op = Op::Relu;
    n.inputs = {a.id};
    n.needs_grad = node(a).needs_grad;
    n.out = Tensor(ta.shape);
    for (std::int64_t i = 0; i < ta.numel(); ++i) n.out.data[i] = ta.data[i] > 0.0 ? ta.data[i] : 0.0;
    return push(std::move(n));
}

Value Tape::tanh(Value a) {
    const Tensor& ta = node(a).out;
    Node n;
    n.op = Op::Tanh;
    n.inputs = {a.id};
    n.needs_grad = node(a).needs_grad;
    n.out = Tensor(ta.shape);
    for (std::int64_t i = 0; i < ta.numel(); ++i) n.out.data[i] = std::tanh(ta.data[i]);
    return push(std::move(n));
}

Value Tape::exp(Value a) {
    const Tensor& ta = node(a).out;
    Node n;
    n.op = Op::Exp;
    n.inputs = {a.id};
    n.needs_grad = node(a).needs_grad;
    n.out = Tensor(ta.shape);
    for (std::int64_t i = 0; i < ta.numel(); ++i) n.out.data[i] = std::exp(ta.data[i]);
    check_finite(n.out, "exp");
    return push(std::move(n));
}

Value Tape::log(Value a) {
    const Tensor& ta = node(a).out;
    Node n;
    n.op = Op::Log;
    n.inputs = {a.id};
    n.needs_grad = node(a).needs_grad;
    n.out = Tensor(ta.shape);
    for (std::int64_t i = 0; i < ta.numel(); ++i) n.out.data[i] = std::log(ta.data[i]);
    check_finite(n.out, "log");
    return push(std::move(n));
}

Value Tape::sum(Value a) {
    const Tensor& ta = node(a).out;
    Node n;
    n.op = Op::Sum;
    n.inputs = {a.id};
    n.needs_grad = node(a).needs_grad;
    double s = 0.0;
    for (double x : ta.data) s += x;
    n.out = Tensor::scalar(s);
    check_finite(n.out, "sum");
    return push(std::move(n));
}

Value Tape::mean(Value a) {
    const Tensor& ta = node(a).out;
    Node n;
    n.op = Op::Mean;
    n.inputs = {a.id};
    n.needs_grad = node(a).needs_grad;
    double s = 0.0;
    for (double x : ta.data) s += x;
    n.out = Tensor::scalar(s / static_cast<double>(ta.numel()));
    check_finite(n.out, "mean");
    return push(std::move(n));
}

Value Tape::softmax(Value a) {
    const Tensor& ta = node(a).out;
    const std::int64_t cols = last_dim(ta);
    const std::int64_t rows = ta.numel() / cols;
    Node n;
    n.op = Op::Softmax;
    n.inputs = {a.id};
    n.needs_grad = node(a).needs_grad;
    n.out = Tensor(ta.shape);
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* x = ta.data.data() + r * cols;
        double* y = n.out.data.data() + r * cols;
        double mx = x[0];
        for (std::int64_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
        double z = 0.0;
        for (std::int64_t j = 0; j < cols; ++j) {
            y[j] = std::exp(x[j] - mx);
            z += y[j];
        }
        for (std::int64_t j = 0; j < cols; ++j) y[j] /= z;
    }
    check_finite(n.out, "softmax");
    return push(std::move(n));
}

Value Tape::layer_norm(Value a, double eps) {
    const Tensor& ta = node(a).out;
    const std::int64_t cols = last_dim(ta);
    const std::int64_t rows = ta.numel() / cols;
    require(eps > 0.0, "layer_norm: eps must be positive");
    Node n;
    n.op = Op::LayerNorm;
    n.inputs = {a.id};
    n.needs_grad = node(a).needs_grad;
    n.darg = eps;
    n.out = Tensor(ta.shape);
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* x = ta.data.data() + r * cols;
        double* y = n.out.data.data() + r * cols;
        double mu = 0.0;
        for (std::int64_t j = 0; j < cols; ++j) mu += x[j];
        mu /= static_cast<double>(cols);
        double var = 0.0;
        for (std::int64_t j = 0; j < cols; ++j) var += (x[j] - mu) * (x[j] - mu);
        var /= static_cast<double>(cols);
        const double inv_sigma = 1.0 / std::sqrt(var + eps);
        for (std::int64_t j = 0; j < cols; ++j) y[j] = (x[j] - mu) * inv_sigma;
    }
    check_finite(n.out, "layer_norm");
    return push(std::move(n));
}

Value Tape::embedding(Value table, const std::vector<std::int64_t>& ids) {
    const Tensor& tt = node(table).out;
    require(tt.rank() == 2, "embedding: table must be 2-D");
    require(!ids.empty(), "embedding: empty id list");
    const std::int64_t vocab = tt.shape[0], dim = tt.shape[1];
    for (auto id : ids)
        require(id >= 0 && id < vocab, "embedding: unknown token id " + std::to_string(id));
    Node n;
    n.op = Op::Embedding;
    n.inputs = {table.id};
    n.needs_grad = node(table).needs_grad;
    n.iargs = ids;
    n.out = Tensor({static_cast<std::int64_t>(ids.size()), dim});
    for (size_t r = 0; r < ids.size(); ++r)
        std::copy_n(tt.data.data() + ids[r] * dim, dim, n.out.data.data() + static_cast<std::int64_t>(r) * dim);
    return push(std::move(n));
}

Value Tape::squared_error(Value a, Value b) {
    const Tensor& ta = node(a).out;
    const Tensor& tb = node(b).out;
    require(ta.same_shape(tb), "squared_error: shape mismatch");
    Node n;
    n.op = Op::SquaredError;
    n.inputs = {a.id, b.id};
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    double s = 0.0;
    for (std::int64_t i = 0; i < ta.numel(); ++i) {
        const double d = ta.data[i] - tb.data[i];
        s += d * d;
    }
    n.out = Tensor::scalar(s);
    check_finite(n.out, "squared_error");
    return push(std::move(n));
}

Value Tape::cross_entropy(Value logits, const std::vector<std::int64_t>& targets) {
    const Tensor& tl = node(logits).out;
    require(tl.rank() == 2, "cross_entropy: logits must be 2-D");
    const std::int64_t rows = tl.shape[0], cols = tl.shape[1];
    require(static_cast<std::int64_t>(targets.size()) == rows,
            "cross_entropy: one integer target per logits row required");
    for (auto t : targets)
        require(t >= 0 && t < cols, "cross_entropy: target id out of range");
    Node n;
    n.op = Op::CrossEntropy;
    n.inputs = {logits.id};
    n.needs_grad = node(logits).needs_grad;
    n.iargs = targets;
    double loss = 0.0;
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* x = tl.data.data() + r * cols;
        double mx = x[0];
        for (std::int64_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
        double z = 0.0;
        for (std::int64_t j = 0; j < cols; ++j) z += std::exp(x[j] - mx);
        loss += mx + std::log(z) - x[targets[static_cast<size_t>(r)]];
    }
    n.out = Tensor::scalar(loss);
    check_finite(n.out, "cross_entropy");
    return push(std::move(n));
}

Value Tape::slice_rows(Value a, std::int64_t r0, std::int64_t r1) {
    const Tensor& ta = node(a).out;
    require(ta.rank() == 2, "slice_rows: operand must be 2-D");
    require(0 <= r0 && r0 < r1 && r1 <= ta.shape[0], "slice_rows: bounds out of range");
    Node n;
    n.op = Op::SliceRows;
    n.inputs = {a.id};
    n.needs_grad = node(a).needs_grad;
    n.iargs = {r0, r1};
    const std::int64_t cols = ta.shape[1];
    n.out = Tensor({r1 - r0, cols});
    std::copy_n(ta.data.data() + r0 * cols, (r1 - r0) * cols, n.out.data.data());
    return push(std::move(n));
}

Value Tape::slice_cols(Value a, std::int64_t c0, std::int64_t c1) {
    const Tensor& ta = node(a).out;
    require(ta.rank() == 2, "slice_cols: operand must be 2-D");
    require(0 <= c0 && c0 < c1 && c1 <= ta.shape[1], "slice_cols: bounds out of range");
    Node n;
    n.op = Op::SliceCols;
    n.inputs = {a.id};
    n.needs_grad = node(a).needs_grad;
    n.iargs = {c0, c1};
    const std::int64_t rows = ta.shape[0], cols = ta.shape[1], w = c1 - c0;
    n.out = Tensor({rows, w});
    for (std::int64_t r = 0; r < rows; ++r)
        std::copy_n(ta.data.data() + r * cols + c0, w, n.out.data.data() + r * w);
    return push(std::move(n));
}

Value Tape::concat_cols(const std::vector<Value>& parts) {
    require(!parts.empty(), "concat_cols: no operands");
    const std::int64_t rows = node(parts[0]).out.shape.at(0);
    std::int64_t total = 0;
    bool needs = false;
    for (Value p : parts) {
        const Tensor& t = node(p).out;
        require(t.rank() == 2 && t.shape[0] == rows, "concat_cols: row counts differ");
        total += t.shape[1];
        needs = needs || node(p).needs_grad;
    }
    Node n;
    n.op = Op::ConcatCols;
    n.needs_grad = needs;
    n.out = Tensor({rows, total});
    std::int64_t off = 0;
    for (Value p : parts) {
        n.inputs.push_back(p.id);
        const Tensor& t = node(p).out;
        const std::int64_t w = t.shape[1];
        n.iargs.push_back(w);
        for (std::int64_t r = 0; r < rows; ++r)
            std::copy_n(t.data.data() + r * w, w, n.out.data.data() + r * total + off);
        off += w;
    }
    return push(std::move(n));
}

Value Tape::replace_row(Value a, std::int64_t row, Value v) {
    const Tensor& ta = node(a).out;
    const Tensor& tv = node(v).out;
    require(ta.rank() == 2, "replace_row: operand must be 2-D");
    require(0 <= row && row < ta.shape[0], "replace_row: row out of range");
    require(tv.numel() == ta.shape[1], "replace_row: replacement length mismatch");
    Node n;
    n.op = Op::ReplaceRow;
    n.inputs = {a.id, v.id};
    n.needs_grad = node(a).needs_grad || node(v).needs_grad;
    n.iargs = {row};
    n.out = ta;
    n.out.requires_grad = false;
    std::copy_n(tv.data.data(), tv.numel(), n.out.data.data() + row * ta.shape[1]);
    check_finite(n.out, "replace_row");
    return push(std::move(n));
}

Tensor& Tape::grad_buf(std::int32_t id) {
    Tensor& g = grads_[static_cast<size_t>(id)];
    if (g.data.empty()) g = Tensor::zeros(nodes_[static_cast<size_t>(id)].out.shape);
    return g;
}

bool Tape::has_grad(Value v) const {
    node(v);
    return !grads_[static_cast<size_t>(v.id)].data.empty();
}

const Tensor& Tape::grad(Value v) const {
    const Node& nd = node(v);
    if (!backward_done_) throw std::logic_error("grad() before backward()");
    const Tensor& g = grads_[static_cast<size_t>(v.id)];
    if (g.data.empty()) {
        // Node not on the differentiation path: gradient is identically zero.
        const_cast<Tape*>(this)->grads_[static_cast<size_t>(v.id)] = Tensor::zeros(nd.out.shape);
    }
    return grads_[static_cast<size_t>(v.id)];
}

void Tape::backward(Value output) {
    const Node& out_node = node(output);
    require(out_node.out.numel() == 1, "backward: output node must be scalar");
    require(!backward_done_, "backward: tape already swept");
    backward_done_ = true;
    if (!out_node.needs_grad) return;  // constant output: all gradients stay zero
    grad_buf(output.id).data[0] = 1.0;

    for (std::int32_t id = output.id; id >= 0; --id) {
        Node& nd = nodes_[static_cast<size_t>(id)];
        if (!nd.needs_grad || grads_[static_cast<size_t>(id)].data.empty()) continue;
        const Tensor& g = grads_[static_cast<size_t>(id)];
        auto in = [&](size_t k) -> const Tensor& {
            return nodes_[static_cast<size_t>(nd.inputs[k])].out;
        };
        auto gin = [&](size_t k) -> Tensor& { return grad_buf(nd.inputs[k]); };
        auto in_needs = [&](size_t k) {
            return nodes_[static_cast<size_t>(nd.inputs[k])].needs_grad;
        };

        switch (nd.op) {
            case Op::Leaf:
                break;
            case Op::Add: {
                if (in_needs(0)) {
                    Tensor& ga = gin(0);
                    for (std::int64_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i];
                }
                if (in_needs(1)) {
                    Tensor& gb = gin(1);
                    const std::int64_t bn = gb.numel();
                    for (std::int64_t i = 0; i < g.numel(); ++i) gb.data[i % bn] += g.data[i];
                }
                break;
            }
            case Op::Sub: {
                if (in_needs(0)) {
                    Tensor& ga = gin(0);
                    for (std::int64_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i];
                }
                if (in_needs(1)) {
                    Tensor& gb = gin(1);
                    for (std::int64_t i = 0; i < g.numel(); ++i) gb.data[i] -= g.data[i];
                }
                break;
            }
            case Op::Mul: {
                const Tensor& a = in(0);
                const Tensor& b = in(1);
                const std::int64_t bn = b.numel();
                if (in_needs(0)) {
                    Tensor& ga = gin(0);
                    for (std::int64_t i = 0; i < g.numel(); ++i)
                        ga.data[i] += g.data[i] * b.data[i % bn];
                }
                if (in_needs(1)) {
                    Tensor& gb = gin(1);
                    for (std::int64_t i = 0; i < g.numel(); ++i)
                        gb.data[i % bn] += g.data[i] * a.data[i];
                }
                break;
            }
            case Op::ScalarMul: {
                if (in_needs(0)) {
                    Tensor& ga = gin(0);
                    for (std::int64_t i = 0; i < g.numel(); ++i) ga.data[i] += nd.darg * g.data[i];
                }
                break;
            }
            case Op::MatMul: {
                const Tensor& a = in(0);
                const Tensor& b = in(1);
                const std::int64_t m = a.shape[0], k = a.shape[1], p = b.shape[1];
                if (in_needs(0)) {
                    Tensor& ga = gin(0);
                    for (std::int64_t i = 0; i < m; ++i)
                        for (std::int64_t t = 0; t < k; ++t) {
                            double s = 0.0;
                            const double* grow = g.data.data() + i * p;
                            const double* brow = b.data.data() + t * p;
                            for (std::int64_t j = 0; j < p; ++j) s += grow[j] * brow[j];
                            ga.data[i * k + t] += s;
                        }
                }
                if (in_needs(1)) {
                    Tensor& gb = gin(1);
                    for (std::int64_t i = 0; i < m; ++i) {
                        const double* grow = g.data.data() + i * p;
                        for (std::int64_t t = 0; t < k; ++t) {
                            const double aik = a.data[i * k + t];
                            double* brow = gb.data.data() + t * p;
                            for (std::int64_t j = 0; j < p; ++j) brow[j] += aik * grow[j];
                        }
                    }
                }
                break;
            }
            case Op::Transpose: {
                if (in_needs(0)) {
                    Tensor& ga = gin(0);
                    const std::int64_t m = ga.shape[0], p = ga.shape[1];
                    for (std::int64_t i = 0; i < m; ++i)
                        for (std::int64_t j = 0; j < p; ++j) ga.data[i * p + j] += g.data[j * m + i];
                }
                break;
            }
            case Op::Relu: {
                if (in_needs(0)) {
                    const Tensor& a = in(0);
                    Tensor& ga = gin(0);
                    for (std::int64_t i = 0; i < g.numel(); ++i)
                        if (a.data[i] > 0.0) ga.data[i] += g.data[i];
                }
                break;
            }
            case Op::Tanh: {
                if (in_needs(0)) {
                    Tensor& ga = gin(0);
                    for (std::int64_t i = 0; i < g.numel(); ++i)
                        ga.data[i] += g.data[i] * (1.0 - nd.out.data[i] * nd.out.data[i]);
                }
                break;
            }
            case Op::Exp: {
                if (in_needs(0)) {
                    Tensor& ga = gin(0);
                    for (std::int64_t i = 0; i < g.numel(); ++i)
                        ga.data[i] += g.data[i] * nd.out.data[i];
                }
                break;
            }
            case Op::Log: {
                if (in_needs(0)) {
                    const Tensor& a = in(0);
                    Tensor& ga = gin(0);
                    for (std::int64_t i = 0; i < g.numel(); ++i)
                        ga.data[i] += g.data[i] / a.data[i];
                }
                break;
            }
            case Op::Sum: {
                if (in_needs(0)) {
                    Tensor& ga = gin(0);
                    const double gs = g.data[0];
                    for (auto& x : ga.data) x += gs;
                }
                break;
            }
            case Op::Mean: {
                if (in_needs(0)) {
                    Tensor& ga = gin(0);
                    const double gs = g.data[0] / static_cast<double>(ga.numel());
                    for (auto& x : ga.data) x += gs;
                }
                break;
            }
            case Op::Softmax: {
                if (in_needs(0)) {
                    Tensor& ga = gin(0);
                    const std::int64_t cols = nd.out.shape.back();
                    const std::int64_t rows = nd.out.numel() / cols;
                    for (std::int64_t r = 0; r < rows; ++r) {
                        const double* y = nd.out.data.data() + r * cols;
                        const double* gy = g.data.data() + r * cols;
                        double dot = 0.0;
                        for (std::int64_t j = 0; j < cols; ++j) dot += gy[j] * y[j];
                        double* gx = ga.data.data() + r * cols;
                        for (std::int64_t j = 0; j < cols; ++j) gx[j] += (gy[j] - dot) * y[j];
                    }
                }
                break;
            }
            case Op::LayerNorm: {
                if (in_needs(0)) {
                    const Tensor& a = in(0);
                    Tensor& ga = gin(0);
                    const std::int64_t cols = nd.out.shape.back();
                    const std::int64_t rows = nd.out.numel() / cols;
                    for (std::int64_t r = 0; r < rows; ++r) {
                        const double* x = a.data.data() + r * cols;
                        const double* y = nd.out.data.data() + r * cols;
                        const double* gy = g.data.data() + r * cols;
                        double mu = 0.0;
                        for (std::int64_t j = 0; j < cols; ++j) mu += x[j];
                        mu /= static_cast<double>(cols);
                        double var = 0.0;
                        for (std::int64_t j = 0; j < cols; ++j) var += (x[j] - mu) * (x[j] - mu);
                        var /= static_cast<double>(cols);
                        const double inv_sigma = 1.0 / std::sqrt(var + nd.darg);
                        double mean_g = 0.0, mean_gy = 0.0;
                        for (std::int64_t j = 0; j < cols; ++j) {
                            mean_g += gy[j];
                            mean_gy += gy[j] * y[j];
                        }
                        mean_g /= static_cast<double>(cols);
                        mean_gy /= static_cast<double>(cols);
                        double* gx = ga.data.data() + r * cols;
                        for (std::int64_t j = 0; j < cols; ++j)
                            gx[j] += inv_sigma * (gy[j] - mean_g - y[j] * mean_gy);
                    }
                }
                break;
            }
            case Op::Embedding: {
                if (in_needs(0)) {
                    Tensor& gt = gin(0);
                    const std::int64_t dim = nd.out.shape[1];
                    for (size_t r = 0; r < nd.iargs.size(); ++r) {
                        const double* grow = g.data.data() + static_cast<std::int64_t>(r) * dim;
                        double* trow = gt.data.data() + nd.iargs[r] * dim;
                        for (std::int64_t j = 0; j < dim; ++j) trow[j] += grow[j];
                    }
                }
                break;
            }
            case Op::SquaredError: {
                const Tensor& a = in(0);
                const Tensor& b = in(1);
                const double gs = g.data[0];
                if (in_needs(0)) {
                    Tensor& ga = gin(0);
                    for (std::int64_t i = 0; i < a.numel(); ++i)
                        ga.data[i] += 2.0 * (a.data[i] - b.data[i]) * gs;
                }
                if (in_needs(1)) {
                    Tensor& gb = gin(1);
                    for (std::int64_t i = 0; i < a.numel(); ++i)
                        gb.data[i] -= 2.0 * (a.data[i] - b.data[i]) * gs;
                }
                break;
            }
            case Op::CrossEntropy: {
                if (in_needs(0)) {
                    const Tensor& x = in(0);
                    Tensor& gx = gin(0);
                    const std::int64_t rows = x.shape[0], cols = x.shape[1];
                    const double gs = g.data[0];
                    for (std::int64_t r = 0; r < rows; ++r) {
                        const double* xr = x.data.data() + r * cols;
                        double mx = xr[0];
                        for (std::int64_t j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
                        double z = 0.0;
                        for (std::int64_t j = 0; j < cols; ++j) z += std::exp(xr[j] - mx);
                        double* gr = gx.data.data() + r * cols;
                        for (std::int64_t j = 0; j < cols; ++j)
                            gr[j] += gs * std::exp(xr[j] - mx) / z;
                        gr[nd.iargs[static_cast<size_t>(r)]] -= gs;
                    }
                }
                break;
            }
            case Op::SliceRows: {
                if (in_needs(0)) {
                    Tensor& ga = gin(0);
                    const std::int64_t cols = ga.shape[1];
                    const std::int64_t r0 = nd.iargs[0];
                    for (std::int64_t i = 0; i < g.numel(); ++i)
                        ga.data[r0 * cols + i] += g.data[i];
                }
                break;
            }
            case Op::SliceCols: {
                if (in_needs(0)) {
                    Tensor& ga = gin(0);
                    const std::int64_t cols = ga.shape[1];
                    const std::int64_t c0 = nd.iargs[0];
                    const std::int64_t w = nd.out.shape[1];
                    for (std::int64_t r = 0; r < nd.out.shape[0]; ++r)
                        for (std::int64_t j = 0; j < w; ++j)
                            ga.data[r * cols + c0 + j] += g.data[r * w + j];
                }
                break;
            }
            case Op::ConcatCols: {
                const std::int64_t rows = nd.out.shape[0];
                const std::int64_t total = nd.out.shape[1];
                std::int64_t off = 0;
                for (size_t k = 0; k < nd.inputs.size(); ++k) {
                    const std::int64_t w = nd.iargs[k];
                    if (in_needs(k)) {
                        Tensor& gp = gin(k);
                        for (std::int64_t r = 0; r < rows; ++r)
                            for (std::int64_t j = 0; j < w; ++j)
                                gp.data[r * w + j] += g.data[r * total + off + j];
                    }
                    off += w;
                }
                break;
            }
            case Op::ReplaceRow: {
                const std::int64_t cols = nd.out.shape[1];
                const std::int64_t row = nd.iargs[0];
                if (in_needs(0)) {
                    Tensor& ga = gin(0);
                    for (std::int64_t r = 0; r < nd.out.shape[0]; ++r) {
                        if (r == row) continue;
                        for (std::int64_t j = 0; j < cols; ++j)
                            ga.data[r * cols + j] += g.data[r * cols + j];
                    }
                }
                if (in_needs(1)) {
                    Tensor& gv = gin(1);
                    for (std::int64_t j = 0; j < cols; ++j)
                        gv.data[j] += g.data[row * cols + j];
                }
                break;
            }
        }
    }
}

}  // namespace ripple::ad
