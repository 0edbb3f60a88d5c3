#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ripple/tensor.hpp"

namespace ripple::ad {

// Raised when a forward op produces NaN/Inf. Overflow is a hard error here:
// a silent Inf would corrupt every cosine similarity computed downstream.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// Handle to a node on a Tape.
struct Value {
    std::int32_t id = -1;
    bool valid() const { return id >= 0; }
};

enum class Op : std::uint8_t {
    Leaf,
    Add,        // elementwise; rhs may broadcast over leading axes
    Sub,        // elementwise, same shape
    Mul,        // elementwise; rhs may broadcast over leading axes
    ScalarMul,
    MatMul,     // 2-D only
    Transpose,  // 2-D only
    Relu,
    Tanh,
    Exp,
    Log,
    Sum,          // all elements -> scalar
    Mean,         // all elements -> scalar
    Softmax,      // over last axis
    LayerNorm,    // over last axis, no affine part
    Embedding,    // row gather from a [vocab, dim] table
    SquaredError, // sum((a-b)^2) -> scalar
    CrossEntropy, // sum over rows of -log softmax[target] -> scalar
    SliceRows,
    SliceCols,
    ConcatCols,
    ReplaceRow,
};

// One recorded operation. Built eagerly: `out` holds the forward result.
struct Node {
    Op op = Op::Leaf;
    std::vector<std::int32_t> inputs;
    Tensor out;
    bool needs_grad = false;
    // Op-specific payload: embedding ids, cross-entropy targets, slice bounds,
    // the row index of ReplaceRow, packed as integers.
    std::vector<std::int64_t> iargs;
    double darg = 0.0;  // ScalarMul factor / LayerNorm epsilon
};

// Define-by-run computation graph. Single-use: build, read values, call
// backward once. Confined to one thread during forward/backward.
class Tape {
public:
    // Leaves. `leaf` participates in differentiation iff t.requires_grad
    // (or force_grad) is set; `constant` never does.
    Value leaf(const Tensor& t, bool force_grad = false);
    Value constant(Tensor t);

    Value add(Value a, Value b);
    Value sub(Value a, Value b);
    Value mul(Value a, Value b);
    Value scalar_mul(Value a, double s);
    Value matmul(Value a, Value b);
    Value transpose(Value a);
    Value relu(Value a);
    Value tanh(Value a);
    Value exp(Value a);
    Value log(Value a);
    Value sum(Value a);
    Value mean(Value a);
    Value softmax(Value a);
    Value layer_norm(Value a, double eps = 1e-5);
    Value embedding(Value table, const std::vector<std::int64_t>& ids);
    Value squared_error(Value a, Value b);
    Value cross_entropy(Value logits, const std::vector<std::int64_t>& targets);
    Value slice_rows(Value a, std::int64_t r0, std::int64_t r1);
    Value slice_cols(Value a, std::int64_t c0, std::int64_t c1);
    Value concat_cols(const std::vector<Value>& parts);
    Value replace_row(Value a, std::int64_t row, Value v);

    const Tensor& value(Value v) const { return node(v).out; }

    // Reverse-mode sweep from a scalar output. Visits each node exactly once,
    // in reverse creation order (creation order is topological).
    void backward(Value output);

    bool backward_done() const { return backward_done_; }
    const Tensor& grad(Value v) const;
    bool has_grad(Value v) const;

    size_t size() const { return nodes_.size(); }

private:
    const Node& node(Value v) const;
    Node& node(Value v);
    Value push(Node n);
    void check_finite(const Tensor& t, const char* op_name) const;
    Tensor& grad_buf(std::int32_t id);

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
    bool backward_done_ = false;
};

}  // namespace ripple::ad
