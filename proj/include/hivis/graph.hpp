#pragma once

#include <span>
#include <vector>

#include "hivis/ops.hpp"
#include "hivis/tensor.hpp"

namespace hivis {

// Handle into a Graph's node list.
struct Var {
    int32_t id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Nodes are recorded in execution order (inputs always
// precede users), values are computed eagerly through the op kernels, and
// backward() walks the tape once accumulating vector-Jacobian products.
class Graph {
public:
    // Leaf referencing external storage (parameters); the pointee must
    // outlive the graph.
    Var leaf(const Tensor* t, bool requires_grad);
    // Leaf owning its value; never receives a gradient.
    Var constant(Tensor t);

    Var matmul(Var a, Var b);
    Var add(Var a, Var b);
    Var scale(Var a, double c);
    Var concat_cols(std::span<const Var> parts);
    Var concat_rows(std::span<const Var> parts);
    Var row_softmax(Var a);
    Var rms_norm(Var x, Var gain);
    Var silu(Var x);
    Var embedding(Var table, std::vector<int> ids);
    Var slice_rows(Var x, int64_t start, int64_t count);
    Var repeat_row(Var x, int64_t n);
    Var rope(Var x, std::vector<int> positions, int heads);
    Var attend(Var q, Var k, Var v, Mask mask, int heads);
    Var weighted_ce(Var logits, Var weights);  // weights must not require grad
    Var smooth_l1(Var pred, Var target);       // target must not require grad

    const Tensor& val(Var v) const;
    // Zero tensor of the node's shape if the node was unreachable from the loss.
    Tensor grad_or_zero(Var v) const;
    bool requires_grad(Var v) const;

    void backward(Var loss);

    size_t size() const { return nodes_.size(); }

private:
    enum class Op {
        Leaf,
        Matmul,
        Add,
        Scale,
        ConcatCols,
        ConcatRows,
        RowSoftmax,
        RmsNorm,
        Silu,
        Embedding,
        SliceRows,
        RepeatRow,
        Rope,
        Attend,
        WeightedCE,
        SmoothL1,
    };

    struct Node {
        Op op = Op::Leaf;
        std::vector<int32_t> in;
        Tensor val;
        const Tensor* ref = nullptr;
        bool rg = false;
        Tensor grad;
        bool has_grad = false;
        double c = 1.0;
        int64_t start = 0;
        int heads = 0;
        std::vector<int> ids;
        Mask mask;
        Tensor saved;
    };

    const Tensor& value_of(const Node& n) const { return n.ref ? *n.ref : n.val; }
    Node& node(Var v);
    const Node& node(Var v) const;
    Var push(Node n);
    void ensure_grad(Node& n);
    void backprop_node(Node& n);

    std::vector<Node> nodes_;
};

}  // namespace hivis
