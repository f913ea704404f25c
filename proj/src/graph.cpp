#include "hivis/graph.hpp"

#include <cmath>

namespace hivis {

Graph::Node& Graph::node(Var v) {
    if (!v.valid() || v.id >= static_cast<int32_t>(nodes_.size())) fail("graph: bad var");
    return nodes_[static_cast<size_t>(v.id)];
}

const Graph::Node& Graph::node(Var v) const {
    if (!v.valid() || v.id >= static_cast<int32_t>(nodes_.size())) fail("graph: bad var");
    return nodes_[static_cast<size_t>(v.id)];
}

Var Graph::push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

Var Graph::leaf(const Tensor* t, bool requires_grad) {
    Node n;
    n.op = Op::Leaf;
    n.ref = t;
    n.rg = requires_grad;
    return push(std::move(n));
}

Var Graph::constant(Tensor t) {
    Node n;
    n.op = Op::Leaf;
    n.val = std::move(t);
    n.rg = false;
    return push(std::move(n));
}

const Tensor& Graph::val(Var v) const { return value_of(node(v)); }

bool Graph::requires_grad(Var v) const { return node(v).rg; }

Tensor Graph::grad_or_zero(Var v) const {
    const Node& n = node(v);
    if (n.has_grad) return n.grad;
    Tensor z = value_of(n);
    std::fill(z.data.begin(), z.data.end(), 0.0);
    return z;
}

namespace {
bool any_rg(const Graph& g, std::span<const Var> vs) {
    for (Var v : vs)
        if (g.requires_grad(v)) return true;
    return false;
}
}  // namespace

Var Graph::matmul(Var a, Var b) {
    Node n;
    n.op = Op::Matmul;
    n.in = {a.id, b.id};
    n.val = op::matmul(val(a), val(b));
    n.rg = requires_grad(a) || requires_grad(b);
    return push(std::move(n));
}

Var Graph::add(Var a, Var b) {
    Node n;
    n.op = Op::Add;
    n.in = {a.id, b.id};
    n.val = op::add(val(a), val(b));
    n.rg = requires_grad(a) || requires_grad(b);
    return push(std::move(n));
}

Var Graph::scale(Var a, double c) {
    Node n;
    n.op = Op::Scale;
    n.in = {a.id};
    n.c = c;
    n.val = op::scale(val(a), c);
    n.rg = requires_grad(a);
    return push(std::move(n));
}

Var Graph::concat_cols(std::span<const Var> parts) {
    Node n;
    n.op = Op::ConcatCols;
    std::vector<const Tensor*> ps;
    for (Var v : parts) {
        n.in.push_back(v.id);
        ps.push_back(&val(v));
    }
    n.val = op::concat_last_dim(ps);
    n.rg = any_rg(*this, parts);
    return push(std::move(n));
}

Var Graph::concat_rows(std::span<const Var> parts) {
    Node n;
    n.op = Op::ConcatRows;
    std::vector<const Tensor*> ps;
    for (Var v : parts) {
        n.in.push_back(v.id);
        ps.push_back(&val(v));
    }
    n.val = op::concat_rows(ps);
    n.rg = any_rg(*this, parts);
    return push(std::move(n));
}

Var Graph::row_softmax(Var a) {
    Node n;
    n.op = Op::RowSoftmax;
    n.in = {a.id};
    n.val = op::row_softmax(val(a));
    n.rg = requires_grad(a);
    return push(std::move(n));
}

Var Graph::rms_norm(Var x, Var gain) {
    Node n;
    n.op = Op::RmsNorm;
    n.in = {x.id, gain.id};
    n.val = op::rms_norm(val(x), val(gain));
    n.rg = requires_grad(x) || requires_grad(gain);
    return push(std::move(n));
}

Var Graph::silu(Var x) {
    Node n;
    n.op = Op::Silu;
    n.in = {x.id};
    n.val = op::silu(val(x));
    n.rg = requires_grad(x);
    return push(std::move(n));
}

Var Graph::embedding(Var table, std::vector<int> ids) {
    Node n;
    n.op = Op::Embedding;
    n.in = {table.id};
    n.val = op::embedding_lookup(val(table), ids);
    n.ids = std::move(ids);
    n.rg = requires_grad(table);
    return push(std::move(n));
}

Var Graph::slice_rows(Var x, int64_t start, int64_t count) {
    Node n;
    n.op = Op::SliceRows;
    n.in = {x.id};
    n.start = start;
    n.val = op::slice_rows(val(x), start, count);
    n.rg = requires_grad(x);
    return push(std::move(n));
}

Var Graph::repeat_row(Var x, int64_t count) {
    Node n;
    n.op = Op::RepeatRow;
    n.in = {x.id};
    n.val = op::repeat_row(val(x), count);
    n.rg = requires_grad(x);
    return push(std::move(n));
}

Var Graph::rope(Var x, std::vector<int> positions, int heads) {
    Node n;
    n.op = Op::Rope;
    n.in = {x.id};
    n.heads = heads;
    n.val = op::rope(val(x), positions, heads, false);
    n.ids = std::move(positions);
    n.rg = requires_grad(x);
    return push(std::move(n));
}

Var Graph::attend(Var q, Var k, Var v, Mask mask, int heads) {
    Node n;
    n.op = Op::Attend;
    n.in = {q.id, k.id, v.id};
    n.heads = heads;
    n.rg = requires_grad(q) || requires_grad(k) || requires_grad(v);
    n.val = op::attend(val(q), val(k), val(v), mask, heads, n.rg ? &n.saved : nullptr);
    n.mask = std::move(mask);
    return push(std::move(n));
}

Var Graph::weighted_ce(Var logits, Var weights) {
    if (requires_grad(weights)) fail("weighted_ce: weights must be constant");
    Node n;
    n.op = Op::WeightedCE;
    n.in = {logits.id, weights.id};
    n.val = Tensor::scalar(op::weighted_ce(val(logits), val(weights)));
    n.rg = requires_grad(logits);
    return push(std::move(n));
}

Var Graph::smooth_l1(Var pred, Var target) {
    if (requires_grad(target)) fail("smooth_l1: target must be constant");
    Node n;
    n.op = Op::SmoothL1;
    n.in = {pred.id, target.id};
    n.val = Tensor::scalar(op::smooth_l1(val(pred), val(target)));
    n.rg = requires_grad(pred);
    return push(std::move(n));
}

void Graph::ensure_grad(Node& n) {
    if (!n.has_grad) {
        const Tensor& v = value_of(n);
        n.grad = Tensor(v.shape);
        n.has_grad = true;
    }
}

void Graph::backward(Var loss) {
    Node& ln = node(loss);
    if (value_of(ln).numel() != 1) fail("backward: loss must be scalar, got " + value_of(ln).shape_str());
    ensure_grad(ln);
    ln.grad.data[0] = 1.0;
    for (int32_t i = loss.id; i >= 0; --i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (!n.has_grad || !n.rg || n.op == Op::Leaf) continue;
        backprop_node(n);
    }
}

void Graph::backprop_node(Node& n) {
    auto in_node = [&](size_t idx) -> Node& { return nodes_[static_cast<size_t>(n.in[idx])]; };
    auto want = [&](size_t idx) -> bool { return in_node(idx).rg; };
    auto gbuf = [&](size_t idx) -> Tensor& {
        Node& m = in_node(idx);
        ensure_grad(m);
        return m.grad;
    };
    auto vin = [&](size_t idx) -> const Tensor& { return value_of(in_node(idx)); };
    const Tensor& g = n.grad;

    switch (n.op) {
        case Op::Leaf:
            break;
        case Op::Matmul: {
            if (want(0)) {
                Tensor da = op::matmul_nt(g, vin(1));
                Tensor& acc = gbuf(0);
                for (size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += da.data[i];
            }
            if (want(1)) {
                Tensor db = op::matmul_tn(vin(0), g);
                Tensor& acc = gbuf(1);
                for (size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += db.data[i];
            }
            break;
        }
        case Op::Add: {
            for (size_t p = 0; p < 2; ++p) {
                if (!want(p)) continue;
                Tensor& acc = gbuf(p);
                for (size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += g.data[i];
            }
            break;
        }
        case Op::Scale: {
            if (want(0)) {
                Tensor& acc = gbuf(0);
                for (size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += n.c * g.data[i];
            }
            break;
        }
        case Op::ConcatCols: {
            int64_t off = 0;
            for (size_t p = 0; p < n.in.size(); ++p) {
                const Tensor& v = vin(p);
                if (want(p)) {
                    Tensor& acc = gbuf(p);
                    for (int64_t i = 0; i < v.rows(); ++i)
                        for (int64_t j = 0; j < v.cols(); ++j) acc.at(i, j) += g.at(i, off + j);
                }
                off += v.cols();
            }
            break;
        }
        case Op::ConcatRows: {
            int64_t off = 0;
            for (size_t p = 0; p < n.in.size(); ++p) {
                const Tensor& v = vin(p);
                if (want(p)) {
                    Tensor& acc = gbuf(p);
                    for (int64_t i = 0; i < v.rows(); ++i)
                        for (int64_t j = 0; j < v.cols(); ++j) acc.at(i, j) += g.at(off + i, j);
                }
                off += v.rows();
            }
            break;
        }
        case Op::RowSoftmax: {
            if (want(0)) {
                const Tensor& y = n.val;
                Tensor& acc = gbuf(0);
                for (int64_t i = 0; i < y.rows(); ++i) {
                    double dot = 0.0;
                    for (int64_t j = 0; j < y.cols(); ++j) dot += g.at(i, j) * y.at(i, j);
                    for (int64_t j = 0; j < y.cols(); ++j)
                        acc.at(i, j) += y.at(i, j) * (g.at(i, j) - dot);
                }
            }
            break;
        }
        case Op::RmsNorm: {
            const Tensor& x = vin(0);
            const Tensor& gain = vin(1);
            const int64_t C = x.cols();
            for (int64_t i = 0; i < x.rows(); ++i) {
                double ss = 0.0;
                for (int64_t j = 0; j < C; ++j) ss += x.at(i, j) * x.at(i, j);
                double r = std::sqrt(ss / static_cast<double>(C) + kRmsEps);
                double inv = 1.0 / r;
                if (want(1)) {
                    Tensor& dg = gbuf(1);
                    for (int64_t j = 0; j < C; ++j)
                        dg.data[static_cast<size_t>(j)] += g.at(i, j) * x.at(i, j) * inv;
                }
                if (want(0)) {
                    double mix = 0.0;
                    for (int64_t j = 0; j < C; ++j)
                        mix += g.at(i, j) * gain.data[static_cast<size_t>(j)] * x.at(i, j);
                    mix /= static_cast<double>(C) * r * r * r;
                    Tensor& dx = gbuf(0);
                    for (int64_t j = 0; j < C; ++j)
                        dx.at(i, j) += g.at(i, j) * gain.data[static_cast<size_t>(j)] * inv - x.at(i, j) * mix;
                }
            }
            break;
        }
        case Op::Silu: {
            if (want(0)) {
                const Tensor& x = vin(0);
                Tensor& acc = gbuf(0);
                for (size_t i = 0; i < x.data.size(); ++i) {
                    double v = x.data[i];
                    double s = 1.0 / (1.0 + std::exp(-std::fabs(v)));
                    if (v < 0) s = 1.0 - s;
                    acc.data[i] += g.data[i] * (s * (1.0 + v * (1.0 - s)));
                }
            }
            break;
        }
        case Op::Embedding: {
            if (want(0)) {
                Tensor& dt = gbuf(0);
                for (size_t i = 0; i < n.ids.size(); ++i) {
                    double* dst = dt.row(n.ids[i]);
                    const double* src = g.row(static_cast<int64_t>(i));
                    for (int64_t j = 0; j < g.cols(); ++j) dst[j] += src[j];
                }
            }
            break;
        }
        case Op::SliceRows: {
            if (want(0)) {
                Tensor& dx = gbuf(0);
                for (int64_t i = 0; i < g.rows(); ++i)
                    for (int64_t j = 0; j < g.cols(); ++j) dx.at(n.start + i, j) += g.at(i, j);
            }
            break;
        }
        case Op::RepeatRow: {
            if (want(0)) {
                Tensor& dx = gbuf(0);
                for (int64_t i = 0; i < g.rows(); ++i)
                    for (int64_t j = 0; j < g.cols(); ++j) dx.at(0, j) += g.at(i, j);
            }
            break;
        }
        case Op::Rope: {
            if (want(0)) {
                Tensor back = op::rope(g, n.ids, n.heads, true);
                Tensor& acc = gbuf(0);
                for (size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += back.data[i];
            }
            break;
        }
        case Op::Attend: {
            Tensor dq(vin(0).shape), dk(vin(1).shape), dv(vin(2).shape);
            op::attend_backward(vin(0), vin(1), vin(2), n.mask, n.heads, n.saved, g, dq, dk, dv);
            const Tensor* parts[3] = {&dq, &dk, &dv};
            for (size_t p = 0; p < 3; ++p) {
                if (!want(p)) continue;
                Tensor& acc = gbuf(p);
                for (size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += parts[p]->data[i];
            }
            break;
        }
        case Op::WeightedCE: {
            if (want(0)) op::weighted_ce_backward(vin(0), vin(1), g.data[0], gbuf(0));
            break;
        }
        case Op::SmoothL1: {
            if (want(0)) op::smooth_l1_backward(vin(0), vin(1), g.data[0], gbuf(0));
            break;
        }
    }
}

}  // namespace hivis
