#pragma once

#include <span>
#include <utility>
#include <vector>

#include "hivis/tensor.hpp"

namespace hivis {

// Boolean attention mask, rows = queries, cols = attendable positions.
struct Mask {
    int64_t rows = 0;
    int64_t cols = 0;
    std::vector<uint8_t> v;

    Mask() = default;
    Mask(int64_t r, int64_t c) : rows(r), cols(c), v(static_cast<size_t>(r * c), 0) {}

    uint8_t& at(int64_t i, int64_t j) { return v[static_cast<size_t>(i * cols + j)]; }
    bool at(int64_t i, int64_t j) const { return v[static_cast<size_t>(i * cols + j)] != 0; }

    // Each of the p new rows attends to everything cached plus the causal
    // prefix of the new rows.
    static Mask causal(int64_t p, int64_t cached);
};

constexpr double kRmsEps = 1e-5;

// Kernels. Every kernel computes each output row with a reduction order that
// does not depend on how many rows share the pass, so a row's result is
// bitwise identical whether it is evaluated alone or in a batch.
namespace op {

Tensor matmul(const Tensor& a, const Tensor& b);     // [p,k]x[k,n] -> [p,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a * b^T: [p,n]x[k,n] -> [p,k]
Tensor matmul_tn(const Tensor& a, const Tensor& b);  // a^T * b: [p,k]x[p,n] -> [k,n]

Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor concat_last_dim(std::span<const Tensor* const> parts);
Tensor concat_rows(std::span<const Tensor* const> parts);
Tensor row_softmax(const Tensor& x);  // max-subtracted, rows sum to 1
Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps = kRmsEps);
Tensor silu(const Tensor& x);
Tensor embedding_lookup(const Tensor& table, std::span<const int> ids);
Tensor slice_rows(const Tensor& x, int64_t start, int64_t count);
Tensor repeat_row(const Tensor& row, int64_t n);

// Rotary position encoding applied per head to even/odd pairs. inverse=true
// rotates by the negated angle (exact transpose, used by the backward pass).
Tensor rope(const Tensor& x, std::span<const int> positions, int n_heads, bool inverse = false);

// Multi-head masked attention over packed heads. probs_out, when non-null,
// receives the softmax weights laid out [p, H*n] for the backward pass.
Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v, const Mask& mask, int n_heads,
              Tensor* probs_out = nullptr);
// Pointer form attending over the first n rows of contiguous [*, D] buffers,
// so KV caches need no copying per pass.
Tensor attend_raw(const Tensor& q, const double* k, const double* v, int64_t n, const Mask& mask,
                  int n_heads, Tensor* probs_out = nullptr);
void attend_backward(const Tensor& q, const Tensor& k, const Tensor& v, const Mask& mask,
                     int n_heads, const Tensor& probs, const Tensor& dout, Tensor& dq, Tensor& dk,
                     Tensor& dv);

// L = -sum_ij w_ij * log_softmax(logits)_ij
double weighted_ce(const Tensor& logits, const Tensor& weights);
void weighted_ce_backward(const Tensor& logits, const Tensor& weights, double g, Tensor& dlogits);

// Elementwise-mean Smooth-L1 with the quadratic/linear transition at |x|=1.
double smooth_l1(const Tensor& pred, const Tensor& target);
void smooth_l1_backward(const Tensor& pred, const Tensor& target, double g, Tensor& dpred);

// Row utilities (deterministic: ties resolve to the lowest index).
int argmax_row(const double* p, int64_t n);
std::vector<std::pair<int, double>> topk_row(const double* p, int64_t n, int k);
void softmax_row_inplace(double* p, int64_t n, double temperature = 1.0);

}  // namespace op

// The spec-facing primitive entry point; model code calls the kernels above
// directly (taped via Graph when training).
enum class PrimOp {
    Matmul,
    Add,
    Scale,
    ConcatLastDim,
    RowSoftmax,
    RmsNorm,
    Silu,
    EmbeddingLookup,
    SliceRows,
};

struct PrimArgs {
    double c = 1.0;
    std::vector<int> ids;
    int64_t start = 0;
    int64_t count = 0;
};

Tensor primitive_forward(PrimOp kind, std::span<const Tensor* const> inputs, const PrimArgs& args = {});
const char* prim_op_name(PrimOp kind);

}  // namespace hivis
