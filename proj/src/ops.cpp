#include "hivis/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <mutex>

#include "hivis/thread_pool.hpp"

namespace hivis {

Mask Mask::causal(int64_t p, int64_t cached) {
    Mask m(p, cached + p);
    for (int64_t i = 0; i < p; ++i)
        for (int64_t j = 0; j <= cached + i; ++j) m.at(i, j) = 1;
    return m;
}

namespace op {

namespace {

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

void require_2d_like(const Tensor& t, const char* op) {
    if (t.rank() < 1 || t.rank() > 2) fail(std::string(op) + ": expected rank 1 or 2, got " + t.shape_str());
}

// Core row-blocked kernel: C[i,:] += A[i,k] * B[k,:] with the k loop in fixed
// ascending order for every row. Blocks of four rows share each B row stream.
void matmul_rows(const double* a, const double* b, double* c, int64_t i0, int64_t i1, int64_t K,
                 int64_t N) {
    int64_t i = i0;
    for (; i + 4 <= i1; i += 4) {
        const double* a0 = a + i * K;
        const double* a1 = a0 + K;
        const double* a2 = a1 + K;
        const double* a3 = a2 + K;
        double* c0 = c + i * N;
        double* c1 = c0 + N;
        double* c2 = c1 + N;
        double* c3 = c2 + N;
        for (int64_t k = 0; k < K; ++k) {
            const double* br = b + k * N;
            double v0 = a0[k], v1 = a1[k], v2 = a2[k], v3 = a3[k];
            for (int64_t j = 0; j < N; ++j) {
                double bv = br[j];
                c0[j] += v0 * bv;
                c1[j] += v1 * bv;
                c2[j] += v2 * bv;
                c3[j] += v3 * bv;
            }
        }
    }
    for (; i < i1; ++i) {
        const double* ar = a + i * K;
        double* cr = c + i * N;
        for (int64_t k = 0; k < K; ++k) {
            double v = ar[k];
            const double* br = b + k * N;
            for (int64_t j = 0; j < N; ++j) cr[j] += v * br[j];
        }
    }
}

int64_t matmul_min_rows(int64_t K, int64_t N) { return (K * N >= 4096) ? 6 : 16; }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d_like(a, "matmul");
    require_2d_like(b, "matmul");
    if (a.cols() != b.rows()) check_shape(false, "matmul", a, b);
    const int64_t P = a.rows(), K = a.cols(), N = b.cols();
    Tensor c({P, N});
    parallel_rows(P, matmul_min_rows(K, N),
                  [&](int64_t i0, int64_t i1) { matmul_rows(a.data.data(), b.data.data(), c.data.data(), i0, i1, K, N); });
    return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_2d_like(a, "matmul_nt");
    require_2d_like(b, "matmul_nt");
    if (a.cols() != b.cols()) check_shape(false, "matmul_nt", a, b);
    const int64_t P = a.rows(), N = a.cols(), K = b.rows();
    Tensor c({P, K});
    parallel_rows(P, matmul_min_rows(N, K), [&](int64_t i0, int64_t i1) {
        for (int64_t i = i0; i < i1; ++i) {
            const double* ar = a.row(i);
            double* cr = c.row(i);
            for (int64_t k = 0; k < K; ++k) {
                const double* br = b.row(k);
                double s = 0.0;
                for (int64_t j = 0; j < N; ++j) s += ar[j] * br[j];
                cr[k] = s;
            }
        }
    });
    return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    require_2d_like(a, "matmul_tn");
    require_2d_like(b, "matmul_tn");
    if (a.rows() != b.rows()) check_shape(false, "matmul_tn", a, b);
    const int64_t P = a.rows(), K = a.cols(), N = b.cols();
    Tensor c({K, N});
    parallel_rows(K, 32, [&](int64_t k0, int64_t k1) {
        for (int64_t i = 0; i < P; ++i) {
            const double* ar = a.row(i);
            const double* br = b.row(i);
            for (int64_t k = k0; k < k1; ++k) {
                double v = ar[k];
                double* cr = c.row(k);
                for (int64_t j = 0; j < N; ++j) cr[j] += v * br[j];
            }
        }
    });
    return c;
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_shape(a.same_shape(b), "add", a, b);
    Tensor c = a;
    for (size_t i = 0; i < c.data.size(); ++i) c.data[i] += b.data[i];
    return c;
}

Tensor scale(const Tensor& a, double c) {
    Tensor r = a;
    for (double& v : r.data) v *= c;
    return r;
}

Tensor concat_last_dim(std::span<const Tensor* const> parts) {
    if (parts.empty()) fail("concat_last_dim: no inputs");
    int64_t rows = parts[0]->rows();
    int64_t cols = 0;
    for (const Tensor* t : parts) {
        if (t->rows() != rows) check_shape(false, "concat_last_dim", *parts[0], *t);
        cols += t->cols();
    }
    Tensor out({rows, cols});
    for (int64_t i = 0; i < rows; ++i) {
        double* dst = out.row(i);
        for (const Tensor* t : parts) {
            std::memcpy(dst, t->row(i), sizeof(double) * static_cast<size_t>(t->cols()));
            dst += t->cols();
        }
    }
    return out;
}

Tensor concat_rows(std::span<const Tensor* const> parts) {
    if (parts.empty()) fail("concat_rows: no inputs");
    int64_t cols = parts[0]->cols();
    int64_t rows = 0;
    for (const Tensor* t : parts) {
        if (t->cols() != cols) check_shape(false, "concat_rows", *parts[0], *t);
        rows += t->rows();
    }
    Tensor out({rows, cols});
    double* dst = out.data.data();
    for (const Tensor* t : parts) {
        std::memcpy(dst, t->data.data(), sizeof(double) * t->data.size());
        dst += t->numel();
    }
    return out;
}

Tensor row_softmax(const Tensor& x) {
    Tensor y = x;
    const int64_t R = y.rows(), C = y.cols();
    for (int64_t i = 0; i < R; ++i) {
        double* r = y.row(i);
        softmax_row_inplace(r, C);
    }
    return y;
}

Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps) {
    if (gain.numel() != x.cols()) check_shape(false, "rms_norm", x, gain);
    Tensor y = x;
    const int64_t R = y.rows(), C = y.cols();
    for (int64_t i = 0; i < R; ++i) {
        double* r = y.row(i);
        double ss = 0.0;
        for (int64_t j = 0; j < C; ++j) ss += r[j] * r[j];
        double inv = 1.0 / std::sqrt(ss / static_cast<double>(C) + eps);
        for (int64_t j = 0; j < C; ++j) r[j] *= inv * gain.data[static_cast<size_t>(j)];
    }
    return y;
}

Tensor silu(const Tensor& x) {
    Tensor y = x;
    for (double& v : y.data) v *= sigmoid(v);
    return y;
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
    const int64_t V = table.rows(), D = table.cols();
    Tensor out({static_cast<int64_t>(ids.size()), D});
    for (size_t i = 0; i < ids.size(); ++i) {
        int id = ids[i];
        if (id < 0 || id >= V) fail("embedding_lookup: id " + std::to_string(id) + " out of range");
        std::memcpy(out.row(static_cast<int64_t>(i)), table.row(id), sizeof(double) * static_cast<size_t>(D));
    }
    return out;
}

Tensor slice_rows(const Tensor& x, int64_t start, int64_t count) {
    if (start < 0 || count <= 0 || start + count > x.rows())
        fail("slice_rows: range [" + std::to_string(start) + "," + std::to_string(start + count) +
             ") out of " + x.shape_str());
    Tensor out({count, x.cols()});
    std::memcpy(out.data.data(), x.row(start), sizeof(double) * out.data.size());
    return out;
}

Tensor repeat_row(const Tensor& rowv, int64_t n) {
    if (rowv.rows() != 1) fail("repeat_row: expected a single row, got " + rowv.shape_str());
    Tensor out({n, rowv.cols()});
    for (int64_t i = 0; i < n; ++i)
        std::memcpy(out.row(i), rowv.data.data(), sizeof(double) * static_cast<size_t>(rowv.cols()));
    return out;
}

namespace {

// Cached cos/sin per (head width, position); values are computed by the same
// expression regardless of when the table grows, so lookups stay bitwise
// stable.
struct RopeTable {
    int64_t positions = 0;
    std::vector<double> cos_v;  // [pos * dh/2 + u]
    std::vector<double> sin_v;
};

const RopeTable& rope_table(int64_t dh, int64_t need_pos) {
    static std::mutex mu;
    static std::map<int64_t, RopeTable> tables;
    std::lock_guard<std::mutex> lk(mu);
    RopeTable& t = tables[dh];
    if (t.positions <= need_pos) {
        int64_t np = std::max<int64_t>(need_pos + 1, std::max<int64_t>(2 * t.positions, 1024));
        const int64_t half = dh / 2;
        t.cos_v.resize(static_cast<size_t>(np * half));
        t.sin_v.resize(static_cast<size_t>(np * half));
        for (int64_t pos = 0; pos < np; ++pos) {
            for (int64_t u = 0; u < half; ++u) {
                double theta = static_cast<double>(pos) *
                               std::pow(10000.0, -2.0 * static_cast<double>(u) / static_cast<double>(dh));
                t.cos_v[static_cast<size_t>(pos * half + u)] = std::cos(theta);
                t.sin_v[static_cast<size_t>(pos * half + u)] = std::sin(theta);
            }
        }
        t.positions = np;
    }
    return t;
}

}  // namespace

Tensor rope(const Tensor& x, std::span<const int> positions, int n_heads, bool inverse) {
    const int64_t R = x.rows(), D = x.cols();
    if (static_cast<int64_t>(positions.size()) != R) fail("rope: positions size != rows");
    if (D % n_heads != 0) fail("rope: width not divisible by heads");
    const int64_t dh = D / n_heads;
    if (dh % 2 != 0) fail("rope: head width must be even");
    int max_pos = 0;
    for (int p : positions) {
        if (p < 0) fail("rope: negative position");
        max_pos = std::max(max_pos, p);
    }
    const RopeTable& tab = rope_table(dh, max_pos);
    const int64_t half = dh / 2;
    Tensor y = x;
    for (int64_t i = 0; i < R; ++i) {
        double* r = y.row(i);
        const int64_t pos = positions[static_cast<size_t>(i)];
        const double* cs = tab.cos_v.data() + pos * half;
        const double* sn = tab.sin_v.data() + pos * half;
        for (int h = 0; h < n_heads; ++h) {
            double* hr = r + h * dh;
            for (int64_t u = 0; u < half; ++u) {
                double c = cs[u];
                double s = inverse ? -sn[u] : sn[u];
                double a = hr[2 * u], b = hr[2 * u + 1];
                hr[2 * u] = a * c - b * s;
                hr[2 * u + 1] = a * s + b * c;
            }
        }
    }
    return y;
}

Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v, const Mask& mask, int n_heads,
              Tensor* probs_out) {
    if (k.cols() != q.cols() || v.cols() != q.cols()) check_shape(false, "attend", q, k);
    if (v.rows() != k.rows()) check_shape(false, "attend", k, v);
    return attend_raw(q, k.data.data(), v.data.data(), k.rows(), mask, n_heads, probs_out);
}

Tensor attend_raw(const Tensor& q, const double* k, const double* v, int64_t n, const Mask& mask,
                  int n_heads, Tensor* probs_out) {
    const int64_t P = q.rows(), D = q.cols(), N = n;
    if (mask.rows != P || mask.cols != N)
        fail("attend: mask " + std::to_string(mask.rows) + "x" + std::to_string(mask.cols) +
             " does not match " + std::to_string(P) + "x" + std::to_string(N));
    if (D % n_heads != 0) fail("attend: width not divisible by heads");
    const int64_t dh = D / n_heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor out({P, D});
    if (probs_out) *probs_out = Tensor({P, static_cast<int64_t>(n_heads) * N});

    parallel_rows(P, 4, [&](int64_t i0, int64_t i1) {
        std::vector<double> scores(static_cast<size_t>(N));
        for (int64_t i = i0; i < i1; ++i) {
            const double* qr = q.row(i);
            double* orow = out.row(i);
            for (int h = 0; h < n_heads; ++h) {
                const double* qh = qr + h * dh;
                double mx = -1e300;
                for (int64_t j = 0; j < N; ++j) {
                    if (!mask.at(i, j)) continue;
                    const double* kh = k + j * D + h * dh;
                    double s = 0.0;
                    for (int64_t u = 0; u < dh; ++u) s += qh[u] * kh[u];
                    s *= inv_sqrt;
                    scores[static_cast<size_t>(j)] = s;
                    if (s > mx) mx = s;
                }
                if (mx == -1e300) fail("attend: query row " + std::to_string(i) + " attends nothing");
                double denom = 0.0;
                for (int64_t j = 0; j < N; ++j) {
                    if (!mask.at(i, j)) {
                        scores[static_cast<size_t>(j)] = 0.0;
                        continue;
                    }
                    double e = std::exp(scores[static_cast<size_t>(j)] - mx);
                    scores[static_cast<size_t>(j)] = e;
                    denom += e;
                }
                double* oh = orow + h * dh;
                for (int64_t u = 0; u < dh; ++u) oh[u] = 0.0;
                double inv_d = 1.0 / denom;
                for (int64_t j = 0; j < N; ++j) {
                    double p = scores[static_cast<size_t>(j)] * inv_d;
                    if (probs_out) probs_out->at(i, h * N + j) = p;
                    if (p == 0.0) continue;
                    const double* vh = v + j * D + h * dh;
                    for (int64_t u = 0; u < dh; ++u) oh[u] += p * vh[u];
                }
            }
        }
    });
    return out;
}

void attend_backward(const Tensor& q, const Tensor& k, const Tensor& v, const Mask& mask,
                     int n_heads, const Tensor& probs, const Tensor& dout, Tensor& dq, Tensor& dk,
                     Tensor& dv) {
    const int64_t P = q.rows(), D = q.cols(), N = k.rows();
    const int64_t dh = D / n_heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int64_t i = 0; i < P; ++i) {
        const double* qr = q.row(i);
        const double* dor = dout.row(i);
        for (int h = 0; h < n_heads; ++h) {
            const double* qh = qr + h * dh;
            const double* doh = dor + h * dh;
            // ds_j = dout . v_j ; dscore_j = p_j (ds_j - sum_j' p_j' ds_j')
            double dot_acc = 0.0;
            for (int64_t j = 0; j < N; ++j) {
                double p = probs.at(i, h * N + j);
                if (p == 0.0) continue;
                const double* vh = v.row(j) + h * dh;
                double ds = 0.0;
                for (int64_t u = 0; u < dh; ++u) {
                    ds += doh[u] * vh[u];
                    dv.at(j, h * dh + u) += p * doh[u];
                }
                dot_acc += p * ds;
            }
            for (int64_t j = 0; j < N; ++j) {
                double p = probs.at(i, h * N + j);
                if (p == 0.0 && !mask.at(i, j)) continue;
                const double* vh = v.row(j) + h * dh;
                double ds = 0.0;
                for (int64_t u = 0; u < dh; ++u) ds += doh[u] * vh[u];
                double dscore = p * (ds - dot_acc) * inv_sqrt;
                if (dscore == 0.0) continue;
                const double* kh = k.row(j) + h * dh;
                for (int64_t u = 0; u < dh; ++u) {
                    dq.at(i, h * dh + u) += dscore * kh[u];
                    dk.at(j, h * dh + u) += dscore * qh[u];
                }
            }
        }
    }
}

double weighted_ce(const Tensor& logits, const Tensor& weights) {
    check_shape(logits.same_shape(weights), "weighted_ce", logits, weights);
    const int64_t R = logits.rows(), C = logits.cols();
    double loss = 0.0;
    for (int64_t i = 0; i < R; ++i) {
        const double* l = logits.row(i);
        const double* w = weights.row(i);
        double mx = l[0];
        for (int64_t j = 1; j < C; ++j) mx = std::max(mx, l[j]);
        double denom = 0.0;
        for (int64_t j = 0; j < C; ++j) denom += std::exp(l[j] - mx);
        double lse = mx + std::log(denom);
        for (int64_t j = 0; j < C; ++j)
            if (w[j] != 0.0) loss += w[j] * (lse - l[j]);
    }
    return loss;
}

void weighted_ce_backward(const Tensor& logits, const Tensor& weights, double g, Tensor& dlogits) {
    const int64_t R = logits.rows(), C = logits.cols();
    for (int64_t i = 0; i < R; ++i) {
        const double* l = logits.row(i);
        const double* w = weights.row(i);
        double mx = l[0];
        for (int64_t j = 1; j < C; ++j) mx = std::max(mx, l[j]);
        double denom = 0.0;
        for (int64_t j = 0; j < C; ++j) denom += std::exp(l[j] - mx);
        double wsum = 0.0;
        for (int64_t j = 0; j < C; ++j) wsum += w[j];
        for (int64_t j = 0; j < C; ++j) {
            double p = std::exp(l[j] - mx) / denom;
            dlogits.at(i, j) += g * (wsum * p - w[j]);
        }
    }
}

double smooth_l1(const Tensor& pred, const Tensor& target) {
    check_shape(pred.same_shape(target), "smooth_l1", pred, target);
    double s = 0.0;
    for (size_t i = 0; i < pred.data.size(); ++i) {
        double d = pred.data[i] - target.data[i];
        double a = std::fabs(d);
        s += (a <= 1.0) ? 0.5 * d * d : a - 0.5;
    }
    return s / static_cast<double>(pred.numel());
}

void smooth_l1_backward(const Tensor& pred, const Tensor& target, double g, Tensor& dpred) {
    double inv = g / static_cast<double>(pred.numel());
    for (size_t i = 0; i < pred.data.size(); ++i) {
        double d = pred.data[i] - target.data[i];
        double gr = (std::fabs(d) <= 1.0) ? d : (d > 0 ? 1.0 : -1.0);
        dpred.data[i] += inv * gr;
    }
}

int argmax_row(const double* p, int64_t n) {
    int best = 0;
    for (int64_t j = 1; j < n; ++j)
        if (p[j] > p[best]) best = static_cast<int>(j);
    return best;
}

std::vector<std::pair<int, double>> topk_row(const double* p, int64_t n, int k) {
    std::vector<std::pair<int, double>> idx(static_cast<size_t>(n));
    for (int64_t j = 0; j < n; ++j) idx[static_cast<size_t>(j)] = {static_cast<int>(j), p[j]};
    int kk = static_cast<int>(std::min<int64_t>(k, n));
    auto cmp = [](const std::pair<int, double>& a, const std::pair<int, double>& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    };
    std::partial_sort(idx.begin(), idx.begin() + kk, idx.end(), cmp);
    idx.resize(static_cast<size_t>(kk));
    return idx;
}

void softmax_row_inplace(double* p, int64_t n, double temperature) {
    double t = temperature <= 0.0 ? 1.0 : temperature;
    double mx = p[0] / t;
    for (int64_t j = 0; j < n; ++j) mx = std::max(mx, p[j] / t);
    double denom = 0.0;
    for (int64_t j = 0; j < n; ++j) {
        p[j] = std::exp(p[j] / t - mx);
        denom += p[j];
    }
    for (int64_t j = 0; j < n; ++j) p[j] /= denom;
}

}  // namespace op

const char* prim_op_name(PrimOp kind) {
    switch (kind) {
        case PrimOp::Matmul: return "matmul";
        case PrimOp::Add: return "add";
        case PrimOp::Scale: return "scale";
        case PrimOp::ConcatLastDim: return "concat_last_dim";
        case PrimOp::RowSoftmax: return "row_softmax";
        case PrimOp::RmsNorm: return "rms_norm";
        case PrimOp::Silu: return "silu";
        case PrimOp::EmbeddingLookup: return "embedding_lookup";
        case PrimOp::SliceRows: return "slice_rows";
    }
    return "?";
}

Tensor primitive_forward(PrimOp kind, std::span<const Tensor* const> inputs, const PrimArgs& args) {
    auto need = [&](size_t n) {
        if (inputs.size() != n)
            fail(std::string(prim_op_name(kind)) + ": expected " + std::to_string(n) + " inputs, got " +
                 std::to_string(inputs.size()));
    };
    switch (kind) {
        case PrimOp::Matmul: need(2); return op::matmul(*inputs[0], *inputs[1]);
        case PrimOp::Add: need(2); return op::add(*inputs[0], *inputs[1]);
        case PrimOp::Scale: need(1); return op::scale(*inputs[0], args.c);
        case PrimOp::ConcatLastDim: return op::concat_last_dim(inputs);
        case PrimOp::RowSoftmax: need(1); return op::row_softmax(*inputs[0]);
        case PrimOp::RmsNorm: need(2); return op::rms_norm(*inputs[0], *inputs[1]);
        case PrimOp::Silu: need(1); return op::silu(*inputs[0]);
        case PrimOp::EmbeddingLookup: need(1); return op::embedding_lookup(*inputs[0], args.ids);
        case PrimOp::SliceRows: need(1); return op::slice_rows(*inputs[0], args.start, args.count);
    }
    fail("primitive_forward: unknown op");
}

}  // namespace hivis
