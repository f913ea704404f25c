#include "hivis/drafter.hpp"

#include <cmath>
#include <cstring>

namespace hivis {

void DrafterConfig::validate() const {
    if (threshold < 1) fail("DrafterConfig: threshold must be >= 1");
    if (depth < 1) fail("DrafterConfig: depth must be >= 1");
    if (n_paths < 1) fail("DrafterConfig: n_paths must be >= 1");
    if (k_top < 1) fail("DrafterConfig: k_top must be >= 1");
    if (d_seq < 1) fail("DrafterConfig: d_seq must be >= 1");
}

Drafter Drafter::init(const TargetModel& target, const DrafterConfig& cfg, uint64_t seed) {
    cfg.validate();
    Drafter dr;
    dr.cfg = cfg;
    dr.target = &target;
    Rng rng(seed);
    const int d = target.cfg.d;
    const int mh = target.cfg.mlp_hidden();
    const int w = 2 * d + cfg.d_seq;
    const double ws = 1.0 / std::sqrt(static_cast<double>(d));
    dr.params.add("input_proj", rng.randn({w, d}, 1.0 / std::sqrt(static_cast<double>(w))));
    dr.params.add("wq", rng.randn({d, d}, ws));
    dr.params.add("wk", rng.randn({d, d}, ws));
    dr.params.add("wv", rng.randn({d, d}, ws));
    dr.params.add("wo", rng.randn({d, d}, ws / std::sqrt(2.0)));
    dr.params.add("attn_norm", Tensor::full({d}, 1.0));
    dr.params.add("w1", rng.randn({d, mh}, ws));
    dr.params.add("w2", rng.randn({mh, d}, ws / std::sqrt(2.0)));
    dr.params.add("mlp_norm", Tensor::full({d}, 1.0));
    dr.params.add("final_norm", Tensor::full({d}, 1.0));
    dr.params.add("e_seq", rng.randn({cfg.threshold + 1, cfg.d_seq}, 0.02));
    return dr;
}

Drafter Drafter::from_checkpoint(const TargetModel& target, const DrafterConfig& cfg,
                                 const std::string& path) {
    Drafter dr = init(target, cfg, 0);
    ParamStore loaded = load_checkpoint(path);
    for (auto& [name, v] : dr.params.t) {
        Tensor& src = loaded.at(name);
        check_shape(src.same_shape(v), "drafter checkpoint " + name, src, v);
        v = std::move(src);
    }
    return dr;
}

int Drafter::clamp_seq_index(int step_index) const {
    if (step_index < 0) fail("clamp_seq_index: negative step index");
    return std::min(step_index, cfg.threshold);
}

Tensor Drafter::assemble_row(const Tensor& e_row, const Tensor& f_row, int step_index,
                             const DrafterRunOpts& opts) const {
    const int dd = d();
    if (e_row.numel() != dd || f_row.numel() != dd)
        fail("assemble_row: width mismatch, e=" + e_row.shape_str() + " f=" + f_row.shape_str() +
             " expected width " + std::to_string(dd));
    int idx = clamp_seq_index(step_index);
    if (opts.freeze_seq_zero) idx = 0;
    Tensor out({1, static_cast<int64_t>(input_width())});
    std::memcpy(out.data.data(), e_row.data.data(), sizeof(double) * static_cast<size_t>(dd));
    if (!opts.zero_implicit)
        std::memcpy(out.data.data() + dd, f_row.data.data(), sizeof(double) * static_cast<size_t>(dd));
    std::memcpy(out.data.data() + 2 * dd, params.at("e_seq").row(idx),
                sizeof(double) * static_cast<size_t>(cfg.d_seq));
    return out;
}

DrafterSession::DrafterSession(const Drafter& drafter, DrafterRunOpts opts)
    : d_(drafter), opts_(opts) {
    const int64_t cap = drafter.target->cfg.max_seq + 8 * (drafter.cfg.depth + 2);
    k_buf_ = Tensor({cap, drafter.d()});
    v_buf_ = Tensor({cap, drafter.d()});
}

DraftStepOut DrafterSession::run_rows(const Tensor& assembled, std::span<const int> positions,
                                      const Mask& mask, int64_t write_slot) {
    const int64_t p = assembled.rows();
    if (write_slot + p > k_buf_.rows()) fail("drafter: context overflow");
    Tensor x = op::matmul(assembled, d_.params.at("input_proj"));
    Tensor h = x;
    Tensor a = op::rms_norm(h, d_.params.at("attn_norm"));
    Tensor q = op::rope(op::matmul(a, d_.params.at("wq")), positions, d_.target->cfg.heads);
    Tensor kn = op::rope(op::matmul(a, d_.params.at("wk")), positions, d_.target->cfg.heads);
    Tensor vn = op::matmul(a, d_.params.at("wv"));
    std::memcpy(k_buf_.row(write_slot), kn.data.data(), kn.data.size() * sizeof(double));
    std::memcpy(v_buf_.row(write_slot), vn.data.data(), vn.data.size() * sizeof(double));
    Tensor att = op::attend_raw(q, k_buf_.data.data(), v_buf_.data.data(), write_slot + p, mask,
                                d_.target->cfg.heads);
    h = op::add(h, op::matmul(att, d_.params.at("wo")));
    Tensor mx = op::rms_norm(h, d_.params.at("mlp_norm"));
    h = op::add(h, op::matmul(op::silu(op::matmul(mx, d_.params.at("w1"))), d_.params.at("w2")));
    ++forwards_;
    DraftStepOut out;
    out.hidden = op::rms_norm(h, d_.params.at("final_norm"));
    out.logits = op::matmul(out.hidden, d_.lm_head());
    return out;
}

namespace {
Tensor assemble_block(const Drafter& d, const DrafterRunOpts& opts, const Tensor& e_rows,
                      const Tensor& f_rows, std::span<const int> step_indices) {
    if (e_rows.rows() != f_rows.rows() || e_rows.cols() != f_rows.cols())
        fail("drafter: e/f row count mismatch (" + std::to_string(e_rows.rows()) + " vs " +
             std::to_string(f_rows.rows()) + ")");
    const int64_t n = e_rows.rows();
    Tensor out({n, static_cast<int64_t>(d.input_width())});
    for (int64_t i = 0; i < n; ++i) {
        Tensor e({1, e_rows.cols()});
        std::memcpy(e.data.data(), e_rows.row(i), sizeof(double) * static_cast<size_t>(e_rows.cols()));
        Tensor f({1, f_rows.cols()});
        std::memcpy(f.data.data(), f_rows.row(i), sizeof(double) * static_cast<size_t>(f_rows.cols()));
        Tensor row = d.assemble_row(e, f, step_indices[static_cast<size_t>(i)], opts);
        std::memcpy(out.row(i), row.data.data(), row.data.size() * sizeof(double));
    }
    return out;
}
}  // namespace

DraftStepOut DrafterSession::prefill(const Tensor& e_rows, const Tensor& f_rows) {
    if (committed_ != 0 || scratch_ != 0) fail("drafter prefill: cache not empty");
    if (e_rows.rows() < 1) fail("drafter prefill: need at least one row");
    return append_committed(e_rows, f_rows);
}

DraftStepOut DrafterSession::append_committed(const Tensor& e_rows, const Tensor& f_rows) {
    if (scratch_ != 0) fail("drafter append: scratch not cleared");
    if (e_rows.data.empty() && f_rows.data.empty()) return {};  // zero-row append
    const int64_t p = e_rows.rows();
    std::vector<int> zeros(static_cast<size_t>(p), 0);
    Tensor assembled = assemble_block(d_, opts_, e_rows, f_rows, zeros);
    std::vector<int> positions(static_cast<size_t>(p));
    for (int64_t i = 0; i < p; ++i) positions[static_cast<size_t>(i)] = static_cast<int>(committed_ + i);
    DraftStepOut out = run_rows(assembled, positions, Mask::causal(p, committed_), committed_);
    committed_ += p;
    return out;
}

DraftStepOut DrafterSession::draft_step(const Tensor& e_row, const Tensor& f_row, int depth,
                                        std::span<const int> ancestors, int* out_scratch_index) {
    if (depth < 1) fail("draft_step: depth must be >= 1");
    if (static_cast<int64_t>(ancestors.size()) != depth - 1)
        fail("draft_step: ancestor count " + std::to_string(ancestors.size()) + " != depth-1");
    Tensor assembled = assemble_block(d_, opts_, e_row, f_row, std::vector<int>{depth});
    const int64_t slot = committed_ + scratch_;
    Mask mask(1, slot + 1);
    for (int64_t j = 0; j < committed_; ++j) mask.at(0, j) = 1;
    for (int a : ancestors) {
        if (a < 0 || a >= scratch_) fail("draft_step: bad ancestor index");
        mask.at(0, committed_ + a) = 1;
    }
    mask.at(0, slot) = 1;
    // a node at depth c occupies sequence position committed + c - 1
    std::vector<int> positions = {static_cast<int>(committed_ + depth - 1)};
    DraftStepOut out = run_rows(assembled, positions, mask, slot);
    if (out_scratch_index) *out_scratch_index = static_cast<int>(scratch_);
    ++scratch_;
    return out;
}

void DrafterSession::clear_scratch() { scratch_ = 0; }

DraftStepOut DrafterSession::draft_path_recompute(const Tensor& e_rows, const Tensor& f_rows,
                                                  std::span<const int> depths) {
    const int64_t p = e_rows.rows();
    if (static_cast<int64_t>(depths.size()) != p) fail("draft_path_recompute: depths size mismatch");
    const int64_t saved_scratch = scratch_;
    if (saved_scratch != 0) fail("draft_path_recompute: scratch must be clear");
    std::vector<int> idx(depths.begin(), depths.end());
    Tensor assembled = assemble_block(d_, opts_, e_rows, f_rows, idx);
    std::vector<int> positions(static_cast<size_t>(p));
    for (int64_t i = 0; i < p; ++i)
        positions[static_cast<size_t>(i)] = static_cast<int>(committed_ + depths[static_cast<size_t>(i)] - 1);
    DraftStepOut out = run_rows(assembled, positions, Mask::causal(p, committed_), committed_);
    scratch_ = 0;  // pass wrote into the scratch region; discard it
    return out;
}

DrafterRowsOut drafter_rows_graph(Graph& g, const Drafter& drafter, Var assembled_rows,
                                  std::span<const int> positions, std::span<const Var> prev_k,
                                  std::span<const Var> prev_v, const Mask& mask,
                                  DrafterGraphBinding* binding) {
    auto bind = [&](const char* name) {
        Var v = g.leaf(&drafter.params.at(name), true);
        if (binding) binding->trained.emplace_back(name, v);
        return v;
    };
    const int heads = drafter.target->cfg.heads;
    std::vector<int> pos(positions.begin(), positions.end());
    Var x = g.matmul(assembled_rows, bind("input_proj"));
    Var a = g.rms_norm(x, bind("attn_norm"));
    Var q = g.rope(g.matmul(a, bind("wq")), pos, heads);
    Var kn = g.rope(g.matmul(a, bind("wk")), pos, heads);
    Var vn = g.matmul(a, bind("wv"));
    std::vector<Var> ks(prev_k.begin(), prev_k.end());
    ks.push_back(kn);
    std::vector<Var> vs(prev_v.begin(), prev_v.end());
    vs.push_back(vn);
    Var k_all = ks.size() == 1 ? ks[0] : g.concat_rows(ks);
    Var v_all = vs.size() == 1 ? vs[0] : g.concat_rows(vs);
    Var att = g.attend(q, k_all, v_all, mask, heads);
    Var h = g.add(x, g.matmul(att, bind("wo")));
    Var mx = g.rms_norm(h, bind("mlp_norm"));
    h = g.add(h, g.matmul(g.silu(g.matmul(mx, bind("w1"))), bind("w2")));
    DrafterRowsOut out;
    out.hidden = g.rms_norm(h, bind("final_norm"));
    out.logits = g.matmul(out.hidden, g.leaf(&drafter.lm_head(), false));
    out.k = kn;
    out.v = vn;
    return out;
}

}  // namespace hivis
