#pragma once

#include <span>
#include <vector>

#include "hivis/target_model.hpp"

namespace hivis {

struct DrafterConfig {
    int d_seq = 32;     // sequential-embedding width
    int threshold = 3;  // sequential index clamp
    int k_top = 5;      // per-node expansion
    int depth = 4;      // tree depth
    int n_paths = 5;    // retained path budget
    void validate() const;
};

// Inference-time ablation switches.
struct DrafterRunOpts {
    bool zero_implicit = false;   // zero the f slot everywhere
    bool freeze_seq_zero = false;  // use e_seq^0 at every step
};

// One-layer drafter conditioned on explicit text embeddings, implicit target
// hidden states and learned sequential embeddings. The LM head and token
// embedding are shared, frozen, from the target model.
class Drafter {
public:
    DrafterConfig cfg;
    ParamStore params;
    const TargetModel* target = nullptr;

    static Drafter init(const TargetModel& target, const DrafterConfig& cfg, uint64_t seed);
    static Drafter from_checkpoint(const TargetModel& target, const DrafterConfig& cfg,
                                   const std::string& path);

    int d() const { return target->cfg.d; }
    int input_width() const { return 2 * d() + cfg.d_seq; }
    int clamp_seq_index(int step_index) const;
    const Tensor& lm_head() const { return target->lm_head(); }
    uint64_t hash() const { return param_hash(params); }

    // e || f || e_seq^{min(step_index, threshold)}
    Tensor assemble_row(const Tensor& e_row, const Tensor& f_row, int step_index,
                        const DrafterRunOpts& opts = {}) const;
};

struct DraftStepOut {
    Tensor hidden;  // [p, d] f' rows
    Tensor logits;  // [p, vocab]
};

// Per-session drafter KV cache. Committed rows (seq index 0) occupy the front
// of the buffer and are never rewritten; speculative rows live in a scratch
// tail that is discarded after each verification round.
class DrafterSession {
public:
    explicit DrafterSession(const Drafter& drafter, DrafterRunOpts opts = {});

    int64_t committed_rows() const { return committed_; }
    int64_t scratch_rows() const { return scratch_; }
    int64_t forward_count() const { return forwards_; }
    const Drafter& drafter() const { return d_; }
    const DrafterRunOpts& opts() const { return opts_; }

    // Initializes the cache from paired rows (e_{t+1}, f_t); requires an
    // empty cache and both inputs of equal length >= 1.
    DraftStepOut prefill(const Tensor& e_rows, const Tensor& f_rows);
    // Appends verified rows (seq index 0) after a round; scratch must be clear.
    DraftStepOut append_committed(const Tensor& e_rows, const Tensor& f_rows);

    // Processes one speculative row for a node at `depth` (>= 1, clamped into
    // the sequential table); ancestors are scratch indices of the node's path
    // prefix, ascending. Returns that row's (f', logits) and the new scratch
    // index via out_scratch_index.
    DraftStepOut draft_step(const Tensor& e_row, const Tensor& f_row, int depth,
                            std::span<const int> ancestors, int* out_scratch_index = nullptr);
    void clear_scratch();
    bool can_draft() const { return committed_ + scratch_ + 1 <= k_buf_.rows(); }

    // Recomputes a pending chain in one pass over the committed cache only;
    // scratch stays untouched. Reference path for the incremental ops.
    DraftStepOut draft_path_recompute(const Tensor& e_rows, const Tensor& f_rows,
                                      std::span<const int> depths);

private:
    DraftStepOut run_rows(const Tensor& assembled, std::span<const int> positions, const Mask& mask,
                          int64_t write_slot);

    const Drafter& d_;
    DrafterRunOpts opts_;
    Tensor k_buf_;  // [capacity, d]
    Tensor v_buf_;
    int64_t committed_ = 0;
    int64_t scratch_ = 0;
    int64_t forwards_ = 0;
};

// Graph-side drafter forward used by training. Processes p new assembled
// rows against previously projected rows (their k/v graph nodes), so
// multi-step rollouts backpropagate through the cache. The sequential
// embedding rows are assembled by the caller so their gradients flow too.
struct DrafterGraphBinding {
    std::vector<std::pair<std::string, Var>> trained;
};
struct DrafterRowsOut {
    Var hidden;  // [p, d] f'
    Var logits;  // [p, vocab]
    Var k;       // roped keys of the new rows, for later steps
    Var v;
};
DrafterRowsOut drafter_rows_graph(Graph& g, const Drafter& drafter, Var assembled_rows,
                                  std::span<const int> positions, std::span<const Var> prev_k,
                                  std::span<const Var> prev_v, const Mask& mask,
                                  DrafterGraphBinding* binding);

}  // namespace hivis
