#pragma once

#include <span>
#include <vector>

#include "hivis/tree.hpp"

namespace hivis {

struct RoundResult {
    int accepted = 0;                // accepted draft tokens this round
    std::vector<int> committed;      // accepted + 1 correction/bonus token
    int target_forwards = 1;         // always 1, asserted by the loop
    int tree_nodes = 0;              // verified rows (root included)
    int drafter_forwards = 0;
    double t_draft = 0.0;
    double t_verify = 0.0;
    double t_update = 0.0;
};

struct DecodeStats {
    std::vector<RoundResult> rounds;
    int64_t total_tokens = 0;  // generated tokens including the prefill token
    double wall = 0.0;          // decode phase, seconds
    double prefill_wall = 0.0;
    double baseline_wall = -1.0;  // filled by the harness
    bool truncated = false;       // hit max_new or context bound mid-round
    int64_t target_prefill_rows = 0;
    int drafter_prefill_rows = 0;
    int text_len = 0;
    double temperature = 0.0;
};

struct DecodeResult {
    std::vector<int> tokens;  // generated continuation (prompt excluded)
    DecodeStats stats;
};

struct DecodeConfig {
    DrafterConfig tree;
    double temperature = 0.0;
    int max_new = 24;
};

struct VerifyOutcome {
    std::vector<int> accepted_nodes;  // tree node indices, root excluded
    int next_token = -1;              // correction (mismatch) or bonus (leaf)
};

// Greedy tree acceptance: walk from the root taking the child that equals the
// target argmax at each node; the next token is the target argmax at the last
// accepted node. node_logits rows align with tree.nodes.
VerifyOutcome verify_greedy(const TokenTree& tree, const Tensor& node_logits);

struct SampledVerify {
    int accepted = 0;
    int next_token = -1;
};

// Chain speculative sampling: accept x_i with prob min(1, p_i(x_i)/q_i(x_i));
// on first rejection resample from normalize(max(0, p_i - q_i)); when all
// accepted sample from the final target distribution. q has one row per chain
// token; p has chain+1 rows (row i verifies token i, last row is the bonus).
SampledVerify verify_sampled(std::span<const int> chain, const Tensor& q_dists,
                             const Tensor& p_dists, Rng& rng);

// Full four-stage loop: target prefill, then repeated drafter cache update /
// draft / verify until max_new tokens or EOS.
DecodeResult decode_loop(const TargetModel& target, const Drafter& drafter, const SceneSpec* scene,
                         std::span<const int> prompt, const DecodeConfig& cfg, Rng& rng,
                         const DrafterRunOpts& opts = {});

// Pure target decoding with decode-phase timing, for baselines and oracles.
struct BaselineResult {
    std::vector<int> tokens;
    double wall = 0.0;
    double prefill_wall = 0.0;
};
BaselineResult ar_baseline(const TargetModel& target, const SceneSpec* scene,
                           std::span<const int> prompt, int max_new, double temperature, Rng& rng);

struct Metrics {
    double tau_committed = 0.0;
    double tau_accepted = 0.0;
    double speedup = 0.0;
    double prefill_ratio = 0.0;
};

// tau_committed = mean committed per round (accepted + 1); speedup uses the
// harness-filled baseline wall; prefill_ratio = text rows / target prefix rows.
Metrics compute_metrics(const DecodeStats& stats);
Metrics compute_metrics(std::span<const DecodeStats> stats);

}  // namespace hivis
