#pragma once

#include <optional>
#include <span>
#include <vector>

#include "hivis/checkpoint.hpp"
#include "hivis/dataset.hpp"
#include "hivis/graph.hpp"
#include "hivis/ops.hpp"
#include "hivis/tensor.hpp"

namespace hivis {

struct TargetConfig {
    int d = 64;
    int layers = 4;
    int heads = 4;
    int vocab = 256;
    int visual_len = 32;  // v: visual prefix rows
    int max_seq = 512;
    uint64_t seed = 1;

    int mlp_hidden() const { return 2 * d; }
    void validate() const;
};

// Maximum grid cells encode_scene supports; fixes the scene feature width.
constexpr int kMaxSceneCells = 16;
constexpr int kSceneFeatureDim = kNumShapes + kNumColors + 1 + kMaxSceneCells;

// Frozen decoder-only transformer over a synthetic visual prefix plus text
// tokens. Parameters live in a ParamStore so checkpointing and hashing are
// uniform with the drafter.
class TargetModel {
public:
    TargetConfig cfg;
    ParamStore params;

    static TargetModel init(const TargetConfig& cfg);
    static TargetModel from_checkpoint(const TargetConfig& cfg, const std::string& path);

    // Deterministic seeded projection of one-hot cell features; rows beyond
    // the grid are zero. Same scene, same output, bitwise.
    Tensor encode_scene(const SceneSpec& scene) const;
    Tensor embed_tokens(std::span<const int> tokens) const;
    // visual prefix (when scene given) + token embeddings
    Tensor prefill_rows(const SceneSpec* scene, std::span<const int> tokens) const;

    const Tensor& lm_head() const { return params.at("lm_head"); }
    const Tensor& tok_embedding() const { return params.at("tok_emb"); }
    uint64_t hash() const { return param_hash(params); }
};

struct ForwardResult {
    Tensor logits;  // [p, vocab]
    Tensor hidden;  // [p, d] final-norm hidden states (LM head input)
};

// One decoding session: per-layer KV cache plus bookkeeping.
class TargetState {
public:
    explicit TargetState(const TargetModel& model);

    int64_t len() const { return len_; }
    int64_t forward_count() const { return forwards_; }

    // Appends p rows. mask is [p, len+p]; positions are the RoPE positions
    // (sequential rows: len..len+p-1; tree rows: len + node depth).
    ForwardResult forward(const Tensor& rows, const Mask& mask, std::span<const int> positions);
    // Convenience causal append.
    ForwardResult forward_causal(const Tensor& rows);

    void truncate(int64_t new_len);
    // Keeps rows region_start + kept[i] (ascending) and drops the rest of the
    // tail; used to commit an accepted tree path in place.
    void keep_tail_subset(int64_t region_start, std::span<const int> kept);

private:
    const TargetModel& m_;
    std::vector<Tensor> k_cache_;  // per layer, [max_seq, d], first len_ rows valid
    std::vector<Tensor> v_cache_;
    int64_t len_ = 0;
    int64_t forwards_ = 0;
};

struct SampleResult {
    int token = 0;
    Tensor probs;  // full normalized distribution (one-hot when T=0)
};

// T=0: argmax with lowest-id tie break; T>0: sample from softmax(logits/T).
SampleResult sample_token(const Tensor& logits_row, double temperature, Rng& rng);

// Pure autoregressive decoding (the oracle and the speedup baseline).
std::vector<int> target_greedy_decode(const TargetModel& model, const SceneSpec* scene,
                                      std::span<const int> prompt, int max_new);
std::vector<int> target_sample_decode(const TargetModel& model, const SceneSpec* scene,
                                      std::span<const int> prompt, int max_new, double temperature,
                                      Rng& rng);

// Graph-side forward shared by pretraining and the drafter's teacher; binds
// every parameter as a leaf so gradients reach the whole model.
struct TargetGraphBinding {
    std::vector<std::pair<std::string, Var>> trained;
    Var rows_in;  // bound token rows (embedding output), for inspection
};
std::pair<Var, Var> target_forward_graph(Graph& g, const TargetModel& model, Var rows,
                                         std::span<const int> positions, const Mask& mask,
                                         TargetGraphBinding* binding);

struct PretrainConfig {
    int steps = 2200;
    int batch = 4;
    double lr = 1.5e-3;
    int warmup = 100;
    uint64_t seed = 7;
    int eval_records = 200;
    int log_every = 0;  // 0 = silent
};

struct PretrainReport {
    double initial_val_loss = 0.0;
    double final_val_loss = 0.0;
    double qa_accuracy = 0.0;
    int steps_run = 0;
};

// Next-token cross-entropy training of the toy target on a mixed corpus.
// Throws on divergence (NaN loss) naming the step.
TargetModel pretrain_target(const MixedCorpus& corpus, const TargetConfig& cfg,
                            const PretrainConfig& train_cfg, PretrainReport* report = nullptr);

// Fraction of held-out records whose greedy answer matches exactly.
double eval_qa_accuracy(const TargetModel& model, std::span<const CorpusRecord> records, int max_new = 24);

}  // namespace hivis
