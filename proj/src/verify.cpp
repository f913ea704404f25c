#include "hivis/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>

#include "hivis/tokenizer.hpp"

namespace hivis {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

int categorical(const double* probs, int64_t n, Rng& rng) {
    double u = rng.uniform();
    double acc = 0.0;
    for (int64_t j = 0; j < n; ++j) {
        acc += probs[j];
        if (u < acc) return static_cast<int>(j);
    }
    return static_cast<int>(n - 1);
}

Tensor embed_one(const TargetModel& m, int token) {
    int ids[1] = {token};
    return m.embed_tokens(ids);
}

Tensor gather_rows(const Tensor& src, std::span<const int> rows) {
    Tensor out({static_cast<int64_t>(rows.size()), src.cols()});
    for (size_t i = 0; i < rows.size(); ++i)
        std::memcpy(out.row(static_cast<int64_t>(i)), src.row(rows[i]),
                    sizeof(double) * static_cast<size_t>(src.cols()));
    return out;
}

Tensor temper_rows(const Tensor& logits, double temperature) {
    Tensor p = logits;
    for (int64_t i = 0; i < p.rows(); ++i) op::softmax_row_inplace(p.row(i), p.cols(), temperature);
    return p;
}

}  // namespace

VerifyOutcome verify_greedy(const TokenTree& tree, const Tensor& node_logits) {
    if (node_logits.rows() != tree.size()) fail("verify_greedy: logits rows != tree nodes");
    VerifyOutcome out;
    int cur = 0;
    for (;;) {
        int want = op::argmax_row(node_logits.row(cur), node_logits.cols());
        int next = -1;
        for (int i = cur + 1; i < tree.size(); ++i) {
            const TreeNode& n = tree.nodes[static_cast<size_t>(i)];
            if (n.parent == cur && n.token == want) {
                next = i;
                break;
            }
        }
        if (next < 0) {
            out.next_token = want;
            return out;
        }
        out.accepted_nodes.push_back(next);
        cur = next;
    }
}

SampledVerify verify_sampled(std::span<const int> chain, const Tensor& q_dists, const Tensor& p_dists,
                             Rng& rng) {
    const int D = static_cast<int>(chain.size());
    if (q_dists.rows() != D) fail("verify_sampled: q rows != chain length");
    if (p_dists.rows() != D + 1) fail("verify_sampled: p rows != chain length + 1");
    const int64_t V = p_dists.cols();
    SampledVerify out;
    for (int i = 0; i < D; ++i) {
        int x = chain[static_cast<size_t>(i)];
        double px = p_dists.at(i, x);
        double qx = q_dists.at(i, x);
        if (qx <= 0.0)
            fail("verify_sampled: drafted token " + std::to_string(x) + " has zero drafter probability");
        double ratio = px / qx;
        if (ratio >= 1.0 || rng.uniform() < ratio) {
            ++out.accepted;
            continue;
        }
        // rejected: resample from the normalized positive residual
        std::vector<double> resid(static_cast<size_t>(V));
        double z = 0.0;
        for (int64_t j = 0; j < V; ++j) {
            double r = p_dists.at(i, j) - q_dists.at(i, j);
            resid[static_cast<size_t>(j)] = r > 0.0 ? r : 0.0;
            z += resid[static_cast<size_t>(j)];
        }
        if (z <= 0.0) {
            // p == q up to rounding; residual is empty, fall back to p itself
            out.next_token = categorical(p_dists.row(i), V, rng);
            return out;
        }
        for (double& r : resid) r /= z;
        out.next_token = categorical(resid.data(), V, rng);
        return out;
    }
    out.next_token = categorical(p_dists.row(D), V, rng);
    return out;
}

DecodeResult decode_loop(const TargetModel& target, const Drafter& drafter, const SceneSpec* scene,
                         std::span<const int> prompt, const DecodeConfig& cfg, Rng& rng,
                         const DrafterRunOpts& opts) {
    const int l = static_cast<int>(prompt.size());
    if (l < 2) fail("decode_loop: prompt length must be >= 2");
    if (cfg.max_new < 1) fail("decode_loop: max_new must be >= 1");
    const double T = cfg.temperature;
    if (T < 0.0) fail("decode_loop: negative temperature");

    DecodeResult result;
    DecodeStats& stats = result.stats;
    stats.temperature = T;
    stats.text_len = l;

    auto t_prefill = Clock::now();
    // Target prefill consumes the prompt up to (not including) its last
    // token; the last prompt token is the root of the first draft round.
    TargetState tstate(target);
    std::vector<int> prefix(prompt.begin(), prompt.end() - 1);
    Tensor rows = target.prefill_rows(scene, prefix);
    ForwardResult pre = tstate.forward_causal(rows);
    const int64_t vis_len = scene ? target.cfg.visual_len : 0;
    stats.target_prefill_rows = vis_len + l;  // logical multimodal prefix length

    // Drafter prefill: rows (e_{t+1} || f_t || e_seq^0) over text positions.
    DrafterSession ds(drafter, opts);
    std::vector<int> later(prompt.begin() + 1, prompt.end());
    Tensor e_rows = target.embed_tokens(later);
    std::vector<int> text_rows(static_cast<size_t>(l - 1));
    for (int i = 0; i < l - 1; ++i) text_rows[static_cast<size_t>(i)] = static_cast<int>(vis_len) + i;
    Tensor f_rows = gather_rows(pre.hidden, text_rows);
    DraftStepOut seed = ds.prefill(e_rows, f_rows);
    stats.drafter_prefill_rows = static_cast<int>(ds.committed_rows());
    stats.prefill_wall = seconds_since(t_prefill);

    Tensor seed_hidden({1, static_cast<int64_t>(target.cfg.d)});
    Tensor seed_logits({1, static_cast<int64_t>(target.cfg.vocab)});
    auto take_seed = [&](const DraftStepOut& out) {
        std::memcpy(seed_hidden.data.data(), out.hidden.row(out.hidden.rows() - 1),
                    sizeof(double) * seed_hidden.data.size());
        std::memcpy(seed_logits.data.data(), out.logits.row(out.logits.rows() - 1),
                    sizeof(double) * seed_logits.data.size());
    };
    take_seed(seed);

    std::vector<int>& gen = result.tokens;
    int root_token = prompt[static_cast<size_t>(l - 1)];

    auto t_decode = Clock::now();
    while (static_cast<int>(gen.size()) < cfg.max_new && (gen.empty() || gen.back() != Tokenizer::kEos)) {
        RoundResult round;
        int64_t len_before = tstate.len();
        int64_t forwards_before = tstate.forward_count();
        int64_t dforwards_before = ds.forward_count();
        int room = static_cast<int>(target.cfg.max_seq - len_before);
        int depth = std::min(cfg.tree.depth, room - 2);
        if (depth < 1) {
            stats.truncated = true;
            break;
        }

        std::vector<int> committed;
        Tensor verify_hidden;  // rows: root + accepted path nodes, in commit order
        std::vector<int> f_source_rows;

        if (T == 0.0) {
            DrafterConfig tree_cfg = cfg.tree;
            tree_cfg.depth = depth;
            auto t0 = Clock::now();
            TokenTree tree = build_tree(ds, root_token, seed_hidden, seed_logits, tree_cfg);
            round.t_draft = seconds_since(t0);
            round.tree_nodes = tree.size();
            if (len_before + tree.size() > target.cfg.max_seq) {
                stats.truncated = true;
                break;
            }

            t0 = Clock::now();
            std::vector<int> node_tokens(static_cast<size_t>(tree.size()));
            std::vector<int> positions(static_cast<size_t>(tree.size()));
            for (int i = 0; i < tree.size(); ++i) {
                node_tokens[static_cast<size_t>(i)] = tree.nodes[static_cast<size_t>(i)].token;
                positions[static_cast<size_t>(i)] =
                    static_cast<int>(len_before) + tree.nodes[static_cast<size_t>(i)].depth;
            }
            Mask anc = tree.ancestor_mask();
            Mask mask(tree.size(), len_before + tree.size());
            for (int i = 0; i < tree.size(); ++i) {
                for (int64_t j = 0; j < len_before; ++j) mask.at(i, j) = 1;
                for (int j = 0; j < tree.size(); ++j) mask.at(i, len_before + j) = anc.at(i, j);
            }
            ForwardResult ver = tstate.forward(target.embed_tokens(node_tokens), mask, positions);
            VerifyOutcome outcome = verify_greedy(tree, ver.logits);
            round.t_verify = seconds_since(t0);

            t0 = Clock::now();
            std::vector<int> kept = {0};
            for (int n : outcome.accepted_nodes) {
                committed.push_back(tree.nodes[static_cast<size_t>(n)].token);
                kept.push_back(n);
            }
            committed.push_back(outcome.next_token);
            tstate.keep_tail_subset(len_before, kept);
            f_source_rows = kept;
            verify_hidden = ver.hidden;
            round.t_update = seconds_since(t0);
        } else {
            // chain speculative sampling: propose by sampling the drafter
            auto t0 = Clock::now();
            std::vector<int> chain;
            Tensor q_dists({depth, static_cast<int64_t>(target.cfg.vocab)});
            Tensor cur_hidden = seed_hidden;
            Tensor cur_logits = seed_logits;
            std::vector<int> ancestors;
            for (int i = 1; i <= depth; ++i) {
                Tensor q = temper_rows(cur_logits, T);
                int x = categorical(q.row(0), q.cols(), rng);
                std::memcpy(q_dists.row(i - 1), q.row(0), sizeof(double) * static_cast<size_t>(q.cols()));
                chain.push_back(x);
                if (i < depth) {
                    int si = -1;
                    DraftStepOut out = ds.draft_step(embed_one(target, x), cur_hidden, i, ancestors, &si);
                    ancestors.push_back(si);
                    cur_hidden = out.hidden;
                    cur_logits = out.logits;
                }
            }
            round.t_draft = seconds_since(t0);
            round.tree_nodes = depth + 1;

            t0 = Clock::now();
            std::vector<int> ver_tokens = {root_token};
            ver_tokens.insert(ver_tokens.end(), chain.begin(), chain.end());
            ForwardResult ver = tstate.forward_causal(target.embed_tokens(ver_tokens));
            Tensor p_dists = temper_rows(ver.logits, T);
            SampledVerify sv = verify_sampled(chain, q_dists, p_dists, rng);
            round.t_verify = seconds_since(t0);

            t0 = Clock::now();
            committed.assign(chain.begin(), chain.begin() + sv.accepted);
            committed.push_back(sv.next_token);
            tstate.truncate(len_before + 1 + sv.accepted);
            f_source_rows.resize(static_cast<size_t>(sv.accepted) + 1);
            for (int i = 0; i <= sv.accepted; ++i) f_source_rows[static_cast<size_t>(i)] = i;
            verify_hidden = ver.hidden;
            round.t_update = seconds_since(t0);
        }

        if (tstate.forward_count() != forwards_before + 1)
            fail("decode_loop: round used more than one target forward");

        // trim to the generation budget / end token
        int remaining = cfg.max_new - static_cast<int>(gen.size());
        bool stop = false;
        if (static_cast<int>(committed.size()) > remaining) {
            committed.resize(static_cast<size_t>(remaining));
            stats.truncated = true;
            stop = true;
        }
        for (size_t i = 0; i < committed.size(); ++i) {
            if (committed[i] == Tokenizer::kEos) {
                committed.resize(i + 1);
                stop = true;
                break;
            }
        }
        round.accepted = std::max(0, static_cast<int>(committed.size()) - 1);
        round.committed = committed;
        gen.insert(gen.end(), committed.begin(), committed.end());

        if (!stop) {
            auto t0 = Clock::now();
            ds.clear_scratch();
            Tensor e_new({static_cast<int64_t>(committed.size()), static_cast<int64_t>(target.cfg.d)});
            for (size_t i = 0; i < committed.size(); ++i) {
                Tensor e = embed_one(target, committed[i]);
                std::memcpy(e_new.row(static_cast<int64_t>(i)), e.data.data(),
                            e.data.size() * sizeof(double));
            }
            std::vector<int> src(f_source_rows.begin(),
                                 f_source_rows.begin() + static_cast<int64_t>(committed.size()));
            Tensor f_new = gather_rows(verify_hidden, src);
            DraftStepOut upd = ds.append_committed(e_new, f_new);
            take_seed(upd);
            root_token = committed.back();
            round.t_update += seconds_since(t0);
        }

        round.drafter_forwards = static_cast<int>(ds.forward_count() - dforwards_before);
        stats.rounds.push_back(std::move(round));
        if (stop) break;
    }
    stats.wall = seconds_since(t_decode);
    stats.total_tokens = static_cast<int64_t>(gen.size());
    return result;
}

BaselineResult ar_baseline(const TargetModel& target, const SceneSpec* scene,
                           std::span<const int> prompt, int max_new, double temperature, Rng& rng) {
    BaselineResult out;
    auto t0 = Clock::now();
    TargetState state(target);
    ForwardResult res = state.forward_causal(target.prefill_rows(scene, prompt));
    out.prefill_wall = seconds_since(t0);
    t0 = Clock::now();
    for (int i = 0; i < max_new; ++i) {
        Tensor last({1, res.logits.cols()});
        std::memcpy(last.data.data(), res.logits.row(res.logits.rows() - 1),
                    sizeof(double) * static_cast<size_t>(res.logits.cols()));
        int tok = sample_token(last, temperature, rng).token;
        out.tokens.push_back(tok);
        if (tok == Tokenizer::kEos) break;
        if (state.len() + 1 > target.cfg.max_seq) break;
        res = state.forward_causal(embed_one(target, tok));
    }
    out.wall = seconds_since(t0);
    return out;
}

Metrics compute_metrics(const DecodeStats& stats) {
    std::span<const DecodeStats> one(&stats, 1);
    return compute_metrics(one);
}

Metrics compute_metrics(std::span<const DecodeStats> stats) {
    if (stats.empty()) fail("compute_metrics: no stats");
    int64_t rounds = 0, committed = 0, accepted = 0;
    double wall = 0.0, baseline = 0.0;
    double ratio_sum = 0.0;
    bool have_baseline = true;
    for (const DecodeStats& s : stats) {
        if (s.rounds.empty()) fail("compute_metrics: run has no rounds");
        for (const RoundResult& r : s.rounds) {
            ++rounds;
            committed += static_cast<int64_t>(r.committed.size());
            accepted += r.accepted;
        }
        wall += s.wall;
        if (s.baseline_wall < 0)
            have_baseline = false;
        else
            baseline += s.baseline_wall;
        ratio_sum += static_cast<double>(s.drafter_prefill_rows + 1) /
                     static_cast<double>(s.target_prefill_rows);
    }
    Metrics m;
    m.tau_committed = static_cast<double>(committed) / static_cast<double>(rounds);
    m.tau_accepted = static_cast<double>(accepted) / static_cast<double>(rounds);
    m.speedup = have_baseline && wall > 0 ? baseline / wall : 0.0;
    m.prefill_ratio = ratio_sum / static_cast<double>(stats.size());
    return m;
}

}  // namespace hivis
