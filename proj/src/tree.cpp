#include "hivis/tree.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <queue>
#include <sstream>

namespace hivis {

int TokenTree::max_depth() const {
    int d = 0;
    for (const TreeNode& n : nodes) d = std::max(d, n.depth);
    return d;
}

std::vector<int> TokenTree::children_of(int node) const {
    std::vector<int> c;
    for (int i = 0; i < size(); ++i)
        if (nodes[static_cast<size_t>(i)].parent == node) c.push_back(i);
    return c;
}

Mask TokenTree::ancestor_mask() const {
    const int n = size();
    Mask m(n, n);
    for (int i = 0; i < n; ++i) {
        int cur = i;
        while (cur >= 0) {
            m.at(i, cur) = 1;
            cur = nodes[static_cast<size_t>(cur)].parent;
        }
    }
    return m;
}

std::string TokenTree::dump() const {
    std::ostringstream os;
    // depth-first so the outline reads as nested paths
    std::vector<std::vector<int>> kids(nodes.size());
    for (int i = 1; i < size(); ++i) kids[static_cast<size_t>(nodes[static_cast<size_t>(i)].parent)].push_back(i);
    std::vector<int> stack = {0};
    while (!stack.empty()) {
        int cur = stack.back();
        stack.pop_back();
        const TreeNode& n = nodes[static_cast<size_t>(cur)];
        for (int s = 0; s < n.depth; ++s) os << "  ";
        os << "token " << n.token << " prob " << n.prob << " score " << n.path_score << "\n";
        const auto& c = kids[static_cast<size_t>(cur)];
        for (auto it = c.rbegin(); it != c.rend(); ++it) stack.push_back(*it);
    }
    return os.str();
}

bool path_rank_less(double score_a, const std::vector<int>& tokens_a, double score_b,
                    const std::vector<int>& tokens_b) {
    if (score_a != score_b) return score_a > score_b;
    return tokens_a < tokens_b;
}

namespace {

Tensor logits_to_probs(const Tensor& logits_row) {
    Tensor p = logits_row;
    p.shape = {1, p.numel()};
    op::softmax_row_inplace(p.data.data(), p.numel());
    return p;
}

Tensor token_embedding_row(const Drafter& d, int token) {
    int ids[1] = {token};
    return d.target->embed_tokens(ids);
}

}  // namespace

std::vector<BeamNode> root_candidates(const Tensor& seed_hidden, const Tensor& seed_logits, int k) {
    Tensor probs = logits_to_probs(seed_logits);
    auto top = op::topk_row(probs.data.data(), probs.numel(), k);
    std::vector<BeamNode> out;
    for (const auto& [tok, p] : top) {
        BeamNode b;
        b.token = tok;
        b.prob = p;
        b.path_score = p;
        b.depth = 1;
        b.parent_hidden = seed_hidden;
        b.path_tokens = {tok};
        b.parent_order = 0;
        out.push_back(std::move(b));
    }
    return out;
}

std::vector<BeamNode> expand_level(DrafterSession& session, const std::vector<BeamNode>& frontier,
                                   int k) {
    if (frontier.empty()) fail("expand_level: empty frontier");
    std::vector<BeamNode> pool;
    for (size_t fi = 0; fi < frontier.size(); ++fi) {
        const BeamNode& node = frontier[fi];
        int scratch_idx = -1;
        DraftStepOut out = session.draft_step(token_embedding_row(session.drafter(), node.token),
                                              node.parent_hidden, node.depth, node.parent_scratch,
                                              &scratch_idx);
        Tensor probs = logits_to_probs(out.logits);
        auto top = op::topk_row(probs.data.data(), probs.numel(), k);
        std::vector<int> scratch_path = node.parent_scratch;
        scratch_path.push_back(scratch_idx);
        for (const auto& [tok, p] : top) {
            BeamNode child;
            child.token = tok;
            child.prob = p;
            child.path_score = node.path_score * p;
            child.depth = node.depth + 1;
            child.parent_hidden = out.hidden;
            child.parent_scratch = scratch_path;
            child.path_tokens = node.path_tokens;
            child.path_tokens.push_back(tok);
            child.parent_order = static_cast<int>(fi);
            pool.push_back(std::move(child));
        }
    }
    std::stable_sort(pool.begin(), pool.end(), [](const BeamNode& a, const BeamNode& b) {
        if (a.path_score != b.path_score) return a.path_score > b.path_score;
        if (a.token != b.token) return a.token < b.token;
        return a.parent_order < b.parent_order;
    });
    if (static_cast<int>(pool.size()) > k) pool.resize(static_cast<size_t>(k));
    return pool;
}

namespace {

// Expansion arena entry for best-first construction.
struct ExpNode {
    int token = -1;
    int parent = -1;  // index into arena, -1 = root
    double prob = 1.0;
    double path_score = 1.0;
    int depth = 0;
    Tensor hidden;           // set once processed
    int scratch_index = -1;  // set once processed
    std::vector<int> path_tokens;
    std::vector<int> scratch_path;  // scratch indices root..self (processed nodes only)
};

struct QueueEntry {
    double score;
    std::vector<int> path_tokens;
    int arena_index;
};

struct QueueCmp {
    // std::priority_queue pops the largest; "largest" = best rank
    bool operator()(const QueueEntry& a, const QueueEntry& b) const {
        if (a.score != b.score) return a.score < b.score;
        return a.path_tokens > b.path_tokens;
    }
};

}  // namespace

TokenTree build_tree(DrafterSession& session, int root_token, const Tensor& seed_hidden,
                     const Tensor& seed_logits, const DrafterConfig& cfg) {
    std::vector<ExpNode> arena;
    ExpNode root;
    root.token = root_token;
    root.hidden = seed_hidden;
    arena.push_back(std::move(root));

    std::priority_queue<QueueEntry, std::vector<QueueEntry>, QueueCmp> pq;

    auto expand = [&](int parent_idx, const Tensor& logits) {
        Tensor probs = logits_to_probs(logits);
        auto top = op::topk_row(probs.data.data(), probs.numel(), cfg.k_top);
        for (const auto& [tok, p] : top) {
            ExpNode child;
            child.token = tok;
            child.parent = parent_idx;
            child.prob = p;
            child.path_score = arena[static_cast<size_t>(parent_idx)].path_score * p;
            child.depth = arena[static_cast<size_t>(parent_idx)].depth + 1;
            child.path_tokens = arena[static_cast<size_t>(parent_idx)].path_tokens;
            child.path_tokens.push_back(tok);
            arena.push_back(std::move(child));
            pq.push(QueueEntry{arena.back().path_score, arena.back().path_tokens,
                               static_cast<int>(arena.size() - 1)});
        }
    };
    expand(0, seed_logits);

    // Expansion budget: exact whenever the whole top-k lattice fits (always
    // true at oracle-tested sizes); degenerate flat distributions at large
    // k/depth stop expanding instead of overrunning the scratch buffer.
    int expansions_left = 4096;

    std::vector<int> leaves;  // arena indices of selected path leaves, rank order
    while (!pq.empty() && static_cast<int>(leaves.size()) < cfg.n_paths) {
        QueueEntry top = pq.top();
        pq.pop();
        ExpNode& node = arena[static_cast<size_t>(top.arena_index)];
        if (node.depth == cfg.depth) {
            leaves.push_back(top.arena_index);
            continue;
        }
        if (expansions_left <= 0 || !session.can_draft()) continue;
        --expansions_left;
        const ExpNode& parent = arena[static_cast<size_t>(node.parent)];
        int scratch_idx = -1;
        DraftStepOut out = session.draft_step(token_embedding_row(session.drafter(), node.token),
                                              parent.hidden, node.depth, parent.scratch_path,
                                              &scratch_idx);
        node.hidden = out.hidden;
        node.scratch_index = scratch_idx;
        node.scratch_path = parent.scratch_path;
        node.scratch_path.push_back(scratch_idx);
        expand(top.arena_index, out.logits);
    }

    // flatten the selected paths, deduplicating shared prefixes
    TokenTree tree;
    TreeNode troot;
    troot.token = root_token;
    troot.hidden = seed_hidden;
    tree.nodes.push_back(std::move(troot));
    std::vector<int> arena_to_tree(arena.size(), -1);
    arena_to_tree[0] = 0;
    for (int leaf : leaves) {
        std::vector<int> chain;
        for (int cur = leaf; cur > 0; cur = arena[static_cast<size_t>(cur)].parent) chain.push_back(cur);
        std::reverse(chain.begin(), chain.end());
        std::vector<int> path_nodes;
        for (int ai : chain) {
            if (arena_to_tree[static_cast<size_t>(ai)] < 0) {
                const ExpNode& e = arena[static_cast<size_t>(ai)];
                TreeNode tn;
                tn.token = e.token;
                tn.parent = arena_to_tree[static_cast<size_t>(e.parent)];
                tn.prob = e.prob;
                tn.path_score = e.path_score;
                tn.depth = e.depth;
                tn.hidden = e.hidden;
                tn.scratch_index = e.scratch_index;
                arena_to_tree[static_cast<size_t>(ai)] = tree.size();
                tree.nodes.push_back(std::move(tn));
            }
            path_nodes.push_back(arena_to_tree[static_cast<size_t>(ai)]);
        }
        tree.selected_paths.push_back(std::move(path_nodes));
    }
    return tree;
}

std::vector<ScoredPath> brute_force_paths(DrafterSession& session, const Tensor& seed_hidden,
                                          const Tensor& seed_logits, int k, int depth) {
    double budget = std::pow(static_cast<double>(k), depth);
    if (budget > 1e5) fail("brute_force_paths: k^depth budget exceeded");
    if (session.scratch_rows() != 0) fail("brute_force_paths: scratch must be clear");

    std::vector<ScoredPath> out;
    // Enumerate token prefixes depth-first; every prefix is re-evaluated from
    // scratch with its own sequence of forward passes.
    std::vector<int> prefix;
    std::vector<double> prefix_probs;

    // Evaluates the current prefix and returns logits after its last token.
    auto eval_prefix = [&]() -> DraftStepOut {
        DraftStepOut cur;
        cur.hidden = seed_hidden;
        cur.logits = seed_logits;
        std::vector<int> ancestors;
        for (size_t i = 0; i < prefix.size(); ++i) {
            int scratch_idx = -1;
            cur = session.draft_step(token_embedding_row(session.drafter(), prefix[i]), cur.hidden,
                                     static_cast<int>(i + 1), ancestors, &scratch_idx);
            ancestors.push_back(scratch_idx);
        }
        session.clear_scratch();
        return cur;
    };

    std::function<void()> rec = [&]() {
        if (static_cast<int>(prefix.size()) == depth) {
            double s = 1.0;
            for (double p : prefix_probs) s *= p;
            out.push_back(ScoredPath{prefix, s});
            return;
        }
        DraftStepOut cur = eval_prefix();
        Tensor probs = logits_to_probs(cur.logits);
        auto top = op::topk_row(probs.data.data(), probs.numel(), k);
        for (const auto& [tok, p] : top) {
            prefix.push_back(tok);
            prefix_probs.push_back(p);
            rec();
            prefix.pop_back();
            prefix_probs.pop_back();
        }
    };
    rec();

    std::sort(out.begin(), out.end(), [](const ScoredPath& a, const ScoredPath& b) {
        return path_rank_less(a.score, a.tokens, b.score, b.tokens);
    });
    return out;
}

}  // namespace hivis
