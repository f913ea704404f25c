#pragma once

#include <string>
#include <vector>

#include "hivis/drafter.hpp"

namespace hivis {

struct TreeNode {
    int token = -1;
    int parent = -1;  // -1 for root
    double prob = 1.0;
    double path_score = 1.0;
    int depth = 0;
    Tensor hidden;          // drafter f' at this node (empty if never processed)
    int scratch_index = -1;  // drafter scratch slot while the round is live
};

// Flattened candidate tree: node 0 is the root (the last committed token),
// parents precede children, and selected_paths lists root-to-leaf node index
// chains in rank order.
struct TokenTree {
    std::vector<TreeNode> nodes;
    std::vector<std::vector<int>> selected_paths;

    int size() const { return static_cast<int>(nodes.size()); }
    int max_depth() const;
    std::vector<int> children_of(int node) const;
    Mask ancestor_mask() const;  // [n, n], ancestor-or-self
    std::string dump() const;    // indented outline, two spaces per depth
};

// Candidate token awaiting processing in the level-wise beam view.
struct BeamNode {
    int token = -1;
    double prob = 1.0;
    double path_score = 1.0;
    int depth = 1;
    Tensor parent_hidden;             // f' of the parent node
    std::vector<int> parent_scratch;  // scratch path of the parent
    std::vector<int> path_tokens;     // tokens from root (inclusive)
    int parent_order = 0;             // parent position in its frontier
};

// Root's top-k children from the seed logits.
std::vector<BeamNode> root_candidates(const Tensor& seed_hidden, const Tensor& seed_logits, int k);

// One Fig.-3 level: processes every frontier node (one draft_step each),
// pools up to k^2 candidates, keeps the top-k by path score with ties broken
// by lower token id then earlier parent.
std::vector<BeamNode> expand_level(DrafterSession& session, const std::vector<BeamNode>& frontier,
                                   int k);

// Exact top-n_paths tree construction: admissible best-first expansion over
// per-node top-k children (path scores never increase with depth, so leaves
// pop in exact rank order). Scratch rows stay live until the round commits.
TokenTree build_tree(DrafterSession& session, int root_token, const Tensor& seed_hidden,
                     const Tensor& seed_logits, const DrafterConfig& cfg);

struct ScoredPath {
    std::vector<int> tokens;
    double score = 1.0;
};

// Exhaustive oracle: every top-k-restricted path of the given depth, each one
// recomputed with fresh forward passes, ranked by (score desc, tokens lex).
// Budget-guarded to k^depth <= 1e5. Test-only by design.
std::vector<ScoredPath> brute_force_paths(DrafterSession& session, const Tensor& seed_hidden,
                                          const Tensor& seed_logits, int k, int depth);

// Shared ranking used by build_tree selection and the oracle.
bool path_rank_less(double score_a, const std::vector<int>& tokens_a, double score_b,
                    const std::vector<int>& tokens_b);

}  // namespace hivis
