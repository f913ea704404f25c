#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <set>

#include "hivis/tree.hpp"

using namespace hivis;

namespace {

TargetConfig tiny_cfg(uint64_t seed = 21) {
    TargetConfig cfg;
    cfg.d = 16;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.vocab = 64;
    cfg.visual_len = 12;
    cfg.max_seq = 160;
    cfg.seed = seed;
    return cfg;
}

struct TreeFixture {
    TargetModel target;
    Drafter drafter;
    Rng rng;

    explicit TreeFixture(uint64_t seed, DrafterConfig dcfg = {})
        : target(TargetModel::init(tiny_cfg(seed))),
          drafter([&] {
              dcfg.d_seq = 8;
              return Drafter::init(target, dcfg, seed + 1);
          }()),
          rng(seed + 2) {}

    // fresh session with a random committed prefix and a seed state
    struct Seeded {
        DrafterSession session;
        Tensor hidden;
        Tensor logits;
        int root_token;
    };
    Seeded seeded() {
        DrafterSession s(drafter);
        int n = 4 + static_cast<int>(rng.below(4));
        DraftStepOut out = s.prefill(rng.randn({n, target.cfg.d}, 0.6), rng.randn({n, target.cfg.d}, 0.6));
        Seeded r{std::move(s), Tensor({1, static_cast<int64_t>(target.cfg.d)}),
                 Tensor({1, static_cast<int64_t>(target.cfg.vocab)}),
                 static_cast<int>(rng.below(target.cfg.vocab))};
        std::memcpy(r.hidden.data.data(), out.hidden.row(n - 1),
                    sizeof(double) * static_cast<size_t>(target.cfg.d));
        std::memcpy(r.logits.data.data(), out.logits.row(n - 1),
                    sizeof(double) * static_cast<size_t>(target.cfg.vocab));
        return r;
    }
};

}  // namespace

TEST_SUITE("tree_drafting") {

TEST_CASE("brute force path counts and ordering") {
    DrafterConfig dc;
    dc.k_top = 2;
    dc.depth = 2;
    dc.n_paths = 4;
    TreeFixture fx(7, dc);
    auto sd = fx.seeded();

    auto one = brute_force_paths(sd.session, sd.hidden, sd.logits, 1, 3);
    CHECK(one.size() == 1);

    auto four = brute_force_paths(sd.session, sd.hidden, sd.logits, 2, 2);
    CHECK(four.size() == 4);
    for (size_t i = 1; i < four.size(); ++i) CHECK(four[i - 1].score >= four[i].score);

    CHECK_THROWS_AS(brute_force_paths(sd.session, sd.hidden, sd.logits, 10, 6), Error);
}

TEST_CASE("build_tree single level equals top-k children") {
    DrafterConfig dc;
    dc.k_top = 4;
    dc.depth = 1;
    dc.n_paths = 4;
    TreeFixture fx(8, dc);
    auto sd = fx.seeded();
    TokenTree tree = build_tree(sd.session, sd.root_token, sd.hidden, sd.logits, dc);
    CHECK(tree.size() == 5);  // root + top-4 children
    Tensor probs = sd.logits;
    op::softmax_row_inplace(probs.data.data(), probs.numel());
    auto top = op::topk_row(probs.data.data(), probs.numel(), 4);
    for (int i = 0; i < 4; ++i) {
        CHECK(tree.nodes[static_cast<size_t>(i + 1)].token == top[static_cast<size_t>(i)].first);
        CHECK(tree.nodes[static_cast<size_t>(i + 1)].parent == 0);
    }
}

TEST_CASE("build_tree selections equal the exhaustive oracle") {
    // criterion regime: k <= 3, depth <= 4, many random drafter states
    int cases = 0;
    for (uint64_t seed = 0; seed < 18; ++seed) {
        DrafterConfig dc;
        dc.k_top = 1 + static_cast<int>(seed % 3);
        dc.depth = 2 + static_cast<int>(seed % 3);
        dc.n_paths = 1 + static_cast<int>((seed / 3) % 5);
        TreeFixture fx(100 + seed, dc);
        auto sd = fx.seeded();

        TokenTree tree = build_tree(sd.session, sd.root_token, sd.hidden, sd.logits, dc);
        sd.session.clear_scratch();
        auto oracle = brute_force_paths(sd.session, sd.hidden, sd.logits, dc.k_top, dc.depth);

        size_t expect = std::min<size_t>(static_cast<size_t>(dc.n_paths), oracle.size());
        REQUIRE(tree.selected_paths.size() == expect);
        for (size_t p = 0; p < expect; ++p) {
            std::vector<int> tokens;
            for (int ni : tree.selected_paths[p])
                tokens.push_back(tree.nodes[static_cast<size_t>(ni)].token);
            CHECK(tokens == oracle[p].tokens);
            ++cases;
        }
    }
    CHECK(cases >= 40);
}

TEST_CASE("tree structural invariants") {
    DrafterConfig dc;
    dc.k_top = 3;
    dc.depth = 4;
    dc.n_paths = 5;
    TreeFixture fx(55, dc);
    auto sd = fx.seeded();
    TokenTree tree = build_tree(sd.session, sd.root_token, sd.hidden, sd.logits, dc);

    CHECK(tree.size() <= dc.n_paths * dc.depth + 1);
    CHECK(tree.max_depth() <= dc.depth);
    // parents precede children; path scores never increase along paths
    for (int i = 1; i < tree.size(); ++i) {
        const TreeNode& n = tree.nodes[static_cast<size_t>(i)];
        CHECK(n.parent >= 0);
        CHECK(n.parent < i);
        CHECK(n.path_score <= tree.nodes[static_cast<size_t>(n.parent)].path_score + 1e-15);
        CHECK(n.prob >= 0.0);
        CHECK(n.prob <= 1.0);
        CHECK(n.path_score ==
              doctest::Approx(tree.nodes[static_cast<size_t>(n.parent)].path_score * n.prob).epsilon(1e-12));
    }
    CHECK(tree.nodes[0].path_score == 1.0);

    // ancestor mask matches parent pointers: transitive, antisymmetric
    Mask m = tree.ancestor_mask();
    for (int i = 0; i < tree.size(); ++i) {
        CHECK(m.at(i, i));
        for (int j = 0; j < tree.size(); ++j) {
            if (i != j && m.at(i, j)) {
                CHECK(!m.at(j, i));
                // j must be on i's parent chain
                int cur = tree.nodes[static_cast<size_t>(i)].parent;
                bool found = false;
                while (cur >= 0) {
                    if (cur == j) found = true;
                    cur = tree.nodes[static_cast<size_t>(cur)].parent;
                }
                CHECK(found);
            }
        }
    }
}

TEST_CASE("expand_level keeps at most k and matches depth-2 oracle") {
    DrafterConfig dc;
    dc.k_top = 3;
    dc.depth = 3;
    dc.n_paths = 3;
    TreeFixture fx(77, dc);
    auto sd = fx.seeded();

    auto frontier = root_candidates(sd.hidden, sd.logits, 3);
    CHECK(frontier.size() == 3);
    auto next = expand_level(sd.session, frontier, 3);
    CHECK(next.size() <= 3);
    sd.session.clear_scratch();

    // oracle: rank all 9 depth-2 prefixes of the exhaustive enumeration
    auto paths = brute_force_paths(sd.session, sd.hidden, sd.logits, 3, 2);
    REQUIRE(paths.size() == 9);
    for (size_t i = 0; i < next.size(); ++i) {
        CHECK(next[i].path_tokens == paths[i].tokens);
        CHECK(next[i].path_score == doctest::Approx(paths[i].score).epsilon(1e-12));
    }
}

TEST_CASE("frontier of one node expands to its own top-k") {
    DrafterConfig dc;
    TreeFixture fx(78, dc);
    auto sd = fx.seeded();
    auto frontier = root_candidates(sd.hidden, sd.logits, 1);
    REQUIRE(frontier.size() == 1);
    auto next = expand_level(sd.session, frontier, 2);
    CHECK(next.size() == 2);
    for (const BeamNode& b : next) CHECK(b.path_tokens[0] == frontier[0].token);
}

TEST_CASE("degenerate one-hot distribution yields a single chain") {
    DrafterConfig dc;
    dc.k_top = 3;
    dc.depth = 4;
    dc.n_paths = 5;
    TreeFixture fx(79, dc);
    auto sd = fx.seeded();
    // overwrite logits with an effectively one-hot row; every draft step will
    // still produce a soft distribution, so only check the first level pins
    // to the argmax token and the tree keeps exactly n_paths or fewer paths
    std::fill(sd.logits.data.begin(), sd.logits.data.end(), -1e3);
    sd.logits.data[7] = 1e3;
    TokenTree tree = build_tree(sd.session, sd.root_token, sd.hidden, sd.logits, dc);
    // all selected paths start with token 7
    for (const auto& path : tree.selected_paths)
        CHECK(tree.nodes[static_cast<size_t>(path[0])].token == 7);
}

TEST_CASE("dump emits two-space indented outline") {
    DrafterConfig dc;
    dc.k_top = 2;
    dc.depth = 2;
    dc.n_paths = 2;
    TreeFixture fx(80, dc);
    auto sd = fx.seeded();
    TokenTree tree = build_tree(sd.session, sd.root_token, sd.hidden, sd.logits, dc);
    std::string out = tree.dump();
    CHECK(out.find("token") != std::string::npos);
    CHECK(out.find("\n  token") != std::string::npos);      // depth 1
    CHECK(out.find("\n    token") != std::string::npos);    // depth 2
}

}  // TEST_SUITE
