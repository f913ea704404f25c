#include <doctest.h>

#include <cmath>
#include <cstring>

#include "hivis/target_model.hpp"
#include "hivis/tokenizer.hpp"

using namespace hivis;

namespace {

TargetConfig tiny_cfg() {
    TargetConfig cfg;
    cfg.d = 16;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.vocab = 256;
    cfg.visual_len = 12;
    cfg.max_seq = 128;
    cfg.seed = 42;
    return cfg;
}

SceneSpec demo_scene(uint64_t seed) {
    Rng rng(seed);
    SceneSpec s;
    s.cells.assign(9, SceneCell{});
    int n = 1 + static_cast<int>(rng.below(4));
    for (int i = 0; i < n; ++i)
        s.cells[static_cast<size_t>(rng.below(9))] = {static_cast<int>(rng.below(kNumShapes)),
                                                      static_cast<int>(rng.below(kNumColors))};
    if (!s.valid()) s.cells[0] = {0, 0};
    return s;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.shape == b.shape);
    double m = 0;
    for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::fabs(a.data[i] - b.data[i]));
    return m;
}

}  // namespace

TEST_SUITE("target_model") {

TEST_CASE("encode_scene determinism, shape and sensitivity") {
    TargetConfig cfg;
    cfg.visual_len = 32;
    cfg.d = 64;
    TargetModel m = TargetModel::init(cfg);
    SceneSpec s = demo_scene(5);
    Tensor a = m.encode_scene(s);
    Tensor b = m.encode_scene(s);
    CHECK(a.shape == std::vector<int64_t>{32, 64});
    CHECK(std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0);

    SceneSpec one;
    one.cells.assign(9, SceneCell{});
    one.cells[4] = {2, 3};
    SceneSpec full;
    full.cells.assign(9, SceneCell{});
    for (int i = 0; i < 9; ++i) full.cells[static_cast<size_t>(i)] = {i % kNumShapes, i % kNumColors};
    CHECK(max_abs_diff(m.encode_scene(one), m.encode_scene(full)) > 1e-6);

    SceneSpec big;
    big.grid_rows = 5;
    big.grid_cols = 5;
    big.cells.assign(25, SceneCell{});
    big.cells[0] = {0, 0};
    CHECK_THROWS_AS(m.encode_scene(big), Error);
}

TEST_CASE("single-step decode equals batched prefill rows bitwise") {
    TargetModel m = TargetModel::init(tiny_cfg());
    Rng rng(9);
    Tensor rows = rng.randn({10, m.cfg.d}, 0.7);

    TargetState batched(m);
    ForwardResult full = batched.forward_causal(rows);

    TargetState steps(m);
    for (int64_t i = 0; i < rows.rows(); ++i) {
        Tensor one({1, m.cfg.d});
        std::memcpy(one.data.data(), rows.row(i), sizeof(double) * static_cast<size_t>(m.cfg.d));
        ForwardResult r = steps.forward_causal(one);
        for (int64_t j = 0; j < m.cfg.vocab; ++j) CHECK(r.logits.at(0, j) == full.logits.at(i, j));
        for (int64_t j = 0; j < m.cfg.d; ++j) CHECK(r.hidden.at(0, j) == full.hidden.at(i, j));
    }
}

TEST_CASE("tree-masked chain equals sequential single-step passes") {
    TargetModel m = TargetModel::init(tiny_cfg());
    Rng rng(10);
    Tensor prefix = rng.randn({6, m.cfg.d}, 0.7);
    Tensor chain = rng.randn({3, m.cfg.d}, 0.7);

    // sequential oracle
    TargetState seq(m);
    seq.forward_causal(prefix);
    Tensor seq_logits({3, m.cfg.vocab});
    for (int64_t i = 0; i < 3; ++i) {
        Tensor one({1, m.cfg.d});
        std::memcpy(one.data.data(), chain.row(i), sizeof(double) * static_cast<size_t>(m.cfg.d));
        ForwardResult r = seq.forward_causal(one);
        std::memcpy(seq_logits.row(i), r.logits.data.data(),
                    sizeof(double) * static_cast<size_t>(m.cfg.vocab));
    }

    // one tree-masked pass over the same 3-node chain
    TargetState tree(m);
    tree.forward_causal(prefix);
    Mask mask(3, 9);
    std::vector<int> pos(3);
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 6 + i + 1; ++j) mask.at(i, j) = 1;
        pos[static_cast<size_t>(i)] = 6 + i;
    }
    ForwardResult r = tree.forward(chain, mask, pos);
    CHECK(max_abs_diff(r.logits, seq_logits) < 1e-9);
}

TEST_CASE("truncate then re-append reproduces logits") {
    TargetModel m = TargetModel::init(tiny_cfg());
    Rng rng(11);
    Tensor rows = rng.randn({5, m.cfg.d}, 0.7);
    TargetState st(m);
    ForwardResult full = st.forward_causal(rows);
    CHECK(st.len() == 5);
    st.truncate(5);  // no-op
    CHECK(st.len() == 5);
    st.truncate(3);
    Tensor tail({2, m.cfg.d});
    std::memcpy(tail.data.data(), rows.row(3), 2 * sizeof(double) * static_cast<size_t>(m.cfg.d));
    ForwardResult redo = st.forward_causal(tail);
    for (int64_t j = 0; j < m.cfg.vocab; ++j) {
        CHECK(redo.logits.at(0, j) == full.logits.at(3, j));
        CHECK(redo.logits.at(1, j) == full.logits.at(4, j));
    }
    CHECK_THROWS_AS(st.truncate(99), Error);

    st.truncate(0);
    ForwardResult fresh = st.forward_causal(rows);
    CHECK(max_abs_diff(fresh.logits, full.logits) == 0.0);
}

TEST_CASE("keep_tail_subset commits an accepted branch") {
    TargetModel m = TargetModel::init(tiny_cfg());
    Rng rng(12);
    Tensor prefix = rng.randn({4, m.cfg.d}, 0.7);
    Tensor nodes = rng.randn({3, m.cfg.d}, 0.7);  // root chain 0 and branches 1,2 off it

    TargetState a(m);
    a.forward_causal(prefix);
    Mask mask(3, 7);
    // node 0 at depth 0; nodes 1 and 2 both children of node 0
    std::vector<int> pos = {4, 5, 5};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 4; ++j) mask.at(i, j) = 1;
    mask.at(0, 4) = 1;
    mask.at(1, 4) = mask.at(1, 5) = 1;
    mask.at(2, 4) = mask.at(2, 6) = 1;
    a.forward(nodes, mask, pos);
    std::vector<int> kept = {0, 2};  // accept node 0 and its second child
    a.keep_tail_subset(4, kept);
    CHECK(a.len() == 6);
    Tensor next = rng.randn({1, m.cfg.d}, 0.7);
    ForwardResult after = a.forward(next, Mask::causal(1, 6), std::vector<int>{6});

    // oracle: sequential pass with exactly those rows
    TargetState b(m);
    b.forward_causal(prefix);
    Tensor two({2, m.cfg.d});
    std::memcpy(two.row(0), nodes.row(0), sizeof(double) * static_cast<size_t>(m.cfg.d));
    std::memcpy(two.row(1), nodes.row(2), sizeof(double) * static_cast<size_t>(m.cfg.d));
    b.forward_causal(two);
    ForwardResult oracle = b.forward_causal(next);
    CHECK(max_abs_diff(after.logits, oracle.logits) < 1e-12);
}

TEST_CASE("sample_token rules") {
    Rng rng(1);
    CHECK(sample_token(Tensor::row_vector({2.0, 1.0, 1.0}), 0.0, rng).token == 0);
    CHECK(sample_token(Tensor::row_vector({1.0, 1.0}), 0.0, rng).token == 0);  // tie -> lowest id

    int ones = 0;
    const int n = 100000;
    Tensor logits = Tensor::row_vector({0.0, std::log(3.0)});
    for (int i = 0; i < n; ++i)
        if (sample_token(logits, 1.0, rng).token == 1) ++ones;
    double freq = static_cast<double>(ones) / n;
    CHECK(freq > 0.74);
    CHECK(freq < 0.76);
}

TEST_CASE("graph forward matches kernel forward") {
    TargetModel m = TargetModel::init(tiny_cfg());
    Rng rng(13);
    Tensor rows = rng.randn({7, m.cfg.d}, 0.5);
    TargetState st(m);
    ForwardResult kr = st.forward_causal(rows);

    Graph g;
    Var rows_v = g.constant(rows);
    std::vector<int> pos(7);
    for (int i = 0; i < 7; ++i) pos[static_cast<size_t>(i)] = i;
    auto [logits, hidden] = target_forward_graph(g, m, rows_v, pos, Mask::causal(7, 0), nullptr);
    CHECK(max_abs_diff(g.val(logits), kr.logits) < 1e-12);
    CHECK(max_abs_diff(g.val(hidden), kr.hidden) < 1e-12);
}

TEST_CASE("pretraining reduces validation loss; zero steps keeps init") {
    MixedCorpus corpus = gen_mixed_corpus(24, 24, 123, 0.2);
    TargetConfig cfg = tiny_cfg();

    PretrainConfig pc;
    pc.steps = 0;
    TargetModel untrained = pretrain_target(corpus, cfg, pc);
    CHECK(param_hash(untrained.params) == param_hash(TargetModel::init(cfg).params));

    PretrainConfig pc2;
    pc2.steps = 60;
    pc2.batch = 2;
    pc2.lr = 2e-3;
    pc2.warmup = 10;
    PretrainReport rep;
    pretrain_target(corpus, cfg, pc2, &rep);
    CHECK(rep.final_val_loss < rep.initial_val_loss);
}

}  // TEST_SUITE
