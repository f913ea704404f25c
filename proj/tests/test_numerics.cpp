#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>

#include "hivis/adam.hpp"
#include "hivis/checkpoint.hpp"
#include "hivis/grad_check.hpp"
#include "hivis/graph.hpp"
#include "hivis/ops.hpp"

using namespace hivis;

namespace {

Tensor randt(Rng& rng, std::vector<int64_t> shape, double std = 1.0) { return rng.randn(std::move(shape), std); }

// Wraps a single-primitive graph as a grad_check target.
double check_unary(const std::function<Var(Graph&, Var)>& build, const Tensor& x0, double eps = 1e-5) {
    GradCheckFn fn = [&](const std::vector<Tensor>& params, std::vector<Tensor>* grads) {
        Graph g;
        Var x = g.leaf(&params[0], true);
        Var y = build(g, x);
        // reduce to scalar via a fixed quadratic so every coordinate matters
        Tensor w(g.val(y).shape);
        for (size_t i = 0; i < w.data.size(); ++i) w.data[i] = 0.1 * static_cast<double>(i % 7) + 0.3;
        Var wv = g.constant(w);
        Var prod = g.smooth_l1(y, wv);
        g.backward(prod);
        if (grads) *grads = {g.grad_or_zero(x)};
        return g.val(prod).data[0];
    };
    return grad_check(fn, {x0}, eps);
}

}  // namespace

TEST_SUITE("numerics") {

TEST_CASE("row_softmax symmetry and sums") {
    Tensor x = Tensor::row_vector({0.0, 0.0});
    Tensor y = op::row_softmax(x);
    CHECK(y.data[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(y.data[1] == doctest::Approx(0.5).epsilon(1e-12));

    Rng rng(7);
    Tensor r = randt(rng, {5, 17}, 3.0);
    Tensor s = op::row_softmax(r);
    for (int64_t i = 0; i < s.rows(); ++i) {
        double sum = 0.0;
        for (int64_t j = 0; j < s.cols(); ++j) {
            sum += s.at(i, j);
            CHECK(s.at(i, j) >= 0.0);
        }
        CHECK(std::fabs(sum - 1.0) < 1e-9);
    }
}

TEST_CASE("matmul identity") {
    Rng rng(3);
    Tensor a = randt(rng, {4, 6});
    Tensor eye({6, 6});
    for (int64_t i = 0; i < 6; ++i) eye.at(i, i) = 1.0;
    Tensor c = op::matmul(a, eye);
    for (size_t i = 0; i < a.data.size(); ++i) CHECK(c.data[i] == a.data[i]);
}

TEST_CASE("matmul shape error names op and shapes") {
    Tensor a({2, 3}), b({4, 2});
    CHECK_THROWS_WITH_AS(op::matmul(a, b), doctest::Contains("matmul"), Error);
    try {
        op::matmul(a, b);
    } catch (const Error& e) {
        std::string msg = e.what();
        CHECK(msg.find("[2,3]") != std::string::npos);
        CHECK(msg.find("[4,2]") != std::string::npos);
    }
}

TEST_CASE("concat_last_dim shape arithmetic") {
    Tensor a({1, 4}), b({1, 4}), c({1, 4});
    const Tensor* parts[] = {&a, &b, &c};
    Tensor out = op::concat_last_dim(parts);
    CHECK(out.shape == std::vector<int64_t>{1, 12});
}

TEST_CASE("matmul rows are bitwise independent of batch shape") {
    Rng rng(11);
    Tensor a = randt(rng, {13, 64});
    Tensor b = randt(rng, {64, 96});
    Tensor full = op::matmul(a, b);
    for (int64_t i = 0; i < a.rows(); ++i) {
        Tensor one = op::slice_rows(a, i, 1);
        Tensor r = op::matmul(one, b);
        for (int64_t j = 0; j < b.cols(); ++j) CHECK(r.at(0, j) == full.at(i, j));
    }
}

TEST_CASE("backward of x dot x") {
    Tensor x0 = Tensor::row_vector({3.0});
    Graph g;
    Var x = g.leaf(&x0, true);
    Var y = g.matmul(x, x);  // [1,1]x[1,1]
    g.backward(y);
    CHECK(g.grad_or_zero(x).data[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("cross-entropy-after-softmax gradient equals probs minus one-hot") {
    Rng rng(5);
    Tensor logits0 = randt(rng, {1, 9});
    Tensor onehot({1, 9});
    onehot.at(0, 4) = 1.0;
    Graph g;
    Var l = g.leaf(&logits0, true);
    Var loss = g.weighted_ce(l, g.constant(onehot));
    g.backward(loss);
    Tensor dl = g.grad_or_zero(l);
    Tensor p = op::row_softmax(logits0);
    for (int64_t j = 0; j < 9; ++j)
        CHECK(dl.at(0, j) == doctest::Approx(p.at(0, j) - onehot.at(0, j)).epsilon(1e-12));
}

TEST_CASE("grad_check linear is exact") {
    GradCheckFn fn = [](const std::vector<Tensor>& p, std::vector<Tensor>* grads) {
        double v = 3.0 * p[0].data[0];
        if (grads) {
            Tensor gt(p[0].shape);
            gt.data[0] = 3.0;
            *grads = {gt};
        }
        return v;
    };
    CHECK(grad_check(fn, {Tensor::scalar(0.7)}, 1e-4) < 1e-10);
}

TEST_CASE("grad_check rejects nondeterministic fn") {
    int calls = 0;
    GradCheckFn fn = [&calls](const std::vector<Tensor>&, std::vector<Tensor>* grads) {
        if (grads) *grads = {Tensor::scalar(0.0)};
        return static_cast<double>(calls++);
    };
    CHECK_THROWS_AS(grad_check(fn, {Tensor::scalar(1.0)}, 1e-5), Error);
}

TEST_CASE("finite differences agree for every primitive") {
    Rng rng(42);
    // unary chains ending in smooth_l1 against fixed weights
    CHECK(check_unary([](Graph& g, Var x) { return g.row_softmax(x); }, randt(rng, {3, 8})) < 1e-5);
    CHECK(check_unary([](Graph& g, Var x) { return g.silu(x); }, randt(rng, {3, 8})) < 1e-5);
    CHECK(check_unary([](Graph& g, Var x) { return g.scale(x, -1.7); }, randt(rng, {3, 8})) < 1e-5);
    CHECK(check_unary([](Graph& g, Var x) { return g.slice_rows(x, 1, 2); }, randt(rng, {4, 5})) < 1e-5);
    CHECK(check_unary([](Graph& g, Var x) { return g.repeat_row(x, 5); }, randt(rng, {1, 6})) < 1e-5);
    CHECK(check_unary([](Graph& g, Var x) { return g.rope(x, {3, 9, 27}, 2); }, randt(rng, {3, 8})) < 1e-5);

    SUBCASE("rms_norm then matmul, d=4") {
        Tensor x0 = randt(rng, {3, 4});
        Tensor gain0 = randt(rng, {4}, 0.5);
        Tensor w0 = randt(rng, {4, 4});
        GradCheckFn fn = [&](const std::vector<Tensor>& p, std::vector<Tensor>* grads) {
            Graph g;
            Var x = g.leaf(&p[0], true);
            Var gain = g.leaf(&p[1], true);
            Var w = g.leaf(&p[2], true);
            Var y = g.matmul(g.rms_norm(x, gain), w);
            Var loss = g.smooth_l1(y, g.constant(Tensor({3, 4})));
            g.backward(loss);
            if (grads) *grads = {g.grad_or_zero(x), g.grad_or_zero(gain), g.grad_or_zero(w)};
            return g.val(loss).data[0];
        };
        CHECK(grad_check(fn, {x0, gain0, w0}, 1e-5) < 1e-5);
    }

    SUBCASE("matmul add concat embedding") {
        Tensor a0 = randt(rng, {2, 3});
        Tensor b0 = randt(rng, {3, 4});
        Tensor t0 = randt(rng, {6, 4});
        GradCheckFn fn = [&](const std::vector<Tensor>& p, std::vector<Tensor>* grads) {
            Graph g;
            Var a = g.leaf(&p[0], true);
            Var b = g.leaf(&p[1], true);
            Var tab = g.leaf(&p[2], true);
            Var mm = g.matmul(a, b);                       // [2,4]
            Var emb = g.embedding(tab, {5, 0});            // [2,4]
            Var s = g.add(mm, emb);
            Var cc = g.concat_cols(std::vector<Var>{s, emb});  // [2,8]
            Var rr = g.concat_rows(std::vector<Var>{cc, cc});  // [4,8]
            Var loss = g.smooth_l1(rr, g.constant(Tensor::full({4, 8}, 0.25)));
            g.backward(loss);
            if (grads) *grads = {g.grad_or_zero(a), g.grad_or_zero(b), g.grad_or_zero(tab)};
            return g.val(loss).data[0];
        };
        CHECK(grad_check(fn, {a0, b0, t0}, 1e-5) < 1e-5);
    }

    SUBCASE("attend with tree-style mask") {
        Tensor q0 = randt(rng, {3, 8});
        Tensor k0 = randt(rng, {5, 8});
        Tensor v0 = randt(rng, {5, 8});
        Mask m(3, 5);
        for (int64_t i = 0; i < 3; ++i)
            for (int64_t j = 0; j <= i + 2; ++j) m.at(i, j) = 1;
        m.at(2, 1) = 0;  // non-causal hole, as in a token tree
        GradCheckFn fn = [&](const std::vector<Tensor>& p, std::vector<Tensor>* grads) {
            Graph g;
            Var q = g.leaf(&p[0], true);
            Var k = g.leaf(&p[1], true);
            Var v = g.leaf(&p[2], true);
            Var o = g.attend(q, k, v, m, 2);
            Var loss = g.smooth_l1(o, g.constant(Tensor::full({3, 8}, 0.1)));
            g.backward(loss);
            if (grads) *grads = {g.grad_or_zero(q), g.grad_or_zero(k), g.grad_or_zero(v)};
            return g.val(loss).data[0];
        };
        CHECK(grad_check(fn, {q0, k0, v0}, 1e-5) < 1e-4);
    }

    SUBCASE("weighted cross entropy") {
        Tensor l0 = randt(rng, {2, 7});
        Tensor w({2, 7});
        for (int64_t j = 0; j < 7; ++j) {
            w.at(0, j) = (j == 3) ? 1.0 : 0.0;
            w.at(1, j) = 1.0 / 7.0;
        }
        GradCheckFn fn = [&](const std::vector<Tensor>& p, std::vector<Tensor>* grads) {
            Graph g;
            Var l = g.leaf(&p[0], true);
            Var loss = g.weighted_ce(l, g.constant(w));
            g.backward(loss);
            if (grads) *grads = {g.grad_or_zero(l)};
            return g.val(loss).data[0];
        };
        CHECK(grad_check(fn, {l0}, 1e-5) < 1e-5);
    }
}

TEST_CASE("adam: zero gradient is a fixed point") {
    ParamStore p;
    p.add("w", Tensor::full({2, 2}, 1.5));
    ParamStore g;
    g.add("w", Tensor({2, 2}));
    AdamState st;
    adam_step(p, g, st, {});
    for (double v : p.at("w").data) CHECK(v == 1.5);
    for (double v : st.moments.at("w").first.data) CHECK(v == 0.0);
}

TEST_CASE("adam: single hand-computed step") {
    ParamStore p;
    p.add("w", Tensor::scalar(1.0));
    ParamStore g;
    g.add("w", Tensor::scalar(1.0));
    AdamState st;
    AdamConfig cfg;
    cfg.lr = 0.1;
    adam_step(p, g, st, cfg);
    // mhat = 1, vhat = 1 -> step = lr / (1 + eps)
    CHECK(p.at("w").data[0] == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("adam: repeated positive gradient decreases param monotonically") {
    ParamStore p;
    p.add("w", Tensor::scalar(0.4));
    ParamStore g;
    g.add("w", Tensor::scalar(0.7));
    AdamState st;
    AdamConfig cfg;
    double prev = 0.4;
    for (int i = 0; i < 3; ++i) {
        adam_step(p, g, st, cfg);
        CHECK(p.at("w").data[0] < prev);
        prev = p.at("w").data[0];
    }
}

TEST_CASE("checkpoint round trip is bit exact") {
    Rng rng(9);
    ParamStore p;
    p.add("alpha", randt(rng, {3, 5}));
    p.add("beta.gamma", randt(rng, {7}));
    p.add("z", Tensor::scalar(-0.0));
    std::string path = "ckpt_test.hvs";
    save_checkpoint(p, path);
    ParamStore q = load_checkpoint(path);
    REQUIRE(q.t.size() == p.t.size());
    for (const auto& [name, v] : p.t) {
        const Tensor& w = q.at(name);
        REQUIRE(w.shape == v.shape);
        for (size_t i = 0; i < v.data.size(); ++i)
            CHECK(std::memcmp(&w.data[i], &v.data[i], sizeof(double)) == 0);
    }
    CHECK(param_hash(p) == param_hash(q));
    std::remove(path.c_str());
}

TEST_CASE("checkpoint bad magic rejected") {
    std::vector<uint8_t> junk = {'N', 'O', 'P', 'E', 1, 0, 0, 0};
    CHECK_THROWS_AS(deserialize_params(junk), Error);
}

TEST_CASE("primitive_forward dispatch and errors") {
    Tensor a = Tensor::row_vector({1.0, 2.0});
    Tensor b({2, 2});
    b.at(0, 0) = 1.0;
    b.at(1, 1) = 1.0;
    const Tensor* in2[] = {&a, &b};
    Tensor r = primitive_forward(PrimOp::Matmul, in2);
    CHECK(r.at(0, 0) == 1.0);
    CHECK(r.at(0, 1) == 2.0);
    const Tensor* in1[] = {&a};
    PrimArgs args;
    args.c = 2.0;
    CHECK(primitive_forward(PrimOp::Scale, in1, args).at(0, 1) == 4.0);
    CHECK_THROWS_AS(primitive_forward(PrimOp::Add, in1), Error);
}

TEST_CASE("forward passes leave values finite") {
    Rng rng(21);
    Tensor x = randt(rng, {6, 16}, 5.0);
    CHECK(op::row_softmax(x).all_finite());
    CHECK(op::silu(x).all_finite());
    CHECK(op::rms_norm(x, Tensor::full({16}, 1.0)).all_finite());
}

}  // TEST_SUITE
