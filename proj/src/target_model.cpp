#include "hivis/target_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "hivis/adam.hpp"
#include "hivis/tokenizer.hpp"

namespace hivis {

void TargetConfig::validate() const {
    if (d % heads != 0) fail("TargetConfig: d must be divisible by heads");
    if ((d / heads) % 2 != 0) fail("TargetConfig: head width must be even for rotary encoding");
    if (vocab < 16) fail("TargetConfig: vocab must be >= 16");
    if (visual_len < 1) fail("TargetConfig: visual_len must be >= 1");
    if (max_seq <= 8) fail("TargetConfig: max_seq too small");
}

namespace {
std::string lname(int l, const char* suffix) { return "layer" + std::to_string(l) + "." + suffix; }
}  // namespace

TargetModel TargetModel::init(const TargetConfig& cfg) {
    cfg.validate();
    TargetModel m;
    m.cfg = cfg;
    Rng rng(cfg.seed);
    const int d = cfg.d;
    const int mh = cfg.mlp_hidden();
    const double ws = 1.0 / std::sqrt(static_cast<double>(d));
    const double rs = ws / std::sqrt(2.0 * cfg.layers);  // residual branches
    m.params.add("tok_emb", rng.randn({cfg.vocab, d}, 0.05));
    m.params.add("scene_proj", rng.randn({kSceneFeatureDim, d}, 0.4));
    for (int l = 0; l < cfg.layers; ++l) {
        m.params.add(lname(l, "wq"), rng.randn({d, d}, ws));
        m.params.add(lname(l, "wk"), rng.randn({d, d}, ws));
        m.params.add(lname(l, "wv"), rng.randn({d, d}, ws));
        m.params.add(lname(l, "wo"), rng.randn({d, d}, rs));
        m.params.add(lname(l, "attn_norm"), Tensor::full({d}, 1.0));
        m.params.add(lname(l, "w1"), rng.randn({d, mh}, ws));
        m.params.add(lname(l, "w2"), rng.randn({mh, d}, rs));
        m.params.add(lname(l, "mlp_norm"), Tensor::full({d}, 1.0));
    }
    m.params.add("final_norm", Tensor::full({d}, 1.0));
    m.params.add("lm_head", rng.randn({d, cfg.vocab}, ws));
    return m;
}

TargetModel TargetModel::from_checkpoint(const TargetConfig& cfg, const std::string& path) {
    TargetModel m = init(cfg);
    ParamStore loaded = load_checkpoint(path);
    for (auto& [name, v] : m.params.t) {
        Tensor& src = loaded.at(name);
        check_shape(src.same_shape(v), "target checkpoint " + name, src, v);
        v = std::move(src);
    }
    return m;
}

Tensor TargetModel::encode_scene(const SceneSpec& scene) const {
    if (!scene.valid()) fail("encode_scene: invalid scene");
    const int cells = scene.cell_count();
    if (cells > kMaxSceneCells) fail("encode_scene: grid has more cells than supported");
    if (cells > cfg.visual_len)
        fail("encode_scene: scene grid (" + std::to_string(cells) + " cells) larger than visual_len " +
             std::to_string(cfg.visual_len));
    Tensor feats({cells, kSceneFeatureDim});
    for (int i = 0; i < cells; ++i) {
        const SceneCell& c = scene.cells[static_cast<size_t>(i)];
        double* f = feats.row(i);
        if (!c.empty()) {
            f[c.shape] = 1.0;
            f[kNumShapes + c.color] = 1.0;
            f[kNumShapes + kNumColors] = 1.0;  // occupied flag
        }
        f[kNumShapes + kNumColors + 1 + i] = 1.0;
    }
    Tensor proj = op::matmul(feats, params.at("scene_proj"));
    Tensor out({cfg.visual_len, cfg.d});
    std::memcpy(out.data.data(), proj.data.data(), proj.data.size() * sizeof(double));
    return out;
}

Tensor TargetModel::embed_tokens(std::span<const int> tokens) const {
    return op::embedding_lookup(params.at("tok_emb"), tokens);
}

Tensor TargetModel::prefill_rows(const SceneSpec* scene, std::span<const int> tokens) const {
    Tensor emb = embed_tokens(tokens);
    if (!scene) return emb;
    Tensor vis = encode_scene(*scene);
    const Tensor* parts[] = {&vis, &emb};
    return op::concat_rows(parts);
}

TargetState::TargetState(const TargetModel& model) : m_(model) {
    for (int l = 0; l < m_.cfg.layers; ++l) {
        k_cache_.emplace_back(Tensor({m_.cfg.max_seq, m_.cfg.d}));
        v_cache_.emplace_back(Tensor({m_.cfg.max_seq, m_.cfg.d}));
    }
}

ForwardResult TargetState::forward(const Tensor& rows, const Mask& mask, std::span<const int> positions) {
    const int64_t p = rows.rows();
    const int64_t d = m_.cfg.d;
    if (rows.cols() != d) fail("target_forward: row width " + std::to_string(rows.cols()));
    if (len_ + p > m_.cfg.max_seq) fail("target_forward: length overflow");
    if (mask.rows != p || mask.cols != len_ + p)
        fail("target_forward: mask shape mismatch (" + std::to_string(mask.rows) + "x" +
             std::to_string(mask.cols) + " for p=" + std::to_string(p) +
             " len=" + std::to_string(len_) + ")");
    if (static_cast<int64_t>(positions.size()) != p) fail("target_forward: positions size mismatch");

    Tensor h = rows;
    for (int l = 0; l < m_.cfg.layers; ++l) {
        Tensor x = op::rms_norm(h, m_.params.at(lname(l, "attn_norm")));
        Tensor q = op::rope(op::matmul(x, m_.params.at(lname(l, "wq"))), positions, m_.cfg.heads);
        Tensor kn = op::rope(op::matmul(x, m_.params.at(lname(l, "wk"))), positions, m_.cfg.heads);
        Tensor vn = op::matmul(x, m_.params.at(lname(l, "wv")));
        std::memcpy(k_cache_[static_cast<size_t>(l)].row(len_), kn.data.data(),
                    kn.data.size() * sizeof(double));
        std::memcpy(v_cache_[static_cast<size_t>(l)].row(len_), vn.data.data(),
                    vn.data.size() * sizeof(double));
        Tensor att = op::attend_raw(q, k_cache_[static_cast<size_t>(l)].data.data(),
                                    v_cache_[static_cast<size_t>(l)].data.data(), len_ + p, mask,
                                    m_.cfg.heads);
        h = op::add(h, op::matmul(att, m_.params.at(lname(l, "wo"))));
        Tensor mx = op::rms_norm(h, m_.params.at(lname(l, "mlp_norm")));
        h = op::add(h, op::matmul(op::silu(op::matmul(mx, m_.params.at(lname(l, "w1")))),
                                  m_.params.at(lname(l, "w2"))));
    }
    len_ += p;
    ++forwards_;
    ForwardResult r;
    r.hidden = op::rms_norm(h, m_.params.at("final_norm"));
    r.logits = op::matmul(r.hidden, m_.lm_head());
    return r;
}

ForwardResult TargetState::forward_causal(const Tensor& rows) {
    const int64_t p = rows.rows();
    std::vector<int> positions(static_cast<size_t>(p));
    for (int64_t i = 0; i < p; ++i) positions[static_cast<size_t>(i)] = static_cast<int>(len_ + i);
    return forward(rows, Mask::causal(p, len_), positions);
}

void TargetState::truncate(int64_t new_len) {
    if (new_len < 0 || new_len > len_)
        fail("truncate_cache: new length " + std::to_string(new_len) + " out of [0," +
             std::to_string(len_) + "]");
    len_ = new_len;
}

void TargetState::keep_tail_subset(int64_t region_start, std::span<const int> kept) {
    if (region_start < 0 || region_start > len_) fail("keep_tail_subset: bad region start");
    int prev = -1;
    for (size_t i = 0; i < kept.size(); ++i) {
        int idx = kept[i];
        if (idx <= prev || region_start + idx >= len_) fail("keep_tail_subset: bad index list");
        prev = idx;
        for (int l = 0; l < m_.cfg.layers; ++l) {
            Tensor& kc = k_cache_[static_cast<size_t>(l)];
            Tensor& vc = v_cache_[static_cast<size_t>(l)];
            std::memmove(kc.row(region_start + static_cast<int64_t>(i)), kc.row(region_start + idx),
                         sizeof(double) * static_cast<size_t>(m_.cfg.d));
            std::memmove(vc.row(region_start + static_cast<int64_t>(i)), vc.row(region_start + idx),
                         sizeof(double) * static_cast<size_t>(m_.cfg.d));
        }
    }
    len_ = region_start + static_cast<int64_t>(kept.size());
}

SampleResult sample_token(const Tensor& logits_row, double temperature, Rng& rng) {
    if (temperature < 0.0) fail("sample_token: negative temperature");
    const int64_t n = logits_row.numel();
    SampleResult r;
    if (temperature == 0.0) {
        r.token = op::argmax_row(logits_row.data.data(), n);
        r.probs = Tensor({1, n});
        r.probs.at(0, r.token) = 1.0;
        return r;
    }
    r.probs = logits_row;
    r.probs.shape = {1, n};
    op::softmax_row_inplace(r.probs.data.data(), n, temperature);
    double u = rng.uniform();
    double acc = 0.0;
    int tok = static_cast<int>(n) - 1;
    for (int64_t j = 0; j < n; ++j) {
        acc += r.probs.data[static_cast<size_t>(j)];
        if (u < acc) {
            tok = static_cast<int>(j);
            break;
        }
    }
    r.token = tok;
    return r;
}

namespace {

std::vector<int> decode_impl(const TargetModel& model, const SceneSpec* scene,
                             std::span<const int> prompt, int max_new, double temperature, Rng* rng) {
    TargetState state(model);
    Tensor rows = model.prefill_rows(scene, prompt);
    ForwardResult res = state.forward_causal(rows);
    std::vector<int> out;
    Rng dummy(0);
    for (int i = 0; i < max_new; ++i) {
        Tensor last({1, res.logits.cols()});
        std::memcpy(last.data.data(), res.logits.row(res.logits.rows() - 1),
                    sizeof(double) * static_cast<size_t>(res.logits.cols()));
        int tok = sample_token(last, temperature, rng ? *rng : dummy).token;
        out.push_back(tok);
        if (tok == Tokenizer::kEos) break;
        if (state.len() + 1 > model.cfg.max_seq) break;
        int t[1] = {tok};
        res = state.forward_causal(model.embed_tokens(t));
    }
    return out;
}

}  // namespace

std::vector<int> target_greedy_decode(const TargetModel& model, const SceneSpec* scene,
                                      std::span<const int> prompt, int max_new) {
    return decode_impl(model, scene, prompt, max_new, 0.0, nullptr);
}

std::vector<int> target_sample_decode(const TargetModel& model, const SceneSpec* scene,
                                      std::span<const int> prompt, int max_new, double temperature,
                                      Rng& rng) {
    return decode_impl(model, scene, prompt, max_new, temperature, &rng);
}

std::pair<Var, Var> target_forward_graph(Graph& g, const TargetModel& model, Var rows,
                                         std::span<const int> positions, const Mask& mask,
                                         TargetGraphBinding* binding) {
    const TargetConfig& cfg = model.cfg;
    std::vector<int> pos(positions.begin(), positions.end());
    auto bind = [&](const std::string& name) {
        Var v = g.leaf(&model.params.at(name), true);
        if (binding) binding->trained.emplace_back(name, v);
        return v;
    };
    Var h = rows;
    for (int l = 0; l < cfg.layers; ++l) {
        Var x = g.rms_norm(h, bind(lname(l, "attn_norm")));
        Var q = g.rope(g.matmul(x, bind(lname(l, "wq"))), pos, cfg.heads);
        Var k = g.rope(g.matmul(x, bind(lname(l, "wk"))), pos, cfg.heads);
        Var v = g.matmul(x, bind(lname(l, "wv")));
        Var att = g.attend(q, k, v, mask, cfg.heads);
        h = g.add(h, g.matmul(att, bind(lname(l, "wo"))));
        Var mx = g.rms_norm(h, bind(lname(l, "mlp_norm")));
        h = g.add(h, g.matmul(g.silu(g.matmul(mx, bind(lname(l, "w1")))), bind(lname(l, "w2"))));
    }
    Var hidden = g.rms_norm(h, bind("final_norm"));
    Var logits = g.matmul(hidden, bind("lm_head"));
    return {logits, hidden};
}

namespace {

// Per-example pretraining loss; mean next-token CE over the text rows.
double pretrain_example(const TargetModel& model, const CorpusRecord& rec, ParamStore* grads,
                        double scale) {
    std::vector<int> tokens = record_tokens(rec);
    std::vector<int> inputs(tokens.begin(), tokens.end() - 1);
    Graph g;
    TargetGraphBinding binding;
    Var emb_table = g.leaf(&model.params.at("tok_emb"), true);
    binding.trained.emplace_back("tok_emb", emb_table);
    Var tok_rows = g.embedding(emb_table, inputs);
    Var rows = tok_rows;
    int64_t vis_len = 0;
    if (rec.multimodal) {
        Tensor vis = model.encode_scene(rec.scene);
        vis_len = vis.rows();
        Var vis_rows = g.constant(std::move(vis));
        std::vector<Var> parts = {vis_rows, tok_rows};
        rows = g.concat_rows(parts);
    }
    const int64_t n = vis_len + static_cast<int64_t>(inputs.size());
    std::vector<int> positions(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) positions[static_cast<size_t>(i)] = static_cast<int>(i);
    auto [logits, hidden] = target_forward_graph(g, model, rows, positions, Mask::causal(n, 0), &binding);
    (void)hidden;
    const int64_t text_rows = static_cast<int64_t>(inputs.size());
    Var text_logits = g.slice_rows(logits, vis_len, text_rows);
    Tensor onehot({text_rows, model.cfg.vocab});
    double w = 1.0 / static_cast<double>(text_rows);
    for (int64_t i = 0; i < text_rows; ++i) onehot.at(i, tokens[static_cast<size_t>(i + 1)]) = w;
    Var loss = g.weighted_ce(text_logits, g.constant(std::move(onehot)));
    if (grads) {
        g.backward(loss);
        for (auto& [name, var] : binding.trained) {
            Tensor gr = g.grad_or_zero(var);
            if (!grads->has(name)) grads->add(name, Tensor(gr.shape));
            Tensor& acc = grads->at(name);
            for (size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += scale * gr.data[i];
        }
    }
    return g.val(loss).data[0];
}

}  // namespace

TargetModel pretrain_target(const MixedCorpus& corpus, const TargetConfig& cfg,
                            const PretrainConfig& train_cfg, PretrainReport* report) {
    if (corpus.records.empty()) fail("pretrain_target: empty corpus");
    TargetModel model = TargetModel::init(cfg);
    Rng rng(train_cfg.seed);
    AdamState adam;
    AdamConfig acfg;
    acfg.lr = train_cfg.lr;

    size_t val_n = std::min<size_t>(32, corpus.records.size() / 10 + 1);
    size_t train_n = corpus.records.size() - val_n;
    if (train_n == 0) fail("pretrain_target: corpus too small");

    auto val_loss = [&]() {
        double s = 0.0;
        for (size_t i = train_n; i < corpus.records.size(); ++i)
            s += pretrain_example(model, corpus.records[i], nullptr, 0.0);
        return s / static_cast<double>(val_n);
    };

    PretrainReport rep;
    rep.initial_val_loss = val_loss();
    for (int step = 0; step < train_cfg.steps; ++step) {
        ParamStore grads;
        double loss = 0.0;
        for (int b = 0; b < train_cfg.batch; ++b) {
            const CorpusRecord& rec =
                corpus.records[static_cast<size_t>(rng.below(static_cast<int64_t>(train_n)))];
            loss += pretrain_example(model, rec, &grads, 1.0 / train_cfg.batch);
        }
        loss /= train_cfg.batch;
        if (!std::isfinite(loss))
            fail("pretrain_target: diverged (NaN loss) at step " + std::to_string(step));
        AdamConfig step_cfg = acfg;
        if (train_cfg.warmup > 0 && step < train_cfg.warmup)
            step_cfg.lr = acfg.lr * (step + 1) / train_cfg.warmup;
        adam_step(model.params, grads, adam, step_cfg);
        if (train_cfg.log_every > 0 && step % train_cfg.log_every == 0)
            std::fprintf(stderr, "[pretrain] step %d loss %.4f\n", step, loss);
        ++rep.steps_run;
    }
    rep.final_val_loss = val_loss();
    if (report) *report = rep;
    return model;
}

double eval_qa_accuracy(const TargetModel& model, std::span<const CorpusRecord> records, int max_new) {
    if (records.empty()) fail("eval_qa_accuracy: no records");
    int correct = 0;
    int total = 0;
    for (const CorpusRecord& rec : records) {
        if (!rec.multimodal) continue;
        ++total;
        std::vector<int> prompt;
        prompt.push_back(Tokenizer::kBos);
        prompt.insert(prompt.end(), rec.prompt.begin(), rec.prompt.end());
        prompt.push_back(Tokenizer::kSep);
        std::vector<int> expect = rec.answer;
        expect.push_back(Tokenizer::kEos);
        std::vector<int> got = target_greedy_decode(model, &rec.scene, prompt, max_new);
        if (got == expect) ++correct;
    }
    if (total == 0) fail("eval_qa_accuracy: no multimodal records");
    return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace hivis
