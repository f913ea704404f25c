#include "hivis/dataset.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

namespace hivis {

namespace {

const char* kShapeWords[kNumShapes] = {"circle", "square", "triangle", "star"};
const char* kColorWords[kNumColors] = {"red", "green", "blue", "yellow", "purple", "orange"};
const char* kNumberWords[10] = {"zero", "one", "two",   "three", "four",
                                "five", "six", "seven", "eight", "nine"};

int tok(const char* w) { return Tokenizer::instance().id(w); }

std::vector<int> toks(std::initializer_list<const char*> ws) {
    std::vector<int> out;
    for (const char* w : ws) out.push_back(tok(w));
    return out;
}

// templates: 0 color-of-shape, 1 count-of-shape, 2 what-at-position, 3 existence
enum { kTplColor = 0, kTplCount = 1, kTplWhere = 2, kTplExists = 3 };

}  // namespace

bool SceneSpec::valid() const {
    if (grid_rows <= 0 || grid_cols <= 0) return false;
    if (static_cast<int>(cells.size()) != grid_rows * grid_cols) return false;
    bool nonempty = false;
    for (const SceneCell& c : cells) {
        if (c.empty()) continue;
        if (c.shape < 0 || c.shape >= kNumShapes || c.color < 0 || c.color >= kNumColors) return false;
        nonempty = true;
    }
    return nonempty;
}

std::vector<int> multimodal_answer(const SceneSpec& scene, int template_id, std::span<const int> args) {
    switch (template_id) {
        case kTplColor: {
            int shape = args[0];
            const SceneCell* found = nullptr;
            for (const SceneCell& c : scene.cells)
                if (!c.empty() && c.shape == shape) {
                    found = &c;
                    break;
                }
            std::vector<int> a = toks({"the"});
            a.push_back(tok(kShapeWords[shape]));
            for (int t : toks({"in", "the", "grid", "is"})) a.push_back(t);
            a.push_back(found ? tok(kColorWords[found->color]) : tok("nothing"));
            a.push_back(tok("."));
            return a;
        }
        case kTplCount: {
            int shape = args[0];
            int n = 0;
            for (const SceneCell& c : scene.cells)
                if (!c.empty() && c.shape == shape) ++n;
            std::vector<int> a = toks({"there", "are"});
            a.push_back(tok(kNumberWords[n]));
            a.push_back(tok(kShapeWords[shape]));
            for (int t : toks({"s", "in", "the", "grid", "."})) a.push_back(t);
            return a;
        }
        case kTplWhere: {
            int r = args[0], c = args[1];
            const SceneCell& cell = scene.at(r, c);
            std::vector<int> a = toks({"row"});
            a.push_back(tok(kNumberWords[r]));
            a.push_back(tok("column"));
            a.push_back(tok(kNumberWords[c]));
            a.push_back(tok("holds"));
            if (cell.empty()) {
                for (int t : toks({"nothing", "at", "all", "."})) a.push_back(t);
            } else {
                a.push_back(tok("a"));
                a.push_back(tok(kColorWords[cell.color]));
                a.push_back(tok(kShapeWords[cell.shape]));
                a.push_back(tok("."));
            }
            return a;
        }
        case kTplExists: {
            int color = args[0], shape = args[1];
            bool found = false;
            for (const SceneCell& c : scene.cells)
                if (!c.empty() && c.shape == shape && c.color == color) found = true;
            std::vector<int> a = toks({found ? "yes" : "no", "there", "is"});
            a.push_back(tok(found ? "a" : "no"));
            a.push_back(tok(kColorWords[color]));
            a.push_back(tok(kShapeWords[shape]));
            for (int t : toks({"in", "the", "grid", "."})) a.push_back(t);
            return a;
        }
        default:
            fail("multimodal_answer: unknown template " + std::to_string(template_id));
    }
}

std::vector<CorpusRecord> gen_multimodal(int count, uint64_t seed) {
    if (count < 0) fail("gen_multimodal: negative count");
    Rng rng(seed);
    std::vector<CorpusRecord> out;
    out.reserve(static_cast<size_t>(count));
    while (static_cast<int>(out.size()) < count) {
        SceneSpec scene;
        scene.cells.assign(static_cast<size_t>(scene.cell_count()), SceneCell{});
        int n_obj = 1 + static_cast<int>(rng.below(4));
        for (int i = 0; i < n_obj; ++i) {
            int cell = static_cast<int>(rng.below(scene.cell_count()));
            scene.cells[static_cast<size_t>(cell)] = {static_cast<int>(rng.below(kNumShapes)),
                                                      static_cast<int>(rng.below(kNumColors))};
        }

        // shapes that occur exactly once (needed by the color template)
        int shape_count[kNumShapes] = {0, 0, 0, 0};
        for (const SceneCell& c : scene.cells)
            if (!c.empty()) ++shape_count[c.shape];
        std::vector<int> unique_shapes;
        for (int s = 0; s < kNumShapes; ++s)
            if (shape_count[s] == 1) unique_shapes.push_back(s);

        double pick = rng.uniform();
        CorpusRecord rec;
        rec.multimodal = true;
        rec.scene = scene;
        if (pick < 0.35 && !unique_shapes.empty()) {
            int shape = unique_shapes[static_cast<size_t>(rng.below(static_cast<int64_t>(unique_shapes.size())))];
            rec.template_id = kTplColor;
            rec.template_args = {shape};
            rec.prompt = toks({"what", "color", "is", "the"});
            rec.prompt.push_back(tok(kShapeWords[shape]));
            rec.prompt.push_back(tok("?"));
        } else if (pick < 0.50) {
            int shape = static_cast<int>(rng.below(kNumShapes));
            rec.template_id = kTplCount;
            rec.template_args = {shape};
            rec.prompt = toks({"how", "many"});
            rec.prompt.push_back(tok(kShapeWords[shape]));
            for (int t : toks({"s", "are", "there", "?"})) rec.prompt.push_back(t);
        } else if (pick < 0.75) {
            int r, c;
            if (rng.uniform() < 0.7) {  // bias towards occupied cells
                std::vector<int> occ;
                for (int i = 0; i < scene.cell_count(); ++i)
                    if (!scene.cells[static_cast<size_t>(i)].empty()) occ.push_back(i);
                int cell = occ[static_cast<size_t>(rng.below(static_cast<int64_t>(occ.size())))];
                r = cell / scene.grid_cols;
                c = cell % scene.grid_cols;
            } else {
                r = static_cast<int>(rng.below(scene.grid_rows));
                c = static_cast<int>(rng.below(scene.grid_cols));
            }
            rec.template_id = kTplWhere;
            rec.template_args = {r, c};
            rec.prompt = toks({"what", "is", "at", "row"});
            rec.prompt.push_back(tok(kNumberWords[r]));
            rec.prompt.push_back(tok("column"));
            rec.prompt.push_back(tok(kNumberWords[c]));
            rec.prompt.push_back(tok("?"));
        } else {
            int color, shape;
            if (rng.uniform() < 0.5) {
                std::vector<const SceneCell*> occ;
                for (const SceneCell& c : scene.cells)
                    if (!c.empty()) occ.push_back(&c);
                const SceneCell* c = occ[static_cast<size_t>(rng.below(static_cast<int64_t>(occ.size())))];
                color = c->color;
                shape = c->shape;
            } else {
                color = static_cast<int>(rng.below(kNumColors));
                shape = static_cast<int>(rng.below(kNumShapes));
            }
            rec.template_id = kTplExists;
            rec.template_args = {color, shape};
            rec.prompt = toks({"is", "there", "a"});
            rec.prompt.push_back(tok(kColorWords[color]));
            rec.prompt.push_back(tok(kShapeWords[shape]));
            rec.prompt.push_back(tok("?"));
        }
        rec.answer = multimodal_answer(rec.scene, rec.template_id, rec.template_args);
        out.push_back(std::move(rec));
    }
    return out;
}

namespace {

const char* kNouns[] = {"weather", "story", "cat",    "dog",    "bird",   "fish",  "tree",
                        "house",   "book",  "music",  "food",   "tea",    "coffee", "garden",
                        "river",   "mountain", "morning", "evening", "friend", "window",
                        "road",    "cloud", "field",  "boat"};
const char* kAdjs[] = {"sunny", "rainy", "cloudy", "windy", "cold", "warm",  "mild", "bright",
                       "dark",  "small", "big",    "old",   "new",  "happy", "sad",  "quiet",
                       "loud",  "soft",  "calm"};
const char* kVerbs[] = {"runs",  "jumps", "sleeps", "eats",  "plays", "sings", "reads",
                        "walks", "swims", "flies",  "sits",  "looks", "rests", "waits"};

template <size_t N>
const char* pick(Rng& rng, const char* (&arr)[N]) {
    return arr[static_cast<size_t>(rng.below(static_cast<int64_t>(N)))];
}

}  // namespace

std::vector<CorpusRecord> gen_textonly(int count, uint64_t seed, double symbol_fraction) {
    if (count < 0) fail("gen_textonly: negative count");
    if (symbol_fraction < 0.0 || symbol_fraction > 1.0) fail("gen_textonly: symbol_fraction out of [0,1]");
    Rng rng(seed);
    std::vector<CorpusRecord> out;
    out.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        CorpusRecord rec;
        rec.multimodal = false;
        bool heavy = rng.uniform() < symbol_fraction;
        if (heavy) {
            int which = static_cast<int>(rng.below(2));
            rec.template_id = 100 + which;
            const char* num = kNumberWords[1 + rng.below(8)];
            if (which == 0) {
                rec.prompt = toks({"please", "print", "the", "func", "."});
                rec.answer = toks({"def", "func", "(", "x", ")", ":", "return", "x", "+"});
                rec.answer.push_back(tok(num));
                for (int t : toks({";", "print", "(", "x", ")", ";"})) rec.answer.push_back(t);
            } else {
                const char* noun = pick(rng, kNouns);
                rec.prompt = toks({"tell", "me", "the", "class", "."});
                rec.answer = toks({"class"});
                rec.answer.push_back(tok(noun));
                for (int t : toks({"{", "var", "x", "=",})) rec.answer.push_back(t);
                rec.answer.push_back(tok(num));
                for (int t : toks({";", "if", "x", "<"})) rec.answer.push_back(t);
                rec.answer.push_back(tok(kNumberWords[9]));
                for (int t : toks({"{", "return", "x", "}", "}"})) rec.answer.push_back(t);
            }
        } else {
            int which = static_cast<int>(rng.below(3));
            rec.template_id = which;
            const char* noun = pick(rng, kNouns);
            const char* noun2 = pick(rng, kNouns);
            const char* adj = pick(rng, kAdjs);
            const char* adj2 = pick(rng, kAdjs);
            const char* verb = pick(rng, kVerbs);
            if (which == 0) {
                rec.prompt = toks({"hello", "please", "tell", "me", "about", "the"});
                rec.prompt.push_back(tok(noun));
                rec.prompt.push_back(tok("."));
                rec.answer = toks({"the"});
                rec.answer.push_back(tok(noun));
                rec.answer.push_back(tok("is"));
                rec.answer.push_back(tok(adj));
                for (int t : toks({"and"})) rec.answer.push_back(t);
                rec.answer.push_back(tok(adj2));
                for (int t : toks({"today", ".", "it", "looks", "very"})) rec.answer.push_back(t);
                rec.answer.push_back(tok(adj));
                rec.answer.push_back(tok("near"));
                rec.answer.push_back(tok("the"));
                rec.answer.push_back(tok(noun2));
                rec.answer.push_back(tok("."));
            } else if (which == 1) {
                rec.prompt = toks({"how", "is", "the"});
                rec.prompt.push_back(tok(noun));
                rec.prompt.push_back(tok("today"));
                rec.prompt.push_back(tok("?"));
                rec.answer = toks({"the"});
                rec.answer.push_back(tok(noun));
                rec.answer.push_back(tok("is"));
                rec.answer.push_back(tok(adj));
                for (int t : toks({"and", "quite"})) rec.answer.push_back(t);
                rec.answer.push_back(tok(adj2));
                for (int t : toks({"today", ".", "thanks", "and", "good", "day", "."})) rec.answer.push_back(t);
            } else {
                rec.prompt = toks({"hi", ".", "good", "morning", ".", "what", "about", "the"});
                rec.prompt.push_back(tok(noun));
                rec.prompt.push_back(tok("?"));
                rec.answer = toks({"the"});
                rec.answer.push_back(tok(noun));
                rec.answer.push_back(tok(verb));
                rec.answer.push_back(tok("near"));
                rec.answer.push_back(tok("the"));
                rec.answer.push_back(tok(noun2));
                for (int t : toks({".", "it", "is"})) rec.answer.push_back(t);
                rec.answer.push_back(tok(adj));
                rec.answer.push_back(tok("and"));
                rec.answer.push_back(tok(adj2));
                rec.answer.push_back(tok("."));
            }
        }
        out.push_back(std::move(rec));
    }
    return out;
}

MixedCorpus gen_mixed_corpus(int multimodal_count, int text_count, uint64_t seed, double symbol_fraction) {
    MixedCorpus corpus;
    corpus.seed = seed;
    corpus.multimodal_count = static_cast<uint32_t>(multimodal_count);
    corpus.text_count = static_cast<uint32_t>(text_count);
    corpus.symbol_fraction = symbol_fraction;
    std::vector<CorpusRecord> mm = gen_multimodal(multimodal_count, seed);
    std::vector<CorpusRecord> tx = gen_textonly(text_count, seed + 1, symbol_fraction);
    // interleave deterministically so batches mix modalities
    size_t i = 0, j = 0;
    while (i < mm.size() || j < tx.size()) {
        if (i < mm.size()) corpus.records.push_back(std::move(mm[i++]));
        if (j < tx.size()) corpus.records.push_back(std::move(tx[j++]));
    }
    return corpus;
}

std::vector<CorpusRecord> filter_records(const std::vector<CorpusRecord>& records, TrainStage stage,
                                         FilterReport* report, double symbol_threshold) {
    FilterReport rep;
    std::vector<CorpusRecord> kept;
    kept.reserve(records.size());
    for (const CorpusRecord& r : records) {
        if (r.multimodal && static_cast<int>(r.answer.size()) <= 5) {
            ++rep.dropped_short_answer;
            continue;
        }
        if (!r.multimodal && stage == TrainStage::Stage2) {
            std::vector<int> all = r.prompt;
            all.insert(all.end(), r.answer.begin(), r.answer.end());
            if (symbol_ratio(all) > symbol_threshold) {
                ++rep.dropped_symbol_heavy;
                continue;
            }
        }
        kept.push_back(r);
    }
    rep.kept = static_cast<int>(kept.size());
    if (report) *report = rep;
    return kept;
}

namespace {

void put_u32(std::vector<uint8_t>& b, uint32_t v) {
    b.insert(b.end(), {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                       static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)});
}
void put_u64(std::vector<uint8_t>& b, uint64_t v) {
    put_u32(b, static_cast<uint32_t>(v));
    put_u32(b, static_cast<uint32_t>(v >> 32));
}
void put_f64(std::vector<uint8_t>& b, double v) {
    uint64_t u;
    std::memcpy(&u, &v, 8);
    put_u64(b, u);
}
void put_tokens(std::vector<uint8_t>& b, const std::vector<int>& t) {
    put_u32(b, static_cast<uint32_t>(t.size()));
    for (int id : t) {
        b.push_back(static_cast<uint8_t>(id & 0xff));
        b.push_back(static_cast<uint8_t>((id >> 8) & 0xff));
    }
}

struct Reader {
    const std::vector<uint8_t>& b;
    size_t off = 0;
    uint8_t u8() {
        if (off + 1 > b.size()) fail("corpus: truncated");
        return b[off++];
    }
    uint32_t u32() {
        if (off + 4 > b.size()) fail("corpus: truncated");
        uint32_t v = static_cast<uint32_t>(b[off]) | (static_cast<uint32_t>(b[off + 1]) << 8) |
                     (static_cast<uint32_t>(b[off + 2]) << 16) | (static_cast<uint32_t>(b[off + 3]) << 24);
        off += 4;
        return v;
    }
    uint64_t u64() {
        uint64_t lo = u32();
        return lo | (static_cast<uint64_t>(u32()) << 32);
    }
    double f64() {
        uint64_t u = u64();
        double v;
        std::memcpy(&v, &u, 8);
        return v;
    }
    std::vector<int> tokens() {
        uint32_t n = u32();
        std::vector<int> t(n);
        for (uint32_t i = 0; i < n; ++i) {
            if (off + 2 > b.size()) fail("corpus: truncated");
            t[i] = static_cast<int>(b[off]) | (static_cast<int>(b[off + 1]) << 8);
            off += 2;
        }
        return t;
    }
};

}  // namespace

void save_corpus(const MixedCorpus& corpus, const std::string& path) {
    std::vector<uint8_t> b;
    b.insert(b.end(), {'H', 'V', 'C', '1'});
    put_u32(b, corpus.version);
    put_u64(b, corpus.seed);
    put_u32(b, corpus.multimodal_count);
    put_u32(b, corpus.text_count);
    put_f64(b, corpus.symbol_fraction);
    put_u32(b, static_cast<uint32_t>(corpus.records.size()));
    for (const CorpusRecord& r : corpus.records) {
        b.push_back(r.multimodal ? 1 : 0);
        if (r.multimodal) {
            b.push_back(static_cast<uint8_t>(r.scene.grid_rows));
            b.push_back(static_cast<uint8_t>(r.scene.grid_cols));
            for (const SceneCell& c : r.scene.cells) {
                b.push_back(static_cast<uint8_t>(c.shape + 1));
                b.push_back(static_cast<uint8_t>(c.color + 1));
            }
        }
        b.push_back(static_cast<uint8_t>(r.template_id));
        b.push_back(static_cast<uint8_t>(r.template_args.size()));
        for (int a : r.template_args) put_u32(b, static_cast<uint32_t>(a));
        put_tokens(b, r.prompt);
        put_tokens(b, r.answer);
    }
    uint32_t crc = static_cast<uint32_t>(crc32(0L, b.data(), static_cast<uInt>(b.size())));
    put_u32(b, crc);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) fail("corpus: cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
    if (!f) fail("corpus: write failed for " + path);
}

MixedCorpus load_corpus(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail("corpus: cannot open " + path);
    std::vector<uint8_t> b((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (b.size() < 8 || std::memcmp(b.data(), "HVC1", 4) != 0) fail("corpus: bad magic (expected HVC1)");
    uint32_t stored_crc = static_cast<uint32_t>(b[b.size() - 4]) | (static_cast<uint32_t>(b[b.size() - 3]) << 8) |
                          (static_cast<uint32_t>(b[b.size() - 2]) << 16) |
                          (static_cast<uint32_t>(b[b.size() - 1]) << 24);
    uint32_t actual = static_cast<uint32_t>(crc32(0L, b.data(), static_cast<uInt>(b.size() - 4)));
    if (stored_crc != actual) fail("corpus: checksum mismatch");

    Reader rd{b, 4};
    MixedCorpus corpus;
    corpus.version = rd.u32();
    if (corpus.version != 1) fail("corpus: unsupported version " + std::to_string(corpus.version));
    corpus.seed = rd.u64();
    corpus.multimodal_count = rd.u32();
    corpus.text_count = rd.u32();
    corpus.symbol_fraction = rd.f64();
    uint32_t n = rd.u32();
    corpus.records.resize(n);
    for (uint32_t i = 0; i < n; ++i) {
        CorpusRecord& r = corpus.records[i];
        r.multimodal = rd.u8() != 0;
        if (r.multimodal) {
            r.scene.grid_rows = rd.u8();
            r.scene.grid_cols = rd.u8();
            r.scene.cells.resize(static_cast<size_t>(r.scene.grid_rows * r.scene.grid_cols));
            for (SceneCell& c : r.scene.cells) {
                c.shape = static_cast<int>(rd.u8()) - 1;
                c.color = static_cast<int>(rd.u8()) - 1;
            }
            if (!r.scene.valid()) fail("corpus: invalid scene in record " + std::to_string(i));
        }
        r.template_id = rd.u8();
        uint8_t na = rd.u8();
        for (uint8_t a = 0; a < na; ++a) r.template_args.push_back(static_cast<int>(rd.u32()));
        r.prompt = rd.tokens();
        r.answer = rd.tokens();
    }
    return corpus;
}

std::vector<int> record_tokens(const CorpusRecord& rec) {
    std::vector<int> t;
    t.push_back(Tokenizer::kBos);
    t.insert(t.end(), rec.prompt.begin(), rec.prompt.end());
    t.push_back(Tokenizer::kSep);
    t.insert(t.end(), rec.answer.begin(), rec.answer.end());
    t.push_back(Tokenizer::kEos);
    return t;
}

int answer_start_index(const CorpusRecord& rec) { return static_cast<int>(rec.prompt.size()) + 2; }

}  // namespace hivis
