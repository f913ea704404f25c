#include <doctest.h>

#include <cstdio>
#include <set>

#include "hivis/dataset.hpp"
#include "hivis/tokenizer.hpp"

using namespace hivis;

TEST_SUITE("dataset") {

TEST_CASE("tokenizer closed vocabulary basics") {
    const Tokenizer& tok = Tokenizer::instance();
    CHECK(tok.vocab_size() == 256);
    CHECK(tok.id("circle") != Tokenizer::kUnk);
    CHECK(tok.id("zzz-not-a-word") == Tokenizer::kUnk);
    CHECK(tok.is_symbol(tok.id("{")));
    CHECK(tok.is_symbol(tok.id("def")));
    CHECK(!tok.is_symbol(tok.id("red")));

    std::vector<int> ids = tok.encode("what color is the circle ?");
    CHECK(ids.size() == 6);
    CHECK(tok.decode(ids) == "what color is the circle ?");
}

TEST_CASE("length filter counts tokenizer tokens") {
    // the filter's count and the tokenizer's count must be one definition
    std::string text = "the circle in the grid is red .";
    std::vector<int> ids = Tokenizer::instance().encode(text);
    CorpusRecord rec;
    rec.multimodal = true;
    rec.scene.cells.assign(9, SceneCell{});
    rec.scene.cells[0] = {0, 0};
    rec.answer = ids;
    CHECK(rec.answer.size() == 8);
    FilterReport rep;
    auto kept = filter_records({rec}, TrainStage::Stage1, &rep);
    CHECK(kept.size() == 1);
}

TEST_CASE("gen_multimodal determinism and answer lengths") {
    CHECK(gen_multimodal(0, 3).empty());
    auto a = gen_multimodal(50, 3);
    auto b = gen_multimodal(50, 3);
    REQUIRE(a.size() == 50);
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].prompt == b[i].prompt);
        CHECK(a[i].answer == b[i].answer);
        CHECK(a[i].answer.size() >= 6);
        CHECK(a[i].answer.size() <= 16);
        CHECK(a[i].scene.valid());
        CHECK(a[i].answer == multimodal_answer(a[i].scene, a[i].template_id, a[i].template_args));
    }
    auto c = gen_multimodal(50, 4);
    bool any_diff = false;
    for (size_t i = 0; i < a.size(); ++i)
        if (a[i].prompt != c[i].prompt || a[i].answer != c[i].answer) any_diff = true;
    CHECK(any_diff);
}

TEST_CASE("mutating the queried attribute changes the answer") {
    auto recs = gen_multimodal(100, 11);
    int checked = 0;
    for (CorpusRecord& rec : recs) {
        SceneSpec mutated = rec.scene;
        bool did = false;
        switch (rec.template_id) {
            case 0: {  // color of unique shape: recolor that object
                for (SceneCell& c : mutated.cells)
                    if (!c.empty() && c.shape == rec.template_args[0]) {
                        c.color = (c.color + 1) % kNumColors;
                        did = true;
                    }
                break;
            }
            case 1: {  // count: flip one cell's membership in the counted shape
                int shape = rec.template_args[0];
                for (SceneCell& c : mutated.cells) {
                    if (!did && !c.empty() && c.shape == shape) {
                        c.shape = (shape + 1) % kNumShapes;
                        did = true;
                    }
                }
                if (!did) {
                    for (SceneCell& c : mutated.cells)
                        if (!did && !c.empty()) {
                            c.shape = shape;
                            did = true;
                        }
                }
                break;
            }
            case 2: {  // position: change the queried cell
                SceneCell& c = mutated.at(rec.template_args[0], rec.template_args[1]);
                if (c.empty())
                    c = {0, 0};
                else
                    c.color = (c.color + 1) % kNumColors;
                did = true;
                break;
            }
            case 3: {  // existence: toggle presence of the queried pair
                int color = rec.template_args[0], shape = rec.template_args[1];
                bool exists = false;
                for (SceneCell& c : mutated.cells)
                    if (!c.empty() && c.shape == shape && c.color == color) exists = true;
                if (exists) {
                    for (SceneCell& c : mutated.cells)
                        if (!c.empty() && c.shape == shape && c.color == color)
                            c.color = (color + 1) % kNumColors;
                } else {
                    mutated.cells[0] = {shape, color};
                }
                did = true;
                break;
            }
        }
        if (!did || !mutated.valid()) continue;
        ++checked;
        CHECK(multimodal_answer(mutated, rec.template_id, rec.template_args) != rec.answer);
    }
    CHECK(checked >= 80);
}

TEST_CASE("gen_textonly symbol fractions") {
    auto zero = gen_textonly(200, 5, 0.0);
    for (const CorpusRecord& r : zero) {
        std::vector<int> all = r.prompt;
        all.insert(all.end(), r.answer.begin(), r.answer.end());
        CHECK(symbol_ratio(all) < 0.05);
    }
    auto half = gen_textonly(400, 5, 0.5);
    int heavy = 0;
    for (const CorpusRecord& r : half) {
        std::vector<int> all = r.prompt;
        all.insert(all.end(), r.answer.begin(), r.answer.end());
        if (symbol_ratio(all) > kSymbolThreshold) ++heavy;
    }
    CHECK(heavy > 140);
    CHECK(heavy < 260);
    CHECK(gen_textonly(10, 9, 0.3) == gen_textonly(10, 9, 0.3));
}

TEST_CASE("filter rules per stage") {
    CorpusRecord short_mm;
    short_mm.multimodal = true;
    short_mm.scene.cells.assign(9, SceneCell{});
    short_mm.scene.cells[0] = {1, 2};
    short_mm.answer = {10, 11, 12, 13, 14};  // 5 tokens -> dropped
    CorpusRecord six_mm = short_mm;
    six_mm.answer.push_back(15);  // 6 tokens -> kept

    const Tokenizer& tok = Tokenizer::instance();
    CorpusRecord heavy_text;
    heavy_text.multimodal = false;
    heavy_text.prompt = tok.encode("please print the func .");
    heavy_text.answer = {tok.id("def"), tok.id("("), tok.id(")"), tok.id("the"), tok.id("day"),
                         tok.id("is"),  tok.id("warm"), tok.id("and"), tok.id("mild"), tok.id(".")};
    {
        std::vector<int> all = heavy_text.prompt;
        all.insert(all.end(), heavy_text.answer.begin(), heavy_text.answer.end());
        CHECK(symbol_ratio(all) > 0.25);
        CHECK(symbol_ratio(all) < 0.5);
    }

    std::vector<CorpusRecord> recs = {short_mm, six_mm, heavy_text};
    FilterReport rep1;
    auto s1 = filter_records(recs, TrainStage::Stage1, &rep1);
    CHECK(s1.size() == 2);  // short answer dropped, symbol-heavy kept in stage 1
    CHECK(rep1.dropped_short_answer == 1);
    CHECK(rep1.dropped_symbol_heavy == 0);

    FilterReport rep2;
    auto s2 = filter_records(recs, TrainStage::Stage2, &rep2);
    CHECK(s2.size() == 1);
    CHECK(rep2.dropped_short_answer == 1);
    CHECK(rep2.dropped_symbol_heavy == 1);

    // idempotence
    FilterReport rep3;
    auto s2again = filter_records(s2, TrainStage::Stage2, &rep3);
    CHECK(s2again.size() == s2.size());
    CHECK(rep3.dropped_short_answer == 0);
    CHECK(rep3.dropped_symbol_heavy == 0);

    // all-text corpus in stage 1: zero drops
    FilterReport rep4;
    auto t1 = filter_records({heavy_text}, TrainStage::Stage1, &rep4);
    CHECK(t1.size() == 1);
    CHECK(rep4.dropped_short_answer + rep4.dropped_symbol_heavy == 0);
}

TEST_CASE("corpus round trip, checksum, empty file") {
    MixedCorpus corpus = gen_mixed_corpus(20, 20, 77, 0.3);
    CHECK(corpus.records.size() == 40);
    int mm = 0;
    for (const auto& r : corpus.records) mm += r.multimodal ? 1 : 0;
    CHECK(mm == 20);  // 1:1 mixing verified by count

    std::string path = "corpus_test.hvc";
    save_corpus(corpus, path);
    MixedCorpus loaded = load_corpus(path);
    CHECK(loaded.seed == corpus.seed);
    CHECK(loaded.version == corpus.version);
    REQUIRE(loaded.records.size() == corpus.records.size());
    for (size_t i = 0; i < corpus.records.size(); ++i) {
        CHECK(loaded.records[i].multimodal == corpus.records[i].multimodal);
        CHECK(loaded.records[i].prompt == corpus.records[i].prompt);
        CHECK(loaded.records[i].answer == corpus.records[i].answer);
        CHECK(loaded.records[i].template_args == corpus.records[i].template_args);
    }

    // corrupt one byte in the middle -> checksum error
    {
        FILE* f = std::fopen(path.c_str(), "r+b");
        REQUIRE(f);
        std::fseek(f, 40, SEEK_SET);
        int c = std::fgetc(f);
        std::fseek(f, 40, SEEK_SET);
        std::fputc(c ^ 0x5a, f);
        std::fclose(f);
    }
    CHECK_THROWS_WITH_AS(load_corpus(path), doctest::Contains("checksum"), Error);

    MixedCorpus empty;
    empty.seed = 1;
    save_corpus(empty, path);
    CHECK(load_corpus(path).records.empty());
    std::remove(path.c_str());
}

TEST_CASE("record token layout") {
    CorpusRecord rec;
    rec.prompt = {10, 11};
    rec.answer = {20, 21, 22};
    auto t = record_tokens(rec);
    CHECK(t.front() == Tokenizer::kBos);
    CHECK(t[3] == Tokenizer::kSep);
    CHECK(t.back() == Tokenizer::kEos);
    CHECK(answer_start_index(rec) == 4);
    CHECK(t[static_cast<size_t>(answer_start_index(rec))] == 20);
}

}  // TEST_SUITE
