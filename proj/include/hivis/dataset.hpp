#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hivis/tensor.hpp"
#include "hivis/tokenizer.hpp"

namespace hivis {

constexpr int kNumShapes = 4;  // circle square triangle star
constexpr int kNumColors = 6;  // red green blue yellow purple orange

struct SceneCell {
    int shape = -1;  // -1 = empty
    int color = -1;
    bool empty() const { return shape < 0; }
    bool operator==(const SceneCell&) const = default;
};

// Synthetic stand-in for an image: a small attribute grid.
struct SceneSpec {
    int grid_rows = 3;
    int grid_cols = 3;
    std::vector<SceneCell> cells;  // row-major, grid_rows*grid_cols entries

    SceneCell& at(int r, int c) { return cells[static_cast<size_t>(r * grid_cols + c)]; }
    const SceneCell& at(int r, int c) const { return cells[static_cast<size_t>(r * grid_cols + c)]; }
    int cell_count() const { return grid_rows * grid_cols; }
    bool valid() const;
    bool operator==(const SceneSpec&) const = default;
};

// One corpus record. Multimodal records carry a scene plus a templated QA
// pair whose answer is a pure function of the scene; text records carry a
// dialogue snippet.
struct CorpusRecord {
    bool multimodal = false;
    SceneSpec scene;
    std::vector<int> prompt;  // question / dialogue prompt tokens
    std::vector<int> answer;  // answer / response tokens
    int template_id = 0;
    std::vector<int> template_args;  // template slots, for answer recomputation

    bool operator==(const CorpusRecord&) const = default;
};

struct MixedCorpus {
    uint64_t seed = 0;
    uint32_t version = 1;
    uint32_t multimodal_count = 0;
    uint32_t text_count = 0;
    double symbol_fraction = 0.0;
    std::vector<CorpusRecord> records;
};

// Recomputes the ground-truth answer for a multimodal template on a (possibly
// mutated) scene. Used by generation and by the mutation tests.
std::vector<int> multimodal_answer(const SceneSpec& scene, int template_id, std::span<const int> args);

std::vector<CorpusRecord> gen_multimodal(int count, uint64_t seed);
std::vector<CorpusRecord> gen_textonly(int count, uint64_t seed, double symbol_fraction);
MixedCorpus gen_mixed_corpus(int multimodal_count, int text_count, uint64_t seed, double symbol_fraction);

enum class TrainStage { Stage1, Stage2 };

struct FilterReport {
    int dropped_short_answer = 0;
    int dropped_symbol_heavy = 0;
    int kept = 0;
};

constexpr double kSymbolThreshold = 0.25;

// Multimodal answers of five or fewer tokens drop in both stages; text
// records above the symbol-ratio threshold drop in stage 2 only.
std::vector<CorpusRecord> filter_records(const std::vector<CorpusRecord>& records, TrainStage stage,
                                         FilterReport* report = nullptr,
                                         double symbol_threshold = kSymbolThreshold);

// Corpus file: magic "HVC1", version, seed, generation parameters, records
// (modality tag byte, scene cells for multimodal, u16 token arrays), CRC32.
void save_corpus(const MixedCorpus& corpus, const std::string& path);
MixedCorpus load_corpus(const std::string& path);

// Full token sequence a model consumes for a record: BOS prompt SEP answer EOS.
std::vector<int> record_tokens(const CorpusRecord& rec);
// Index of the first answer token within record_tokens (= prompt length + 2).
int answer_start_index(const CorpusRecord& rec);

}  // namespace hivis
