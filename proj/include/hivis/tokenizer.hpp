#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "hivis/common.hpp"

namespace hivis {

// Fixed whitespace-and-punctuation tokenizer over a closed 256-id vocabulary.
// Ids 0..4 are reserved specials; a designated token class is flagged as
// "symbol" (programming-style tokens) for the stage-2 data filter.
class Tokenizer {
public:
    static constexpr int kEos = 0;
    static constexpr int kBos = 1;
    static constexpr int kSep = 2;
    static constexpr int kPad = 3;
    static constexpr int kUnk = 4;

    static const Tokenizer& instance();

    int vocab_size() const { return 256; }
    int id(const std::string& word) const;  // kUnk when unknown
    const std::string& word(int id) const;
    bool is_symbol(int id) const;

    std::vector<int> encode(const std::string& text) const;
    std::string decode(std::span<const int> ids) const;

private:
    Tokenizer();
    std::vector<std::string> words_;
    std::vector<uint8_t> symbol_;
    std::unordered_map<std::string, int> index_;
};

// Fraction of tokens that belong to the symbol class.
double symbol_ratio(std::span<const int> ids);

}  // namespace hivis
