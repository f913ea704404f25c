#include "hivis/tokenizer.hpp"

#include <sstream>

namespace hivis {

namespace {

const char* kSpecials[] = {"<eos>", "<bos>", "<sep>", "<pad>", "<unk>"};

const char* kWords[] = {
    // scene attribute vocabulary
    "red", "green", "blue", "yellow", "purple", "orange",
    "circle", "square", "triangle", "star",
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
    "row", "column", "grid", "cell", "corner", "middle", "s",
    // question and answer words
    "what", "which", "how", "many", "is", "are", "there", "at", "the", "a", "an",
    "of", "in", "on", "and", "or", "color", "shape", "holds", "shows", "contains",
    "empty", "nothing", "all", "yes", "no",
    // dialogue vocabulary
    "user", "bot", "hello", "hi", "please", "tell", "me", "about", "thanks",
    "goodbye", "good", "day", "today", "very", "quite", "it", "near", "that",
    "weather", "story", "cat", "dog", "bird", "fish", "tree", "house", "book",
    "music", "food", "tea", "coffee", "garden", "river", "mountain", "morning",
    "evening", "night", "friend", "window", "road", "cloud", "field", "boat",
    "sunny", "rainy", "cloudy", "windy", "cold", "warm", "mild", "bright", "dark",
    "small", "big", "old", "new", "happy", "sad", "quiet", "loud", "soft", "calm",
    "runs", "jumps", "sleeps", "eats", "plays", "sings", "reads", "walks",
    "swims", "flies", "sits", "looks", "likes", "wants", "sees", "finds",
    "makes", "takes", "gives", "keeps", "rests", "waits",
    ".", ",", "?", "!",
};

const char* kSymbols[] = {
    "{", "}", "(", ")", "[", "]", ";", ":", "=", "==", "+", "-", "*", "/", "<",
    ">", "->", "::", "def", "return", "if", "else", "for", "while", "var",
    "let", "func", "print", "lambda", "import", "class", "x",
};

}  // namespace

Tokenizer::Tokenizer() {
    auto push = [this](const std::string& w, bool sym) {
        index_.emplace(w, static_cast<int>(words_.size()));
        words_.push_back(w);
        symbol_.push_back(sym ? 1 : 0);
    };
    for (const char* w : kSpecials) push(w, false);
    for (const char* w : kWords) push(w, false);
    for (const char* w : kSymbols) push(w, true);
    int spare = 0;
    while (words_.size() < 256) push("w" + std::to_string(spare++), false);
    if (words_.size() != 256) fail("tokenizer: vocabulary overflow");
}

const Tokenizer& Tokenizer::instance() {
    static Tokenizer tok;
    return tok;
}

int Tokenizer::id(const std::string& w) const {
    auto it = index_.find(w);
    return it == index_.end() ? kUnk : it->second;
}

const std::string& Tokenizer::word(int id) const {
    if (id < 0 || id >= static_cast<int>(words_.size())) fail("tokenizer: id out of range");
    return words_[static_cast<size_t>(id)];
}

bool Tokenizer::is_symbol(int id) const {
    if (id < 0 || id >= static_cast<int>(symbol_.size())) return false;
    return symbol_[static_cast<size_t>(id)] != 0;
}

std::vector<int> Tokenizer::encode(const std::string& text) const {
    std::vector<int> out;
    std::istringstream is(text);
    std::string w;
    auto is_punct = [](char c) { return std::string("().,?!;{}[]").find(c) != std::string::npos; };
    while (is >> w) {
        // split leading/trailing punctuation characters into their own tokens
        size_t b = 0, e = w.size();
        std::vector<std::string> lead, trail;
        while (b < e && is_punct(w[b]) && e - b > 1) lead.push_back(std::string(1, w[b++]));
        while (e > b && is_punct(w[e - 1]) && e - b > 1) trail.insert(trail.begin(), std::string(1, w[--e]));
        for (const auto& t : lead) out.push_back(id(t));
        out.push_back(id(w.substr(b, e - b)));
        for (const auto& t : trail) out.push_back(id(t));
    }
    return out;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ' ';
        out += word(ids[i]);
    }
    return out;
}

double symbol_ratio(std::span<const int> ids) {
    if (ids.empty()) return 0.0;
    const Tokenizer& tok = Tokenizer::instance();
    size_t n = 0;
    for (int id : ids)
        if (tok.is_symbol(id)) ++n;
    return static_cast<double>(n) / static_cast<double>(ids.size());
}

}  // namespace hivis
