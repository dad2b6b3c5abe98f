#pragma once

#include <array>
#include <sstream>
#include <string>
#include <vector>

#include "hlora/errors.hpp"

namespace hlora {

// Fixed 32-word text vocabulary. Whitespace tokenization; unknown words are
// rejected rather than mapped to a catch-all.
class Tokenizer {
public:
    static constexpr int vocab_size = 32;

    static const std::array<std::string, vocab_size>& words() {
        static const std::array<std::string, vocab_size> w = {
            "<pad>",  "q",      "a",    "count", "shape", "where", "render", "invert",
            "square", "disc",   "cross", "tri",  "small", "big",   "r0",     "r1",
            "r2",     "c0",     "c1",   "c2",    "lv0",   "lv1",   "lv2",    "0",
            "1",      "2",      "3",    "4",     "5",     "6",     "7",      "8"};
        return w;
    }

    static int id_of(const std::string& word) {
        const auto& w = words();
        for (int i = 0; i < vocab_size; ++i) {
            if (w[i] == word) return i;
        }
        throw VocabularyError("word '" + word + "' is not in the text vocabulary");
    }

    static std::vector<int> encode(const std::string& text) {
        std::vector<int> ids;
        std::istringstream in(text);
        std::string word;
        while (in >> word) ids.push_back(id_of(word));
        return ids;
    }

    static std::string decode(const std::vector<int>& ids) {
        std::string out;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] < 0 || ids[i] >= vocab_size) {
                throw VocabularyError("token id " + std::to_string(ids[i]) +
                                      " outside text vocabulary");
            }
            if (i) out += ' ';
            out += words()[ids[i]];
        }
        return out;
    }
};

}  // namespace hlora
