#pragma once

#include <map>
#include <string>
#include <vector>

namespace dca {

// Whitespace/punctuation word tokenizer with a corpus-built vocabulary.
// id 0 is <pad>, id 1 is <unk>; corpus words follow in sorted order so the
// same corpus always yields the same ids.
struct Vocab {
    std::vector<std::string> words;
    std::map<std::string, int> index;

    static Vocab build(const std::vector<std::string>& texts);

    int id(const std::string& word) const {
        auto it = index.find(word);
        return it == index.end() ? 1 : it->second;
    }
    int size() const { return static_cast<int>(words.size()); }

    bool operator==(const Vocab& other) const { return words == other.words; }
};

// Lowercases and splits into alphanumeric runs.
std::vector<std::string> tokenize_words(const std::string& text);

// Token id matrix [B, L] plus per-row valid lengths.
struct TextBatch {
    int batch = 0;
    int len = 0;                 // L
    std::vector<int> token_ids;  // B*L, row-major, padded with 0
    std::vector<int> lengths;    // 1 <= lengths[i] <= L

    void validate(int vocab_size) const;
};

// Tokenizes, truncates to max_len and pads. Throws on an empty prompt.
TextBatch encode_prompts(const Vocab& vocab, const std::vector<std::string>& prompts,
                         int max_len);

} // namespace dca
