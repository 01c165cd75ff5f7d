#include "dca/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <stdexcept>

namespace dca {

std::vector<std::string> tokenize_words(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        unsigned char u = static_cast<unsigned char>(ch);
        if (std::isalnum(u)) {
            cur.push_back(static_cast<char>(std::tolower(u)));
        } else if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

Vocab Vocab::build(const std::vector<std::string>& texts) {
    std::set<std::string> uniq;
    for (const auto& t : texts)
        for (auto& w : tokenize_words(t)) uniq.insert(w);
    Vocab v;
    v.words = {"<pad>", "<unk>"};
    for (const auto& w : uniq) v.words.push_back(w);
    for (size_t i = 0; i < v.words.size(); ++i)
        v.index[v.words[i]] = static_cast<int>(i);
    return v;
}

void TextBatch::validate(int vocab_size) const {
    if (batch < 1 || len < 1) throw std::invalid_argument("TextBatch: empty");
    if (static_cast<int>(token_ids.size()) != batch * len ||
        static_cast<int>(lengths.size()) != batch)
        throw std::invalid_argument("TextBatch: inconsistent sizes");
    for (int l : lengths)
        if (l < 1 || l > len) throw std::invalid_argument("TextBatch: bad length");
    for (int id : token_ids)
        if (id < 0 || id >= vocab_size)
            throw std::invalid_argument("TextBatch: token id outside vocabulary");
}

TextBatch encode_prompts(const Vocab& vocab, const std::vector<std::string>& prompts,
                         int max_len) {
    if (prompts.empty()) throw std::invalid_argument("encode_prompts: no prompts");
    TextBatch tb;
    tb.batch = static_cast<int>(prompts.size());
    tb.len = max_len;
    tb.token_ids.assign(static_cast<size_t>(tb.batch) * max_len, 0);
    tb.lengths.resize(prompts.size());
    for (size_t i = 0; i < prompts.size(); ++i) {
        auto words = tokenize_words(prompts[i]);
        if (words.empty())
            throw std::invalid_argument("encode_prompts: empty prompt: '" + prompts[i] + "'");
        int n = std::min<int>(static_cast<int>(words.size()), max_len);
        for (int j = 0; j < n; ++j)
            tb.token_ids[i * static_cast<size_t>(max_len) + j] = vocab.id(words[j]);
        tb.lengths[i] = n;
    }
    return tb;
}

} // namespace dca
