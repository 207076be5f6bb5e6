#pragma once

#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace cas {

// Fixed word-level token table with explicit leading-space variants.
// Answer-class words additionally carry capitalized variants so the
// first-token candidate sets are non-trivial. Ships with the corpus.
class Tokenizer {
public:
    // The default toy table (fits comfortably in a 256-token vocab).
    static Tokenizer toy();

    static Tokenizer from_table(std::vector<std::string> surfaces);

    int size() const { return static_cast<int>(surfaces_.size()); }

    // -1 when the surface form is not in the table.
    int id(const std::string& surface) const;

    // "<unk:N>" for ids outside the table (the model vocab may be larger).
    std::string surface(int id) const;

    // Encodes a word sequence: first word in base form, the rest with a
    // leading space, matching how running text tokenizes.
    std::vector<int> encode_words(const std::vector<std::string>& words) const;

    std::vector<std::string> decode(const std::vector<int>& ids) const;

    const std::vector<std::string>& table() const { return surfaces_; }

private:
    std::vector<std::string> surfaces_;
    std::unordered_map<std::string, int> index_;
};

// First-token candidate ids for an answer: the answer plus its lowercase,
// capitalized, and leading-space variants, deduplicated.
// Throws UntokenizableAnswer when nothing tokenizes.
std::set<int> first_token_candidates(const std::string& answer, const Tokenizer& tok);

}  // namespace cas
