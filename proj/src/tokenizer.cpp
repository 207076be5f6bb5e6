#include "cas/tokenizer.hpp"

#include <cctype>

#include "cas/errors.hpp"

namespace cas {

namespace {

std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

std::string capitalize(std::string s) {
    s = lower(std::move(s));
    if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    return s;
}

// Words whose surface variants all get their own token id.
const std::vector<std::string> kAnswerWords = {
    // colors
    "red", "blue", "green", "yellow", "purple", "pink", "brown", "black", "white", "gray",
    // materials
    "wood", "metal", "glass", "stone",
    // shapes
    "round", "square",
    // counts
    "one", "two", "three", "four",
    // objects
    "apple", "orange", "pencil", "pen", "cat", "dog", "cup", "bowl", "car", "bike",
    "fish", "bird", "book", "lamp", "tree", "rock", "chair", "table",
    // discriminative answers
    "yes", "no",
};

const std::vector<std::string> kFunctionWords = {
    "what", "color", "is", "the", "a", "an", "of", "made", "material", "shape",
    "how", "many", "in", "picture", "there", "or", "and", "on", "with", "near",
    "big", "small", "shows", "this", "it", "object", "kind",
    "banana", "sky", "grass", "snow", "hammer", "window", "wheel", "sun",
};

const std::vector<std::string> kPunct = {"?", "."};

}  // namespace

Tokenizer Tokenizer::toy() {
    std::vector<std::string> table;
    for (const auto& w : kAnswerWords) {
        table.push_back(w);
        table.push_back(" " + w);
        table.push_back(capitalize(w));
        table.push_back(" " + capitalize(w));
    }
    for (const auto& w : kFunctionWords) {
        table.push_back(w);
        table.push_back(" " + w);
    }
    for (const auto& p : kPunct) table.push_back(p);
    return from_table(std::move(table));
}

Tokenizer Tokenizer::from_table(std::vector<std::string> surfaces) {
    Tokenizer t;
    t.surfaces_ = std::move(surfaces);
    for (int i = 0; i < static_cast<int>(t.surfaces_.size()); ++i) {
        if (!t.index_.emplace(t.surfaces_[i], i).second) {
            throw ParseError("tokenizer table has duplicate surface: " + t.surfaces_[i]);
        }
    }
    return t;
}

int Tokenizer::id(const std::string& surface) const {
    auto it = index_.find(surface);
    return it == index_.end() ? -1 : it->second;
}

std::string Tokenizer::surface(int id) const {
    if (id >= 0 && id < size()) return surfaces_[id];
    return "<unk:" + std::to_string(id) + ">";
}

std::vector<int> Tokenizer::encode_words(const std::vector<std::string>& words) const {
    std::vector<int> ids;
    ids.reserve(words.size());
    for (size_t i = 0; i < words.size(); ++i) {
        const std::string surf = i == 0 || words[i] == "?" || words[i] == "."
                                     ? words[i]
                                     : " " + words[i];
        const int tid = id(surf);
        if (tid < 0) throw ParseError("word not in toy tokenizer table: '" + words[i] + "'");
        ids.push_back(tid);
    }
    return ids;
}

std::vector<std::string> Tokenizer::decode(const std::vector<int>& ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int i : ids) out.push_back(surface(i));
    return out;
}

std::set<int> first_token_candidates(const std::string& answer, const Tokenizer& tok) {
    if (answer.empty()) {
        throw UntokenizableAnswer("empty answer string");
    }
    std::set<int> ids;
    for (const std::string& variant :
         {answer, lower(answer), capitalize(answer)}) {
        for (const std::string& form : {variant, " " + variant}) {
            const int tid = tok.id(form);
            if (tid >= 0) ids.insert(tid);
        }
    }
    if (ids.empty()) {
        throw UntokenizableAnswer("no tokenizable variant of '" + answer + "'");
    }
    return ids;
}

}  // namespace cas
