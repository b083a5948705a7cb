#pragma once

#include <algorithm>
#include <cctype>
#include <string>
#include <string_view>
#include <vector>

#include "poisonlab/common.hpp"

namespace poisonlab {

// Word = maximal run of [a-z0-9] after lowercasing; everything else is a
// boundary. Concepts match as whole words; multi-word concepts match as a
// consecutive word sequence.
inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : text) {
        const unsigned char u = static_cast<unsigned char>(ch);
        if (std::isalnum(u)) {
            cur.push_back(static_cast<char>(std::tolower(u)));
        } else if (!cur.empty()) {
            words.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

inline bool contains_concept(const std::vector<std::string>& caption_words,
                             const std::vector<std::string>& concept_words) {
    if (concept_words.empty() || caption_words.size() < concept_words.size()) return false;
    for (size_t i = 0; i + concept_words.size() <= caption_words.size(); ++i) {
        bool match = true;
        for (size_t j = 0; j < concept_words.size(); ++j)
            if (caption_words[i + j] != concept_words[j]) {
                match = false;
                break;
            }
        if (match) return true;
    }
    return false;
}

inline bool contains_concept(std::string_view caption, std::string_view concept_name) {
    return contains_concept(tokenize(caption), tokenize(concept_name));
}

// Caption templates carry exactly one "{}" slot for the concept.
inline bool template_valid(std::string_view tmpl) {
    size_t pos = tmpl.find("{}");
    return pos != std::string_view::npos && tmpl.find("{}", pos + 2) == std::string_view::npos;
}

inline std::string fill_template(std::string_view tmpl, std::string_view concept_name) {
    if (!template_valid(tmpl))
        throw PreconditionError("caption template must contain exactly one {} slot: " +
                                std::string(tmpl));
    std::string out(tmpl);
    out.replace(out.find("{}"), 2, concept_name);
    return out;
}

} // namespace poisonlab
