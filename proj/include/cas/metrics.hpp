#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

namespace cas {

// COCO-style ground truth for the toy object vocabulary.
struct ObjectAnnotation {
    std::map<std::string, std::set<std::string>> gt;   // image_id -> canonical objects
    std::map<std::string, std::string> synonym_map;    // surface form -> canonical
    std::set<std::string> object_vocabulary;

    void validate() const;
    const std::set<std::string>& gt_for(const std::string& image_id) const;
};

// Instance-level object mentions: never deduplicated, positions ascending.
struct Mention {
    int token_position = 0;
    std::string object;
    bool grounded = false;
};
using MentionList = std::vector<Mention>;

struct HallucinationReport {
    double chair_s = 0.0;  // percent of captions with >= 1 hallucinated mention
    double chair_i = 0.0;  // percent of mentions that are hallucinated
    double f1 = 0.0;       // over unique predicted vs GT object sets
    double cover = 0.0;    // percent of GT objects mentioned
    long captions = 0;
    long mentions = 0;
    long hallucinated_mentions = 0;
};

struct TextQualityReport {
    double rep6 = 0.0;
    double mattr50 = 0.0;
};

// One mention per occurrence of a vocabulary surface form; grounded iff
// the canonical object is in the image's GT set.
MentionList extract_objects(const std::vector<std::string>& caption_tokens,
                            const ObjectAnnotation& annotation,
                            const std::string& image_id);

// Corpus-level CHAIR_S / CHAIR_I / F1 / Cover. Cover is micro-averaged
// by default; macro is behind the flag.
HallucinationReport chair(const std::vector<MentionList>& mentions_per_caption,
                          const std::vector<std::string>& image_ids,
                          const ObjectAnnotation& annotation,
                          bool macro_cover = false);

// seq-rep-6: 1 - unique/total 6-grams; 0 below 6 tokens.
double rep6(const std::vector<int>& tokens);

// Moving-average TTR; whole-text TTR when shorter than the window.
double mattr(const std::vector<int>& tokens, int window = 50);

std::vector<int> length_align(const std::vector<int>& caption, int limit = 64);

TextQualityReport text_quality(const std::vector<std::vector<int>>& captions);

void save_annotation(const ObjectAnnotation& ann, const std::string& path);
ObjectAnnotation load_annotation(const std::string& path);

}  // namespace cas
