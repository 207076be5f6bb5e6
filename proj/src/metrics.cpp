#include "cas/metrics.hpp"

#include <array>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "cas/errors.hpp"

namespace cas {

using json = nlohmann::ordered_json;

void ObjectAnnotation::validate() const {
    for (const auto& [img, objs] : gt) {
        for (const auto& o : objs) {
            if (!object_vocabulary.count(o)) {
                throw ParseError("annotation: GT object '" + o + "' of image " + img +
                                 " not in object vocabulary");
            }
        }
    }
    for (const auto& [surf, canon] : synonym_map) {
        if (!object_vocabulary.count(canon)) {
            throw ParseError("annotation: synonym target '" + canon + "' not in vocabulary");
        }
    }
}

const std::set<std::string>& ObjectAnnotation::gt_for(const std::string& image_id) const {
    auto it = gt.find(image_id);
    if (it == gt.end()) throw UnknownImage("no annotation for image " + image_id);
    return it->second;
}

MentionList extract_objects(const std::vector<std::string>& caption_tokens,
                            const ObjectAnnotation& annotation,
                            const std::string& image_id) {
    const auto& gt = annotation.gt_for(image_id);
    MentionList mentions;
    for (size_t i = 0; i < caption_tokens.size(); ++i) {
        auto it = annotation.synonym_map.find(caption_tokens[i]);
        if (it == annotation.synonym_map.end()) continue;
        Mention m;
        m.token_position = static_cast<int>(i);
        m.object = it->second;
        m.grounded = gt.count(it->second) > 0;
        mentions.push_back(std::move(m));
    }
    return mentions;
}

HallucinationReport chair(const std::vector<MentionList>& mentions_per_caption,
                          const std::vector<std::string>& image_ids,
                          const ObjectAnnotation& annotation,
                          bool macro_cover) {
    if (mentions_per_caption.empty()) throw EmptyCorpus("chair: no captions");
    if (mentions_per_caption.size() != image_ids.size()) {
        throw DimensionMismatch("chair: captions and image ids differ in count");
    }
    HallucinationReport rep;
    rep.captions = static_cast<long>(mentions_per_caption.size());

    long captions_with_halluc = 0;
    long tp = 0, pred_total = 0, gt_total = 0, covered_total = 0;
    double macro_cover_sum = 0.0;
    long macro_cover_n = 0;

    for (size_t i = 0; i < mentions_per_caption.size(); ++i) {
        const auto& mentions = mentions_per_caption[i];
        const auto& gt = annotation.gt_for(image_ids[i]);
        bool any_halluc = false;
        std::set<std::string> predicted;
        for (const auto& m : mentions) {
            ++rep.mentions;
            if (!m.grounded) {
                ++rep.hallucinated_mentions;
                any_halluc = true;
            }
            predicted.insert(m.object);
        }
        if (any_halluc) ++captions_with_halluc;

        long covered = 0;
        for (const auto& o : predicted) {
            if (gt.count(o)) ++tp, ++covered;
        }
        pred_total += static_cast<long>(predicted.size());
        gt_total += static_cast<long>(gt.size());
        covered_total += covered;
        if (!gt.empty()) {
            macro_cover_sum += 100.0 * static_cast<double>(covered) / gt.size();
            ++macro_cover_n;
        }
    }

    rep.chair_s = 100.0 * static_cast<double>(captions_with_halluc) / rep.captions;
    rep.chair_i = rep.mentions > 0
                      ? 100.0 * static_cast<double>(rep.hallucinated_mentions) / rep.mentions
                      : 0.0;
    const double prec = pred_total > 0 ? static_cast<double>(tp) / pred_total : 0.0;
    const double rec = gt_total > 0 ? static_cast<double>(tp) / gt_total : 0.0;
    rep.f1 = prec + rec > 0.0 ? 100.0 * 2.0 * prec * rec / (prec + rec) : 0.0;
    rep.cover = macro_cover
                    ? (macro_cover_n > 0 ? macro_cover_sum / macro_cover_n : 0.0)
                    : (gt_total > 0 ? 100.0 * static_cast<double>(covered_total) / gt_total : 0.0);
    return rep;
}

double rep6(const std::vector<int>& tokens) {
    if (tokens.size() < 6) return 0.0;
    const size_t total = tokens.size() - 5;
    std::set<std::array<int, 6>> unique;
    for (size_t i = 0; i < total; ++i) {
        unique.insert({tokens[i], tokens[i + 1], tokens[i + 2],
                       tokens[i + 3], tokens[i + 4], tokens[i + 5]});
    }
    return 1.0 - static_cast<double>(unique.size()) / static_cast<double>(total);
}

double mattr(const std::vector<int>& tokens, int window) {
    if (window < 1) throw DimensionMismatch("mattr: window must be >= 1");
    if (tokens.empty()) return 0.0;
    const int n = static_cast<int>(tokens.size());
    if (n <= window) {
        std::unordered_set<int> types(tokens.begin(), tokens.end());
        return static_cast<double>(types.size()) / n;
    }
    // Slide the window one token at a time with incremental type counts.
    std::unordered_map<int, int> counts;
    int types = 0;
    for (int i = 0; i < window; ++i) {
        if (counts[tokens[i]]++ == 0) ++types;
    }
    double sum = static_cast<double>(types) / window;
    for (int i = window; i < n; ++i) {
        if (counts[tokens[i]]++ == 0) ++types;
        if (--counts[tokens[i - window]] == 0) --types;
        sum += static_cast<double>(types) / window;
    }
    return sum / (n - window + 1);
}

std::vector<int> length_align(const std::vector<int>& caption, int limit) {
    if (limit < 1) throw DimensionMismatch("length_align: limit must be >= 1");
    if (static_cast<int>(caption.size()) <= limit) return caption;
    return std::vector<int>(caption.begin(), caption.begin() + limit);
}

TextQualityReport text_quality(const std::vector<std::vector<int>>& captions) {
    TextQualityReport rep;
    if (captions.empty()) return rep;
    for (const auto& c : captions) {
        rep.rep6 += rep6(c);
        rep.mattr50 += mattr(c);
    }
    rep.rep6 /= captions.size();
    rep.mattr50 /= captions.size();
    return rep;
}

void save_annotation(const ObjectAnnotation& ann, const std::string& path) {
    json j;
    j["format"] = "cas-annotation";
    j["version"] = 1;
    j["object_vocabulary"] = ann.object_vocabulary;
    j["synonym_map"] = ann.synonym_map;
    json images = json::object();
    for (const auto& [img, objs] : ann.gt) images[img] = objs;
    j["images"] = std::move(images);
    std::ofstream os(path);
    if (!os) throw ParseError("cannot open annotation for writing: " + path);
    os << j.dump(2) << "\n";
}

ObjectAnnotation load_annotation(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ParseError("cannot open annotation: " + path);
    json j;
    try {
        is >> j;
    } catch (const std::exception& e) {
        throw ParseError(std::string("annotation parse failure: ") + e.what());
    }
    if (!j.contains("format") || j["format"] != "cas-annotation" ||
        j.at("version").get<int>() != 1) {
        throw FormatVersionMismatch("not a version-1 cas-annotation file: " + path);
    }
    ObjectAnnotation ann;
    for (const auto& o : j.at("object_vocabulary")) {
        ann.object_vocabulary.insert(o.get<std::string>());
    }
    for (const auto& [k, v] : j.at("synonym_map").items()) {
        ann.synonym_map[k] = v.get<std::string>();
    }
    for (const auto& [img, objs] : j.at("images").items()) {
        std::set<std::string>& s = ann.gt[img];
        for (const auto& o : objs) s.insert(o.get<std::string>());
    }
    ann.validate();
    return ann;
}

}  // namespace cas
