#include "cas/evalset.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include <nlohmann/json.hpp>

#include "cas/errors.hpp"
#include "cas/rng.hpp"

namespace cas {

using json = nlohmann::ordered_json;

const std::vector<std::string>& eval_object_vocabulary() {
    static const std::vector<std::string> v = {
        "apple", "orange", "pencil", "pen", "cat", "dog", "cup", "bowl",
        "car", "bike", "fish", "bird", "book", "lamp", "tree", "rock",
        "chair", "table",
    };
    return v;
}

namespace {

std::string pad_id(const char* tag, int i) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%s_%03d", tag, i);
    return buf;
}

std::string capitalize(std::string s) {
    if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    return s;
}

std::vector<EvalImage> synth_split(Rng& rng, const char* tag, int n) {
    const auto& vocab = eval_object_vocabulary();
    std::vector<EvalImage> images;
    images.reserve(n);
    for (int i = 0; i < n; ++i) {
        EvalImage img;
        img.image_id = pad_id(tag, i);
        const int n_objects = 1 + static_cast<int>(rng.uniform() * 3.0);
        while (static_cast<int>(img.gt_objects.size()) < std::min(n_objects, 3)) {
            const auto& obj = vocab[static_cast<size_t>(rng.uniform() * vocab.size()) % vocab.size()];
            if (std::find(img.gt_objects.begin(), img.gt_objects.end(), obj) ==
                img.gt_objects.end()) {
                img.gt_objects.push_back(obj);
            }
        }
        img.prefix.objects = img.gt_objects;
        img.prefix.k = 4;
        img.prefix.seed = static_cast<uint64_t>(rng.uniform() * 9007199254740992.0);
        images.push_back(std::move(img));
    }
    return images;
}

}  // namespace

EvalSet synth_evalset(uint64_t seed, int n_calib, int n_eval) {
    if (n_calib < 1 || n_eval < 1) {
        throw CountsTooSmall("synth_evalset: both split sizes must be >= 1");
    }
    EvalSet set;
    Rng rng(seed);
    set.calibration = synth_split(rng, "calib", n_calib);
    set.evaluation = synth_split(rng, "eval", n_eval);
    return set;
}

ObjectAnnotation make_annotation(const EvalSet& set, const Tokenizer& tokenizer) {
    ObjectAnnotation ann;
    for (const auto& canon : eval_object_vocabulary()) {
        ann.object_vocabulary.insert(canon);
        // Every tokenizer surface variant maps back to the canonical name.
        for (const std::string& variant : {canon, " " + canon, capitalize(canon),
                                           " " + capitalize(canon)}) {
            if (tokenizer.id(variant) >= 0) ann.synonym_map[variant] = canon;
        }
    }
    auto add = [&ann](const std::vector<EvalImage>& images) {
        for (const auto& img : images) {
            auto& gt = ann.gt[img.image_id];
            for (const auto& o : img.gt_objects) gt.insert(o);
        }
    };
    add(set.calibration);
    add(set.evaluation);
    ann.validate();
    return ann;
}

std::vector<int> caption_prompt(const Tokenizer& tokenizer) {
    return tokenizer.encode_words({"what", "is", "in", "the", "picture", "?"});
}

std::vector<QaItem> synth_qa(const EvalSet& set) {
    const auto& vocab = eval_object_vocabulary();
    std::vector<QaItem> items;
    for (const auto& img : set.evaluation) {
        items.push_back({img.image_id, img.gt_objects.front(), true});
        // The first vocabulary object absent from this image.
        for (const auto& obj : vocab) {
            if (std::find(img.gt_objects.begin(), img.gt_objects.end(), obj) ==
                img.gt_objects.end()) {
                items.push_back({img.image_id, obj, false});
                break;
            }
        }
    }
    return items;
}

namespace {

json image_to_json(const EvalImage& img) {
    json j;
    j["image_id"] = img.image_id;
    j["gt_objects"] = img.gt_objects;
    j["prefix"] = {{"objects", img.prefix.objects},
                   {"k", img.prefix.k},
                   {"noise_scale", img.prefix.noise_scale},
                   {"seed", img.prefix.seed}};
    return j;
}

EvalImage image_from_json(const json& j) {
    EvalImage img;
    img.image_id = j.at("image_id").get<std::string>();
    img.gt_objects = j.at("gt_objects").get<std::vector<std::string>>();
    const json& p = j.at("prefix");
    img.prefix.objects = p.at("objects").get<std::vector<std::string>>();
    img.prefix.k = p.at("k").get<int>();
    img.prefix.noise_scale = p.at("noise_scale").get<double>();
    img.prefix.seed = p.at("seed").get<uint64_t>();
    return img;
}

}  // namespace

void save_evalset(const EvalSet& set, const std::string& path) {
    json j;
    j["format"] = "cas-evalset";
    j["version"] = 1;
    json calib = json::array(), ev = json::array();
    for (const auto& img : set.calibration) calib.push_back(image_to_json(img));
    for (const auto& img : set.evaluation) ev.push_back(image_to_json(img));
    j["calibration"] = std::move(calib);
    j["evaluation"] = std::move(ev);
    std::ofstream os(path);
    if (!os) throw ParseError("cannot open evalset for writing: " + path);
    os << j.dump(2) << "\n";
}

EvalSet load_evalset(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ParseError("cannot open evalset: " + path);
    json j;
    try {
        is >> j;
    } catch (const std::exception& e) {
        throw ParseError(std::string("evalset parse failure: ") + e.what());
    }
    if (!j.contains("format") || j["format"] != "cas-evalset" ||
        j.at("version").get<int>() != 1) {
        throw FormatVersionMismatch("not a version-1 cas-evalset file: " + path);
    }
    EvalSet set;
    for (const json& ij : j.at("calibration")) set.calibration.push_back(image_from_json(ij));
    for (const json& ij : j.at("evaluation")) set.evaluation.push_back(image_from_json(ij));
    std::set<std::string> ids;
    for (const auto& img : set.calibration) {
        if (!ids.insert(img.image_id).second) throw DuplicateId("evalset: " + img.image_id);
    }
    for (const auto& img : set.evaluation) {
        if (!ids.insert(img.image_id).second) throw DuplicateId("evalset: " + img.image_id);
    }
    return set;
}

void save_qa(const std::vector<QaItem>& items, const std::string& path) {
    json j;
    j["format"] = "cas-qa";
    j["version"] = 1;
    json arr = json::array();
    for (const auto& it : items) {
        arr.push_back({{"image_id", it.image_id},
                       {"object", it.object},
                       {"expected_yes", it.expected_yes}});
    }
    j["items"] = std::move(arr);
    std::ofstream os(path);
    if (!os) throw ParseError("cannot open qa file for writing: " + path);
    os << j.dump(2) << "\n";
}

std::vector<QaItem> load_qa(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ParseError("cannot open qa file: " + path);
    json j;
    try {
        is >> j;
    } catch (const std::exception& e) {
        throw ParseError(std::string("qa parse failure: ") + e.what());
    }
    if (!j.contains("format") || j["format"] != "cas-qa" || j.at("version").get<int>() != 1) {
        throw FormatVersionMismatch("not a version-1 cas-qa file: " + path);
    }
    std::vector<QaItem> items;
    for (const json& ij : j.at("items")) {
        items.push_back({ij.at("image_id").get<std::string>(),
                         ij.at("object").get<std::string>(),
                         ij.at("expected_yes").get<bool>()});
    }
    return items;
}

}  // namespace cas
