#include "cas/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "cas/errors.hpp"
#include "cas/rng.hpp"

namespace cas {

using json = nlohmann::ordered_json;

std::string setup_name(Setup s) {
    switch (s) {
        case Setup::Counterfactual: return "counterfactual";
        case Setup::SymmetricA: return "symmetric_a";
        case Setup::SymmetricB: return "symmetric_b";
    }
    return "?";
}

Setup setup_from_name(const std::string& name) {
    if (name == "counterfactual") return Setup::Counterfactual;
    if (name == "symmetric_a") return Setup::SymmetricA;
    if (name == "symmetric_b") return Setup::SymmetricB;
    throw ParseError("unknown setup: " + name);
}

std::vector<const ConflictSample*> SampleSet::all() const {
    std::vector<const ConflictSample*> out;
    out.reserve(size());
    for (const auto& s : counterfactual) out.push_back(&s);
    for (const auto& s : sym_a) out.push_back(&s);
    for (const auto& s : sym_b) out.push_back(&s);
    return out;
}

namespace {

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

uint64_t mix_seed(uint64_t seed, uint64_t i) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ull * (i + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

struct CfConcept {
    const char* name;
    const char* noun;                      // the questioned thing
    std::vector<std::string> question;     // words
    const char* commonsense;               // y-
    std::vector<const char*> variants;     // y+ options (image content)
};

const std::vector<CfConcept>& cf_concepts() {
    static const std::vector<CfConcept> c = {
        {"banana_color", "banana", {"what", "color", "is", "the", "banana", "?"},
         "yellow", {"blue", "red", "purple", "green", "pink", "gray"}},
        {"sky_color", "sky", {"what", "color", "is", "the", "sky", "?"},
         "blue", {"green", "red", "purple", "pink", "brown", "black"}},
        {"grass_color", "grass", {"what", "color", "is", "the", "grass", "?"},
         "green", {"blue", "red", "purple", "white", "black", "gray"}},
        {"snow_color", "snow", {"what", "color", "is", "the", "snow", "?"},
         "white", {"black", "red", "green", "blue", "pink", "purple"}},
        {"hammer_material", "hammer", {"what", "is", "the", "hammer", "made", "of", "?"},
         "metal", {"glass", "wood", "stone"}},
        {"window_material", "window", {"what", "is", "the", "window", "made", "of", "?"},
         "glass", {"wood", "stone", "metal"}},
        {"wheel_shape", "wheel", {"what", "shape", "is", "the", "wheel", "?"},
         "round", {"square"}},
        {"sun_count", "sun", {"how", "many", "sun", "in", "the", "picture", "?"},
         "one", {"two", "three", "four"}},
    };
    return c;
}

struct SymConcept {
    const char* name;
    const char* a;
    const char* b;
};

const std::vector<SymConcept>& sym_concepts() {
    static const std::vector<SymConcept> c = {
        {"fruit", "apple", "orange"}, {"pet", "cat", "dog"},
        {"writing", "pencil", "pen"}, {"vessel", "cup", "bowl"},
        {"vehicle", "car", "bike"},   {"creature", "fish", "bird"},
        {"household", "book", "lamp"}, {"furniture", "chair", "table"},
    };
    return c;
}

std::vector<std::string> sym_question(const std::string& text_object) {
    return {"this", "is", "a", text_object, "what", "is", "it", "?"};
}

std::string pad_id(const std::string& tag, int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%s_%03d", tag.c_str(), i);
    return buf;
}

}  // namespace

Vec object_direction(const std::string& object_id, int d_model) {
    Rng rng(fnv1a(object_id));
    Vec v(d_model);
    for (int i = 0; i < d_model; ++i) v(i) = rng.normal();
    return v / v.norm();
}

PrefixEmbedding make_prefix(const PrefixGenSpec& spec, int d_model) {
    PrefixEmbedding p;
    p.vectors.resize(spec.k, d_model);
    const double scale = std::sqrt(static_cast<double>(d_model));
    std::vector<Vec> dirs;
    for (const auto& obj : spec.objects) dirs.push_back(object_direction(obj, d_model));
    Rng noise(spec.seed);
    for (int j = 0; j < spec.k; ++j) {
        Vec row = dirs.empty() ? Vec::Zero(d_model) : Vec(scale * dirs[j % dirs.size()]);
        for (int i = 0; i < d_model; ++i) row(i) += spec.noise_scale * noise.normal();
        p.vectors.row(j) = row.cast<float>();
    }
    return p;
}

PrefixEmbedding make_prefix(const ConflictSample& sample, int d_model) {
    if (sample.prefix_inline) {
        if (sample.prefix_inline->cols() != d_model) {
            throw DimensionMismatch("inline prefix dim != d_model");
        }
        PrefixEmbedding p;
        p.vectors = sample.prefix_inline->cast<float>();
        return p;
    }
    return make_prefix(sample.prefix, d_model);
}

SampleSet synth_corpus(uint64_t seed, const SynthCounts& counts) {
    if (counts.cf < 1 || counts.sym_a < 1 || counts.sym_b < 1) {
        throw CountsTooSmall("synth_corpus: all counts must be >= 1");
    }
    if (counts.sym_a != counts.sym_b) {
        throw CountsTooSmall("synth_corpus: sym_a and sym_b counts must match for mirroring");
    }
    SampleSet set;
    set.tokenizer = Tokenizer::toy();
    const auto& cfs = cf_concepts();
    for (int i = 0; i < counts.cf; ++i) {
        const CfConcept& c = cfs[i % cfs.size()];
        const char* y_plus = c.variants[(i / cfs.size()) % c.variants.size()];
        ConflictSample s;
        s.sample_id = pad_id("cf", i);
        s.setup = Setup::Counterfactual;
        s.concept_group = c.name;
        s.question = set.tokenizer.encode_words(c.question);
        s.y_plus = y_plus;
        s.y_minus = c.commonsense;
        s.prefix.objects = {std::string(c.noun) + "_" + y_plus};
        s.prefix.seed = mix_seed(seed, static_cast<uint64_t>(i));
        set.counterfactual.push_back(std::move(s));
    }
    const auto& syms = sym_concepts();
    for (int i = 0; i < counts.sym_a; ++i) {
        const SymConcept& c = syms[i % syms.size()];
        ConflictSample a;
        a.sample_id = pad_id("sa", i);
        a.setup = Setup::SymmetricA;
        a.concept_group = c.name;
        a.question = set.tokenizer.encode_words(sym_question(c.b));
        a.y_plus = c.a;
        a.y_minus = c.b;
        a.prefix.objects = {c.a};
        a.prefix.seed = mix_seed(seed, 1000000 + static_cast<uint64_t>(i));

        ConflictSample b;
        b.sample_id = pad_id("sb", i);
        b.setup = Setup::SymmetricB;
        b.concept_group = c.name;
        b.question = set.tokenizer.encode_words(sym_question(c.a));
        b.y_plus = c.b;
        b.y_minus = c.a;
        b.prefix.objects = {c.b};
        b.prefix.seed = mix_seed(seed, 2000000 + static_cast<uint64_t>(i));

        set.sym_a.push_back(std::move(a));
        set.sym_b.push_back(std::move(b));
    }
    validate_samples(set);
    return set;
}

void validate_samples(const SampleSet& set) {
    std::map<std::string, int> ids;
    for (const ConflictSample* s : set.all()) {
        if (++ids[s->sample_id] > 1) {
            throw DuplicateId("duplicate sample_id: " + s->sample_id);
        }
        if (s->y_plus == s->y_minus) {
            throw ParseError("sample " + s->sample_id + ": y_plus == y_minus");
        }
        if (s->concept_group.empty()) {
            throw ParseError("sample " + s->sample_id + ": empty concept_group");
        }
        const auto plus = first_token_candidates(s->y_plus, set.tokenizer);
        const auto minus = first_token_candidates(s->y_minus, set.tokenizer);
        for (int id : plus) {
            if (minus.count(id)) {
                throw CandidateCollision("sample " + s->sample_id +
                                         ": candidate sets overlap on token " +
                                         std::to_string(id));
            }
        }
    }
    if (set.sym_a.size() != set.sym_b.size()) {
        throw MirrorViolation("sym_a and sym_b differ in size");
    }
    // Flip map must be a bijection on the (y+, y-) pairs.
    std::map<std::pair<std::string, std::string>, int> pool;
    for (const auto& b : set.sym_b) pool[{b.y_plus, b.y_minus}]++;
    for (const auto& a : set.sym_a) {
        auto it = pool.find({a.y_minus, a.y_plus});
        if (it == pool.end() || it->second == 0) {
            throw MirrorViolation("sym_a sample " + a.sample_id +
                                  " has no flipped counterpart in sym_b");
        }
        --it->second;
    }
}

namespace {

json sample_to_json(const ConflictSample& s) {
    json j;
    j["sample_id"] = s.sample_id;
    j["setup"] = setup_name(s.setup);
    j["concept_group"] = s.concept_group;
    j["question"] = s.question;
    j["y_plus"] = s.y_plus;
    j["y_minus"] = s.y_minus;
    if (s.prefix_inline) {
        json rows = json::array();
        for (Eigen::Index r = 0; r < s.prefix_inline->rows(); ++r) {
            json row = json::array();
            for (Eigen::Index c = 0; c < s.prefix_inline->cols(); ++c) {
                row.push_back((*s.prefix_inline)(r, c));
            }
            rows.push_back(std::move(row));
        }
        j["prefix"] = {{"inline", std::move(rows)}};
    } else {
        j["prefix"] = {{"objects", s.prefix.objects},
                       {"k", s.prefix.k},
                       {"noise_scale", s.prefix.noise_scale},
                       {"seed", s.prefix.seed}};
    }
    return j;
}

ConflictSample sample_from_json(const json& j) {
    ConflictSample s;
    s.sample_id = j.at("sample_id").get<std::string>();
    s.setup = setup_from_name(j.at("setup").get<std::string>());
    s.concept_group = j.at("concept_group").get<std::string>();
    s.question = j.at("question").get<std::vector<int>>();
    s.y_plus = j.at("y_plus").get<std::string>();
    s.y_minus = j.at("y_minus").get<std::string>();
    const json& p = j.at("prefix");
    if (p.contains("inline")) {
        const auto rows = p.at("inline").get<std::vector<std::vector<double>>>();
        if (rows.empty()) throw ParseError("inline prefix has no rows");
        Mat m(rows.size(), rows[0].size());
        for (size_t r = 0; r < rows.size(); ++r) {
            if (rows[r].size() != rows[0].size()) {
                throw ParseError("ragged inline prefix");
            }
            for (size_t c = 0; c < rows[r].size(); ++c) m(r, c) = rows[r][c];
        }
        s.prefix_inline = std::move(m);
    } else {
        s.prefix.objects = p.at("objects").get<std::vector<std::string>>();
        s.prefix.k = p.at("k").get<int>();
        s.prefix.noise_scale = p.at("noise_scale").get<double>();
        s.prefix.seed = p.at("seed").get<uint64_t>();
    }
    return s;
}

}  // namespace

void save_samples(const SampleSet& set, const std::string& path) {
    json j;
    j["format"] = "cas-corpus";
    j["version"] = 1;
    j["tokenizer"] = set.tokenizer.table();
    json samples = json::array();
    for (const ConflictSample* s : set.all()) samples.push_back(sample_to_json(*s));
    j["samples"] = std::move(samples);
    std::ofstream os(path);
    if (!os) throw ParseError("cannot open corpus for writing: " + path);
    os << j.dump(2) << "\n";
}

SampleSet load_samples(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ParseError("cannot open corpus: " + path);
    json j;
    try {
        is >> j;
    } catch (const std::exception& e) {
        throw ParseError(std::string("corpus parse failure: ") + e.what());
    }
    if (!j.contains("format") || j["format"] != "cas-corpus") {
        throw ParseError("not a cas-corpus file: " + path);
    }
    if (j.at("version").get<int>() != 1) {
        throw FormatVersionMismatch("unsupported corpus version");
    }
    SampleSet set;
    set.tokenizer = Tokenizer::from_table(j.at("tokenizer").get<std::vector<std::string>>());
    for (const json& sj : j.at("samples")) {
        ConflictSample s = sample_from_json(sj);
        switch (s.setup) {
            case Setup::Counterfactual: set.counterfactual.push_back(std::move(s)); break;
            case Setup::SymmetricA: set.sym_a.push_back(std::move(s)); break;
            case Setup::SymmetricB: set.sym_b.push_back(std::move(s)); break;
        }
    }
    validate_samples(set);
    return set;
}

}  // namespace cas
