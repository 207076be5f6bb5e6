#include "cas/extraction.hpp"

#include <algorithm>
#include <fstream>

#include <nlohmann/json.hpp>

#include "cas/errors.hpp"

namespace cas {

using json = nlohmann::ordered_json;

std::string cpv_kind_name(CpvKind k) { return k == CpvKind::VFV ? "VFV" : "MRV"; }

CpvKind cpv_kind_from_name(const std::string& name) {
    if (name == "VFV") return CpvKind::VFV;
    if (name == "MRV") return CpvKind::MRV;
    throw ParseError("unknown CPV kind: " + name);
}

std::optional<int> locate_focus(const std::vector<int>& generated,
                                const std::set<int>& cands_plus,
                                const std::set<int>& cands_minus) {
    for (size_t i = 0; i < generated.size(); ++i) {
        if (cands_plus.count(generated[i]) || cands_minus.count(generated[i])) {
            return static_cast<int>(i);
        }
    }
    return std::nullopt;
}

double read_pref(const Vec& logits, const std::set<int>& cands_plus,
                 const std::set<int>& cands_minus) {
    if (cands_plus.empty() || cands_minus.empty()) {
        throw DimensionMismatch("read_pref: empty candidate set");
    }
    auto best = [&](const std::set<int>& ids) {
        double m = -std::numeric_limits<double>::infinity();
        for (int id : ids) {
            if (id < 0 || id >= logits.size()) {
                throw IdOutOfVocab("read_pref: candidate id " + std::to_string(id));
            }
            m = std::max(m, logits(id));
        }
        return m;
    };
    return best(cands_plus) - best(cands_minus);
}

CollectResult collect_records(const Model& model, const SampleSet& samples,
                              const CollectOptions& opts) {
    std::vector<int> layers = opts.layers;
    if (layers.empty()) {
        for (int l = 0; l < model.cfg.n_layers; ++l) layers.push_back(l);
    }
    std::vector<HookSite> sites;
    for (int l : layers) sites.push_back({l, HookKind::MlpOutput});

    CollectResult out;
    for (const ConflictSample* s : samples.all()) {
        const PrefixEmbedding prefix = make_prefix(*s, model.cfg.d_model);
        const auto plus = first_token_candidates(s->y_plus, samples.tokenizer);
        const auto minus = first_token_candidates(s->y_minus, samples.tokenizer);

        const GenerationTrace gen =
            generate_greedy(model, prefix, s->question, opts.max_new, nullptr);
        const auto t_star = locate_focus(gen.tokens, plus, minus);
        if (!t_star) {
            ++out.dropped_not_found;
            continue;
        }
        // Re-read at t*-1 through the forward path: the logits that
        // predicted the focus token, and the MLP outputs alongside them.
        std::vector<int> tokens = s->question;
        tokens.insert(tokens.end(), gen.tokens.begin(), gen.tokens.begin() + *t_star);
        const int read_pos = prefix.size() + static_cast<int>(tokens.size()) - 1;
        const ForwardTrace ft = forward(model, prefix, tokens, {read_pos}, sites);

        PreferenceRecord rec;
        rec.sample_id = s->sample_id;
        rec.concept_group = s->concept_group;
        rec.setup = s->setup;
        rec.t_star = *t_star;
        rec.pref = read_pref(ft.logits[0].cast<double>(), plus, minus);
        for (const auto& [layer, h] : ft.mlp_outputs.at(read_pos)) {
            rec.activations[layer] = h.cast<double>();
        }
        out.records.push_back(std::move(rec));
    }
    std::sort(out.records.begin(), out.records.end(),
              [](const auto& a, const auto& b) { return a.sample_id < b.sample_id; });
    return out;
}

std::vector<PreferenceRecord> filter_weak(const std::vector<PreferenceRecord>& records,
                                          double epsilon) {
    if (epsilon < 0.0) throw NonFiniteInput("filter_weak: epsilon must be >= 0");
    std::vector<PreferenceRecord> kept;
    for (const auto& r : records) {
        if (std::abs(r.pref) >= epsilon) kept.push_back(r);
    }
    if (kept.size() < 2) {
        throw TooFewSamples("filter_weak: fewer than 2 records remain (had " +
                            std::to_string(records.size()) + ")");
    }
    return kept;
}

std::vector<PreferenceRecord> select_records(const std::vector<PreferenceRecord>& records,
                                             CpvKind kind) {
    std::vector<PreferenceRecord> out;
    for (const auto& r : records) {
        const bool match = kind == CpvKind::VFV ? r.setup == Setup::Counterfactual
                                                : r.setup != Setup::Counterfactual;
        if (match) out.push_back(r);
    }
    return out;
}

namespace {

void check_setups(const std::vector<PreferenceRecord>& records, CpvKind kind) {
    for (const auto& r : records) {
        const bool ok = kind == CpvKind::VFV ? r.setup == Setup::Counterfactual
                                             : r.setup != Setup::Counterfactual;
        if (!ok) {
            throw SetupMismatch("record " + r.sample_id + " is from the wrong setup for " +
                                cpv_kind_name(kind));
        }
    }
}

std::vector<int> record_layers(const std::vector<PreferenceRecord>& records) {
    std::vector<int> layers;
    for (const auto& [l, v] : records.front().activations) layers.push_back(l);
    for (const auto& r : records) {
        if (r.activations.size() != layers.size()) {
            throw DimensionMismatch("records disagree on extraction layers");
        }
    }
    return layers;
}

struct LayerData {
    Mat X;
    Vec y;
};

LayerData layer_data(const std::vector<PreferenceRecord>& records, int layer) {
    const Eigen::Index n = static_cast<Eigen::Index>(records.size());
    const Eigen::Index d = records.front().activations.at(layer).size();
    LayerData ld{Mat(n, d), Vec(n)};
    for (Eigen::Index i = 0; i < n; ++i) {
        ld.X.row(i) = records[i].activations.at(layer).transpose();
        ld.y(i) = records[i].pref;
    }
    return ld;
}

}  // namespace

ContextPreferenceVector fit_cpv(const std::vector<PreferenceRecord>& records,
                                CpvKind kind, double lambda, double epsilon_used) {
    if (records.size() < 2) throw TooFewSamples("fit_cpv: need at least 2 records");
    check_setups(records, kind);

    ContextPreferenceVector cpv;
    cpv.kind = kind;
    cpv.lambda = lambda;
    cpv.epsilon = epsilon_used;
    cpv.n_used = static_cast<int>(records.size());
    for (int layer : record_layers(records)) {
        const LayerData ld = layer_data(records, layer);
        const RidgeSolution sol = ridge_fit(ld.X, ld.y, lambda);
        cpv.per_layer[layer] = sol.weights;
        cpv.intercepts[layer] = sol.intercept;
        cpv.r2_in_sample[layer] = sol.r_squared;
        cpv.d_model = static_cast<int>(sol.weights.size());
    }
    return cpv;
}

std::map<int, double> crossval(const std::vector<PreferenceRecord>& records,
                               CpvKind kind, int folds, double lambda) {
    if (records.empty()) throw TooFewSamples("crossval: no records");
    check_setups(records, kind);

    // Deterministic group-aware assignment: groups sorted by size (desc)
    // then name, each placed on the currently smallest fold.
    std::map<std::string, int> group_sizes;
    for (const auto& r : records) group_sizes[r.concept_group]++;
    if (static_cast<int>(group_sizes.size()) < folds) {
        throw TooFewGroups("crossval: " + std::to_string(group_sizes.size()) +
                           " concept groups for " + std::to_string(folds) + " folds");
    }
    std::vector<std::pair<std::string, int>> groups(group_sizes.begin(), group_sizes.end());
    std::sort(groups.begin(), groups.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    std::map<std::string, int> fold_of;
    std::vector<int> fold_size(folds, 0);
    for (const auto& [name, sz] : groups) {
        const int f = static_cast<int>(std::min_element(fold_size.begin(), fold_size.end()) -
                                       fold_size.begin());
        fold_of[name] = f;
        fold_size[f] += sz;
    }

    const std::vector<int> layers = record_layers(records);
    std::map<int, double> mean_r2;
    for (int layer : layers) mean_r2[layer] = 0.0;

    for (int f = 0; f < folds; ++f) {
        std::vector<PreferenceRecord> train, test;
        for (const auto& r : records) {
            (fold_of[r.concept_group] == f ? test : train).push_back(r);
        }
        if (train.size() < 2 || test.empty()) {
            throw TooFewGroups("crossval: degenerate fold split");
        }
        for (int layer : layers) {
            const LayerData tr = layer_data(train, layer);
            const RidgeSolution sol = ridge_fit(tr.X, tr.y, lambda);
            const LayerData te = layer_data(test, layer);
            const Vec pred = (te.X * sol.weights).array() + sol.intercept;
            const double ss_res = (te.y - pred).squaredNorm();
            const double mean_y = te.y.mean();
            const double ss_tot = (te.y.array() - mean_y).matrix().squaredNorm();
            const double r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 0.0;
            mean_r2[layer] += r2 / folds;
        }
    }
    return mean_r2;
}

void save_cpv(const ContextPreferenceVector& cpv, const std::string& path) {
    json j;
    j["format"] = "cas-cpv";
    j["version"] = 1;
    j["kind"] = cpv_kind_name(cpv.kind);
    j["lambda"] = cpv.lambda;
    j["epsilon"] = cpv.epsilon;
    j["n_used"] = cpv.n_used;
    j["d_model"] = cpv.d_model;
    j["source_corpus_hash"] = cpv.source_corpus_hash;
    json layers = json::array();
    for (const auto& [layer, w] : cpv.per_layer) {
        json lj;
        lj["layer"] = layer;
        lj["intercept"] = cpv.intercepts.at(layer);
        if (cpv.r2_in_sample.count(layer)) lj["r2_in_sample"] = cpv.r2_in_sample.at(layer);
        if (cpv.cv_r2.count(layer)) lj["cv_r2"] = cpv.cv_r2.at(layer);
        json wj = json::array();
        for (Eigen::Index i = 0; i < w.size(); ++i) wj.push_back(w(i));
        lj["weights"] = std::move(wj);
        layers.push_back(std::move(lj));
    }
    j["layers"] = std::move(layers);
    std::ofstream os(path);
    if (!os) throw ParseError("cannot open CPV file for writing: " + path);
    os << j.dump(2) << "\n";
}

ContextPreferenceVector load_cpv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ParseError("cannot open CPV file: " + path);
    json j;
    try {
        is >> j;
    } catch (const std::exception& e) {
        throw FormatVersionMismatch(std::string("CPV parse failure: ") + e.what());
    }
    if (!j.contains("format") || j["format"] != "cas-cpv" ||
        j.at("version").get<int>() != 1) {
        throw FormatVersionMismatch("not a version-1 cas-cpv file: " + path);
    }
    ContextPreferenceVector cpv;
    cpv.kind = cpv_kind_from_name(j.at("kind").get<std::string>());
    cpv.lambda = j.at("lambda").get<double>();
    cpv.epsilon = j.at("epsilon").get<double>();
    cpv.n_used = j.at("n_used").get<int>();
    cpv.d_model = j.at("d_model").get<int>();
    cpv.source_corpus_hash = j.at("source_corpus_hash").get<std::string>();
    for (const json& lj : j.at("layers")) {
        const int layer = lj.at("layer").get<int>();
        const auto w = lj.at("weights").get<std::vector<double>>();
        cpv.per_layer[layer] = Eigen::Map<const Vec>(w.data(), static_cast<Eigen::Index>(w.size()));
        cpv.intercepts[layer] = lj.at("intercept").get<double>();
        if (lj.contains("r2_in_sample")) cpv.r2_in_sample[layer] = lj.at("r2_in_sample").get<double>();
        if (lj.contains("cv_r2")) cpv.cv_r2[layer] = lj.at("cv_r2").get<double>();
        if (static_cast<int>(w.size()) != cpv.d_model) {
            throw DimMismatch("CPV layer " + std::to_string(layer) + " has wrong dimension");
        }
    }
    return cpv;
}

ContextPreferenceVector load_cpv_checked(const std::string& path, int d_model,
                                         int n_layers) {
    ContextPreferenceVector cpv = load_cpv(path);
    if (cpv.d_model != d_model) {
        throw DimMismatch("CPV d_model " + std::to_string(cpv.d_model) +
                          " != model d_model " + std::to_string(d_model));
    }
    for (const auto& [layer, w] : cpv.per_layer) {
        if (layer < 0 || layer >= n_layers) {
            throw DimMismatch("CPV layer " + std::to_string(layer) + " outside model depth");
        }
    }
    return cpv;
}

}  // namespace cas
