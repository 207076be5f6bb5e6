#include "cas/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "cas/checkpoint.hpp"
#include "cas/errors.hpp"
#include "cas/rng.hpp"

namespace cas {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

void ExperimentConfig::validate() const {
    model.validate();
    if (n_calib < 1 || n_eval < 1) throw ConfigInvalid("config: split sizes must be >= 1");
    if (lambda < 0.0) throw ConfigInvalid("config: lambda must be >= 0");
    if (epsilon < 0.0) throw ConfigInvalid("config: epsilon must be >= 0");
    if (folds < 2) throw ConfigInvalid("config: folds must be >= 2");
    if (extract_max_new < 1 || eval_max_new < 1) {
        throw ConfigInvalid("config: max_new must be >= 1");
    }
    if (length_limit < 1) throw ConfigInvalid("config: length_limit must be >= 1");
    if (temperature <= 0.0) throw ConfigInvalid("config: temperature must be > 0");
    if (injection.layers.empty()) throw ConfigInvalid("config: injection layer window empty");
    for (int l : injection.layers) {
        if (l < 0 || l >= model.n_layers) {
            throw ConfigInvalid("config: injection layer " + std::to_string(l) +
                                " outside model depth");
        }
    }
    if (plant_layer && (*plant_layer < 0 || *plant_layer >= model.n_layers)) {
        throw ConfigInvalid("config: plant layer outside model depth");
    }
}

std::string ExperimentConfig::output_root() const {
    const char* env = std::getenv("CAS_OUTPUT_ROOT");
    return env && *env ? env : output_dir;
}

std::string ExperimentConfig::resolve(const std::string& path) const {
    if (fs::path(path).is_absolute()) return path;
    return (fs::path(output_root()) / path).string();
}

namespace {

GateKind gate_from_name(const std::string& name) {
    if (name == "constant_one") return GateKind::ConstantOne;
    if (name == "tempered_prior") return GateKind::TemperedPrior;
    throw ConfigInvalid("config: unknown gate kind '" + name + "'");
}

std::string gate_name(GateKind g) {
    return g == GateKind::ConstantOne ? "constant_one" : "tempered_prior";
}

}  // namespace

ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigInvalid("cannot open config: " + path);
    json j;
    try {
        is >> j;
    } catch (const std::exception& e) {
        throw ConfigInvalid(std::string("config parse failure: ") + e.what());
    }
    ExperimentConfig cfg;
    try {
        if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
        if (j.contains("output_dir")) cfg.output_dir = j["output_dir"].get<std::string>();
        if (j.contains("model")) {
            const json& m = j["model"];
            if (m.contains("n_layers")) cfg.model.n_layers = m["n_layers"].get<int>();
            if (m.contains("d_model")) cfg.model.d_model = m["d_model"].get<int>();
            if (m.contains("n_heads")) cfg.model.n_heads = m["n_heads"].get<int>();
            if (m.contains("d_mlp")) cfg.model.d_mlp = m["d_mlp"].get<int>();
            if (m.contains("vocab_size")) cfg.model.vocab_size = m["vocab_size"].get<int>();
            if (m.contains("max_seq")) cfg.model.max_seq = m["max_seq"].get<int>();
            if (m.contains("seed")) cfg.model.seed = m["seed"].get<uint64_t>();
            if (m.contains("checkpoint")) cfg.checkpoint = m["checkpoint"].get<std::string>();
        }
        if (j.contains("corpus")) {
            const json& c = j["corpus"];
            if (c.contains("path")) cfg.corpus_path = c["path"].get<std::string>();
            if (c.contains("counterfactual")) cfg.counts.cf = c["counterfactual"].get<int>();
            if (c.contains("sym_a")) cfg.counts.sym_a = c["sym_a"].get<int>();
            if (c.contains("sym_b")) cfg.counts.sym_b = c["sym_b"].get<int>();
        }
        if (j.contains("evalset")) {
            const json& e = j["evalset"];
            if (e.contains("path")) cfg.evalset_path = e["path"].get<std::string>();
            if (e.contains("annotation")) cfg.annotation_path = e["annotation"].get<std::string>();
            if (e.contains("qa")) cfg.qa_path = e["qa"].get<std::string>();
            if (e.contains("n_calib")) cfg.n_calib = e["n_calib"].get<int>();
            if (e.contains("n_eval")) cfg.n_eval = e["n_eval"].get<int>();
        }
        if (j.contains("extract")) {
            const json& x = j["extract"];
            if (x.contains("vfv")) cfg.vfv_path = x["vfv"].get<std::string>();
            if (x.contains("mrv")) cfg.mrv_path = x["mrv"].get<std::string>();
            if (x.contains("layers")) cfg.extract_layers = x["layers"].get<std::vector<int>>();
            if (x.contains("lambda")) cfg.lambda = x["lambda"].get<double>();
            if (x.contains("epsilon")) cfg.epsilon = x["epsilon"].get<double>();
            if (x.contains("folds")) cfg.folds = x["folds"].get<int>();
            if (x.contains("max_new")) cfg.extract_max_new = x["max_new"].get<int>();
        }
        if (j.contains("injection")) {
            const json& i = j["injection"];
            if (i.contains("alpha")) cfg.injection.alpha = i["alpha"].get<double>();
            if (i.contains("beta")) cfg.injection.beta = i["beta"].get<double>();
            if (i.contains("layers")) cfg.injection.layers = i["layers"].get<std::vector<int>>();
            if (i.contains("gate")) cfg.injection.gate = gate_from_name(i["gate"].get<std::string>());
            if (i.contains("temperature")) cfg.temperature = i["temperature"].get<double>();
            if (i.contains("prior")) cfg.prior_path = i["prior"].get<std::string>();
        }
        if (j.contains("eval")) {
            const json& e = j["eval"];
            if (e.contains("max_new")) cfg.eval_max_new = e["max_new"].get<int>();
            if (e.contains("length_limit")) cfg.length_limit = e["length_limit"].get<int>();
            if (e.contains("macro_cover")) cfg.macro_cover = e["macro_cover"].get<bool>();
        }
        if (j.contains("plant")) {
            const json& p = j["plant"];
            cfg.plant_layer = p.at("layer").get<int>();
            cfg.plant_magnitude = p.at("magnitude").get<double>();
            cfg.plant_direction_seed = p.at("direction_seed").get<uint64_t>();
        }
    } catch (const json::exception& e) {
        throw ConfigInvalid(std::string("config field error: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

void save_config(const ExperimentConfig& cfg, const std::string& path) {
    json j;
    j["seed"] = cfg.seed;
    j["output_dir"] = cfg.output_dir;
    j["model"] = {{"n_layers", cfg.model.n_layers}, {"d_model", cfg.model.d_model},
                  {"n_heads", cfg.model.n_heads},   {"d_mlp", cfg.model.d_mlp},
                  {"vocab_size", cfg.model.vocab_size}, {"max_seq", cfg.model.max_seq},
                  {"seed", cfg.model.seed}, {"checkpoint", cfg.checkpoint}};
    j["corpus"] = {{"path", cfg.corpus_path}, {"counterfactual", cfg.counts.cf},
                   {"sym_a", cfg.counts.sym_a}, {"sym_b", cfg.counts.sym_b}};
    j["evalset"] = {{"path", cfg.evalset_path}, {"annotation", cfg.annotation_path},
                    {"qa", cfg.qa_path}, {"n_calib", cfg.n_calib}, {"n_eval", cfg.n_eval}};
    j["extract"] = {{"vfv", cfg.vfv_path}, {"mrv", cfg.mrv_path},
                    {"layers", cfg.extract_layers}, {"lambda", cfg.lambda},
                    {"epsilon", cfg.epsilon}, {"folds", cfg.folds},
                    {"max_new", cfg.extract_max_new}};
    j["injection"] = {{"alpha", cfg.injection.alpha}, {"beta", cfg.injection.beta},
                      {"layers", cfg.injection.layers}, {"gate", gate_name(cfg.injection.gate)},
                      {"temperature", cfg.temperature}, {"prior", cfg.prior_path}};
    j["eval"] = {{"max_new", cfg.eval_max_new}, {"length_limit", cfg.length_limit},
                 {"macro_cover", cfg.macro_cover}};
    if (cfg.plant_layer) {
        j["plant"] = {{"layer", *cfg.plant_layer}, {"magnitude", cfg.plant_magnitude},
                      {"direction_seed", cfg.plant_direction_seed}};
    }
    std::ofstream os(path);
    if (!os) throw ConfigInvalid("cannot open config for writing: " + path);
    os << j.dump(2) << "\n";
}

uint64_t fnv1a_bytes(const void* data, size_t n, uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

uint64_t hash_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError("cannot hash missing file: " + path);
    uint64_t h = 14695981039346656037ull;
    char buf[1 << 16];
    while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
        h = fnv1a_bytes(buf, static_cast<size_t>(is.gcount()), h);
    }
    return h;
}

std::string hash_hex(uint64_t h) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void write_manifest(const std::string& stage, const ExperimentConfig& cfg,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs) {
    json j;
    j["format"] = "cas-manifest";
    j["version"] = 1;
    j["stage"] = stage;
    j["seed"] = cfg.seed;
    json in = json::object(), out = json::object();
    for (const auto& p : inputs) in[p] = hash_hex(hash_file(cfg.resolve(p)));
    for (const auto& p : outputs) out[p] = hash_hex(hash_file(cfg.resolve(p)));
    j["inputs"] = std::move(in);
    j["outputs"] = std::move(out);
    const std::string path = cfg.resolve(stage + "_manifest.json");
    std::ofstream os(path);
    if (!os) throw StageError(stage + ": cannot write manifest " + path);
    os << j.dump(2) << "\n";
}

Model stage_model(const ExperimentConfig& cfg) {
    const std::string ckpt = cfg.resolve(cfg.checkpoint);
    Model m = fs::exists(ckpt) ? load_checkpoint(ckpt) : init_model(cfg.model);
    if (cfg.plant_layer) {
        Rng rng(cfg.plant_direction_seed);
        Vec dir(cfg.model.d_model);
        for (int i = 0; i < cfg.model.d_model; ++i) dir(i) = rng.normal();
        m = plant_bias(m, *cfg.plant_layer, dir, cfg.plant_magnitude);
    }
    return m;
}

namespace {

void ensure_output_dir(const ExperimentConfig& cfg) {
    fs::create_directories(cfg.output_root());
}

// Caption tokens (ids and decoded surfaces) for one image.
struct Caption {
    std::string image_id;
    std::vector<int> tokens;
};

std::vector<Caption> generate_captions(const Model& model, const Tokenizer& tok,
                                       const std::vector<EvalImage>& images, int max_new,
                                       const InjectionHandle* handle_template,
                                       long* application_count) {
    const std::vector<int> prompt = caption_prompt(tok);
    std::vector<Caption> captions;
    captions.reserve(images.size());
    for (const auto& img : images) {
        const PrefixEmbedding prefix = make_prefix(img.prefix, model.cfg.d_model);
        GenerationTrace trace;
        if (handle_template) {
            InjectionHandle handle = *handle_template;
            trace = steer_generate(model, handle, prefix, prompt, max_new);
            if (application_count) *application_count += handle.application_count;
        } else {
            trace = generate_greedy(model, prefix, prompt, max_new, nullptr);
        }
        captions.push_back({img.image_id, std::move(trace.tokens)});
    }
    return captions;
}

json halluc_to_json(const HallucinationReport& r) {
    return {{"chair_s", r.chair_s}, {"chair_i", r.chair_i}, {"f1", r.f1},
            {"cover", r.cover},     {"captions", r.captions}, {"mentions", r.mentions},
            {"hallucinated_mentions", r.hallucinated_mentions}};
}

void write_text(const std::string& path, const std::string& text, const char* stage) {
    std::ofstream os(path);
    if (!os) throw StageError(std::string(stage) + ": cannot write " + path);
    os << text;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

std::string layers_compact(const std::vector<int>& layers) {
    std::string s;
    for (size_t i = 0; i < layers.size(); ++i) {
        if (i) s += '+';
        s += std::to_string(layers[i]);
    }
    return s;
}

}  // namespace

void cmd_synth(const ExperimentConfig& cfg) {
    cfg.validate();
    ensure_output_dir(cfg);
    try {
        const Model model = init_model(cfg.model);
        save_checkpoint(model, cfg.resolve(cfg.checkpoint));

        const SampleSet corpus = synth_corpus(cfg.seed, cfg.counts);
        save_samples(corpus, cfg.resolve(cfg.corpus_path));

        const EvalSet evalset = synth_evalset(cfg.seed, cfg.n_calib, cfg.n_eval);
        save_evalset(evalset, cfg.resolve(cfg.evalset_path));
        save_annotation(make_annotation(evalset, corpus.tokenizer),
                        cfg.resolve(cfg.annotation_path));
        save_qa(synth_qa(evalset), cfg.resolve(cfg.qa_path));

        write_manifest("synth", cfg, {},
                       {cfg.checkpoint, cfg.corpus_path, cfg.evalset_path,
                        cfg.annotation_path, cfg.qa_path});
    } catch (const StageError&) {
        throw;
    } catch (const Error& e) {
        throw StageError(std::string("synth: ") + e.what());
    }
}

void cmd_extract(const ExperimentConfig& cfg) {
    cfg.validate();
    ensure_output_dir(cfg);
    try {
        const Model model = stage_model(cfg);
        const SampleSet corpus = load_samples(cfg.resolve(cfg.corpus_path));
        const std::string corpus_hash = hash_hex(hash_file(cfg.resolve(cfg.corpus_path)));

        CollectOptions opts;
        opts.layers = cfg.extract_layers;
        opts.max_new = cfg.extract_max_new;
        const CollectResult collected = collect_records(model, corpus, opts);
        const auto kept = filter_weak(collected.records, cfg.epsilon);

        json report;
        report["format"] = "cas-extract-report";
        report["version"] = 1;
        report["samples"] = corpus.size();
        report["records"] = collected.records.size();
        report["dropped_not_found"] = collected.dropped_not_found;
        report["kept_after_filter"] = kept.size();

        for (CpvKind kind : {CpvKind::VFV, CpvKind::MRV}) {
            const auto records = select_records(kept, kind);
            ContextPreferenceVector cpv = fit_cpv(records, kind, cfg.lambda, cfg.epsilon);
            cpv.cv_r2 = crossval(records, kind, cfg.folds, cfg.lambda);
            cpv.source_corpus_hash = corpus_hash;
            const std::string& path = kind == CpvKind::VFV ? cfg.vfv_path : cfg.mrv_path;
            save_cpv(cpv, cfg.resolve(path));

            json kj;
            kj["n_used"] = cpv.n_used;
            json layers = json::object();
            for (const auto& [layer, r2] : cpv.r2_in_sample) {
                layers[std::to_string(layer)] = {{"r2_in_sample", r2},
                                                 {"cv_r2", cpv.cv_r2.at(layer)}};
            }
            kj["layers"] = std::move(layers);
            report[cpv_kind_name(kind)] = std::move(kj);
        }
        write_text(cfg.resolve("extract_report.json"), report.dump(2) + "\n", "extract");
        write_manifest("extract", cfg, {cfg.corpus_path},
                       {cfg.vfv_path, cfg.mrv_path, "extract_report.json"});
    } catch (const StageError&) {
        throw;
    } catch (const Error& e) {
        throw StageError(std::string("extract: ") + e.what());
    }
}

void cmd_calibrate(const ExperimentConfig& cfg) {
    cfg.validate();
    ensure_output_dir(cfg);
    try {
        const Model model = stage_model(cfg);
        const EvalSet evalset = load_evalset(cfg.resolve(cfg.evalset_path));
        const ObjectAnnotation ann = load_annotation(cfg.resolve(cfg.annotation_path));
        const Tokenizer tok = Tokenizer::toy();

        const auto captions = generate_captions(model, tok, evalset.calibration,
                                                cfg.eval_max_new, nullptr, nullptr);
        std::vector<MentionList> mentions;
        mentions.reserve(captions.size());
        for (const auto& c : captions) {
            mentions.push_back(extract_objects(tok.decode(c.tokens), ann, c.image_id));
        }

        PositionPrior prior = estimate_prior(mentions, BucketScheme::default13());
        prior.temperature = cfg.temperature;
        bool fallback = false;
        try {
            prior.c = temper(prior.p, cfg.temperature);
        } catch (const AllZeroPrior&) {
            // No hallucinated object tokens anywhere: fall back to a
            // constant-one gate and flag it in the report.
            prior.c.assign(prior.p.size(), 1.0);
            fallback = true;
        }
        for (const auto& img : evalset.calibration) {
            prior.calibration_ids.push_back(img.image_id);
        }
        save_prior(prior, cfg.resolve(cfg.prior_path));

        json report;
        report["format"] = "cas-calibrate-report";
        report["version"] = 1;
        report["calibration_images"] = evalset.calibration.size();
        report["temperature"] = cfg.temperature;
        report["fallback_constant_one"] = fallback;
        json empties = json::array();
        for (size_t b = 0; b < prior.object_tokens.size(); ++b) {
            if (prior.object_tokens[b] == 0) empties.push_back(b);
        }
        report["empty_buckets"] = std::move(empties);
        write_text(cfg.resolve("calibrate_report.json"), report.dump(2) + "\n", "calibrate");
        write_manifest("calibrate", cfg, {cfg.evalset_path, cfg.annotation_path},
                       {cfg.prior_path, "calibrate_report.json"});
    } catch (const StageError&) {
        throw;
    } catch (const Error& e) {
        throw StageError(std::string("calibrate: ") + e.what());
    }
}

LoadedArtifacts load_artifacts(const ExperimentConfig& cfg, bool need_cpvs,
                               bool need_prior) {
    LoadedArtifacts art;
    art.model = stage_model(cfg);
    art.corpus = load_samples(cfg.resolve(cfg.corpus_path));
    art.evalset = load_evalset(cfg.resolve(cfg.evalset_path));
    art.annotation = load_annotation(cfg.resolve(cfg.annotation_path));
    if (need_cpvs) {
        art.vfv = load_cpv_checked(cfg.resolve(cfg.vfv_path), cfg.model.d_model,
                                   cfg.model.n_layers);
        art.mrv = load_cpv_checked(cfg.resolve(cfg.mrv_path), cfg.model.d_model,
                                   cfg.model.n_layers);
    }
    if (need_prior) {
        art.prior = load_prior(cfg.resolve(cfg.prior_path));
        // The calibration split must never touch an evaluation image.
        std::set<std::string> calib_ids(art.prior->calibration_ids.begin(),
                                        art.prior->calibration_ids.end());
        for (const auto& img : art.evalset.evaluation) {
            if (calib_ids.count(img.image_id)) {
                throw StageError("calibration and evaluation image sets overlap on " +
                                 img.image_id);
            }
        }
    }
    return art;
}

EvalRunResult run_configuration(const LoadedArtifacts& art, const ExperimentConfig& cfg,
                                const InjectionSpec& spec) {
    const Tokenizer& tok = art.corpus.tokenizer;
    const bool steered = spec.alpha != 0.0 || spec.beta != 0.0;

    InjectionHandle handle;
    handle.spec = spec;
    handle.vfv = art.vfv;
    handle.mrv = art.mrv;

    EvalRunResult res;
    const auto captions =
        generate_captions(art.model, tok, art.evalset.evaluation, cfg.eval_max_new,
                          steered ? &handle : nullptr, &res.application_count);

    std::vector<MentionList> mentions;
    std::vector<std::string> image_ids;
    std::vector<std::vector<int>> aligned;
    for (const auto& c : captions) {
        const std::vector<int> cut = length_align(c.tokens, cfg.length_limit);
        mentions.push_back(extract_objects(tok.decode(cut), art.annotation, c.image_id));
        image_ids.push_back(c.image_id);
        aligned.push_back(cut);
    }
    res.halluc = chair(mentions, image_ids, art.annotation, cfg.macro_cover);
    res.quality = text_quality(aligned);

    // Probe pref: mean preference signal over the counterfactual samples,
    // read from the step logits that produced each focus token.
    double sum = 0.0;
    for (const auto& s : art.corpus.counterfactual) {
        const PrefixEmbedding prefix = make_prefix(s, art.model.cfg.d_model);
        const auto plus = first_token_candidates(s.y_plus, tok);
        const auto minus = first_token_candidates(s.y_minus, tok);
        GenerationTrace trace;
        if (steered) {
            InjectionHandle h = handle;
            trace = steer_generate(art.model, h, prefix, s.question, cfg.extract_max_new);
        } else {
            trace = generate_greedy(art.model, prefix, s.question, cfg.extract_max_new,
                                    nullptr);
        }
        const auto t_star = locate_focus(trace.tokens, plus, minus);
        if (!t_star) continue;
        sum += read_pref(trace.step_logits[*t_star].cast<double>(), plus, minus);
        ++res.probe_n;
    }
    if (res.probe_n > 0) res.mean_pref = sum / res.probe_n;
    return res;
}

namespace {

json result_to_json(const EvalRunResult& r) {
    json j;
    j["hallucination"] = halluc_to_json(r.halluc);
    j["text_quality"] = {{"rep6", r.quality.rep6}, {"mattr50", r.quality.mattr50}};
    j["mean_pref"] = r.mean_pref;
    j["probe_n"] = r.probe_n;
    j["application_count"] = r.application_count;
    return j;
}

const char* kRowHeader =
    "label,alpha,beta,layers,gate,chair_s,chair_i,f1,cover,rep6,mattr50,"
    "mean_pref,probe_n,degenerate\n";

std::string row_csv(const ReportRow& row) {
    std::string s = row.label;
    s += ',' + format_double(row.alpha);
    s += ',' + format_double(row.beta);
    s += ',' + layers_compact(row.layers);
    s += ',' + row.gate;
    s += ',' + format_double(row.result.halluc.chair_s);
    s += ',' + format_double(row.result.halluc.chair_i);
    s += ',' + format_double(row.result.halluc.f1);
    s += ',' + format_double(row.result.halluc.cover);
    s += ',' + format_double(row.result.quality.rep6);
    s += ',' + format_double(row.result.quality.mattr50);
    s += ',' + format_double(row.result.mean_pref);
    s += ',' + std::to_string(row.result.probe_n);
    s += ',';
    s += row.degenerate ? '1' : '0';
    s += '\n';
    return s;
}

json row_to_json(const ReportRow& row) {
    json j;
    j["label"] = row.label;
    j["alpha"] = row.alpha;
    j["beta"] = row.beta;
    j["layers"] = row.layers;
    j["gate"] = row.gate;
    j["result"] = result_to_json(row.result);
    j["degenerate"] = row.degenerate;
    return j;
}

}  // namespace

EvalRunResult cmd_eval(const ExperimentConfig& cfg) {
    cfg.validate();
    ensure_output_dir(cfg);
    try {
        const bool need_prior = cfg.injection.gate == GateKind::TemperedPrior;
        LoadedArtifacts art = load_artifacts(cfg, true, need_prior);
        InjectionSpec spec = cfg.injection;
        if (need_prior) spec.prior = *art.prior;
        const EvalRunResult res = run_configuration(art, cfg, spec);

        json report;
        report["format"] = "cas-eval-report";
        report["version"] = 1;
        report["alpha"] = spec.alpha;
        report["beta"] = spec.beta;
        report["layers"] = spec.layers;
        report["gate"] = gate_name(spec.gate);
        report.update(result_to_json(res));
        write_text(cfg.resolve("eval_report.json"), report.dump(2) + "\n", "eval");

        ReportRow row{"eval", spec.alpha, spec.beta, spec.layers, gate_name(spec.gate),
                      res, false};
        write_text(cfg.resolve("eval_report.csv"), std::string(kRowHeader) + row_csv(row),
                   "eval");

        std::vector<std::string> inputs = {cfg.corpus_path, cfg.evalset_path,
                                           cfg.annotation_path, cfg.vfv_path, cfg.mrv_path};
        if (need_prior) inputs.push_back(cfg.prior_path);
        write_manifest("eval", cfg, inputs, {"eval_report.json", "eval_report.csv"});
        return res;
    } catch (const StageError&) {
        throw;
    } catch (const Error& e) {
        throw StageError(std::string("eval: ") + e.what());
    }
}

SweepGrid::Mode sweep_mode_from_name(const std::string& name) {
    if (name == "vfv_only") return SweepGrid::Mode::VfvOnly;
    if (name == "mrv_only") return SweepGrid::Mode::MrvOnly;
    if (name == "joint") return SweepGrid::Mode::Joint;
    if (name == "window_ablation") return SweepGrid::Mode::WindowAblation;
    throw ConfigInvalid("unknown sweep mode '" + name + "'");
}

std::string sweep_mode_name(SweepGrid::Mode mode) {
    switch (mode) {
        case SweepGrid::Mode::VfvOnly: return "vfv_only";
        case SweepGrid::Mode::MrvOnly: return "mrv_only";
        case SweepGrid::Mode::Joint: return "joint";
        case SweepGrid::Mode::WindowAblation: return "window_ablation";
    }
    return "?";
}

std::vector<ReportRow> cmd_sweep(const ExperimentConfig& cfg, const SweepGrid& grid,
                                 int workers) {
    cfg.validate();
    ensure_output_dir(cfg);
    // Grid points in deterministic order; the vanilla row always leads.
    // Grid-shape problems are configuration errors, not stage failures.
    struct Point {
        std::string label;
        double alpha, beta;
        std::vector<int> layers;
    };
    std::vector<Point> points;
    points.push_back({"vanilla", 0.0, 0.0, cfg.injection.layers});
    {
        switch (grid.mode) {
            case SweepGrid::Mode::VfvOnly:
                if (grid.alphas.empty()) throw ConfigInvalid("sweep: empty alpha axis");
                for (double a : grid.alphas) {
                    points.push_back({"alpha=" + format_double(a), a, 0.0,
                                      cfg.injection.layers});
                }
                break;
            case SweepGrid::Mode::MrvOnly:
                if (grid.betas.empty()) throw ConfigInvalid("sweep: empty beta axis");
                for (double b : grid.betas) {
                    points.push_back({"beta=" + format_double(b), 0.0, b,
                                      cfg.injection.layers});
                }
                break;
            case SweepGrid::Mode::Joint:
                if (grid.alphas.empty() || grid.betas.empty()) {
                    throw ConfigInvalid("sweep: empty alpha or beta axis");
                }
                for (double a : grid.alphas) {
                    for (double b : grid.betas) {
                        points.push_back({"alpha=" + format_double(a) +
                                              ",beta=" + format_double(b),
                                          a, b, cfg.injection.layers});
                    }
                }
                break;
            case SweepGrid::Mode::WindowAblation:
                if (grid.windows.empty()) throw ConfigInvalid("sweep: empty window axis");
                for (const auto& w : grid.windows) {
                    if (w.empty()) throw ConfigInvalid("sweep: empty layer window");
                    points.push_back({"layers=" + layers_compact(w), cfg.injection.alpha,
                                      cfg.injection.beta, w});
                }
                break;
        }
    }
    try {
        // Ablation studies run with the gate pinned to one.
        const LoadedArtifacts art = load_artifacts(cfg, true, false);
        std::vector<ReportRow> rows(points.size());
        std::atomic<size_t> next{0};
        std::vector<std::string> errors(points.size());
        auto work = [&]() {
            for (size_t i = next.fetch_add(1); i < points.size(); i = next.fetch_add(1)) {
                try {
                    InjectionSpec spec;
                    spec.alpha = points[i].alpha;
                    spec.beta = points[i].beta;
                    spec.layers = points[i].layers;
                    spec.gate = GateKind::ConstantOne;
                    rows[i] = ReportRow{points[i].label, spec.alpha, spec.beta,
                                        spec.layers, gate_name(spec.gate),
                                        run_configuration(art, cfg, spec), false};
                } catch (const std::exception& e) {
                    errors[i] = e.what();
                }
            }
        };
        int n_workers = workers > 0 ? workers
                                    : static_cast<int>(std::min<size_t>(
                                          points.size(),
                                          std::max(1u, std::thread::hardware_concurrency())));
        std::vector<std::thread> pool;
        for (int w = 0; w < n_workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
        for (size_t i = 0; i < points.size(); ++i) {
            if (!errors[i].empty()) {
                throw StageError("sweep point '" + points[i].label + "': " + errors[i]);
            }
        }

        const double vanilla_rep = rows.front().result.quality.rep6;
        for (auto& row : rows) {
            row.degenerate = vanilla_rep > 0.0 && row.result.quality.rep6 >= 3.0 * vanilla_rep;
        }

        std::string csv = kRowHeader;
        json jrows = json::array();
        for (const auto& row : rows) {
            csv += row_csv(row);
            jrows.push_back(row_to_json(row));
        }
        json report;
        report["format"] = "cas-sweep-report";
        report["version"] = 1;
        report["mode"] = sweep_mode_name(grid.mode);
        report["rows"] = std::move(jrows);
        write_text(cfg.resolve("sweep_report.json"), report.dump(2) + "\n", "sweep");
        write_text(cfg.resolve("sweep_report.csv"), csv, "sweep");
        write_manifest("sweep", cfg,
                       {cfg.corpus_path, cfg.evalset_path, cfg.annotation_path,
                        cfg.vfv_path, cfg.mrv_path},
                       {"sweep_report.json", "sweep_report.csv"});
        return rows;
    } catch (const StageError&) {
        throw;
    } catch (const Error& e) {
        throw StageError(std::string("sweep: ") + e.what());
    }
}

namespace {

struct Stats {
    double median = 0.0;
    double stddev = 0.0;
};

Stats stats_of(std::vector<double> v) {
    Stats s;
    if (v.empty()) return s;
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    s.median = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= n;
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    s.stddev = std::sqrt(var / n);
    return s;
}

// Per-token wall times via the gate callback, which the decode loop
// consults once per generated token.
std::vector<double> time_decode(const Model& model, const PrefixEmbedding& prefix,
                                const std::vector<int>& prompt, int n_tokens,
                                const InjectionRequest& base_request) {
    using clock = std::chrono::steady_clock;
    std::vector<clock::time_point> stamps;
    stamps.reserve(n_tokens + 4);
    InjectionRequest req = base_request;
    const auto inner = base_request.gate;
    req.gate = [&stamps, inner](int t) {
        stamps.push_back(clock::now());
        return inner ? inner(t) : 1.0f;
    };
    generate_greedy(model, prefix, prompt, n_tokens, &req);
    std::vector<double> us;
    // The first couple of calls straddle prefill; keep steady-state steps.
    for (size_t i = 3; i < stamps.size(); ++i) {
        us.push_back(std::chrono::duration<double, std::micro>(stamps[i] - stamps[i - 1])
                         .count());
    }
    return us;
}

}  // namespace

LatencyReport cmd_latency(const ExperimentConfig& cfg, int n_tokens) {
    cfg.validate();
    if (n_tokens < 500) {
        throw ConfigInvalid("latency: n_tokens must be >= 500, got " +
                            std::to_string(n_tokens));
    }
    ensure_output_dir(cfg);
    try {
        ExperimentConfig big = cfg;
        big.model.max_seq = std::max(cfg.model.max_seq, n_tokens + 64);
        const LoadedArtifacts art = load_artifacts(big, true, false);
        const Tokenizer& tok = art.corpus.tokenizer;
        const std::vector<int> prompt = caption_prompt(tok);
        const PrefixEmbedding prefix =
            make_prefix(art.evalset.evaluation.front().prefix, big.model.d_model);

        // Vanilla timing runs the same instrumented path with an empty
        // residual map, so only the injection math differs.
        InjectionRequest vanilla_req;
        const auto vanilla = stats_of(time_decode(art.model, prefix, prompt, n_tokens,
                                                  vanilla_req));

        InjectionHandle handle;
        handle.spec = cfg.injection;
        handle.spec.gate = GateKind::ConstantOne;
        handle.vfv = art.vfv;
        handle.mrv = art.mrv;
        if (handle.spec.alpha == 0.0 && handle.spec.beta == 0.0) {
            handle.spec.alpha = -2.0;  // make sure the steered run does real work
            handle.spec.beta = 2.0;
        }
        const InjectionRequest steered_req = build_request(handle, big.model.d_model);
        const auto steered = stats_of(time_decode(art.model, prefix, prompt, n_tokens,
                                                  steered_req));

        LatencyReport rep;
        rep.vanilla_median_us = vanilla.median;
        rep.vanilla_std_us = vanilla.stddev;
        rep.steered_median_us = steered.median;
        rep.steered_std_us = steered.stddev;
        rep.ratio = vanilla.median > 0.0 ? steered.median / vanilla.median : 0.0;
        rep.n_tokens = n_tokens;

        json j;
        j["format"] = "cas-latency-report";
        j["version"] = 1;
        j["n_tokens"] = n_tokens;
        j["vanilla_median_us"] = rep.vanilla_median_us;
        j["vanilla_std_us"] = rep.vanilla_std_us;
        j["steered_median_us"] = rep.steered_median_us;
        j["steered_std_us"] = rep.steered_std_us;
        j["ratio"] = rep.ratio;
        write_text(cfg.resolve("latency_report.json"), j.dump(2) + "\n", "latency");
        std::string csv = "n_tokens,vanilla_median_us,vanilla_std_us,steered_median_us,"
                          "steered_std_us,ratio\n";
        csv += std::to_string(n_tokens) + ',' + format_double(rep.vanilla_median_us) + ',' +
               format_double(rep.vanilla_std_us) + ',' + format_double(rep.steered_median_us) +
               ',' + format_double(rep.steered_std_us) + ',' + format_double(rep.ratio) + '\n';
        write_text(cfg.resolve("latency_report.csv"), csv, "latency");
        return rep;
    } catch (const StageError&) {
        throw;
    } catch (const Error& e) {
        throw StageError(std::string("latency: ") + e.what());
    }
}

PopeReport cmd_pope(const ExperimentConfig& cfg) {
    cfg.validate();
    ensure_output_dir(cfg);
    try {
        const Model model = stage_model(cfg);
        const EvalSet evalset = load_evalset(cfg.resolve(cfg.evalset_path));
        const auto items = load_qa(cfg.resolve(cfg.qa_path));
        const Tokenizer tok = Tokenizer::toy();
        const auto yes_ids = first_token_candidates("yes", tok);

        std::map<std::string, const EvalImage*> by_id;
        for (const auto& img : evalset.evaluation) by_id[img.image_id] = &img;
        for (const auto& img : evalset.calibration) by_id[img.image_id] = &img;

        PopeReport rep;
        for (const auto& item : items) {
            auto it = by_id.find(item.image_id);
            if (it == by_id.end()) throw UnknownImage("qa image " + item.image_id);
            const PrefixEmbedding prefix = make_prefix(it->second->prefix, cfg.model.d_model);
            const std::vector<int> question = tok.encode_words(
                {"is", "there", "a", item.object, "in", "the", "picture", "?"});
            const GenerationTrace trace =
                generate_greedy(model, prefix, question, 1, nullptr);
            const bool predicted_yes = yes_ids.count(trace.tokens.front()) > 0;
            ++rep.total;
            if (predicted_yes == item.expected_yes) ++rep.correct;
            if (predicted_yes && item.expected_yes) ++rep.yes_tp;
            if (predicted_yes && !item.expected_yes) ++rep.yes_fp;
            if (!predicted_yes && item.expected_yes) ++rep.yes_fn;
        }
        rep.accuracy = rep.total > 0 ? 100.0 * rep.correct / rep.total : 0.0;
        const double prec = rep.yes_tp + rep.yes_fp > 0
                                ? static_cast<double>(rep.yes_tp) / (rep.yes_tp + rep.yes_fp)
                                : 0.0;
        const double rec = rep.yes_tp + rep.yes_fn > 0
                               ? static_cast<double>(rep.yes_tp) / (rep.yes_tp + rep.yes_fn)
                               : 0.0;
        rep.f1 = prec + rec > 0.0 ? 100.0 * 2.0 * prec * rec / (prec + rec) : 0.0;

        json j;
        j["format"] = "cas-pope-report";
        j["version"] = 1;
        j["total"] = rep.total;
        j["correct"] = rep.correct;
        j["accuracy"] = rep.accuracy;
        j["f1"] = rep.f1;
        write_text(cfg.resolve("pope_report.json"), j.dump(2) + "\n", "pope");
        write_manifest("pope", cfg, {cfg.evalset_path, cfg.qa_path}, {"pope_report.json"});
        return rep;
    } catch (const StageError&) {
        throw;
    } catch (const Error& e) {
        throw StageError(std::string("pope: ") + e.what());
    }
}

}  // namespace cas
