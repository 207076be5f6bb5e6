// cas: corpus synthesis, vector extraction, calibration, steered
// evaluation, sweeps, and latency measurement from one config file.

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <CLI/CLI.hpp>

#include "cas/errors.hpp"
#include "cas/pipeline.hpp"

namespace {

// Optional per-flag overrides applied on top of the config file.
struct Overrides {
    std::optional<uint64_t> seed;
    std::optional<std::string> output_dir;
    std::optional<double> alpha, beta, temperature, lambda, epsilon;
    std::optional<std::string> gate;
    std::vector<int> layers;
    std::optional<int> eval_max_new, extract_max_new;
};

void add_override_flags(CLI::App* cmd, Overrides& ov) {
    cmd->add_option("--seed", ov.seed, "Experiment seed");
    cmd->add_option("--output-dir", ov.output_dir,
                    "Output root (the CAS_OUTPUT_ROOT env var wins over this)");
    cmd->add_option("--alpha", ov.alpha, "VFV strength");
    cmd->add_option("--beta", ov.beta, "MRV strength");
    cmd->add_option("--gate", ov.gate, "Gate kind: constant_one | tempered_prior");
    cmd->add_option("--layers", ov.layers, "Injection layer window");
    cmd->add_option("--temperature", ov.temperature, "Prior temperature");
    cmd->add_option("--lambda", ov.lambda, "Ridge penalty");
    cmd->add_option("--epsilon", ov.epsilon, "Weak-preference filter threshold");
    cmd->add_option("--eval-max-new", ov.eval_max_new, "Caption length budget");
    cmd->add_option("--extract-max-new", ov.extract_max_new, "Extraction decode budget");
}

cas::ExperimentConfig make_config(const std::string& config_path, const Overrides& ov) {
    cas::ExperimentConfig cfg;
    if (!config_path.empty()) cfg = cas::load_config(config_path);
    if (ov.seed) cfg.seed = *ov.seed;
    if (ov.output_dir) cfg.output_dir = *ov.output_dir;
    if (ov.alpha) cfg.injection.alpha = *ov.alpha;
    if (ov.beta) cfg.injection.beta = *ov.beta;
    if (ov.gate) {
        if (*ov.gate == "constant_one") cfg.injection.gate = cas::GateKind::ConstantOne;
        else if (*ov.gate == "tempered_prior") cfg.injection.gate = cas::GateKind::TemperedPrior;
        else throw cas::ConfigInvalid("unknown gate kind '" + *ov.gate + "'");
    }
    if (!ov.layers.empty()) cfg.injection.layers = ov.layers;
    if (ov.temperature) cfg.temperature = *ov.temperature;
    if (ov.lambda) cfg.lambda = *ov.lambda;
    if (ov.epsilon) cfg.epsilon = *ov.epsilon;
    if (ov.eval_max_new) cfg.eval_max_new = *ov.eval_max_new;
    if (ov.extract_max_new) cfg.extract_max_new = *ov.extract_max_new;
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Context-preference steering experiment harness"};
    app.require_subcommand(1);

    std::string config_path;
    app.add_option("--config", config_path, "Experiment config file (structured text)")
        ->check(CLI::ExistingFile);

    Overrides ov;

    CLI::App* synth = app.add_subcommand("synth", "Synthesize corpus, eval set, and model");
    CLI::App* extract = app.add_subcommand("extract", "Fit VFV/MRV from the corpus");
    CLI::App* calibrate = app.add_subcommand("calibrate", "Estimate the position prior");
    CLI::App* eval = app.add_subcommand("eval", "Steered evaluation with reports");
    CLI::App* sweep = app.add_subcommand("sweep", "Grid sweep over strengths or windows");
    CLI::App* latency = app.add_subcommand("latency", "Per-token latency comparison");
    CLI::App* pope = app.add_subcommand("pope", "Binary yes/no QA scorer");
    for (CLI::App* cmd : {synth, extract, calibrate, eval, sweep, latency, pope}) {
        add_override_flags(cmd, ov);
    }

    std::string mode = "joint";
    std::vector<double> alphas, betas;
    std::vector<std::string> window_specs;
    int workers = 0;
    sweep->add_option("--mode", mode, "vfv_only | mrv_only | joint | window_ablation");
    sweep->add_option("--alphas", alphas, "Alpha grid axis");
    sweep->add_option("--betas", betas, "Beta grid axis");
    sweep->add_option("--windows", window_specs, "Layer windows, e.g. 11+12+13+14");
    sweep->add_option("--workers", workers, "Worker threads (0 = hardware default)");

    int n_tokens = 500;
    latency->add_option("--n-tokens", n_tokens, "Tokens to decode (>= 500)");

    CLI11_PARSE(app, argc, argv);

    try {
        const cas::ExperimentConfig cfg = make_config(config_path, ov);
        if (synth->parsed()) {
            cas::cmd_synth(cfg);
            std::printf("synth: artifacts written to %s\n", cfg.output_root().c_str());
        } else if (extract->parsed()) {
            cas::cmd_extract(cfg);
            std::printf("extract: CPVs written to %s\n", cfg.output_root().c_str());
        } else if (calibrate->parsed()) {
            cas::cmd_calibrate(cfg);
            std::printf("calibrate: prior written to %s\n", cfg.output_root().c_str());
        } else if (eval->parsed()) {
            const cas::EvalRunResult res = cas::cmd_eval(cfg);
            std::printf("eval: CHAIR_S %.2f CHAIR_I %.2f F1 %.2f Cover %.2f rep6 %.4f "
                        "mattr50 %.4f mean_pref %.4f\n",
                        res.halluc.chair_s, res.halluc.chair_i, res.halluc.f1,
                        res.halluc.cover, res.quality.rep6, res.quality.mattr50,
                        res.mean_pref);
        } else if (sweep->parsed()) {
            cas::SweepGrid grid;
            grid.mode = cas::sweep_mode_from_name(mode);
            grid.alphas = alphas;
            grid.betas = betas;
            for (const auto& spec : window_specs) {
                std::vector<int> w;
                size_t pos = 0;
                while (pos < spec.size()) {
                    size_t next = spec.find('+', pos);
                    if (next == std::string::npos) next = spec.size();
                    w.push_back(std::stoi(spec.substr(pos, next - pos)));
                    pos = next + 1;
                }
                grid.windows.push_back(std::move(w));
            }
            const auto rows = cas::cmd_sweep(cfg, grid, workers);
            std::printf("sweep: %zu rows written to %s\n", rows.size(),
                        cfg.output_root().c_str());
        } else if (latency->parsed()) {
            const cas::LatencyReport rep = cas::cmd_latency(cfg, n_tokens);
            std::printf("latency: vanilla %.2f us/token, steered %.2f us/token, ratio %.3f\n",
                        rep.vanilla_median_us, rep.steered_median_us, rep.ratio);
        } else if (pope->parsed()) {
            const cas::PopeReport rep = cas::cmd_pope(cfg);
            std::printf("pope: accuracy %.2f%% f1 %.2f over %ld items\n", rep.accuracy,
                        rep.f1, rep.total);
        }
    } catch (const cas::ConfigInvalid& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "stage error: %s\n", e.what());
        return 3;
    }
    return 0;
}
