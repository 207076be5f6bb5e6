#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cas/corpus.hpp"
#include "cas/evalset.hpp"
#include "cas/extraction.hpp"
#include "cas/metrics.hpp"
#include "cas/model.hpp"
#include "cas/steering.hpp"
#include "cas/tpp.hpp"

namespace cas {

// Full experiment description; loadable from a structured config file
// with per-field CLI overrides applied afterwards.
struct ExperimentConfig {
    uint64_t seed = 3;
    std::string output_dir = "out";

    ModelConfig model;
    std::string checkpoint = "model.casm";

    std::string corpus_path = "corpus.json";
    SynthCounts counts;

    std::string evalset_path = "evalset.json";
    std::string annotation_path = "annotation.json";
    std::string qa_path = "qa.json";
    int n_calib = 24;
    int n_eval = 24;

    std::string vfv_path = "vfv.json";
    std::string mrv_path = "mrv.json";
    std::vector<int> extract_layers;  // empty = all model layers
    double lambda = 1.0;
    double epsilon = 0.1;
    int folds = 5;
    int extract_max_new = 160;

    InjectionSpec injection;          // alpha, beta, layers, gate kind
    double temperature = 2.0;
    std::string prior_path = "prior.json";

    int eval_max_new = 96;
    int length_limit = 64;
    bool macro_cover = false;

    // Optional planted bias (test scaffold exposed for sweeps/fixtures).
    std::optional<int> plant_layer;
    double plant_magnitude = 0.0;
    uint64_t plant_direction_seed = 0;

    void validate() const;

    // Joins relative artifact paths onto the output root (the env var
    // CAS_OUTPUT_ROOT overrides output_dir when set).
    std::string resolve(const std::string& path) const;
    std::string output_root() const;
};

ExperimentConfig load_config(const std::string& path);
void save_config(const ExperimentConfig& cfg, const std::string& path);

uint64_t fnv1a_bytes(const void* data, size_t n, uint64_t h = 14695981039346656037ull);
uint64_t hash_file(const std::string& path);
std::string hash_hex(uint64_t h);

// Stage manifest: input and output artifact hashes, no timestamps.
void write_manifest(const std::string& stage, const ExperimentConfig& cfg,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs);

// Loads the stage model: the checkpoint when present on disk, otherwise a
// fresh deterministic init from the config (plus the optional plant).
Model stage_model(const ExperimentConfig& cfg);

// One evaluated configuration: hallucination + text-quality metrics over
// the evaluation split and mean pref over a probe subset of the corpus.
struct EvalRunResult {
    HallucinationReport halluc;
    TextQualityReport quality;
    double mean_pref = 0.0;
    int probe_n = 0;
    long application_count = 0;
};

struct SweepGrid {
    enum class Mode { VfvOnly, MrvOnly, Joint, WindowAblation };
    Mode mode = Mode::Joint;
    std::vector<double> alphas;
    std::vector<double> betas;
    std::vector<std::vector<int>> windows;
};

SweepGrid::Mode sweep_mode_from_name(const std::string& name);
std::string sweep_mode_name(SweepGrid::Mode mode);

struct ReportRow {
    std::string label;
    double alpha = 0.0;
    double beta = 0.0;
    std::vector<int> layers;
    std::string gate;
    EvalRunResult result;
    bool degenerate = false;
};

// Pipeline stages. Each writes its artifacts plus a manifest and throws
// StageError (with stage context) on failure.
void cmd_synth(const ExperimentConfig& cfg);
void cmd_extract(const ExperimentConfig& cfg);
void cmd_calibrate(const ExperimentConfig& cfg);
EvalRunResult cmd_eval(const ExperimentConfig& cfg);
std::vector<ReportRow> cmd_sweep(const ExperimentConfig& cfg, const SweepGrid& grid,
                                 int workers = 0);

struct LatencyReport {
    double vanilla_median_us = 0.0;
    double vanilla_std_us = 0.0;
    double steered_median_us = 0.0;
    double steered_std_us = 0.0;
    double ratio = 0.0;
    int n_tokens = 0;
};

LatencyReport cmd_latency(const ExperimentConfig& cfg, int n_tokens);

struct PopeReport {
    long total = 0;
    long correct = 0;
    long yes_tp = 0, yes_fp = 0, yes_fn = 0;
    double accuracy = 0.0;
    double f1 = 0.0;
};

PopeReport cmd_pope(const ExperimentConfig& cfg);

// Shared by eval and sweep: runs one configuration end to end against
// already-loaded artifacts.
struct LoadedArtifacts {
    Model model;
    SampleSet corpus;
    EvalSet evalset;
    ObjectAnnotation annotation;
    std::optional<ContextPreferenceVector> vfv;
    std::optional<ContextPreferenceVector> mrv;
    std::optional<PositionPrior> prior;
};

LoadedArtifacts load_artifacts(const ExperimentConfig& cfg, bool need_cpvs,
                               bool need_prior);

EvalRunResult run_configuration(const LoadedArtifacts& art, const ExperimentConfig& cfg,
                                const InjectionSpec& spec);

}  // namespace cas
