#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cas/corpus.hpp"
#include "cas/linalg.hpp"
#include "cas/model.hpp"

namespace cas {

// Per-sample focus position, continuous preference value, and MLP
// outputs at t*-1 for every configured layer.
struct PreferenceRecord {
    std::string sample_id;
    std::string concept_group;
    Setup setup = Setup::Counterfactual;
    int t_star = 0;                  // generated-sequence index of the answer's first token
    double pref = 0.0;
    std::map<int, Vec> activations;  // layer -> MLP output at t*-1, promoted to f64
};

enum class CpvKind { VFV, MRV };

std::string cpv_kind_name(CpvKind k);
CpvKind cpv_kind_from_name(const std::string& name);

struct ContextPreferenceVector {
    CpvKind kind = CpvKind::VFV;
    std::map<int, Vec> per_layer;
    std::map<int, double> intercepts;
    std::map<int, double> r2_in_sample;
    std::map<int, double> cv_r2;
    double lambda = 1.0;
    double epsilon = 0.1;
    int n_used = 0;
    int d_model = 0;
    std::string source_corpus_hash;
};

// Earliest generated index whose token is in either candidate set;
// nullopt when neither answer ever appears.
std::optional<int> locate_focus(const std::vector<int>& generated,
                                const std::set<int>& cands_plus,
                                const std::set<int>& cands_minus);

// pref = max over T+ of logits minus max over T- (raw logits, Eq-style).
double read_pref(const Vec& logits, const std::set<int>& cands_plus,
                 const std::set<int>& cands_minus);

struct CollectOptions {
    std::vector<int> layers;   // extraction layers; empty = all model layers
    int max_new = 160;
};

struct CollectResult {
    std::vector<PreferenceRecord> records;  // sorted by sample_id
    int dropped_not_found = 0;
};

// Greedy-generates every sample (no injection), locates t*, and re-reads
// logits and per-layer MLP outputs at t*-1 through the forward path.
CollectResult collect_records(const Model& model, const SampleSet& samples,
                              const CollectOptions& opts = {});

std::vector<PreferenceRecord> filter_weak(const std::vector<PreferenceRecord>& records,
                                          double epsilon = 0.1);

// Records matching a CPV kind: VFV <- counterfactual, MRV <- sym_a u sym_b.
std::vector<PreferenceRecord> select_records(const std::vector<PreferenceRecord>& records,
                                             CpvKind kind);

ContextPreferenceVector fit_cpv(const std::vector<PreferenceRecord>& records,
                                CpvKind kind, double lambda = 1.0,
                                double epsilon_used = 0.1);

// Group-aware k-fold out-of-sample R^2 per layer (concepts never cross folds).
std::map<int, double> crossval(const std::vector<PreferenceRecord>& records,
                               CpvKind kind, int folds = 5, double lambda = 1.0);

void save_cpv(const ContextPreferenceVector& cpv, const std::string& path);
ContextPreferenceVector load_cpv(const std::string& path);

// Refuses CPVs whose dimension or layer set does not match the model.
ContextPreferenceVector load_cpv_checked(const std::string& path, int d_model,
                                         int n_layers);

}  // namespace cas
