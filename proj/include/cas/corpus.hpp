#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cas/model.hpp"
#include "cas/tokenizer.hpp"

namespace cas {

enum class Setup { Counterfactual, SymmetricA, SymmetricB };

std::string setup_name(Setup s);
Setup setup_from_name(const std::string& name);

// Synthetic "image": a seeded object direction repeated across k prefix
// slots with small per-slot noise.
struct PrefixGenSpec {
    std::vector<std::string> objects;  // usually one; eval images may carry several
    int k = 4;
    double noise_scale = 0.25;
    uint64_t seed = 0;
};

struct ConflictSample {
    std::string sample_id;
    Setup setup = Setup::Counterfactual;
    PrefixGenSpec prefix;
    std::optional<Mat> prefix_inline;  // overrides the generator spec if set
    std::vector<int> question;         // token ids
    std::string y_plus;
    std::string y_minus;
    std::string concept_group;
};

struct SampleSet {
    std::vector<ConflictSample> counterfactual;
    std::vector<ConflictSample> sym_a;
    std::vector<ConflictSample> sym_b;
    Tokenizer tokenizer;

    size_t size() const { return counterfactual.size() + sym_a.size() + sym_b.size(); }
    std::vector<const ConflictSample*> all() const;
};

struct SynthCounts {
    int cf = 51;
    int sym_a = 55;
    int sym_b = 55;
};

// The per-object latent direction, shared between corpus synthesis and
// eval-set synthesis so "images" of the same object look alike.
Vec object_direction(const std::string& object_id, int d_model);

PrefixEmbedding make_prefix(const PrefixGenSpec& spec, int d_model);
PrefixEmbedding make_prefix(const ConflictSample& sample, int d_model);

SampleSet synth_corpus(uint64_t seed, const SynthCounts& counts = {});

void save_samples(const SampleSet& set, const std::string& path);
SampleSet load_samples(const std::string& path);

// Validation shared by loader and synthesizer: ids unique, y+ != y-,
// candidate sets disjoint, mirror bijection between the two halves.
void validate_samples(const SampleSet& set);

}  // namespace cas
