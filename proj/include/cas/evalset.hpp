#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cas/corpus.hpp"
#include "cas/metrics.hpp"
#include "cas/tokenizer.hpp"

namespace cas {

// A synthetic captioning "image": the prefix generator spec plus the
// ground-truth objects actually placed in the prefix.
struct EvalImage {
    std::string image_id;
    PrefixGenSpec prefix;
    std::vector<std::string> gt_objects;
};

// Calibration and evaluation splits with disjoint image ids.
struct EvalSet {
    std::vector<EvalImage> calibration;
    std::vector<EvalImage> evaluation;
};

// One binary existence question for the yes/no scorer.
struct QaItem {
    std::string image_id;
    std::string object;
    bool expected_yes = false;
};

// The canonical object names eval images draw from (a subset of the
// toy tokenizer's answer words).
const std::vector<std::string>& eval_object_vocabulary();

// Deterministic image synthesis: 1-3 objects per image, disjoint
// calibration/evaluation id spaces ("calib_NNN" / "eval_NNN").
EvalSet synth_evalset(uint64_t seed, int n_calib, int n_eval);

// Ground truth plus the synonym table covering every tokenizer surface
// variant of each canonical object.
ObjectAnnotation make_annotation(const EvalSet& set, const Tokenizer& tokenizer);

// The fixed captioning prompt ("what is in the picture ?").
std::vector<int> caption_prompt(const Tokenizer& tokenizer);

// One yes item (first GT object) and one no item (an absent object)
// per evaluation image.
std::vector<QaItem> synth_qa(const EvalSet& set);

void save_evalset(const EvalSet& set, const std::string& path);
EvalSet load_evalset(const std::string& path);

void save_qa(const std::vector<QaItem>& items, const std::string& path);
std::vector<QaItem> load_qa(const std::string& path);

}  // namespace cas
