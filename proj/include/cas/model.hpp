#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "cas/linalg.hpp"

namespace cas {

using VecF = Eigen::VectorXf;
using MatF = Eigen::MatrixXf;

struct ModelConfig {
    int n_layers = 16;
    int d_model = 64;
    int n_heads = 4;
    int d_mlp = 256;
    int vocab_size = 256;
    int max_seq = 512;
    uint64_t seed = 0;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

// Continuous "image" channel: k embedding rows prepended before text tokens.
struct PrefixEmbedding {
    MatF vectors;  // k x d_model
    int size() const { return static_cast<int>(vectors.rows()); }
};

enum class HookKind { MlpOutput };

struct HookSite {
    int layer = 0;
    HookKind site = HookKind::MlpOutput;
};

// Logits and MLP-block outputs captured at requested absolute positions
// (prefix slots count toward the position index).
struct ForwardTrace {
    std::vector<int> positions;
    std::vector<VecF> logits;                         // parallel to positions
    std::map<int, std::map<int, VecF>> mlp_outputs;   // position -> layer -> h
};

// Residual injection, as seen by the model: a per-layer vector plus a
// gate over generated-token indices. Composition of the vectors from
// CPVs and strengths lives in the steering engine.
struct InjectionRequest {
    std::map<int, VecF> residuals;       // layer -> residual
    std::function<float(int)> gate;      // generated-token index -> gamma
    // Optional observer of the pre-injection MLP output at injected layers.
    std::function<void(int layer, int abs_pos, const VecF& h)> observe;
};

struct GenerationTrace {
    std::vector<int> tokens;
    std::vector<float> per_step_gates;     // gamma used when generating token i
    std::vector<char> per_step_injected;   // nonzero residual actually added
    bool prefill_injected = false;
    int application_count = 0;             // forward segments with the hook armed
    std::vector<VecF> step_logits;         // logits that produced each token
};

struct LayerWeights {
    VecF ln1_g, ln1_b, ln2_g, ln2_b;
    MatF wq, wk, wv, wo;   // d x d
    MatF w_in;             // d_mlp x d
    VecF b_in;
    MatF w_out;            // d x d_mlp
    VecF b_out;
    VecF plant;            // added to the MLP output at every position; empty if none
};

// Pre-norm decoder-only transformer, fp32 activations, weights drawn from
// a seeded documented scheme (see init_model in model.cpp). Immutable
// after construction; generation sessions own their private KV state.
struct Model {
    ModelConfig cfg;
    MatF tok_emb;   // vocab x d
    MatF pos_emb;   // max_seq x d
    std::vector<LayerWeights> layers;
    VecF lnf_g, lnf_b;
    MatF unemb;     // vocab x d

    uint64_t weight_checksum() const;
};

Model init_model(const ModelConfig& config);

// Returns a copy whose MLP output at `layer` is shifted by
// magnitude * direction/||direction|| at every position. Test scaffold
// giving extraction and steering a controllable ground truth.
Model plant_bias(const Model& model, int layer, const Vec& direction, double magnitude);

ForwardTrace forward(const Model& model, const PrefixEmbedding& prefix,
                     const std::vector<int>& tokens,
                     const std::vector<int>& record_at,
                     const std::vector<HookSite>& read_sites);

GenerationTrace generate_greedy(const Model& model, const PrefixEmbedding& prefix,
                                const std::vector<int>& prompt, int max_new,
                                const InjectionRequest* injection = nullptr);

}  // namespace cas
