#pragma once

#include <optional>
#include <vector>

#include "cas/extraction.hpp"
#include "cas/model.hpp"
#include "cas/tpp.hpp"

namespace cas {

enum class GateKind { ConstantOne, TemperedPrior };

struct InjectionSpec {
    std::vector<int> layers = {11, 12, 13, 14};
    double alpha = 0.0;  // VFV strength, signed
    double beta = 0.0;   // MRV strength, signed
    GateKind gate = GateKind::ConstantOne;
    PositionPrior prior;  // used when gate == TemperedPrior
};

// Immutable configuration plus a per-run application counter.
struct InjectionHandle {
    InjectionSpec spec;
    std::optional<ContextPreferenceVector> vfv;
    std::optional<ContextPreferenceVector> mrv;
    long application_count = 0;
};

// alpha * v_vfv(layer) + beta * v_mrv(layer); an absent CPV contributes
// zero only when its coefficient is zero.
Vec compose_residual(int layer, double alpha, double beta,
                     const ContextPreferenceVector* vfv,
                     const ContextPreferenceVector* mrv);

// h + gamma * residual (the per-site update of the steered forward pass).
Vec apply_injection(const Vec& h, const Vec& residual, double gamma);

double gate_value(const InjectionSpec& spec, long t);

// Builds the per-layer residual map the model consumes.
InjectionRequest build_request(const InjectionHandle& handle, int d_model);

GenerationTrace steer_generate(const Model& model, InjectionHandle& handle,
                               const PrefixEmbedding& prefix,
                               const std::vector<int>& prompt, int max_new);

}  // namespace cas
