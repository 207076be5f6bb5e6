#include "cas/steering.hpp"

#include <algorithm>

#include "cas/errors.hpp"

namespace cas {

namespace {

const Vec* layer_vector(const ContextPreferenceVector* cpv, int layer, double coeff,
                        const char* name) {
    if (coeff == 0.0) return nullptr;  // missing vector is a legal zero
    if (!cpv) {
        throw MissingLayerVector(std::string(name) + " CPV absent but its coefficient is nonzero");
    }
    auto it = cpv->per_layer.find(layer);
    if (it == cpv->per_layer.end()) {
        throw MissingLayerVector(std::string(name) + " CPV has no vector for layer " +
                                 std::to_string(layer));
    }
    return &it->second;
}

}  // namespace

Vec compose_residual(int layer, double alpha, double beta,
                     const ContextPreferenceVector* vfv,
                     const ContextPreferenceVector* mrv) {
    const Vec* v = layer_vector(vfv, layer, alpha, "VFV");
    const Vec* m = layer_vector(mrv, layer, beta, "MRV");
    Eigen::Index d = v ? v->size() : (m ? m->size() : 0);
    if (v && m && v->size() != m->size()) {
        throw DimensionMismatch("compose_residual: VFV/MRV dimension mismatch");
    }
    if (d == 0) {
        // Both coefficients zero; take the dimension from whichever CPV exists.
        if (vfv && !vfv->per_layer.empty()) d = vfv->per_layer.begin()->second.size();
        else if (mrv && !mrv->per_layer.empty()) d = mrv->per_layer.begin()->second.size();
    }
    Vec r = Vec::Zero(d);
    if (v) r += alpha * *v;
    if (m) r += beta * *m;
    return r;
}

Vec apply_injection(const Vec& h, const Vec& residual, double gamma) {
    if (h.size() != residual.size()) {
        throw DimensionMismatch("apply_injection: dimension mismatch");
    }
    return h + gamma * residual;
}

double gate_value(const InjectionSpec& spec, long t) {
    if (spec.gate == GateKind::ConstantOne) return 1.0;
    return gate(spec.prior, t);  // already clamped to [0, 1]
}

InjectionRequest build_request(const InjectionHandle& handle, int d_model) {
    InjectionRequest req;
    const ContextPreferenceVector* vfv = handle.vfv ? &*handle.vfv : nullptr;
    const ContextPreferenceVector* mrv = handle.mrv ? &*handle.mrv : nullptr;
    for (int layer : handle.spec.layers) {
        Vec r = compose_residual(layer, handle.spec.alpha, handle.spec.beta, vfv, mrv);
        if (r.size() == 0) r = Vec::Zero(d_model);
        if (r.size() != d_model) {
            throw DimensionMismatch("injection residual dim != d_model");
        }
        req.residuals[layer] = r.cast<float>();
    }
    const InjectionSpec spec = handle.spec;
    req.gate = [spec](int t) { return static_cast<float>(gate_value(spec, t)); };
    return req;
}

GenerationTrace steer_generate(const Model& model, InjectionHandle& handle,
                               const PrefixEmbedding& prefix,
                               const std::vector<int>& prompt, int max_new) {
    const InjectionRequest req = build_request(handle, model.cfg.d_model);
    GenerationTrace trace = generate_greedy(model, prefix, prompt, max_new, &req);
    handle.application_count += trace.application_count;
    return trace;
}

}  // namespace cas
