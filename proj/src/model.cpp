#include "cas/model.hpp"

#include <cmath>
#include <cstring>
#include <string>

#include "cas/errors.hpp"
#include "cas/rng.hpp"

namespace cas {

void ModelConfig::validate() const {
    if (n_layers < 1 || d_model < 1 || n_heads < 1 || d_mlp < 1 || max_seq < 1) {
        throw ConfigInvalid("model config: all sizes must be positive");
    }
    if (d_model % n_heads != 0) {
        throw ConfigInvalid("model config: d_model (" + std::to_string(d_model) +
                            ") not divisible by n_heads (" + std::to_string(n_heads) + ")");
    }
    if (vocab_size < 8) {
        throw ConfigInvalid("model config: vocab_size must be >= 8");
    }
}

namespace {

// Weight scheme, drawn from Rng(seed) in this exact order:
//   tok_emb, pos_emb (row-major, N(0,1)),
//   per layer: wq, wk, wv, wo ~ N(0, 1/sqrt(d)); w_in ~ N(0, 1/sqrt(d));
//              b_in ~ N(0, 0.1); w_out ~ N(0, 1/sqrt(d_mlp)); b_out ~ N(0, 0.1),
//   unemb ~ N(0, 2/sqrt(d)).
// LayerNorm gains start at 1, biases at 0 (not drawn).
void fill_normal(Rng& rng, MatF& m, double stddev) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            m(r, c) = static_cast<float>(rng.normal(0.0, stddev));
}

void fill_normal(Rng& rng, VecF& v, double stddev) {
    for (Eigen::Index i = 0; i < v.size(); ++i)
        v(i) = static_cast<float>(rng.normal(0.0, stddev));
}

VecF layernorm(const VecF& x, const VecF& g, const VecF& b) {
    const float mean = x.mean();
    const float var = (x.array() - mean).square().mean();
    const float inv = 1.0f / std::sqrt(var + 1e-5f);
    return (((x.array() - mean) * inv) * g.array() + b.array()).matrix();
}

float gelu(float x) {
    return 0.5f * x * (1.0f + std::erf(x * 0.7071067811865475f));
}

struct StepHooks {
    const std::map<int, VecF>* residuals = nullptr;  // layer -> residual
    float gamma = 0.0f;
    std::map<int, VecF>* record = nullptr;           // layer -> mlp output
    const std::vector<char>* record_mask = nullptr;  // per-layer record flag
    const std::function<void(int, int, const VecF&)>* observe = nullptr;
};

// One generation session: private KV cache over one shared immutable model.
class Session {
public:
    explicit Session(const Model& m)
        : m_(m), k_cache_(m.cfg.n_layers), v_cache_(m.cfg.n_layers) {}

    int pos() const { return pos_; }

    // Processes one position and returns the final residual-stream state.
    VecF step(const VecF& input_emb, const StepHooks* hooks) {
        const auto& cfg = m_.cfg;
        if (pos_ >= cfg.max_seq) {
            throw LengthOverflow("sequence exceeds max_seq");
        }
        const int hd = cfg.d_model / cfg.n_heads;
        VecF x = input_emb + m_.pos_emb.row(pos_).transpose();

        for (int l = 0; l < cfg.n_layers; ++l) {
            const LayerWeights& lw = m_.layers[l];
            const VecF a = layernorm(x, lw.ln1_g, lw.ln1_b);
            const VecF q = lw.wq * a;
            k_cache_[l].push_back(lw.wk * a);
            v_cache_[l].push_back(lw.wv * a);

            const int n_keys = static_cast<int>(k_cache_[l].size());
            VecF attn_mix(cfg.d_model);
            const float scale = 1.0f / std::sqrt(static_cast<float>(hd));
            std::vector<float> scores(n_keys);
            for (int h = 0; h < cfg.n_heads; ++h) {
                const int off = h * hd;
                float max_s = -std::numeric_limits<float>::infinity();
                for (int j = 0; j < n_keys; ++j) {
                    scores[j] = q.segment(off, hd).dot(k_cache_[l][j].segment(off, hd)) * scale;
                    max_s = std::max(max_s, scores[j]);
                }
                float denom = 0.0f;
                for (int j = 0; j < n_keys; ++j) {
                    scores[j] = std::exp(scores[j] - max_s);
                    denom += scores[j];
                }
                VecF head_out = VecF::Zero(hd);
                for (int j = 0; j < n_keys; ++j) {
                    head_out += (scores[j] / denom) * v_cache_[l][j].segment(off, hd);
                }
                attn_mix.segment(off, hd) = head_out;
            }
            x += lw.wo * attn_mix;

            const VecF b = layernorm(x, lw.ln2_g, lw.ln2_b);
            VecF pre = lw.w_in * b + lw.b_in;
            for (Eigen::Index i = 0; i < pre.size(); ++i) pre(i) = gelu(pre(i));
            VecF mlp = lw.w_out * pre + lw.b_out;
            if (lw.plant.size() > 0) mlp += lw.plant;

            if (hooks) {
                if (hooks->record && hooks->record_mask && (*hooks->record_mask)[l]) {
                    (*hooks->record)[l] = mlp;
                }
                if (hooks->residuals) {
                    auto it = hooks->residuals->find(l);
                    if (it != hooks->residuals->end()) {
                        if (hooks->observe && *hooks->observe) {
                            (*hooks->observe)(l, pos_, mlp);
                        }
                        // Skip the add when the delta is exactly zero so a
                        // zero-strength injection is bitwise transparent.
                        if (hooks->gamma != 0.0f && !it->second.isZero(0.0f)) {
                            mlp += hooks->gamma * it->second;
                        }
                    }
                }
            }
            x += mlp;
        }
        ++pos_;
        return x;
    }

    VecF logits_from(const VecF& x) const {
        return m_.unemb * layernorm(x, m_.lnf_g, m_.lnf_b);
    }

private:
    const Model& m_;
    int pos_ = 0;
    std::vector<std::vector<VecF>> k_cache_;
    std::vector<std::vector<VecF>> v_cache_;
};

int argmax_lowest_id(const VecF& logits) {
    int best = 0;
    for (int i = 1; i < logits.size(); ++i) {
        if (logits(i) > logits(best)) best = i;
    }
    return best;
}

void check_token_range(const Model& m, const std::vector<int>& tokens) {
    for (int t : tokens) {
        if (t < 0 || t >= m.cfg.vocab_size) {
            throw IdOutOfVocab("token id " + std::to_string(t) + " out of vocab");
        }
    }
}

}  // namespace

Model init_model(const ModelConfig& config) {
    config.validate();
    Model m;
    m.cfg = config;
    Rng rng(config.seed);
    const int d = config.d_model;
    const double ws = 1.0 / std::sqrt(static_cast<double>(d));
    const double ms = 1.0 / std::sqrt(static_cast<double>(config.d_mlp));

    m.tok_emb.resize(config.vocab_size, d);
    fill_normal(rng, m.tok_emb, 1.0);
    m.pos_emb.resize(config.max_seq, d);
    fill_normal(rng, m.pos_emb, 1.0);

    m.layers.resize(config.n_layers);
    for (auto& lw : m.layers) {
        lw.ln1_g = VecF::Ones(d);
        lw.ln1_b = VecF::Zero(d);
        lw.ln2_g = VecF::Ones(d);
        lw.ln2_b = VecF::Zero(d);
        lw.wq.resize(d, d); fill_normal(rng, lw.wq, ws);
        lw.wk.resize(d, d); fill_normal(rng, lw.wk, ws);
        lw.wv.resize(d, d); fill_normal(rng, lw.wv, ws);
        lw.wo.resize(d, d); fill_normal(rng, lw.wo, ws);
        lw.w_in.resize(config.d_mlp, d); fill_normal(rng, lw.w_in, ws);
        lw.b_in.resize(config.d_mlp); fill_normal(rng, lw.b_in, 0.1);
        lw.w_out.resize(d, config.d_mlp); fill_normal(rng, lw.w_out, ms);
        lw.b_out.resize(d); fill_normal(rng, lw.b_out, 0.1);
    }
    m.lnf_g = VecF::Ones(d);
    m.lnf_b = VecF::Zero(d);
    m.unemb.resize(config.vocab_size, d);
    fill_normal(rng, m.unemb, 2.0 * ws);
    return m;
}

uint64_t Model::weight_checksum() const {
    uint64_t h = 14695981039346656037ull;  // FNV-1a over raw weight bytes
    auto mix = [&h](const float* p, size_t n) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(p);
        for (size_t i = 0; i < n * sizeof(float); ++i) {
            h ^= bytes[i];
            h *= 1099511628211ull;
        }
    };
    auto mix_m = [&](const MatF& m) { mix(m.data(), static_cast<size_t>(m.size())); };
    auto mix_v = [&](const VecF& v) { mix(v.data(), static_cast<size_t>(v.size())); };
    mix_m(tok_emb);
    mix_m(pos_emb);
    for (const auto& lw : layers) {
        mix_v(lw.ln1_g); mix_v(lw.ln1_b); mix_v(lw.ln2_g); mix_v(lw.ln2_b);
        mix_m(lw.wq); mix_m(lw.wk); mix_m(lw.wv); mix_m(lw.wo);
        mix_m(lw.w_in); mix_v(lw.b_in); mix_m(lw.w_out); mix_v(lw.b_out);
        if (lw.plant.size() > 0) mix_v(lw.plant);
    }
    mix_v(lnf_g); mix_v(lnf_b);
    mix_m(unemb);
    return h;
}

Model plant_bias(const Model& model, int layer, const Vec& direction, double magnitude) {
    if (layer < 0 || layer >= model.cfg.n_layers) {
        throw LayerOutOfRange("plant_bias: layer " + std::to_string(layer));
    }
    if (direction.size() != model.cfg.d_model) {
        throw DimensionMismatch("plant_bias: direction dim != d_model");
    }
    const double norm = direction.norm();
    if (norm == 0.0) {
        throw ZeroVector("plant_bias: zero direction");
    }
    Model out = model;
    VecF add = (direction * (magnitude / norm)).cast<float>();
    auto& plant = out.layers[layer].plant;
    if (plant.size() == 0) plant = VecF::Zero(model.cfg.d_model);
    plant += add;
    return out;
}

ForwardTrace forward(const Model& model, const PrefixEmbedding& prefix,
                     const std::vector<int>& tokens,
                     const std::vector<int>& record_at,
                     const std::vector<HookSite>& read_sites) {
    check_token_range(model, tokens);
    const int k = prefix.size();
    const int total = k + static_cast<int>(tokens.size());
    if (total > model.cfg.max_seq) {
        throw LengthOverflow("forward: sequence length exceeds max_seq");
    }
    if (k > 0 && prefix.vectors.cols() != model.cfg.d_model) {
        throw DimensionMismatch("forward: prefix dim != d_model");
    }
    ForwardTrace trace;
    if (record_at.empty()) return trace;

    std::vector<char> record_pos(total, 0);
    for (int p : record_at) {
        if (p < 0 || p >= total) {
            throw PositionOutOfRange("forward: record position " + std::to_string(p));
        }
        record_pos[p] = 1;
    }
    std::vector<char> layer_mask(model.cfg.n_layers, 0);
    for (const HookSite& s : read_sites) {
        if (s.layer < 0 || s.layer >= model.cfg.n_layers) {
            throw LayerOutOfRange("forward: hook layer " + std::to_string(s.layer));
        }
        layer_mask[s.layer] = 1;
    }

    Session sess(model);
    for (int p = 0; p < total; ++p) {
        const VecF emb = p < k ? VecF(prefix.vectors.row(p).transpose())
                               : VecF(model.tok_emb.row(tokens[p - k]).transpose());
        std::map<int, VecF> rec;
        StepHooks hooks;
        hooks.record = record_pos[p] ? &rec : nullptr;
        hooks.record_mask = &layer_mask;
        const VecF x = sess.step(emb, record_pos[p] ? &hooks : nullptr);
        if (record_pos[p]) {
            trace.positions.push_back(p);
            trace.logits.push_back(sess.logits_from(x));
            trace.mlp_outputs[p] = std::move(rec);
        }
    }
    return trace;
}

GenerationTrace generate_greedy(const Model& model, const PrefixEmbedding& prefix,
                                const std::vector<int>& prompt, int max_new,
                                const InjectionRequest* injection) {
    check_token_range(model, prompt);
    GenerationTrace trace;
    if (max_new <= 0) return trace;

    const int k = prefix.size();
    const int n_prompt = static_cast<int>(prompt.size());
    if (k + n_prompt + max_new > model.cfg.max_seq) {
        throw LengthOverflow("generate: prefix + prompt + max_new exceeds max_seq");
    }
    if (k + n_prompt == 0) {
        throw LengthOverflow("generate: empty prefix and prompt");
    }
    if (injection) {
        for (const auto& [l, r] : injection->residuals) {
            if (l < 0 || l >= model.cfg.n_layers) {
                throw LayerOutOfRange("generate: injection layer " + std::to_string(l));
            }
            if (r.size() != model.cfg.d_model) {
                throw DimensionMismatch("generate: injection residual dim != d_model");
            }
        }
    }

    auto gate_at = [&](int t) -> float {
        if (!injection) return 0.0f;
        return injection->gate ? injection->gate(t) : 1.0f;
    };
    auto make_hooks = [&](float gamma) {
        StepHooks h;
        h.residuals = &injection->residuals;
        h.gamma = gamma;
        h.observe = &injection->observe;
        return h;
    };
    auto any_nonzero = [&](float gamma) {
        if (gamma == 0.0f) return false;
        for (const auto& [l, r] : injection->residuals) {
            if (!r.isZero(0.0f)) return true;
        }
        return false;
    };

    Session sess(model);
    VecF x;
    // Prefill. The injection touches only the last prefix+prompt position.
    for (int p = 0; p < k + n_prompt; ++p) {
        const VecF emb = p < k ? VecF(prefix.vectors.row(p).transpose())
                               : VecF(model.tok_emb.row(prompt[p - k]).transpose());
        const bool last = (p == k + n_prompt - 1);
        if (last && injection) {
            const float g0 = gate_at(0);
            StepHooks hooks = make_hooks(g0);
            x = sess.step(emb, &hooks);
            trace.prefill_injected = any_nonzero(g0);
            ++trace.application_count;
        } else {
            x = sess.step(emb, nullptr);
        }
    }

    // Decode. Every newly generated token is fed back with the hook armed,
    // the last one included; its logits are simply never used.
    VecF logits = sess.logits_from(x);
    int tok = argmax_lowest_id(logits);
    trace.tokens.push_back(tok);
    trace.step_logits.push_back(std::move(logits));
    trace.per_step_gates.push_back(injection ? gate_at(0) : 0.0f);
    trace.per_step_injected.push_back(trace.prefill_injected ? 1 : 0);

    for (int g = 0; g + 1 <= max_new; ++g) {
        if (g + 1 > max_new - 1 && !injection) break;  // vanilla: no trailing pass needed
        const VecF emb = model.tok_emb.row(trace.tokens[g]).transpose();
        const float gamma = gate_at(g + 1);
        if (injection) {
            StepHooks hooks = make_hooks(gamma);
            x = sess.step(emb, &hooks);
            ++trace.application_count;
        } else {
            x = sess.step(emb, nullptr);
        }
        if (g + 1 <= max_new - 1) {
            VecF lg = sess.logits_from(x);
            tok = argmax_lowest_id(lg);
            trace.tokens.push_back(tok);
            trace.step_logits.push_back(std::move(lg));
            trace.per_step_gates.push_back(injection ? gamma : 0.0f);
            trace.per_step_injected.push_back(injection && any_nonzero(gamma) ? 1 : 0);
        }
    }
    return trace;
}

}  // namespace cas
