#include <doctest/doctest.h>

#include <cstdio>
#include <filesystem>

#include "cas/checkpoint.hpp"
#include "cas/errors.hpp"
#include "cas/model.hpp"
#include "cas/rng.hpp"

using namespace cas;

namespace {

ModelConfig small_config(uint64_t seed = 0) {
    ModelConfig cfg;
    cfg.n_layers = 6;
    cfg.d_model = 32;
    cfg.n_heads = 4;
    cfg.d_mlp = 64;
    cfg.vocab_size = 64;
    cfg.max_seq = 128;
    cfg.seed = seed;
    return cfg;
}

PrefixEmbedding random_prefix(int k, int d, uint64_t seed) {
    Rng rng(seed);
    PrefixEmbedding p;
    p.vectors.resize(k, d);
    for (int r = 0; r < k; ++r)
        for (int c = 0; c < d; ++c) p.vectors(r, c) = static_cast<float>(rng.normal());
    return p;
}

}  // namespace

TEST_CASE("config validation") {
    ModelConfig cfg = small_config();
    CHECK_NOTHROW(cfg.validate());
    cfg.d_model = 30;  // not divisible by n_heads
    CHECK_THROWS_AS(cfg.validate(), ConfigInvalid);
    cfg = small_config();
    cfg.n_layers = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigInvalid);
    cfg = small_config();
    cfg.vocab_size = 4;
    CHECK_THROWS_AS(cfg.validate(), ConfigInvalid);
}

TEST_CASE("init is deterministic in the seed") {
    const Model a = init_model(small_config(5));
    const Model b = init_model(small_config(5));
    const Model c = init_model(small_config(6));
    CHECK(a.weight_checksum() == b.weight_checksum());
    CHECK(a.weight_checksum() != c.weight_checksum());
}

TEST_CASE("generation agrees bit-for-bit with the full forward pass") {
    const Model m = init_model(small_config(1));
    const PrefixEmbedding prefix = random_prefix(3, 32, 2);
    const std::vector<int> prompt = {5, 9, 13};
    const GenerationTrace gen = generate_greedy(m, prefix, prompt, 8, nullptr);
    REQUIRE(gen.tokens.size() == 8);

    // Re-run the whole sequence through the incremental forward API and
    // compare the logits that produced each generated token.
    for (size_t i = 0; i < gen.tokens.size(); ++i) {
        std::vector<int> tokens = prompt;
        tokens.insert(tokens.end(), gen.tokens.begin(), gen.tokens.begin() + i);
        const int pos = prefix.size() + static_cast<int>(tokens.size()) - 1;
        const ForwardTrace ft = forward(m, prefix, tokens, {pos}, {});
        REQUIRE(ft.logits.size() == 1);
        CHECK(ft.logits[0] == gen.step_logits[i]);
    }
}

TEST_CASE("generation edge cases") {
    const Model m = init_model(small_config(1));
    const PrefixEmbedding prefix = random_prefix(2, 32, 3);
    CHECK(generate_greedy(m, prefix, {1}, 0, nullptr).tokens.empty());
    CHECK_THROWS_AS(generate_greedy(m, prefix, {999}, 4, nullptr), IdOutOfVocab);
    CHECK_THROWS_AS(generate_greedy(m, prefix, {1}, 1000, nullptr), LengthOverflow);
    CHECK_THROWS_AS(generate_greedy(m, PrefixEmbedding{}, {}, 4, nullptr), LengthOverflow);
}

TEST_CASE("greedy argmax breaks ties toward the lowest token id") {
    // Hand-built single-layer model whose unembedding repeats one row, so
    // two vocabulary entries always tie exactly.
    Model m = init_model(small_config(4));
    m.unemb.row(7) = m.unemb.row(3);
    const PrefixEmbedding prefix = random_prefix(1, 32, 9);
    const GenerationTrace gen = generate_greedy(m, prefix, {0}, 6, nullptr);
    for (size_t i = 0; i < gen.tokens.size(); ++i) {
        CHECK(gen.tokens[i] != 7);  // id 3 must win every exact tie
    }
}

TEST_CASE("plant_bias shifts the planted layer's MLP output in place") {
    const Model base = init_model(small_config(2));
    Vec dir = Vec::Zero(32);
    dir(4) = 2.0;  // unit direction is e4
    const double magnitude = 3.0;
    const Model planted = plant_bias(base, 2, dir, magnitude);

    const PrefixEmbedding prefix = random_prefix(2, 32, 4);
    const std::vector<int> tokens = {1, 2, 3};
    const std::vector<HookSite> sites = {{2, HookKind::MlpOutput}};
    const ForwardTrace fa = forward(base, prefix, tokens, {4}, sites);
    const ForwardTrace fb = forward(planted, prefix, tokens, {4}, sites);
    const VecF diff = fb.mlp_outputs.at(4).at(2) - fa.mlp_outputs.at(4).at(2);
    CHECK(std::abs(diff(4) - magnitude) <= 1e-5);
    for (int i = 0; i < 32; ++i) {
        if (i != 4) CHECK(std::abs(diff(i)) <= 1e-5);
    }

    CHECK_THROWS_AS(plant_bias(base, 99, dir, 1.0), LayerOutOfRange);
    CHECK_THROWS_AS(plant_bias(base, 0, Vec::Zero(32), 1.0), ZeroVector);
    CHECK_THROWS_AS(plant_bias(base, 0, Vec::Zero(16), 1.0), DimensionMismatch);
}

TEST_CASE("checkpoint round-trips bit-exactly") {
    const Model m = plant_bias(init_model(small_config(3)), 1, Vec::Ones(32), 0.5);
    const std::string path =
        (std::filesystem::temp_directory_path() / "cas_test_model.casm").string();
    save_checkpoint(m, path);
    const Model back = load_checkpoint(path);
    CHECK(back.cfg == m.cfg);
    CHECK(back.weight_checksum() == m.weight_checksum());

    const PrefixEmbedding prefix = random_prefix(2, 32, 8);
    const GenerationTrace a = generate_greedy(m, prefix, {1, 2}, 6, nullptr);
    const GenerationTrace b = generate_greedy(back, prefix, {1, 2}, 6, nullptr);
    CHECK(a.tokens == b.tokens);
    std::remove(path.c_str());
}

TEST_CASE("injection arms prefill plus every generated token") {
    const Model m = init_model(small_config(6));
    const PrefixEmbedding prefix = random_prefix(2, 32, 5);
    InjectionRequest req;
    req.residuals[3] = VecF::Ones(32);
    req.gate = [](int) { return 1.0f; };
    const int max_new = 7;
    const GenerationTrace gen = generate_greedy(m, prefix, {1, 2}, max_new, &req);
    CHECK(gen.application_count == max_new + 1);
    CHECK(gen.prefill_injected);
    for (char inj : gen.per_step_injected) CHECK(inj == 1);

    // Vanilla runs never arm the hook.
    const GenerationTrace plain = generate_greedy(m, prefix, {1, 2}, max_new, nullptr);
    CHECK(plain.application_count == 0);
    CHECK_FALSE(plain.prefill_injected);
}

TEST_CASE("prefill injection touches only the last prompt position") {
    const Model m = init_model(small_config(7));
    const PrefixEmbedding prefix = random_prefix(2, 32, 6);
    const std::vector<int> prompt = {4, 5, 6};
    const int last_pos = prefix.size() + static_cast<int>(prompt.size()) - 1;

    std::vector<std::pair<int, VecF>> observed;  // (abs position, pre-injection h)
    InjectionRequest req;
    req.residuals[2] = VecF::Ones(32);
    req.gate = [](int) { return 1.0f; };
    req.observe = [&observed](int layer, int pos, const VecF& h) {
        CHECK(layer == 2);
        observed.emplace_back(pos, h);
    };
    generate_greedy(m, prefix, prompt, 4, &req);

    REQUIRE(!observed.empty());
    // The hook never fires before the last prefill position...
    CHECK(observed.front().first == last_pos);
    for (const auto& [pos, h] : observed) CHECK(pos >= last_pos);
    // ...and the state reaching it is bit-identical to the vanilla pass,
    // so earlier positions were untouched.
    const ForwardTrace ft =
        forward(m, prefix, prompt, {last_pos}, {{2, HookKind::MlpOutput}});
    CHECK(ft.mlp_outputs.at(last_pos).at(2) == observed.front().second);
}

TEST_CASE("zero-strength injection is bitwise transparent") {
    const Model m = init_model(small_config(8));
    const PrefixEmbedding prefix = random_prefix(3, 32, 7);
    const std::vector<int> prompt = {2, 3};

    InjectionRequest zero_gate;
    zero_gate.residuals[1] = VecF::Ones(32);
    zero_gate.gate = [](int) { return 0.0f; };
    InjectionRequest zero_residual;
    zero_residual.residuals[1] = VecF::Zero(32);
    zero_residual.gate = [](int) { return 1.0f; };

    const GenerationTrace plain = generate_greedy(m, prefix, prompt, 10, nullptr);
    for (const InjectionRequest* req : {&zero_gate, &zero_residual}) {
        const GenerationTrace gen = generate_greedy(m, prefix, prompt, 10, req);
        CHECK(gen.tokens == plain.tokens);
        for (size_t i = 0; i < plain.step_logits.size(); ++i) {
            CHECK(gen.step_logits[i] == plain.step_logits[i]);
        }
        CHECK_FALSE(gen.prefill_injected);
        CHECK(gen.application_count == 11);  // armed but inert
    }
}

TEST_CASE("forward guards") {
    const Model m = init_model(small_config(9));
    const PrefixEmbedding prefix = random_prefix(2, 32, 8);
    CHECK_THROWS_AS(forward(m, prefix, {1}, {99}, {}), PositionOutOfRange);
    CHECK_THROWS_AS(forward(m, prefix, {1}, {0}, {{99, HookKind::MlpOutput}}),
                    LayerOutOfRange);
    CHECK_THROWS_AS(forward(m, random_prefix(2, 16, 8), {1}, {0}, {}), DimensionMismatch);
}
