#include <doctest/doctest.h>

#include <cstdio>
#include <filesystem>

#include "cas/errors.hpp"
#include "cas/extraction.hpp"
#include "cas/rng.hpp"

using namespace cas;

namespace {

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

Vec random_vec(Rng& rng, int n) {
    Vec v(n);
    for (int i = 0; i < n; ++i) v(i) = rng.normal();
    return v;
}

// Synthetic records whose pref is a noisy linear read-out of the layer-0
// activation along a known direction.
std::vector<PreferenceRecord> planted_records(int n, int d, const Vec& u,
                                              double noise, uint64_t seed,
                                              Setup setup = Setup::Counterfactual) {
    Rng rng(seed);
    std::vector<PreferenceRecord> records(n);
    const char* groups[] = {"g0", "g1", "g2", "g3", "g4", "g5", "g6", "g7"};
    for (int i = 0; i < n; ++i) {
        records[i].sample_id = "s" + std::to_string(1000 + i);
        records[i].concept_group = groups[i % 8];
        records[i].setup = setup;
        records[i].t_star = 1;
        const Vec h = random_vec(rng, d);
        records[i].activations[0] = h;
        records[i].pref = u.dot(h) + noise * rng.normal();
    }
    return records;
}

}  // namespace

TEST_CASE("locate_focus finds the earliest candidate") {
    const std::set<int> plus = {10, 11};
    const std::set<int> minus = {20};
    CHECK(locate_focus({1, 2, 20, 10}, plus, minus) == 2);
    CHECK(locate_focus({10}, plus, minus) == 0);
    CHECK_FALSE(locate_focus({1, 2, 3}, plus, minus).has_value());
    CHECK_FALSE(locate_focus({}, plus, minus).has_value());
}

TEST_CASE("read_pref matches an exhaustive oracle") {
    Rng rng(31);
    Vec logits(20);
    for (int i = 0; i < 20; ++i) logits(i) = rng.normal();
    const std::set<int> plus = {1, 4, 7};
    const std::set<int> minus = {2, 9};
    double best_p = logits(1), best_m = logits(2);
    for (int id : plus) best_p = std::max(best_p, logits(id));
    for (int id : minus) best_m = std::max(best_m, logits(id));
    CHECK(read_pref(logits, plus, minus) == best_p - best_m);

    CHECK_THROWS_AS(read_pref(logits, {}, minus), DimensionMismatch);
    CHECK_THROWS_AS(read_pref(logits, {99}, minus), IdOutOfVocab);
}

TEST_CASE("filter_weak keeps the boundary and enforces the minimum") {
    Vec u = Vec::Ones(4);
    auto records = planted_records(6, 4, u, 0.0, 1);
    records[0].pref = 0.1;    // exactly epsilon: kept
    records[1].pref = 0.099;  // below: dropped
    records[2].pref = -0.1;   // absolute value counts
    const auto kept = filter_weak(records, 0.1);
    CHECK(kept.size() == 5);
    for (const auto& r : kept) CHECK(std::abs(r.pref) >= 0.1);

    for (auto& r : records) r.pref = 0.0;
    CHECK_THROWS_AS(filter_weak(records, 0.1), TooFewSamples);
    CHECK_THROWS_AS(filter_weak(records, -1.0), NonFiniteInput);
}

TEST_CASE("select_records splits by setup and fit_cpv rejects mixtures") {
    auto cf = planted_records(4, 4, Vec::Ones(4), 0.0, 2, Setup::Counterfactual);
    auto sym = planted_records(4, 4, Vec::Ones(4), 0.0, 3, Setup::SymmetricA);
    std::vector<PreferenceRecord> mixed;
    mixed.insert(mixed.end(), cf.begin(), cf.end());
    mixed.insert(mixed.end(), sym.begin(), sym.end());

    CHECK(select_records(mixed, CpvKind::VFV).size() == 4);
    CHECK(select_records(mixed, CpvKind::MRV).size() == 4);
    CHECK_THROWS_AS(fit_cpv(mixed, CpvKind::VFV), SetupMismatch);
    CHECK_THROWS_AS(fit_cpv(cf, CpvKind::MRV), SetupMismatch);
    CHECK_THROWS_AS(fit_cpv({cf[0]}, CpvKind::VFV), TooFewSamples);
}

TEST_CASE("fit_cpv recovers a planted direction") {
    const int d = 32;
    Rng rng(41);
    Vec u = random_vec(rng, d);
    u.normalize();
    const auto records = planted_records(120, d, u, 0.05, 7);
    const ContextPreferenceVector cpv = fit_cpv(records, CpvKind::VFV, 1.0);
    CHECK(cpv.n_used == 120);
    CHECK(cpv.d_model == d);
    CHECK(cosine(cpv.per_layer.at(0), u) >= 0.95);
    CHECK(cpv.r2_in_sample.at(0) > 0.9);
}

TEST_CASE("a shared constant offset cancels out of the joint MRV fit") {
    const int d = 32, n = 60;
    Rng rng(43);
    Vec u = random_vec(rng, d);
    u.normalize();
    Vec offset = random_vec(rng, d);
    offset -= u * u.dot(offset);  // make the offset orthogonal to the signal
    offset *= 10.0 / offset.norm();

    // Two mirrored halves: identical offset, opposite-sign preferences.
    std::vector<PreferenceRecord> records;
    for (int i = 0; i < n; ++i) {
        Vec h = random_vec(rng, d);
        h -= offset * (offset.dot(h) / offset.squaredNorm());  // vary only off-axis
        for (int half = 0; half < 2; ++half) {
            PreferenceRecord r;
            r.sample_id = (half ? "b" : "a") + std::to_string(100 + i);
            r.concept_group = "g" + std::to_string(i % 6);
            r.setup = half ? Setup::SymmetricB : Setup::SymmetricA;
            const double sign = half ? -1.0 : 1.0;
            r.activations[0] = offset + sign * h;
            r.pref = sign * u.dot(h);
            records.push_back(std::move(r));
        }
    }
    const ContextPreferenceVector cpv = fit_cpv(records, CpvKind::MRV, 1.0);
    CHECK(std::abs(cosine(cpv.per_layer.at(0), offset)) <= 1e-3);
    CHECK(cosine(cpv.per_layer.at(0), u) >= 0.95);
}

TEST_CASE("cross-validation separates signal from noise") {
    const int d = 16;
    Rng rng(47);
    Vec u = random_vec(rng, d);
    u.normalize();

    const auto signal = planted_records(160, d, u, 0.05, 11);
    const auto cv_signal = crossval(signal, CpvKind::VFV, 5, 1.0);
    CHECK(cv_signal.at(0) > 0.8);

    // Permutation null: shuffling prefs kills out-of-fold R^2.
    auto null = signal;
    for (size_t i = null.size(); i > 1; --i) {
        std::swap(null[i - 1].pref, null[rng.below(i)].pref);
    }
    const auto cv_null = crossval(null, CpvKind::VFV, 5, 1.0);
    CHECK(cv_null.at(0) < 0.2);

    const auto few = planted_records(8, d, u, 0.0, 13);  // 8 records, 8 groups
    CHECK_THROWS_AS(crossval(few, CpvKind::VFV, 9, 1.0), TooFewGroups);
    CHECK_THROWS_AS(crossval({}, CpvKind::VFV, 5, 1.0), TooFewSamples);
}

TEST_CASE("cross-validation is deterministic") {
    const auto records = planted_records(80, 8, Vec::Ones(8), 0.3, 17);
    CHECK(crossval(records, CpvKind::VFV, 5, 1.0) ==
          crossval(records, CpvKind::VFV, 5, 1.0));
}

TEST_CASE("CPV files round-trip exactly") {
    const auto records = planted_records(40, 8, Vec::Ones(8), 0.1, 19);
    ContextPreferenceVector cpv = fit_cpv(records, CpvKind::VFV, 1.0, 0.1);
    cpv.cv_r2 = crossval(records, CpvKind::VFV, 4, 1.0);
    cpv.source_corpus_hash = "deadbeef00000000";
    const std::string path = temp_path("cas_cpv_test.json");
    save_cpv(cpv, path);
    const ContextPreferenceVector back = load_cpv(path);
    CHECK(back.kind == cpv.kind);
    CHECK(back.per_layer.at(0) == cpv.per_layer.at(0));  // exact doubles
    CHECK(back.intercepts.at(0) == cpv.intercepts.at(0));
    CHECK(back.cv_r2.at(0) == cpv.cv_r2.at(0));
    CHECK(back.source_corpus_hash == cpv.source_corpus_hash);

    CHECK_NOTHROW(load_cpv_checked(path, 8, 4));
    CHECK_THROWS_AS(load_cpv_checked(path, 16, 4), DimMismatch);
    std::remove(path.c_str());
}

TEST_CASE("collect_records walks the corpus deterministically") {
    ModelConfig mc;
    mc.n_layers = 6;
    mc.d_model = 32;
    mc.n_heads = 4;
    mc.d_mlp = 64;
    mc.max_seq = 256;
    mc.seed = 5;
    const Model model = init_model(mc);
    const SampleSet set = synth_corpus(7, SynthCounts{10, 6, 6});

    CollectOptions opts;
    opts.layers = {2, 4};
    opts.max_new = 64;
    const CollectResult res = collect_records(model, set, opts);
    CHECK(res.records.size() + res.dropped_not_found == set.size());
    for (size_t i = 1; i < res.records.size(); ++i) {
        CHECK(res.records[i - 1].sample_id < res.records[i].sample_id);
    }
    for (const auto& r : res.records) {
        CHECK(r.activations.size() == 2);
        CHECK(r.activations.count(2));
        CHECK(r.activations.count(4));
        CHECK(r.activations.at(2).size() == 32);
        CHECK(std::isfinite(r.pref));
    }
    const CollectResult again = collect_records(model, set, opts);
    REQUIRE(again.records.size() == res.records.size());
    for (size_t i = 0; i < res.records.size(); ++i) {
        CHECK(again.records[i].pref == res.records[i].pref);
        CHECK(again.records[i].t_star == res.records[i].t_star);
    }
}
