#include <doctest/doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "cas/corpus.hpp"
#include "cas/errors.hpp"
#include "cas/tokenizer.hpp"

using namespace cas;

namespace {

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
    std::ifstream is(path);
    return std::string(std::istreambuf_iterator<char>(is), {});
}

}  // namespace

TEST_CASE("toy tokenizer table shape") {
    const Tokenizer tok = Tokenizer::toy();
    CHECK(tok.size() <= 256);
    CHECK(tok.size() > 100);
    // Round trips for a few representative surfaces.
    for (const std::string s : {"blue", " blue", "Blue", " Blue", "what", " what", "?"}) {
        const int id = tok.id(s);
        REQUIRE(id >= 0);
        CHECK(tok.surface(id) == s);
    }
    CHECK(tok.id("zebra") == -1);
    CHECK(tok.surface(9999) == "<unk:9999>");
}

TEST_CASE("duplicate surfaces are rejected") {
    CHECK_THROWS_AS(Tokenizer::from_table({"a", "b", "a"}), ParseError);
}

TEST_CASE("word encoding uses leading-space forms after the first word") {
    const Tokenizer tok = Tokenizer::toy();
    const auto ids = tok.encode_words({"what", "color", "is", "the", "banana", "?"});
    REQUIRE(ids.size() == 6);
    CHECK(ids[0] == tok.id("what"));
    CHECK(ids[1] == tok.id(" color"));
    CHECK(ids[5] == tok.id("?"));
    CHECK(tok.decode(ids)[1] == " color");
    CHECK_THROWS_AS(tok.encode_words({"zebra"}), ParseError);
}

TEST_CASE("first-token candidate sets") {
    const Tokenizer tok = Tokenizer::toy();
    const auto ids = first_token_candidates("blue", tok);
    CHECK(ids.size() == 4);  // base, leading space, capitalized, both
    CHECK(ids.count(tok.id("blue")));
    CHECK(ids.count(tok.id(" blue")));
    CHECK(ids.count(tok.id("Blue")));
    CHECK(ids.count(tok.id(" Blue")));
    // Case variants normalize to the same set.
    CHECK(first_token_candidates("BLUE", tok) == ids);
    CHECK_THROWS_AS(first_token_candidates("zebra", tok), UntokenizableAnswer);
    CHECK_THROWS_AS(first_token_candidates("", tok), UntokenizableAnswer);
}

TEST_CASE("object directions are unit-norm and deterministic") {
    const Vec a = object_direction("apple", 64);
    const Vec b = object_direction("apple", 64);
    const Vec c = object_direction("orange", 64);
    CHECK(a == b);
    CHECK(a.norm() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(a != c);
}

TEST_CASE("prefix synthesis shape and reproducibility") {
    PrefixGenSpec spec;
    spec.objects = {"apple"};
    spec.k = 4;
    spec.seed = 42;
    const PrefixEmbedding p = make_prefix(spec, 64);
    CHECK(p.size() == 4);
    CHECK(p.vectors.cols() == 64);
    CHECK(p.vectors == make_prefix(spec, 64).vectors);
    spec.seed = 43;
    CHECK(p.vectors != make_prefix(spec, 64).vectors);
}

TEST_CASE("default corpus counts and validity") {
    const SampleSet set = synth_corpus(3);
    CHECK(set.counterfactual.size() == 51);
    CHECK(set.sym_a.size() == 55);
    CHECK(set.sym_b.size() == 55);
    CHECK(set.size() == 161);
    CHECK_NOTHROW(validate_samples(set));
    // Every sample's candidate token ids stay within the toy vocab.
    for (const ConflictSample* s : set.all()) {
        for (int id : first_token_candidates(s->y_plus, set.tokenizer)) {
            CHECK(id < 256);
        }
    }
}

TEST_CASE("corpus synthesis guards") {
    CHECK_THROWS_AS(synth_corpus(3, SynthCounts{0, 5, 5}), CountsTooSmall);
    CHECK_THROWS_AS(synth_corpus(3, SynthCounts{5, 5, 6}), CountsTooSmall);
}

TEST_CASE("validation catches tampering") {
    SampleSet set = synth_corpus(1, SynthCounts{8, 8, 8});

    SUBCASE("duplicate id") {
        set.counterfactual[1].sample_id = set.counterfactual[0].sample_id;
        CHECK_THROWS_AS(validate_samples(set), DuplicateId);
    }
    SUBCASE("y_plus equals y_minus") {
        set.counterfactual[0].y_minus = set.counterfactual[0].y_plus;
        CHECK_THROWS_AS(validate_samples(set), ParseError);
    }
    SUBCASE("candidate collision via case variants") {
        set.counterfactual[0].y_plus = "Yellow";  // collides with y_minus "yellow"
        set.counterfactual[0].y_minus = "yellow";
        CHECK_THROWS_AS(validate_samples(set), CandidateCollision);
    }
    SUBCASE("broken mirror") {
        set.sym_b[0].y_plus = "fish";
        set.sym_b[0].y_minus = "cat";
        CHECK_THROWS_AS(validate_samples(set), MirrorViolation);
    }
    SUBCASE("size mismatch between halves") {
        set.sym_b.pop_back();
        CHECK_THROWS_AS(validate_samples(set), MirrorViolation);
    }
}

TEST_CASE("corpus file round trip is byte-stable") {
    const SampleSet set = synth_corpus(5, SynthCounts{6, 4, 4});
    const std::string p1 = temp_path("cas_corpus_a.json");
    const std::string p2 = temp_path("cas_corpus_b.json");
    save_samples(set, p1);
    const SampleSet back = load_samples(p1);
    CHECK(back.size() == set.size());
    CHECK(back.counterfactual[2].question == set.counterfactual[2].question);
    CHECK(back.sym_a[1].prefix.seed == set.sym_a[1].prefix.seed);
    save_samples(back, p2);
    CHECK(slurp(p1) == slurp(p2));
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("corpus loader rejects foreign files") {
    const std::string path = temp_path("cas_corpus_bad.json");
    std::ofstream(path) << "{\"format\": \"something-else\"}";
    CHECK_THROWS_AS(load_samples(path), ParseError);
    std::ofstream(path) << "not json";
    CHECK_THROWS_AS(load_samples(path), ParseError);
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_samples(temp_path("cas_missing.json")), ParseError);
}
