// Python bindings for the main operations: ridge fitting, the toy model,
// steering, position-prior tempering, and the text metrics.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cas/corpus.hpp"
#include "cas/extraction.hpp"
#include "cas/linalg.hpp"
#include "cas/metrics.hpp"
#include "cas/model.hpp"
#include "cas/steering.hpp"
#include "cas/tokenizer.hpp"
#include "cas/tpp.hpp"

namespace py = pybind11;
using namespace cas;

PYBIND11_MODULE(_cas, m) {
    m.doc() = "Context-preference steering core";

    // --- linear algebra ---------------------------------------------------
    py::class_<RidgeSolution>(m, "RidgeSolution")
        .def_readonly("weights", &RidgeSolution::weights)
        .def_readonly("intercept", &RidgeSolution::intercept)
        .def_readonly("lambda_", &RidgeSolution::lambda)
        .def_readonly("r_squared", &RidgeSolution::r_squared);
    m.def("ridge_fit", &ridge_fit, py::arg("X"), py::arg("y"), py::arg("lambda_"));
    m.def("cosine", &cosine, py::arg("u"), py::arg("v"));

    // --- toy model ---------------------------------------------------------
    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_readwrite("n_layers", &ModelConfig::n_layers)
        .def_readwrite("d_model", &ModelConfig::d_model)
        .def_readwrite("n_heads", &ModelConfig::n_heads)
        .def_readwrite("d_mlp", &ModelConfig::d_mlp)
        .def_readwrite("vocab_size", &ModelConfig::vocab_size)
        .def_readwrite("max_seq", &ModelConfig::max_seq)
        .def_readwrite("seed", &ModelConfig::seed);
    py::class_<Model>(m, "Model")
        .def_property_readonly("config", [](const Model& mm) { return mm.cfg; })
        .def("weight_checksum", &Model::weight_checksum);
    m.def("init_model", &init_model, py::arg("config"));
    m.def("plant_bias", &plant_bias, py::arg("model"), py::arg("layer"),
          py::arg("direction"), py::arg("magnitude"));

    m.def(
        "generate_greedy",
        [](const Model& model, const MatF& prefix, const std::vector<int>& prompt,
           int max_new) {
            const GenerationTrace t =
                generate_greedy(model, PrefixEmbedding{prefix}, prompt, max_new);
            return t.tokens;
        },
        py::arg("model"), py::arg("prefix"), py::arg("prompt"), py::arg("max_new"),
        "Greedy generation; returns the generated token ids.");

    m.def(
        "steer_generate",
        [](const Model& model, const MatF& prefix, const std::vector<int>& prompt,
           int max_new, const std::map<int, Vec>& vfv_layers, double alpha) {
            InjectionHandle handle;
            ContextPreferenceVector vfv;
            vfv.kind = CpvKind::VFV;
            vfv.per_layer = vfv_layers;
            vfv.d_model = model.cfg.d_model;
            handle.vfv = std::move(vfv);
            handle.spec.alpha = alpha;
            handle.spec.layers.clear();
            for (const auto& [l, v] : vfv_layers) handle.spec.layers.push_back(l);
            const GenerationTrace t =
                steer_generate(model, handle, PrefixEmbedding{prefix}, prompt, max_new);
            return py::make_tuple(t.tokens, t.application_count);
        },
        py::arg("model"), py::arg("prefix"), py::arg("prompt"), py::arg("max_new"),
        py::arg("vfv_layers"), py::arg("alpha"),
        "Steered greedy generation with a constant-one gate; returns "
        "(tokens, application_count).");

    // --- corpus / extraction ------------------------------------------------
    m.def("object_direction", &object_direction, py::arg("object_id"), py::arg("d_model"));
    m.def(
        "make_prefix",
        [](const std::vector<std::string>& objects, int k, double noise_scale,
           uint64_t seed, int d_model) {
            PrefixGenSpec spec;
            spec.objects = objects;
            spec.k = k;
            spec.noise_scale = noise_scale;
            spec.seed = seed;
            return make_prefix(spec, d_model).vectors;
        },
        py::arg("objects"), py::arg("k"), py::arg("noise_scale"), py::arg("seed"),
        py::arg("d_model"));
    m.def("read_pref", &read_pref, py::arg("logits"), py::arg("cands_plus"),
          py::arg("cands_minus"));
    m.def(
        "locate_focus",
        [](const std::vector<int>& generated, const std::set<int>& plus,
           const std::set<int>& minus) -> py::object {
            const auto t = locate_focus(generated, plus, minus);
            return t ? py::cast(*t) : py::none();
        },
        py::arg("generated"), py::arg("cands_plus"), py::arg("cands_minus"));

    // --- tokenizer -----------------------------------------------------------
    py::class_<Tokenizer>(m, "Tokenizer")
        .def_static("toy", &Tokenizer::toy)
        .def("size", &Tokenizer::size)
        .def("id", &Tokenizer::id, py::arg("surface"))
        .def("surface", &Tokenizer::surface, py::arg("id"))
        .def("encode_words", &Tokenizer::encode_words, py::arg("words"))
        .def("decode", &Tokenizer::decode, py::arg("ids"));
    m.def("first_token_candidates", &first_token_candidates, py::arg("answer"),
          py::arg("tokenizer"));

    // --- position prior -------------------------------------------------------
    m.def(
        "bucket_of",
        [](long position) { return bucket_of(position, BucketScheme::default13()); },
        py::arg("position"));
    m.def("temper", &temper, py::arg("p"), py::arg("temperature"));

    // --- text metrics ----------------------------------------------------------
    m.def("rep6", &rep6, py::arg("tokens"));
    m.def("mattr", &mattr, py::arg("tokens"), py::arg("window") = 50);
}
