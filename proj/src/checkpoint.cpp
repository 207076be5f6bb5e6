#include "cas/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "cas/errors.hpp"

namespace cas {

namespace {

constexpr char kMagic[4] = {'C', 'A', 'S', 'M'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_u64(std::ostream& os, uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
uint32_t read_u32(std::istream& is) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}
uint64_t read_u64(std::istream& is) {
    uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

void write_block(std::ostream& os, const float* p, size_t n) {
    os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(float)));
}
void read_block(std::istream& is, float* p, size_t n) {
    is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(float)));
    if (!is) throw FormatVersionMismatch("checkpoint truncated");
}

// Matrices are stored row-major regardless of Eigen's in-memory layout.
void write_mat(std::ostream& os, const MatF& m) {
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
    write_block(os, rm.data(), static_cast<size_t>(rm.size()));
}
void read_mat(std::istream& is, MatF& m, Eigen::Index rows, Eigen::Index cols) {
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
    read_block(is, rm.data(), static_cast<size_t>(rm.size()));
    m = rm;
}
void write_vec(std::ostream& os, const VecF& v) {
    write_block(os, v.data(), static_cast<size_t>(v.size()));
}
void read_vec(std::istream& is, VecF& v, Eigen::Index n) {
    v.resize(n);
    read_block(is, v.data(), static_cast<size_t>(n));
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ParseError("cannot open checkpoint for writing: " + path);
    os.write(kMagic, 4);
    write_u32(os, kVersion);
    const ModelConfig& c = model.cfg;
    write_u32(os, static_cast<uint32_t>(c.n_layers));
    write_u32(os, static_cast<uint32_t>(c.d_model));
    write_u32(os, static_cast<uint32_t>(c.n_heads));
    write_u32(os, static_cast<uint32_t>(c.d_mlp));
    write_u32(os, static_cast<uint32_t>(c.vocab_size));
    write_u32(os, static_cast<uint32_t>(c.max_seq));
    write_u64(os, c.seed);

    write_mat(os, model.tok_emb);
    write_mat(os, model.pos_emb);
    for (const auto& lw : model.layers) {
        write_vec(os, lw.ln1_g); write_vec(os, lw.ln1_b);
        write_vec(os, lw.ln2_g); write_vec(os, lw.ln2_b);
        write_mat(os, lw.wq); write_mat(os, lw.wk);
        write_mat(os, lw.wv); write_mat(os, lw.wo);
        write_mat(os, lw.w_in); write_vec(os, lw.b_in);
        write_mat(os, lw.w_out); write_vec(os, lw.b_out);
        VecF plant = lw.plant.size() > 0 ? lw.plant : VecF::Zero(c.d_model);
        write_vec(os, plant);
    }
    write_vec(os, model.lnf_g);
    write_vec(os, model.lnf_b);
    write_mat(os, model.unemb);
    if (!os) throw ParseError("checkpoint write failed: " + path);
}

Model load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError("cannot open checkpoint: " + path);
    char magic[4] = {};
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) {
        throw FormatVersionMismatch("not a CASM checkpoint: " + path);
    }
    const uint32_t version = read_u32(is);
    if (version != kVersion) {
        throw FormatVersionMismatch("unsupported checkpoint version " + std::to_string(version));
    }
    Model m;
    m.cfg.n_layers = static_cast<int>(read_u32(is));
    m.cfg.d_model = static_cast<int>(read_u32(is));
    m.cfg.n_heads = static_cast<int>(read_u32(is));
    m.cfg.d_mlp = static_cast<int>(read_u32(is));
    m.cfg.vocab_size = static_cast<int>(read_u32(is));
    m.cfg.max_seq = static_cast<int>(read_u32(is));
    m.cfg.seed = read_u64(is);
    if (!is) throw FormatVersionMismatch("checkpoint truncated");
    m.cfg.validate();

    const int d = m.cfg.d_model;
    read_mat(is, m.tok_emb, m.cfg.vocab_size, d);
    read_mat(is, m.pos_emb, m.cfg.max_seq, d);
    m.layers.resize(m.cfg.n_layers);
    for (auto& lw : m.layers) {
        read_vec(is, lw.ln1_g, d); read_vec(is, lw.ln1_b, d);
        read_vec(is, lw.ln2_g, d); read_vec(is, lw.ln2_b, d);
        read_mat(is, lw.wq, d, d); read_mat(is, lw.wk, d, d);
        read_mat(is, lw.wv, d, d); read_mat(is, lw.wo, d, d);
        read_mat(is, lw.w_in, m.cfg.d_mlp, d); read_vec(is, lw.b_in, m.cfg.d_mlp);
        read_mat(is, lw.w_out, d, m.cfg.d_mlp); read_vec(is, lw.b_out, d);
        read_vec(is, lw.plant, d);
        if (lw.plant.isZero(0.0f)) lw.plant.resize(0);
    }
    read_vec(is, m.lnf_g, d);
    read_vec(is, m.lnf_b, d);
    read_mat(is, m.unemb, m.cfg.vocab_size, d);
    return m;
}

}  // namespace cas
