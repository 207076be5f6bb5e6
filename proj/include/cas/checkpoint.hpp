#pragma once

#include <string>

#include "cas/model.hpp"

namespace cas {

// Versioned binary model container. Header: magic "CASM", u32 version,
// config fields; then row-major fp32 weight blocks in init order.
// Write/read round-trips bit-exactly.
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace cas
