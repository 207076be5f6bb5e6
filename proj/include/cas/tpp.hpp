#pragma once

#include <string>
#include <vector>

#include "cas/metrics.hpp"

namespace cas {

// Variable-length position buckets over generated-token indices.
// The default partitions [0, inf): 5-token buckets below 20, 10-token
// buckets in [20, 100), and one tail bucket for >= 100 (13 in total).
struct BucketScheme {
    std::vector<long> lower_bounds;  // ascending, first must be 0; last bucket is open

    static BucketScheme default13();
    int size() const { return static_cast<int>(lower_bounds.size()); }
};

int bucket_of(long position, const BucketScheme& scheme);

struct PositionPrior {
    BucketScheme scheme;
    std::vector<double> p;             // per-bucket hallucinated-object-token fraction
    std::vector<long> halluc_tokens;   // per-bucket counts
    std::vector<long> object_tokens;
    double temperature = 1.0;
    std::vector<double> c;             // tempered coefficients, max == 1
    std::vector<std::string> calibration_ids;  // image ids used for estimation
};

// Per-bucket hallucination fraction from labeled mention lists. Mentions
// carry generated-token positions; every token of a mention counts at its
// own position. Empty buckets get P_b = 0.
PositionPrior estimate_prior(const std::vector<MentionList>& mentions,
                             const BucketScheme& scheme);

// c_b = (P_b / max P)^(1/T). Throws AllZeroPrior when no bucket has mass.
std::vector<double> temper(const std::vector<double>& p, double temperature);

double gate(const PositionPrior& prior, long t);

void save_prior(const PositionPrior& prior, const std::string& path);
PositionPrior load_prior(const std::string& path);

}  // namespace cas
