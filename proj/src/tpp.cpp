#include "cas/tpp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "cas/errors.hpp"

namespace cas {

using json = nlohmann::ordered_json;

BucketScheme BucketScheme::default13() {
    BucketScheme s;
    for (long b = 0; b < 20; b += 5) s.lower_bounds.push_back(b);
    for (long b = 20; b < 100; b += 10) s.lower_bounds.push_back(b);
    s.lower_bounds.push_back(100);
    return s;
}

int bucket_of(long position, const BucketScheme& scheme) {
    if (position < 0 || scheme.lower_bounds.empty() || scheme.lower_bounds.front() != 0) {
        throw DimensionMismatch("bucket_of: invalid position or scheme");
    }
    auto it = std::upper_bound(scheme.lower_bounds.begin(), scheme.lower_bounds.end(), position);
    return static_cast<int>(it - scheme.lower_bounds.begin()) - 1;
}

PositionPrior estimate_prior(const std::vector<MentionList>& mentions,
                             const BucketScheme& scheme) {
    PositionPrior prior;
    prior.scheme = scheme;
    const int n = scheme.size();
    prior.halluc_tokens.assign(n, 0);
    prior.object_tokens.assign(n, 0);
    for (const auto& caption : mentions) {
        for (const auto& m : caption) {
            const int b = bucket_of(m.token_position, scheme);
            ++prior.object_tokens[b];
            if (!m.grounded) ++prior.halluc_tokens[b];
        }
    }
    prior.p.assign(n, 0.0);
    for (int b = 0; b < n; ++b) {
        if (prior.object_tokens[b] > 0) {
            prior.p[b] = static_cast<double>(prior.halluc_tokens[b]) / prior.object_tokens[b];
        }
    }
    return prior;
}

std::vector<double> temper(const std::vector<double>& p, double temperature) {
    if (temperature <= 0.0) throw DimensionMismatch("temper: temperature must be > 0");
    const double max_p = *std::max_element(p.begin(), p.end());
    if (max_p <= 0.0) {
        throw AllZeroPrior("temper: all bucket fractions are zero");
    }
    std::vector<double> c(p.size());
    for (size_t b = 0; b < p.size(); ++b) {
        c[b] = std::pow(p[b] / max_p, 1.0 / temperature);
    }
    return c;
}

double gate(const PositionPrior& prior, long t) {
    if (prior.c.empty()) return 1.0;  // untempered prior acts as constant-one
    double g = prior.c[bucket_of(t, prior.scheme)];
    return std::clamp(g, 0.0, 1.0);
}

void save_prior(const PositionPrior& prior, const std::string& path) {
    json j;
    j["format"] = "cas-prior";
    j["version"] = 1;
    j["bucket_lower_bounds"] = prior.scheme.lower_bounds;
    j["halluc_tokens"] = prior.halluc_tokens;
    j["object_tokens"] = prior.object_tokens;
    j["p"] = prior.p;
    j["temperature"] = prior.temperature;
    j["c"] = prior.c;
    j["calibration_ids"] = prior.calibration_ids;
    std::ofstream os(path);
    if (!os) throw ParseError("cannot open prior for writing: " + path);
    os << j.dump(2) << "\n";
}

PositionPrior load_prior(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ParseError("cannot open prior: " + path);
    json j;
    try {
        is >> j;
    } catch (const std::exception& e) {
        throw ParseError(std::string("prior parse failure: ") + e.what());
    }
    if (!j.contains("format") || j["format"] != "cas-prior" ||
        j.at("version").get<int>() != 1) {
        throw FormatVersionMismatch("not a version-1 cas-prior file: " + path);
    }
    PositionPrior prior;
    prior.scheme.lower_bounds = j.at("bucket_lower_bounds").get<std::vector<long>>();
    prior.halluc_tokens = j.at("halluc_tokens").get<std::vector<long>>();
    prior.object_tokens = j.at("object_tokens").get<std::vector<long>>();
    prior.p = j.at("p").get<std::vector<double>>();
    prior.temperature = j.at("temperature").get<double>();
    prior.c = j.at("c").get<std::vector<double>>();
    prior.calibration_ids = j.at("calibration_ids").get<std::vector<std::string>>();
    return prior;
}

}  // namespace cas
