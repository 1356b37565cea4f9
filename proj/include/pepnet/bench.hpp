#pragma once

#include <cstdint>
#include <string>

#include "pepnet/model.hpp"

namespace pepnet::bench {

enum class Kernel { fps, knn, forward };

struct LatencyStats {
    std::string kernel;
    int64_t n = 0, n_out = 0, k = 0, reps = 0;
    double p50_us = 0, p90_us = 0, p99_us = 0, mean_us = 0;
    // forward kernel only: share of the call spent in grouping and sampling
    double grouping_fraction = 0;
};

// Times one kernel over `reps` calls on seeded random clouds (two warmup
// calls excluded). `forward` runs a single-window standard-config inference
// and also measures the grouping-plan share.
LatencyStats run_kernel(Kernel kernel, int64_t n, int64_t n_out, int64_t k, int64_t reps, uint64_t seed,
                        const ModelConfig* forward_cfg = nullptr);

std::string csv_header();
std::string csv_row(const LatencyStats& s);

}  // namespace pepnet::bench
