#include "pepnet/point_ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace pepnet {

namespace {

inline double sq_dist3(const double* a, const double* b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return dx * dx + dy * dy + dz * dz;
}

}  // namespace

std::vector<int32_t> farthest_point_sample(std::span<const double> coords, int64_t n, int64_t n_out) {
    if (static_cast<int64_t>(coords.size()) != n * 3) throw ShapeError("coords must be n*3 values");
    if (n_out < 1 || n_out > n)
        throw BoundsError("cannot sample " + std::to_string(n_out) + " of " + std::to_string(n) + " points");

    std::vector<int32_t> picked;
    picked.reserve(static_cast<size_t>(n_out));
    std::vector<double> min_d(static_cast<size_t>(n), std::numeric_limits<double>::infinity());

    int64_t current = 0;  // earliest event seeds the selection
    picked.push_back(0);
    for (int64_t round = 1; round < n_out; ++round) {
        const double* c = coords.data() + current * 3;
        int64_t best = -1;
        double best_d = -1.0;
        for (int64_t i = 0; i < n; ++i) {
            double d = sq_dist3(coords.data() + i * 3, c);
            if (d < min_d[static_cast<size_t>(i)]) min_d[static_cast<size_t>(i)] = d;
            // strict > keeps the lowest index on ties
            if (min_d[static_cast<size_t>(i)] > best_d) {
                best_d = min_d[static_cast<size_t>(i)];
                best = i;
            }
        }
        picked.push_back(static_cast<int32_t>(best));
        current = best;
        min_d[static_cast<size_t>(best)] = -1.0;  // never re-picked: distance to itself is 0
    }
    std::sort(picked.begin(), picked.end());
    return picked;
}

std::vector<int32_t> knn_indices(std::span<const double> coords, int64_t n,
                                 std::span<const int32_t> centroid_index, int64_t k) {
    if (static_cast<int64_t>(coords.size()) != n * 3) throw ShapeError("coords must be n*3 values");
    if (k < 1 || k > n)
        throw BoundsError("k=" + std::to_string(k) + " outside [1," + std::to_string(n) + "]");

    const int64_t g = static_cast<int64_t>(centroid_index.size());
    std::vector<int32_t> members(static_cast<size_t>(g * k));
    std::vector<std::pair<double, int32_t>> cand(static_cast<size_t>(n));
    for (int64_t gi = 0; gi < g; ++gi) {
        const int32_t c = centroid_index[static_cast<size_t>(gi)];
        const double* cc = coords.data() + static_cast<int64_t>(c) * 3;
        for (int64_t i = 0; i < n; ++i) {
            // The centroid sorts ahead of any equally distant point so that it
            // always belongs to its own group, even with duplicate coordinates.
            double d = (i == c) ? -1.0 : sq_dist3(coords.data() + i * 3, cc);
            cand[static_cast<size_t>(i)] = {d, static_cast<int32_t>(i)};
        }
        if (k < n) std::nth_element(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k - 1), cand.end());
        int32_t* dst = members.data() + gi * k;
        for (int64_t j = 0; j < k; ++j) dst[j] = cand[static_cast<size_t>(j)].second;
        std::sort(dst, dst + k);  // timestamp order within the group
    }
    return members;
}

double flattened_sample_std(std::span<const double> group_coords) {
    const int64_t m = static_cast<int64_t>(group_coords.size());
    if (m < 2) throw Error("standard deviation needs at least 2 values");
    double mean = std::accumulate(group_coords.begin(), group_coords.end(), 0.0) / static_cast<double>(m);
    double ss = 0.0;
    for (double v : group_coords) {
        const double d = v - mean;
        ss += d * d;
    }
    return std::sqrt(ss / static_cast<double>(m - 1));
}

std::vector<double> standardize_group(std::span<const double> relative_coords) {
    const double denom = flattened_sample_std(relative_coords) + kStandardizeEps;
    std::vector<double> out(relative_coords.size());
    for (size_t i = 0; i < relative_coords.size(); ++i) out[i] = relative_coords[i] / denom;
    return out;
}

GroupingStagePlan build_stage_plan(std::span<const double> coords, int64_t n, int64_t n_out, int64_t k) {
    GroupingStagePlan plan;
    plan.centroid_index = farthest_point_sample(coords, n, n_out);
    plan.member_index = knn_indices(coords, n, plan.centroid_index, k);
    plan.group_size = k;
    plan.n_groups = n_out;
    plan.member_offsets.resize(static_cast<size_t>(n_out * k * 3));
    plan.group_std.resize(static_cast<size_t>(n_out));
    std::vector<double> rel(static_cast<size_t>(k * 3));
    for (int64_t gi = 0; gi < n_out; ++gi) {
        const double* cc = coords.data() + static_cast<int64_t>(plan.centroid_index[static_cast<size_t>(gi)]) * 3;
        for (int64_t m = 0; m < k; ++m) {
            const double* pc = coords.data() + static_cast<int64_t>(plan.member_index[static_cast<size_t>(gi * k + m)]) * 3;
            for (int64_t j = 0; j < 3; ++j) rel[static_cast<size_t>(m * 3 + j)] = pc[j] - cc[j];
        }
        const double std_g = flattened_sample_std(rel);
        plan.group_std[static_cast<size_t>(gi)] = std_g;
        const double denom = std_g + kStandardizeEps;
        double* dst = plan.member_offsets.data() + gi * k * 3;
        for (int64_t j = 0; j < k * 3; ++j) dst[j] = rel[static_cast<size_t>(j)] / denom;
    }
    return plan;
}

}  // namespace pepnet
