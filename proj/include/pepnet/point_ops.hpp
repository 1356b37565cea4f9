#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pepnet/array.hpp"
#include "pepnet/errors.hpp"

namespace pepnet {

// Point coordinates are always the normalized (x, y, t) triple; rows are in
// timestamp order. Features ride along with whatever width the current
// hierarchy stage produced (width 0 before the first stage).
template <typename T>
struct PointSet {
    Array<double> coords;  // [N, 3]
    Array<T> feats;        // [N, D], D >= 0

    int64_t size() const { return coords.dim(0); }
    int64_t feat_dim() const { return feats.rank() == 2 ? feats.dim(1) : 0; }
};

// Output of grouping one PointSet around N' centroids with K members each.
// Member order inside every group follows the original timestamps.
template <typename T>
struct GroupedSet {
    std::vector<int32_t> centroid_index;  // [G]
    std::vector<int32_t> member_index;    // [G*K]
    Array<double> centroid_coords;        // [G, 3]
    Array<T> centroid_feats;              // [G, D]
    Array<double> member_offsets;         // [G, K, 3], standardized relative coords
    Array<T> member_feats;                // [G, K, 2D], member feats ++ centroid feats
    Array<double> member_t;               // [G, K] t coordinate of each member
    std::vector<double> group_std;        // [G]
    int64_t group_size = 0;
};

// Epsilon guarding the per-group standard deviation denominator.
inline constexpr double kStandardizeEps = 1e-8;

// Iterative farthest point sampling over the 3-coordinate Euclidean metric.
// Selection starts at row 0, maximizes min-distance to the picked set, breaks
// ties on the lowest index, and returns the indices re-sorted ascending
// (equal to timestamp order for time-sorted inputs).
std::vector<int32_t> farthest_point_sample(std::span<const double> coords, int64_t n, int64_t n_out);

// K nearest rows (self included) for each centroid, squared-Euclidean over
// the 3 coordinates. Ties resolve to the lowest index, except that the
// centroid itself outranks any point at equal distance. Each group comes
// back sorted ascending by index, i.e. by timestamp.
std::vector<int32_t> knn_indices(std::span<const double> coords, int64_t n,
                                 std::span<const int32_t> centroid_index, int64_t k);

// Sample standard deviation of the flattened 3K-element coordinate list with
// Bessel correction (denominator 3K - 1).
double flattened_sample_std(std::span<const double> group_coords);

// Divides centroid-relative coordinates by (std + eps); a fully degenerate
// group (zero spread) maps to all zeros.
std::vector<double> standardize_group(std::span<const double> relative_coords);

// Index-level grouping of one stage: FPS centroids, KNN membership and
// standardized offsets, everything features-agnostic.
struct GroupingStagePlan {
    std::vector<int32_t> centroid_index;   // [G]
    std::vector<int32_t> member_index;     // [G*K]
    std::vector<double> member_offsets;    // [G*K*3]
    std::vector<double> group_std;         // [G]
    int64_t group_size = 0;
    int64_t n_groups = 0;
};

GroupingStagePlan build_stage_plan(std::span<const double> coords, int64_t n, int64_t n_out, int64_t k);

// Materializes a GroupedSet from a plan: gathers member/centroid features and
// concatenates them to width 2D. Feature channels pass through untouched.
template <typename T>
GroupedSet<T> group_points(const PointSet<T>& points, const GroupingStagePlan& plan) {
    const int64_t g = plan.n_groups, k = plan.group_size, d = points.feat_dim();
    GroupedSet<T> out;
    out.centroid_index = plan.centroid_index;
    out.member_index = plan.member_index;
    out.group_std = plan.group_std;
    out.group_size = k;
    out.centroid_coords = Array<double>({g, 3});
    out.centroid_feats = Array<T>({g, d});
    out.member_offsets = Array<double>({g, k, 3}, plan.member_offsets);
    out.member_feats = Array<T>({g, k, 2 * d});
    out.member_t = Array<double>({g, k});
    for (int64_t gi = 0; gi < g; ++gi) {
        const int64_t c = plan.centroid_index[static_cast<size_t>(gi)];
        for (int64_t j = 0; j < 3; ++j) out.centroid_coords[gi * 3 + j] = points.coords[c * 3 + j];
        for (int64_t j = 0; j < d; ++j) out.centroid_feats[gi * d + j] = points.feats[c * d + j];
        for (int64_t m = 0; m < k; ++m) {
            const int64_t p = plan.member_index[static_cast<size_t>(gi * k + m)];
            out.member_t[gi * k + m] = points.coords[p * 3 + 2];
            T* dst = out.member_feats.data() + (gi * k + m) * 2 * d;
            for (int64_t j = 0; j < d; ++j) dst[j] = points.feats[p * d + j];
            for (int64_t j = 0; j < d; ++j) dst[d + j] = points.feats[c * d + j];
        }
    }
    return out;
}

}  // namespace pepnet
