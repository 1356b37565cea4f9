#include "pepnet/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <random>

#include "pepnet/point_ops.hpp"

namespace pepnet::bench {

namespace {

using Clock = std::chrono::steady_clock;

double quantile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const size_t idx = static_cast<size_t>(q * static_cast<double>(v.size() - 1) + 0.5);
    return v[std::min(idx, v.size() - 1)];
}

std::vector<double> random_cloud(std::mt19937_64& rng, int64_t n) {
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    std::vector<double> c(static_cast<size_t>(n * 3));
    std::vector<double> t(static_cast<size_t>(n));
    for (auto& v : t) v = ud(rng);
    std::sort(t.begin(), t.end());
    for (int64_t i = 0; i < n; ++i) {
        c[static_cast<size_t>(i * 3 + 0)] = ud(rng);
        c[static_cast<size_t>(i * 3 + 1)] = ud(rng);
        c[static_cast<size_t>(i * 3 + 2)] = t[static_cast<size_t>(i)];
    }
    return c;
}

}  // namespace

LatencyStats run_kernel(Kernel kernel, int64_t n, int64_t n_out, int64_t k, int64_t reps, uint64_t seed,
                        const ModelConfig* forward_cfg) {
    if (reps < 1) throw Error("reps must be >= 1");
    std::mt19937_64 rng(seed);
    LatencyStats stats;
    stats.n = n;
    stats.n_out = n_out;
    stats.k = k;
    stats.reps = reps;

    std::vector<double> lat;
    lat.reserve(static_cast<size_t>(reps));

    if (kernel == Kernel::forward) {
        ModelConfig cfg = forward_cfg ? *forward_cfg : ModelConfig::standard();
        stats.kernel = "forward";
        stats.n = cfg.n_points;
        stats.n_out = cfg.stage_points.front();
        stats.k = cfg.k_neighbors;
        Model<float> model(cfg, seed);
        double plan_total = 0, total = 0;
        for (int64_t r = -2; r < reps; ++r) {
            Array<double> cloud({cfg.n_points, 3}, random_cloud(rng, cfg.n_points));
            const auto t0 = Clock::now();
            BatchInput batch = model.make_batch(std::move(cloud));
            const auto t1 = Clock::now();
            model.predict(batch);
            const auto t2 = Clock::now();
            if (r < 0) continue;  // warmup
            const double plan_us = std::chrono::duration<double, std::micro>(t1 - t0).count();
            const double all_us = std::chrono::duration<double, std::micro>(t2 - t0).count();
            lat.push_back(all_us);
            plan_total += plan_us;
            total += all_us;
        }
        stats.grouping_fraction = total > 0 ? plan_total / total : 0;
    } else {
        stats.kernel = kernel == Kernel::fps ? "fps" : "knn";
        for (int64_t r = -2; r < reps; ++r) {
            std::vector<double> cloud = random_cloud(rng, n);
            std::vector<int32_t> centroids;
            if (kernel == Kernel::knn) centroids = farthest_point_sample(cloud, n, n_out);
            const auto t0 = Clock::now();
            if (kernel == Kernel::fps) {
                volatile int32_t sink = farthest_point_sample(cloud, n, n_out).back();
                (void)sink;
            } else {
                volatile int32_t sink = knn_indices(cloud, n, centroids, k).back();
                (void)sink;
            }
            const auto t1 = Clock::now();
            if (r < 0) continue;
            lat.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
        }
    }

    double sum = 0;
    for (double v : lat) sum += v;
    stats.mean_us = sum / static_cast<double>(lat.size());
    stats.p50_us = quantile(lat, 0.50);
    stats.p90_us = quantile(lat, 0.90);
    stats.p99_us = quantile(lat, 0.99);
    return stats;
}

std::string csv_header() { return "kernel,n,n_out,k,reps,p50_us,p90_us,p99_us,mean_us,grouping_fraction"; }

std::string csv_row(const LatencyStats& s) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%s,%lld,%lld,%lld,%lld,%.2f,%.2f,%.2f,%.2f,%.4f", s.kernel.c_str(),
                  static_cast<long long>(s.n), static_cast<long long>(s.n_out), static_cast<long long>(s.k),
                  static_cast<long long>(s.reps), s.p50_us, s.p90_us, s.p99_us, s.mean_us, s.grouping_fraction);
    return buf;
}

}  // namespace pepnet::bench
