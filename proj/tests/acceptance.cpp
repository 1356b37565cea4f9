// Acceptance suite: one pass/fail line per criterion, ordered cheap to
// expensive. Exit code 0 iff every criterion passes (skipped conditional
// criteria count as pass). Run through ctest or directly:
//   ./build/tests/pepnet_acceptance

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "pepnet/bench.hpp"
#include "pepnet/checkpoint.hpp"
#include "pepnet/event_io.hpp"
#include "pepnet/gradcheck.hpp"
#include "pepnet/model.hpp"
#include "pepnet/pipeline.hpp"
#include "pepnet/point_ops.hpp"
#include "pepnet/synth.hpp"
#include "pepnet/train.hpp"
#include "pepnet/util.hpp"

using namespace pepnet;
using Clock = std::chrono::steady_clock;

namespace {

struct Check {
    bool ok = true;
    std::string detail;
};

void expect(Check& c, bool cond, const std::string& what) {
    if (!cond) {
        c.ok = false;
        c.detail += (c.detail.empty() ? "" : "; ") + what;
    }
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list args;
    va_start(args, f);
    std::vsnprintf(buf, sizeof(buf), f, args);
    va_end(args);
    return buf;
}

Array<double> random_cloud(std::mt19937_64& rng, int64_t n) {
    Array<double> c({n, 3});
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    std::vector<double> t(static_cast<size_t>(n));
    for (auto& v : t) v = ud(rng);
    std::sort(t.begin(), t.end());
    for (int64_t i = 0; i < n; ++i) {
        c[i * 3 + 0] = ud(rng);
        c[i * 3 + 1] = ud(rng);
        c[i * 3 + 2] = t[static_cast<size_t>(i)];
    }
    return c;
}

double sqd(const double* a, const double* b) {
    double s = 0;
    for (int j = 0; j < 3; ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
    return s;
}

// ---------------------------------------------------------------------------

Check metric_anchor() {
    Check c;
    std::vector<PoseLabel> labels(1);
    Array<double> p1({1, 6});
    p1[0] = 0.011;
    p1[3] = 0.582 * M_PI / 180.0;
    const double tpr1 = evaluate_pairs(p1, labels, {}).t_plus_r;
    expect(c, std::abs(tpr1 - 2.12) <= 0.01, fmt("T+R(0.011m, 0.582deg) = %.4f, want 2.12 +- 0.01", tpr1));

    Array<double> p2({1, 6});
    p2[1] = 0.0302;
    p2[4] = 1.684 * M_PI / 180.0;
    const double tpr2 = evaluate_pairs(p2, labels, {}).t_plus_r;
    expect(c, std::abs(tpr2 - 5.96) <= 0.01, fmt("T+R(0.0302m, 1.684deg) = %.4f, want 5.96 +- 0.01", tpr2));

    Array<double> p0({1, 6});
    EvalReport rp = evaluate_pairs(p0, labels, {});
    expect(c, rp.median_trans == 0.0 && rp.median_rot_deg == 0.0 && rp.t_plus_r == 0.0,
           "perfect prediction must score (0, 0, 0)");
    if (c.ok) c.detail = fmt("2.12 -> %.4f, 5.96 -> %.4f, perfect -> 0", tpr1, tpr2);
    return c;
}

Check parameter_counts() {
    Check c;
    const int64_t std_n = count_parameters(ModelConfig::standard());
    const int64_t tiny_n = count_parameters(ModelConfig::tiny());
    const double ratio = static_cast<double>(tiny_n) / static_cast<double>(std_n);
    expect(c, std_n >= 550000 && std_n <= 1000000, fmt("standard %lld outside [0.55M, 1.0M]", (long long)std_n));
    expect(c, tiny_n >= 45000 && tiny_n <= 85000, fmt("tiny %lld outside [45k, 85k]", (long long)tiny_n));
    expect(c, ratio >= 0.06 && ratio <= 0.10, fmt("ratio %.4f outside [0.06, 0.10]", ratio));
    if (c.ok) c.detail = fmt("standard=%lld tiny=%lld ratio=%.4f", (long long)std_n, (long long)tiny_n, ratio);
    return c;
}

Check shape_contract() {
    Check c;
    Model<float> model(ModelConfig::standard(), 5);
    std::mt19937_64 rng(17);
    Array<double> clouds({2, 1024, 3});
    for (int64_t b = 0; b < 2; ++b) {
        Array<double> one = random_cloud(rng, 1024);
        std::copy(one.data(), one.data() + one.numel(), clouds.data() + b * 1024 * 3);
    }
    ForwardTrace<float> trace;
    Array<float> out = model.predict(model.make_batch(std::move(clouds)), &trace);
    expect(c, trace.stage_output_shapes.size() == 3, "expected three hierarchy stages");
    const std::vector<Shape> want{{2, 512, 64}, {2, 256, 128}, {2, 128, 256}};
    for (size_t s = 0; s < want.size() && s < trace.stage_output_shapes.size(); ++s)
        expect(c, trace.stage_output_shapes[s] == want[s],
               fmt("stage %zu shape %s", s, shape_str(trace.stage_output_shapes[s]).c_str()));
    expect(c, trace.sequence_attention.shape() == Shape{2, 128},
           fmt("sequence attention %s, want [2,128]", shape_str(trace.sequence_attention.shape()).c_str()));
    expect(c, out.shape() == Shape{2, 6}, fmt("output %s, want [2,6]", shape_str(out.shape()).c_str()));
    if (c.ok) c.detail = "[2,1024,3] -> [2,512,64] -> [2,256,128] -> [2,128,256] -> 128 steps -> [2,6]";
    return c;
}

Check standardization() {
    Check c;
    std::mt19937_64 rng(23);
    std::normal_distribution<double> nd(0.0, 2.0);
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> rel(24);
        for (auto& v : rel) v = nd(rng);
        auto out = standardize_group(rel);
        worst = std::max(worst, std::abs(flattened_sample_std(out) - 1.0));
    }
    expect(c, worst <= 1e-6, fmt("worst |std - 1| = %.3g > 1e-6", worst));
    std::vector<double> same(18, 0.0);
    auto zeros = standardize_group(same);
    for (double v : zeros) expect(c, v == 0.0, "degenerate group must map to exact zeros");
    if (c.ok) c.detail = fmt("1000 groups, worst |std-1| = %.3g; degenerate -> zeros", worst);
    return c;
}

Check attention_normalization() {
    Check c;
    double worst = 0.0;
    for (uint64_t seed = 0; seed < 4; ++seed) {
        ModelConfig cfg;
        cfg.n_points = 64;
        cfg.stage_points = {32, 16};
        cfg.stage_dims = {8, 16};
        cfg.k_neighbors = 8;
        cfg.regressor_hidden = 8;
        Model<double> model(cfg, 31 + seed);
        std::mt19937_64 rng(41 + seed);
        Array<double> clouds({2, 64, 3});
        for (int64_t b = 0; b < 2; ++b) {
            Array<double> one = random_cloud(rng, 64);
            std::copy(one.data(), one.data() + one.numel(), clouds.data() + b * 64 * 3);
        }
        ForwardTrace<double> trace;
        model.predict(model.make_batch(std::move(clouds)), &trace);
        for (const auto& a : trace.stage_attention) {
            const int64_t k = a.dim(-1);
            for (int64_t r = 0; r < a.numel() / k; ++r) {
                double s = 0;
                for (int64_t j = 0; j < k; ++j) s += a[r * k + j];
                worst = std::max(worst, std::abs(s - 1.0));
            }
        }
        const auto& sa = trace.sequence_attention;
        for (int64_t b = 0; b < sa.dim(0); ++b) {
            double s = 0;
            for (int64_t j = 0; j < sa.dim(1); ++j) s += sa[b * sa.dim(1) + j];
            worst = std::max(worst, std::abs(s - 1.0));
        }
    }
    expect(c, worst <= 1e-6, fmt("worst |sum - 1| = %.3g > 1e-6", worst));

    // identical members aggregate to the exact shared feature (softmax convexity)
    ad::Tape<double> tape;
    Array<double> f({1, 1, 6, 4});
    for (int64_t k = 0; k < 6; ++k)
        for (int64_t d = 0; d < 4; ++d) f[k * 4 + d] = 0.21 * static_cast<double>(d) - 0.4;
    auto feats = tape.leaf(f);
    std::mt19937_64 rng(59);
    std::uniform_real_distribution<double> ud(-1, 1);
    Array<double> wv({4, 1}), bv({1});
    for (int64_t i = 0; i < 4; ++i) wv[i] = ud(rng);
    bv[0] = ud(rng);
    auto logits = ad::linear(feats, tape.leaf(std::move(wv)), tape.leaf(std::move(bv)));
    auto att = ad::softmax_last(ad::reshape(logits, {1, 1, 6}));
    auto mixed = ad::batch_matmul(ad::reshape(att, {1, 1, 1, 6}), feats);
    for (int64_t d = 0; d < 4; ++d)
        expect(c, std::abs(mixed.value()[d] - f[d]) <= 1e-12, "identical members must aggregate to their mean");
    if (c.ok) c.detail = fmt("both softmax sites, worst |sum-1| = %.3g; equal members -> exact mean", worst);
    return c;
}

Check order_preservation() {
    Check c;
    std::mt19937_64 rng(67);
    std::uniform_int_distribution<int64_t> t_span(2000, 50000);
    int64_t clouds_checked = 0;
    for (int trial = 0; trial < 1000 && c.ok; ++trial) {
        // random stream -> window -> cloud
        const int64_t span = t_span(rng);
        std::vector<Event> ev(400);
        std::uniform_int_distribution<int64_t> td(0, span);
        std::uniform_int_distribution<int32_t> xd(0, 239), yd(0, 179);
        for (auto& e : ev) e = {td(rng), xd(rng), yd(rng), 1};
        std::sort(ev.begin(), ev.end(), [](const Event& a, const Event& b) { return a.t < b.t; });
        auto windows = segment_windows(ev, 1000, 100);
        if (windows.empty() || windows[0].t_last() == windows[0].t_first()) continue;
        NormalizedCloud cloud = sample_and_normalize(windows[0], 96, rng(), 240, 180);
        for (int64_t i = 1; i < 96; ++i)
            expect(c, cloud.points[i * 3 + 2] >= cloud.points[(i - 1) * 3 + 2], "cloud t column must be sorted");
        for (int64_t i = 0; i < cloud.points.numel(); ++i)
            expect(c, cloud.points[i] >= 0.0 && cloud.points[i] <= 1.0, "coordinates must stay in [0,1]");

        // grouped members stay in timestamp order
        std::vector<double> coords(cloud.points.data(), cloud.points.data() + cloud.points.numel());
        GroupingStagePlan plan = build_stage_plan(coords, 96, 24, 8);
        for (int64_t g = 0; g < plan.n_groups; ++g)
            for (int64_t k = 1; k < plan.group_size; ++k) {
                const int32_t prev = plan.member_index[static_cast<size_t>(g * 8 + k - 1)];
                const int32_t curr = plan.member_index[static_cast<size_t>(g * 8 + k)];
                expect(c, coords[static_cast<size_t>(curr) * 3 + 2] >= coords[static_cast<size_t>(prev) * 3 + 2],
                       "group members must stay timestamp-sorted");
            }
        ++clouds_checked;
    }
    expect(c, clouds_checked >= 900, fmt("only %lld usable windows generated", (long long)clouds_checked));
    if (c.ok) c.detail = fmt("%lld random windows, clouds and groups exactly ordered", (long long)clouds_checked);
    return c;
}

Check kernel_oracles() {
    Check c;
    std::mt19937_64 rng(71);
    std::uniform_int_distribution<int64_t> nd(1, 64);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    for (int trial = 0; trial < 1000 && c.ok; ++trial) {
        const int64_t n = nd(rng);
        std::vector<double> coords(static_cast<size_t>(n * 3));
        for (auto& v : coords) v = ud(rng);
        std::uniform_int_distribution<int64_t> od(1, n);
        const int64_t n_out = od(rng);

        // O(N^2 * n_out) selection reference
        std::vector<int32_t> ref{0};
        std::vector<bool> used(static_cast<size_t>(n), false);
        used[0] = true;
        while (static_cast<int64_t>(ref.size()) < n_out) {
            int64_t best = -1;
            double best_d = -1;
            for (int64_t i = 0; i < n; ++i) {
                if (used[static_cast<size_t>(i)]) continue;
                double mind = 1e300;
                for (int32_t p : ref)
                    mind = std::min(mind, sqd(&coords[static_cast<size_t>(i) * 3], &coords[static_cast<size_t>(p) * 3]));
                if (mind > best_d) {
                    best_d = mind;
                    best = i;
                }
            }
            ref.push_back(static_cast<int32_t>(best));
            used[static_cast<size_t>(best)] = true;
        }
        std::sort(ref.begin(), ref.end());
        auto got = farthest_point_sample(coords, n, n_out);
        expect(c, got == ref, fmt("fps mismatch at trial %d (n=%lld, n_out=%lld)", trial, (long long)n, (long long)n_out));

        // O(N^2) sort-based neighbor reference with the same tie rules
        std::uniform_int_distribution<int64_t> kd(1, n);
        const int64_t k = kd(rng);
        auto knn = knn_indices(coords, n, got, k);
        for (size_t gi = 0; gi < got.size() && c.ok; ++gi) {
            std::vector<std::pair<double, int32_t>> dist(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i)
                dist[static_cast<size_t>(i)] = {
                    i == got[gi] ? -1.0 : sqd(&coords[static_cast<size_t>(i) * 3], &coords[static_cast<size_t>(got[gi]) * 3]),
                    static_cast<int32_t>(i)};
            std::sort(dist.begin(), dist.end());
            std::vector<int32_t> grp;
            for (int64_t j = 0; j < k; ++j) grp.push_back(dist[static_cast<size_t>(j)].second);
            std::sort(grp.begin(), grp.end());
            for (int64_t j = 0; j < k; ++j)
                expect(c, knn[gi * static_cast<size_t>(k) + static_cast<size_t>(j)] == grp[static_cast<size_t>(j)],
                       fmt("knn mismatch at trial %d group %zu", trial, gi));
        }
    }
    if (c.ok) c.detail = "1000 random instances, fps and knn exactly match the scalar references";
    return c;
}

Check gradient_suite() {
    Check c;
    const auto t0 = Clock::now();
    auto reports = gradcheck::run_all();
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    double worst = 0;
    for (const auto& r : reports) {
        worst = std::max(worst, r.max_rel_err);
        expect(c, r.pass, r.name + " failed with max_rel_err " + std::to_string(r.max_rel_err));
    }
    expect(c, secs < 120.0, fmt("suite took %.1fs, budget 120s", secs));
    if (c.ok) c.detail = fmt("%zu entries, worst rel err %.2e, %.1fs", reports.size(), worst, secs);
    return c;
}

Check performance_sanity() {
    Check c;
    Model<float> model(ModelConfig::standard(), 3);
    std::mt19937_64 rng(73);
    std::vector<double> lat;
    for (int rep = -2; rep < 12; ++rep) {
        Array<double> cloud = random_cloud(rng, 1024);
        const auto t0 = Clock::now();
        model.predict(model.make_batch(std::move(cloud)));
        const double ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
        if (rep >= 0) lat.push_back(ms);
    }
    std::sort(lat.begin(), lat.end());
    const double median = lat[lat.size() / 2];
    expect(c, median < 100.0, fmt("median inference %.1fms, budget 100ms", median));

    auto fwd = bench::run_kernel(bench::Kernel::forward, 1024, 512, 24, 8, 7);
    c.detail = fmt("median %.1fms (p99 %.1fms); grouping+sampling fraction %.1f%%", median, lat.back(),
                   100.0 * fwd.grouping_fraction);
    return c;
}

// Shared synthetic dataset for the training-level criteria.
Dataset overfit_dataset(int64_t n_sample, int64_t n_p, int64_t count, uint64_t seed) {
    SceneSpec spec;
    spec.n_landmarks = 128;
    spec.duration_us = 4'000'000;
    spec.fine_steps = 200000;
    SynthResult scene = generate(spec, seed);
    IngestOptions opt;
    opt.chunk_us = 1000;
    opt.n_p = n_p;
    opt.n_sample = n_sample;
    Dataset data = build_dataset(scene.events, scene.poses, opt);
    if (data.size() < count) throw Error(fmt("scene produced only %lld windows", (long long)data.size()));
    std::vector<int64_t> take(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) take[static_cast<size_t>(i)] = i;
    return data.subset(take);
}

Check determinism() {
    Check c;
    Dataset d = overfit_dataset(256, 256, 12, 99);
    ModelConfig cfg;
    cfg.n_points = 256;
    cfg.stage_points = {128, 64, 32};
    cfg.stage_dims = {16, 32, 64};
    cfg.k_neighbors = 16;

    auto run_once = [&](const std::string& path) {
        Model<float> model(cfg, 21);
        OptimizerConfig ocfg;
        ocfg.batch_size = 4;
        ocfg.seed = 5;
        Trainer<float> trainer(model, d, ocfg);
        auto curve = trainer.run(6);
        ckpt::save_model(path, model);
        return curve;
    };
    const std::string p1 = "/tmp/pepnet_acc_det1.pepw", p2 = "/tmp/pepnet_acc_det2.pepw";
    auto c1 = run_once(p1);
    auto c2 = run_once(p2);
    for (size_t i = 0; i < c1.size(); ++i) {
        expect(c, c1[i].mean_loss == c2[i].mean_loss, fmt("loss curves differ at epoch %zu", i));
        expect(c, c1[i].median_trans == c2[i].median_trans && c1[i].median_rot_deg == c2[i].median_rot_deg,
               fmt("medians differ at epoch %zu", i));
    }
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    expect(c, !s1.empty() && s1 == s2, "checkpoints must be byte-identical");
    std::remove(p1.c_str());
    std::remove(p2.c_str());
    if (c.ok) c.detail = fmt("6 epochs twice: loss curves and checkpoints bit-identical (%zu bytes)", s1.size());
    return c;
}

Check overfit_criterion() {
    Check c;
    const auto t0 = Clock::now();
    Dataset d32 = overfit_dataset(1024, 1024, 32, 42);
    ModelConfig cfg = ModelConfig::tiny();
    cfg.lambda = 0.0;  // memorization run, weight decay off
    Model<float> model(cfg, 1);
    OptimizerConfig ocfg;
    ocfg.batch_size = 8;
    ocfg.seed = 7;
    ocfg.lr = 2e-3;
    ocfg.decay_every = 120;
    Trainer<float> trainer(model, d32, ocfg);
    trainer.set_log_medians(false);
    auto curve = trainer.run(500);
    EvalReport rep = evaluate(model, d32);
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    const double ratio = curve.back().mean_loss / curve.front().mean_loss;
    expect(c, ratio < 0.01, fmt("final/epoch-1 loss ratio %.4f, want < 0.01", ratio));
    expect(c, rep.median_trans < 0.01, fmt("train median translation %.4f, want < 0.01", rep.median_trans));
    expect(c, secs < 600.0, fmt("runtime %.0fs, budget 600s", secs));
    if (c.ok)
        c.detail = fmt("tiny config, 32 windows, 500 epochs: loss %.4f -> %.5f (ratio %.4f), median_trans %.4fm, %.0fs",
                       curve.front().mean_loss, curve.back().mean_loss, ratio, rep.median_trans, secs);
    return c;
}

Check ablation_ordering() {
    Check c;
    Dataset d = overfit_dataset(256, 256, 60, 77);
    SplitSpec ss;
    ss.mode = SplitSpec::Mode::novel_split;
    auto [tr, te] = make_split(d.size(), ss);
    Dataset train_d = d.subset(tr), test_d = d.subset(te);

    ModelConfig base;
    base.n_points = 256;
    base.stage_points = {128, 64, 32};
    base.stage_dims = {16, 32, 64};
    base.k_neighbors = 16;
    auto configs = ablation_matrix(base);

    auto median_tpr = [&](const ModelConfig& cfg) {
        std::vector<double> vals;
        for (uint64_t seed = 0; seed < 5; ++seed) {
            Model<float> model(cfg, 100 + seed);
            OptimizerConfig ocfg;
            ocfg.batch_size = 8;
            ocfg.seed = seed;
            ocfg.decay_every = 30;
            Trainer<float> trainer(model, train_d, ocfg);
            trainer.set_log_medians(false);
            trainer.run(60);
            vals.push_back(evaluate(model, test_d).t_plus_r);
        }
        return lower_median(vals);
    };
    const double cond1 = median_tpr(configs[0]);
    const double cond6 = median_tpr(configs[5]);
    expect(c, cond6 < cond1, fmt("median T+R: condition6 %.2f !< condition1 %.2f", cond6, cond1));
    if (c.ok) c.detail = fmt("median of 5 seeds: condition6 %.2f < condition1 %.2f", cond6, cond1);
    return c;
}

Check ablation_reachability() {
    Check c;
    Dataset d = overfit_dataset(256, 256, 8, 55);
    ModelConfig base;
    base.n_points = 256;
    base.stage_points = {128, 64, 32};
    base.stage_dims = {16, 32, 64};
    base.k_neighbors = 16;
    int64_t prev = -1;
    for (const ModelConfig& cfg : ablation_matrix(base)) {
        Model<float> model(cfg, 13);
        const int64_t n = model.parameter_count();
        expect(c, n > prev, fmt("parameter counts must grow across conditions (%lld after %lld)", (long long)n,
                                (long long)prev));
        prev = n;
        OptimizerConfig ocfg;
        ocfg.batch_size = 4;
        Trainer<float> trainer(model, d, ocfg);
        trainer.set_log_medians(false);
        auto curve = trainer.run(2);
        expect(c, std::isfinite(curve.back().mean_loss), "every condition must train to a finite loss");
    }
    if (c.ok) c.detail = "all six conditions build and run two epochs; capacity strictly grows";
    return c;
}

Check ijrr_smoke() {
    Check c;
    std::string dir;
    if (const char* env = std::getenv("PEPNET_IJRR_DIR")) dir = env;
    if (dir.empty() && std::filesystem::exists("data/shapes_translation/events.txt"))
        dir = "data/shapes_translation";
    if (dir.empty() || !std::filesystem::exists(dir + "/events.txt") ||
        !std::filesystem::exists(dir + "/poses.txt")) {
        c.detail = "SKIP: no events/poses pair found (set PEPNET_IJRR_DIR or data/shapes_translation/)";
        return c;
    }
    EventParseOptions popt;
    std::ifstream ef(dir + "/events.txt");
    auto events = parse_event_stream(ef, popt);
    std::ifstream pf(dir + "/poses.txt");
    auto poses = parse_pose_file(pf);
    IngestOptions opt;
    Dataset data = build_dataset(events, poses, opt);
    const int64_t use = std::min<int64_t>(64, data.size());
    std::vector<int64_t> take(static_cast<size_t>(use));
    for (int64_t i = 0; i < use; ++i) take[static_cast<size_t>(i)] = i;
    Dataset d = data.subset(take);
    Model<float> model(ModelConfig::tiny(), 1);
    OptimizerConfig ocfg;
    ocfg.batch_size = 8;
    ocfg.seed = 3;
    Trainer<float> trainer(model, d, ocfg);
    trainer.set_log_medians(false);
    auto curve = trainer.run(5);
    for (size_t e = 1; e < curve.size(); ++e)
        expect(c, curve[e].mean_loss < curve[e - 1].mean_loss,
               fmt("epoch-mean loss must strictly decrease (epoch %zu)", e));
    if (c.ok)
        c.detail = fmt("%lld windows, loss %.4f -> %.4f over 5 epochs", (long long)use, curve.front().mean_loss,
                       curve.back().mean_loss);
    return c;
}

}  // namespace

int main() {
    tune_allocator();
    struct Entry {
        const char* name;
        std::function<Check()> fn;
    };
    const std::vector<Entry> entries{
        {"metric-anchor", metric_anchor},
        {"parameter-counts", parameter_counts},
        {"shape-contract", shape_contract},
        {"standardization", standardization},
        {"attention-normalization", attention_normalization},
        {"order-preservation", order_preservation},
        {"kernel-oracles", kernel_oracles},
        {"gradient-suite", gradient_suite},
        {"performance-sanity", performance_sanity},
        {"determinism", determinism},
        {"ablation-reachability", ablation_reachability},
        {"overfit", overfit_criterion},
        {"ablation-ordering", ablation_ordering},
        {"ijrr-smoke", ijrr_smoke},
    };
    int failures = 0;
    for (const Entry& e : entries) {
        Check c;
        try {
            c = e.fn();
        } catch (const std::exception& ex) {
            c.ok = false;
            c.detail = std::string("exception: ") + ex.what();
        }
        std::printf("[%s] %-24s %s\n", c.ok ? "PASS" : "FAIL", e.name, c.detail.c_str());
        std::fflush(stdout);
        if (!c.ok) ++failures;
    }
    if (failures) std::printf("%d criterion(s) failed\n", failures);
    return failures == 0 ? 0 : 1;
}
