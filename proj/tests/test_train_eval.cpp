#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "pepnet/checkpoint.hpp"
#include "pepnet/model.hpp"
#include "pepnet/train.hpp"

using namespace pepnet;

namespace {

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

ModelConfig toy_config() {
    ModelConfig cfg;
    cfg.n_points = 32;
    cfg.stage_points = {16, 8};
    cfg.stage_dims = {8, 16};
    cfg.k_neighbors = 4;
    cfg.regressor_hidden = 8;
    return cfg;
}

// Labels derived from cloud statistics: a learnable map, not memorization.
Dataset toy_dataset(int64_t m, uint64_t seed, int64_t n_points = 32) {
    std::mt19937_64 rng(seed);
    Dataset d;
    for (int64_t i = 0; i < m; ++i) {
        Array<double> cloud = random_cloud(rng, n_points);
        double mean[3] = {0, 0, 0};
        for (int64_t r = 0; r < n_points; ++r)
            for (int64_t j = 0; j < 3; ++j) mean[j] += cloud[r * 3 + j];
        for (double& v : mean) v /= static_cast<double>(n_points);
        PoseLabel label;
        label.p = {mean[0] - 0.5, mean[1] - 0.5, 0.5 * (mean[2] - 0.5)};
        rot::Vec3 e{0.4 * (mean[1] - 0.5), 0.4 * (mean[2] - 0.5), 0.4 * (mean[0] - 0.5)};
        label.euler = e;
        label.quat = rot::euler_zyx_to_quat(e);
        d.push(std::move(cloud), label, i);
    }
    return d;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("novel split is the chronological 70/30 cut") {
    SplitSpec spec;
    spec.mode = SplitSpec::Mode::novel_split;
    auto [train, test] = make_split(10, spec);
    CHECK(train == std::vector<int64_t>{0, 1, 2, 3, 4, 5, 6});
    CHECK(test == std::vector<int64_t>{7, 8, 9});
}

TEST_CASE("random split is deterministic, disjoint, covering") {
    SplitSpec spec;
    spec.seed = 77;
    auto [a_train, a_test] = make_split(25, spec);
    auto [b_train, b_test] = make_split(25, spec);
    CHECK(a_train == b_train);
    CHECK(a_test == b_test);
    std::vector<bool> seen(25, false);
    for (int64_t i : a_train) seen[static_cast<size_t>(i)] = true;
    for (int64_t i : a_test) {
        CHECK(!seen[static_cast<size_t>(i)]);
        seen[static_cast<size_t>(i)] = true;
    }
    for (bool s : seen) CHECK(s);
    CHECK(a_train.size() == 17);  // floor(0.7 * 25)
    CHECK_THROWS_AS(make_split(1, spec), Error);
}

TEST_CASE("random split puts each index in test with frequency 0.3") {
    const int64_t m = 20;
    const int trials = 5000;
    std::vector<int> test_hits(static_cast<size_t>(m), 0);
    for (uint64_t seed = 0; seed < trials; ++seed) {
        SplitSpec spec;
        spec.seed = seed;
        auto [train, test] = make_split(m, spec);
        for (int64_t i : test) test_hits[static_cast<size_t>(i)]++;
    }
    for (int h : test_hits) CHECK(std::abs(static_cast<double>(h) / trials - 0.3) < 0.03);
}

TEST_CASE("lower median convention") {
    CHECK(lower_median({3.0, 1.0, 2.0}) == 2.0);
    CHECK(lower_median({4.0, 1.0, 3.0, 2.0}) == 2.0);
    CHECK(lower_median({5.0}) == 5.0);
}

TEST_CASE("evaluation reproduces the published combined-metric anchors") {
    // single window with translation error 0.011 m and rotation error 0.582 deg
    std::vector<PoseLabel> labels(1);
    Array<double> preds({1, 6});
    preds[0] = 0.011;
    preds[3] = 0.582 * 3.14159265358979323846 / 180.0;  // roll
    EvalReport rep = evaluate_pairs(preds, labels, {});
    CHECK(rep.median_trans == doctest::Approx(0.011).epsilon(1e-9));
    CHECK(rep.median_rot_deg == doctest::Approx(0.582).epsilon(1e-6));
    CHECK(std::abs(rep.t_plus_r - 2.12) < 0.01);

    Array<double> p2({1, 6});
    p2[1] = 0.0302;
    p2[4] = 1.684 * 3.14159265358979323846 / 180.0;  // pitch
    EvalReport rep2 = evaluate_pairs(p2, labels, {});
    CHECK(std::abs(rep2.t_plus_r - 5.96) < 0.01);

    Array<double> zero({1, 6});
    EvalReport rep3 = evaluate_pairs(zero, labels, {});
    CHECK(rep3.median_trans == 0.0);
    CHECK(rep3.median_rot_deg == 0.0);
    CHECK(rep3.t_plus_r == 0.0);
}

TEST_CASE("report medians re-derive from the per-window lists") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> ud(0, 1);
    std::vector<PerWindowError> errs;
    for (int i = 0; i < 17; ++i) errs.push_back({i, ud(rng), ud(rng) * 5});
    EvalReport rep = report_from_errors(errs);
    std::vector<double> t, r;
    for (auto& e : rep.per_window) {
        t.push_back(e.trans_err);
        r.push_back(e.rot_err_deg);
    }
    CHECK(rep.median_trans == lower_median(t));
    CHECK(rep.median_rot_deg == lower_median(r));
}

TEST_CASE("evaluation is pure and threads do not change the report") {
    ModelConfig cfg = toy_config();
    Model<float> model(cfg, 3);
    Dataset data = toy_dataset(9, 5);
    EvalReport a = evaluate(model, data);
    EvalReport b = evaluate(model, data);
    EvalReport c = evaluate(model, data, 2);
    CHECK(a.median_trans == b.median_trans);
    CHECK(a.median_rot_deg == b.median_rot_deg);
    REQUIRE(a.per_window.size() == c.per_window.size());
    for (size_t i = 0; i < a.per_window.size(); ++i) {
        CHECK(a.per_window[i].trans_err == c.per_window[i].trans_err);
        CHECK(a.per_window[i].rot_err_deg == c.per_window[i].rot_err_deg);
    }
}

TEST_CASE("one sgd step with momentum off moves each weight by exactly -lr*g") {
    OptimizerConfig cfg;
    cfg.kind = OptimizerKind::sgd;
    cfg.momentum = 0.0;
    Array<float> w({3}, {1.0f, 2.0f, 3.0f});
    std::vector<NamedTensor<float>> params{{"w", &w, true}};
    std::vector<Array<float>> grads{Array<float>({3}, {0.5f, -0.25f, 0.0f})};
    Optimizer<float> sgd(cfg);
    sgd.step(params, grads, 0.1);
    CHECK(w[0] == 1.0f - 0.1f * 0.5f);
    CHECK(w[1] == 2.0f + 0.1f * 0.25f);
    CHECK(w[2] == 3.0f);
}

TEST_CASE("one adam step with hand-set gradients moves weights as expected") {
    // beta1 = beta2 = 0 reduces adam to sign-preserving normalized steps:
    // update = lr * g / (|g| + eps); with momentum disabled this checks the
    // plumbing end to end against a hand computation.
    OptimizerConfig cfg;
    cfg.beta1 = 0.0;
    cfg.beta2 = 0.0;
    cfg.eps = 1e-8;
    Array<float> w({3}, {1.0f, 2.0f, 3.0f});
    std::vector<NamedTensor<float>> params{{"w", &w, true}};
    std::vector<Array<float>> grads{Array<float>({3}, {0.5f, -0.25f, 0.0f})};
    Adam<float> adam(cfg);
    adam.step(params, grads, 0.1);
    CHECK(w[0] == doctest::Approx(1.0 - 0.1 * (0.5 / (0.5 + 1e-8))).epsilon(1e-6));
    CHECK(w[1] == doctest::Approx(2.0 + 0.1 * (0.25 / (0.25 + 1e-8))).epsilon(1e-6));
    CHECK(w[2] == doctest::Approx(3.0).epsilon(1e-9));
}

TEST_CASE("lr zero leaves the loss curve constant") {
    ModelConfig cfg = toy_config();
    Model<float> model(cfg, 11);
    Dataset data = toy_dataset(8, 7);
    OptimizerConfig opt;
    opt.lr = 0.0;
    opt.batch_size = 4;
    opt.seed = 1;
    Trainer<float> trainer(model, data, opt);
    trainer.set_log_medians(false);
    auto curve = trainer.run(4);
    REQUIRE(curve.size() == 4);
    for (size_t i = 1; i < curve.size(); ++i)
        CHECK(std::abs(curve[i].mean_loss - curve[0].mean_loss) < 1e-12);
}

TEST_CASE("training is bit-deterministic under a fixed seed") {
    ModelConfig cfg = toy_config();
    Dataset data = toy_dataset(8, 13);
    OptimizerConfig opt;
    opt.batch_size = 4;
    opt.seed = 99;

    auto run_once = [&]() {
        Model<float> model(cfg, 21);
        Trainer<float> trainer(model, data, opt);
        trainer.set_log_medians(false);
        auto curve = trainer.run(10);
        std::vector<float> params;
        for (auto& p : model.trainable())
            params.insert(params.end(), p.array->data(), p.array->data() + p.array->numel());
        return std::make_pair(curve, params);
    };
    auto [curve_a, params_a] = run_once();
    auto [curve_b, params_b] = run_once();
    REQUIRE(curve_a.size() == curve_b.size());
    for (size_t i = 0; i < curve_a.size(); ++i) CHECK(curve_a[i].mean_loss == curve_b[i].mean_loss);
    CHECK(params_a == params_b);  // bit-exact trajectories
}

TEST_CASE("a tiny model overfits a tiny synthetic regression set") {
    ModelConfig cfg = toy_config();
    cfg.lambda = 1e-6;
    Model<float> model(cfg, 31);
    Dataset data = toy_dataset(12, 17);
    OptimizerConfig opt;
    opt.batch_size = 3;
    opt.seed = 5;
    opt.lr = 3e-3;
    opt.decay_every = 100;
    Trainer<float> trainer(model, data, opt);
    trainer.set_log_medians(false);
    auto curve = trainer.run(200);
    CHECK(curve.back().mean_loss < 0.25 * curve.front().mean_loss);
}

TEST_CASE("checkpoint round-trips bit-exactly and reproduces the report") {
    ModelConfig cfg = toy_config();
    Model<float> model(cfg, 41);
    Dataset data = toy_dataset(5, 19);
    // push running stats away from their init so they must round-trip too
    OptimizerConfig opt;
    opt.batch_size = 5;
    opt.seed = 3;
    Trainer<float> trainer(model, data, opt);
    trainer.set_log_medians(false);
    trainer.run(2);

    EvalReport before = evaluate(model, data);
    const std::string path = temp_path("pepnet_test_ckpt.pepw");
    ckpt::save_model(path, model);
    Model<float> loaded = ckpt::load_model<float>(path);
    EvalReport after = evaluate(loaded, data);
    CHECK(before.median_trans == after.median_trans);
    CHECK(before.median_rot_deg == after.median_rot_deg);
    for (size_t i = 0; i < before.per_window.size(); ++i) {
        CHECK(before.per_window[i].trans_err == after.per_window[i].trans_err);
        CHECK(before.per_window[i].rot_err_deg == after.per_window[i].rot_err_deg);
    }

    // byte-identical re-serialization
    const std::string path2 = temp_path("pepnet_test_ckpt2.pepw");
    ckpt::save_model(path2, loaded);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
    std::remove(path.c_str());
    std::remove(path2.c_str());
}

TEST_CASE("checkpoint loader rejects mismatched dtype and missing tensors") {
    ModelConfig cfg = toy_config();
    Model<double> model(cfg, 43);
    const std::string path = temp_path("pepnet_test_ckpt3.pepw");
    ckpt::save_model(path, model);
    CHECK_THROWS_AS(ckpt::load_model<float>(path), Error);  // stored as f64
    auto records = ckpt::read_file(path);
    records.pop_back();
    const std::string path4 = temp_path("pepnet_test_ckpt4.pepw");
    ckpt::write_file(path4, records);
    CHECK_THROWS_AS(ckpt::load_model<double>(path4), Error);
    std::remove(path.c_str());
    std::remove(path4.c_str());
}

TEST_CASE("trainer aborts with a diagnostic when the loss turns non-finite") {
    ModelConfig cfg = toy_config();
    Model<float> model(cfg, 47);
    for (auto& p : model.trainable())
        if (p.name == "regressor/out/w") p.array->fill(std::numeric_limits<float>::quiet_NaN());
    Dataset data = toy_dataset(4, 23);
    OptimizerConfig opt;
    opt.batch_size = 2;
    Trainer<float> trainer(model, data, opt);
    trainer.set_log_medians(false);
    CHECK_THROWS_AS(trainer.run(1), Error);
}
