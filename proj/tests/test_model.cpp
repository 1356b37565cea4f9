#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

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

}  // namespace

TEST_CASE("standard config shape trace: stages, sequence length, output") {
    ModelConfig cfg = ModelConfig::standard();
    Model<float> model(cfg, 7);
    std::mt19937_64 rng(3);
    Array<double> clouds({2, 1024, 3});
    for (int64_t b = 0; b < 2; ++b) {
        Array<double> one = random_cloud(rng, 1024);
        std::copy(one.data(), one.data() + one.numel(), clouds.data() + b * 1024 * 3);
    }
    ForwardTrace<float> trace;
    Array<float> out = model.predict(model.make_batch(std::move(clouds)), &trace);
    REQUIRE(trace.stage_output_shapes.size() == 3);
    CHECK(trace.stage_output_shapes[0] == Shape{2, 512, 64});
    CHECK(trace.stage_output_shapes[1] == Shape{2, 256, 128});
    CHECK(trace.stage_output_shapes[2] == Shape{2, 128, 256});
    CHECK(trace.sequence_attention.shape() == Shape{2, 128});
    CHECK(out.shape() == Shape{2, 6});

    Model<float> tiny(ModelConfig::tiny(), 7);
    Array<float> out_t = tiny.predict(tiny.make_batch(random_cloud(rng, 1024)));
    CHECK(out_t.shape() == Shape{1, 6});
}

TEST_CASE("attention weights sum to one at both softmax sites") {
    ModelConfig cfg = toy_config();
    Model<double> model(cfg, 11);
    std::mt19937_64 rng(5);
    ForwardTrace<double> trace;
    model.predict(model.make_batch(random_cloud(rng, 32)), &trace);
    REQUIRE(trace.stage_attention.size() == 2);
    for (const auto& a : trace.stage_attention) {
        const int64_t rows = a.numel() / a.dim(-1);
        for (int64_t r = 0; r < rows; ++r) {
            double s = 0;
            for (int64_t k = 0; k < a.dim(-1); ++k) s += a[r * a.dim(-1) + k];
            CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
    double s = 0;
    for (int64_t i = 0; i < trace.sequence_attention.numel(); ++i) s += trace.sequence_attention[i];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("temporal aggregation of identical members is the shared feature") {
    // one group, all members identical: softmax convexity forces the mean
    ad::Tape<double> tape;
    Array<double> f({1, 1, 4, 3});
    for (int64_t k = 0; k < 4; ++k)
        for (int64_t d = 0; d < 3; ++d) f[k * 3 + d] = 0.3 * static_cast<double>(d) - 0.1;
    auto feats = tape.leaf(f);
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> ud(-1, 1);
    Array<double> aw({3, 1});
    for (int64_t i = 0; i < 3; ++i) aw[i] = ud(rng);
    auto logits = ad::matmul(feats, tape.leaf(std::move(aw)));
    auto a = ad::softmax_last(ad::reshape(logits, {1, 1, 4}));
    auto mixed = ad::batch_matmul(ad::reshape(a, {1, 1, 1, 4}), feats);
    for (int64_t d = 0; d < 3; ++d)
        CHECK(mixed.value()[d] == doctest::Approx(f[d]).epsilon(1e-12));
}

TEST_CASE("temporal aggregation matches a scalar loop") {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> ud(-2, 2);
    const int64_t g = 3, k = 5, d = 4;
    ad::Tape<double> tape;
    Array<double> f({1, g, k, d});
    for (int64_t i = 0; i < f.numel(); ++i) f[i] = ud(rng);
    Array<double> w({d, 1}), b({1});
    for (int64_t i = 0; i < d; ++i) w[i] = ud(rng);
    b[0] = ud(rng);
    auto feats = tape.leaf(f);
    auto logits = ad::bias_add(ad::matmul(feats, tape.leaf(w)), tape.leaf(b));
    auto att = ad::softmax_last(ad::reshape(logits, {1, g, k}));
    auto mixed = ad::reshape(ad::batch_matmul(ad::reshape(att, {1, g, 1, k}), feats), {1, g, d});

    for (int64_t gi = 0; gi < g; ++gi) {
        // scalar recomputation
        std::vector<double> logit(static_cast<size_t>(k));
        double mx = -1e300;
        for (int64_t ki = 0; ki < k; ++ki) {
            double s = b[0];
            for (int64_t di = 0; di < d; ++di) s += f[(gi * k + ki) * d + di] * w[di];
            logit[static_cast<size_t>(ki)] = s;
            mx = std::max(mx, s);
        }
        double z = 0;
        for (double& l : logit) {
            l = std::exp(l - mx);
            z += l;
        }
        for (int64_t di = 0; di < d; ++di) {
            double acc = 0;
            for (int64_t ki = 0; ki < k; ++ki) acc += logit[static_cast<size_t>(ki)] / z * f[(gi * k + ki) * d + di];
            CHECK(mixed.value()[gi * d + di] == doctest::Approx(acc).epsilon(1e-6));
        }
    }
}

TEST_CASE("K=1 aggregation is the single member itself") {
    ModelConfig cfg = toy_config();
    cfg.k_neighbors = 1;
    Model<double> model(cfg, 3);
    std::mt19937_64 rng(29);
    ForwardTrace<double> trace;
    Array<double> out = model.predict(model.make_batch(random_cloud(rng, 32)), &trace);
    CHECK(out.shape() == Shape{1, 6});
    for (const auto& a : trace.stage_attention)
        for (int64_t i = 0; i < a.numel(); ++i) CHECK(a[i] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("residual identity: zeroed second map makes Ext the relu of its input") {
    // bottleneck with fc2 weights and bn2 gamma at zero reduces to relu(x)
    ad::Tape<double> tape;
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> ud(-1.5, 1.5);
    const int64_t rows = 6, d = 4;
    Array<double> xv({rows, d});
    for (int64_t i = 0; i < xv.numel(); ++i) xv[i] = ud(rng);
    auto x = tape.leaf(xv);
    Array<double> w1v({d, d / 2});
    for (int64_t i = 0; i < w1v.numel(); ++i) w1v[i] = ud(rng);
    ad::BatchNormState<double> bn1(d / 2), bn2(d);
    auto i1 = ad::bias_add(ad::matmul(x, tape.leaf(w1v)), tape.leaf(Array<double>({d / 2})));
    auto i2 = ad::relu(ad::batch_norm(i1, tape.leaf(bn1.gamma), tape.leaf(bn1.beta), bn1, true));
    auto o1 = ad::bias_add(ad::matmul(i2, tape.leaf(Array<double>({d / 2, d}))), tape.leaf(Array<double>({d})));
    Array<double> gamma_zero({d});  // zero gamma kills the second branch entirely
    auto o2 = ad::batch_norm(o1, tape.leaf(gamma_zero), tape.leaf(Array<double>({d})), bn2, true);
    auto ext = ad::relu(ad::add(x, o2));
    for (int64_t i = 0; i < xv.numel(); ++i)
        CHECK(ext.value()[i] == doctest::Approx(std::max(0.0, xv[i])).epsilon(1e-12));
}

TEST_CASE("permuting the time column changes the output") {
    ModelConfig cfg = toy_config();
    std::mt19937_64 rng(37);
    for (int trial = 0; trial < 5; ++trial) {
        Model<double> model(cfg, 100 + static_cast<uint64_t>(trial));
        Array<double> cloud = random_cloud(rng, 32);
        Array<double> permuted = cloud;
        std::vector<double> tcol(32);
        for (int64_t i = 0; i < 32; ++i) tcol[static_cast<size_t>(i)] = cloud[i * 3 + 2];
        std::shuffle(tcol.begin(), tcol.end(), rng);
        for (int64_t i = 0; i < 32; ++i) permuted[i * 3 + 2] = tcol[static_cast<size_t>(i)];
        // restore row order by t so the input contract still holds
        std::vector<int64_t> order(32);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
            return permuted[a * 3 + 2] < permuted[b * 3 + 2];
        });
        Array<double> sorted({32, 3});
        for (int64_t i = 0; i < 32; ++i)
            for (int64_t j = 0; j < 3; ++j) sorted[i * 3 + j] = permuted[order[static_cast<size_t>(i)] * 3 + j];

        Array<double> out_a = model.predict(model.make_batch(cloud));
        Array<double> out_b = model.predict(model.make_batch(sorted));
        double max_delta = 0;
        for (int64_t j = 0; j < 6; ++j) max_delta = std::max(max_delta, std::abs(out_a[j] - out_b[j]));
        CHECK(max_delta > 1e-6);
    }
}

TEST_CASE("sequence reversal swaps direction roles when weights are shared") {
    const int64_t b = 1, steps = 6, d = 4, h = 2;
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> ud(-1, 1);
    auto rnd = [&](Shape s) {
        Array<double> a(std::move(s));
        for (int64_t i = 0; i < a.numel(); ++i) a[i] = ud(rng);
        return a;
    };
    Array<double> x({b, steps, d});
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = ud(rng);
    Array<double> rev({b, steps, d});
    for (int64_t t = 0; t < steps; ++t)
        for (int64_t j = 0; j < d; ++j) rev[t * d + j] = x[(steps - 1 - t) * d + j];

    Array<double> wx = rnd({d, 4 * h}), wh = rnd({h, 4 * h}), bias = rnd({4 * h});
    Array<double> vw = rnd({h, h}), vb = rnd({h});

    auto run_bilstm = [&](const Array<double>& input) {
        ad::Tape<double> tape;
        auto seq = tape.leaf(input);
        auto wx_t = tape.leaf(wx), wh_t = tape.leaf(wh), b_t = tape.leaf(bias);
        auto vw_t = tape.leaf(vw), vb_t = tape.leaf(vb);
        std::vector<ad::Tensor<double>> ys(static_cast<size_t>(steps));
        for (int pass = 0; pass < 2; ++pass) {
            auto hh = tape.constant(Array<double>({b, 1, h}));
            auto cc = tape.constant(Array<double>({b, 1, h}));
            std::vector<ad::Tensor<double>> part(static_cast<size_t>(steps));
            for (int64_t i = 0; i < steps; ++i) {
                const int64_t t = pass == 0 ? i : steps - 1 - i;
                auto cell = ad::lstm_cell(ad::narrow(seq, 1, t, 1), hh, cc, wx_t, wh_t, b_t);
                hh = cell.h;
                cc = cell.c;
                part[static_cast<size_t>(t)] = ad::bias_add(ad::matmul(hh, vw_t), vb_t);
            }
            for (int64_t t = 0; t < steps; ++t) {
                auto& slot = ys[static_cast<size_t>(t)];
                slot = pass == 0 ? part[static_cast<size_t>(t)]
                                 : ad::concat<double>(-1, {slot, part[static_cast<size_t>(t)]});
            }
        }
        auto full = ad::concat<double>(1, std::span<const ad::Tensor<double>>(ys));
        return full.value();
    };

    Array<double> y = run_bilstm(x);
    Array<double> y_rev = run_bilstm(rev);
    // Y_rev[t] = swap_halves(Y)[steps-1-t]
    for (int64_t t = 0; t < steps; ++t)
        for (int64_t j = 0; j < 2 * h; ++j) {
            const int64_t swapped = (j + h) % (2 * h);
            CHECK(y_rev[t * 2 * h + j] == doctest::Approx(y[(steps - 1 - t) * 2 * h + swapped]).epsilon(1e-9));
        }
}

TEST_CASE("loss: zero at perfect prediction, 3-4-5 norm, scalar recomputation") {
    ModelConfig cfg = toy_config();
    cfg.lambda = 0.0;
    Model<double> model(cfg, 1);
    ad::Tape<double> tape;
    auto bound = model.bind(tape, false);

    Array<double> target({1, 6}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6});
    auto pred_same = tape.constant(target);
    CHECK(model.loss(tape, bound, pred_same, target).value()[0] == 0.0);

    Array<double> p2({1, 6}, {3.1, 4.2, 0.3, 0.4, 0.5, 0.6});
    cfg.alpha = 1.0;
    cfg.beta = 0.7;
    Model<double> m2(cfg, 1);
    ad::Tape<double> t2;
    auto b2 = m2.bind(t2, false);
    auto loss2 = m2.loss(t2, b2, t2.constant(p2), target);
    CHECK(loss2.value()[0] == doctest::Approx(5.0).epsilon(1e-12));  // alpha * ||(3,4,0)||

    std::mt19937_64 rng(43);
    std::uniform_real_distribution<double> ud(-1, 1);
    cfg.alpha = 0.4;
    cfg.beta = 1.3;
    cfg.lambda = 0.0;
    Model<double> m3(cfg, 1);
    for (int trial = 0; trial < 50; ++trial) {
        Array<double> pr({2, 6}), tg({2, 6});
        for (int64_t i = 0; i < 12; ++i) {
            pr[i] = ud(rng);
            tg[i] = ud(rng);
        }
        ad::Tape<double> t3;
        auto b3 = m3.bind(t3, false);
        const double got = m3.loss(t3, b3, t3.constant(pr), tg).value()[0];
        double want = 0;
        for (int64_t r = 0; r < 2; ++r) {
            double sp = 0, sq = 0;
            for (int64_t j = 0; j < 3; ++j) {
                sp += (pr[r * 6 + j] - tg[r * 6 + j]) * (pr[r * 6 + j] - tg[r * 6 + j]);
                sq += (pr[r * 6 + 3 + j] - tg[r * 6 + 3 + j]) * (pr[r * 6 + 3 + j] - tg[r * 6 + 3 + j]);
            }
            want += 0.4 * std::sqrt(sp) + 1.3 * std::sqrt(sq);
        }
        want /= 2;
        CHECK(got == doctest::Approx(want).epsilon(1e-9));
    }
}

TEST_CASE("regularization term equals lambda times the squared weight sum") {
    ModelConfig cfg = toy_config();
    cfg.lambda = 0.01;
    Model<double> model(cfg, 5);
    ad::Tape<double> tape;
    auto bound = model.bind(tape, false);
    Array<double> t({1, 6});
    auto loss = model.loss(tape, bound, tape.constant(t), t);  // data term is zero
    double want = 0;
    for (auto& p : model.trainable())
        for (int64_t i = 0; i < p.array->numel(); ++i) want += (*p.array)[i] * (*p.array)[i];
    CHECK(loss.value()[0] == doctest::Approx(0.01 * want).epsilon(1e-9));
}

TEST_CASE("parameter counts sit in the published ranges") {
    const int64_t std_count = count_parameters(ModelConfig::standard());
    const int64_t tiny_count = count_parameters(ModelConfig::tiny());
    CHECK(std_count >= 550000);
    CHECK(std_count <= 1000000);
    CHECK(tiny_count >= 45000);
    CHECK(tiny_count <= 85000);
    const double ratio = static_cast<double>(tiny_count) / static_cast<double>(std_count);
    CHECK(ratio >= 0.06);
    CHECK(ratio <= 0.10);
}

TEST_CASE("doubling the regressor width changes the count by the analytic delta") {
    ModelConfig cfg = ModelConfig::tiny();
    const int64_t base = count_parameters(cfg);
    ModelConfig wide = cfg;
    wide.regressor_hidden *= 2;
    const int64_t grown = count_parameters(wide);
    const int64_t h = cfg.regressor_hidden;
    const int64_t d = cfg.last_dim();
    // extra h rows on fc1 (d weights + bias each) and h columns on the output map
    const int64_t delta = h * (d + 1) + h * 6;
    CHECK(grown - base == delta);
}

TEST_CASE("ablation matrix covers the six conditions with growing capacity") {
    auto configs = ablation_matrix(ModelConfig::tiny());
    REQUIRE(configs.size() == 6);
    CHECK(configs[0].recurrent == RecurrentKind::none);
    CHECK(configs[0].aggregation == Aggregation::max_pool);
    CHECK(configs[5].recurrent == RecurrentKind::lstm);
    CHECK(configs[5].bidirectional);
    CHECK(configs[5].aggregation == Aggregation::temporal_attention);
    int64_t prev = -1;
    for (const auto& c : configs) {
        const int64_t n = count_parameters(c);
        CHECK(n > prev);
        prev = n;
    }
}

TEST_CASE("attention trace has sequence length entries and sums to one") {
    ModelConfig cfg = toy_config();
    Model<float> model(cfg, 9);
    std::mt19937_64 rng(47);
    auto trace = model.attention_trace(random_cloud(rng, 32));
    CHECK(trace.size() == static_cast<size_t>(cfg.sequence_len()));
    double s = 0;
    for (float v : trace) s += v;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("zero-weight regressor emits the zero pose") {
    ModelConfig cfg = toy_config();
    Model<double> model(cfg, 13);
    for (auto& p : model.trainable())
        if (p.name.rfind("regressor/", 0) == 0) p.array->fill(0.0);
    std::mt19937_64 rng(53);
    Array<double> out = model.predict(model.make_batch(random_cloud(rng, 32)));
    for (int64_t j = 0; j < 6; ++j) CHECK(out[j] == 0.0);
}

TEST_CASE("grouping plans are deterministic and order-preserving") {
    ModelConfig cfg = toy_config();
    std::mt19937_64 rng(59);
    Array<double> cloud = random_cloud(rng, 32);
    GroupingPlan a = make_grouping_plan_for(cloud, cfg);
    GroupingPlan b = make_grouping_plan_for(cloud, cfg);
    REQUIRE(a.stages.size() == b.stages.size());
    for (size_t s = 0; s < a.stages.size(); ++s) {
        CHECK(a.stages[s].centroid_index == b.stages[s].centroid_index);
        CHECK(a.stages[s].member_index == b.stages[s].member_index);
        CHECK(a.stages[s].member_offsets == b.stages[s].member_offsets);
    }
}
