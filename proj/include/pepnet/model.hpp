#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pepnet/array.hpp"
#include "pepnet/errors.hpp"
#include "pepnet/point_ops.hpp"
#include "pepnet/tape.hpp"

namespace pepnet {

enum class Aggregation { max_pool, temporal_attention };
enum class RecurrentKind { none, vanilla_rnn, lstm };

// Architecture and loss hyperparameters. Defaults give the standard network;
// tiny() shrinks the per-stage feature widths only.
struct ModelConfig {
    int64_t n_points = 1024;
    std::vector<int64_t> stage_points{512, 256, 128};
    std::vector<int64_t> stage_dims{64, 128, 256};
    int64_t k_neighbors = 24;
    int64_t lstm_hidden = 0;  // 0 derives stage_dims.back()/2
    int64_t regressor_hidden = 128;
    Aggregation aggregation = Aggregation::temporal_attention;
    RecurrentKind recurrent = RecurrentKind::lstm;
    bool bidirectional = true;
    double alpha = 0.5;
    double beta = 0.5;
    double lambda = 1e-5;
    bool squared_distance_loss = false;

    int64_t stages() const { return static_cast<int64_t>(stage_points.size()); }
    int64_t last_dim() const { return stage_dims.back(); }
    int64_t sequence_len() const { return stage_points.back(); }
    int64_t hidden_size() const { return lstm_hidden > 0 ? lstm_hidden : last_dim() / 2; }

    void validate() const {
        if (stage_points.empty() || stage_points.size() != stage_dims.size())
            throw Error("stage_points and stage_dims must be non-empty and equally long");
        if (stage_points[0] > n_points) throw Error("stage_points[0] must not exceed n_points");
        for (size_t i = 1; i < stage_points.size(); ++i)
            if (stage_points[i] >= stage_points[i - 1]) throw Error("stage_points must be strictly decreasing");
        int64_t min_input = n_points;
        for (size_t i = 1; i < stage_points.size(); ++i) min_input = std::min(min_input, stage_points[i - 1]);
        if (k_neighbors < 1 || k_neighbors > min_input)
            throw Error("k_neighbors must be within every stage's input size");
        for (int64_t d : stage_dims)
            if (d < 2 || d % 2 != 0) throw Error("stage_dims must be even and at least 2");
        if (recurrent != RecurrentKind::none && 2 * hidden_size() != last_dim())
            throw Error("recurrent hidden size must be half the final feature width");
        if (regressor_hidden < 1) throw Error("regressor_hidden must be positive");
        if (alpha < 0 || beta < 0 || lambda < 0) throw Error("loss coefficients must be non-negative");
    }

    static ModelConfig standard() { return ModelConfig{}; }
    static ModelConfig tiny() {
        ModelConfig c;
        c.stage_dims = {16, 32, 64};
        return c;
    }
};

template <typename T>
struct NamedTensor {
    std::string name;
    Array<T>* array;
    bool trainable;
};

template <typename T>
struct LinearParams {
    Array<T> w, b;

    void init(std::mt19937_64& rng, int64_t fan_in, int64_t fan_out) {
        w = Array<T>({fan_in, fan_out});
        b = Array<T>({fan_out});
        const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(fan_in)));
        std::uniform_real_distribution<double> ud(-bound, bound);
        for (int64_t i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(ud(rng));
        for (int64_t i = 0; i < b.numel(); ++i) b[i] = static_cast<T>(ud(rng));
    }
};

// Residual bottleneck block: fc1 to width/2, fc2 back to width, batch norm
// after each linear map, relu after the first and around the residual sum.
template <typename T>
struct BottleneckParams {
    LinearParams<T> fc1, fc2;
    ad::BatchNormState<T> bn1, bn2;

    void init(std::mt19937_64& rng, int64_t width) {
        fc1.init(rng, width, width / 2);
        fc2.init(rng, width / 2, width);
        bn1 = ad::BatchNormState<T>(width / 2);
        bn2 = ad::BatchNormState<T>(width);
    }
};

template <typename T>
struct StageParams {
    LinearParams<T> pre;     // (3 + 2*D_prev) -> D
    BottleneckParams<T> local;
    LinearParams<T> attn;    // D -> 1, temporal aggregation only
    BottleneckParams<T> global_;
};

template <typename T>
struct LstmDirParams {
    Array<T> w_x, w_h, b;   // [D,4H], [H,4H], [4H]
    LinearParams<T> proj;   // [H, out]

    void init(std::mt19937_64& rng, int64_t d_in, int64_t hidden, int64_t out, bool lstm_gates) {
        const int64_t g = lstm_gates ? 4 * hidden : hidden;
        w_x = Array<T>({d_in, g});
        w_h = Array<T>({hidden, g});
        b = Array<T>({g});
        const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hidden)));
        std::uniform_real_distribution<double> ud(-bound, bound);
        for (int64_t i = 0; i < w_x.numel(); ++i) w_x[i] = static_cast<T>(ud(rng));
        for (int64_t i = 0; i < w_h.numel(); ++i) w_h[i] = static_cast<T>(ud(rng));
        b.fill(T(0));
        if (lstm_gates)
            for (int64_t i = hidden; i < 2 * hidden; ++i) b[i] = T(1);  // forget gate open at start
        proj.init(rng, hidden, out);
    }
};

// Per-sample grouping geometry for every stage; independent of the parameters,
// so it can be computed once per cloud and reused across epochs.
struct GroupingPlan {
    std::vector<GroupingStagePlan> stages;
};

template <typename T>
struct ForwardTrace {
    std::vector<Shape> stage_output_shapes;
    std::vector<Array<T>> stage_attention;  // [B,G,K] per stage, temporal aggregation only
    Array<T> sequence_attention;            // [B,N3] when an attention head runs
    Shape output_shape;
};

// Inputs for one forward pass: the raw clouds plus their grouping plans.
struct BatchInput {
    Array<double> clouds;  // [B, N, 3]
    std::vector<GroupingPlan> plans;

    int64_t batch() const { return clouds.dim(0); }
};

GroupingPlan make_grouping_plan_for(const Array<double>& cloud, const ModelConfig& cfg);

template <typename T>
class Model {
public:
    explicit Model(ModelConfig cfg, uint64_t seed = 1) : cfg_(std::move(cfg)) {
        cfg_.validate();
        std::mt19937_64 rng(seed);
        const int64_t s = cfg_.stages();
        stages_.resize(static_cast<size_t>(s));
        for (int64_t i = 0; i < s; ++i) {
            const int64_t d_prev = i == 0 ? 0 : cfg_.stage_dims[static_cast<size_t>(i - 1)];
            const int64_t d = cfg_.stage_dims[static_cast<size_t>(i)];
            StageParams<T>& st = stages_[static_cast<size_t>(i)];
            st.pre.init(rng, 3 + 2 * d_prev, d);
            st.local.init(rng, d);
            if (cfg_.aggregation == Aggregation::temporal_attention) st.attn.init(rng, d, 1);
            st.global_.init(rng, d);
        }
        const int64_t d_last = cfg_.last_dim();
        const int64_t h = cfg_.hidden_size();
        if (cfg_.recurrent != RecurrentKind::none) {
            const bool gates = cfg_.recurrent == RecurrentKind::lstm;
            const int64_t out = cfg_.bidirectional ? d_last / 2 : d_last;
            fwd_.emplace();
            fwd_->init(rng, d_last, h, out, gates);
            if (cfg_.bidirectional) {
                bwd_.emplace();
                bwd_->init(rng, d_last, h, out, gates);
            }
        }
        if (has_head_attention()) head_attn_.init(rng, d_last, 1);
        reg1_.init(rng, d_last, cfg_.regressor_hidden);
        reg2_.init(rng, cfg_.regressor_hidden, 6);
    }

    const ModelConfig& config() const { return cfg_; }

    bool has_head_attention() const {
        return cfg_.recurrent != RecurrentKind::none || cfg_.aggregation == Aggregation::temporal_attention;
    }

    // Trainable tensors in a stable order; running statistics excluded.
    std::vector<NamedTensor<T>> trainable() {
        std::vector<NamedTensor<T>> out;
        collect(out, false);
        return out;
    }

    // Everything persisted in a checkpoint: trainable tensors plus BN running stats.
    std::vector<NamedTensor<T>> state_tensors() {
        std::vector<NamedTensor<T>> out;
        collect(out, true);
        return out;
    }

    int64_t parameter_count() {
        int64_t n = 0;
        for (const auto& p : trainable()) n += p.array->numel();
        return n;
    }

    GroupingPlan make_plan(const Array<double>& cloud) const { return make_grouping_plan_for(cloud, cfg_); }

    BatchInput make_batch(Array<double> clouds) const {
        if (clouds.rank() == 2) clouds = clouds.reshaped({1, clouds.dim(0), clouds.dim(1)});
        if (clouds.rank() != 3 || clouds.dim(2) != 3)
            throw ShapeError("clouds must be [B,N,3], got " + shape_str(clouds.shape()));
        BatchInput b;
        b.plans.reserve(static_cast<size_t>(clouds.dim(0)));
        for (int64_t i = 0; i < clouds.dim(0); ++i) {
            Array<double> one({clouds.dim(1), 3});
            std::copy(clouds.data() + i * clouds.dim(1) * 3, clouds.data() + (i + 1) * clouds.dim(1) * 3, one.data());
            b.plans.push_back(make_plan(one));
        }
        b.clouds = std::move(clouds);
        return b;
    }

    // Stage every trainable tensor onto the tape; order matches trainable().
    std::vector<ad::Tensor<T>> bind(ad::Tape<T>& tape, bool requires_grad = true) {
        std::vector<ad::Tensor<T>> leaves;
        auto named = trainable();
        leaves.reserve(named.size());
        for (auto& p : named) leaves.push_back(tape.leaf(*p.array, requires_grad));
        return leaves;
    }

    ad::Tensor<T> forward(ad::Tape<T>& tape, std::vector<ad::Tensor<T>>& bound, const BatchInput& batch,
                          bool training, ForwardTrace<T>* trace = nullptr) {
        const int64_t b = batch.batch();
        if (static_cast<int64_t>(batch.plans.size()) != b) throw ShapeError("one grouping plan per batch item required");
        BoundCursor cur{bound, 0};

        ad::Tensor<T> feats;  // [B,G,D], invalid before the first stage
        for (int64_t s = 0; s < cfg_.stages(); ++s) {
            feats = run_stage(tape, cur, batch, feats, s, training, trace);
            check_finite(feats.value(), "hierarchy stage " + std::to_string(s));
            if (trace) trace->stage_output_shapes.push_back(feats.shape());
        }

        ad::Tensor<T> pooled = run_head(tape, cur, feats, trace);
        ad::Tensor<T> r1w = cur.next(), r1b = cur.next();
        ad::Tensor<T> hidden = ad::relu(ad::linear(pooled, r1w, r1b));
        ad::Tensor<T> r2w = cur.next(), r2b = cur.next();
        ad::Tensor<T> out = ad::linear(hidden, r2w, r2b);
        check_finite(out.value(), "regressor");
        if (trace) trace->output_shape = out.shape();
        return out;
    }

    // Data term + L2 penalty over every bound trainable tensor.
    ad::Tensor<T> loss(ad::Tape<T>& tape, const std::vector<ad::Tensor<T>>& bound, ad::Tensor<T> pred,
                       const Array<T>& targets) const {
        ad::Tensor<T> tgt = tape.constant(targets);
        ad::Tensor<T> diff = ad::sub(pred, tgt);
        ad::Tensor<T> dp = ad::narrow(diff, -1, 0, 3);
        ad::Tensor<T> dq = ad::narrow(diff, -1, 3, 3);
        ad::Tensor<T> lp = ad::sum_last(ad::mul(dp, dp));
        ad::Tensor<T> lq = ad::sum_last(ad::mul(dq, dq));
        if (!cfg_.squared_distance_loss) {
            lp = ad::sqrt_op(lp);
            lq = ad::sqrt_op(lq);
        }
        ad::Tensor<T> per = ad::add(ad::scale(lp, static_cast<T>(cfg_.alpha)), ad::scale(lq, static_cast<T>(cfg_.beta)));
        ad::Tensor<T> total = ad::mean_all(per);
        if (cfg_.lambda > 0) {
            ad::Tensor<T> reg;
            for (const auto& w : bound) {
                ad::Tensor<T> sq = ad::sum_all(ad::mul(w, w));
                reg = reg.valid() ? ad::add(reg, sq) : sq;
            }
            total = ad::add(total, ad::scale(reg, static_cast<T>(cfg_.lambda)));
        }
        return total;
    }

    // Convenience one-shot evaluation path: fresh tape, eval-mode statistics.
    Array<T> predict(const BatchInput& batch, ForwardTrace<T>* trace = nullptr) {
        ad::Tape<T> tape;
        auto bound = bind(tape, false);
        return forward(tape, bound, batch, false, trace).value();
    }

    Array<T> predict_cloud(const Array<double>& cloud, ForwardTrace<T>* trace = nullptr) {
        return predict(make_batch(cloud), trace);
    }

    // Softmax weights of the sequence head for one cloud, length N3, sum 1.
    std::vector<T> attention_trace(const Array<double>& cloud) {
        if (!has_head_attention()) throw Error("model has no attention head (max-pool ablation)");
        ForwardTrace<T> trace;
        predict_cloud(cloud, &trace);
        const Array<T>& a = trace.sequence_attention;
        return std::vector<T>(a.data(), a.data() + a.numel());
    }

private:
    struct BoundCursor {
        std::vector<ad::Tensor<T>>& leaves;
        size_t i;
        ad::Tensor<T> next() { return leaves.at(i++); }
    };

    static void check_finite(const Array<T>& a, const std::string& where) {
        for (int64_t i = 0; i < a.numel(); ++i)
            if (!std::isfinite(static_cast<double>(a[i])))
                throw Error(where + " produced a non-finite activation");
    }

    // One sample-group-extract-aggregate round; consumes this stage's leaves.
    ad::Tensor<T> run_stage(ad::Tape<T>& tape, BoundCursor& cur, const BatchInput& batch, ad::Tensor<T> feats,
                            int64_t s, bool training, ForwardTrace<T>* trace) {
        const int64_t b = batch.batch();
        const int64_t g = cfg_.stage_points[static_cast<size_t>(s)];
        const int64_t k = cfg_.k_neighbors;
        StageParams<T>& st = stages_[static_cast<size_t>(s)];

        auto cent_idx = std::make_shared<Array<int32_t>>(Shape{b, g});
        auto memb_idx = std::make_shared<Array<int32_t>>(Shape{b, g, k});
        Array<T> geom({b, g, k, 3});
        for (int64_t bi = 0; bi < b; ++bi) {
            const GroupingStagePlan& sp = batch.plans[static_cast<size_t>(bi)].stages.at(static_cast<size_t>(s));
            std::copy(sp.centroid_index.begin(), sp.centroid_index.end(), cent_idx->data() + bi * g);
            std::copy(sp.member_index.begin(), sp.member_index.end(), memb_idx->data() + bi * g * k);
            T* dst = geom.data() + bi * g * k * 3;
            for (size_t j = 0; j < sp.member_offsets.size(); ++j) dst[j] = static_cast<T>(sp.member_offsets[j]);
        }

        ad::Tensor<T> g_in;
        if (!feats.valid()) {
            g_in = tape.constant(std::move(geom));
        } else {
            g_in = ad::assemble_group_input(feats, geom, memb_idx, cent_idx);
        }

        ad::Tensor<T> pre_w = cur.next(), pre_b = cur.next();
        ad::Tensor<T> h = ad::linear(g_in, pre_w, pre_b);
        ad::Tensor<T> f_local = bottleneck(tape, cur, h, st.local, training);

        ad::Tensor<T> f_aggre;
        if (cfg_.aggregation == Aggregation::temporal_attention) {
            ad::Tensor<T> aw = cur.next(), ab = cur.next();
            ad::Tensor<T> logits = ad::linear(f_local, aw, ab);
            ad::Tensor<T> a = ad::softmax_last(ad::reshape(logits, {b, g, k}));
            if (trace) trace->stage_attention.push_back(a.value());
            ad::Tensor<T> mixed = ad::batch_matmul(ad::reshape(a, {b, g, 1, k}), f_local);
            f_aggre = ad::reshape(mixed, {b, g, f_local.dim(-1)});
        } else {
            f_aggre = ad::max_axis(f_local, 2);
        }
        return bottleneck(tape, cur, f_aggre, st.global_, training);
    }

    ad::Tensor<T> bottleneck(ad::Tape<T>& tape, BoundCursor& cur, ad::Tensor<T> x, BottleneckParams<T>& p,
                             bool training) {
        (void)tape;
        ad::Tensor<T> w1 = cur.next(), b1 = cur.next(), g1 = cur.next(), be1 = cur.next();
        ad::Tensor<T> i2 = ad::bn_relu(ad::linear(x, w1, b1), g1, be1, p.bn1, training);
        ad::Tensor<T> w2 = cur.next(), b2 = cur.next(), g2 = cur.next(), be2 = cur.next();
        ad::Tensor<T> o2 = ad::batch_norm(ad::linear(i2, w2, b2), g2, be2, p.bn2, training);
        return ad::add_relu(x, o2);
    }

    ad::Tensor<T> run_head(ad::Tape<T>& tape, BoundCursor& cur, ad::Tensor<T> feats, ForwardTrace<T>* trace) {
        const int64_t b = feats.dim(0);
        const int64_t steps = feats.dim(1);
        const int64_t d = feats.dim(2);
        ad::Tensor<T> seq = feats;

        if (cfg_.recurrent != RecurrentKind::none) {
            const int64_t h = cfg_.hidden_size();
            const bool gates = cfg_.recurrent == RecurrentKind::lstm;
            ad::Tensor<T> wx_f = cur.next(), wh_f = cur.next(), b_f = cur.next();
            ad::Tensor<T> vproj_f = cur.next(), vb_f = cur.next();
            std::vector<ad::Tensor<T>> ys(static_cast<size_t>(steps));
            run_direction(tape, seq, wx_f, wh_f, b_f, vproj_f, vb_f, h, gates, false, ys);
            if (cfg_.bidirectional) {
                ad::Tensor<T> wx_b = cur.next(), wh_b = cur.next(), b_b = cur.next();
                ad::Tensor<T> vproj_b = cur.next(), vb_b = cur.next();
                std::vector<ad::Tensor<T>> ys_rev(static_cast<size_t>(steps));
                run_direction(tape, seq, wx_b, wh_b, b_b, vproj_b, vb_b, h, gates, true, ys_rev);
                for (int64_t t = 0; t < steps; ++t)
                    ys[static_cast<size_t>(t)] =
                        ad::concat<T>(-1, {ys[static_cast<size_t>(t)], ys_rev[static_cast<size_t>(t)]});
            }
            seq = ad::concat<T>(1, std::span<const ad::Tensor<T>>(ys));
        }

        if (has_head_attention()) {
            ad::Tensor<T> aw = cur.next(), ab = cur.next();
            ad::Tensor<T> logits = ad::linear(seq, aw, ab);
            ad::Tensor<T> a = ad::softmax_last(ad::reshape(logits, {b, steps}));
            if (trace) trace->sequence_attention = a.value();
            ad::Tensor<T> mixed = ad::batch_matmul(ad::reshape(a, {b, 1, steps}), seq);
            return ad::reshape(mixed, {b, d});
        }
        return ad::max_axis(seq, 1);
    }

    void run_direction(ad::Tape<T>& tape, ad::Tensor<T> seq, ad::Tensor<T> wx, ad::Tensor<T> wh, ad::Tensor<T> bias,
                       ad::Tensor<T> vw, ad::Tensor<T> vb, int64_t hidden, bool gates, bool reversed,
                       std::vector<ad::Tensor<T>>& ys) {
        const int64_t b = seq.dim(0);
        const int64_t steps = seq.dim(1);
        ad::Tensor<T> h = tape.constant(Array<T>({b, 1, hidden}));
        ad::Tensor<T> c = gates ? tape.constant(Array<T>({b, 1, hidden})) : ad::Tensor<T>{};
        for (int64_t i = 0; i < steps; ++i) {
            const int64_t t = reversed ? steps - 1 - i : i;
            ad::Tensor<T> x_t = ad::narrow(seq, 1, t, 1);
            if (gates) {
                auto hc = ad::lstm_cell(x_t, h, c, wx, wh, bias);
                h = hc.h;
                c = hc.c;
            } else {
                h = ad::rnn_cell(x_t, h, wx, wh, bias);
            }
            ys[static_cast<size_t>(t)] = ad::linear(h, vw, vb);
        }
    }

    void collect(std::vector<NamedTensor<T>>& out, bool with_running_stats) {
        auto lin = [&](const std::string& n, LinearParams<T>& p) {
            out.push_back({n + "/w", &p.w, true});
            out.push_back({n + "/b", &p.b, true});
        };
        auto bn = [&](const std::string& n, ad::BatchNormState<T>& p) {
            out.push_back({n + "/gamma", &p.gamma, true});
            out.push_back({n + "/beta", &p.beta, true});
            if (with_running_stats) {
                out.push_back({n + "/running_mean", &p.running_mean, false});
                out.push_back({n + "/running_var", &p.running_var, false});
            }
        };
        auto block = [&](const std::string& n, BottleneckParams<T>& p) {
            lin(n + "/fc1", p.fc1);
            bn(n + "/bn1", p.bn1);
            lin(n + "/fc2", p.fc2);
            bn(n + "/bn2", p.bn2);
        };
        for (size_t s = 0; s < stages_.size(); ++s) {
            const std::string base = "stage" + std::to_string(s);
            lin(base + "/pre", stages_[s].pre);
            block(base + "/local", stages_[s].local);
            if (cfg_.aggregation == Aggregation::temporal_attention) lin(base + "/attn", stages_[s].attn);
            block(base + "/global", stages_[s].global_);
        }
        auto dir = [&](const std::string& n, LstmDirParams<T>& p) {
            out.push_back({n + "/w_x", &p.w_x, true});
            out.push_back({n + "/w_h", &p.w_h, true});
            out.push_back({n + "/b", &p.b, true});
            lin(n + "/proj", p.proj);
        };
        if (fwd_) dir("lstm/fwd", *fwd_);
        if (bwd_) dir("lstm/bwd", *bwd_);
        if (has_head_attention()) lin("head/attn", head_attn_);
        lin("regressor/fc1", reg1_);
        lin("regressor/out", reg2_);
    }

    ModelConfig cfg_;
    std::vector<StageParams<T>> stages_;
    std::optional<LstmDirParams<T>> fwd_, bwd_;
    LinearParams<T> head_attn_;
    LinearParams<T> reg1_, reg2_;
};

inline GroupingPlan make_grouping_plan_for(const Array<double>& cloud, const ModelConfig& cfg) {
    if (cloud.rank() != 2 || cloud.dim(1) != 3)
        throw ShapeError("cloud must be [N,3], got " + shape_str(cloud.shape()));
    if (cloud.dim(0) != cfg.n_points)
        throw ShapeError("cloud has " + std::to_string(cloud.dim(0)) + " points, config expects " +
                         std::to_string(cfg.n_points));
    GroupingPlan plan;
    std::vector<double> coords(cloud.data(), cloud.data() + cloud.numel());
    int64_t n = cloud.dim(0);
    for (int64_t s = 0; s < cfg.stages(); ++s) {
        const int64_t g = cfg.stage_points[static_cast<size_t>(s)];
        GroupingStagePlan sp = build_stage_plan(coords, n, g, cfg.k_neighbors);
        std::vector<double> next(static_cast<size_t>(g * 3));
        for (int64_t i = 0; i < g; ++i) {
            const int64_t src = sp.centroid_index[static_cast<size_t>(i)];
            for (int64_t j = 0; j < 3; ++j) next[static_cast<size_t>(i * 3 + j)] = coords[static_cast<size_t>(src * 3 + j)];
        }
        plan.stages.push_back(std::move(sp));
        coords = std::move(next);
        n = g;
    }
    return plan;
}

// Exact trainable scalar count for a configuration (BN gamma/beta included).
inline int64_t count_parameters(const ModelConfig& cfg) {
    Model<float> m(cfg, 0);
    return m.parameter_count();
}

}  // namespace pepnet
