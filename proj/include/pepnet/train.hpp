#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <future>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pepnet/event_io.hpp"
#include "pepnet/model.hpp"
#include "pepnet/rotation.hpp"

namespace pepnet {

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

struct SplitSpec {
    enum class Mode { random_split, novel_split };
    Mode mode = Mode::random_split;
    double train_fraction = 0.7;
    uint64_t seed = 0;
};

// Random mode: seeded shuffle, first floor(fraction*M) train. Novel mode:
// chronological cut at the same index. Outputs are ascending index sets that
// partition 0..M-1.
inline std::pair<std::vector<int64_t>, std::vector<int64_t>> make_split(int64_t m, const SplitSpec& spec) {
    if (m < 2) throw Error("cannot split fewer than 2 windows");
    if (spec.train_fraction <= 0.0 || spec.train_fraction >= 1.0)
        throw Error("train_fraction must be inside (0, 1)");
    const int64_t n_train = static_cast<int64_t>(std::floor(spec.train_fraction * static_cast<double>(m)));
    std::vector<int64_t> idx(static_cast<size_t>(m));
    std::iota(idx.begin(), idx.end(), 0);
    if (spec.mode == SplitSpec::Mode::random_split) {
        std::mt19937_64 rng(spec.seed);
        std::shuffle(idx.begin(), idx.end(), rng);
    }
    std::vector<int64_t> train(idx.begin(), idx.begin() + n_train);
    std::vector<int64_t> test(idx.begin() + n_train, idx.end());
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
    return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

struct Dataset {
    std::vector<Array<double>> clouds;  // each [N, 3]
    std::vector<PoseLabel> labels;
    std::vector<int64_t> window_ids;

    int64_t size() const { return static_cast<int64_t>(clouds.size()); }

    void push(Array<double> cloud, PoseLabel label, int64_t window_id) {
        clouds.push_back(std::move(cloud));
        labels.push_back(label);
        window_ids.push_back(window_id);
    }

    Dataset subset(std::span<const int64_t> idx) const {
        Dataset out;
        for (int64_t i : idx) {
            out.clouds.push_back(clouds.at(static_cast<size_t>(i)));
            out.labels.push_back(labels.at(static_cast<size_t>(i)));
            out.window_ids.push_back(window_ids.at(static_cast<size_t>(i)));
        }
        return out;
    }
};

// Pose regression target: translation then Euler angles.
template <typename T>
Array<T> label_targets(std::span<const PoseLabel> labels) {
    Array<T> t({static_cast<int64_t>(labels.size()), 6});
    for (size_t i = 0; i < labels.size(); ++i)
        for (int j = 0; j < 3; ++j) {
            t[static_cast<int64_t>(i) * 6 + j] = static_cast<T>(labels[i].p[static_cast<size_t>(j)]);
            t[static_cast<int64_t>(i) * 6 + 3 + j] = static_cast<T>(labels[i].euler[static_cast<size_t>(j)]);
        }
    return t;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

enum class RotationMetric { geodesic, euler_norm };

struct PerWindowError {
    int64_t window_id = -1;
    double trans_err = 0.0;    // meters
    double rot_err_deg = 0.0;  // degrees
};

struct EvalReport {
    double median_trans = 0.0;
    double median_rot_deg = 0.0;
    double t_plus_r = 0.0;  // 100 * (median_trans + median_rot * pi / 180)
    std::vector<PerWindowError> per_window;
};

// Lower median: element floor((n-1)/2) of the sorted list.
inline double lower_median(std::vector<double> v) {
    if (v.empty()) throw Error("median of empty list");
    std::sort(v.begin(), v.end());
    return v[(v.size() - 1) / 2];
}

inline EvalReport report_from_errors(std::vector<PerWindowError> errs) {
    if (errs.empty()) throw Error("evaluation needs at least one window");
    EvalReport rep;
    std::vector<double> t, r;
    t.reserve(errs.size());
    r.reserve(errs.size());
    for (const auto& e : errs) {
        t.push_back(e.trans_err);
        r.push_back(e.rot_err_deg);
    }
    rep.median_trans = lower_median(std::move(t));
    rep.median_rot_deg = lower_median(std::move(r));
    rep.t_plus_r = 100.0 * (rep.median_trans + rep.median_rot_deg * 3.14159265358979323846 / 180.0);
    rep.per_window = std::move(errs);
    return rep;
}

inline PerWindowError pose_error(std::span<const double> pred6, const PoseLabel& label, int64_t window_id,
                                 RotationMetric metric = RotationMetric::geodesic) {
    PerWindowError e;
    e.window_id = window_id;
    double sq = 0.0;
    for (int j = 0; j < 3; ++j) {
        const double d = pred6[static_cast<size_t>(j)] - label.p[static_cast<size_t>(j)];
        sq += d * d;
    }
    e.trans_err = std::sqrt(sq);
    if (metric == RotationMetric::geodesic) {
        rot::Vec3 euler{pred6[3], pred6[4], pred6[5]};
        e.rot_err_deg = rot::geodesic_angle_deg(rot::euler_zyx_to_matrix(euler), rot::quat_to_matrix(label.quat));
    } else {
        double s = 0.0;
        for (int j = 0; j < 3; ++j) {
            const double d = pred6[static_cast<size_t>(3 + j)] - label.euler[static_cast<size_t>(j)];
            s += d * d;
        }
        e.rot_err_deg = std::sqrt(s) * 180.0 / 3.14159265358979323846;
    }
    return e;
}

// Evaluates predictions already laid out as [M, 6] against their labels.
inline EvalReport evaluate_pairs(const Array<double>& preds, std::span<const PoseLabel> labels,
                                 std::span<const int64_t> window_ids,
                                 RotationMetric metric = RotationMetric::geodesic) {
    if (preds.dim(0) != static_cast<int64_t>(labels.size())) throw ShapeError("one prediction per label required");
    std::vector<PerWindowError> errs;
    errs.reserve(labels.size());
    for (size_t i = 0; i < labels.size(); ++i) {
        std::span<const double> row(preds.data() + static_cast<int64_t>(i) * 6, 6);
        const int64_t wid = window_ids.empty() ? static_cast<int64_t>(i) : window_ids[i];
        errs.push_back(pose_error(row, labels[i], wid, metric));
    }
    return report_from_errors(std::move(errs));
}

template <typename T>
EvalReport evaluate(Model<T>& model, const Dataset& data, int threads = 1,
                    RotationMetric metric = RotationMetric::geodesic) {
    if (data.size() == 0) throw Error("evaluation needs at least one window");
    const int64_t m = data.size();
    Array<double> preds({m, 6});
    const int64_t chunk = 16;  // windows per forward
    std::vector<std::pair<int64_t, int64_t>> ranges;
    for (int64_t s = 0; s < m; s += chunk) ranges.emplace_back(s, std::min(m, s + chunk));

    auto run_range = [&](std::pair<int64_t, int64_t> r) {
        for (int64_t i = r.first; i < r.second; ++i) {
            Array<T> p = model.predict(model.make_batch(data.clouds[static_cast<size_t>(i)]));
            for (int j = 0; j < 6; ++j) preds[i * 6 + j] = static_cast<double>(p[j]);
        }
    };
    if (threads <= 1) {
        for (auto& r : ranges) run_range(r);
    } else {
        std::vector<std::future<void>> futs;
        std::atomic<size_t> next{0};
        for (int t = 0; t < threads; ++t)
            futs.push_back(std::async(std::launch::async, [&]() {
                size_t i;
                while ((i = next.fetch_add(1)) < ranges.size()) run_range(ranges[i]);
            }));
        for (auto& f : futs) f.get();
    }
    return evaluate_pairs(preds, data.labels, data.window_ids, metric);
}

// ---------------------------------------------------------------------------
// Optimizer and trainer
// ---------------------------------------------------------------------------

enum class OptimizerKind { adam, sgd };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adam;
    double lr = 1e-3;
    double beta1 = 0.9;   // adam only
    double beta2 = 0.999; // adam only
    double eps = 1e-8;
    double momentum = 0.0;  // sgd only
    int64_t batch_size = 32;
    int64_t epochs = 100;
    double decay_factor = 0.5;
    int64_t decay_every = 40;
    uint64_t seed = 0;
};

template <typename T>
class Optimizer {
public:
    explicit Optimizer(const OptimizerConfig& cfg) : cfg_(cfg) {}

    void step(std::vector<NamedTensor<T>>& params, const std::vector<Array<T>>& grads, double lr) {
        if (m_.empty()) {
            for (auto& p : params) {
                m_.push_back(Array<T>(p.array->shape()));
                if (cfg_.kind == OptimizerKind::adam) v_.push_back(Array<T>(p.array->shape()));
            }
        }
        ++t_;
        if (cfg_.kind == OptimizerKind::sgd) {
            // momentum 0 reduces to w -= lr * g exactly
            for (size_t i = 0; i < params.size(); ++i) {
                Array<T>& w = *params[i].array;
                const Array<T>& g = grads[i];
                Array<T>& m = m_[i];
                for (int64_t j = 0; j < w.numel(); ++j) {
                    const double mj = cfg_.momentum * static_cast<double>(m[j]) + static_cast<double>(g[j]);
                    m[j] = static_cast<T>(mj);
                    w[j] = static_cast<T>(static_cast<double>(w[j]) - lr * mj);
                }
            }
            return;
        }
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (size_t i = 0; i < params.size(); ++i) {
            Array<T>& w = *params[i].array;
            const Array<T>& g = grads[i];
            Array<T>& m = m_[i];
            Array<T>& v = v_[i];
            for (int64_t j = 0; j < w.numel(); ++j) {
                const double gj = static_cast<double>(g[j]);
                const double mj = cfg_.beta1 * static_cast<double>(m[j]) + (1.0 - cfg_.beta1) * gj;
                const double vj = cfg_.beta2 * static_cast<double>(v[j]) + (1.0 - cfg_.beta2) * gj * gj;
                m[j] = static_cast<T>(mj);
                v[j] = static_cast<T>(vj);
                const double update = lr * (mj / bc1) / (std::sqrt(vj / bc2) + cfg_.eps);
                w[j] = static_cast<T>(static_cast<double>(w[j]) - update);
            }
        }
    }

    int64_t steps() const { return t_; }

private:
    OptimizerConfig cfg_;
    std::vector<Array<T>> m_, v_;
    int64_t t_ = 0;
};

template <typename T>
using Adam = Optimizer<T>;

struct EpochStats {
    int64_t epoch = 0;
    double mean_loss = 0.0;
    double median_trans = 0.0;
    double median_rot_deg = 0.0;
    double lr = 0.0;
};

template <typename T>
class Trainer {
public:
    Trainer(Model<T>& model, Dataset train_data, OptimizerConfig cfg)
        : model_(model), data_(std::move(train_data)), cfg_(cfg), optim_(cfg) {
        if (data_.size() == 0) throw Error("training needs a non-empty dataset");
        plans_.reserve(static_cast<size_t>(data_.size()));
        for (const auto& cloud : data_.clouds) plans_.push_back(model_.make_plan(cloud));
    }

    // Optional held-out set; when present the best snapshot tracks its T+R.
    void set_validation(Dataset val) { val_ = std::move(val); }

    // When disabled, per-epoch medians are skipped (and reported as zero).
    void set_log_medians(bool v) { log_medians_ = v; }

    void set_epoch_callback(std::function<void(const EpochStats&)> cb) { on_epoch_ = std::move(cb); }

    std::vector<EpochStats> run(int64_t epochs) {
        std::vector<EpochStats> curve;
        auto params = model_.trainable();
        const int64_t m = data_.size();
        // One seeded shuffle for the whole run: identical batch composition
        // every epoch keeps the batch-norm statistics (and therefore the
        // frozen-weights loss) reproducible epoch to epoch.
        std::vector<int64_t> order(static_cast<size_t>(m));
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 rng(cfg_.seed * 0x9e3779b97f4a7c15ULL + 1);
        std::shuffle(order.begin(), order.end(), rng);

        for (int64_t epoch = 0; epoch < epochs; ++epoch) {
            const double lr = cfg_.lr * std::pow(cfg_.decay_factor,
                                                 static_cast<double>(cfg_.decay_every > 0 ? epoch / cfg_.decay_every : 0));
            double loss_sum = 0.0;
            int64_t seen = 0;
            for (int64_t s = 0; s < m; s += cfg_.batch_size) {
                const int64_t e = std::min(m, s + cfg_.batch_size);
                const int64_t b = e - s;
                BatchInput batch = gather_batch(order, s, e);
                Array<T> targets({b, 6});
                for (int64_t i = 0; i < b; ++i) {
                    const PoseLabel& lb = data_.labels[static_cast<size_t>(order[static_cast<size_t>(s + i)])];
                    for (int j = 0; j < 3; ++j) {
                        targets[i * 6 + j] = static_cast<T>(lb.p[static_cast<size_t>(j)]);
                        targets[i * 6 + 3 + j] = static_cast<T>(lb.euler[static_cast<size_t>(j)]);
                    }
                }

                ad::Tape<T> tape;
                auto bound = model_.bind(tape, true);
                auto pred = model_.forward(tape, bound, batch, true);
                auto loss = model_.loss(tape, bound, pred, targets);
                const double loss_v = static_cast<double>(loss.value()[0]);
                if (!std::isfinite(loss_v))
                    throw Error("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                std::to_string(s / cfg_.batch_size));
                tape.backward(loss);
                std::vector<Array<T>> grads;
                grads.reserve(bound.size());
                for (auto& leaf : bound) grads.push_back(tape.grad(leaf));
                optim_.step(params, grads, lr);

                loss_sum += loss_v * static_cast<double>(b);
                seen += b;
            }

            EpochStats st;
            st.epoch = epoch;
            st.mean_loss = loss_sum / static_cast<double>(seen);
            st.lr = lr;
            if (log_medians_) {
                EvalReport rep = evaluate(model_, data_);
                st.median_trans = rep.median_trans;
                st.median_rot_deg = rep.median_rot_deg;
            }
            track_best(st);
            if (on_epoch_) on_epoch_(st);
            curve.push_back(st);
        }
        return curve;
    }

    // Parameters and running stats of the best epoch seen so far.
    bool has_best() const { return !best_state_.empty(); }
    double best_score() const { return best_score_; }
    int64_t best_epoch() const { return best_epoch_; }

    void restore_best() {
        if (best_state_.empty()) throw Error("no best snapshot recorded yet");
        auto tensors = model_.state_tensors();
        for (size_t i = 0; i < tensors.size(); ++i) *tensors[i].array = best_state_[i];
    }

private:
    BatchInput gather_batch(const std::vector<int64_t>& order, int64_t s, int64_t e) {
        const int64_t b = e - s;
        const int64_t n = model_.config().n_points;
        BatchInput batch;
        batch.clouds = Array<double>({b, n, 3});
        batch.plans.reserve(static_cast<size_t>(b));
        for (int64_t i = 0; i < b; ++i) {
            const int64_t src = order[static_cast<size_t>(s + i)];
            const Array<double>& c = data_.clouds[static_cast<size_t>(src)];
            std::copy(c.data(), c.data() + c.numel(), batch.clouds.data() + i * n * 3);
            batch.plans.push_back(plans_[static_cast<size_t>(src)]);
        }
        return batch;
    }

    void track_best(const EpochStats& st) {
        double score;
        if (val_) {
            EvalReport rep = evaluate(model_, *val_);
            score = rep.t_plus_r;
        } else {
            score = st.mean_loss;
        }
        if (best_state_.empty() || score < best_score_) {
            best_score_ = score;
            best_epoch_ = st.epoch;
            best_state_.clear();
            for (auto& t : model_.state_tensors()) best_state_.push_back(*t.array);
        }
    }

    Model<T>& model_;
    Dataset data_;
    OptimizerConfig cfg_;
    Optimizer<T> optim_;
    std::vector<GroupingPlan> plans_;
    std::optional<Dataset> val_;
    bool log_medians_ = true;
    std::function<void(const EpochStats&)> on_epoch_;
    std::vector<Array<T>> best_state_;
    double best_score_ = 0.0;
    int64_t best_epoch_ = -1;
};

// ---------------------------------------------------------------------------
// Ablations
// ---------------------------------------------------------------------------

// The six study conditions, ordered: hierarchy only with max pooling, then
// temporal aggregation, then +LSTM and +Bi-LSTM crossed with both modes.
inline std::vector<ModelConfig> ablation_matrix(const ModelConfig& base) {
    std::vector<ModelConfig> out(6, base);
    auto set = [&](size_t i, RecurrentKind rk, bool bi, Aggregation agg) {
        out[i].recurrent = rk;
        out[i].bidirectional = bi;
        out[i].aggregation = agg;
    };
    set(0, RecurrentKind::none, false, Aggregation::max_pool);
    set(1, RecurrentKind::none, false, Aggregation::temporal_attention);
    set(2, RecurrentKind::lstm, false, Aggregation::max_pool);
    set(3, RecurrentKind::lstm, false, Aggregation::temporal_attention);
    set(4, RecurrentKind::lstm, true, Aggregation::max_pool);
    set(5, RecurrentKind::lstm, true, Aggregation::temporal_attention);
    return out;
}

}  // namespace pepnet
