#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "pepnet/checkpoint.hpp"
#include "pepnet/event_io.hpp"
#include "pepnet/gradcheck.hpp"
#include "pepnet/model.hpp"
#include "pepnet/pipeline.hpp"
#include "pepnet/point_ops.hpp"
#include "pepnet/synth.hpp"
#include "pepnet/train.hpp"
#include "pepnet/util.hpp"

namespace py = pybind11;
using namespace pepnet;

namespace {

using DArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using IArray = py::array_t<int64_t, py::array::c_style | py::array::forcecast>;

// Events travel as int64 [N,4] rows of (t_us, x, y, p).
std::vector<Event> events_from_numpy(const IArray& arr) {
    if (arr.ndim() != 2 || arr.shape(1) != 4) throw Error("events must be an [N,4] array of (t,x,y,p)");
    std::vector<Event> ev(static_cast<size_t>(arr.shape(0)));
    const int64_t* d = arr.data();
    for (size_t i = 0; i < ev.size(); ++i)
        ev[i] = {d[i * 4 + 0], static_cast<int32_t>(d[i * 4 + 1]), static_cast<int32_t>(d[i * 4 + 2]),
                 static_cast<int8_t>(d[i * 4 + 3])};
    return ev;
}

py::array events_to_numpy(const std::vector<Event>& ev) {
    py::array_t<int64_t> out({static_cast<py::ssize_t>(ev.size()), static_cast<py::ssize_t>(4)});
    int64_t* d = out.mutable_data();
    for (size_t i = 0; i < ev.size(); ++i) {
        d[i * 4 + 0] = ev[i].t;
        d[i * 4 + 1] = ev[i].x;
        d[i * 4 + 2] = ev[i].y;
        d[i * 4 + 3] = ev[i].p;
    }
    return out;
}

// Poses travel as float64 [N,8] rows of (t_us, px, py, pz, qw, qx, qy, qz).
py::array poses_to_numpy(const std::vector<PoseSample>& poses) {
    py::array_t<double> out({static_cast<py::ssize_t>(poses.size()), static_cast<py::ssize_t>(8)});
    double* d = out.mutable_data();
    for (size_t i = 0; i < poses.size(); ++i) {
        d[i * 8 + 0] = static_cast<double>(poses[i].t);
        for (int j = 0; j < 3; ++j) d[i * 8 + 1 + j] = poses[i].p[static_cast<size_t>(j)];
        for (int j = 0; j < 4; ++j) d[i * 8 + 4 + j] = poses[i].q[static_cast<size_t>(j)];
    }
    return out;
}

std::vector<PoseSample> poses_from_numpy(const DArray& arr) {
    if (arr.ndim() != 2 || arr.shape(1) != 8) throw Error("poses must be an [N,8] array of (t,px,py,pz,qw,qx,qy,qz)");
    std::vector<PoseSample> poses(static_cast<size_t>(arr.shape(0)));
    const double* d = arr.data();
    for (size_t i = 0; i < poses.size(); ++i) {
        poses[i].t = static_cast<int64_t>(d[i * 8 + 0]);
        poses[i].p = {d[i * 8 + 1], d[i * 8 + 2], d[i * 8 + 3]};
        poses[i].q = rot::normalized({d[i * 8 + 4], d[i * 8 + 5], d[i * 8 + 6], d[i * 8 + 7]});
    }
    return poses;
}

Array<double> clouds_from_numpy(const DArray& arr) {
    if (arr.ndim() == 2 && arr.shape(1) == 3) {
        Array<double> a({arr.shape(0), 3});
        std::copy(arr.data(), arr.data() + arr.size(), a.data());
        return a;
    }
    if (arr.ndim() == 3 && arr.shape(2) == 3) {
        Array<double> a({arr.shape(0), arr.shape(1), 3});
        std::copy(arr.data(), arr.data() + arr.size(), a.data());
        return a;
    }
    throw Error("clouds must be [N,3] or [B,N,3]");
}

template <typename T>
py::array array_to_numpy(const Array<T>& a) {
    std::vector<py::ssize_t> shape(a.shape().begin(), a.shape().end());
    py::array_t<T> out(shape);
    std::copy(a.data(), a.data() + a.numel(), out.mutable_data());
    return out;
}

ModelConfig config_from_dict(const py::dict& d) {
    ModelConfig cfg;
    for (auto item : d) {
        const std::string key = py::cast<std::string>(item.first);
        py::handle v = item.second;
        if (key == "n_points")
            cfg.n_points = py::cast<int64_t>(v);
        else if (key == "stage_points")
            cfg.stage_points = py::cast<std::vector<int64_t>>(v);
        else if (key == "stage_dims")
            cfg.stage_dims = py::cast<std::vector<int64_t>>(v);
        else if (key == "k_neighbors")
            cfg.k_neighbors = py::cast<int64_t>(v);
        else if (key == "lstm_hidden")
            cfg.lstm_hidden = py::cast<int64_t>(v);
        else if (key == "regressor_hidden")
            cfg.regressor_hidden = py::cast<int64_t>(v);
        else if (key == "aggregation") {
            const std::string s = py::cast<std::string>(v);
            if (s == "max")
                cfg.aggregation = Aggregation::max_pool;
            else if (s == "temporal")
                cfg.aggregation = Aggregation::temporal_attention;
            else
                throw Error("aggregation must be 'max' or 'temporal'");
        } else if (key == "recurrent") {
            const std::string s = py::cast<std::string>(v);
            if (s == "none")
                cfg.recurrent = RecurrentKind::none;
            else if (s == "rnn")
                cfg.recurrent = RecurrentKind::vanilla_rnn;
            else if (s == "lstm")
                cfg.recurrent = RecurrentKind::lstm;
            else
                throw Error("recurrent must be 'none', 'rnn' or 'lstm'");
        } else if (key == "bidirectional")
            cfg.bidirectional = py::cast<bool>(v);
        else if (key == "alpha")
            cfg.alpha = py::cast<double>(v);
        else if (key == "beta")
            cfg.beta = py::cast<double>(v);
        else if (key == "lambda")
            cfg.lambda = py::cast<double>(v);
        else if (key == "squared_distance_loss")
            cfg.squared_distance_loss = py::cast<bool>(v);
        else
            throw Error("unknown config key: " + key);
    }
    cfg.validate();
    return cfg;
}

py::dict config_to_dict(const ModelConfig& cfg) {
    py::dict d;
    d["n_points"] = cfg.n_points;
    d["stage_points"] = cfg.stage_points;
    d["stage_dims"] = cfg.stage_dims;
    d["k_neighbors"] = cfg.k_neighbors;
    d["lstm_hidden"] = cfg.lstm_hidden;
    d["regressor_hidden"] = cfg.regressor_hidden;
    d["aggregation"] = cfg.aggregation == Aggregation::max_pool ? "max" : "temporal";
    d["recurrent"] = cfg.recurrent == RecurrentKind::none
                         ? "none"
                         : (cfg.recurrent == RecurrentKind::vanilla_rnn ? "rnn" : "lstm");
    d["bidirectional"] = cfg.bidirectional;
    d["alpha"] = cfg.alpha;
    d["beta"] = cfg.beta;
    d["lambda"] = cfg.lambda;
    d["squared_distance_loss"] = cfg.squared_distance_loss;
    return d;
}

Dataset dataset_from_arrays(const DArray& clouds, const DArray& targets, const DArray* quats) {
    Array<double> c = clouds_from_numpy(clouds);
    if (c.rank() != 3) throw Error("clouds must be [M,N,3]");
    if (targets.ndim() != 2 || targets.shape(1) != 6 || targets.shape(0) != c.dim(0))
        throw Error("targets must be [M,6] aligned with clouds");
    if (quats && (quats->ndim() != 2 || quats->shape(1) != 4 || quats->shape(0) != c.dim(0)))
        throw Error("quats must be [M,4] aligned with clouds");
    Dataset data;
    const int64_t m = c.dim(0), n = c.dim(1);
    for (int64_t i = 0; i < m; ++i) {
        Array<double> one({n, 3});
        std::copy(c.data() + i * n * 3, c.data() + (i + 1) * n * 3, one.data());
        PoseLabel label;
        const double* t = targets.data() + i * 6;
        label.p = {t[0], t[1], t[2]};
        label.euler = {t[3], t[4], t[5]};
        if (quats) {
            const double* q = quats->data() + i * 4;
            label.quat = rot::normalized({q[0], q[1], q[2], q[3]});
        } else {
            label.quat = rot::euler_zyx_to_quat(label.euler);
        }
        data.push(std::move(one), label, i);
    }
    return data;
}

class PyModel {
public:
    PyModel(const py::dict& cfg, uint64_t seed) : model_(config_from_dict(cfg), seed) {}
    explicit PyModel(Model<float> m) : model_(std::move(m)) {}

    py::array predict(const DArray& clouds) {
        Array<double> c = clouds_from_numpy(clouds);
        return array_to_numpy(model_.predict(model_.make_batch(std::move(c))));
    }

    py::array attention_trace(const DArray& cloud) {
        Array<double> c = clouds_from_numpy(cloud);
        if (c.rank() != 2) throw Error("attention_trace expects one [N,3] cloud");
        auto trace = model_.attention_trace(c);
        // explicit shape container: the single-integer ctor builds a
        // zero-stride array with some pybind11 builds
        py::array_t<float> out(std::vector<py::ssize_t>{static_cast<py::ssize_t>(trace.size())});
        std::copy(trace.begin(), trace.end(), out.mutable_data());
        return out;
    }

    int64_t parameter_count() { return model_.parameter_count(); }
    py::dict config() const { return config_to_dict(model_.config()); }
    void save(const std::string& path) { ckpt::save_model(path, model_); }
    static PyModel load(const std::string& path) { return PyModel(ckpt::load_model<float>(path)); }

    std::vector<double> train_on(const DArray& clouds, const DArray& targets, int64_t epochs, int64_t batch_size,
                                 double lr, uint64_t seed) {
        Dataset data = dataset_from_arrays(clouds, targets, nullptr);
        OptimizerConfig opt;
        opt.lr = lr;
        opt.batch_size = batch_size;
        opt.epochs = epochs;
        opt.seed = seed;
        Trainer<float> trainer(model_, data, opt);
        trainer.set_log_medians(false);
        std::vector<double> curve;
        for (const EpochStats& st : trainer.run(epochs)) curve.push_back(st.mean_loss);
        return curve;
    }

    py::dict evaluate_on(const DArray& clouds, const DArray& targets, const DArray& quats) {
        Dataset data = dataset_from_arrays(clouds, targets, &quats);
        EvalReport rep = evaluate(model_, data);
        py::dict d;
        d["median_trans_m"] = rep.median_trans;
        d["median_rot_deg"] = rep.median_rot_deg;
        d["t_plus_r"] = rep.t_plus_r;
        py::list per;
        for (const auto& w : rep.per_window) {
            py::dict e;
            e["window"] = w.window_id;
            e["trans_err_m"] = w.trans_err;
            e["rot_err_deg"] = w.rot_err_deg;
            per.append(e);
        }
        d["per_window"] = per;
        return d;
    }

private:
    Model<float> model_;
};

}  // namespace

PYBIND11_MODULE(_pepnet, m) {
    m.doc() = "Point-based event-camera pose relocalization: parsers, point kernels, model, training";
    tune_allocator();

    m.def(
        "parse_events",
        [](const std::string& text, int32_t width, int32_t height, const std::string& unit,
           const std::string& on_unsorted) {
            EventParseOptions opt;
            opt.width = width;
            opt.height = height;
            opt.unit = unit == "us" ? TimestampUnit::microseconds : TimestampUnit::seconds;
            opt.on_unsorted = on_unsorted == "sort" ? OrderPolicy::sort : OrderPolicy::reject;
            return events_to_numpy(parse_event_stream(text, opt));
        },
        py::arg("text"), py::arg("width") = 240, py::arg("height") = 180, py::arg("unit") = "s",
        py::arg("on_unsorted") = "reject",
        "Parse `t x y p` lines into an [N,4] int64 array of (t_us, x, y, p)");

    m.def(
        "write_events",
        [](const IArray& events, const std::string& unit) {
            std::ostringstream os;
            write_event_stream(os, events_from_numpy(events),
                               unit == "us" ? TimestampUnit::microseconds : TimestampUnit::seconds);
            return os.str();
        },
        py::arg("events"), py::arg("unit") = "s");

    m.def(
        "parse_poses",
        [](const std::string& text) { return poses_to_numpy(parse_pose_file(text)); }, py::arg("text"),
        "Parse `t px py pz qx qy qz qw` lines into an [N,8] array of (t_us, p, q_wxyz)");

    m.def(
        "write_poses",
        [](const DArray& poses) {
            std::ostringstream os;
            write_pose_file(os, poses_from_numpy(poses));
            return os.str();
        },
        py::arg("poses"));

    m.def(
        "segment_windows",
        [](const IArray& events, int64_t chunk_us, int64_t n_p) {
            auto ev = events_from_numpy(events);
            auto windows = pepnet::segment_windows(ev, chunk_us, n_p);
            py::array_t<int64_t> out({static_cast<py::ssize_t>(windows.size()), static_cast<py::ssize_t>(3)});
            int64_t* d = out.mutable_data();
            size_t cursor = 0;
            for (size_t i = 0; i < windows.size(); ++i) {
                while (cursor < ev.size() && ev[cursor].t < windows[i].t_start) ++cursor;
                d[i * 3 + 0] = static_cast<int64_t>(cursor);
                d[i * 3 + 1] = static_cast<int64_t>(cursor) + windows[i].size();
                d[i * 3 + 2] = windows[i].n_chunks;
                cursor += static_cast<size_t>(windows[i].size());
            }
            return out;
        },
        py::arg("events"), py::arg("chunk_us") = 1000, py::arg("n_p") = 1024,
        "Window rows (begin_index, end_index, n_chunks) over a sorted stream");

    m.def(
        "build_clouds",
        [](const IArray& events, const DArray& poses, int64_t chunk_us, int64_t n_p, int64_t n_sample,
           uint64_t seed, int32_t width, int32_t height, int64_t tolerance_us) {
            IngestOptions opt;
            opt.chunk_us = chunk_us;
            opt.n_p = n_p;
            opt.n_sample = n_sample;
            opt.sample_seed = seed;
            opt.width = width;
            opt.height = height;
            opt.label.tolerance_us = tolerance_us;
            auto ev = events_from_numpy(events);
            auto ps = poses_from_numpy(poses);
            Dataset data = build_dataset(ev, ps, opt);
            const int64_t m = data.size();
            py::array_t<double> clouds({m, n_sample, static_cast<int64_t>(3)});
            py::array_t<double> targets({m, static_cast<int64_t>(6)});
            py::array_t<double> quats({m, static_cast<int64_t>(4)});
            py::array_t<int64_t> ids(std::vector<py::ssize_t>{static_cast<py::ssize_t>(m)});
            for (int64_t i = 0; i < m; ++i) {
                const auto& c = data.clouds[static_cast<size_t>(i)];
                std::copy(c.data(), c.data() + c.numel(), clouds.mutable_data() + i * n_sample * 3);
                const auto& l = data.labels[static_cast<size_t>(i)];
                for (int j = 0; j < 3; ++j) {
                    targets.mutable_data()[i * 6 + j] = l.p[static_cast<size_t>(j)];
                    targets.mutable_data()[i * 6 + 3 + j] = l.euler[static_cast<size_t>(j)];
                }
                for (int j = 0; j < 4; ++j) quats.mutable_data()[i * 4 + j] = l.quat[static_cast<size_t>(j)];
                ids.mutable_data()[i] = data.window_ids[static_cast<size_t>(i)];
            }
            return py::make_tuple(clouds, targets, quats, ids);
        },
        py::arg("events"), py::arg("poses"), py::arg("chunk_us") = 1000, py::arg("n_p") = 1024,
        py::arg("n_sample") = 1024, py::arg("seed") = 0, py::arg("width") = 240, py::arg("height") = 180,
        py::arg("tolerance_us") = 10000,
        "Segment, label, sample and normalize: returns (clouds, targets, quats, window_ids)");

    m.def(
        "farthest_point_sample",
        [](const DArray& coords, int64_t n_out) {
            if (coords.ndim() != 2 || coords.shape(1) != 3) throw Error("coords must be [N,3]");
            std::span<const double> span(coords.data(), static_cast<size_t>(coords.size()));
            auto idx = farthest_point_sample(span, coords.shape(0), n_out);
            py::array_t<int32_t> out(std::vector<py::ssize_t>{static_cast<py::ssize_t>(idx.size())});
            std::copy(idx.begin(), idx.end(), out.mutable_data());
            return out;
        },
        py::arg("coords"), py::arg("n_out"));

    m.def(
        "knn_group",
        [](const DArray& coords, const py::array_t<int32_t, py::array::c_style | py::array::forcecast>& centroids,
           int64_t k) {
            if (coords.ndim() != 2 || coords.shape(1) != 3) throw Error("coords must be [N,3]");
            std::span<const double> span(coords.data(), static_cast<size_t>(coords.size()));
            std::span<const int32_t> cent(centroids.data(), static_cast<size_t>(centroids.size()));
            auto idx = knn_indices(span, coords.shape(0), cent, k);
            py::array_t<int32_t> out({static_cast<py::ssize_t>(centroids.size()), static_cast<py::ssize_t>(k)});
            std::copy(idx.begin(), idx.end(), out.mutable_data());
            return out;
        },
        py::arg("coords"), py::arg("centroids"), py::arg("k"));

    m.def(
        "standardize_group",
        [](const DArray& rel) {
            std::span<const double> span(rel.data(), static_cast<size_t>(rel.size()));
            auto out = pepnet::standardize_group(span);
            py::array_t<double> arr({rel.shape(0), rel.shape(1)});
            std::copy(out.begin(), out.end(), arr.mutable_data());
            return arr;
        },
        py::arg("relative_coords"));

    m.def(
        "make_split",
        [](int64_t m, const std::string& mode, double fraction, uint64_t seed) {
            SplitSpec spec;
            spec.mode = mode == "novel" ? SplitSpec::Mode::novel_split : SplitSpec::Mode::random_split;
            spec.train_fraction = fraction;
            spec.seed = seed;
            auto [train, test] = pepnet::make_split(m, spec);
            return py::make_tuple(train, test);
        },
        py::arg("m"), py::arg("mode") = "random", py::arg("fraction") = 0.7, py::arg("seed") = 0);

    m.def(
        "synth_scene",
        [](int64_t landmarks, int64_t duration_us, double noise_rate_hz, uint64_t seed) {
            SceneSpec spec;
            spec.n_landmarks = landmarks;
            spec.duration_us = duration_us;
            spec.noise_rate_hz = noise_rate_hz;
            SynthResult r = generate(spec, seed);
            return py::make_tuple(events_to_numpy(r.events), poses_to_numpy(r.poses));
        },
        py::arg("landmarks") = 40, py::arg("duration_us") = 2000000, py::arg("noise_rate_hz") = 0.0,
        py::arg("seed") = 0, "Generate a synthetic scene; returns (events, poses)");

    m.def("count_parameters", [](const py::dict& cfg) { return count_parameters(config_from_dict(cfg)); });

    m.def("gradcheck", []() {
        py::list out;
        for (const auto& r : gradcheck::run_all()) {
            py::dict d;
            d["name"] = r.name;
            d["cases"] = r.cases;
            d["max_rel_err"] = r.max_rel_err;
            d["pass"] = r.pass;
            out.append(d);
        }
        return out;
    });

    py::class_<PyModel>(m, "Model")
        .def(py::init<const py::dict&, uint64_t>(), py::arg("config") = py::dict(), py::arg("seed") = 1)
        .def("predict", &PyModel::predict, py::arg("clouds"), "Forward pass: [B,N,3] or [N,3] -> [B,6]")
        .def("attention_trace", &PyModel::attention_trace, py::arg("cloud"))
        .def("parameter_count", &PyModel::parameter_count)
        .def("config", &PyModel::config)
        .def("save", &PyModel::save, py::arg("path"))
        .def_static("load", &PyModel::load, py::arg("path"))
        .def("train_on", &PyModel::train_on, py::arg("clouds"), py::arg("targets"), py::arg("epochs") = 10,
             py::arg("batch_size") = 8, py::arg("lr") = 1e-3, py::arg("seed") = 0,
             "Fit on (clouds [M,N,3], targets [M,6]); returns the per-epoch mean loss curve")
        .def("evaluate_on", &PyModel::evaluate_on, py::arg("clouds"), py::arg("targets"), py::arg("quats"),
             "Median translation/rotation errors and the combined T+R metric");
}
