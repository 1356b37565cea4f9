// pepnet command-line front end: synth, ingest, train, eval, gradcheck,
// bench, attn. Exit codes: 0 success, 1 runtime failure, 2 bad usage.
// Diagnostics go to stderr; results and resolved-config headers to stdout.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "pepnet/bench.hpp"
#include "pepnet/checkpoint.hpp"
#include "pepnet/gradcheck.hpp"
#include "pepnet/pipeline.hpp"
#include "pepnet/runconfig.hpp"
#include "pepnet/synth.hpp"
#include "pepnet/train.hpp"
#include "pepnet/util.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace pepnet;

namespace {

int default_threads() {
    if (const char* env = std::getenv("PEPNET_THREADS")) {
        const int v = std::atoi(env);
        if (v >= 1) return v;
    }
    return 1;
}

void print_resolved(const KeyValueConfig& kv) {
    std::istringstream is(kv.serialize());
    std::string line;
    std::cout << "# resolved-config\n";
    while (std::getline(is, line)) std::cout << "# " << line << "\n";
}

struct DatasetBundle {
    Dataset data;
    IngestOptions opt;
    KeyValueConfig cfg;
};

// A dataset directory holds dataset.cfg (source paths + ingest options) and
// manifest.txt; the event/pose files stay wherever ingest found them.
DatasetBundle load_dataset_dir(const std::string& dir) {
    DatasetBundle b;
    b.cfg = KeyValueConfig::parse_file(dir + "/dataset.cfg");
    const std::string events_path = b.cfg.get_str("events", "");
    const std::string poses_path = b.cfg.get_str("poses", "");
    const std::string t_unit = b.cfg.get_str("t_unit", "s");
    if (events_path.empty() || poses_path.empty()) throw Error("dataset.cfg must name `events` and `poses`");
    b.opt = ingest_options_from(b.cfg);
    b.cfg.require_all_consumed();

    EventParseOptions popt;
    popt.width = b.opt.width;
    popt.height = b.opt.height;
    popt.unit = t_unit == "us" ? TimestampUnit::microseconds : TimestampUnit::seconds;
    std::ifstream ef(events_path);
    if (!ef) throw Error("cannot open events '" + events_path + "'");
    auto events = parse_event_stream(ef, popt);
    std::ifstream pf(poses_path);
    if (!pf) throw Error("cannot open poses '" + poses_path + "'");
    auto poses = parse_pose_file(pf);
    auto manifest = read_manifest(dir + "/manifest.txt");
    b.data = dataset_from_manifest(events, poses, manifest, b.opt);
    return b;
}

Dataset apply_split(const Dataset& data, const std::string& split, uint64_t seed, bool test_side) {
    if (split == "none") return data;
    SplitSpec spec;
    spec.seed = seed;
    if (split == "novel")
        spec.mode = SplitSpec::Mode::novel_split;
    else if (split == "random")
        spec.mode = SplitSpec::Mode::random_split;
    else
        throw Error("split must be `none`, `novel` or `random`, got " + split);
    auto [train_idx, test_idx] = make_split(data.size(), spec);
    return data.subset(test_side ? test_idx : train_idx);
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir, uint64_t seed) {
    KeyValueConfig kv;
    if (!spec_path.empty()) kv = KeyValueConfig::parse_file(spec_path);
    SceneSpec spec = scene_spec_from(kv);
    kv.require_all_consumed();

    KeyValueConfig resolved;
    scene_spec_into(spec, resolved);
    resolved.set_int("seed", static_cast<int64_t>(seed));
    print_resolved(resolved);

    SynthResult result = generate(spec, seed);
    for (const std::string& w : result.warnings) std::cerr << "warning: " << w << "\n";
    write_scene(out_dir, result);
    {
        std::ofstream f(out_dir + "/scene.cfg");
        f << resolved.serialize();
    }
    std::cout << "events=" << result.events.size() << " (noise " << result.noise_events << ") poses="
              << result.poses.size() << " visible_landmarks=" << result.visible_landmarks << "\n";
    std::cout << "wrote " << out_dir << "/events.txt, poses.txt, scene.cfg\n";
    return 0;
}

int cmd_ingest(const std::string& events_path, const std::string& poses_path, const std::string& out_dir,
               KeyValueConfig& kv, const std::string& t_unit, const std::string& on_unsorted) {
    IngestOptions opt = ingest_options_from(kv);
    kv.require_all_consumed();

    KeyValueConfig resolved;
    ingest_options_into(opt, resolved);
    resolved.set("events", fs::absolute(events_path).string());
    resolved.set("poses", fs::absolute(poses_path).string());
    resolved.set("t_unit", t_unit);
    print_resolved(resolved);

    EventParseOptions popt;
    popt.width = opt.width;
    popt.height = opt.height;
    popt.unit = t_unit == "us" ? TimestampUnit::microseconds : TimestampUnit::seconds;
    popt.on_unsorted = on_unsorted == "sort" ? OrderPolicy::sort : OrderPolicy::reject;
    ParseDiagnostics diag;
    std::ifstream ef(events_path);
    if (!ef) throw Error("cannot open events '" + events_path + "'");
    auto events = parse_event_stream(ef, popt, &diag);
    std::ifstream pf(poses_path);
    if (!pf) throw Error("cannot open poses '" + poses_path + "'");
    auto poses = parse_pose_file(pf, &diag);
    for (const std::string& w : diag.warnings) std::cerr << "warning: " << w << "\n";

    IngestStats stats;
    std::vector<WindowRecord> manifest;
    Dataset data = build_dataset(events, poses, opt, &stats, &manifest);
    (void)data;

    fs::create_directories(out_dir);
    write_manifest(out_dir + "/manifest.txt", manifest);
    {
        std::ofstream f(out_dir + "/dataset.cfg");
        f << resolved.serialize();
    }
    json j{{"n_events", stats.n_events},
           {"n_poses", stats.n_poses},
           {"n_windows", stats.n_windows},
           {"n_dropped_unlabeled", stats.n_dropped_unlabeled},
           {"n_dropped_degenerate", stats.n_dropped_degenerate},
           {"n_kept", stats.n_kept}};
    {
        std::ofstream f(out_dir + "/stats.json");
        f << j.dump(2) << "\n";
    }
    std::cout << j.dump() << "\n";
    std::cout << "wrote " << out_dir << "/manifest.txt, dataset.cfg, stats.json\n";
    if (stats.n_kept == 0) {
        std::cerr << "error: ingestion kept zero windows\n";
        return 1;
    }
    return 0;
}

int cmd_train(const std::string& data_dir, const std::string& config_path, const std::string& out_dir,
              const std::string& split, uint64_t split_seed, uint64_t model_seed) {
    KeyValueConfig kv;
    if (!config_path.empty()) kv = KeyValueConfig::parse_file(config_path);
    ModelConfig mcfg = model_config_from(kv);
    OptimizerConfig ocfg = optimizer_config_from(kv);
    kv.require_all_consumed();

    DatasetBundle bundle = load_dataset_dir(data_dir);
    if (bundle.opt.n_sample != mcfg.n_points)
        throw Error("dataset samples " + std::to_string(bundle.opt.n_sample) + " points but the model expects " +
                    std::to_string(mcfg.n_points));
    Dataset train_data = apply_split(bundle.data, split, split_seed, false);

    KeyValueConfig resolved;
    model_config_into(mcfg, resolved);
    optimizer_config_into(ocfg, resolved);
    resolved.set("split", split);
    resolved.set_int("split_seed", static_cast<int64_t>(split_seed));
    resolved.set_int("model_seed", static_cast<int64_t>(model_seed));
    resolved.set("data", data_dir);
    print_resolved(resolved);
    std::cout << "train_windows=" << train_data.size() << " parameters=" << count_parameters(mcfg) << "\n";

    fs::create_directories(out_dir);
    {
        std::ofstream f(out_dir + "/resolved.cfg");
        f << resolved.serialize();
    }

    Model<float> model(mcfg, model_seed);
    Trainer<float> trainer(model, train_data, ocfg);
    std::ofstream curve(out_dir + "/loss_curve.csv");
    curve << "epoch,mean_loss,median_trans,median_rot\n";
    curve.precision(12);
    trainer.set_epoch_callback([&](const EpochStats& st) {
        curve << st.epoch << "," << st.mean_loss << "," << st.median_trans << "," << st.median_rot_deg << "\n";
        curve.flush();
        if (st.epoch % 10 == 0 || st.epoch == ocfg.epochs - 1)
            std::cerr << "epoch " << st.epoch << " loss " << st.mean_loss << " median_trans " << st.median_trans
                      << " median_rot " << st.median_rot_deg << " lr " << st.lr << "\n";
    });
    trainer.run(ocfg.epochs);

    ckpt::save_model(out_dir + "/final.pepw", model);
    trainer.restore_best();
    ckpt::save_model(out_dir + "/best.pepw", model);
    std::cout << "wrote " << out_dir << "/final.pepw, best.pepw, loss_curve.csv (best epoch "
              << trainer.best_epoch() << ")\n";
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir, const std::string& split,
             uint64_t split_seed, const std::string& report_path, int threads) {
    Model<float> model = ckpt::load_model<float>(checkpoint);
    DatasetBundle bundle = load_dataset_dir(data_dir);
    Dataset test_data = apply_split(bundle.data, split, split_seed, true);

    KeyValueConfig resolved;
    model_config_into(model.config(), resolved);
    resolved.set("checkpoint", checkpoint);
    resolved.set("data", data_dir);
    resolved.set("split", split);
    resolved.set_int("split_seed", static_cast<int64_t>(split_seed));
    resolved.set_int("threads", threads);
    print_resolved(resolved);

    EvalReport rep = evaluate(model, test_data, threads);
    std::cout << "windows          " << rep.per_window.size() << "\n";
    std::cout << "median_trans_m   " << rep.median_trans << "\n";
    std::cout << "median_rot_deg   " << rep.median_rot_deg << "\n";
    std::cout << "t_plus_r         " << rep.t_plus_r << "\n";

    std::ofstream f(report_path);
    if (!f) throw Error("cannot write report '" + report_path + "'");
    for (const auto& w : rep.per_window)
        f << json{{"window", w.window_id}, {"trans_err_m", w.trans_err}, {"rot_err_deg", w.rot_err_deg}}.dump()
          << "\n";
    f << json{{"median_trans_m", rep.median_trans},
              {"median_rot_deg", rep.median_rot_deg},
              {"t_plus_r", rep.t_plus_r},
              {"windows", rep.per_window.size()}}
             .dump()
      << "\n";
    std::cout << "wrote " << report_path << "\n";
    return 0;
}

int cmd_gradcheck() {
    auto reports = gradcheck::run_all();
    std::cout << gradcheck::format_table(reports);
    return gradcheck::all_pass(reports) ? 0 : 1;
}

int cmd_bench(const std::string& kernel, int64_t n, int64_t n_out, int64_t k, int64_t reps, uint64_t seed) {
    bench::Kernel kn;
    if (kernel == "fps")
        kn = bench::Kernel::fps;
    else if (kernel == "knn")
        kn = bench::Kernel::knn;
    else if (kernel == "forward")
        kn = bench::Kernel::forward;
    else
        throw Error("kernel must be fps, knn or forward");
    std::cout << "# kernel=" << kernel << " n=" << n << " n_out=" << n_out << " k=" << k << " reps=" << reps
              << " seed=" << seed << "\n";
    auto stats = bench::run_kernel(kn, n, n_out, k, reps, seed);
    std::cout << bench::csv_header() << "\n" << bench::csv_row(stats) << "\n";
    return 0;
}

int cmd_attn(const std::string& checkpoint, const std::string& data_dir, int64_t window) {
    Model<float> model = ckpt::load_model<float>(checkpoint);
    DatasetBundle bundle = load_dataset_dir(data_dir);
    int64_t idx = -1;
    for (int64_t i = 0; i < bundle.data.size(); ++i)
        if (bundle.data.window_ids[static_cast<size_t>(i)] == window) idx = i;
    if (idx < 0) throw Error("window id " + std::to_string(window) + " not present in the dataset");
    auto trace = model.attention_trace(bundle.data.clouds[static_cast<size_t>(idx)]);
    std::cout << "# checkpoint=" << checkpoint << " window=" << window << "\n";
    std::cout << "index,attention\n";
    std::cout.precision(9);
    for (size_t i = 0; i < trace.size(); ++i) std::cout << i << "," << trace[i] << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    tune_allocator();
    CLI::App app{"Point-based event-camera pose relocalization pipeline"};
    app.require_subcommand(1);

    std::string spec_path, out_dir = "out", events_path, poses_path, data_dir, config_path, checkpoint;
    std::string split = "novel", kernel = "fps", t_unit = "s", report_path = "report.jsonl";
    uint64_t seed = 0, split_seed = 0, model_seed = 1;
    int64_t bench_n = 1024, bench_nout = 512, bench_k = 24, reps = 50, window = 0;
    int threads = default_threads();
    KeyValueConfig ingest_kv;
    int64_t chunk_us = 1000, n_p = 1024, n_sample = 1024, width = 240, height = 180, tolerance_us = 10000;
    std::string label_at = "end";
    uint64_t sample_seed = 0;

    auto* synth = app.add_subcommand("synth", "Generate a synthetic scene (events.txt + poses.txt)");
    synth->add_option("--spec", spec_path, "Scene spec file (key=value); defaults apply when omitted");
    synth->add_option("--out", out_dir, "Output directory")->required();
    synth->add_option("--seed", seed, "Scene seed");

    auto* ingest = app.add_subcommand("ingest", "Segment and label an event stream into a dataset directory");
    ingest->add_option("--events", events_path, "Event text file")->required();
    ingest->add_option("--poses", poses_path, "Pose text file")->required();
    ingest->add_option("--out", out_dir, "Dataset directory")->required();
    ingest->add_option("--R,--chunk-us", chunk_us, "Accumulation chunk length in us");
    ingest->add_option("--Np,--window-events", n_p, "Window closes once its event count exceeds this");
    ingest->add_option("--N,--sample-points", n_sample, "Points sampled per window");
    ingest->add_option("--seed", sample_seed, "Sampling seed");
    ingest->add_option("--width", width, "Sensor width");
    ingest->add_option("--height", height, "Sensor height");
    ingest->add_option("--t-unit", t_unit, "Timestamp unit in the event file: s or us")
        ->check(CLI::IsMember({"s", "us"}));
    std::string on_unsorted = "reject";
    ingest->add_option("--on-unsorted", on_unsorted, "Decreasing timestamps: reject or sort (warn)")
        ->check(CLI::IsMember({"reject", "sort"}));
    ingest->add_option("--label-at", label_at, "Pose association point: start, mid, end")
        ->check(CLI::IsMember({"start", "mid", "end"}));
    ingest->add_option("--tolerance-us", tolerance_us, "Maximum pose distance for labeling");

    auto* train = app.add_subcommand("train", "Train a model on a dataset directory");
    train->add_option("--data", data_dir, "Dataset directory from `ingest`")->required();
    train->add_option("--config", config_path, "Run config (key=value); defaults apply when omitted");
    train->add_option("--out", out_dir, "Output directory")->required();
    train->add_option("--split", split, "none, novel or random (train side)")
        ->check(CLI::IsMember({"none", "novel", "random"}));
    train->add_option("--split-seed", split_seed, "Split seed (random mode)");
    train->add_option("--model-seed", model_seed, "Parameter initialization seed");

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test side of a split");
    eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    eval->add_option("--data", data_dir, "Dataset directory")->required();
    eval->add_option("--split", split, "novel, random or none (test side)")
        ->check(CLI::IsMember({"none", "novel", "random"}));
    eval->add_option("--seed", split_seed, "Split seed (random mode)");
    eval->add_option("--out", report_path, "JSON-lines report path");
    eval->add_option("--threads", threads, "Worker threads (1 = bit-deterministic)");

    auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Run the finite-difference suite");

    auto* bench_cmd = app.add_subcommand("bench", "Micro-benchmark kernels, CSV to stdout");
    bench_cmd->add_option("--kernel", kernel, "fps, knn or forward")
        ->check(CLI::IsMember({"fps", "knn", "forward"}));
    bench_cmd->add_option("--N", bench_n, "Input points");
    bench_cmd->add_option("--Nprime", bench_nout, "Centroids");
    bench_cmd->add_option("--K", bench_k, "Neighbors per group");
    bench_cmd->add_option("--reps", reps, "Repetitions");
    bench_cmd->add_option("--seed", seed, "Input seed");

    auto* attn = app.add_subcommand("attn", "Dump sequence attention values for one window, CSV");
    attn->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    attn->add_option("--data", data_dir, "Dataset directory")->required();
    attn->add_option("--window", window, "Window id from the manifest")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);  // prints the message
        return 2;
    }

    try {
        if (synth->parsed()) return cmd_synth(spec_path, out_dir, seed);
        if (ingest->parsed()) {
            ingest_kv.set_int("chunk_us", chunk_us);
            ingest_kv.set_int("window_events", n_p);
            ingest_kv.set_int("sample_points", n_sample);
            ingest_kv.set_int("sample_seed", static_cast<int64_t>(sample_seed));
            ingest_kv.set_int("sensor_width", width);
            ingest_kv.set_int("sensor_height", height);
            ingest_kv.set("label_at", label_at);
            ingest_kv.set_int("label_tolerance_us", tolerance_us);
            return cmd_ingest(events_path, poses_path, out_dir, ingest_kv, t_unit, on_unsorted);
        }
        if (train->parsed()) return cmd_train(data_dir, config_path, out_dir, split, split_seed, model_seed);
        if (eval->parsed()) return cmd_eval(checkpoint, data_dir, split, split_seed, report_path, threads);
        if (gradcheck_cmd->parsed()) return cmd_gradcheck();
        if (bench_cmd->parsed()) return cmd_bench(kernel, bench_n, bench_nout, bench_k, reps, seed);
        if (attn->parsed()) return cmd_attn(checkpoint, data_dir, window);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
