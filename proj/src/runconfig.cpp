#include "pepnet/runconfig.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace pepnet {

namespace {

std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::istream& in) {
    KeyValueConfig cfg;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const size_t eq = t.find('=');
        if (eq == std::string::npos) throw ParseError("expected `key=value`", line_no);
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (key.empty()) throw ParseError("empty key", line_no);
        if (cfg.kv_.count(key)) throw ParseError("duplicate key '" + key + "'", line_no);
        cfg.kv_[key] = value;
    }
    return cfg;
}

KeyValueConfig KeyValueConfig::parse_text(const std::string& text) {
    std::istringstream is(text);
    return parse(is);
}

KeyValueConfig KeyValueConfig::parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error("cannot open config '" + path + "'");
    return parse(f);
}

std::string KeyValueConfig::get_str(const std::string& key, const std::string& fallback) {
    consumed_.insert(key);
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
}

int64_t KeyValueConfig::get_int(const std::string& key, int64_t fallback) {
    consumed_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
        size_t pos = 0;
        int64_t v = std::stoll(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("");
        return v;
    } catch (...) {
        throw Error("config key '" + key + "' is not an integer: " + it->second);
    }
}

double KeyValueConfig::get_double(const std::string& key, double fallback) {
    consumed_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
        size_t pos = 0;
        double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("");
        return v;
    } catch (...) {
        throw Error("config key '" + key + "' is not a number: " + it->second);
    }
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) {
    consumed_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    std::string v = it->second;
    std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw Error("config key '" + key + "' is not a boolean: " + it->second);
}

std::vector<int64_t> KeyValueConfig::get_int_list(const std::string& key, std::vector<int64_t> fallback) {
    consumed_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    std::vector<int64_t> out;
    std::stringstream ss(it->second);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok = trim(tok);
        if (tok.empty()) continue;
        try {
            out.push_back(std::stoll(tok));
        } catch (...) {
            throw Error("config key '" + key + "' is not a comma list of integers: " + it->second);
        }
    }
    if (out.empty()) throw Error("config key '" + key + "' is empty");
    return out;
}

void KeyValueConfig::set_double(const std::string& key, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    kv_[key] = buf;
}

void KeyValueConfig::set_int_list(const std::string& key, const std::vector<int64_t>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    kv_[key] = s;
}

void KeyValueConfig::require_all_consumed() const {
    std::string unknown;
    for (const auto& [key, value] : kv_)
        if (!consumed_.count(key)) unknown += (unknown.empty() ? "" : ", ") + key;
    if (!unknown.empty()) throw Error("unknown config keys: " + unknown);
}

std::string KeyValueConfig::serialize() const {
    std::string out;
    for (const auto& [key, value] : kv_) out += key + "=" + value + "\n";
    return out;
}

ModelConfig model_config_from(KeyValueConfig& kv) {
    ModelConfig cfg;
    cfg.n_points = kv.get_int("n_points", cfg.n_points);
    cfg.stage_points = kv.get_int_list("stage_points", cfg.stage_points);
    cfg.stage_dims = kv.get_int_list("stage_dims", cfg.stage_dims);
    cfg.k_neighbors = kv.get_int("k_neighbors", cfg.k_neighbors);
    cfg.lstm_hidden = kv.get_int("lstm_hidden", cfg.lstm_hidden);
    cfg.regressor_hidden = kv.get_int("regressor_hidden", cfg.regressor_hidden);
    const std::string agg = kv.get_str("aggregation", "temporal");
    if (agg == "max")
        cfg.aggregation = Aggregation::max_pool;
    else if (agg == "temporal")
        cfg.aggregation = Aggregation::temporal_attention;
    else
        throw Error("aggregation must be `max` or `temporal`, got " + agg);
    const std::string rec = kv.get_str("recurrent", "lstm");
    if (rec == "none")
        cfg.recurrent = RecurrentKind::none;
    else if (rec == "rnn")
        cfg.recurrent = RecurrentKind::vanilla_rnn;
    else if (rec == "lstm")
        cfg.recurrent = RecurrentKind::lstm;
    else
        throw Error("recurrent must be `none`, `rnn` or `lstm`, got " + rec);
    cfg.bidirectional = kv.get_bool("bidirectional", cfg.bidirectional);
    cfg.alpha = kv.get_double("alpha", cfg.alpha);
    cfg.beta = kv.get_double("beta", cfg.beta);
    cfg.lambda = kv.get_double("lambda", cfg.lambda);
    cfg.squared_distance_loss = kv.get_bool("squared_distance_loss", cfg.squared_distance_loss);
    cfg.validate();
    return cfg;
}

void model_config_into(const ModelConfig& cfg, KeyValueConfig& kv) {
    kv.set_int("n_points", cfg.n_points);
    kv.set_int_list("stage_points", cfg.stage_points);
    kv.set_int_list("stage_dims", cfg.stage_dims);
    kv.set_int("k_neighbors", cfg.k_neighbors);
    kv.set_int("lstm_hidden", cfg.lstm_hidden);
    kv.set_int("regressor_hidden", cfg.regressor_hidden);
    kv.set("aggregation", cfg.aggregation == Aggregation::max_pool ? "max" : "temporal");
    kv.set("recurrent", cfg.recurrent == RecurrentKind::none
                            ? "none"
                            : (cfg.recurrent == RecurrentKind::vanilla_rnn ? "rnn" : "lstm"));
    kv.set_bool("bidirectional", cfg.bidirectional);
    kv.set_double("alpha", cfg.alpha);
    kv.set_double("beta", cfg.beta);
    kv.set_double("lambda", cfg.lambda);
    kv.set_bool("squared_distance_loss", cfg.squared_distance_loss);
}

OptimizerConfig optimizer_config_from(KeyValueConfig& kv) {
    OptimizerConfig cfg;
    const std::string kind = kv.get_str("optimizer", "adam");
    if (kind == "adam")
        cfg.kind = OptimizerKind::adam;
    else if (kind == "sgd")
        cfg.kind = OptimizerKind::sgd;
    else
        throw Error("optimizer must be `adam` or `sgd`, got " + kind);
    cfg.momentum = kv.get_double("momentum", cfg.momentum);
    cfg.lr = kv.get_double("lr", cfg.lr);
    cfg.beta1 = kv.get_double("adam_beta1", cfg.beta1);
    cfg.beta2 = kv.get_double("adam_beta2", cfg.beta2);
    cfg.eps = kv.get_double("adam_eps", cfg.eps);
    cfg.batch_size = kv.get_int("batch_size", cfg.batch_size);
    cfg.epochs = kv.get_int("epochs", cfg.epochs);
    cfg.decay_factor = kv.get_double("decay_factor", cfg.decay_factor);
    cfg.decay_every = kv.get_int("decay_every", cfg.decay_every);
    cfg.seed = static_cast<uint64_t>(kv.get_int("train_seed", static_cast<int64_t>(cfg.seed)));
    if (cfg.batch_size < 1 || cfg.epochs < 0) throw Error("batch_size must be >= 1 and epochs >= 0");
    return cfg;
}

void optimizer_config_into(const OptimizerConfig& cfg, KeyValueConfig& kv) {
    kv.set("optimizer", cfg.kind == OptimizerKind::adam ? "adam" : "sgd");
    kv.set_double("momentum", cfg.momentum);
    kv.set_double("lr", cfg.lr);
    kv.set_double("adam_beta1", cfg.beta1);
    kv.set_double("adam_beta2", cfg.beta2);
    kv.set_double("adam_eps", cfg.eps);
    kv.set_int("batch_size", cfg.batch_size);
    kv.set_int("epochs", cfg.epochs);
    kv.set_double("decay_factor", cfg.decay_factor);
    kv.set_int("decay_every", cfg.decay_every);
    kv.set_int("train_seed", static_cast<int64_t>(cfg.seed));
}

IngestOptions ingest_options_from(KeyValueConfig& kv) {
    IngestOptions opt;
    opt.chunk_us = kv.get_int("chunk_us", opt.chunk_us);
    opt.n_p = kv.get_int("window_events", opt.n_p);
    opt.n_sample = kv.get_int("sample_points", opt.n_sample);
    opt.sample_seed = static_cast<uint64_t>(kv.get_int("sample_seed", static_cast<int64_t>(opt.sample_seed)));
    opt.width = static_cast<int32_t>(kv.get_int("sensor_width", opt.width));
    opt.height = static_cast<int32_t>(kv.get_int("sensor_height", opt.height));
    const std::string at = kv.get_str("label_at", "end");
    if (at == "start")
        opt.label.at = AssocPoint::window_start;
    else if (at == "mid")
        opt.label.at = AssocPoint::window_mid;
    else if (at == "end")
        opt.label.at = AssocPoint::window_end;
    else
        throw Error("label_at must be `start`, `mid` or `end`, got " + at);
    opt.label.tolerance_us = kv.get_int("label_tolerance_us", opt.label.tolerance_us);
    if (opt.chunk_us <= 0 || opt.n_p < 1 || opt.n_sample < 2) throw Error("invalid ingest options");
    return opt;
}

void ingest_options_into(const IngestOptions& opt, KeyValueConfig& kv) {
    kv.set_int("chunk_us", opt.chunk_us);
    kv.set_int("window_events", opt.n_p);
    kv.set_int("sample_points", opt.n_sample);
    kv.set_int("sample_seed", static_cast<int64_t>(opt.sample_seed));
    kv.set_int("sensor_width", opt.width);
    kv.set_int("sensor_height", opt.height);
    kv.set("label_at", opt.label.at == AssocPoint::window_start
                           ? "start"
                           : (opt.label.at == AssocPoint::window_mid ? "mid" : "end"));
    kv.set_int("label_tolerance_us", opt.label.tolerance_us);
}

SceneSpec scene_spec_from(KeyValueConfig& kv) {
    SceneSpec spec;
    spec.n_landmarks = kv.get_int("landmarks", spec.n_landmarks);
    spec.duration_us = kv.get_int("duration_us", spec.duration_us);
    spec.noise_rate_hz = kv.get_double("noise_rate_hz", spec.noise_rate_hz);
    spec.pose_interval_us = kv.get_int("pose_interval_us", spec.pose_interval_us);
    spec.fine_steps = kv.get_int("fine_steps", spec.fine_steps);
    spec.trans_amplitude = kv.get_double("trans_amplitude", spec.trans_amplitude);
    spec.rot_amplitude = kv.get_double("rot_amplitude", spec.rot_amplitude);
    spec.min_freq_hz = kv.get_double("min_freq_hz", spec.min_freq_hz);
    spec.max_freq_hz = kv.get_double("max_freq_hz", spec.max_freq_hz);
    spec.harmonics = static_cast<int>(kv.get_int("harmonics", spec.harmonics));
    spec.camera.fx = kv.get_double("fx", spec.camera.fx);
    spec.camera.fy = kv.get_double("fy", spec.camera.fy);
    spec.camera.cx = kv.get_double("cx", spec.camera.cx);
    spec.camera.cy = kv.get_double("cy", spec.camera.cy);
    spec.camera.width = static_cast<int32_t>(kv.get_int("sensor_width", spec.camera.width));
    spec.camera.height = static_cast<int32_t>(kv.get_int("sensor_height", spec.camera.height));
    spec.validate();
    return spec;
}

void scene_spec_into(const SceneSpec& spec, KeyValueConfig& kv) {
    kv.set_int("landmarks", spec.n_landmarks);
    kv.set_int("duration_us", spec.duration_us);
    kv.set_double("noise_rate_hz", spec.noise_rate_hz);
    kv.set_int("pose_interval_us", spec.pose_interval_us);
    kv.set_int("fine_steps", spec.fine_steps);
    kv.set_double("trans_amplitude", spec.trans_amplitude);
    kv.set_double("rot_amplitude", spec.rot_amplitude);
    kv.set_double("min_freq_hz", spec.min_freq_hz);
    kv.set_double("max_freq_hz", spec.max_freq_hz);
    kv.set_int("harmonics", spec.harmonics);
    kv.set_double("fx", spec.camera.fx);
    kv.set_double("fy", spec.camera.fy);
    kv.set_double("cx", spec.camera.cx);
    kv.set_double("cy", spec.camera.cy);
    kv.set_int("sensor_width", spec.camera.width);
    kv.set_int("sensor_height", spec.camera.height);
}

}  // namespace pepnet
