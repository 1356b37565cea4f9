#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "pepnet/errors.hpp"
#include "pepnet/model.hpp"
#include "pepnet/pipeline.hpp"
#include "pepnet/synth.hpp"
#include "pepnet/train.hpp"

namespace pepnet {

// Flat `key=value` text config. `#` comments and blank lines are skipped.
// Typed getters mark keys as consumed; require_all_consumed() rejects any
// leftover (unknown) key by name.
class KeyValueConfig {
public:
    KeyValueConfig() = default;

    static KeyValueConfig parse(std::istream& in);
    static KeyValueConfig parse_text(const std::string& text);
    static KeyValueConfig parse_file(const std::string& path);

    bool has(const std::string& key) const { return kv_.count(key) > 0; }

    std::string get_str(const std::string& key, const std::string& fallback);
    int64_t get_int(const std::string& key, int64_t fallback);
    double get_double(const std::string& key, double fallback);
    bool get_bool(const std::string& key, bool fallback);
    std::vector<int64_t> get_int_list(const std::string& key, std::vector<int64_t> fallback);

    void set(const std::string& key, const std::string& value) { kv_[key] = value; }
    void set_int(const std::string& key, int64_t v) { kv_[key] = std::to_string(v); }
    void set_double(const std::string& key, double v);
    void set_bool(const std::string& key, bool v) { kv_[key] = v ? "true" : "false"; }
    void set_int_list(const std::string& key, const std::vector<int64_t>& v);

    void require_all_consumed() const;

    // Sorted `key=value` lines.
    std::string serialize() const;

private:
    std::map<std::string, std::string> kv_;
    std::set<std::string> consumed_;
};

// Model / optimizer / ingestion / scene blocks of one run configuration.
ModelConfig model_config_from(KeyValueConfig& kv);
void model_config_into(const ModelConfig& cfg, KeyValueConfig& kv);

OptimizerConfig optimizer_config_from(KeyValueConfig& kv);
void optimizer_config_into(const OptimizerConfig& cfg, KeyValueConfig& kv);

IngestOptions ingest_options_from(KeyValueConfig& kv);
void ingest_options_into(const IngestOptions& opt, KeyValueConfig& kv);

SceneSpec scene_spec_from(KeyValueConfig& kv);
void scene_spec_into(const SceneSpec& spec, KeyValueConfig& kv);

}  // namespace pepnet
