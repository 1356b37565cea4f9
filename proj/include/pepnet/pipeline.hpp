#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pepnet/event_io.hpp"
#include "pepnet/train.hpp"

namespace pepnet {

struct IngestOptions {
    int64_t chunk_us = 1000;  // accumulation chunk R
    int64_t n_p = 1024;       // window closes once its count exceeds this
    int64_t n_sample = 1024;  // points per normalized cloud
    uint64_t sample_seed = 0;
    int32_t width = 240, height = 180;
    LabelOptions label{};
};

struct IngestStats {
    int64_t n_events = 0;
    int64_t n_poses = 0;
    int64_t n_windows = 0;
    int64_t n_dropped_unlabeled = 0;
    int64_t n_dropped_degenerate = 0;
    int64_t n_kept = 0;
};

// One manifest row: `id t_start t_end n_events label_pose_index` with t in
// microseconds and t_end the last event's timestamp.
struct WindowRecord {
    int64_t id = 0;
    int64_t t_start = 0;
    int64_t t_end = 0;
    int64_t n_events = 0;
    int64_t pose_index = -1;
};

// Deterministic per-window sampling seed.
uint64_t window_seed(uint64_t base, int64_t window_id);

// Full ingestion: segment, label (dropping out-of-tolerance or zero-span
// windows with a count), sample and normalize.
Dataset build_dataset(std::span<const Event> events, std::span<const PoseSample> poses, const IngestOptions& opt,
                      IngestStats* stats = nullptr, std::vector<WindowRecord>* manifest = nullptr);

void write_manifest(const std::string& path, std::span<const WindowRecord> records);
std::vector<WindowRecord> read_manifest(const std::string& path);

// Rebuilds the dataset from a manifest without re-running segmentation or
// pose association; validates the rows against the streams.
Dataset dataset_from_manifest(std::span<const Event> events, std::span<const PoseSample> poses,
                              std::span<const WindowRecord> records, const IngestOptions& opt);

}  // namespace pepnet
