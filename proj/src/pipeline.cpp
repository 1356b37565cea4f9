#include "pepnet/pipeline.hpp"

#include <fstream>
#include <sstream>

namespace pepnet {

uint64_t window_seed(uint64_t base, int64_t window_id) {
    // splitmix64 over base + id
    uint64_t z = base + 0x9e3779b97f4a7c15ULL * (static_cast<uint64_t>(window_id) + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Dataset build_dataset(std::span<const Event> events, std::span<const PoseSample> poses, const IngestOptions& opt,
                      IngestStats* stats, std::vector<WindowRecord>* manifest) {
    IngestStats local;
    local.n_events = static_cast<int64_t>(events.size());
    local.n_poses = static_cast<int64_t>(poses.size());
    std::vector<EventWindow> windows = segment_windows(events, opt.chunk_us, opt.n_p);
    local.n_windows = static_cast<int64_t>(windows.size());

    Dataset data;
    for (size_t i = 0; i < windows.size(); ++i) {
        const EventWindow& w = windows[i];
        if (w.t_last() == w.t_first()) {
            ++local.n_dropped_degenerate;
            continue;
        }
        auto pose_idx = nearest_pose_index(w, poses, opt.label);
        if (!pose_idx) {
            ++local.n_dropped_unlabeled;
            continue;
        }
        const int64_t id = static_cast<int64_t>(i);
        NormalizedCloud cloud =
            sample_and_normalize(w, opt.n_sample, window_seed(opt.sample_seed, id), opt.width, opt.height, id);
        data.push(std::move(cloud.points), make_pose_label(poses[*pose_idx]), id);
        if (manifest)
            manifest->push_back({id, w.t_first(), w.t_last(), w.size(), static_cast<int64_t>(*pose_idx)});
        ++local.n_kept;
    }
    if (stats) *stats = local;
    return data;
}

void write_manifest(const std::string& path, std::span<const WindowRecord> records) {
    std::ofstream f(path);
    if (!f) throw Error("cannot write manifest '" + path + "'");
    f << "# id t_start t_end n_events label_pose_index\n";
    for (const WindowRecord& r : records)
        f << r.id << ' ' << r.t_start << ' ' << r.t_end << ' ' << r.n_events << ' ' << r.pose_index << '\n';
}

std::vector<WindowRecord> read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error("cannot open manifest '" + path + "'");
    std::vector<WindowRecord> out;
    std::string line;
    long line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        bool blank = true;
        for (char c : line)
            if (!std::isspace(static_cast<unsigned char>(c))) {
                blank = c == '#';
                break;
            }
        if (blank) continue;
        std::istringstream is(line);
        WindowRecord r;
        if (!(is >> r.id >> r.t_start >> r.t_end >> r.n_events >> r.pose_index))
            throw ParseError("expected `id t_start t_end n_events label_pose_index`", line_no);
        out.push_back(r);
    }
    return out;
}

Dataset dataset_from_manifest(std::span<const Event> events, std::span<const PoseSample> poses,
                              std::span<const WindowRecord> records, const IngestOptions& opt) {
    Dataset data;
    size_t cursor = 0;
    for (const WindowRecord& r : records) {
        while (cursor < events.size() && events[cursor].t < r.t_start) ++cursor;
        if (cursor + static_cast<size_t>(r.n_events) > events.size())
            throw Error("manifest window " + std::to_string(r.id) + " runs past the event stream");
        EventWindow w;
        w.events.assign(events.begin() + static_cast<std::ptrdiff_t>(cursor),
                        events.begin() + static_cast<std::ptrdiff_t>(cursor) + r.n_events);
        cursor += static_cast<size_t>(r.n_events);
        if (w.t_first() != r.t_start || w.t_last() != r.t_end)
            throw Error("manifest window " + std::to_string(r.id) + " does not match the event stream");
        w.t_start = r.t_start;
        w.chunk_us = opt.chunk_us;
        w.n_chunks = 0;  // unused on this path
        if (r.pose_index < 0 || r.pose_index >= static_cast<int64_t>(poses.size()))
            throw Error("manifest window " + std::to_string(r.id) + " references pose " +
                        std::to_string(r.pose_index) + " outside the pose file");
        NormalizedCloud cloud =
            sample_and_normalize(w, opt.n_sample, window_seed(opt.sample_seed, r.id), opt.width, opt.height, r.id);
        data.push(std::move(cloud.points), make_pose_label(poses[static_cast<size_t>(r.pose_index)]), r.id);
    }
    return data;
}

}  // namespace pepnet
