#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pepnet/array.hpp"
#include "pepnet/errors.hpp"
#include "pepnet/rotation.hpp"

namespace pepnet {

// One camera event. Timestamps are integer microseconds throughout the library.
struct Event {
    int64_t t = 0;
    int32_t x = 0;
    int32_t y = 0;
    int8_t p = 0;

    bool operator==(const Event&) const = default;
};

// One ground-truth pose sample. q is a unit quaternion in w-x-y-z order.
struct PoseSample {
    int64_t t = 0;
    rot::Vec3 p{};
    rot::Quat q{1, 0, 0, 0};
};

// Pose target attached to a window: translation plus the same rotation as
// Euler angles (intrinsic Z-Y-X) and as the source quaternion.
struct PoseLabel {
    rot::Vec3 p{};
    rot::Vec3 euler{};
    rot::Quat quat{1, 0, 0, 0};
};

PoseLabel make_pose_label(const PoseSample& s);

// A run of consecutive events covering an integer number of accumulation
// chunks of `chunk_us` microseconds, starting at the first event's timestamp.
struct EventWindow {
    std::vector<Event> events;
    int64_t t_start = 0;    // first event timestamp, also the first chunk anchor
    int64_t n_chunks = 0;   // chunks consumed; coverage_end() - t_start == n_chunks * chunk_us
    int64_t chunk_us = 0;

    int64_t t_first() const { return events.front().t; }
    int64_t t_last() const { return events.back().t; }
    int64_t coverage_end() const { return t_start + n_chunks * chunk_us; }
    int64_t size() const { return static_cast<int64_t>(events.size()); }
};

// N x 3 matrix of (x/w, y/h, (t - t_first)/(t_last - t_first)) rows in
// ascending-t order, all coordinates in [0, 1].
struct NormalizedCloud {
    Array<double> points;  // [N, 3]
    int64_t source_window = -1;
};

enum class TimestampUnit { seconds, microseconds };
enum class OrderPolicy { reject, sort };

struct EventParseOptions {
    int32_t width = 240;
    int32_t height = 180;
    TimestampUnit unit = TimestampUnit::seconds;
    OrderPolicy on_unsorted = OrderPolicy::reject;
};

struct ParseDiagnostics {
    std::vector<std::string> warnings;
};

// Text format: one `t x y p` per line, `#` comments and blank lines skipped.
std::vector<Event> parse_event_stream(std::istream& in, const EventParseOptions& opt,
                                      ParseDiagnostics* diag = nullptr);
std::vector<Event> parse_event_stream(const std::string& text, const EventParseOptions& opt,
                                      ParseDiagnostics* diag = nullptr);
void write_event_stream(std::ostream& out, std::span<const Event> events,
                        TimestampUnit unit = TimestampUnit::seconds);

// Text format: one `t px py pz qx qy qz qw` per line, t in seconds.
// Quaternions are renormalized on read; deviations beyond 1e-3 produce a warning.
std::vector<PoseSample> parse_pose_file(std::istream& in, ParseDiagnostics* diag = nullptr);
std::vector<PoseSample> parse_pose_file(const std::string& text, ParseDiagnostics* diag = nullptr);
void write_pose_file(std::ostream& out, std::span<const PoseSample> poses);

// Accumulates R-microsecond chunks into a window until it holds more than
// n_p events, then closes it and anchors the next window at the next event.
// The trailing run with <= n_p events is dropped.
std::vector<EventWindow> segment_windows(std::span<const Event> events, int64_t chunk_us, int64_t n_p);

// Uniform sample of n events without replacement (deterministic under seed),
// re-sorted by timestamp and normalized against the window's own first/last
// event timestamps and the sensor resolution.
NormalizedCloud sample_and_normalize(const EventWindow& window, int64_t n, uint64_t seed,
                                     int32_t width, int32_t height, int64_t window_id = -1);

enum class AssocPoint { window_start, window_mid, window_end };

struct LabelOptions {
    AssocPoint at = AssocPoint::window_end;
    int64_t tolerance_us = 10000;
};

// Nearest pose to the window's association point. Throws UnlabeledWindowError
// when the nearest pose is farther than the tolerance.
PoseLabel label_window(const EventWindow& window, std::span<const PoseSample> poses,
                       const LabelOptions& opt = {});
// Index of the pose chosen by label_window, or nullopt when out of tolerance.
std::optional<size_t> nearest_pose_index(const EventWindow& window, std::span<const PoseSample> poses,
                                         const LabelOptions& opt = {});

}  // namespace pepnet
