#include "pepnet/event_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

namespace pepnet {

namespace {

bool is_blank_or_comment(const std::string& line) {
    for (char c : line) {
        if (c == '#') return true;
        if (!std::isspace(static_cast<unsigned char>(c))) return false;
    }
    return true;
}

// Line must contain exactly the expected fields, trailing whitespace aside.
void expect_line_end(std::istringstream& is, long line_no) {
    std::string rest;
    if (is >> rest) throw ParseError("unexpected trailing field '" + rest + "'", line_no);
}

int64_t seconds_to_us(double t_sec) { return std::llround(t_sec * 1e6); }

}  // namespace

PoseLabel make_pose_label(const PoseSample& s) {
    PoseLabel l;
    l.p = s.p;
    l.quat = s.q;
    l.euler = rot::quat_to_euler_zyx(s.q);
    return l;
}

std::vector<Event> parse_event_stream(std::istream& in, const EventParseOptions& opt, ParseDiagnostics* diag) {
    std::vector<Event> events;
    std::string line;
    long line_no = 0;
    bool warned_unsorted = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (is_blank_or_comment(line)) continue;
        std::istringstream is(line);
        Event e;
        long long x, y;
        int p;
        if (opt.unit == TimestampUnit::seconds) {
            double t_sec;
            if (!(is >> t_sec >> x >> y >> p)) throw ParseError("expected `t x y p`", line_no);
            if (t_sec < 0) throw ParseError("negative timestamp", line_no);
            e.t = seconds_to_us(t_sec);
        } else {
            long long t_us;
            if (!(is >> t_us >> x >> y >> p)) throw ParseError("expected `t x y p`", line_no);
            if (t_us < 0) throw ParseError("negative timestamp", line_no);
            e.t = t_us;
        }
        expect_line_end(is, line_no);
        if (x < 0 || x >= opt.width || y < 0 || y >= opt.height)
            throw BoundsError("line " + std::to_string(line_no) + ": event (" + std::to_string(x) + "," +
                              std::to_string(y) + ") outside sensor " + std::to_string(opt.width) + "x" +
                              std::to_string(opt.height));
        if (p != 0 && p != 1) throw ParseError("polarity must be 0 or 1", line_no);
        e.x = static_cast<int32_t>(x);
        e.y = static_cast<int32_t>(y);
        e.p = static_cast<int8_t>(p);
        if (!events.empty() && e.t < events.back().t) {
            if (opt.on_unsorted == OrderPolicy::reject)
                throw ParseError("timestamp decreases from " + std::to_string(events.back().t) + " to " +
                                     std::to_string(e.t),
                                 line_no);
            if (diag && !warned_unsorted) {
                diag->warnings.push_back("line " + std::to_string(line_no) +
                                         ": decreasing timestamps, stream will be re-sorted");
                warned_unsorted = true;
            }
        }
        events.push_back(e);
    }
    if (warned_unsorted)
        std::stable_sort(events.begin(), events.end(), [](const Event& a, const Event& b) { return a.t < b.t; });
    return events;
}

std::vector<Event> parse_event_stream(const std::string& text, const EventParseOptions& opt, ParseDiagnostics* diag) {
    std::istringstream is(text);
    return parse_event_stream(is, opt, diag);
}

void write_event_stream(std::ostream& out, std::span<const Event> events, TimestampUnit unit) {
    char buf[96];
    for (const Event& e : events) {
        if (unit == TimestampUnit::seconds)
            std::snprintf(buf, sizeof(buf), "%lld.%06lld %d %d %d\n", static_cast<long long>(e.t / 1000000),
                          static_cast<long long>(e.t % 1000000), e.x, e.y, static_cast<int>(e.p));
        else
            std::snprintf(buf, sizeof(buf), "%lld %d %d %d\n", static_cast<long long>(e.t), e.x, e.y,
                          static_cast<int>(e.p));
        out << buf;
    }
}

std::vector<PoseSample> parse_pose_file(std::istream& in, ParseDiagnostics* diag) {
    std::vector<PoseSample> poses;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (is_blank_or_comment(line)) continue;
        std::istringstream is(line);
        double t, px, py, pz, qx, qy, qz, qw;
        if (!(is >> t >> px >> py >> pz >> qx >> qy >> qz >> qw))
            throw ParseError("expected `t px py pz qx qy qz qw`", line_no);
        expect_line_end(is, line_no);
        PoseSample s;
        s.t = seconds_to_us(t);
        s.p = {px, py, pz};
        s.q = {qw, qx, qy, qz};
        double n = rot::norm(s.q);
        if (n == 0.0) throw ParseError("zero quaternion", line_no);
        if (std::abs(n - 1.0) > 1e-3) {
            if (diag)
                diag->warnings.push_back("line " + std::to_string(line_no) + ": quaternion norm " +
                                         std::to_string(n) + ", renormalizing");
            s.q = rot::normalized(s.q);
        } else if (std::abs(n - 1.0) > 1e-9) {
            s.q = rot::normalized(s.q);
        }
        if (!poses.empty()) {
            if (s.t == poses.back().t) throw ParseError("duplicate pose timestamp " + std::to_string(s.t), line_no);
            if (s.t < poses.back().t) throw ParseError("pose timestamps must increase", line_no);
        }
        poses.push_back(s);
    }
    return poses;
}

std::vector<PoseSample> parse_pose_file(const std::string& text, ParseDiagnostics* diag) {
    std::istringstream is(text);
    return parse_pose_file(is, diag);
}

void write_pose_file(std::ostream& out, std::span<const PoseSample> poses) {
    char buf[320];
    for (const PoseSample& s : poses) {
        std::snprintf(buf, sizeof(buf), "%lld.%06lld %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n",
                      static_cast<long long>(s.t / 1000000), static_cast<long long>(s.t % 1000000), s.p[0], s.p[1],
                      s.p[2], s.q[1], s.q[2], s.q[3], s.q[0]);
        out << buf;
    }
}

std::vector<EventWindow> segment_windows(std::span<const Event> events, int64_t chunk_us, int64_t n_p) {
    if (chunk_us <= 0) throw Error("chunk duration must be positive");
    if (n_p < 1) throw Error("n_p must be >= 1");
    for (size_t i = 1; i < events.size(); ++i)
        if (events[i].t < events[i - 1].t) throw Error("segment_windows requires a time-sorted stream");

    std::vector<EventWindow> windows;
    size_t i = 0;
    const size_t n = events.size();
    while (i < n) {
        const size_t begin = i;
        const int64_t t0 = events[i].t;
        int64_t chunks = 0;
        bool closed = false;
        while (i < n) {
            // Extend coverage through the chunk holding the next unconsumed event;
            // empty chunks in between contribute no events and no loop iterations.
            chunks = (events[i].t - t0) / chunk_us + 1;
            const int64_t cover_end = t0 + chunks * chunk_us;
            while (i < n && events[i].t < cover_end) ++i;
            if (static_cast<int64_t>(i - begin) > n_p) {
                closed = true;
                break;
            }
        }
        if (!closed) break;  // trailing partial run, dropped
        EventWindow w;
        w.events.assign(events.begin() + static_cast<std::ptrdiff_t>(begin),
                        events.begin() + static_cast<std::ptrdiff_t>(i));
        w.t_start = t0;
        w.n_chunks = chunks;
        w.chunk_us = chunk_us;
        windows.push_back(std::move(w));
    }
    return windows;
}

NormalizedCloud sample_and_normalize(const EventWindow& window, int64_t n, uint64_t seed, int32_t width,
                                     int32_t height, int64_t window_id) {
    const int64_t m = window.size();
    if (n < 2) throw Error("sample size must be at least 2");
    if (m < n)
        throw Error("window holds " + std::to_string(m) + " events, cannot sample " + std::to_string(n));
    const int64_t t0 = window.t_first();
    const int64_t t1 = window.t_last();
    if (t1 == t0) throw Error("window has zero time span");

    std::vector<int64_t> idx;
    if (n == m) {
        idx.resize(static_cast<size_t>(m));
        for (int64_t i = 0; i < m; ++i) idx[static_cast<size_t>(i)] = i;
    } else {
        // Partial Fisher-Yates: the first n slots are a uniform sample
        // without replacement.
        std::mt19937_64 rng(seed);
        std::vector<int64_t> pool(static_cast<size_t>(m));
        for (int64_t i = 0; i < m; ++i) pool[static_cast<size_t>(i)] = i;
        for (int64_t i = 0; i < n; ++i) {
            std::uniform_int_distribution<int64_t> pick(i, m - 1);
            std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(pick(rng))]);
        }
        idx.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n));
        std::sort(idx.begin(), idx.end());
    }

    NormalizedCloud cloud;
    cloud.points = Array<double>({n, 3});
    cloud.source_window = window_id;
    const double span = static_cast<double>(t1 - t0);
    for (int64_t i = 0; i < n; ++i) {
        const Event& e = window.events[static_cast<size_t>(idx[static_cast<size_t>(i)])];
        cloud.points[i * 3 + 0] = static_cast<double>(e.x) / width;
        cloud.points[i * 3 + 1] = static_cast<double>(e.y) / height;
        cloud.points[i * 3 + 2] = static_cast<double>(e.t - t0) / span;
    }
    return cloud;
}

std::optional<size_t> nearest_pose_index(const EventWindow& window, std::span<const PoseSample> poses,
                                         const LabelOptions& opt) {
    if (poses.empty()) return std::nullopt;
    int64_t at;
    switch (opt.at) {
        case AssocPoint::window_start: at = window.t_first(); break;
        case AssocPoint::window_mid: at = window.t_first() + (window.t_last() - window.t_first()) / 2; break;
        default: at = window.t_last(); break;
    }
    auto it = std::lower_bound(poses.begin(), poses.end(), at,
                               [](const PoseSample& s, int64_t t) { return s.t < t; });
    size_t best;
    if (it == poses.end()) {
        best = poses.size() - 1;
    } else if (it == poses.begin()) {
        best = 0;
    } else {
        // Equidistant neighbors resolve to the earlier pose.
        size_t hi = static_cast<size_t>(it - poses.begin());
        best = (std::llabs(poses[hi].t - at) < std::llabs(poses[hi - 1].t - at)) ? hi : hi - 1;
    }
    if (std::llabs(poses[best].t - at) > opt.tolerance_us) return std::nullopt;
    return best;
}

PoseLabel label_window(const EventWindow& window, std::span<const PoseSample> poses, const LabelOptions& opt) {
    auto idx = nearest_pose_index(window, poses, opt);
    if (!idx)
        throw UnlabeledWindowError("no pose within " + std::to_string(opt.tolerance_us) + "us of window end");
    return make_pose_label(poses[*idx]);
}

}  // namespace pepnet
