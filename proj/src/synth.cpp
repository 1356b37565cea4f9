#include "pepnet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "pepnet/rotation.hpp"

namespace pepnet {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Projection {
    double u = 0, v = 0;
    bool visible = false;
};

Projection project(const CameraIntrinsics& cam, const PoseSample& pose, const std::array<double, 3>& lm) {
    // world -> camera: X_c = R^T (X_w - p)
    rot::Mat3 r = rot::quat_to_matrix(pose.q);
    const double dx = lm[0] - pose.p[0], dy = lm[1] - pose.p[1], dz = lm[2] - pose.p[2];
    const double xc = r[0] * dx + r[3] * dy + r[6] * dz;
    const double yc = r[1] * dx + r[4] * dy + r[7] * dz;
    const double zc = r[2] * dx + r[5] * dy + r[8] * dz;
    Projection p;
    if (zc < 0.1) return p;
    p.u = cam.fx * xc / zc + cam.cx;
    p.v = cam.fy * yc / zc + cam.cy;
    p.visible = p.u >= 0 && p.u < cam.width && p.v >= 0 && p.v < cam.height;
    return p;
}

}  // namespace

double Trajectory::axis_value(size_t axis, double t_sec) const {
    double v = 0.0;
    for (const Term& term : axes[axis]) v += term.amp * std::sin(2.0 * kPi * term.freq_hz * t_sec + term.phase);
    return v;
}

PoseSample Trajectory::pose_at(int64_t t_us) const {
    const double t = static_cast<double>(t_us) * 1e-6;
    PoseSample s;
    s.t = t_us;
    s.p = {axis_value(0, t), axis_value(1, t), axis_value(2, t)};
    s.q = rot::euler_zyx_to_quat({axis_value(3, t), axis_value(4, t), axis_value(5, t)});
    return s;
}

void SceneSpec::validate() const {
    if (n_landmarks < 1) throw Error("scene needs at least one landmark");
    if (duration_us <= 0 || fine_steps < 2) throw Error("scene duration and fine_steps must be positive");
    if (pose_interval_us <= 0) throw Error("pose_interval_us must be positive");
    if (noise_rate_hz < 0) throw Error("noise_rate_hz must be non-negative");
    for (int j = 0; j < 3; ++j)
        if (box_min[static_cast<size_t>(j)] >= box_max[static_cast<size_t>(j)])
            throw Error("landmark box is empty");
}

Trajectory make_trajectory(const SceneSpec& spec, uint64_t seed) {
    std::mt19937_64 rng(seed ^ 0x74726a5f70657000ULL);
    std::uniform_real_distribution<double> ampd(0.3, 1.0), freqd(spec.min_freq_hz, spec.max_freq_hz),
        phased(0.0, 2.0 * kPi);
    Trajectory traj;
    for (size_t axis = 0; axis < 6; ++axis) {
        const double scale = (axis < 3 ? spec.trans_amplitude : spec.rot_amplitude) /
                             std::max(1, spec.harmonics);
        for (int h = 0; h < spec.harmonics; ++h)
            traj.axes[axis].push_back({ampd(rng) * scale, freqd(rng), phased(rng)});
    }
    return traj;
}

std::vector<std::array<double, 3>> make_landmarks(const SceneSpec& spec, uint64_t seed) {
    std::mt19937_64 rng(seed ^ 0x6c616e646d61726bULL);
    std::vector<std::array<double, 3>> lms(static_cast<size_t>(spec.n_landmarks));
    for (auto& lm : lms)
        for (int j = 0; j < 3; ++j) {
            std::uniform_real_distribution<double> ud(spec.box_min[static_cast<size_t>(j)],
                                                      spec.box_max[static_cast<size_t>(j)]);
            lm[static_cast<size_t>(j)] = ud(rng);
        }
    return lms;
}

SynthResult generate_with(const SceneSpec& spec, const Trajectory& traj,
                          std::span<const std::array<double, 3>> landmarks, uint64_t noise_seed) {
    spec.validate();
    SynthResult result;
    result.trajectory = traj;

    const double dt_us = static_cast<double>(spec.duration_us) / static_cast<double>(spec.fine_steps);
    std::vector<Event> events;

    for (size_t li = 0; li < landmarks.size(); ++li) {
        bool ever_visible = false;
        Projection prev;
        double prev_t = 0.0;
        for (int64_t k = 0; k <= spec.fine_steps; ++k) {
            const double t_us = dt_us * static_cast<double>(k);
            const double ts = t_us * 1e-6;
            PoseSample pose;
            pose.p = {traj.axis_value(0, ts), traj.axis_value(1, ts), traj.axis_value(2, ts)};
            pose.q = rot::euler_zyx_to_quat({traj.axis_value(3, ts), traj.axis_value(4, ts), traj.axis_value(5, ts)});
            Projection cur = project(spec.camera, pose, landmarks[li]);
            ever_visible = ever_visible || cur.visible;
            if (k > 0 && prev.visible && cur.visible) {
                // one event per integer boundary crossed on either image axis
                auto emit_crossings = [&](double a0, double a1, bool is_u) {
                    const int64_t f0 = static_cast<int64_t>(std::floor(a0));
                    const int64_t f1 = static_cast<int64_t>(std::floor(a1));
                    if (f0 == f1) return;
                    const int64_t dir = f1 > f0 ? 1 : -1;
                    const int64_t first = dir > 0 ? f0 + 1 : f0;
                    const int64_t count = dir > 0 ? f1 - f0 : f0 - f1;
                    for (int64_t n = 0; n < count; ++n) {
                        const int64_t b = first + dir * n;
                        const double boundary = static_cast<double>(b);
                        const double frac = (boundary - a0) / (a1 - a0);
                        const double tc = prev_t + frac * (t_us - prev_t);
                        const double uc = prev.u + frac * (cur.u - prev.u);
                        const double vc = prev.v + frac * (cur.v - prev.v);
                        const int64_t entered = dir > 0 ? b : b - 1;  // cell on the far side of the boundary
                        Event e;
                        e.t = std::llround(tc);
                        e.x = is_u ? static_cast<int32_t>(entered) : static_cast<int32_t>(std::floor(uc));
                        e.y = is_u ? static_cast<int32_t>(std::floor(vc)) : static_cast<int32_t>(entered);
                        e.p = dir > 0 ? 1 : 0;
                        if (e.x >= 0 && e.x < spec.camera.width && e.y >= 0 && e.y < spec.camera.height)
                            events.push_back(e);
                    }
                };
                emit_crossings(prev.u, cur.u, true);
                emit_crossings(prev.v, cur.v, false);
            }
            prev = cur;
            prev_t = t_us;
        }
        if (ever_visible)
            ++result.visible_landmarks;
        else
            result.warnings.push_back("landmark " + std::to_string(li) + " never visible");
    }
    if (result.visible_landmarks == 0) throw Error("no landmark is ever visible from the trajectory");
    result.landmark_events = static_cast<int64_t>(events.size());

    if (spec.noise_rate_hz > 0) {
        std::mt19937_64 rng(noise_seed ^ 0x6e6f697365000000ULL);
        const double expected = spec.noise_rate_hz * static_cast<double>(spec.duration_us) * 1e-6;
        std::poisson_distribution<int64_t> pd(expected);
        const int64_t n_noise = pd(rng);
        std::uniform_int_distribution<int64_t> td(0, spec.duration_us - 1);
        std::uniform_int_distribution<int32_t> xd(0, spec.camera.width - 1), yd(0, spec.camera.height - 1);
        std::bernoulli_distribution pol(0.5);
        for (int64_t i = 0; i < n_noise; ++i)
            events.push_back({td(rng), xd(rng), yd(rng), static_cast<int8_t>(pol(rng) ? 1 : 0)});
        result.noise_events = n_noise;
    }

    std::stable_sort(events.begin(), events.end(), [](const Event& a, const Event& b) { return a.t < b.t; });
    result.events = std::move(events);

    for (int64_t t = 0; t <= spec.duration_us; t += spec.pose_interval_us)
        result.poses.push_back(traj.pose_at(t));
    return result;
}

SynthResult generate(const SceneSpec& spec, uint64_t seed) {
    Trajectory traj = make_trajectory(spec, seed);
    auto landmarks = make_landmarks(spec, seed);
    return generate_with(spec, traj, landmarks, seed);
}

void write_scene(const std::string& dir, const SynthResult& result) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream f(dir + "/events.txt");
        if (!f) throw Error("cannot write " + dir + "/events.txt");
        write_event_stream(f, result.events, TimestampUnit::seconds);
    }
    {
        std::ofstream f(dir + "/poses.txt");
        if (!f) throw Error("cannot write " + dir + "/poses.txt");
        write_pose_file(f, result.poses);
    }
}

}  // namespace pepnet
