#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pepnet/event_io.hpp"

namespace pepnet {

struct CameraIntrinsics {
    double fx = 200.0, fy = 200.0;
    double cx = 120.3, cy = 90.3;  // fractional center keeps projections off pixel boundaries
    int32_t width = 240, height = 180;
};

// Sum-of-sinusoids 6-DOF path; analytic pose at any time.
struct Trajectory {
    struct Term {
        double amp = 0.0, freq_hz = 0.0, phase = 0.0;
    };
    std::array<std::vector<Term>, 6> axes;  // px py pz, roll pitch yaw

    double axis_value(size_t axis, double t_sec) const;
    PoseSample pose_at(int64_t t_us) const;
};

struct SceneSpec {
    int64_t n_landmarks = 40;
    std::array<double, 3> box_min{-0.8, -0.6, 1.6};
    std::array<double, 3> box_max{0.8, 0.6, 3.0};
    CameraIntrinsics camera;
    int64_t duration_us = 2'000'000;
    double noise_rate_hz = 0.0;       // uniform background events per second
    int64_t pose_interval_us = 5000;
    int64_t fine_steps = 100000;      // projection sampling resolution
    double trans_amplitude = 0.25;    // meters
    double rot_amplitude = 0.12;      // radians
    double min_freq_hz = 0.2;
    double max_freq_hz = 1.2;
    int harmonics = 2;

    void validate() const;
};

Trajectory make_trajectory(const SceneSpec& spec, uint64_t seed);
std::vector<std::array<double, 3>> make_landmarks(const SceneSpec& spec, uint64_t seed);

struct SynthResult {
    std::vector<Event> events;
    std::vector<PoseSample> poses;  // every pose_interval_us, analytic
    Trajectory trajectory;
    int64_t landmark_events = 0;
    int64_t noise_events = 0;
    int64_t visible_landmarks = 0;
    std::vector<std::string> warnings;
};

// Projects every landmark along the trajectory and emits one event per pixel
// boundary crossing (timestamp by linear interpolation, polarity from the
// crossing direction), merges streams in time order, then appends seeded
// Poisson background noise.
SynthResult generate(const SceneSpec& spec, uint64_t seed);

// Same machinery with caller-supplied geometry; used by tests with hand-built
// trajectories.
SynthResult generate_with(const SceneSpec& spec, const Trajectory& traj,
                          std::span<const std::array<double, 3>> landmarks, uint64_t noise_seed);

// Writes events.txt / poses.txt in the text formats the parsers consume.
void write_scene(const std::string& dir, const SynthResult& result);

}  // namespace pepnet
