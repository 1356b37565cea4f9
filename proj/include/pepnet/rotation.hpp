#pragma once

#include <array>

namespace pepnet::rot {

using Vec3 = std::array<double, 3>;
using Quat = std::array<double, 4>;  // w, x, y, z
using Mat3 = std::array<double, 9>;  // row-major

double norm(const Quat& q);
Quat normalized(const Quat& q);

Mat3 quat_to_matrix(const Quat& q);

// Euler angles are stored as (roll_x, pitch_y, yaw_z) with the intrinsic
// Z-Y-X composition R = Rz(yaw) * Ry(pitch) * Rx(roll).
Vec3 quat_to_euler_zyx(const Quat& q);
Quat euler_zyx_to_quat(const Vec3& e);
Mat3 euler_zyx_to_matrix(const Vec3& e);

Mat3 mat_mul(const Mat3& a, const Mat3& b);
Mat3 mat_transpose(const Mat3& a);

// Angle of the relative rotation between a and b, in radians, in [0, pi].
double geodesic_angle(const Mat3& a, const Mat3& b);

double geodesic_angle_deg(const Mat3& a, const Mat3& b);

}  // namespace pepnet::rot
