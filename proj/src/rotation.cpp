#include "pepnet/rotation.hpp"

#include <algorithm>
#include <cmath>

#include "pepnet/errors.hpp"

namespace pepnet::rot {

double norm(const Quat& q) { return std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]); }

Quat normalized(const Quat& q) {
    double n = norm(q);
    if (n == 0.0) throw Error("cannot normalize zero quaternion");
    return {q[0] / n, q[1] / n, q[2] / n, q[3] / n};
}

Mat3 quat_to_matrix(const Quat& q) {
    double w = q[0], x = q[1], y = q[2], z = q[3];
    return {1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
            2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
}

Vec3 quat_to_euler_zyx(const Quat& q) {
    double w = q[0], x = q[1], y = q[2], z = q[3];
    double roll = std::atan2(2 * (w * x + y * z), 1 - 2 * (x * x + y * y));
    double sp = 2 * (w * y - z * x);
    sp = std::clamp(sp, -1.0, 1.0);
    double pitch = std::asin(sp);
    double yaw = std::atan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z));
    return {roll, pitch, yaw};
}

Quat euler_zyx_to_quat(const Vec3& e) {
    double cr = std::cos(e[0] * 0.5), sr = std::sin(e[0] * 0.5);
    double cp = std::cos(e[1] * 0.5), sp = std::sin(e[1] * 0.5);
    double cy = std::cos(e[2] * 0.5), sy = std::sin(e[2] * 0.5);
    return {cy * cp * cr + sy * sp * sr, cy * cp * sr - sy * sp * cr,
            cy * sp * cr + sy * cp * sr, sy * cp * cr - cy * sp * sr};
}

Mat3 euler_zyx_to_matrix(const Vec3& e) { return quat_to_matrix(euler_zyx_to_quat(e)); }

Mat3 mat_mul(const Mat3& a, const Mat3& b) {
    Mat3 c{};
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 3; ++k) {
            double av = a[static_cast<size_t>(3 * i + k)];
            for (int j = 0; j < 3; ++j) c[static_cast<size_t>(3 * i + j)] += av * b[static_cast<size_t>(3 * k + j)];
        }
    return c;
}

Mat3 mat_transpose(const Mat3& a) {
    return {a[0], a[3], a[6], a[1], a[4], a[7], a[2], a[5], a[8]};
}

double geodesic_angle(const Mat3& a, const Mat3& b) {
    Mat3 r = mat_mul(mat_transpose(a), b);
    double tr = r[0] + r[4] + r[8];
    double c = std::clamp((tr - 1.0) * 0.5, -1.0, 1.0);
    return std::acos(c);
}

double geodesic_angle_deg(const Mat3& a, const Mat3& b) {
    return geodesic_angle(a, b) * 180.0 / 3.14159265358979323846;
}

}  // namespace pepnet::rot
