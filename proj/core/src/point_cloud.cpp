#include "mapr/point_cloud.hpp"

#include <cmath>

#include "mapr/error.hpp"

namespace mapr {

PointCloud::PointCloud(std::vector<double> coords, std::optional<int> lbl)
    : xyz(std::move(coords)), label(lbl) {
  if (xyz.size() % 3 != 0) throw DataError("point cloud coordinate count is not a multiple of 3");
}

double squared_distance(std::span<const double, 3> a, std::span<const double, 3> b) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  const double dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

Vec3 centroid(const PointCloud& cloud) {
  Vec3 c{0.0, 0.0, 0.0};
  const std::size_t n = cloud.size();
  if (n == 0) return c;
  for (std::size_t i = 0; i < n; ++i)
    for (int d = 0; d < 3; ++d) c[d] += cloud.xyz[3 * i + d];
  for (double& v : c) v /= static_cast<double>(n);
  return c;
}

double max_norm(const PointCloud& cloud) {
  double best = 0.0;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto p = cloud[i];
    best = std::max(best, std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]));
  }
  return best;
}

PointCloud normalize_unit_sphere(const PointCloud& cloud) {
  if (cloud.empty()) throw DataError("cannot normalize an empty point cloud");
  const Vec3 c = centroid(cloud);
  PointCloud out = cloud;
  for (std::size_t i = 0; i < out.size(); ++i)
    for (int d = 0; d < 3; ++d) out.xyz[3 * i + d] -= c[d];
  const double r = max_norm(out);
  if (!(r > 0.0) || !std::isfinite(r)) throw DataError("cannot normalize a degenerate point cloud");
  for (double& v : out.xyz) v /= r;
  return out;
}

Mat3 rotation_z(double radians) {
  const double c = std::cos(radians);
  const double s = std::sin(radians);
  return {{{c, -s, 0.0}, {s, c, 0.0}, {0.0, 0.0, 1.0}}};
}

Mat3 rotation_axis_angle(const Vec3& axis, double radians) {
  const double len = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
  if (!(len > 0.0)) throw ConfigError("rotation axis must be non-zero");
  const double x = axis[0] / len, y = axis[1] / len, z = axis[2] / len;
  const double c = std::cos(radians), s = std::sin(radians), t = 1.0 - c;
  return {{{t * x * x + c, t * x * y - s * z, t * x * z + s * y},
           {t * x * y + s * z, t * y * y + c, t * y * z - s * x},
           {t * x * z - s * y, t * y * z + s * x, t * z * z + c}}};
}

PointCloud rotate(const PointCloud& cloud, const Mat3& rot) {
  PointCloud out = cloud;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto p = cloud[i];
    for (int r = 0; r < 3; ++r) out.xyz[3 * i + r] = rot[r][0] * p[0] + rot[r][1] * p[1] + rot[r][2] * p[2];
  }
  return out;
}

PointCloud translate(const PointCloud& cloud, const Vec3& offset) {
  PointCloud out = cloud;
  for (std::size_t i = 0; i < out.size(); ++i)
    for (int d = 0; d < 3; ++d) out.xyz[3 * i + d] += offset[d];
  return out;
}

PointCloud permute(const PointCloud& cloud, std::span<const std::size_t> order) {
  if (order.size() != cloud.size()) throw ConfigError("permutation length does not match cloud size");
  PointCloud out;
  out.label = cloud.label;
  out.xyz.resize(cloud.xyz.size());
  for (std::size_t i = 0; i < order.size(); ++i)
    for (int d = 0; d < 3; ++d) out.xyz[3 * i + d] = cloud.xyz[3 * order[i] + d];
  return out;
}

}  // namespace mapr
