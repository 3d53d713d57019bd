#pragma once

#include <cmath>

#include "stnngp/types.hpp"

namespace stnngp {

enum class DistanceMetric { euclidean, haversine };

inline constexpr double kEarthRadiusKm = 6371.0088;

/// Great-circle distance in km between (lon, lat) pairs given in degrees.
template <typename Scalar>
Scalar haversine_km(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& a,
                    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& b) {
  const Scalar deg = M_PI / 180.0;
  Scalar lon1 = a(0) * deg, lat1 = a(1) * deg;
  Scalar lon2 = b(0) * deg, lat2 = b(1) * deg;
  Scalar sdlat = std::sin((lat2 - lat1) / 2);
  Scalar sdlon = std::sin((lon2 - lon1) / 2);
  Scalar h = sdlat * sdlat + std::cos(lat1) * std::cos(lat2) * sdlon * sdlon;
  return 2 * kEarthRadiusKm * std::asin(std::min<Scalar>(1, std::sqrt(h)));
}

/// Distance between two locations under the configured metric.
inline double point_distance(const Vector& a, const Vector& b, DistanceMetric metric) {
  if (metric == DistanceMetric::haversine) return haversine_km(a, b);
  return (a - b).norm();
}

/// Rows of `points` are locations; returns the distance from `p` to each row.
inline Vector distances_to(const Vector& p, const Matrix& points, DistanceMetric metric) {
  Vector out(points.rows());
  for (Eigen::Index i = 0; i < points.rows(); ++i)
    out(i) = point_distance(p, points.row(i).transpose(), metric);
  return out;
}

}  // namespace stnngp
