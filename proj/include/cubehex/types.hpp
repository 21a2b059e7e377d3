#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <string>
#include <vector>

namespace cubehex
{

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Points = std::vector<Vec3>;

// Flat xyz layout used by the optimizers.
inline Eigen::VectorXd flatten(const Points& points)
{
    Eigen::VectorXd flat(3 * static_cast<Eigen::Index>(points.size()));
    for (size_t i = 0; i < points.size(); ++i)
        flat.segment<3>(3 * static_cast<Eigen::Index>(i)) = points[i];
    return flat;
}

inline Points unflatten(const Eigen::VectorXd& flat)
{
    Points points(static_cast<size_t>(flat.size() / 3));
    for (size_t i = 0; i < points.size(); ++i)
        points[i] = flat.segment<3>(3 * static_cast<Eigen::Index>(i));
    return points;
}

// Free-form messages surfaced to the user (reorientation notices, dropped cuboids, ...).
using Notices = std::vector<std::string>;

} // namespace cubehex
