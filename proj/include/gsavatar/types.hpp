#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace gsavatar {

using Index = Eigen::Index;

template <typename S>
using RowMatX3 = Eigen::Matrix<S, Eigen::Dynamic, 3, Eigen::RowMajor>;
template <typename S>
using RowMatX4 = Eigen::Matrix<S, Eigen::Dynamic, 4, Eigen::RowMajor>;
template <typename S>
using RowMatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using Vec2 = Eigen::Matrix<S, 2, 1>;
template <typename S>
using Vec3 = Eigen::Matrix<S, 3, 1>;
template <typename S>
using Vec4 = Eigen::Matrix<S, 4, 1>;
template <typename S>
using Mat2 = Eigen::Matrix<S, 2, 2>;
template <typename S>
using Mat3 = Eigen::Matrix<S, 3, 3>;

/// Shape or dimension mismatch between inputs, or an invalid configuration value.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A numerical failure that can be traced to one element (Gaussian, splat, basis).
class NumericalError : public std::runtime_error {
public:
    NumericalError(const std::string& what, std::size_t index)
        : std::runtime_error(what + " (index " + std::to_string(index) + ")"), index_(index) {}
    std::size_t index() const { return index_; }

private:
    std::size_t index_;
};

class DegenerateTriangleError : public std::runtime_error {
public:
    explicit DegenerateTriangleError(std::size_t face)
        : std::runtime_error("degenerate triangle at face " + std::to_string(face)), face_(face) {}
    std::size_t face() const { return face_; }

private:
    std::size_t face_;
};

/// File-format or filesystem failure; the message names the file and field.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace gsavatar
