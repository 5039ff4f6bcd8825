#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace mpseq {

using Vec3 = std::array<double, 3>;

/// Voxel counts along the array axes (nx, ny, nz); x varies fastest in memory.
struct Shape3 {
  std::size_t nx = 1;
  std::size_t ny = 1;
  std::size_t nz = 1;

  std::size_t size() const noexcept { return nx * ny * nz; }
  std::size_t operator[](std::size_t axis) const noexcept {
    return axis == 0 ? nx : (axis == 1 ? ny : nz);
  }
  std::size_t& operator[](std::size_t axis) noexcept {
    return axis == 0 ? nx : (axis == 1 ? ny : nz);
  }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

/// Canonical orientation: array axis 0/1/2 increase toward Right/Anterior/Superior.
inline constexpr const char* kCanonicalAxes = "RAS";

/// A 3D scalar grid with physical geometry.
///
/// `origin` is the world (RAS, mm) position of the centre of voxel (0,0,0).
/// `axis_codes[d]` names the world direction array axis d increases toward,
/// one of R/L, A/P, S/I. Oblique acquisitions are reduced to the nearest
/// axis-aligned codes on load.
struct SeriesVolume {
  Shape3 shape;
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 origin{0.0, 0.0, 0.0};
  std::string axis_codes = kCanonicalAxes;
  std::vector<double> voxels;

  SeriesVolume() = default;
  SeriesVolume(Shape3 s, Vec3 sp, double fill = 0.0)
      : shape(s), spacing(sp), voxels(s.size(), fill) {}

  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const noexcept {
    return i + shape.nx * (j + shape.ny * k);
  }
  double& at(std::size_t i, std::size_t j, std::size_t k) noexcept { return voxels[index(i, j, k)]; }
  double at(std::size_t i, std::size_t j, std::size_t k) const noexcept { return voxels[index(i, j, k)]; }

  /// Throws InvalidConfig when any SeriesVolume invariant is violated.
  void validate() const;
};

/// Permute and flip array axes so axis_codes becomes "RAS". The world
/// position of every voxel is preserved.
SeriesVolume canonicalize_orientation(const SeriesVolume& v);

/// Reorder/flip the array to arbitrary axis codes (inverse of canonicalize);
/// mostly useful for building orientation fixtures.
SeriesVolume reorient(const SeriesVolume& v, const std::string& target_codes);

/// World (RAS) unit vector along which array axis `axis` increases.
Vec3 axis_direction(const std::string& codes, std::size_t axis);

/// True when `codes` is a permutation of one letter from each of R/L, A/P, S/I.
bool valid_axis_codes(const std::string& codes);

}  // namespace mpseq
