#include "mpseq/volume.hpp"

#include <cmath>

#include "mpseq/error.hpp"

namespace mpseq {

namespace {

int world_axis(char code) {
  switch (code) {
    case 'R': case 'L': return 0;
    case 'A': case 'P': return 1;
    case 'S': case 'I': return 2;
    default: return -1;
  }
}

double world_sign(char code) { return (code == 'R' || code == 'A' || code == 'S') ? 1.0 : -1.0; }

}  // namespace

bool valid_axis_codes(const std::string& codes) {
  if (codes.size() != 3) return false;
  bool seen[3] = {false, false, false};
  for (char c : codes) {
    const int w = world_axis(c);
    if (w < 0 || seen[w]) return false;
    seen[w] = true;
  }
  return true;
}

void SeriesVolume::validate() const {
  if (shape.nx < 1 || shape.ny < 1 || shape.nz < 1) {
    throw Error(ErrorKind::InvalidConfig, "volume dimensions must be >= 1");
  }
  if (voxels.size() != shape.size()) {
    throw Error(ErrorKind::InvalidConfig, "voxel count does not match shape");
  }
  for (double s : spacing) {
    if (!(s > 0.0) || !std::isfinite(s)) throw Error(ErrorKind::InvalidConfig, "spacing must be positive");
  }
  if (!valid_axis_codes(axis_codes)) {
    throw Error(ErrorKind::InvalidConfig, "invalid axis codes '" + axis_codes + "'");
  }
  for (double v : voxels) {
    if (!std::isfinite(v)) throw Error(ErrorKind::InvalidConfig, "non-finite voxel value");
  }
}

SeriesVolume reorient(const SeriesVolume& v, const std::string& target) {
  if (!valid_axis_codes(v.axis_codes) || !valid_axis_codes(target)) {
    throw Error(ErrorKind::InvalidConfig, "invalid axis codes");
  }
  if (v.axis_codes == target) return v;

  // For each output axis e: which source axis feeds it and whether it runs backwards.
  std::array<std::size_t, 3> src_axis{};
  std::array<bool, 3> flip{};
  for (std::size_t e = 0; e < 3; ++e) {
    for (std::size_t d = 0; d < 3; ++d) {
      if (world_axis(v.axis_codes[d]) == world_axis(target[e])) {
        src_axis[e] = d;
        flip[e] = v.axis_codes[d] != target[e];
      }
    }
  }

  SeriesVolume out;
  out.axis_codes = target;
  for (std::size_t e = 0; e < 3; ++e) {
    out.shape[e] = v.shape[src_axis[e]];
    out.spacing[e] = v.spacing[src_axis[e]];
  }
  out.voxels.resize(out.shape.size());

  // World position of the new first voxel = source voxel at the flipped corner.
  out.origin = v.origin;
  for (std::size_t e = 0; e < 3; ++e) {
    if (!flip[e]) continue;
    const std::size_t d = src_axis[e];
    const char code = v.axis_codes[d];
    out.origin[world_axis(code)] +=
        world_sign(code) * static_cast<double>(v.shape[d] - 1) * v.spacing[d];
  }

  std::array<std::size_t, 3> o{};
  std::array<std::size_t, 3> s{};
  for (o[2] = 0; o[2] < out.shape.nz; ++o[2]) {
    for (o[1] = 0; o[1] < out.shape.ny; ++o[1]) {
      for (o[0] = 0; o[0] < out.shape.nx; ++o[0]) {
        for (std::size_t e = 0; e < 3; ++e) {
          s[src_axis[e]] = flip[e] ? out.shape[e] - 1 - o[e] : o[e];
        }
        out.at(o[0], o[1], o[2]) = v.at(s[0], s[1], s[2]);
      }
    }
  }
  return out;
}

Vec3 axis_direction(const std::string& codes, std::size_t axis) {
  Vec3 d{0.0, 0.0, 0.0};
  const char c = codes.at(axis);
  const int w = world_axis(c);
  if (w < 0) throw Error(ErrorKind::InvalidConfig, "invalid axis code");
  d[static_cast<std::size_t>(w)] = world_sign(c);
  return d;
}

SeriesVolume canonicalize_orientation(const SeriesVolume& v) { return reorient(v, kCanonicalAxes); }

}  // namespace mpseq
