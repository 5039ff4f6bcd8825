#include "mpseq/nifti.hpp"

#include <zlib.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <memory>
#include <vector>

#include "mpseq/error.hpp"

namespace mpseq::nifti {

namespace {

constexpr int kHeaderSize = 348;
constexpr int kDataOffset = 352;

enum DataType : std::int16_t {
  kUInt8 = 2,
  kInt16 = 4,
  kInt32 = 8,
  kFloat32 = 16,
  kFloat64 = 64,
  kInt8 = 256,
  kUInt16 = 512,
  kUInt32 = 768,
};

struct GzCloser {
  void operator()(gzFile f) const {
    if (f) gzclose(f);
  }
};
using GzHandle = std::unique_ptr<std::remove_pointer_t<gzFile>, GzCloser>;

template <typename T>
T get(const std::uint8_t* base, std::size_t offset, bool swap) {
  T v;
  std::memcpy(&v, base + offset, sizeof(T));
  if (swap) {
    auto* b = reinterpret_cast<std::uint8_t*>(&v);
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
  }
  return v;
}

template <typename T>
void put(std::uint8_t* base, std::size_t offset, T v) {
  std::memcpy(base + offset, &v, sizeof(T));
}

using Mat34 = std::array<std::array<double, 4>, 3>;

Mat34 quatern_to_affine(double b, double c, double d, double qx, double qy, double qz,
                        double dx, double dy, double dz, double qfac) {
  double a = 1.0 - (b * b + c * c + d * d);
  if (a < 1e-7) {
    a = 1.0 / std::sqrt(b * b + c * c + d * d);
    b *= a;
    c *= a;
    d *= a;
    a = 0.0;
  } else {
    a = std::sqrt(a);
  }
  if (qfac < 0) dz = -dz;
  Mat34 m{};
  m[0] = {(a * a + b * b - c * c - d * d) * dx, 2 * (b * c - a * d) * dy, 2 * (b * d + a * c) * dz, qx};
  m[1] = {2 * (b * c + a * d) * dx, (a * a + c * c - b * b - d * d) * dy, 2 * (c * d - a * b) * dz, qy};
  m[2] = {2 * (b * d - a * c) * dx, 2 * (c * d + a * b) * dy, (a * a + d * d - c * c - b * b) * dz, qz};
  return m;
}

// Reduce an affine to axis codes, spacing and origin. Each array axis takes the
// world axis its column points along most strongly, largest columns first.
void affine_to_geometry(const Mat34& m, SeriesVolume& v) {
  static const char kPos[3] = {'R', 'A', 'S'};
  static const char kNeg[3] = {'L', 'P', 'I'};
  std::array<double, 3> norms{};
  for (int d = 0; d < 3; ++d) {
    norms[d] = std::sqrt(m[0][d] * m[0][d] + m[1][d] * m[1][d] + m[2][d] * m[2][d]);
    if (!(norms[d] > 0.0) || !std::isfinite(norms[d])) {
      throw Error(ErrorKind::UnreadableFile, "degenerate orientation matrix");
    }
  }
  std::array<int, 3> order{0, 1, 2};
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    double ma = 0, mb = 0;
    for (int w = 0; w < 3; ++w) {
      ma = std::max(ma, std::abs(m[w][a]) / norms[a]);
      mb = std::max(mb, std::abs(m[w][b]) / norms[b]);
    }
    return ma > mb;
  });
  std::string codes(3, '?');
  bool used[3] = {false, false, false};
  for (int d : order) {
    int best = -1;
    double best_mag = -1;
    for (int w = 0; w < 3; ++w) {
      if (used[w]) continue;
      if (std::abs(m[w][d]) > best_mag) {
        best_mag = std::abs(m[w][d]);
        best = w;
      }
    }
    used[best] = true;
    codes[d] = m[best][d] >= 0 ? kPos[best] : kNeg[best];
  }
  v.axis_codes = codes;
  for (int d = 0; d < 3; ++d) v.spacing[d] = norms[d];
  v.origin = {m[0][3], m[1][3], m[2][3]};
}

Mat34 geometry_to_affine(const SeriesVolume& v) {
  Mat34 m{};
  for (int d = 0; d < 3; ++d) {
    const char c = v.axis_codes[d];
    const int w = (c == 'R' || c == 'L') ? 0 : (c == 'A' || c == 'P') ? 1 : 2;
    const double sign = (c == 'R' || c == 'A' || c == 'S') ? 1.0 : -1.0;
    m[w][d] = sign * v.spacing[d];
  }
  for (int w = 0; w < 3; ++w) m[w][3] = v.origin[w];
  return m;
}

// Rotation (unit columns) -> quaternion (b, c, d) and qfac, following the
// NIfTI-1 reference algorithm.
void affine_to_quatern(const Mat34& m, const Vec3& spacing, double& qb, double& qc, double& qd,
                       double& qfac) {
  double r[3][3];
  for (int w = 0; w < 3; ++w)
    for (int d = 0; d < 3; ++d) r[w][d] = m[w][d] / spacing[d];
  const double det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) -
                     r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0]) +
                     r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
  qfac = det < 0 ? -1.0 : 1.0;
  if (qfac < 0) {
    for (auto& row : r) row[2] = -row[2];
  }
  double a = r[0][0] + r[1][1] + r[2][2] + 1.0;
  double b, c, d;
  if (a > 0.5) {
    a = 0.5 * std::sqrt(a);
    b = 0.25 * (r[2][1] - r[1][2]) / a;
    c = 0.25 * (r[0][2] - r[2][0]) / a;
    d = 0.25 * (r[1][0] - r[0][1]) / a;
  } else {
    const double xd = 1.0 + r[0][0] - (r[1][1] + r[2][2]);
    const double yd = 1.0 + r[1][1] - (r[0][0] + r[2][2]);
    const double zd = 1.0 + r[2][2] - (r[0][0] + r[1][1]);
    if (xd > 1.0) {
      b = 0.5 * std::sqrt(xd);
      c = 0.25 * (r[0][1] + r[1][0]) / b;
      d = 0.25 * (r[0][2] + r[2][0]) / b;
      a = 0.25 * (r[2][1] - r[1][2]) / b;
    } else if (yd > 1.0) {
      c = 0.5 * std::sqrt(yd);
      b = 0.25 * (r[0][1] + r[1][0]) / c;
      d = 0.25 * (r[1][2] + r[2][1]) / c;
      a = 0.25 * (r[0][2] - r[2][0]) / c;
    } else {
      d = 0.5 * std::sqrt(zd);
      b = 0.25 * (r[0][2] + r[2][0]) / d;
      c = 0.25 * (r[1][2] + r[2][1]) / d;
      a = 0.25 * (r[1][0] - r[0][1]) / d;
    }
    if (a < 0.0) {
      b = -b;
      c = -c;
      d = -d;
    }
  }
  qb = b;
  qc = c;
  qd = d;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

SeriesVolume read(const std::filesystem::path& path) {
  const std::string name = path.string();
  GzHandle file(gzopen(name.c_str(), "rb"));
  if (!file) throw Error(ErrorKind::UnreadableFile, "cannot open " + name);

  std::array<std::uint8_t, kHeaderSize> hdr{};
  if (gzread(file.get(), hdr.data(), kHeaderSize) != kHeaderSize) {
    throw Error(ErrorKind::UnreadableFile, "truncated NIfTI header in " + name);
  }
  const std::uint8_t* h = hdr.data();
  bool swap = false;
  if (get<std::int32_t>(h, 0, false) != kHeaderSize) {
    if (get<std::int32_t>(h, 0, true) != kHeaderSize) {
      throw Error(ErrorKind::UnreadableFile, "not a NIfTI-1 file: " + name);
    }
    swap = true;
  }
  if (std::memcmp(h + 344, "n+1", 3) != 0 && std::memcmp(h + 344, "ni1", 3) != 0) {
    throw Error(ErrorKind::UnreadableFile, "bad NIfTI magic in " + name);
  }

  const auto ndim = get<std::int16_t>(h, 40, swap);
  if (ndim < 1 || ndim > 7) throw Error(ErrorKind::UnreadableFile, "bad dim[0] in " + name);
  std::array<std::int64_t, 7> dims{1, 1, 1, 1, 1, 1, 1};
  for (int d = 0; d < ndim; ++d) {
    dims[d] = get<std::int16_t>(h, 42 + 2 * d, swap);
    if (dims[d] < 1) throw Error(ErrorKind::UnreadableFile, "non-positive dimension in " + name);
  }
  int non_singleton = 0;
  for (int d = 0; d < ndim; ++d) non_singleton += dims[d] > 1 ? 1 : 0;
  const bool leading_three = dims[0] > 1 && dims[1] > 1 && dims[2] > 1;
  if (non_singleton != 3 || !leading_three) {
    throw Error(ErrorKind::Not3D, name + " has " + std::to_string(non_singleton) + " non-singleton dimensions");
  }

  const auto datatype = get<std::int16_t>(h, 70, swap);
  const auto bitpix = get<std::int16_t>(h, 72, swap);
  std::array<double, 8> pixdim{};
  for (int i = 0; i < 8; ++i) pixdim[i] = get<float>(h, 76 + 4 * i, swap);
  const double vox_offset = get<float>(h, 108, swap);
  double slope = get<float>(h, 112, swap);
  const double inter = get<float>(h, 116, swap);
  if (slope == 0.0 || !std::isfinite(slope)) slope = 1.0;
  const auto qform_code = get<std::int16_t>(h, 252, swap);
  const auto sform_code = get<std::int16_t>(h, 254, swap);

  SeriesVolume v;
  v.shape = Shape3{static_cast<std::size_t>(dims[0]), static_cast<std::size_t>(dims[1]),
                   static_cast<std::size_t>(dims[2])};
  Mat34 affine{};
  if (sform_code > 0) {
    for (int w = 0; w < 3; ++w)
      for (int c = 0; c < 4; ++c) affine[w][c] = get<float>(h, 280 + 16 * w + 4 * c, swap);
  } else if (qform_code > 0) {
    affine = quatern_to_affine(get<float>(h, 256, swap), get<float>(h, 260, swap), get<float>(h, 264, swap),
                               get<float>(h, 268, swap), get<float>(h, 272, swap), get<float>(h, 276, swap),
                               std::abs(pixdim[1]), std::abs(pixdim[2]), std::abs(pixdim[3]),
                               pixdim[0] < 0 ? -1.0 : 1.0);
  } else {
    for (int d = 0; d < 3; ++d) affine[d][d] = pixdim[d + 1] > 0 ? pixdim[d + 1] : 1.0;
  }
  affine_to_geometry(affine, v);

  std::size_t bytes_per_voxel = 0;
  switch (datatype) {
    case kUInt8: case kInt8: bytes_per_voxel = 1; break;
    case kInt16: case kUInt16: bytes_per_voxel = 2; break;
    case kInt32: case kUInt32: case kFloat32: bytes_per_voxel = 4; break;
    case kFloat64: bytes_per_voxel = 8; break;
    default: throw Error(ErrorKind::UnreadableFile, "unsupported NIfTI datatype " + std::to_string(datatype));
  }
  if (bitpix != static_cast<std::int16_t>(8 * bytes_per_voxel)) {
    throw Error(ErrorKind::UnreadableFile, "bitpix does not match datatype in " + name);
  }

  const auto offset = static_cast<long>(vox_offset < kHeaderSize ? kDataOffset : vox_offset);
  if (gzseek(file.get(), offset, SEEK_SET) != offset) {
    throw Error(ErrorKind::UnreadableFile, "cannot seek to voxel data in " + name);
  }
  const std::size_t count = v.shape.size();
  std::vector<std::uint8_t> raw(count * bytes_per_voxel);
  std::size_t got = 0;
  while (got < raw.size()) {
    const auto chunk = static_cast<unsigned>(std::min<std::size_t>(raw.size() - got, 1u << 30));
    const int n = gzread(file.get(), raw.data() + got, chunk);
    if (n <= 0) throw Error(ErrorKind::UnreadableFile, "truncated voxel data in " + name);
    got += static_cast<std::size_t>(n);
  }

  v.voxels.resize(count);
  const std::uint8_t* p = raw.data();
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t o = i * bytes_per_voxel;
    double x = 0.0;
    switch (datatype) {
      case kUInt8: x = p[o]; break;
      case kInt8: x = static_cast<std::int8_t>(p[o]); break;
      case kInt16: x = get<std::int16_t>(p, o, swap); break;
      case kUInt16: x = get<std::uint16_t>(p, o, swap); break;
      case kInt32: x = get<std::int32_t>(p, o, swap); break;
      case kUInt32: x = get<std::uint32_t>(p, o, swap); break;
      case kFloat32: x = get<float>(p, o, swap); break;
      case kFloat64: x = get<double>(p, o, swap); break;
      default: break;
    }
    x = x * slope + inter;
    if (!std::isfinite(x)) throw Error(ErrorKind::UnreadableFile, "non-finite voxel value in " + name);
    v.voxels[i] = x;
  }
  return v;
}

void write(const std::filesystem::path& path, const SeriesVolume& volume, StorageType storage) {
  volume.validate();
  for (std::size_t d = 0; d < 3; ++d) {
    if (volume.shape[d] > 32767) throw Error(ErrorKind::InvalidConfig, "dimension too large for NIfTI-1");
  }
  std::array<std::uint8_t, kDataOffset> hdr{};
  std::uint8_t* h = hdr.data();
  put<std::int32_t>(h, 0, kHeaderSize);
  h[39] = 0;
  put<std::int16_t>(h, 40, 3);
  for (int d = 0; d < 3; ++d) put<std::int16_t>(h, 42 + 2 * d, static_cast<std::int16_t>(volume.shape[d]));
  for (int d = 3; d < 7; ++d) put<std::int16_t>(h, 42 + 2 * d, 1);
  const bool f64 = storage == StorageType::Float64;
  put<std::int16_t>(h, 70, f64 ? kFloat64 : kFloat32);
  put<std::int16_t>(h, 72, f64 ? 64 : 32);

  const Mat34 affine = geometry_to_affine(volume);
  double qb, qc, qd, qfac;
  affine_to_quatern(affine, volume.spacing, qb, qc, qd, qfac);
  put<float>(h, 76, static_cast<float>(qfac));
  for (int d = 0; d < 3; ++d) put<float>(h, 80 + 4 * d, static_cast<float>(volume.spacing[d]));
  put<float>(h, 108, static_cast<float>(kDataOffset));
  put<float>(h, 112, 1.0f);
  put<float>(h, 116, 0.0f);
  h[123] = 2;  // xyzt_units: mm
  put<std::int16_t>(h, 252, 1);
  put<std::int16_t>(h, 254, 1);
  put<float>(h, 256, static_cast<float>(qb));
  put<float>(h, 260, static_cast<float>(qc));
  put<float>(h, 264, static_cast<float>(qd));
  for (int w = 0; w < 3; ++w) put<float>(h, 268 + 4 * w, static_cast<float>(volume.origin[w]));
  for (int w = 0; w < 3; ++w)
    for (int c = 0; c < 4; ++c) put<float>(h, 280 + 16 * w + 4 * c, static_cast<float>(affine[w][c]));
  std::memcpy(h + 344, "n+1\0", 4);

  std::vector<std::uint8_t> data(volume.voxels.size() * (f64 ? 8 : 4));
  for (std::size_t i = 0; i < volume.voxels.size(); ++i) {
    if (f64) {
      put<double>(data.data(), 8 * i, volume.voxels[i]);
    } else {
      put<float>(data.data(), 4 * i, static_cast<float>(volume.voxels[i]));
    }
  }

  const std::string final_name = path.string();
  const std::string tmp_name = final_name + ".partial";
  const bool compress = ends_with(final_name, ".gz");
  {
    GzHandle file(gzopen(tmp_name.c_str(), compress ? "wb6" : "wbT"));
    if (!file) throw Error(ErrorKind::Unwritable, "cannot create " + tmp_name);
    auto write_all = [&](const std::uint8_t* ptr, std::size_t n) {
      std::size_t done = 0;
      while (done < n) {
        const auto chunk = static_cast<unsigned>(std::min<std::size_t>(n - done, 1u << 30));
        if (gzwrite(file.get(), ptr + done, chunk) != static_cast<int>(chunk)) {
          throw Error(ErrorKind::Unwritable, "write failed for " + tmp_name);
        }
        done += chunk;
      }
    };
    write_all(hdr.data(), hdr.size());
    write_all(data.data(), data.size());
    if (gzclose(file.release()) != Z_OK) throw Error(ErrorKind::Unwritable, "close failed for " + tmp_name);
  }
  std::error_code ec;
  std::filesystem::rename(tmp_name, path, ec);
  if (ec) throw Error(ErrorKind::Unwritable, "cannot rename into " + final_name + ": " + ec.message());
}

}  // namespace mpseq::nifti
