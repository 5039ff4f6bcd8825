#include <algorithm>
#include <cmath>

#include "mpseq/error.hpp"
#include "mpseq/ingestion.hpp"

namespace mpseq {

namespace {

using dicom::tags::ImageOrientationPatient;
using dicom::tags::ImagePositionPatient;

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

// DICOM patient space is LPS; volumes use RAS.
Vec3 lps_to_ras(const Vec3& v) { return {-v[0], -v[1], v[2]}; }

char axis_code(const Vec3& ras_direction) {
  static const char kPos[3] = {'R', 'A', 'S'};
  static const char kNeg[3] = {'L', 'P', 'I'};
  std::size_t w = 0;
  for (std::size_t i = 1; i < 3; ++i) {
    if (std::abs(ras_direction[i]) > std::abs(ras_direction[w])) w = i;
  }
  return ras_direction[w] >= 0 ? kPos[w] : kNeg[w];
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

AssembledSeries assemble_series(std::vector<SliceRecord> slices, double gap_tolerance) {
  if (slices.empty()) throw Error(ErrorKind::UnreadableFile, "series has no slices");

  const HeaderFields header = extract_headers(slices.front());
  for (const auto& s : slices) {
    const auto uid = s.metadata.text(dicom::tags::SeriesInstanceUID).value_or("");
    if (uid != header.series_uid) {
      throw Error(ErrorKind::MixedSeries, "slice " + s.source + " belongs to series '" + uid + "', expected '" +
                                              header.series_uid + "'");
    }
    if (s.rows != slices.front().rows || s.columns != slices.front().columns) {
      throw Error(ErrorKind::MixedSeries, "slice " + s.source + " has a different in-plane shape");
    }
    if (s.pixels.size() != s.rows * s.columns) {
      throw Error(ErrorKind::UnreadableFile, "slice " + s.source + " has no decoded pixels");
    }
    if (s.metadata.numbers(ImagePositionPatient).size() != 3) {
      throw Error(ErrorKind::UnreadableFile, "slice " + s.source + " lacks ImagePositionPatient");
    }
  }

  auto iop = slices.front().metadata.numbers(ImageOrientationPatient);
  if (iop.size() != 6) iop = {1, 0, 0, 0, 1, 0};
  const Vec3 row_dir{iop[0], iop[1], iop[2]};
  const Vec3 col_dir{iop[3], iop[4], iop[5]};
  const Vec3 normal = cross(row_dir, col_dir);

  auto position = [](const SliceRecord& s) {
    const auto p = s.metadata.numbers(ImagePositionPatient);
    return Vec3{p[0], p[1], p[2]};
  };
  std::vector<double> proj(slices.size());
  std::vector<std::size_t> order(slices.size());
  for (std::size_t i = 0; i < slices.size(); ++i) {
    proj[i] = dot(position(slices[i]), normal);
    order[i] = i;
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return proj[a] < proj[b]; });

  std::vector<double> gaps;
  for (std::size_t i = 1; i < order.size(); ++i) {
    const double gap = proj[order[i]] - proj[order[i - 1]];
    if (gap < 1e-4) {
      throw Error(ErrorKind::DuplicatePosition,
                  "slices " + slices[order[i - 1]].source + " and " + slices[order[i]].source + " share a position");
    }
    gaps.push_back(gap);
  }

  double sz = slices.front().metadata.number(dicom::tags::SliceThickness).value_or(1.0);
  if (!gaps.empty()) {
    sz = median(gaps);
    for (double g : gaps) {
      if (std::abs(g - sz) > gap_tolerance * sz) {
        throw Error(ErrorKind::NonUniformGap, "inter-slice gap " + std::to_string(g) + " mm deviates from median " +
                                                  std::to_string(sz) + " mm by more than " +
                                                  std::to_string(gap_tolerance * 100.0) + "%");
      }
    }
  }
  if (!(sz > 0.0)) sz = 1.0;

  const auto pixel_spacing = slices.front().metadata.numbers(dicom::tags::PixelSpacing);
  const double sy = pixel_spacing.size() == 2 && pixel_spacing[0] > 0 ? pixel_spacing[0] : 1.0;
  const double sx = pixel_spacing.size() == 2 && pixel_spacing[1] > 0 ? pixel_spacing[1] : 1.0;

  const SliceRecord& first = slices[order.front()];
  SeriesVolume v(Shape3{first.columns, first.rows, slices.size()}, Vec3{sx, sy, sz});
  v.origin = lps_to_ras(position(first));
  v.axis_codes = {axis_code(lps_to_ras(row_dir)), axis_code(lps_to_ras(col_dir)), axis_code(lps_to_ras(normal))};
  if (!valid_axis_codes(v.axis_codes)) {
    throw Error(ErrorKind::UnreadableFile, "degenerate ImageOrientationPatient in series " + header.series_uid);
  }

  const std::size_t plane = first.rows * first.columns;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const SliceRecord& s = slices[order[k]];
    const double slope = s.metadata.number(dicom::tags::RescaleSlope).value_or(1.0);
    const double intercept = s.metadata.number(dicom::tags::RescaleIntercept).value_or(0.0);
    for (std::size_t i = 0; i < plane; ++i) v.voxels[k * plane + i] = s.pixels[i] * slope + intercept;
  }
  return {std::move(v), header};
}

}  // namespace mpseq
