#include "mpseq/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "mpseq/error.hpp"
#include "mpseq/nifti.hpp"

namespace mpseq {

namespace {

struct AxisSamples {
  std::vector<std::size_t> lo;
  std::vector<std::size_t> hi;
  std::vector<double> w;  // weight of hi
};

AxisSamples axis_samples(std::size_t n_in, double s_in, std::size_t n_out, double s_out, Interpolation mode) {
  AxisSamples a;
  a.lo.resize(n_out);
  a.hi.resize(n_out);
  a.w.resize(n_out);
  const double last = static_cast<double>(n_in - 1);
  for (std::size_t o = 0; o < n_out; ++o) {
    double x = (static_cast<double>(o) + 0.5) * (s_out / s_in) - 0.5;
    x = std::clamp(x, 0.0, last);
    if (mode == Interpolation::Nearest) {
      const auto idx = static_cast<std::size_t>(std::floor(x + 0.5));
      a.lo[o] = a.hi[o] = std::min(idx, n_in - 1);
      a.w[o] = 0.0;
      continue;
    }
    const auto i0 = static_cast<std::size_t>(std::floor(x));
    a.lo[o] = i0;
    a.hi[o] = std::min(i0 + 1, n_in - 1);
    a.w[o] = x - static_cast<double>(i0);
  }
  return a;
}

const char* interpolation_name(Interpolation m) { return m == Interpolation::Nearest ? "nearest" : "trilinear"; }

}  // namespace

void PreprocessConfig::validate() const {
  for (double s : target_spacing) {
    if (!(s > 0.0) || !std::isfinite(s)) throw Error(ErrorKind::InvalidConfig, "preprocess.target_spacing must be > 0");
  }
  for (std::size_t d = 0; d < 3; ++d) {
    if (target_shape[d] < 1) throw Error(ErrorKind::InvalidConfig, "preprocess.target_shape entries must be >= 1");
  }
  if (!(p_low >= 0.0 && p_low < p_high && p_high <= 100.0)) {
    throw Error(ErrorKind::InvalidConfig, "preprocess.percentile_window must satisfy 0 <= low < high <= 100");
  }
  if (!std::isfinite(pad_value)) throw Error(ErrorKind::InvalidConfig, "preprocess.pad_value must be finite");
}

ordered_json PreprocessConfig::to_json() const {
  ordered_json j;
  j["target_spacing"] = {target_spacing[0], target_spacing[1], target_spacing[2]};
  j["target_shape"] = {target_shape.nx, target_shape.ny, target_shape.nz};
  j["percentile_window"] = {p_low, p_high};
  j["pad_value"] = pad_value;
  j["interpolation"] = interpolation_name(interpolation);
  return j;
}

PreprocessConfig PreprocessConfig::from_json(const nlohmann::json& j, const std::string& context) {
  reject_unknown_keys(j, {"target_spacing", "target_shape", "percentile_window", "pad_value", "interpolation"},
                      context);
  PreprocessConfig c;
  const auto spacing = get_field<std::vector<double>>(j, "target_spacing", context);
  const auto shape = get_field<std::vector<std::size_t>>(j, "target_shape", context);
  const auto window = get_field<std::vector<double>>(j, "percentile_window", context);
  if (spacing.size() != 3) throw Error(ErrorKind::InvalidConfig, "'" + context + ".target_spacing' needs 3 entries");
  if (shape.size() != 3) throw Error(ErrorKind::InvalidConfig, "'" + context + ".target_shape' needs 3 entries");
  if (window.size() != 2) throw Error(ErrorKind::InvalidConfig, "'" + context + ".percentile_window' needs 2 entries");
  c.target_spacing = {spacing[0], spacing[1], spacing[2]};
  c.target_shape = {shape[0], shape[1], shape[2]};
  c.p_low = window[0];
  c.p_high = window[1];
  c.pad_value = get_field<double>(j, "pad_value", context);
  const auto mode = get_field<std::string>(j, "interpolation", context);
  if (mode == "trilinear") {
    c.interpolation = Interpolation::Trilinear;
  } else if (mode == "nearest") {
    c.interpolation = Interpolation::Nearest;
  } else {
    throw Error(ErrorKind::InvalidConfig, "'" + context + ".interpolation' must be trilinear or nearest");
  }
  c.validate();
  return c;
}

std::string PreprocessConfig::fingerprint() const { return mpseq::fingerprint(to_json()); }

std::size_t resampled_extent(std::size_t n_in, double s_in, double s_out) {
  const double n = std::round(static_cast<double>(n_in) * s_in / s_out);
  return n < 1.0 ? 1 : static_cast<std::size_t>(n);
}

SeriesVolume resample(const SeriesVolume& v, const Vec3& target_spacing, Interpolation mode) {
  v.validate();
  for (double s : target_spacing) {
    if (!(s > 0.0)) throw Error(ErrorKind::InvalidConfig, "target spacing must be > 0");
  }
  Shape3 out_shape;
  std::array<AxisSamples, 3> samples;
  for (std::size_t d = 0; d < 3; ++d) {
    out_shape[d] = resampled_extent(v.shape[d], v.spacing[d], target_spacing[d]);
    samples[d] = axis_samples(v.shape[d], v.spacing[d], out_shape[d], target_spacing[d], mode);
  }

  // Separable passes: x, then y, then z.
  const Shape3 in = v.shape;
  std::vector<double> a(out_shape.nx * in.ny * in.nz);
  for (std::size_t k = 0; k < in.nz; ++k) {
    for (std::size_t j = 0; j < in.ny; ++j) {
      const double* row = v.voxels.data() + in.nx * (j + in.ny * k);
      double* dst = a.data() + out_shape.nx * (j + in.ny * k);
      for (std::size_t o = 0; o < out_shape.nx; ++o) {
        const double w = samples[0].w[o];
        dst[o] = (1.0 - w) * row[samples[0].lo[o]] + w * row[samples[0].hi[o]];
      }
    }
  }
  std::vector<double> b(out_shape.nx * out_shape.ny * in.nz);
  for (std::size_t k = 0; k < in.nz; ++k) {
    for (std::size_t o = 0; o < out_shape.ny; ++o) {
      const double w = samples[1].w[o];
      const double* r0 = a.data() + out_shape.nx * (samples[1].lo[o] + in.ny * k);
      const double* r1 = a.data() + out_shape.nx * (samples[1].hi[o] + in.ny * k);
      double* dst = b.data() + out_shape.nx * (o + out_shape.ny * k);
      for (std::size_t i = 0; i < out_shape.nx; ++i) dst[i] = (1.0 - w) * r0[i] + w * r1[i];
    }
  }
  SeriesVolume out(out_shape, target_spacing);
  const std::size_t plane = out_shape.nx * out_shape.ny;
  for (std::size_t o = 0; o < out_shape.nz; ++o) {
    const double w = samples[2].w[o];
    const double* p0 = b.data() + plane * samples[2].lo[o];
    const double* p1 = b.data() + plane * samples[2].hi[o];
    double* dst = out.voxels.data() + plane * o;
    for (std::size_t i = 0; i < plane; ++i) dst[i] = (1.0 - w) * p0[i] + w * p1[i];
  }

  out.axis_codes = v.axis_codes;
  out.origin = v.origin;
  for (std::size_t d = 0; d < 3; ++d) {
    const Vec3 dir = axis_direction(v.axis_codes, d);
    const double shift = 0.5 * (target_spacing[d] - v.spacing[d]);
    for (std::size_t w = 0; w < 3; ++w) out.origin[w] += dir[w] * shift;
  }
  return out;
}

std::array<long long, 3> crop_pad_offsets(const Shape3& in, const Shape3& target) {
  std::array<long long, 3> off{};
  for (std::size_t d = 0; d < 3; ++d) {
    const auto n_in = static_cast<long long>(in[d]);
    const auto n_t = static_cast<long long>(target[d]);
    off[d] = n_in >= n_t ? (n_in - n_t) / 2 : -((n_t - n_in) / 2);
  }
  return off;
}

SeriesVolume crop_or_pad(const SeriesVolume& v, const Shape3& target, double pad_value) {
  v.validate();
  if (v.shape == target) return v;
  const auto off = crop_pad_offsets(v.shape, target);
  SeriesVolume out(target, v.spacing, pad_value);
  out.axis_codes = v.axis_codes;
  out.origin = v.origin;
  for (std::size_t d = 0; d < 3; ++d) {
    const Vec3 dir = axis_direction(v.axis_codes, d);
    for (std::size_t w = 0; w < 3; ++w) out.origin[w] += dir[w] * static_cast<double>(off[d]) * v.spacing[d];
  }
  // Output index o maps to input index o + off; copy the overlapping box row by row.
  std::array<long long, 3> lo{}, hi{};
  for (std::size_t d = 0; d < 3; ++d) {
    lo[d] = std::max(0LL, -off[d]);
    hi[d] = std::min(static_cast<long long>(target[d]), static_cast<long long>(v.shape[d]) - off[d]);
  }
  for (long long k = lo[2]; k < hi[2]; ++k) {
    for (long long j = lo[1]; j < hi[1]; ++j) {
      const double* src = &v.voxels[v.index(static_cast<std::size_t>(lo[0] + off[0]), static_cast<std::size_t>(j + off[1]),
                                            static_cast<std::size_t>(k + off[2]))];
      double* dst = &out.voxels[out.index(static_cast<std::size_t>(lo[0]), static_cast<std::size_t>(j),
                                          static_cast<std::size_t>(k))];
      std::copy(src, src + (hi[0] - lo[0]), dst);
    }
  }
  return out;
}

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw Error(ErrorKind::InvalidConfig, "percentile of an empty set");
  const double pos = std::clamp(p, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
  const auto k = static_cast<std::size_t>(std::floor(pos));
  const double frac = pos - static_cast<double>(k);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k), values.end());
  const double lo = values[k];
  if (frac == 0.0 || k + 1 >= values.size()) return lo;
  const double hi = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(k + 1), values.end());
  return lo + frac * (hi - lo);
}

SeriesVolume normalize_percentile(const SeriesVolume& v, double p_low, double p_high) {
  v.validate();
  const double a = percentile(v.voxels, p_low);
  const double b = percentile(v.voxels, p_high);
  SeriesVolume out = v;
  if (b == a) {
    std::fill(out.voxels.begin(), out.voxels.end(), 0.0);
    return out;
  }
  const double scale = 1.0 / (b - a);
  for (double& x : out.voxels) x = std::clamp((x - a) * scale, 0.0, 1.0);
  return out;
}

SeriesVolume preprocess_volume(const SeriesVolume& v, const PreprocessConfig& cfg) {
  cfg.validate();
  const SeriesVolume resampled = resample(v, cfg.target_spacing, cfg.interpolation);
  const SeriesVolume fitted = crop_or_pad(resampled, cfg.target_shape, cfg.pad_value);
  return normalize_percentile(fitted, cfg.p_low, cfg.p_high);
}

ModelInput preprocess_pipeline(const SeriesVolume& v, const PreprocessConfig& cfg) {
  SeriesVolume p = preprocess_volume(v, cfg);
  ModelInput m;
  m.shape = {1, cfg.target_shape.nz, cfg.target_shape.ny, cfg.target_shape.nx};
  m.values = std::move(p.voxels);
  return m;
}

void dump_preprocessed(const std::filesystem::path& path, const SeriesVolume& preprocessed,
                       const PreprocessConfig& cfg, const std::string& series_uid) {
  nifti::write(path, preprocessed, nifti::StorageType::Float64);
  std::string stem = path.filename().string();
  for (const char* ext : {".nii.gz", ".nii"}) {
    const std::string e = ext;
    if (stem.size() > e.size() && stem.compare(stem.size() - e.size(), e.size(), e) == 0) {
      stem.resize(stem.size() - e.size());
      break;
    }
  }
  ordered_json meta;
  meta["series_uid"] = series_uid;
  meta["preprocess_fingerprint"] = cfg.fingerprint();
  meta["preprocess"] = cfg.to_json();
  std::ofstream out(path.parent_path() / (stem + ".json"));
  if (!out) throw Error(ErrorKind::Unwritable, "cannot write preprocess sidecar next to " + path.string());
  out << meta.dump(2) << '\n';
}

}  // namespace mpseq
