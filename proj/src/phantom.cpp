#include "mpseq/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>

#include "mpseq/error.hpp"
#include "mpseq/nifti.hpp"
#include "mpseq/parallel.hpp"
#include "mpseq/random.hpp"

namespace mpseq {

namespace fs = std::filesystem;

namespace {

ClassSignature make_signature(std::string label, double mean, double sigma, double mult, double granularity,
                              std::array<double, kTissueCount> tissue, double noise) {
  ClassSignature s;
  s.label = std::move(label);
  s.background_mean = mean;
  s.background_sigma = sigma;
  s.lesion_multiplier = mult;
  s.texture_granularity = granularity;
  s.tissue = tissue;
  s.noise_sigma = noise;
  return s;
}

struct HeaderText {
  const char* description;
  const char* protocol;
  double te, tr;
};

// Descriptions the default body rule table maps back to the class.
const std::map<std::string, HeaderText>& header_texts() {
  static const std::map<std::string, HeaderText> t = {
      {"VDCE", {"AX VIBE PORTAL VENOUS", "t1_vibe_dyn_venous", 1.5, 4.0}},
      {"T2W", {"AX T2 HASTE", "t2_haste_tra", 90.0, 2000.0}},
      {"T2FS", {"AX T2 SPAIR", "t2_spair_tra", 85.0, 3000.0}},
      {"DWI", {"AX DWI", "ep2d_diff_tra", 60.0, 4000.0}},
      {"ADC", {"AX DWI ADC MAP", "ep2d_diff_tra_ADC", 60.0, 4000.0}},
  };
  return t;
}

constexpr const char* kBodyPart = "ABDOMEN";
constexpr const char* kProcedure = "MRI CHEST ABDOMEN PELVIS";
constexpr const char* kConflictBodyPart = "BRAIN";
constexpr const char* kScanner = "SYNTHETIC 1.5T";

struct Sphere {
  double x, y, z, r;  // mm
  bool contains(double px, double py, double pz) const {
    return (px - x) * (px - x) + (py - y) * (py - y) + (pz - z) * (pz - z) <= r * r;
  }
};

struct Anatomy {
  Shape3 shape;
  Vec3 spacing;
  std::vector<Tissue> tissue;
  std::vector<std::uint8_t> lesion;  // 0 = none, else 1-based lesion index
};

// Plane-wave texture with the given wavelength (voxels).
struct Texture {
  std::vector<std::array<double, 4>> waves;  // direction (3) and phase

  Texture(Rng& rng, double granularity) {
    constexpr int kWaves = 6;
    for (int k = 0; k < kWaves; ++k) {
      const double lambda = granularity * rng.uniform(0.8, 1.2);
      std::array<double, 3> d{rng.normal(), rng.normal(), rng.normal()};
      const double norm = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) + 1e-12;
      const double f = 2.0 * std::numbers::pi / lambda / norm;
      waves.push_back({d[0] * f, d[1] * f, d[2] * f, rng.uniform(0.0, 2.0 * std::numbers::pi)});
    }
  }

  double at(double i, double j, double k) const {
    double s = 0.0;
    for (const auto& w : waves) s += std::cos(w[0] * i + w[1] * j + w[2] * k + w[3]);
    return s / std::sqrt(static_cast<double>(waves.size()));
  }
};

Anatomy make_anatomy(const PhantomSpec& spec, Rng& rng, std::size_t max_lesions) {
  Anatomy a;
  a.shape = {static_cast<std::size_t>(rng.integer(static_cast<long long>(spec.shape_xy[0]),
                                                  static_cast<long long>(spec.shape_xy[1]))),
             0, static_cast<std::size_t>(rng.integer(static_cast<long long>(spec.shape_z[0]),
                                                     static_cast<long long>(spec.shape_z[1])))};
  a.shape.ny = static_cast<std::size_t>(
      rng.integer(static_cast<long long>(spec.shape_xy[0]), static_cast<long long>(spec.shape_xy[1])));
  const double sxy = rng.uniform(spec.spacing_xy[0], spec.spacing_xy[1]);
  a.spacing = {sxy, sxy, rng.uniform(spec.spacing_z[0], spec.spacing_z[1])};

  const double half_x = 0.5 * static_cast<double>(a.shape.nx) * a.spacing[0];
  const double half_y = 0.5 * static_cast<double>(a.shape.ny) * a.spacing[1];
  const double half_z = 0.5 * static_cast<double>(a.shape.nz) * a.spacing[2];
  const double body_a = half_x * rng.uniform(0.70, 0.88);
  const double body_b = half_y * rng.uniform(0.55, 0.75);
  const double fat_inner = rng.uniform(0.76, 0.84);
  const double taper = rng.uniform(0.0, 0.15);  // body narrows toward the ends

  std::vector<Sphere> vessels;
  for (int v = 0; v < 2; ++v) {
    vessels.push_back({(v == 0 ? -0.12 : 0.12) * body_a + rng.uniform(-4.0, 4.0), 0.35 * body_b + rng.uniform(-4.0, 4.0),
                       0.0, rng.uniform(5.0, 8.0)});
  }
  std::vector<Sphere> fluid;
  const auto n_fluid = rng.integer(1, 2);
  for (long long f = 0; f < n_fluid; ++f) {
    fluid.push_back({rng.uniform(-0.45, 0.45) * body_a, rng.uniform(-0.45, 0.1) * body_b,
                     rng.uniform(-0.4, 0.4) * half_z, rng.uniform(10.0, 18.0)});
  }
  std::vector<Sphere> lesions;
  for (std::size_t l = 0; l < max_lesions; ++l) {
    lesions.push_back({rng.uniform(-0.5, 0.5) * body_a, rng.uniform(-0.5, 0.3) * body_b,
                       rng.uniform(-0.5, 0.5) * half_z, rng.uniform(6.0, 11.0)});
  }

  a.tissue.assign(a.shape.size(), Tissue::Air);
  a.lesion.assign(a.shape.size(), 0);
  for (std::size_t k = 0; k < a.shape.nz; ++k) {
    const double z = (static_cast<double>(k) + 0.5) * a.spacing[2] - half_z;
    const double scale = 1.0 - taper * (z / half_z) * (z / half_z);
    for (std::size_t j = 0; j < a.shape.ny; ++j) {
      const double y = (static_cast<double>(j) + 0.5) * a.spacing[1] - half_y;
      for (std::size_t i = 0; i < a.shape.nx; ++i) {
        const double x = (static_cast<double>(i) + 0.5) * a.spacing[0] - half_x;
        const double r = std::sqrt((x / (body_a * scale)) * (x / (body_a * scale)) +
                                   (y / (body_b * scale)) * (y / (body_b * scale)));
        const std::size_t idx = i + a.shape.nx * (j + a.shape.ny * k);
        if (r > 1.0) continue;
        Tissue t = r > fat_inner ? Tissue::Fat : Tissue::Parenchyma;
        if (t == Tissue::Parenchyma) {
          for (const auto& v : vessels)
            if ((x - v.x) * (x - v.x) + (y - v.y) * (y - v.y) <= v.r * v.r) t = Tissue::Vessel;
          for (const auto& f : fluid)
            if (f.contains(x, y, z)) t = Tissue::Fluid;
        }
        a.tissue[idx] = t;
        if (t == Tissue::Parenchyma) {
          for (std::size_t l = 0; l < lesions.size(); ++l)
            if (lesions[l].contains(x, y, z)) {
              a.lesion[idx] = static_cast<std::uint8_t>(l + 1);
              break;
            }
        }
      }
    }
  }
  return a;
}

SeriesVolume render(const Anatomy& a, const ClassSignature& sig, const PhantomSpec& spec, double b_value,
                    bool diffusion, std::size_t lesions_shown, Rng& rng) {
  SeriesVolume v(a.shape, a.spacing);
  for (std::size_t d = 0; d < 3; ++d) v.origin[d] = -0.5 * static_cast<double>(a.shape[d] - 1) * a.spacing[d];
  const Texture tex(rng, sig.texture_granularity);
  const double sigma = sig.noise_sigma * sig.background_mean;
  for (std::size_t k = 0; k < a.shape.nz; ++k) {
    for (std::size_t j = 0; j < a.shape.ny; ++j) {
      for (std::size_t i = 0; i < a.shape.nx; ++i) {
        const std::size_t idx = v.index(i, j, k);
        const auto t = static_cast<std::size_t>(a.tissue[idx]);
        const bool in_lesion = a.lesion[idx] != 0 && a.lesion[idx] <= lesions_shown;
        double s = sig.background_mean * sig.tissue[t];
        if (t != static_cast<std::size_t>(Tissue::Air) || sig.tissue[t] > 0.1) {
          s *= std::max(0.0, 1.0 + sig.background_sigma * tex.at(static_cast<double>(i), static_cast<double>(j),
                                                                  static_cast<double>(k)));
        }
        if (in_lesion) s *= sig.lesion_multiplier;
        if (diffusion) {
          const double adc = spec.adc[t] * (in_lesion ? spec.lesion_adc_factor : 1.0);
          s *= std::exp(-b_value * adc * 1e-3);
        }
        const double n1 = rng.normal(0.0, sigma);
        const double n2 = rng.normal(0.0, sigma);
        v.voxels[idx] = std::sqrt((s + n1) * (s + n1) + n2 * n2);
      }
    }
  }
  return v;
}

HeaderFields make_header(const std::string& patient_id, const std::string& study_uid, const std::string& series_uid,
                         const std::string& label, std::optional<double> b_value) {
  HeaderFields h;
  h.patient_id = patient_id;
  h.study_uid = study_uid;
  h.series_uid = series_uid;
  h.body_part_examined = kBodyPart;
  h.procedure_step_description = kProcedure;
  h.scanner_model = kScanner;
  const auto it = header_texts().find(label);
  if (it != header_texts().end()) {
    std::string desc = it->second.description;
    std::string proto = it->second.protocol;
    if (b_value) {
      char suffix[32];
      std::snprintf(suffix, sizeof suffix, " B%.0f", *b_value);
      desc += suffix;
      std::snprintf(suffix, sizeof suffix, "_b%.0f", *b_value);
      proto += suffix;
    }
    h.series_description = desc;
    h.protocol_name = proto;
    h.echo_time_ms = it->second.te;
    h.repetition_time_ms = it->second.tr;
  } else {
    h.series_description = label;
    h.protocol_name = label;
  }
  h.b_value = b_value;
  return h;
}

}  // namespace

// ------------------------------------------------------------------- spec

PhantomSpec PhantomSpec::default_body() {
  PhantomSpec s;
  s.classes = {
      make_signature("VDCE", 600.0, 0.08, 0.6, 10.0, {0.02, 0.35, 1.0, 0.1, 1.4}, 0.02),
      make_signature("T2W", 400.0, 0.10, 1.6, 8.0, {0.02, 1.3, 0.4, 1.5, 0.1}, 0.03),
      make_signature("T2FS", 300.0, 0.10, 1.8, 8.0, {0.02, 0.1, 0.5, 1.5, 0.1}, 0.03),
      make_signature("DWI", 100.0, 0.15, 1.8, 16.0, {0.03, 0.05, 1.2, 0.7, 0.05}, 0.08),
      make_signature("ADC", 1000.0, 0.08, s.lesion_adc_factor, 16.0, s.adc, 0.06),
  };
  // Outside the body an ADC map is fit to noise, so its background is a
  // bright speckle rather than the near-zero air of the source images.
  s.classes[4].tissue[static_cast<std::size_t>(Tissue::Air)] = 0.8;
  s.classes[3].b_values = {50.0, 400.0, 800.0};
  return s;
}

PhantomSpec PhantomSpec::hard_body() {
  PhantomSpec s = default_body();
  s.hard = true;
  return s;
}

const ClassSignature& PhantomSpec::signature(const std::string& label) const {
  for (const auto& c : classes)
    if (c.label == label) return c;
  throw Error(ErrorKind::InvalidSpec, "no signature for class '" + label + "'");
}

void PhantomSpec::validate() const {
  auto bad = [](const std::string& m) { throw Error(ErrorKind::InvalidSpec, "phantom: " + m); };
  const LabelSet* found = nullptr;
  try {
    found = &LabelSet::by_id(label_set);
  } catch (const Error&) {
    bad("unknown label_set '" + label_set + "'");
  }
  const LabelSet& set = *found;
  if (classes.size() != set.size()) bad("need exactly one signature per class of '" + label_set + "'");
  for (const auto& name : set.classes()) (void)signature(name);
  for (const auto& c : classes) {
    if (!(c.background_mean > 0.0)) bad(c.label + ".background_mean must be > 0");
    if (!(c.background_sigma >= 0.0) || !(c.noise_sigma >= 0.0)) bad(c.label + ": sigmas must be >= 0");
    if (!(c.lesion_multiplier > 0.0)) bad(c.label + ".lesion_multiplier must be > 0");
    if (!(c.texture_granularity > 0.0)) bad(c.label + ".texture_granularity must be > 0");
    if (c.lesion_count[0] < 0 || c.lesion_count[1] < c.lesion_count[0] || c.lesion_count[1] > 64) {
      bad(c.label + ".lesion_count must satisfy 0 <= lo <= hi <= 64");
    }
    for (double t : c.tissue)
      if (!(t >= 0.0)) bad(c.label + ".tissue intensities must be >= 0");
    for (double b : c.b_values)
      if (!(b >= 0.0)) bad(c.label + ".b_values must be >= 0");
  }
  for (const auto& r : {shape_xy, shape_z}) {
    if (r[0] < 8 || r[1] > 512 || r[0] > r[1]) bad("shape ranges must lie within [8, 512]");
  }
  for (const auto& r : {spacing_xy, spacing_z}) {
    if (!(r[0] > 0.0) || r[0] > r[1]) bad("spacing ranges must be positive and ordered");
  }
  for (double a : adc)
    if (!(a >= 0.0)) bad("adc values must be >= 0");
  if (!(lesion_adc_factor > 0.0)) bad("lesion_adc_factor must be > 0");
  if (dwi_count[0] < 1 || dwi_count[1] < dwi_count[0]) bad("dwi_count must satisfy 1 <= lo <= hi");
  for (const auto& c : classes) {
    if (!c.b_values.empty() && static_cast<std::size_t>(dwi_count[1]) > c.b_values.size()) {
      bad("dwi_count upper bound exceeds the number of b-values of " + c.label);
    }
  }
  if (!(conflict_fraction >= 0.0 && conflict_fraction <= 1.0)) bad("conflict_fraction must be in [0, 1]");
}

ordered_json PhantomSpec::to_json() const {
  ordered_json j;
  j["label_set"] = label_set;
  ordered_json cs = ordered_json::array();
  for (const auto& c : classes) {
    ordered_json o;
    o["label"] = c.label;
    o["background_mean"] = c.background_mean;
    o["background_sigma"] = c.background_sigma;
    o["lesion_count"] = c.lesion_count;
    o["lesion_multiplier"] = c.lesion_multiplier;
    o["texture_granularity"] = c.texture_granularity;
    o["b_values"] = c.b_values;
    o["tissue"] = c.tissue;
    o["noise_sigma"] = c.noise_sigma;
    cs.push_back(std::move(o));
  }
  j["classes"] = std::move(cs);
  j["shape_xy"] = shape_xy;
  j["shape_z"] = shape_z;
  j["spacing_xy"] = spacing_xy;
  j["spacing_z"] = spacing_z;
  j["adc"] = adc;
  j["lesion_adc_factor"] = lesion_adc_factor;
  j["dwi_count"] = dwi_count;
  j["hard"] = hard;
  j["hard_b_threshold"] = hard_b_threshold;
  j["conflict_fraction"] = conflict_fraction;
  j["seed"] = seed;
  return j;
}

PhantomSpec PhantomSpec::from_json(const nlohmann::json& j, const std::string& context) {
  reject_unknown_keys(j,
                      {"label_set", "classes", "shape_xy", "shape_z", "spacing_xy", "spacing_z", "adc",
                       "lesion_adc_factor", "dwi_count", "hard", "hard_b_threshold", "conflict_fraction", "seed"},
                      context);
  PhantomSpec s = default_body();
  auto field = [&](const char* key, auto& out) {
    if (j.contains(key)) out = get_field<std::decay_t<decltype(out)>>(j, key, context);
  };
  field("label_set", s.label_set);
  field("shape_xy", s.shape_xy);
  field("shape_z", s.shape_z);
  field("spacing_xy", s.spacing_xy);
  field("spacing_z", s.spacing_z);
  field("adc", s.adc);
  field("lesion_adc_factor", s.lesion_adc_factor);
  field("dwi_count", s.dwi_count);
  field("hard", s.hard);
  field("hard_b_threshold", s.hard_b_threshold);
  field("conflict_fraction", s.conflict_fraction);
  field("seed", s.seed);
  if (j.contains("classes")) {
    if (!j["classes"].is_array()) throw Error(ErrorKind::InvalidSpec, "'" + context + ".classes' must be an array");
    s.classes.clear();
    for (std::size_t i = 0; i < j["classes"].size(); ++i) {
      const auto& o = j["classes"][i];
      const std::string ctx = context + ".classes[" + std::to_string(i) + "]";
      reject_unknown_keys(o,
                          {"label", "background_mean", "background_sigma", "lesion_count", "lesion_multiplier",
                           "texture_granularity", "b_values", "tissue", "noise_sigma"},
                          ctx);
      ClassSignature c;
      c.label = get_field<std::string>(o, "label", ctx);
      auto cf = [&](const char* key, auto& out) {
        if (o.contains(key)) out = get_field<std::decay_t<decltype(out)>>(o, key, ctx);
      };
      cf("background_mean", c.background_mean);
      cf("background_sigma", c.background_sigma);
      cf("lesion_count", c.lesion_count);
      cf("lesion_multiplier", c.lesion_multiplier);
      cf("texture_granularity", c.texture_granularity);
      cf("b_values", c.b_values);
      cf("tissue", c.tissue);
      cf("noise_sigma", c.noise_sigma);
      s.classes.push_back(std::move(c));
    }
  }
  try {
    s.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::InvalidConfig, e.what());
  }
  return s;
}

// ------------------------------------------------------------- generation

std::string phantom_patient_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "P%04zu", index + 1);
  return buf;
}

GeneratedStudy generate_study(const PhantomSpec& spec, const std::string& patient_id, std::size_t study_index) {
  spec.validate();
  const LabelSet& set = LabelSet::by_id(spec.label_set);
  const std::uint64_t study_seed =
      derive_seed(spec.seed, {fnv1a64(patient_id.data(), patient_id.size()), static_cast<std::uint64_t>(study_index)});
  Rng rng(study_seed);

  std::size_t max_lesions = 0;
  for (const auto& c : spec.classes) max_lesions = std::max(max_lesions, static_cast<std::size_t>(c.lesion_count[1]));
  const Anatomy anatomy = make_anatomy(spec, rng, max_lesions);

  GeneratedStudy out;
  out.record.patient_id = patient_id;
  out.record.study_uid = patient_id + ".S" + std::to_string(study_index + 1);

  for (std::size_t ci = 0; ci < set.size(); ++ci) {
    const ClassSignature& sig = spec.signature(set.name(ci));
    std::vector<std::optional<double>> b_list{std::nullopt};
    if (!sig.b_values.empty()) {
      std::vector<double> pool = sig.b_values;
      rng.shuffle(pool);
      pool.resize(static_cast<std::size_t>(rng.integer(spec.dwi_count[0], spec.dwi_count[1])));
      std::sort(pool.begin(), pool.end());
      b_list.assign(pool.begin(), pool.end());
    }
    for (std::size_t bi = 0; bi < b_list.size(); ++bi) {
      Rng series_rng(derive_seed(study_seed, {ci, bi}));
      const ClassSignature* use = &sig;
      bool diffusion = b_list[bi].has_value();
      if (spec.hard && diffusion && *b_list[bi] <= spec.hard_b_threshold) {
        use = &spec.signature("T2FS");
        diffusion = false;
      }
      const auto shown = static_cast<std::size_t>(series_rng.integer(use->lesion_count[0], use->lesion_count[1]));
      GeneratedSeries gs;
      gs.volume = render(anatomy, *use, spec, b_list[bi].value_or(0.0), diffusion, shown, series_rng);
      std::string uid = out.record.study_uid + "." + set.name(ci);
      if (b_list[bi]) {
        char suffix[32];
        std::snprintf(suffix, sizeof suffix, "_b%.0f", *b_list[bi]);
        uid += suffix;
      }
      gs.entry.series_uid = uid;
      gs.entry.header = make_header(patient_id, out.record.study_uid, uid, set.name(ci), b_list[bi]);
      gs.entry.label = SequenceLabel::from_index(set, ci);
      out.record.series.push_back(gs.entry);
      out.series.push_back(std::move(gs));
    }
  }
  return out;
}

DatasetSummary generate_dataset(const PhantomSpec& spec, std::size_t n_patients, std::size_t studies_per_patient,
                                const fs::path& root, unsigned jobs) {
  spec.validate();
  if (n_patients < 3) {
    throw Error(ErrorKind::InvalidSpec, "need at least 3 patients for a train/val/test split, got " +
                                            std::to_string(n_patients));
  }
  if (studies_per_patient < 1) throw Error(ErrorKind::InvalidSpec, "studies_per_patient must be >= 1");
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw Error(ErrorKind::Unwritable, "cannot create " + root.string() + ": " + ec.message());

  const std::size_t n_studies = n_patients * studies_per_patient;
  const auto n_conflicts =
      static_cast<std::size_t>(std::llround(spec.conflict_fraction * static_cast<double>(n_studies)));
  std::vector<std::size_t> order(n_studies);
  for (std::size_t i = 0; i < n_studies; ++i) order[i] = i;
  Rng conflict_rng(derive_seed(spec.seed, {0xc0f1u}));
  conflict_rng.shuffle(order);
  std::vector<char> has_conflict(n_studies, 0);
  for (std::size_t i = 0; i < n_conflicts; ++i) has_conflict[order[i]] = 1;

  std::vector<StudyRecord> records(n_studies);
  parallel_for(n_studies, jobs, [&](std::size_t s) {
    const std::string pid = phantom_patient_id(s / studies_per_patient);
    GeneratedStudy g = generate_study(spec, pid, s % studies_per_patient);
    if (has_conflict[s]) {
      Rng pick(derive_seed(spec.seed, {0xc0f2u, s}));
      auto& entry = g.series[pick.index(g.series.size())].entry;
      entry.header.body_part_examined = kConflictBodyPart;
    }
    const fs::path dir = root / pid / g.record.study_uid;
    for (std::size_t k = 0; k < g.series.size(); ++k) {
      auto& gs = g.series[k];
      const fs::path file = dir / (gs.entry.series_uid + ".nii.gz");
      fs::create_directories(dir);
      nifti::write(file, gs.volume, nifti::StorageType::Float32);
      write_text_file(dir / (gs.entry.series_uid + ".json"), to_json(gs.entry.header).dump(2) + "\n");
      gs.entry.locator = VolumeLocator{VolumeLocator::Kind::Nifti, {file.string()}};
      g.record.series[k] = gs.entry;
    }
    std::sort(g.record.series.begin(), g.record.series.end(),
              [](const SeriesEntry& a, const SeriesEntry& b) { return a.series_uid < b.series_uid; });
    records[s] = std::move(g.record);
  });

  DatasetSummary summary;
  std::string labels;
  for (std::size_t s = 0; s < n_studies; ++s) {
    if (has_conflict[s]) summary.conflict_studies.push_back(records[s].study_uid);
    for (const auto& e : records[s].series) {
      labels += ordered_json{{"series_uid", e.series_uid}, {"label", e.label->value}}.dump() + "\n";
    }
  }
  std::sort(summary.conflict_studies.begin(), summary.conflict_studies.end());
  summary.manifest = std::move(records);
  write_text_file(root / "labels.jsonl", labels);
  write_manifest(root / "manifest.jsonl", summary.manifest);

  ordered_json card;
  card["generator"] = "mpseq phantom";
  card["spec"] = spec.to_json();
  card["n_patients"] = n_patients;
  card["studies_per_patient"] = studies_per_patient;
  card["n_series"] = [&] {
    std::size_t n = 0;
    for (const auto& r : summary.manifest) n += r.series.size();
    return n;
  }();
  card["conflict_studies"] = summary.conflict_studies;
  card["random"] = {
      {"engine", "mt19937_64"},
      {"uniform", "(next >> 11) * 2^-53"},
      {"normal", "Box-Muller, cosine branch"},
      {"study_seed", "derive_seed(seed, [fnv1a64(patient_id), study_index])"},
      {"series_seed", "derive_seed(study_seed, [class_index, b_index])"},
  };
  write_text_file(root / "dataset_card.json", card.dump(2) + "\n");
  return summary;
}

// ------------------------------------------------------ centroid baseline

std::array<double, 2> intensity_features(const SeriesVolume& v) {
  double sum = 0.0, sq = 0.0;
  for (double x : v.voxels) sum += x;
  const double n = static_cast<double>(v.voxels.size());
  const double mean = sum / n;
  for (double x : v.voxels) sq += (x - mean) * (x - mean);
  return {std::log1p(std::max(0.0, mean)), std::log1p(std::sqrt(sq / n))};
}

double nearest_centroid_accuracy(const std::vector<LabeledFeatures>& train, const std::vector<LabeledFeatures>& test) {
  if (train.empty() || test.empty()) throw Error(ErrorKind::EmptyFold, "centroid baseline needs train and test data");
  std::array<double, 2> mu{0, 0}, sd{0, 0};
  for (const auto& t : train)
    for (std::size_t d = 0; d < 2; ++d) mu[d] += t.features[d] / static_cast<double>(train.size());
  for (const auto& t : train)
    for (std::size_t d = 0; d < 2; ++d) sd[d] += (t.features[d] - mu[d]) * (t.features[d] - mu[d]);
  for (std::size_t d = 0; d < 2; ++d) sd[d] = std::sqrt(sd[d] / static_cast<double>(train.size())) + 1e-12;
  auto z = [&](const std::array<double, 2>& f) {
    return std::array<double, 2>{(f[0] - mu[0]) / sd[0], (f[1] - mu[1]) / sd[1]};
  };
  std::map<std::size_t, std::pair<std::array<double, 2>, std::size_t>> centroids;
  for (const auto& t : train) {
    auto& [c, n] = centroids[t.label];
    const auto f = z(t.features);
    c[0] += f[0];
    c[1] += f[1];
    ++n;
  }
  for (auto& [label, cn] : centroids) {
    cn.first[0] /= static_cast<double>(cn.second);
    cn.first[1] /= static_cast<double>(cn.second);
  }
  std::size_t hit = 0;
  for (const auto& t : test) {
    const auto f = z(t.features);
    double best = INFINITY;
    std::size_t pred = 0;
    for (const auto& [label, cn] : centroids) {
      const double d = (f[0] - cn.first[0]) * (f[0] - cn.first[0]) + (f[1] - cn.first[1]) * (f[1] - cn.first[1]);
      if (d < best) {
        best = d;
        pred = label;
      }
    }
    hit += pred == t.label ? 1 : 0;
  }
  return static_cast<double>(hit) / static_cast<double>(test.size());
}

}  // namespace mpseq
