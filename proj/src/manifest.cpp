#include <algorithm>
#include <fstream>
#include <map>
#include <mutex>
#include <tuple>

#include "mpseq/error.hpp"
#include "mpseq/ingestion.hpp"
#include "mpseq/nifti.hpp"
#include "mpseq/parallel.hpp"

namespace fs = std::filesystem;

namespace mpseq {

namespace {

bool has_suffix(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

bool is_nifti_name(const std::string& name) { return has_suffix(name, ".nii") || has_suffix(name, ".nii.gz"); }

std::string nifti_stem(const std::string& name) {
  if (has_suffix(name, ".nii.gz")) return name.substr(0, name.size() - 7);
  if (has_suffix(name, ".nii")) return name.substr(0, name.size() - 4);
  return name;
}

bool is_ignored_name(const std::string& name) {
  static const char* kSkip[] = {".json", ".jsonl", ".md", ".txt", ".csv", ".partial", ".svg", ".ckpt"};
  return std::any_of(std::begin(kSkip), std::end(kSkip), [&](const char* s) { return has_suffix(name, s); });
}

const char* kind_name(VolumeLocator::Kind k) { return k == VolumeLocator::Kind::Nifti ? "nifti" : "dicom"; }

struct PendingSeries {
  SeriesEntry entry;
  std::optional<RejectedSeries> rejected;
};

// Header for a NIfTI volume: the sidecar when present, else identifiers
// derived from the directory layout (<patient>/<file>).
HeaderFields nifti_header(const fs::path& file) {
  const std::string stem = nifti_stem(file.filename().string());
  const fs::path sidecar = file.parent_path() / (stem + ".json");
  if (fs::exists(sidecar)) {
    std::ifstream in(sidecar);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::UnreadableFile, "header sidecar " + sidecar.string() + ": " + e.what());
    }
    return header_fields_from_json(j);
  }
  HeaderFields h;
  const std::string parent = file.parent_path().filename().string();
  h.patient_id = parent;
  h.study_uid = parent;
  h.series_uid = stem;
  h.series_description = stem;
  h.validate();
  return h;
}

}  // namespace

std::size_t ManifestBuild::flagged() const {
  return static_cast<std::size_t>(
      std::count_if(studies.begin(), studies.end(), [](const StudyRecord& s) { return !s.complete(); }));
}

std::size_t ManifestBuild::rejected() const {
  std::size_t n = unassigned.size();
  for (const auto& s : studies) n += s.rejected.size();
  return n;
}

ordered_json to_json(const StudyRecord& study) {
  ordered_json j;
  j["patient_id"] = study.patient_id;
  j["study_uid"] = study.study_uid;
  std::string label_set;
  for (const auto& s : study.series) {
    if (s.label) label_set = s.label->label_set_id;
  }
  j["label_set"] = label_set.empty() ? ordered_json(nullptr) : ordered_json(label_set);
  j["complete"] = study.complete();
  j["missing_classes"] = study.missing_classes;
  j["series"] = ordered_json::array();
  for (const auto& s : study.series) {
    ordered_json o;
    o["series_uid"] = s.series_uid;
    o["label"] = s.label ? ordered_json(s.label->value) : ordered_json(nullptr);
    o["locator"] = {{"kind", kind_name(s.locator.kind)}, {"paths", s.locator.paths}};
    o["header"] = to_json(s.header);
    j["series"].push_back(std::move(o));
  }
  j["rejected"] = ordered_json::array();
  for (const auto& r : study.rejected) {
    j["rejected"].push_back({{"series_uid", r.series_uid}, {"source", r.source}, {"reason", r.reason}});
  }
  return j;
}

StudyRecord study_record_from_json(const nlohmann::json& j) {
  try {
    StudyRecord rec;
    rec.patient_id = j.at("patient_id").get<std::string>();
    rec.study_uid = j.at("study_uid").get<std::string>();
    rec.missing_classes = j.at("missing_classes").get<std::vector<std::string>>();
    const LabelSet* set = nullptr;
    if (j.contains("label_set") && !j.at("label_set").is_null()) {
      set = &LabelSet::by_id(j.at("label_set").get<std::string>());
    }
    for (const auto& o : j.at("series")) {
      SeriesEntry e;
      e.series_uid = o.at("series_uid").get<std::string>();
      if (!o.at("label").is_null()) {
        if (!set) throw Error(ErrorKind::InvalidConfig, "labelled series without label_set");
        e.label = SequenceLabel::from_name(*set, o.at("label").get<std::string>());
      }
      const auto& loc = o.at("locator");
      e.locator.kind = loc.at("kind").get<std::string>() == "dicom" ? VolumeLocator::Kind::Dicom
                                                                    : VolumeLocator::Kind::Nifti;
      e.locator.paths = loc.at("paths").get<std::vector<std::string>>();
      e.header = header_fields_from_json(o.at("header"));
      rec.series.push_back(std::move(e));
    }
    if (j.contains("rejected")) {
      for (const auto& r : j.at("rejected")) {
        rec.rejected.push_back({r.at("series_uid").get<std::string>(), r.at("source").get<std::string>(),
                                r.at("reason").get<std::string>()});
      }
    }
    return rec;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("malformed manifest record: ") + e.what());
  }
}

void write_manifest(const fs::path& path, const std::vector<StudyRecord>& studies) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".partial";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error(ErrorKind::Unwritable, "cannot write " + path.string());
    for (const auto& s : studies) out << to_json(s).dump() << '\n';
    if (!out) throw Error(ErrorKind::Unwritable, "short write to " + path.string());
  }
  fs::rename(tmp, path);
}

std::vector<StudyRecord> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::UnreadableFile, "cannot read manifest " + path.string());
  std::vector<StudyRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(study_record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::InvalidConfig, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::map<std::string, std::string> read_label_sidecar(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::UnreadableFile, "cannot read label sidecar " + path.string());
  std::map<std::string, std::string> labels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      labels[j.at("series_uid").get<std::string>()] = j.at("label").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::InvalidConfig, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return labels;
}

SeriesVolume load_volume_file(const fs::path& path) {
  auto v = nifti::read(path);
  v.validate();
  return canonicalize_orientation(v);
}

SeriesVolume load_series(const VolumeLocator& locator) {
  if (locator.paths.empty()) throw Error(ErrorKind::UnreadableFile, "empty volume locator");
  if (locator.kind == VolumeLocator::Kind::Nifti) return load_volume_file(locator.paths.front());
  std::vector<SliceRecord> slices;
  slices.reserve(locator.paths.size());
  for (const auto& p : locator.paths) slices.push_back(read_slice(p));
  auto assembled = assemble_series(std::move(slices));
  assembled.volume.validate();
  return canonicalize_orientation(assembled.volume);
}

ManifestBuild build_manifest(const fs::path& root, const LabelSource& labels, const LabelSet& label_set,
                             unsigned jobs) {
  if (!fs::is_directory(root)) throw Error(ErrorKind::UnreadableFile, "data root " + root.string() + " is not a directory");

  std::map<std::string, std::string> sidecar;
  if (labels.mode == LabelSource::Mode::Sidecar) {
    sidecar = read_label_sidecar(labels.sidecar.value_or(root / "labels.jsonl"));
  } else if (labels.rules.label_set_id != label_set.id()) {
    throw Error(ErrorKind::InvalidConfig, "rule table profile '" + labels.rules.label_set_id +
                                              "' does not match label set '" + label_set.id() + "'");
  }

  std::vector<fs::path> nifti_files;
  std::vector<fs::path> dicom_files;
  std::vector<fs::path> all;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) all.push_back(e.path());
  }
  std::sort(all.begin(), all.end());
  for (const auto& p : all) {
    const std::string name = p.filename().string();
    if (is_nifti_name(name)) {
      nifti_files.push_back(p);
    } else if (!is_ignored_name(name) && (has_suffix(name, ".dcm") || dicom::is_part10_file(p))) {
      dicom_files.push_back(p);
    }
  }

  std::vector<RejectedSeries> unassigned;
  std::vector<PendingSeries> pending;

  // NIfTI: one file per series.
  {
    std::vector<PendingSeries> out(nifti_files.size());
    std::vector<std::optional<RejectedSeries>> orphan(nifti_files.size());
    parallel_for(nifti_files.size(), jobs, [&](std::size_t i) {
      const auto& file = nifti_files[i];
      HeaderFields h;
      try {
        h = nifti_header(file);
      } catch (const Error& e) {
        orphan[i] = RejectedSeries{"", file.generic_string(), e.what()};
        return;
      }
      out[i].entry.series_uid = h.series_uid;
      out[i].entry.header = h;
      out[i].entry.locator = {VolumeLocator::Kind::Nifti, {file.lexically_normal().generic_string()}};
      try {
        load_volume_file(file);
      } catch (const Error& e) {
        out[i].rejected = RejectedSeries{h.series_uid, file.generic_string(), e.what()};
      }
    });
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (orphan[i]) {
        unassigned.push_back(*orphan[i]);
      } else {
        pending.push_back(std::move(out[i]));
      }
    }
  }

  // DICOM: group slices by series UID, then assemble each series.
  {
    std::vector<std::optional<HeaderFields>> headers(dicom_files.size());
    std::vector<std::optional<RejectedSeries>> orphan(dicom_files.size());
    parallel_for(dicom_files.size(), jobs, [&](std::size_t i) {
      try {
        headers[i] = extract_headers(read_slice(dicom_files[i], /*with_pixels=*/false));
      } catch (const Error& e) {
        orphan[i] = RejectedSeries{"", dicom_files[i].generic_string(), e.what()};
      }
    });
    std::map<std::string, std::vector<std::size_t>> by_series;
    for (std::size_t i = 0; i < dicom_files.size(); ++i) {
      if (orphan[i]) unassigned.push_back(*orphan[i]);
      if (headers[i]) by_series[headers[i]->series_uid].push_back(i);
    }
    std::vector<std::pair<std::string, std::vector<std::size_t>>> groups(by_series.begin(), by_series.end());
    std::vector<PendingSeries> out(groups.size());
    parallel_for(groups.size(), jobs, [&](std::size_t g) {
      const auto& [uid, members] = groups[g];
      PendingSeries& ps = out[g];
      ps.entry.series_uid = uid;
      ps.entry.header = *headers[members.front()];
      ps.entry.locator.kind = VolumeLocator::Kind::Dicom;
      for (auto i : members) ps.entry.locator.paths.push_back(dicom_files[i].lexically_normal().generic_string());
      try {
        std::vector<SliceRecord> slices;
        for (auto i : members) slices.push_back(read_slice(dicom_files[i]));
        auto assembled = assemble_series(std::move(slices));
        ps.entry.header = assembled.header;
      } catch (const Error& e) {
        ps.rejected = RejectedSeries{uid, dicom_files[members.front()].parent_path().generic_string(), e.what()};
      }
    });
    for (auto& ps : out) pending.push_back(std::move(ps));
  }

  std::map<std::pair<std::string, std::string>, StudyRecord> studies;
  for (auto& ps : pending) {
    auto& rec = studies[{ps.entry.header.patient_id, ps.entry.header.study_uid}];
    rec.patient_id = ps.entry.header.patient_id;
    rec.study_uid = ps.entry.header.study_uid;
    if (ps.rejected) {
      rec.rejected.push_back(*ps.rejected);
      continue;
    }
    if (labels.mode == LabelSource::Mode::Sidecar) {
      const auto it = sidecar.find(ps.entry.series_uid);
      if (it != sidecar.end()) ps.entry.label = SequenceLabel::from_name(label_set, it->second);
    } else {
      ps.entry.label = infer_label_from_headers(ps.entry.header, labels.rules);
    }
    rec.series.push_back(std::move(ps.entry));
  }

  ManifestBuild result;
  result.unassigned = std::move(unassigned);
  for (auto& [key, rec] : studies) {
    std::sort(rec.series.begin(), rec.series.end(),
              [](const SeriesEntry& a, const SeriesEntry& b) { return a.series_uid < b.series_uid; });
    std::sort(rec.rejected.begin(), rec.rejected.end(), [](const RejectedSeries& a, const RejectedSeries& b) {
      return std::tie(a.series_uid, a.source) < std::tie(b.series_uid, b.source);
    });
    std::vector<bool> present(label_set.size(), false);
    for (const auto& s : rec.series) {
      if (s.label) present[s.label->class_index] = true;
    }
    for (std::size_t c = 0; c < label_set.size(); ++c) {
      if (!present[c]) rec.missing_classes.push_back(label_set.name(c));
    }
    result.studies.push_back(std::move(rec));
  }
  if (result.studies.empty()) throw Error(ErrorKind::EmptyDataset, "no studies found under " + root.string());
  return result;
}

}  // namespace mpseq
