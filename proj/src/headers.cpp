#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>

#include "mpseq/error.hpp"
#include "mpseq/ingestion.hpp"

namespace mpseq {

namespace {

std::optional<std::string> clean_text(const std::optional<std::string>& s) {
  if (!s) return std::nullopt;
  std::string t = *s;
  const auto not_space = [](unsigned char c) { return !std::isspace(c) && c != '\0'; };
  t.erase(t.begin(), std::find_if(t.begin(), t.end(), not_space));
  t.erase(std::find_if(t.rbegin(), t.rend(), not_space).base(), t.end());
  if (t.empty()) return std::nullopt;
  return t;
}

std::string upper(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return s;
}

std::optional<double> positive(std::optional<double> v) {
  if (v && std::isfinite(*v) && *v > 0.0) return v;
  return std::nullopt;
}

template <typename T>
void put_optional(ordered_json& j, const char* key, const std::optional<T>& v) {
  if (v) {
    j[key] = *v;
  } else {
    j[key] = nullptr;
  }
}

template <typename T>
std::optional<T> get_optional(const nlohmann::json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<T>();
}

}  // namespace

void HeaderFields::validate() const {
  if (patient_id.empty()) throw Error(ErrorKind::MissingIdentifier, "patient_id is empty");
  if (study_uid.empty()) throw Error(ErrorKind::MissingIdentifier, "study_uid is empty");
  if (series_uid.empty()) throw Error(ErrorKind::MissingIdentifier, "series_uid is empty");
  if (b_value && (!std::isfinite(*b_value) || *b_value < 0.0)) {
    throw Error(ErrorKind::InvalidConfig, "b_value must be finite and >= 0");
  }
}

ordered_json to_json(const HeaderFields& h) {
  ordered_json j;
  j["patient_id"] = h.patient_id;
  j["study_uid"] = h.study_uid;
  j["series_uid"] = h.series_uid;
  put_optional(j, "body_part_examined", h.body_part_examined);
  put_optional(j, "procedure_step_description", h.procedure_step_description);
  put_optional(j, "series_description", h.series_description);
  put_optional(j, "protocol_name", h.protocol_name);
  put_optional(j, "scanner_model", h.scanner_model);
  put_optional(j, "b_value", h.b_value);
  put_optional(j, "echo_time_ms", h.echo_time_ms);
  put_optional(j, "repetition_time_ms", h.repetition_time_ms);
  return j;
}

HeaderFields header_fields_from_json(const nlohmann::json& j) {
  HeaderFields h;
  h.patient_id = j.value("patient_id", "");
  h.study_uid = j.value("study_uid", "");
  h.series_uid = j.value("series_uid", "");
  h.body_part_examined = get_optional<std::string>(j, "body_part_examined");
  h.procedure_step_description = get_optional<std::string>(j, "procedure_step_description");
  h.series_description = get_optional<std::string>(j, "series_description");
  h.protocol_name = get_optional<std::string>(j, "protocol_name");
  h.scanner_model = get_optional<std::string>(j, "scanner_model");
  h.b_value = get_optional<double>(j, "b_value");
  h.echo_time_ms = get_optional<double>(j, "echo_time_ms");
  h.repetition_time_ms = get_optional<double>(j, "repetition_time_ms");
  h.validate();
  return h;
}

const std::vector<BValueSource>& default_b_value_sources() {
  static const std::vector<BValueSource> sources = {
      {dicom::tags::DiffusionBValue, "standard", 0.0},
      {dicom::tags::SiemensBValue, "siemens", 0.0},
      {dicom::tags::GEBValue, "ge", 1e9},
      {dicom::tags::PhilipsBValue, "philips", 0.0},
  };
  return sources;
}

HeaderFields extract_headers(const dicom::Dataset& ds, const std::vector<BValueSource>& b_sources) {
  namespace t = dicom::tags;
  HeaderFields h;
  h.patient_id = clean_text(ds.text(t::PatientID)).value_or("");
  h.study_uid = clean_text(ds.text(t::StudyInstanceUID)).value_or("");
  h.series_uid = clean_text(ds.text(t::SeriesInstanceUID)).value_or("");
  if (h.patient_id.empty()) throw Error(ErrorKind::MissingIdentifier, "record lacks PatientID");
  if (h.study_uid.empty()) throw Error(ErrorKind::MissingIdentifier, "record lacks StudyInstanceUID");
  if (h.series_uid.empty()) throw Error(ErrorKind::MissingIdentifier, "record lacks SeriesInstanceUID");

  if (auto bp = clean_text(ds.text(t::BodyPartExamined))) h.body_part_examined = upper(*bp);
  h.procedure_step_description = clean_text(ds.text(t::PerformedProcedureStepDescription));
  h.series_description = clean_text(ds.text(t::SeriesDescription));
  h.protocol_name = clean_text(ds.text(t::ProtocolName));
  h.scanner_model = clean_text(ds.text(t::ManufacturerModelName));
  h.echo_time_ms = positive(ds.number(t::EchoTime));
  h.repetition_time_ms = positive(ds.number(t::RepetitionTime));

  for (const auto& src : b_sources) {
    auto b = ds.number(src.tag);
    if (!b || !std::isfinite(*b)) continue;
    double value = *b;
    if (src.modulo > 0.0 && value >= src.modulo) value = std::fmod(value, src.modulo);
    if (value < 0.0) continue;
    h.b_value = value;
    break;
  }
  return h;
}

SliceRecord read_slice(const std::filesystem::path& path, bool with_pixels) {
  namespace t = dicom::tags;
  SliceRecord rec;
  rec.source = path.string();
  rec.metadata = dicom::read_file(path);
  rec.rows = static_cast<std::size_t>(rec.metadata.number(t::Rows).value_or(0));
  rec.columns = static_cast<std::size_t>(rec.metadata.number(t::Columns).value_or(0));
  const dicom::Element* pixel = rec.metadata.find(t::PixelData);
  if (!pixel || rec.rows == 0 || rec.columns == 0) {
    throw Error(ErrorKind::UnreadableFile, rec.source + " has no pixel data");
  }
  if (rec.metadata.number(t::SamplesPerPixel).value_or(1) != 1) {
    throw Error(ErrorKind::UnreadableFile, rec.source + " is not single-channel");
  }
  if (!with_pixels) {
    rec.metadata.erase(t::PixelData);
    return rec;
  }
  const auto bits = static_cast<int>(rec.metadata.number(t::BitsAllocated).value_or(16));
  const bool is_signed = rec.metadata.number(t::PixelRepresentation).value_or(0) == 1;
  if (bits != 8 && bits != 16 && bits != 32) {
    throw Error(ErrorKind::UnreadableFile, rec.source + ": unsupported BitsAllocated " + std::to_string(bits));
  }
  const std::size_t n = rec.rows * rec.columns;
  const std::size_t bytes = static_cast<std::size_t>(bits / 8);
  if (pixel->value.size() < n * bytes) throw Error(ErrorKind::UnreadableFile, rec.source + ": short pixel data");
  rec.pixels.resize(n);
  const std::uint8_t* p = pixel->value.data();
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* q = p + i * bytes;
    if (bits == 8) {
      rec.pixels[i] = is_signed ? static_cast<double>(static_cast<std::int8_t>(q[0])) : q[0];
    } else if (bits == 16) {
      std::uint16_t u;
      std::memcpy(&u, q, 2);
      rec.pixels[i] = is_signed ? static_cast<double>(static_cast<std::int16_t>(u)) : u;
    } else {
      std::uint32_t u;
      std::memcpy(&u, q, 4);
      rec.pixels[i] = is_signed ? static_cast<double>(static_cast<std::int32_t>(u)) : u;
    }
  }
  rec.metadata.erase(t::PixelData);
  return rec;
}

}  // namespace mpseq
