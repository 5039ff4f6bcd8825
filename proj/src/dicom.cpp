#include "mpseq/dicom.hpp"

#include <algorithm>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "mpseq/error.hpp"

namespace mpseq::dicom {

namespace {

constexpr Tag kItem = make_tag(0xFFFE, 0xE000);
constexpr Tag kItemDelimiter = make_tag(0xFFFE, 0xE00D);
constexpr Tag kSequenceDelimiter = make_tag(0xFFFE, 0xE0DD);
constexpr std::uint32_t kUndefinedLength = 0xFFFFFFFFu;

bool long_form_vr(const std::string& vr) {
  static const char* kLong[] = {"OB", "OD", "OF", "OL", "OV", "OW", "SQ", "SV", "UC", "UN", "UR", "UT", "UV"};
  return std::any_of(std::begin(kLong), std::end(kLong), [&](const char* v) { return vr == v; });
}

bool text_vr(const std::string& vr) {
  static const char* kText[] = {"AE", "AS", "CS", "DA", "DS", "DT", "IS", "LO", "LT", "PN",
                                "SH", "ST", "TM", "UC", "UI", "UR", "UT"};
  return std::any_of(std::begin(kText), std::end(kText), [&](const char* v) { return vr == v; });
}

// VRs for tags we interpret when reading implicit-VR files.
std::string implicit_vr(Tag t) {
  switch (t) {
    case tags::Rows: case tags::Columns: case tags::BitsAllocated:
    case tags::PixelRepresentation: case tags::SamplesPerPixel:
      return "US";
    case tags::DiffusionBValue: return "FD";
    case tags::PhilipsBValue: return "FL";
    case tags::PixelData: return "OW";
    case tags::SiemensBValue: case tags::GEBValue: case tags::InstanceNumber: return "IS";
    case tags::ImagePositionPatient: case tags::ImageOrientationPatient: case tags::PixelSpacing:
    case tags::RescaleIntercept: case tags::RescaleSlope: case tags::SliceThickness:
    case tags::EchoTime: case tags::RepetitionTime:
      return "DS";
    case tags::TransferSyntaxUID: case tags::SOPInstanceUID: case tags::StudyInstanceUID:
    case tags::SeriesInstanceUID:
      return "UI";
    case tags::PatientID: case tags::ManufacturerModelName: case tags::SeriesDescription:
    case tags::ProtocolName: case tags::PerformedProcedureStepDescription:
      return "LO";
    case tags::BodyPartExamined: case tags::Modality: return "CS";
    default: return "UN";
  }
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  bool done() const { return pos_ >= bytes_.size(); }
  std::size_t pos() const { return pos_; }
  void seek(std::size_t p) { pos_ = p; }

  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw Error(ErrorKind::UnreadableFile, "truncated DICOM stream");
  }
  std::uint16_t u16() {
    need(2);
    const std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    const std::uint32_t lo = u16();
    const std::uint32_t hi = u16();
    return lo | (hi << 16);
  }
  std::string chars(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::vector<std::uint8_t> take(std::size_t n) {
    need(n);
    std::vector<std::uint8_t> v(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return v;
  }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

struct Header {
  Tag tag;
  std::string vr;
  std::uint32_t length;
};

Header read_header(Reader& r, bool explicit_vr) {
  const std::uint16_t g = r.u16();
  const std::uint16_t e = r.u16();
  const Tag t = make_tag(g, e);
  if (g == 0xFFFE) return {t, "", r.u32()};  // item/delimiters never carry a VR
  if (!explicit_vr) return {t, implicit_vr(t), r.u32()};
  std::string vr = r.chars(2);
  if (long_form_vr(vr)) {
    r.skip(2);
    return {t, vr, r.u32()};
  }
  return {t, vr, r.u16()};
}

void skip_undefined(Reader& r, bool explicit_vr, Tag terminator);

// Skips a sequence (or encapsulated pixel data) value whose header was already read.
void skip_sequence(Reader& r, bool explicit_vr, std::uint32_t length) {
  if (length != kUndefinedLength) {
    r.skip(length);
    return;
  }
  for (;;) {
    const Header h = read_header(r, explicit_vr);
    if (h.tag == kSequenceDelimiter) return;
    if (h.tag != kItem) throw Error(ErrorKind::UnreadableFile, "malformed sequence item");
    if (h.length == kUndefinedLength) {
      skip_undefined(r, explicit_vr, kItemDelimiter);
    } else {
      r.skip(h.length);
    }
  }
}

void skip_undefined(Reader& r, bool explicit_vr, Tag terminator) {
  for (;;) {
    const Header h = read_header(r, explicit_vr);
    if (h.tag == terminator) return;
    if (h.length == kUndefinedLength || h.vr == "SQ") {
      skip_sequence(r, explicit_vr, h.length);
    } else {
      r.skip(h.length);
    }
  }
}

void read_elements(Reader& r, bool explicit_vr, Dataset& ds, bool meta_only) {
  while (!r.done()) {
    const std::size_t start = r.pos();
    const Header h = read_header(r, explicit_vr);
    if (meta_only && group_of(h.tag) != 0x0002) {
      r.seek(start);
      return;
    }
    if (h.vr == "SQ" || (h.length == kUndefinedLength)) {
      if (h.tag == tags::PixelData) {
        throw Error(ErrorKind::UnreadableFile, "encapsulated (compressed) pixel data is not supported");
      }
      skip_sequence(r, explicit_vr, h.length);
      continue;
    }
    ds.set(Element{h.tag, h.vr, r.take(h.length)});
  }
}

std::string trim(std::string s) {
  const auto is_pad = [](unsigned char c) { return c == ' ' || c == '\0' || c == '\t' || c == '\r' || c == '\n'; };
  while (!s.empty() && is_pad(static_cast<unsigned char>(s.back()))) s.pop_back();
  std::size_t b = 0;
  while (b < s.size() && is_pad(static_cast<unsigned char>(s[b]))) ++b;
  return s.substr(b);
}

template <typename T>
T load_le(const std::uint8_t* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

std::vector<double> binary_numbers(const Element& e) {
  std::vector<double> out;
  const auto* p = e.value.data();
  const std::size_t n = e.value.size();
  auto unpack = [&](auto tag_type) {
    using T = decltype(tag_type);
    for (std::size_t i = 0; i + sizeof(T) <= n; i += sizeof(T)) out.push_back(static_cast<double>(load_le<T>(p + i)));
  };
  if (e.vr == "US") unpack(std::uint16_t{});
  else if (e.vr == "SS") unpack(std::int16_t{});
  else if (e.vr == "UL") unpack(std::uint32_t{});
  else if (e.vr == "SL") unpack(std::int32_t{});
  else if (e.vr == "FL") unpack(float{});
  else if (e.vr == "FD") unpack(double{});
  return out;
}

bool binary_numeric_vr(const std::string& vr) {
  return vr == "US" || vr == "SS" || vr == "UL" || vr == "SL" || vr == "FL" || vr == "FD";
}

std::vector<double> parse_decimal_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, '\\')) {
    item = trim(item);
    if (item.empty()) continue;
    double v = 0.0;
    const auto* first = item.data();
    const auto* last = item.data() + item.size();
    if (*first == '+') ++first;
    const auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc{} || res.ptr != last) return {};
    out.push_back(v);
  }
  return out;
}

}  // namespace

const Element* Dataset::find(Tag t) const {
  const auto it = elements_.find(t);
  return it == elements_.end() ? nullptr : &it->second;
}

std::optional<std::string> Dataset::text(Tag t) const {
  const Element* e = find(t);
  if (!e) return std::nullopt;
  if (binary_numeric_vr(e->vr)) {
    std::string out;
    for (double v : binary_numbers(*e)) {
      if (!out.empty()) out += '\\';
      std::ostringstream os;
      os << v;
      out += os.str();
    }
    return out;
  }
  return trim(std::string(e->value.begin(), e->value.end()));
}

std::vector<double> Dataset::numbers(Tag t) const {
  const Element* e = find(t);
  if (!e) return {};
  if (binary_numeric_vr(e->vr)) return binary_numbers(*e);
  return parse_decimal_list(std::string(e->value.begin(), e->value.end()));
}

std::optional<double> Dataset::number(Tag t, std::size_t index) const {
  const auto values = numbers(t);
  if (index >= values.size()) return std::nullopt;
  return values[index];
}

void Dataset::set(Element e) { elements_[e.tag] = std::move(e); }

void Dataset::set_text(Tag t, const std::string& vr, const std::string& value) {
  set(Element{t, vr, std::vector<std::uint8_t>(value.begin(), value.end())});
}

void Dataset::set_u16(Tag t, std::uint16_t value) {
  set(Element{t, "US", {static_cast<std::uint8_t>(value & 0xFF), static_cast<std::uint8_t>(value >> 8)}});
}

void Dataset::set_f64(Tag t, double value) {
  std::vector<std::uint8_t> bytes(sizeof(double));
  std::memcpy(bytes.data(), &value, sizeof(double));
  set(Element{t, "FD", std::move(bytes)});
}

void Dataset::set_bytes(Tag t, const std::string& vr, std::vector<std::uint8_t> bytes) {
  set(Element{t, vr, std::move(bytes)});
}

bool is_part10_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return false;
  char magic[4] = {};
  in.seekg(128);
  in.read(magic, 4);
  return in.gcount() == 4 && std::memcmp(magic, "DICM", 4) == 0;
}

Dataset parse(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  Dataset ds;
  bool explicit_vr = false;
  if (bytes.size() >= 132 && std::memcmp(bytes.data() + 128, "DICM", 4) == 0) {
    r.seek(132);
    read_elements(r, /*explicit_vr=*/true, ds, /*meta_only=*/true);
    const auto ts = ds.text(tags::TransferSyntaxUID).value_or(kImplicitVRLittleEndian);
    if (ts == kExplicitVRLittleEndian) {
      explicit_vr = true;
    } else if (ts != kImplicitVRLittleEndian) {
      throw Error(ErrorKind::UnreadableFile, "unsupported transfer syntax " + ts);
    }
  } else if (bytes.size() < 8) {
    throw Error(ErrorKind::UnreadableFile, "not a DICOM stream");
  }
  read_elements(r, explicit_vr, ds, /*meta_only=*/false);
  return ds;
}

Dataset read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::UnreadableFile, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return parse(bytes);
  } catch (const Error& e) {
    throw Error(ErrorKind::UnreadableFile, path.string() + ": " + e.what());
  }
}

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  put_u16(out, static_cast<std::uint16_t>(v & 0xFFFF));
  put_u16(out, static_cast<std::uint16_t>(v >> 16));
}

void put_element(std::vector<std::uint8_t>& out, const Element& e) {
  std::vector<std::uint8_t> value = e.value;
  if (value.size() % 2 != 0) value.push_back(e.vr == "UI" || !text_vr(e.vr) ? 0x00 : 0x20);
  put_u16(out, group_of(e.tag));
  put_u16(out, static_cast<std::uint16_t>(e.tag & 0xFFFF));
  out.push_back(static_cast<std::uint8_t>(e.vr[0]));
  out.push_back(static_cast<std::uint8_t>(e.vr[1]));
  if (long_form_vr(e.vr)) {
    put_u16(out, 0);
    put_u32(out, static_cast<std::uint32_t>(value.size()));
  } else {
    put_u16(out, static_cast<std::uint16_t>(value.size()));
  }
  out.insert(out.end(), value.begin(), value.end());
}

}  // namespace

std::vector<std::uint8_t> serialize(const Dataset& ds) {
  std::vector<std::uint8_t> meta;
  put_element(meta, Element{make_tag(0x0002, 0x0001), "OB", {0x00, 0x01}});
  auto ui = [](const std::string& s) { return std::vector<std::uint8_t>(s.begin(), s.end()); };
  put_element(meta, Element{make_tag(0x0002, 0x0002), "UI", ui(kMRImageStorage)});
  put_element(meta, Element{make_tag(0x0002, 0x0003), "UI",
                            ui(ds.text(tags::SOPInstanceUID).value_or("1.2.3.4"))});
  put_element(meta, Element{tags::TransferSyntaxUID, "UI", ui(kExplicitVRLittleEndian)});

  std::vector<std::uint8_t> out(132, 0);
  out[128] = 'D';
  out[129] = 'I';
  out[130] = 'C';
  out[131] = 'M';
  std::vector<std::uint8_t> group_length;
  put_u32(group_length, static_cast<std::uint32_t>(meta.size()));
  put_element(out, Element{make_tag(0x0002, 0x0000), "UL", group_length});
  out.insert(out.end(), meta.begin(), meta.end());
  for (const auto& [tag, element] : ds.elements()) {
    if (group_of(tag) == 0x0002) continue;
    put_element(out, element);
  }
  return out;
}

void write_file(const std::filesystem::path& path, const Dataset& ds) {
  const auto bytes = serialize(ds);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Unwritable, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::Unwritable, "short write to " + path.string());
}

}  // namespace mpseq::dicom
