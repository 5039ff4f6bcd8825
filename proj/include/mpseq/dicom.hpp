#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mpseq::dicom {

using Tag = std::uint32_t;

constexpr Tag make_tag(std::uint16_t group, std::uint16_t element) noexcept {
  return (static_cast<Tag>(group) << 16) | element;
}
constexpr std::uint16_t group_of(Tag t) noexcept { return static_cast<std::uint16_t>(t >> 16); }

namespace tags {
inline constexpr Tag TransferSyntaxUID = make_tag(0x0002, 0x0010);
inline constexpr Tag SOPInstanceUID = make_tag(0x0008, 0x0018);
inline constexpr Tag Modality = make_tag(0x0008, 0x0060);
inline constexpr Tag ManufacturerModelName = make_tag(0x0008, 0x1090);
inline constexpr Tag SeriesDescription = make_tag(0x0008, 0x103E);
inline constexpr Tag PatientID = make_tag(0x0010, 0x0020);
inline constexpr Tag BodyPartExamined = make_tag(0x0018, 0x0015);
inline constexpr Tag SliceThickness = make_tag(0x0018, 0x0050);
inline constexpr Tag RepetitionTime = make_tag(0x0018, 0x0080);
inline constexpr Tag EchoTime = make_tag(0x0018, 0x0081);
inline constexpr Tag ProtocolName = make_tag(0x0018, 0x1030);
inline constexpr Tag DiffusionBValue = make_tag(0x0018, 0x9087);
inline constexpr Tag StudyInstanceUID = make_tag(0x0020, 0x000D);
inline constexpr Tag SeriesInstanceUID = make_tag(0x0020, 0x000E);
inline constexpr Tag InstanceNumber = make_tag(0x0020, 0x0013);
inline constexpr Tag ImagePositionPatient = make_tag(0x0020, 0x0032);
inline constexpr Tag ImageOrientationPatient = make_tag(0x0020, 0x0037);
inline constexpr Tag SamplesPerPixel = make_tag(0x0028, 0x0002);
inline constexpr Tag Rows = make_tag(0x0028, 0x0010);
inline constexpr Tag Columns = make_tag(0x0028, 0x0011);
inline constexpr Tag PixelSpacing = make_tag(0x0028, 0x0030);
inline constexpr Tag BitsAllocated = make_tag(0x0028, 0x0100);
inline constexpr Tag PixelRepresentation = make_tag(0x0028, 0x0103);
inline constexpr Tag RescaleIntercept = make_tag(0x0028, 0x1052);
inline constexpr Tag RescaleSlope = make_tag(0x0028, 0x1053);
inline constexpr Tag PerformedProcedureStepDescription = make_tag(0x0040, 0x0254);
inline constexpr Tag PixelData = make_tag(0x7FE0, 0x0010);
// Vendor-private diffusion b-value locations.
inline constexpr Tag SiemensBValue = make_tag(0x0019, 0x100C);
inline constexpr Tag GEBValue = make_tag(0x0043, 0x1039);
inline constexpr Tag PhilipsBValue = make_tag(0x2001, 0x1003);
}  // namespace tags

inline constexpr const char* kExplicitVRLittleEndian = "1.2.840.10008.1.2.1";
inline constexpr const char* kImplicitVRLittleEndian = "1.2.840.10008.1.2";
inline constexpr const char* kMRImageStorage = "1.2.840.10008.5.1.4.1.1.4";

struct Element {
  Tag tag = 0;
  std::string vr;  // two letters; "UN" when unknown under implicit VR
  std::vector<std::uint8_t> value;
};

/// Flat tag -> element map of a single DICOM object. Sequences are skipped
/// on read; nothing here needs nested items.
class Dataset {
 public:
  const Element* find(Tag t) const;
  bool contains(Tag t) const { return find(t) != nullptr; }

  /// Text value with surrounding spaces/NULs trimmed. Binary numeric VRs
  /// are rendered as backslash-separated decimal text.
  std::optional<std::string> text(Tag t) const;
  /// All numeric values of a text (DS/IS) or binary (US/SS/UL/SL/FL/FD) element.
  std::vector<double> numbers(Tag t) const;
  std::optional<double> number(Tag t, std::size_t index = 0) const;

  void set(Element e);
  void set_text(Tag t, const std::string& vr, const std::string& value);
  void set_u16(Tag t, std::uint16_t value);
  void set_f64(Tag t, double value);
  void set_bytes(Tag t, const std::string& vr, std::vector<std::uint8_t> bytes);
  void erase(Tag t) { elements_.erase(t); }

  const std::map<Tag, Element>& elements() const noexcept { return elements_; }

 private:
  std::map<Tag, Element> elements_;
};

/// True when the file carries the "DICM" marker at offset 128.
bool is_part10_file(const std::filesystem::path& path);

/// Parse a Part-10 byte stream. Supports implicit and explicit VR little
/// endian; anything else throws UnreadableFile.
Dataset parse(std::span<const std::uint8_t> bytes);
Dataset read_file(const std::filesystem::path& path);

/// Serialize as Part-10, explicit VR little endian, MR Image Storage.
std::vector<std::uint8_t> serialize(const Dataset& ds);
void write_file(const std::filesystem::path& path, const Dataset& ds);

}  // namespace mpseq::dicom
