#include "mpseq/labels.hpp"

#include <algorithm>
#include <cctype>

#include "mpseq/error.hpp"

namespace mpseq {

namespace {

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::toupper(static_cast<unsigned char>(x)) == std::toupper(static_cast<unsigned char>(y));
         });
}

}  // namespace

LabelSet::LabelSet(std::string id, std::vector<std::string> classes)
    : id_(std::move(id)), classes_(std::move(classes)) {
  if (classes_.size() < 2) throw Error(ErrorKind::InvalidConfig, "label set needs at least 2 classes");
}

const LabelSet& LabelSet::body() {
  static const LabelSet set("body", {"VDCE", "T2W", "T2FS", "DWI", "ADC"});
  return set;
}

const LabelSet& LabelSet::brain() {
  static const LabelSet set("brain", {"T1", "T1CE", "T2", "FLAIR"});
  return set;
}

const LabelSet& LabelSet::by_id(std::string_view id) {
  if (id == "body") return body();
  if (id == "brain") return brain();
  throw Error(ErrorKind::InvalidConfig, "unknown label set '" + std::string(id) + "'");
}

const std::string& LabelSet::name(std::size_t index) const {
  if (index >= classes_.size()) {
    throw Error(ErrorKind::LabelOutOfRange, "class index " + std::to_string(index) + " outside " + id_);
  }
  return classes_[index];
}

std::optional<std::size_t> LabelSet::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < classes_.size(); ++i) {
    if (iequals(classes_[i], name)) return i;
  }
  return std::nullopt;
}

SequenceLabel SequenceLabel::from_name(const LabelSet& set, std::string_view name) {
  const auto idx = set.index_of(name);
  if (!idx) {
    throw Error(ErrorKind::LabelOutOfRange,
                "label '" + std::string(name) + "' is not in profile " + set.id());
  }
  return {set.id(), set.name(*idx), *idx};
}

SequenceLabel SequenceLabel::from_index(const LabelSet& set, std::size_t index) {
  return {set.id(), set.name(index), index};
}

}  // namespace mpseq
