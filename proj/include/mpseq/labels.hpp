#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mpseq {

/// A closed, ordered set of sequence classes. Class indices are the
/// positions in `classes`.
class LabelSet {
 public:
  LabelSet(std::string id, std::vector<std::string> classes);

  /// "body": VDCE, T2W, T2FS, DWI, ADC.
  static const LabelSet& body();
  /// "brain": T1, T1CE, T2, FLAIR.
  static const LabelSet& brain();
  /// Look up a shipped profile by id; throws InvalidConfig for unknown ids.
  static const LabelSet& by_id(std::string_view id);

  const std::string& id() const noexcept { return id_; }
  const std::vector<std::string>& classes() const noexcept { return classes_; }
  std::size_t size() const noexcept { return classes_.size(); }
  const std::string& name(std::size_t index) const;
  /// Case-insensitive lookup of a class name.
  std::optional<std::size_t> index_of(std::string_view name) const;

 private:
  std::string id_;
  std::vector<std::string> classes_;
};

struct SequenceLabel {
  std::string label_set_id;
  std::string value;
  std::size_t class_index = 0;

  /// Throws LabelOutOfRange if `name` is not a member of `set`.
  static SequenceLabel from_name(const LabelSet& set, std::string_view name);
  static SequenceLabel from_index(const LabelSet& set, std::size_t index);

  friend bool operator==(const SequenceLabel&, const SequenceLabel&) = default;
};

}  // namespace mpseq
