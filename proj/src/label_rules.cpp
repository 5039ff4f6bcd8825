#include <algorithm>
#include <cctype>
#include <fstream>

#include "mpseq/error.hpp"
#include "mpseq/ingestion.hpp"

namespace mpseq {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

const std::optional<std::string>& field_text(const HeaderFields& h, TextField f) {
  return f == TextField::SeriesDescription ? h.series_description : h.protocol_name;
}

const char* field_name(TextField f) {
  return f == TextField::SeriesDescription ? "series_description" : "protocol_name";
}

TextField parse_field(const std::string& name) {
  if (name == "series_description") return TextField::SeriesDescription;
  if (name == "protocol_name") return TextField::ProtocolName;
  throw Error(ErrorKind::InvalidConfig, "unknown rule field '" + name + "'");
}

bool b_value_ok(const LabelRule& rule, const HeaderFields& h) {
  if (!rule.b_value_min && !rule.b_value_max) return true;
  if (!h.b_value) return false;
  if (rule.b_value_min && *h.b_value < *rule.b_value_min) return false;
  if (rule.b_value_max && *h.b_value > *rule.b_value_max) return false;
  return true;
}

bool text_matches(const LabelRule& rule, const std::string& text) {
  const std::string t = lower(text);
  return std::any_of(rule.patterns.begin(), rule.patterns.end(),
                     [&](const std::string& p) { return !p.empty() && t.find(lower(p)) != std::string::npos; });
}

std::optional<SequenceLabel> first_match(const HeaderFields& h, const LabelRuleTable& table,
                                         const std::vector<TextField>* only) {
  const LabelSet& set = LabelSet::by_id(table.label_set_id);
  for (const auto& rule : table.rules) {
    if (!b_value_ok(rule, h)) continue;
    for (const TextField f : rule.fields) {
      if (only && std::find(only->begin(), only->end(), f) == only->end()) continue;
      const auto& text = field_text(h, f);
      if (text && text_matches(rule, *text)) return SequenceLabel::from_name(set, rule.label);
    }
  }
  return std::nullopt;
}

}  // namespace

LabelRuleTable LabelRuleTable::default_body() {
  LabelRuleTable t;
  t.label_set_id = "body";
  // Order matters: ADC descriptions usually also contain "diff", and
  // fat-suppressed T1 (vibe) descriptions contain "fs".
  t.rules = {
      {"ADC", {"adc", "apparent diff"}, {TextField::SeriesDescription, TextField::ProtocolName}, {}, {}},
      {"DWI", {"dwi", "diff", "trace", "ep2d"}, {TextField::SeriesDescription, TextField::ProtocolName}, {}, {}},
      {"VDCE", {"venous", "portal", "vibe", "dce", "dynamic"}, {TextField::SeriesDescription, TextField::ProtocolName},
       {}, {}},
      {"T2FS", {"fatsat", "fat sat", "spair", "stir", "t2fs", "t2_fs", "_fs", "fs_"},
       {TextField::SeriesDescription, TextField::ProtocolName}, {}, {}},
      {"T2W", {"t2"}, {TextField::SeriesDescription, TextField::ProtocolName}, {}, {}},
  };
  return t;
}

LabelRuleTable LabelRuleTable::default_brain() {
  LabelRuleTable t;
  t.label_set_id = "brain";
  t.rules = {
      {"T1CE", {"t1ce", "t1c", "t1_ce", "t1gd", "t1_gd", "post", "contrast"},
       {TextField::SeriesDescription, TextField::ProtocolName}, {}, {}},
      {"FLAIR", {"flair"}, {TextField::SeriesDescription, TextField::ProtocolName}, {}, {}},
      {"T2", {"t2"}, {TextField::SeriesDescription, TextField::ProtocolName}, {}, {}},
      {"T1", {"t1"}, {TextField::SeriesDescription, TextField::ProtocolName}, {}, {}},
  };
  return t;
}

LabelRuleTable LabelRuleTable::default_for(const std::string& label_set_id) {
  if (label_set_id == "body") return default_body();
  if (label_set_id == "brain") return default_brain();
  throw Error(ErrorKind::InvalidConfig, "no default rule table for '" + label_set_id + "'");
}

LabelRuleTable LabelRuleTable::from_json(const nlohmann::json& j) {
  try {
    LabelRuleTable t;
    t.label_set_id = j.at("label_set").get<std::string>();
    const LabelSet& set = LabelSet::by_id(t.label_set_id);
    for (const auto& r : j.at("rules")) {
      LabelRule rule;
      rule.label = r.at("label").get<std::string>();
      if (!set.index_of(rule.label)) {
        throw Error(ErrorKind::InvalidConfig, "rule label '" + rule.label + "' is not in profile " + set.id());
      }
      rule.patterns = r.at("patterns").get<std::vector<std::string>>();
      if (r.contains("fields")) {
        rule.fields.clear();
        for (const auto& f : r.at("fields")) rule.fields.push_back(parse_field(f.get<std::string>()));
      }
      if (r.contains("b_value_min") && !r.at("b_value_min").is_null()) rule.b_value_min = r.at("b_value_min").get<double>();
      if (r.contains("b_value_max") && !r.at("b_value_max").is_null()) rule.b_value_max = r.at("b_value_max").get<double>();
      t.rules.push_back(std::move(rule));
    }
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("malformed rule table: ") + e.what());
  }
}

LabelRuleTable LabelRuleTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::UnreadableFile, "cannot read rules file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, "rules file " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

ordered_json LabelRuleTable::to_json() const {
  ordered_json j;
  j["label_set"] = label_set_id;
  j["rules"] = ordered_json::array();
  for (const auto& r : rules) {
    ordered_json o;
    o["label"] = r.label;
    o["patterns"] = r.patterns;
    o["fields"] = ordered_json::array();
    for (auto f : r.fields) o["fields"].push_back(field_name(f));
    if (r.b_value_min) o["b_value_min"] = *r.b_value_min;
    if (r.b_value_max) o["b_value_max"] = *r.b_value_max;
    j["rules"].push_back(std::move(o));
  }
  return j;
}

std::optional<SequenceLabel> infer_label_from_headers(const HeaderFields& h, const LabelRuleTable& rules) {
  return first_match(h, rules, nullptr);
}

std::optional<SequenceLabel> infer_label_from_field(const HeaderFields& h, TextField field,
                                                    const LabelRuleTable& rules) {
  const std::vector<TextField> only{field};
  return first_match(h, rules, &only);
}

}  // namespace mpseq
