#include <algorithm>
#include <cctype>
#include <set>
#include <tuple>

#include "mpseq/error.hpp"
#include "mpseq/ingestion.hpp"

namespace mpseq {

namespace {

std::vector<std::string> words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::toupper(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : ",") + s;
  return out;
}

const std::optional<std::string>* header_field(const HeaderFields& h, const std::string& name) {
  if (name == "body_part_examined") return &h.body_part_examined;
  if (name == "procedure_step_description") return &h.procedure_step_description;
  if (name == "series_description") return &h.series_description;
  if (name == "protocol_name") return &h.protocol_name;
  if (name == "scanner_model") return &h.scanner_model;
  return nullptr;
}

}  // namespace

std::size_t ConflictReport::count(Severity s) const {
  return static_cast<std::size_t>(
      std::count_if(findings.begin(), findings.end(), [&](const Finding& f) { return f.severity == s; }));
}

ordered_json to_json(const ConflictReport& report) {
  ordered_json j;
  j["study_uid"] = report.study_uid;
  j["passed"] = report.passed();
  j["conflicts"] = report.count(Severity::Conflict);
  j["warnings"] = report.count(Severity::Warning);
  j["findings"] = ordered_json::array();
  for (const auto& f : report.findings) {
    ordered_json o;
    o["rule_id"] = f.rule_id;
    o["severity"] = f.severity == Severity::Conflict ? "conflict" : "warning";
    o["series_uid"] = f.series_uid;
    o["fields"] = f.fields;
    o["message"] = f.message;
    j["findings"].push_back(std::move(o));
  }
  return j;
}

ConflictRuleSet ConflictRuleSet::defaults(const std::string& label_set_id) {
  ConflictRuleSet r;
  r.anatomy_lexicon = {
      {"brain", {"BRAIN", "HEAD", "NEURO", "CEREBRAL", "CRANIAL", "SKULL"}},
      {"chest", {"CHEST", "THORAX", "THORACIC", "LUNG", "LUNGS", "CARDIAC", "HEART"}},
      {"abdomen", {"ABDOMEN", "ABD", "ABDOMINAL", "LIVER", "KIDNEY", "RENAL", "PANCREAS"}},
      {"pelvis", {"PELVIS", "PELVIC", "PROSTATE", "BLADDER", "RECTUM", "UTERUS"}},
  };
  r.required_fields = {"series_description", "protocol_name", "body_part_examined"};
  r.label_rules = LabelRuleTable::default_for(label_set_id);
  return r;
}

ConflictRuleSet ConflictRuleSet::from_json(const nlohmann::json& j) {
  try {
    ConflictRuleSet r = defaults(j.value("label_set", std::string("body")));
    r.body_part_vs_procedure = j.value("body_part_vs_procedure", r.body_part_vs_procedure);
    r.description_vs_protocol = j.value("description_vs_protocol", r.description_vs_protocol);
    r.missing_fields = j.value("missing_fields", r.missing_fields);
    if (j.contains("anatomy_lexicon")) {
      r.anatomy_lexicon = j.at("anatomy_lexicon").get<std::map<std::string, std::vector<std::string>>>();
    }
    if (j.contains("required_fields")) {
      r.required_fields = j.at("required_fields").get<std::vector<std::string>>();
      for (const auto& f : r.required_fields) {
        HeaderFields probe;
        if (!header_field(probe, f)) throw Error(ErrorKind::InvalidConfig, "unknown required field '" + f + "'");
      }
    }
    if (j.contains("label_rules")) r.label_rules = LabelRuleTable::from_json(j.at("label_rules"));
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("malformed conflict rules: ") + e.what());
  }
}

ordered_json ConflictRuleSet::to_json() const {
  ordered_json j;
  j["label_set"] = label_rules.label_set_id;
  j["body_part_vs_procedure"] = body_part_vs_procedure;
  j["description_vs_protocol"] = description_vs_protocol;
  j["missing_fields"] = missing_fields;
  j["anatomy_lexicon"] = anatomy_lexicon;
  j["required_fields"] = required_fields;
  j["label_rules"] = label_rules.to_json();
  return j;
}

std::vector<std::string> anatomical_regions(const std::string& text, const ConflictRuleSet& rules) {
  std::set<std::string> found;
  for (const auto& w : words(text)) {
    for (const auto& [region, keywords] : rules.anatomy_lexicon) {
      for (const auto& k : keywords) {
        std::string ku = k;
        std::transform(ku.begin(), ku.end(), ku.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
        if (w == ku) found.insert(region);
      }
    }
  }
  return {found.begin(), found.end()};
}

ConflictReport detect_conflicts(const StudyRecord& study, const ConflictRuleSet& rules) {
  ConflictReport report;
  report.study_uid = study.study_uid;

  for (const auto& s : study.series) {
    const HeaderFields& h = s.header;

    if (rules.body_part_vs_procedure && h.body_part_examined && h.procedure_step_description) {
      const auto a = anatomical_regions(*h.body_part_examined, rules);
      const auto b = anatomical_regions(*h.procedure_step_description, rules);
      std::vector<std::string> common;
      std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(common));
      if (!a.empty() && !b.empty() && common.empty()) {
        report.findings.push_back({kRuleBodyPartVsProcedure, Severity::Conflict, s.series_uid,
                                   "body_part_examined,procedure_step_description",
                                   "Body Part Examined '" + *h.body_part_examined + "' (" + join(a) +
                                       ") disagrees with Procedure Step Description '" +
                                       *h.procedure_step_description + "' (" + join(b) + ")"});
      }
    }

    if (rules.description_vs_protocol) {
      const auto by_desc = infer_label_from_field(h, TextField::SeriesDescription, rules.label_rules);
      const auto by_proto = infer_label_from_field(h, TextField::ProtocolName, rules.label_rules);
      if (by_desc && by_proto && by_desc->class_index != by_proto->class_index) {
        report.findings.push_back({kRuleDescriptionVsProtocol, Severity::Conflict, s.series_uid,
                                   "series_description,protocol_name",
                                   "Series Description implies " + by_desc->value + " but Protocol Name implies " +
                                       by_proto->value});
      }
    }

    if (rules.missing_fields) {
      for (const auto& name : rules.required_fields) {
        const auto* field = header_field(h, name);
        if (field && !field->has_value()) {
          report.findings.push_back(
              {kRuleMissingField, Severity::Warning, s.series_uid, name, "required field " + name + " is absent"});
        }
      }
    }
  }

  std::stable_sort(report.findings.begin(), report.findings.end(), [](const Finding& x, const Finding& y) {
    return std::tie(x.rule_id, x.series_uid, x.fields) < std::tie(y.rule_id, y.series_uid, y.fields);
  });
  return report;
}

}  // namespace mpseq
