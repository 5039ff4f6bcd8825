#include <doctest.h>

#include <fstream>
#include <set>

#include "mpseq/error.hpp"
#include "mpseq/phantom.hpp"
#include "test_util.hpp"

using namespace mpseq;

namespace {

PhantomSpec seeded(std::uint64_t seed, bool hard = false) {
  PhantomSpec s = hard ? PhantomSpec::hard_body() : PhantomSpec::default_body();
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("a study holds every class once plus extra DWI volumes") {
  const auto spec = seeded(3);
  for (std::size_t p = 0; p < 6; ++p) {
    const auto study = generate_study(spec, phantom_patient_id(p), 0);
    CHECK(study.series.size() >= 5);
    CHECK(study.series.size() <= 7);
    std::multiset<std::string> labels;
    for (const auto& s : study.series) {
      REQUIRE(s.entry.label.has_value());
      labels.insert(LabelSet::body().name(s.entry.label->class_index));
      CHECK(s.volume.voxels.size() == s.volume.shape.nx * s.volume.shape.ny * s.volume.shape.nz);
    }
    for (const auto& name : LabelSet::body().classes()) CHECK(labels.count(name) >= 1);
    CHECK(labels.count("DWI") == study.series.size() - 4);
  }
  CHECK(phantom_patient_id(0) == "P0001");
}

TEST_CASE("generation is deterministic per seed") {
  const auto a = generate_study(seeded(5), "P0002", 0);
  const auto b = generate_study(seeded(5), "P0002", 0);
  REQUIRE(a.series.size() == b.series.size());
  for (std::size_t i = 0; i < a.series.size(); ++i) {
    CHECK(a.series[i].entry.series_uid == b.series[i].entry.series_uid);
    CHECK(a.series[i].volume.voxels == b.series[i].volume.voxels);
  }
  const auto c = generate_study(seeded(6), "P0002", 0);
  CHECK(c.series[0].volume.voxels != a.series[0].volume.voxels);
}

TEST_CASE("lesion multiplier has no effect without lesions") {
  auto spec = seeded(9);
  for (auto& sig : spec.classes) sig.lesion_count = {0, 0};
  auto bright = spec;
  for (auto& sig : bright.classes) sig.lesion_multiplier = 4.0;
  const auto a = generate_study(spec, "P0001", 0);
  const auto b = generate_study(bright, "P0001", 0);
  REQUIRE(a.series.size() == b.series.size());
  for (std::size_t i = 0; i < a.series.size(); ++i) CHECK(a.series[i].volume.voxels == b.series[i].volume.voxels);
}

TEST_CASE("spec validation and JSON") {
  auto spec = seeded(1);
  const auto back = PhantomSpec::from_json(nlohmann::json::parse(spec.to_json().dump()));
  CHECK(back.to_json() == spec.to_json());
  CHECK(PhantomSpec::from_json({{"hard", true}}).hard);
  CHECK_THROWS_AS(PhantomSpec::from_json({{"colour", 1}}), Error);

  auto bad = spec;
  bad.conflict_fraction = 1.5;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = spec;
  bad.classes.pop_back();
  CHECK_THROWS_AS(bad.validate(), Error);

  testutil::TempDir dir("phantom_small");
  try {
    generate_dataset(spec, 2, 1, dir.path());
    FAIL("expected InvalidSpec");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidSpec);
  }
}

TEST_CASE("dataset of 50 patients with seeded header conflicts") {
  testutil::TempDir dir("phantom50");
  auto spec = seeded(11);
  spec.conflict_fraction = 0.1;
  const auto summary = generate_dataset(spec, 50, 1, dir.path());
  CHECK(summary.manifest.size() == 50);
  for (const auto& study : summary.manifest) CHECK(study.complete());
  CHECK(summary.conflict_studies.size() == 5);
  CHECK(std::filesystem::exists(dir / "manifest.jsonl"));
  CHECK(std::filesystem::exists(dir / "labels.jsonl"));
  CHECK(std::filesystem::exists(dir / "dataset_card.json"));
  CHECK(read_manifest(dir / "manifest.jsonl").size() == 50);

  const auto rules = ConflictRuleSet::defaults();
  std::set<std::string> flagged;
  for (const auto& study : summary.manifest)
    if (detect_conflicts(study, rules).count(Severity::Conflict) > 0) flagged.insert(study.study_uid);
  CHECK(flagged == std::set<std::string>(summary.conflict_studies.begin(), summary.conflict_studies.end()));
}

TEST_CASE("default signatures are separable by a nearest-centroid baseline") {
  const auto spec = seeded(7);
  std::vector<LabeledFeatures> train, test;
  for (std::size_t p = 0; p < 50; ++p) {
    const auto study = generate_study(spec, phantom_patient_id(p), 0);
    for (const auto& s : study.series)
      (p < 35 ? train : test).push_back({intensity_features(s.volume), s.entry.label->class_index});
  }
  const double acc = nearest_centroid_accuracy(train, test);
  MESSAGE("nearest-centroid accuracy " << acc);
  CHECK(acc >= 0.90);
}

TEST_CASE("shipped phantom specs match the library defaults") {
  auto read = [](const char* name) {
    std::ifstream in(std::filesystem::path(MPSEQ_SOURCE_DIR) / "config" / name);
    return PhantomSpec::from_json(nlohmann::json::parse(in));
  };
  auto want = seeded(7);
  CHECK(read("phantom_default.json").to_json() == want.to_json());
  want.seed = 11;
  want.conflict_fraction = 0.1;
  CHECK(read("phantom_conflicts.json").to_json() == want.to_json());
}
