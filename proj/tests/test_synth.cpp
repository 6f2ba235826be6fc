#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "hit/synth.hpp"

#include <filesystem>
#include <fstream>

using namespace hit;

namespace {

GeometryConfig small_geo() {
  GeometryConfig geo;
  geo.frames = 4;
  return geo;
}

bool clips_identical(const SyntheticClip& a, const SyntheticClip& b) {
  if (a.clip_id != b.clip_id || a.frames.size() != b.frames.size()) return false;
  for (size_t t = 0; t < a.frames.size(); ++t) {
    if (!a.frames[t].grid.same_bits(b.frames[t].grid)) return false;
    if (a.frames[t].persons.size() != b.frames[t].persons.size()) return false;
    for (size_t p = 0; p < a.frames[t].persons.size(); ++p) {
      const auto& pa = a.frames[t].persons[p];
      const auto& pb = b.frames[t].persons[p];
      if (std::memcmp(&pa.box, &pb.box, sizeof(BBox)) != 0) return false;
      if (std::memcmp(&pa.kps, &pb.kps, sizeof(Keypoints)) != 0) return false;
      if (pa.hand_class != pb.hand_class || pa.pose_class != pb.pose_class ||
          pa.temporal_class != pb.temporal_class)
        return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("generator determinism: same (seed, spec) twice is bit-identical") {
  TaskSpec spec;
  GeometryConfig geo = small_geo();
  for (uint64_t seed : {1ull, 42ull, 7777ull}) {
    auto a = generate_clip(seed, spec, geo);
    auto b = generate_clip(seed, spec, geo);
    CHECK(clips_identical(a, b));
  }
}

TEST_CASE("generator: byte-identical serialization across runs") {
  TaskSpec spec;
  GeometryConfig geo = small_geo();
  namespace fs = std::filesystem;
  auto read_all = [](const std::string& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  };
  std::string d1 = (fs::temp_directory_path() / "hit_synth_a").string();
  std::string d2 = (fs::temp_directory_path() / "hit_synth_b").string();
  fs::remove_all(d1);
  fs::remove_all(d2);
  save_clip(d1, generate_clip(5, spec, geo, "x"));
  save_clip(d2, generate_clip(5, spec, geo, "x"));
  CHECK(read_all(d1 + "/clips/x.bin") == read_all(d2 + "/clips/x.bin"));
  CHECK(read_all(d1 + "/clips/x.json") == read_all(d2 + "/clips/x.json"));
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("dataset round-trip reproduces grids and annotations") {
  TaskSpec spec;
  GeometryConfig geo = small_geo();
  namespace fs = std::filesystem;
  std::string dir = (fs::temp_directory_path() / "hit_synth_ds").string();
  fs::remove_all(dir);
  Dataset ds = build_dataset(spec, geo, 99, 3, "train");
  save_dataset(dir, ds);
  Dataset loaded = load_dataset(dir);
  REQUIRE(loaded.clips.size() == 3);
  CHECK(loaded.spec.pose_classes == spec.pose_classes);
  for (size_t i = 0; i < ds.clips.size(); ++i) {
    CHECK(ds.clips[i].clip_id == loaded.clips[i].clip_id);
    for (size_t t = 0; t < ds.clips[i].frames.size(); ++t) {
      CHECK(ds.clips[i].frames[t].grid.same_bits(loaded.clips[i].frames[t].grid));
      CHECK(ds.clips[i].frames[t].objects.size() == loaded.clips[i].frames[t].objects.size());
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("oracle labels match the generator's stored labels") {
  TaskSpec spec;
  GeometryConfig geo = small_geo();
  for (uint64_t seed = 0; seed < 40; ++seed) {
    auto clip = generate_clip(seed, spec, geo);
    for (size_t t = 0; t < clip.frames.size(); ++t) {
      for (size_t p = 0; p < clip.frames[t].persons.size(); ++p) {
        auto labels = oracle_label(clip, static_cast<int>(t), static_cast<int>(p), spec, geo);
        const auto& truth = clip.frames[t].persons[p];
        CHECK(labels.hand == truth.hand_class);
        CHECK(labels.pose == truth.pose_class);
        CHECK(labels.temporal == truth.temporal_class);
      }
    }
  }
}

TEST_CASE("identifiability: with zero noise the oracle features classify perfectly") {
  TaskSpec spec;
  spec.noise_sigma = 0.0f;
  GeometryConfig geo = small_geo();
  int hand_checked = 0;
  for (uint64_t seed = 100; seed < 130; ++seed) {
    auto clip = generate_clip(seed, spec, geo);
    for (size_t t = 0; t < clip.frames.size(); ++t) {
      for (const auto& person : clip.frames[t].persons) {
        // nearest planted signature inside the true hand box
        CHECK(nearest_hand_signature(clip.frames[t].grid, person.hand_box, spec, geo) ==
              person.hand_class);
        ++hand_checked;
      }
    }
  }
  CHECK(hand_checked > 50);
}

TEST_CASE("zero noise: the hand ROI equals the planted signature on signature channels") {
  TaskSpec spec;
  spec.noise_sigma = 0.0f;
  GeometryConfig geo = small_geo();
  auto clip = generate_clip(3, spec, geo);
  const auto& frame = clip.frames[1];
  for (const auto& person : frame.persons) {
    // single-person signature regions may overlap for multiple persons;
    // only assert for persons whose hand box is isolated
    bool isolated = true;
    for (const auto& other : frame.persons)
      if (&other != &person && iou(other.hand_box, person.hand_box) > 0) isolated = false;
    if (!isolated) continue;
    TensorF roi = roi_align_value(frame.grid, person.hand_box, 3);
    for (int ch = 3; ch < geo.channels; ++ch) {
      float expect = hand_signature_value(ch, person.hand_class, geo);
      for (int cell = 0; cell < 9; ++cell) {
        float got = roi.mat()(ch * 3 + cell / 3, cell % 3);
        CHECK(got == doctest::Approx(expect).epsilon(1e-5));
      }
    }
  }
}

TEST_CASE("temporal rule: zero displacement labels the neutral class") {
  TaskSpec spec;
  GeometryConfig geo = small_geo();
  int neutrals = 0, movers = 0;
  for (uint64_t seed = 0; seed < 60; ++seed) {
    auto clip = generate_clip(seed, spec, geo);
    const auto& p0 = clip.frames[0].persons[0];
    float x_first = clip.frames[0].persons[0].box.cx();
    float x_last = clip.frames.back().persons[0].box.cx();
    if (p0.temporal_class == 1) {
      CHECK(x_first == doctest::Approx(x_last));
      ++neutrals;
    } else {
      CHECK(std::abs(x_last - x_first) > 0.01f);
      ++movers;
    }
  }
  CHECK(neutrals > 5);
  CHECK(movers > 5);
}

TEST_CASE("filter adversariality: every clip fails the filter both ways") {
  TaskSpec spec;
  GeometryConfig geo = small_geo();
  for (uint64_t seed = 0; seed < 30; ++seed) {
    auto clip = generate_clip(seed, spec, geo);
    for (const auto& frame : clip.frames) {
      bool has_low_score = false, has_disjoint = false;
      std::vector<BBox> persons;
      for (const auto& p : frame.persons) persons.push_back(p.box);
      for (const auto& o : frame.objects) {
        if (o.score < 0.25f) has_low_score = true;
        bool overlaps = false;
        for (const auto& p : persons)
          if (iou(o.box, p) > 0) overlaps = true;
        if (!overlaps && o.score >= 0.25f) has_disjoint = true;
      }
      CHECK(has_low_score);
      CHECK(has_disjoint);

      // and the filter actually drops them
      auto kept = filter_objects(frame.objects, persons, 0.25f);
      CHECK(kept.size() < frame.objects.size());
      for (const auto& o : kept) {
        CHECK(o.score >= 0.25f);
        bool overlaps = false;
        for (const auto& p : persons)
          if (iou(o.box, p) > 0) overlaps = true;
        CHECK(overlaps);
      }
    }
  }
}

TEST_CASE("select_entities: eval passes boxes through, train jitters deterministically") {
  TaskSpec spec;
  GeometryConfig geo = small_geo();
  auto clip = generate_clip(11, spec, geo);
  SelectConfig cfg;
  cfg.hand_margin = geo.hand_margin;

  auto eval_sel = select_entities(clip.frames[0], Mode::kEval, cfg, nullptr);
  for (size_t p = 0; p < eval_sel.person_boxes.size(); ++p) {
    CHECK(eval_sel.person_boxes[p].x1 == clip.frames[0].persons[p].box.x1);
    CHECK(eval_sel.person_boxes[p].y2 == clip.frames[0].persons[p].box.y2);
  }

  Rng r1(5), r2(5);
  auto t1 = select_entities(clip.frames[0], Mode::kTrain, cfg, &r1);
  auto t2 = select_entities(clip.frames[0], Mode::kTrain, cfg, &r2);
  for (size_t p = 0; p < t1.person_boxes.size(); ++p) {
    CHECK(t1.person_boxes[p].x1 == t2.person_boxes[p].x1);
    CHECK(t1.person_boxes[p].y2 == t2.person_boxes[p].y2);
  }

  // kept objects pass both rules at the default threshold
  for (const auto& o : eval_sel.objects) CHECK(o.score >= 0.25f);

  // a 0.2-score object is excluded at the default threshold
  FrameTruth frame = clip.frames[0];
  frame.objects = {{frame.persons[0].box, 0.2f, 0}};
  CHECK(select_entities(frame, Mode::kEval, cfg, nullptr).objects.empty());
}

TEST_CASE("select_entities: suppressed wrists fall back to the person box") {
  TaskSpec spec;
  spec.wrist_suppress_prob = 1.0f;
  GeometryConfig geo = small_geo();
  auto clip = generate_clip(17, spec, geo);
  SelectConfig cfg;
  cfg.hand_margin = geo.hand_margin;
  cfg.wrist_conf_floor = 0.3f;
  auto sel = select_entities(clip.frames[0], Mode::kEval, cfg, nullptr);
  for (size_t p = 0; p < sel.person_boxes.size(); ++p) {
    CHECK(sel.hand_boxes[p].x1 == sel.person_boxes[p].x1);
    CHECK(sel.hand_boxes[p].y2 == sel.person_boxes[p].y2);
  }
}

TEST_CASE("infeasible geometry raises an error") {
  TaskSpec spec;
  GeometryConfig geo = small_geo();
  geo.height = 2;  // below the minimum grid
  CHECK_THROWS_AS(generate_clip(1, spec, geo), std::invalid_argument);

  TaskSpec bad;
  bad.hand_classes = 3;
  CHECK_THROWS_AS(generate_clip(1, bad, small_geo()), std::invalid_argument);
}

TEST_CASE("task label groups and targets line up with the class layout") {
  TaskSpec spec;
  auto groups = task_label_groups(spec);
  CHECK(groups.total_classes() == 11);
  CHECK(groups.groups[0].name == "hand");
  CHECK(groups.groups[1].is_pose);
  CHECK(groups.groups[2].start == 8);

  PersonTruth truth;
  truth.hand_class = 2;
  truth.pose_class = 3;
  truth.temporal_class = 1;
  auto t = person_targets(truth, spec);
  REQUIRE(t.softmax_index.size() == 3);
  CHECK(t.softmax_index[0] == 2);
  CHECK(t.softmax_index[1] == 3);
  CHECK(t.softmax_index[2] == 1);

  TaskSpec pose_only;
  pose_only.hand_classes = 0;
  pose_only.temporal_classes = 0;
  pose_only.pose_classes = 21;
  auto g21 = task_label_groups(pose_only);
  CHECK(g21.total_classes() == 21);
  CHECK(g21.groups.size() == 1);
}
