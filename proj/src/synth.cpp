#include "hit/synth.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>

namespace hit {

namespace {

// grid channel layout: 0 = x position, 1 = y position, 2 = normalized
// frame time, 3.. = hand-class signature channels
constexpr int kReservedChannels = 3;
constexpr float kPosAmp = 2.0f;
constexpr float kTimeAmp = 2.0f;
constexpr float kSigAmp = 1.5f;
constexpr float kKpNoise = 0.02f;  // box-relative keypoint noise
// wrist observation noise in image units per unit of noise_sigma; the
// emitted wrists scatter around the latent hand placement, so the
// quadrant is ambiguous from keypoints alone near the axes while the
// planted signature stays exact
constexpr float kWristNoiseFrac = 0.2f;
constexpr double kNeutralEps = 0.004;

int quadrant_of(float dx, float dy) { return (dy > 0 ? 2 : 0) + (dx > 0 ? 1 : 0); }

void validate_task(const TaskSpec& spec) {
  if (spec.hand_classes != 0 && spec.hand_classes != 4)
    throw std::invalid_argument("task: hand_classes must be 0 or 4 (quadrant rule)");
  if (spec.temporal_classes != 0 && spec.temporal_classes != 3)
    throw std::invalid_argument("task: temporal_classes must be 0 or 3 (sign rule)");
  if (spec.pose_classes < 0) throw std::invalid_argument("task: pose_classes must be >= 0");
  if (spec.total_classes() <= 0) throw std::invalid_argument("task: no classes enabled");
  if (spec.noise_sigma < 0) throw std::invalid_argument("task: noise_sigma must be >= 0");
}

void validate_geometry(const GeometryConfig& geo) {
  if (geo.channels < kReservedChannels + 1 || geo.height < 4 || geo.width < 4)
    throw std::invalid_argument("geometry: grid must be at least 4x4 with " +
                                std::to_string(kReservedChannels + 1) + " channels");
  if (geo.frames < 1) throw std::invalid_argument("geometry: frames must be >= 1");
  if (geo.max_persons < 1) throw std::invalid_argument("geometry: max_persons must be >= 1");
}

struct PersonPlan {
  float w, h;           // box extents
  float cx0, cy;        // trajectory start
  float step;           // signed horizontal motion per frame
  float hand_dxf, hand_dyf;  // hand-center offset in half-extent units
  float hand_sw, hand_sh;    // wrist hull extents
  bool suppress_wrists;
  int hand_class, pose_class, temporal_class;
  std::array<std::array<float, 2>, Keypoints::kJointCount> tmpl;
};

}  // namespace

std::array<std::array<float, 2>, Keypoints::kJointCount> pose_template(int pose_class) {
  std::array<std::array<float, 2>, Keypoints::kJointCount> out;
  Rng rng(mix_seed(0x9059e7e19ull, "pose_template_" + std::to_string(pose_class)));
  for (auto& j : out)
    j = {static_cast<float>(rng.uniform(0.12, 0.88)),
         static_cast<float>(rng.uniform(0.12, 0.88))};
  return out;
}

float hand_signature_value(int channel, int hand_class, const GeometryConfig& geo) {
  if (channel < kReservedChannels || channel >= geo.channels || hand_class < 0) return 0.0f;
  return (channel - kReservedChannels) % 4 == hand_class ? kSigAmp : 0.0f;
}

int nearest_hand_signature(const TensorF& grid, const BBox& box, const TaskSpec& spec,
                           const GeometryConfig& geo) {
  TensorF roi = roi_align_value(grid, box, 3);
  int best = -1;
  double best_score = -1e30;
  for (int c = 0; c < spec.hand_classes; ++c) {
    double score = 0;
    for (int ch = kReservedChannels; ch < geo.channels; ++ch) {
      double mean = roi.mat().middleRows(ch * 3, 3).mean();
      score += mean * hand_signature_value(ch, c, geo);
    }
    if (score > best_score) {
      best_score = score;
      best = c;
    }
  }
  return best;
}

LabelGroups task_label_groups(const TaskSpec& spec) {
  std::vector<LabelGroup> gs;
  if (spec.hand_classes > 0) gs.push_back({"hand", spec.hand_classes, "softmax", false, 0});
  if (spec.pose_classes > 0) gs.push_back({"pose", spec.pose_classes, "softmax", true, 0});
  if (spec.temporal_classes > 0)
    gs.push_back({"temporal", spec.temporal_classes, "softmax", false, 0});
  return LabelGroups::make(std::move(gs));
}

PersonTargets person_targets(const PersonTruth& truth, const TaskSpec& spec) {
  PersonTargets t;
  if (spec.hand_classes > 0) t.softmax_index.push_back(truth.hand_class);
  if (spec.pose_classes > 0) t.softmax_index.push_back(truth.pose_class);
  if (spec.temporal_classes > 0) t.softmax_index.push_back(truth.temporal_class);
  return t;
}

SyntheticClip generate_clip(uint64_t seed, const TaskSpec& spec, const GeometryConfig& geo,
                            std::string clip_id) {
  validate_task(spec);
  validate_geometry(geo);
  Rng rng(mix_seed(seed, "clip"));

  SyntheticClip clip;
  clip.clip_id = clip_id.empty() ? "clip_" + std::to_string(seed) : std::move(clip_id);
  clip.generator_seed = seed;

  const int T = geo.frames;
  const int n_persons = rng.uniform_int(1, geo.max_persons);

  // one motion sign per clip keeps per-person labels frame-constant and
  // the pooled memory coherent
  int sign_class = spec.temporal_classes > 0 ? rng.uniform_int(0, 2) : -1;
  float dir = sign_class == 0 ? -1.0f : sign_class == 2 ? 1.0f : 0.0f;

  const float cellw_env = 1.0f / static_cast<float>(geo.width);
  const float cellh_env = 1.0f / static_cast<float>(geo.height);

  auto sample_plan = [&]() {
    PersonPlan plan;
    plan.w = static_cast<float>(rng.uniform(0.18, 0.30));
    plan.h = static_cast<float>(rng.uniform(0.22, 0.34));
    plan.step = dir == 0.0f ? 0.0f : dir * static_cast<float>(rng.uniform(0.018, 0.028));

    float lo = plan.w / 2 + 0.01f, hi = 1.0f - plan.w / 2 - 0.01f;
    float drift = std::abs(plan.step) * static_cast<float>(T - 1);
    float clo = plan.step > 0 ? lo : lo + drift;
    float chi = plan.step > 0 ? hi - drift : hi;
    float vlo = plan.h / 2 + 0.01f, vhi = 1.0f - plan.h / 2 - 0.01f;
    if (clo >= chi || vlo >= vhi)
      throw std::invalid_argument("generate_clip: infeasible geometry, boxes cannot fit");
    plan.cx0 = static_cast<float>(rng.uniform(clo, chi));
    plan.cy = static_cast<float>(rng.uniform(vlo, vhi));

    plan.hand_class = spec.hand_classes > 0 ? rng.uniform_int(0, 3) : -1;
    plan.pose_class = spec.pose_classes > 0 ? rng.uniform_int(0, spec.pose_classes - 1) : -1;
    plan.temporal_class = sign_class;
    plan.hand_sw = static_cast<float>(rng.uniform(0.05, 0.10));
    plan.hand_sh = static_cast<float>(rng.uniform(0.05, 0.10));

    // keep the padded hand box inside the image for the whole trajectory
    // so the quadrant never flips frame to frame
    float pad = geo.hand_margin * std::max(plan.hand_sw, plan.hand_sh);
    float margin_x = plan.hand_sw / 2 + pad + 0.01f;
    float margin_y = plan.hand_sh / 2 + pad + 0.01f;
    float room_x = std::min(std::min(plan.cx0, plan.cx0 + plan.step * (T - 1)),
                            1.0f - std::max(plan.cx0, plan.cx0 + plan.step * (T - 1)));
    float room_y = std::min(plan.cy, 1.0f - plan.cy);
    float limit_x = (room_x - margin_x) / (plan.w / 2);
    float limit_y = (room_y - margin_y) / (plan.h / 2);
    if (limit_x <= 0.05f || limit_y <= 0.05f)
      throw std::invalid_argument("generate_clip: infeasible geometry, no room for hand boxes");
    // quadratic bias toward the quadrant axes; those placements are the
    // ones the noisy wrists cannot resolve
    double ux = rng.uniform(), uy = rng.uniform();
    float dxf = static_cast<float>(0.08 + 1.27 * ux * ux);
    float dyf = static_cast<float>(0.08 + 1.27 * uy * uy);
    dxf = std::min(dxf, limit_x);
    dyf = std::min(dyf, limit_y);
    int q = plan.hand_class >= 0 ? plan.hand_class : rng.uniform_int(0, 3);
    plan.hand_dxf = (q & 1) ? dxf : -dxf;
    plan.hand_dyf = (q & 2) ? dyf : -dyf;
    plan.suppress_wrists = rng.bernoulli(spec.wrist_suppress_prob);

    plan.tmpl = pose_template(plan.pose_class >= 0 ? plan.pose_class : 0);
    return plan;
  };

  // whole-trajectory envelope of the planted signature region (hand hull
  // plus margin plus one grid cell of planting dilation)
  auto signature_envelope = [&](const PersonPlan& plan) {
    float pad = geo.hand_margin * std::max(plan.hand_sw, plan.hand_sh);
    float hx0 = plan.cx0 + plan.hand_dxf * plan.w / 2;
    float hx1 = hx0 + plan.step * static_cast<float>(T - 1);
    float hcy = plan.cy + plan.hand_dyf * plan.h / 2;
    return BBox::make(std::min(hx0, hx1) - plan.hand_sw / 2 - pad - cellw_env,
                      hcy - plan.hand_sh / 2 - pad - cellh_env,
                      std::max(hx0, hx1) + plan.hand_sw / 2 + pad + cellw_env,
                      hcy + plan.hand_sh / 2 + pad + cellh_env);
  };

  // re-plan until no two persons' signature regions can ever intersect,
  // otherwise a cell could carry two classes and the labels would stop
  // being identifiable
  std::vector<PersonPlan> plans;
  for (int attempt = 0;; ++attempt) {
    plans.clear();
    for (int p = 0; p < n_persons; ++p) plans.push_back(sample_plan());
    if (spec.hand_classes == 0) break;
    bool disjoint = true;
    for (size_t a = 0; a < plans.size() && disjoint; ++a)
      for (size_t b = a + 1; b < plans.size() && disjoint; ++b)
        if (iou(signature_envelope(plans[a]), signature_envelope(plans[b])) > 0) disjoint = false;
    if (disjoint) break;
    if (attempt >= 500)
      throw std::invalid_argument(
          "generate_clip: infeasible geometry, hand regions cannot be kept disjoint");
  }

  const int C = geo.channels, H = geo.height, W = geo.width;
  const float cellw = 1.0f / static_cast<float>(W), cellh = 1.0f / static_cast<float>(H);

  for (int t = 0; t < T; ++t) {
    FrameTruth frame;
    frame.grid = TensorF(Shape{C, H, W});
    auto& gm = frame.grid.mat();

    for (int ch = 0; ch < C; ++ch)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
          gm(ch * H + y, x) = spec.noise_sigma * static_cast<float>(rng.gaussian());

    float tau = T > 1 ? 2.0f * static_cast<float>(t) / static_cast<float>(T - 1) - 1.0f : 0.0f;
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        gm(0 * H + y, x) += kPosAmp * (2.0f * (static_cast<float>(x) + 0.5f) * cellw - 1.0f);
        gm(1 * H + y, x) += kPosAmp * (2.0f * (static_cast<float>(y) + 0.5f) * cellh - 1.0f);
        gm(2 * H + y, x) += kTimeAmp * tau;
      }
    }

    for (const auto& plan : plans) {
      PersonTruth person;
      float cx = plan.cx0 + plan.step * static_cast<float>(t);
      person.box = BBox::make(cx - plan.w / 2, plan.cy - plan.h / 2, cx + plan.w / 2,
                              plan.cy + plan.h / 2);
      person.hand_class = plan.hand_class;
      person.pose_class = plan.pose_class;
      person.temporal_class = plan.temporal_class;

      for (int j = 0; j < Keypoints::kJointCount; ++j) {
        float fx = plan.tmpl[static_cast<size_t>(j)][0] +
                   kKpNoise * static_cast<float>(rng.gaussian());
        float fy = plan.tmpl[static_cast<size_t>(j)][1] +
                   kKpNoise * static_cast<float>(rng.gaussian());
        person.kps.joints[static_cast<size_t>(j)] = {
            std::clamp(person.box.x1 + fx * plan.w, 0.002f, 0.998f),
            std::clamp(person.box.y1 + fy * plan.h, 0.002f, 0.998f),
            static_cast<float>(rng.uniform(0.7, 1.0))};
      }
      float hcx = cx + plan.hand_dxf * plan.w / 2;
      float hcy = plan.cy + plan.hand_dyf * plan.h / 2;
      float wrist_conf_lo = plan.suppress_wrists ? 0.05f : 0.7f;
      float wrist_conf_hi = plan.suppress_wrists ? 0.25f : 1.0f;

      // the latent hand placement defines the label and the signature;
      // the emitted wrists are noisy observations of it
      Keypoints latent = person.kps;
      latent.joints[Keypoints::kLeftWrist] = {
          std::clamp(hcx - plan.hand_sw / 2, 0.002f, 0.998f),
          std::clamp(hcy - plan.hand_sh / 2, 0.002f, 0.998f), 1.0f};
      latent.joints[Keypoints::kRightWrist] = {
          std::clamp(hcx + plan.hand_sw / 2, 0.002f, 0.998f),
          std::clamp(hcy + plan.hand_sh / 2, 0.002f, 0.998f), 1.0f};
      person.hand_box = *hand_box(latent, geo.hand_margin, 0.0f);

      float wn = kWristNoiseFrac * spec.noise_sigma;
      for (int wj : {Keypoints::kLeftWrist, Keypoints::kRightWrist}) {
        const Joint& truth = latent.joints[static_cast<size_t>(wj)];
        person.kps.joints[static_cast<size_t>(wj)] = {
            std::clamp(truth.x + wn * static_cast<float>(rng.gaussian()), 0.002f, 0.998f),
            std::clamp(truth.y + wn * static_cast<float>(rng.gaussian()), 0.002f, 0.998f),
            static_cast<float>(rng.uniform(wrist_conf_lo, wrist_conf_hi))};
      }

      if (plan.hand_class >= 0) {
        // plant the class signature one cell beyond the hand box so every
        // bilinear sample interpolates inside the constant region
        BBox planted = BBox::make(person.hand_box.x1 - cellw, person.hand_box.y1 - cellh,
                                  person.hand_box.x2 + cellw, person.hand_box.y2 + cellh);
        for (int y = 0; y < H; ++y) {
          float ycen = (static_cast<float>(y) + 0.5f) * cellh;
          if (ycen < planted.y1 || ycen > planted.y2) continue;
          for (int x = 0; x < W; ++x) {
            float xcen = (static_cast<float>(x) + 0.5f) * cellw;
            if (xcen < planted.x1 || xcen > planted.x2) continue;
            for (int ch = kReservedChannels; ch < C; ++ch)
              gm(ch * H + y, x) += hand_signature_value(ch, plan.hand_class, geo);
          }
        }
      }
      frame.persons.push_back(std::move(person));
    }

    // objects: a couple overlapping a person with a solid score, one below
    // the score threshold and one with zero IoU to every person, so the
    // filter is always exercised from both sides
    int extra_valid = rng.uniform_int(0, 2);
    auto object_near_person = [&](float score_lo, float score_hi) {
      const auto& host = frame.persons[static_cast<size_t>(
          rng.uniform_int(0, static_cast<int>(frame.persons.size()) - 1))];
      float ox = static_cast<float>(rng.uniform(host.box.x1, host.box.x2));
      float oy = static_cast<float>(rng.uniform(host.box.y1, host.box.y2));
      float ow = static_cast<float>(rng.uniform(0.05, 0.15));
      float oh = static_cast<float>(rng.uniform(0.05, 0.15));
      return ScoredBox{BBox::make(ox - ow / 2, oy - oh / 2, ox + ow / 2, oy + oh / 2),
                       static_cast<float>(rng.uniform(score_lo, score_hi)),
                       rng.uniform_int(0, 9)};
    };
    for (int k = 0; k < extra_valid; ++k)
      frame.objects.push_back(object_near_person(0.30f, 0.95f));
    frame.objects.push_back(object_near_person(0.02f, 0.20f));  // fails the score rule

    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      float ow = static_cast<float>(rng.uniform(0.04, 0.10));
      float oh = static_cast<float>(rng.uniform(0.04, 0.10));
      float ox = static_cast<float>(rng.uniform(0.01, 0.99 - ow));
      float oy = static_cast<float>(rng.uniform(0.01, 0.99 - oh));
      ScoredBox cand{BBox::make(ox, oy, ox + ow, oy + oh),
                     static_cast<float>(rng.uniform(0.30, 0.95)), rng.uniform_int(0, 9)};
      bool disjoint = true;
      for (const auto& person : frame.persons)
        if (iou(cand.box, person.box) > 0) disjoint = false;
      if (disjoint) {
        frame.objects.push_back(cand);  // fails the person-overlap rule
        placed = true;
      }
    }
    if (!placed)
      throw std::invalid_argument("generate_clip: infeasible geometry, no person-free space");

    clip.frames.push_back(std::move(frame));
  }
  return clip;
}

OracleLabels oracle_label(const SyntheticClip& clip, int frame, int person, const TaskSpec& spec,
                          const GeometryConfig& geo) {
  const FrameTruth& f = clip.frames.at(static_cast<size_t>(frame));
  const PersonTruth& p = f.persons.at(static_cast<size_t>(person));
  OracleLabels out;

  if (spec.hand_classes > 0) {
    // the annotated hand box carries the latent hand placement; the
    // emitted wrists are noisy observations of it
    out.hand = quadrant_of(p.hand_box.cx() - p.box.cx(), p.hand_box.cy() - p.box.cy());
  }

  if (spec.pose_classes > 0) {
    double best = 1e30;
    for (int c = 0; c < spec.pose_classes; ++c) {
      auto tmpl = pose_template(c);
      double dist = 0;
      for (int j = 0; j < Keypoints::kJointCount; ++j) {
        if (j == Keypoints::kLeftWrist || j == Keypoints::kRightWrist) continue;
        const Joint& joint = p.kps.joints[static_cast<size_t>(j)];
        double fx = (joint.x - p.box.x1) / std::max(1e-6f, p.box.width());
        double fy = (joint.y - p.box.y1) / std::max(1e-6f, p.box.height());
        dist += (fx - tmpl[static_cast<size_t>(j)][0]) * (fx - tmpl[static_cast<size_t>(j)][0]) +
                (fy - tmpl[static_cast<size_t>(j)][1]) * (fy - tmpl[static_cast<size_t>(j)][1]);
      }
      if (dist < best) {
        best = dist;
        out.pose = c;
      }
    }
  }

  if (spec.temporal_classes > 0) {
    int t0 = std::max(0, frame - 1);
    int t1 = std::min(static_cast<int>(clip.frames.size()) - 1, frame + 1);
    float x0 = clip.frames[static_cast<size_t>(t0)].persons[static_cast<size_t>(person)].box.cx();
    float x1 = clip.frames[static_cast<size_t>(t1)].persons[static_cast<size_t>(person)].box.cx();
    double dx = static_cast<double>(x1) - x0;
    out.temporal = std::abs(dx) < kNeutralEps ? 1 : (dx > 0 ? 2 : 0);
  }
  return out;
}

SelectedEntities select_entities(const FrameTruth& frame, Mode mode, const SelectConfig& cfg,
                                 Rng* jitter_rng) {
  SelectedEntities out;
  for (const auto& p : frame.persons) {
    BBox box = p.box;
    if (mode == Mode::kTrain) {
      if (!jitter_rng)
        throw std::invalid_argument("select_entities: train mode needs a jitter rng");
      box = jitter_box(box, *jitter_rng, cfg.jitter);
    }
    out.person_boxes.push_back(box);
    auto hb = hand_box(p.kps, cfg.hand_margin, cfg.wrist_conf_floor);
    out.hand_boxes.push_back(hb.value_or(box));

    // pose tokens carry coordinates post-processed to match the annotated
    // person box
    Keypoints norm = p.kps;
    for (auto& j : norm.joints) {
      j.x = (j.x - p.box.x1) / std::max(1e-6f, p.box.width());
      j.y = (j.y - p.box.y1) / std::max(1e-6f, p.box.height());
    }
    out.keypoints.push_back(norm);
  }
  out.objects = filter_objects(frame.objects, out.person_boxes, cfg.score_thresh);
  return out;
}

// ---------------------------------------------------------------------------
// dataset io
// ---------------------------------------------------------------------------

namespace {

constexpr char kClipMagic[8] = {'H', 'I', 'T', 'C', 'L', 'I', 'P', '1'};

nlohmann::json box_json(const BBox& b) { return nlohmann::json::array({b.x1, b.y1, b.x2, b.y2}); }

BBox box_from(const nlohmann::json& j) {
  return BBox::make(j.at(0).get<float>(), j.at(1).get<float>(), j.at(2).get<float>(),
                    j.at(3).get<float>());
}

}  // namespace

void save_clip(const std::string& dir, const SyntheticClip& clip) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "clips");
  std::string base = (fs::path(dir) / "clips" / clip.clip_id).string();

  nlohmann::json manifest = nlohmann::json::array();
  uint64_t offset = 0;
  for (size_t t = 0; t < clip.frames.size(); ++t) {
    nlohmann::json entry;
    entry["name"] = "frame" + std::to_string(t) + ".grid";
    entry["shape"] = clip.frames[t].grid.shape();
    entry["offset"] = offset;
    manifest.push_back(entry);
    offset += static_cast<uint64_t>(clip.frames[t].grid.size()) * sizeof(float);
  }
  std::string mtext = manifest.dump();
  std::ofstream os(base + ".bin", std::ios::binary);
  if (!os) throw std::runtime_error("dataset: cannot write '" + base + ".bin'");
  os.write(kClipMagic, 8);
  detail::put_u32_le(os, static_cast<uint32_t>(mtext.size()));
  os.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
  for (const auto& f : clip.frames)
    os.write(reinterpret_cast<const char*>(f.grid.data()),
             static_cast<std::streamsize>(sizeof(float) * static_cast<size_t>(f.grid.size())));

  nlohmann::json side;
  side["clip_id"] = clip.clip_id;
  side["seed"] = clip.generator_seed;
  side["frames"] = nlohmann::json::array();
  for (const auto& f : clip.frames) {
    nlohmann::json jf;
    jf["persons"] = nlohmann::json::array();
    for (const auto& p : f.persons) {
      nlohmann::json jp;
      jp["box"] = box_json(p.box);
      jp["hand_box"] = box_json(p.hand_box);
      jp["hand_class"] = p.hand_class;
      jp["pose_class"] = p.pose_class;
      jp["temporal_class"] = p.temporal_class;
      nlohmann::json kps = nlohmann::json::array();
      for (const auto& j : p.kps.joints) kps.push_back({j.x, j.y, j.conf});
      jp["keypoints"] = kps;
      jf["persons"].push_back(jp);
    }
    jf["objects"] = nlohmann::json::array();
    for (const auto& o : f.objects)
      jf["objects"].push_back(
          {{"box", box_json(o.box)}, {"score", o.score}, {"category", o.category}});
    side["frames"].push_back(jf);
  }
  std::ofstream js(base + ".json");
  js << side.dump(2) << "\n";
}

SyntheticClip load_clip(const std::string& dir, const std::string& clip_id) {
  namespace fs = std::filesystem;
  std::string base = (fs::path(dir) / "clips" / clip_id).string();

  std::ifstream is(base + ".bin", std::ios::binary);
  if (!is) throw std::runtime_error("dataset: cannot open '" + base + ".bin'");
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kClipMagic, 8) != 0)
    throw std::runtime_error("dataset: bad magic in '" + base + ".bin'");
  uint32_t mlen = detail::get_u32_le(is);
  std::string mtext(mlen, '\0');
  is.read(mtext.data(), mlen);
  nlohmann::json manifest = nlohmann::json::parse(mtext);
  std::streampos blob_start = is.tellg();

  std::ifstream js(base + ".json");
  if (!js) throw std::runtime_error("dataset: cannot open '" + base + ".json'");
  nlohmann::json side = nlohmann::json::parse(js);

  SyntheticClip clip;
  clip.clip_id = side.at("clip_id").get<std::string>();
  clip.generator_seed = side.at("seed").get<uint64_t>();
  for (size_t t = 0; t < manifest.size(); ++t) {
    const auto& entry = manifest.at(t);
    Shape shape = entry.at("shape").get<Shape>();
    TensorF grid(shape);
    is.seekg(blob_start + static_cast<std::streamoff>(entry.at("offset").get<uint64_t>()));
    is.read(reinterpret_cast<char*>(grid.data()),
            static_cast<std::streamsize>(sizeof(float) * static_cast<size_t>(grid.size())));
    if (!is) throw std::runtime_error("dataset: truncated blob in '" + base + ".bin'");

    FrameTruth frame;
    frame.grid = std::move(grid);
    const auto& jf = side.at("frames").at(t);
    for (const auto& jp : jf.at("persons")) {
      PersonTruth p;
      p.box = box_from(jp.at("box"));
      p.hand_box = box_from(jp.at("hand_box"));
      p.hand_class = jp.at("hand_class").get<int>();
      p.pose_class = jp.at("pose_class").get<int>();
      p.temporal_class = jp.at("temporal_class").get<int>();
      for (int j = 0; j < Keypoints::kJointCount; ++j) {
        const auto& jj = jp.at("keypoints").at(static_cast<size_t>(j));
        p.kps.joints[static_cast<size_t>(j)] = {jj.at(0).get<float>(), jj.at(1).get<float>(),
                                                jj.at(2).get<float>()};
      }
      frame.persons.push_back(std::move(p));
    }
    for (const auto& jo : jf.at("objects"))
      frame.objects.push_back(
          {box_from(jo.at("box")), jo.at("score").get<float>(), jo.at("category").get<int>()});
    clip.frames.push_back(std::move(frame));
  }
  return clip;
}

Dataset build_dataset(const TaskSpec& spec, const GeometryConfig& geo, uint64_t seed, int count,
                      const std::string& prefix) {
  Dataset ds;
  ds.spec = spec;
  ds.geo = geo;
  ds.seed = seed;
  for (int i = 0; i < count; ++i) {
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "%s_%04d", prefix.c_str(), i);
    ds.clips.push_back(
        generate_clip(mix_seed(seed, std::string(idbuf)), spec, geo, idbuf));
  }
  return ds;
}

void save_dataset(const std::string& dir, const Dataset& ds) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json index;
  index["seed"] = ds.seed;
  index["task"] = {{"hand_classes", ds.spec.hand_classes},
                   {"pose_classes", ds.spec.pose_classes},
                   {"temporal_classes", ds.spec.temporal_classes},
                   {"noise_sigma", ds.spec.noise_sigma},
                   {"wrist_suppress_prob", ds.spec.wrist_suppress_prob}};
  index["geometry"] = {{"channels", ds.geo.channels}, {"height", ds.geo.height},
                       {"width", ds.geo.width},       {"frames", ds.geo.frames},
                       {"max_persons", ds.geo.max_persons}, {"hand_margin", ds.geo.hand_margin}};
  index["clips"] = nlohmann::json::array();
  for (const auto& c : ds.clips) index["clips"].push_back(c.clip_id);
  std::ofstream os((fs::path(dir) / "dataset.json").string());
  os << index.dump(2) << "\n";
  for (const auto& c : ds.clips) save_clip(dir, c);
}

Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream is((fs::path(dir) / "dataset.json").string());
  if (!is) throw std::runtime_error("dataset: cannot open '" + dir + "/dataset.json'");
  nlohmann::json index = nlohmann::json::parse(is);
  Dataset ds;
  ds.seed = index.at("seed").get<uint64_t>();
  const auto& jt = index.at("task");
  ds.spec.hand_classes = jt.at("hand_classes").get<int>();
  ds.spec.pose_classes = jt.at("pose_classes").get<int>();
  ds.spec.temporal_classes = jt.at("temporal_classes").get<int>();
  ds.spec.noise_sigma = jt.at("noise_sigma").get<float>();
  ds.spec.wrist_suppress_prob = jt.at("wrist_suppress_prob").get<float>();
  const auto& jg = index.at("geometry");
  ds.geo.channels = jg.at("channels").get<int>();
  ds.geo.height = jg.at("height").get<int>();
  ds.geo.width = jg.at("width").get<int>();
  ds.geo.frames = jg.at("frames").get<int>();
  ds.geo.max_persons = jg.at("max_persons").get<int>();
  ds.geo.hand_margin = jg.at("hand_margin").get<float>();
  for (const auto& id : index.at("clips"))
    ds.clips.push_back(load_clip(dir, id.get<std::string>()));
  return ds;
}

}  // namespace hit
