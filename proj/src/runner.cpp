#include "hit/harness.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace hit {

namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

void echo_config(const RunConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  std::ofstream os(fs::path(cfg.output_dir) / "config.resolved.json");
  os << config_to_json(cfg).dump(2) << "\n";
}

struct Sgd {
  double momentum;
  std::map<std::string, Matrix<float>> velocity;

  void step(ParamSetT<float>& params, const std::map<std::string, TensorF>& grads, double lr) {
    for (auto& [name, value] : params.values) {
      const auto& g = grads.at(name).mat();
      auto [it, fresh] = velocity.try_emplace(name, Matrix<float>::Zero(g.rows(), g.cols()));
      it->second = static_cast<float>(momentum) * it->second + g;
      value.mat() -= static_cast<float>(lr) * it->second;
    }
  }
};

void check_dataset_matches(const Dataset& ds, const RunConfig& cfg, const std::string& which) {
  const TaskSpec& a = ds.spec;
  const TaskSpec& b = cfg.data.task;
  if (a.hand_classes != b.hand_classes || a.pose_classes != b.pose_classes ||
      a.temporal_classes != b.temporal_classes || a.noise_sigma != b.noise_sigma ||
      ds.geo.frames != cfg.data.geometry.frames || ds.geo.channels != cfg.data.geometry.channels)
    throw std::runtime_error("dataset: '" + which +
                             "' on disk was generated with a different task or geometry");
}

// global class ids of one person's ground-truth labels, per label group
std::vector<int> person_class_ids(const PersonTruth& person, const RunConfig& cfg) {
  PersonTargets t = person_targets(person, cfg.data.task);
  std::vector<int> ids;
  size_t si = 0;
  for (const auto& g : cfg.label_groups.groups) {
    if (g.activation == "softmax") {
      ids.push_back(g.start + t.softmax_index.at(si));
      ++si;
    }
  }
  return ids;
}

}  // namespace

double lr_at(const OptimConfig& opt, int iter) {
  double lr = opt.lr;
  if (opt.warmup_iters > 0 && iter < opt.warmup_iters)
    lr = opt.lr * static_cast<double>(iter + 1) / static_cast<double>(opt.warmup_iters);
  for (int m : opt.milestones)
    if (iter >= m) lr *= 0.1;
  return lr;
}

double EvalOutcome::range_map(int start, int size) const {
  double acc = 0;
  int n = 0;
  for (const auto& [cls, ap] : frame.per_class) {
    if (cls < start || cls >= start + size) continue;
    acc += ap.ap;
    ++n;
  }
  return n == 0 ? 0.0 : acc / n;
}

DataBundle prepare_data(const RunConfig& cfg) {
  DataBundle out;
  if (!cfg.data.dataset_dir.empty()) {
    std::string train_dir = (fs::path(cfg.data.dataset_dir) / "train").string();
    std::string eval_dir = (fs::path(cfg.data.dataset_dir) / "eval").string();
    if (fs::exists(fs::path(train_dir) / "dataset.json")) {
      out.train = load_dataset(train_dir);
      out.eval = load_dataset(eval_dir);
      check_dataset_matches(out.train, cfg, "train");
      check_dataset_matches(out.eval, cfg, "eval");
      return out;
    }
    out.train = build_dataset(cfg.data.task, cfg.data.geometry, cfg.data.seed,
                              cfg.data.train_clips, "train");
    out.eval = build_dataset(cfg.data.task, cfg.data.geometry, mix_seed(cfg.data.seed, "eval"),
                             cfg.data.eval_clips, "eval");
    save_dataset(train_dir, out.train);
    save_dataset(eval_dir, out.eval);
    return out;
  }
  out.train = build_dataset(cfg.data.task, cfg.data.geometry, cfg.data.seed,
                            cfg.data.train_clips, "train");
  out.eval = build_dataset(cfg.data.task, cfg.data.geometry, mix_seed(cfg.data.seed, "eval"),
                           cfg.data.eval_clips, "eval");
  return out;
}

TrainResult train_model(const RunConfig& cfg, HitModel<float>& model, const Dataset& train_set) {
  require_task_coherence(cfg);
  if (train_set.clips.empty()) throw std::invalid_argument("train: empty dataset");

  MemoryPoolT<float> pool(cfg.model.memory_span);
  Sgd opt{cfg.optimizer.momentum, {}};
  Rng order_rng(mix_seed(cfg.data.seed, "batch_order"));
  Rng jitter_rng(mix_seed(cfg.data.seed, "jitter"));

  TrainResult result;
  auto start = Clock::now();
  for (int iter = 0; iter < cfg.optimizer.iterations; ++iter) {
    double lr = lr_at(cfg.optimizer, iter);
    try {
      GraphF g;
      BoundParams<float> bp(g, model.params());
      VarF total;
      for (int b = 0; b < cfg.optimizer.batch_size; ++b) {
        const SyntheticClip& clip = train_set.clips[static_cast<size_t>(
            order_rng.uniform_int(0, static_cast<int>(train_set.clips.size()) - 1))];
        VarF loss = clip_loss(model, g, bp, clip, pool, Mode::kTrain, &jitter_rng);
        total = total.valid() ? add(total, loss) : loss;
      }
      VarF loss = scale(total, 1.0f / static_cast<float>(cfg.optimizer.batch_size));
      double loss_value = static_cast<double>(loss.value().item());
      g.backward(loss);
      opt.step(model.params(), bp.collect_grads(), lr);
      pool.commit();
      result.log.push_back({iter, loss_value, lr, ms_since(start)});
    } catch (const std::exception& e) {
      throw std::runtime_error("train: aborted at iteration " + std::to_string(iter) + ": " +
                               e.what());
    }
  }
  return result;
}

EvalOutcome evaluate_model(const RunConfig& cfg, HitModel<float>& model,
                           const Dataset& eval_set) {
  require_task_coherence(cfg);
  auto start = Clock::now();
  EvalOutcome out;

  // pass 1: prefill the memory pool so windows include future frames
  MemoryPoolT<float> pool(cfg.model.memory_span);
  if (cfg.model.unit_temporal) {
    for (const auto& clip : eval_set.clips)
      for (size_t t = 0; t < clip.frames.size(); ++t)
        if (!clip.frames[t].persons.empty())
          pool.write_value(clip.clip_id, static_cast<int>(t),
                           model.person_input_rows(clip.frames[t]));
  }

  int num_classes = cfg.label_groups.total_classes();
  std::vector<Detection> dets;
  std::vector<GtBox> gts;
  std::vector<Tube> pred_tubes, gt_tubes;

  for (const auto& clip : eval_set.clips) {
    GraphF g;
    BoundParams<float> bp(g, model.params());
    // per (person, class) running score sums for tube construction
    std::vector<std::vector<double>> score_sum;
    std::vector<std::vector<std::pair<int, BBox>>> person_boxes;
    std::vector<std::vector<int>> person_classes;
    int scored_frames = 0;

    for (size_t t = 0; t < clip.frames.size(); ++t) {
      const FrameTruth& frame = clip.frames[t];
      if (frame.persons.empty()) continue;
      auto window = cfg.model.unit_temporal
                        ? pool.read_var(g, clip.clip_id, static_cast<int>(t),
                                        cfg.model.memory_span)
                        : std::nullopt;
      auto fwd = model.forward_frame(g, bp, frame, window, Mode::kEval, nullptr);
      TensorF scores = activate(fwd.logits.value(), cfg.label_groups);
      ++scored_frames;
      ++out.frames_evaluated;

      if (score_sum.empty()) {
        score_sum.assign(frame.persons.size(), std::vector<double>(num_classes, 0.0));
        person_boxes.assign(frame.persons.size(), {});
        person_classes.assign(frame.persons.size(), {});
      }
      FrameKey key{clip.clip_id, static_cast<int>(t)};
      for (size_t i = 0; i < frame.persons.size(); ++i) {
        const BBox& box = fwd.sel.person_boxes[i];
        for (int c = 0; c < num_classes; ++c) {
          double s = scores.mat()(static_cast<Eigen::Index>(i), c);
          dets.push_back({key, box, c, s});
          score_sum[i][static_cast<size_t>(c)] += s;
        }
        for (int cls : person_class_ids(frame.persons[i], cfg)) {
          gts.push_back({key, box, cls});
          if (person_classes[i].empty() ||
              std::find(person_classes[i].begin(), person_classes[i].end(), cls) ==
                  person_classes[i].end())
            person_classes[i].push_back(cls);
        }
        person_boxes[i].push_back({static_cast<int>(t), box});
      }
    }

    // tubes over the ground-truth temporal extents; class score = mean
    // frame score
    for (size_t i = 0; i < score_sum.size(); ++i) {
      for (int c = 0; c < num_classes; ++c) {
        Tube tube{clip.clip_id, c, score_sum[i][static_cast<size_t>(c)] / scored_frames,
                  person_boxes[i]};
        pred_tubes.push_back(std::move(tube));
      }
      for (int cls : person_classes[i])
        gt_tubes.push_back({clip.clip_id, cls, 1.0, person_boxes[i]});
    }
  }

  out.frame = frame_map(dets, gts, cfg.eval.frame_iou);
  for (double thresh : cfg.eval.video_ious)
    out.video.emplace(thresh, video_map(pred_tubes, gt_tubes, thresh));
  out.elapsed_ms = ms_since(start);
  return out;
}

TrainResult run_train(const RunConfig& cfg) {
  echo_config(cfg);
  DataBundle data = prepare_data(cfg);
  HitModel<float> model(cfg);
  TrainResult result = train_model(cfg, model, data.train);

  std::ofstream log(fs::path(cfg.output_dir) / "train.log.jsonl");
  for (const auto& e : result.log) {
    nlohmann::json j{{"iter", e.iter}, {"loss", e.loss}, {"lr", e.lr},
                     {"elapsed_ms", e.elapsed_ms}};
    log << j.dump() << "\n";
  }
  result.checkpoint_path = (fs::path(cfg.output_dir) / "model.hitckpt").string();
  save_checkpoint(result.checkpoint_path, model.params());
  return result;
}

void load_into_model(HitModel<float>& model, const std::string& checkpoint_path) {
  ParamSetT<float> loaded = load_checkpoint(checkpoint_path);
  auto& dst = model.params();
  for (const auto& [name, value] : dst.values) {
    auto it = loaded.values.find(name);
    if (it == loaded.values.end())
      throw std::runtime_error("checkpoint: parameter '" + name +
                               "' required by the config is missing from '" + checkpoint_path +
                               "'");
    if (it->second.shape() != value.shape())
      throw std::runtime_error("checkpoint: parameter '" + name + "' has shape " +
                               shape_str(it->second.shape()) + " but the config expects " +
                               shape_str(value.shape()));
  }
  for (const auto& [name, value] : loaded.values)
    if (!dst.contains(name))
      throw std::runtime_error("checkpoint: parameter '" + name +
                               "' is not part of the configured model");
  for (auto& [name, value] : dst.values) value = loaded.at(name);
}

EvalOutcome run_eval(const RunConfig& cfg, const std::string& checkpoint_path) {
  echo_config(cfg);
  DataBundle data = prepare_data(cfg);
  HitModel<float> model(cfg);
  load_into_model(model, checkpoint_path);
  EvalOutcome out = evaluate_model(cfg, model, data.eval);

  nlohmann::json j;
  j["frame"] = report_to_json(out.frame);
  j["video"] = nlohmann::json::object();
  for (const auto& [thresh, report] : out.video) {
    char key[32];
    std::snprintf(key, sizeof(key), "%g", thresh);
    j["video"][key] = report_to_json(report);
  }
  j["timing"] = {{"elapsed_ms", out.elapsed_ms},
                 {"frames_per_s", out.frames_evaluated / (out.elapsed_ms / 1000.0)}};
  std::ofstream os(fs::path(cfg.output_dir) / "eval.eval.json");
  os << j.dump(2) << "\n";
  return out;
}

GradReport gradcheck_float_model(const RunConfig& cfg, const SyntheticClip& clip,
                                 const GradCheckOptions& opt, uint64_t point_seed) {
  HitModel<float> fmodel(cfg);
  perturb_params(fmodel.params(), kGradcheckPointAmp, point_seed);
  std::map<std::string, TensorF> analytic;
  {
    GraphF g;
    BoundParams<float> bp(g, fmodel.params());
    MemoryPoolT<float> pool(cfg.model.memory_span);
    VarF loss = clip_loss(fmodel, g, bp, clip, pool, Mode::kEval, nullptr);
    g.backward(loss);
    analytic = bp.collect_grads();
  }
  HitModel<double> dmodel(cfg);
  auto f = [&](ParamSetT<float>& p) -> double {
    for (auto& [name, value] : dmodel.params().values)
      value = p.at(name).cast<double>();
    GraphD g;
    BoundParams<double> bp(g, dmodel.params());
    MemoryPoolT<double> pool(cfg.model.memory_span);
    return clip_loss(dmodel, g, bp, clip, pool, Mode::kEval, nullptr).value().item();
  };
  return finite_diff_check(f, fmodel.params(), analytic, opt);
}

GradReport run_gradcheck(const RunConfig& cfg, bool write_report) {
  // forced small instance: at most 2 persons and 4 keyframes, label groups
  // aligned with the task so every head parameter participates
  RunConfig gc = cfg;
  gc.data.geometry.frames = std::min(gc.data.geometry.frames, 4);
  gc.data.geometry.max_persons = std::min(gc.data.geometry.max_persons, 2);
  gc.label_groups = task_label_groups(gc.data.task);
  SyntheticClip clip = generate_clip(mix_seed(gc.data.seed, "gradcheck"), gc.data.task,
                                     gc.data.geometry, "gradcheck");

  uint64_t point_seed = mix_seed(gc.data.seed, "gcpoint");
  GradCheckOptions opt64;
  opt64.h = 1e-4;
  opt64.tol = 1e-4;
  opt64.max_coords_per_tensor = 32;
  opt64.seed = mix_seed(gc.data.seed, "gc64");
  GradReport r64 = gradcheck_model<double>(gc, clip, opt64, point_seed);

  GradCheckOptions opt32;
  opt32.h = 1e-3;
  opt32.tol = 5e-2;
  opt32.max_coords_per_tensor = 32;
  opt32.seed = mix_seed(gc.data.seed, "gc32");
  GradReport r32 = gradcheck_float_model(gc, clip, opt32, point_seed);

  GradReport merged;
  merged.tolerance = opt64.tol;
  merged.pass = r64.pass && r32.pass;
  for (auto& row : r64.rows) {
    row.name = "fp64/" + row.name;
    merged.rows.push_back(std::move(row));
  }
  for (auto& row : r32.rows) {
    row.name = "fp32/" + row.name;
    merged.rows.push_back(std::move(row));
  }

  if (write_report) {
    echo_config(cfg);
    nlohmann::json j;
    j["pass"] = merged.pass;
    j["modes"] = {{"fp64", {{"tolerance", opt64.tol}, {"h", opt64.h}, {"pass", r64.pass}}},
                  {"fp32", {{"tolerance", opt32.tol}, {"h", opt32.h}, {"pass", r32.pass}}}};
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : merged.rows) {
      nlohmann::json samples = nlohmann::json::array();
      for (const auto& s : row.samples)
        samples.push_back({{"coord", s.coord},
                           {"analytic", s.analytic},
                           {"numeric", s.numeric},
                           {"rel_err", s.rel_err}});
      rows.push_back({{"name", row.name},
                      {"coords_checked", row.coords_checked},
                      {"rel_err", row.rel_err},
                      {"h_used", row.h_used},
                      {"max_coord_rel_err", row.max_coord_rel_err},
                      {"pass", row.pass},
                      {"samples", samples}});
    }
    j["parameters"] = rows;
    std::ofstream os(fs::path(cfg.output_dir) / "gradcheck.json");
    os << j.dump(2) << "\n";
  }
  return merged;
}

std::string run_ablate(const RunConfig& cfg, const std::string& grid) {
  echo_config(cfg);
  struct Variant {
    std::string name;
    RunConfig cfg;
  };
  std::vector<Variant> variants;
  auto base = cfg;

  if (grid == "fusion") {
    for (const char* mode : {"sum", "concat", "weighted_sum", "average", "afm"}) {
      auto v = base;
      v.model.fusion_mode = mode;
      variants.push_back({std::string(mode), v});
    }
  } else if (grid == "depth") {
    for (int depth : {1, 2, 3}) {
      auto v = base;
      v.model.depth = depth;
      variants.push_back({std::to_string(depth) + "_layers", v});
    }
  } else if (grid == "placement") {
    for (const char* p : {"after", "before"}) {
      auto v = base;
      v.model.fusion_placement = p;
      variants.push_back({std::string(p) + "_temporal_interaction", v});
    }
  } else if (grid == "ima") {
    auto off = base;
    off.model.ima = "off";
    variants.push_back({"without_ima", off});
    variants.push_back({"with_ima", base});
  } else if (grid == "units") {
    // hands / objects / temporal on-off rows
    const int rows[7][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 0, 1},
                            {1, 1, 0}, {0, 1, 1}, {1, 1, 1}};
    for (const auto& r : rows) {
      auto v = base;
      v.model.unit_hands = r[0];
      v.model.unit_objects = r[1];
      v.model.unit_temporal = r[2];
      std::string name = std::string(r[0] ? "hands" : "") + (r[1] ? "+objects" : "") +
                         (r[2] ? "+temporal" : "");
      if (!name.empty() && name[0] == '+') name = name.substr(1);
      variants.push_back({name, v});
    }
  } else if (grid == "modality") {
    // hands / rgb / pose rows; the bare row is the no-interaction baseline
    const int rows[7][3] = {{0, 0, 0}, {0, 1, 0}, {0, 1, 1}, {0, 0, 1},
                            {1, 1, 0}, {1, 0, 1}, {1, 1, 1}};
    for (const auto& r : rows) {
      auto v = base;
      v.model.unit_hands = r[0];
      v.model.unit_rgb = r[1];
      v.model.unit_pose = r[2];
      if (!r[1] && !r[2]) {
        v.model.unit_objects = false;
        v.model.unit_temporal = false;
      }
      std::string name = std::string(r[0] ? "hands" : "") + (r[1] ? "+rgb" : "") +
                         (r[2] ? "+pose" : "");
      if (name.empty()) name = "baseline";
      if (name[0] == '+') name = name.substr(1);
      variants.push_back({name, v});
    }
  } else {
    throw std::invalid_argument(
        "ablate: unknown grid '" + grid +
        "' (expected fusion | depth | placement | ima | units | modality)");
  }

  // one shared dataset: every variant trains and evaluates on the same
  // clips
  DataBundle data = prepare_data(cfg);

  std::string csv_path = (fs::path(cfg.output_dir) / ("ablation." + grid + ".csv")).string();
  std::ofstream csv(csv_path);
  csv << "variant,frame_map,hand_map,pose_map,temporal_map\n";
  const TaskSpec& task = cfg.data.task;
  for (const auto& variant : variants) {
    HitModel<float> model(variant.cfg);
    train_model(variant.cfg, model, data.train);
    EvalOutcome out = evaluate_model(variant.cfg, model, data.eval);
    char line[256];
    std::snprintf(line, sizeof(line), "%s,%.4f,%.4f,%.4f,%.4f\n", variant.name.c_str(),
                  out.frame.map, out.range_map(0, task.hand_classes),
                  out.range_map(task.pose_class_base(), task.pose_classes),
                  out.range_map(task.temporal_class_base(), task.temporal_classes));
    csv << line;
  }
  return csv_path;
}

}  // namespace hit
