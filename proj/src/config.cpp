#include "hit/config.hpp"

#include <cstdlib>
#include <sstream>

namespace hit {

namespace {

nlohmann::json label_groups_json(const LabelGroups& lg) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& g : lg.groups)
    arr.push_back({{"name", g.name},
                   {"size", g.size},
                   {"activation", g.activation},
                   {"is_pose", g.is_pose},
                   {"start", g.start}});
  return arr;
}

LabelGroups label_groups_from(const nlohmann::json& arr) {
  std::vector<LabelGroup> gs;
  for (const auto& j : arr) {
    LabelGroup g;
    g.name = j.at("name").get<std::string>();
    g.size = j.at("size").get<int>();
    g.activation = j.at("activation").get<std::string>();
    g.is_pose = j.value("is_pose", false);
    gs.push_back(g);
  }
  return LabelGroups::make(std::move(gs));
}

void merge(nlohmann::json& base, const nlohmann::json& over) {
  if (!over.is_object() || !base.is_object()) {
    base = over;
    return;
  }
  for (auto it = over.begin(); it != over.end(); ++it) {
    if (!base.contains(it.key()))
      throw std::invalid_argument("config: unknown field '" + it.key() + "'");
    merge(base[it.key()], it.value());
  }
}

nlohmann::json parse_value(const std::string& text) {
  auto parsed = nlohmann::json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (!parsed.is_discarded()) return parsed;
  return nlohmann::json(text);  // bare string
}

}  // namespace

RunConfig default_config() {
  RunConfig cfg;
  // the default grouping is the 80-class pose / person-interaction /
  // object-interaction split
  cfg.label_groups = LabelGroups::make({{"pose", 14, "softmax", true, 0},
                                        {"person_interaction", 49, "sigmoid", false, 0},
                                        {"object_interaction", 17, "sigmoid", false, 0}});
  return cfg;
}

nlohmann::json config_to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["model"] = {{"d", cfg.model.d},
                {"d_p", cfg.model.d_p},
                {"heads", cfg.model.heads},
                {"depth", cfg.model.depth},
                {"pose_blocks", cfg.model.pose_blocks},
                {"memory_span", cfg.model.memory_span},
                {"roi_size", cfg.model.roi_size},
                {"theta_init", cfg.model.theta_init},
                {"ima", cfg.model.ima},
                {"fusion_mode", cfg.model.fusion_mode},
                {"fusion_placement", cfg.model.fusion_placement},
                {"units",
                 {{"objects", cfg.model.unit_objects},
                  {"hands", cfg.model.unit_hands},
                  {"temporal", cfg.model.unit_temporal},
                  {"rgb", cfg.model.unit_rgb},
                  {"pose", cfg.model.unit_pose}}},
                {"hand_margin", cfg.model.hand_margin},
                {"wrist_conf_floor", cfg.model.wrist_conf_floor}};
  j["data"] = {{"task",
                {{"hand_classes", cfg.data.task.hand_classes},
                 {"pose_classes", cfg.data.task.pose_classes},
                 {"temporal_classes", cfg.data.task.temporal_classes},
                 {"noise_sigma", cfg.data.task.noise_sigma},
                 {"wrist_suppress_prob", cfg.data.task.wrist_suppress_prob}}},
               {"geometry",
                {{"channels", cfg.data.geometry.channels},
                 {"height", cfg.data.geometry.height},
                 {"width", cfg.data.geometry.width},
                 {"frames", cfg.data.geometry.frames},
                 {"max_persons", cfg.data.geometry.max_persons}}},
               {"train_clips", cfg.data.train_clips},
               {"eval_clips", cfg.data.eval_clips},
               {"seed", cfg.data.seed},
               {"dataset_dir", cfg.data.dataset_dir},
               {"object_score_thresh", cfg.data.object_score_thresh},
               {"jitter", cfg.data.jitter}};
  j["optimizer"] = {{"lr", cfg.optimizer.lr},
                    {"momentum", cfg.optimizer.momentum},
                    {"warmup_iters", cfg.optimizer.warmup_iters},
                    {"milestones", cfg.optimizer.milestones},
                    {"iterations", cfg.optimizer.iterations},
                    {"batch_size", cfg.optimizer.batch_size}};
  j["eval"] = {{"frame_iou", cfg.eval.frame_iou}, {"video_ious", cfg.eval.video_ious}};
  j["label_groups"] = label_groups_json(cfg.label_groups);
  j["output_dir"] = cfg.output_dir;
  return j;
}

RunConfig resolve_config(const nlohmann::json& overrides) {
  nlohmann::json j = config_to_json(default_config());
  merge(j, overrides);

  RunConfig cfg;
  const auto& m = j.at("model");
  cfg.model.d = m.at("d").get<Eigen::Index>();
  cfg.model.d_p = m.at("d_p").get<Eigen::Index>();
  cfg.model.heads = m.at("heads").get<int>();
  cfg.model.depth = m.at("depth").get<int>();
  cfg.model.pose_blocks = m.at("pose_blocks").get<int>();
  cfg.model.memory_span = m.at("memory_span").get<int>();
  cfg.model.roi_size = m.at("roi_size").get<Eigen::Index>();
  cfg.model.theta_init = m.at("theta_init").get<double>();
  cfg.model.ima = m.at("ima").get<std::string>();
  cfg.model.fusion_mode = m.at("fusion_mode").get<std::string>();
  cfg.model.fusion_placement = m.at("fusion_placement").get<std::string>();
  cfg.model.unit_objects = m.at("units").at("objects").get<bool>();
  cfg.model.unit_hands = m.at("units").at("hands").get<bool>();
  cfg.model.unit_temporal = m.at("units").at("temporal").get<bool>();
  cfg.model.unit_rgb = m.at("units").at("rgb").get<bool>();
  cfg.model.unit_pose = m.at("units").at("pose").get<bool>();
  cfg.model.hand_margin = m.at("hand_margin").get<float>();
  cfg.model.wrist_conf_floor = m.at("wrist_conf_floor").get<float>();

  const auto& d = j.at("data");
  cfg.data.task.hand_classes = d.at("task").at("hand_classes").get<int>();
  cfg.data.task.pose_classes = d.at("task").at("pose_classes").get<int>();
  cfg.data.task.temporal_classes = d.at("task").at("temporal_classes").get<int>();
  cfg.data.task.noise_sigma = d.at("task").at("noise_sigma").get<float>();
  cfg.data.task.wrist_suppress_prob = d.at("task").at("wrist_suppress_prob").get<float>();
  cfg.data.geometry.channels = d.at("geometry").at("channels").get<int>();
  cfg.data.geometry.height = d.at("geometry").at("height").get<int>();
  cfg.data.geometry.width = d.at("geometry").at("width").get<int>();
  cfg.data.geometry.frames = d.at("geometry").at("frames").get<int>();
  cfg.data.geometry.max_persons = d.at("geometry").at("max_persons").get<int>();
  cfg.data.geometry.hand_margin = cfg.model.hand_margin;  // single source
  cfg.data.train_clips = d.at("train_clips").get<int>();
  cfg.data.eval_clips = d.at("eval_clips").get<int>();
  cfg.data.seed = d.at("seed").get<uint64_t>();
  cfg.data.dataset_dir = d.at("dataset_dir").get<std::string>();
  cfg.data.object_score_thresh = d.at("object_score_thresh").get<float>();
  cfg.data.jitter = d.at("jitter").get<float>();

  const auto& o = j.at("optimizer");
  cfg.optimizer.lr = o.at("lr").get<double>();
  cfg.optimizer.momentum = o.at("momentum").get<double>();
  cfg.optimizer.warmup_iters = o.at("warmup_iters").get<int>();
  cfg.optimizer.milestones = o.at("milestones").get<std::vector<int>>();
  cfg.optimizer.iterations = o.at("iterations").get<int>();
  cfg.optimizer.batch_size = o.at("batch_size").get<int>();

  cfg.eval.frame_iou = j.at("eval").at("frame_iou").get<double>();
  cfg.eval.video_ious = j.at("eval").at("video_ious").get<std::vector<double>>();
  cfg.label_groups = label_groups_from(j.at("label_groups"));
  cfg.output_dir = j.at("output_dir").get<std::string>();

  validate_config(cfg);
  return cfg;
}

RunConfig resolve_config_file(const std::string& path, const std::vector<std::string>& dotted,
                              std::optional<uint64_t> seed_override) {
  nlohmann::json overrides = nlohmann::json::object();
  if (!path.empty()) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open '" + path + "'");
    overrides = nlohmann::json::parse(is);
  }
  for (const std::string& kv : dotted) {
    auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: override '" + kv + "' is not key.path=value");
    std::string key = kv.substr(0, eq);
    nlohmann::json value = parse_value(kv.substr(eq + 1));
    nlohmann::json* node = &overrides;
    std::istringstream ks(key);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ks, part, '.')) parts.push_back(part);
    if (parts.empty()) throw std::invalid_argument("config: empty override key");
    for (size_t i = 0; i + 1 < parts.size(); ++i) node = &(*node)[parts[i]];
    (*node)[parts.back()] = value;
  }
  if (seed_override) overrides["data"]["seed"] = *seed_override;
  return resolve_config(overrides);
}

void validate_config(const RunConfig& cfg) {
  if (cfg.model.depth < 1) throw std::invalid_argument("config: model.depth must be >= 1");
  if (cfg.model.memory_span < 0)
    throw std::invalid_argument("config: model.memory_span must be >= 0");
  if (cfg.model.heads < 1) throw std::invalid_argument("config: model.heads must be >= 1");
  if (cfg.model.ima != "fresh" && cfg.model.ima != "cached" && cfg.model.ima != "off")
    throw std::invalid_argument("config: model.ima must be fresh | cached | off");
  if (cfg.model.fusion_placement != "before" && cfg.model.fusion_placement != "after")
    throw std::invalid_argument("config: model.fusion_placement must be before | after");
  if (cfg.eval.frame_iou <= 0 || cfg.eval.frame_iou > 1)
    throw std::invalid_argument("config: eval.frame_iou must be in (0, 1]");
  for (double t : cfg.eval.video_ious)
    if (t <= 0 || t > 1)
      throw std::invalid_argument("config: eval.video_ious must be in (0, 1]");
  if (cfg.data.object_score_thresh < 0 || cfg.data.object_score_thresh > 1)
    throw std::invalid_argument("config: data.object_score_thresh must be in [0, 1]");
  if (cfg.optimizer.iterations < 0 || cfg.optimizer.batch_size < 1)
    throw std::invalid_argument("config: bad optimizer schedule");
  if (cfg.label_groups.groups.empty())
    throw std::invalid_argument("config: label_groups must not be empty");
}

void require_task_coherence(const RunConfig& cfg) {
  int want = cfg.data.task.total_classes();
  int have = cfg.label_groups.total_classes();
  if (want != have)
    throw std::invalid_argument("config: label groups cover " + std::to_string(have) +
                                " classes but the synthetic task emits " + std::to_string(want) +
                                "; override label_groups to match the task");
  LabelGroups expect = task_label_groups(cfg.data.task);
  if (expect.groups.size() != cfg.label_groups.groups.size())
    throw std::invalid_argument("config: label group count does not match the task kinds");
  for (size_t i = 0; i < expect.groups.size(); ++i) {
    if (expect.groups[i].size != cfg.label_groups.groups[i].size ||
        cfg.label_groups.groups[i].activation != "softmax")
      throw std::invalid_argument("config: label group '" + cfg.label_groups.groups[i].name +
                                  "' does not match the synthetic task layout");
  }
}

}  // namespace hit
