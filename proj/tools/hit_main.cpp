#include "hit/harness.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <optional>

namespace {

// flags of the form --key.path=value override resolved config fields
std::vector<std::string> dotted_overrides(const std::vector<std::string>& extras) {
  std::vector<std::string> out;
  for (const auto& e : extras) {
    if (e.rfind("--", 0) != 0 || e.find('=') == std::string::npos)
      throw std::invalid_argument("unrecognized argument '" + e +
                                  "' (config overrides look like --key.path=value)");
    out.push_back(e.substr(2));
  }
  return out;
}

std::optional<uint64_t> env_seed() {
  const char* s = std::getenv("HIT_SEED");
  if (!s || !*s) return std::nullopt;
  return std::strtoull(s, nullptr, 10);
}

hit::RunConfig load_config(const std::string& path, const std::vector<std::string>& extras) {
  return hit::resolve_config_file(path, dotted_overrides(extras), env_seed());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"holistic interaction transformer, desk scale"};
  app.require_subcommand(1);

  std::string config_path, checkpoint_path, grid;

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  gradcheck->add_option("config", config_path, "run configuration (JSON)");
  gradcheck->allow_extras();

  auto* train = app.add_subcommand("train", "train on the synthetic task");
  train->add_option("config", config_path, "run configuration (JSON)");
  train->allow_extras();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint (frame and video mAP)");
  eval->add_option("config", config_path, "run configuration (JSON)");
  eval->add_option("checkpoint", checkpoint_path, "checkpoint file")->required();
  eval->allow_extras();

  auto* ablate = app.add_subcommand("ablate", "train and evaluate a variant grid");
  ablate->add_option("config", config_path, "run configuration (JSON)");
  ablate->add_option("--grid", grid, "fusion | depth | placement | ima | units | modality")
      ->required();
  ablate->allow_extras();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gradcheck->parsed()) {
      hit::RunConfig cfg = load_config(config_path, gradcheck->remaining());
      hit::GradReport report = hit::run_gradcheck(cfg);
      if (!report.pass) {
        std::fprintf(stderr, "gradcheck FAILED; offending parameters:\n");
        for (const auto& name : report.failing()) {
          for (const auto& row : report.rows)
            if (row.name == name)
              std::fprintf(stderr, "  %s  rel err %.3g at h=%g (worst coord %.6g vs %.6g)\n",
                           name.c_str(), row.rel_err, row.h_used, row.worst.analytic,
                           row.worst.numeric);
        }
        return 1;
      }
      std::printf("gradcheck passed: %zu parameter tensors within tolerance\n",
                  report.rows.size() / 2);
    } else if (train->parsed()) {
      hit::RunConfig cfg = load_config(config_path, train->remaining());
      hit::TrainResult result = hit::run_train(cfg);
      std::printf("trained %zu iterations, final loss %.6f, checkpoint %s\n",
                  result.log.size(), result.log.empty() ? 0.0 : result.log.back().loss,
                  result.checkpoint_path.c_str());
    } else if (eval->parsed()) {
      hit::RunConfig cfg = load_config(config_path, eval->remaining());
      hit::EvalOutcome out = hit::run_eval(cfg, checkpoint_path);
      std::printf("frame mAP@%.2g: %.4f\n", out.frame.threshold, out.frame.map);
      for (const auto& [thresh, report] : out.video)
        std::printf("video mAP@%.2g: %.4f\n", thresh, report.map);
    } else if (ablate->parsed()) {
      hit::RunConfig cfg = load_config(config_path, ablate->remaining());
      std::string csv = hit::run_ablate(cfg, grid);
      std::printf("ablation table written to %s\n", csv.c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
