// ofb: search, retrain, evaluate and inspect the toy supernet.
//
// Exit codes: 0 ok, 1 usage/config/input error, 2 budget miss,
// 3 divergence, 4 a verification command found violations.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "ofb/config.hpp"
#include "ofb/cost_model.hpp"
#include "ofb/data.hpp"
#include "ofb/gradcheck.hpp"
#include "ofb/io.hpp"
#include "ofb/plotdata.hpp"
#include "ofb/regularizers.hpp"
#include "ofb/runtime.hpp"
#include "ofb/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ofb;

namespace {

constexpr int kUsage = 1;
constexpr int kCheckFailed = 4;

struct Options {
  std::string config;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  std::optional<double> tau;
  std::vector<std::string> sets;
  std::string checkpoint;
  std::string supernet;
  std::string run;
  bool retrain = false;
  std::size_t samples = 1000;
  std::vector<std::size_t> dims{2, 4, 8, 16};
};

RunConfig resolve(const Options& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_config(o.config);
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) c.train.seed = *o.seed;
  if (o.tau) c.train.tau = *o.tau;
  c.validate();
  return c;
}

json metrics_json(const EvalMetrics& m) {
  return {{"accuracy", m.accuracy}, {"loss", m.loss}, {"n", m.n}};
}

json cost_json(const CostReport& c) {
  return {{"flops", c.flops},
          {"params", c.params},
          {"flops_fraction", c.flops_fraction},
          {"params_fraction", c.params_fraction}};
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path.string());
  return f;
}

void write_snapshot(const RunConfig& c, const fs::path& dir) {
  open_out(dir / "config.txt") << config_snapshot(c);
}

// Pretrained supernet from --supernet, else trained now and saved.
ViTModel supernet_for(const Options& o, const RunConfig& c, const TaskData& data,
                      const fs::path& dir, json& metrics) {
  if (!o.supernet.empty()) {
    ViTModel m = load_checkpoint(o.supernet);
    if (!(m.arch == ViTArch::full(c.model))) {
      throw ConfigError("--supernet is not a full-width model of the configured shape");
    }
    return m;
  }
  ViTModel m = pretrain(c, data);
  save_checkpoint(m, dir / "pretrained");
  metrics["pretrained"] = metrics_json(evaluate(m, data, c.train.eval_batch));
  return m;
}

int cmd_search(const Options& o) {
  const RunConfig c = resolve(o);
  const fs::path dir = o.out;
  fs::create_directories(dir);
  write_snapshot(c, dir);
  const TaskData data = prepare_data(c);
  const CostCoefficients coeffs = calibrate(c.model);
  json metrics;
  const ViTModel pre = supernet_for(o, c, data, dir, metrics);

  auto log = open_out(dir / "searchlog.jsonl");
  auto events = open_out(dir / "prune_events.jsonl");
  const auto t0 = std::chrono::steady_clock::now();
  const SearchOutcome so = search(c, pre, data, coeffs, &log, &events);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  save_checkpoint(so.supernet, dir / "supernet");
  metrics["status"] = so.status;
  metrics["message"] = so.message;
  metrics["tau"] = c.train.tau;
  metrics["iterations"] = so.iterations;
  metrics["search_seconds"] = seconds;
  if (so.status == kDivergence) {
    write_json(dir / "metrics.json", metrics);
    std::cerr << "search diverged: " << so.message << "\n";
    return so.status;
  }
  write_json(dir / "architecture.json", architecture_to_json(so.arch));
  save_checkpoint(so.pruned, dir / "pruned");
  metrics["finished"] = so.finished;
  metrics["finish_step"] = so.finish_step;
  metrics["g"] = so.g_fraction;
  metrics["cost"] = cost_json(so.cost);
  metrics["search_end"] = metrics_json(so.search_end);
  write_json(dir / "metrics.json", metrics);

  std::cout << "search " << (so.finished ? "finished" : "budget-miss") << " after "
            << so.iterations << " iterations: flops fraction " << so.cost.flops_fraction
            << " (tau " << c.train.tau << "), accuracy " << so.search_end.accuracy << "\n";
  if (so.status == kBudgetMiss) std::cerr << so.message << "\n";
  return so.status;
}

int cmd_retrain(const Options& o) {
  const RunConfig c = resolve(o);
  const fs::path dir = o.out;
  fs::create_directories(dir);
  const fs::path stem = o.checkpoint.empty() ? dir / "pruned" : fs::path(o.checkpoint);
  const ViTModel model = load_checkpoint(stem);
  const TaskData data = prepare_data(c);
  const RetrainOutcome ro = retrain(c, model, data);
  json j{{"status", ro.status},
         {"checkpoint", stem.string()},
         {"before", metrics_json(ro.before)},
         {"after", metrics_json(ro.after)}};
  j["epoch_loss"] = json::array();
  for (const auto& e : ro.epochs) j["epoch_loss"].push_back(e.train_loss);
  if (ro.status == kSuccess) save_checkpoint(ro.model, dir / "retrained");
  write_json(dir / "retrain_metrics.json", j);
  std::cout << "retrain accuracy " << ro.before.accuracy << " -> " << ro.after.accuracy << "\n";
  return ro.status;
}

int cmd_eval(const Options& o) {
  if (o.checkpoint.empty()) throw ConfigError("eval needs --checkpoint");
  const RunConfig c = resolve(o);
  const ViTModel model = load_checkpoint(o.checkpoint);
  if (model.arch.base.tokens() != c.model.tokens() ||
      model.arch.base.patch_pixels() != c.model.patch_pixels() ||
      model.arch.base.classes != c.model.classes) {
    throw ShapeError("checkpoint shape does not match the configured data");
  }
  const TaskData data = prepare_data(c);
  const EvalMetrics m = evaluate(model, data, c.train.eval_batch);
  json j = metrics_json(m);
  j["cost"] = cost_json(model_cost(model.arch, calibrate(model.arch.base)));
  if (o.out != ".") {
    fs::create_directories(o.out);
    write_json(fs::path(o.out) / "eval.json", j);
  }
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_baseline(const Options& o) {
  const RunConfig c = resolve(o);
  const fs::path dir = o.out;
  fs::create_directories(dir);
  write_snapshot(c, dir);
  const TaskData data = prepare_data(c);
  const CostCoefficients coeffs = calibrate(c.model);
  json metrics;
  const ViTModel pre = supernet_for(o, c, data, dir, metrics);
  const BaselineOutcome bo = baseline_threshold_prune(c, pre, data, coeffs);
  if (!bo.reachable) {
    std::cerr << "warning: tau " << c.train.tau
              << " is below the smallest grid architecture; exporting the nearest one\n";
  }
  write_json(dir / "architecture.json", architecture_to_json(bo.arch));
  save_checkpoint(bo.pruned, dir / "pruned");
  metrics["tau"] = c.train.tau;
  metrics["threshold"] = bo.threshold;
  metrics["reachable"] = bo.reachable;
  metrics["cost"] = cost_json(bo.cost);
  metrics["pruned"] = metrics_json(bo.pruned_metrics);
  int status = 0;
  if (o.retrain) {
    const RetrainOutcome ro = retrain(c, bo.pruned, data);
    metrics["retrained"] = metrics_json(ro.after);
    if (ro.status == kSuccess) save_checkpoint(ro.model, dir / "retrained");
    status = ro.status;
  }
  write_json(dir / "metrics.json", metrics);
  std::cout << "baseline flops fraction " << bo.cost.flops_fraction << " (tau " << c.train.tau
            << "), accuracy " << bo.pruned_metrics.accuracy << "\n";
  return status;
}

int cmd_theorems(const Options& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const TheoremReport r = theorem_suite(o.samples, o.dims, o.seed.value_or(7));
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  json j = json::parse(r.to_json());
  j["seconds"] = seconds;
  if (o.out != ".") {
    fs::create_directories(o.out);
    write_json(fs::path(o.out) / "theorems.json", j);
  }
  std::cout << j.dump(2) << "\n";
  return r.passed() ? 0 : kCheckFailed;
}

int cmd_gradcheck(const Options& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto results = gradcheck_suite(o.seed.value_or(3));
  double worst = 0.0;
  json cases = json::array();
  for (const auto& r : results) {
    worst = std::max(worst, r.max_rel_error);
    cases.push_back({{"name", r.name}, {"coordinates", r.coordinates}, {"max_rel_error", r.max_rel_error}});
    std::cout << r.name << ": " << r.max_rel_error << "\n";
  }
  // A perturbed backward rule must be caught.
  set_backward_fault("mul", 1.01);
  const Tensor probe = Tensor::from({0.3, -0.7, 1.1}, {3});
  const double faulty = gradient_check([](const Tensor& x) { return sum(mul(x, x)); }, probe);
  set_backward_fault("", 1.0);
  const bool detected = faulty > 1e-4;
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  json j{{"cases", cases},
         {"max_rel_error", worst},
         {"tolerance", 1e-4},
         {"mutation_error", faulty},
         {"mutation_detected", detected},
         {"seconds", seconds}};
  if (o.out != ".") {
    fs::create_directories(o.out);
    write_json(fs::path(o.out) / "gradcheck.json", j);
  }
  std::cout << "max relative error " << worst << ", injected fault "
            << (detected ? "detected" : "NOT detected") << "\n";
  return worst < 1e-4 && detected ? 0 : kCheckFailed;
}

int cmd_plotdata(const Options& o) {
  if (o.run.empty()) throw ConfigError("plotdata needs --run <search output directory>");
  const fs::path out = o.out == "." ? fs::path(o.run) : fs::path(o.out);
  const PlotdataSummary s = write_plotdata(o.run, out);
  if (s.truncated_log) std::cerr << "warning: searchlog.jsonl ends in a truncated record\n";
  std::cout << s.trajectory_rows << " trajectory rows, " << s.curve_rows << " curve rows, "
            << s.kept_rows << " submodules\n";
  return 0;
}

int cmd_gendata(const Options& o) {
  const RunConfig c = resolve(o);
  const DatasetPair d = generate(c.data);
  write_dataset(d, c.data, o.out);
  std::cout << "wrote " << d.train.n << " train and " << d.eval.n << " eval images to " << o.out
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ofb: one-stage prunability search on a toy vision transformer"};
  app.require_subcommand(1);
  Options o;

  auto common = [&o](CLI::App* sub, bool run_flags) {
    sub->add_option("--config", o.config, "key = value configuration file")->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--seed", o.seed, "run seed");
    if (run_flags) {
      sub->add_option("--tau", o.tau, "target FLOPs fraction");
      sub->add_option("--set", o.sets, "extra key=value override (repeatable)");
    }
  };
  auto* search = app.add_subcommand("search", "pretrain (or load) a supernet and run the search");
  common(search, true);
  search->add_option("--supernet", o.supernet, "pretrained checkpoint stem; skips pretraining");
  auto* retrain = app.add_subcommand("retrain", "fine-tune a pruned checkpoint");
  common(retrain, true);
  retrain->add_option("--checkpoint", o.checkpoint, "checkpoint stem (default <out>/pruned)");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the held-out split");
  common(eval, true);
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint stem")->required();
  auto* baseline = app.add_subcommand("baseline", "two-stage global-threshold pruning");
  common(baseline, true);
  baseline->add_option("--supernet", o.supernet, "pretrained checkpoint stem");
  baseline->add_flag("--retrain", o.retrain, "retrain the pruned model afterwards");
  auto* theorems = app.add_subcommand("theorems", "entropy/variance/one-hot equivalence checks");
  common(theorems, false);
  theorems->add_option("--samples", o.samples, "random vectors per dimension");
  theorems->add_option("--dims", o.dims, "dimensions")->delimiter(',');
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  common(gradcheck, false);
  auto* plotdata = app.add_subcommand("plotdata", "CSV tables from a search directory");
  common(plotdata, false);
  plotdata->add_option("--run", o.run, "search output directory")->required();
  auto* gendata = app.add_subcommand("gendata", "write the synthetic dataset to --out");
  common(gendata, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kUsage;
  }

  try {
    configure_runtime();
    if (*search) return cmd_search(o);
    if (*retrain) return cmd_retrain(o);
    if (*eval) return cmd_eval(o);
    if (*baseline) return cmd_baseline(o);
    if (*theorems) return cmd_theorems(o);
    if (*gradcheck) return cmd_gradcheck(o);
    if (*plotdata) return cmd_plotdata(o);
    if (*gendata) return cmd_gendata(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
