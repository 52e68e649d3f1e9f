#include "ofb/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <json.hpp>

#include "ofb/bimask.hpp"
#include "ofb/data.hpp"
#include "ofb/optim.hpp"
#include "ofb/pmim.hpp"
#include "ofb/regularizers.hpp"
#include "ofb/runtime.hpp"

namespace ofb {

namespace {

// Random streams derived from the run seed.
enum Stream : std::uint64_t {
  kStreamInit = 1,
  kStreamPretrain = 2,
  kStreamSpace = 3,
  kStreamSearchBatches = 4,
  kStreamMasks = 5,
  kStreamRetrain = 6,
  kStreamBaseline = 7,
};

std::vector<std::size_t> shuffled(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n; i > 1; --i) {
    std::swap(order[i - 1], order[uniform_below(rng, i)]);
  }
  return order;
}

struct Batch {
  std::vector<double> patches;
  std::vector<int> labels;
};

void fill_batch(const TaskData& data, const std::vector<std::size_t>& order, std::size_t start,
                std::size_t size, Batch& batch) {
  std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                               order.begin() + static_cast<std::ptrdiff_t>(start + size));
  gather_batch(data.train_patches, data.per_sample, idx, batch.patches);
  batch.labels.resize(size);
  for (std::size_t i = 0; i < size; ++i) batch.labels[i] = data.train_labels[idx[i]];
}

NamedParams weight_params(const ViTModel& model) { return model.named_tensors(); }

NamedParams alpha_params(const SearchSpace& space) {
  NamedParams out;
  for (std::size_t i = 0; i < space.size(); ++i) {
    out.emplace_back("score." + std::to_string(i) + ".alpha", space.submodules[i].alpha);
  }
  return out;
}

NamedParams importance_params(const SearchSpace& space) {
  NamedParams out;
  for (std::size_t i = 0; i < space.size(); ++i) {
    out.emplace_back("score." + std::to_string(i) + ".importance", space.submodules[i].importance);
  }
  return out;
}

void enable_score_grads(SearchSpace& space) {
  for (auto& s : space.submodules) {
    s.alpha.set_requires_grad(true);
    s.importance.set_requires_grad(true);
  }
}

bool finite(double v) { return std::isfinite(v); }

nlohmann::json rank_ordered(const Tensor& t, const std::vector<std::size_t>& perm) {
  nlohmann::json out = nlohmann::json::array();
  const auto d = t.data();
  for (auto u : perm) out.push_back(d[u]);
  return out;
}

nlohmann::json epoch_snapshot(const SearchSpace& space, double lambda, std::size_t epoch,
                              std::size_t t) {
  const auto snap = compute_bimask(space, lambda);
  nlohmann::json subs = nlohmann::json::array();
  for (std::size_t i = 0; i < space.size(); ++i) {
    const auto& s = space.submodules[i];
    const auto& m = snap.submodules[i];
    const Tensor p = softmax(s.alpha.detach());
    subs.push_back({{"id", i},
                    {"label", s.spec.label()},
                    {"d_live", s.d_live()},
                    {"w_live", s.w_live()},
                    {"p", std::vector<double>(p.data().begin(), p.data().end())},
                    {"S", rank_ordered(m.s, m.permutation)},
                    {"V", rank_ordered(m.v, m.permutation)},
                    {"m", rank_ordered(m.m, m.permutation)}});
  }
  return {{"type", "epoch"}, {"epoch", epoch}, {"step", t}, {"lambda", lambda},
          {"submodules", subs}};
}

void emit(std::ostream* out, const nlohmann::json& j) {
  if (out) *out << j.dump() << "\n";
}

}  // namespace

TaskData prepare_data(const RunConfig& config) {
  DatasetPair pair;
  if (config.data_dir.empty()) {
    pair = generate(config.data);
  } else {
    pair.train = read_split(config.data_dir, "train");
    pair.eval = read_split(config.data_dir, "eval");
  }
  if (pair.train.image_size != config.model.image_size) {
    throw ConfigError("data: image size " + std::to_string(pair.train.image_size) +
                      " does not match model.image_size");
  }
  for (const auto* split : {&pair.train, &pair.eval}) {
    for (int l : split->labels) {
      if (l < 0 || static_cast<std::size_t>(l) >= config.model.classes) {
        throw ConfigError("data: label " + std::to_string(l) + " outside model.classes");
      }
    }
  }
  TaskData d;
  d.patch_pixels = config.model.patch_pixels();
  d.per_sample = config.model.tokens() * d.patch_pixels;
  d.n_train = pair.train.n;
  d.n_eval = pair.eval.n;
  d.train_patches = patchify(pair.train, config.model.patch_size);
  d.eval_patches = patchify(pair.eval, config.model.patch_size);
  d.train_labels = pair.train.labels;
  d.eval_labels = pair.eval.labels;
  return d;
}

EvalMetrics evaluate(const ViTModel& model, const TaskData& data, std::size_t batch,
                     const SupernetMasks& masks) {
  ViTModel m = model.clone();
  m.set_requires_grad(false);
  EvalMetrics out;
  out.n = data.n_eval;
  std::size_t correct = 0;
  double loss = 0.0;
  for (std::size_t start = 0; start < data.n_eval; start += batch) {
    const std::size_t b = std::min(batch, data.n_eval - start);
    std::span<const double> patches(data.eval_patches.data() + start * data.per_sample,
                                    b * data.per_sample);
    std::span<const int> labels(data.eval_labels.data() + start, b);
    const auto fwd = forward(m, patches, b, masks);
    loss += softmax_cross_entropy(fwd.logits, labels).item() * static_cast<double>(b);
    const auto logits = fwd.logits.data();
    const std::size_t k = fwd.logits.dim(1);
    for (std::size_t i = 0; i < b; ++i) {
      const auto row = logits.subspan(i * k, k);
      const auto arg = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      if (arg == labels[i]) ++correct;
    }
  }
  out.accuracy = static_cast<double>(correct) / static_cast<double>(data.n_eval);
  out.loss = loss / static_cast<double>(data.n_eval);
  return out;
}

std::vector<EpochStats> train_supervised(ViTModel& model, const TaskData& data,
                                         std::size_t epochs, const TrainConfig& train,
                                         std::uint64_t stream) {
  std::mt19937_64 rng(derive_seed(train.seed, stream));
  Adam opt({train.lr_main, 0.9, 0.999, 1e-8, train.weight_decay});
  model.set_requires_grad(true);
  const auto params = weight_params(model);
  const std::size_t iters = data.n_train / train.batch_size;
  std::vector<EpochStats> stats;
  Batch batch;
  for (std::size_t e = 0; e < epochs; ++e) {
    const auto order = shuffled(data.n_train, rng);
    double total = 0.0;
    for (std::size_t it = 0; it < iters; ++it) {
      fill_batch(data, order, it * train.batch_size, train.batch_size, batch);
      const auto fwd = forward(model, batch.patches, train.batch_size, SupernetMasks{});
      const Tensor loss = softmax_cross_entropy(fwd.logits, batch.labels);
      if (!finite(loss.item())) throw NumericError("supervised training diverged");
      backward(loss);
      opt.step(params);
      zero_grads(params);
      total += loss.item();
    }
    stats.push_back({e, total / static_cast<double>(std::max<std::size_t>(iters, 1))});
  }
  model.set_requires_grad(false);
  return stats;
}

ViTModel pretrain(const RunConfig& config, const TaskData& data) {
  ViTModel model =
      ViTModel::init(ViTArch::full(config.model), derive_seed(config.train.seed, kStreamInit));
  train_supervised(model, data, config.train.pretrain_epochs, config.train, kStreamPretrain);
  return model;
}

SearchSpace initial_space(const RunConfig& config) {
  return build_space(config.model, config.space, derive_seed(config.train.seed, kStreamSpace));
}

SearchOutcome search(const RunConfig& config, const ViTModel& pretrained, const TaskData& data,
                     const CostCoefficients& coeffs, std::ostream* log, std::ostream* events_out) {
  config.validate();
  const auto& tc = config.train;
  SearchOutcome out;
  out.supernet = pretrained.clone();
  out.supernet.set_requires_grad(true);
  out.space = initial_space(config);
  auto& space = out.space;
  auto& model = out.supernet;

  const std::size_t iters = data.n_train / tc.batch_size;
  const std::size_t total = tc.epochs * iters;
  const LambdaSchedule lambda{total};
  MaskingSchedule gamma = config.pmim;
  gamma.total_steps = total;
  PruneSchedule prune;
  prune.interval = tc.prune_interval > 0 ? tc.prune_interval : (iters + 2) / 3;
  prune.eta = config.reg.eta;
  prune.warmup_steps = tc.warmup_epochs * iters;

  Adam opt_w({tc.lr_main, 0.9, 0.999, 1e-8, tc.weight_decay});
  // {alpha, S} share beta1; only the step sizes differ
  Adam opt_s({tc.lr_score, tc.beta1_score, 0.999, 1e-8, 0.0});
  Adam opt_a({tc.lr_alpha, tc.beta1_score, 0.999, 1e-8, 0.0});
  const auto w_params = weight_params(model);

  std::mt19937_64 batch_rng(derive_seed(tc.seed, kStreamSearchBatches));
  std::mt19937_64 mask_rng(derive_seed(tc.seed, kStreamMasks));
  const std::size_t tokens = config.model.tokens();

  {
    nlohmann::json labels = nlohmann::json::array();
    for (const auto& s : space.submodules) labels.push_back(s.spec.label());
    emit(log, {{"type", "header"},
               {"seed", tc.seed},
               {"tau", tc.tau},
               {"iterations_per_epoch", iters},
               {"total_iterations", total},
               {"prune_interval", prune.interval},
               {"warmup_iterations", prune.warmup_steps},
               {"full_flops", coeffs.full_flops},
               {"full_params", coeffs.full_params},
               {"submodules", labels}});
    emit(log, epoch_snapshot(space, lambda.value(0), 0, 0));
  }

  auto record_events = [&](std::vector<PruneEvent>&& evs) {
    for (auto& e : evs) {
      opt_a.compact("score." + std::to_string(e.submodule_id) + ".alpha", e.alpha_keep);
      opt_s.compact("score." + std::to_string(e.submodule_id) + ".importance", e.importance_keep);
      auto j = e.to_json();
      emit(events_out, j);
      j["type"] = "prune";
      emit(log, j);
      out.events.push_back(std::move(e));
    }
  };

  Batch batch;
  std::size_t t = 0;
  try {
    for (std::size_t epoch = 0; epoch < tc.epochs && !out.finished; ++epoch) {
      const auto order = shuffled(data.n_train, batch_rng);
      for (std::size_t it = 0; it < iters && !out.finished; ++it, ++t) {
        const double lam = lambda.value(t);
        const double gam = gamma.gamma(t);
        fill_batch(data, order, it * tc.batch_size, tc.batch_size, batch);

        std::vector<std::uint8_t> positions;
        if (config.pmim.mode != MaskingMode::None) {
          positions.reserve(tc.batch_size * tokens);
          for (std::size_t b = 0; b < tc.batch_size; ++b) {
            const auto m = sample_mask(tokens, gam, mask_rng);
            positions.insert(positions.end(), m.begin(), m.end());
          }
        }

        enable_score_grads(space);
        const auto snapshot = compute_bimask(space, lam);
        const auto masks = masks_from_bimask(space, snapshot);
        const bool reconstruct = !positions.empty();
        const auto fwd = forward(model, batch.patches, tc.batch_size, masks, positions, reconstruct);
        const Tensor task = softmax_cross_entropy(fwd.logits, batch.labels);
        const Tensor rec = reconstruct
                               ? reconstruct_loss(fwd, batch.patches, data.patch_pixels)
                               : Tensor::scalar(0.0);
        RegularizerWeights weights = config.reg;
        if (weights.mu1_ramp) weights.mu1 *= 1.0 - lam;
        const MaskLoss ml = total_mask_loss(space, coeffs, weights, tc.tau);
        const Tensor loss = add(add(task, ml.total), rec);
        if (!finite(loss.item())) throw NumericError("non-finite search loss at step " +
                                                     std::to_string(t));
        backward(loss);
        const auto a_params = alpha_params(space);
        const auto s_params = importance_params(space);
        opt_w.step(w_params);
        opt_a.step(a_params);
        opt_s.step(s_params);
        zero_grads(w_params);
        zero_grads(a_params);
        zero_grads(s_params);

        record_events(maybe_prune(space, prune, t));
        const double g = g_of_V(space, coeffs).item();

        nlohmann::json d_live = nlohmann::json::array();
        for (const auto& s : space.submodules) d_live.push_back(s.d_live());
        emit(log, {{"type", "iter"},
                   {"step", t},
                   {"epoch", epoch},
                   {"lambda", lam},
                   {"gamma", gam},
                   {"loss", loss.item()},
                   {"task", task.item()},
                   {"rec", rec.item()},
                   {"mask", ml.total.item()},
                   {"entropy", ml.entropy},
                   {"psi", ml.psi},
                   {"budget", ml.budget},
                   {"l1", ml.l1},
                   {"g", g},
                   {"d_live", d_live}});

        if (t >= prune.warmup_steps && finish_check(space, g, tc.tau, tc.finish_tolerance)) {
          out.finished = true;
          out.finish_step = t;
          prune.finished = true;
          record_events(harden(space, t));
        }
      }
      emit(log, epoch_snapshot(space, out.finished ? 0.0 : lambda.value(t), epoch + 1, t));
    }
  } catch (const NumericError& e) {
    out.status = kDivergence;
    out.message = e.what();
    out.iterations = t;
    emit(log, {{"type", "end"}, {"status", out.status}, {"message", out.message}});
    return out;
  }
  out.iterations = t;
  if (!out.finished) {
    record_events(harden(space, t));
    out.status = kBudgetMiss;
  }
  model.set_requires_grad(false);
  out.arch = export_architecture(space);
  out.g_fraction = g_of_V(space, coeffs).item();
  out.cost = discrete_cost(out.arch, config.model, coeffs);
  out.pruned = materialize(space, model);
  out.search_end = evaluate(out.pruned, data, tc.eval_batch);
  if (out.status == kBudgetMiss) {
    out.message = "budget-miss: search budget exhausted with g = " +
                  std::to_string(out.cost.flops_fraction) + " for tau = " +
                  std::to_string(tc.tau);
  }
  nlohmann::json arch_widths = nlohmann::json::array();
  for (const auto& e : out.arch.submodules) arch_widths.push_back(e.kept_units.size());
  emit(log, {{"type", "end"},
             {"status", out.status},
             {"finished", out.finished},
             {"finish_step", out.finish_step},
             {"iterations", out.iterations},
             {"g", out.g_fraction},
             {"flops_fraction", out.cost.flops_fraction},
             {"params_fraction", out.cost.params_fraction},
             {"kept_widths", arch_widths},
             {"search_end_accuracy", out.search_end.accuracy}});
  return out;
}

RetrainOutcome retrain(const RunConfig& config, const ViTModel& model, const TaskData& data) {
  RetrainOutcome out;
  out.model = model.clone();
  out.before = evaluate(out.model, data, config.train.eval_batch);
  try {
    out.epochs = train_supervised(out.model, data, config.train.retrain_epochs, config.train,
                                  kStreamRetrain);
  } catch (const NumericError&) {
    out.status = kDivergence;
    out.after = out.before;
    return out;
  }
  out.after = evaluate(out.model, data, config.train.eval_batch);
  return out;
}

Architecture threshold_architecture(const SearchSpace& space,
                                    const std::vector<std::vector<double>>& scores,
                                    double threshold) {
  Architecture arch;
  for (std::size_t i = 0; i < space.size(); ++i) {
    const auto& s = space.submodules[i];
    const auto& sc = scores.at(i);
    const std::size_t count =
        static_cast<std::size_t>(std::count_if(sc.begin(), sc.end(), [&](double v) {
          return v >= threshold;
        }));
    const auto grid = s.live_grid();
    std::size_t k = 0;
    while (k + 1 < grid.size() && grid[k] < count) ++k;
    const auto perm = rank_permutation(sc);
    ArchitectureEntry e{s.spec.kind, s.spec.layer, s.spec.full_width, {}, {s.live_steps[k]}};
    for (std::size_t r = 0; r < grid[k]; ++r) e.kept_units.push_back(s.live_unit_ids[perm[r]]);
    std::sort(e.kept_units.begin(), e.kept_units.end());
    arch.submodules.push_back(std::move(e));
  }
  return arch;
}

BaselineOutcome baseline_threshold_prune(const RunConfig& config, const ViTModel& pretrained,
                                         const TaskData& data, const CostCoefficients& coeffs) {
  config.validate();
  const auto& tc = config.train;
  BaselineOutcome out;
  out.supernet = pretrained.clone();
  out.supernet.set_requires_grad(true);
  SearchSpace space = initial_space(config);

  // stage 1: importance scores under the task loss and an l1 penalty
  Adam opt_w({tc.lr_main, 0.9, 0.999, 1e-8, tc.weight_decay});
  Adam opt_s({tc.lr_score, tc.beta1_score, 0.999, 1e-8, 0.0});
  const auto w_params = weight_params(out.supernet);
  const auto s_params = importance_params(space);
  for (auto& s : space.submodules) s.importance.set_requires_grad(true);
  std::mt19937_64 rng(derive_seed(tc.seed, kStreamBaseline));
  const std::size_t iters = data.n_train / tc.batch_size;
  Batch batch;
  for (std::size_t e = 0; e < tc.baseline_epochs; ++e) {
    const auto order = shuffled(data.n_train, rng);
    for (std::size_t it = 0; it < iters; ++it) {
      fill_batch(data, order, it * tc.batch_size, tc.batch_size, batch);
      const auto snapshot = compute_bimask(space, 1.0);
      const auto masks = masks_from_bimask(space, snapshot);
      const auto fwd = forward(out.supernet, batch.patches, tc.batch_size, masks);
      std::vector<Tensor> scores;
      for (const auto& m : snapshot.submodules) scores.push_back(m.s);
      const Tensor loss = add(softmax_cross_entropy(fwd.logits, batch.labels),
                              affine(importance_penalty(scores), config.reg.mu3));
      if (!finite(loss.item())) throw NumericError("baseline importance training diverged");
      backward(loss);
      opt_w.step(w_params);
      opt_s.step(s_params);
      zero_grads(w_params);
      zero_grads(s_params);
    }
  }
  out.supernet.set_requires_grad(false);

  // stage 2: global threshold
  std::vector<std::vector<double>> scores;
  std::vector<double> all;
  for (const auto& s : space.submodules) {
    const Tensor sc = importance_scores(s);
    scores.emplace_back(sc.data().begin(), sc.data().end());
    all.insert(all.end(), sc.data().begin(), sc.data().end());
  }
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  all.push_back(std::numeric_limits<double>::infinity());
  auto cost_of = [&](double th) {
    const auto arch = threshold_architecture(space, scores, th);
    return evaluate(coeffs.flops, architecture_widths(arch, config.model)) / coeffs.full_flops;
  };
  // cost is non-increasing in the threshold: find the smallest one meeting tau
  std::size_t lo = 0, hi = all.size() - 1;
  if (cost_of(all[hi]) > tc.tau) {
    out.reachable = false;
    lo = hi;
  } else {
    while (lo < hi) {
      const std::size_t mid = (lo + hi) / 2;
      if (cost_of(all[mid]) <= tc.tau) {
        hi = mid;
      } else {
        lo = mid + 1;
      }
    }
  }
  out.threshold = all[lo];
  out.arch = threshold_architecture(space, scores, out.threshold);
  out.cost = discrete_cost(out.arch, config.model, coeffs);
  out.pruned = materialize(out.arch, out.supernet);
  out.pruned_metrics = evaluate(out.pruned, data, tc.eval_batch);
  return out;
}

}  // namespace ofb
