#include "ofb/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "ofb/error.hpp"

namespace ofb {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

struct Binding {
  std::string doc;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename F>
Binding size_key(std::string doc, F field) {
  return {std::move(doc),
          [field](RunConfig& c, const std::string& v) { field(c) = to_size("", v); },
          [field](const RunConfig& c) { return std::to_string(field(const_cast<RunConfig&>(c))); }};
}

template <typename F>
Binding double_key(std::string doc, F field) {
  return {std::move(doc),
          [field](RunConfig& c, const std::string& v) { field(c) = to_double("", v); },
          [field](const RunConfig& c) { return fmt(field(const_cast<RunConfig&>(c))); }};
}

#define SIZE_KEY(name, doc, expr) \
  {name, size_key(doc, [](RunConfig& c) -> auto& { return expr; })}
#define DOUBLE_KEY(name, doc, expr) \
  {name, double_key(doc, [](RunConfig& c) -> auto& { return expr; })}

const std::vector<std::pair<std::string, Binding>>& bindings() {
  static const std::vector<std::pair<std::string, Binding>> table = {
      SIZE_KEY("model.image_size", "image side in pixels", c.model.image_size),
      SIZE_KEY("model.patch_size", "patch side in pixels", c.model.patch_size),
      SIZE_KEY("model.embed_dim", "residual channels", c.model.embed_dim),
      SIZE_KEY("model.depth", "transformer layers", c.model.depth),
      SIZE_KEY("model.heads", "attention heads", c.model.heads),
      SIZE_KEY("model.head_dim", "channels per head", c.model.head_dim),
      SIZE_KEY("model.mlp_dim", "MLP hidden units", c.model.mlp_dim),
      SIZE_KEY("model.classes", "output classes", c.model.classes),

      DOUBLE_KEY("space.qkv.lo", "smallest qkv width, ratio of head_dim", c.space.qkv.lo),
      DOUBLE_KEY("space.qkv.hi", "largest qkv width, ratio of head_dim", c.space.qkv.hi),
      DOUBLE_KEY("space.qkv.step", "qkv step, ratio of head_dim", c.space.qkv.step),
      DOUBLE_KEY("space.mlp.lo", "smallest MLP width, ratio of mlp_dim", c.space.mlp.lo),
      DOUBLE_KEY("space.mlp.hi", "largest MLP width, ratio of mlp_dim", c.space.mlp.hi),
      DOUBLE_KEY("space.mlp.step", "MLP step, ratio of mlp_dim", c.space.mlp.step),
      DOUBLE_KEY("space.heads.lo", "smallest head count", c.space.heads.lo),
      DOUBLE_KEY("space.heads.hi", "largest head count (0: model.heads)", c.space.heads.hi),
      DOUBLE_KEY("space.heads.step", "head-count step", c.space.heads.step),
      DOUBLE_KEY("space.patch_embed.lo", "smallest embed width, ratio", c.space.patch_embed.lo),
      DOUBLE_KEY("space.patch_embed.hi", "largest embed width, ratio", c.space.patch_embed.hi),
      DOUBLE_KEY("space.patch_embed.step", "embed step, ratio", c.space.patch_embed.step),
      DOUBLE_KEY("space.alpha_init_std", "std of initial architecture logits",
                 c.space.alpha_init_std),
      DOUBLE_KEY("space.importance_init_std", "std of initial importance logits",
                 c.space.importance_init_std),

      SIZE_KEY("trainer.seed", "seed for weights, scores, batches and masks", c.train.seed),
      SIZE_KEY("trainer.pretrain_epochs", "supervised epochs before the search",
               c.train.pretrain_epochs),
      SIZE_KEY("trainer.epochs", "search epoch budget", c.train.epochs),
      SIZE_KEY("trainer.warmup_epochs", "search epochs without pruning", c.train.warmup_epochs),
      SIZE_KEY("trainer.retrain_epochs", "fine-tuning epochs of the pruned model",
               c.train.retrain_epochs),
      SIZE_KEY("trainer.baseline_epochs", "importance-only epochs of the threshold baseline",
               c.train.baseline_epochs),
      SIZE_KEY("trainer.batch_size", "images per iteration", c.train.batch_size),
      DOUBLE_KEY("trainer.lr_main", "learning rate of weights and decoder", c.train.lr_main),
      DOUBLE_KEY("trainer.lr_score", "learning rate of importance logits", c.train.lr_score),
      DOUBLE_KEY("trainer.lr_alpha", "learning rate of architecture logits", c.train.lr_alpha),
      DOUBLE_KEY("trainer.beta1_score", "beta1 of the score optimizer", c.train.beta1_score),
      DOUBLE_KEY("trainer.weight_decay", "decoupled weight decay on weights",
                 c.train.weight_decay),
      DOUBLE_KEY("trainer.tau", "target FLOPs fraction", c.train.tau),
      SIZE_KEY("trainer.prune_interval", "iterations between pruning checks (0: epoch/3)",
               c.train.prune_interval),
      DOUBLE_KEY("trainer.finish_tolerance", "relative slack on tau for finishing",
                 c.train.finish_tolerance),
      SIZE_KEY("trainer.eval_batch", "images per evaluation batch", c.train.eval_batch),

      DOUBLE_KEY("reg.mu1", "weight of entropy + tangent variance", c.reg.mu1),
      DOUBLE_KEY("reg.mu2", "weight of the budget penalty", c.reg.mu2),
      DOUBLE_KEY("reg.mu3", "weight of the importance l1 penalty", c.reg.mu3),
      DOUBLE_KEY("reg.eta", "pruning trigger factor", c.reg.eta),
      {"reg.mu1_schedule",
       {"ramp (mu1 scaled by 1 - lambda) | constant",
        [](RunConfig& c, const std::string& v) {
          if (v != "ramp" && v != "constant") {
            throw ConfigError("expected ramp or constant, got '" + v + "'");
          }
          c.reg.mu1_ramp = v == "ramp";
        },
        [](const RunConfig& c) { return std::string(c.reg.mu1_ramp ? "ramp" : "constant"); }}},

      {"pmim.mode",
       {"progressive | constant | none",
        [](RunConfig& c, const std::string& v) { c.pmim.mode = masking_mode_from_string(v); },
        [](const RunConfig& c) { return to_string(c.pmim.mode); }}},
      DOUBLE_KEY("pmim.gamma_start", "masking ratio at the start of the search",
                 c.pmim.gamma_start),
      DOUBLE_KEY("pmim.gamma_end", "masking ratio at the end of the search", c.pmim.gamma_end),

      SIZE_KEY("data.n_train", "training images", c.data.n_train),
      SIZE_KEY("data.n_eval", "held-out images", c.data.n_eval),
      SIZE_KEY("data.classes", "classes (must match model.classes)", c.data.classes),
      SIZE_KEY("data.image_size", "image side (must match model.image_size)",
               c.data.image_size),
      {"data.generator",
       {"gaussian-blobs | striped-textures",
        [](RunConfig& c, const std::string& v) { c.data.generator = generator_from_string(v); },
        [](const RunConfig& c) { return to_string(c.data.generator); }}},
      DOUBLE_KEY("data.noise_sigma", "additive pixel noise std", c.data.noise_sigma),
      SIZE_KEY("data.seed", "generator seed", c.data.seed),
      {"data.dir",
       {"directory written by gendata (empty: generate in memory)",
        [](RunConfig& c, const std::string& v) { c.data_dir = v; },
        [](const RunConfig& c) { return c.data_dir; }}},
  };
  return table;
}

#undef SIZE_KEY
#undef DOUBLE_KEY

const Binding& find(const std::string& key) {
  for (const auto& [name, b] : bindings()) {
    if (name == key) return b;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

std::vector<ConfigKey> config_keys() {
  std::vector<ConfigKey> out;
  for (const auto& [name, b] : bindings()) out.push_back({name, b.doc});
  return out;
}

void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
  const auto& b = find(key);
  try {
    b.set(config, value);
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    throw ConfigError(key + (msg.starts_with(": ") ? msg : ": " + msg));
  }
}

std::string get_config_value(const RunConfig& config, const std::string& key) {
  return find(key).get(config);
}

void RunConfig::validate() const {
  try {
    model.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  auto fail = [](const std::string& key, const std::string& why) {
    throw ConfigError(key + ": " + why);
  };
  if (data.classes != model.classes) fail("data.classes", "must equal model.classes");
  if (data.image_size != model.image_size) fail("data.image_size", "must equal model.image_size");
  if (train.epochs == 0) fail("trainer.epochs", "must be positive");
  if (train.warmup_epochs >= train.epochs) fail("trainer.warmup_epochs", "must be below epochs");
  if (train.batch_size == 0) fail("trainer.batch_size", "must be positive");
  if (data.n_train < train.batch_size) fail("data.n_train", "must hold at least one batch");
  if (data.n_eval == 0) fail("data.n_eval", "must be positive");
  if (train.eval_batch == 0) fail("trainer.eval_batch", "must be positive");
  if (!(train.tau > 0.0 && train.tau <= 1.0)) fail("trainer.tau", "must lie in (0, 1]");
  if (!(train.lr_main > 0.0)) fail("trainer.lr_main", "must be positive");
  if (!(train.lr_score > 0.0)) fail("trainer.lr_score", "must be positive");
  if (!(train.lr_alpha > 0.0)) fail("trainer.lr_alpha", "must be positive");
  if (!(train.beta1_score >= 0.0 && train.beta1_score < 1.0)) {
    fail("trainer.beta1_score", "must lie in [0, 1)");
  }
  if (!(train.weight_decay >= 0.0)) fail("trainer.weight_decay", "must be non-negative");
  if (!(train.finish_tolerance >= 0.0)) fail("trainer.finish_tolerance", "must be non-negative");
  if (!(reg.mu1 >= 0.0)) fail("reg.mu1", "must be non-negative");
  if (!(reg.mu2 >= 0.0)) fail("reg.mu2", "must be non-negative");
  if (!(reg.mu3 >= 0.0)) fail("reg.mu3", "must be non-negative");
  if (!(reg.eta >= 0.0)) fail("reg.eta", "must be non-negative");
  if (!(pmim.gamma_start >= 0.0 && pmim.gamma_start <= 1.0)) {
    fail("pmim.gamma_start", "must lie in [0, 1]");
  }
  if (!(pmim.gamma_end >= pmim.gamma_start && pmim.gamma_end <= 1.0)) {
    fail("pmim.gamma_end", "must lie in [gamma_start, 1]");
  }
  if (!(space.alpha_init_std >= 0.0)) fail("space.alpha_init_std", "must be non-negative");
  if (!(space.importance_init_std >= 0.0)) {
    fail("space.importance_init_std", "must be non-negative");
  }
}

RunConfig parse_config(const std::string& text) {
  RunConfig config;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key=value, got '" + line +
                        "'");
    }
    set_config_value(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return parse_config(os.str());
}

std::string config_snapshot(const RunConfig& config) {
  std::ostringstream os;
  for (const auto& [name, b] : bindings()) {
    os << "# " << b.doc << "\n" << name << " = " << b.get(config) << "\n";
  }
  return os.str();
}

}  // namespace ofb
