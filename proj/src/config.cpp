#include "omni/config.hpp"

#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace omni::config {

using nlohmann::json;

TrainConfig ablate(const TrainConfig& cfg, std::optional<graph::Metapath> drop) {
  TrainConfig out = cfg;
  if (!drop.has_value()) return out;
  if (*drop == graph::Metapath::SS) out.use_ss = false;
  if (*drop == graph::Metapath::SIS) out.use_sis = false;
  if (!out.use_ss && !out.use_sis) {
    throw std::invalid_argument("ablate: dropping " + graph::metapath_name(*drop) +
                                " would leave no enabled metapaths");
  }
  return out;
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

namespace {

json to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["data"] = {
      {"n_stocks", c.data.n_stocks},
      {"n_days", c.data.n_days},
      {"factor_strength", c.data.factor_strength},
      {"n_raw_features", c.data.n_raw_features},
      {"n_holders", c.data.n_holders},
      {"shock", {{"start", c.data.shock.start},
                 {"length", c.data.shock.length},
                 {"scale", c.data.shock.scale}}},
  };
  std::vector<std::string> paths;
  if (c.train.use_ss) paths.push_back("SS");
  if (c.train.use_sis) paths.push_back("SIS");
  j["model"] = {
      {"d_h", c.model.d_h},
      {"gat_heads", c.model.gat_heads},
      {"gat_layers", c.model.gat_layers},
      {"temporal_heads", c.model.temporal_heads},
      {"temporal_layers", c.model.temporal_layers},
      {"ff_dim", c.model.ff_dim},
      {"delta_t", c.model.delta_t},
      {"dropout", c.model.dropout},
      {"leaky_slope", c.model.leaky_slope},
      {"pca_variance", c.model.pca_variance},
      {"winsor_lo", c.model.winsor_lo},
      {"winsor_hi", c.model.winsor_hi},
      {"metapaths", paths},
  };
  j["train"] = {
      {"lr", c.model.adam.lr},
      {"weight_decay", c.model.adam.weight_decay},
      {"beta1", c.model.adam.beta1},
      {"beta2", c.model.adam.beta2},
      {"eps", c.model.adam.eps},
      {"batch_size", c.train.batch_size},
      {"max_epochs", c.train.max_epochs},
      {"patience", c.train.patience},
  };
  j["backtest"] = {
      {"train_days", c.backtest.train_days},
      {"val_days", c.backtest.val_days},
      {"test_days", c.backtest.test_days},
      {"k_frac", c.backtest.k_frac},
      {"jobs", c.backtest.jobs},
  };
  return j;
}

class Issues {
 public:
  void add(const std::string& msg) { items_.push_back(msg); }
  bool any() const { return !items_.empty(); }
  std::string joined() const {
    std::ostringstream os;
    os << "config errors:";
    for (const std::string& s : items_) os << "\n  - " << s;
    return os.str();
  }

 private:
  std::vector<std::string> items_;
};

void reject_unknown(const json& obj, const std::vector<std::string>& known,
                    const std::string& scope, Issues& issues) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const std::string& k : known) {
      if (it.key() == k) {
        ok = true;
        break;
      }
    }
    if (!ok) issues.add(scope + ": unknown key '" + it.key() + "'");
  }
}

template <typename T>
void read_field(const json& obj, const char* key, T& out, Issues& issues,
                const std::string& scope) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    issues.add(scope + "." + key + ": wrong type");
  }
}

}  // namespace

std::string RunConfig::canonical_json() const { return to_json(*this).dump(); }

std::uint64_t RunConfig::hash() const { return fnv1a64(canonical_json()); }

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config errors:\n  - invalid JSON: ") + e.what());
  }

  Issues issues;
  RunConfig c;

  reject_unknown(j, {"seed", "data", "model", "train", "backtest"}, "config", issues);
  read_field(j, "seed", c.seed, issues, "config");

  if (j.contains("data")) {
    const json& d = j["data"];
    reject_unknown(d, {"n_stocks", "n_days", "factor_strength", "n_raw_features", "n_holders",
                       "shock"},
                   "data", issues);
    read_field(d, "n_stocks", c.data.n_stocks, issues, "data");
    read_field(d, "n_days", c.data.n_days, issues, "data");
    read_field(d, "factor_strength", c.data.factor_strength, issues, "data");
    read_field(d, "n_raw_features", c.data.n_raw_features, issues, "data");
    read_field(d, "n_holders", c.data.n_holders, issues, "data");
    if (d.contains("shock")) {
      const json& s = d["shock"];
      reject_unknown(s, {"start", "length", "scale"}, "data.shock", issues);
      read_field(s, "start", c.data.shock.start, issues, "data.shock");
      read_field(s, "length", c.data.shock.length, issues, "data.shock");
      read_field(s, "scale", c.data.shock.scale, issues, "data.shock");
    }
  }

  if (j.contains("model")) {
    const json& m = j["model"];
    reject_unknown(m,
                   {"d_h", "gat_heads", "gat_layers", "temporal_heads", "temporal_layers",
                    "ff_dim", "delta_t", "dropout", "leaky_slope", "pca_variance", "winsor_lo",
                    "winsor_hi", "metapaths"},
                   "model", issues);
    read_field(m, "d_h", c.model.d_h, issues, "model");
    read_field(m, "gat_heads", c.model.gat_heads, issues, "model");
    read_field(m, "gat_layers", c.model.gat_layers, issues, "model");
    read_field(m, "temporal_heads", c.model.temporal_heads, issues, "model");
    read_field(m, "temporal_layers", c.model.temporal_layers, issues, "model");
    read_field(m, "ff_dim", c.model.ff_dim, issues, "model");
    read_field(m, "delta_t", c.model.delta_t, issues, "model");
    read_field(m, "dropout", c.model.dropout, issues, "model");
    read_field(m, "leaky_slope", c.model.leaky_slope, issues, "model");
    read_field(m, "pca_variance", c.model.pca_variance, issues, "model");
    read_field(m, "winsor_lo", c.model.winsor_lo, issues, "model");
    read_field(m, "winsor_hi", c.model.winsor_hi, issues, "model");
    if (m.contains("metapaths")) {
      std::vector<std::string> paths;
      read_field(m, "metapaths", paths, issues, "model");
      c.train.use_ss = false;
      c.train.use_sis = false;
      for (const std::string& p : paths) {
        if (p == "SS") {
          c.train.use_ss = true;
        } else if (p == "SIS") {
          c.train.use_sis = true;
        } else {
          issues.add("model.metapaths: unknown path '" + p + "'");
        }
      }
    }
  }

  if (j.contains("train")) {
    const json& t = j["train"];
    reject_unknown(t,
                   {"lr", "weight_decay", "beta1", "beta2", "eps", "batch_size", "max_epochs",
                    "patience"},
                   "train", issues);
    read_field(t, "lr", c.model.adam.lr, issues, "train");
    read_field(t, "weight_decay", c.model.adam.weight_decay, issues, "train");
    read_field(t, "beta1", c.model.adam.beta1, issues, "train");
    read_field(t, "beta2", c.model.adam.beta2, issues, "train");
    read_field(t, "eps", c.model.adam.eps, issues, "train");
    read_field(t, "batch_size", c.train.batch_size, issues, "train");
    read_field(t, "max_epochs", c.train.max_epochs, issues, "train");
    read_field(t, "patience", c.train.patience, issues, "train");
  }

  if (j.contains("backtest")) {
    const json& b = j["backtest"];
    reject_unknown(b, {"train_days", "val_days", "test_days", "k_frac", "jobs"}, "backtest",
                   issues);
    read_field(b, "train_days", c.backtest.train_days, issues, "backtest");
    read_field(b, "val_days", c.backtest.val_days, issues, "backtest");
    read_field(b, "test_days", c.backtest.test_days, issues, "backtest");
    read_field(b, "k_frac", c.backtest.k_frac, issues, "backtest");
    read_field(b, "jobs", c.backtest.jobs, issues, "backtest");
  }

  // semantic validation, all violations reported together
  if (c.data.n_stocks < 2) issues.add("data.n_stocks must be >= 2");
  if (c.data.n_days < 60) issues.add("data.n_days must be >= 60");
  if (c.data.factor_strength < 0.0 || c.data.factor_strength > 1.0) {
    issues.add("data.factor_strength must be in [0,1]");
  }
  if (c.data.n_raw_features < 1) issues.add("data.n_raw_features must be >= 1");
  if (c.data.n_holders < 1) issues.add("data.n_holders must be >= 1");
  if (c.data.shock.scale <= 0.0) issues.add("data.shock.scale must be > 0");
  if (c.model.d_h < 1) issues.add("model.d_h must be >= 1");
  if (c.model.gat_heads < 1) issues.add("model.gat_heads must be >= 1");
  if (c.model.gat_layers < 1) issues.add("model.gat_layers must be >= 1");
  if (c.model.temporal_heads < 1) issues.add("model.temporal_heads must be >= 1");
  if (c.model.temporal_heads >= 1 && c.model.d_h % c.model.temporal_heads != 0) {
    issues.add("model.d_h must be divisible by model.temporal_heads");
  }
  if (c.model.temporal_layers < 1) issues.add("model.temporal_layers must be >= 1");
  if (c.model.delta_t < 1) issues.add("model.delta_t must be >= 1");
  if (c.model.dropout < 0.0 || c.model.dropout >= 1.0) {
    issues.add("model.dropout must be in [0,1)");
  }
  if (c.model.leaky_slope <= 0.0 || c.model.leaky_slope >= 1.0) {
    issues.add("model.leaky_slope must be in (0,1)");
  }
  if (c.model.pca_variance <= 0.0 || c.model.pca_variance > 1.0) {
    issues.add("model.pca_variance must be in (0,1]");
  }
  if (!(0.0 <= c.model.winsor_lo && c.model.winsor_lo < c.model.winsor_hi &&
        c.model.winsor_hi <= 1.0)) {
    issues.add("model winsor bounds must satisfy 0 <= lo < hi <= 1");
  }
  if (!c.train.use_ss && !c.train.use_sis) issues.add("model.metapaths must not be empty");
  if (c.train.batch_size < 1) issues.add("train.batch_size must be >= 1");
  if (c.train.max_epochs < 1) issues.add("train.max_epochs must be >= 1");
  if (c.train.patience < 1) issues.add("train.patience must be >= 1");
  if (c.model.adam.lr < 0.0) issues.add("train.lr must be >= 0");
  if (c.backtest.train_days < c.model.delta_t + 2) {
    issues.add("backtest.train_days must be at least delta_t + 2");
  }
  if (c.backtest.val_days < 2) issues.add("backtest.val_days must be >= 2");
  if (c.backtest.test_days < 1) issues.add("backtest.test_days must be >= 1");
  if (c.backtest.k_frac <= 0.0 || c.backtest.k_frac > 1.0) {
    issues.add("backtest.k_frac must be in (0,1]");
  }
  if (c.backtest.jobs < 1) issues.add("backtest.jobs must be >= 1");

  if (issues.any()) throw std::invalid_argument(issues.joined());

  c.train.seed = c.seed;
  c.data.seed = c.seed;
  return c;
}

}  // namespace omni::config
