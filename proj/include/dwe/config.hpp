#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "dwe/errors.hpp"
#include "dwe/objective.hpp"
#include "dwe/param_store.hpp"
#include "dwe/rng.hpp"

namespace dwe {

struct Dims {
  std::size_t d = 512;
  std::size_t d_obj = 768;
  std::size_t d_face = 512;
};

struct ModelConfig {
  std::size_t heads = 8;
  std::size_t n_queries = 4;
  double dropout = 0.4;
};

struct ScheduleConfig {
  std::size_t epochs = 300;
  std::size_t max_steps = 0;  // 0: no cap beyond epochs
  std::size_t eval_every_steps = 2000;
  std::size_t batch_size = 64;
};

struct NegativesConfig {
  std::size_t k_hard = 1;
  std::string refresh = "step";  // step | epoch
};

struct AblationFlags {
  bool use_mt = true;
  bool use_mv = true;
  bool use_ms = true;
  bool use_face = true;
  bool use_alignment = true;
};

struct SplitConfig {
  double train = 0.8;
  double dev = 0.1;
};

struct TrainConfig {
  Dims dims;
  ModelConfig model;
  AdamWConfig optim;
  LossConfig loss;
  NegativesConfig negatives;
  ScheduleConfig schedule;
  AblationFlags ablation;
  SplitConfig split;
  std::size_t lambda = 100;
  std::uint64_t seed = 0;
  std::uint64_t encoder_seed = 42;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Dims, d, d_obj, d_face)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, heads, n_queries, dropout)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AdamWConfig, lr, weight_decay, beta1, beta2, eps)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LossConfig, margin, beta, tau, reversed_triplet)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(NegativesConfig, k_hard, refresh)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ScheduleConfig, epochs, max_steps, eval_every_steps, batch_size)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AblationFlags, use_mt, use_mv, use_ms, use_face, use_alignment)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SplitConfig, train, dev)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, dims, model, optim, loss, negatives, schedule, ablation,
                                                split, lambda, seed, encoder_seed)

inline void validate(const TrainConfig& c) {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (c.dims.d == 0 || c.dims.d_obj == 0) fail("dims.d and dims.d_obj must be positive");
  if (c.model.heads == 0 || c.dims.d % c.model.heads != 0) fail("dims.d must be divisible by model.heads");
  if (c.model.n_queries == 0) fail("model.n_queries must be >= 1");
  if (!(c.model.dropout >= 0.0 && c.model.dropout < 1.0)) fail("model.dropout must lie in [0, 1)");
  if (!(c.loss.tau > 0.0)) fail("loss.tau must be positive");
  if (c.loss.beta < 0.0) fail("loss.beta must be non-negative");
  if (c.loss.margin < 0.0) fail("loss.margin must be non-negative");
  if (c.schedule.batch_size == 0) fail("schedule.batch_size must be >= 1");
  if (c.lambda == 0) fail("lambda must be >= 1");
  if (c.negatives.refresh != "step" && c.negatives.refresh != "epoch") fail("negatives.refresh must be step or epoch");
  if (c.split.train < 0.0 || c.split.dev < 0.0 || c.split.train + c.split.dev > 1.0) fail("invalid split fractions");
}

inline nlohmann::json to_json_value(const TrainConfig& c) { return nlohmann::json(c); }

inline std::uint64_t config_hash(const TrainConfig& c) { return fnv1a(to_json_value(c).dump()); }

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

inline TrainConfig parse_config(const nlohmann::json& j) {
  try {
    TrainConfig c = j.get<TrainConfig>();
    validate(c);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
  return parse_config(j);
}

}  // namespace dwe
