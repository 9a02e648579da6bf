#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "dwe/dataset.hpp"
#include "dwe/errors.hpp"
#include "dwe/records.hpp"
#include "dwe/rng.hpp"

namespace dwe {

struct SynthConfig {
  std::size_t n_entities = 200;
  std::size_t n_samples = 100;
  double noise = 0.1;  // per-coordinate noise sd, relative to feature_scale
  double feature_scale = 1.0;  // per-coordinate rms of object and face vectors
  std::size_t n_distractors = 3;
  std::uint64_t seed = 0;
  Dims dims{32, 48, 32};
  std::size_t n_anps = 3;
};

inline constexpr std::array<const char*, 24> kSynthSyllables = {
    "ka", "lo", "mi", "ra", "ven", "tor", "sa", "li", "do", "ne", "qua", "zer",
    "pa", "ti", "mon", "bel", "ru", "xi", "gar", "fen", "os", "ul", "dra", "ith"};

inline constexpr std::array<const char*, 16> kSynthAnps = {
    "nice clouds", "white dress", "happy man",   "dark street", "bright stage", "old building",
    "smiling woman", "green field", "crowded hall", "red curtain", "blue sky",    "quiet room",
    "formal suit", "wet road",     "tall tower",  "golden light"};

inline constexpr std::array<const char*, 12> kSynthFiller = {
    "at", "the", "with", "during", "near", "photo", "event", "meeting", "of", "and", "in", "today"};

inline constexpr std::array<const char*, 3> kSynthTypes = {"person", "location", "organization"};

namespace detail {

inline std::vector<double> gaussian_unit(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  double sq = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    sq += x * x;
  }
  const double norm = std::sqrt(sq);
  for (auto& x : v) x /= norm;
  return v;
}

// rows×cols matrix; when rows >= cols the columns are orthonormal, so
// Pᵀ·(P·e) = e.
inline std::vector<std::vector<double>> random_projection(Rng& rng, std::size_t rows, std::size_t cols) {
  std::vector<std::vector<double>> colv;
  for (std::size_t c = 0; c < cols; ++c) {
    std::vector<double> v(rows);
    for (auto& x : v) x = rng.normal();
    if (rows >= cols) {
      for (const auto& u : colv) {
        double dot = 0.0;
        for (std::size_t r = 0; r < rows; ++r) dot += u[r] * v[r];
        for (std::size_t r = 0; r < rows; ++r) v[r] -= dot * u[r];
      }
    }
    double sq = 0.0;
    for (double x : v) sq += x * x;
    for (auto& x : v) x /= std::sqrt(sq);
    colv.push_back(std::move(v));
  }
  return colv;
}

inline std::vector<double> project(const std::vector<std::vector<double>>& cols, const std::vector<double>& e) {
  std::vector<double> out(cols.front().size(), 0.0);
  for (std::size_t c = 0; c < cols.size(); ++c)
    for (std::size_t r = 0; r < out.size(); ++r) out[r] += cols[c][r] * e[c];
  return out;
}

}  // namespace detail

struct SynthOutput {
  std::vector<EntityRecord> entities;
  std::vector<MultimodalSample> samples;
  // Column-major object projection (d columns of length d_obj).
  std::vector<std::vector<double>> object_projection;
};

// Desk-scale stand-in corpus: each sample carries one object whose vector is
// its gold entity's description vector pushed through a fixed projection
// plus noise, a correlated face vector, and random distractor objects.
// Mentions equal the gold entity name so fuzzy retrieval ranks gold first.
inline SynthOutput synth_build(const SynthConfig& cfg) {
  if (cfg.n_entities < 2) throw ConfigError("synth: need at least 2 entities");
  const auto& dims = cfg.dims;
  Rng rng(cfg.seed);
  SynthOutput out;
  out.object_projection = detail::random_projection(rng, dims.d_obj, dims.d);
  const auto face_projection = detail::random_projection(rng, dims.d_face, dims.d);

  std::set<std::string> used_names;
  for (std::size_t i = 0; i < cfg.n_entities; ++i) {
    std::string name;
    do {
      name.clear();
      const std::size_t first = 2 + rng.below(2);
      for (std::size_t s = 0; s < first; ++s) name += kSynthSyllables[rng.below(kSynthSyllables.size())];
      name += ' ';
      for (std::size_t s = 0; s < 2; ++s) name += kSynthSyllables[rng.below(kSynthSyllables.size())];
      name[0] = static_cast<char>(name[0] - 'a' + 'A');
    } while (!used_names.insert(name).second);
    EntityRecord e;
    char id[16];
    std::snprintf(id, sizeof id, "E%05zu", i);
    e.entity_id = id;
    e.name = name;
    e.type = kSynthTypes[rng.below(kSynthTypes.size())];
    e.description_text = name + " is a synthetic " + *e.type + " entity";
    e.description_vec = detail::gaussian_unit(rng, dims.d);
    out.entities.push_back(std::move(e));
  }

  const double obj_gain = cfg.feature_scale * std::sqrt(static_cast<double>(dims.d_obj));
  const double face_gain = cfg.feature_scale * std::sqrt(static_cast<double>(dims.d_face));
  const double noise_sd = cfg.noise * cfg.feature_scale;
  for (std::size_t i = 0; i < cfg.n_samples; ++i) {
    MultimodalSample s;
    char id[16];
    std::snprintf(id, sizeof id, "S%05zu", i);
    s.sample_id = id;
    const auto& gold = out.entities[rng.below(out.entities.size())];
    s.gold_entity_id = gold.entity_id;
    s.mention.surface = gold.name;
    s.mention_type = gold.type;

    std::string text;
    const std::size_t before = 1 + rng.below(3);
    for (std::size_t w = 0; w < before; ++w) text += std::string(kSynthFiller[rng.below(kSynthFiller.size())]) + " ";
    s.mention.span = std::make_pair(text.size(), text.size() + gold.name.size());
    text += gold.name;
    const std::size_t after = 2 + rng.below(4);
    for (std::size_t w = 0; w < after; ++w) text += " " + std::string(kSynthFiller[rng.below(kSynthFiller.size())]);
    s.text = text;

    DetectedObject signal;
    signal.object_vec = detail::project(out.object_projection, *gold.description_vec);
    for (auto& x : signal.object_vec) x = obj_gain * x + noise_sd * rng.normal();
    std::vector<double> face = detail::project(face_projection, *gold.description_vec);
    for (auto& x : face) x = face_gain * x + noise_sd * rng.normal();
    signal.face_vec = std::move(face);

    std::vector<DetectedObject> objects{std::move(signal)};
    for (std::size_t k = 0; k < cfg.n_distractors; ++k) {
      DetectedObject d;
      d.object_vec = detail::gaussian_unit(rng, dims.d_obj);
      for (auto& x : d.object_vec) x *= obj_gain;
      objects.push_back(std::move(d));
    }
    rng.shuffle(objects.begin(), objects.end());
    s.objects = std::move(objects);

    for (std::size_t a = 0; a < cfg.n_anps; ++a) s.anps.emplace_back(kSynthAnps[rng.below(kSynthAnps.size())]);
    out.samples.push_back(std::move(s));
  }
  return out;
}

inline SynthOutput synth_generate(const SynthConfig& cfg, const std::filesystem::path& dir) {
  SynthOutput out = synth_build(cfg);
  write_dataset(dir, out.entities, out.samples);
  return out;
}

}  // namespace dwe
