#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace dwe {

struct EntityRecord {
  std::string entity_id;
  std::string name;
  std::optional<std::string> type;
  std::optional<std::string> description_text;
  std::optional<std::vector<double>> description_vec;
};

struct DetectedObject {
  std::vector<double> object_vec;
  std::optional<std::vector<double>> face_vec;
  // Facial attributes (gender, race, age, emotion); encoded through a prompt
  // sentence when face_vec is absent.
  std::map<std::string, std::string> face_attrs;
};

struct Mention {
  std::string surface;
  std::optional<std::pair<std::size_t, std::size_t>> span;
};

struct MultimodalSample {
  std::string sample_id;
  std::string text;
  Mention mention;
  std::string gold_entity_id;
  std::vector<DetectedObject> objects;
  std::vector<std::string> anps;
  std::vector<std::vector<double>> anp_vecs;
  std::vector<std::string> provided_candidates;
  std::optional<std::string> mention_type;
};

}  // namespace dwe
