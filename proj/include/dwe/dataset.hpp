#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dwe/config.hpp"
#include "dwe/encoders.hpp"
#include "dwe/errors.hpp"
#include "dwe/records.hpp"
#include "dwe/retrieval.hpp"
#include "dwe/rng.hpp"

namespace dwe {

inline constexpr const char* kEntitiesFile = "entities.jsonl";
inline constexpr const char* kSamplesFile = "samples.jsonl";

struct DatasetStats {
  std::size_t samples = 0;
  std::size_t entities = 0;
  std::size_t mentions = 0;
  double mean_text_length = 0.0;  // tokens, markers excluded
};

struct Dataset {
  std::vector<MultimodalSample> samples;
  EntityIndex index;
  DatasetStats stats;
  std::size_t d_obj = 0;   // 0 when no sample carries objects
  std::size_t d_face = 0;  // 0 when no object carries a face vector
  std::string content_hash;
};

namespace detail {

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open '" + p.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// FNV-1a over git's blob framing ("blob <len>\0" + bytes).
inline std::uint64_t blob_hash(const std::string& content, std::uint64_t state = kFnvOffset) {
  const std::string header = "blob " + std::to_string(content.size());
  state = fnv1a(header, state);
  const unsigned char nul = 0;
  state = fnv1a(std::span<const unsigned char>(&nul, 1), state);
  return fnv1a(content, state);
}

class RecordReader {
 public:
  RecordReader(const nlohmann::json& j, std::string file, std::size_t line)
      : j_(j), file_(std::move(file)), line_(line) {}

  [[noreturn]] void fail(const std::string& field, const std::string& what) const {
    throw DataError(file_ + ":" + std::to_string(line_) + ": field '" + field + "': " + what);
  }

  bool has(const char* field) const { return j_.contains(field) && !j_.at(field).is_null(); }

  std::string str(const char* field) const {
    if (!has(field)) fail(field, "missing");
    if (!j_.at(field).is_string()) fail(field, "expected a string");
    return j_.at(field).get<std::string>();
  }

  std::optional<std::string> opt_str(const char* field) const {
    if (!has(field)) return std::nullopt;
    return str(field);
  }

  static std::vector<double> floats(const nlohmann::json& v, const RecordReader& r, const std::string& field) {
    if (!v.is_array()) r.fail(field, "expected an array of numbers");
    std::vector<double> out;
    out.reserve(v.size());
    for (const auto& x : v) {
      if (!x.is_number()) r.fail(field, "expected an array of numbers");
      out.push_back(x.get<double>());
    }
    return out;
  }

  std::vector<std::string> strings(const char* field) const {
    std::vector<std::string> out;
    if (!has(field)) return out;
    const auto& v = j_.at(field);
    if (!v.is_array()) fail(field, "expected an array of strings");
    for (const auto& x : v) {
      if (!x.is_string()) fail(field, "expected an array of strings");
      out.push_back(x.get<std::string>());
    }
    return out;
  }

  const nlohmann::json& json() const { return j_; }

 private:
  const nlohmann::json& j_;
  std::string file_;
  std::size_t line_;
};

template <typename Fn>
void for_each_line(const std::string& content, const std::string& file, Fn&& fn) {
  std::istringstream in(content);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(file + ":" + std::to_string(lineno) + ": malformed JSON: " + e.what());
    }
    if (!j.is_object()) throw DataError(file + ":" + std::to_string(lineno) + ": expected a JSON object");
    fn(RecordReader(j, file, lineno));
  }
}

}  // namespace detail

inline EntityRecord parse_entity(const detail::RecordReader& r) {
  EntityRecord e;
  e.entity_id = r.str("entity_id");
  e.name = r.str("name");
  e.type = r.opt_str("type");
  e.description_text = r.opt_str("description_text");
  if (r.has("description_vec")) {
    e.description_vec = detail::RecordReader::floats(r.json().at("description_vec"), r, "description_vec");
  }
  if (!e.description_text && !e.description_vec) r.fail("description_text", "entity needs description_text or description_vec");
  return e;
}

inline MultimodalSample parse_sample(const detail::RecordReader& r) {
  MultimodalSample s;
  s.sample_id = r.str("sample_id");
  s.text = r.str("text");
  s.gold_entity_id = r.str("gold_entity_id");
  if (!r.has("mention")) r.fail("mention", "missing");
  const auto& m = r.json().at("mention");
  if (m.is_string()) {
    s.mention.surface = m.get<std::string>();
  } else if (m.is_object()) {
    if (!m.contains("surface") || !m.at("surface").is_string()) r.fail("mention.surface", "expected a string");
    s.mention.surface = m.at("surface").get<std::string>();
    if (m.contains("span") && !m.at("span").is_null()) {
      const auto& sp = m.at("span");
      if (!sp.is_array() || sp.size() != 2 || !sp[0].is_number_unsigned() || !sp[1].is_number_unsigned() ||
          sp[0].get<std::size_t>() > sp[1].get<std::size_t>()) {
        r.fail("mention.span", "expected [start, end) with start <= end");
      }
      s.mention.span = std::make_pair(sp[0].get<std::size_t>(), sp[1].get<std::size_t>());
    }
  } else {
    r.fail("mention", "expected an object with 'surface'");
  }
  if (r.has("objects")) {
    const auto& objs = r.json().at("objects");
    if (!objs.is_array()) r.fail("objects", "expected an array");
    for (std::size_t i = 0; i < objs.size(); ++i) {
      const auto& o = objs[i];
      const std::string prefix = "objects[" + std::to_string(i) + "]";
      if (!o.is_object() || !o.contains("object_vec")) r.fail(prefix + ".object_vec", "missing");
      DetectedObject obj;
      obj.object_vec = detail::RecordReader::floats(o.at("object_vec"), r, prefix + ".object_vec");
      if (o.contains("face_vec") && !o.at("face_vec").is_null()) {
        obj.face_vec = detail::RecordReader::floats(o.at("face_vec"), r, prefix + ".face_vec");
      }
      if (o.contains("face_attrs") && !o.at("face_attrs").is_null()) {
        const auto& fa = o.at("face_attrs");
        if (!fa.is_object()) r.fail(prefix + ".face_attrs", "expected an object");
        for (const auto& [k, v] : fa.items()) {
          if (std::find(kFaceAttributeOrder.begin(), kFaceAttributeOrder.end(), k) == kFaceAttributeOrder.end()) {
            r.fail(prefix + ".face_attrs." + k, "unknown facial attribute");
          }
          obj.face_attrs[k] = v.is_string() ? v.get<std::string>() : v.dump();
        }
      }
      s.objects.push_back(std::move(obj));
    }
  }
  s.anps = r.strings("anps");
  if (r.has("anp_vecs")) {
    const auto& av = r.json().at("anp_vecs");
    if (!av.is_array()) r.fail("anp_vecs", "expected an array of vectors");
    for (std::size_t i = 0; i < av.size(); ++i) {
      s.anp_vecs.push_back(detail::RecordReader::floats(av[i], r, "anp_vecs[" + std::to_string(i) + "]"));
    }
  }
  s.provided_candidates = r.strings("provided_candidates");
  s.mention_type = r.opt_str("mention_type");
  return s;
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  const auto ent_path = dir / kEntitiesFile;
  const auto smp_path = dir / kSamplesFile;
  const std::string ent_content = detail::read_file(ent_path);
  const std::string smp_content = detail::read_file(smp_path);

  std::vector<EntityRecord> entities;
  detail::for_each_line(ent_content, kEntitiesFile, [&](const detail::RecordReader& r) {
    entities.push_back(parse_entity(r));
  });

  Dataset ds;
  try {
    ds.index = EntityIndex(std::move(entities));
  } catch (const DataError& e) {
    throw DataError(std::string(kEntitiesFile) + ": " + e.what());
  }

  std::set<std::string> seen_ids;
  std::size_t lineno = 0;
  std::size_t token_total = 0;
  detail::for_each_line(smp_content, kSamplesFile, [&](const detail::RecordReader& r) {
    ++lineno;
    MultimodalSample s = parse_sample(r);
    if (!seen_ids.insert(s.sample_id).second) r.fail("sample_id", "duplicate sample_id '" + s.sample_id + "'");
    if (!ds.index.contains(s.gold_entity_id)) {
      r.fail("gold_entity_id", "sample '" + s.sample_id + "' references unknown entity '" + s.gold_entity_id + "'");
    }
    for (const auto& id : s.provided_candidates) {
      if (!ds.index.contains(id)) r.fail("provided_candidates", "unknown entity '" + id + "' in sample '" + s.sample_id + "'");
    }
    for (const auto& o : s.objects) {
      if (ds.d_obj == 0) ds.d_obj = o.object_vec.size();
      if (o.object_vec.size() != ds.d_obj || o.object_vec.empty()) {
        r.fail("objects.object_vec", "sample '" + s.sample_id + "' has dimension " + std::to_string(o.object_vec.size()) +
                                         ", expected " + std::to_string(ds.d_obj));
      }
      if (o.face_vec) {
        if (ds.d_face == 0) ds.d_face = o.face_vec->size();
        if (o.face_vec->size() != ds.d_face || o.face_vec->empty()) {
          r.fail("objects.face_vec", "sample '" + s.sample_id + "' has dimension " + std::to_string(o.face_vec->size()) +
                                         ", expected " + std::to_string(ds.d_face));
        }
      }
    }
    token_total += tokenize(s.text).tokens.size() - 2;
    ds.samples.push_back(std::move(s));
  });

  ds.stats.samples = ds.samples.size();
  ds.stats.entities = ds.index.size();
  ds.stats.mentions = ds.samples.size();
  ds.stats.mean_text_length = ds.samples.empty() ? 0.0 : static_cast<double>(token_total) / ds.samples.size();
  ds.content_hash = hex64(detail::blob_hash(smp_content, detail::blob_hash(ent_content)));
  return ds;
}

inline std::string format_stats(const DatasetStats& s) {
  std::ostringstream os;
  os << "Sample\tEntity\tMention\tText length\n"
     << s.samples << "\t" << s.entities << "\t" << s.mentions << "\t";
  os.setf(std::ios::fixed);
  os.precision(1);
  os << s.mean_text_length;
  return os.str();
}

// Checks a loaded dataset against the engine dimensions.
inline void check_dimensions(const Dataset& ds, const Dims& dims) {
  if (ds.d_obj != 0 && ds.d_obj != dims.d_obj) {
    throw DataError("dataset object vectors have dimension " + std::to_string(ds.d_obj) + ", config expects " +
                    std::to_string(dims.d_obj));
  }
  if (ds.d_face != 0 && ds.d_face != dims.d_face) {
    throw DataError("dataset face vectors have dimension " + std::to_string(ds.d_face) + ", config expects " +
                    std::to_string(dims.d_face));
  }
  for (const auto& s : ds.samples) {
    for (const auto& v : s.anp_vecs) {
      if (v.size() != dims.d) {
        throw DataError("sample '" + s.sample_id + "': anp_vecs dimension " + std::to_string(v.size()) +
                        ", expected " + std::to_string(dims.d));
      }
    }
  }
  for (const auto& e : ds.index.entities()) {
    if (e.description_vec && e.description_vec->size() != dims.d) {
      throw DataError("entity '" + e.entity_id + "': description_vec dimension " +
                      std::to_string(e.description_vec->size()) + ", expected " + std::to_string(dims.d));
    }
  }
}

inline nlohmann::json to_json(const EntityRecord& e) {
  nlohmann::json j;
  j["entity_id"] = e.entity_id;
  j["name"] = e.name;
  if (e.type) j["type"] = *e.type;
  if (e.description_text) j["description_text"] = *e.description_text;
  if (e.description_vec) j["description_vec"] = *e.description_vec;
  return j;
}

inline nlohmann::json to_json(const MultimodalSample& s) {
  nlohmann::json j;
  j["sample_id"] = s.sample_id;
  j["text"] = s.text;
  nlohmann::json m;
  m["surface"] = s.mention.surface;
  if (s.mention.span) m["span"] = {s.mention.span->first, s.mention.span->second};
  j["mention"] = m;
  j["gold_entity_id"] = s.gold_entity_id;
  nlohmann::json objs = nlohmann::json::array();
  for (const auto& o : s.objects) {
    nlohmann::json oj;
    oj["object_vec"] = o.object_vec;
    if (o.face_vec) oj["face_vec"] = *o.face_vec;
    if (!o.face_attrs.empty()) oj["face_attrs"] = o.face_attrs;
    objs.push_back(oj);
  }
  j["objects"] = objs;
  if (!s.anps.empty()) j["anps"] = s.anps;
  if (!s.anp_vecs.empty()) j["anp_vecs"] = s.anp_vecs;
  if (!s.provided_candidates.empty()) j["provided_candidates"] = s.provided_candidates;
  if (s.mention_type) j["mention_type"] = *s.mention_type;
  return j;
}

inline void write_dataset(const std::filesystem::path& dir, const std::vector<EntityRecord>& entities,
                          const std::vector<MultimodalSample>& samples) {
  std::filesystem::create_directories(dir);
  std::ofstream ent(dir / kEntitiesFile, std::ios::binary);
  for (const auto& e : entities) ent << to_json(e).dump() << "\n";
  std::ofstream smp(dir / kSamplesFile, std::ios::binary);
  for (const auto& s : samples) smp << to_json(s).dump() << "\n";
  if (!ent || !smp) throw DataError("failed writing dataset to '" + dir.string() + "'");
}

struct DataSplit {
  std::vector<std::size_t> train, dev, test;  // sample indices, ascending
};

// Seeded shuffle of sample ids, then train/dev/test cut by fraction.
inline DataSplit split_samples(const std::vector<MultimodalSample>& samples, const SplitConfig& cfg, std::uint64_t seed) {
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return samples[a].sample_id < samples[b].sample_id; });
  Rng rng(seed ^ 0x5eed5eed5eed5eedULL);
  rng.shuffle(order.begin(), order.end());
  const auto n = static_cast<double>(order.size());
  const auto n_train = static_cast<std::size_t>(std::llround(cfg.train * n));
  const auto n_dev = std::min(order.size() - n_train, static_cast<std::size_t>(std::llround(cfg.dev * n)));
  DataSplit s;
  s.train.assign(order.begin(), order.begin() + n_train);
  s.dev.assign(order.begin() + n_train, order.begin() + n_train + n_dev);
  s.test.assign(order.begin() + n_train + n_dev, order.end());
  for (auto* v : {&s.train, &s.dev, &s.test}) std::sort(v->begin(), v->end());
  return s;
}

}  // namespace dwe
