#include <fstream>

#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace dwe;
namespace fs = std::filesystem;

namespace {

const fs::path kFixture = DWE_TEST_DATA_DIR "/small";

void write_lines(const fs::path& p, const std::vector<std::string>& lines) {
  std::ofstream out(p, std::ios::binary);
  for (const auto& l : lines) out << l << "\n";
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

const std::string kEntity = R"({"entity_id":"E1","name":"Ann Lee","description_text":"Ann Lee is a singer"})";

std::string error_of(const fs::path& dir) {
  try {
    load_dataset(dir);
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

TrainConfig fixture_config() {
  TrainConfig c = test::tiny_config();
  c.split = SplitConfig{0.8, 0.2};
  return c;
}

}  // namespace

TEST(LoadDataset, CommittedFixture) {
  const Dataset ds = load_dataset(kFixture);
  EXPECT_EQ(ds.stats.samples, 50u);
  EXPECT_EQ(ds.stats.entities, 30u);
  EXPECT_EQ(ds.stats.mentions, 50u);
  EXPECT_EQ(ds.d_obj, 12u);
  EXPECT_EQ(ds.d_face, 8u);
  EXPECT_EQ(ds.samples.front().objects.size(), 2u);
  EXPECT_EQ(load_dataset(kFixture).content_hash, ds.content_hash);
  EXPECT_EQ(ds.content_hash.size(), 16u);
  EXPECT_NO_THROW(check_dimensions(ds, Dims{8, 12, 8}));
  EXPECT_THROW(check_dimensions(ds, Dims{8, 16, 8}), DataError);
  EXPECT_THROW(check_dimensions(ds, Dims{16, 12, 8}), DataError);
}

TEST(LoadDataset, HashFollowsContent) {
  const auto dir = test::temp_dir("hash");
  fs::copy(kFixture, dir, fs::copy_options::overwrite_existing | fs::copy_options::recursive);
  const auto before = load_dataset(dir).content_hash;
  std::ofstream(dir / kSamplesFile, std::ios::app) << "\n";
  EXPECT_NE(load_dataset(dir).content_hash, before);
}

TEST(LoadDataset, ReportsFileAndLine) {
  const auto dir = test::temp_dir("errors");
  write_lines(dir / kEntitiesFile, {kEntity});
  write_lines(dir / kSamplesFile,
              {R"({"sample_id":"s1","text":"Ann Lee sings","mention":"Ann Lee","gold_entity_id":"E1"})",
               R"({"sample_id":"s2","text":"x","mention":"Ann", "gold_entity_id":"E9"})"});
  const auto msg = error_of(dir);
  EXPECT_NE(msg.find("samples.jsonl"), std::string::npos) << msg;
  EXPECT_NE(msg.find("2"), std::string::npos) << msg;
  EXPECT_NE(msg.find("E9"), std::string::npos) << msg;

  write_lines(dir / kSamplesFile, {"{not json"});
  EXPECT_NE(error_of(dir).find("samples.jsonl"), std::string::npos);

  write_lines(dir / kSamplesFile,
              {R"({"sample_id":"s1","text":"a","mention":"Ann","gold_entity_id":"E1"})",
               R"({"sample_id":"s1","text":"b","mention":"Ann","gold_entity_id":"E1"})"});
  EXPECT_NE(error_of(dir).find("duplicate"), std::string::npos);

  write_lines(dir / kSamplesFile,
              {R"({"sample_id":"s1","text":"a","mention":"Ann","gold_entity_id":"E1","objects":[{"object_vec":[1,2]}]})",
               R"({"sample_id":"s2","text":"b","mention":"Ann","gold_entity_id":"E1","objects":[{"object_vec":[1]}]})"});
  EXPECT_NE(error_of(dir).find("s2"), std::string::npos);

  write_lines(dir / kEntitiesFile, {kEntity, kEntity});
  EXPECT_NE(error_of(dir).find("duplicate entity_id"), std::string::npos);

  write_lines(dir / kEntitiesFile, {R"({"entity_id":"E1","name":"x"})"});
  EXPECT_NE(error_of(dir).find("description"), std::string::npos);

  EXPECT_NE(error_of(dir / "missing").find("cannot open"), std::string::npos);
}

TEST(LoadDataset, MentionFormsAndOptionalFields) {
  const auto dir = test::temp_dir("forms");
  write_lines(dir / kEntitiesFile, {kEntity});
  write_lines(dir / kSamplesFile,
              {R"({"sample_id":"s1","text":"Ann Lee sings","mention":{"surface":"Ann Lee","span":[0,7]},)"
               R"("gold_entity_id":"E1","objects":[{"object_vec":[1,2],"face_attrs":{"gender":"female","age":30}}],)"
               R"("anps":["happy crowd"],"provided_candidates":["E1"],"mention_type":"person"})"});
  const Dataset ds = load_dataset(dir);
  const auto& s = ds.samples.at(0);
  EXPECT_EQ(s.mention.surface, "Ann Lee");
  EXPECT_EQ(s.mention.span, (std::make_pair<std::size_t, std::size_t>(0, 7)));
  EXPECT_EQ(s.objects.at(0).face_attrs.at("age"), "30");
  EXPECT_EQ(ds.d_face, 0u);
  EXPECT_EQ(s.provided_candidates, std::vector<std::string>{"E1"});

  write_lines(dir / kSamplesFile,
              {R"({"sample_id":"s1","text":"a","mention":"Ann","gold_entity_id":"E1",)"
               R"("objects":[{"object_vec":[1],"face_attrs":{"mood":"x"}}]})"});
  EXPECT_NE(error_of(dir).find("mood"), std::string::npos);
}

TEST(Synth, DeterministicFiles) {
  const auto a = test::temp_dir("synth_a"), b = test::temp_dir("synth_b"), c = test::temp_dir("synth_c");
  synth_generate(test::tiny_synth(20, 15, 9), a);
  synth_generate(test::tiny_synth(20, 15, 9), b);
  synth_generate(test::tiny_synth(20, 15, 10), c);
  EXPECT_EQ(slurp(a / kSamplesFile), slurp(b / kSamplesFile));
  EXPECT_EQ(slurp(a / kEntitiesFile), slurp(b / kEntitiesFile));
  EXPECT_NE(slurp(a / kSamplesFile), slurp(c / kSamplesFile));
  const Dataset ds = load_dataset(a);
  EXPECT_EQ(ds.stats.samples, 15u);
  EXPECT_EQ(ds.stats.entities, 20u);
}

TEST(Synth, NoiselessSignalRecoversEntity) {
  auto cfg = test::tiny_synth(10, 20, 4);
  cfg.noise = 0.0;
  const auto out = synth_build(cfg);
  const double gain = std::sqrt(static_cast<double>(cfg.dims.d_obj));
  std::map<std::string, std::vector<double>> vec;
  for (const auto& e : out.entities) vec[e.entity_id] = *e.description_vec;
  for (const auto& s : out.samples) {
    ASSERT_EQ(s.objects.size(), 1 + cfg.n_distractors);
    std::size_t with_face = 0;
    for (const auto& o : s.objects) {
      if (!o.face_vec) continue;
      ++with_face;
      // P has orthonormal columns, so Pᵀ·object / gain is the entity vector
      const auto& e = vec.at(s.gold_entity_id);
      for (std::size_t j = 0; j < cfg.dims.d; ++j) {
        double acc = 0;
        for (std::size_t i = 0; i < cfg.dims.d_obj; ++i) acc += out.object_projection[j][i] * o.object_vec[i];
        EXPECT_NEAR(acc / gain, e[j], 1e-12);
      }
    }
    EXPECT_EQ(with_face, 1u);
    EXPECT_EQ(s.mention.surface, s.text.substr(s.mention.span->first, s.mention.span->second - s.mention.span->first));
  }
}

TEST(Split, PartitionIsDisjointCoveringAndSeeded) {
  const Dataset ds = load_dataset(kFixture);
  const auto s = split_samples(ds.samples, SplitConfig{0.6, 0.2}, 3);
  EXPECT_EQ(s.train.size(), 30u);
  EXPECT_EQ(s.dev.size(), 10u);
  EXPECT_EQ(s.test.size(), 10u);
  std::vector<std::size_t> all = s.train;
  all.insert(all.end(), s.dev.begin(), s.dev.end());
  all.insert(all.end(), s.test.begin(), s.test.end());
  std::sort(all.begin(), all.end());
  EXPECT_EQ(all, all_indices(ds));
  EXPECT_EQ(split_samples(ds.samples, SplitConfig{0.6, 0.2}, 3).dev, s.dev);
  EXPECT_NE(split_samples(ds.samples, SplitConfig{0.6, 0.2}, 4).dev, s.dev);
}

TEST(Train, ZeroLearningRateLeavesParameters) {
  const Dataset ds = load_dataset(kFixture);
  TrainConfig cfg = fixture_config();
  cfg.optim.lr = 0.0;
  const TrainResult r = train(cfg, ds);
  const auto init = init_params<float>(cfg);
  EXPECT_EQ(r.steps, 5u);  // 40 train samples, batch 8
  for (const auto& name : init.names()) EXPECT_EQ(r.final_params.get(name).values, init.get(name).values) << name;
}

TEST(Train, LossDecreasesAndRunsRepeat) {
  const Dataset ds = load_dataset(kFixture);
  TrainConfig cfg = fixture_config();
  cfg.optim.lr = 1e-2;
  cfg.model.dropout = 0.1;
  cfg.schedule.epochs = 20;
  cfg.schedule.eval_every_steps = 25;
  const TrainResult a = train(cfg, ds);
  const TrainResult b = train(cfg, ds);
  ASSERT_EQ(a.step_losses.size(), 100u);
  double first = 0, last = 0;
  for (int i = 0; i < 10; ++i) {
    first += a.step_losses[i];
    last += a.step_losses[90 + i];
  }
  EXPECT_LT(last, 0.5 * first);
  EXPECT_EQ(a.step_losses, b.step_losses);
  EXPECT_EQ(a.metrics, b.metrics);
  // evaluations at 25, 50, 75 on dev, then train and dev at the end
  ASSERT_EQ(a.metrics.size(), 5u);
  EXPECT_EQ(a.metrics[3].split, "train");
  EXPECT_EQ(a.metrics[4].step, 100u);
  for (const auto& name : a.final_params.names()) EXPECT_EQ(a.final_params.get(name).values, b.final_params.get(name).values);
}

TEST(Train, AblatedUnitsStayFrozen) {
  TrainConfig cfg = fixture_config();
  cfg.ablation.use_mv = false;
  const auto store = init_params<float>(cfg);
  const TrainResult r = train(cfg, load_dataset(kFixture));
  EXPECT_GT(r.steps, 0u);
  std::size_t frozen = 0;
  for (const auto& name : store.names()) {
    if (name.rfind(kVisionUnit, 0) != 0 && name != kVisualProj) continue;
    ++frozen;
    EXPECT_FALSE(store.get(name).requires_grad) << name;
    EXPECT_EQ(r.final_params.get(name).values, store.get(name).values) << name;
  }
  EXPECT_EQ(frozen, 10u);
}

TEST(Train, WritesOutputs) {
  const auto out = test::temp_dir("train_out");
  TrainOptions opt;
  opt.out_dir = out;
  opt.data_dir = kFixture.string();
  train(fixture_config(), load_dataset(kFixture), opt);
  for (const char* f : {"final.ckpt", "best.ckpt", "metrics.jsonl", "split.json"}) EXPECT_TRUE(fs::exists(out / f)) << f;
  const auto split = nlohmann::json::parse(slurp(out / "split.json"));
  EXPECT_EQ(split.at("train").size(), 40u);
  EXPECT_EQ(split.at("dev").size(), 10u);
  const auto first = nlohmann::json::parse(slurp(out / "metrics.jsonl").substr(0, slurp(out / "metrics.jsonl").find('\n')));
  EXPECT_TRUE(first.contains("top1"));
}

TEST(Checkpoint, RoundTrip) {
  TrainConfig cfg = fixture_config();
  cfg.optim.lr = 3e-4;
  auto params = init_params<float>(cfg);
  params.set_step(17);
  const Checkpoint ck{cfg, params, "some/dir"};
  const Checkpoint back = deserialize_checkpoint(serialize_checkpoint(ck));
  EXPECT_EQ(nlohmann::json(back.config), nlohmann::json(cfg));
  EXPECT_EQ(back.data_dir, "some/dir");
  EXPECT_EQ(back.params.step(), 17u);
  EXPECT_EQ(back.params.names(), params.names());
  for (const auto& name : params.names()) {
    EXPECT_EQ(back.params.get(name).values, params.get(name).values);
    EXPECT_EQ(back.params.get(name).shape, params.get(name).shape);
  }
  EXPECT_EQ(serialize_checkpoint(back), serialize_checkpoint(ck));
}

TEST(Checkpoint, DetectsCorruption) {
  const TrainConfig cfg = fixture_config();
  const std::string bytes = serialize_checkpoint(Checkpoint{cfg, init_params<float>(cfg), ""});
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 1)), CorruptionError);
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, 10)), CorruptionError);
  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  EXPECT_THROW(deserialize_checkpoint(flipped), CorruptionError);
  std::string magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(magic), CorruptionError);
  EXPECT_THROW(load_checkpoint("/nonexistent/x.ckpt"), DataError);
}

TEST(Evaluate, PessimisticTies) {
  const std::vector<ScoredEntity> s = {{"A", 0.5}, {"G", 0.5}, {"B", 0.4}};
  EXPECT_EQ(pessimistic_rank(s, "G"), 2u);
  EXPECT_EQ(pessimistic_rank(s, "A"), 2u);
  EXPECT_EQ(pessimistic_rank(s, "B"), 3u);
  EXPECT_EQ(pessimistic_rank(s, "Z"), std::nullopt);
}

TEST(Evaluate, TopKAndMisses) {
  RankingReport r;
  for (auto rank : {std::optional<std::size_t>{1}, std::optional<std::size_t>{3}, std::optional<std::size_t>{12},
                    std::optional<std::size_t>{}}) {
    SampleRanking s;
    s.gold_rank = rank;
    r.samples.push_back(s);
  }
  finalize_topk(r);
  EXPECT_DOUBLE_EQ(r.top1(), 0.25);
  EXPECT_DOUBLE_EQ(r.top5(), 0.5);
  EXPECT_DOUBLE_EQ(r.top10(), 0.5);
  EXPECT_DOUBLE_EQ(r.top20(), 0.75);
  EXPECT_DOUBLE_EQ(r.retrieval_miss_rate(), 0.25);
}

TEST(Evaluate, PicksHighestCosine) {
  CandidateSet cs;
  std::map<std::string, Tensor<double>> vecs;
  for (auto [id, c] : {std::pair{"A", 0.47}, std::pair{"B", 0.81}, std::pair{"C", 0.13}}) {
    cs.candidates.push_back({id, 0.0});
    vecs.emplace(id, Tensor<double>::row({c, std::sqrt(1 - c * c)}));
  }
  const std::vector<double> g{2.0, 0.0};
  const auto ranked = score_candidates<double>(std::span<const double>(g), cs, vecs);
  ASSERT_EQ(ranked.size(), 3u);
  EXPECT_EQ(ranked[0].entity_id, "B");
  EXPECT_NEAR(ranked[0].score, 0.81, 1e-12);
  EXPECT_EQ(ranked[1].entity_id, "A");
  EXPECT_EQ(ranked[2].entity_id, "C");
}

TEST(Evaluate, SingleSampleRankingAgreesWithBatch) {
  const Dataset ds = load_dataset(kFixture);
  const TrainConfig cfg = fixture_config();
  auto store = init_params<float>(cfg);
  const auto prep = prepare_data<float>(ds, cfg, cfg.lambda);
  const auto report = evaluate(store, cfg, ds, prep, all_indices(ds));
  for (std::size_t i = 0; i < ds.samples.size(); i += 7) {
    const auto single = rank_single(store, cfg, ds, ds.samples[i], cfg.lambda);
    EXPECT_EQ(single.ranked, report.samples[i].ranked);
    EXPECT_EQ(single.gold_rank, report.samples[i].gold_rank);
  }
  const auto j = report_to_json(report);
  EXPECT_EQ(j.at("samples").size(), 50u);
}

TEST(Config, JsonRoundTripAndValidation) {
  TrainConfig c;
  c.model.heads = 4;
  c.lambda = 16;
  c.ablation.use_ms = false;
  EXPECT_EQ(nlohmann::json(parse_config(nlohmann::json(c))), nlohmann::json(c));
  const auto partial = parse_config(nlohmann::json::parse(R"({"lambda": 7})"));
  EXPECT_EQ(partial.lambda, 7u);
  EXPECT_EQ(partial.model.heads, 8u);
  EXPECT_THROW(parse_config(nlohmann::json::parse(R"({"model": {"heads": 3}})")), ConfigError);
  EXPECT_THROW(parse_config(nlohmann::json::parse(R"({"lambda": "many"})")), ConfigError);
  EXPECT_THROW(parse_config(nlohmann::json::parse(R"({"negatives": {"refresh": "never"}})")), ConfigError);
  EXPECT_NE(config_hash(c), config_hash(partial));
}

TEST(Train, EveryParameterReceivesGradient) {
  const Dataset ds = load_dataset(kFixture);
  TrainConfig cfg = fixture_config();
  cfg.model.dropout = 0.0;
  auto store = init_params<float>(cfg);
  // move b_g and the gate away from values where some gradients cancel
  for (auto& v : store.get(kFusionBg).values) v = 0.05f;
  store.get(kFusionAlpha).values[0] = 0.3f;
  const auto prep = prepare_data<float>(ds, cfg, cfg.lambda);
  std::vector<const SampleFeatures<float>*> feats;
  std::vector<std::string> golds;
  for (std::size_t i = 0; i < 8; ++i) {
    feats.push_back(&prep.features[i]);
    golds.push_back(ds.samples[i].gold_entity_id);
  }
  NegativePicker<float> pick = [&](std::size_t pos, std::span<const float>) {
    std::vector<std::string> others;
    for (std::size_t j = 0; j < golds.size(); ++j)
      if (j != pos && golds[j] != golds[pos]) others.push_back(golds[j]);
    return others;
  };
  Tape<float> tape;
  const auto bl = batch_loss<float>(tape, store, cfg, feats, golds, prep.entity_vectors, pick, ForwardOptions{});
  tape.backward(bl.terms.total);
  for (const auto& name : store.names()) {
    const auto& g = store.get(name).grad;
    ASSERT_FALSE(g.empty()) << name;
    float worst = 0;
    for (float v : g) worst = std::max(worst, std::abs(v));
    EXPECT_GT(worst, 0.0f) << name;
  }
}
