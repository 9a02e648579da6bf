// Acceptance checks: one PASS/FAIL line per criterion, exit status is the
// number of failures.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>

#include "dwe/dwe.hpp"

using namespace dwe;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

template <typename T>
Tensor<T> random_tensor(Rng& rng, std::size_t rows, std::size_t cols) {
  Tensor<T> t(rows, cols);
  for (auto& v : t.values) v = static_cast<T>(rng.normal());
  return t;
}

template <typename T>
Tensor<T> permute_rows(const Tensor<T>& t, const std::vector<std::size_t>& perm) {
  Tensor<T> out(t.rows(), t.cols());
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) out.at(i, j) = t.at(perm[i], j);
  return out;
}

std::vector<std::size_t> random_perm(Rng& rng, std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  rng.shuffle(p.begin(), p.end());
  return p;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// ---------------------------------------------------------------------------

Outcome gradcheck_full_model() {
  const auto t0 = Clock::now();
  ModelGradCheckSetup s;
  s.dim = 8;
  s.heads = 2;
  s.n_queries = 2;
  s.batch = 3;
  s.objects_per_sample = 2;
  s.seed = 7;
  const GradCheckResult r = full_model_gradcheck(s);
  const double secs = seconds_since(t0);
  return {r.max_rel_error < 1e-4 && secs < 60.0,
          fmt("max rel err %.3g over %zu coordinates (worst %s), %.1f s", r.max_rel_error, r.coordinates,
              r.worst_param.c_str(), secs)};
}

// ---------------------------------------------------------------------------

TrainConfig enhancer_config(Rng& rng) {
  TrainConfig cfg;
  const std::size_t heads = 1 + rng.below(4);
  cfg.dims = Dims{heads * (1 + rng.below(4)), 1 + rng.below(10), 1 + rng.below(10)};
  cfg.model.heads = heads;
  cfg.model.n_queries = 1 + rng.below(4);
  cfg.seed = rng.below(1ULL << 62);
  return cfg;
}

template <typename T>
SampleFeatures<T> random_features(Rng& rng, const TrainConfig& cfg) {
  SampleFeatures<T> f;
  const auto& d = cfg.dims;
  const std::size_t l = 1 + rng.below(6);
  f.mention_tokens = random_tensor<T>(rng, 2 + rng.below(4), d.d);
  f.mention_pooled = random_tensor<T>(rng, 1, d.d);
  f.text_tokens = random_tensor<T>(rng, 3 + rng.below(8), d.d);
  f.anp_rows = random_tensor<T>(rng, 1 + rng.below(6), d.d);
  f.objects = random_tensor<T>(rng, l, d.d_obj);
  f.faces = random_tensor<T>(rng, l, d.d_face);
  for (std::size_t i = 0; i < l; ++i) f.has_face.push_back(rng.below(3) != 0);
  for (std::size_t i = 0; i < l; ++i)
    if (!f.has_face[i])
      for (std::size_t j = 0; j < d.d_face; ++j) f.faces.at(i, j) = T(0);
  return f;
}

template <typename T>
SampleFeatures<T> permuted(const SampleFeatures<T>& f, Rng& rng) {
  SampleFeatures<T> p = f;
  const auto po = random_perm(rng, f.objects.rows());
  p.objects = permute_rows(f.objects, po);
  p.faces = permute_rows(f.faces, po);
  for (std::size_t i = 0; i < po.size(); ++i) p.has_face[i] = f.has_face[po[i]];
  p.anp_rows = permute_rows(f.anp_rows, random_perm(rng, f.anp_rows.rows()));
  return p;
}

template <typename T>
std::pair<std::vector<T>, std::vector<T>> mv_ms(ParamStore<T>& store, const TrainConfig& cfg,
                                                const SampleFeatures<T>& f, AttentionTrace<T>* trace) {
  Tape<T> tape;
  const auto bound = bind_params(tape, store, cfg);
  const auto out = forward_sample(tape, bound, f, cfg, ForwardOptions{}, trace);
  return {out.m_v.value().values, out.m_s.value().values};
}

Outcome enhancer_invariants() {
  Rng rng(2024);
  double worst_row = 0.0, worst_f32 = 0.0;
  std::size_t bitwise_mismatch = 0, rows_checked = 0;
  for (int call = 0; call < 1000; ++call) {
    const TrainConfig cfg = enhancer_config(rng);
    auto store = init_params<double>(cfg);
    const auto f = random_features<double>(rng, cfg);
    const std::uint64_t perm_seed = rng.below(1ULL << 62);
    Rng perm_rng(perm_seed);
    const auto fp = permuted(f, perm_rng);

    AttentionTrace<double> trace;
    const auto [mv, ms] = mv_ms(store, cfg, f, &trace);
    for (const auto& w : trace.weights)
      for (std::size_t i = 0; i < w.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < w.cols(); ++j) s += w.at(i, j);
        worst_row = std::max(worst_row, std::abs(s - 1.0));
        ++rows_checked;
      }
    const auto [mv_p, ms_p] = mv_ms<double>(store, cfg, fp, nullptr);
    if (mv != mv_p || ms != ms_p) ++bitwise_mismatch;

    auto store32 = store.template cast<float>();
    const auto f32 = SampleFeatures<float>{f.mention_tokens.cast<float>(), f.mention_pooled.cast<float>(),
                                           f.text_tokens.cast<float>(),    f.anp_rows.cast<float>(),
                                           f.objects.cast<float>(),        f.faces.cast<float>(),
                                           f.has_face};
    Rng perm_rng32(perm_seed);
    const auto [a_v, a_s] = mv_ms<float>(store32, cfg, f32, nullptr);
    const auto [b_v, b_s] = mv_ms<float>(store32, cfg, permuted(f32, perm_rng32), nullptr);
    for (std::size_t j = 0; j < a_v.size(); ++j) {
      worst_f32 = std::max<double>(worst_f32, std::abs(a_v[j] - b_v[j]));
      worst_f32 = std::max<double>(worst_f32, std::abs(a_s[j] - b_s[j]));
    }
  }
  return {worst_row <= 1e-6 && bitwise_mismatch == 0 && worst_f32 <= 1e-6,
          fmt("%zu attention rows, max |sum-1| %.2g; 64-bit permutation mismatches %zu/1000; 32-bit max diff %.2g",
              rows_checked, worst_row, bitwise_mismatch, worst_f32)};
}

// ---------------------------------------------------------------------------

Outcome loss_properties() {
  Rng rng(99);
  std::size_t clear_cases = 0, clear_nonzero = 0, tie_wrong = 0;
  double worst_rescale = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    Tape<double> t;
    const std::size_t d = 2 + rng.below(8);
    const auto g = random_tensor<double>(rng, 1, d);
    auto pos = g;
    for (auto& v : pos.values) v += 0.3 * rng.normal();
    const auto neg = random_tensor<double>(rng, 1, d);
    const double margin = rng.uniform(0.05, 0.5);
    auto gv = t.constant(g), pv = t.constant(pos), nv = t.constant(neg);
    if (cosine(gv, pv).item() >= cosine(gv, nv).item() + margin) {
      ++clear_cases;
      if (triplet_loss(gv, pv, {nv}, margin).item() != 0.0) ++clear_nonzero;
    }
    if (triplet_loss(gv, pv, {t.constant(pos)}, margin).item() != margin) ++tie_wrong;
  }

  bool msc_small_zero = true;
  for (std::size_t n : {0, 1}) {
    Tape<double> t;
    msc_small_zero = msc_small_zero && msc_loss(t.constant(random_tensor<double>(rng, n, 4)),
                                                t.constant(random_tensor<double>(rng, n, 4)), 0.25)
                                               .item() == 0.0;
  }
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 2 + rng.below(10), d = 2 + rng.below(10);
    auto a = random_tensor<double>(rng, n, d), b = random_tensor<double>(rng, n, d);
    Tape<double> t;
    const double base = msc_loss(t.constant(a), t.constant(b), 0.25).item();
    for (std::size_t i = 0; i < n; ++i) {
      const double sa = std::exp(rng.uniform(-4, 4)), sb = std::exp(rng.uniform(-4, 4));
      for (std::size_t j = 0; j < d; ++j) {
        a.at(i, j) *= sa;
        b.at(i, j) *= sb;
      }
    }
    worst_rescale = std::max(worst_rescale, std::abs(msc_loss(t.constant(a), t.constant(b), 0.25).item() - base));
  }
  return {clear_cases > 100 && clear_nonzero == 0 && tie_wrong == 0 && msc_small_zero && worst_rescale <= 1e-6,
          fmt("triplet nonzero on %zu/%zu clear cases, %zu/1000 ties != margin; msc n<2 zero: %s; "
              "max rescale drift %.2g",
              clear_nonzero, clear_cases, tie_wrong, msc_small_zero ? "yes" : "no", worst_rescale)};
}

// ---------------------------------------------------------------------------

std::size_t reference_distance(const std::u32string& a, const std::u32string& b) {
  std::vector<std::vector<std::size_t>> dp(a.size() + 1, std::vector<std::size_t>(b.size() + 1));
  for (std::size_t i = 0; i <= a.size(); ++i) dp[i][0] = i;
  for (std::size_t j = 0; j <= b.size(); ++j) dp[0][j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i)
    for (std::size_t j = 1; j <= b.size(); ++j)
      dp[i][j] = std::min({dp[i - 1][j] + 1, dp[i][j - 1] + 1, dp[i - 1][j - 1] + (a[i - 1] != b[j - 1])});
  return dp[a.size()][b.size()];
}

Outcome retrieval_exact() {
  Rng rng(5150);
  const auto synth = synth_build([] {
    SynthConfig c;
    c.n_entities = 1000;
    c.n_samples = 0;
    c.seed = 77;
    c.dims = Dims{8, 8, 8};
    return c;
  }());
  const EntityIndex index(synth.entities);
  std::vector<std::u32string> folded;
  for (const auto& e : synth.entities) folded.push_back(unicode::fold_code_points(e.name));

  std::size_t mismatched = 0;
  for (int q = 0; q < 200; ++q) {
    // real names, prefixes and random edits
    std::string mention = synth.entities[rng.below(1000)].name;
    if (q % 3 == 1) mention = mention.substr(0, 1 + rng.below(mention.size()));
    if (q % 3 == 2) mention[rng.below(mention.size())] = static_cast<char>('a' + rng.below(26));
    const std::size_t lambda = 1 + rng.below(100);
    RetrievalQuery query;
    query.mention = mention;
    query.lambda = lambda;
    const auto got = retrieve_candidates(index, query).candidates;

    const auto m = unicode::fold_code_points(mention);
    std::vector<ScoredEntity> all;
    for (std::size_t i = 0; i < synth.entities.size(); ++i) {
      const double longest = static_cast<double>(std::max<std::size_t>({1, m.size(), folded[i].size()}));
      all.push_back({synth.entities[i].entity_id, 1.0 - static_cast<double>(reference_distance(m, folded[i])) / longest});
    }
    std::sort(all.begin(), all.end(), [](const auto& x, const auto& y) {
      return x.score != y.score ? x.score > y.score : x.entity_id < y.entity_id;
    });
    all.resize(lambda);
    if (got != all) ++mismatched;
  }

  std::size_t lev_mismatch = 0;
  static const char32_t alphabet[] = U"abcxyzé北";
  for (int i = 0; i < 10000; ++i) {
    std::u32string a, b;
    for (std::size_t k = rng.below(12); k > 0; --k) a.push_back(alphabet[rng.below(8)]);
    for (std::size_t k = rng.below(12); k > 0; --k) b.push_back(alphabet[rng.below(8)]);
    if (levenshtein(a, b) != reference_distance(a, b)) ++lev_mismatch;
  }
  return {mismatched == 0 && lev_mismatch == 0,
          fmt("%zu/200 queries differ from brute force; %zu/10000 edit distances differ", mismatched, lev_mismatch)};
}

// ---------------------------------------------------------------------------

Outcome evaluation_exact(const fs::path& work) {
  SynthConfig sc;
  sc.n_entities = 60;
  sc.n_samples = 100;
  sc.seed = 3;
  sc.dims = Dims{8, 12, 8};
  const fs::path dir = work / "eval_fixture";
  synth_generate(sc, dir);
  const Dataset ds = load_dataset(dir);
  TrainConfig cfg;
  cfg.dims = sc.dims;
  cfg.model.heads = 2;
  cfg.model.n_queries = 2;
  cfg.lambda = 20;
  auto store = init_params<float>(cfg);
  const auto prep = prepare_data<float>(ds, cfg, cfg.lambda);
  const RankingReport report = evaluate(store, cfg, ds, prep, all_indices(ds));

  std::size_t rank_mismatch = 0;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto g = joint_feature(store, cfg, prep.features[i]);
    std::vector<std::pair<double, std::string>> scored;
    for (const auto& c : prep.eval_candidates[i].candidates) {
      const auto& e = prep.entity_vectors.at(c.entity_id).values;
      double dot = 0, ng = 0, ne = 0;
      for (std::size_t j = 0; j < g.size(); ++j) {
        dot += double(g[j]) * double(e[j]);
        ng += double(g[j]) * double(g[j]);
        ne += double(e[j]) * double(e[j]);
      }
      scored.push_back({dot / (std::sqrt(ng) * std::sqrt(ne)), c.entity_id});
    }
    std::sort(scored.begin(), scored.end(),
              [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
    std::optional<std::size_t> gold_rank;
    const auto& gold = ds.samples[i].gold_entity_id;
    for (std::size_t k = 0; k < scored.size(); ++k)
      if (scored[k].second == gold) gold_rank = k + 1;
    // ties with the gold count against it
    if (gold_rank) {
      const double gs = scored[*gold_rank - 1].first;
      for (std::size_t k = *gold_rank; k < scored.size(); ++k)
        if (std::abs(scored[k].first - gs) <= 1e-6 * std::abs(gs)) ++*gold_rank;
    }
    if (report.samples[i].gold_rank != gold_rank) ++rank_mismatch;
  }
  const bool monotone = report.top1() <= report.top5() && report.top5() <= report.top10() &&
                        report.top10() <= report.top20();

  // cosines 0.47, 0.81, 0.13 against g = (1, 0)
  CandidateSet cs;
  std::map<std::string, Tensor<double>> vecs;
  for (auto [id, c] : {std::pair{"A", 0.47}, std::pair{"B", 0.81}, std::pair{"C", 0.13}}) {
    cs.candidates.push_back({id, 0.0});
    vecs.emplace(id, Tensor<double>::row({c, std::sqrt(1 - c * c)}));
  }
  const std::vector<double> g{1.0, 0.0};
  const auto ranked = score_candidates<double>(std::span<const double>(g), cs, vecs);
  const bool example = ranked.front().entity_id == "B";
  return {rank_mismatch == 0 && monotone && example,
          fmt("%zu/100 gold ranks differ from brute force; top1/5/10/20 = %.2f/%.2f/%.2f/%.2f; "
              "example picks %s (%.2f)",
              rank_mismatch, report.top1(), report.top5(), report.top10(), report.top20(),
              ranked.front().entity_id.c_str(), ranked.front().score)};
}

// ---------------------------------------------------------------------------

constexpr std::size_t kLearnSamples = 120;

SynthConfig learning_synth() {
  SynthConfig sc;
  sc.n_entities = 200;
  sc.n_samples = kLearnSamples;
  sc.noise = 0.1;
  sc.n_distractors = 3;
  sc.seed = 1;
  sc.dims = Dims{32, 48, 32};
  return sc;
}

// Default hyperparameters, λ = 16, a 100/20 train/dev split, 500 steps.
TrainConfig learning_config() {
  TrainConfig cfg;
  cfg.dims = learning_synth().dims;
  cfg.lambda = 16;
  cfg.split.train = 100.0 / kLearnSamples;
  cfg.split.dev = 20.0 / kLearnSamples;
  cfg.schedule.max_steps = 500;
  cfg.schedule.eval_every_steps = 0;
  return cfg;
}

double final_top1(const TrainResult& r, const std::string& split) {
  for (auto it = r.metrics.rbegin(); it != r.metrics.rend(); ++it)
    if (it->split == split) return it->top1;
  return -1.0;
}

Outcome synthetic_learning(const Dataset& ds) {
  const TrainConfig cfg = learning_config();
  auto init = init_params<float>(cfg);
  const auto prep = prepare_data<float>(ds, cfg, cfg.lambda);
  const RankingReport at_init = evaluate(init, cfg, ds, prep, all_indices(ds));
  const double p = 1.0 / 16.0;
  const double sigma = std::sqrt(p * (1 - p) / static_cast<double>(ds.samples.size()));
  const bool chance = std::abs(at_init.top1() - p) <= 3 * sigma;

  const auto t0 = Clock::now();
  const TrainResult r = train(cfg, ds);
  const double secs = seconds_since(t0);
  const double tr = final_top1(r, "train"), dv = final_top1(r, "dev");
  return {tr >= 0.95 && dv >= 0.80 && secs < 300.0 && chance,
          fmt("train top1 %.3f (>=0.95), dev top1 %.3f (>=0.80), %zu steps in %.0f s; "
              "init top1 %.3f vs 1/16 +- %.3f",
              tr, dv, r.steps, secs, at_init.top1(), 3 * sigma)};
}

// Ablation runs use a configuration under which the model learns in 500
// steps: lr 1e-2, no dropout, no alignment term.
TrainConfig ablation_config(std::uint64_t seed, bool use_mv) {
  TrainConfig cfg = learning_config();
  cfg.optim.lr = 1e-2;
  cfg.model.dropout = 0.0;
  cfg.loss.beta = 0.0;
  cfg.seed = seed;
  cfg.ablation.use_mv = use_mv;
  return cfg;
}

Outcome visual_ablation(const Dataset& ds) {
  double full = 0.0, ablated = 0.0;
  std::string per_seed;
  for (std::uint64_t seed : {1, 2, 3}) {
    const double a = final_top1(train(ablation_config(seed, true), ds), "dev");
    const double b = final_top1(train(ablation_config(seed, false), ds), "dev");
    full += a / 3;
    ablated += b / 3;
    per_seed += fmt(" %.2f/%.2f", a, b);
  }
  return {full - ablated >= 0.05, fmt("dev top1 full %.3f vs no m_v %.3f (seeds:%s)", full, ablated, per_seed.c_str())};
}

Outcome determinism(const Dataset& ds, const fs::path& data_dir, const fs::path& work) {
  TrainConfig cfg = ablation_config(11, true);
  cfg.schedule.max_steps = 60;
  cfg.schedule.eval_every_steps = 20;
  std::vector<std::string> files;
  for (const char* run : {"run_a", "run_b"}) {
    TrainOptions opt;
    opt.out_dir = work / run;
    opt.data_dir = data_dir.string();
    fs::remove_all(*opt.out_dir);
    train(cfg, ds, opt);
    for (const char* f : {"metrics.jsonl", "final.ckpt", "best.ckpt"}) files.push_back(file_bytes(*opt.out_dir / f));
  }
  const bool metrics_same = files[0] == files[3];
  const bool ckpt_same = files[1] == files[4] && files[2] == files[5];
  return {metrics_same && ckpt_same && !files[1].empty(),
          fmt("metrics logs identical: %s; checkpoints bit-identical: %s (%zu bytes)", metrics_same ? "yes" : "no",
              ckpt_same ? "yes" : "no", files[1].size())};
}

}  // namespace

int main() {
  const fs::path work = fs::temp_directory_path() / "dwe_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);

  int failures = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s [%d] %s: %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
    std::fflush(stdout);
  };

  report(1, "full-model gradient check", gradcheck_full_model);
  report(2, "attention rows and context permutation invariance", enhancer_invariants);
  report(3, "triplet and msc loss properties", loss_properties);
  report(4, "retrieval equals brute force, edit distance", retrieval_exact);
  report(5, "evaluation ranks equal brute force", [&] { return evaluation_exact(work); });

  const fs::path data_dir = work / "synthetic";
  synth_generate(learning_synth(), data_dir);
  const Dataset ds = load_dataset(data_dir);
  report(6, "synthetic learning with default hyperparameters", [&] { return synthetic_learning(ds); });
  report(7, "visual enhancer ablation", [&] { return visual_ablation(ds); });
  report(8, "run determinism", [&] { return determinism(ds, data_dir, work); });

  std::printf("%d of 8 criteria failed\n", failures);
  return failures;
}
