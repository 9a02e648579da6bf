#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dwe/dwe.hpp"

namespace fs = std::filesystem;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct TrainOverrides {
  std::optional<std::size_t> epochs, max_steps, batch_size, eval_every, lambda, heads, n_queries, k_hard, d, d_obj,
      d_face;
  std::optional<double> lr, weight_decay, dropout, margin, beta, tau;
  std::optional<std::uint64_t> seed;
  std::optional<bool> use_mt, use_mv, use_ms, use_face, use_alignment, reversed_triplet;
  std::optional<std::string> refresh;

  void apply(dwe::TrainConfig& c) const {
    auto set = [](auto& dst, const auto& src) {
      if (src) dst = *src;
    };
    set(c.schedule.epochs, epochs);
    set(c.schedule.max_steps, max_steps);
    set(c.schedule.batch_size, batch_size);
    set(c.schedule.eval_every_steps, eval_every);
    set(c.lambda, lambda);
    set(c.model.heads, heads);
    set(c.model.n_queries, n_queries);
    set(c.model.dropout, dropout);
    set(c.negatives.k_hard, k_hard);
    set(c.negatives.refresh, refresh);
    set(c.dims.d, d);
    set(c.dims.d_obj, d_obj);
    set(c.dims.d_face, d_face);
    set(c.optim.lr, lr);
    set(c.optim.weight_decay, weight_decay);
    set(c.loss.margin, margin);
    set(c.loss.beta, beta);
    set(c.loss.tau, tau);
    set(c.loss.reversed_triplet, reversed_triplet);
    set(c.seed, seed);
    set(c.ablation.use_mt, use_mt);
    set(c.ablation.use_mv, use_mv);
    set(c.ablation.use_ms, use_ms);
    set(c.ablation.use_face, use_face);
    set(c.ablation.use_alignment, use_alignment);
  }
};

void print_report_summary(const dwe::RankingReport& r) {
  std::printf("split %s: %zu samples, top1 %.4f top5 %.4f top10 %.4f top20 %.4f, retrieval misses %zu\n",
              r.split.c_str(), r.samples.size(), r.top1(), r.top5(), r.top10(), r.top20(), r.retrieval_misses);
}

std::vector<std::size_t> split_indices(const dwe::Dataset& ds, const dwe::TrainConfig& cfg, const std::string& split) {
  if (split == "all") return dwe::all_indices(ds);
  const dwe::DataSplit s = dwe::split_samples(ds.samples, cfg.split, cfg.seed);
  if (split == "train") return s.train;
  if (split == "dev") return s.dev;
  if (split == "test") return s.test;
  throw dwe::UsageError("unknown split '" + split + "' (expected all, train, dev or test)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-way enhanced multimodal entity linking engine"};
  app.require_subcommand(1);

  // synth
  dwe::SynthConfig synth;
  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth_cmd->add_option("--entities", synth.n_entities, "Number of entities")->required();
  synth_cmd->add_option("--samples", synth.n_samples, "Number of samples")->required();
  synth_cmd->add_option("--noise", synth.noise, "Noise norm on the signal object");
  synth_cmd->add_option("--distractors", synth.n_distractors, "Distractor objects per sample");
  synth_cmd->add_option("--seed", synth.seed, "Random seed");
  synth_cmd->add_option("--feature-scale", synth.feature_scale, "Per-coordinate rms of object/face vectors");
  synth_cmd->add_option("--dim", synth.dims.d, "Entity/text dimension");
  synth_cmd->add_option("--obj-dim", synth.dims.d_obj, "Object feature dimension");
  synth_cmd->add_option("--face-dim", synth.dims.d_face, "Face feature dimension");
  synth_cmd->add_option("--out", synth_out, "Output directory")->required();

  // train
  std::string train_config, train_data, train_out;
  TrainOverrides ov;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--config", train_config, "JSON config file");
  train_cmd->add_option("--data", train_data, "Dataset directory")->required();
  train_cmd->add_option("--out", train_out, "Output directory")->required();
  train_cmd->add_option("--epochs", ov.epochs);
  train_cmd->add_option("--max-steps", ov.max_steps);
  train_cmd->add_option("--batch-size", ov.batch_size);
  train_cmd->add_option("--eval-every", ov.eval_every);
  train_cmd->add_option("--lambda", ov.lambda);
  train_cmd->add_option("--heads", ov.heads);
  train_cmd->add_option("--queries", ov.n_queries);
  train_cmd->add_option("--k-hard", ov.k_hard);
  train_cmd->add_option("--refresh", ov.refresh);
  train_cmd->add_option("--dim", ov.d);
  train_cmd->add_option("--obj-dim", ov.d_obj);
  train_cmd->add_option("--face-dim", ov.d_face);
  train_cmd->add_option("--lr", ov.lr);
  train_cmd->add_option("--weight-decay", ov.weight_decay);
  train_cmd->add_option("--dropout", ov.dropout);
  train_cmd->add_option("--margin", ov.margin);
  train_cmd->add_option("--beta", ov.beta);
  train_cmd->add_option("--tau", ov.tau);
  train_cmd->add_option("--seed", ov.seed);
  train_cmd->add_option("--use-mt", ov.use_mt);
  train_cmd->add_option("--use-mv", ov.use_mv);
  train_cmd->add_option("--use-ms", ov.use_ms);
  train_cmd->add_option("--use-face", ov.use_face);
  train_cmd->add_option("--use-alignment", ov.use_alignment);
  train_cmd->add_option("--reversed-triplet", ov.reversed_triplet);

  // eval
  std::string eval_ckpt, eval_data, eval_report, eval_split = "all";
  std::optional<std::size_t> eval_lambda;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint (Top-k accuracy)");
  eval_cmd->add_option("--ckpt", eval_ckpt)->required();
  eval_cmd->add_option("--data", eval_data)->required();
  eval_cmd->add_option("--lambda", eval_lambda, "Candidates per mention (default: checkpoint config)");
  eval_cmd->add_option("--report", eval_report, "Write the full JSON report here");
  eval_cmd->add_option("--split", eval_split, "all | train | dev | test");

  // rank
  std::string rank_ckpt, rank_sample, rank_data;
  std::optional<std::size_t> rank_lambda;
  auto* rank_cmd = app.add_subcommand("rank", "Score the candidates of one sample");
  rank_cmd->add_option("--ckpt", rank_ckpt)->required();
  rank_cmd->add_option("--sample", rank_sample, "File holding one sample JSON object")->required();
  rank_cmd->add_option("--data", rank_data, "Dataset directory (default: the one recorded in the checkpoint)");
  rank_cmd->add_option("--lambda", rank_lambda);

  // gradcheck
  dwe::ModelGradCheckSetup gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of the full model loss");
  gc_cmd->add_option("--dim", gc.dim);
  gc_cmd->add_option("--heads", gc.heads);
  gc_cmd->add_option("--queries", gc.n_queries);
  gc_cmd->add_option("--batch", gc.batch);
  gc_cmd->add_option("--seed", gc.seed);

  // stats
  std::string stats_data;
  auto* stats_cmd = app.add_subcommand("stats", "Validate a dataset and print its statistics");
  stats_cmd->add_option("--data", stats_data)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*synth_cmd) {
      dwe::synth_generate(synth, synth_out);
      std::printf("wrote %zu entities and %zu samples to %s\n", synth.n_entities, synth.n_samples, synth_out.c_str());
    } else if (*train_cmd) {
      dwe::TrainConfig cfg = train_config.empty() ? dwe::TrainConfig{} : dwe::load_config(train_config);
      ov.apply(cfg);
      dwe::validate(cfg);
      const dwe::Dataset ds = dwe::load_dataset(train_data);
      std::cout << dwe::format_stats(ds.stats) << "\n";
      dwe::TrainOptions opt;
      opt.out_dir = train_out;
      opt.data_dir = fs::absolute(train_data).string();
      opt.progress = &std::cout;
      const dwe::TrainResult r = dwe::train(cfg, ds, opt);
      std::printf("trained %zu steps; best dev top1 %.4f; checkpoints in %s\n", r.steps, r.best_dev_top1,
                  train_out.c_str());
    } else if (*eval_cmd) {
      dwe::Checkpoint ck = dwe::load_checkpoint(eval_ckpt);
      const dwe::Dataset ds = dwe::load_dataset(eval_data);
      const std::size_t lambda = eval_lambda.value_or(ck.config.lambda);
      const auto prep = dwe::prepare_data<float>(ds, ck.config, lambda);
      const auto report = dwe::evaluate(ck.params, ck.config, ds, prep, split_indices(ds, ck.config, eval_split), eval_split);
      print_report_summary(report);
      if (!eval_report.empty()) std::ofstream(eval_report) << dwe::report_to_json(report).dump(2) << "\n";
    } else if (*rank_cmd) {
      dwe::Checkpoint ck = dwe::load_checkpoint(rank_ckpt);
      const std::string data_dir = rank_data.empty() ? ck.data_dir : rank_data;
      if (data_dir.empty()) throw dwe::UsageError("rank: no --data given and the checkpoint records no dataset");
      const dwe::Dataset ds = dwe::load_dataset(data_dir);
      std::ifstream in(rank_sample);
      if (!in) throw dwe::DataError("cannot open sample file '" + rank_sample + "'");
      nlohmann::json j;
      try {
        in >> j;
      } catch (const nlohmann::json::exception& e) {
        throw dwe::DataError(rank_sample + ": malformed JSON: " + e.what());
      }
      if (!j.contains("gold_entity_id")) j["gold_entity_id"] = "";
      const dwe::MultimodalSample s = dwe::parse_sample(dwe::detail::RecordReader(j, rank_sample, 1));
      const auto r = dwe::rank_single(ck.params, ck.config, ds, s, rank_lambda.value_or(ck.config.lambda));
      for (std::size_t i = 0; i < r.ranked.size(); ++i) {
        const auto& c = r.ranked[i];
        std::printf("%zu\t%s\t%.6f\t%s\n", i + 1, c.entity_id.c_str(), c.score, ds.index.at(c.entity_id).name.c_str());
      }
    } else if (*gc_cmd) {
      const auto r = dwe::full_model_gradcheck(gc);
      std::printf("coordinates %zu, max relative error %.3e (param %s[%zu]: autodiff %.6e, numeric %.6e)\n",
                  r.coordinates, r.max_rel_error, r.worst_param.c_str(), r.worst_index, r.autodiff_grad,
                  r.numeric_grad);
      return r.max_rel_error < 1e-4 ? kOk : kNumeric;
    } else if (*stats_cmd) {
      const dwe::Dataset ds = dwe::load_dataset(stats_data);
      std::cout << dwe::format_stats(ds.stats) << "\n";
    }
  } catch (const dwe::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const dwe::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const dwe::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const dwe::Error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  }
  return kOk;
}
