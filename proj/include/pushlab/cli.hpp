#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pushlab/agent.hpp"
#include "pushlab/config.hpp"
#include "pushlab/env.hpp"
#include "pushlab/metrics.hpp"
#include "pushlab/vision.hpp"

namespace pushlab::cli {

inline physics::TableBounds table_from_config(config::RunConfig& cfg) {
  const double size = cfg.get_double("table_size", 0.4);
  if (size <= 0.0) throw ConfigError("table_size must be positive");
  physics::TableBounds table;
  table.lo = {-size / 2.0, -size / 2.0};
  table.hi = {size / 2.0, size / 2.0};
  return table;
}

inline env::SampleRanges ranges_from_preset(const std::string& preset) {
  if (preset == "table1") return env::SampleRanges{};
  if (preset == "small-friction") return env::SampleRanges::small_friction_eval();
  if (preset == "smoke") return env::SampleRanges::smoke_discs();
  throw ConfigError("unknown preset '" + preset + "' (expected table1|small-friction|smoke)");
}

inline env::ObsMode obs_mode_from_name(const std::string& name) {
  if (name == "oracle") return env::ObsMode::kOracle;
  if (name == "encoder") return env::ObsMode::kEncoder;
  throw ConfigError("unknown observation mode '" + name + "' (expected encoder|oracle)");
}

// ---------------------------------------------------------------------------
// train-encoder

inline int cmd_train_encoder(config::RunConfig& cfg) {
  cfg.require_known({"seed", "out", "masks", "holdout", "epochs", "batch", "lr",
                     "table_size"});
  const std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_long("seed", 0));
  const std::string out_dir = cfg.get("out", "runs/encoder");
  const int n_masks = cfg.get_int("masks", 5000);
  const int n_holdout = cfg.get_int("holdout", 500);
  const int epochs = cfg.get_int("epochs", 60);
  const int batch = cfg.get_int("batch", 128);
  const double lr = cfg.get_double("lr", 1e-3);
  const physics::TableBounds table = table_from_config(cfg);

  std::filesystem::create_directories(out_dir);
  cfg.write_resolved(out_dir + "/resolved_config.txt");

  Rng rng(seed);
  const std::vector<vision::Mask> train_set = env::render_random_masks(n_masks, rng, table);
  const std::vector<vision::Mask> holdout = env::render_random_masks(n_holdout, rng, table);

  std::ofstream loss_csv(out_dir + "/encoder_loss.csv", std::ios::trunc);
  loss_csv << "epoch,loss\n";

  vision::TrainEncoderOptions opts;
  opts.batch_size = batch;
  opts.learning_rate = lr;
  opts.on_epoch = [&](int epoch, float loss) {
    char row[64];
    std::snprintf(row, sizeof(row), "%d,%.6g\n", epoch, static_cast<double>(loss));
    loss_csv << row;
    std::printf("epoch %3d  loss %.5f\n", epoch, static_cast<double>(loss));
    std::fflush(stdout);
  };

  const vision::EncoderModel model =
      vision::train_autoencoder(train_set, epochs, seed, opts);
  vision::save_encoder(model, out_dir + "/encoder.bin");

  double iou = 0.0;
  for (const auto& m : holdout) iou += vision::reconstruction_iou(model, m);
  iou /= holdout.empty() ? 1 : holdout.size();
  std::printf("held-out IoU over %d masks: %.4f\n", n_holdout, iou);
  std::printf("encoder checkpoint: %s\n", (out_dir + "/encoder.bin").c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// train

inline int cmd_train(config::RunConfig& cfg) {
  cfg.require_known({"seed", "out", "variant", "obs", "encoder", "steps", "preset",
                     "table_size", "gru_hidden", "mlp_hidden", "batch", "lr", "gamma", "tau",
                     "her_k", "gradient_steps", "eval_interval", "eval_episodes",
                     "learning_starts", "stop_success", "buffer_episodes"});
  const agent::AgentVariant variant = agent::variant_from_name(cfg.get("variant", "vpm"));
  const env::ObsMode obs = obs_mode_from_name(cfg.get("obs", "oracle"));
  const std::string encoder_path = cfg.get("encoder", "runs/encoder/encoder.bin");

  vision::EncoderModel encoder;
  if (obs == env::ObsMode::kEncoder) {
    if (!std::filesystem::exists(encoder_path))
      throw ConfigError("encoder checkpoint not found at '" + encoder_path +
                        "'; train one with `pushlab train-encoder` or pass --encoder PATH");
    encoder = vision::load_encoder(encoder_path);
  }

  agent::TrainConfig tc;
  tc.sac.variant = variant;
  tc.sac.gru_hidden = cfg.get_int("gru_hidden", 128);
  tc.sac.mlp_hidden = cfg.get_int_list("mlp_hidden", "256,256");
  tc.sac.batch_size = cfg.get_int("batch", 256);
  tc.sac.lr = cfg.get_double("lr", 3e-4);
  tc.sac.gamma = cfg.get_double("gamma", 0.95);
  tc.sac.tau = cfg.get_double("tau", 0.005);
  tc.sac.her_k = cfg.get_int("her_k", 4);
  tc.sac.buffer_capacity_episodes = cfg.get_int("buffer_episodes", 2000);
  tc.seed = static_cast<std::uint64_t>(cfg.get_long("seed", 0));
  tc.total_env_steps = cfg.get_long("steps", 200000);
  tc.learning_starts = cfg.get_long("learning_starts", 1000);
  tc.gradient_steps_per_episode = cfg.get_int("gradient_steps", 50);
  tc.eval_interval_episodes = cfg.get_int("eval_interval", 50);
  tc.eval_episodes = cfg.get_int("eval_episodes", 100);
  tc.stop_at_success_rate = cfg.get_double("stop_success", -1.0);
  tc.out_dir = cfg.get("out", "runs/train-" + agent::variant_name(variant));

  tc.env_cfg.world.table = table_from_config(cfg);
  tc.env_cfg.ranges = ranges_from_preset(cfg.get("preset", "table1"));
  tc.env_cfg.obs = obs;
  tc.env_cfg.encoder = obs == env::ObsMode::kEncoder ? &encoder : nullptr;

  std::filesystem::create_directories(tc.out_dir);
  cfg.write_resolved(tc.out_dir + "/resolved_config.txt");

  std::printf("training %s (%s observations) for up to %ld env steps\n",
              agent::variant_name(variant).c_str(),
              obs == env::ObsMode::kEncoder ? "encoder" : "oracle", tc.total_env_steps);
  const agent::TrainResult result = agent::train(tc);
  std::printf("done: %ld env steps, %ld episodes, best eval success %.1f%%\n",
              result.env_steps, result.episodes, 100.0 * result.best_success_rate);
  if (result.discarded_episodes > 0)
    std::printf("discarded %d unstable episodes\n", result.discarded_episodes);
  std::printf("metrics: %s/metrics.csv\n", tc.out_dir.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// eval

inline int cmd_eval(config::RunConfig& cfg) {
  cfg.require_known({"seed", "out", "checkpoint", "encoder", "episodes", "preset",
                     "table_size", "export_trajectories"});
  const std::string ck_path = cfg.get("checkpoint", "runs/train-vpm/checkpoint_best.bin");
  if (!std::filesystem::exists(ck_path))
    throw ConfigError("agent checkpoint not found at '" + ck_path + "'; pass --checkpoint");
  agent::LoadedAgent loaded = agent::load_agent(ck_path);

  vision::EncoderModel encoder;
  env::EnvConfig env_cfg;
  env_cfg.world.table = table_from_config(cfg);
  env_cfg.ranges = ranges_from_preset(cfg.get("preset", "small-friction"));
  env_cfg.obs = loaded.obs_mode;
  if (loaded.obs_mode == env::ObsMode::kEncoder) {
    const std::string encoder_path = cfg.get("encoder", "runs/encoder/encoder.bin");
    if (!std::filesystem::exists(encoder_path))
      throw ConfigError("encoder checkpoint not found at '" + encoder_path +
                        "'; pass --encoder PATH");
    encoder = vision::load_encoder(encoder_path);
    env_cfg.encoder = &encoder;
  }

  const std::string out_dir = cfg.get("out", "runs/eval");
  std::filesystem::create_directories(out_dir);
  cfg.write_resolved(out_dir + "/resolved_config.txt");

  agent::EvalOptions eo;
  eo.episodes = cfg.get_int("episodes", 100);
  eo.seed = static_cast<std::uint64_t>(cfg.get_long("seed", 1));
  if (cfg.get_bool("export_trajectories", true)) eo.trajectory_dir = out_dir + "/trajectories";

  const std::vector<metrics::EpisodeRecord> records =
      agent::evaluate(loaded.state, env_cfg, eo);
  const metrics::EvalReport report = metrics::aggregate(records);
  metrics::write_report_csv(report, out_dir + "/eval_report.csv");
  const std::string table_text = metrics::format_report(report);
  {
    std::ofstream txt(out_dir + "/eval_report.txt", std::ios::trunc);
    txt << table_text;
  }
  std::fputs(table_text.c_str(), stdout);
  return 0;
}

// ---------------------------------------------------------------------------
// sample-friction

inline int cmd_sample_friction(config::RunConfig& cfg) {
  cfg.require_known({"seed", "out", "samples", "bins"});
  const std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_long("seed", 0));
  const long n = cfg.get_long("samples", 1000000);
  const int bins = cfg.get_int("bins", 50);
  const std::string out_dir = cfg.get("out", "runs/friction");
  std::filesystem::create_directories(out_dir);
  cfg.write_resolved(out_dir + "/resolved_config.txt");

  const env::SampleRanges ranges;
  const double f_lo = ranges.mass_lo * ranges.mu_lo * 9.81;
  const double f_hi = ranges.mass_hi * ranges.mu_hi * 9.81;
  const double width = (f_hi - f_lo) / bins;

  std::vector<long> count_uniform(bins, 0), count_exponential(bins, 0);
  auto bin_of = [&](double f) {
    int b = static_cast<int>((f - f_lo) / width);
    return std::clamp(b, 0, bins - 1);
  };
  Rng rng_u(seed);
  Rng rng_e(seed + 1);
  for (long i = 0; i < n; ++i) {
    const env::SampledObject u =
        env::sample_object(env::SamplerMode::kUniformIndependent, rng_u, ranges);
    count_uniform[bin_of(u.params.mu_k * u.params.mass * 9.81)] += 1;
    const env::SampledObject e =
        env::sample_object(env::SamplerMode::kExponentialMirrored, rng_e, ranges);
    count_exponential[bin_of(e.params.mu_k * e.params.mass * 9.81)] += 1;
  }

  const std::string path = out_dir + "/friction_histogram.csv";
  std::ofstream out(path, std::ios::trunc);
  out << "bin_lo,bin_hi,count_uniform,density_uniform,count_exponential,"
         "density_exponential\n";
  if (n > 0) {
    char row[256];
    for (int b = 0; b < bins; ++b) {
      const double lo = f_lo + b * width;
      const double du = static_cast<double>(count_uniform[b]) / (n * width);
      const double de = static_cast<double>(count_exponential[b]) / (n * width);
      std::snprintf(row, sizeof(row), "%.9g,%.9g,%ld,%.9g,%ld,%.9g\n", lo, lo + width,
                    count_uniform[b], du, count_exponential[b], de);
      out << row;
    }
  }
  std::printf("friction-force histogram: %s\n", path.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// dispatch

inline int run(const std::vector<std::string>& args) {
  CLI::App app{"planar pushing lab: encoder training, SAC+HER agents, evaluation"};
  app.require_subcommand(1);

  struct Flags {
    std::string config, seed, out, variant, obs, encoder, steps, episodes, checkpoint,
        preset, samples, bins, epochs, masks;
  } flags;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", flags.config, "key=value settings file");
    sub->add_option("--seed", flags.seed, "rng seed");
    sub->add_option("--out", flags.out, "output directory");
  };

  CLI::App* enc = app.add_subcommand("train-encoder", "train the mask autoencoder");
  add_common(enc);
  enc->add_option("--epochs", flags.epochs, "training epochs");
  enc->add_option("--masks", flags.masks, "training masks to render");

  CLI::App* train = app.add_subcommand("train", "train a pushing agent");
  add_common(train);
  train->add_option("--variant", flags.variant, "vpm|stacked|ugru|egru");
  train->add_option("--obs", flags.obs, "encoder|oracle");
  train->add_option("--encoder", flags.encoder, "encoder checkpoint path");
  train->add_option("--steps", flags.steps, "environment step budget");
  train->add_option("--preset", flags.preset, "table1|small-friction|smoke");

  CLI::App* eval = app.add_subcommand("eval", "evaluate an agent checkpoint");
  add_common(eval);
  eval->add_option("--checkpoint", flags.checkpoint, "agent checkpoint path");
  eval->add_option("--encoder", flags.encoder, "encoder checkpoint path");
  eval->add_option("--episodes", flags.episodes, "evaluation episodes");
  eval->add_option("--preset", flags.preset, "table1|small-friction|smoke");

  CLI::App* fric = app.add_subcommand("sample-friction", "export friction-force densities");
  add_common(fric);
  fric->add_option("--samples", flags.samples, "draws per sampler mode");
  fric->add_option("--bins", flags.bins, "histogram bins");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    config::RunConfig cfg;
    if (!flags.config.empty()) cfg.load_file(flags.config);
    auto maybe_set = [&](const char* key, const std::string& v) {
      if (!v.empty()) cfg.set(key, v);
    };
    maybe_set("seed", flags.seed);
    maybe_set("out", flags.out);
    maybe_set("variant", flags.variant);
    maybe_set("obs", flags.obs);
    maybe_set("encoder", flags.encoder);
    maybe_set("steps", flags.steps);
    maybe_set("episodes", flags.episodes);
    maybe_set("checkpoint", flags.checkpoint);
    maybe_set("preset", flags.preset);
    maybe_set("samples", flags.samples);
    maybe_set("bins", flags.bins);
    maybe_set("epochs", flags.epochs);
    maybe_set("masks", flags.masks);

    if (enc->parsed()) return cmd_train_encoder(cfg);
    if (train->parsed()) return cmd_train(cfg);
    if (eval->parsed()) return cmd_eval(cfg);
    if (fric->parsed()) return cmd_sample_friction(cfg);
    std::fprintf(stderr, "no subcommand given\n");
    return 2;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace pushlab::cli
