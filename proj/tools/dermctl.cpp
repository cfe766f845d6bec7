// dermctl: synthesize data, train the GAN, sample from it, cross-validate the
// classifier and sweep synthetic counts. Every command reads one RunConfig.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "derm/checkpoint.hpp"
#include "derm/io.hpp"
#include "derm/pipeline.hpp"

namespace fs = std::filesystem;
using namespace derm;
using pipeline::RunConfig;

namespace {

struct Overrides {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> folds;
  std::optional<double> lambda;
  std::optional<int> synthetic_count;
  std::optional<int> jobs;
  bool no_ihd = false;
  bool no_gda = false;
  bool no_color_constancy = false;
};

RunConfig resolve(const Overrides& o) {
  RunConfig cfg = o.config_path.empty() ? RunConfig{} : RunConfig::load(o.config_path);
  for (const std::string& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) cfg.seed = *o.seed;
  if (o.out) cfg.out = *o.out;
  if (o.folds) cfg.train.folds = *o.folds;
  if (o.lambda) cfg.model.lambda = *o.lambda;
  if (o.synthetic_count) cfg.train.synthetic_count = *o.synthetic_count;
  if (o.jobs) cfg.jobs = *o.jobs;
  if (o.no_ihd) {
    cfg.model.lambda = 0.0;
    cfg.model.hair_branch = false;
  }
  if (o.no_gda) cfg.train.use_gda = false;
  if (o.no_color_constancy) cfg.model.use_color_constancy = false;
  return cfg;
}

void write_json(const fs::path& path, const nlohmann::json& j) { io::write_file_atomic(path, j.dump(2) + "\n"); }

synth::Dataset load_preprocessed(const fs::path& manifest, const RunConfig& cfg) {
  return pipeline::preprocess_dataset(synth::load_manifest(manifest), pipeline::effective_preprocess(cfg),
                                      cfg.model.input_size, cfg.jobs);
}

int cmd_synth(const RunConfig& cfg) {
  const auto out = pipeline::make_dataset(cfg);
  pipeline::write_dataset(out, cfg);
  std::printf("wrote %zu train + %zu test images to %s\n", out.data.train.size(), out.data.test.size(),
              cfg.manifest_path().string().c_str());
  std::printf("realized hair/melanoma correlation: train %.4f, test %.4f\n", out.train_phi, out.test_phi);
  return 0;
}

int cmd_gan(const RunConfig& cfg) {
  const auto data = synth::load_manifest(cfg.manifest_path());
  const auto pair = pipeline::fit_gan(data, cfg);
  const fs::path path = cfg.gan_checkpoint_path();
  pipeline::save_gan(pair, cfg, path);
  nlohmann::json log = nlohmann::json::array();
  for (const auto& e : pair.log)
    log.push_back({{"epoch", e.epoch}, {"critic_loss", e.critic_loss}, {"generator_loss", e.generator_loss}});
  write_json(path.string() + ".json", {{"config", cfg.echo()}, {"log", log}});
  const auto& last = pair.log.empty() ? gda::GanEpochLog{} : pair.log.back();
  std::printf("trained GAN for %d epochs (critic loss %.6f, generator loss %.6f); checkpoint %s\n", pair.epochs_done,
              last.critic_loss, last.generator_loss, path.string().c_str());
  return 0;
}

int cmd_gan_sample(const RunConfig& cfg) {
  const int n = cfg.train.synthetic_count;
  if (n == 0) {
    std::printf("synthetic count is 0; nothing written\n");
    return 0;
  }
  const auto data = synth::load_manifest(cfg.manifest_path());
  auto pair = pipeline::load_gan(cfg.gan_checkpoint_path());
  const auto result = pipeline::synthesize(pair, data, n, cfg);
  const fs::path path = cfg.synthetic_manifest_path();
  synth::save_manifest(result.report.samples, path);
  write_json(path.string() + ".json", {{"config", cfg.echo()},
                                       {"emitted", result.report.samples.size()},
                                       {"attempts", result.report.attempts},
                                       {"acceptance_rate", result.report.acceptance_rate()},
                                       {"mse_floor", result.mse_floor}});
  std::printf("emitted %zu synthetic positives after %lld candidates (acceptance %.4f, mse floor %.6g) to %s\n",
              result.report.samples.size(), static_cast<long long>(result.report.attempts),
              result.report.acceptance_rate(), result.mse_floor, path.string().c_str());
  return 0;
}

synth::Dataset training_synthetic(const RunConfig& cfg) {
  if (!cfg.train.use_gda || cfg.train.synthetic_count == 0) return {};
  const fs::path path = cfg.synthetic_manifest_path();
  synth::Dataset all = load_preprocessed(path, cfg);
  const auto n = static_cast<std::size_t>(cfg.train.synthetic_count);
  if (all.size() < n)
    throw ContractError(path.string() + " holds " + std::to_string(all.size()) + " synthetic samples but " +
                        std::to_string(n) + " were requested");
  for (const auto& s : all)
    if (s.source != synth::Source::synthetic_gan)
      throw IngestionError(path.string() + ": row '" + s.id + "' is not a synthetic_gan sample");
  all.resize(n);
  return all;
}

int cmd_train(const RunConfig& cfg) {
  const auto data = load_preprocessed(cfg.manifest_path(), cfg);
  const auto synthetic = training_synthetic(cfg);
  const auto cv = pipeline::cross_validate(data, synthetic, cfg);
  const fs::path dir = fs::path(cfg.out) / "train";
  for (const auto& f : cv.folds) {
    const std::string stem = "fold_" + std::to_string(f.fold);
    write_json(dir / (stem + ".json"), pipeline::fold_json(f, cfg));
    if (f.report) {
      ckpt::save({cfg.echo(), ckpt::to_double(f.params)}, dir / (stem + ".ckpt"));
      std::printf("fold %d: auc %.6f (%lld pos, %lld neg)\n", f.fold, f.report->auc,
                  static_cast<long long>(f.report->n_pos), static_cast<long long>(f.report->n_neg));
    } else {
      std::printf("fold %d: FAILED (%s)\n", f.fold, f.error.c_str());
    }
  }
  write_json(dir / "aggregate.json", pipeline::aggregate_json(cv, cfg));
  if (cv.summary) std::printf("mean auc %.6f +/- %.6f over %zu folds\n", cv.summary->mean, cv.summary->std, cv.summary->folds);
  if (!cv.ok()) {
    for (const auto& f : cv.folds)
      if (!f.report) throw Error(f.error_kind, "fold " + std::to_string(f.fold) + " failed: " + f.error);
  }
  return 0;
}

int cmd_sweep(const RunConfig& cfg) {
  const auto raw = synth::load_manifest(cfg.manifest_path());
  int max_count = 0;
  for (int c : cfg.train.sweep_counts) max_count = std::max(max_count, c);
  synth::Dataset synthetic;
  if (max_count > 0) {
    auto pair = pipeline::load_gan(cfg.gan_checkpoint_path());
    synthetic = pipeline::preprocess_dataset(pipeline::synthesize(pair, raw, max_count, cfg).report.samples,
                                             pipeline::effective_preprocess(cfg), cfg.model.input_size, cfg.jobs);
  }
  const auto data =
      pipeline::preprocess_dataset(raw, pipeline::effective_preprocess(cfg), cfg.model.input_size, cfg.jobs);
  const auto rows = pipeline::sweep(data, synthetic, cfg.train.sweep_counts, cfg);
  const fs::path dir = fs::path(cfg.out) / "sweep";
  const std::string csv = pipeline::sweep_csv(rows);
  io::write_file_atomic(dir / "sweep.csv", csv);
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& r : rows)
    if (!r.summary) failures.push_back({{"n_synthetic", r.n_synthetic}, {"message", r.error}});
  write_json(dir / "sweep.json", {{"config", cfg.echo()}, {"failures", failures}});
  std::fputs(csv.c_str(), stdout);
  if (!failures.empty())
    throw Error("sweep", std::to_string(failures.size()) + " sweep point(s) failed; see " + (dir / "sweep.json").string());
  return 0;
}

void report_error(const std::string& command, const std::string& kind, const std::string& message,
                  const std::optional<std::string>& out_dir) {
  const nlohmann::json record = {{"error", {{"command", command}, {"kind", kind}, {"message", message}}}};
  std::cerr << record.dump() << "\n";
  if (!out_dir) return;
  try {
    io::write_file_atomic(fs::path(*out_dir) / "error.json", record.dump(2) + "\n");
  } catch (const std::exception&) {
    // The record on stderr is still authoritative.
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Melanoma classification pipeline on a from-scratch autodiff core"};
  app.require_subcommand(1);
  Overrides o;
  app.add_option("--config", o.config_path, "key = value config file")->check(CLI::ExistingFile);
  app.add_option("--set", o.sets, "Override one config key (key=value); repeatable");
  app.add_option("--seed", o.seed, "Global seed");
  app.add_option("--out", o.out, "Output directory");
  app.add_option("--folds", o.folds, "Cross-validation folds");
  app.add_option("--lambda", o.lambda, "Hair-branch adversarial weight");
  app.add_option("--synthetic-count", o.synthetic_count, "Synthetic positives to sample or train with");
  app.add_option("--jobs", o.jobs, "Worker threads");
  app.add_flag("--no-ihd", o.no_ihd, "Disable the hair branch (lambda = 0)");
  app.add_flag("--no-gda", o.no_gda, "Train without synthetic positives");
  app.add_flag("--no-color-constancy", o.no_color_constancy, "Skip colour constancy");
  app.fallthrough();

  struct Command {
    const char* name;
    const char* help;
    int (*run)(const RunConfig&);
  };
  const Command commands[] = {
      {"synth", "Generate the confounded toy dataset (PNGs + manifest)", cmd_synth},
      {"gan", "Train the DCGAN on the training positives", cmd_gan},
      {"gan-sample", "Sample filtered synthetic positives from the generator", cmd_gan_sample},
      {"train", "Cross-validate the classifier; writes fold reports and an aggregate", cmd_train},
      {"sweep", "Cross-validate once per synthetic count; writes sweep.csv", cmd_sweep},
  };
  std::vector<CLI::App*> subs;
  for (const Command& c : commands) subs.push_back(app.add_subcommand(c.name, c.help));
  std::vector<std::string> counts;
  subs[4]->add_option("--counts", counts, "Synthetic counts (overrides train.sweep_counts)")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  std::string command;
  int (*run)(const RunConfig&) = nullptr;
  for (std::size_t i = 0; i < subs.size(); ++i)
    if (subs[i]->parsed()) {
      command = commands[i].name;
      run = commands[i].run;
    }

  std::optional<std::string> out_dir = o.out;
  try {
    if (!counts.empty()) {
      std::string joined;
      for (const auto& c : counts) joined += (joined.empty() ? "" : ",") + c;
      o.sets.push_back("train.sweep_counts=" + joined);
    }
    const RunConfig cfg = resolve(o);
    out_dir = cfg.out;
    cfg.validate();
    const int rc = run(cfg);
    std::error_code ec;
    fs::remove(fs::path(cfg.out) / "error.json", ec);
    return rc;
  } catch (const ConfigError& e) {
    report_error(command, e.kind(), e.what(), out_dir);
    return 2;
  } catch (const Error& e) {
    report_error(command, e.kind(), e.what(), out_dir);
    return 1;
  } catch (const std::exception& e) {
    report_error(command, "internal", e.what(), out_dir);
    return 1;
  }
}
