#include "jct/cli.hpp"

#include "jct/verify.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>

namespace jct {

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "key=value config file");
  cmd->add_option("--set", opts.sets, "override as key=value (repeatable)");
}

std::vector<std::pair<std::string, std::string>> split_sets(const std::vector<std::string>& sets) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) fail("--set expects key=value, got '" + s + "'");
    out.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  return out;
}

RunConfig assemble_config(const CommonOpts& opts) {
  RunConfig cfg = opts.config_path.empty() ? RunConfig{} : load_config_file(opts.config_path);
  for (const auto& [k, v] : split_sets(opts.sets)) cfg.apply(k, v);
  return cfg;
}

void print_metrics(const std::string& tag, const MetricsReport& r) {
  std::printf("%s: mae=%.6f mse=%.6f nae=%s n=%d skipped_nae=%d\n", tag.c_str(), r.mae, r.mse,
              r.nae ? std::to_string(*r.nae).c_str() : "undefined", r.n_images, r.n_skipped_nae);
}

void write_metrics_csv(const EvalResult& res, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("eval: cannot write " + path);
  out << "split,mae,mse,nae,n_images,n_skipped_nae\n";
  auto row = [&out](const std::string& tag, const MetricsReport& r) {
    char buf[160];
    if (r.nae)
      std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g,%d,%d", tag.c_str(), r.mae, r.mse,
                    *r.nae, r.n_images, r.n_skipped_nae);
    else
      std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,,%d,%d", tag.c_str(), r.mae, r.mse,
                    r.n_images, r.n_skipped_nae);
    out << buf << "\n";
  };
  row("overall", res.overall);
  for (std::size_t i = 0; i < res.folds.size(); ++i)
    row("fold" + std::to_string(i + 1), res.folds[i]);
  if (!res.folds.empty()) row("fold_mean", res.fold_mean);
}

int cmd_train(const CommonOpts& opts, const std::string& out_dir) {
  RunConfig cfg = assemble_config(opts);
  cfg.validate();
  TrainState st = run_training_any(cfg, out_dir);
  if (st.aborted_nan) {
    std::fprintf(stderr, "training aborted: %s (last finite epoch %d)\n", st.abort_reason.c_str(),
                 st.last_finite_epoch);
    return 2;
  }
  std::printf("trained %zu epochs; best mae=%.6f mse=%.6f at epoch %d\n", st.log.size(),
              st.best_mae, st.best_mse, st.best_epoch);
  std::printf("outputs: %s/convergence.csv, %s/best.ckpt\n", out_dir.c_str(), out_dir.c_str());
  return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& checkpoint, const std::string& out_dir,
             const std::string& cv) {
  if (cv != "none" && cv != "kfold5") fail("--cv must be none or kfold5");
  EvalRun run = eval_checkpoint_any(checkpoint, split_sets(opts.sets), cv == "kfold5");
  std::filesystem::create_directories(out_dir);
  write_predictions_csv(run.result, out_dir + "/predictions.csv");
  write_metrics_csv(run.result, out_dir + "/metrics.csv");
  print_metrics("overall", run.result.overall);
  for (std::size_t i = 0; i < run.result.folds.size(); ++i)
    print_metrics("fold" + std::to_string(i + 1), run.result.folds[i]);
  if (!run.result.folds.empty()) print_metrics("fold_mean", run.result.fold_mean);
  double pad_total = 0.0;
  for (const auto& row : run.result.predictions) pad_total += row.pad_contribution;
  std::printf("padded-region count contribution (all images): %.6f\n", pad_total);
  return 0;
}

int cmd_gradcheck(const std::string& scale) {
  if (scale != "toy") fail("--scale currently supports only 'toy'");
  const auto results = run_gradcheck_suite();
  for (const auto& r : results)
    std::printf("[%s] %-28s max_rel_err=%.3e tol=%.0e (%zu checks)\n", r.pass ? "PASS" : "FAIL",
                r.name.c_str(), r.max_rel_err, r.tol, r.n_checked);
  return all_passed(results) ? 0 : 2;
}

int cmd_count_params(const CommonOpts& opts) {
  RunConfig cfg = assemble_config(opts);
  cfg.model.validate();
  JCTNetModel<double> m = build_model<double>(cfg.model, cfg.seed);
  const ParamCount pc = count_parameters(m);
  long long check = 0;
  for (const auto& [mod, n] : pc.by_module) {
    std::printf("%s: %lld (%.2f M)\n", mod.c_str(), n, static_cast<double>(n) / 1e6);
    check += n;
  }
  std::printf("total: %lld (%.2f M)\n", pc.total, static_cast<double>(pc.total) / 1e6);
  require(check == pc.total, "count-params: breakdown does not sum to the total");
  return 0;
}

int cmd_generate_data(const CommonOpts& opts, const std::string& out_dir) {
  RunConfig cfg = assemble_config(opts);
  const auto samples = generate_synthetic(cfg.synth, cfg.synth_n);
  std::filesystem::create_directories(out_dir);
  std::vector<std::pair<std::string, long long>> rows;
  for (const auto& s : samples) {
    save_image_pnm(s, out_dir + "/" + s.name);
    rows.emplace_back(s.name, s.count);
  }
  save_labels_csv(rows, out_dir + "/labels.csv");
  std::printf("wrote %zu images and labels.csv under %s\n", samples.size(), out_dir.c_str());
  return 0;
}

int cmd_dump_features(const std::string& checkpoint, const std::string& image,
                      const std::string& stage, int channel, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  const std::string out_path =
      out_dir + "/" + stage + "_c" + std::to_string(stage == "crm" ? 0 : channel) + ".pgm";
  dump_feature_map_any(checkpoint, image, stage, channel, out_path);
  std::printf("wrote %s\n", out_path.c_str());
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"jctnet: weakly supervised crowd counting (CNN + windowed transformer)"};
  app.require_subcommand(1);

  CommonOpts train_opts, eval_opts, count_opts, gen_opts;
  std::string train_out, eval_out = "eval_out", eval_ckpt, eval_cv = "none";
  std::string gc_scale = "toy";
  std::string gen_out;
  std::string df_ckpt, df_image, df_stage = "crm", df_out = "features";
  int df_channel = 0;

  auto* train = app.add_subcommand("train", "train a model and log convergence");
  add_common(train, train_opts);
  train->add_option("--out", train_out, "output directory")->required();

  // eval takes its base configuration from the checkpoint header, so only
  // --set overrides make sense here
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--set", eval_opts.sets, "override as key=value (repeatable)");
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required();
  eval->add_option("--out", eval_out, "output directory");
  eval->add_option("--cv", eval_cv, "none | kfold5");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference verification suite");
  gradcheck->add_option("--scale", gc_scale, "model scale (toy)");

  auto* count = app.add_subcommand("count-params", "parameter totals per module");
  add_common(count, count_opts);

  auto* gen = app.add_subcommand("generate-data", "write a synthetic count-labeled dataset");
  add_common(gen, gen_opts);
  gen->add_option("--out", gen_out, "output directory")->required();

  auto* dump = app.add_subcommand("dump-features", "export a stage feature map as PGM");
  dump->add_option("--checkpoint", df_ckpt, "checkpoint path")->required();
  dump->add_option("--image", df_image, "input PGM/PPM image")->required();
  dump->add_option("--stage", df_stage, "cfm | tfm | crm");
  dump->add_option("--channel", df_channel, "channel index (ignored for crm)");
  dump->add_option("--out", df_out, "output directory");

  try {
    app.parse(argc, argv);
    if (train->parsed()) return cmd_train(train_opts, train_out);
    if (eval->parsed()) return cmd_eval(eval_opts, eval_ckpt, eval_out, eval_cv);
    if (gradcheck->parsed()) return cmd_gradcheck(gc_scale);
    if (count->parsed()) return cmd_count_params(count_opts);
    if (gen->parsed()) return cmd_generate_data(gen_opts, gen_out);
    if (dump->parsed()) return cmd_dump_features(df_ckpt, df_image, df_stage, df_channel, df_out);
    return 1;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // help exits clean; anything else is a usage error
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}

}  // namespace jct
