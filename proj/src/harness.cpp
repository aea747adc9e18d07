#include "jct/cli.hpp"

namespace jct {

TrainState run_training_any(const RunConfig& cfg, const std::string& out_dir) {
  if (cfg.precision == Precision::f32) return run_training<float>(cfg, out_dir);
  return run_training<double>(cfg, out_dir);
}

namespace {

// model keys must agree between the checkpoint and any overrides
void require_model_keys_match(const RunConfig& stored, const RunConfig& overridden) {
  const auto a = stored.to_map();
  const auto b = overridden.to_map();
  for (const auto& [k, v] : a) {
    if (k.rfind("cfm.", 0) == 0 || k.rfind("tfm.", 0) == 0 || k.rfind("crm.", 0) == 0) {
      if (b.at(k) != v)
        throw std::runtime_error("eval: override of model key '" + k +
                                 "' conflicts with the checkpoint");
    }
  }
}

template <typename T>
EvalRun eval_checkpoint_impl(const std::string& ckpt_path, const RunConfig& cfg, bool kfold5) {
  JCTNetModel<T> model = load_checkpoint<T>(ckpt_path);
  EvalRun run;
  run.cfg = cfg;
  const std::vector<Sample> data = build_dataset(cfg);
  run.result = run_eval(model, data, kfold5, cfg.seed);
  return run;
}

}  // namespace

EvalRun eval_checkpoint_any(const std::string& ckpt_path,
                            const std::vector<std::pair<std::string, std::string>>& overrides,
                            bool kfold5) {
  const RunConfig stored = read_checkpoint_config(ckpt_path);
  RunConfig cfg = stored;
  for (const auto& [k, v] : overrides) cfg.apply(k, v);
  require_model_keys_match(stored, cfg);
  cfg.validate();
  if (cfg.precision == Precision::f32) return eval_checkpoint_impl<float>(ckpt_path, cfg, kfold5);
  return eval_checkpoint_impl<double>(ckpt_path, cfg, kfold5);
}

void dump_feature_map_any(const std::string& ckpt_path, const std::string& image_path,
                          const std::string& stage, int channel, const std::string& out_path) {
  const RunConfig cfg = read_checkpoint_config(ckpt_path);
  const Sample image = load_image_pnm(image_path);
  if (cfg.precision == Precision::f32) {
    JCTNetModel<float> model = load_checkpoint<float>(ckpt_path);
    dump_feature_map(model, image, stage, channel, out_path);
  } else {
    JCTNetModel<double> model = load_checkpoint<double>(ckpt_path);
    dump_feature_map(model, image, stage, channel, out_path);
  }
}

}  // namespace jct
