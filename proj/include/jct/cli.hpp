#pragma once

// Command-line front end. Returns 0 on success, 1 on usage errors, 2 on
// runtime failures.

#include "jct/config.hpp"
#include "jct/harness.hpp"

namespace jct {

int cli_main(int argc, const char* const* argv);

// Non-template dispatch on the configured precision.
TrainState run_training_any(const RunConfig& cfg, const std::string& out_dir);

struct EvalRun {
  EvalResult result;
  RunConfig cfg;
};
EvalRun eval_checkpoint_any(const std::string& ckpt_path,
                            const std::vector<std::pair<std::string, std::string>>& overrides,
                            bool kfold5);

void dump_feature_map_any(const std::string& ckpt_path, const std::string& image_path,
                          const std::string& stage, int channel, const std::string& out_path);

}  // namespace jct
