#pragma once

// Flat key=value run configuration. Every key has a default mirroring the
// published training setup; unknown keys are rejected.

#include "jct/data.hpp"
#include "jct/model.hpp"
#include "jct/objective.hpp"

#include <map>
#include <string>

namespace jct {

enum class Precision { f64, f32 };

struct RunConfig {
  ModelConfig model;

  // training
  int epochs = 2000;
  int batch_size = 8;
  double lr = 1e-5;
  double weight_decay = 1e-4;
  std::uint64_t seed = 1;
  int crop_m = 256;
  int crop_n = 256;
  Precision precision = Precision::f64;
  int patience = 0;  // 0 disables early stopping
  bool scale_crop_labels = false;

  // data
  std::string data_source = "synth";  // synth | files
  std::string data_dir;
  std::string data_labels;
  int synth_n = 200;
  SynthSpec synth;
  double eval_fraction = 0.2;

  AdamWConfig optimizer() const {
    AdamWConfig c;
    c.lr = lr;
    c.weight_decay = weight_decay;
    return c;
  }

  void apply(const std::string& key, const std::string& value);
  void validate() const;

  // serialized as sorted key=value lines (the checkpoint header format)
  std::map<std::string, std::string> to_map() const;
};

RunConfig parse_config_text(const std::string& text);
RunConfig load_config_file(const std::string& path);

// toy scale used by the verification suites: channel_scale 1/8, embed 32,
// depths [2,2], heads [2,2], window 4
RunConfig toy_run_config();

std::string precision_name(Precision p);

}  // namespace jct
