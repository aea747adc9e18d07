#pragma once

// Full network assembly: CFM -> TFM -> CRM with named, enumerable parameters
// under the cfm. / tfm. / crm. prefixes.

#include "jct/cfm.hpp"
#include "jct/crm.hpp"
#include "jct/tfm.hpp"

#include <map>

namespace jct {

struct ModelConfig {
  CfmConfig cfm;
  TfmConfig tfm;
  bool crm_global_average = false;

  void validate() const {
    cfm.validate();
    tfm.validate();
    require(tfm.embed_dim % 4 == 0, "model: embed_dim must be divisible by 4 for the CRM schedule");
  }
};

template <typename T>
struct JCTNetModel {
  ModelConfig cfg;
  CfmModel<T> cfm;
  TfmModel<T> tfm;
  CrmModel<T> crm;

  struct Stages {
    Tensor<T> cf;   // CFM output
    Tensor<T> tf;   // TFM output
    Tensor<T> map;  // CRM map
  };

  // input: standardized [B,3,H,W] with H,W divisible by 8*window*K.
  Tensor<T> forward(const Tensor<T>& input, bool train, Stages* stages = nullptr) {
    Tensor<T> cf = cfm_forward(cfm, input, train);
    Tensor<T> tf = tfm_forward(cf, tfm);
    Tensor<T> map = crm_forward(tf, crm, train);
    if (stages) {
      stages->cf = cf.detach();
      stages->tf = tf.detach();
      stages->map = map.detach();
    }
    return map;
  }

  Tensor<T> predict_counts(const Tensor<T>& input, bool train, Stages* stages = nullptr) {
    return count_from_map(forward(input, train, stages), cfg.crm_global_average);
  }

  void visit_params(const std::function<void(const std::string&, Tensor<T>&)>& fn) {
    cfm.visit_params("cfm.", fn);
    tfm.visit_params("tfm.", fn);
    crm.visit_params("crm.", fn);
  }

  void visit_buffers(const std::function<void(const std::string&, std::vector<T>&)>& fn) {
    cfm.visit_buffers("cfm.", fn);
    crm.visit_buffers("crm.", fn);
  }

  std::vector<std::pair<std::string, Tensor<T>>> named_parameters() {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    visit_params([&](const std::string& name, Tensor<T>& t) { out.emplace_back(name, t); });
    return out;
  }

  void zero_grad() {
    visit_params([](const std::string&, Tensor<T>& t) { t.zero_grad(); });
  }
};

template <typename T>
JCTNetModel<T> build_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  JCTNetModel<T> m;
  m.cfg = cfg;
  m.cfm = build_cfm<T>(cfg.cfm, mix_seed(seed, 1));
  m.tfm = build_tfm<T>(cfg.tfm, cfg.cfm.out_channels(), mix_seed(seed, 2));
  m.crm = build_crm<T>(cfg.tfm.embed_dim, mix_seed(seed, 3));
  return m;
}

struct ParamCount {
  long long total = 0;
  std::map<std::string, long long> by_module;  // cfm / tfm / crm
};

template <typename T>
ParamCount count_parameters(JCTNetModel<T>& m) {
  ParamCount pc;
  m.visit_params([&](const std::string& name, Tensor<T>& t) {
    const auto n = static_cast<long long>(t.numel());
    pc.total += n;
    pc.by_module[name.substr(0, name.find('.'))] += n;
  });
  return pc;
}

inline ModelConfig toy_model_config() {
  ModelConfig cfg;
  cfg.cfm.channel_scale = 1.0 / 8.0;
  cfg.tfm.embed_dim = 32;
  cfg.tfm.depths = {2, 2};
  cfg.tfm.num_heads = {2, 2};
  cfg.tfm.window_size = 4;
  return cfg;
}

}  // namespace jct
