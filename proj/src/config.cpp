#include "jct/config.hpp"

#include <fstream>
#include <sstream>

namespace jct {

namespace {

long long parse_int(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &pos);
  } catch (const std::exception&) {
    fail("config: key '" + key + "' expects an integer, got '" + v + "'");
  }
  if (pos != v.size()) fail("config: key '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double out = 0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    fail("config: key '" + key + "' expects a number, got '" + v + "'");
  }
  if (pos != v.size()) fail("config: key '" + key + "' expects a number, got '" + v + "'");
  return out;
}

// accepts decimals and p/q fractions ("1/8")
double parse_ratio(const std::string& key, const std::string& v) {
  const auto slash = v.find('/');
  if (slash == std::string::npos) return parse_double(key, v);
  const double num = parse_double(key, v.substr(0, slash));
  const double den = parse_double(key, v.substr(slash + 1));
  if (den == 0.0) fail("config: key '" + key + "' divides by zero");
  return num / den;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  fail("config: key '" + key + "' expects a boolean, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ','))
    out.push_back(static_cast<int>(parse_int(key, item)));
  if (out.empty()) fail("config: key '" + key + "' expects a comma-separated list");
  return out;
}

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string precision_name(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

void RunConfig::apply(const std::string& key, const std::string& value) {
  if (key == "cfm.channels") model.cfm.channel_schedule = parse_int_list(key, value);
  else if (key == "cfm.channel_scale") model.cfm.channel_scale = parse_ratio(key, value);
  else if (key == "tfm.embed_dim") model.tfm.embed_dim = static_cast<int>(parse_int(key, value));
  else if (key == "tfm.window_size") model.tfm.window_size = static_cast<int>(parse_int(key, value));
  else if (key == "tfm.depths") model.tfm.depths = parse_int_list(key, value);
  else if (key == "tfm.num_heads") model.tfm.num_heads = parse_int_list(key, value);
  else if (key == "tfm.mlp_ratio") model.tfm.mlp_ratio = parse_ratio(key, value);
  else if (key == "tfm.patch_size") model.tfm.patch_size = static_cast<int>(parse_int(key, value));
  else if (key == "tfm.interaction_kernel") model.tfm.interaction_kernel = static_cast<int>(parse_int(key, value));
  else if (key == "tfm.rel_pos_bias") model.tfm.rel_pos_bias = parse_bool(key, value);
  else if (key == "crm.global_average") model.crm_global_average = parse_bool(key, value);
  else if (key == "train.epochs") epochs = static_cast<int>(parse_int(key, value));
  else if (key == "train.batch_size") batch_size = static_cast<int>(parse_int(key, value));
  else if (key == "train.lr") lr = parse_double(key, value);
  else if (key == "train.weight_decay") weight_decay = parse_double(key, value);
  else if (key == "train.seed") seed = static_cast<std::uint64_t>(parse_int(key, value));
  else if (key == "train.crop_m") crop_m = static_cast<int>(parse_int(key, value));
  else if (key == "train.crop_n") crop_n = static_cast<int>(parse_int(key, value));
  else if (key == "train.patience") patience = static_cast<int>(parse_int(key, value));
  else if (key == "train.scale_crop_labels") scale_crop_labels = parse_bool(key, value);
  else if (key == "train.precision") {
    if (value == "f64") precision = Precision::f64;
    else if (value == "f32") precision = Precision::f32;
    else fail("config: train.precision must be f64 or f32");
  }
  else if (key == "data.source") {
    if (value != "synth" && value != "files") fail("config: data.source must be synth or files");
    data_source = value;
  }
  else if (key == "data.dir") data_dir = value;
  else if (key == "data.labels") data_labels = value;
  else if (key == "data.eval_fraction") eval_fraction = parse_double(key, value);
  else if (key == "data.synth.n") synth_n = static_cast<int>(parse_int(key, value));
  else if (key == "data.synth.width") synth.width = static_cast<int>(parse_int(key, value));
  else if (key == "data.synth.height") synth.height = static_cast<int>(parse_int(key, value));
  else if (key == "data.synth.count_lo") synth.count_lo = static_cast<int>(parse_int(key, value));
  else if (key == "data.synth.count_hi") synth.count_hi = static_cast<int>(parse_int(key, value));
  else if (key == "data.synth.radius_lo") synth.radius_lo = parse_double(key, value);
  else if (key == "data.synth.radius_hi") synth.radius_hi = parse_double(key, value);
  else if (key == "data.synth.noise") synth.noise_amplitude = parse_double(key, value);
  else if (key == "data.synth.seed") synth.seed = static_cast<std::uint64_t>(parse_int(key, value));
  else fail("config: unknown key '" + key + "'");
}

void RunConfig::validate() const {
  model.validate();
  require(epochs >= 1, "config: train.epochs must be >= 1");
  require(batch_size >= 1, "config: train.batch_size must be >= 1");
  require(lr > 0.0, "config: train.lr must be positive");
  require(weight_decay >= 0.0, "config: train.weight_decay must be >= 0");
  require(crop_m > 0 && crop_m % 32 == 0 && crop_n > 0 && crop_n % 32 == 0,
          "config: crop extents must be positive multiples of 32");
  require(patience >= 0, "config: train.patience must be >= 0");
  require(eval_fraction >= 0.0 && eval_fraction < 1.0, "config: data.eval_fraction must be in [0,1)");
  if (data_source == "files")
    require(!data_dir.empty() && !data_labels.empty(),
            "config: data.source=files needs data.dir and data.labels");
  else
    require(synth_n >= 1, "config: data.synth.n must be >= 1");
}

std::map<std::string, std::string> RunConfig::to_map() const {
  std::map<std::string, std::string> m;
  m["cfm.channels"] = join_ints(model.cfm.channel_schedule);
  m["cfm.channel_scale"] = fmt_double(model.cfm.channel_scale);
  m["tfm.embed_dim"] = std::to_string(model.tfm.embed_dim);
  m["tfm.window_size"] = std::to_string(model.tfm.window_size);
  m["tfm.depths"] = join_ints(model.tfm.depths);
  m["tfm.num_heads"] = join_ints(model.tfm.num_heads);
  m["tfm.mlp_ratio"] = fmt_double(model.tfm.mlp_ratio);
  m["tfm.patch_size"] = std::to_string(model.tfm.patch_size);
  m["tfm.interaction_kernel"] = std::to_string(model.tfm.interaction_kernel);
  m["tfm.rel_pos_bias"] = model.tfm.rel_pos_bias ? "true" : "false";
  m["crm.global_average"] = model.crm_global_average ? "true" : "false";
  m["train.epochs"] = std::to_string(epochs);
  m["train.batch_size"] = std::to_string(batch_size);
  m["train.lr"] = fmt_double(lr);
  m["train.weight_decay"] = fmt_double(weight_decay);
  m["train.seed"] = std::to_string(seed);
  m["train.crop_m"] = std::to_string(crop_m);
  m["train.crop_n"] = std::to_string(crop_n);
  m["train.precision"] = precision_name(precision);
  m["train.patience"] = std::to_string(patience);
  m["train.scale_crop_labels"] = scale_crop_labels ? "true" : "false";
  m["data.source"] = data_source;
  m["data.dir"] = data_dir;
  m["data.labels"] = data_labels;
  m["data.eval_fraction"] = fmt_double(eval_fraction);
  m["data.synth.n"] = std::to_string(synth_n);
  m["data.synth.width"] = std::to_string(synth.width);
  m["data.synth.height"] = std::to_string(synth.height);
  m["data.synth.count_lo"] = std::to_string(synth.count_lo);
  m["data.synth.count_hi"] = std::to_string(synth.count_hi);
  m["data.synth.radius_lo"] = fmt_double(synth.radius_lo);
  m["data.synth.radius_hi"] = fmt_double(synth.radius_hi);
  m["data.synth.noise"] = fmt_double(synth.noise_amplitude);
  m["data.synth.seed"] = std::to_string(synth.seed);
  return m;
}

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    // trim
    const auto b = line.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t");
    line = line.substr(b, e - b + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail("config: line " + std::to_string(line_no) + " is not key=value: '" + line + "'");
    cfg.apply(line.substr(0, eq), line.substr(eq + 1));
  }
  return cfg;
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

RunConfig toy_run_config() {
  RunConfig cfg;
  cfg.model = toy_model_config();
  cfg.crop_m = 64;
  cfg.crop_n = 64;
  cfg.synth.width = 64;
  cfg.synth.height = 64;
  return cfg;
}

}  // namespace jct
