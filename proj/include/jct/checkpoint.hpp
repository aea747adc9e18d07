#pragma once

// Self-describing checkpoint container: a text header carrying the full run
// configuration, then one named blob per parameter and per BN running-stat
// buffer, stored as raw 64-bit little-endian floats.

#include "jct/config.hpp"

#include <fstream>

namespace jct {

inline constexpr const char* kCheckpointMagic = "JCTNET-CKPT v1";

namespace detail {

struct BlobRef {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

template <typename T>
std::vector<BlobRef> collect_blobs(JCTNetModel<T>& m) {
  std::vector<BlobRef> blobs;
  m.visit_params([&](const std::string& name, Tensor<T>& t) {
    BlobRef b;
    b.name = name;
    b.shape = t.shape();
    b.values.assign(t.values().begin(), t.values().end());
    blobs.push_back(std::move(b));
  });
  m.visit_buffers([&](const std::string& name, std::vector<T>& v) {
    BlobRef b;
    b.name = name;
    b.shape = {static_cast<int>(v.size())};
    b.values.assign(v.begin(), v.end());
    blobs.push_back(std::move(b));
  });
  return blobs;
}

}  // namespace detail

template <typename T>
void save_checkpoint(JCTNetModel<T>& m, const RunConfig& cfg, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  const auto kv = cfg.to_map();
  out << kCheckpointMagic << "\n";
  out << "config " << kv.size() << "\n";
  for (const auto& [k, v] : kv) out << k << "=" << v << "\n";
  const auto blobs = detail::collect_blobs(m);
  out << "tensors " << blobs.size() << "\n";
  for (const auto& b : blobs) {
    out << b.name << " " << b.shape.size();
    for (int d : b.shape) out << " " << d;
    out << "\n";
    out.write(reinterpret_cast<const char*>(b.values.data()),
              static_cast<std::streamsize>(b.values.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

namespace detail {

inline void read_header(std::istream& in, RunConfig& cfg, long long& n_tensors,
                        const std::string& path) {
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointMagic)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  long long n_config = 0;
  in >> line >> n_config;
  if (line != "config") throw std::runtime_error("checkpoint: malformed header in " + path);
  in.ignore(1);
  for (long long i = 0; i < n_config; ++i) {
    if (!std::getline(in, line)) throw std::runtime_error("checkpoint: truncated config in " + path);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("checkpoint: malformed config line");
    cfg.apply(line.substr(0, eq), line.substr(eq + 1));
  }
  in >> line >> n_tensors;
  if (line != "tensors") throw std::runtime_error("checkpoint: malformed tensor table in " + path);
  in.ignore(1);
}

}  // namespace detail

inline RunConfig read_checkpoint_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  RunConfig cfg;
  long long n_tensors = 0;
  detail::read_header(in, cfg, n_tensors, path);
  return cfg;
}

template <typename T>
JCTNetModel<T> load_checkpoint(const std::string& path, RunConfig* cfg_out = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  RunConfig cfg;
  long long n_tensors = 0;
  detail::read_header(in, cfg, n_tensors, path);

  JCTNetModel<T> m = build_model<T>(cfg.model, cfg.seed);
  std::map<std::string, Tensor<T>> params;
  m.visit_params([&](const std::string& name, Tensor<T>& t) { params.emplace(name, t); });
  std::map<std::string, std::vector<T>*> buffers;
  m.visit_buffers([&](const std::string& name, std::vector<T>& v) { buffers.emplace(name, &v); });

  std::size_t filled = 0;
  for (long long i = 0; i < n_tensors; ++i) {
    std::string header;
    if (!std::getline(in, header)) throw std::runtime_error("checkpoint: truncated tensor table");
    std::stringstream hs(header);
    std::string name;
    int ndim = 0;
    hs >> name >> ndim;
    Shape shape(static_cast<std::size_t>(ndim));
    for (int d = 0; d < ndim; ++d) hs >> shape[static_cast<std::size_t>(d)];
    if (!hs) throw std::runtime_error("checkpoint: malformed blob header '" + header + "'");
    std::vector<double> data(numel_of(shape));
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (static_cast<std::size_t>(in.gcount()) != data.size() * sizeof(double))
      throw std::runtime_error("checkpoint: truncated blob '" + name + "'");

    if (auto it = params.find(name); it != params.end()) {
      require(it->second.shape() == shape, "checkpoint: shape mismatch for " + name);
      auto& dst = it->second.values();
      for (std::size_t j = 0; j < data.size(); ++j) dst[j] = static_cast<T>(data[j]);
      ++filled;
    } else if (auto bit = buffers.find(name); bit != buffers.end()) {
      require(bit->second->size() == data.size(), "checkpoint: size mismatch for " + name);
      for (std::size_t j = 0; j < data.size(); ++j) (*bit->second)[j] = static_cast<T>(data[j]);
      ++filled;
    } else {
      throw std::runtime_error("checkpoint: unknown tensor '" + name + "' (config mismatch)");
    }
  }
  if (filled != params.size() + buffers.size())
    throw std::runtime_error("checkpoint: file does not cover every model tensor");
  if (cfg_out) *cfg_out = cfg;
  return m;
}

}  // namespace jct
