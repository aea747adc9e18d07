#include "jct/data.hpp"

#include "jct/tensor.hpp"  // for require()

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace jct {

namespace {

std::uint8_t clamp_byte(double v) {
  if (v <= 0.0) return 0;
  if (v >= 255.0) return 255;
  return static_cast<std::uint8_t>(std::lround(v));
}

void render_disk(Sample& s, double cx, double cy, double radius) {
  const double sigma = radius / 2.0;
  const double reach = 3.0 * sigma;
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - reach)));
  const int x1 = std::min(s.width - 1, static_cast<int>(std::ceil(cx + reach)));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - reach)));
  const int y1 = std::min(s.height - 1, static_cast<int>(std::ceil(cy + reach)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
      const double glow = 215.0 * std::exp(-d2 / (2.0 * sigma * sigma));
      if (glow < 1.0) continue;
      const std::size_t idx = static_cast<std::size_t>(y) * s.width + x;
      s.pixels[idx] = clamp_byte(static_cast<double>(s.pixels[idx]) + glow);
    }
  }
}

}  // namespace

std::vector<Sample> generate_synthetic(const SynthSpec& spec, int n_images) {
  require(spec.count_hi >= spec.count_lo && spec.count_lo >= 0, "synth: count range must satisfy hi >= lo >= 0");
  require(spec.width >= 32 && spec.height >= 32, "synth: image extents must be >= 32");
  require(spec.radius_hi >= spec.radius_lo && spec.radius_lo > 0.5, "synth: bad radius range");
  require(spec.noise_amplitude >= 0.0, "synth: negative noise amplitude");

  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(n_images));
  for (int i = 0; i < n_images; ++i) {
    Rng rng(mix_seed(spec.seed, static_cast<std::uint64_t>(i)));
    Sample s;
    s.width = spec.width;
    s.height = spec.height;
    s.channels = 1;
    s.pixels.resize(static_cast<std::size_t>(spec.width) * spec.height);
    {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "synth_%05d.pgm", i);
      s.name = buf;
    }
    for (auto& p : s.pixels) p = clamp_byte(15.0 + spec.noise_amplitude * rng.uniform());

    const int count = rng.uniform_int(spec.count_lo, spec.count_hi);
    std::vector<double> radii;
    for (int obj = 0; obj < count; ++obj) {
      bool placed = false;
      for (int attempt = 0; attempt < 500 && !placed; ++attempt) {
        const double r = rng.uniform(spec.radius_lo, spec.radius_hi);
        const double cx = rng.uniform(r + 1.0, spec.width - r - 1.0);
        const double cy = rng.uniform(r + 1.0, spec.height - r - 1.0);
        bool overlaps = false;
        for (std::size_t j = 0; j < s.object_centers.size(); ++j) {
          const double dx = cx - s.object_centers[j].first;
          const double dy = cy - s.object_centers[j].second;
          const double min_dist = r + radii[j] + 1.0;
          if (dx * dx + dy * dy < min_dist * min_dist) {
            overlaps = true;
            break;
          }
        }
        if (!overlaps) {
          s.object_centers.emplace_back(cx, cy);
          radii.push_back(r);
          render_disk(s, cx, cy, r);
          placed = true;
        }
      }
      if (!placed)
        throw std::runtime_error("synth: frame too small to place " + std::to_string(count) +
                                 " non-overlapping objects");
    }
    s.count = count;
    out.push_back(std::move(s));
  }
  return out;
}

Sample load_image_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("pnm: cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P5" && magic != "P6") throw std::runtime_error("pnm: bad magic number in " + path);

  auto next_int = [&in, &path]() {
    // skip whitespace and '#' comments between header fields
    int c = in.peek();
    while (c == '#' || std::isspace(c)) {
      if (c == '#') in.ignore(1 << 20, '\n');
      else in.ignore(1);
      c = in.peek();
    }
    long long v = -1;
    in >> v;
    if (!in || v < 0) throw std::runtime_error("pnm: malformed header in " + path);
    return v;
  };

  Sample s;
  s.width = static_cast<int>(next_int());
  s.height = static_cast<int>(next_int());
  const long long maxval = next_int();
  if (maxval != 255) throw std::runtime_error("pnm: only maxval 255 is supported in " + path);
  in.ignore(1);  // the single whitespace byte before the raster
  s.channels = magic == "P6" ? 3 : 1;
  const std::size_t n = static_cast<std::size_t>(s.width) * s.height * s.channels;
  s.pixels.resize(n);
  in.read(reinterpret_cast<char*>(s.pixels.data()), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n)
    throw std::runtime_error("pnm: truncated raster in " + path);
  const auto slash = path.find_last_of('/');
  s.name = slash == std::string::npos ? path : path.substr(slash + 1);
  return s;
}

void save_image_pnm(const Sample& s, const std::string& path) {
  require(s.channels == 1 || s.channels == 3, "pnm: channels must be 1 or 3");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("pnm: cannot write " + path);
  out << (s.channels == 3 ? "P6" : "P5") << "\n" << s.width << " " << s.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(s.pixels.data()),
            static_cast<std::streamsize>(s.pixels.size()));
}

std::vector<std::pair<std::string, long long>> load_labels_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("labels: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("labels: empty file " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "filename,count")
    throw std::runtime_error("labels: expected header 'filename,count' in " + path);
  std::vector<std::pair<std::string, long long>> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw std::runtime_error("labels: malformed row '" + line + "'");
    const std::string name = line.substr(0, comma);
    const std::string count_str = line.substr(comma + 1);
    std::size_t pos = 0;
    long long count = 0;
    try {
      count = std::stoll(count_str, &pos);
    } catch (const std::exception&) {
      throw std::runtime_error("labels: non-integer count '" + count_str + "'");
    }
    if (pos != count_str.size())
      throw std::runtime_error("labels: non-integer count '" + count_str + "'");
    if (count < 0) throw std::runtime_error("labels: negative count for " + name);
    rows.emplace_back(name, count);
  }
  return rows;
}

void save_labels_csv(const std::vector<std::pair<std::string, long long>>& rows,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("labels: cannot write " + path);
  out << "filename,count\n";
  for (const auto& [name, count] : rows) out << name << "," << count << "\n";
}

std::vector<Sample> load_dataset(const std::string& dir, const std::string& labels_csv) {
  const auto rows = load_labels_csv(labels_csv);
  std::vector<Sample> out;
  out.reserve(rows.size());
  for (const auto& [name, count] : rows) {
    Sample s = load_image_pnm(dir + "/" + name);  // throws when missing
    s.count = count;
    s.name = name;
    out.push_back(std::move(s));
  }
  return out;
}

Sample random_crop(const Sample& s, int m, int n, Rng& rng, CropLabelRule rule) {
  require(m > 0 && n > 0 && m % 32 == 0 && n % 32 == 0, "crop: extents must be positive multiples of 32");
  require(s.height >= m && s.width >= n, "crop: crop larger than image");
  const int y0 = s.height == m ? 0 : rng.uniform_int(0, s.height - m);
  const int x0 = s.width == n ? 0 : rng.uniform_int(0, s.width - n);

  Sample out;
  out.width = n;
  out.height = m;
  out.channels = s.channels;
  out.name = s.name;
  out.pixels.resize(static_cast<std::size_t>(m) * n * s.channels);
  const std::size_t src_row = static_cast<std::size_t>(s.width) * s.channels;
  const std::size_t dst_row = static_cast<std::size_t>(n) * s.channels;
  for (int y = 0; y < m; ++y) {
    const std::uint8_t* src = s.pixels.data() + (static_cast<std::size_t>(y0) + y) * src_row +
                              static_cast<std::size_t>(x0) * s.channels;
    std::copy(src, src + dst_row, out.pixels.data() + static_cast<std::size_t>(y) * dst_row);
  }

  switch (rule) {
    case CropLabelRule::exact_centers: {
      require(s.object_centers.empty() ? s.count == 0 : true,
              "crop: exact labels need object centers");
      long long inside = 0;
      for (const auto& [cx, cy] : s.object_centers) {
        if (cx >= x0 && cx < x0 + n && cy >= y0 && cy < y0 + m) {
          ++inside;
          out.object_centers.emplace_back(cx - x0, cy - y0);
        }
      }
      out.count = inside;
      break;
    }
    case CropLabelRule::scale_by_area: {
      const double frac = static_cast<double>(m) * n / (static_cast<double>(s.height) * s.width);
      out.count = std::llround(static_cast<double>(s.count) * frac);
      break;
    }
  }
  return out;
}

std::vector<std::vector<int>> kfold_split(int n_samples, int k, std::uint64_t seed) {
  require(k >= 1 && n_samples >= k, "kfold: need at least k samples");
  std::vector<int> idx(static_cast<std::size_t>(n_samples));
  for (int i = 0; i < n_samples; ++i) idx[static_cast<std::size_t>(i)] = i;
  Rng rng(seed);
  rng.shuffle(idx.begin(), idx.end());
  std::vector<std::vector<int>> folds(static_cast<std::size_t>(k));
  const int base = n_samples / k;
  const int extra = n_samples % k;
  std::size_t cursor = 0;
  for (int f = 0; f < k; ++f) {
    const int size = base + (f < extra ? 1 : 0);
    folds[static_cast<std::size_t>(f)].assign(idx.begin() + static_cast<std::ptrdiff_t>(cursor),
                                              idx.begin() + static_cast<std::ptrdiff_t>(cursor + size));
    cursor += static_cast<std::size_t>(size);
  }
  return folds;
}

}  // namespace jct
