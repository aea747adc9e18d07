#pragma once

// End-to-end harness: dataset assembly, the AdamW training loop with
// per-epoch held-out evaluation, full-image evaluation with edge-replication
// padding, and feature-map export.

#include "jct/checkpoint.hpp"

#include <cstdio>
#include <filesystem>
#include <limits>

namespace jct {

// ---------------------------------------------------------------------------
// images -> tensors

// Edge-replication padding on the right/bottom up to the next multiple.
struct PadInfo {
  int orig_h = 0;
  int orig_w = 0;
};

inline Sample pad_to_stride(const Sample& s, int multiple = 32, PadInfo* info = nullptr) {
  if (info) *info = PadInfo{s.height, s.width};
  const int H = (s.height + multiple - 1) / multiple * multiple;
  const int W = (s.width + multiple - 1) / multiple * multiple;
  if (H == s.height && W == s.width) return s;
  Sample out = s;
  out.height = H;
  out.width = W;
  out.pixels.assign(static_cast<std::size_t>(H) * W * s.channels, 0);
  for (int y = 0; y < H; ++y) {
    const int sy = std::min(y, s.height - 1);
    for (int x = 0; x < W; ++x) {
      const int sx = std::min(x, s.width - 1);
      for (int c = 0; c < s.channels; ++c)
        out.pixels[(static_cast<std::size_t>(y) * W + x) * s.channels + c] =
            s.pixels[(static_cast<std::size_t>(sy) * s.width + sx) * s.channels + c];
    }
  }
  return out;
}

// Standardizes bytes through (p/255 - 0.5) / 0.25 and replicates grayscale
// into the three input channels.
template <typename T>
Tensor<T> batch_to_tensor(const std::vector<const Sample*>& batch) {
  require(!batch.empty(), "batch_to_tensor: empty batch");
  const int H = batch[0]->height, W = batch[0]->width;
  for (const Sample* s : batch)
    require(s->height == H && s->width == W, "batch_to_tensor: image extents differ within a batch");
  const int B = static_cast<int>(batch.size());
  Tensor<T> out = Tensor<T>::zeros({B, 3, H, W});
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int b = 0; b < B; ++b) {
    const Sample& s = *batch[static_cast<std::size_t>(b)];
    for (int c = 0; c < 3; ++c) {
      const int sc = s.channels == 3 ? c : 0;
      T* dst = out.values().data() + (static_cast<std::size_t>(b) * 3 + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double v = static_cast<double>(s.pixels[i * s.channels + sc]) / 255.0;
        dst[i] = static_cast<T>((v - 0.5) / 0.25);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> sample_to_tensor(const Sample& s) {
  return batch_to_tensor<T>({&s});
}

// ---------------------------------------------------------------------------
// dataset plumbing

inline std::vector<Sample> build_dataset(const RunConfig& cfg) {
  if (cfg.data_source == "files") return load_dataset(cfg.data_dir, cfg.data_labels);
  return generate_synthetic(cfg.synth, cfg.synth_n);
}

inline void train_eval_split(int n, double eval_fraction, std::uint64_t seed,
                             std::vector<int>& train_idx, std::vector<int>& eval_idx) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  Rng rng(mix_seed(seed, 0xE7a1));
  rng.shuffle(idx.begin(), idx.end());
  const int n_eval = static_cast<int>(std::llround(eval_fraction * n));
  eval_idx.assign(idx.begin(), idx.begin() + n_eval);
  train_idx.assign(idx.begin() + n_eval, idx.end());
  require(!train_idx.empty(), "split: no training samples left");
}

// ---------------------------------------------------------------------------
// evaluation

struct PredictionRow {
  std::string name;
  double estimated = 0.0;
  double ground_truth = 0.0;
  double pad_contribution = 0.0;  // map mass over cells fully outside the original extents
};

struct EvalResult {
  MetricsReport overall;
  std::vector<PredictionRow> predictions;
  std::vector<MetricsReport> folds;  // filled for kfold evaluation
  MetricsReport fold_mean;
};

template <typename T>
PredictionRow eval_one(JCTNetModel<T>& m, const Sample& s) {
  NoGradGuard ng;
  PadInfo info;
  const Sample padded = pad_to_stride(s, 32, &info);
  Tensor<T> input = sample_to_tensor<T>(padded);
  Tensor<T> map = m.forward(input, false);
  Tensor<T> count = count_from_map(map, m.cfg.crm_global_average);
  PredictionRow row;
  row.name = s.name;
  row.estimated = static_cast<double>(count.item());
  row.ground_truth = static_cast<double>(s.count);
  const int mh = map.dim(2), mw = map.dim(3);
  const int in_h = info.orig_h / 8 + (info.orig_h % 8 ? 1 : 0);
  const int in_w = info.orig_w / 8 + (info.orig_w % 8 ? 1 : 0);
  for (int i = 0; i < mh; ++i)
    for (int j = 0; j < mw; ++j)
      if (i >= in_h || j >= in_w) row.pad_contribution += static_cast<double>(map.at({0, 0, i, j}));
  return row;
}

template <typename T>
EvalResult run_eval(JCTNetModel<T>& m, const std::vector<Sample>& data, bool kfold5,
                    std::uint64_t seed) {
  require(!data.empty(), "run_eval: empty dataset");
  EvalResult result;
  std::vector<std::pair<double, double>> pairs;
  for (const Sample& s : data) {
    PredictionRow row = eval_one(m, s);
    pairs.emplace_back(row.estimated, row.ground_truth);
    result.predictions.push_back(std::move(row));
  }
  result.overall = compute_metrics(pairs);
  if (kfold5) {
    const auto folds = kfold_split(static_cast<int>(data.size()), 5, seed);
    double mae = 0, mse = 0, nae = 0;
    int nae_folds = 0;
    for (const auto& fold : folds) {
      std::vector<std::pair<double, double>> fp;
      for (int i : fold) fp.push_back(pairs[static_cast<std::size_t>(i)]);
      MetricsReport r = compute_metrics(fp);
      mae += r.mae;
      mse += r.mse;
      if (r.nae) {
        nae += *r.nae;
        ++nae_folds;
      }
      result.folds.push_back(r);
    }
    result.fold_mean.mae = mae / 5.0;
    result.fold_mean.mse = mse / 5.0;
    if (nae_folds > 0) result.fold_mean.nae = nae / nae_folds;
    result.fold_mean.n_images = static_cast<int>(data.size());
  }
  return result;
}

inline void write_predictions_csv(const EvalResult& result, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("eval: cannot write " + path);
  out << "filename,estimated,ground_truth\n";
  char buf[128];
  for (const auto& row : result.predictions) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g", row.estimated, row.ground_truth);
    out << row.name << "," << buf << "\n";
  }
}

// ---------------------------------------------------------------------------
// training

struct TrainRow {
  int epoch = 0;
  double loss = 0.0;
  double mae = 0.0;
  double mse = 0.0;
};

struct TrainState {
  std::vector<TrainRow> log;
  int best_epoch = -1;
  double best_mae = std::numeric_limits<double>::infinity();
  double best_mse = std::numeric_limits<double>::infinity();
  bool aborted_nan = false;
  std::string abort_reason;
  int last_finite_epoch = 0;
};

inline std::string convergence_row(const TrainRow& r) {
  char buf[192];
  std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g", r.epoch, r.loss, r.mae, r.mse);
  return buf;
}

inline void write_convergence_csv(const TrainState& st, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("train: cannot write " + path);
  out << "epoch,loss,mae,mse\n";
  for (const auto& r : st.log) out << convergence_row(r) << "\n";
}

// One training run: seeded shuffles and crops, Smooth L1 on predicted counts,
// AdamW updates, held-out metrics every epoch, best-MAE checkpointing. A
// non-finite loss aborts with the last finite epoch recorded.
template <typename T>
TrainState run_training(const RunConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  const std::vector<Sample> data = build_dataset(cfg);
  std::vector<int> train_idx, eval_idx;
  train_eval_split(static_cast<int>(data.size()), cfg.eval_fraction, cfg.seed, train_idx, eval_idx);

  JCTNetModel<T> model = build_model<T>(cfg.model, cfg.seed);
  std::vector<Tensor<T>> params;
  model.visit_params([&](const std::string&, Tensor<T>& t) { params.push_back(t); });
  AdamW<T> opt(params, cfg.optimizer());

  TrainState st;
  const std::string ckpt_path = out_dir + "/best.ckpt";
  const std::string csv_path = out_dir + "/convergence.csv";
  std::ofstream live_csv(csv_path, std::ios::binary);
  if (!live_csv) throw std::runtime_error("train: cannot write " + csv_path);
  live_csv << "epoch,loss,mae,mse\n" << std::flush;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<int> order = train_idx;
    Rng shuffle_rng(mix_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order.begin(), order.end());
    Rng crop_rng(mix_seed(cfg.seed, 500000 + static_cast<std::uint64_t>(epoch)));

    double loss_sum = 0.0;
    try {
      for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
        const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
        std::vector<Sample> crops;
        crops.reserve(stop - start);  // pointer stability for ptrs
        std::vector<const Sample*> ptrs;
        std::vector<T> targets;
        for (std::size_t i = start; i < stop; ++i) {
          const Sample& s = data[static_cast<std::size_t>(order[i])];
          if (s.height == cfg.crop_m && s.width == cfg.crop_n) {
            ptrs.push_back(&s);
            targets.push_back(static_cast<T>(s.count));
          } else {
            const bool exact = !s.object_centers.empty() || s.count == 0;
            require(exact || cfg.scale_crop_labels,
                    "train: cropping labeled images without object positions needs "
                    "train.scale_crop_labels=true (or train on whole images)");
            crops.push_back(random_crop(s, cfg.crop_m, cfg.crop_n, crop_rng,
                                        exact ? CropLabelRule::exact_centers
                                              : CropLabelRule::scale_by_area));
            ptrs.push_back(&crops.back());
            targets.push_back(static_cast<T>(crops.back().count));
          }
        }

        Tensor<T> input = batch_to_tensor<T>(ptrs);
        Tensor<T> target = Tensor<T>::from({static_cast<int>(targets.size())}, targets);
        model.zero_grad();
        Tensor<T> counts = model.predict_counts(input, true);
        Tensor<T> loss = smooth_l1_loss(counts, target);
        const double lv = static_cast<double>(loss.item());
        if (!std::isfinite(lv)) throw std::runtime_error("non-finite training loss");
        backward(loss);
        opt.step();
        loss_sum += lv * static_cast<double>(stop - start);
      }
    } catch (const std::runtime_error& e) {
      st.aborted_nan = true;
      st.abort_reason = e.what();
      st.last_finite_epoch = epoch - 1;
      break;
    }

    TrainRow row;
    row.epoch = epoch;
    row.loss = loss_sum / static_cast<double>(train_idx.size());

    std::vector<std::pair<double, double>> pairs;
    for (int i : eval_idx) {
      PredictionRow pr = eval_one(model, data[static_cast<std::size_t>(i)]);
      pairs.emplace_back(pr.estimated, pr.ground_truth);
    }
    if (!pairs.empty()) {
      MetricsReport r = compute_metrics(pairs);
      row.mae = r.mae;
      row.mse = r.mse;
    }
    st.log.push_back(row);
    st.last_finite_epoch = epoch;
    live_csv << convergence_row(row) << "\n" << std::flush;

    if (!eval_idx.empty() && row.mae < st.best_mae) {
      st.best_mae = row.mae;
      st.best_mse = row.mse;
      st.best_epoch = epoch;
      save_checkpoint(model, cfg, ckpt_path);
    }
    if (cfg.patience > 0 && st.best_epoch > 0 && epoch - st.best_epoch >= cfg.patience) break;
  }

  if (eval_idx.empty() && !st.aborted_nan && !st.log.empty()) {
    // no held-out split: persist the final state as the best checkpoint
    st.best_epoch = st.log.back().epoch;
    save_checkpoint(model, cfg, ckpt_path);
  }
  live_csv.close();
  write_convergence_csv(st, csv_path);  // rewrite so an aborted run still ends in a clean file
  return st;
}

// ---------------------------------------------------------------------------
// feature export

// Min-max normalized grayscale dump of one stage channel; a constant map
// degenerates to mid-gray 128.
template <typename T>
void dump_feature_map(JCTNetModel<T>& m, const Sample& image, const std::string& stage,
                      int channel, const std::string& out_path) {
  NoGradGuard ng;
  const Sample padded = pad_to_stride(image, 32);
  typename JCTNetModel<T>::Stages stages;
  m.forward(sample_to_tensor<T>(padded), false, &stages);
  Tensor<T> feat;
  if (stage == "cfm") feat = stages.cf;
  else if (stage == "tfm") feat = stages.tf;
  else if (stage == "crm") feat = stages.map;
  else fail("dump-features: stage must be cfm, tfm or crm");
  if (stage == "crm") channel = 0;  // single channel, no argument needed
  require(channel >= 0 && channel < feat.dim(1), "dump-features: channel out of range");

  const int H = feat.dim(2), W = feat.dim(3);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  const T* src = feat.values().data() + static_cast<std::size_t>(channel) * plane;
  T lo = src[0], hi = src[0];
  for (std::size_t i = 0; i < plane; ++i) {
    lo = std::min(lo, src[i]);
    hi = std::max(hi, src[i]);
  }
  Sample out;
  out.width = W;
  out.height = H;
  out.channels = 1;
  out.pixels.resize(plane);
  if (hi == lo) {
    std::fill(out.pixels.begin(), out.pixels.end(), static_cast<std::uint8_t>(128));
  } else {
    for (std::size_t i = 0; i < plane; ++i) {
      const double norm = static_cast<double>(src[i] - lo) / static_cast<double>(hi - lo);
      out.pixels[i] = static_cast<std::uint8_t>(std::lround(norm * 255.0));
    }
  }
  save_image_pnm(out, out_path);
}

}  // namespace jct
