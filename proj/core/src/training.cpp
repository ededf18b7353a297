#include "defrec/training.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstring>
#include <exception>
#include <map>
#include <numbers>
#include <thread>

#include "defrec/chamfer.hpp"
#include "defrec/checkpoint.hpp"
#include "defrec/errors.hpp"
#include "defrec/evaluation.hpp"
#include "defrec/fs_util.hpp"
#include "defrec/losses.hpp"
#include "defrec/optimizer.hpp"
#include "defrec/rng.hpp"

namespace defrec {

void TrainConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidArgument("lambda must be >= 0");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw InvalidArgument("lr must be > 0");
  if (!(weight_decay >= 0.0)) throw InvalidArgument("weight_decay must be >= 0");
  if (epochs < 1) throw InvalidArgument("epochs must be >= 1");
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (!(pcm_alpha > 0.0) || !(pcm_beta > 0.0)) throw InvalidArgument("PCM alpha and beta must be > 0");
  if (workers < 1) throw InvalidArgument("workers must be >= 1");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw InvalidArgument("val_fraction must be in [0, 1)");
  if (!(jitter_sigma >= 0.0) || !(jitter_clip >= 0.0)) throw InvalidArgument("jitter parameters must be >= 0");
  deform.validate();
  NetworkShape s = network;
  s.segmentation = task == Task::Segmentation;
  s.validate();
}

namespace {

// Seed streams. Every random decision is keyed by (stream, epoch, step, slot),
// never by thread or by draw order, so the worker count cannot change results.
enum Stream : std::uint64_t {
  kSplit = 1,
  kInit,
  kShuffleSource,
  kShuffleTarget,
  kAugmentSource,
  kMix,
  kDropout,
  kAugmentTarget,
  kDeform,
  kFamily,
};

template <class F>
void parallel_for(std::size_t n, int workers, F&& fn) {
  if (workers <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto body = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const auto count = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  for (std::size_t t = 0; t < count; ++t) pool.emplace_back(body);
  for (auto& t : pool) t.join();
  // Lowest failing slot wins so the reported error is deterministic too.
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::uint64_t config_fingerprint(const TrainConfig& c) {
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(c.task));
  w.f64(c.lambda);
  w.f64(c.lr);
  w.f64(c.weight_decay);
  w.i32(c.epochs);
  w.i32(c.batch_size);
  w.u8(c.pcm_enabled);
  w.f64(c.pcm_alpha);
  w.f64(c.pcm_beta);
  w.u8(static_cast<std::uint8_t>(c.deform.kind));
  w.i32(c.deform.voxel_k);
  w.f64(c.deform.radius);
  w.i32(c.deform.feature_layer);
  w.i32(c.deform.feature_k);
  w.f64(c.deform.relocate_sigma);
  w.f64(c.deform.sample_cap_fraction);
  w.i32(c.deform.normal_k);
  w.u8(static_cast<std::uint8_t>(c.deform.mixed_volume));
  w.u8(static_cast<std::uint8_t>(c.deform.mixed_sample));
  w.u8(static_cast<std::uint8_t>(c.defrec_on));
  w.u64(c.seed);
  w.u8(c.augment);
  w.f64(c.jitter_sigma);
  w.f64(c.jitter_clip);
  w.u8(c.combined_step);
  w.f64(c.val_fraction);
  write_shape(w, c.network);
  // `workers` is deliberately excluded: it does not affect results.
  return fnv1a64(w.bytes().data(), w.bytes().size());
}

Eigen::MatrixXd one_hot(const std::vector<int>& labels, int classes) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(labels.size()), classes);
  for (std::size_t i = 0; i < labels.size(); ++i) m(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  return m;
}

void check_finite(double loss, const char* what) {
  if (!std::isfinite(loss)) throw NumericalError(std::string("non-finite ") + what + " loss");
}

PointMatrix rows_as_double(const MatX<float>& m, Eigen::Index begin, Eigen::Index count) {
  PointMatrix out(count, 3);
  for (Eigen::Index r = 0; r < count; ++r)
    for (int c = 0; c < 3; ++c) out(r, c) = static_cast<double>(m(begin + r, c));
  return out;
}

struct SavedState {
  int epochs_done = 0;
  double best_metric = -1.0;
  int best_epoch = -1;
  std::vector<EpochReport> reports;
  std::vector<std::uint64_t> adam_t;
  std::vector<float> adam_m;
  std::vector<float> adam_v;
};

constexpr char kStateMagic[4] = {'D', 'F', 'S', 'T'};
constexpr std::uint32_t kStateVersion = 1;

std::vector<std::uint8_t> serialize_state(std::uint64_t fingerprint, const SavedState& s, const Model<float>& model,
                                          const Model<float>& best) {
  ByteWriter w;
  w.raw(kStateMagic, 4);
  w.u32(kStateVersion);
  w.u64(fingerprint);
  w.i32(s.epochs_done);
  w.f64(s.best_metric);
  w.i32(s.best_epoch);
  w.u32(static_cast<std::uint32_t>(s.reports.size()));
  for (const auto& r : s.reports) {
    w.i32(r.epoch);
    w.f64(r.sup_loss);
    w.f64(r.ssl_loss);
    w.f64(r.val_metric);
    w.f64(r.lr);
    w.i32(r.batches);
    w.u8(r.improved);
  }
  w.u32(static_cast<std::uint32_t>(s.adam_t.size()));
  for (std::uint64_t t : s.adam_t) w.u64(t);
  w.u32(static_cast<std::uint32_t>(s.adam_m.size()));
  w.raw(s.adam_m.data(), s.adam_m.size() * sizeof(float));
  w.raw(s.adam_v.data(), s.adam_v.size() * sizeof(float));
  write_model(w, model);
  write_model(w, best);
  seal(w);
  return std::move(w.bytes());
}

SavedState deserialize_state(const std::vector<std::uint8_t>& bytes, std::uint64_t fingerprint, Model<float>& model,
                             Model<float>& best) {
  ByteReader r = unseal(bytes, "training state");
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kStateMagic, 4) != 0) throw DataError("training state: bad magic");
  if (r.u32() != kStateVersion) throw DataError("training state: unsupported version");
  if (r.u64() != fingerprint) throw InvalidArgument("training state was written by a different configuration");
  SavedState s;
  s.epochs_done = r.i32();
  s.best_metric = r.f64();
  s.best_epoch = r.i32();
  const std::uint32_t count = r.u32();
  if (count > 1u << 20) throw DataError("training state: implausible report count");
  for (std::uint32_t i = 0; i < count; ++i) {
    EpochReport e;
    e.epoch = r.i32();
    e.sup_loss = r.f64();
    e.ssl_loss = r.f64();
    e.val_metric = r.f64();
    e.lr = r.f64();
    e.batches = r.i32();
    e.improved = r.u8() != 0;
    s.reports.push_back(e);
  }
  const std::uint32_t groups = r.u32();
  if (groups != model.layout().tensors.size()) throw DataError("training state: optimizer group mismatch");
  s.adam_t.resize(groups);
  for (auto& t : s.adam_t) t = r.u64();
  const std::uint32_t p = r.u32();
  if (p != model.params().size()) throw DataError("training state: optimizer size mismatch");
  s.adam_m.resize(p);
  s.adam_v.resize(p);
  r.raw(s.adam_m.data(), p * sizeof(float));
  r.raw(s.adam_v.data(), p * sizeof(float));
  model = read_model(r);
  best = read_model(r);
  if (r.remaining() != 0) throw DataError("training state: trailing bytes");
  return s;
}

std::string metrics_line(const std::string& run_id, const EpochReport& r) {
  nlohmann::ordered_json j;
  j["run_id"] = run_id;
  j["epoch"] = r.epoch;
  j["sup_loss"] = r.sup_loss;
  j["ssl_loss"] = r.ssl_loss;
  j["val_metric"] = r.val_metric;
  j["lr"] = r.lr;
  j["batches"] = r.batches;
  j["improved"] = r.improved;
  return j.dump();
}

/// Task-specific pieces plugged into the shared loop.
struct TaskHooks {
  std::size_t source_train_size = 0;
  /// Supervised half-step for the given source rows: adds gradients, returns the loss.
  std::function<double(const Model<float>&, const std::vector<std::size_t>&, int epoch, int step,
                       std::vector<PointCloud>& augmented, Gradients<float>&)>
      source_step;
  std::function<double(const Model<float>&)> validate;
};

class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const std::vector<PointCloud>& target, const TrainIo& io)
      : cfg_(cfg), target_(target), io_(io) {}

  TrainResult run(const TaskHooks& hooks) {
    NetworkShape shape = cfg_.network;
    shape.segmentation = cfg_.task == Task::Segmentation;
    Model<float> model(shape);
    model.init_glorot(derive_seed(cfg_.seed, {kInit}));
    Model<float> best = model;
    // One optimizer group per tensor; each half-step updates only the tensors on its path.
    std::vector<Adam::Group> groups;
    std::vector<std::size_t> sup_path;
    std::vector<std::size_t> ssl_path;
    for (std::size_t k = 0; k < model.layout().tensors.size(); ++k) {
      const TensorInfo& t = model.layout().tensors[k];
      groups.push_back({t.offset, t.offset + static_cast<std::size_t>(t.rows * t.cols)});
      const bool enc = t.name.starts_with("enc");
      if (enc || t.name.starts_with("sup") || t.name.starts_with("seg")) sup_path.push_back(k);
      if (enc || t.name.starts_with("ssl")) ssl_path.push_back(k);
    }
    std::vector<std::size_t> joint_path = sup_path;
    if (cfg_.lambda > 0.0)
      for (std::size_t k : ssl_path)
        if (!model.layout().tensors[k].name.starts_with("enc")) joint_path.push_back(k);
    std::sort(joint_path.begin(), joint_path.end());
    Adam adam(model.params().size(), Adam::Options{0.9, 0.999, 1e-8, cfg_.weight_decay}, std::move(groups));

    const std::size_t nb = batches_per_epoch(hooks.source_train_size, target_.size(),
                                             static_cast<std::size_t>(cfg_.batch_size));
    const std::uint64_t fingerprint = config_fingerprint(cfg_);

    std::optional<DirectoryLock> lock;
    std::filesystem::path log_path;
    if (io_.out_dir) {
      std::filesystem::create_directories(*io_.out_dir);
      lock.emplace(*io_.out_dir);
      log_path = *io_.out_dir / "metrics.jsonl";
    }

    SavedState state;
    if (io_.resume_from) {
      state = deserialize_state(read_binary(*io_.resume_from), fingerprint, model, best);
      adam.restore(state.adam_m, state.adam_v, state.adam_t);
    }
    if (io_.out_dir) {
      // The log always mirrors the reports held in the state.
      std::string text;
      for (const auto& r : state.reports) text += metrics_line(io_.run_id, r) + "\n";
      atomic_write(log_path, text);
    }

    int ran = 0;
    for (int epoch = state.epochs_done; epoch < cfg_.epochs; ++epoch) {
      if (io_.stop_after_epochs && ran >= *io_.stop_after_epochs) break;
      const auto t0 = std::chrono::steady_clock::now();
      const double lr = cosine_lr(epoch, cfg_.epochs, cfg_.lr);

      Rng src_rng = make_rng(derive_seed(cfg_.seed, {kShuffleSource, static_cast<std::uint64_t>(epoch)}));
      Rng tgt_rng = make_rng(derive_seed(cfg_.seed, {kShuffleTarget, static_cast<std::uint64_t>(epoch)}));
      const auto src_order = shuffled_indices(src_rng, hooks.source_train_size);
      const auto tgt_order = shuffled_indices(tgt_rng, target_.size());

      double sup_sum = 0.0;
      double ssl_sum = 0.0;
      const auto bs = static_cast<std::size_t>(cfg_.batch_size);
      for (std::size_t step = 0; step < nb; ++step) {
        const std::vector<std::size_t> src_rows(src_order.begin() + static_cast<std::ptrdiff_t>(step * bs),
                                                src_order.begin() + static_cast<std::ptrdiff_t>((step + 1) * bs));
        const std::vector<std::size_t> tgt_rows(tgt_order.begin() + static_cast<std::ptrdiff_t>(step * bs),
                                                tgt_order.begin() + static_cast<std::ptrdiff_t>((step + 1) * bs));
        try {
          Gradients<float> grads(model.params().size());
          std::vector<PointCloud> source_aug;
          const double sup = hooks.source_step(model, src_rows, epoch, static_cast<int>(step), source_aug, grads);
          check_finite(sup, "supervised");
          sup_sum += sup;
          if (!cfg_.combined_step) {
            adam.step(model.params(), grads.values, lr, sup_path);
            grads.zero();
          }
          if (cfg_.lambda > 0.0) {
            const double ssl = ssl_step(model, tgt_rows, source_aug, epoch, static_cast<int>(step), grads);
            check_finite(ssl, "reconstruction");
            ssl_sum += ssl;
          }
          if (cfg_.combined_step) {
            adam.step(model.params(), grads.values, lr, joint_path);
          } else if (cfg_.lambda > 0.0) {
            adam.step(model.params(), grads.values, lr, ssl_path);
          }
          for (float p : model.params())
            if (!std::isfinite(p)) throw NumericalError("non-finite parameter after update");
        } catch (const NumericalError& e) {
          dump_state(epoch, static_cast<int>(step), e.what(), model);
          throw NumericalError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", step " +
                               std::to_string(step));
        }
      }

      EpochReport report;
      report.epoch = epoch;
      report.batches = static_cast<int>(nb);
      report.sup_loss = sup_sum / static_cast<double>(nb);
      report.ssl_loss = cfg_.lambda > 0.0 ? ssl_sum / static_cast<double>(nb) : 0.0;
      report.lr = lr;
      report.val_metric = hooks.validate(model);
      report.improved = report.val_metric > state.best_metric;
      if (report.improved) {
        state.best_metric = report.val_metric;
        state.best_epoch = epoch;
        best = model;
        if (io_.out_dir) save_checkpoint(*io_.out_dir / "best.ckpt", best);
      }
      report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      state.reports.push_back(report);
      state.epochs_done = epoch + 1;
      if (io_.out_dir) {
        state.adam_t = adam.steps();
        state.adam_m = adam.first_moment();
        state.adam_v = adam.second_moment();
        // State first, then the log line: a crash in between is repaired on resume.
        atomic_write(*io_.out_dir / "state.bin", serialize_state(fingerprint, state, model, best));
        state.adam_m.clear();
        state.adam_v.clear();
        append_line(log_path, metrics_line(io_.run_id, report));
      }
      if (io_.on_epoch) io_.on_epoch(report);
      ++ran;
    }

    TrainResult result;
    result.best = std::move(best);
    result.last = std::move(model);
    result.best_metric = state.best_metric;
    result.best_epoch = state.best_epoch;
    result.reports = std::move(state.reports);
    return result;
  }

 private:
  double ssl_step(const Model<float>& model, const std::vector<std::size_t>& tgt_rows,
                  const std::vector<PointCloud>& source_aug, int epoch, int step, Gradients<float>& grads) {
    const auto e = static_cast<std::uint64_t>(epoch);
    const auto s = static_cast<std::uint64_t>(step);
    std::vector<PointCloud> base(tgt_rows.size());
    parallel_for(tgt_rows.size(), cfg_.workers, [&](std::size_t i) {
      const PointCloud& c = target_[tgt_rows[i]];
      base[i] = cfg_.augment ? augment_cloud(c, cfg_.jitter_sigma, cfg_.jitter_clip,
                                             derive_seed(cfg_.seed, {kAugmentTarget, e, s, i}))
                             : c;
    });
    if (cfg_.defrec_on == DefRecOn::SourceAndTarget) base.insert(base.end(), source_aug.begin(), source_aug.end());

    const FeatureFn features = [&model](const PointCloud& c, int layer) { return point_features(model, c, layer); };
    const bool mixed = cfg_.deform.kind == DeformKind::Mixed;
    // One family per batch for the mixed strategy.
    const DeformFamily family = choose_family(derive_seed(cfg_.seed, {kFamily, e, s}));
    std::vector<DeformedPair> pairs(base.size());
    parallel_for(base.size(), cfg_.workers, [&](std::size_t i) {
      const std::uint64_t seed = derive_seed(cfg_.seed, {kDeform, e, s, i});
      pairs[i] = mixed ? deform_family(base[i], cfg_.deform, family, seed, &features)
                       : deform(base[i], cfg_.deform, seed, &features);
    });

    std::vector<PointCloud> inputs;
    inputs.reserve(pairs.size());
    for (const auto& p : pairs) inputs.push_back(p.deformed);

    ForwardTrace<float> tr;
    tr.encoder = encode(model, inputs);
    tr.ssl = head_ssl(model, tr.encoder);
    tr.param_count = model.params().size();

    const MatX<float>& recon = tr.ssl->output;
    MatX<float> grad = MatX<float>::Zero(recon.rows(), recon.cols());
    const double scale = 1.0 / static_cast<double>(pairs.size());
    std::vector<double> losses(pairs.size());
    parallel_for(pairs.size(), cfg_.workers, [&](std::size_t b) {
      const Eigen::Index begin = tr.encoder.offsets[b];
      const Eigen::Index count = tr.encoder.offsets[b + 1] - begin;
      const ChamferResult cr =
          chamfer_loss_region(rows_as_double(recon, begin, count), pairs[b].original.points(), pairs[b].region);
      losses[b] = cr.value;
      grad.middleRows(begin, count) = (cr.grad_pred * (cfg_.lambda * scale)).cast<float>();
    });
    double mean = 0.0;
    for (double l : losses) mean += l;
    mean *= scale;
    check_finite(mean, "reconstruction");
    backward(model, tr, OutputGrads<float>{nullptr, &grad, nullptr}, grads);
    return mean;
  }

  void dump_state(int epoch, int step, const std::string& reason, const Model<float>& model) const {
    if (!io_.out_dir) return;
    std::size_t bad = 0;
    double max_abs = 0.0;
    for (float p : model.params()) {
      if (!std::isfinite(p)) {
        ++bad;
      } else {
        max_abs = std::max(max_abs, static_cast<double>(std::fabs(p)));
      }
    }
    nlohmann::ordered_json j;
    j["run_id"] = io_.run_id;
    j["reason"] = reason;
    j["epoch"] = epoch;
    j["step"] = step;
    j["non_finite_params"] = bad;
    j["max_abs_param"] = max_abs;
    j["lr_max"] = cfg_.lr;
    j["lambda"] = cfg_.lambda;
    atomic_write(*io_.out_dir / "nan_dump.json", j.dump(2) + "\n");
    try {
      save_checkpoint(*io_.out_dir / "nan_model.ckpt", model);
    } catch (const std::exception&) {
      // A model with NaNs still serializes; only I/O can fail here and the dump above is what matters.
    }
  }

  const TrainConfig& cfg_;
  const std::vector<PointCloud>& target_;
  const TrainIo& io_;
};

template <class Sample>
void check_inputs(const TrainConfig& cfg, const std::vector<Sample>& source, const std::vector<PointCloud>& target) {
  cfg.validate();
  if (source.empty()) throw InvalidArgument("source dataset is empty");
  if (target.empty()) throw InvalidArgument("target dataset is empty");
}

}  // namespace

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_train_val(std::size_t n, double val_fraction,
                                                                              std::uint64_t seed,
                                                                              const std::vector<int>* labels) {
  if (labels && labels->size() != n) throw InvalidArgument("label count does not match sample count");
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i) groups[labels ? (*labels)[i] : 0].push_back(i);
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  for (auto& [label, members] : groups) {
    Rng rng = make_rng(derive_seed(seed, {static_cast<std::uint64_t>(static_cast<std::int64_t>(label))}));
    const auto order = shuffled_indices(rng, members.size());
    const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(members.size())));
    for (std::size_t k = 0; k < order.size(); ++k) (k < n_val ? val : train).push_back(members[order[k]]);
  }
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {std::move(train), std::move(val)};
}

std::size_t batches_per_epoch(std::size_t source_train, std::size_t target, std::size_t batch_size) {
  if (batch_size == 0) throw InvalidArgument("batch_size must be >= 1");
  const std::size_t nb = std::min(source_train, target) / batch_size;
  if (nb == 0) throw InvalidArgument("fewer samples than one batch in the smaller domain");
  return nb;
}

PointCloud augment_cloud(const PointCloud& cloud, double sigma, double clip, std::uint64_t seed) {
  Rng rng = make_rng(derive_seed(seed, {1}));
  const double angle = 2.0 * std::numbers::pi * uniform01(rng);
  return rotate_z(jitter(cloud, sigma, clip, derive_seed(seed, {0})), angle);
}

TrainResult train_classifier(const TrainConfig& config, const std::vector<LabeledCloud>& source,
                             const std::vector<PointCloud>& target, const TrainIo& io) {
  if (config.task != Task::Classification) throw InvalidArgument("train_classifier needs a classification config");
  check_inputs(config, source, target);
  const int classes = config.network.num_classes;
  std::vector<int> labels;
  labels.reserve(source.size());
  for (const auto& s : source) {
    validate_label(s, classes);
    labels.push_back(s.label);
  }
  auto [train_idx, val_idx] = split_train_val(source.size(), config.val_fraction, derive_seed(config.seed, {kSplit}), &labels);
  if (val_idx.empty()) val_idx = train_idx;  // tiny sets: validate on the training split

  std::vector<LabeledCloud> val;
  for (std::size_t i : val_idx) val.push_back(source[i]);

  TaskHooks hooks;
  hooks.source_train_size = train_idx.size();
  hooks.source_step = [&](const Model<float>& model, const std::vector<std::size_t>& rows, int epoch, int step,
                          std::vector<PointCloud>& augmented, Gradients<float>& grads) {
    const auto e = static_cast<std::uint64_t>(epoch);
    const auto s = static_cast<std::uint64_t>(step);
    const std::size_t b = rows.size();
    augmented.assign(b, PointCloud());
    parallel_for(b, config.workers, [&](std::size_t i) {
      const PointCloud& c = source[train_idx[rows[i]]].cloud;
      augmented[i] = config.augment ? augment_cloud(c, config.jitter_sigma, config.jitter_clip,
                                                    derive_seed(config.seed, {kAugmentSource, e, s, i}))
                                    : c;
    });
    std::vector<PointCloud> inputs(b);
    Eigen::MatrixXd targets(static_cast<Eigen::Index>(b), classes);
    if (config.pcm_enabled) {
      parallel_for(b, config.workers, [&](std::size_t i) {
        const std::size_t j = (i + 1) % b;
        const LabeledCloud first{augmented[i], source[train_idx[rows[i]]].label};
        const LabeledCloud second{augmented[j], source[train_idx[rows[j]]].label};
        MixedSample m = pcm_classify(first, second, classes, config.pcm_alpha, config.pcm_beta,
                                     derive_seed(config.seed, {kMix, e, s, i}));
        inputs[i] = std::move(m.cloud);
        for (int c = 0; c < classes; ++c) targets(static_cast<Eigen::Index>(i), c) = m.soft_label[static_cast<std::size_t>(c)];
      });
    } else {
      std::vector<int> hard(b);
      for (std::size_t i = 0; i < b; ++i) hard[i] = source[train_idx[rows[i]]].label;
      inputs = augmented;
      targets = one_hot(hard, classes);
    }
    ForwardTrace<float> tr;
    tr.encoder = encode(model, inputs);
    tr.sup = head_sup(model, tr.encoder, Mode::Train, derive_seed(config.seed, {kDropout, e, s}));
    tr.param_count = model.params().size();
    const BatchLoss loss = mean_cross_entropy(tr.sup->output.cast<double>(), targets);
    check_finite(loss.loss, "supervised");
    const MatX<float> g = loss.grad.cast<float>();
    backward(model, tr, OutputGrads<float>{&g, nullptr, nullptr}, grads);
    return loss.loss;
  };
  hooks.validate = [&](const Model<float>& model) { return evaluate_accuracy(model, val); };

  Trainer trainer(config, target, io);
  return trainer.run(hooks);
}

TrainResult train_segmenter(const TrainConfig& config, const std::vector<SegLabeledCloud>& source,
                            const std::vector<PointCloud>& target, const TrainIo& io) {
  if (config.task != Task::Segmentation) throw InvalidArgument("train_segmenter needs a segmentation config");
  check_inputs(config, source, target);
  const int classes = config.network.num_classes;
  for (const auto& s : source) validate_labels(s, classes);
  auto [train_idx, val_idx] = split_train_val(source.size(), config.val_fraction, derive_seed(config.seed, {kSplit}), nullptr);
  if (val_idx.empty()) val_idx = train_idx;

  std::vector<SegLabeledCloud> val;
  for (std::size_t i : val_idx) val.push_back(source[i]);

  TaskHooks hooks;
  hooks.source_train_size = train_idx.size();
  hooks.source_step = [&](const Model<float>& model, const std::vector<std::size_t>& rows, int epoch, int step,
                          std::vector<PointCloud>& augmented, Gradients<float>& grads) {
    const auto e = static_cast<std::uint64_t>(epoch);
    const auto s = static_cast<std::uint64_t>(step);
    const std::size_t b = rows.size();
    augmented.assign(b, PointCloud());
    parallel_for(b, config.workers, [&](std::size_t i) {
      const PointCloud& c = source[train_idx[rows[i]]].cloud;
      augmented[i] = config.augment ? augment_cloud(c, config.jitter_sigma, config.jitter_clip,
                                                    derive_seed(config.seed, {kAugmentSource, e, s, i}))
                                    : c;
    });
    std::vector<PointCloud> inputs(b);
    std::vector<std::vector<int>> point_labels(b);
    if (config.pcm_enabled) {
      std::vector<SegLabeledCloud> firsts(b);
      std::vector<MixedSample> mixes(b);
      parallel_for(b, config.workers, [&](std::size_t i) {
        const std::size_t j = (i + 1) % b;
        const SegLabeledCloud first{augmented[i], source[train_idx[rows[i]]].labels};
        const SegLabeledCloud second{augmented[j], source[train_idx[rows[j]]].labels};
        mixes[i] = pcm_segment(first, second, config.pcm_alpha, config.pcm_beta, derive_seed(config.seed, {kMix, e, s, i}));
        if (io.on_seg_mix) firsts[i] = first;
      });
      for (std::size_t i = 0; i < b; ++i) {
        if (io.on_seg_mix) {
          const std::size_t j = (i + 1) % b;
          io.on_seg_mix(firsts[i], SegLabeledCloud{augmented[j], source[train_idx[rows[j]]].labels}, mixes[i]);
        }
        inputs[i] = std::move(mixes[i].cloud);
        point_labels[i] = std::move(mixes[i].labels);
      }
    } else {
      for (std::size_t i = 0; i < b; ++i) {
        inputs[i] = augmented[i];
        point_labels[i] = source[train_idx[rows[i]]].labels;
      }
    }
    std::vector<int> flat;
    for (const auto& l : point_labels) flat.insert(flat.end(), l.begin(), l.end());

    ForwardTrace<float> tr;
    tr.encoder = encode(model, inputs);
    tr.seg = head_seg(model, tr.encoder);
    tr.param_count = model.params().size();
    const BatchLoss loss = mean_cross_entropy(tr.seg->output.cast<double>(), flat);
    check_finite(loss.loss, "segmentation");
    const MatX<float> g = loss.grad.cast<float>();
    backward(model, tr, OutputGrads<float>{nullptr, nullptr, &g}, grads);
    return loss.loss;
  };
  hooks.validate = [&](const Model<float>& model) { return evaluate_miou(model, val); };

  Trainer trainer(config, target, io);
  return trainer.run(hooks);
}

std::vector<int> predict_classes(const Model<float>& model, const std::vector<PointCloud>& clouds,
                                 std::size_t batch_size) {
  if (model.shape().segmentation) throw InvalidArgument("model has a segmentation head");
  std::vector<int> out;
  out.reserve(clouds.size());
  for (std::size_t start = 0; start < clouds.size(); start += batch_size) {
    const std::size_t end = std::min(clouds.size(), start + batch_size);
    const std::vector<PointCloud> chunk(clouds.begin() + static_cast<std::ptrdiff_t>(start),
                                        clouds.begin() + static_cast<std::ptrdiff_t>(end));
    const auto enc = encode(model, chunk);
    const auto sup = head_sup(model, enc, Mode::Eval);
    for (Eigen::Index r = 0; r < sup.output.rows(); ++r) {
      Eigen::Index arg = 0;
      sup.output.row(r).maxCoeff(&arg);
      out.push_back(static_cast<int>(arg));
    }
  }
  return out;
}

std::vector<std::vector<int>> predict_point_labels(const Model<float>& model, const std::vector<PointCloud>& clouds,
                                                   std::size_t batch_size) {
  if (!model.shape().segmentation) throw InvalidArgument("model has no segmentation head");
  std::vector<std::vector<int>> out;
  out.reserve(clouds.size());
  for (std::size_t start = 0; start < clouds.size(); start += batch_size) {
    const std::size_t end = std::min(clouds.size(), start + batch_size);
    const std::vector<PointCloud> chunk(clouds.begin() + static_cast<std::ptrdiff_t>(start),
                                        clouds.begin() + static_cast<std::ptrdiff_t>(end));
    const auto enc = encode(model, chunk);
    const auto seg = head_seg(model, enc);
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      std::vector<int> labels;
      for (Eigen::Index r = enc.offsets[b]; r < enc.offsets[b + 1]; ++r) {
        Eigen::Index arg = 0;
        seg.output.row(r).maxCoeff(&arg);
        labels.push_back(static_cast<int>(arg));
      }
      out.push_back(std::move(labels));
    }
  }
  return out;
}

double evaluate_accuracy(const Model<float>& model, const std::vector<LabeledCloud>& data) {
  std::vector<PointCloud> clouds;
  std::vector<int> labels;
  for (const auto& d : data) {
    clouds.push_back(d.cloud);
    labels.push_back(d.label);
  }
  return accuracy(predict_classes(model, clouds), labels);
}

double evaluate_miou(const Model<float>& model, const std::vector<SegLabeledCloud>& data) {
  std::vector<PointCloud> clouds;
  std::vector<int> labels;
  for (const auto& d : data) {
    clouds.push_back(d.cloud);
    labels.insert(labels.end(), d.labels.begin(), d.labels.end());
  }
  std::vector<int> preds;
  for (const auto& p : predict_point_labels(model, clouds)) preds.insert(preds.end(), p.begin(), p.end());
  return mean_iou(preds, labels, model.shape().num_classes);
}

}  // namespace defrec
