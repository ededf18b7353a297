#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "defrec/deformations.hpp"
#include "defrec/network.hpp"
#include "defrec/pcm.hpp"
#include "defrec/pointcloud.hpp"

namespace defrec {

enum class Task { Classification, Segmentation };
enum class DefRecOn { TargetOnly, SourceAndTarget };

/// Everything that determines a training run.
///
/// Loss = L_ce(source, or its PCM mix) + lambda * L_SSL(deformed target [+ source]).
/// lambda == 0 skips the reconstruction half-step entirely, which is the
/// source-only baseline.
struct TrainConfig {
  Task task = Task::Classification;
  double lambda = 1.0;
  double lr = 1e-3;
  double weight_decay = 5e-5;
  int epochs = 10;
  int batch_size = 32;
  bool pcm_enabled = true;
  double pcm_alpha = kPcmAlpha;
  double pcm_beta = kPcmBeta;
  DeformSpec deform;
  DefRecOn defrec_on = DefRecOn::TargetOnly;
  std::uint64_t seed = 0;
  bool augment = true;
  double jitter_sigma = kJitterSigma;
  double jitter_clip = kJitterClip;
  bool combined_step = false;  ///< one update on the summed loss instead of two half-steps
  int workers = 1;             ///< batch-preparation threads; results do not depend on it
  double val_fraction = 0.2;
  NetworkShape network;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct EpochReport {
  int epoch = 0;
  double sup_loss = 0.0;  ///< mean over source batches
  double ssl_loss = 0.0;  ///< mean Chamfer over reconstruction batches (before lambda)
  double val_metric = 0.0;
  double lr = 0.0;
  int batches = 0;
  bool improved = false;
  double wall_seconds = 0.0;  ///< not written to the metrics log
};

struct TrainResult {
  Model<float> best;
  Model<float> last;
  double best_metric = -1.0;
  int best_epoch = -1;
  std::vector<EpochReport> reports;
};

/// Optional side channels of a run.
struct TrainIo {
  /// When set: metrics.jsonl, best.ckpt and state.bin are written here.
  std::optional<std::filesystem::path> out_dir;
  std::string run_id = "run";
  /// Continue from a state.bin written by an earlier run with the same config.
  std::optional<std::filesystem::path> resume_from;
  std::function<void(const EpochReport&)> on_epoch;
  /// Called for every segmentation mix with both (augmented) inputs.
  std::function<void(const SegLabeledCloud&, const SegLabeledCloud&, const MixedSample&)> on_seg_mix;
  /// Stop after this many epochs in this call (for interruption tests).
  std::optional<int> stop_after_epochs;
};

/// Seeded split of [0, n) into (train, val). Stratified by `labels` when
/// given, so each class contributes round(val_fraction * n_c) validation samples.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_train_val(std::size_t n, double val_fraction,
                                                                              std::uint64_t seed,
                                                                              const std::vector<int>* labels);

/// Source batches per epoch after under-sampling the larger domain.
std::size_t batches_per_epoch(std::size_t source_train, std::size_t target, std::size_t batch_size);

TrainResult train_classifier(const TrainConfig& config, const std::vector<LabeledCloud>& source,
                             const std::vector<PointCloud>& target, const TrainIo& io = {});

TrainResult train_segmenter(const TrainConfig& config, const std::vector<SegLabeledCloud>& source,
                            const std::vector<PointCloud>& target, const TrainIo& io = {});

std::vector<int> predict_classes(const Model<float>& model, const std::vector<PointCloud>& clouds,
                                 std::size_t batch_size = 64);

std::vector<std::vector<int>> predict_point_labels(const Model<float>& model, const std::vector<PointCloud>& clouds,
                                                   std::size_t batch_size = 32);

/// Accuracy on labeled clouds.
double evaluate_accuracy(const Model<float>& model, const std::vector<LabeledCloud>& data);
/// mIoU pooled over all points of all clouds.
double evaluate_miou(const Model<float>& model, const std::vector<SegLabeledCloud>& data);

/// Augmentation used for every training cloud: jitter then a random rotation about z.
PointCloud augment_cloud(const PointCloud& cloud, double sigma, double clip, std::uint64_t seed);

}  // namespace defrec
