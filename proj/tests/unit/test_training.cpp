#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "defrec/benchmark_gen.hpp"
#include "defrec/checkpoint.hpp"
#include "defrec/errors.hpp"
#include "defrec/fs_util.hpp"
#include "defrec/optimizer.hpp"
#include "defrec/training.hpp"
#include "helpers.hpp"

using namespace defrec;

namespace {

NetworkShape tiny_shape(int classes) {
  NetworkShape s;
  s.num_classes = classes;
  s.point_widths = {16, 16, 32};
  s.global_width = 64;
  s.sup_widths = {32, 16};
  s.ssl_widths = {32, 16};
  s.seg_widths = {32, 16};
  return s;
}

TrainConfig tiny_config(Task task = Task::Classification) {
  TrainConfig c;
  c.task = task;
  c.epochs = 3;
  c.batch_size = 8;
  c.network = tiny_shape(task == Task::Classification ? 3 : kSegmentationParts);
  c.deform.radius = 0.3;
  c.deform.feature_k = 10;
  c.seed = 5;
  return c;
}

struct TinyData {
  std::vector<LabeledCloud> source;
  std::vector<SegLabeledCloud> seg_source;
  std::vector<PointCloud> target;
};

const TinyData& tiny_data() {
  static const TinyData data = [] {
    TinyData d;
    BenchmarkSpec spec;
    spec.source_train = 30;
    spec.source_test = 3;
    spec.target_train = 24;
    spec.target_test = 3;
    spec.points = 48;
    const Benchmark b = gen_benchmark(spec, 3);
    d.source = b.source.labeled(Split::Train);
    d.target = b.target.clouds(Split::Train);
    spec.segmentation = true;
    const Benchmark s = gen_benchmark(spec, 4);
    d.seg_source = s.source.seg_labeled(Split::Train);
    return d;
  }();
  return data;
}


bool same_params(const Model<float>& a, const Model<float>& b) { return a.params() == b.params(); }

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("config validation") {
    TrainConfig c = tiny_config();
    CHECK_NOTHROW(c.validate());
    c.lambda = -1;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c = tiny_config();
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c = tiny_config();
    c.val_fraction = 1.0;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
  }

  TEST_CASE("defaults follow the published protocol") {
    const TrainConfig c;
    CHECK(c.batch_size == 32);
    CHECK(c.val_fraction == 0.2);
    CHECK(c.pcm_alpha == 1.0);
    CHECK(c.pcm_beta == 1.0);
  }

  TEST_CASE("split: disjoint, complete, stratified and seeded") {
    std::vector<int> labels;
    for (int i = 0; i < 100; ++i) labels.push_back(i < 60 ? 0 : (i < 90 ? 1 : 2));
    const auto [train, val] = split_train_val(100, 0.2, 7, &labels);
    std::set<std::size_t> all(train.begin(), train.end());
    for (std::size_t v : val) CHECK(all.insert(v).second);
    CHECK(all.size() == 100);
    int per_class[3] = {0, 0, 0};
    for (std::size_t v : val) ++per_class[labels[v]];
    CHECK(per_class[0] == 12);
    CHECK(per_class[1] == 6);
    CHECK(per_class[2] == 2);
    CHECK(split_train_val(100, 0.2, 7, &labels) == std::make_pair(train, val));
    CHECK(split_train_val(100, 0.2, 8, &labels).second != val);
    CHECK(split_train_val(10, 0.0, 1, nullptr).second.empty());
  }

  TEST_CASE("domain balancing") {
    CHECK(batches_per_epoch(160, 200, 32) == 5);
    CHECK(batches_per_epoch(200, 70, 32) == 2);
    CHECK(batches_per_epoch(64, 64, 32) == 2);
    CHECK_THROWS_AS(batches_per_epoch(10, 200, 32), InvalidArgument);
  }

  TEST_CASE("augmentation is seeded and bounded") {
    Rng rng = make_rng(111);
    const PointCloud c = test::random_cloud(rng, 50);
    const PointCloud a = augment_cloud(c, 0.01, 0.02, 9);
    CHECK(a == augment_cloud(c, 0.01, 0.02, 9));
    for (std::size_t i = 0; i < c.size(); ++i) {
      CHECK(std::fabs(a.point(i).z() - c.point(i).z()) <= 0.02 + 1e-12);
      CHECK(std::fabs(a.point(i).norm() - c.point(i).norm()) <= 0.02 * std::sqrt(3.0) + 1e-12);
    }
  }

  TEST_CASE("lambda 0 without PCM never touches h_SSL and ignores the deformation") {
    TrainConfig c = tiny_config();
    c.lambda = 0.0;
    c.pcm_enabled = false;
    c.epochs = 2;
    const TrainResult a = train_classifier(c, tiny_data().source, tiny_data().target);
    c.deform.kind = DeformKind::SampleSplit;
    const TrainResult b = train_classifier(c, tiny_data().source, tiny_data().target);
    CHECK(same_params(a.last, b.last));
    for (const auto& r : a.reports) CHECK(r.ssl_loss == 0.0);

    Model<float> init(a.last.shape());
    init.init_glorot(derive_seed(c.seed, {2}));  // the initialization stream
    const ParamLayout& layout = init.layout();
    std::size_t ssl_params = 0;
    for (const TensorInfo& t : layout.tensors) {
      if (!t.name.starts_with("ssl")) continue;
      for (std::size_t k = t.offset; k < t.offset + static_cast<std::size_t>(t.rows * t.cols); ++k, ++ssl_params)
        CHECK(a.last.params()[k] == init.params()[k]);
    }
    CHECK(ssl_params > 0);
  }

  TEST_CASE("results do not depend on the worker count") {
    TrainConfig c = tiny_config();
    c.epochs = 2;
    c.deform.kind = DeformKind::Mixed;
    const TrainResult one = train_classifier(c, tiny_data().source, tiny_data().target);
    c.workers = 3;
    const TrainResult three = train_classifier(c, tiny_data().source, tiny_data().target);
    CHECK(same_params(one.best, three.best));
    CHECK(same_params(one.last, three.last));
  }

  TEST_CASE("reports: balanced batch counts, finite losses, cosine lr") {
    TrainConfig c = tiny_config();
    const TrainResult r = train_classifier(c, tiny_data().source, tiny_data().target);
    REQUIRE(r.reports.size() == 3);
    for (const auto& e : r.reports) {
      CHECK(e.batches == 3);  // floor(min(24, 24) / 8)
      CHECK(std::isfinite(e.sup_loss));
      CHECK(e.ssl_loss > 0.0);
      CHECK(e.lr == cosine_lr(e.epoch, 3, c.lr));
    }
    CHECK(r.best_metric == std::max_element(r.reports.begin(), r.reports.end(), [](auto& x, auto& y) {
                             return x.val_metric < y.val_metric;
                           })->val_metric);
  }

  TEST_CASE("combined step and source-and-target reconstruction run") {
    TrainConfig c = tiny_config();
    c.epochs = 1;
    c.combined_step = true;
    c.defrec_on = DefRecOn::SourceAndTarget;
    const TrainResult r = train_classifier(c, tiny_data().source, tiny_data().target);
    CHECK(r.reports.size() == 1);
  }

  TEST_CASE("feature deformation uses the live encoder") {
    TrainConfig c = tiny_config();
    c.epochs = 1;
    c.deform.kind = DeformKind::FeatureKnn;
    CHECK(train_classifier(c, tiny_data().source, tiny_data().target).reports.size() == 1);
  }

  TEST_CASE("metrics log, checkpoint and resume") {
    const auto dir_full = test::temp_dir("train_full");
    const auto dir_part = test::temp_dir("train_part");
    TrainConfig c = tiny_config();
    c.epochs = 4;
    TrainIo io;
    io.out_dir = dir_full;
    io.run_id = "r1";
    const TrainResult full = train_classifier(c, tiny_data().source, tiny_data().target, io);

    const std::string log = read_text(dir_full / "metrics.jsonl");
    CHECK(std::count(log.begin(), log.end(), '\n') == 4);
    CHECK(log.starts_with("{\"run_id\":\"r1\",\"epoch\":0,"));
    CHECK(log.find("wall") == std::string::npos);
    CHECK(same_params(load_checkpoint(dir_full / "best.ckpt"), full.best));

    TrainIo part;
    part.out_dir = dir_part;
    part.run_id = "r1";
    part.stop_after_epochs = 2;
    const TrainResult first = train_classifier(c, tiny_data().source, tiny_data().target, part);
    CHECK(first.reports.size() == 2);
    part.stop_after_epochs.reset();
    part.resume_from = dir_part / "state.bin";
    const TrainResult resumed = train_classifier(c, tiny_data().source, tiny_data().target, part);
    CHECK(resumed.reports.size() == 4);
    CHECK(same_params(resumed.best, full.best));
    CHECK(same_params(resumed.last, full.last));
    CHECK(read_text(dir_part / "metrics.jsonl") == log);
    CHECK(read_text(dir_part / "best.ckpt") == read_text(dir_full / "best.ckpt"));

    TrainConfig other = c;
    other.lambda = 0.5;
    CHECK_THROWS_AS(train_classifier(other, tiny_data().source, tiny_data().target, part), InvalidArgument);
  }

  TEST_CASE("an output directory is owned by one run") {
    const auto dir = test::temp_dir("train_lock");
    std::filesystem::create_directories(dir);
    { std::ofstream(dir / ".lock") << "999999\n"; }
    TrainConfig c = tiny_config();
    c.epochs = 1;
    TrainIo io;
    io.out_dir = dir;
    CHECK_THROWS(train_classifier(c, tiny_data().source, tiny_data().target, io));
  }

  TEST_CASE("divergence aborts with a diagnostic dump") {
    const auto dir = test::temp_dir("train_nan");
    TrainConfig c = tiny_config();
    c.lr = 1e38;
    c.epochs = 2;
    TrainIo io;
    io.out_dir = dir;
    CHECK_THROWS_AS(train_classifier(c, tiny_data().source, tiny_data().target, io), NumericalError);
    CHECK(std::filesystem::exists(dir / "nan_dump.json"));
    CHECK(read_text(dir / "nan_dump.json").find("\"reason\"") != std::string::npos);
  }

  TEST_CASE("empty inputs and task mismatches are rejected") {
    const TrainConfig c = tiny_config();
    CHECK_THROWS_AS(train_classifier(c, {}, tiny_data().target), InvalidArgument);
    CHECK_THROWS_AS(train_classifier(c, tiny_data().source, {}), InvalidArgument);
    CHECK_THROWS_AS(train_segmenter(c, tiny_data().seg_source, tiny_data().target), InvalidArgument);
  }

  TEST_CASE("segmentation: labels migrate on every mix and mIoU is reported") {
    TrainConfig c = tiny_config(Task::Segmentation);
    c.epochs = 2;
    std::size_t mixes = 0;
    std::size_t violations = 0;
    TrainIo io;
    io.on_seg_mix = [&](const SegLabeledCloud& a, const SegLabeledCloud& b, const MixedSample& m) {
      ++mixes;
      for (std::size_t i = 0; i < m.cloud.size(); ++i) {
        const SegLabeledCloud& src = i < m.from_first ? a : b;
        if (m.labels[i] != src.labels[m.source_index[i]] || m.cloud.point(i) != src.cloud.point(m.source_index[i]))
          ++violations;
      }
    };
    const TrainResult r = train_segmenter(c, tiny_data().seg_source, tiny_data().target, io);
    CHECK(mixes == 2u * 3u * 8u);
    CHECK(violations == 0);
    for (const auto& e : r.reports) CHECK((e.val_metric >= 0.0 && e.val_metric <= 1.0));
    const auto preds = predict_point_labels(r.best, {tiny_data().seg_source[0].cloud});
    CHECK(preds[0].size() == tiny_data().seg_source[0].cloud.size());
    CHECK(evaluate_miou(r.best, tiny_data().seg_source) >= 0.0);
  }

  TEST_CASE("classification training beats chance on clean data") {
    TrainConfig c = tiny_config();
    c.epochs = 40;
    c.pcm_enabled = false;
    c.lambda = 0.0;
    c.lr = 3e-3;
    const TrainResult r = train_classifier(c, tiny_data().source, tiny_data().target);
    CHECK(evaluate_accuracy(r.best, tiny_data().source) > 0.5);
    CHECK(predict_classes(r.best, {tiny_data().target[0]}).size() == 1);
  }
}
