#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "defrec/benchmark_gen.hpp"
#include "defrec/chamfer.hpp"
#include "defrec/checkpoint.hpp"
#include "defrec/cloud_io.hpp"
#include "defrec/config.hpp"
#include "defrec/deformations.hpp"
#include "defrec/errors.hpp"
#include "defrec/evaluation.hpp"
#include "defrec/fs_util.hpp"
#include "defrec/neighbor_index.hpp"
#include "defrec/pcm.hpp"
#include "defrec/rng.hpp"
#include "defrec/training.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace defrec::cli {
namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

fs::path require_out(const Globals& g) {
  if (g.out.empty()) throw InvalidArgument("--out <dir> is required");
  fs::create_directories(g.out);
  return g.out;
}

std::uint64_t seed_or(const Globals& g, std::uint64_t fallback) { return g.seed.value_or(fallback); }

// ---------------------------------------------------------------- gen-bench

struct GenBenchArgs {
  std::string task = "classification";
  BenchmarkSpec spec;
};

int cmd_gen_bench(const Globals& g, GenBenchArgs a, std::ostream& out) {
  a.spec.segmentation = a.task == "segmentation";
  const fs::path dir = require_out(g);
  const std::uint64_t seed = seed_or(g, 0);
  const Benchmark b = gen_benchmark(a.spec, seed);

  auto write_split = [&](const Dataset& d, Split split, const std::string& file) {
    Dataset part;
    part.name = file;
    part.num_classes = d.num_classes;
    for (std::size_t i = 0; i < d.samples.size(); ++i)
      if (d.splits[i] == split) part.samples.push_back(d.samples[i]);
    save_archive(dir / file, part);
    out << "wrote " << (dir / file).string() << " (" << part.samples.size() << " clouds)\n";
  };
  write_split(b.source, Split::Train, "source_train.dfrc");
  write_split(b.source, Split::Test, "source_test.dfrc");
  write_split(b.target, Split::Train, "target_train.dfrc");
  write_split(b.target, Split::Test, "target_test.dfrc");

  // A ready-to-edit run configuration pointing at the archives.
  RunConfig rc;
  rc.train.task = a.spec.segmentation ? Task::Segmentation : Task::Classification;
  rc.train.seed = seed;
  rc.train.network.num_classes = b.source.num_classes;
  rc.source_path = "source_train.dfrc";
  rc.target_path = "target_train.dfrc";
  rc.target_test_path = "target_test.dfrc";
  rc.out_dir = "run";
  rc.points = a.spec.points;
  atomic_write(dir / "config.json", serialize_run_config(rc));
  out << "wrote " << (dir / "config.json").string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------- deform

struct DeformArgs {
  std::vector<std::string> inputs;
  std::string kind = "sphere";
  std::optional<int> k;
  std::optional<double> radius;
  std::optional<double> sigma;
  std::optional<double> cap;
  std::optional<int> layer;
  std::string checkpoint;
};

int cmd_deform(const Globals& g, const DeformArgs& a, std::ostream& out) {
  DeformSpec spec;
  if (!g.config.empty()) spec = load_run_config(g.config).train.deform;
  spec.kind = deform_kind_from_string(a.kind);
  if (a.k) (spec.kind == DeformKind::FeatureKnn ? spec.feature_k : spec.voxel_k) = *a.k;
  if (a.radius) spec.radius = *a.radius;
  if (a.sigma) spec.relocate_sigma = *a.sigma;
  if (a.cap) spec.sample_cap_fraction = *a.cap;
  if (a.layer) spec.feature_layer = *a.layer;
  // deform_voxel itself accepts k = 1; the spec check is for training configs.
  if (spec.kind != DeformKind::Voxel) spec.validate();

  std::optional<Model<float>> model;
  FeatureFn features;
  const bool needs_features = spec.kind == DeformKind::FeatureKnn || spec.kind == DeformKind::Mixed;
  if (needs_features) {
    if (a.checkpoint.empty()) throw InvalidArgument("--checkpoint is required for feature-based deformations");
    model = load_checkpoint(a.checkpoint);
    features = [&model](const PointCloud& c, int layer) { return point_features(*model, c, layer); };
  }
  const fs::path dir = require_out(g);
  for (std::size_t f = 0; f < a.inputs.size(); ++f) {
    const LoadedCloud in = load_cloud(a.inputs[f]);
    const std::uint64_t seed = derive_seed(seed_or(g, 0), {f});
    const DeformedPair pair = deform(in.cloud, spec, seed, needs_features ? &features : nullptr);
    const std::string stem = fs::path(a.inputs[f]).stem().string();
    save_xyz(dir / (stem + ".deformed.xyz"), pair.deformed);
    save_xyz(dir / (stem + ".original.xyz"), pair.original);
    std::string idx;
    for (std::size_t i : pair.region) idx += std::to_string(i) + "\n";
    atomic_write(dir / (stem + ".region.txt"), idx);
    out << stem << ": " << pair.region.size() << " of " << pair.original.size() << " points relocated\n";
  }
  return kOk;
}

// ---------------------------------------------------------------- mixup

struct MixupArgs {
  std::string a;
  std::string b;
  std::optional<int> label_a;
  std::optional<int> label_b;
  int classes = 0;
  std::optional<double> gamma;
  double alpha = kPcmAlpha;
  double beta = kPcmBeta;
};

int cmd_mixup(const Globals& g, const MixupArgs& m, std::ostream& out) {
  const LoadedCloud a = load_cloud(m.a);
  const LoadedCloud b = load_cloud(m.b);
  const fs::path dir = require_out(g);
  const std::uint64_t seed = seed_or(g, 0);
  ordered_json j;
  MixedSample mixed;
  if (a.labels && b.labels && !m.label_a && !m.label_b) {
    mixed = pcm_segment({a.cloud, *a.labels}, {b.cloud, *b.labels}, m.alpha, m.beta, seed, m.gamma);
    save_xyz(dir / "mixed.xyz", mixed.cloud, &mixed.labels);
    j["task"] = "segmentation";
  } else {
    if (!m.label_a || !m.label_b || m.classes < 2)
      throw InvalidArgument("classification mixup needs --label-a, --label-b and --classes (>= 2)");
    mixed = pcm_classify({a.cloud, *m.label_a}, {b.cloud, *m.label_b}, m.classes, m.alpha, m.beta, seed, m.gamma);
    save_xyz(dir / "mixed.xyz", mixed.cloud);
    j["task"] = "classification";
    j["soft_label"] = mixed.soft_label;
  }
  j["gamma"] = mixed.gamma;
  j["realized_gamma"] = mixed.realized_gamma;
  j["from_first"] = mixed.from_first;
  j["points"] = mixed.cloud.size();
  atomic_write(dir / "mixed.json", j.dump(2) + "\n");
  out << j.dump() << "\n";
  return kOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::optional<double> lambda;
  std::optional<int> epochs;
  std::optional<int> workers;
  bool resume = false;
};

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

/// Bring every cloud to the configured size (unit cube + farthest point sampling).
Dataset conform(Dataset d, int points, std::uint64_t seed) {
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    if (d.samples[i].cloud.size() == static_cast<std::size_t>(points)) continue;
    d.samples[i] = prepare_sample(d.samples[i], static_cast<std::size_t>(points), derive_seed(seed, {i}));
  }
  return d;
}

double evaluate_dataset(const Model<float>& model, const Dataset& d) {
  return model.shape().segmentation ? evaluate_miou(model, d.seg_labeled()) : evaluate_accuracy(model, d.labeled());
}

int cmd_train(const Globals& g, const TrainArgs& a, std::ostream& out, std::ostream& err) {
  if (g.config.empty()) throw InvalidArgument("--config <path> is required");
  RunConfig rc = load_run_config(g.config);
  if (g.seed) rc.train.seed = *g.seed;
  if (!g.out.empty()) rc.out_dir = g.out;
  if (a.lambda) rc.train.lambda = *a.lambda;
  if (a.epochs) rc.train.epochs = *a.epochs;
  if (a.workers) rc.train.workers = *a.workers;
  rc.train.validate();
  if (rc.out_dir.empty()) throw InvalidArgument("no output directory (set out_dir or pass --out)");
  if (rc.source_path.empty() || rc.target_path.empty()) throw InvalidArgument("config needs data.source and data.target");

  const fs::path base = fs::path(g.config).parent_path();
  const fs::path out_dir = resolve(fs::current_path(), rc.out_dir);
  const int points = rc.resolved_points();
  const Dataset source = conform(load_archive(resolve(base, rc.source_path)), points, derive_seed(rc.train.seed, {101}));
  const Dataset target = conform(load_archive(resolve(base, rc.target_path)), points, derive_seed(rc.train.seed, {102}));
  if (source.num_classes != rc.train.network.num_classes)
    throw DataError("source archive has " + std::to_string(source.num_classes) + " classes but the config says " +
                    std::to_string(rc.train.network.num_classes));

  fs::create_directories(out_dir);
  const std::vector<TrainConfig> grid = expand_grid(rc);
  std::optional<DirectoryLock> lock;
  if (grid.size() > 1) lock.emplace(out_dir);  // single runs are locked by the trainer itself
  atomic_write(out_dir / "config.json", serialize_run_config(rc));

  ordered_json summary;
  summary["run_id"] = rc.run_id;
  summary["runs"] = ordered_json::array();
  std::size_t selected = 0;
  double selected_metric = -1.0;
  std::optional<Model<float>> selected_model;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    TrainIo io;
    io.out_dir = grid.size() == 1 ? out_dir : out_dir / ("grid_" + std::to_string(k));
    io.run_id = grid.size() == 1 ? rc.run_id : rc.run_id + "/" + std::to_string(k);
    if (a.resume && fs::exists(*io.out_dir / "state.bin")) io.resume_from = *io.out_dir / "state.bin";
    io.on_epoch = [&err, &io](const EpochReport& r) {
      err << io.run_id << " epoch " << r.epoch << " sup " << r.sup_loss << " ssl " << r.ssl_loss << " val "
          << r.val_metric << " (" << r.wall_seconds << " s)\n";
    };
    const std::vector<PointCloud> target_clouds = target.clouds();
    TrainResult res = grid[k].task == Task::Classification
                          ? train_classifier(grid[k], source.labeled(), target_clouds, io)
                          : train_segmenter(grid[k], source.seg_labeled(), target_clouds, io);
    ordered_json run;
    run["lambda"] = grid[k].lambda;
    run["lr"] = grid[k].lr;
    run["weight_decay"] = grid[k].weight_decay;
    run["best_val"] = res.best_metric;
    run["best_epoch"] = res.best_epoch;
    summary["runs"].push_back(run);
    if (res.best_metric > selected_metric) {
      selected_metric = res.best_metric;
      selected = k;
      selected_model = std::move(res.best);
    }
  }
  if (grid.size() > 1) save_checkpoint(out_dir / "best.ckpt", *selected_model);
  summary["selected"] = selected;
  summary["best_val"] = selected_metric;
  if (!rc.target_test_path.empty()) {
    const Dataset test = conform(load_archive(resolve(base, rc.target_test_path)), points, derive_seed(rc.train.seed, {103}));
    summary["target_test"] = evaluate_dataset(*selected_model, test);
  }
  atomic_write(out_dir / "summary.json", summary.dump(2) + "\n");
  out << summary.dump() << "\n";
  return kOk;
}

// ---------------------------------------------------------------- eval / perplexity

void write_feature_dump(const fs::path& path, const Eigen::MatrixXd& f, const std::vector<int>& labels) {
  std::ostringstream os;
  os.precision(17);
  for (Eigen::Index i = 0; i < f.rows(); ++i) {
    os << labels[static_cast<std::size_t>(i)];
    for (Eigen::Index c = 0; c < f.cols(); ++c) os << ' ' << f(i, c);
    os << '\n';
  }
  atomic_write(path, os.str());
}

void read_feature_dump(const fs::path& path, Eigen::MatrixXd& f, std::vector<int>& labels) {
  std::istringstream is(read_text(path));
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::istringstream ls(line);
    int label = 0;
    if (!(ls >> label)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      throw DataError(path.string() + ": line " + std::to_string(lineno) + ": expected a label");
    }
    std::vector<double> row;
    double v = 0.0;
    while (ls >> v) row.push_back(v);
    if (!ls.eof()) throw DataError(path.string() + ": line " + std::to_string(lineno) + ": malformed number");
    if (!rows.empty() && row.size() != rows.front().size())
      throw DataError(path.string() + ": line " + std::to_string(lineno) + ": inconsistent feature dimension");
    if (row.empty()) throw DataError(path.string() + ": line " + std::to_string(lineno) + ": no features");
    labels.push_back(label);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError(path.string() + ": no feature rows");
  f.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t c = 0; c < rows[i].size(); ++c) f(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = rows[i][c];
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string features_out;
};

int cmd_eval(const Globals& g, const EvalArgs& a, std::ostream& out) {
  (void)g;
  const Model<float> model = load_checkpoint(a.checkpoint);
  Dataset d = load_archive(a.data);
  if (!d.samples.empty()) d = conform(std::move(d), static_cast<int>(d.samples.front().cloud.size()), 0);
  ordered_json j;
  j["checkpoint"] = a.checkpoint;
  j["data"] = a.data;
  j["samples"] = d.samples.size();
  if (model.shape().segmentation) {
    j["metric"] = "miou";
    j["value"] = evaluate_miou(model, d.seg_labeled());
  } else {
    const auto labeled = d.labeled();
    j["metric"] = "accuracy";
    j["value"] = evaluate_accuracy(model, labeled);
    if (!a.features_out.empty()) {
      std::vector<int> labels;
      for (const auto& s : labeled) labels.push_back(s.label);
      write_feature_dump(a.features_out, extract_features(model, d.clouds()), labels);
    }
  }
  out << j.dump() << "\n";
  return kOk;
}

struct PerplexityArgs {
  std::string source;
  std::string target;
  int dims = 0;
  double reg = kCovarianceFloor;
};

int cmd_perplexity(const PerplexityArgs& a, std::ostream& out) {
  Eigen::MatrixXd fs_src;
  Eigen::MatrixXd fs_tgt;
  std::vector<int> ls;
  std::vector<int> lt;
  read_feature_dump(a.source, fs_src, ls);
  read_feature_dump(a.target, fs_tgt, lt);
  if (a.dims > 0) {
    Eigen::MatrixXd ps;
    Eigen::MatrixXd pt;
    project_features(fs_src, fs_tgt, a.dims, ps, pt);
    fs_src = ps;
    fs_tgt = pt;
  }
  const GaussianClassModel model = fit_class_gaussians(fs_src, ls, a.reg);
  ordered_json j;
  j["dims"] = fs_src.cols();
  j["standard"] = log_perplexity(model, fs_tgt, lt, false);
  j["balanced"] = log_perplexity(model, fs_tgt, lt, true);
  out << j.dump() << "\n";
  return kOk;
}

// ---------------------------------------------------------------- selftest

int cmd_selftest(const Globals& g, std::ostream& out) {
  const std::uint64_t seed = seed_or(g, 12345);
  int failures = 0;
  auto report = [&](bool ok, const std::string& name, const std::string& detail) {
    out << (ok ? "[PASS] " : "[FAIL] ") << name << ": " << detail << "\n";
    failures += ok ? 0 : 1;
  };
  Rng rng = make_rng(seed);
  auto random_points = [&](std::size_t n) {
    PointMatrix m(static_cast<Eigen::Index>(n), 3);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform01(rng);
    return m;
  };

  {
    double worst = 0.0;
    for (int t = 0; t < 50; ++t) {
      const PointMatrix a = random_points(1 + uniform_index(rng, 64));
      const PointMatrix b = random_points(1 + uniform_index(rng, 64));
      worst = std::max(worst, std::fabs(chamfer_distance(a, b) - oracle::brute_chamfer(a, b)));
    }
    report(worst <= 1e-9, "chamfer vs brute force", "max |diff| = " + std::to_string(worst));
  }
  {
    bool ok = true;
    for (int t = 0; t < 20 && ok; ++t) {
      const PointMatrix p = random_points(200);
      const NeighborIndex index(p);
      const Vec3 q(uniform01(rng), uniform01(rng), uniform01(rng));
      const auto got = index.knn(q, 7);
      const auto want = oracle::brute_knn(p, q, 7);
      for (std::size_t i = 0; i < want.size(); ++i) ok = ok && got[i].index == want[i].index;
    }
    report(ok, "k-d tree vs brute force", "20 random queries, k = 7");
  }
  {
    const auto problem = oracle::make_toy_problem(false, seed);
    Model<double> model(oracle::toy_shape(false));
    model.init_glorot(seed);
    const auto r = oracle::finite_difference_check(model, problem);
    report(r.pass_fraction() >= 0.99, "gradient check (classification)",
           std::to_string(r.passed) + "/" + std::to_string(r.checked) + " parameters within 1e-4");
  }
  {
    const auto problem = oracle::make_toy_problem(true, seed);
    Model<double> model(oracle::toy_shape(true));
    model.init_glorot(seed);
    // Per-point heads put far more ReLU and max-pool switch points within
    // 1e-5 of the probe, so this path uses a finer step.
    const auto r = oracle::finite_difference_check(model, problem, 1e-6);
    report(r.pass_fraction() >= 0.99, "gradient check (segmentation)",
           std::to_string(r.passed) + "/" + std::to_string(r.checked) + " parameters within 1e-4");
  }
  {
    Eigen::MatrixXd src(60, 4);
    std::vector<int> ls(60);
    for (Eigen::Index i = 0; i < 60; ++i) {
      ls[static_cast<std::size_t>(i)] = static_cast<int>(i % 3);
      for (int c = 0; c < 4; ++c) src(i, c) = standard_normal(rng) + ls[static_cast<std::size_t>(i)];
    }
    Eigen::MatrixXd tgt(30, 4);
    std::vector<int> lt(30);
    for (Eigen::Index i = 0; i < 30; ++i) {
      lt[static_cast<std::size_t>(i)] = static_cast<int>(uniform_index(rng, 3));
      for (int c = 0; c < 4; ++c) tgt(i, c) = standard_normal(rng);
    }
    const auto model = fit_class_gaussians(src, ls);
    const double diff = std::fabs(log_perplexity(model, tgt, lt, true) - oracle::brute_log_perplexity(model, tgt, lt, true)) +
                        std::fabs(log_perplexity(model, tgt, lt, false) - oracle::brute_log_perplexity(model, tgt, lt, false));
    report(diff <= 1e-9, "perplexity vs explicit inverse", "|diff| = " + std::to_string(diff));
  }
  {
    bool ok = true;
    for (int t = 0; t < 100; ++t) {
      const PointCloud a(random_points(64));
      const PointCloud b(random_points(64));
      const auto m = pcm_classify({a, 0}, {b, 1}, 2, 1.0, 1.0, rng());
      ok = ok && std::fabs(m.soft_label[0] + m.soft_label[1] - 1.0) <= 1e-12 && m.cloud.size() == 64;
    }
    report(ok, "PCM soft labels", "100 mixes sum to 1");
  }
  out << (failures == 0 ? "selftest passed" : std::to_string(failures) + " selftest check(s) failed") << "\n";
  return failures == 0 ? kOk : kNumerical;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Deformation-reconstruction and point-cloud mixup toolkit for point-cloud domain adaptation"};
  app.name("defrec");
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config, "run configuration (JSON)");
  app.add_option("--seed", g.seed, "global seed");
  app.add_option("--out", g.out, "output directory");

  GenBenchArgs gb;
  auto* gen = app.add_subcommand("gen-bench", "generate the synthetic sim-to-real benchmark");
  gen->add_option("--task", gb.task, "classification or segmentation")->check(CLI::IsMember({"classification", "segmentation"}));
  gen->add_option("--classes", gb.spec.num_classes, "number of primitive classes");
  gen->add_option("--source-train", gb.spec.source_train);
  gen->add_option("--source-test", gb.spec.source_test);
  gen->add_option("--target-train", gb.spec.target_train);
  gen->add_option("--target-test", gb.spec.target_test);
  gen->add_option("--points", gb.spec.points, "points per cloud");
  gen->add_option("--missing", gb.spec.missing_fraction, "cap on the removed chunk fraction");
  gen->add_option("--sparsity", gb.spec.sparsity, "kept points as a fraction of --points");
  gen->add_option("--noise", gb.spec.target_noise, "target coordinate noise");

  DeformArgs da;
  auto* def = app.add_subcommand("deform", "apply a deformation to cloud files");
  def->add_option("--input,input", da.inputs, "cloud files")->required();
  def->add_option("--kind", da.kind, "voxel, sphere, feature, split, gradient, lambertian or mixed");
  def->add_option("--k", da.k, "voxels per axis (voxel) or region size (feature)");
  def->add_option("--radius", da.radius);
  def->add_option("--sigma", da.sigma, "relocation standard deviation");
  def->add_option("--cap", da.cap, "sample-based region cap fraction");
  def->add_option("--layer", da.layer, "encoder layer for feature-based regions");
  def->add_option("--checkpoint", da.checkpoint, "model supplying features");

  MixupArgs ma;
  auto* mix = app.add_subcommand("mixup", "mix two clouds");
  mix->add_option("--a", ma.a)->required();
  mix->add_option("--b", ma.b)->required();
  mix->add_option("--label-a", ma.label_a);
  mix->add_option("--label-b", ma.label_b);
  mix->add_option("--classes", ma.classes);
  mix->add_option("--gamma", ma.gamma, "fixed mixing fraction instead of a Beta draw");
  mix->add_option("--alpha", ma.alpha);
  mix->add_option("--beta", ma.beta);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train a model from a run configuration");
  train->add_option("--lambda", ta.lambda, "override the reconstruction weight");
  train->add_option("--epochs", ta.epochs);
  train->add_option("--workers", ta.workers);
  train->add_flag("--resume", ta.resume, "continue from state.bin in the output directory");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "accuracy or mIoU of a checkpoint on an archive");
  eval->add_option("--checkpoint", ea.checkpoint)->required();
  eval->add_option("--data", ea.data)->required();
  eval->add_option("--features-out", ea.features_out, "write 'label f1 ... fd' rows for perplexity");

  PerplexityArgs pa;
  auto* perp = app.add_subcommand("perplexity", "Gaussian log-perplexity of target features under source classes");
  perp->add_option("--source", pa.source)->required();
  perp->add_option("--target", pa.target)->required();
  perp->add_option("--dims", pa.dims, "PCA dimensions (0 keeps all)");
  perp->add_option("--reg", pa.reg, "covariance floor");

  auto* self = app.add_subcommand("selftest", "run the gradient-check and oracle suites");

  std::vector<const char*> argv{"defrec"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kUsage;
  }

  try {
    if (*gen) return cmd_gen_bench(g, gb, out);
    if (*def) return cmd_deform(g, da, out);
    if (*mix) return cmd_mixup(g, ma, out);
    if (*train) return cmd_train(g, ta, out, err);
    if (*eval) return cmd_eval(g, ea, out);
    if (*perp) return cmd_perplexity(pa, out);
    if (*self) return cmd_selftest(g, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    switch (e.kind()) {
      case ErrorKind::InvalidArgument: return kUsage;
      case ErrorKind::Data: return kData;
      case ErrorKind::Numerical: return kNumerical;
    }
  } catch (const std::exception& e) {
    // Filesystem and allocation failures are reported as data errors.
    err << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}

}  // namespace defrec::cli
