#include <doctest.h>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>

#include "defrec/errors.hpp"
#include "defrec/evaluation.hpp"
#include "defrec/rng.hpp"
#include "oracles.hpp"

using namespace defrec;

namespace {

Eigen::MatrixXd gaussian_rows(Rng& rng, int n, int d, double shift = 0.0) {
  Eigen::MatrixXd m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = standard_normal(rng) + shift;
  return m;
}

struct Instance {
  Eigen::MatrixXd source, target;
  std::vector<int> source_labels, target_labels;
};

Instance random_instance(Rng& rng, int classes, int d, int per_class) {
  Instance in;
  std::vector<Eigen::VectorXd> centers;
  std::vector<Eigen::MatrixXd> mixing;
  for (int c = 0; c < classes; ++c) {
    centers.push_back(Eigen::VectorXd::NullaryExpr(d, [&] { return 3.0 * standard_normal(rng); }));
    // Identity plus noise keeps covariances well conditioned; otherwise the
    // explicit-inverse oracle is the less accurate side of the comparison.
    mixing.push_back(Eigen::MatrixXd::Identity(d, d) +
                     Eigen::MatrixXd::NullaryExpr(d, d, [&] { return 0.3 * standard_normal(rng); }));
  }
  auto draw = [&](int count, Eigen::MatrixXd& out, std::vector<int>& labels, double shift) {
    out.resize(count * classes, d);
    for (int c = 0; c < classes; ++c)
      for (int k = 0; k < count; ++k) {
        const Eigen::VectorXd z = Eigen::VectorXd::NullaryExpr(d, [&] { return standard_normal(rng); });
        out.row(c * count + k) = (centers[static_cast<std::size_t>(c)] + mixing[static_cast<std::size_t>(c)] * z).transpose().array() + shift;
        labels.push_back(c);
      }
  };
  draw(per_class + static_cast<int>(uniform_index(rng, 10)), in.source, in.source_labels, 0.0);
  draw(per_class, in.target, in.target_labels, 0.5);
  return in;
}

}  // namespace

TEST_SUITE("evaluation") {
  TEST_CASE("accuracy") {
    CHECK(accuracy({1, 2, 3}, {1, 2, 3}) == 1.0);
    CHECK(accuracy({0, 0}, {1, 1}) == 0.0);
    CHECK(accuracy({1, 2, 3, 4}, {1, 2, 3, 0}) == 0.75);
    CHECK_THROWS_AS(accuracy({}, {}), InvalidArgument);
    CHECK_THROWS_AS(accuracy({1}, {1, 2}), InvalidArgument);
  }

  TEST_CASE("mean IoU: perfect, disjoint and hand-computed") {
    CHECK(mean_iou({0, 1, 1, 2}, {0, 1, 1, 2}, 3) == 1.0);
    CHECK(mean_iou({0, 0, 0}, {1, 1, 1}, 2) == 0.0);
    // C = 2, half the class-1 points flipped to class 0.
    const std::vector<int> labels{0, 0, 0, 0, 1, 1, 1, 1};
    const std::vector<int> preds{0, 0, 0, 0, 0, 0, 1, 1};
    const double want = oracle::miou_from_confusion(oracle::confusion_matrix(preds, labels, 2));
    CHECK(want == doctest::Approx((4.0 / 6.0 + 2.0 / 4.0) / 2.0));
    CHECK(mean_iou(preds, labels, 2) == want);
    // Class 2 appears nowhere and is skipped.
    CHECK(mean_iou({0, 1}, {0, 1}, 3) == 1.0);
    CHECK_THROWS_AS(mean_iou({}, {}, 2), InvalidArgument);
  }

  TEST_CASE("mean IoU matches the confusion oracle and is order invariant") {
    Rng rng = make_rng(101);
    for (int t = 0; t < 100; ++t) {
      const std::size_t n = 1 + uniform_index(rng, 200);
      std::vector<int> p(n), l(n);
      for (std::size_t i = 0; i < n; ++i) {
        p[i] = static_cast<int>(uniform_index(rng, 5));
        l[i] = static_cast<int>(uniform_index(rng, 5));
      }
      const double m = mean_iou(p, l, 5);
      CHECK(std::fabs(m - oracle::miou_from_confusion(oracle::confusion_matrix(p, l, 5))) <= 1e-12);
      const auto perm = shuffled_indices(rng, n);
      std::vector<int> pp(n), lp(n);
      for (std::size_t i = 0; i < n; ++i) {
        pp[i] = p[perm[i]];
        lp[i] = l[perm[i]];
      }
      CHECK(std::fabs(mean_iou(pp, lp, 5) - m) <= 1e-12);
    }
  }

  TEST_CASE("fit: ML moments, priors and regularization") {
    Eigen::MatrixXd f(2, 1);
    f << 1.0, -1.0;
    const GaussianClassModel one = fit_class_gaussians(f, {0, 0}, 0.0);
    CHECK(one.means[0][0] == 0.0);
    CHECK(one.covariances[0](0, 0) == 1.0);

    Eigen::MatrixXd g = Eigen::MatrixXd::Random(40, 2);
    std::vector<int> labels(40, 0);
    for (int i = 30; i < 40; ++i) labels[static_cast<std::size_t>(i)] = 1;
    const GaussianClassModel two = fit_class_gaussians(g, labels);
    CHECK(two.priors[0] == 0.75);
    CHECK(two.priors[1] == 0.25);

    Eigen::MatrixXd dup(3, 2);
    dup << 1, 2, 1, 2, 1, 2;
    const GaussianClassModel d = fit_class_gaussians(dup, {0, 0, 0}, 1e-6);
    CHECK((d.covariances[0] - 1e-6 * Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("fit: covariances are symmetric and floored") {
    Rng rng = make_rng(102);
    const Instance in = random_instance(rng, 3, 4, 30);
    const GaussianClassModel m = fit_class_gaussians(in.source, in.source_labels);
    double prior_sum = 0.0;
    for (int c = 0; c < 3; ++c) {
      const Eigen::MatrixXd& s = m.covariances[static_cast<std::size_t>(c)];
      CHECK((s - s.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
      CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(s).eigenvalues().minCoeff() >= kCovarianceFloor * (1 - 1e-6));
      prior_sum += m.priors[static_cast<std::size_t>(c)];
    }
    CHECK(std::fabs(prior_sum - 1.0) <= 1e-15);
  }

  TEST_CASE("fit: too few samples") {
    Eigen::MatrixXd f(3, 2);
    f.setRandom();
    CHECK_THROWS_WITH_AS(fit_class_gaussians(f, {0, 0, 1}), doctest::Contains("insufficient samples for covariance"),
                         DataError);
  }

  TEST_CASE("perplexity: single point at the mean in 2D is log(2 pi)") {
    GaussianClassModel m;
    m.dim = 2;
    m.means = {Eigen::Vector2d(0.3, -0.7)};
    m.covariances = {Eigen::Matrix2d::Identity()};
    m.priors = {1.0};
    const Eigen::MatrixXd x = m.means[0].transpose();
    CHECK(std::fabs(log_perplexity(m, x, {0}, false) - std::log(2.0 * std::numbers::pi)) <= 1e-9);
    CHECK(std::log(2.0 * std::numbers::pi) == doctest::Approx(1.837877).epsilon(1e-6));
  }

  TEST_CASE("perplexity matches the explicit-inverse oracle") {
    Rng rng = make_rng(103);
    for (int t = 0; t < 50; ++t) {
      const Instance in = random_instance(rng, 3, 4, 20);
      const GaussianClassModel m = fit_class_gaussians(in.source, in.source_labels);
      for (bool balanced : {false, true}) {
        const double got = log_perplexity(m, in.target, in.target_labels, balanced);
        const double want = oracle::brute_log_perplexity(m, in.target, in.target_labels, balanced);
        CHECK(std::fabs(got - want) <= 1e-9);
      }
    }
  }

  TEST_CASE("balanced equals standard with equal class sizes and priors") {
    Rng rng = make_rng(104);
    Instance in = random_instance(rng, 3, 4, 25);
    in.source.conservativeResize(75, 4);
    in.source_labels.resize(75);
    // Re-label the source so every class has 25 rows.
    for (int i = 0; i < 75; ++i) in.source_labels[static_cast<std::size_t>(i)] = i / 25;
    const GaussianClassModel m = fit_class_gaussians(in.source, in.source_labels);
    CHECK(std::fabs(log_perplexity(m, in.target, in.target_labels, true) -
                    log_perplexity(m, in.target, in.target_labels, false)) <= 1e-9);
  }

  TEST_CASE("perplexity rejects labels outside the model") {
    Rng rng = make_rng(105);
    const Instance in = random_instance(rng, 2, 3, 10);
    const GaussianClassModel m = fit_class_gaussians(in.source, in.source_labels);
    std::vector<int> bad = in.target_labels;
    bad[0] = 5;
    CHECK_THROWS_AS(log_perplexity(m, in.target, bad, false), DataError);
  }

  TEST_CASE("in-distribution targets score better than shifted ones") {
    for (std::uint64_t trial = 0; trial < 20; ++trial) {
      Rng rng = make_rng(derive_seed(106, {trial}));
      const Eigen::MatrixXd src = gaussian_rows(rng, 200, 3);
      const std::vector<int> labels(200, 0);
      const GaussianClassModel m = fit_class_gaussians(src, labels);
      const Eigen::MatrixXd same = gaussian_rows(rng, 100, 3);
      const Eigen::MatrixXd shifted = gaussian_rows(rng, 100, 3, 3.0);
      const std::vector<int> tl(100, 0);
      CHECK(log_perplexity(m, same, tl, false) < log_perplexity(m, shifted, tl, false));
    }
  }

  TEST_CASE("perplexity pipeline is translation invariant") {
    Rng rng = make_rng(107);
    const Instance in = random_instance(rng, 3, 4, 20);
    const Eigen::RowVectorXd shift = Eigen::RowVectorXd::NullaryExpr(4, [&] { return 10.0 * standard_normal(rng); });
    const GaussianClassModel a = fit_class_gaussians(in.source, in.source_labels);
    const GaussianClassModel b = fit_class_gaussians(in.source.rowwise() + shift, in.source_labels);
    for (bool balanced : {false, true})
      CHECK(std::fabs(log_perplexity(a, in.target, in.target_labels, balanced) -
                      log_perplexity(b, in.target.rowwise() + shift, in.target_labels, balanced)) <= 1e-9);
  }

  TEST_CASE("PCA: full rank preserves distances, rank one reconstructs, variance ordered") {
    Rng rng = make_rng(108);
    const Eigen::MatrixXd f = gaussian_rows(rng, 30, 4);
    const PcaProjection full = fit_pca(f, 4);
    const Eigen::MatrixXd p = full.apply(f);
    for (int i = 0; i < 30; ++i)
      for (int j = 0; j < 30; ++j) CHECK(std::fabs((p.row(i) - p.row(j)).norm() - (f.row(i) - f.row(j)).norm()) <= 1e-9);

    Eigen::MatrixXd rank1(20, 3);
    const Eigen::RowVector3d dir(1.0, 2.0, -0.5);
    for (int i = 0; i < 20; ++i) rank1.row(i) = (standard_normal(rng) * dir).array() + 0.7;
    const PcaProjection one = fit_pca(rank1, 1);
    const Eigen::MatrixXd back = (one.apply(rank1) * one.components.transpose()).rowwise() + one.mean.transpose();
    CHECK((back - rank1).cwiseAbs().maxCoeff() <= 1e-9);

    Eigen::MatrixXd aniso = gaussian_rows(rng, 200, 3);
    aniso.col(1) *= 5.0;
    const Eigen::MatrixXd q = fit_pca(aniso, 2).apply(aniso);
    const Eigen::RowVectorXd var = (q.rowwise() - q.colwise().mean()).colwise().squaredNorm();
    CHECK(var[0] >= var[1]);

    CHECK_THROWS_AS(fit_pca(f, 5), InvalidArgument);
  }

  TEST_CASE("project_features fits on the pooled rows") {
    Rng rng = make_rng(109);
    const Eigen::MatrixXd s = gaussian_rows(rng, 20, 5);
    const Eigen::MatrixXd t = gaussian_rows(rng, 15, 5, 1.0);
    Eigen::MatrixXd so, to;
    project_features(s, t, 2, so, to);
    Eigen::MatrixXd pooled(35, 5);
    pooled << s, t;
    const PcaProjection p = fit_pca(pooled, 2);
    CHECK((so - p.apply(s)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((to - p.apply(t)).cwiseAbs().maxCoeff() == 0.0);
  }
}
