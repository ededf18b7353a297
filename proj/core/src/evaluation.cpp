#include "defrec/evaluation.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "defrec/errors.hpp"

namespace defrec {

double accuracy(const std::vector<int>& preds, const std::vector<int>& labels) {
  if (preds.empty()) throw InvalidArgument("accuracy of an empty set");
  if (preds.size() != labels.size()) throw InvalidArgument("prediction and label counts differ");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double mean_iou(const std::vector<int>& preds, const std::vector<int>& labels, int num_classes) {
  if (preds.empty()) throw InvalidArgument("mean IoU of an empty set");
  if (preds.size() != labels.size()) throw InvalidArgument("prediction and label counts differ");
  std::vector<long> tp(static_cast<std::size_t>(num_classes), 0);
  std::vector<long> fp(tp.size(), 0);
  std::vector<long> fn(tp.size(), 0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const int p = preds[i];
    const int l = labels[i];
    if (p < 0 || p >= num_classes || l < 0 || l >= num_classes) throw DataError("label outside class range");
    if (p == l) {
      ++tp[static_cast<std::size_t>(p)];
    } else {
      ++fp[static_cast<std::size_t>(p)];
      ++fn[static_cast<std::size_t>(l)];
    }
  }
  double sum = 0.0;
  int present = 0;
  for (std::size_t c = 0; c < tp.size(); ++c) {
    const long denom = tp[c] + fp[c] + fn[c];
    if (denom == 0) continue;
    sum += static_cast<double>(tp[c]) / static_cast<double>(denom);
    ++present;
  }
  return sum / present;
}

namespace {

struct FactoredGaussian {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double log_norm = 0.0;  // -0.5 (d log 2pi + log det Sigma)

  FactoredGaussian(const Eigen::MatrixXd& cov, int dim) : llt(cov) {
    if (llt.info() != Eigen::Success) throw NumericalError("covariance is not positive definite");
    const Eigen::MatrixXd l = llt.matrixL();
    const double log_det = 2.0 * l.diagonal().array().log().sum();
    log_norm = -0.5 * (static_cast<double>(dim) * std::log(2.0 * std::numbers::pi) + log_det);
  }

  double log_density(const Eigen::VectorXd& mean, const Eigen::VectorXd& x) const {
    const Eigen::VectorXd z = llt.matrixL().solve(x - mean);
    return log_norm - 0.5 * z.squaredNorm();
  }
};

}  // namespace

double GaussianClassModel::log_density(int c, const Eigen::VectorXd& x) const {
  const auto k = static_cast<std::size_t>(c);
  return FactoredGaussian(covariances.at(k), dim).log_density(means[k], x);
}

GaussianClassModel fit_class_gaussians(const Eigen::MatrixXd& features, const std::vector<int>& labels, double reg) {
  if (features.cols() < 1) throw InvalidArgument("feature dimension must be at least 1");
  if (static_cast<std::size_t>(features.rows()) != labels.size()) throw InvalidArgument("feature and label counts differ");
  if (labels.empty()) throw InvalidArgument("no source samples");
  if (*std::min_element(labels.begin(), labels.end()) < 0) throw DataError("negative class label");
  const int classes = *std::max_element(labels.begin(), labels.end()) + 1;

  GaussianClassModel model;
  model.dim = static_cast<int>(features.cols());
  std::vector<std::vector<Eigen::Index>> members(static_cast<std::size_t>(classes));
  for (std::size_t i = 0; i < labels.size(); ++i) members[static_cast<std::size_t>(labels[i])].push_back(static_cast<Eigen::Index>(i));

  for (int c = 0; c < classes; ++c) {
    const auto& rows = members[static_cast<std::size_t>(c)];
    if (rows.size() < 2) throw DataError("insufficient samples for covariance");
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(features.cols());
    for (Eigen::Index r : rows) mu += features.row(r).transpose();
    mu /= static_cast<double>(rows.size());
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(features.cols(), features.cols());
    for (Eigen::Index r : rows) {
      const Eigen::VectorXd d = features.row(r).transpose() - mu;
      cov.noalias() += d * d.transpose();
    }
    cov /= static_cast<double>(rows.size());
    cov = 0.5 * (cov + cov.transpose());
    cov.diagonal().array() += reg;
    model.means.push_back(std::move(mu));
    model.covariances.push_back(std::move(cov));
    model.priors.push_back(static_cast<double>(rows.size()) / static_cast<double>(labels.size()));
  }
  return model;
}

double log_perplexity(const GaussianClassModel& model, const Eigen::MatrixXd& features, const std::vector<int>& labels,
                      bool balanced) {
  if (static_cast<std::size_t>(features.rows()) != labels.size()) throw InvalidArgument("feature and label counts differ");
  if (labels.empty()) throw InvalidArgument("no target samples");
  if (features.cols() != model.dim) throw InvalidArgument("feature dimension does not match the model");

  std::vector<FactoredGaussian> factors;
  factors.reserve(static_cast<std::size_t>(model.num_classes()));
  for (int c = 0; c < model.num_classes(); ++c) factors.emplace_back(model.covariances[static_cast<std::size_t>(c)], model.dim);

  std::vector<double> class_sum(static_cast<std::size_t>(model.num_classes()), 0.0);
  std::vector<long> class_count(class_sum.size(), 0);
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int c = labels[i];
    if (c < 0 || c >= model.num_classes()) throw DataError("target class " + std::to_string(c) + " absent from model");
    const auto k = static_cast<std::size_t>(c);
    const double ll = factors[k].log_density(model.means[k], features.row(static_cast<Eigen::Index>(i)).transpose()) +
                      std::log(model.priors[k]);
    total += ll;
    class_sum[static_cast<std::size_t>(c)] += ll;
    ++class_count[static_cast<std::size_t>(c)];
  }
  if (!balanced) return -total / static_cast<double>(labels.size());

  double sum = 0.0;
  int present = 0;
  for (std::size_t c = 0; c < class_sum.size(); ++c) {
    if (class_count[c] == 0) continue;
    sum += class_sum[c] / static_cast<double>(class_count[c]);
    ++present;
  }
  return -sum / present;
}

Eigen::MatrixXd PcaProjection::apply(const Eigen::MatrixXd& features) const {
  return (features.rowwise() - mean.transpose()) * components;
}

PcaProjection fit_pca(const Eigen::MatrixXd& features, int d_out) {
  const auto d = static_cast<int>(features.cols());
  if (d_out < 1 || d_out > d) throw InvalidArgument("projection dimension must satisfy 1 <= d_out <= d");
  if (features.rows() < 1) throw InvalidArgument("no rows to fit a projection");
  PcaProjection p;
  p.mean = features.colwise().mean().transpose();
  const Eigen::MatrixXd centered = features.rowwise() - p.mean.transpose();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(features.rows());
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  // Eigenvalues ascend; take the last d_out columns in reverse.
  p.components.resize(d, d_out);
  for (int k = 0; k < d_out; ++k) {
    Eigen::VectorXd v = solver.eigenvectors().col(d - 1 - k);
    // Deterministic sign: largest-magnitude entry positive.
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0.0) v = -v;
    p.components.col(k) = v;
  }
  return p;
}

void project_features(const Eigen::MatrixXd& source, const Eigen::MatrixXd& target, int d_out,
                      Eigen::MatrixXd& source_out, Eigen::MatrixXd& target_out) {
  if (source.cols() != target.cols()) throw InvalidArgument("source and target feature dimensions differ");
  Eigen::MatrixXd pooled(source.rows() + target.rows(), source.cols());
  pooled << source, target;
  const PcaProjection p = fit_pca(pooled, d_out);
  source_out = p.apply(source);
  target_out = p.apply(target);
}

}  // namespace defrec
