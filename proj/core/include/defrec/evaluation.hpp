#pragma once

#include <Eigen/Core>

#include <vector>

namespace defrec {

/// Fraction of exact matches.
double accuracy(const std::vector<int>& preds, const std::vector<int>& labels);

/// Mean over classes of TP / (TP + FP + FN); classes absent from both
/// predictions and labels are skipped.
double mean_iou(const std::vector<int>& preds, const std::vector<int>& labels, int num_classes);

/// Per-class Gaussian fitted to source features.
///
/// `means[c]` and `covariances[c]` are the maximum-likelihood estimates
/// (covariance divided by n_c) plus reg * I; `priors[c]` is the source class
/// proportion.
struct GaussianClassModel {
  int dim = 0;
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covariances;
  std::vector<double> priors;

  int num_classes() const { return static_cast<int>(means.size()); }
  /// log N(x; mu_c, Sigma_c) via a Cholesky factor.
  double log_density(int c, const Eigen::VectorXd& x) const;
};

inline constexpr double kCovarianceFloor = 1e-6;

/// `features` has one row per sample. Every class in [0, max label] needs at
/// least two samples.
GaussianClassModel fit_class_gaussians(const Eigen::MatrixXd& features, const std::vector<int>& labels,
                                       double reg = kCovarianceFloor);

/// Negative mean log of p(x | y = c) p(y = c) over target samples, so lower is
/// better. `balanced` averages per-class means over the classes present in
/// the target.
double log_perplexity(const GaussianClassModel& model, const Eigen::MatrixXd& features, const std::vector<int>& labels,
                      bool balanced);

/// Principal-component projection fitted on the pooled rows.
struct PcaProjection {
  Eigen::VectorXd mean;
  Eigen::MatrixXd components;  ///< d x d_out, columns by decreasing variance

  Eigen::MatrixXd apply(const Eigen::MatrixXd& features) const;
};

PcaProjection fit_pca(const Eigen::MatrixXd& features, int d_out);

/// Fit PCA on the stacked source and target rows and project both.
void project_features(const Eigen::MatrixXd& source, const Eigen::MatrixXd& target, int d_out,
                      Eigen::MatrixXd& source_out, Eigen::MatrixXd& target_out);

}  // namespace defrec
