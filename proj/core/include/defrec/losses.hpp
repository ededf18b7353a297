#pragma once

#include <Eigen/Core>

#include <vector>

namespace defrec {

struct LossAndGrad {
  double loss = 0.0;
  Eigen::VectorXd grad;  ///< d loss / d logits
};

/// -sum_c label_c * log softmax(logits)_c with max-subtraction; gradient
/// softmax(logits) - label.
LossAndGrad softmax_cross_entropy(const Eigen::VectorXd& logits, const Eigen::VectorXd& soft_label);

struct BatchLoss {
  double loss = 0.0;
  Eigen::MatrixXd grad;  ///< same shape as the logits
};

/// Mean cross-entropy over rows. `targets` holds one soft-label row per logit row.
BatchLoss mean_cross_entropy(const Eigen::MatrixXd& logits, const Eigen::MatrixXd& targets);

/// Mean cross-entropy over rows with hard labels (segmentation: one row per point).
BatchLoss mean_cross_entropy(const Eigen::MatrixXd& logits, const std::vector<int>& labels);

}  // namespace defrec
