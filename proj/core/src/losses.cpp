#include "defrec/losses.hpp"

#include <cmath>

#include "defrec/errors.hpp"

namespace defrec {

LossAndGrad softmax_cross_entropy(const Eigen::VectorXd& logits, const Eigen::VectorXd& soft_label) {
  if (logits.size() != soft_label.size()) throw InvalidArgument("label length does not match logit count");
  const double shift = logits.maxCoeff();
  const Eigen::VectorXd e = (logits.array() - shift).exp().matrix();
  const double sum = e.sum();
  const double log_sum = std::log(sum);
  LossAndGrad out;
  for (Eigen::Index c = 0; c < logits.size(); ++c) {
    if (soft_label[c] != 0.0) out.loss -= soft_label[c] * (logits[c] - shift - log_sum);
  }
  out.grad = e / sum - soft_label;
  return out;
}

BatchLoss mean_cross_entropy(const Eigen::MatrixXd& logits, const Eigen::MatrixXd& targets) {
  if (logits.rows() == 0) throw InvalidArgument("empty batch");
  if (targets.rows() != logits.rows() || targets.cols() != logits.cols())
    throw InvalidArgument("label matrix does not match logits");
  BatchLoss out;
  out.grad.resize(logits.rows(), logits.cols());
  const double inv = 1.0 / static_cast<double>(logits.rows());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const LossAndGrad lg = softmax_cross_entropy(logits.row(r).transpose(), targets.row(r).transpose());
    out.loss += lg.loss * inv;
    out.grad.row(r) = lg.grad.transpose() * inv;
  }
  return out;
}

BatchLoss mean_cross_entropy(const Eigen::MatrixXd& logits, const std::vector<int>& labels) {
  if (static_cast<Eigen::Index>(labels.size()) != logits.rows()) throw InvalidArgument("label count does not match rows");
  Eigen::MatrixXd targets = Eigen::MatrixXd::Zero(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] < 0 || labels[r] >= logits.cols()) throw DataError("label outside class range");
    targets(static_cast<Eigen::Index>(r), labels[r]) = 1.0;
  }
  return mean_cross_entropy(logits, targets);
}

}  // namespace defrec
