#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace defrec {

/// lr_max * (1 + cos(pi * step / total_steps)) / 2, never negative.
double cosine_lr(long step, long total_steps, double lr_max);

/// Adam with L2 weight decay folded into the gradient.
///
/// Parameters are split into contiguous groups, each with its own step
/// count. A step may update only some groups; the others, including their
/// moments, are left untouched, as for parameters that took no part in the
/// loss.
class Adam {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };
  struct Group {
    std::size_t begin = 0;
    std::size_t end = 0;
  };

  Adam() = default;
  /// A single group covering all `size` parameters.
  Adam(std::size_t size, Options options);
  /// `groups` must tile [0, size) in order.
  Adam(std::size_t size, Options options, std::vector<Group> groups);

  /// Update every group.
  void step(std::span<float> params, std::span<const float> grads, double lr);
  /// Update only the listed groups.
  void step(std::span<float> params, std::span<const float> grads, double lr, std::span<const std::size_t> active);

  const Options& options() const noexcept { return options_; }
  const std::vector<Group>& groups() const noexcept { return groups_; }
  /// Steps taken per group.
  const std::vector<std::uint64_t>& steps() const noexcept { return t_; }
  const std::vector<float>& first_moment() const noexcept { return m_; }
  const std::vector<float>& second_moment() const noexcept { return v_; }

  /// Restore saved state (checkpoint resume).
  void restore(std::vector<float> m, std::vector<float> v, std::vector<std::uint64_t> t);

 private:
  void step_group(std::size_t g, std::span<float> params, std::span<const float> grads, double lr);

  Options options_;
  std::vector<Group> groups_;
  std::vector<float> m_;
  std::vector<float> v_;
  std::vector<std::uint64_t> t_;
};

}  // namespace defrec
