#include "defrec/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "defrec/errors.hpp"

namespace defrec {

double cosine_lr(long step, long total_steps, double lr_max) {
  if (total_steps <= 0) return lr_max;
  step = std::clamp(step, 0L, total_steps);
  const double lr =
      lr_max * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps))) / 2.0;
  return std::max(0.0, lr);
}

Adam::Adam(std::size_t size, Options options) : Adam(size, options, {Group{0, size}}) {}

Adam::Adam(std::size_t size, Options options, std::vector<Group> groups)
    : options_(options), groups_(std::move(groups)), m_(size, 0.0f), v_(size, 0.0f), t_(groups_.size(), 0) {
  std::size_t at = 0;
  for (const Group& g : groups_) {
    if (g.begin != at || g.end < g.begin) throw InvalidArgument("optimizer groups must tile the parameters in order");
    at = g.end;
  }
  if (at != size) throw InvalidArgument("optimizer groups must tile the parameters in order");
}

void Adam::step(std::span<float> params, std::span<const float> grads, double lr) {
  if (params.size() != m_.size() || grads.size() != m_.size()) throw InvalidArgument("optimizer size mismatch");
  for (std::size_t g = 0; g < groups_.size(); ++g) step_group(g, params, grads, lr);
}

void Adam::step(std::span<float> params, std::span<const float> grads, double lr, std::span<const std::size_t> active) {
  if (params.size() != m_.size() || grads.size() != m_.size()) throw InvalidArgument("optimizer size mismatch");
  for (std::size_t g : active) {
    if (g >= groups_.size()) throw InvalidArgument("optimizer group out of range");
    step_group(g, params, grads, lr);
  }
}

void Adam::step_group(std::size_t g, std::span<float> params, std::span<const float> grads, double lr) {
  const std::uint64_t t = ++t_[g];
  const auto b1 = static_cast<float>(options_.beta1);
  const auto b2 = static_cast<float>(options_.beta2);
  const auto eps = static_cast<float>(options_.eps);
  const auto wd = static_cast<float>(options_.weight_decay);
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t));
  const auto step_size = static_cast<float>(lr / bc1);
  const auto inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
  for (std::size_t i = groups_[g].begin; i < groups_[g].end; ++i) {
    float grad = grads[i];
    if (wd != 0.0f) grad += wd * params[i];
    m_[i] = b1 * m_[i] + (1.0f - b1) * grad;
    v_[i] = b2 * v_[i] + (1.0f - b2) * grad * grad;
    params[i] -= step_size * m_[i] / (std::sqrt(v_[i]) * inv_sqrt_bc2 + eps);
  }
}

void Adam::restore(std::vector<float> m, std::vector<float> v, std::vector<std::uint64_t> t) {
  if (m.size() != m_.size() || v.size() != v_.size() || t.size() != t_.size())
    throw DataError("optimizer state size mismatch");
  m_ = std::move(m);
  v_ = std::move(v);
  t_ = std::move(t);
}

}  // namespace defrec
