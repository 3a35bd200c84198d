#include "pixforge/optim.hpp"

#include <cmath>
#include <stdexcept>

#include "pixforge/log.hpp"

namespace pixforge::ad {

namespace {

double to_float(double x) { return static_cast<double>(static_cast<float>(x)); }

}  // namespace

double clip_grad_norm(std::vector<std::vector<double>>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (double x : g) sq += x * x;
  double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    double c = max_norm / norm;
    for (auto& g : grads)
      for (double& x : g) x *= c;
  }
  return norm;
}

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig config)
    : params_(std::move(params)), config_(config) {
  if (!(config_.learning_rate > 0.0)) throw std::invalid_argument("AdamW: learning_rate must be > 0");
  if (!(config_.max_grad_norm > 0.0)) throw std::invalid_argument("AdamW: max_grad_norm must be > 0");
  for (const auto& p : params_) {
    if (!p.requires_grad()) throw std::invalid_argument("AdamW: parameter does not require grad");
    state_.first_moment.emplace_back(p.numel(), 0.0);
    state_.second_moment.emplace_back(p.numel(), 0.0);
  }
}

StepReport AdamW::step() {
  std::vector<std::vector<double>> grads;
  grads.reserve(params_.size());
  for (const auto& p : params_) {
    auto g = p.grad();
    if (g.empty())
      grads.emplace_back(p.numel(), 0.0);
    else
      grads.emplace_back(g.begin(), g.end());
  }
  return step(std::move(grads));
}

StepReport AdamW::step(std::vector<std::vector<double>> grads) {
  if (grads.size() != params_.size()) throw std::invalid_argument("AdamW: gradient count mismatch");
  StepReport report;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].size() != params_[i].numel())
      throw ShapeError("AdamW: gradient of size " + std::to_string(grads[i].size()) +
                       " for parameter of shape " + to_string(params_[i].shape()));
    for (double g : grads[i]) {
      if (!std::isfinite(g)) {
        logger()->warn("AdamW: non-finite gradient, step {} rejected", state_.step + 1);
        report.grad_norm = std::numeric_limits<double>::quiet_NaN();
        return report;
      }
    }
  }
  report.grad_norm = clip_grad_norm(grads, config_.max_grad_norm);
  if (report.grad_norm > config_.max_grad_norm) report.clip_coefficient = config_.max_grad_norm / report.grad_norm;

  ++state_.step;
  const double t = static_cast<double>(state_.step);
  const double bc1 = 1.0 - std::pow(config_.beta1, t);
  const double bc2 = 1.0 - std::pow(config_.beta2, t);
  const double decay = 1.0 - config_.learning_rate * config_.weight_decay;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto w = params_[i].mutable_data();
    auto& m = state_.first_moment[i];
    auto& v = state_.second_moment[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g[j];
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g[j] * g[j];
      double update = (m[j] / bc1) / (std::sqrt(v[j] / bc2) + config_.epsilon);
      w[j] = w[j] * decay - config_.learning_rate * update;
      if (config_.round_to_float) {
        m[j] = to_float(m[j]);
        v[j] = to_float(v[j]);
        w[j] = to_float(w[j]);
      }
    }
  }
  report.applied = true;
  return report;
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void AdamW::set_learning_rate(double lr) {
  if (!(lr > 0.0)) throw std::invalid_argument("AdamW: learning rate must be positive");
  config_.learning_rate = lr;
}

void AdamW::load_state(AdamWState state) {
  if (state.first_moment.size() != params_.size() || state.second_moment.size() != params_.size())
    throw std::invalid_argument("AdamW: state has wrong parameter count");
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (state.first_moment[i].size() != params_[i].numel() || state.second_moment[i].size() != params_[i].numel())
      throw ShapeError("AdamW: moment shape mismatch for parameter " + std::to_string(i));
  state_ = std::move(state);
}

}  // namespace pixforge::ad
