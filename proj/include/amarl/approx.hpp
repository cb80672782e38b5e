#pragma once

// Small dense value network used when the tabular learner is swapped for an
// approximator. Everything is double precision and the loss gradient is
// computed analytically, so it can be validated against central differences
// to tight tolerance.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "amarl/core.hpp"
#include "amarl/rng.hpp"

namespace amarl {

/// One regression example: input, the output index it constrains, and the
/// value that output should take.
struct Sample {
  std::vector<double> x;
  int action = 0;
  double target = 0.0;
};

/// Fully connected network, tanh hidden layers, linear output layer.
/// Parameters live in one flat vector so finite differencing is trivial.
class Mlp {
 public:
  Mlp(std::vector<int> sizes, Rng& rng) : sizes_(std::move(sizes)) {
    if (sizes_.size() < 2) throw ModelError("network needs at least two layers");
    std::size_t count = 0;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l)
      count += static_cast<std::size_t>(sizes_[l + 1]) *
                   static_cast<std::size_t>(sizes_[l]) +
               static_cast<std::size_t>(sizes_[l + 1]);
    params_.resize(count);
    std::size_t at = 0;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      const double scale = 1.0 / std::sqrt(static_cast<double>(sizes_[l]));
      const std::size_t w = static_cast<std::size_t>(sizes_[l + 1]) *
                            static_cast<std::size_t>(sizes_[l]);
      for (std::size_t k = 0; k < w; ++k)
        params_[at++] = (2.0 * rng.uniform() - 1.0) * scale;
      at += static_cast<std::size_t>(sizes_[l + 1]);  // biases start at zero
    }
  }

  const std::vector<int>& sizes() const { return sizes_; }
  const std::vector<double>& params() const { return params_; }
  std::vector<double>& params() { return params_; }

  std::vector<double> forward(const std::vector<double>& x) const {
    std::vector<std::vector<double>> acts;
    return run(x, acts);
  }

  /// Mean squared error of each sample's constrained output.
  double loss(std::span<const Sample> batch) const {
    double sum = 0.0;
    for (const Sample& s : batch) {
      const double e = forward(s.x)[static_cast<std::size_t>(s.action)] -
                       s.target;
      sum += e * e;
    }
    return sum / static_cast<double>(batch.size());
  }

  /// Analytic dLoss/dParams for the batch, same layout as params().
  std::vector<double> gradient(std::span<const Sample> batch) const {
    std::vector<double> grad(params_.size(), 0.0);
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (const Sample& s : batch) {
      std::vector<std::vector<double>> acts;
      const std::vector<double> out = run(s.x, acts);
      std::vector<double> delta(out.size(), 0.0);
      delta[static_cast<std::size_t>(s.action)] =
          2.0 * (out[static_cast<std::size_t>(s.action)] - s.target) * inv;
      for (std::size_t l = sizes_.size() - 1; l-- > 0;) {
        const std::size_t rows = static_cast<std::size_t>(sizes_[l + 1]);
        const std::size_t cols = static_cast<std::size_t>(sizes_[l]);
        const std::size_t base = offset(l);
        const std::vector<double>& h = acts[l];
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c)
            grad[base + r * cols + c] += delta[r] * h[c];
          grad[base + rows * cols + r] += delta[r];
        }
        if (l == 0) break;
        std::vector<double> prev(cols, 0.0);
        for (std::size_t c = 0; c < cols; ++c) {
          double acc = 0.0;
          for (std::size_t r = 0; r < rows; ++r)
            acc += params_[base + r * cols + c] * delta[r];
          prev[c] = acc * (1.0 - h[c] * h[c]);
        }
        delta = std::move(prev);
      }
    }
    return grad;
  }

 private:
  std::size_t offset(std::size_t layer) const {
    std::size_t at = 0;
    for (std::size_t l = 0; l < layer; ++l)
      at += static_cast<std::size_t>(sizes_[l + 1]) *
                static_cast<std::size_t>(sizes_[l]) +
            static_cast<std::size_t>(sizes_[l + 1]);
    return at;
  }

  std::vector<double> run(const std::vector<double>& x,
                          std::vector<std::vector<double>>& acts) const {
    if (x.size() != static_cast<std::size_t>(sizes_.front()))
      throw ModelError("input size mismatch");
    std::vector<double> h = x;
    acts.clear();
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      acts.push_back(h);
      const std::size_t rows = static_cast<std::size_t>(sizes_[l + 1]);
      const std::size_t cols = static_cast<std::size_t>(sizes_[l]);
      const std::size_t base = offset(l);
      std::vector<double> z(rows);
      for (std::size_t r = 0; r < rows; ++r) {
        double acc = params_[base + rows * cols + r];
        for (std::size_t c = 0; c < cols; ++c)
          acc += params_[base + r * cols + c] * h[c];
        z[r] = acc;
      }
      const bool last = l + 2 == sizes_.size();
      if (!last)
        for (double& v : z) v = std::tanh(v);
      h = std::move(z);
    }
    return h;
  }

  std::vector<int> sizes_;
  std::vector<double> params_;
};

/// Central-difference verification of Mlp::gradient. Returns the largest
/// relative error over all parameters.
inline double gradient_check(Mlp& net, std::span<const Sample> batch,
                             double h = 1e-5) {
  const std::vector<double> analytic = net.gradient(batch);
  double worst = 0.0;
  for (std::size_t k = 0; k < net.params().size(); ++k) {
    const double keep = net.params()[k];
    net.params()[k] = keep + h;
    const double up = net.loss(batch);
    net.params()[k] = keep - h;
    const double down = net.loss(batch);
    net.params()[k] = keep;
    const double fd = (up - down) / (2.0 * h);
    const double err = std::abs(fd - analytic[k]) /
                       std::max(1.0, std::abs(fd) + std::abs(analytic[k]));
    worst = std::max(worst, err);
  }
  return worst;
}

struct Transition {
  std::vector<double> x;
  int action = 0;
  double reward = 0.0;
  std::vector<double> next;
  bool terminal = false;
};

/// Fixed-capacity ring of past transitions.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : cap_(capacity) {
    if (capacity == 0) throw ModelError("replay capacity must be positive");
  }

  void push(Transition t) {
    if (data_.size() < cap_) {
      data_.push_back(std::move(t));
    } else {
      data_[head_] = std::move(t);
      head_ = (head_ + 1) % cap_;
    }
  }

  std::size_t size() const { return data_.size(); }

  std::vector<Transition> sample(std::size_t count, Rng& rng) const {
    std::vector<Transition> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i)
      out.push_back(data_[rng.below(static_cast<std::uint32_t>(data_.size()))]);
    return out;
  }

 private:
  std::size_t cap_;
  std::size_t head_ = 0;
  std::vector<Transition> data_;
};

struct ApproxConfig {
  double lr = 1e-4;
  double gamma = 0.95;
};

/// Online network plus a periodically synced copy. Backup targets use the
/// double estimator: the online net picks the next action, the frozen copy
/// prices it.
class DoubleQ {
 public:
  DoubleQ(std::vector<int> sizes, Rng& rng)
      : online_(std::move(sizes), rng), target_(online_) {}

  Mlp& online() { return online_; }
  const Mlp& online() const { return online_; }
  const Mlp& frozen() const { return target_; }

  void sync() { target_ = online_; }

  /// One SGD step on the batch; returns the pre-step loss.
  double update(std::span<const Transition> batch, const ApproxConfig& c) {
    std::vector<Sample> samples;
    samples.reserve(batch.size());
    for (const Transition& t : batch) {
      double y = t.reward;
      if (!t.terminal) {
        const std::vector<double> pick = online_.forward(t.next);
        std::size_t best = 0;
        for (std::size_t a = 1; a < pick.size(); ++a)
          if (pick[a] > pick[best]) best = a;
        y += c.gamma * target_.forward(t.next)[best];
      }
      samples.push_back({t.x, t.action, y});
    }
    const double before = online_.loss(samples);
    const std::vector<double> grad = online_.gradient(samples);
    for (std::size_t k = 0; k < grad.size(); ++k)
      online_.params()[k] -= c.lr * grad[k];
    return before;
  }

 private:
  Mlp online_;
  Mlp target_;
};

}  // namespace amarl
