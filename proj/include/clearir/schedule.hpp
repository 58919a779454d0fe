#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <vector>

#include <nlohmann/json.hpp>

#include "clearir/error.hpp"
#include "clearir/unet.hpp"

namespace clearir {

/// Cosine decay with warm restarts, parameterized in optimizer steps.
struct CosineRestarts {
  double initial_lr = 1e-4;
  std::int64_t first_period = 1000;
  double period_mult = 2.0;
  double min_fraction = 0.01;

  void validate() const {
    if (!(initial_lr > 0.0) || !std::isfinite(initial_lr)) throw ConfigError("initial_lr must be > 0");
    if (first_period < 1) throw ConfigError("first_period must be >= 1 step");
    if (!(period_mult >= 1.0)) throw ConfigError("period_mult must be >= 1");
    if (!(min_fraction >= 0.0 && min_fraction <= 1.0)) throw ConfigError("min_fraction must lie in [0,1]");
  }
};

struct PeriodPosition {
  std::int64_t start = 0;
  std::int64_t length = 0;
};

inline PeriodPosition period_containing(std::int64_t step, const CosineRestarts& s) {
  if (step < 0) throw ParameterError("schedule step must be >= 0");
  std::int64_t start = 0;
  double length = static_cast<double>(s.first_period);
  while (true) {
    const auto len = static_cast<std::int64_t>(std::llround(length));
    if (step < start + len) return {start, len};
    start += len;
    length *= s.period_mult;
  }
}

inline double lr_at(std::int64_t step, const CosineRestarts& s) {
  const PeriodPosition p = period_containing(step, s);
  const double t = static_cast<double>(step - p.start) / static_cast<double>(p.length);
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * t));
  return s.initial_lr * (s.min_fraction + (1.0 - s.min_fraction) * cosine);
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-7;
};

template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(const std::vector<Param<T>*>& params, double lr) {
    if (m_.empty()) {
      for (const Param<T>* p : params) {
        m_.emplace_back(p->value.size(), 0.0);
        v_.emplace_back(p->value.size(), 0.0);
      }
    }
    if (m_.size() != params.size()) throw StateError("optimizer bound to a different parameter set");
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const double alpha = lr * std::sqrt(c2) / c1;
    for (std::size_t k = 0; k < params.size(); ++k) {
      Param<T>& p = *params[k];
      std::vector<double>& m = m_[k];
      std::vector<double>& v = v_[k];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i];
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
        p.value[i] -= static_cast<T>(alpha * m[i] / (std::sqrt(v[i]) + cfg_.eps));
      }
    }
  }

  std::int64_t steps() const { return t_; }

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Tracks the best monitored value; signals a stop once `patience` epochs
/// pass without strict improvement.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {
    if (patience < 1) throw ConfigError("patience must be >= 1");
  }

  // Returns true when the value improved on the best so far.
  bool update(int epoch, double value) {
    last_epoch_ = epoch;
    if (value < best_) {
      best_ = value;
      best_epoch_ = epoch;
      return true;
    }
    return false;
  }

  bool should_stop() const { return best_epoch_ > 0 && last_epoch_ - best_epoch_ >= patience_; }
  int best_epoch() const { return best_epoch_; }
  double best() const { return best_; }
  int patience() const { return patience_; }

 private:
  int patience_;
  int best_epoch_ = 0;
  int last_epoch_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

}  // namespace clearir
