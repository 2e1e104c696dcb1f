#pragma once

#include <cstdint>
#include <nlohmann/json.hpp>
#include <vector>

namespace capaint::diffusion {

/// Tables for the forward/reverse processes. Step indices are 1-based:
/// beta(1) .. beta(T). alpha_bar(0) is defined as 1.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;
  explicit NoiseSchedule(std::vector<double> betas);

  int64_t num_steps() const { return static_cast<int64_t>(betas_.size()); }
  double beta(int64_t t) const { return betas_.at(checked(t)); }
  double alpha(int64_t t) const { return alphas_.at(checked(t)); }
  double alpha_bar(int64_t t) const;
  /// Reverse-process standard deviation; sigma_t^2 = beta_t.
  double sigma(int64_t t) const { return sigmas_.at(checked(t)); }

  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }

  /// Throws IndexError unless 1 <= t <= T.
  void check_step(int64_t t) const { (void)checked(t); }

  nlohmann::json to_json() const;

 private:
  std::size_t checked(int64_t t) const;

  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
  std::vector<double> sigmas_;
  double beta_start_ = 0.0;
  double beta_end_ = 0.0;
};

/// Betas spaced linearly from beta_start to beta_end inclusive.
NoiseSchedule linear_schedule(int64_t num_steps, double beta_start, double beta_end);
NoiseSchedule schedule_from_json(const nlohmann::json& j);

}  // namespace capaint::diffusion
