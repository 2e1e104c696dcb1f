#include "capaint/diffusion/schedule.hpp"

#include <cmath>
#include <string>

#include "capaint/error.hpp"

namespace capaint::diffusion {

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
  if (betas_.empty()) throw ConfigError("noise schedule needs at least one step");
  double running = 1.0;
  for (std::size_t i = 0; i < betas_.size(); ++i) {
    const double b = betas_[i];
    if (!(b > 0.0 && b < 1.0)) throw ConfigError("every beta must lie in (0, 1)");
    if (i > 0 && b < betas_[i - 1]) throw ConfigError("betas must be non-decreasing");
    alphas_.push_back(1.0 - b);
    running *= 1.0 - b;
    alpha_bars_.push_back(running);
    sigmas_.push_back(std::sqrt(b));
  }
  beta_start_ = betas_.front();
  beta_end_ = betas_.back();
}

std::size_t NoiseSchedule::checked(int64_t t) const {
  if (t < 1 || t > num_steps())
    throw IndexError("diffusion step " + std::to_string(t) + " outside [1, " + std::to_string(num_steps()) + "]");
  return static_cast<std::size_t>(t - 1);
}

double NoiseSchedule::alpha_bar(int64_t t) const {
  if (t == 0) return 1.0;
  return alpha_bars_.at(checked(t));
}

nlohmann::json NoiseSchedule::to_json() const {
  return {{"kind", "linear"}, {"num_steps", num_steps()}, {"beta_start", beta_start_}, {"beta_end", beta_end_}};
}

NoiseSchedule linear_schedule(int64_t num_steps, double beta_start, double beta_end) {
  if (num_steps < 1) throw ConfigError("num_steps must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw ConfigError("linear schedule needs 0 < beta_start <= beta_end < 1");
  std::vector<double> betas(static_cast<std::size_t>(num_steps));
  for (int64_t i = 0; i < num_steps; ++i) {
    const double frac = num_steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(num_steps - 1);
    betas[static_cast<std::size_t>(i)] = beta_start + (beta_end - beta_start) * frac;
  }
  return NoiseSchedule(std::move(betas));
}

NoiseSchedule schedule_from_json(const nlohmann::json& j) {
  if (j.value("kind", "linear") != "linear") throw ConfigError("only linear schedules are supported");
  return linear_schedule(j.at("num_steps").get<int64_t>(), j.at("beta_start").get<double>(),
                         j.at("beta_end").get<double>());
}

}  // namespace capaint::diffusion
