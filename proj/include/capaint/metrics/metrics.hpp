#pragma once

#include <cstdint>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

namespace capaint::metrics {

/// Mean of squared differences over all elements.
double mse(std::span<const double> pred, std::span<const double> truth);
/// Mean absolute difference over all elements.
double mae(std::span<const double> pred, std::span<const double> truth);

/// 10 log10(L^2 / mse); +infinity when mse == 0.
double psnr_from_mse(double mse_value, double data_range);
double psnr(std::span<const double> pred, std::span<const double> truth, double data_range);

struct ImageShape {
  int64_t height = 0;
  int64_t width = 0;
  int64_t channels = 1;

  int64_t size() const { return height * width * channels; }
};

struct SsimResult {
  double value = 0.0;
  bool global_fallback = false;  // frame smaller than the window
};

constexpr int64_t kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;

/// SSIM of two [H, W, C] images: 11x11 Gaussian window (sigma 1.5) over all
/// valid positions, C1 = (0.01 L)^2, C2 = (0.03 L)^2, averaged over positions
/// and channels. Frames smaller than the window use global statistics.
SsimResult ssim(std::span<const double> x, std::span<const double> y, const ImageShape& shape, double data_range);

/// Mean per-frame SSIM over T frames laid out [T, H, W, C].
SsimResult ssim_frames(std::span<const double> x, std::span<const double> y, int64_t frames, const ImageShape& shape,
                       double data_range);

/// 100 (ori - cap) / ori: positive when the candidate reduces the error.
double reduction_percent(double ori, double cap);
/// 100 (cap - ori) / |ori|: positive when the candidate increases the score.
double increase_percent(double ori, double cap);
/// Round half toward +infinity at `decimals` places.
double round_half_up(double value, int decimals = 1);

struct RunMetrics {
  std::string run_id;
  std::uint64_t seed = 0;
  double mae = 0.0;  // physical units
  double mse = 0.0;
  double ssim = 0.0;
  double psnr = 0.0;  // may be +infinity
  bool ssim_global_fallback = false;

  nlohmann::json to_json() const;
  static RunMetrics from_json(const nlohmann::json& j);
};

struct MetricSummary {
  std::vector<double> values;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (0 for a single run)
  double median = 0.0;

  static MetricSummary of(std::vector<double> values);
};

struct ArmSummary {
  std::string name;
  std::vector<std::uint64_t> seeds;
  MetricSummary mae, mse, ssim, psnr;

  static ArmSummary of(const std::string& name, const std::vector<RunMetrics>& runs);
  nlohmann::json to_json() const;
};

/// Ori vs candidate comparison. MAE/MSE deltas are reductions, SSIM/PSNR
/// deltas are increases; all rounded to one decimal.
struct EvalReport {
  ArmSummary baseline;
  ArmSummary candidate;
  double delta_mae = 0.0;
  double delta_mse = 0.0;
  double delta_ssim = 0.0;
  double delta_psnr = 0.0;
  bool ssim_global_fallback = false;

  nlohmann::json to_json() const;
  /// metric,Ori,+CaP,Delta with MAE/MSE multiplied by 100.
  std::string to_csv() const;
};

EvalReport build_report(const std::vector<RunMetrics>& baseline, const std::vector<RunMetrics>& candidate,
                        const std::string& candidate_name = "+CaP");

}  // namespace capaint::metrics
