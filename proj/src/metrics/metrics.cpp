#include "capaint/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "capaint/error.hpp"

namespace capaint::metrics {

namespace {

void require_same_size(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("metric operands differ in element count");
  if (a.empty()) throw DimensionError("metric operands are empty");
}

std::vector<double> gaussian_window() {
  std::vector<double> g(kSsimWindow);
  const double centre = static_cast<double>(kSsimWindow - 1) / 2.0;
  double sum = 0.0;
  for (int64_t i = 0; i < kSsimWindow; ++i) {
    const double d = static_cast<double>(i) - centre;
    g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    sum += g[static_cast<std::size_t>(i)];
  }
  for (auto& v : g) v /= sum;
  return g;
}

double ssim_formula(double mx, double my, double vx, double vy, double cxy, double c1, double c2) {
  return ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
}

}  // namespace

double mse(std::span<const double> pred, std::span<const double> truth) {
  require_same_size(pred, truth);
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return acc / static_cast<double>(pred.size());
}

double mae(std::span<const double> pred, std::span<const double> truth) {
  require_same_size(pred, truth);
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred[i] - truth[i]);
  return acc / static_cast<double>(pred.size());
}

double psnr_from_mse(double mse_value, double data_range) {
  if (!(data_range > 0.0)) throw ConfigError("data_range must be positive");
  if (mse_value == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(data_range * data_range / mse_value);
}

double psnr(std::span<const double> pred, std::span<const double> truth, double data_range) {
  return psnr_from_mse(mse(pred, truth), data_range);
}

SsimResult ssim(std::span<const double> x, std::span<const double> y, const ImageShape& shape, double data_range) {
  require_same_size(x, y);
  if (static_cast<int64_t>(x.size()) != shape.size()) throw DimensionError("ssim: buffer does not match [H, W, C]");
  if (!(data_range > 0.0)) throw ConfigError("data_range must be positive");
  const double c1 = (0.01 * data_range) * (0.01 * data_range);
  const double c2 = (0.03 * data_range) * (0.03 * data_range);
  const int64_t h = shape.height, w = shape.width, ch = shape.channels;
  auto at = [&](std::span<const double> img, int64_t r, int64_t c, int64_t k) {
    return img[static_cast<std::size_t>((r * w + c) * ch + k)];
  };

  if (h < kSsimWindow || w < kSsimWindow) {
    double total = 0.0;
    const double n = static_cast<double>(h * w);
    for (int64_t k = 0; k < ch; ++k) {
      double mx = 0, my = 0;
      for (int64_t r = 0; r < h; ++r)
        for (int64_t c = 0; c < w; ++c) {
          mx += at(x, r, c, k);
          my += at(y, r, c, k);
        }
      mx /= n;
      my /= n;
      double vx = 0, vy = 0, cxy = 0;
      for (int64_t r = 0; r < h; ++r)
        for (int64_t c = 0; c < w; ++c) {
          const double dx = at(x, r, c, k) - mx, dy = at(y, r, c, k) - my;
          vx += dx * dx;
          vy += dy * dy;
          cxy += dx * dy;
        }
      total += ssim_formula(mx, my, vx / n, vy / n, cxy / n, c1, c2);
    }
    return {total / static_cast<double>(ch), true};
  }

  static const std::vector<double> g = gaussian_window();
  double total = 0.0;
  int64_t count = 0;
  for (int64_t k = 0; k < ch; ++k)
    for (int64_t r0 = 0; r0 + kSsimWindow <= h; ++r0)
      for (int64_t c0 = 0; c0 + kSsimWindow <= w; ++c0) {
        double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
        for (int64_t i = 0; i < kSsimWindow; ++i)
          for (int64_t j = 0; j < kSsimWindow; ++j) {
            const double wt = g[static_cast<std::size_t>(i)] * g[static_cast<std::size_t>(j)];
            const double a = at(x, r0 + i, c0 + j, k), b = at(y, r0 + i, c0 + j, k);
            mx += wt * a;
            my += wt * b;
            xx += wt * a * a;
            yy += wt * b * b;
            xy += wt * a * b;
          }
        total += ssim_formula(mx, my, xx - mx * mx, yy - my * my, xy - mx * my, c1, c2);
        ++count;
      }
  return {total / static_cast<double>(count), false};
}

SsimResult ssim_frames(std::span<const double> x, std::span<const double> y, int64_t frames, const ImageShape& shape,
                       double data_range) {
  require_same_size(x, y);
  if (frames < 1 || static_cast<int64_t>(x.size()) != frames * shape.size())
    throw DimensionError("ssim_frames: buffer does not match [T, H, W, C]");
  SsimResult acc;
  const auto stride = static_cast<std::size_t>(shape.size());
  for (int64_t t = 0; t < frames; ++t) {
    auto r = ssim(x.subspan(static_cast<std::size_t>(t) * stride, stride),
                  y.subspan(static_cast<std::size_t>(t) * stride, stride), shape, data_range);
    acc.value += r.value;
    acc.global_fallback = acc.global_fallback || r.global_fallback;
  }
  acc.value /= static_cast<double>(frames);
  return acc;
}

double reduction_percent(double ori, double cap) { return 100.0 * (ori - cap) / ori; }

double increase_percent(double ori, double cap) { return 100.0 * (cap - ori) / std::abs(ori); }

double round_half_up(double value, int decimals) {
  if (!std::isfinite(value)) return value;
  const double scale = std::pow(10.0, decimals);
  return std::floor(value * scale + 0.5 + 1e-9) / scale;
}

nlohmann::json RunMetrics::to_json() const {
  nlohmann::json j{{"run_id", run_id},
                   {"seed", seed},
                   {"mae", mae},
                   {"mse", mse},
                   {"mae_x100", mae * 100.0},
                   {"mse_x100", mse * 100.0},
                   {"ssim", ssim},
                   {"ssim_global_fallback", ssim_global_fallback},
                   {"psnr_infinite", std::isinf(psnr)}};
  j["psnr"] = std::isinf(psnr) ? nlohmann::json(nullptr) : nlohmann::json(psnr);
  return j;
}

RunMetrics RunMetrics::from_json(const nlohmann::json& j) {
  RunMetrics m;
  m.run_id = j.value("run_id", "");
  m.seed = j.value("seed", std::uint64_t{0});
  m.mae = j.at("mae").get<double>();
  m.mse = j.at("mse").get<double>();
  m.ssim = j.at("ssim").get<double>();
  m.ssim_global_fallback = j.value("ssim_global_fallback", false);
  m.psnr = j.at("psnr").is_null() ? std::numeric_limits<double>::infinity() : j.at("psnr").get<double>();
  return m;
}

MetricSummary MetricSummary::of(std::vector<double> values) {
  MetricSummary s;
  s.values = values;
  if (values.empty()) return s;
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() > 1 && std::isfinite(s.mean)) {
    double acc = 0.0;
    for (double v : values) acc += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(acc / (n - 1.0));
  }
  std::sort(values.begin(), values.end());
  const auto mid = values.size() / 2;
  s.median = values.size() % 2 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
  return s;
}

ArmSummary ArmSummary::of(const std::string& name, const std::vector<RunMetrics>& runs) {
  ArmSummary a;
  a.name = name;
  std::vector<double> mae_v, mse_v, ssim_v, psnr_v;
  for (const auto& r : runs) {
    a.seeds.push_back(r.seed);
    mae_v.push_back(r.mae);
    mse_v.push_back(r.mse);
    ssim_v.push_back(r.ssim);
    psnr_v.push_back(r.psnr);
  }
  a.mae = MetricSummary::of(mae_v);
  a.mse = MetricSummary::of(mse_v);
  a.ssim = MetricSummary::of(ssim_v);
  a.psnr = MetricSummary::of(psnr_v);
  return a;
}

namespace {
nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

nlohmann::json summary_json(const MetricSummary& s, double scale) {
  nlohmann::json values = nlohmann::json::array();
  for (double v : s.values) values.push_back(finite_or_null(v * scale));
  return {{"mean", finite_or_null(s.mean * scale)},
          {"std", finite_or_null(s.std * scale)},
          {"median", finite_or_null(s.median * scale)},
          {"values", values}};
}
}  // namespace

nlohmann::json ArmSummary::to_json() const {
  return {{"name", name},
          {"num_runs", mae.values.size()},
          {"seeds", seeds},
          {"mae", summary_json(mae, 1.0)},
          {"mse", summary_json(mse, 1.0)},
          {"mae_x100", summary_json(mae, 100.0)},
          {"mse_x100", summary_json(mse, 100.0)},
          {"ssim", summary_json(ssim, 1.0)},
          {"psnr", summary_json(psnr, 1.0)}};
}

EvalReport build_report(const std::vector<RunMetrics>& baseline, const std::vector<RunMetrics>& candidate,
                        const std::string& candidate_name) {
  if (baseline.empty() || candidate.empty()) throw UsageError("report needs at least one run per arm");
  EvalReport r;
  r.baseline = ArmSummary::of("Ori", baseline);
  r.candidate = ArmSummary::of(candidate_name, candidate);
  r.delta_mae = round_half_up(reduction_percent(r.baseline.mae.mean, r.candidate.mae.mean));
  r.delta_mse = round_half_up(reduction_percent(r.baseline.mse.mean, r.candidate.mse.mean));
  r.delta_ssim = round_half_up(increase_percent(r.baseline.ssim.mean, r.candidate.ssim.mean));
  r.delta_psnr = round_half_up(increase_percent(r.baseline.psnr.mean, r.candidate.psnr.mean));
  for (const auto& m : baseline) r.ssim_global_fallback = r.ssim_global_fallback || m.ssim_global_fallback;
  for (const auto& m : candidate) r.ssim_global_fallback = r.ssim_global_fallback || m.ssim_global_fallback;
  return r;
}

nlohmann::json EvalReport::to_json() const {
  return {{"baseline", baseline.to_json()},
          {"candidate", candidate.to_json()},
          {"delta_percent",
           {{"mae", delta_mae}, {"mse", delta_mse}, {"ssim", finite_or_null(delta_ssim)}, {"psnr", finite_or_null(delta_psnr)}}},
          {"ssim_mode", "per-frame mean over the forecast horizon"},
          {"ssim_global_fallback", ssim_global_fallback},
          {"scale_note", "mae_x100 and mse_x100 are multiplied by 100"}};
}

std::string EvalReport::to_csv() const {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  out << "metric,Ori,+CaP,Delta\n";
  out << "MAE_x100," << baseline.mae.mean * 100.0 << ',' << candidate.mae.mean * 100.0 << ',' << std::setprecision(1)
      << delta_mae << std::setprecision(4) << '\n';
  out << "MSE_x100," << baseline.mse.mean * 100.0 << ',' << candidate.mse.mean * 100.0 << ',' << std::setprecision(1)
      << delta_mse << std::setprecision(4) << '\n';
  out << "SSIM," << baseline.ssim.mean << ',' << candidate.ssim.mean << ',' << std::setprecision(1) << delta_ssim
      << std::setprecision(4) << '\n';
  out << "PSNR," << baseline.psnr.mean << ',' << candidate.psnr.mean << ',' << std::setprecision(1) << delta_psnr
      << '\n';
  return out.str();
}

}  // namespace capaint::metrics
