#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <torch/torch.h>

#include <sstream>

#include "capaint/augment/sampler.hpp"
#include "capaint/decipher/importance.hpp"
#include "capaint/diffusion/denoiser.hpp"
#include "capaint/diffusion/sampling.hpp"
#include "capaint/error.hpp"
#include "capaint/metrics/metrics.hpp"
#include "capaint/pipeline/commands.hpp"

namespace py = pybind11;
using namespace capaint;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::span<const double> view(const Array& a) { return {a.data(), static_cast<std::size_t>(a.size())}; }

torch::Tensor to_tensor(const Array& a) {
  std::vector<int64_t> shape(a.shape(), a.shape() + a.ndim());
  return torch::from_blob(const_cast<double*>(a.data()), shape, torch::kFloat64).clone();
}

Array to_array(const torch::Tensor& t) {
  auto c = t.to(torch::kFloat64).contiguous();
  std::vector<py::ssize_t> shape(c.sizes().begin(), c.sizes().end());
  Array out(shape);
  std::memcpy(out.mutable_data(), c.data_ptr<double>(), sizeof(double) * static_cast<std::size_t>(c.numel()));
  return out;
}

metrics::ImageShape image_shape(const Array& a) {
  if (a.ndim() == 2) return {a.shape(0), a.shape(1), 1};
  if (a.ndim() == 3) return {a.shape(0), a.shape(1), a.shape(2)};
  throw DimensionError("images must be [H, W] or [H, W, C]");
}

void same_shape(const Array& a, const Array& b) {
  if (a.ndim() != b.ndim() || !std::equal(a.shape(), a.shape() + a.ndim(), b.shape()))
    throw DimensionError("operands differ in shape");
}

}  // namespace

PYBIND11_MODULE(_capaint, m) {
  m.doc() = "Causal-patch inpainting augmentation for spatio-temporal forecasting";

  auto base = py::register_exception<Error>(m, "CapaintError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<UsageError>(m, "UsageError", base.ptr());
  py::register_exception<IndexError>(m, "IndexError", base.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<IntegrityError>(m, "IntegrityError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());

  // metrics
  m.def("mse", [](const Array& a, const Array& b) {
    same_shape(a, b);
    return metrics::mse(view(a), view(b));
  });
  m.def("mae", [](const Array& a, const Array& b) {
    same_shape(a, b);
    return metrics::mae(view(a), view(b));
  });
  m.def("psnr", [](const Array& a, const Array& b, double data_range) {
    same_shape(a, b);
    return metrics::psnr(view(a), view(b), data_range);
  }, py::arg("pred"), py::arg("truth"), py::arg("data_range"));
  m.def("ssim", [](const Array& a, const Array& b, double data_range) {
    same_shape(a, b);
    return metrics::ssim(view(a), view(b), image_shape(a), data_range).value;
  }, py::arg("x"), py::arg("y"), py::arg("data_range"), "11x11 Gaussian-window SSIM of [H, W] or [H, W, C] images.");
  m.def("reduction_percent", &metrics::reduction_percent);
  m.def("increase_percent", &metrics::increase_percent);
  m.def("round_half_up", &metrics::round_half_up, py::arg("value"), py::arg("decimals") = 1);

  // decipher
  m.def("importance_scores", [](const Array& maps) {
    if (maps.ndim() != 3) throw DimensionError("attention maps must be [heads, N, N]");
    return decipher::importance_scores({to_tensor(maps)});
  }, py::arg("maps"));
  m.def("causal_count", &decipher::causal_count);
  m.def("partition", [](const std::vector<double>& scores, double causal_fraction) {
    const auto p = decipher::partition(scores, causal_fraction);
    return py::dict(py::arg("causal") = p.causal, py::arg("environmental") = p.environmental);
  }, py::arg("scores"), py::arg("causal_fraction"));

  // diffusion
  py::class_<diffusion::NoiseSchedule>(m, "NoiseSchedule")
      .def_property_readonly("num_steps", &diffusion::NoiseSchedule::num_steps)
      .def_property_readonly("betas", &diffusion::NoiseSchedule::betas)
      .def_property_readonly("alpha_bars", &diffusion::NoiseSchedule::alpha_bars)
      .def("alpha", &diffusion::NoiseSchedule::alpha)
      .def("alpha_bar", &diffusion::NoiseSchedule::alpha_bar);
  m.def("linear_schedule", &diffusion::linear_schedule, py::arg("num_steps"), py::arg("beta_start") = 1e-4,
        py::arg("beta_end") = 0.02);
  m.def("q_sample", [](const Array& x0, int64_t t, const diffusion::NoiseSchedule& s, const Array& noise) {
    return to_array(diffusion::q_sample(to_tensor(x0), t, s, to_tensor(noise)));
  });
  m.def("inpaint", [](const std::string& checkpoint, const Array& frame, const Array& mask, std::uint64_t seed,
                      int64_t resample_count) {
    if (frame.ndim() != 3 || mask.ndim() != 2) throw DimensionError("inpaint expects frame [C, H, W] and mask [H, W]");
    auto model = diffusion::load_denoiser(checkpoint);
    auto x0 = to_tensor(frame).to(torch::kFloat32);
    auto masks = to_tensor(mask).to(torch::kFloat32).unsqueeze(0);
    torch::Tensor out;
    {
      py::gil_scoped_release release;
      out = diffusion::inpaint_batch(*model, model->schedule(), x0.unsqueeze(0), masks, {&seed, 1}, resample_count);
    }
    return to_array(out.squeeze(0));
  }, py::arg("checkpoint"), py::arg("frame"), py::arg("mask"), py::arg("seed") = 0, py::arg("resample_count") = 1,
     "Inpaints the mask == 0 pixels of one frame with a saved denoiser.");
  m.def("inpaint_call_count", &diffusion::inpaint_call_count);

  // augment
  m.def("frame_sources", [](int64_t length, double sample_prob, int64_t num_copies, std::uint64_t draw_seed) {
    std::vector<STSequence> group(static_cast<std::size_t>(num_copies + 1));
    for (auto& s : group) {
      s.frames = torch::zeros({length, 1, 1, 1});
      s.source_id = "probe";
    }
    return augment::sample_sequence(group, {sample_prob, num_copies, 0}, draw_seed).frame_source;
  }, py::arg("length"), py::arg("sample_prob"), py::arg("num_copies"), py::arg("draw_seed"),
     "Copy index drawn for each frame (0 = original).");

  // pipeline
  m.attr("COMMANDS") = pipeline::kCommands;
  m.attr("PREDICT_MODES") = pipeline::kPredictModes;
  m.def("run_command", [](const std::string& command, const std::string& config, std::optional<std::uint64_t> seed,
                          const std::string& mode) {
    pipeline::CommandOptions opt;
    opt.config_path = config;
    opt.seed = seed;
    opt.mode = mode;
    std::ostringstream log;
    {
      py::gil_scoped_release release;
      pipeline::run_command(command, opt, log);
    }
    return log.str();
  }, py::arg("command"), py::arg("config"), py::arg("seed") = py::none(), py::arg("mode") = "baseline",
     "Runs one CLI command in-process and returns its log.");
}
