// capaint: command-line front end for the augmentation pipeline.

#include <CLI11.hpp>
#include <iostream>

#include "capaint/error.hpp"
#include "capaint/pipeline/commands.hpp"
#include "capaint/testing/gradcheck.hpp"

namespace {

int run_gradcheck(std::uint64_t seed) {
  capaint::testing::GradCheckOptions options;
  options.seed = seed;
  bool ok = true;
  for (const auto& result : {capaint::testing::check_reconstructor_gradients(options),
                             capaint::testing::check_denoiser_gradients(options),
                             capaint::testing::check_forecaster_gradients(options)}) {
    std::cout << (result.passed ? "PASS " : "FAIL ") << result.name << ": " << result.samples.size()
              << " entries of " << result.num_parameters << " parameters, max relative error "
              << result.max_relative_error << "\n";
    ok = ok && result.passed;
  }
  return ok ? 0 : static_cast<int>(capaint::ExitCode::kNumeric);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CaPaint causal augmentation pipeline"};
  app.require_subcommand(1);

  capaint::pipeline::CommandOptions options;
  std::uint64_t seed = 0;
  for (const auto& name : capaint::pipeline::kCommands) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", options.config_path, "experiment config (JSON)")->required();
    sub->add_option("--seed", seed, "run seed for train-predict/scarcity/equal-volume, base seed otherwise");
    if (name == "train-predict")
      sub->add_option("--mode", options.mode, "baseline, capaint, flip, rotate or crop")->capture_default_str();
  }
  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient checks on tiny models");
  grad->add_option("--seed", seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(capaint::ExitCode::kConfig);
  }

  try {
    auto* chosen = app.get_subcommands().front();
    if (chosen->count("--seed") > 0) options.seed = seed;
    if (chosen->get_name() == "gradcheck") return run_gradcheck(seed);
    capaint::pipeline::run_command(chosen->get_name(), options, std::cout);
  } catch (const capaint::TrainingError& e) {
    std::cerr << "error: " << e.what() << " (last finite epoch " << e.last_finite_epoch() << ")\n";
    return static_cast<int>(e.exit_code());
  } catch (const capaint::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.exit_code());
  } catch (const c10::Error& e) {
    std::cerr << "error: " << e.what_without_backtrace() << "\n";
    return static_cast<int>(capaint::ExitCode::kNumeric);
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(capaint::ExitCode::kIntegrity);
  }
  return 0;
}
