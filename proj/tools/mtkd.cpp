#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "mtkd/data.hpp"
#include "mtkd/errors.hpp"
#include "mtkd/experiment.hpp"
#include "mtkd/report.hpp"

namespace {

using namespace mtkd;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigParseError:
    case ErrorCode::InvalidConfig:
    case ErrorCode::InvalidSpec:
    case ErrorCode::NonPositiveRatio:
    case ErrorCode::NonPositiveTemperature:
    case ErrorCode::StrategyTeacherMismatch:
      return 2;
    case ErrorCode::DataError:
    case ErrorCode::IoError:
    case ErrorCode::ChecksumMismatch:
    case ErrorCode::FormatVersionMismatch:
    case ErrorCode::NoRunsFound:
      return 3;
    case ErrorCode::NumericError:
      return 4;
    default:
      return 1;
  }
}

ExperimentManifest read_manifest(const std::string& path) {
  return load_manifest(path);
}

int cmd_validate(const std::string& path) {
  const auto v = validate_manifest(read_manifest(path));
  std::cout << manifest_to_json(v.manifest) << "\n";
  std::cout << "grid points:";
  for (const auto& g : v.grid) std::cout << " " << g.name;
  std::cout << "\nseeds: " << v.manifest.seeds.size() << "\ndataset: " << v.dataset.size() << " samples, "
            << v.dataset.spec.num_classes << " classes\nmanifest ok\n";
  return 0;
}

int cmd_run(const std::string& path, const ExperimentOptions& options) {
  ExperimentOptions opts = options;
  opts.on_run = [](const RunRecord& r) {
    if (r.error) {
      std::cerr << r.error_message << "\n";
      return;
    }
    const auto& last = r.metrics.epochs.back();
    std::printf("%-16s seed %-6llu acc %.4f  R@5 %.4f\n", r.grid_point.c_str(),
                static_cast<unsigned long long>(r.seed), last.eval.accuracy, last.eval.recall5);
    std::fflush(stdout);
  };
  const auto result = run_experiment(read_manifest(path), opts);
  std::printf("outputs in %s\n", result.output_dir.string().c_str());
  if (result.first_error) {
    std::cerr << "first failure: " << result.first_error_message << "\n";
    return exit_code_for(*result.first_error);
  }
  std::cout << build_report(result.output_dir).table;
  return 0;
}

int cmd_report(const std::string& dir) {
  std::cout << build_report(dir).table;
  std::cout << "long-format metrics written to " << (std::filesystem::path(dir) / "report_long.csv").string() << "\n";
  return 0;
}

int cmd_gen_data(const std::string& spec_path, const std::string& out, std::optional<std::uint64_t> seed) {
  std::ifstream in(spec_path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::DataError, "cannot read " + spec_path);
  std::ostringstream ss;
  ss << in.rdbuf();
  SyntheticSpec spec = spec_from_json(ss.str());
  if (seed) spec.seed = *seed;
  const auto ds = generate(spec);
  save_dataset(ds, out);
  std::printf("wrote %zu samples (%zu classes) to %s; probe accuracy image %.4f text %.4f\n", ds.size(),
              spec.num_classes, out.c_str(), ds.image_probe_accuracy, ds.text_probe_accuracy);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mtkd: multi-teacher contrastive distillation experiments"};
  app.require_subcommand(1);

  std::optional<std::uint64_t> seed_override;
  std::size_t threads = 1;
  std::string output_dir;
  app.add_option("--seed-override", seed_override, "run a single seed instead of the manifest's list");
  app.add_option("--threads", threads, "worker threads for independent runs")->check(CLI::PositiveNumber);
  app.add_option("--output-dir", output_dir, "override the manifest's output directory");

  std::string manifest_path, report_dir, spec_path, data_out;
  auto* run = app.add_subcommand("run", "execute every grid point and seed of a manifest");
  run->add_option("manifest", manifest_path)->required();
  auto* validate = app.add_subcommand("validate", "check a manifest and its dataset without training");
  validate->add_option("manifest", manifest_path)->required();
  auto* report = app.add_subcommand("report", "summarize the runs in an output directory");
  report->add_option("dir", report_dir)->required();
  auto* gen = app.add_subcommand("gen-data", "generate a dataset file from a spec JSON");
  gen->add_option("spec", spec_path)->required();
  gen->add_option("out", data_out)->required();

  // Global flags are accepted after the verb as well.
  for (auto* sub : {run, validate, report, gen}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*validate) return cmd_validate(manifest_path);
    if (*run) {
      ExperimentOptions opts;
      opts.seed_override = seed_override;
      opts.threads = threads;
      if (!output_dir.empty()) opts.output_dir = output_dir;
      return cmd_run(manifest_path, opts);
    }
    if (*report) return cmd_report(report_dir);
    if (*gen) return cmd_gen_data(spec_path, data_out, seed_override);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
