#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mtkd/data.hpp"
#include "mtkd/trainer.hpp"

namespace mtkd {

inline constexpr int kManifestSchemaVersion = 1;
inline constexpr const char* kLibraryVersion = "0.1.0";

enum class Suite { Single, LossRatio, Strategy, TeacherCount, StudentSize };
std::string to_string(Suite s);
Suite parse_suite(const std::string& name);  // ConfigParseError

// Teacher k of a seed's lineup uses widths[k % size], noise_exposure[k % size]
// and its own derived seed; all teachers share output_dim so their features
// can be averaged.
struct TeacherLineup {
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  double tau = 4.0;
  std::size_t output_dim = 32;
  std::vector<std::size_t> widths{128, 96, 160, 112};
  std::vector<double> noise_exposure{0.0, 0.05, 0.1, 0.15};
  std::optional<std::size_t> corrupt_index;
  Corruption corruption;
};

struct ExperimentManifest {
  int schema_version = kManifestSchemaVersion;
  Suite suite = Suite::Single;
  TrainConfig config;
  SyntheticSpec dataset_spec;
  std::optional<std::filesystem::path> dataset_path;  // overrides dataset_spec
  std::vector<std::uint64_t> seeds{0};
  TeacherLineup teachers;
  std::vector<std::size_t> student_widths{16, 32, 64, 128};  // student_size suite
  std::filesystem::path output_dir = "mtkd_out";
  bool record_timing = false;  // wall_ms stays 0 otherwise, keeping CSVs reproducible
};

// Parsing is strict: unknown fields, wrong types, and values that fail
// validation all raise ConfigParseError naming the field.
ExperimentManifest manifest_from_json(const std::string& text);
std::string manifest_to_json(const ExperimentManifest& manifest);
ExperimentManifest load_manifest(const std::filesystem::path& path);  // DataError if unreadable

struct GridPoint {
  std::string name;
  TrainConfig config;
};

std::vector<GridPoint> expand_grid(const ExperimentManifest& manifest);
std::size_t teachers_needed(const std::vector<GridPoint>& grid);

// Loads or generates the dataset; load failures surface as DataError.
PairedDataset resolve_dataset(const ExperimentManifest& manifest);

// Everything run checks before training: manifest invariants, grid configs
// against the dataset, and the dataset itself.
struct ValidatedManifest {
  ExperimentManifest manifest;
  std::vector<GridPoint> grid;
  PairedDataset dataset;
};
ValidatedManifest validate_manifest(const ExperimentManifest& manifest);

TeacherConfig lineup_teacher_config(const TeacherLineup& lineup, const PairedDataset& ds, std::uint64_t seed,
                                    std::size_t index);
std::vector<Teacher> build_teachers(const TeacherLineup& lineup, const PairedDataset& ds, std::uint64_t seed,
                                    std::size_t count);

struct RunRecord {
  std::string grid_point;
  std::uint64_t seed = 0;
  RunMetrics metrics;
  std::optional<ErrorCode> error;
  std::string error_message;
};

struct ExperimentOptions {
  std::optional<std::uint64_t> seed_override;
  std::size_t threads = 1;
  std::optional<std::filesystem::path> output_dir;
  // Called after each run finishes, from the worker that ran it.
  std::function<void(const RunRecord&)> on_run;
};

struct ExperimentResult {
  std::filesystem::path output_dir;
  std::vector<RunRecord> runs;  // grid-major, then seed order
  std::vector<std::vector<double>> teacher_accuracy;  // per seed, per teacher
  std::optional<ErrorCode> first_error;
  std::string first_error_message;
};

// Runs every (grid point, seed) pair and writes
//   runs/<grid>__seed<s>.csv, weights/<grid>__seed<s>.csv, summary.csv,
//   run_manifest.json
// under the output directory. A failing run is recorded and the rest still
// execute.
ExperimentResult run_experiment(const ExperimentManifest& manifest, const ExperimentOptions& options = {});

// Filesystem-safe form of a grid point name.
std::string file_stem(const std::string& grid_point, std::uint64_t seed);

}  // namespace mtkd
