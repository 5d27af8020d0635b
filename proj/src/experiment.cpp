#include "mtkd/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "mtkd/report.hpp"

namespace mtkd {

using nlohmann::json;

std::string to_string(Suite s) {
  switch (s) {
    case Suite::Single: return "single";
    case Suite::LossRatio: return "loss_ratio";
    case Suite::Strategy: return "strategy";
    case Suite::TeacherCount: return "teacher_count";
    case Suite::StudentSize: return "student_size";
  }
  return "unknown";
}

Suite parse_suite(const std::string& name) {
  for (auto s : {Suite::Single, Suite::LossRatio, Suite::Strategy, Suite::TeacherCount, Suite::StudentSize})
    if (to_string(s) == name) return s;
  fail(ErrorCode::ConfigParseError,
       "unknown suite '" + name + "' (expected single, loss_ratio, strategy, teacher_count or student_size)");
}

namespace {

constexpr std::uint64_t kTeacherSeedTag = 0x7eac0000;
const LossRatios kRatioGrid[] = {{0.5, 1, 1}, {1, 0.5, 1}, {1, 1, 0.5}, {1, 1, 1}};
constexpr std::size_t kMaxTeacherCount = 4;

std::string format_ratios(const LossRatios& r) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%g:%g:%g", r.clip, r.kl, r.mse);
  return buf;
}

// Strict object walk: every key must be claimed by the handler.
template <class Fn>
void each_field(const json& j, const std::string& where, Fn&& handle) {
  require(j.is_object(), ErrorCode::ConfigParseError, where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    bool known = false;
    try {
      known = handle(key, value, path);
    } catch (const json::exception& e) {
      fail(ErrorCode::ConfigParseError, path + ": " + e.what());
    }
    require(known, ErrorCode::ConfigParseError, "unknown field '" + path + "'");
  }
}

// Re-raises validation failures as parse errors that name the field.
template <class Fn>
void check_field(const std::string& path, Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ConfigParseError) throw;
    fail(ErrorCode::ConfigParseError, path + ": " + e.what());
  }
}

template <class E>
E parse_enum(const json& v, std::initializer_list<std::pair<const char*, E>> names, const std::string& path) {
  const auto s = v.get<std::string>();
  for (const auto& [n, e] : names)
    if (s == n) return e;
  std::string allowed;
  for (const auto& [n, e] : names) allowed += (allowed.empty() ? "" : ", ") + std::string(n);
  fail(ErrorCode::ConfigParseError, path + ": unknown value '" + s + "' (expected " + allowed + ")");
}

template <class E>
std::string enum_name(E e, std::initializer_list<std::pair<const char*, E>> names) {
  for (const auto& [n, v] : names)
    if (v == e) return n;
  return "unknown";
}

const std::initializer_list<std::pair<const char*, Activation>> kActivations{
    {"relu", Activation::Relu}, {"tanh", Activation::Tanh}, {"identity", Activation::Identity}};
const std::initializer_list<std::pair<const char*, LrSchedule::Kind>> kSchedules{
    {"fixed", LrSchedule::Kind::Fixed}, {"cosine", LrSchedule::Kind::Cosine}};
const std::initializer_list<std::pair<const char*, Augmentation::Kind>> kAugmentations{
    {"none", Augmentation::Kind::None}, {"jitter", Augmentation::Kind::Jitter}, {"mixup", Augmentation::Kind::Mixup}};
const std::initializer_list<std::pair<const char*, KlWeighting>> kKlWeightings{
    {"teacher", KlWeighting::Teacher}, {"direction", KlWeighting::Direction}};
const std::initializer_list<std::pair<const char*, MseTarget>> kMseTargets{
    {"weighted_average", MseTarget::WeightedAverage}, {"per_teacher", MseTarget::PerTeacher}};
const std::initializer_list<std::pair<const char*, BankRefresh>> kBankRefresh{
    {"per_epoch", BankRefresh::PerEpoch}, {"per_batch", BankRefresh::PerBatch}};
const std::initializer_list<std::pair<const char*, EvalBank>> kEvalBanks{
    {"student", EvalBank::Student}, {"teacher", EvalBank::Teacher}};
const std::initializer_list<std::pair<const char*, Corruption::Kind>> kCorruptions{
    {"none", Corruption::Kind::None},
    {"weight_noise", Corruption::Kind::WeightNoise},
    {"label_shuffle", Corruption::Kind::LabelShuffle}};

// Input dims are not part of the manifest; they come from the dataset.
json encoder_json(const EncoderConfig& c) {
  return json{{"hidden_widths", c.hidden_widths},
              {"output_dim", c.output_dim},
              {"activation", enum_name(c.activation, kActivations)},
              {"dropout", c.dropout_p}};
}

void encoder_from(const json& j, const std::string& where, EncoderConfig& c) {
  each_field(j, where, [&](const std::string& key, const json& v, const std::string& path) {
    if (key == "hidden_widths") c.hidden_widths = v.get<std::vector<std::size_t>>();
    else if (key == "output_dim") c.output_dim = v.get<std::size_t>();
    else if (key == "activation") c.activation = parse_enum(v, kActivations, path);
    else if (key == "dropout") c.dropout_p = v.get<double>();
    else return false;
    return true;
  });
}

json config_json(const TrainConfig& c) {
  return json{
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"lr", c.lr},
      {"lr_schedule", {{"kind", enum_name(c.lr_schedule.kind, kSchedules)}, {"eta_min", c.lr_schedule.eta_min}}},
      {"tau_teacher", c.tau_teacher},
      {"tau_student", c.tau_student},
      {"tau_distill", c.tau_distill},
      {"loss_ratios", format_ratios(c.ratios)},
      {"strategy", to_string(c.strategy)},
      {"num_teachers", c.num_teachers},
      {"augmentation",
       {{"kind", enum_name(c.augmentation.kind, kAugmentations)},
        {"sigma", c.augmentation.sigma},
        {"beta", c.augmentation.beta_param}}},
      {"student_image", encoder_json(c.student_image)},
      {"student_text", encoder_json(c.student_text)},
      {"kl_weighting", enum_name(c.kl_weighting, kKlWeightings)},
      {"direction_weights", {{"i2t", c.direction_weights.i2t}, {"t2i", c.direction_weights.t2i}}},
      {"mse_target", enum_name(c.mse_target, kMseTargets)},
      {"bank_refresh", enum_name(c.bank_refresh, kBankRefresh)},
      {"eval_bank", enum_name(c.eval_bank, kEvalBanks)},
      {"train_fraction", c.train_fraction},
      {"frank_wolfe",
       {{"max_iter", c.frank_wolfe.max_iter},
        {"tol", c.frank_wolfe.tol},
        {"away_steps", c.frank_wolfe.away_steps}}},
      {"parallel_teachers", c.parallel_teachers},
  };
}

void config_from(const json& j, TrainConfig& c) {
  each_field(j, "config", [&](const std::string& key, const json& v, const std::string& path) {
    if (key == "epochs") c.epochs = v.get<std::size_t>();
    else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
    else if (key == "lr") c.lr = v.get<double>();
    else if (key == "lr_schedule")
      each_field(v, path, [&](const std::string& k, const json& x, const std::string& p) {
        if (k == "kind") c.lr_schedule.kind = parse_enum(x, kSchedules, p);
        else if (k == "eta_min") c.lr_schedule.eta_min = x.get<double>();
        else return false;
        return true;
      });
    else if (key == "tau_teacher") c.tau_teacher = v.get<double>();
    else if (key == "tau_student") c.tau_student = v.get<double>();
    else if (key == "tau_distill") c.tau_distill = v.get<double>();
    else if (key == "loss_ratios") {
      check_field(path, [&] {
        c.ratios = parse_loss_ratios(v.get<std::string>());
        c.ratios.validate();
      });
    } else if (key == "strategy") {
      check_field(path, [&] { c.strategy = parse_strategy(v.get<std::string>()); });
    } else if (key == "num_teachers") c.num_teachers = v.get<std::size_t>();
    else if (key == "augmentation")
      each_field(v, path, [&](const std::string& k, const json& x, const std::string& p) {
        if (k == "kind") c.augmentation.kind = parse_enum(x, kAugmentations, p);
        else if (k == "sigma") c.augmentation.sigma = x.get<double>();
        else if (k == "beta") c.augmentation.beta_param = x.get<double>();
        else return false;
        return true;
      });
    else if (key == "student_image") encoder_from(v, path, c.student_image);
    else if (key == "student_text") encoder_from(v, path, c.student_text);
    else if (key == "kl_weighting") c.kl_weighting = parse_enum(v, kKlWeightings, path);
    else if (key == "direction_weights")
      each_field(v, path, [&](const std::string& k, const json& x, const std::string&) {
        if (k == "i2t") c.direction_weights.i2t = x.get<double>();
        else if (k == "t2i") c.direction_weights.t2i = x.get<double>();
        else return false;
        return true;
      });
    else if (key == "mse_target") c.mse_target = parse_enum(v, kMseTargets, path);
    else if (key == "bank_refresh") c.bank_refresh = parse_enum(v, kBankRefresh, path);
    else if (key == "eval_bank") c.eval_bank = parse_enum(v, kEvalBanks, path);
    else if (key == "train_fraction") c.train_fraction = v.get<double>();
    else if (key == "frank_wolfe")
      each_field(v, path, [&](const std::string& k, const json& x, const std::string&) {
        if (k == "max_iter") c.frank_wolfe.max_iter = x.get<std::size_t>();
        else if (k == "tol") c.frank_wolfe.tol = x.get<double>();
        else if (k == "away_steps") c.frank_wolfe.away_steps = x.get<bool>();
        else return false;
        return true;
      });
    else if (key == "parallel_teachers") c.parallel_teachers = v.get<bool>();
    else return false;
    return true;
  });
}

json lineup_json(const TeacherLineup& t) {
  json j{{"epochs", t.epochs},
         {"batch_size", t.batch_size},
         {"lr", t.lr},
         {"tau", t.tau},
         {"output_dim", t.output_dim},
         {"widths", t.widths},
         {"noise_exposure", t.noise_exposure},
         {"corruption", {{"kind", enum_name(t.corruption.kind, kCorruptions)}, {"sigma_w", t.corruption.sigma_w}}}};
  j["corrupt_index"] = t.corrupt_index ? json(*t.corrupt_index) : json(nullptr);
  return j;
}

void lineup_from(const json& j, TeacherLineup& t) {
  each_field(j, "teachers", [&](const std::string& key, const json& v, const std::string& path) {
    if (key == "epochs") t.epochs = v.get<std::size_t>();
    else if (key == "batch_size") t.batch_size = v.get<std::size_t>();
    else if (key == "lr") t.lr = v.get<double>();
    else if (key == "tau") t.tau = v.get<double>();
    else if (key == "output_dim") t.output_dim = v.get<std::size_t>();
    else if (key == "widths") t.widths = v.get<std::vector<std::size_t>>();
    else if (key == "noise_exposure") t.noise_exposure = v.get<std::vector<double>>();
    else if (key == "corrupt_index") t.corrupt_index = v.is_null() ? std::nullopt : std::optional(v.get<std::size_t>());
    else if (key == "corruption")
      each_field(v, path, [&](const std::string& k, const json& x, const std::string& p) {
        if (k == "kind") t.corruption.kind = parse_enum(x, kCorruptions, p);
        else if (k == "sigma_w") t.corruption.sigma_w = x.get<double>();
        else return false;
        return true;
      });
    else return false;
    return true;
  });
}

// Checks that need no dataset. Shared by parsing and validate_manifest.
void check_manifest(const ExperimentManifest& m) {
  require(m.schema_version == kManifestSchemaVersion, ErrorCode::ConfigParseError,
          "schema_version: expected " + std::to_string(kManifestSchemaVersion) + ", got " +
              std::to_string(m.schema_version));
  require(!m.seeds.empty(), ErrorCode::ConfigParseError, "seeds: at least one seed is required");
  check_field("config", [&] { m.config.validate(); });
  check_field("dataset", [&] { m.dataset_spec.validate(); });

  const auto& t = m.teachers;
  require(t.epochs >= 1 && t.batch_size >= 1, ErrorCode::ConfigParseError,
          "teachers: epochs and batch_size must be >= 1");
  require(t.lr > 0.0, ErrorCode::ConfigParseError, "teachers.lr: must be > 0");
  require(t.tau > 0.0, ErrorCode::ConfigParseError, "teachers.tau: must be > 0");
  require(t.output_dim >= 1, ErrorCode::ConfigParseError, "teachers.output_dim: must be >= 1");
  require(!t.widths.empty() && !t.noise_exposure.empty(), ErrorCode::ConfigParseError,
          "teachers: widths and noise_exposure must be non-empty");
  for (auto w : t.widths) require(w >= 1, ErrorCode::ConfigParseError, "teachers.widths: entries must be >= 1");
  for (double n : t.noise_exposure)
    require(n >= 0.0, ErrorCode::ConfigParseError, "teachers.noise_exposure: entries must be >= 0");
  require(t.corruption.sigma_w >= 0.0, ErrorCode::ConfigParseError, "teachers.corruption.sigma_w: must be >= 0");
  if (t.corrupt_index)
    require(*t.corrupt_index < kMaxTeacherCount, ErrorCode::ConfigParseError,
            "teachers.corrupt_index: must be < " + std::to_string(kMaxTeacherCount));

  if (m.suite == Suite::StudentSize) {
    require(!m.student_widths.empty(), ErrorCode::ConfigParseError, "student_widths: empty for student_size suite");
    for (auto w : m.student_widths) require(w >= 1, ErrorCode::ConfigParseError, "student_widths: entries must be >= 1");
  }
  if (m.suite == Suite::Strategy)
    require(m.config.num_teachers >= 1, ErrorCode::ConfigParseError,
            "config.num_teachers: the strategy suite needs at least one teacher");
  require(m.config.num_teachers <= kMaxTeacherCount, ErrorCode::ConfigParseError,
          "config.num_teachers: at most " + std::to_string(kMaxTeacherCount) + " teachers are logged");
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::DataError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::IoError, "cannot write " + path.string());
  out << text;
  require(static_cast<bool>(out), ErrorCode::IoError, "write failed for " + path.string());
}

// Runs fn(i) for i in [0, n) on up to `threads` workers. Results must be
// written by index; nothing here depends on scheduling order.
template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  for (auto& th : pool) th.join();
}

}  // namespace

ExperimentManifest manifest_from_json(const std::string& text) {
  const json j = json::parse(text, nullptr, false);
  require(!j.is_discarded(), ErrorCode::ConfigParseError, "manifest is not valid JSON");
  require(j.is_object() && j.contains("schema_version"), ErrorCode::ConfigParseError,
          "schema_version: required field is missing");
  ExperimentManifest m;
  each_field(j, "", [&](const std::string& key, const json& v, const std::string& path) {
    if (key == "schema_version") m.schema_version = v.get<int>();
    else if (key == "suite") check_field(path, [&] { m.suite = parse_suite(v.get<std::string>()); });
    else if (key == "config") config_from(v, m.config);
    else if (key == "dataset") check_field(path, [&] { m.dataset_spec = spec_from_json(v.dump()); });
    else if (key == "dataset_path") m.dataset_path = v.get<std::string>();
    else if (key == "seeds") m.seeds = v.get<std::vector<std::uint64_t>>();
    else if (key == "teachers") lineup_from(v, m.teachers);
    else if (key == "student_widths") m.student_widths = v.get<std::vector<std::size_t>>();
    else if (key == "output_dir") m.output_dir = v.get<std::string>();
    else if (key == "record_timing") m.record_timing = v.get<bool>();
    else return false;
    return true;
  });
  check_manifest(m);
  return m;
}

std::string manifest_to_json(const ExperimentManifest& m) {
  json j{{"schema_version", m.schema_version},
         {"suite", to_string(m.suite)},
         {"config", config_json(m.config)},
         {"dataset", json::parse(spec_to_json(m.dataset_spec))},
         {"seeds", m.seeds},
         {"teachers", lineup_json(m.teachers)},
         {"student_widths", m.student_widths},
         {"output_dir", m.output_dir.string()},
         {"record_timing", m.record_timing}};
  if (m.dataset_path) j["dataset_path"] = m.dataset_path->string();
  return j.dump(2);
}

ExperimentManifest load_manifest(const std::filesystem::path& path) {
  return manifest_from_json(read_file(path));
}

std::vector<GridPoint> expand_grid(const ExperimentManifest& m) {
  std::vector<GridPoint> grid;
  const TrainConfig& base = m.config;
  switch (m.suite) {
    case Suite::Single: grid.push_back({"single", base}); break;
    case Suite::LossRatio:
      for (const auto& r : kRatioGrid) {
        TrainConfig c = base;
        c.ratios = r;
        grid.push_back({format_ratios(r), c});
      }
      break;
    case Suite::Strategy:
      for (auto s : {Strategy::Base, Strategy::Avg, Strategy::Lsr, Strategy::Dsw}) {
        TrainConfig c = base;
        c.strategy = s;
        grid.push_back({to_string(s), c});
      }
      break;
    case Suite::TeacherCount:
      for (std::size_t k = 1; k <= kMaxTeacherCount; ++k) {
        TrainConfig c = base;
        c.num_teachers = k;
        grid.push_back({"K=" + std::to_string(k), c});
      }
      break;
    case Suite::StudentSize:
      for (auto w : m.student_widths) {
        TrainConfig c = base;
        c.student_image.hidden_widths = {w};
        c.student_text.hidden_widths = {w};
        grid.push_back({"hidden=" + std::to_string(w), c});
      }
      break;
  }
  return grid;
}

std::size_t teachers_needed(const std::vector<GridPoint>& grid) {
  std::size_t k = 0;
  for (const auto& g : grid) k = std::max(k, g.config.num_teachers);
  return k;
}

PairedDataset resolve_dataset(const ExperimentManifest& m) {
  if (!m.dataset_path) return generate(m.dataset_spec);
  try {
    return load_dataset(*m.dataset_path);
  } catch (const Error& e) {
    fail(ErrorCode::DataError, "dataset_path " + m.dataset_path->string() + ": " + e.what());
  }
}

ValidatedManifest validate_manifest(const ExperimentManifest& manifest) {
  check_manifest(manifest);
  ValidatedManifest v{manifest, {}, resolve_dataset(manifest)};
  const auto& spec = v.dataset.spec;
  auto fit = [&](TrainConfig& c) {
    c.student_image.input_dim = spec.raw_image_dim;
    c.student_text.input_dim = spec.raw_text_dim;
  };
  fit(v.manifest.config);
  v.grid = expand_grid(v.manifest);
  for (auto& g : v.grid) {
    fit(g.config);
    check_field("grid point " + g.name, [&] {
      g.config.validate();
      split_dataset(v.dataset, g.config.train_fraction);
    });
  }
  const std::size_t k = teachers_needed(v.grid);
  for (std::size_t i = 0; i < k; ++i)
    check_field("teachers", [&] { lineup_teacher_config(v.manifest.teachers, v.dataset, 0, i).validate(); });
  if (v.manifest.teachers.corrupt_index)
    require(*v.manifest.teachers.corrupt_index < std::max<std::size_t>(k, 1), ErrorCode::ConfigParseError,
            "teachers.corrupt_index: no such teacher in this grid");
  return v;
}

TeacherConfig lineup_teacher_config(const TeacherLineup& lineup, const PairedDataset& ds, std::uint64_t seed,
                                    std::size_t index) {
  TeacherConfig tc;
  const std::size_t width = lineup.widths[index % lineup.widths.size()];
  tc.image = {ds.spec.raw_image_dim, {width}, lineup.output_dim, Activation::Relu, 0.0};
  tc.text = {ds.spec.raw_text_dim, {width}, lineup.output_dim, Activation::Relu, 0.0};
  tc.epochs = lineup.epochs;
  tc.batch_size = lineup.batch_size;
  tc.lr = lineup.lr;
  tc.tau = lineup.tau;
  tc.noise_exposure = lineup.noise_exposure[index % lineup.noise_exposure.size()];
  tc.seed = SeededRng(seed).derive(kTeacherSeedTag + index).next_u64();
  if (lineup.corrupt_index && *lineup.corrupt_index == index) tc.corruption = lineup.corruption;
  return tc;
}

std::vector<Teacher> build_teachers(const TeacherLineup& lineup, const PairedDataset& ds, std::uint64_t seed,
                                    std::size_t count) {
  const DatasetSplit split = split_dataset(ds);
  std::vector<Teacher> teachers;
  for (std::size_t k = 0; k < count; ++k)
    teachers.push_back(pretrain_teacher(lineup_teacher_config(lineup, ds, seed, k), ds, split));
  return teachers;
}

std::string file_stem(const std::string& grid_point, std::uint64_t seed) {
  std::string stem;
  for (char c : grid_point) {
    const bool keep = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_';
    stem.push_back(keep ? c : '_');
  }
  return stem + "__seed" + std::to_string(seed);
}

ExperimentResult run_experiment(const ExperimentManifest& manifest_in, const ExperimentOptions& options) {
  const auto started = std::chrono::steady_clock::now();
  ExperimentManifest manifest = manifest_in;
  if (options.seed_override) manifest.seeds = {*options.seed_override};
  if (options.output_dir) manifest.output_dir = *options.output_dir;
  const ValidatedManifest v = validate_manifest(manifest);
  const auto& grid = v.grid;
  const auto& seeds = v.manifest.seeds;
  const std::string suite = to_string(v.manifest.suite);

  ExperimentResult result;
  result.output_dir = v.manifest.output_dir;
  std::filesystem::create_directories(result.output_dir / "runs");
  std::filesystem::create_directories(result.output_dir / "weights");

  // Teachers are shared by every grid point of a seed.
  const std::size_t k_max = teachers_needed(grid);
  std::vector<std::vector<Teacher>> teachers(seeds.size());
  std::vector<std::optional<Error>> teacher_errors(seeds.size());
  parallel_for(seeds.size(), options.threads, [&](std::size_t s) {
    try {
      teachers[s] = build_teachers(v.manifest.teachers, v.dataset, seeds[s], k_max);
    } catch (const Error& e) {
      teacher_errors[s] = e;
    }
  });
  for (const auto& ts : teachers) {
    std::vector<double> acc;
    for (const auto& t : ts) acc.push_back(t.eval_accuracy);
    result.teacher_accuracy.push_back(acc);
  }

  result.runs.resize(grid.size() * seeds.size());
  std::mutex callback_mutex;
  parallel_for(result.runs.size(), options.threads, [&](std::size_t job) {
    const auto& point = grid[job / seeds.size()];
    const std::size_t s = job % seeds.size();
    RunRecord& rec = result.runs[job];
    rec.grid_point = point.name;
    rec.seed = seeds[s];
    const std::string id = "run " + point.name + " seed " + std::to_string(seeds[s]);
    try {
      if (teacher_errors[s]) throw *teacher_errors[s];
      TrainConfig c = point.config;
      c.seed = seeds[s];
      const std::size_t k = c.strategy == Strategy::Base ? 0 : c.num_teachers;
      if (c.strategy == Strategy::Base) c.num_teachers = 0;
      const std::span<const Teacher> use(teachers[s].data(), k);
      rec.metrics = distill_student(c, use, v.dataset).metrics;
      const auto stem = file_stem(point.name, seeds[s]);
      write_file(result.output_dir / "runs" / (stem + ".csv"),
                 format_metrics_csv(metrics_rows(suite, point.name, seeds[s], rec.metrics, v.manifest.record_timing)));
      write_file(result.output_dir / "weights" / (stem + ".csv"), format_weights_csv(rec.metrics));
    } catch (const Error& e) {
      rec.error = e.code();
      rec.error_message = id + ": " + e.what();
    }
    if (options.on_run) {
      std::lock_guard lock(callback_mutex);
      options.on_run(rec);
    }
  });

  std::vector<MetricsRow> rows;
  json runs_json = json::array();
  for (const auto& rec : result.runs) {
    if (rec.error && !result.first_error) {
      result.first_error = rec.error;
      result.first_error_message = rec.error_message;
    }
    auto part = metrics_rows(suite, rec.grid_point, rec.seed, rec.metrics, v.manifest.record_timing);
    rows.insert(rows.end(), part.begin(), part.end());
    json r{{"grid_point", rec.grid_point}, {"seed", rec.seed}, {"file", "runs/" + file_stem(rec.grid_point, rec.seed) + ".csv"}};
    if (rec.error) r["error"] = rec.error_message;
    runs_json.push_back(r);
  }
  const auto summary = summarize(rows);
  write_file(result.output_dir / "summary.csv", format_summary_csv(summary));

  json teachers_json = json::array();
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    json per_seed = json::array();
    for (std::size_t k = 0; k < teachers[s].size(); ++k) {
      const auto& t = teachers[s][k];
      per_seed.push_back({{"index", k},
                          {"eval_accuracy", t.eval_accuracy},
                          {"below_gate", t.below_gate},
                          {"corrupted", t.corrupted}});
    }
    teachers_json.push_back({{"seed", seeds[s]}, {"teachers", per_seed}});
  }
  json out{{"schema_version", kManifestSchemaVersion},
           {"library_version", kLibraryVersion},
           {"manifest", json::parse(manifest_to_json(v.manifest))},
           {"grid_points", [&] {
              json g = json::array();
              for (const auto& p : grid) g.push_back(p.name);
              return g;
            }()},
           {"teachers", teachers_json},
           {"runs", runs_json},
           {"wall_clock_seconds",
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count()}};
  if (result.first_error) out["first_error"] = result.first_error_message;
  write_file(result.output_dir / "run_manifest.json", out.dump(2) + "\n");
  return result;
}

}  // namespace mtkd
