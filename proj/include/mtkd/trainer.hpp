#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mtkd/data.hpp"
#include "mtkd/distill.hpp"
#include "mtkd/encoder.hpp"
#include "mtkd/weighting.hpp"

namespace mtkd {

enum class Strategy { Base, Avg, Lsr, Dsw };
std::string to_string(Strategy s);
Strategy parse_strategy(const std::string& name);  // ConfigParseError

struct LrSchedule {
  enum class Kind { Fixed, Cosine };
  Kind kind = Kind::Fixed;
  double eta_min = -1.0;  // negative: lr / 100
};

// fixed: lr. cosine: eta_min + (lr - eta_min) (1 + cos(pi t / T)) / 2.
double lr_at(const LrSchedule& schedule, double lr, std::size_t t, std::size_t total);

struct Augmentation {
  enum class Kind { None, Jitter, Mixup };
  Kind kind = Kind::None;
  double sigma = 0.0;      // jitter
  double beta_param = 0.2;  // mixup Beta(b, b)
};

struct RawBatch {
  DenseMatrix image;
  DenseMatrix text;
  DenseMatrix targets;  // B x N soft labels; one-hot before mixup
};

// Mixup pairs row i with a uniformly drawn partner j and uses
// x_i <- c x_i + (1 - c) x_j with c ~ Beta(b, b) drawn per row.
RawBatch augment(RawBatch batch, const Augmentation& aug, SeededRng& rng);

// How the KL term splits across teachers and directions.
enum class KlWeighting { Teacher, Direction };
enum class MseTarget { WeightedAverage, PerTeacher };
enum class BankRefresh { PerEpoch, PerBatch };
enum class EvalBank { Student, Teacher };

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  double lr = 1e-4;
  LrSchedule lr_schedule;
  double tau_teacher = 4.0;  // softens teacher distributions
  double tau_student = 4.0;  // student contrastive loss
  double tau_distill = 4.0;  // student distributions inside the KL term
  LossRatios ratios;
  Strategy strategy = Strategy::Avg;
  std::size_t num_teachers = 2;
  Augmentation augmentation;
  std::uint64_t seed = 0;

  EncoderConfig student_image{32, {64}, 32, Activation::Relu, 0.0};
  EncoderConfig student_text{24, {64}, 32, Activation::Relu, 0.0};

  KlWeighting kl_weighting = KlWeighting::Teacher;
  DirectionWeights direction_weights;  // used when kl_weighting == Direction
  MseTarget mse_target = MseTarget::WeightedAverage;
  BankRefresh bank_refresh = BankRefresh::PerEpoch;
  EvalBank eval_bank = EvalBank::Student;
  double train_fraction = 0.8;
  FrankWolfeOptions frank_wolfe;
  bool parallel_teachers = false;

  void validate() const;  // InvalidConfig, NonPositiveTemperature, NonPositiveRatio
};

struct TeacherConfig {
  EncoderConfig image{32, {128}, 32, Activation::Relu, 0.0};
  EncoderConfig text{24, {128}, 32, Activation::Relu, 0.0};
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  double tau = 4.0;
  double noise_exposure = 0.0;  // jitter sigma during pretraining
  std::uint64_t seed = 0;
  Corruption corruption;

  void validate() const;
};

struct DualEncoder {
  EncoderParams image;
  EncoderParams text;
};

inline constexpr double kTeacherAccuracyGate = 0.95;

struct Teacher {
  DualEncoder params;
  DenseMatrix bank;  // N x d, cached class text vectors
  double eval_accuracy = 0.0;
  bool below_gate = false;
  bool corrupted = false;
};

struct EvalMetrics {
  double accuracy = 0.0;
  double recall1 = 0.0;
  double recall5 = 0.0;
};

// Ranks the bank for every sample; recall@k counts the true label among the
// top k with ties broken toward the lower class index.
EvalMetrics evaluate(const EncoderParams& image_encoder, const PairedDataset& ds, std::span<const std::size_t> rows,
                     const DenseMatrix& bank);

Teacher pretrain_teacher(const TeacherConfig& config, const PairedDataset& ds, const DatasetSplit& split);

struct EpochMetrics {
  std::size_t epoch = 0;
  double l_clip = 0.0;
  double l_kl = 0.0;
  double l_mse = 0.0;
  double total = 0.0;
  EvalMetrics eval;
  std::vector<double> alpha;      // mean applied teacher weights over the epoch
  std::vector<double> lsr_alpha;  // similarity-ratio weights, logged for every strategy with teachers
  std::vector<double> dsw_alpha;  // min-norm weights, logged when computed
  double fw_iters = 0.0;          // mean Frank-Wolfe iterations per batch
  double lr = 0.0;                // rate used by the last step of the epoch
  double wall_ms = 0.0;
};

struct RunMetrics {
  std::vector<EpochMetrics> epochs;
};

struct StepRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  const LossBreakdown* breakdown = nullptr;
  const TeacherGradientSet* gradients = nullptr;   // dsw only
  const FrankWolfeResult* frank_wolfe = nullptr;  // dsw only
};

using StepObserver = std::function<void(const StepRecord&)>;

struct DistillResult {
  DualEncoder student;
  RunMetrics metrics;
  std::size_t degenerate_lsr_batches = 0;
};

DistillResult distill_student(const TrainConfig& config, std::span<const Teacher> teachers, const PairedDataset& ds,
                              const StepObserver& observer = {});

}  // namespace mtkd
