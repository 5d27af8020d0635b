#include "mtkd/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <future>
#include <numbers>
#include <numeric>

namespace mtkd {

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::Base: return "base";
    case Strategy::Avg: return "avg";
    case Strategy::Lsr: return "lsr";
    case Strategy::Dsw: return "dsw";
  }
  return "unknown";
}

Strategy parse_strategy(const std::string& name) {
  if (name == "base") return Strategy::Base;
  if (name == "avg") return Strategy::Avg;
  if (name == "lsr") return Strategy::Lsr;
  if (name == "dsw") return Strategy::Dsw;
  fail(ErrorCode::ConfigParseError, "unknown strategy '" + name + "' (expected base, avg, lsr or dsw)");
}

double lr_at(const LrSchedule& schedule, double lr, std::size_t t, std::size_t total) {
  if (schedule.kind == LrSchedule::Kind::Fixed || total == 0) return lr;
  const double eta_min = schedule.eta_min < 0.0 ? lr / 100.0 : schedule.eta_min;
  const double frac = static_cast<double>(std::min(t, total)) / static_cast<double>(total);
  return eta_min + 0.5 * (lr - eta_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

RawBatch augment(RawBatch batch, const Augmentation& aug, SeededRng& rng) {
  switch (aug.kind) {
    case Augmentation::Kind::None: break;
    case Augmentation::Kind::Jitter:
      if (aug.sigma == 0.0) break;
      for (double& x : batch.image.data()) x += aug.sigma * rng.normal();
      for (double& x : batch.text.data()) x += aug.sigma * rng.normal();
      break;
    case Augmentation::Kind::Mixup: {
      const RawBatch src = batch;
      const std::size_t b = batch.image.rows();
      for (std::size_t i = 0; i < b; ++i) {
        const std::size_t j = rng.uniform_index(b);
        const double c = rng.beta(aug.beta_param, aug.beta_param);
        auto mix = [&](DenseMatrix& dst, const DenseMatrix& from) {
          auto out = dst.row(i);
          auto xi = from.row(i);
          auto xj = from.row(j);
          for (std::size_t k = 0; k < out.size(); ++k) out[k] = c * xi[k] + (1.0 - c) * xj[k];
        };
        if (c == 1.0) continue;
        mix(batch.image, src.image);
        mix(batch.text, src.text);
        mix(batch.targets, src.targets);
      }
      break;
    }
  }
  return batch;
}

void TrainConfig::validate() const {
  require(epochs >= 1, ErrorCode::InvalidConfig, "epochs must be >= 1");
  require(batch_size >= 1, ErrorCode::InvalidConfig, "batch_size must be >= 1");
  require(std::isfinite(lr) && lr > 0.0, ErrorCode::InvalidConfig, "lr must be > 0");
  for (double t : {tau_teacher, tau_student, tau_distill})
    require(std::isfinite(t) && t > 0.0, ErrorCode::NonPositiveTemperature, "temperatures must be > 0");
  ratios.validate();
  student_image.validate();
  student_text.validate();
  require(student_image.output_dim == student_text.output_dim, ErrorCode::InvalidConfig,
          "student image and text encoders must share an output dim");
  require(direction_weights.i2t >= 0.0 && direction_weights.t2i >= 0.0, ErrorCode::InvalidConfig,
          "direction weights must be >= 0");
  if (augmentation.kind == Augmentation::Kind::Jitter)
    require(augmentation.sigma >= 0.0, ErrorCode::InvalidConfig, "jitter sigma must be >= 0");
  if (augmentation.kind == Augmentation::Kind::Mixup)
    require(augmentation.beta_param > 0.0, ErrorCode::InvalidConfig, "mixup beta must be > 0");
  require(frank_wolfe.max_iter >= 1, ErrorCode::InvalidConfig, "Frank-Wolfe max_iter must be >= 1");
  if (strategy != Strategy::Base)
    require(num_teachers >= 1, ErrorCode::StrategyTeacherMismatch,
            "strategy " + to_string(strategy) + " needs at least one teacher");
}

void TeacherConfig::validate() const {
  image.validate();
  text.validate();
  require(image.output_dim == text.output_dim, ErrorCode::InvalidConfig,
          "teacher image and text encoders must share an output dim");
  require(epochs >= 1 && batch_size >= 1, ErrorCode::InvalidConfig, "teacher epochs and batch_size must be >= 1");
  require(std::isfinite(lr) && lr > 0.0, ErrorCode::InvalidConfig, "teacher lr must be > 0");
  require(std::isfinite(tau) && tau > 0.0, ErrorCode::NonPositiveTemperature, "teacher tau must be > 0");
  require(noise_exposure >= 0.0, ErrorCode::InvalidConfig, "noise_exposure must be >= 0");
}

EvalMetrics evaluate(const EncoderParams& image_encoder, const PairedDataset& ds, std::span<const std::size_t> rows,
                     const DenseMatrix& bank) {
  require(bank.rows() > 0, ErrorCode::EmptyBank, "class bank has no rows");
  EvalMetrics out;
  if (rows.empty()) return out;
  const DenseMatrix features = encode_eval(image_encoder, gather_rows(ds.image_raw, rows));
  const DenseMatrix sims = pairwise_logits(features, bank);
  const std::size_t n = bank.rows();
  std::size_t top1 = 0, top5 = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t y = ds.labels[rows[i]];
    const double own = sims(i, y);
    // Position of y when classes are ordered by (-similarity, index).
    std::size_t rank = 0;
    for (std::size_t c = 0; c < n; ++c)
      if (sims(i, c) > own || (sims(i, c) == own && c < y)) ++rank;
    if (rank < 1) ++top1;
    if (rank < std::min<std::size_t>(5, n)) ++top5;
  }
  const double m = static_cast<double>(rows.size());
  out.accuracy = static_cast<double>(top1) / m;
  out.recall1 = out.accuracy;
  out.recall5 = static_cast<double>(top5) / m;
  return out;
}

namespace {

using Clock = std::chrono::steady_clock;

// Substream tags under the run seed.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kShuffleStream = 2;
constexpr std::uint64_t kDropoutStream = 3;
constexpr std::uint64_t kAugmentStream = 4;
constexpr std::uint64_t kProjectionStream = 5;
constexpr std::uint64_t kLabelPermutationStream = 6;
constexpr std::uint64_t kCorruptionStream = 7;

struct TeacherBatch {
  DenseMatrix image;  // teacher image features, B x d_T
  DenseMatrix text;   // teacher per-sample text features, B x d_T
  TeacherOutputs outputs;
  double similarity = 0.0;
};

TeacherBatch run_teacher(const Teacher& t, const RawBatch& raw, double tau, bool need_text) {
  TeacherBatch out;
  out.image = encode_eval(t.params.image, raw.image);
  if (need_text) out.text = encode_eval(t.params.text, raw.text);
  out.outputs = make_teacher_outputs(out.image, t.bank, tau, ContrastMode::ClassBank);
  out.similarity = teacher_label_similarity(out.image, raw.targets, t.bank);
  return out;
}

std::vector<TeacherBatch> run_teachers(std::span<const Teacher> teachers, const RawBatch& raw, double tau,
                                       bool need_text, bool parallel) {
  std::vector<TeacherBatch> out(teachers.size());
  if (!parallel || teachers.size() < 2) {
    for (std::size_t k = 0; k < teachers.size(); ++k) out[k] = run_teacher(teachers[k], raw, tau, need_text);
    return out;
  }
  std::vector<std::future<TeacherBatch>> jobs;
  for (std::size_t k = 0; k < teachers.size(); ++k)
    jobs.push_back(std::async(std::launch::async, [&, k] { return run_teacher(teachers[k], raw, tau, need_text); }));
  for (std::size_t k = 0; k < jobs.size(); ++k) out[k] = jobs[k].get();
  return out;
}

std::vector<double> concat(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

void require_finite(const EncoderParams& p, const char* what) {
  for (const auto& layer : p.layers) {
    require(layer.weight.all_finite(), ErrorCode::NumericError, std::string(what) + " has non-finite weights");
    for (double b : layer.bias) require(std::isfinite(b), ErrorCode::NumericError, std::string(what) + " has non-finite biases");
  }
}

struct EpochAccumulator {
  double l_clip = 0, l_kl = 0, l_mse = 0, total = 0, fw_iters = 0;
  std::vector<double> alpha, lsr_alpha, dsw_alpha;
  std::size_t batches = 0, dsw_batches = 0;

  static void add(std::vector<double>& acc, std::span<const double> v) {
    if (acc.empty()) acc.assign(v.size(), 0.0);
    for (std::size_t k = 0; k < v.size(); ++k) acc[k] += v[k];
  }
  static std::vector<double> mean(std::vector<double> acc, std::size_t n) {
    for (double& x : acc) x /= static_cast<double>(n);
    return acc;
  }
};

DistillResult train(const TrainConfig& config, std::span<const Teacher> teachers, const PairedDataset& ds,
                    const StepObserver& observer, std::span<const std::size_t> label_map) {
  config.validate();
  require(config.student_image.input_dim == ds.image_raw.cols() && config.student_text.input_dim == ds.text_raw.cols(),
          ErrorCode::InvalidConfig, "encoder input dims do not match the dataset");
  const bool distilling = config.strategy != Strategy::Base;
  const std::size_t K = distilling ? teachers.size() : 0;
  if (distilling) {
    require(teachers.size() == config.num_teachers, ErrorCode::StrategyTeacherMismatch,
            "config expects " + std::to_string(config.num_teachers) + " teachers, got " +
                std::to_string(teachers.size()));
    for (const auto& t : teachers) {
      require(t.params.image.config.output_dim == teachers[0].params.image.config.output_dim,
              ErrorCode::InvalidConfig, "teachers must share an output dim");
      require(t.bank.rows() == ds.spec.num_classes, ErrorCode::ShapeMismatch, "teacher bank has the wrong class count");
    }
  }
  const std::size_t N = ds.spec.num_classes;
  const DatasetSplit split = split_dataset(ds, config.train_fraction);

  const SeededRng root(config.seed);
  SeededRng init_rng = root.derive(kInitStream);
  SeededRng shuffle_rng = root.derive(kShuffleStream);
  SeededRng dropout_rng = root.derive(kDropoutStream);
  SeededRng augment_rng = root.derive(kAugmentStream);
  SeededRng projection_rng = root.derive(kProjectionStream);

  DistillResult result;
  DualEncoder& student = result.student;
  student.image = init_params(config.student_image, init_rng);
  student.text = init_params(config.student_text, init_rng);
  AdamState adam_image = make_adam_state(student.image, config.lr);
  AdamState adam_text = make_adam_state(student.text, config.lr);

  FeatureProjection projection;
  if (K > 0)
    projection = FeatureProjection::make(config.student_image.output_dim, teachers[0].params.image.config.output_dim,
                                         projection_rng);
  if (config.eval_bank == EvalBank::Teacher) {
    require(K > 0, ErrorCode::InvalidConfig, "teacher eval bank needs a teacher");
    require(teachers[0].bank.cols() == config.student_image.output_dim, ErrorCode::InvalidConfig,
            "teacher eval bank needs matching feature dims");
  }

  const std::size_t n_train = split.train.size();
  const std::size_t batches_per_epoch = (n_train + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = config.epochs * batches_per_epoch;
  const LossRatios& gamma = config.ratios;
  const DirectionWeights directions =
      config.kl_weighting == KlWeighting::Direction ? config.direction_weights : DirectionWeights{};
  const bool need_sample_text = K > 0;

  std::vector<std::size_t> order = split.train;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto epoch_start = Clock::now();
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);

    // Class bank through the student text encoder; dropout is never applied
    // to the bank, so the rng is not consumed.
    std::optional<EncodeResult> epoch_bank;
    if (config.bank_refresh == BankRefresh::PerEpoch)
      epoch_bank = encode(student.text, ds.text_anchors, false, dropout_rng);

    EpochAccumulator acc;
    double last_lr = config.lr;
    for (std::size_t start = 0; start < n_train; start += config.batch_size) {
      const std::span<const std::size_t> rows(order.data() + start, std::min(config.batch_size, n_train - start));
      const std::size_t B = rows.size();
      RawBatch raw{gather_rows(ds.image_raw, rows), gather_rows(ds.text_raw, rows), DenseMatrix(B, N)};
      for (std::size_t i = 0; i < B; ++i) raw.targets(i, label_map[ds.labels[rows[i]]]) = 1.0;
      raw = augment(std::move(raw), config.augmentation, augment_rng);

      const double lr = lr_at(config.lr_schedule, config.lr, step, total_steps);
      last_lr = lr;

      EncodeResult img = encode(student.image, raw.image, true, dropout_rng);
      EncodeResult bank = epoch_bank ? *epoch_bank : encode(student.text, ds.text_anchors, false, dropout_rng);
      std::optional<EncodeResult> txt;
      if (need_sample_text) txt = encode(student.text, raw.text, true, dropout_rng);

      const ClipLossResult clip = clip_loss_soft({img.features, bank.features, config.tau_student}, raw.targets);
      LossParts parts;
      parts.l_clip = clip.value;

      // Cotangents of everything except the teacher-weighted KL terms.
      DenseMatrix rest_U = clip.grad_U;
      rest_U *= gamma.clip;
      DenseMatrix rest_bank = clip.grad_W;
      rest_bank *= gamma.clip;
      DenseMatrix rest_txt(B, config.student_text.output_dim);

      SimplexWeights lambda;
      std::vector<KlFeatureLoss> kl;
      std::optional<TeacherGradientSet> gradient_set;
      std::optional<FrankWolfeResult> fw;
      std::vector<BackwardResult> img_grads, bank_grads;

      if (K > 0) {
        const auto tb = run_teachers(teachers, raw, config.tau_teacher, need_sample_text, config.parallel_teachers);
        SimilarityScores scores;
        for (std::size_t k = 0; k < K; ++k) {
          kl.push_back(kl_feature_loss(tb[k].outputs, img.features, bank.features, config.tau_distill,
                                       ContrastMode::ClassBank, directions));
          parts.l_kl_i2t.push_back(kl[k].l_i2t);
          parts.l_kl_t2i.push_back(kl[k].l_t2i);
          scores.r.push_back(tb[k].similarity);
        }
        const LsrWeights lsr = lsr_weights(scores);
        if (lsr.degenerate) ++result.degenerate_lsr_batches;
        EpochAccumulator::add(acc.lsr_alpha, lsr.weights.alpha());

        switch (config.strategy) {
          case Strategy::Avg: lambda = SimplexWeights::uniform(K); break;
          case Strategy::Lsr: lambda = lsr.weights; break;
          case Strategy::Dsw: {
            // Per-teacher KL gradients w.r.t. every student parameter.
            std::vector<DenseMatrix> cot_img, cot_bank;
            for (const auto& l : kl) {
              cot_img.push_back(l.grad_U);
              cot_bank.push_back(l.grad_W);
            }
            ForwardTape img_tape = img.tape;
            ForwardTape bank_tape = bank.tape;
            img_grads = backward(img_tape, cot_img);
            bank_grads = backward(bank_tape, cot_bank);
            gradient_set.emplace();
            for (std::size_t k = 0; k < K; ++k) {
              gradient_set->g.push_back(concat(flatten(img_grads[k].grad_params), flatten(bank_grads[k].grad_params)));
              gradient_set->objectives.push_back(directions.i2t * kl[k].l_i2t + directions.t2i * kl[k].l_t2i);
            }
            fw = frank_wolfe_min_norm(*gradient_set, config.frank_wolfe);
            lambda = fw->weights;
            acc.fw_iters += static_cast<double>(fw->iterations);
            ++acc.dsw_batches;
            EpochAccumulator::add(acc.dsw_alpha, lambda.alpha());
            break;
          }
          case Strategy::Base: break;
        }

        // Feature alignment against the lambda-weighted teachers.
        const DenseMatrix pu = projection.apply(img.features);
        const DenseMatrix pw = projection.apply(txt->features);
        DenseMatrix grad_pu(pu.rows(), pu.cols()), grad_pw(pw.rows(), pw.cols());
        if (config.mse_target == MseTarget::WeightedAverage) {
          std::vector<DenseMatrix> ti, tt;
          for (const auto& t : tb) {
            ti.push_back(t.image);
            tt.push_back(t.text);
          }
          const MseAlignResult m =
              mse_align(weighted_feature_target(ti, lambda), pu, weighted_feature_target(tt, lambda), pw);
          parts.l_mse = m.value;
          grad_pu = m.grad_u;
          grad_pw = m.grad_w;
        } else {
          for (std::size_t k = 0; k < K; ++k) {
            const MseAlignResult m = mse_align(tb[k].image, pu, tb[k].text, pw);
            parts.l_mse += lambda[k] * m.value;
            grad_pu.add_scaled(m.grad_u, lambda[k]);
            grad_pw.add_scaled(m.grad_w, lambda[k]);
          }
        }
        rest_U.add_scaled(projection.pull_back(grad_pu), gamma.mse);
        rest_txt.add_scaled(projection.pull_back(grad_pw), gamma.mse);
      }

      const LossBreakdown breakdown = total_loss(parts, gamma, lambda, directions);

      // Parameter gradients. dsw already holds per-teacher gradients, so only
      // the remaining terms are pulled back and the weighted KL is added.
      EncoderParams grad_image, grad_text;
      if (config.strategy == Strategy::Dsw) {
        grad_image = backward(img.tape, rest_U).grad_params;
        grad_text = backward(bank.tape, rest_bank).grad_params;
        for (std::size_t k = 0; k < K; ++k) {
          add_scaled(grad_image, img_grads[k].grad_params, gamma.kl * lambda[k]);
          add_scaled(grad_text, bank_grads[k].grad_params, gamma.kl * lambda[k]);
        }
      } else {
        for (std::size_t k = 0; k < K; ++k) {
          rest_U.add_scaled(kl[k].grad_U, gamma.kl * lambda[k]);
          rest_bank.add_scaled(kl[k].grad_W, gamma.kl * lambda[k]);
        }
        grad_image = backward(img.tape, rest_U).grad_params;
        grad_text = backward(bank.tape, rest_bank).grad_params;
      }
      if (txt) add_scaled(grad_text, backward(txt->tape, rest_txt).grad_params, 1.0);

      adam_image.lr = lr;
      adam_text.lr = lr;
      adam_step(student.image, grad_image, adam_image);
      adam_step(student.text, grad_text, adam_text);
      require_finite(student.image, "student image encoder");
      require_finite(student.text, "student text encoder");

      if (observer) {
        StepRecord rec;
        rec.epoch = epoch;
        rec.step = step;
        rec.breakdown = &breakdown;
        rec.gradients = gradient_set ? &*gradient_set : nullptr;
        rec.frank_wolfe = fw ? &*fw : nullptr;
        observer(rec);
      }

      acc.l_clip += breakdown.l_clip;
      acc.l_kl += breakdown.l_kl;
      acc.l_mse += breakdown.l_mse;
      acc.total += breakdown.total;
      if (K > 0) EpochAccumulator::add(acc.alpha, lambda.alpha());
      ++acc.batches;
      ++step;
    }

    EpochMetrics em;
    em.epoch = epoch;
    const double nb = static_cast<double>(acc.batches);
    em.l_clip = acc.l_clip / nb;
    em.l_kl = acc.l_kl / nb;
    em.l_mse = acc.l_mse / nb;
    em.total = acc.total / nb;
    em.alpha = EpochAccumulator::mean(acc.alpha, acc.batches);
    em.lsr_alpha = EpochAccumulator::mean(acc.lsr_alpha, acc.batches);
    if (acc.dsw_batches > 0) {
      em.dsw_alpha = EpochAccumulator::mean(acc.dsw_alpha, acc.dsw_batches);
      em.fw_iters = acc.fw_iters / static_cast<double>(acc.dsw_batches);
    }
    em.lr = last_lr;
    const DenseMatrix eval_bank =
        config.eval_bank == EvalBank::Teacher ? teachers[0].bank : build_class_bank(student.text, ds);
    em.eval = evaluate(student.image, ds, split.eval, eval_bank);
    em.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - epoch_start).count();
    result.metrics.epochs.push_back(std::move(em));
  }
  return result;
}

std::vector<std::size_t> identity_labels(std::size_t n) {
  std::vector<std::size_t> map(n);
  std::iota(map.begin(), map.end(), 0);
  return map;
}

// Uniform derangement by rejection, so every class id moves.
std::vector<std::size_t> derangement(std::size_t n, SeededRng& rng) {
  std::vector<std::size_t> p = identity_labels(n);
  while (true) {
    for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.uniform_index(i)]);
    bool moved = true;
    for (std::size_t i = 0; i < n; ++i) moved = moved && p[i] != i;
    if (moved) return p;
  }
}

}  // namespace

DistillResult distill_student(const TrainConfig& config, std::span<const Teacher> teachers, const PairedDataset& ds,
                              const StepObserver& observer) {
  return train(config, teachers, ds, observer, identity_labels(ds.spec.num_classes));
}

Teacher pretrain_teacher(const TeacherConfig& config, const PairedDataset& ds, const DatasetSplit& split) {
  config.validate();
  TrainConfig tc;
  tc.epochs = config.epochs;
  tc.batch_size = config.batch_size;
  tc.lr = config.lr;
  tc.tau_student = config.tau;
  tc.strategy = Strategy::Base;
  tc.num_teachers = 0;
  tc.seed = config.seed;
  tc.student_image = config.image;
  tc.student_text = config.text;
  if (config.noise_exposure > 0.0) tc.augmentation = {Augmentation::Kind::Jitter, config.noise_exposure, 0.0};

  const SeededRng root(config.seed);
  std::vector<std::size_t> labels = identity_labels(ds.spec.num_classes);
  if (config.corruption.kind == Corruption::Kind::LabelShuffle) {
    SeededRng perm_rng = root.derive(kLabelPermutationStream);
    labels = derangement(ds.spec.num_classes, perm_rng);
  }

  Teacher teacher;
  DistillResult trained = train(tc, {}, ds, {}, labels);
  teacher.params = std::move(trained.student);
  if (config.corruption.kind == Corruption::Kind::WeightNoise) {
    SeededRng noise_rng = root.derive(kCorruptionStream);
    teacher.params.image = corrupt_teacher(teacher.params.image, config.corruption, noise_rng);
    teacher.params.text = corrupt_teacher(teacher.params.text, config.corruption, noise_rng);
  } else if (config.corruption.kind == Corruption::Kind::LabelShuffle) {
    teacher.params.image.shuffled_label_tag = true;
    teacher.params.text.shuffled_label_tag = true;
  }
  teacher.corrupted = config.corruption.kind != Corruption::Kind::None &&
                      !(config.corruption.kind == Corruption::Kind::WeightNoise && config.corruption.sigma_w == 0.0);
  teacher.bank = build_class_bank(teacher.params.text, ds);
  teacher.eval_accuracy = evaluate(teacher.params.image, ds, split.eval, teacher.bank).accuracy;
  teacher.below_gate = teacher.eval_accuracy < kTeacherAccuracyGate;
  return teacher;
}

}  // namespace mtkd
