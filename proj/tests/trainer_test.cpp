#include <cmath>
#include <numbers>

#include "doctest.h"
#include "mtkd/trainer.hpp"
#include "test_support.hpp"

using namespace mtkd;
using mtkd::testing::error_code_of;

namespace {

SyntheticSpec small_spec(std::uint64_t seed = 1) {
  SyntheticSpec s;
  s.num_classes = 4;
  s.raw_image_dim = 8;
  s.raw_text_dim = 6;
  s.samples_per_class = 40;
  s.seed = seed;
  return s;
}

TrainConfig small_config(const SyntheticSpec& s, Strategy strategy, std::size_t teachers) {
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 16;
  c.lr = 1e-3;
  c.strategy = strategy;
  c.num_teachers = teachers;
  c.student_image = {s.raw_image_dim, {12}, 6, Activation::Relu, 0.0};
  c.student_text = {s.raw_text_dim, {12}, 6, Activation::Relu, 0.0};
  return c;
}

Teacher small_teacher(const PairedDataset& ds, std::uint64_t seed, std::size_t width = 16) {
  TeacherConfig tc;
  tc.image = {ds.spec.raw_image_dim, {width}, 8, Activation::Relu, 0.0};
  tc.text = {ds.spec.raw_text_dim, {width}, 8, Activation::Relu, 0.0};
  tc.epochs = 20;
  tc.batch_size = 16;
  tc.seed = seed;
  return pretrain_teacher(tc, ds, split_dataset(ds));
}

std::uint64_t student_checksum(const DistillResult& r) {
  return checksum(r.student.image) ^ (checksum(r.student.text) * 31);
}

double max_abs_diff(const EncoderParams& a, const EncoderParams& b) {
  const auto fa = flatten(a), fb = flatten(b);
  double m = 0.0;
  for (std::size_t i = 0; i < fa.size(); ++i) m = std::max(m, std::abs(fa[i] - fb[i]));
  return m;
}

}  // namespace

TEST_CASE("strategy names") {
  for (auto s : {Strategy::Base, Strategy::Avg, Strategy::Lsr, Strategy::Dsw}) CHECK(parse_strategy(to_string(s)) == s);
  CHECK(error_code_of([] { parse_strategy("mean"); }) == ErrorCode::ConfigParseError);
}

TEST_CASE("lr_at") {
  CHECK(lr_at({}, 1e-4, 7, 100) == 1e-4);
  LrSchedule cos{LrSchedule::Kind::Cosine, 0.0};
  CHECK(lr_at(cos, 1.0, 0, 100) == doctest::Approx(1.0));
  CHECK(lr_at(cos, 1.0, 50, 100) == doctest::Approx(0.5));
  CHECK(lr_at(cos, 1.0, 100, 100) == doctest::Approx(0.0));
  LrSchedule cos_default{LrSchedule::Kind::Cosine};
  CHECK(lr_at(cos_default, 1.0, 100, 100) == doctest::Approx(0.01));
  CHECK(lr_at(cos_default, 1.0, 50, 100) == doctest::Approx(0.505));
  double prev = 2.0;
  for (std::size_t t = 0; t <= 40; ++t) {
    const double v = lr_at(cos_default, 1.0, t, 40);
    CHECK(v <= prev);
    prev = v;
  }
}

TEST_CASE("augment") {
  SeededRng rng(3);
  RawBatch b{mtkd::testing::random_matrix(rng, 6, 4), mtkd::testing::random_matrix(rng, 6, 3), DenseMatrix(6, 5)};
  for (std::size_t i = 0; i < 6; ++i) b.targets(i, i % 5) = 1.0;

  SeededRng r1(9);
  CHECK(augment(b, {}, r1).image == b.image);
  CHECK(augment(b, {Augmentation::Kind::Jitter, 0.0}, r1).text == b.text);

  auto j = augment(b, {Augmentation::Kind::Jitter, 0.5}, r1);
  CHECK_FALSE(j.image == b.image);
  CHECK(j.targets == b.targets);

  auto m = augment(b, {Augmentation::Kind::Mixup, 0.0, 0.2}, r1);
  for (std::size_t i = 0; i < 6; ++i) {
    double s = 0.0;
    for (double t : m.targets.row(i)) {
      CHECK(t >= 0.0);
      s += t;
    }
    CHECK(s == doctest::Approx(1.0));
  }

  SeededRng a(4), c(4);
  CHECK(augment(b, {Augmentation::Kind::Mixup, 0.0, 0.2}, a).image ==
        augment(b, {Augmentation::Kind::Mixup, 0.0, 0.2}, c).image);
}

TEST_CASE("evaluate") {
  // Identity image encoder with the normalized anchors as the bank: this is a
  // nearest-anchor-by-cosine classifier, recomputed here by hand.
  auto ds = generate(small_spec());
  EncoderParams id;
  id.config = {ds.spec.raw_image_dim, {}, ds.spec.raw_image_dim, Activation::Identity, 0.0};
  DenseMatrix eye(ds.spec.raw_image_dim, ds.spec.raw_image_dim);
  for (std::size_t i = 0; i < eye.rows(); ++i) eye(i, i) = 1.0;
  id.layers.push_back({eye, std::vector<double>(eye.rows(), 0.0)});

  DenseMatrix bank = ds.image_anchors;
  for (std::size_t c = 0; c < bank.rows(); ++c) {
    auto n = l2_normalize(bank.row(c));
    std::copy(n.begin(), n.end(), bank.row(c).begin());
  }
  auto split = split_dataset(ds);
  auto m = evaluate(id, ds, split.eval, bank);

  std::size_t hits = 0;
  for (auto r : split.eval) {
    std::size_t best = 0;
    double best_sim = -2.0;
    for (std::size_t c = 0; c < bank.rows(); ++c) {
      const double s = cosine_sim(ds.image_raw.row(r), ds.image_anchors.row(c));
      if (s > best_sim) {
        best_sim = s;
        best = c;
      }
    }
    hits += best == ds.labels[r];
  }
  CHECK(m.accuracy == doctest::Approx(static_cast<double>(hits) / split.eval.size()));
  CHECK(m.recall1 == m.accuracy);
  CHECK(m.recall5 == 1.0);  // N = 4 <= 5

  // A constant bank ties every class; ties go to the lowest index.
  DenseMatrix flat(4, ds.spec.raw_image_dim);
  for (std::size_t c = 0; c < 4; ++c) flat(c, 0) = 1.0;
  CHECK(evaluate(id, ds, split.eval, flat).accuracy == doctest::Approx(0.25));

  CHECK(error_code_of([&] { evaluate(id, ds, split.eval, DenseMatrix(0, 8)); }) == ErrorCode::EmptyBank);
}

TEST_CASE("config validation") {
  auto s = small_spec();
  CHECK_NOTHROW(small_config(s, Strategy::Avg, 2).validate());
  CHECK(error_code_of([&] { small_config(s, Strategy::Dsw, 0).validate(); }) == ErrorCode::StrategyTeacherMismatch);
  CHECK_NOTHROW(small_config(s, Strategy::Base, 0).validate());
  auto c = small_config(s, Strategy::Avg, 2);
  c.tau_distill = 0.0;
  CHECK(error_code_of([&] { c.validate(); }) == ErrorCode::NonPositiveTemperature);
  c = small_config(s, Strategy::Avg, 2);
  c.ratios.kl = 0.0;
  CHECK(error_code_of([&] { c.validate(); }) == ErrorCode::NonPositiveRatio);
  c = small_config(s, Strategy::Avg, 2);
  c.student_text.output_dim = 5;
  CHECK(error_code_of([&] { c.validate(); }) == ErrorCode::InvalidConfig);

  auto ds = generate(s);
  std::vector<Teacher> one{small_teacher(ds, 1)};
  CHECK(error_code_of([&] { distill_student(small_config(s, Strategy::Avg, 2), one, ds); }) ==
        ErrorCode::StrategyTeacherMismatch);
}

TEST_CASE("pretrain: zero-noise data and a linear teacher reach 1.0") {
  SyntheticSpec s = small_spec(5);
  s.noise_sigma = 0.0;
  auto ds = generate(s);
  TeacherConfig tc;
  tc.image = {s.raw_image_dim, {}, 8, Activation::Relu, 0.0};
  tc.text = {s.raw_text_dim, {}, 8, Activation::Relu, 0.0};
  tc.epochs = 5;
  tc.batch_size = 16;
  auto t = pretrain_teacher(tc, ds, split_dataset(ds));
  CHECK(t.eval_accuracy == 1.0);
  CHECK_FALSE(t.below_gate);
  CHECK_FALSE(t.corrupted);
  CHECK(t.bank.rows() == 4);
}

TEST_CASE("pretrain is deterministic; corruption lowers accuracy") {
  auto ds = generate(small_spec());
  auto a = small_teacher(ds, 7), b = small_teacher(ds, 7);
  CHECK(a.params.image == b.params.image);
  CHECK(a.bank == b.bank);
  CHECK(a.eval_accuracy >= 0.95);

  TeacherConfig tc;
  tc.image = {ds.spec.raw_image_dim, {16}, 8, Activation::Relu, 0.0};
  tc.text = {ds.spec.raw_text_dim, {16}, 8, Activation::Relu, 0.0};
  tc.epochs = 20;
  tc.batch_size = 16;
  tc.seed = 7;

  tc.corruption = {Corruption::Kind::LabelShuffle, 0.0};
  auto shuffled = pretrain_teacher(tc, ds, split_dataset(ds));
  CHECK(shuffled.corrupted);
  CHECK(shuffled.params.image.shuffled_label_tag);
  // Every class id moves, so a teacher that learned the permuted task is
  // wrong on nearly every sample.
  CHECK(shuffled.eval_accuracy <= 0.1);

  tc.corruption = {Corruption::Kind::WeightNoise, 10.0};
  auto noisy = pretrain_teacher(tc, ds, split_dataset(ds));
  CHECK(noisy.corrupted);
  CHECK(noisy.eval_accuracy < a.eval_accuracy);
}

TEST_CASE("untrained students sit near chance") {
  SyntheticSpec s = SyntheticSpec{};
  auto ds = generate(s);
  auto split = split_dataset(ds);
  TrainConfig c;
  double sum = 0.0;
  const int runs = 5;
  for (int seed = 0; seed < runs; ++seed) {
    SeededRng init = SeededRng(static_cast<std::uint64_t>(seed)).derive(1);
    auto img = init_params(c.student_image, init);
    auto txt = init_params(c.student_text, init);
    sum += evaluate(img, ds, split.eval, build_class_bank(txt, ds)).accuracy;
  }
  const double mean = sum / runs;
  MESSAGE("untrained mean accuracy " << mean);
  CHECK(std::abs(mean - 0.125) <= 0.05);
}

TEST_CASE("distillation runs are deterministic and leave teachers untouched") {
  auto ds = generate(small_spec());
  std::vector<Teacher> teachers{small_teacher(ds, 1), small_teacher(ds, 2, 24)};
  const auto before0 = checksum(teachers[0].params.image), before1 = checksum(teachers[1].params.text);
  for (auto strategy : {Strategy::Base, Strategy::Avg, Strategy::Lsr, Strategy::Dsw}) {
    auto c = small_config(ds.spec, strategy, 2);
    auto r1 = distill_student(c, teachers, ds);
    auto r2 = distill_student(c, teachers, ds);
    CHECK(student_checksum(r1) == student_checksum(r2));
    CHECK(r1.metrics.epochs.size() == 2);
    c.parallel_teachers = true;
    CHECK(student_checksum(distill_student(c, teachers, ds)) == student_checksum(r1));
    for (const auto& e : r1.metrics.epochs) {
      if (strategy == Strategy::Base) {
        CHECK(e.alpha.empty());
        continue;
      }
      REQUIRE(e.alpha.size() == 2);
      CHECK(e.alpha[0] + e.alpha[1] == doctest::Approx(1.0));
      CHECK(e.lsr_alpha.size() == 2);
      CHECK(e.dsw_alpha.size() == (strategy == Strategy::Dsw ? 2u : 0u));
    }
  }
  CHECK(checksum(teachers[0].params.image) == before0);
  CHECK(checksum(teachers[1].params.text) == before1);
}

TEST_CASE("base ignores teachers") {
  auto ds = generate(small_spec());
  std::vector<Teacher> teachers{small_teacher(ds, 1), small_teacher(ds, 2)};
  auto with = distill_student(small_config(ds.spec, Strategy::Base, 2), teachers, ds);
  auto without = distill_student(small_config(ds.spec, Strategy::Base, 0), {}, ds);
  CHECK(student_checksum(with) == student_checksum(without));
  CHECK(with.metrics.epochs.back().l_kl == 0.0);
  CHECK(with.metrics.epochs.back().l_mse == 0.0);
}

TEST_CASE("avg over two copies of a teacher matches that teacher alone") {
  auto ds = generate(small_spec());
  auto t = small_teacher(ds, 3);
  std::vector<Teacher> twice{t, t}, once{t};
  auto c2 = small_config(ds.spec, Strategy::Avg, 2);
  auto c1 = small_config(ds.spec, Strategy::Avg, 1);
  c2.epochs = c1.epochs = 1;
  auto r2 = distill_student(c2, twice, ds);
  auto r1 = distill_student(c1, once, ds);
  CHECK(max_abs_diff(r2.student.image, r1.student.image) <= 1e-9);
  CHECK(max_abs_diff(r2.student.text, r1.student.text) <= 1e-9);
  CHECK(r2.metrics.epochs[0].total == doctest::Approx(r1.metrics.epochs[0].total).epsilon(1e-12));
}

TEST_CASE("recorded losses are consistent and dsw weights are certified") {
  auto ds = generate(small_spec());
  std::vector<Teacher> teachers{small_teacher(ds, 1), small_teacher(ds, 2, 24)};
  auto c = small_config(ds.spec, Strategy::Dsw, 2);
  std::size_t steps = 0, converged = 0;
  auto observer = [&](const StepRecord& rec) {
    ++steps;
    REQUIRE(rec.breakdown != nullptr);
    CHECK(std::abs(rec.breakdown->recompute_total() - rec.breakdown->total) <= 1e-9);
    REQUIRE(rec.gradients != nullptr);
    REQUIRE(rec.frank_wolfe != nullptr);
    if (rec.frank_wolfe->converged) {
      ++converged;
      CHECK(certify_pareto_stationarity(rec.frank_wolfe->d, *rec.gradients, 1e-6).passes);
    }
  };
  distill_student(c, teachers, ds, observer);
  CHECK(steps == 2 * 8);
  CHECK(converged > 0);
}

TEST_CASE("cosine schedule decays the recorded lr") {
  auto ds = generate(small_spec());
  auto c = small_config(ds.spec, Strategy::Base, 0);
  c.epochs = 4;
  c.lr_schedule = {LrSchedule::Kind::Cosine};
  auto r = distill_student(c, {}, ds);
  for (std::size_t e = 1; e < r.metrics.epochs.size(); ++e)
    CHECK(r.metrics.epochs[e].lr < r.metrics.epochs[e - 1].lr);
}

TEST_CASE("default-spec teacher clears the gate") {
  auto ds = generate(SyntheticSpec{});
  TeacherConfig tc;
  auto t = pretrain_teacher(tc, ds, split_dataset(ds));
  CHECK(t.eval_accuracy >= kTeacherAccuracyGate);
}
