#pragma once

// Distilled SGLD: an SGLD teacher chain and an SGD student trained in
// lockstep, the student fitting the teacher's predictive distribution on
// freshly generated inputs.

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <memory>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "bdk/dataset.hpp"
#include "bdk/error.hpp"
#include "bdk/nn.hpp"
#include "bdk/objectives.hpp"
#include "bdk/rng.hpp"
#include "bdk/samplers.hpp"

namespace bdk {

// Inputs drawn i.i.d. uniform over an axis-aligned box.
struct UniformBox {
  std::vector<double> lower;
  std::vector<double> upper;
};

// Training rows picked uniformly with replacement plus N(0, sigma^2) noise per
// feature. `sigma` holds one entry per feature or a single shared entry.
struct PerturbTrain {
  std::shared_ptr<const Matrix> source;
  std::vector<double> sigma;
};

using StudentDataGen = std::variant<UniformBox, PerturbTrain>;

inline std::size_t generator_dim(const StudentDataGen& gen) {
  if (const auto* box = std::get_if<UniformBox>(&gen)) return box->lower.size();
  const auto& pt = std::get<PerturbTrain>(gen);
  return pt.source ? pt.source->cols() : 0;
}

inline void validate(const StudentDataGen& gen) {
  if (const auto* box = std::get_if<UniformBox>(&gen)) {
    require(!box->lower.empty() && box->lower.size() == box->upper.size(), "UniformBox: bounds must have equal, nonzero length");
    for (std::size_t d = 0; d < box->lower.size(); ++d)
      require(box->lower[d] < box->upper[d], "UniformBox: need lower < upper in every dimension");
    return;
  }
  const auto& pt = std::get<PerturbTrain>(gen);
  require(pt.source && pt.source->rows() > 0, "PerturbTrain: empty source set");
  require(pt.sigma.size() == 1 || pt.sigma.size() == pt.source->cols(),
          "PerturbTrain: sigma needs one entry or one per feature");
  for (double s : pt.sigma) require(s >= 0.0, "PerturbTrain: sigma must be non-negative");
}

inline Matrix gen_student_batch(const StudentDataGen& gen, std::size_t m, Engine& rng) {
  require(m >= 1, "gen_student_batch: M must be >= 1");
  validate(gen);
  if (const auto* box = std::get_if<UniformBox>(&gen)) {
    const std::size_t d = box->lower.size();
    Matrix out(m, d);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < d; ++j) out(i, j) = box->lower[j] + (box->upper[j] - box->lower[j]) * u(rng);
    return out;
  }
  const auto& pt = std::get<PerturbTrain>(gen);
  const Matrix& src = *pt.source;
  Matrix out(m, src.cols());
  std::uniform_int_distribution<std::size_t> pick(0, src.rows() - 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < m; ++i) {
    auto row = src.row(pick(rng));
    auto dst = out.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) {
      const double s = pt.sigma.size() == 1 ? pt.sigma[0] : pt.sigma[j];
      dst[j] = s > 0.0 ? row[j] + s * normal(rng) : row[j];
    }
  }
  return out;
}

enum class DistillTask { Classification, Regression };

// Classification: softmax teacher and student with the same class count.
// Regression: mean-only teacher, mean/log-variance student.
inline DistillTask distill_task(const MlpSpec& teacher, const MlpSpec& student) {
  if (teacher.head.is_classifier() && student.head.is_classifier()) {
    if (teacher.head.classes != student.head.classes) throw PreconditionError("distill: teacher and student class counts differ");
    return DistillTask::Classification;
  }
  if (teacher.head.kind == HeadKind::RegressionMeanOnly && student.head.kind == HeadKind::RegressionMeanLogVar)
    return DistillTask::Regression;
  throw PreconditionError("distill: head mismatch (teacher " + to_string(teacher.head.kind) + ", student " +
                          to_string(student.head.kind) + ")");
}

struct StudentGradient {
  double loss = 0.0;  // mean over the batch
  ParamVector grad;   // gradient of the mean loss
};

inline StudentGradient student_loss_grad(const MlpSpec& student_spec, const ParamVector& w, const ParamVector& theta,
                                         const MlpSpec& teacher_spec, const Matrix& batch,
                                         const std::optional<NoiseModel>& noise) {
  require(batch.rows() > 0, "student_step: empty batch");
  const DistillTask task = distill_task(teacher_spec, student_spec);
  if (task == DistillTask::Regression && !noise) throw PreconditionError("regression distillation needs a noise model");
  const Matrix teacher_out = predict(teacher_spec, theta, batch);
  auto fr = forward(student_spec, w, batch);
  const double inv_m = 1.0 / static_cast<double>(batch.rows());
  Matrix dout(fr.outputs.rows(), fr.outputs.cols());
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.rows(); ++i) {
    if (task == DistillTask::Classification) {
      auto logits = fr.outputs.row(i);
      auto tp = softmax(teacher_out.row(i));
      auto slp = log_softmax(logits);
      auto dl = distill_loss_classification(tp, slp);
      loss += dl.loss;
      auto g = log_softmax_vjp(logits, dl.dloss_dbeta);
      auto row = dout.row(i);
      for (std::size_t k = 0; k < g.size(); ++k) row[k] = g[k] * inv_m;
    } else {
      auto dl = distill_loss_regression(teacher_out(i, 0), fr.outputs(i, 0), fr.outputs(i, 1), *noise);
      loss += dl.loss;
      dout(i, 0) = dl.dmu * inv_m;
      dout(i, 1) = dl.dalpha * inv_m;
    }
  }
  return {loss * inv_m, backward(student_spec, w, fr.trace, dout)};
}

// w - rho * (mean_batch grad L(w, theta | x') + gamma * w)
inline ParamVector student_step(const MlpSpec& student_spec, const ParamVector& w, const ParamVector& theta,
                                const MlpSpec& teacher_spec, const Matrix& batch, double rho, double gamma,
                                const std::optional<NoiseModel>& noise, double* batch_loss = nullptr) {
  require(rho > 0.0, "student_step: rho must be positive");
  require(gamma >= 0.0, "student_step: gamma must be non-negative");
  auto sg = student_loss_grad(student_spec, w, theta, teacher_spec, batch, noise);
  if (batch_loss) *batch_loss = sg.loss;
  ParamVector out(w.size());
  auto wv = w.values();
  auto g = sg.grad.values();
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = wv[i] - rho * (g[i] + gamma * wv[i]);
  return out;
}

struct StudentConfig {
  StepSchedule rho = StepSchedule::constant(1e-3);
  double gamma = 0.0;
  std::size_t batch = 100;
  double init_scale = kHeScale;
};

struct DistillConfig {
  ChainConfig teacher;  // its iteration count is ignored; `iterations` drives the joint loop
  StudentConfig student;
  StudentDataGen gen = UniformBox{};
  std::size_t iterations = 0;  // T
  std::uint64_t seed = 0;      // student streams; the teacher uses teacher.seed
  std::size_t history_every = 100;

  // Hard violations throw; soft ones (lambda not much larger than gamma) are
  // returned as warnings.
  std::vector<std::string> validate() const {
    teacher.validate(false);
    student.rho.validate("student step size");
    require(student.gamma >= 0.0, "DistillConfig: gamma must be non-negative");
    require(student.batch >= 1, "DistillConfig: student minibatch must be >= 1");
    bdk::validate(gen);
    std::vector<std::string> warnings;
    if (teacher.prior_precision < student.gamma)
      warnings.push_back("teacher prior precision is below the student's; usually lambda >> gamma");
    return warnings;
  }
};

struct HistoryRow {
  std::size_t iteration = 0;
  double teacher_nll = 0.0;
  double student_loss = 0.0;
};

struct DistillResult {
  ParamVector student;
  PosteriorEnsemble teacher_ensemble;
  ParamVector teacher_final;
  std::vector<HistoryRow> history;
};

inline DistillResult run_distilled_sgld(const MlpSpec& teacher_spec, const MlpSpec& student_spec, const Dataset& data,
                                        const DistillConfig& config, const std::optional<NoiseModel>& noise) {
  config.validate();
  distill_task(teacher_spec, student_spec);
  if (student_spec.input_width() != teacher_spec.input_width() || generator_dim(config.gen) != teacher_spec.input_width())
    throw ShapeError("distill: teacher, student and generator input widths differ");

  LangevinChain chain(ChainKind::Sgld, teacher_spec, data, config.teacher, noise);
  auto init_rng = make_engine(config.seed, Stream::StudentInit);
  auto data_rng = make_engine(config.seed, Stream::StudentData);

  DistillResult r;
  r.student = init_params(student_spec, init_rng, config.student.init_scale);
  r.teacher_ensemble.spec = teacher_spec;
  r.teacher_ensemble.provenance = "distilled " + describe(ChainKind::Sgld, config.teacher);

  for (std::size_t t = 1; t <= config.iterations; ++t) {
    const double nll = chain.step();
    if (chain.retain_current()) r.teacher_ensemble.samples.push_back(chain.params());
    const Matrix batch = gen_student_batch(config.gen, config.student.batch, data_rng);
    double loss = 0.0;
    r.student = student_step(student_spec, r.student, chain.params(), teacher_spec, batch, config.student.rho.at(t),
                             config.student.gamma, noise, &loss);
    if (!r.student.all_finite()) throw DivergenceError("student", t);
    if (config.history_every > 0 && t % config.history_every == 0) r.history.push_back({t, nll, loss});
  }
  r.teacher_final = chain.params();
  return r;
}

// Student trained against a finished ensemble: each step uses one member
// drawn uniformly at random.
inline ParamVector distill_from_ensemble(const PosteriorEnsemble& teacher, const MlpSpec& student_spec,
                                         const StudentDataGen& gen, const StudentConfig& student, std::size_t iterations,
                                         std::uint64_t seed, const std::optional<NoiseModel>& noise,
                                         std::vector<HistoryRow>* history = nullptr, std::size_t history_every = 100) {
  require(!teacher.empty(), "distill_from_ensemble: empty ensemble");
  distill_task(teacher.spec, student_spec);
  auto init_rng = make_engine(seed, Stream::StudentInit);
  auto data_rng = make_engine(seed, Stream::StudentData);
  auto pick_rng = make_engine(seed, Stream::TeacherMinibatch);
  std::uniform_int_distribution<std::size_t> pick(0, teacher.size() - 1);
  ParamVector w = init_params(student_spec, init_rng, student.init_scale);
  for (std::size_t t = 1; t <= iterations; ++t) {
    const ParamVector& theta = teacher.samples[pick(pick_rng)];
    const Matrix batch = gen_student_batch(gen, student.batch, data_rng);
    double loss = 0.0;
    w = student_step(student_spec, w, theta, teacher.spec, batch, student.rho.at(t), student.gamma, noise, &loss);
    if (!w.all_finite()) throw DivergenceError("student", t);
    if (history && history_every > 0 && t % history_every == 0) history->push_back({t, 0.0, loss});
  }
  return w;
}

inline void write_history_csv(std::ostream& os, const std::vector<HistoryRow>& rows) {
  os << "iteration,teacher_nll,student_loss\n";
  os << std::setprecision(17);
  for (const auto& r : rows) os << r.iteration << ',' << r.teacher_nll << ',' << r.student_loss << '\n';
}

}  // namespace bdk
