#pragma once

// Experiment recipes: configuration, per-trial execution and on-disk
// artifacts (metrics, metadata, resolved config, checkpoints, grids, bands).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "bdk/checkpoint.hpp"
#include "bdk/config.hpp"
#include "bdk/data.hpp"
#include "bdk/distill.hpp"
#include "bdk/eval.hpp"
#include "bdk/hmc.hpp"
#include "bdk/samplers.hpp"

namespace bdk {

namespace fs = std::filesystem;

enum class ExperimentKind { Toy2d, Toy1d, Boston, Mnist, ConjugateCheck };
enum class Method { Sgd, Sgld, Hmc, Distill };
enum class DistillMode { Joint, FromEnsemble };

inline std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::Toy2d: return "toy2d";
    case ExperimentKind::Toy1d: return "toy1d";
    case ExperimentKind::Boston: return "boston";
    case ExperimentKind::Mnist: return "mnist";
    case ExperimentKind::ConjugateCheck: return "conjugate-check";
  }
  return "?";
}

inline std::string to_string(Method m) {
  switch (m) {
    case Method::Sgd: return "sgd";
    case Method::Sgld: return "sgld";
    case Method::Hmc: return "hmc";
    case Method::Distill: return "distill";
  }
  return "?";
}

inline ExperimentKind parse_experiment_kind(const std::string& s) {
  for (auto k : {ExperimentKind::Toy2d, ExperimentKind::Toy1d, ExperimentKind::Boston, ExperimentKind::Mnist,
                 ExperimentKind::ConjugateCheck})
    if (to_string(k) == s) return k;
  throw ConfigError("experiment.name", "unknown experiment '" + s + "' (toy2d, toy1d, boston, mnist, conjugate-check)");
}

inline Method parse_method(const std::string& s) {
  for (auto m : {Method::Sgd, Method::Sgld, Method::Hmc, Method::Distill})
    if (to_string(m) == s) return m;
  throw ConfigError("experiment.method", "unknown method '" + s + "' (sgd, sgld, hmc, distill)");
}

struct StudentGenSpec {
  bool uniform = true;
  std::vector<double> lower, upper;  // uniform box
  std::vector<double> sigma;         // perturbation of training inputs
};

struct ExperimentConfig {
  ExperimentKind experiment = ExperimentKind::Toy2d;
  Method method = Method::Sgd;
  std::string label;
  std::string source;
  std::string scale;
  std::uint64_t seed = 0;
  std::size_t n_trials = 1;
  bool save_checkpoints = true;

  MlpSpec teacher_spec;
  ChainConfig chain;
  std::optional<NoiseModel> noise;

  MlpSpec student_spec;
  StudentConfig student;
  StudentGenSpec gen;
  DistillMode distill_mode = DistillMode::Joint;
  std::size_t student_iterations = 0;  // FromEnsemble only
  std::size_t history_every = 100;

  HmcConfig hmc;

  std::uint64_t data_seed = 1;
  fs::path data_dir;
  // boston
  fs::path csv_path;
  std::string target_column = "MEDV";
  std::size_t train_n = 456, test_n = 50;
  bool standardize_targets = true;
  // mnist
  fs::path images, labels, test_images, test_labels;
  std::optional<std::size_t> subset;
  std::size_t valid_n = 0;
  std::uint64_t split_seed = 0;
  // conjugate-check
  std::size_t conj_n = 10;
  double conj_true_mean = 1.0;
  double conj_noise_sd = 1.0;
  // toy2d
  GridGeometry grid;
  fs::path reference_grid;
  // toy1d
  double band_lo = -8.0, band_hi = 8.0;
  std::size_t band_points = 161;
  double probe_far = 6.0;
};

inline MlpSpec spec_from_config(const Config& c, const std::string& key, Head head) {
  try {
    return make_spec(parse_widths(c.get_string(key)), head);
  } catch (const PreconditionError& e) {
    throw ConfigError(key, e.what());
  }
}

inline StepSchedule schedule_from_config(const Config& c, const std::string& prefix, double fallback) {
  StepSchedule s{c.get_double(prefix, fallback), c.get_double(prefix + "_decay", 1.0), c.get_size(prefix + "_every", 0)};
  if (!(s.initial > 0.0)) throw ConfigError(prefix, "step size must be positive");
  if (!(s.factor > 0.0)) throw ConfigError(prefix + "_decay", "decay factor must be positive");
  return s;
}

inline fs::path resolve_data_path(const fs::path& data_dir, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : data_dir / path;
}

inline fs::path default_data_dir() {
  const char* env = std::getenv("BDK_DATA_DIR");
  return env && *env ? fs::path(env) : fs::path("data");
}

// Reads and validates every field; errors name the offending key.
inline ExperimentConfig parse_experiment_config(const Config& c, const fs::path& data_dir = default_data_dir()) {
  ExperimentConfig e;
  e.experiment = parse_experiment_kind(c.get_string("experiment.name"));
  e.method = parse_method(c.get_string("experiment.method"));
  e.label = c.get_string("experiment.label", to_string(e.experiment) + "-" + to_string(e.method));
  e.source = c.get_string("experiment.source", "");
  e.scale = c.get_string("experiment.scale", "desk");
  if (e.scale != "desk" && e.scale != "full") throw ConfigError("experiment.scale", "must be 'desk' or 'full'");
  e.seed = c.get_u64("experiment.seed", 0);
  e.n_trials = c.get_size("experiment.n_trials", 1);
  if (e.n_trials < 1) throw ConfigError("experiment.n_trials", "must be >= 1");
  e.save_checkpoints = c.get_bool("experiment.save_checkpoints", true);
  e.history_every = c.get_size("experiment.history_every", 100);
  e.data_dir = data_dir;
  e.data_seed = c.get_u64("data.seed", 1);

  const bool hmc_ok = e.experiment == ExperimentKind::Toy2d || e.experiment == ExperimentKind::Toy1d ||
                      e.experiment == ExperimentKind::ConjugateCheck;
  if (e.method == Method::Hmc && !hmc_ok)
    throw ConfigError("experiment.method", "hmc is only available for toy2d, toy1d and conjugate-check");
  if (e.experiment == ExperimentKind::ConjugateCheck && e.method == Method::Distill)
    throw ConfigError("experiment.method", "conjugate-check has no student");

  const bool classification = e.experiment == ExperimentKind::Toy2d || e.experiment == ExperimentKind::Mnist;
  const Head teacher_head = classification ? Head::softmax(e.experiment == ExperimentKind::Mnist ? 10 : 2)
                                           : Head::mean_only();
  if (e.experiment == ExperimentKind::ConjugateCheck) {
    e.teacher_spec = make_spec({1, 1}, Head::mean_only());
  } else {
    e.teacher_spec = spec_from_config(c, "teacher.widths", teacher_head);
  }

  auto& ch = e.chain;
  ch.eta = schedule_from_config(c, "teacher.eta", 1e-3);
  ch.iterations = c.get_size("teacher.iterations", 1000);
  ch.burn_in = c.get_size("teacher.burn_in", 0);
  ch.thin = c.get_size("teacher.thin", 1);
  ch.batch = c.get_size("teacher.batch", 1);
  ch.full_batch = c.get_bool("teacher.full_batch", false);
  ch.prior_precision = c.get_double("teacher.prior_precision", 1.0);
  ch.init_scale = c.get_double("teacher.init_scale", kHeScale);
  if (ch.iterations <= ch.burn_in && e.method != Method::Hmc)
    throw ConfigError("teacher.iterations", "must exceed teacher.burn_in");
  if (ch.thin < 1) throw ConfigError("teacher.thin", "must be >= 1");
  if (ch.batch < 1) throw ConfigError("teacher.batch", "must be >= 1");
  if (ch.prior_precision < 0.0) throw ConfigError("teacher.prior_precision", "must be non-negative");
  if (!(ch.init_scale > 0.0)) throw ConfigError("teacher.init_scale", "must be positive");

  if (!classification) {
    const double lambda_n = c.get_double("model.noise_precision");
    if (!(lambda_n > 0.0)) throw ConfigError("model.noise_precision", "must be positive");
    e.noise = NoiseModel(lambda_n);
  }

  if (e.method == Method::Distill) {
    const Head student_head = classification ? teacher_head : Head::mean_log_var();
    e.student_spec = spec_from_config(c, "student.widths", student_head);
    if (e.student_spec.input_width() != e.teacher_spec.input_width())
      throw ConfigError("student.widths", "input width differs from the teacher's");
    e.student.rho = schedule_from_config(c, "student.rho", 1e-3);
    e.student.gamma = c.get_double("student.prior_precision", 0.0);
    if (e.student.gamma < 0.0) throw ConfigError("student.prior_precision", "must be non-negative");
    e.student.batch = c.get_size("student.batch", 100);
    if (e.student.batch < 1) throw ConfigError("student.batch", "must be >= 1");
    e.student.init_scale = c.get_double("student.init_scale", kHeScale);
    const std::string mode = c.get_string("student.mode", "joint");
    if (mode == "joint") {
      e.distill_mode = DistillMode::Joint;
    } else if (mode == "ensemble") {
      e.distill_mode = DistillMode::FromEnsemble;
      e.student_iterations = c.get_size("student.iterations");
    } else {
      throw ConfigError("student.mode", "must be 'joint' or 'ensemble'");
    }
    const std::string gen = c.get_string("student.generator");
    if (gen == "uniform") {
      e.gen.uniform = true;
      e.gen.lower = c.get_doubles("student.lower");
      e.gen.upper = c.get_doubles("student.upper");
      if (e.gen.lower.size() != e.teacher_spec.input_width() || e.gen.upper.size() != e.gen.lower.size())
        throw ConfigError("student.lower", "need one bound per input dimension");
      for (std::size_t d = 0; d < e.gen.lower.size(); ++d)
        if (!(e.gen.lower[d] < e.gen.upper[d])) throw ConfigError("student.upper", "need lower < upper");
    } else if (gen == "perturb") {
      e.gen.uniform = false;
      e.gen.sigma = c.get_doubles("student.sigma");
      for (double s : e.gen.sigma)
        if (s < 0.0) throw ConfigError("student.sigma", "must be non-negative");
    } else {
      throw ConfigError("student.generator", "must be 'uniform' or 'perturb'");
    }
  }

  if (e.method == Method::Hmc) {
    auto& h = e.hmc;
    h.step_size = c.get_double("hmc.step_size");
    h.leapfrog_steps = c.get_size("hmc.leapfrog_steps");
    h.n_samples = c.get_size("hmc.samples");
    h.burn_in = c.get_size("hmc.burn_in", 0);
    h.thin = c.get_size("hmc.thin", 1);
    h.step_jitter = c.get_double("hmc.jitter", 0.0);
    if (!(h.step_size > 0.0)) throw ConfigError("hmc.step_size", "must be positive");
    if (h.leapfrog_steps < 1) throw ConfigError("hmc.leapfrog_steps", "must be >= 1");
    if (h.n_samples < 1) throw ConfigError("hmc.samples", "must be >= 1");
    if (h.thin < 1) throw ConfigError("hmc.thin", "must be >= 1");
    if (!(h.step_jitter >= 0.0 && h.step_jitter < 1.0)) throw ConfigError("hmc.jitter", "must lie in [0, 1)");
  }

  switch (e.experiment) {
    case ExperimentKind::Toy2d: {
      if (e.teacher_spec.input_width() != 2) throw ConfigError("teacher.widths", "toy2d inputs are 2-dimensional");
      e.grid.x_min = c.get_double("grid.x_min", -10.0);
      e.grid.x_max = c.get_double("grid.x_max", 10.0);
      e.grid.y_min = c.get_double("grid.y_min", -10.0);
      e.grid.y_max = c.get_double("grid.y_max", 10.0);
      e.grid.nx = c.get_size("grid.nx", 100);
      e.grid.ny = c.get_size("grid.ny", 100);
      if (e.grid.nx < 2 || e.grid.ny < 2) throw ConfigError("grid.nx", "resolution must be >= 2 per axis");
      if (!(e.grid.x_min < e.grid.x_max && e.grid.y_min < e.grid.y_max)) throw ConfigError("grid.x_min", "empty range");
      if (auto ref = c.find("grid.reference")) e.reference_grid = *ref;
      break;
    }
    case ExperimentKind::Toy1d:
      if (e.teacher_spec.input_width() != 1) throw ConfigError("teacher.widths", "toy1d inputs are 1-dimensional");
      e.band_lo = c.get_double("band.lo", -8.0);
      e.band_hi = c.get_double("band.hi", 8.0);
      e.band_points = c.get_size("band.points", 161);
      e.probe_far = c.get_double("band.far", 6.0);
      if (!(e.band_lo < e.band_hi) || e.band_points < 2) throw ConfigError("band.points", "need lo < hi and >= 2 points");
      break;
    case ExperimentKind::Boston:
      e.csv_path = resolve_data_path(data_dir, c.get_string("data.path", "boston_housing.csv"));
      e.target_column = c.get_string("data.target", "MEDV");
      e.train_n = c.get_size("data.train_n", 456);
      e.test_n = c.get_size("data.test_n", 50);
      e.standardize_targets = c.get_bool("data.standardize_targets", true);
      break;
    case ExperimentKind::Mnist:
      if (e.teacher_spec.input_width() != 784) throw ConfigError("teacher.widths", "MNIST inputs are 784-dimensional");
      e.images = resolve_data_path(data_dir, c.get_string("data.images"));
      e.labels = resolve_data_path(data_dir, c.get_string("data.labels"));
      if (auto ti = c.find("data.test_images")) {
        e.test_images = resolve_data_path(data_dir, *ti);
        e.test_labels = resolve_data_path(data_dir, c.get_string("data.test_labels"));
      }
      if (c.has("data.subset")) e.subset = c.get_size("data.subset");
      e.train_n = c.get_size("data.train_n");
      e.valid_n = c.get_size("data.valid_n");
      e.split_seed = c.get_u64("data.split_seed", 0);
      break;
    case ExperimentKind::ConjugateCheck:
      e.conj_n = c.get_size("data.n", 10);
      e.conj_true_mean = c.get_double("data.true_mean", 1.0);
      e.conj_noise_sd = c.get_double("data.noise_sd", 1.0);
      if (e.conj_n < 1) throw ConfigError("data.n", "must be >= 1");
      break;
  }
  c.check_all_used();
  return e;
}

// Ordered metric name/value pairs produced by one trial.
struct TrialMetrics {
  std::vector<std::pair<std::string, double>> values;
  void add(const std::string& name, double v) { values.emplace_back(name, v); }
};

struct MetricRow {
  std::string metric;
  std::string scope;  // "trial<i>" or "mean"
  double value = 0.0;
  double stderr_ = 0.0;
  std::size_t n_trials = 1;
};

struct RunResult {
  std::vector<MetricRow> rows;
  std::vector<TrialMetrics> trials;
  double wall_seconds = 0.0;

  // Aggregate value of a metric; throws if absent.
  double mean(const std::string& metric) const {
    for (const auto& r : rows)
      if (r.metric == metric && r.scope == "mean") return r.value;
    throw Error("no metric '" + metric + "'");
  }
};

inline void write_metrics_csv(std::ostream& os, const std::vector<MetricRow>& rows) {
  os << "metric,scope,value,stderr,n_trials\n" << std::setprecision(17);
  for (const auto& r : rows) os << r.metric << ',' << r.scope << ',' << r.value << ',' << r.stderr_ << ',' << r.n_trials << '\n';
}

namespace detail {

struct TrialContext {
  const ExperimentConfig& cfg;
  std::size_t trial;
  std::uint64_t seed;
  fs::path dir;
  std::ostream* log;
  std::size_t iterations_run = 0;
};

inline void write_text_atomic(const fs::path& path, const std::string& text) {
  write_file_atomic(path, [&](std::ostream& os) { os << text; }, false);
}

inline StudentDataGen make_generator(const StudentGenSpec& g, const Matrix& train_inputs) {
  if (g.uniform) return UniformBox{g.lower, g.upper};
  return PerturbTrain{std::make_shared<const Matrix>(train_inputs), g.sigma};
}

inline void log_line(const TrialContext& t, const std::string& msg) {
  if (t.log) *t.log << "[" << t.cfg.label << " trial " << t.trial << "] " << msg << std::endl;
}

// The trained objects of one trial, whatever the method.
struct Trained {
  std::optional<ParamVector> plugin;    // sgd
  std::optional<PosteriorEnsemble> ensemble;  // sgld, hmc, distill teacher
  std::optional<ParamVector> student;   // distill
  std::vector<HistoryRow> history;
  double acceptance_rate = -1.0;
};

inline Trained train(TrialContext& t, const Dataset& train_set) {
  const auto& cfg = t.cfg;
  ChainConfig chain = cfg.chain;
  chain.seed = t.seed;
  Trained out;
  switch (cfg.method) {
    case Method::Sgd: {
      log_line(t, describe(ChainKind::Sgd, chain));
      auto r = run_chain(ChainKind::Sgd, cfg.teacher_spec, train_set, chain, cfg.noise);
      out.plugin = std::move(r.final_params);
      t.iterations_run = chain.iterations;
      break;
    }
    case Method::Sgld: {
      log_line(t, describe(ChainKind::Sgld, chain));
      auto r = run_chain(ChainKind::Sgld, cfg.teacher_spec, train_set, chain, cfg.noise);
      out.ensemble = std::move(r.ensemble);
      t.iterations_run = chain.iterations;
      break;
    }
    case Method::Hmc: {
      log_line(t, "hmc");
      auto r = hmc_posterior(cfg.teacher_spec, train_set, chain.prior_precision, cfg.noise, cfg.hmc, t.seed,
                             chain.init_scale);
      out.ensemble = std::move(r.ensemble);
      out.acceptance_rate = r.acceptance_rate;
      t.iterations_run = cfg.hmc.burn_in + cfg.hmc.n_samples * cfg.hmc.thin;
      break;
    }
    case Method::Distill: {
      const auto gen = make_generator(cfg.gen, train_set.inputs);
      if (cfg.distill_mode == DistillMode::Joint) {
        DistillConfig dc;
        dc.teacher = chain;
        dc.student = cfg.student;
        dc.gen = gen;
        dc.iterations = chain.iterations;
        dc.seed = t.seed;
        dc.history_every = cfg.history_every;
        for (const auto& w : dc.validate()) log_line(t, "warning: " + w);
        log_line(t, "distill (joint) " + describe(ChainKind::Sgld, chain));
        auto r = run_distilled_sgld(cfg.teacher_spec, cfg.student_spec, train_set, dc, cfg.noise);
        out.ensemble = std::move(r.teacher_ensemble);
        out.student = std::move(r.student);
        out.history = std::move(r.history);
        t.iterations_run = chain.iterations;
      } else {
        log_line(t, "distill (from ensemble) " + describe(ChainKind::Sgld, chain));
        auto r = run_chain(ChainKind::Sgld, cfg.teacher_spec, train_set, chain, cfg.noise);
        out.ensemble = std::move(r.ensemble);
        out.student = distill_from_ensemble(*out.ensemble, cfg.student_spec, gen, cfg.student, cfg.student_iterations,
                                            t.seed, cfg.noise, &out.history, cfg.history_every);
        t.iterations_run = chain.iterations + cfg.student_iterations;
      }
      break;
    }
  }
  return out;
}

inline Predictor primary_predictor(const ExperimentConfig& cfg, const Trained& tr) {
  if (tr.student) return Predictor::student(cfg.student_spec, *tr.student);
  if (tr.plugin) return Predictor::plugin(cfg.teacher_spec, *tr.plugin, cfg.noise);
  return Predictor::ensemble(*tr.ensemble, cfg.noise);
}

inline void save_models(const TrialContext& t, const Trained& tr) {
  if (!t.cfg.save_checkpoints) return;
  if (tr.plugin) save_params(t.dir / "model.bdk", t.cfg.teacher_spec, *tr.plugin);
  if (tr.student) save_params(t.dir / "student.bdk", t.cfg.student_spec, *tr.student);
  if (tr.ensemble) save_ensemble(t.dir / "ensemble.bdke", tr.ensemble->spec, tr.ensemble->samples);
  if (!tr.history.empty())
    write_file_atomic(t.dir / "history.csv", [&](std::ostream& os) { write_history_csv(os, tr.history); }, false);
}

inline void save_grid(const fs::path& csv, const Grid2D& g) {
  write_file_atomic(csv, [&](std::ostream& os) { write_grid_csv(os, g); }, false);
  write_file_atomic(grid_metadata_path(csv), [&](std::ostream& os) { write_grid_metadata(os, g.geometry); }, false);
}

inline void run_toy2d(TrialContext& t, TrialMetrics& m) {
  const auto& cfg = t.cfg;
  const Dataset data = gen_toy2d(cfg.data_seed);
  const Trained tr = train(t, data);
  save_models(t, tr);
  std::optional<Grid2D> reference;
  if (!cfg.reference_grid.empty()) reference = read_grid_csv(cfg.reference_grid);

  auto score = [&](const std::string& prefix, const Predictor& p, const fs::path& grid_csv) {
    const Grid2D g = predictive_grid(p, cfg.grid);
    save_grid(grid_csv, g);
    m.add(prefix + "misclass_rate", misclass_rate(p, data).value);
    if (reference) m.add(prefix + "grid_kl", kl_grid(*reference, g));
  };
  score("", primary_predictor(cfg, tr), t.dir / "grid.csv");
  const MlpSpec& spec = tr.student ? cfg.student_spec : cfg.teacher_spec;
  m.add("num_params", static_cast<double>(num_params(spec)));
  m.add("num_weights", static_cast<double>(num_weights(spec)));
  if (tr.ensemble) m.add(tr.student ? "teacher_ensemble_size" : "ensemble_size", static_cast<double>(tr.ensemble->size()));
  if (tr.student) score("teacher_", Predictor::ensemble(*tr.ensemble), t.dir / "teacher_grid.csv");
  if (tr.acceptance_rate >= 0.0) m.add("acceptance_rate", tr.acceptance_rate);
}

inline void run_toy1d(TrialContext& t, TrialMetrics& m) {
  const auto& cfg = t.cfg;
  const Dataset data = gen_toy1d(cfg.data_seed);
  const Trained tr = train(t, data);
  save_models(t, tr);
  Matrix xs(cfg.band_points, 1);
  for (std::size_t i = 0; i < cfg.band_points; ++i)
    xs(i, 0) = cfg.band_lo + (cfg.band_hi - cfg.band_lo) * static_cast<double>(i) / static_cast<double>(cfg.band_points - 1);
  const Matrix probes = Matrix::from_rows({{0.0}, {-cfg.probe_far}, {cfg.probe_far}});
  const double noise_sd = std::sqrt(cfg.noise->variance());

  auto score = [&](const std::string& prefix, const Predictor& p, const fs::path& band_csv) {
    const auto band = predict_reg(p, xs);
    write_file_atomic(band_csv, [&](std::ostream& os) {
      os << "x,mean,std\n" << std::setprecision(17);
      for (std::size_t i = 0; i < band.size(); ++i) os << xs(i, 0) << ',' << band[i].mean << ',' << band[i].stddev << '\n';
    }, false);
    const auto pr = predict_reg(p, probes);
    double dev = 0.0;
    for (const auto& b : band) dev = std::max(dev, std::abs(b.stddev - noise_sd));
    m.add(prefix + "std_center", pr[0].stddev);
    m.add(prefix + "std_far_neg", pr[1].stddev);
    m.add(prefix + "std_far_pos", pr[2].stddev);
    m.add(prefix + "std_far_ratio", std::min(pr[1].stddev, pr[2].stddev) / pr[0].stddev);
    m.add(prefix + "std_max_dev_from_noise", dev);
    m.add(prefix + "train_rmse", rmse(p, data).value);
    m.add(prefix + "train_loglik", test_loglik_reg(p, data).value);
  };
  score("", primary_predictor(cfg, tr), t.dir / "band.csv");
  if (tr.student) score("teacher_", Predictor::ensemble(*tr.ensemble, cfg.noise), t.dir / "teacher_band.csv");
  if (tr.ensemble) m.add(tr.student ? "teacher_ensemble_size" : "ensemble_size", static_cast<double>(tr.ensemble->size()));
  if (tr.acceptance_rate >= 0.0) m.add("acceptance_rate", tr.acceptance_rate);
}

inline void run_boston(TrialContext& t, TrialMetrics& m) {
  const auto& cfg = t.cfg;
  RegressionSplit split{cfg.train_n, cfg.test_n, t.seed, true, cfg.standardize_targets};
  const TrainTest tt = load_csv_regression(cfg.csv_path, cfg.target_column, split);
  const Trained tr = train(t, tt.train);
  save_models(t, tr);
  // Back to original target units.
  const double sy = cfg.standardize_targets ? tt.train.target_stats.stddev[0] : 1.0;
  auto score = [&](const std::string& prefix, const Predictor& p) {
    m.add(prefix + "test_loglik", test_loglik_reg(p, tt.test).value - std::log(sy));
    m.add(prefix + "test_rmse", rmse(p, tt.test).value * sy);
  };
  score("", primary_predictor(cfg, tr));
  if (tr.student) score("teacher_", Predictor::ensemble(*tr.ensemble, cfg.noise));
  if (tr.ensemble) m.add(tr.student ? "teacher_ensemble_size" : "ensemble_size", static_cast<double>(tr.ensemble->size()));
}

inline void run_mnist(TrialContext& t, TrialMetrics& m) {
  const auto& cfg = t.cfg;
  MnistOptions opt{cfg.subset, cfg.train_n, cfg.valid_n, cfg.split_seed};
  auto split = load_mnist_idx(cfg.images, cfg.labels, opt);
  const Dataset test = cfg.test_images.empty() ? std::move(split.valid) : load_mnist_all(cfg.test_images, cfg.test_labels);
  const Trained tr = train(t, split.train);
  save_models(t, tr);
  auto score = [&](const std::string& prefix, const Predictor& p) {
    m.add(prefix + "test_error_pct", 100.0 * misclass_rate(p, test).value);
    m.add(prefix + "test_loglik", test_loglik_class(p, test).value);
  };
  score("", primary_predictor(cfg, tr));
  if (tr.student) score("teacher_", Predictor::ensemble(*tr.ensemble));
  if (tr.ensemble) m.add(tr.student ? "teacher_ensemble_size" : "ensemble_size", static_cast<double>(tr.ensemble->size()));
  m.add("train_n", static_cast<double>(split.train.size()));
  m.add("test_n", static_cast<double>(test.size()));
}

// y_i ~ N(b, 1/lambda_n) with b ~ N(0, 1/lambda); a 1-1 network on all-zero
// inputs sees only its bias.
inline Dataset conjugate_data(const ExperimentConfig& cfg) {
  auto rng = make_engine(cfg.data_seed, Stream::DataGen);
  std::normal_distribution<double> nd(cfg.conj_true_mean, cfg.conj_noise_sd);
  Dataset d;
  d.inputs = Matrix(cfg.conj_n, 1);
  for (std::size_t i = 0; i < cfg.conj_n; ++i) d.targets.push_back(nd(rng));
  return d;
}

inline void run_conjugate(TrialContext& t, TrialMetrics& m) {
  const auto& cfg = t.cfg;
  const Dataset data = conjugate_data(cfg);
  const Trained tr = train(t, data);
  save_models(t, tr);
  const double lambda = cfg.chain.prior_precision, lambda_n = cfg.noise->precision;
  const double prec = lambda + static_cast<double>(data.size()) * lambda_n;
  double sum_y = 0.0;
  for (double y : data.targets) sum_y += y;
  const double m_star = lambda_n * sum_y / prec, v_star = 1.0 / prec;
  std::vector<double> b;
  if (tr.plugin) {
    b.push_back((*tr.plugin)[1]);
  } else {
    for (const auto& s : tr.ensemble->samples) b.push_back(s[1]);
  }
  const double n = static_cast<double>(b.size());
  double mean = 0.0;
  for (double v : b) mean += v / n;
  double ss = 0.0;
  for (double v : b) ss += (v - mean) * (v - mean);
  const double var = b.size() > 1 ? ss / (n - 1.0) : 0.0;
  // Batch-means standard error (autocorrelated chain).
  double se = 0.0;
  if (b.size() >= 100) {
    const std::size_t batches = 50, len = b.size() / batches;
    std::vector<double> bm(batches, 0.0);
    for (std::size_t k = 0; k < batches; ++k)
      for (std::size_t i = 0; i < len; ++i) bm[k] += b[k * len + i] / static_cast<double>(len);
    se = aggregate("se", bm).standard_error;
  }
  m.add("true_mean", m_star);
  m.add("true_var", v_star);
  m.add("sample_mean", mean);
  m.add("sample_var", var);
  m.add("mean_stderr", se);
  m.add("mean_z", se > 0.0 ? std::abs(mean - m_star) / se : 0.0);
  m.add("var_ratio", var / v_star);
  if (tr.acceptance_rate >= 0.0) m.add("acceptance_rate", tr.acceptance_rate);
}

inline std::string metadata_text(const ExperimentConfig& cfg, const std::vector<std::uint64_t>& seeds) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "label=" << cfg.label << "\nexperiment=" << to_string(cfg.experiment) << "\nmethod=" << to_string(cfg.method)
     << "\nsource=" << cfg.source << "\nscale=" << (cfg.scale == "full" ? "full scale" : "desk scale")
     << "\nmaster_seed=" << cfg.seed << "\nn_trials=" << cfg.n_trials << "\ntrial_seeds=";
  for (std::size_t i = 0; i < seeds.size(); ++i) os << (i ? "," : "") << seeds[i];
  os << "\nteacher=" << cfg.teacher_spec.to_string() << " (" << to_string(cfg.teacher_spec.head.kind) << ")"
     << "\nteacher_num_params=" << num_params(cfg.teacher_spec) << "\nteacher_num_weights=" << num_weights(cfg.teacher_spec);
  if (cfg.method == Method::Distill)
    os << "\nstudent=" << cfg.student_spec.to_string() << " (" << to_string(cfg.student_spec.head.kind) << ")"
       << "\nstudent_num_params=" << num_params(cfg.student_spec) << "\nstudent_num_weights=" << num_weights(cfg.student_spec)
       << "\ndistill_mode=" << (cfg.distill_mode == DistillMode::Joint ? "joint" : "ensemble");
  if (cfg.noise) os << "\nnoise_precision=" << cfg.noise->precision;
  os << "\nminibatch=uniform with replacement";
  switch (cfg.experiment) {
    case ExperimentKind::Toy2d:
      os << "\ngrid=" << cfg.grid.nx << "x" << cfg.grid.ny << " over [" << cfg.grid.x_min << "," << cfg.grid.x_max
         << "]x[" << cfg.grid.y_min << "," << cfg.grid.y_max << "]"
         << "\nkl_direction=KL(reference || method)\nkl_averaging=mean over cells\nkl_epsilon=" << kKlEpsilon
         << "\nreference_grid=" << cfg.reference_grid.string() << "\nmisclass_rate_on=training points";
      break;
    case ExperimentKind::Toy1d:
      os << "\nband=" << cfg.band_points << " points over [" << cfg.band_lo << "," << cfg.band_hi << "]"
         << "\nprobes=0,-" << cfg.probe_far << "," << cfg.probe_far;
      break;
    case ExperimentKind::Boston:
      os << "\ninputs=standardized with train statistics\ntargets="
         << (cfg.standardize_targets ? "standardized; loglik corrected by -ln(std_y), rmse scaled by std_y" : "raw")
         << "\nloglik=exact mixture density incl. 0.5 ln 2pi";
      break;
    case ExperimentKind::Mnist:
      os << "\npixel_scale=1/" << kMnistPixelScale << "\ntest_set="
         << (cfg.test_images.empty() ? "held-out split of the training file" : cfg.test_images.string());
      break;
    case ExperimentKind::ConjugateCheck:
      os << "\nmodel=1-1 network on zero inputs; bias posterior is conjugate Gaussian";
      break;
  }
  os << '\n';
  return os.str();
}

}  // namespace detail

// Runs every trial, writes artifacts under `out`, and returns the metric rows.
// Trial i uses seed derive_seed(cfg.seed, i).
inline RunResult run_experiment(const ExperimentConfig& cfg, const fs::path& out, std::ostream* log = nullptr,
                                const std::string& resolved_config = {}) {
  fs::create_directories(out);
  RunResult result;
  std::vector<std::uint64_t> seeds;
  const auto start = std::chrono::steady_clock::now();
  std::size_t total_iterations = 0;
  for (std::size_t i = 0; i < cfg.n_trials; ++i) {
    seeds.push_back(derive_seed(cfg.seed, i));
    detail::TrialContext t{cfg, i, seeds.back(), cfg.n_trials > 1 ? out / ("trial" + std::to_string(i)) : out, log};
    fs::create_directories(t.dir);
    TrialMetrics m;
    switch (cfg.experiment) {
      case ExperimentKind::Toy2d: detail::run_toy2d(t, m); break;
      case ExperimentKind::Toy1d: detail::run_toy1d(t, m); break;
      case ExperimentKind::Boston: detail::run_boston(t, m); break;
      case ExperimentKind::Mnist: detail::run_mnist(t, m); break;
      case ExperimentKind::ConjugateCheck: detail::run_conjugate(t, m); break;
    }
    total_iterations += t.iterations_run;
    result.trials.push_back(std::move(m));
  }
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  const auto& first = result.trials.front().values;
  for (std::size_t k = 0; k < first.size(); ++k) {
    std::vector<double> vals;
    for (std::size_t i = 0; i < result.trials.size(); ++i) {
      const auto& [name, v] = result.trials[i].values.at(k);
      vals.push_back(v);
      result.rows.push_back({name, "trial" + std::to_string(i), v, 0.0, 1});
    }
    const auto agg = aggregate(first[k].first, vals);
    result.rows.push_back({agg.name, "mean", agg.value, agg.standard_error, agg.n_trials});
  }

  write_file_atomic(out / "metrics.csv", [&](std::ostream& os) { write_metrics_csv(os, result.rows); }, false);
  detail::write_text_atomic(out / "metadata.txt", detail::metadata_text(cfg, seeds));
  if (!resolved_config.empty()) detail::write_text_atomic(out / "config.resolved.ini", resolved_config);
  std::ostringstream timing;
  timing << std::setprecision(6) << "wall_seconds=" << result.wall_seconds << "\niterations=" << total_iterations
         << "\nms_per_iteration=" << (total_iterations ? 1e3 * result.wall_seconds / static_cast<double>(total_iterations) : 0.0)
         << '\n';
  detail::write_text_atomic(out / "timing.txt", timing.str());
  return result;
}

// Parses `config` (after overrides) and runs it, echoing the resolved config.
inline RunResult run_experiment(const Config& config, const fs::path& out, std::ostream* log = nullptr,
                                const fs::path& data_dir = default_data_dir()) {
  const ExperimentConfig cfg = parse_experiment_config(config, data_dir);
  return run_experiment(cfg, out, log, config.dump());
}

}  // namespace bdk
