#pragma once

// Closed-loop decoder training by dataset aggregation:
//
//   for each repeat: sample encoder A, calibrate noise to the target SNR,
//   start from the zero decoder, then for k = 1..K
//     reset the effector, draw a goal, and step while not acquired:
//       oracle o -> user intent -> neural n -> decoded velocity
//       -> assisted action -> integrate; aggregate (z, o)
//     update the decoder with the configured rule.

#include "bcisim/arm.hpp"
#include "bcisim/decoder.hpp"
#include "bcisim/encoder.hpp"
#include "bcisim/learner.hpp"
#include "bcisim/oracle.hpp"
#include "bcisim/random.hpp"
#include "bcisim/stats.hpp"

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace bcisim {

enum class Task { cursor, arm };

inline std::string to_string(Task t) { return t == Task::cursor ? "cursor" : "arm"; }

/// Synthetic stationary stream for regret-rate measurements: rounds of
/// `batch` pairs z = [x; 1], x ~ N(0, I), o = W* z + N(0, noise_sigma^2 I).
struct StreamConfig {
  int n_features = 5;  // not counting the constant
  int d_out = 2;
  int batch = 20;
  double noise_sigma = 1.0;
  int K = 4096;
  int repeats = 20;
  double reg = 0.01;
  double eta0 = 0.025;
  double lambda = 0.9;
};

struct ExperimentConfig {
  Task task = Task::cursor;
  Eigen::Index n_neurons = 10;
  Eigen::Index d_dof = 3;
  int K = 50;
  int T_max = 200;
  int n_repeats = 100;
  std::uint64_t base_seed = 1;
  UpdateRule update_rule;
  AssistSpec assist;
  double snr = 1.0;
  std::optional<double> noise_sigma;  // fixed encoder noise; calibrated from snr when unset
  int calibration_samples = 1000;
  EncoderSampling encoder_sampling = EncoderSampling::gaussian;
  IntentMismatchSpec mismatch;
  bool continue_from_end = false;

  // cursor task
  double workspace_half_width = 1.0;
  double speed = 0.1;
  double cursor_epsilon = 0.05;

  // arm task
  ArmTaskParams arm;
  ArmWorkspace arm_workspace;
  std::string arm_file;  // empty: built-in 26-DOF model

  // analyses
  bool correlation = false;
  double correlation_reg = 1e-6;
  bool keep_traces = false;

  /// Right-multiplies every sampled encoder matrix (A <- A M). Library hook
  /// for mismatch-equivalence checks; not exposed in config files.
  std::optional<Matrix> encoder_transform;

  /// Called after each reach's decoder update, on the repeat's thread.
  std::function<void(int repeat, int k, const AggregatedDataset&, const Learner&)> on_reach_end;

  int threads = 1;

  void validate() const {
    if (K < 1 || T_max < 1 || n_repeats < 1) throw std::invalid_argument("K, T_max and n_repeats must be >= 1");
    if (n_neurons < 1 || d_dof < 1) throw std::invalid_argument("n_neurons and d_dof must be >= 1");
    if (!(snr > 0.0)) throw std::invalid_argument("snr must be positive");
    if (noise_sigma && !(*noise_sigma >= 0.0)) throw std::invalid_argument("noise_sigma must be >= 0");
    if (calibration_samples < 1) throw std::invalid_argument("calibration_samples must be >= 1");
    if (!(speed > 0.0) || !(cursor_epsilon > 0.0) || !(workspace_half_width >= 0.0)) {
      throw std::invalid_argument("cursor speed/epsilon must be positive");
    }
    if (!(arm.mu > 0.0) || !(arm.max_step > 0.0) || !(arm.delta > 0.0) || !(arm.acquire_cost > 0.0)) {
      throw std::invalid_argument("arm mu/max_step/delta/epsilon must be positive");
    }
    if (encoder_transform && (encoder_transform->rows() != d_dof || encoder_transform->cols() != d_dof)) {
      throw std::invalid_argument("encoder transform must be d_dof x d_dof");
    }
    update_rule.validate();
    assist.validate();
    mismatch.validate(d_dof);
  }
};

// ---------------------------------------------------------------------------
// Task context: oracle, goals, distance, start pose for one task
// ---------------------------------------------------------------------------

class TaskContext {
 public:
  explicit TaskContext(const ExperimentConfig& cfg) : cfg_(cfg) {
    if (cfg.task == Task::arm) {
      arm_ = std::make_shared<const ArmModel>(cfg.arm_file.empty() ? default_arm() : ArmModel::load(cfg.arm_file));
      if (arm_->d_dof() != cfg.d_dof) throw std::invalid_argument("d_dof must equal the arm's joint count");
      limits_ = JointLimits{arm_->lower_limits(), arm_->upper_limits()};
    } else {
      const Vector h = Vector::Constant(cfg.d_dof, cfg.workspace_half_width);
      cursor_ws_ = CursorWorkspace{-h, h};
      limits_ = JointLimits{-h, h};  // the cursor cannot leave the workspace
    }
  }

  Task task() const { return cfg_.task; }
  const ArmModel* arm() const { return arm_.get(); }
  const JointLimits* limits() const { return &limits_; }

  EffectorState start_state() const {
    return EffectorState::at_rest(arm_ ? arm_->rest_pose() : Vector::Zero(cfg_.d_dof));
  }

  GoalSpec sample_goal(Rng& rng) const {
    if (arm_) {
      ArmWorkspace ws = cfg_.arm_workspace;
      ws.horizon = cfg_.T_max;
      return sample_arm_goal(rng, *arm_, ws, cfg_.arm);
    }
    return sample_cursor_goal(rng, cursor_ws_, cfg_.cursor_epsilon);
  }

  /// Goal used only to draw calibration oracle actions (no reachability check).
  GoalSpec sample_calibration_goal(Rng& rng) const {
    if (arm_) {
      for (int attempt = 0; attempt < cfg_.arm_workspace.max_attempts; ++attempt) {
        GoalSpec g = sample_arm_goal_candidate(rng, *arm_, cfg_.arm_workspace, cfg_.arm.acquire_cost);
        const double r = g.target.norm();
        if (r >= cfg_.arm_workspace.min_radius && r <= cfg_.arm_workspace.max_radius) return g;
      }
      throw Error("unreachable workspace");
    }
    return sample_cursor_goal(rng, cursor_ws_, cfg_.cursor_epsilon);
  }

  Vector oracle(const EffectorState& s, const GoalSpec& g) const {
    if (arm_) return arm_oracle(*arm_, s.position, g, cfg_.arm, s.dt);
    return cursor_oracle(s, g, cfg_.speed);
  }

  /// Cursor-to-goal distance, or the grasp-phase cost for the arm (+inf
  /// while still in the reach phase).
  double distance(const EffectorState& s, const GoalSpec& g) const {
    if (arm_) return arm_task_distance(arm_objective(*arm_, s.position, g, cfg_.arm));
    return (g.target - s.position).norm();
  }

  bool acquired(const EffectorState& s, const GoalSpec& g) const {
    if (arm_) return distance(s, g) < cfg_.arm.acquire_cost;
    return distance(s, g) <= g.epsilon;
  }

 private:
  ExperimentConfig cfg_;
  std::shared_ptr<const ArmModel> arm_;
  JointLimits limits_;
  CursorWorkspace cursor_ws_;
};

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

struct ReachMetrics {
  int repeat = 0;
  int k = 0;
  double sse = 0.0;
  double mse = 0.0;
  int steps = 0;
  bool acquired = false;
  double running_regret = 0.0;
  double gamma_k = 0.0;
};

struct TraceRow {
  int repeat = 0;
  int k = 0;
  int t = 0;
  Vector position;
  Vector velocity;
  Vector oracle;
  Vector decoded;
};

struct CorrelationRow {
  int repeat = 0;
  int k = 0;
  int dof = 0;
  std::optional<double> r;  // nullopt: a column is constant
};

struct RepeatResult {
  int repeat = 0;
  std::optional<std::string> error;
  std::vector<ReachMetrics> metrics;
  RegretReport regret;
  std::vector<CorrelationRow> correlation;
  std::vector<TraceRow> traces;
  EncoderModel encoder;
  DecoderParams final_params;
  std::vector<double> step_losses;
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<RepeatResult> repeats;

  bool all_completed() const {
    for (const auto& r : repeats) {
      if (r.error) return false;
    }
    return true;
  }
};

// ---------------------------------------------------------------------------
// Encoder recovery analysis
// ---------------------------------------------------------------------------

/// Pearson correlation across neurons between each column of an estimated
/// and the true encoding matrix.
inline std::vector<std::optional<double>> column_correlations(const Matrix& estimate, const Matrix& truth) {
  std::vector<std::optional<double>> out;
  for (Eigen::Index d = 0; d < truth.cols(); ++d) {
    const Vector a = estimate.col(d);
    const Vector b = truth.col(d);
    out.push_back(stats::pearson(std::span<const double>(a.data(), static_cast<std::size_t>(a.size())),
                                 std::span<const double>(b.data(), static_cast<std::size_t>(b.size()))));
  }
  return out;
}

/// Regression of neural activity on oracle actions:
///   A_hat = argmin sum |A o - n|^2 + reg |A|^2.
class EncoderRegression {
 public:
  EncoderRegression(Eigen::Index n_neurons, Eigen::Index d_dof)
      : oo_(Matrix::Zero(d_dof, d_dof)), no_(Matrix::Zero(n_neurons, d_dof)) {}

  void add(const Vector& neural, const Vector& o) {
    oo_.noalias() += o * o.transpose();
    no_.noalias() += neural * o.transpose();
    ++count_;
  }

  std::size_t count() const { return count_; }

  Matrix estimate(double reg) const {
    Matrix H = oo_;
    H.diagonal().array() += reg;
    // A_hat H = no  <=>  H A_hat^T = no^T
    return H.ldlt().solve(no_.transpose()).transpose();
  }

 private:
  Matrix oo_;
  Matrix no_;
  std::size_t count_ = 0;
};

/// Estimates A from every aggregated pair (neural part of each covariate
/// against its oracle action) and correlates it with the true matrix.
inline std::vector<std::optional<double>> encoder_correlation(const AggregatedDataset& dataset, const Matrix& true_A,
                                                              double reg) {
  if (dataset.size() < 2) throw std::invalid_argument("encoder correlation needs >= 2 pairs");
  EncoderRegression fit(true_A.rows(), true_A.cols());
  for (const auto& p : dataset.pairs()) fit.add(p.z.head(true_A.rows()), p.o);
  return column_correlations(fit.estimate(reg), true_A);
}

// ---------------------------------------------------------------------------
// Reach and experiment loops
// ---------------------------------------------------------------------------

struct ReachStreams {
  Rng neural;
  Rng assist;
  Rng mismatch;
};

struct ReachOutcome {
  EffectorState end_state;
  ReachMetrics metrics;
  std::vector<double> step_losses;
  std::vector<TraceRow> trace;
};

/// Runs one reach of the closed loop, appending every (z, o) pair to the
/// dataset (which must already have begun reach k) and feeding the learner.
/// Step loss is |decoded velocity - noise-free oracle|^2.
inline ReachOutcome run_reach(const ExperimentConfig& cfg, const TaskContext& ctx, const EncoderModel& encoder,
                              Learner& learner, AggregatedDataset& dataset, const GoalSpec& goal,
                              EffectorState state, int repeat, int k, ReachStreams& streams,
                              EncoderRegression* encoder_fit = nullptr) {
  ReachOutcome out;
  out.metrics.repeat = repeat;
  out.metrics.k = k;
  int t = 0;
  while (!ctx.acquired(state, goal) && t < cfg.T_max) {
    const Vector o = ctx.oracle(state, goal);
    const Vector intent = apply_intent_mismatch(cfg.mismatch, o, streams.mismatch);
    const Vector n = emit(encoder, intent, streams.neural);
    const DecoderParams& params = learner.params();
    const Vector decoded = decoded_velocity(params, n, state);
    const Vector executed = blend_action(cfg.assist, k, o, decoded, streams.assist);

    const double step_loss = (decoded - o).squaredNorm();
    out.step_losses.push_back(step_loss);
    out.metrics.sse += step_loss;
    if (cfg.keep_traces) out.trace.push_back({repeat, k, t, state.position, state.velocity, o, decoded});

    Vector z = covariate(n, state);
    learner.observe(z, o);
    if (encoder_fit != nullptr) encoder_fit->add(n, o);
    dataset.append(std::move(z), o, t);

    state = advance(state, executed, ctx.limits());
    if (!state.finite()) throw Error("effector state diverged");
    ++t;
  }
  out.metrics.steps = t;
  out.metrics.mse = t > 0 ? out.metrics.sse / t : 0.0;
  out.metrics.acquired = ctx.acquired(state, goal);
  out.end_state = state;
  return out;
}

/// Fresh encoder for a repeat: sampled, optionally transformed, and
/// calibrated on oracle actions from the start pose toward random goals.
inline EncoderModel make_encoder(const ExperimentConfig& cfg, const TaskContext& ctx, int repeat) {
  Rng enc_rng = make_stream({cfg.base_seed, static_cast<std::uint64_t>(repeat), 0, Purpose::encoder});
  EncoderModel enc = sample_encoder(enc_rng, cfg.n_neurons, cfg.d_dof, cfg.encoder_sampling);
  if (cfg.encoder_transform) enc.A = enc.A * *cfg.encoder_transform;
  if (cfg.noise_sigma) {
    enc.noise_sigma = *cfg.noise_sigma;
    return enc;
  }
  Rng cal_rng = make_stream({cfg.base_seed, static_cast<std::uint64_t>(repeat), 0, Purpose::calibration});
  const EffectorState start = ctx.start_state();
  std::vector<Vector> samples;
  samples.reserve(static_cast<std::size_t>(cfg.calibration_samples));
  for (int i = 0; i < cfg.calibration_samples; ++i) {
    samples.push_back(apply_intent_transform(cfg.mismatch, ctx.oracle(start, ctx.sample_calibration_goal(cal_rng))));
  }
  return calibrate_snr(std::move(enc), samples, cfg.snr);
}

/// Everything one repeat does; throws on failure.
inline RepeatResult run_repeat(const ExperimentConfig& cfg, const TaskContext& ctx, int repeat) {
  RepeatResult res;
  res.repeat = repeat;
  res.encoder = make_encoder(cfg, ctx, repeat);

  Learner learner(cfg.update_rule, cfg.n_neurons, cfg.d_dof);
  AggregatedDataset dataset;
  std::optional<EncoderRegression> encoder_fit;
  if (cfg.correlation) encoder_fit.emplace(cfg.n_neurons, cfg.d_dof);

  const auto rep = static_cast<std::uint64_t>(repeat);
  EffectorState state = ctx.start_state();
  double cumulative = 0.0;
  for (int k = 1; k <= cfg.K; ++k) {
    const auto reach = static_cast<std::uint64_t>(k);
    if (!cfg.continue_from_end || k == 1) state = ctx.start_state();
    Rng goal_rng = make_stream({cfg.base_seed, rep, reach, Purpose::goal});
    const GoalSpec goal = ctx.sample_goal(goal_rng);
    ReachStreams streams{make_stream({cfg.base_seed, rep, reach, Purpose::neural}),
                         make_stream({cfg.base_seed, rep, reach, Purpose::assist}),
                         make_stream({cfg.base_seed, rep, reach, Purpose::mismatch})};

    dataset.begin_reach(k);
    ReachOutcome outcome = run_reach(cfg, ctx, res.encoder, learner, dataset, goal, state, repeat, k, streams,
                                     encoder_fit ? &*encoder_fit : nullptr);
    state = outcome.end_state;
    learner.end_reach(dataset, k);
    if (cfg.on_reach_end) cfg.on_reach_end(repeat, k, dataset, learner);

    cumulative += outcome.metrics.sse;
    if (!dataset.empty()) {
      const Matrix hindsight = learner.aggregate().solve(cfg.update_rule.reg);
      outcome.metrics.running_regret = cumulative - learner.aggregate().loss_of(hindsight);
    } else {
      outcome.metrics.running_regret = 0.0;
    }
    outcome.metrics.gamma_k = outcome.metrics.running_regret / k;

    if (encoder_fit && encoder_fit->count() >= 2) {
      const auto corr = column_correlations(encoder_fit->estimate(cfg.correlation_reg), res.encoder.A);
      for (std::size_t d = 0; d < corr.size(); ++d) res.correlation.push_back({repeat, k, static_cast<int>(d), corr[d]});
    }

    res.metrics.push_back(outcome.metrics);
    res.step_losses.insert(res.step_losses.end(), outcome.step_losses.begin(), outcome.step_losses.end());
    for (auto& row : outcome.trace) res.traces.push_back(std::move(row));
  }
  res.final_params = learner.params();
  if (!dataset.empty()) {
    res.regret = regret(res.step_losses, dataset, cfg.n_neurons + 1 + cfg.d_dof, cfg.d_dof, cfg.update_rule.reg);
  }
  return res;
}

/// Runs all repeats (in parallel up to cfg.threads). A repeat that throws is
/// recorded with its error and no metrics.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const TaskContext ctx(cfg);
  ExperimentResult result;
  result.config = cfg;
  result.repeats.resize(static_cast<std::size_t>(cfg.n_repeats));

  std::atomic<int> next{0};
  auto worker = [&] {
    for (int r = next++; r < cfg.n_repeats; r = next++) {
      auto& slot = result.repeats[static_cast<std::size_t>(r)];
      try {
        slot = run_repeat(cfg, ctx, r);
      } catch (const std::exception& e) {
        slot = RepeatResult{};
        slot.repeat = r;
        slot.error = e.what();
      }
    }
  };
  const int n_threads = std::clamp(cfg.threads, 1, cfg.n_repeats);
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Summaries
// ---------------------------------------------------------------------------

/// Per-repeat mean of `field` over reaches k in [first, last]; failed
/// repeats are skipped.
template <class Field>
std::vector<double> per_repeat_mean(const ExperimentResult& res, int first, int last, Field field) {
  std::vector<double> out;
  for (const auto& rep : res.repeats) {
    if (rep.error) continue;
    double s = 0.0;
    int n = 0;
    for (const auto& m : rep.metrics) {
      if (m.k >= first && m.k <= last) {
        s += field(m);
        ++n;
      }
    }
    if (n > 0) out.push_back(s / n);
  }
  return out;
}

/// Per-repeat mean SSE over the final `window` reaches.
inline std::vector<double> final_sse(const ExperimentResult& res, int window = 10) {
  const int K = res.config.K;
  return per_repeat_mean(res, std::max(1, K - window + 1), K, [](const ReachMetrics& m) { return m.sse; });
}

/// SSE of reach k across completed repeats.
inline std::vector<double> sse_at(const ExperimentResult& res, int k) {
  return per_repeat_mean(res, k, k, [](const ReachMetrics& m) { return m.sse; });
}

struct SummaryRow {
  int k = 0;
  int n = 0;
  double median_sse = 0.0;
  double mean_sse = 0.0;
  double se_sse = 0.0;
  double median_mse = 0.0;
  double mean_mse = 0.0;
  double mean_steps = 0.0;
  double acquired_fraction = 0.0;
};

inline std::vector<SummaryRow> summarize(const ExperimentResult& res) {
  std::vector<SummaryRow> rows;
  for (int k = 1; k <= res.config.K; ++k) {
    std::vector<double> sse, mse, steps, acq;
    for (const auto& rep : res.repeats) {
      if (rep.error) continue;
      for (const auto& m : rep.metrics) {
        if (m.k != k) continue;
        sse.push_back(m.sse);
        mse.push_back(m.mse);
        steps.push_back(m.steps);
        acq.push_back(m.acquired ? 1.0 : 0.0);
      }
    }
    SummaryRow row;
    row.k = k;
    row.n = static_cast<int>(sse.size());
    if (!sse.empty()) {
      row.median_sse = stats::median(sse);
      row.mean_sse = stats::mean(sse);
      row.se_sse = stats::standard_error(sse);
      row.median_mse = stats::median(mse);
      row.mean_mse = stats::mean(mse);
      row.mean_steps = stats::mean(steps);
      row.acquired_fraction = stats::mean(acq);
    }
    rows.push_back(row);
  }
  return rows;
}

/// For each DOF, the first reach at which the median (over repeats) encoder
/// correlation reaches `threshold`; K + 1 if it never does. Undefined
/// correlations count as failing the threshold.
inline std::vector<int> correlation_crossings(const ExperimentResult& res, double threshold) {
  const int K = res.config.K;
  const auto D = static_cast<int>(res.config.d_dof);
  std::vector<int> crossing(static_cast<std::size_t>(D), K + 1);
  for (int k = 1; k <= K; ++k) {
    std::vector<std::vector<double>> per_dof(static_cast<std::size_t>(D));
    for (const auto& rep : res.repeats) {
      if (rep.error) continue;
      for (const auto& row : rep.correlation) {
        if (row.k == k) per_dof[static_cast<std::size_t>(row.dof)].push_back(row.r.value_or(-2.0));
      }
    }
    for (int d = 0; d < D; ++d) {
      auto& c = crossing[static_cast<std::size_t>(d)];
      const auto& v = per_dof[static_cast<std::size_t>(d)];
      if (c == K + 1 && !v.empty() && stats::median(v) >= threshold) c = k;
    }
  }
  return crossing;
}

// ---------------------------------------------------------------------------
// Intention-noise sweep
// ---------------------------------------------------------------------------

struct SweepPoint {
  double fraction = 0.0;
  ExperimentResult result;
};

/// Re-runs the experiment with additive intention noise at each fraction,
/// sharing every seed. Loss stays measured against the noise-free oracle.
inline std::vector<SweepPoint> mismatch_sweep(const ExperimentConfig& cfg, const std::vector<double>& fractions) {
  std::vector<SweepPoint> out;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw std::invalid_argument("noise fractions must be >= 0");
    ExperimentConfig c = cfg;
    c.mismatch.mode = MismatchMode::additive_noise;
    c.mismatch.noise_fraction = f;
    out.push_back({f, run_experiment(c)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Regret rates on a stationary stream
// ---------------------------------------------------------------------------

struct RegretCurve {
  RuleKind rule = RuleKind::ftl;
  std::vector<int> K;                   // checkpoints 2^4 .. up to stream K
  std::vector<double> mean_regret;      // averaged over repeats
  std::vector<std::vector<double>> per_repeat;
};

inline std::vector<int> regret_checkpoints(int K) {
  std::vector<int> out;
  for (int k = 16; k <= K; k *= 2) out.push_back(k);
  return out;
}

/// Online run of one rule over a synthetic stream, recording regret at each
/// checkpoint against the hindsight ridge fit on the rounds seen so far.
inline std::vector<double> stream_regret(const StreamConfig& sc, RuleKind kind, std::uint64_t seed, int repeat) {
  const Eigen::Index p = sc.n_features + 1;
  const Eigen::Index D = sc.d_out;
  Rng rng = make_stream({seed, static_cast<std::uint64_t>(repeat), 0, Purpose::stream});
  Matrix W_true(D, p);
  for (Eigen::Index i = 0; i < D; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) W_true(i, j) = standard_normal(rng);
  }

  UpdateRule rule;
  rule.kind = kind;
  rule.reg = sc.reg;
  rule.eta0 = sc.eta0;
  rule.lambda = sc.lambda;
  rule.k_expected = sc.K;
  rule.validate();

  const std::vector<int> checkpoints = regret_checkpoints(sc.K);
  std::vector<double> out;
  RidgeAccumulator all(p, D);
  Matrix W = Matrix::Zero(D, p);
  double cumulative = 0.0;
  std::size_t next_cp = 0;
  std::vector<LabeledPair> round(static_cast<std::size_t>(sc.batch));
  for (int k = 1; k <= sc.K; ++k) {
    for (auto& pr : round) {
      pr.z.resize(p);
      for (Eigen::Index j = 0; j < p - 1; ++j) pr.z[j] = standard_normal(rng);
      pr.z[p - 1] = 1.0;
      pr.o = W_true * pr.z;
      for (Eigen::Index i = 0; i < D; ++i) pr.o[i] += sc.noise_sigma * standard_normal(rng);
      pr.reach = k;
    }
    const DatasetSlice slice(round);
    cumulative += total_loss(W, slice);
    all.add(slice);

    switch (kind) {
      case RuleKind::ogd: {
        const Matrix grad = ogd_gradient(W, slice, rule.reg / rule.k_expected);
        W -= rule.step_size(k) * grad;
        break;
      }
      case RuleKind::ma:
        W = (1.0 - rule.lambda) * W + rule.lambda * ridge_fit(slice, p, D, rule.reg);
        break;
      case RuleKind::ftl:
      case RuleKind::rls:
        W = all.solve(rule.reg);
        break;
    }
    if (!W.allFinite()) throw Error("divergence: reduce step size");

    if (next_cp < checkpoints.size() && k == checkpoints[next_cp]) {
      out.push_back(cumulative - all.loss_of(all.solve(rule.reg)));
      ++next_cp;
    }
  }
  return out;
}

inline RegretCurve regret_curve(const StreamConfig& sc, RuleKind kind, std::uint64_t seed) {
  RegretCurve c;
  c.rule = kind;
  c.K = regret_checkpoints(sc.K);
  c.mean_regret.assign(c.K.size(), 0.0);
  for (int r = 0; r < sc.repeats; ++r) {
    c.per_repeat.push_back(stream_regret(sc, kind, seed, r));
    for (std::size_t i = 0; i < c.K.size(); ++i) c.mean_regret[i] += c.per_repeat.back()[i] / sc.repeats;
  }
  return c;
}

struct RateFit {
  RuleKind rule = RuleKind::ftl;
  stats::LinearFit log_fit;    // regret vs ln K
  double sqrt_ratio_early = 0.0;  // regret / sqrt(K) at K = 2^8
  double sqrt_ratio_late = 0.0;   // ... at the last checkpoint
  double linear_ratio_prev = 0.0; // regret / K at the second-to-last checkpoint
  double linear_ratio_last = 0.0; // ... at the last checkpoint
};

inline RateFit fit_rates(const RegretCurve& c) {
  RateFit f;
  f.rule = c.rule;
  std::vector<double> logk;
  for (int k : c.K) logk.push_back(std::log(static_cast<double>(k)));
  f.log_fit = stats::fit_line(logk, c.mean_regret);
  auto at = [&](int k) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < c.K.size(); ++i) {
      if (c.K[i] == k) return i;
    }
    return std::nullopt;
  };
  const std::size_t last = c.K.size() - 1;
  if (auto i = at(256)) f.sqrt_ratio_early = c.mean_regret[*i] / std::sqrt(256.0);
  f.sqrt_ratio_late = c.mean_regret[last] / std::sqrt(static_cast<double>(c.K[last]));
  if (last >= 1) f.linear_ratio_prev = c.mean_regret[last - 1] / c.K[last - 1];
  f.linear_ratio_last = c.mean_regret[last] / c.K[last];
  return f;
}

}  // namespace bcisim
