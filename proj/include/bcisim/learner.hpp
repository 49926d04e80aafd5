#pragma once

// Dataset aggregation and decoder update rules for the linear-quadratic
// loss l(W, z, o) = |W z - o|^2 with W = [F_v | b_v | G_v].

#include "bcisim/decoder.hpp"
#include "bcisim/types.hpp"

#include <span>
#include <string>
#include <vector>

namespace bcisim {

struct LabeledPair {
  Vector z;  // covariate [n; 1; v]
  Vector o;  // oracle action
  int reach = 0;
  int step = 0;
};

using DatasetSlice = std::span<const LabeledPair>;

/// Append-only store of every (covariate, oracle action) pair, grouped by
/// reach in time order.
class AggregatedDataset {
 public:
  void begin_reach(int k) {
    if (!reach_ids_.empty() && k <= reach_ids_.back()) throw std::invalid_argument("reach indices must increase");
    boundaries_.push_back(pairs_.size());
    reach_ids_.push_back(k);
  }

  void append(Vector z, Vector o, int step) {
    if (reach_ids_.empty()) throw std::logic_error("append before begin_reach");
    pairs_.push_back({std::move(z), std::move(o), reach_ids_.back(), step});
  }

  std::size_t size() const { return pairs_.size(); }
  std::size_t n_reaches() const { return reach_ids_.size(); }
  bool empty() const { return pairs_.empty(); }
  DatasetSlice pairs() const { return pairs_; }

  /// Pairs from the i-th stored reach (0-based position, not reach id).
  DatasetSlice reach(std::size_t i) const {
    const std::size_t begin = boundaries_.at(i);
    const std::size_t end = i + 1 < boundaries_.size() ? boundaries_[i + 1] : pairs_.size();
    return DatasetSlice(pairs_).subspan(begin, end - begin);
  }

  DatasetSlice latest_reach() const {
    if (reach_ids_.empty()) return {};
    return reach(reach_ids_.size() - 1);
  }

  const std::vector<std::size_t>& reach_boundaries() const { return boundaries_; }

 private:
  std::vector<LabeledPair> pairs_;
  std::vector<std::size_t> boundaries_;
  std::vector<int> reach_ids_;
};

enum class RuleKind { ogd, ma, ftl, rls };

inline std::string to_string(RuleKind k) {
  switch (k) {
    case RuleKind::ogd: return "ogd";
    case RuleKind::ma: return "ma";
    case RuleKind::ftl: return "ftl";
    case RuleKind::rls: return "rls";
  }
  return "?";
}

struct UpdateRule {
  RuleKind kind = RuleKind::ftl;
  double eta0 = 1e-3;      // ogd: step size at reach k is eta0 / sqrt(k)
  double lambda = 0.9;     // ma: weight on the latest-reach ridge solution
  double reg = 0.0;        // l2 coefficient on all of W
  int k_expected = 1;      // ogd applies reg / k_expected per update
  bool per_step = false;   // rls only: update after every step

  double step_size(int k) const { return eta0 / std::sqrt(static_cast<double>(std::max(k, 1))); }

  void validate() const {
    if (!(reg >= 0.0)) throw std::invalid_argument("reg must be >= 0");
    if (kind == RuleKind::ogd && !(eta0 > 0.0)) throw std::invalid_argument("ogd step size must be positive");
    if (kind == RuleKind::ma && !(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("ma lambda outside [0,1]");
    if (k_expected < 1) throw std::invalid_argument("k_expected must be >= 1");
    if (per_step && kind != RuleKind::rls) throw std::invalid_argument("per-step updates are only supported for rls");
  }
};

inline double loss(const Matrix& W, const Vector& z, const Vector& o) { return (W * z - o).squaredNorm(); }

inline double loss(const DecoderParams& params, const Vector& z, const Vector& o) {
  return loss(params.weights(), z, o);
}

inline double total_loss(const Matrix& W, DatasetSlice pairs) {
  double sum = 0.0;
  for (const auto& p : pairs) sum += loss(W, p.z, p.o);
  return sum;
}

// ---------------------------------------------------------------------------
// Ridge regression
// ---------------------------------------------------------------------------

/// Sufficient statistics of a set of pairs: Z^T Z, Z^T O and sum |o|^2.
class RidgeAccumulator {
 public:
  RidgeAccumulator() = default;
  RidgeAccumulator(Eigen::Index n_covariates, Eigen::Index d_out)
      : gram_(Matrix::Zero(n_covariates, n_covariates)), cross_(Matrix::Zero(n_covariates, d_out)) {}

  void add(const Vector& z, const Vector& o) {
    gram_.selfadjointView<Eigen::Lower>().rankUpdate(z);
    cross_.noalias() += z * o.transpose();
    label_energy_ += o.squaredNorm();
    ++count_;
  }

  void add(DatasetSlice pairs) {
    for (const auto& p : pairs) add(p.z, p.o);
  }

  /// Full symmetric Z^T Z.
  Matrix gram() const { return gram_.selfadjointView<Eigen::Lower>(); }
  const Matrix& cross() const { return cross_; }
  std::size_t count() const { return count_; }

  /// Sum of |W z - o|^2 over the accumulated pairs.
  double loss_of(const Matrix& W) const {
    const Matrix G = gram();
    return (W * G * W.transpose()).trace() - 2.0 * (W * cross_).trace() + label_energy_;
  }

  /// argmin_W sum |W z - o|^2 + reg |W|_F^2.
  Matrix solve(double reg) const {
    Matrix H = gram();
    H.diagonal().array() += reg;
    if (reg <= 0.0) {
      const Vector ev = Eigen::SelfAdjointEigenSolver<Matrix>(H, Eigen::EigenvaluesOnly).eigenvalues();
      if (!(ev.minCoeff() > 1e-12 * ev.cwiseAbs().maxCoeff())) throw Error("rank deficient: increase regularization");
    }
    Eigen::LDLT<Matrix> ldlt(H);
    Matrix Wt = ldlt.solve(cross_);
    if (!Wt.allFinite()) throw Error("rank deficient: increase regularization");
    return Wt.transpose();
  }

 private:
  Matrix gram_;
  Matrix cross_;
  double label_energy_ = 0.0;
  std::size_t count_ = 0;
};

/// Batch ridge fit on a set of pairs by solving (Z^T Z + reg I) W^T = Z^T O
/// with Z, O stacked from the raw pairs.
inline Matrix ridge_fit(DatasetSlice pairs, Eigen::Index n_covariates, Eigen::Index d_out, double reg) {
  if (pairs.empty()) {
    if (reg <= 0.0) throw Error("rank deficient: increase regularization");
    return Matrix::Zero(d_out, n_covariates);
  }
  const auto m = static_cast<Eigen::Index>(pairs.size());
  Matrix Z(m, n_covariates);
  Matrix O(m, d_out);
  for (Eigen::Index i = 0; i < m; ++i) {
    Z.row(i) = pairs[static_cast<std::size_t>(i)].z.transpose();
    O.row(i) = pairs[static_cast<std::size_t>(i)].o.transpose();
  }
  Matrix H = Z.transpose() * Z;
  H.diagonal().array() += reg;
  if (reg <= 0.0) {
    const Eigen::ColPivHouseholderQR<Matrix> qr(Z);
    if (qr.rank() < n_covariates) throw Error("rank deficient: increase regularization");
  }
  Eigen::LDLT<Matrix> ldlt(H);
  Matrix Wt = ldlt.solve(Z.transpose() * O);
  if (!Wt.allFinite()) throw Error("rank deficient: increase regularization");
  return Wt.transpose();
}

// ---------------------------------------------------------------------------
// Update rules
// ---------------------------------------------------------------------------

/// Gradient of sum_t |W z - o|^2 + reg_eff |W|^2 over the slice.
inline Matrix ogd_gradient(const Matrix& W, DatasetSlice pairs, double reg_eff) {
  Matrix grad = 2.0 * reg_eff * W;
  for (const auto& p : pairs) grad.noalias() += 2.0 * (W * p.z - p.o) * p.z.transpose();
  return grad;
}

/// One gradient step on the latest reach: W - (eta0 / sqrt(k)) * grad.
inline DecoderParams ogd_update(const DecoderParams& params, const UpdateRule& rule, DatasetSlice latest_reach, int k) {
  const Matrix W = params.weights();
  const Matrix grad = ogd_gradient(W, latest_reach, rule.reg / static_cast<double>(rule.k_expected));
  if (!grad.allFinite()) throw Error("divergence: reduce step size");
  const Matrix next = W - rule.step_size(k) * grad;
  if (!next.allFinite()) throw Error("divergence: reduce step size");
  return DecoderParams::from_weights(next, params.n_neurons());
}

/// (1 - lambda) W + lambda * ridge solution of the latest reach.
inline DecoderParams ma_update(const DecoderParams& params, const UpdateRule& rule, DatasetSlice latest_reach) {
  const Matrix W = params.weights();
  const Matrix best = ridge_fit(latest_reach, W.cols(), W.rows(), rule.reg);
  return DecoderParams::from_weights((1.0 - rule.lambda) * W + rule.lambda * best, params.n_neurons());
}

/// Ridge solution over the whole aggregated dataset.
inline DecoderParams ftl_update(const AggregatedDataset& dataset, Eigen::Index n_neurons, Eigen::Index d_dof, double reg) {
  return DecoderParams::from_weights(ridge_fit(dataset.pairs(), n_neurons + 1 + d_dof, d_dof, reg), n_neurons);
}

/// Recursive least squares: P = (Z^T Z + reg I)^{-1} and W maintained by
/// Sherman-Morrison rank-one updates, so W always equals the ridge solution
/// over every pair seen so far.
class RlsState {
 public:
  RlsState() = default;
  RlsState(Eigen::Index n_covariates, Eigen::Index d_out, double reg) : W_(Matrix::Zero(d_out, n_covariates)) {
    if (!(reg > 0.0)) throw std::invalid_argument("rls needs reg > 0");
    P_ = Matrix::Identity(n_covariates, n_covariates) / reg;
  }

  /// Restarts from an exact state (used after a numerical breakdown).
  RlsState(Matrix P, Matrix W) : P_(std::move(P)), W_(std::move(W)) {}

  void update(const Vector& z, const Vector& o) {
    pz_.noalias() = P_ * z;
    const double denom = 1.0 + z.dot(pz_);
    if (!(denom > 0.0) || !std::isfinite(denom)) throw Error("RLS numerical breakdown");
    const Vector gain = pz_ / denom;
    const Vector err = o - W_ * z;
    W_.noalias() += err * gain.transpose();
    P_.noalias() -= gain * pz_.transpose();
    if (++since_sym_ >= 64) {
      P_ = 0.5 * (P_ + P_.transpose()).eval();
      since_sym_ = 0;
    }
  }

  void update(DatasetSlice pairs) {
    for (const auto& p : pairs) update(p.z, p.o);
    if (!P_.allFinite() || !W_.allFinite()) throw Error("RLS numerical breakdown");
  }

  const Matrix& weights() const { return W_; }
  const Matrix& inverse_gram() const { return P_; }

 private:
  Matrix P_;
  Matrix W_;
  Vector pz_;
  int since_sym_ = 0;
};

inline RlsState rls_update(RlsState state, DatasetSlice new_pairs) {
  state.update(new_pairs);
  return state;
}

// ---------------------------------------------------------------------------
// Regret
// ---------------------------------------------------------------------------

struct RegretReport {
  double cumulative_loss = 0.0;
  double hindsight_loss = 0.0;
  double regret = 0.0;
  double gamma_K = 0.0;
  std::vector<double> per_reach_loss;
};

/// Executed loss minus the loss of the best fixed decoder in hindsight
/// (ridge over the realized dataset with `reg`; reg = 0 gives the exact
/// minimizer and requires full column rank). `step_losses` must align with
/// dataset.pairs().
inline RegretReport regret(std::span<const double> step_losses, const AggregatedDataset& dataset,
                           Eigen::Index n_covariates, Eigen::Index d_out, double reg) {
  if (step_losses.size() != dataset.size()) throw std::invalid_argument("losses do not match dataset");
  RegretReport r;
  const Matrix hindsight = ridge_fit(dataset.pairs(), n_covariates, d_out, reg);
  for (std::size_t i = 0; i < dataset.n_reaches(); ++i) {
    const std::size_t begin = dataset.reach_boundaries()[i];
    const std::size_t n = dataset.reach(i).size();
    double s = 0.0;
    for (std::size_t t = 0; t < n; ++t) s += step_losses[begin + t];
    r.per_reach_loss.push_back(s);
    r.cumulative_loss += s;
  }
  r.hindsight_loss = total_loss(hindsight, dataset.pairs());
  r.regret = r.cumulative_loss - r.hindsight_loss;
  r.gamma_K = dataset.n_reaches() > 0 ? r.regret / static_cast<double>(dataset.n_reaches()) : 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// Learner: one update rule with its incremental state
// ---------------------------------------------------------------------------

class Learner {
 public:
  Learner(UpdateRule rule, Eigen::Index n_neurons, Eigen::Index d_dof)
      : rule_(rule),
        n_neurons_(n_neurons),
        d_dof_(d_dof),
        params_(DecoderParams::zeros(d_dof, n_neurons)),
        all_(n_neurons + 1 + d_dof, d_dof) {
    rule_.validate();
    if (rule_.kind == RuleKind::rls) rls_ = RlsState(n_neurons + 1 + d_dof, d_dof, rule_.reg);
  }

  const DecoderParams& params() const { return params_; }
  const UpdateRule& rule() const { return rule_; }
  /// Statistics of every pair aggregated so far.
  const RidgeAccumulator& aggregate() const { return all_; }

  /// Called for every new pair. Only per-step RLS changes the decoder here.
  void observe(const Vector& z, const Vector& o) {
    all_.add(z, o);
    if (rule_.kind == RuleKind::rls && rule_.per_step) {
      if (!rls_step(z, o)) rls_resolve();
      params_ = DecoderParams::from_weights(rls_.weights(), n_neurons_);
    }
  }

  /// End-of-reach update after reach k has been aggregated into `dataset`.
  void end_reach(const AggregatedDataset& dataset, int k) {
    switch (rule_.kind) {
      case RuleKind::ogd:
        params_ = ogd_update(params_, rule_, dataset.latest_reach(), k);
        break;
      case RuleKind::ma:
        params_ = ma_update(params_, rule_, dataset.latest_reach());
        break;
      case RuleKind::ftl:
        params_ = DecoderParams::from_weights(all_.solve(rule_.reg), n_neurons_);
        break;
      case RuleKind::rls:
        if (!rule_.per_step) {
          for (const auto& p : dataset.latest_reach()) {
            if (!rls_step(p.z, p.o)) {
              rls_resolve();
              break;
            }
          }
        }
        params_ = DecoderParams::from_weights(rls_.weights(), n_neurons_);
        break;
    }
    if (!params_.finite()) throw Error("divergence: decoder parameters are not finite");
  }

 private:
  /// False on numerical breakdown; the caller then re-solves exactly.
  bool rls_step(const Vector& z, const Vector& o) {
    try {
      rls_.update(z, o);
    } catch (const Error&) {
      return false;
    }
    return rls_.weights().allFinite() && rls_.inverse_gram().allFinite();
  }

  /// Exact restart of the RLS state from every aggregated pair.
  void rls_resolve() {
    Matrix H = all_.gram();
    H.diagonal().array() += rule_.reg;
    const Eigen::LDLT<Matrix> ldlt(H);
    rls_ = RlsState(ldlt.solve(Matrix::Identity(H.rows(), H.cols())), all_.solve(rule_.reg));
  }

  UpdateRule rule_;
  Eigen::Index n_neurons_;
  Eigen::Index d_dof_;
  DecoderParams params_;
  RidgeAccumulator all_;
  RlsState rls_;
};

}  // namespace bcisim
