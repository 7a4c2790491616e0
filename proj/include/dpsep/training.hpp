// Copyright 2026 The dpsep Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// SI-SNR objective, utterance-level permutation-invariant loss, Adam with
// global-norm clipping, step-decay learning rate and the training loop.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "dpsep/data.hpp"
#include "dpsep/tasnet.hpp"

namespace dpsep {

// Relative floor on both energies. Perfect estimates score
// 10*log10(1/eps) = +80 dB, orthogonal ones -80 dB, at any signal scale.
inline constexpr double kSiSnrEpsilon = 1e-8;
// Absolute floor guarding the all-zero estimate.
inline constexpr double kSiSnrTiny = 1e-30;

namespace detail {

struct SiSnrTerms {
  double target_energy;  // |s_target|^2
  double noise_energy;   // |e|^2
  double ratio_db;
  double alpha;          // <e0, r0> / |r0|^2
  double est_mean;
  double ref_mean;
};

template <typename T>
SiSnrTerms si_snr_terms(std::span<const T> est, std::span<const T> ref) {
  const std::size_t n = est.size();
  double me = 0, mr = 0;
  for (std::size_t i = 0; i < n; ++i) {
    me += est[i];
    mr += ref[i];
  }
  me /= double(n);
  mr /= double(n);
  double dot = 0, rr = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e0 = est[i] - me, r0 = ref[i] - mr;
    dot += e0 * r0;
    rr += r0 * r0;
  }
  if (rr == 0) throw ArgumentError("si_snr: reference has zero energy");
  const double alpha = dot / rr;
  double target = 0, noise = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = alpha * (ref[i] - mr);
    const double e = (est[i] - me) - s;
    target += s * s;
    noise += e * e;
  }
  const double num = target + kSiSnrEpsilon * noise + kSiSnrTiny;
  const double den = noise + kSiSnrEpsilon * target + kSiSnrTiny;
  return {target, noise, 10.0 * std::log10(num / den), alpha, me, mr};
}

}  // namespace detail

// Scale-invariant SNR in dB over equal-length signals. Both are made zero
// mean; the estimate is split into its projection on the reference
// (s_target) and the remainder (e).
template <typename T>
double si_snr(std::span<const T> est, std::span<const T> ref) {
  if (est.size() != ref.size() || est.empty()) {
    throw ShapeError(detail::concat("si_snr: lengths ", est.size(), " and ", ref.size()));
  }
  return detail::si_snr_terms(est, ref).ratio_db;
}

// Differentiable SI-SNR (dB, shape [1]) of est against a constant ref; only
// the first `valid` samples count (0 = all).
template <typename T>
Tensor<T> si_snr(const Tensor<T>& est, const Tensor<T>& ref, std::size_t valid = 0) {
  if (!est.defined() || !ref.defined() || est.numel() != ref.numel()) {
    throw ShapeError("si_snr: estimate and reference must have equal sizes");
  }
  const std::size_t n = valid == 0 ? est.numel() : std::min(valid, est.numel());
  const auto ev = est.data().first(n);
  const auto rv = ref.data().first(n);
  const auto terms = detail::si_snr_terms(ev, rv);
  auto out = Tensor<T>::scalar(T(terms.ratio_db));
  record_op<T>(out, "si_snr", {&est}, [est, ref, n, terms](std::span<const T> g) mutable {
    if (!est.requires_grad()) return;
    const double num = terms.target_energy + kSiSnrEpsilon * terms.noise_energy + kSiSnrTiny;
    const double den = terms.noise_energy + kSiSnrEpsilon * terms.target_energy + kSiSnrTiny;
    const double c = 10.0 / std::numbers::ln10 * double(g[0]);
    auto ge = est.accumulate_grad();
    auto e = est.data();
    auto r = ref.data();
    for (std::size_t i = 0; i < n; ++i) {
      const double s = terms.alpha * (r[i] - terms.ref_mean);
      const double resid = (e[i] - terms.est_mean) - s;
      // d|s|^2/de0 = 2 s, d|e|^2/de0 = 2 resid; both already zero mean.
      const double dnum = 2 * s + kSiSnrEpsilon * 2 * resid;
      const double dden = 2 * resid + kSiSnrEpsilon * 2 * s;
      ge[i] += T(c * (dnum / num - dden / den));
    }
  });
  return out;
}

struct PermutationResult {
  std::vector<std::size_t> best_perm;  // best_perm[c] = estimate paired with reference c
  std::vector<double> per_source;      // SI-SNR of each reference under best_perm
  double mean = 0;
};

inline constexpr std::size_t kMaxPitSources = 6;

// Exhaustive search over all C! assignments of estimates to references,
// maximizing mean SI-SNR. `pairwise[c][e]` is SI-SNR(estimate e, reference c).
// Ties go to the lexicographically smallest permutation.
inline PermutationResult best_permutation(const std::vector<std::vector<double>>& pairwise) {
  const std::size_t c = pairwise.size();
  if (c == 0) throw ArgumentError("permutation search over zero sources");
  if (c > kMaxPitSources) {
    throw ArgumentError(detail::concat("exhaustive permutation search supports at most ",
                                       kMaxPitSources, " sources, got ", c));
  }
  std::vector<std::size_t> perm(c);
  std::iota(perm.begin(), perm.end(), 0);
  PermutationResult best;
  double best_score = -std::numeric_limits<double>::infinity();
  do {
    double score = 0;
    for (std::size_t r = 0; r < c; ++r) score += pairwise[r][perm[r]];
    score /= double(c);
    if (score > best_score) {
      best_score = score;
      best.best_perm = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  best.mean = best_score;
  for (std::size_t r = 0; r < c; ++r) best.per_source.push_back(pairwise[r][best.best_perm[r]]);
  return best;
}

template <typename T>
std::vector<std::vector<double>> pairwise_si_snr(std::span<const T> est, std::span<const T> ref,
                                                 std::size_t sources, std::size_t length,
                                                 std::size_t valid) {
  const std::size_t n = valid == 0 ? length : std::min(valid, length);
  std::vector<std::vector<double>> m(sources, std::vector<double>(sources));
  for (std::size_t r = 0; r < sources; ++r) {
    for (std::size_t e = 0; e < sources; ++e) {
      m[r][e] = si_snr(est.subspan(e * length, n), ref.subspan(r * length, n));
    }
  }
  return m;
}

template <typename T>
struct UpitLoss {
  Tensor<T> loss;  // [1], -mean SI-SNR under the best permutation
  PermutationResult result;
};

// Utterance-level PIT: est and ref are [C, T].
template <typename T>
UpitLoss<T> upit_loss(const Tensor<T>& est, const Tensor<T>& ref, std::size_t valid = 0) {
  if (!est.defined() || !ref.defined() || est.rank() != 2 || est.shape() != ref.shape()) {
    throw ShapeError(detail::concat(
        "upit_loss: estimate ", est.defined() ? shape_str(est.shape()) : "?",
        " and reference ", ref.defined() ? shape_str(ref.shape()) : "?",
        " must both be [C, T]"));
  }
  const std::size_t c = est.dim(0), len = est.dim(1);
  if (c > kMaxPitSources) {
    throw ArgumentError(detail::concat("upit_loss supports at most ", kMaxPitSources,
                                       " sources, got ", c));
  }
  auto result = best_permutation(pairwise_si_snr(est.data(), ref.data(), c, len, valid));
  Tensor<T> total;
  for (std::size_t r = 0; r < c; ++r) {
    const std::size_t e = result.best_perm[r];
    auto term = si_snr(slice(est, e, e + 1), slice(ref, r, r + 1), valid);
    total = total.defined() ? add(total, term) : term;
  }
  return {scale(total, T(-1.0 / double(c))), std::move(result)};
}

// Rescales all gradients so that their joint L2 norm is at most max_norm.
// Returns the applied factor (1 when already within bounds).
template <typename T>
double clip_grad_norm(std::span<Tensor<T>> params, double max_norm) {
  double sq = 0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (T g : p.grad()) sq += double(g) * double(g);
  }
  const double norm = std::sqrt(sq);
  if (!(norm > max_norm)) return 1.0;
  const double factor = max_norm / norm;
  for (auto& p : params) {
    if (!p.has_grad()) continue;
    for (auto& g : p.accumulate_grad()) g = T(double(g) * factor);
  }
  return factor;
}

template <typename T>
double grad_norm(std::span<const Tensor<T>> params) {
  double sq = 0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (T g : p.grad()) sq += double(g) * double(g);
  }
  return std::sqrt(sq);
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam. Moments are kept in double.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>> params, AdamConfig config = {})
      : params_(std::move(params)), config_(config) {
    for (const auto& p : params_) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }

  // One update with learning rate lr; parameters without a grad buffer are
  // treated as having zero gradient.
  void step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, double(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, double(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k];
      auto data = p.mutable_data();
      const bool has = p.has_grad();
      auto g = has ? p.grad() : std::span<const T>();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < data.size(); ++i) {
        const double gi = has ? double(g[i]) : 0.0;
        m[i] = config_.beta1 * m[i] + (1 - config_.beta1) * gi;
        v[i] = config_.beta2 * v[i] + (1 - config_.beta2) * gi * gi;
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        data[i] = T(double(data[i]) - lr * mhat / (std::sqrt(vhat) + config_.epsilon));
      }
    }
  }

  std::size_t steps() const { return t_; }
  std::vector<Tensor<T>>& params() { return params_; }

 private:
  std::vector<Tensor<T>> params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t t_ = 0;
};

struct TrainConfig {
  std::size_t epochs = 100;
  double segment_seconds = 4.0;
  double lr_init = 1e-3;
  double lr_decay = 0.98;
  std::size_t lr_decay_every = 2;  // epochs
  double clip_norm = 5.0;
  std::size_t patience = 10;
  AdamConfig adam;
  std::size_t batch_size = 2;
  std::uint64_t seed = 0;
  std::size_t max_steps = 0;  // 0: no cap
  bool deterministic = false;  // single-threaded, wall time logged as 0

  void validate() const {
    if (epochs == 0 || !(segment_seconds > 0) || !(lr_init > 0) || !(lr_decay > 0) ||
        lr_decay_every == 0 || !(clip_norm > 0) || patience == 0 || batch_size == 0 ||
        !(adam.beta1 > 0) || !(adam.beta2 > 0) || !(adam.epsilon > 0)) {
      throw ConfigError("training hyperparameters must be positive (patience >= 1)");
    }
  }
};

// lr_init * decay^floor(epoch / decay_every); epochs count from 0.
inline double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  return cfg.lr_init * std::pow(cfg.lr_decay, double(epoch / cfg.lr_decay_every));
}

// Tracks the best validation score; signals a stop after `patience`
// consecutive epochs without a new best.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  // Returns true when `metric` is a new best.
  bool update(std::size_t epoch, double metric) {
    if (metric > best_) {
      best_ = metric;
      best_epoch_ = epoch;
      since_best_ = 0;
      return true;
    }
    ++since_best_;
    return false;
  }
  bool should_stop() const { return since_best_ >= patience_; }
  double best() const { return best_; }
  std::size_t best_epoch() const { return best_epoch_; }

 private:
  std::size_t patience_;
  double best_ = -std::numeric_limits<double>::infinity();
  std::size_t best_epoch_ = 0;
  std::size_t since_best_ = 0;
};

// ---------------------------------------------------------------------------
// Evaluation.

inline double snr_db(std::span<const float> est, std::span<const float> ref) {
  double sig = 0, err = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    sig += double(ref[i]) * ref[i];
    const double d = double(ref[i]) - est[i];
    err += d * d;
  }
  return 10.0 * std::log10((sig + kSiSnrTiny) / (err + kSiSnrEpsilon * sig + kSiSnrTiny));
}

struct SeparationScore {
  double si_snri = 0;  // mean over sources, uPIT-aligned
  double snri = 0;
  double si_snr = 0;          // mean SI-SNR of the estimates
  double mixture_si_snr = 0;  // mean SI-SNR of the unprocessed mixture
  PermutationResult perm;
};

// est and refs are [C, T], mixture [1, T]; only the first `valid` samples
// are scored (0 = all).
inline SeparationScore score_separation(const Tensor<float>& est, const Tensor<float>& refs,
                                        const Tensor<float>& mixture, std::size_t valid = 0) {
  if (est.shape() != refs.shape() || est.rank() != 2 || mixture.numel() != est.dim(1)) {
    throw ShapeError("score_separation: shapes disagree");
  }
  const std::size_t c = est.dim(0), len = est.dim(1);
  const std::size_t n = valid == 0 ? len : std::min(valid, len);
  SeparationScore s;
  s.perm = best_permutation(pairwise_si_snr(est.data(), refs.data(), c, len, valid));
  const auto mix = mixture.data().first(n);
  for (std::size_t r = 0; r < c; ++r) {
    const auto ref = refs.data().subspan(r * len, n);
    const auto e = est.data().subspan(s.perm.best_perm[r] * len, n);
    const double mix_si = si_snr(mix, ref);
    s.si_snr += s.perm.per_source[r];
    s.mixture_si_snr += mix_si;
    s.si_snri += s.perm.per_source[r] - mix_si;
    s.snri += snr_db(e, ref) - snr_db(mix, ref);
  }
  s.si_snr /= double(c);
  s.mixture_si_snr /= double(c);
  s.si_snri /= double(c);
  s.snri /= double(c);
  return s;
}

inline SeparationScore evaluate_example(const SeparatorModel<float>& model,
                                        const MixtureExample& ex) {
  NoGradScope no_grad;
  auto est = separate(ex.mixture, model);
  return score_separation(est, ex.sources, ex.mixture, ex.valid_samples);
}

// Mean SI-SNRi over a set of examples.
inline double mean_si_snri(const SeparatorModel<float>& model,
                           const std::vector<MixtureExample>& set) {
  if (set.empty()) return 0;
  double acc = 0;
  for (const auto& ex : set) acc += evaluate_example(model, ex).si_snri;
  return acc / double(set.size());
}

// ---------------------------------------------------------------------------
// Training.

class TrainingAborted : public NumericError {
 public:
  TrainingAborted(std::size_t epoch, std::size_t batch, std::string op)
      : NumericError(op, detail::concat("non-finite value at epoch ", epoch, ", batch ",
                                        batch, ", op ", op)),
        epoch_(epoch),
        batch_(batch) {}
  std::size_t epoch() const { return epoch_; }
  std::size_t batch() const { return batch_; }

 private:
  std::size_t epoch_;
  std::size_t batch_;
};

// One optimizer iteration over `batch`: zero grads, forward, mean uPIT loss,
// backward, clip, Adam. Returns the batch loss before the update.
inline double train_step(SeparatorModel<float>& model, Adam<float>& opt,
                         const std::vector<const MixtureExample*>& batch, double lr,
                         double clip_norm, GradTape& tape) {
  auto& params = opt.params();
  zero_grads<float>(params);
  tape.reset();
  Tensor<float> total;
  {
    TapeScope scope(tape);
    for (const MixtureExample* ex : batch) {
      auto est = separate(ex->mixture, model);
      auto term = upit_loss(est, ex->sources, ex->valid_samples).loss;
      total = total.defined() ? add(total, term) : term;
    }
    total = scale(total, 1.0f / float(batch.size()));
  }
  const double loss = total.item();
  if (!std::isfinite(loss)) throw NumericError("upit_loss", "non-finite training loss");
  tape.backward(total);
  clip_grad_norm<float>(params, clip_norm);
  opt.step(lr);
  return loss;
}

struct TrainResult {
  std::size_t epochs_run = 0;
  std::size_t steps = 0;
  std::size_t best_epoch = 0;  // 1-based
  double best_val_si_snri = 0;
  std::vector<std::string> log_lines;
};

inline std::string format_metrics_line(std::size_t epoch, double lr, double train_loss,
                                       double val_si_snri, double wall_seconds) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu\t%.6e\t%.6f\t%.6f\t%.3f", epoch, lr, train_loss,
                val_si_snri, wall_seconds);
  return buf;
}

// Runs the full recipe. Writes metrics.tsv, best.ckpt and last.ckpt into
// run_dir when it is non-empty; on return `model` holds the best-validation
// parameters. In deterministic mode the wall-seconds column is written as 0
// so that reruns produce byte-identical logs.
inline TrainResult train_loop(SeparatorModel<float>& model,
                              const std::vector<MixtureExample>& train,
                              const std::vector<MixtureExample>& valid,
                              const TrainConfig& cfg, const std::string& run_dir = "",
                              std::ostream* progress = nullptr) {
  cfg.validate();
  if (train.empty() || valid.empty()) {
    throw ArgumentError("train_loop needs non-empty training and validation sets");
  }
  std::ofstream metrics;
  if (!run_dir.empty()) {
    std::filesystem::create_directories(run_dir);
    metrics.open(std::filesystem::path(run_dir) / "metrics.tsv", std::ios::trunc);
    if (!metrics) throw FormatError("cannot write metrics log in " + run_dir);
  }
  model.set_requires_grad(true);
  Adam<float> opt(model.parameters(), cfg.adam);
  EarlyStopping stopper(cfg.patience);
  GradTape tape;
  TrainResult result;
  std::vector<std::vector<float>> best_params;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg);
    Rng rng(mix_seed(cfg.seed, epoch));
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      if (cfg.max_steps != 0 && result.steps >= cfg.max_steps) break;
      std::vector<const MixtureExample*> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i) {
        batch.push_back(&train[order[i]]);
      }
      try {
        loss_sum += train_step(model, opt, batch, lr, cfg.clip_norm, tape);
      } catch (const NumericError& e) {
        throw TrainingAborted(epoch + 1, batches + 1, e.op());
      }
      ++batches;
      ++result.steps;
    }
    const double val = mean_si_snri(model, valid);
    if (!std::isfinite(val)) throw TrainingAborted(epoch + 1, 0, "validation");
    const double wall =
        cfg.deterministic
            ? 0.0
            : std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const double train_loss = batches ? loss_sum / double(batches) : 0.0;
    result.log_lines.push_back(format_metrics_line(epoch + 1, lr, train_loss, val, wall));
    if (metrics) metrics << result.log_lines.back() << '\n' << std::flush;
    if (progress) *progress << result.log_lines.back() << '\n';
    ++result.epochs_run;
    if (stopper.update(epoch + 1, val)) {
      best_params.clear();
      for (const auto& p : model.parameters()) {
        best_params.emplace_back(p.data().begin(), p.data().end());
      }
      if (!run_dir.empty()) save_model((std::filesystem::path(run_dir) / "best.ckpt").string(), model);
    }
    if (!run_dir.empty()) save_model((std::filesystem::path(run_dir) / "last.ckpt").string(), model);
    if (stopper.should_stop()) break;
    if (cfg.max_steps != 0 && result.steps >= cfg.max_steps) break;
  }
  auto params = model.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    std::copy(best_params[k].begin(), best_params[k].end(), params[k].mutable_data().begin());
  }
  result.best_epoch = stopper.best_epoch();
  result.best_val_si_snri = stopper.best();
  return result;
}

}  // namespace dpsep
