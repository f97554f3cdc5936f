#pragma once

// Metropolis-within-Gibbs engine for the three model variants.
//
// Exposure side (standardized scale): theta is refreshed in contiguous time
// blocks by forward-filtering backward-sampling from its Gaussian
// exposure-only conditional; in the joint model that draw is a proposal
// accepted with the ratio of the Poisson terms it touches. gamma uses the
// same scheme with a conjugate regression proposal, and sigma_p, Sigma_P are
// exact conjugate draws.
//
// Health side: all log-linear coefficients form one block updated by an
// independence Metropolis-Hastings step whose proposal is the Laplace
// approximation at the conditional mode. Smoothing precisions and the
// overdispersion sd are conjugate; the daily effects use adaptive
// random-walk Metropolis.

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <numbers>
#include <thread>
#include <vector>

#include "h2m/error.hpp"
#include "h2m/mcmc/config.hpp"
#include "h2m/mcmc/draws.hpp"
#include "h2m/mcmc/kernels.hpp"
#include "h2m/mcmc/model.hpp"
#include "h2m/pollutant.hpp"
#include "h2m/rng.hpp"

namespace h2m {

namespace detail {

inline Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m) { return 0.5 * (m + m.transpose()); }

/// N(mean, cov) for a covariance that may be positive semi-definite up to
/// rounding.
inline Eigen::VectorXd draw_mvn_robust(Stream& rng, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() == Eigen::Success) return rng.mvn_from_cholesky(mean, llt.matrixL());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::VectorXd sd = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  Eigen::VectorXd z(mean.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal() * sd(i);
  return mean + eig.eigenvectors() * z;
}

}  // namespace detail

/// Poisson deviance -2 sum_s [O_s log(E e^eta_s) - E e^eta_s - log O_s!].
inline double health_deviance(const ModelData& d, const Eigen::VectorXd& eta) {
  double ll = 0.0;
  for (Eigen::Index s : d.health_days) {
    const double e = eta(s);
    ll += d.counts_d(s) * (e + d.log_expected) - d.expected * std::exp(e) - d.log_factorial(s);
  }
  return -2.0 * ll;
}

class ChainSampler {
 public:
  ChainSampler(const ModelData& data, const ModelConfig& config, Stream rng)
      : d_(data), cfg_(config), rng_(rng) {}

  // ---------------------------------------------------------------- state

  void init_exposure() {
    const Eigen::Index qe = d_.exposure_width();
    ex_.gamma = Eigen::MatrixXd::Zero(qe, d_.P);
    ex_.theta = Eigen::MatrixXd::Zero(d_.T, d_.P);
    ex_.sigma = Eigen::VectorXd::Ones(d_.P);
    for (Eigen::Index p = 0; p < d_.P; ++p) {
      const auto& obs = d_.observed_days[static_cast<std::size_t>(p)];
      Eigen::VectorXd xty = Eigen::VectorXd::Zero(qe);
      for (Eigen::Index t : obs) xty += d_.exposure_design.row(t).transpose() * d_.y_std(t, p);
      Eigen::MatrixXd xtx = d_.exposure_xtx[static_cast<std::size_t>(p)];
      xtx.diagonal().array() += 1e-8;
      Eigen::VectorXd g = xtx.ldlt().solve(xty);
      if (cfg_.fixed.gamma) g = cfg_.fixed.gamma->col(p);
      ex_.gamma.col(p) = g;
      double last = 0.0;
      double ss = 0.0;
      for (Eigen::Index t = 0; t < d_.T; ++t) {
        if (d_.observed(t, p)) {
          last = d_.y_std(t, p) - d_.exposure_design.row(t).dot(g);
          ss += last * last;
        }
        ex_.theta(t, p) = last;
      }
      ex_.sigma(p) = std::max(std::sqrt(ss / std::max<double>(1.0, static_cast<double>(obs.size()) - 1.0)), 1e-3);
    }
    ex_.Sigma = d_.correlation;
    if (cfg_.fixed.sigma) ex_.sigma = *cfg_.fixed.sigma;
    if (cfg_.fixed.Sigma) ex_.Sigma = *cfg_.fixed.Sigma;
    xg_ = d_.exposure_design * ex_.gamma;
    refresh_exposure();
  }

  void init_health() {
    coef_ = Eigen::VectorXd::Zero(d_.num_coef);
    // dispersed but bounded starts, about 0.025 per standard unit; scaling
    // by the prior sd would put diffuse-prior chains far into overflow
    for (Eigen::Index p = 0; p < d_.P; ++p) coef_(1 + p) = 0.025 * rng_.normal() / d_.scaling.sd(p);
    tau_ = Eigen::VectorXd::Ones(d_.num_smooths());
    eps_ = Eigen::VectorXd::Zero(d_.T);
    sigma_eps_ = 0.1;
    eps_scale_ = 0.1;
    mode_valid_ = false;
  }

  /// ME: observed concentrations stand in for the latent exposure.
  void use_observed_exposure() {
    exposure_ = d_.y_orig;
    for (Eigen::Index p = 0; p < d_.P; ++p)
      for (Eigen::Index t = 0; t < d_.T; ++t)
        if (!d_.observed(t, p)) exposure_(t, p) = d_.scaling.mean(p);
  }

  void set_exposure(const Eigen::MatrixXd& original_units) {
    exposure_ = original_units;
    refresh_eta();
  }

  const Eigen::MatrixXd& exposure() const { return exposure_; }
  const PollutantParams& exposure_params() const { return ex_; }
  const Eigen::VectorXd& coefficients() const { return coef_; }
  const Eigen::VectorXd& eta() const { return eta_; }
  const Eigen::VectorXd& tau() const { return tau_; }
  double sigma_eps() const { return sigma_eps_; }
  /// Conditional mode found by the last coefficient update.
  const Eigen::VectorXd& conditional_mode() const { return last_mode_; }
  Stream& rng() { return rng_; }

  // -------------------------------------------------------- exposure side

  void update_theta(bool joint) {
    const Eigen::Index len = cfg_.theta_block;
    const Eigen::Index offset = len < d_.T ? static_cast<Eigen::Index>(rng_.uniform() * static_cast<double>(len)) : 0;
    sig2_ = ex_.sigma.array().square();
    Eigen::Index a = 0;
    Eigen::Index b = offset > 0 ? offset - 1 : std::min(len, d_.T) - 1;
    while (a < d_.T) {
      update_theta_block(a, b, joint);
      a = b + 1;
      b = std::min(a + len, d_.T) - 1;
    }
  }

  void update_gamma(bool joint) {
    if (cfg_.fixed.gamma) return;
    const Eigen::Index qe = d_.exposure_width();
    const double coef_prec = 1.0 / (d_.pollutant_priors.coef_sd * d_.pollutant_priors.coef_sd);
    const Eigen::MatrixXd prior = Eigen::MatrixXd::Identity(qe, qe) * coef_prec;
    for (Eigen::Index p = 0; p < d_.P; ++p) {
      Eigen::VectorXd xty = Eigen::VectorXd::Zero(qe);
      for (Eigen::Index t : d_.observed_days[static_cast<std::size_t>(p)])
        xty.noalias() += d_.exposure_design.row(t).transpose() * (d_.y_std(t, p) - ex_.theta(t, p));
      const auto post = gaussian_block_posterior(d_.exposure_xtx[static_cast<std::size_t>(p)], xty,
                                                 ex_.sigma(p) * ex_.sigma(p), prior);
      const Eigen::VectorXd proposal = draw_gaussian_posterior(post, rng_);
      const Eigen::VectorXd shift_std = d_.exposure_design * (proposal - ex_.gamma.col(p));
      bool accept = true;
      if (joint && !d_.health_days.empty()) {
        const double weight = coef_(1 + p) * d_.scaling.sd(p);
        double delta = 0.0;
        for (Eigen::Index s : d_.health_days) {
          const double de = weight * shift_std(s - d_.lag);
          delta += d_.counts_d(s) * de - d_.expected * (std::exp(eta_(s) + de) - std::exp(eta_(s)));
        }
        accept = std::log(rng_.uniform()) < delta;
        ++gamma_tries_;
        if (accept) ++gamma_accepts_;
      }
      if (!accept) continue;
      ex_.gamma.col(p) = proposal;
      xg_.col(p) += shift_std;
      for (Eigen::Index t = 0; t < d_.T; ++t) {
        mu_std_(t, p) += shift_std(t);
        exposure_(t, p) = d_.scaling.to_original(mu_std_(t, p), p);
      }
      if (joint) {
        const double weight = coef_(1 + p) * d_.scaling.sd(p);
        for (Eigen::Index s : d_.health_days) eta_(s) += weight * shift_std(s - d_.lag);
      }
    }
  }

  void update_sigma() {
    if (cfg_.fixed.sigma) return;
    const auto& pr = d_.pollutant_priors;
    for (Eigen::Index p = 0; p < d_.P; ++p) {
      double ss = 0.0;
      const auto& obs = d_.observed_days[static_cast<std::size_t>(p)];
      for (Eigen::Index t : obs) {
        const double r = d_.y_std(t, p) - mu_std_(t, p);
        ss += r * r;
      }
      const auto upper = pr.variance_prior == VariancePrior::UniformSd ? std::optional<double>(pr.sd_upper) : std::nullopt;
      ex_.sigma(p) = std::sqrt(update_variance(ss, static_cast<double>(obs.size()), rng_, upper, pr.ig_shape, pr.ig_scale));
    }
  }

  void update_Sigma() {
    if (cfg_.fixed.Sigma) return;
    Eigen::MatrixXd outer = Eigen::MatrixXd::Zero(d_.P, d_.P);
    for (Eigen::Index t = 0; t < d_.T; ++t) {
      Eigen::VectorXd diff = ex_.theta.row(t).transpose();
      if (t >= d_.lag) diff -= d_.rho * ex_.theta.row(t - d_.lag).transpose();
      outer.noalias() += diff * diff.transpose();
    }
    ex_.Sigma = update_covariance(outer, static_cast<double>(d_.T), d_.pollutant_priors.iw_scale,
                                  d_.pollutant_priors.iw_dof, rng_);
  }

  /// Predictive draw of every unobserved measurement, original units.
  Eigen::MatrixXd impute() {
    Eigen::MatrixXd out = Eigen::MatrixXd::Constant(d_.T, d_.P, std::nan(""));
    for (Eigen::Index p = 0; p < d_.P; ++p)
      for (Eigen::Index t : d_.missing_days[static_cast<std::size_t>(p)])
        out(t, p) = d_.scaling.to_original(impute_missing(mu_std_(t, p), ex_.sigma(p), rng_), p);
    return out;
  }

  // ---------------------------------------------------------- health side

  void refresh_eta() {
    eta_ = Eigen::VectorXd::Zero(d_.T);
    const Eigen::Index qf = d_.num_fixed();
    for (Eigen::Index s : d_.health_days) {
      double e = coef_(0) + exposure_.row(s - d_.lag).dot(coef_.segment(1, d_.P)) + eps_(s);
      if (qf > 0) e += d_.fixed_design.row(s).dot(coef_.tail(qf));
      eta_(s) = e;
    }
  }

  /// Independence Metropolis-Hastings on the full coefficient vector with a
  /// Laplace proposal at the conditional mode.
  void update_coefficients() {
    const Eigen::Index n = static_cast<Eigen::Index>(d_.health_days.size());
    const Eigen::Index q = d_.num_coef;
    const Eigen::Index qf = d_.num_fixed();
    design_.resize(n, q);
    offset_.resize(n);
    counts_.resize(n);
    for (Eigen::Index k = 0; k < n; ++k) {
      const Eigen::Index s = d_.health_days[static_cast<std::size_t>(k)];
      design_(k, 0) = 1.0;
      design_.row(k).segment(1, d_.P) = exposure_.row(s - d_.lag);
      if (qf > 0) design_.row(k).tail(qf) = d_.fixed_design.row(s);
      offset_(k) = eps_(s);
      counts_(k) = d_.counts_d(s);
    }
    const Eigen::VectorXd prec = d_.prior_precision(tau_);

    auto target = [&](const Eigen::VectorXd& c, Eigen::VectorXd& lin) {
      lin = design_ * c + offset_;
      if (n > 0 && lin.maxCoeff() > 700.0) return -std::numeric_limits<double>::infinity();
      return counts_.dot(lin) - d_.expected * lin.array().exp().sum() - 0.5 * (prec.array() * c.array().square()).sum();
    };

    Eigen::VectorXd lin;
    Eigen::VectorXd mode = mode_valid_ ? last_mode_ : coef_;
    double f_mode = target(mode, lin);
    if (!std::isfinite(f_mode)) {
      mode = coef_;
      f_mode = target(mode, lin);
    }
    if (!std::isfinite(f_mode)) {
      // the null model is always finite
      mode = Eigen::VectorXd::Zero(q);
      f_mode = target(mode, lin);
    }
    Eigen::MatrixXd hessian(q, q);
    auto curvature = [&](const Eigen::VectorXd& l, Eigen::VectorXd& grad_out, const Eigen::VectorXd& c) {
      const Eigen::VectorXd w = d_.expected * l.array().exp();
      grad_out = design_.transpose() * (counts_ - w) - prec.cwiseProduct(c);
      hessian.setZero();
      hessian.selfadjointView<Eigen::Lower>().rankUpdate((design_.array().colwise() * w.array().sqrt()).matrix().transpose());
      hessian = hessian.selfadjointView<Eigen::Lower>();
      hessian.diagonal() += prec;
    };
    Eigen::VectorXd grad;
    Eigen::LLT<Eigen::MatrixXd> llt;
    for (int it = 0; it < 50; ++it) {
      curvature(lin, grad, mode);
      llt.compute(hessian);
      if (llt.info() != Eigen::Success) throw Error(ErrorCode::NumericalFailure, "health Hessian not positive definite");
      const Eigen::VectorXd step = llt.solve(grad);
      const double decrement = grad.dot(step);
      if (decrement < 1e-10) break;
      double scale = 1.0;
      Eigen::VectorXd trial_lin;
      Eigen::VectorXd trial = mode + step;
      double f_trial = target(trial, trial_lin);
      while (!(f_trial >= f_mode - 1e-12) && scale > 1e-8) {
        scale *= 0.5;
        trial = mode + scale * step;
        f_trial = target(trial, trial_lin);
      }
      if (!(f_trial >= f_mode - 1e-12)) break;
      mode = trial;
      f_mode = f_trial;
      lin = trial_lin;
    }
    curvature(lin, grad, mode);
    llt.compute(hessian);
    if (llt.info() != Eigen::Success || !mode.allFinite())
      throw Error(ErrorCode::NumericalFailure, "health conditional mode search failed");
    last_mode_ = mode;
    // An independence proposal cannot escape a start deep in the tail, where
    // the Gaussian is lighter than the target; begin at the first mode.
    if (!mode_valid_) coef_ = mode;
    mode_valid_ = true;

    auto log_q = [&](const Eigen::VectorXd& c) {
      const Eigen::VectorXd diff = c - mode;
      return -0.5 * diff.dot(hessian * diff);
    };
    Eigen::VectorXd z(q);
    for (Eigen::Index i = 0; i < q; ++i) z(i) = rng_.normal();
    const Eigen::VectorXd proposal = mode + llt.matrixU().solve(z);
    Eigen::VectorXd lin_cur;
    Eigen::VectorXd lin_prop;
    const double f_cur = target(coef_, lin_cur);
    const double f_prop = target(proposal, lin_prop);
    const double log_ratio = f_prop - f_cur + log_q(coef_) - log_q(proposal);
    ++coef_tries_;
    if (std::isfinite(f_prop) && (!std::isfinite(f_cur) || std::log(rng_.uniform()) < log_ratio)) {
      coef_ = proposal;
      ++coef_accepts_;
    }
    refresh_eta();
  }

  void update_tau() {
    const auto& hp = d_.health_priors;
    for (std::size_t i = 0; i < d_.smooth_layout.size(); ++i) {
      const auto& layout = d_.smooth_layout[i];
      const Eigen::VectorXd b = coef_.segment(layout.radial_offset, layout.radial_count);
      tau_(static_cast<Eigen::Index>(i)) =
          rng_.gamma(hp.smooth_shape + 0.5 * static_cast<double>(layout.radial_count), hp.smooth_rate + 0.5 * b.squaredNorm());
    }
  }

  void update_eps() {
    const double inv_var = 1.0 / (sigma_eps_ * sigma_eps_);
    for (Eigen::Index s : d_.health_days) {
      const double cur = eps_(s);
      const double prop = cur + eps_scale_ * rng_.normal();
      const double de = prop - cur;
      const double delta = d_.counts_d(s) * de - d_.expected * std::exp(eta_(s)) * std::expm1(de) -
                           0.5 * (prop * prop - cur * cur) * inv_var;
      ++eps_tries_;
      ++eps_window_tries_;
      if (std::log(rng_.uniform()) < delta) {
        eps_(s) = prop;
        eta_(s) += de;
        ++eps_accepts_;
        ++eps_window_accepts_;
      }
    }
  }

  void update_sigma_eps() {
    const auto& hp = d_.health_priors;
    const auto upper = hp.variance_prior == VariancePrior::UniformSd ? std::optional<double>(hp.sd_upper) : std::nullopt;
    const double n = static_cast<double>(d_.health_days.size());
    if (n < 2.0) {
      sigma_eps_ = upper ? rng_.uniform(0.0, *upper) : std::sqrt(hp.ig_scale / rng_.gamma(hp.ig_shape, 1.0));
      return;
    }
    double ss = 0.0;
    for (Eigen::Index s : d_.health_days) ss += eps_(s) * eps_(s);
    sigma_eps_ = std::sqrt(update_variance(ss, n, rng_, upper, hp.ig_shape, hp.ig_scale));
  }

  /// Called after each burn-in iteration.
  void adapt(long iteration) {
    if ((iteration + 1) % cfg_.adapt_window != 0 || eps_window_tries_ == 0) return;
    const double rate = static_cast<double>(eps_window_accepts_) / static_cast<double>(eps_window_tries_);
    const double gain = 1.0 / std::sqrt(static_cast<double>(++adapt_rounds_));
    eps_scale_ = adapt_scale(rate, eps_scale_, kScalarTargetAcceptance, gain);
    eps_window_accepts_ = eps_window_tries_ = 0;
  }

  void reset_acceptance() {
    theta_tries_ = theta_accepts_ = gamma_tries_ = gamma_accepts_ = 0;
    coef_tries_ = coef_accepts_ = eps_tries_ = eps_accepts_ = 0;
  }

  std::map<std::string, double> acceptance(bool exposure, bool health) const {
    std::map<std::string, double> out;
    auto rate = [](long a, long n) { return n > 0 ? static_cast<double>(a) / static_cast<double>(n) : 1.0; };
    if (exposure) {
      out["theta"] = rate(theta_accepts_, theta_tries_);
      if (gamma_tries_ > 0) out["gamma"] = rate(gamma_accepts_, gamma_tries_);
    }
    if (health) {
      out["coefficients"] = rate(coef_accepts_, coef_tries_);
      if (eps_tries_ > 0) out["eps"] = rate(eps_accepts_, eps_tries_);
    }
    return out;
  }

  // ------------------------------------------------------ log densities

  double exposure_log_posterior() const {
    return exposure_log_density(d_.y_std, d_.observed, d_.exposure_design, ex_, d_.pollutant_priors, d_.lag, d_.rho);
  }

  double health_log_posterior() const {
    const auto& hp = d_.health_priors;
    double lp = -0.5 * health_deviance(d_, eta_);
    const Eigen::VectorXd prec = d_.prior_precision(tau_);
    for (Eigen::Index j = 0; j < coef_.size(); ++j)
      lp += 0.5 * std::log(prec(j) / (2.0 * std::numbers::pi)) - 0.5 * prec(j) * coef_(j) * coef_(j);
    for (Eigen::Index i = 0; i < tau_.size(); ++i)
      lp += hp.smooth_shape * std::log(hp.smooth_rate) - std::lgamma(hp.smooth_shape) +
            (hp.smooth_shape - 1.0) * std::log(tau_(i)) - hp.smooth_rate * tau_(i);
    if (cfg_.terms.overdispersion) {
      for (Eigen::Index s : d_.health_days)
        lp += -0.5 * std::log(2.0 * std::numbers::pi) - std::log(sigma_eps_) - 0.5 * eps_(s) * eps_(s) / (sigma_eps_ * sigma_eps_);
      if (hp.variance_prior == VariancePrior::UniformSd)
        lp += sigma_eps_ < hp.sd_upper ? -std::log(hp.sd_upper) : -std::numeric_limits<double>::infinity();
      else
        lp += inverse_gamma_logpdf(sigma_eps_ * sigma_eps_, hp.ig_shape, hp.ig_scale);
    }
    return lp;
  }

 private:
  void refresh_exposure() {
    mu_std_ = xg_ + ex_.theta;
    exposure_ = back_transform(mu_std_, d_.scaling);
  }

  /// Forward-filter backward-sample the days of one residue class inside a
  /// block, writing into proposal_ (indexed by day).
  void ffbs(const std::vector<Eigen::Index>& days) {
    const Eigen::Index m = static_cast<Eigen::Index>(days.size());
    const Eigen::Index P = d_.P;
    const double rho = d_.rho;
    if (static_cast<Eigen::Index>(means_.size()) < m) {
      means_.resize(static_cast<std::size_t>(m));
      covs_.resize(static_cast<std::size_t>(m));
    }
    Eigen::VectorXd mean(P);
    Eigen::MatrixXd cov(P, P);
    for (Eigen::Index i = 0; i < m; ++i) {
      const Eigen::Index t = days[static_cast<std::size_t>(i)];
      if (i == 0) {
        if (t >= d_.lag)
          mean = rho * ex_.theta.row(t - d_.lag).transpose();
        else
          mean.setZero();
        cov = ex_.Sigma;
      } else {
        mean = rho * means_[static_cast<std::size_t>(i - 1)];
        cov = rho * rho * covs_[static_cast<std::size_t>(i - 1)] + ex_.Sigma;
      }
      for (Eigen::Index p = 0; p < P; ++p) {
        if (!d_.observed(t, p)) continue;
        const double s = cov(p, p) + sig2_(p);
        const Eigen::VectorXd k = cov.col(p);
        const double innov = d_.y_std(t, p) - xg_(t, p) - mean(p);
        mean += k * (innov / s);
        cov.noalias() -= k * k.transpose() / s;
      }
      means_[static_cast<std::size_t>(i)] = mean;
      covs_[static_cast<std::size_t>(i)] = cov;
    }
    const Eigen::Index t_last = days.back();
    if (t_last + d_.lag < d_.T) {
      auto& mm = means_[static_cast<std::size_t>(m - 1)];
      auto& pm = covs_[static_cast<std::size_t>(m - 1)];
      const Eigen::MatrixXd s = rho * rho * pm + ex_.Sigma;
      Eigen::LLT<Eigen::MatrixXd> llt(s);
      const Eigen::MatrixXd gain_t = llt.solve(rho * pm);  // G'
      const Eigen::VectorXd next = ex_.theta.row(t_last + d_.lag).transpose();
      mm += gain_t.transpose() * (next - rho * mm);
      pm = detail::symmetrize(pm - gain_t.transpose() * (rho * pm));
    }
    Eigen::VectorXd draw = detail::draw_mvn_robust(rng_, means_[static_cast<std::size_t>(m - 1)],
                                                   detail::symmetrize(covs_[static_cast<std::size_t>(m - 1)]));
    proposal_.row(t_last) = draw.transpose();
    for (Eigen::Index i = m - 2; i >= 0; --i) {
      const auto& mi = means_[static_cast<std::size_t>(i)];
      const auto& pi = covs_[static_cast<std::size_t>(i)];
      const Eigen::MatrixXd s = rho * rho * pi + ex_.Sigma;
      Eigen::LLT<Eigen::MatrixXd> llt(s);
      const Eigen::MatrixXd j_t = llt.solve(rho * pi);  // J'
      const Eigen::VectorXd cond_mean = mi + j_t.transpose() * (draw - rho * mi);
      const Eigen::MatrixXd cond_cov = detail::symmetrize(pi - j_t.transpose() * (rho * pi));
      draw = detail::draw_mvn_robust(rng_, cond_mean, cond_cov);
      proposal_.row(days[static_cast<std::size_t>(i)]) = draw.transpose();
    }
  }

  void update_theta_block(Eigen::Index a, Eigen::Index b, bool joint) {
    if (proposal_.rows() != d_.T || proposal_.cols() != d_.P) proposal_ = ex_.theta;
    std::vector<Eigen::Index> days;
    for (Eigen::Index r = 0; r < std::min<Eigen::Index>(d_.lag, b - a + 1); ++r) {
      days.clear();
      for (Eigen::Index t = a + r; t <= b; t += d_.lag) days.push_back(t);
      ffbs(days);
    }
    bool accept = true;
    if (joint && !d_.health_days.empty()) {
      double delta = 0.0;
      for (Eigen::Index t = a; t <= b; ++t) {
        const Eigen::Index s = t + d_.lag;
        if (s >= d_.T || !d_.is_health_day[static_cast<std::size_t>(s)]) continue;
        double de = 0.0;
        for (Eigen::Index p = 0; p < d_.P; ++p)
          de += coef_(1 + p) * d_.scaling.sd(p) * (proposal_(t, p) - ex_.theta(t, p));
        delta += d_.counts_d(s) * de - d_.expected * std::exp(eta_(s)) * std::expm1(de);
      }
      ++theta_tries_;
      accept = std::log(rng_.uniform()) < delta;
      if (accept) ++theta_accepts_;
    } else {
      ++theta_tries_;
      ++theta_accepts_;
    }
    for (Eigen::Index t = a; t <= b; ++t) {
      if (accept) {
        const Eigen::Index s = t + d_.lag;
        if (joint && s < d_.T && d_.is_health_day[static_cast<std::size_t>(s)]) {
          double de = 0.0;
          for (Eigen::Index p = 0; p < d_.P; ++p)
            de += coef_(1 + p) * d_.scaling.sd(p) * (proposal_(t, p) - ex_.theta(t, p));
          eta_(s) += de;
        }
        ex_.theta.row(t) = proposal_.row(t);
        for (Eigen::Index p = 0; p < d_.P; ++p) {
          mu_std_(t, p) = xg_(t, p) + ex_.theta(t, p);
          exposure_(t, p) = d_.scaling.to_original(mu_std_(t, p), p);
        }
      } else {
        proposal_.row(t) = ex_.theta.row(t);
      }
    }
  }

  const ModelData& d_;
  const ModelConfig& cfg_;
  Stream rng_;

  PollutantParams ex_;
  Eigen::MatrixXd xg_;        // exposure_design * gamma
  Eigen::MatrixXd mu_std_;    // latent exposure, standardized
  Eigen::MatrixXd exposure_;  // latent (or observed) exposure, original units
  Eigen::ArrayXd sig2_;
  Eigen::MatrixXd proposal_;
  std::vector<Eigen::VectorXd> means_;
  std::vector<Eigen::MatrixXd> covs_;

  Eigen::VectorXd coef_;
  Eigen::VectorXd tau_;
  Eigen::VectorXd eps_;
  double sigma_eps_ = 0.1;
  Eigen::VectorXd eta_;
  double eps_scale_ = 0.1;
  Eigen::MatrixXd design_;
  Eigen::VectorXd offset_;
  Eigen::VectorXd counts_;
  Eigen::VectorXd last_mode_;
  bool mode_valid_ = false;

  long theta_tries_ = 0, theta_accepts_ = 0;
  long gamma_tries_ = 0, gamma_accepts_ = 0;
  long coef_tries_ = 0, coef_accepts_ = 0;
  long eps_tries_ = 0, eps_accepts_ = 0;
  long eps_window_tries_ = 0, eps_window_accepts_ = 0;
  long adapt_rounds_ = 0;
};

// ------------------------------------------------------------- recording

namespace detail {

inline std::vector<std::string> exposure_gamma_names(const ModelData& d) {
  static const char* rows[] = {"intercept", "temp", "temp2", "rhum", "rhum2"};
  std::vector<std::string> names;
  for (Eigen::Index p = 0; p < d.P; ++p)
    for (Eigen::Index r = 0; r < d.exposure_width(); ++r)
      names.push_back(std::string("gamma_") + rows[r] + "_" + d.pollutant_names[static_cast<std::size_t>(p)]);
  return names;
}

inline std::vector<std::string> sigma_names(const ModelData& d) {
  std::vector<std::string> names;
  for (const auto& n : d.pollutant_names) names.push_back("sigma2_" + n);
  return names;
}

inline std::vector<std::string> covariance_names(const ModelData& d) {
  std::vector<std::string> names;
  for (Eigen::Index i = 0; i < d.P; ++i)
    for (Eigen::Index j = 0; j <= i; ++j)
      names.push_back("Sigma_" + d.pollutant_names[static_cast<std::size_t>(i)] + "_" +
                      d.pollutant_names[static_cast<std::size_t>(j)]);
  return names;
}

inline void init_exposure_blocks(ChainDraws& out, const ModelData& d) {
  out.blocks["gamma"] = DrawBlock(exposure_gamma_names(d));
  out.blocks["sigma2"] = DrawBlock(sigma_names(d));
  out.blocks["Sigma"] = DrawBlock(covariance_names(d));
}

inline void record_exposure(ChainDraws& out, const ModelData& d, const PollutantParams& ex) {
  out.blocks["gamma"].push(Eigen::Map<const Eigen::VectorXd>(ex.gamma.data(), ex.gamma.size()));
  out.blocks["sigma2"].push(ex.sigma.array().square().matrix());
  Eigen::VectorXd lower(d.P * (d.P + 1) / 2);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < d.P; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) lower(k++) = ex.Sigma(i, j);
  out.blocks["Sigma"].push(lower);
}

inline void init_health_blocks(ChainDraws& out, const ModelData& d, const ModelConfig& cfg) {
  std::vector<std::string> beta(d.coef_names.begin(), d.coef_names.begin() + 1 + d.P);
  out.blocks["beta"] = DrawBlock(beta);
  if (!d.smooth_layout.empty()) {
    const Eigen::Index end = d.holiday_index >= 0 ? d.holiday_index : d.num_coef;
    out.blocks["smooth"] = DrawBlock(std::vector<std::string>(d.coef_names.begin() + 1 + d.P, d.coef_names.begin() + end));
    std::vector<std::string> tau;
    for (const auto& l : d.smooth_layout) tau.push_back("tau_" + l.name);
    out.blocks["tau"] = DrawBlock(tau);
  }
  if (d.holiday_index >= 0) out.blocks["delta"] = DrawBlock({"delta"});
  if (cfg.terms.overdispersion) out.blocks["sigma_eps"] = DrawBlock({"sigma_eps"});
  out.blocks["deviance"] = DrawBlock({"deviance"});
}

inline void record_health(ChainDraws& out, const ModelData& d, const ModelConfig& cfg, const ChainSampler& s) {
  const auto& c = s.coefficients();
  out.blocks["beta"].push(c.head(1 + d.P));
  if (!d.smooth_layout.empty()) {
    const Eigen::Index end = d.holiday_index >= 0 ? d.holiday_index : d.num_coef;
    out.blocks["smooth"].push(c.segment(1 + d.P, end - 1 - d.P));
    out.blocks["tau"].push(s.tau());
  }
  if (d.holiday_index >= 0) out.blocks["delta"].push(Eigen::VectorXd::Constant(1, c(d.holiday_index)));
  if (cfg.terms.overdispersion) out.blocks["sigma_eps"].push(Eigen::VectorXd::Constant(1, s.sigma_eps()));
  out.blocks["deviance"].push(Eigen::VectorXd::Constant(1, health_deviance(d, s.eta())));
}

inline void push_log_posterior(ChainDraws& out, double lp) {
  if (!std::isfinite(lp)) throw Error(ErrorCode::NumericalFailure, "log posterior is not finite at a retained draw");
  out.blocks["log_posterior"].push(Eigen::VectorXd::Constant(1, lp));
}

}  // namespace detail

/// Output of the exposure-only stage of H2M.
struct ExposureStage {
  ChainDraws draws;
  std::vector<Eigen::MatrixXd> exposures;  // one per retained iteration, original units
};

/// Runs the exposure component alone. Consumes only the "exposure" stream
/// of `seeds`, so it never sees outcome data.
inline ExposureStage run_exposure_stage(const ModelData& d, const ModelConfig& cfg, const SeedTree& seeds,
                                        int chain = 0) {
  ExposureStage stage;
  auto& out = stage.draws;
  out.chain = chain;
  out.seed_key = seeds.key();
  out.variant = cfg.variant;
  ChainSampler s(d, cfg, seeds.child("exposure").stream());
  s.init_exposure();
  detail::init_exposure_blocks(out, d);
  out.blocks["log_posterior"] = DrawBlock({"log_posterior"});
  RunningMoments mu;
  RunningMoments imputed;
  mu.reset(d.T, d.P);
  imputed.reset(d.T, d.P);
  const long total = cfg.burn_in + cfg.retained;
  for (long it = 0; it < total; ++it) {
    if (it == cfg.burn_in) s.reset_acceptance();
    s.update_theta(false);
    s.update_gamma(false);
    s.update_sigma();
    s.update_Sigma();
    if (it >= cfg.burn_in && (it - cfg.burn_in + 1) % cfg.thin == 0) {
      detail::record_exposure(out, d, s.exposure_params());
      detail::push_log_posterior(out, s.exposure_log_posterior());
      mu.push(s.exposure());
      Eigen::MatrixXd imp = s.impute();
      imputed.push(imp.unaryExpr([](double v) { return std::isfinite(v) ? v : 0.0; }));
      stage.exposures.push_back(s.exposure());
      if (cfg.store_exposure_every > 0 && static_cast<long>(stage.exposures.size()) % cfg.store_exposure_every == 0)
        out.exposure_draws.push_back(s.exposure());
    }
  }
  out.exposure_mean = mu.mean();
  out.exposure_var = mu.variance();
  out.imputed_mean = imputed.mean();
  for (Eigen::Index p = 0; p < d.P; ++p)
    for (Eigen::Index t = 0; t < d.T; ++t)
      if (d.observed(t, p)) out.imputed_mean(t, p) = std::nan("");
  out.acceptance = s.acceptance(true, false);
  return stage;
}

/// One chain of the configured variant.
inline ChainDraws run_chain(const ModelData& d, const ModelConfig& cfg, const SeedTree& seeds, int chain = 0) {
  const long total = cfg.burn_in + cfg.retained;
  auto keep = [&](long it) { return it >= cfg.burn_in && (it - cfg.burn_in + 1) % cfg.thin == 0; };
  RunningMoments eta;
  eta.reset(d.T, 1);

  if (cfg.variant == Variant::H2M) {
    ExposureStage stage = run_exposure_stage(d, cfg, seeds, chain);
    ChainDraws out = std::move(stage.draws);
    out.blocks["log_posterior"] = DrawBlock({"log_posterior"});
    ChainSampler s(d, cfg, seeds.child("health").stream());
    s.init_health();
    detail::init_health_blocks(out, d, cfg);
    const auto n_stored = static_cast<long>(stage.exposures.size());
    for (long it = 0; it < total; ++it) {
      if (it == cfg.burn_in) s.reset_acceptance();
      s.set_exposure(stage.exposures[static_cast<std::size_t>(it % n_stored)]);
      s.update_coefficients();
      s.update_tau();
      if (cfg.terms.overdispersion) {
        s.update_eps();
        s.update_sigma_eps();
      }
      if (it < cfg.burn_in) s.adapt(it);
      if (keep(it)) {
        detail::record_health(out, d, cfg, s);
        detail::push_log_posterior(out, s.health_log_posterior());
        eta.push(s.eta());
      }
    }
    out.eta_mean = eta.mean().col(0);
    auto health_rates = s.acceptance(false, true);
    out.acceptance.insert(health_rates.begin(), health_rates.end());
    return out;
  }

  ChainDraws out;
  out.chain = chain;
  out.seed_key = seeds.key();
  out.variant = cfg.variant;
  const bool joint = cfg.variant == Variant::H2Mjoint;
  ChainSampler s(d, cfg, seeds.child(joint ? "joint" : "health").stream());
  RunningMoments mu;
  RunningMoments imputed;
  if (joint) {
    s.init_exposure();
    detail::init_exposure_blocks(out, d);
    mu.reset(d.T, d.P);
    imputed.reset(d.T, d.P);
  } else {
    s.use_observed_exposure();
  }
  s.init_health();
  s.refresh_eta();
  detail::init_health_blocks(out, d, cfg);
  out.blocks["log_posterior"] = DrawBlock({"log_posterior"});
  long kept = 0;
  for (long it = 0; it < total; ++it) {
    if (it == cfg.burn_in) s.reset_acceptance();
    if (joint) {
      s.update_theta(true);
      s.update_gamma(true);
      s.update_sigma();
      s.update_Sigma();
    }
    s.update_coefficients();
    s.update_tau();
    if (cfg.terms.overdispersion) {
      s.update_eps();
      s.update_sigma_eps();
    }
    if (it < cfg.burn_in) s.adapt(it);
    if (keep(it)) {
      ++kept;
      detail::record_health(out, d, cfg, s);
      double lp = s.health_log_posterior();
      if (joint) {
        detail::record_exposure(out, d, s.exposure_params());
        lp += s.exposure_log_posterior();
        mu.push(s.exposure());
        Eigen::MatrixXd imp = s.impute();
        imputed.push(imp.unaryExpr([](double v) { return std::isfinite(v) ? v : 0.0; }));
        if (cfg.store_exposure_every > 0 && kept % cfg.store_exposure_every == 0) out.exposure_draws.push_back(s.exposure());
      }
      detail::push_log_posterior(out, lp);
      eta.push(s.eta());
    }
  }
  out.eta_mean = eta.mean().col(0);
  if (joint) {
    out.exposure_mean = mu.mean();
    out.exposure_var = mu.variance();
    out.imputed_mean = imputed.mean();
    for (Eigen::Index p = 0; p < d.P; ++p)
      for (Eigen::Index t = 0; t < d.T; ++t)
        if (d.observed(t, p)) out.imputed_mean(t, p) = std::nan("");
  }
  out.acceptance = s.acceptance(joint, true);
  return out;
}

/// Seeds for chain c: SeedTree(master).child("chain", c).
inline SeedTree chain_seeds(std::uint64_t master, int chain) {
  return SeedTree(master).child("chain", static_cast<std::uint64_t>(chain));
}

/// Runs a list of independent jobs on up to `jobs` threads. Results are
/// indexed by job, so scheduling never changes the output.
template <typename Result, typename Fn>
std::vector<Result> parallel_map(std::size_t count, int jobs, Fn&& fn) {
  std::vector<Result> results(count);
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        results[i] = fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int threads = std::max(1, std::min<int>(jobs, static_cast<int>(count)));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int k = 0; k < threads; ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return results;
}

/// All chains of a model; chain c always uses chain_seeds(config.seed, c).
inline std::vector<ChainDraws> run_model(const ModelData& d, const ModelConfig& cfg, int jobs = 1) {
  cfg.validate();
  return parallel_map<ChainDraws>(static_cast<std::size_t>(cfg.chains), jobs, [&](std::size_t c) {
    return run_chain(d, cfg, chain_seeds(cfg.seed, static_cast<int>(c)), static_cast<int>(c));
  });
}

struct FitResult {
  ModelData data;
  std::vector<ChainDraws> chains;
};

inline FitResult fit_model(const TimeSeriesDataset& dataset, const ModelConfig& cfg, int jobs = 1) {
  FitResult r{prepare_model(dataset, cfg), {}};
  r.chains = run_model(r.data, cfg, jobs);
  return r;
}

}  // namespace h2m
