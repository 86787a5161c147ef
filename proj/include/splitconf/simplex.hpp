#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "splitconf/errors.hpp"
#include "splitconf/linalg.hpp"

namespace splitconf {

enum class SolverStatus { optimal, degenerate_optimal, iteration_limit };

struct SimplexOptions {
  double pivot_tol = 1e-11;       // reduced-cost threshold for entering
  double interp_tol = 1e-9;       // relative band flagging near-ties at exit
  std::size_t max_iterations = 0; // 0 -> 50 n + 10 d + 1000
  std::size_t refactor_every = 64;
  std::size_t bland_trigger = 25; // degenerate pivots before Bland kicks in
  bool always_bland = false;
  bool use_crash = true;
};

// Warm-start handle: the interpolated rows and the basic theta coordinates
// of a previously optimal vertex.
struct SimplexBasis {
  std::vector<int> interp_rows;
  std::vector<int> basic_cols;
};

struct SimplexResult {
  std::vector<double> theta;
  std::vector<double> eta;                 // in [-(1-alpha), alpha]
  std::vector<std::size_t> interp_rows;    // rows interpolated by the vertex
  SolverStatus status = SolverStatus::optimal;
  std::size_t iterations = 0;
  double objective = 0.0;                  // mean pinball loss at theta
  double max_eta_clip = 0.0;               // how far eta exceeded its box
};

// Primal simplex specialized to min_theta sum_i l_alpha(<phi_i,theta> - s_i).
//
// A vertex interpolates k <= d sample points; the basis is the pair (I, J)
// of interpolated rows and basic theta coordinates with M = Phi[I,J]
// nonsingular.  Every pivot either swaps a row of I or grows (I, J) by one,
// so the interpolation-count and dual-variable structure of the fitted
// vertex is explicit.  theta coordinates, being free, never leave the
// basis.  Any basis is primal feasible (the slacks are just the residual
// magnitudes), so warm starts need no phase-1.
class PinballSimplex {
 public:
  PinballSimplex(std::vector<double> phi_row_major, std::size_t n,
                 std::size_t d, std::vector<double> scores, double alpha,
                 SimplexOptions opts = {})
      : phi_(std::move(phi_row_major)),
        s_(std::move(scores)),
        n_(n),
        d_(d),
        alpha_(alpha),
        opts_(opts) {
    if (n_ == 0 || d_ == 0 || phi_.size() != n_ * d_ || s_.size() != n_) {
      throw invalid_input_error("PinballSimplex: inconsistent dimensions");
    }
    if (!(alpha_ > 0.0) || !(alpha_ < 1.0)) {
      throw invalid_input_error("PinballSimplex: alpha must lie in (0,1)");
    }
    if (opts_.max_iterations == 0) {
      opts_.max_iterations = 50 * n_ + 10 * d_ + 1000;
    }
    score_scale_ = 1.0;
    for (double v : s_) score_scale_ = std::max(score_scale_, std::abs(v));
  }

  void set_score(std::size_t i, double v) {
    s_[i] = v;
    score_scale_ = std::max(score_scale_, std::abs(v));
  }

  void set_row(std::size_t i, std::span<const double> row) {
    std::copy(row.begin(), row.end(), phi_.data() + i * d_);
  }

  double score(std::size_t i) const { return s_[i]; }
  std::size_t n() const { return n_; }
  std::size_t d() const { return d_; }

  SimplexBasis basis() const {
    return SimplexBasis{I_, J_};
  }

  SimplexResult solve(const SimplexBasis* warm = nullptr) {
    if (warm != nullptr && init_warm(*warm)) {
      // warm vertex accepted
    } else if (!opts_.use_crash || !init_crash()) {
      init_cold();
    }
    return run();
  }

 private:
  static constexpr double kTiny = 1e-12;

  const double* row(std::size_t i) const { return phi_.data() + i * d_; }

  double cost_coeff(signed char sgn) const {
    return sgn > 0 ? alpha_ : -(1.0 - alpha_);
  }

  // ---- initialization -----------------------------------------------

  void reset_state() {
    I_.clear();
    J_.clear();
    minv_.clear();
    theta_.assign(d_, 0.0);
    r_.assign(n_, 0.0);
    sgn_.assign(n_, +1);
    pos_in_I_.assign(n_, -1);
    in_J_.assign(d_, 0);
  }

  void classify_residuals() {
    for (std::size_t i = 0; i < n_; ++i) {
      if (pos_in_I_[i] >= 0) {
        r_[i] = 0.0;
        sgn_[i] = 0;
        continue;
      }
      double acc = -s_[i];
      const double* p = row(i);
      for (int qpos = 0; qpos < static_cast<int>(J_.size()); ++qpos) {
        acc += p[J_[qpos]] * theta_[J_[qpos]];
      }
      r_[i] = acc;
      sgn_[i] = acc >= 0.0 ? +1 : -1;
    }
  }

  void init_cold() {
    reset_state();
    classify_residuals();
  }

  // Rebuilds M = Phi[I,J] and everything derived from it.  Returns false if
  // the basis matrix is singular.
  bool rebuild_from_basis() {
    const std::size_t k = I_.size();
    minv_.assign(k * k, 0.0);
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = 0; b < k; ++b) {
        minv_[a * k + b] = row(I_[a])[J_[b]];
      }
    }
    if (!detail::invert_square(minv_, k)) return false;
    // theta_J = M^{-1} s_I, theta_{J^c} = 0
    theta_.assign(d_, 0.0);
    for (std::size_t b = 0; b < k; ++b) {
      double acc = 0.0;
      for (std::size_t a = 0; a < k; ++a) acc += minv_[b * k + a] * s_[I_[a]];
      theta_[J_[b]] = acc;
    }
    pos_in_I_.assign(n_, -1);
    for (std::size_t a = 0; a < k; ++a) pos_in_I_[I_[a]] = static_cast<int>(a);
    in_J_.assign(d_, 0);
    for (int j : J_) in_J_[j] = 1;
    classify_residuals();
    return true;
  }

  bool init_warm(const SimplexBasis& basis) {
    const std::size_t k = basis.interp_rows.size();
    if (k != basis.basic_cols.size() || k > d_) return false;
    for (int i : basis.interp_rows) {
      if (i < 0 || static_cast<std::size_t>(i) >= n_) return false;
    }
    for (int j : basis.basic_cols) {
      if (j < 0 || static_cast<std::size_t>(j) >= d_) return false;
    }
    I_ = basis.interp_rows;
    J_ = basis.basic_cols;
    theta_.assign(d_, 0.0);
    r_.assign(n_, 0.0);
    sgn_.assign(n_, +1);
    if (!rebuild_from_basis()) {
      reset_state();
      classify_residuals();
      return false;
    }
    return true;
  }

  // Partition crash: every row one-hot -> per-column score quantiles are the
  // optimum (or one pivot away).  Bias crash: interpolate the row achieving
  // the (1-alpha) marginal quantile.
  bool init_crash() {
    reset_state();

    bool one_hot = true;
    for (std::size_t i = 0; i < n_ && one_hot; ++i) {
      const double* p = row(i);
      int nonzero = 0;
      for (std::size_t j = 0; j < d_; ++j) {
        if (p[j] != 0.0) {
          ++nonzero;
          if (std::abs(p[j] - 1.0) > 1e-12) one_hot = false;
        }
      }
      if (nonzero != 1) one_hot = false;
    }
    if (one_hot) {
      std::vector<std::vector<std::pair<double, int>>> per_col(d_);
      for (std::size_t i = 0; i < n_; ++i) {
        const double* p = row(i);
        for (std::size_t j = 0; j < d_; ++j) {
          if (p[j] != 0.0) {
            per_col[j].emplace_back(s_[i], static_cast<int>(i));
            break;
          }
        }
      }
      for (std::size_t j = 0; j < d_; ++j) {
        auto& col = per_col[j];
        if (col.empty()) continue;
        const std::size_t k =
            quantile_rank_for_crash(1.0 - alpha_, col.size());
        std::nth_element(col.begin(), col.begin() + (k - 1), col.end());
        I_.push_back(col[k - 1].second);
        J_.push_back(static_cast<int>(j));
      }
      if (!I_.empty() && rebuild_from_basis()) return true;
      reset_state();
      return false;
    }

    for (std::size_t j = 0; j < d_; ++j) {
      bool constant_one = true;
      for (std::size_t i = 0; i < n_; ++i) {
        if (std::abs(row(i)[j] - 1.0) > 1e-12) {
          constant_one = false;
          break;
        }
      }
      if (!constant_one) continue;
      std::vector<std::pair<double, int>> order(n_);
      for (std::size_t i = 0; i < n_; ++i) {
        order[i] = {s_[i], static_cast<int>(i)};
      }
      const std::size_t k = quantile_rank_for_crash(1.0 - alpha_, n_);
      std::nth_element(order.begin(), order.begin() + (k - 1), order.end());
      I_.push_back(order[k - 1].second);
      J_.push_back(static_cast<int>(j));
      if (rebuild_from_basis()) return true;
      reset_state();
      return false;
    }
    return false;
  }

  static std::size_t quantile_rank_for_crash(double beta, std::size_t n) {
    const double x = beta * static_cast<double>(n);
    auto k = static_cast<std::size_t>(std::ceil(x - 1e-9 * std::max(1.0, x)));
    if (k < 1) k = 1;
    if (k > n) k = n;
    return k;
  }

  // ---- pricing -------------------------------------------------------

  struct Candidate {
    // kind: 0 none, 1 theta column, 2 u_p, 3 v_p
    int kind = 0;
    int index = -1;   // column q or position in I_
    double sigma = 0; // direction for theta columns
    double rate = 0;  // reduced cost (negative when improving)
  };

  // Computes the reduced costs and picks the entering variable.  Costs an
  // O(n d) sweep; k = |I| is at most d.
  Candidate price(bool bland, std::vector<double>& w, std::vector<double>& z) {
    const std::size_t k = I_.size();
    w.assign(d_, 0.0);
    for (std::size_t i = 0; i < n_; ++i) {
      if (pos_in_I_[i] >= 0) continue;
      const double c = cost_coeff(sgn_[i]);
      const double* p = row(i);
      for (std::size_t j = 0; j < d_; ++j) w[j] += c * p[j];
    }
    z.assign(k, 0.0);
    for (std::size_t posn = 0; posn < k; ++posn) {
      double acc = 0.0;
      for (std::size_t a = 0; a < k; ++a) {
        acc += w[J_[a]] * minv_[a * k + posn];
      }
      z[posn] = acc;
    }

    const double ctol = opts_.pivot_tol;
    Candidate best;

    auto consider = [&](int kind, int index, double sigma, double rate,
                        long bland_index) {
      if (rate >= -ctol) return;
      if (bland) {
        if (best.kind == 0 || bland_index < best_bland_index_) {
          best = Candidate{kind, index, sigma, rate};
          best_bland_index_ = bland_index;
        }
      } else if (best.kind == 0 || rate < best.rate) {
        best = Candidate{kind, index, sigma, rate};
      }
    };

    best_bland_index_ = std::numeric_limits<long>::max();
    for (std::size_t q = 0; q < d_; ++q) {
      if (in_J_[q]) continue;
      double ghat = w[q];
      for (std::size_t posn = 0; posn < k; ++posn) {
        ghat -= row(I_[posn])[q] * z[posn];
      }
      const double sigma = ghat > 0.0 ? -1.0 : 1.0;
      consider(1, static_cast<int>(q), sigma, -std::abs(ghat),
               static_cast<long>(q));
    }
    for (std::size_t posn = 0; posn < k; ++posn) {
      const long base =
          static_cast<long>(d_) + 2 * static_cast<long>(I_[posn]);
      consider(2, static_cast<int>(posn), +1.0, alpha_ + z[posn], base);
      consider(3, static_cast<int>(posn), -1.0, (1.0 - alpha_) - z[posn],
               base + 1);
    }
    return best;
  }

  // ---- main loop -----------------------------------------------------

  SimplexResult run() {
    std::vector<double> w, z, dirj, delta(n_, 0.0);
    std::size_t iters = 0;
    std::size_t since_refactor = 0;
    std::size_t consecutive_degenerate = 0;
    bool bland_mode = opts_.always_bland;
    bool saw_degenerate = false;
    bool hit_limit = false;
    int resets = 0;

    while (true) {
      if (iters >= opts_.max_iterations) {
        hit_limit = true;
        break;
      }
      Candidate cand = price(bland_mode, w, z);
      if (cand.kind == 0) break;  // optimal

      const std::size_t k = I_.size();
      dirj.assign(k, 0.0);
      double dir_q = 0.0;
      int entering_col = -1;

      if (cand.kind == 1) {
        entering_col = cand.index;
        // keep interpolated rows interpolated: M dirj = -sigma Phi[I, q]
        for (std::size_t posn = 0; posn < k; ++posn) {
          double acc = 0.0;
          for (std::size_t a = 0; a < k; ++a) {
            acc += minv_[posn * k + a] * row(I_[a])[entering_col];
          }
          dirj[posn] = -cand.sigma * acc;
        }
        dir_q = cand.sigma;
      } else {
        // u/v of interpolated row I_[index] enters: dirj = +-(M^{-1} e_pos)
        const int posn = cand.index;
        for (std::size_t a = 0; a < k; ++a) {
          dirj[a] = cand.sigma * minv_[a * k + posn];
        }
      }

      // residual rates for rows outside I
      for (std::size_t i = 0; i < n_; ++i) {
        if (pos_in_I_[i] >= 0) {
          delta[i] = 0.0;
          continue;
        }
        const double* p = row(i);
        double acc = cand.kind == 1 ? dir_q * p[entering_col] : 0.0;
        for (std::size_t a = 0; a < k; ++a) acc += dirj[a] * p[J_[a]];
        delta[i] = acc;
      }

      // ratio test
      double t_star = std::numeric_limits<double>::infinity();
      int leave = -1;
      const double step_floor = kTiny * score_scale_;
      for (std::size_t i = 0; i < n_; ++i) {
        if (pos_in_I_[i] >= 0) continue;
        double t;
        if (sgn_[i] > 0) {
          if (delta[i] >= -kTiny) continue;
          t = std::max(r_[i], 0.0) / (-delta[i]);
        } else {
          if (delta[i] <= kTiny) continue;
          t = std::max(-r_[i], 0.0) / delta[i];
        }
        if (leave < 0) {
          t_star = t;
          leave = static_cast<int>(i);
          continue;
        }
        const double tie = 1e-9 * (1.0 + t_star);
        if (t < t_star - tie) {
          t_star = t;
          leave = static_cast<int>(i);
        } else if (t <= t_star + tie) {
          if (bland_mode) {
            if (static_cast<int>(i) < leave) leave = static_cast<int>(i);
          } else if (std::abs(delta[i]) > std::abs(delta[leave])) {
            leave = static_cast<int>(i);
          }
        }
      }

      if (leave < 0) {
        // cannot happen for alpha in (0,1): the objective is bounded below
        throw unbounded_problem_error(
            "pinball simplex: no blocking variable (numerical breakdown)");
      }

      if (t_star <= step_floor) {
        ++consecutive_degenerate;
        saw_degenerate = true;
        if (consecutive_degenerate >= opts_.bland_trigger) bland_mode = true;
        t_star = 0.0;
      } else {
        consecutive_degenerate = 0;
        if (!opts_.always_bland) bland_mode = false;
      }

      // move
      if (t_star > 0.0) {
        if (cand.kind == 1) theta_[entering_col] += dir_q * t_star;
        for (std::size_t a = 0; a < k; ++a) {
          theta_[J_[a]] += dirj[a] * t_star;
        }
        for (std::size_t i = 0; i < n_; ++i) {
          if (pos_in_I_[i] < 0) r_[i] += delta[i] * t_star;
        }
      }

      bool update_ok;
      if (cand.kind == 1) {
        update_ok = grow_basis(entering_col, leave, cand.sigma, delta[leave]);
      } else {
        update_ok = swap_row(cand.index, leave, delta[leave], t_star,
                             cand.kind == 2 ? +1 : -1);
      }
      r_[leave] = 0.0;

      ++iters;
      ++since_refactor;
      if (!update_ok || since_refactor >= opts_.refactor_every) {
        since_refactor = 0;
        if (!rebuild_from_basis()) {
          // safety valve; a pivoted basis should never go singular
          if (++resets > 3) {
            hit_limit = true;
            break;
          }
          init_cold();
        }
      }
    }

    return finalize(iters, saw_degenerate, hit_limit);
  }

  // Grows (I, J) by (leave, q) via the bordered-inverse formula.
  bool grow_basis(int q, int leave, double sigma, double delta_leave) {
    const std::size_t k = I_.size();
    const double chi = sigma * delta_leave;  // Schur pivot
    if (std::abs(chi) < kTiny) return grow_fallback(q, leave);

    // minva = M^{-1} a with a = Phi[I, q]; rowb = b^T M^{-1}, b = Phi[leave,J]
    std::vector<double> minva(k), rowb(k);
    for (std::size_t posn = 0; posn < k; ++posn) {
      double acc = 0.0;
      for (std::size_t a = 0; a < k; ++a) {
        acc += minv_[posn * k + a] * row(I_[a])[q];
      }
      minva[posn] = acc;
    }
    const double* lrow = row(leave);
    for (std::size_t posn = 0; posn < k; ++posn) {
      double acc = 0.0;
      for (std::size_t a = 0; a < k; ++a) {
        acc += lrow[J_[a]] * minv_[a * k + posn];
      }
      rowb[posn] = acc;
    }

    std::vector<double> next((k + 1) * (k + 1));
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = 0; b < k; ++b) {
        next[a * (k + 1) + b] = minv_[a * k + b] + minva[a] * rowb[b] / chi;
      }
      next[a * (k + 1) + k] = -minva[a] / chi;
    }
    for (std::size_t b = 0; b < k; ++b) {
      next[k * (k + 1) + b] = -rowb[b] / chi;
    }
    next[k * (k + 1) + k] = 1.0 / chi;

    minv_ = std::move(next);
    I_.push_back(leave);
    J_.push_back(q);
    pos_in_I_[leave] = static_cast<int>(k);
    in_J_[q] = 1;
    sgn_[leave] = 0;
    return true;
  }

  bool grow_fallback(int q, int leave) {
    I_.push_back(leave);
    J_.push_back(q);
    pos_in_I_[leave] = static_cast<int>(I_.size() - 1);
    in_J_[q] = 1;
    sgn_[leave] = 0;
    return false;  // caller refactors
  }

  // Replaces interpolated row I_[posn] by `leave` (Sherman-Morrison).  The
  // departing row p gets residual +-t_star depending on whether u_p or v_p
  // entered.
  bool swap_row(int posn, int leave, double delta_leave, double t_star,
                int new_sign) {
    const std::size_t k = I_.size();
    const int p = I_[posn];

    pos_in_I_[p] = -1;
    sgn_[p] = static_cast<signed char>(new_sign);
    r_[p] = new_sign > 0 ? t_star : -t_star;

    I_[posn] = leave;
    pos_in_I_[leave] = posn;
    sgn_[leave] = 0;

    // denom = 1 + v^T M^{-1} e_pos, v = phi_leave[J] - phi_p[J]
    std::vector<double> col(k);
    for (std::size_t a = 0; a < k; ++a) col[a] = minv_[a * k + posn];
    const double* lrow = row(leave);
    const double* prow = row(p);
    double denom = 1.0;
    for (std::size_t a = 0; a < k; ++a) {
      denom += (lrow[J_[a]] - prow[J_[a]]) * col[a];
    }
    if (std::abs(denom) < kTiny) return false;  // caller refactors

    std::vector<double> vtm(k, 0.0);
    for (std::size_t b = 0; b < k; ++b) {
      double acc = 0.0;
      for (std::size_t a = 0; a < k; ++a) {
        acc += (lrow[J_[a]] - prow[J_[a]]) * minv_[a * k + b];
      }
      vtm[b] = acc;
    }
    for (std::size_t a = 0; a < k; ++a) {
      const double f = col[a] / denom;
      if (f == 0.0) continue;
      for (std::size_t b = 0; b < k; ++b) {
        minv_[a * k + b] -= f * vtm[b];
      }
    }
    (void)delta_leave;
    return true;
  }

  SimplexResult finalize(std::size_t iters, bool saw_degenerate,
                         bool hit_limit) {
    // clean refactorization so theta, residuals and duals are crisp
    if (!I_.empty() && !rebuild_from_basis()) {
      init_cold();
    } else if (I_.empty()) {
      classify_residuals();
    }

    const std::size_t k = I_.size();
    std::vector<double> w(d_, 0.0);
    for (std::size_t i = 0; i < n_; ++i) {
      if (pos_in_I_[i] >= 0) continue;
      const double c = cost_coeff(sgn_[i]);
      const double* p = row(i);
      for (std::size_t j = 0; j < d_; ++j) w[j] += c * p[j];
    }

    SimplexResult res;
    res.theta = theta_;
    res.eta.assign(n_, 0.0);
    for (std::size_t i = 0; i < n_; ++i) {
      if (pos_in_I_[i] < 0) res.eta[i] = cost_coeff(sgn_[i]);
    }
    double max_clip = 0.0;
    for (std::size_t posn = 0; posn < k; ++posn) {
      double zp = 0.0;
      for (std::size_t a = 0; a < k; ++a) {
        zp += w[J_[a]] * minv_[a * k + posn];
      }
      double eta = -zp;
      const double lo = -(1.0 - alpha_), hi = alpha_;
      if (eta < lo) {
        max_clip = std::max(max_clip, lo - eta);
        eta = lo;
      } else if (eta > hi) {
        max_clip = std::max(max_clip, eta - hi);
        eta = hi;
      }
      res.eta[I_[posn]] = eta;
    }
    res.max_eta_clip = max_clip;

    res.interp_rows.assign(I_.begin(), I_.end());
    std::sort(res.interp_rows.begin(), res.interp_rows.end());

    double obj = 0.0;
    for (std::size_t i = 0; i < n_; ++i) {
      obj += alpha_ * std::max(r_[i], 0.0) +
             (1.0 - alpha_) * std::max(-r_[i], 0.0);
    }
    res.objective = obj / static_cast<double>(n_);
    res.iterations = iters;

    bool near_tie = false;
    for (std::size_t i = 0; i < n_ && !near_tie; ++i) {
      if (pos_in_I_[i] < 0 &&
          std::abs(r_[i]) <= opts_.interp_tol * (1.0 + std::abs(s_[i]))) {
        near_tie = true;
      }
    }
    if (hit_limit) {
      res.status = SolverStatus::iteration_limit;
    } else if (saw_degenerate || near_tie) {
      res.status = SolverStatus::degenerate_optimal;
    } else {
      res.status = SolverStatus::optimal;
    }
    return res;
  }

  std::vector<double> phi_;
  std::vector<double> s_;
  std::size_t n_, d_;
  double alpha_;
  SimplexOptions opts_;
  double score_scale_ = 1.0;

  std::vector<int> I_, J_;
  std::vector<double> minv_;
  std::vector<double> theta_;
  std::vector<double> r_;
  std::vector<signed char> sgn_;
  std::vector<int> pos_in_I_;
  std::vector<char> in_J_;
  long best_bland_index_ = 0;
};

}  // namespace splitconf
