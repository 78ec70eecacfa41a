#pragma once

#include "cot/autodiff.hpp"
#include "cot/common.hpp"

#include <algorithm>
#include <array>

namespace cot {

struct Margins {
  double rho1 = 0.5;
  double rho2 = 0.5;

  void validate() const {
    if (rho1 < 0.0 || rho1 > 2.0 || rho2 < 0.0 || rho2 > 2.0)
      throw ConfigError("Margins: rho1 and rho2 must lie in [0, 2]");
  }
};

struct LossBreakdown {
  double mle = 0.0;
  double transported = 0.0;
  double self_contrastive = 0.0;
  double total = 0.0;
  std::array<double, 3> betas{0.6, 0.4, 0.2};
};

inline double cosine(const Eigen::RowVectorXd& u, const Eigen::RowVectorXd& v) {
  if (u.size() != v.size()) throw InputError("cosine: dimension mismatch");
  const double nu = u.norm(), nv = v.norm();
  if (nu == 0.0 || nv == 0.0) throw InputError("cosine: zero vector");
  const double c = u.dot(v) / (nu * nv);
  return std::clamp(c, -1.0, 1.0);
}

// (1/n) sum_i max{0, rho1 - cos(R_S[i], T_S[i])}
inline double transported_contrastive_loss(const Mat& r_s, const Mat& t_s, double rho1) {
  if (r_s.rows() != t_s.rows() || r_s.cols() != t_s.cols())
    throw InputError("transported_contrastive_loss: shape mismatch");
  if (r_s.rows() < 1) throw InputError("transported_contrastive_loss: empty input");
  double loss = 0.0;
  for (long i = 0; i < r_s.rows(); ++i)
    loss += std::max(0.0, rho1 - cosine(r_s.row(i), t_s.row(i)));
  return loss / static_cast<double>(r_s.rows());
}

// gamma * sum_{i != j} max{0, rho2 - s(h_i, h_i) + s(h_i, h_j)} with
// gamma = 1 / (n (n - 1)). The self term is evaluated literally.
inline double self_contrastive_loss(const Mat& r_s, double rho2) {
  const long n = r_s.rows();
  if (n < 2) throw InputError("self_contrastive_loss: needs at least 2 rows");
  double loss = 0.0;
  for (long i = 0; i < n; ++i) {
    const double self_sim = cosine(r_s.row(i), r_s.row(i));
    for (long j = 0; j < n; ++j) {
      if (j == i) continue;
      loss += std::max(0.0, rho2 - self_sim + cosine(r_s.row(i), r_s.row(j)));
    }
  }
  return loss / static_cast<double>(n * (n - 1));
}

inline LossBreakdown combined_loss(double mle, double lt, double lc,
                                   const std::array<double, 3>& betas) {
  for (double b : betas)
    if (!std::isfinite(b)) throw InputError("combined_loss: betas must be finite");
  LossBreakdown out;
  out.mle = mle;
  out.transported = lt;
  out.self_contrastive = lc;
  out.betas = betas;
  out.total = betas[0] * mle + betas[1] * lt + betas[2] * lc;
  return out;
}

// ---------------------------------------------------------------------------
// Differentiable versions.
// ---------------------------------------------------------------------------

inline ad::Var transported_contrastive_tape(ad::Var r_s, ad::Var t_s, double rho1) {
  if (r_s.rows() < 1) throw InputError("transported_contrastive_loss: empty input");
  ad::Var cos = ad::cosine_rows(r_s, t_s);  // n x 1
  ad::Var hinge = ad::relu(ad::add_scalar(ad::scale(cos, -1.0), rho1));
  return ad::mean_all(hinge);
}

inline ad::Var self_contrastive_tape(ad::Var r_s, double rho2) {
  const long n = r_s.rows();
  if (n < 2) throw InputError("self_contrastive_loss: needs at least 2 rows");
  ad::Tape& t = *r_s.tape;
  ad::Var rn = ad::l2_normalize_rows(r_s, "R_S");
  ad::Var sim = ad::matmul_nt(rn, rn);  // pairwise cosines, diagonal is s(h_i, h_i)
  Mat eye = Mat::Identity(n, n);
  ad::Var diag = ad::sum_rows(ad::cmul(sim, ad::constant(t, eye)));  // n x 1
  ad::Var arg = ad::add_scalar(ad::sub(sim, ad::bcast_col(diag, n)), rho2);
  ad::Var off = ad::cmul(ad::relu(arg), ad::constant(t, Mat(Mat::Ones(n, n) - eye)));
  return ad::scale(ad::sum_all(off), 1.0 / static_cast<double>(n * (n - 1)));
}

}  // namespace cot
