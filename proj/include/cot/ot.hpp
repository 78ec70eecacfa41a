#pragma once

#include "cot/autodiff.hpp"
#include "cot/common.hpp"

#include <string>
#include <vector>

namespace cot {

// Cost readings exposed behind a flag: `kernel` is the literal
// exp(dot / eta) mapping, `neg_dot` flips the sign so that similar pairs are
// cheap, `gaussian` is exp(-|x - y|^2 / eta) on the normalized rows.
enum class CostKind { kKernel, kNegDot, kGaussian };

inline CostKind cost_kind_from_string(const std::string& s) {
  if (s == "kernel") return CostKind::kKernel;
  if (s == "neg_dot") return CostKind::kNegDot;
  if (s == "gaussian") return CostKind::kGaussian;
  throw ConfigError("unknown cost kind: " + s + " (expected kernel|neg_dot|gaussian)");
}

inline std::string to_string(CostKind k) {
  switch (k) {
    case CostKind::kKernel: return "kernel";
    case CostKind::kNegDot: return "neg_dot";
    default: return "gaussian";
  }
}

struct CostMatrix {
  Mat values;  // |R_t| x |R_S|
  double eta = 0.1;
  CostKind kind = CostKind::kKernel;
};

struct TransportPlan {
  Mat p;       // |R_t| x |R_S|, entrywise >= 0
  Vec a, b;    // marginals
  double epsilon = 0.1;
  double residual = 0.0;  // max marginal violation after the last iteration
  int iterations_run = 0;
};

inline Vec uniform_weights(long n) {
  if (n <= 0) throw InputError("uniform_weights: n must be positive");
  return Vec::Constant(n, 1.0 / static_cast<double>(n));
}

namespace detail {
inline Mat l2_normalized_rows(const Mat& x, const char* what) {
  Mat out = x;
  for (long i = 0; i < x.rows(); ++i) {
    const double n = x.row(i).norm();
    if (n == 0.0)
      throw InputError(std::string("cost_matrix: zero-norm row ") + std::to_string(i) + " in " +
                       what);
    out.row(i) /= n;
  }
  return out;
}
}  // namespace detail

// Rows are L2-normalized first so the kernel exponent stays within
// [-1/eta, 1/eta].
inline CostMatrix cost_matrix(const Mat& r_t, const Mat& r_s, double eta,
                              CostKind kind = CostKind::kKernel) {
  if (eta <= 0.0) throw ConfigError("cost_matrix: eta must be positive");
  if (r_t.cols() != r_s.cols()) throw InputError("cost_matrix: dimension mismatch");
  if (!r_t.allFinite() || !r_s.allFinite())
    throw InputError("cost_matrix: non-finite input rows");
  const Mat tn = detail::l2_normalized_rows(r_t, "R_t");
  const Mat sn = detail::l2_normalized_rows(r_s, "R_S");
  const Mat dot = tn * sn.transpose();
  CostMatrix c;
  c.eta = eta;
  c.kind = kind;
  switch (kind) {
    case CostKind::kKernel: c.values = (dot.array() / eta).exp().matrix(); break;
    case CostKind::kNegDot: c.values = -dot; break;
    case CostKind::kGaussian:
      c.values = ((dot.array() * 2.0 - 2.0) / eta).exp().matrix();
      break;
  }
  return c;
}

// Entropic OT via alternating row/column scalings of the Gibbs kernel
// K = exp(-C / epsilon), run in the log domain. Stops at max_iters or once
// the max marginal violation falls below tol.
inline TransportPlan sinkhorn(const CostMatrix& c, const Vec& a, const Vec& b, double epsilon,
                              int max_iters, double tol) {
  const Mat& cost = c.values;
  if (epsilon <= 0.0) throw ConfigError("sinkhorn: epsilon must be positive");
  if (max_iters < 1) throw ConfigError("sinkhorn: max_iters must be >= 1");
  if (a.size() != cost.rows() || b.size() != cost.cols())
    throw InputError("sinkhorn: marginal dimensions do not match the cost matrix");
  if (a.minCoeff() < 0.0 || b.minCoeff() < 0.0)
    throw InputError("sinkhorn: marginals must be non-negative");
  if (!cost.allFinite()) throw InputError("sinkhorn: cost matrix has non-finite entries");

  const long n = cost.rows(), m = cost.cols();
  const Mat log_k = -cost / epsilon;
  const Vec log_a = a.array().log().matrix();
  const Vec log_b = b.array().log().matrix();

  auto lse_rows = [](const Mat& x) {
    Vec out(x.rows());
    for (long i = 0; i < x.rows(); ++i) {
      const double mx = x.row(i).maxCoeff();
      out(i) = std::isinf(mx) ? mx : mx + std::log((x.row(i).array() - mx).exp().sum());
    }
    return out;
  };
  auto lse_cols = [&](const Mat& x) { return lse_rows(Mat(x.transpose())); };

  Vec lu = Vec::Zero(n), lv = Vec::Zero(m);
  TransportPlan plan;
  plan.a = a;
  plan.b = b;
  plan.epsilon = epsilon;
  auto plan_matrix = [&]() {
    return (((log_k.colwise() + lu).rowwise() + lv.transpose()).array().exp()).matrix();
  };
  for (int it = 1; it <= max_iters; ++it) {
    lu = log_a - lse_rows(log_k.rowwise() + lv.transpose());
    lv = log_b - lse_cols(log_k.colwise() + lu);
    if (lu.hasNaN() || lv.hasNaN())
      throw NumericalError(
          "sinkhorn: scaling produced NaN (underflow/overflow); use a larger epsilon");
    plan.p = plan_matrix();
    plan.residual = std::max((plan.p.rowwise().sum() - a).cwiseAbs().maxCoeff(),
                             (plan.p.colwise().sum().transpose() - b).cwiseAbs().maxCoeff());
    plan.iterations_run = it;
    if (plan.residual < tol) break;
  }
  if (!plan.p.allFinite())
    throw NumericalError("sinkhorn: non-finite transport plan; use a larger epsilon");
  return plan;
}

// Barycentric transported representation:
//   T_S = relu((normalize_cols(P))^T . R_t . W_S + b_S)
// Each sentence token receives a convex combination of target rows.
inline Mat transport(const TransportPlan& plan, const Mat& r_t, const Mat& w_s, const Mat& b_s) {
  if (plan.p.rows() != r_t.rows())
    throw InputError("transport: plan row count does not match R_t");
  if (w_s.rows() != r_t.cols() || w_s.cols() != b_s.cols() || b_s.rows() != 1)
    throw InputError("transport: projection shapes are inconsistent");
  Eigen::RowVectorXd colsum = plan.p.colwise().sum();
  for (long j = 0; j < colsum.size(); ++j)
    if (colsum(j) <= 0.0)
      throw NumericalError("transport: zero column sum at column " + std::to_string(j));
  const Mat pn = (plan.p.array().rowwise() / colsum.array()).matrix();
  Mat t = (pn.transpose() * r_t) * w_s;
  t.rowwise() += b_s.row(0);
  return t.cwiseMax(0.0);
}

// ---------------------------------------------------------------------------
// Differentiable versions for training (Sinkhorn unrolled a fixed number of
// iterations, no early stopping).
// ---------------------------------------------------------------------------

inline ad::Var cost_matrix_tape(ad::Var r_t, ad::Var r_s, double eta,
                                CostKind kind = CostKind::kKernel) {
  if (eta <= 0.0) throw ConfigError("cost_matrix: eta must be positive");
  ad::Var tn = ad::l2_normalize_rows(r_t, "R_t");
  ad::Var sn = ad::l2_normalize_rows(r_s, "R_S");
  ad::Var dot = ad::matmul_nt(tn, sn);
  switch (kind) {
    case CostKind::kKernel: return ad::exp_(ad::scale(dot, 1.0 / eta));
    case CostKind::kNegDot: return ad::scale(dot, -1.0);
    default: return ad::exp_(ad::scale(ad::add_scalar(ad::scale(dot, 2.0), -2.0), 1.0 / eta));
  }
}

inline ad::Var sinkhorn_tape(ad::Var cost, const Vec& a, const Vec& b, double epsilon,
                             int iters) {
  if (epsilon <= 0.0) throw ConfigError("sinkhorn: epsilon must be positive");
  if (iters < 1) throw ConfigError("sinkhorn: iteration count must be >= 1");
  if (a.size() != cost.rows() || b.size() != cost.cols())
    throw InputError("sinkhorn: marginal dimensions do not match the cost matrix");
  ad::Tape& t = *cost.tape;
  const long n = cost.rows(), m = cost.cols();
  ad::Var log_k = ad::scale(cost, -1.0 / epsilon);
  ad::Var log_a = ad::constant(t, a.array().log().matrix());           // n x 1
  ad::Var log_b = ad::constant(t, b.transpose().array().log().matrix());  // 1 x m
  ad::Var lu, lv;
  for (int it = 0; it < iters; ++it) {
    ad::Var shifted = it == 0 ? log_k : ad::add(log_k, ad::bcast_row(lv, n));
    lu = ad::sub(log_a, ad::logsumexp_rows(shifted));
    lv = ad::sub(log_b, ad::logsumexp_cols(ad::add(log_k, ad::bcast_col(lu, m))));
  }
  return ad::exp_(ad::add(ad::add(log_k, ad::bcast_col(lu, m)), ad::bcast_row(lv, n)));
}

inline ad::Var transport_tape(ad::Var plan, ad::Var r_t, ad::Var w_s, ad::Var b_s) {
  ad::Var colsum = ad::sum_cols(plan);  // 1 x m
  ad::Var pn = ad::cdiv(plan, ad::bcast_row(colsum, plan.rows()));
  return ad::relu(ad::add_rowvec(ad::matmul(ad::matmul_tn(pn, r_t), w_s), b_s));
}

}  // namespace cot
