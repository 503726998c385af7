#include "solvers.hpp"

#include <algorithm>
#include <cmath>

#include "common.hpp"

namespace eqm {

DenseSolveResult solve_dense(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, bool ridge,
                             double lambda) {
  const Eigen::Index n = X.rows(), p = X.cols(), q = Y.cols();
  require(Y.rows() == n, Errc::invalid_argument, "solve_dense: X/Y row mismatch");
  require(n >= 1 && p >= 1 && q >= 1, Errc::invalid_argument, "solve_dense: empty problem");
  require(X.allFinite() && Y.allFinite(), Errc::numeric, "solve_dense: non-finite input");
  require(!ridge || lambda > 0.0, Errc::invalid_argument, "solve_dense: ridge needs lambda > 0");

  Eigen::RowVectorXd xm = X.colwise().mean();
  Eigen::RowVectorXd ym = Y.colwise().mean();
  Eigen::MatrixXd Xc = X.rowwise() - xm;
  Eigen::MatrixXd Yc = Y.rowwise() - ym;

  DenseSolveResult res;
  if (!ridge && p <= n) {
    res.beta = Xc.completeOrthogonalDecomposition().solve(Yc);
  } else if (!ridge) {
    // Min-norm interpolant via the dual: beta = Xc' (Xc Xc')^+ Yc. The Gram
    // is n x n, so rank handling stays cheap when p is huge; COD of the
    // Gram absorbs any rank deficiency.
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(n, n);
    G.selfadjointView<Eigen::Lower>().rankUpdate(Xc);
    Eigen::MatrixXd Gfull = G.selfadjointView<Eigen::Lower>();
    res.beta = Xc.transpose() * Gfull.completeOrthogonalDecomposition().solve(Yc);
  } else if (p <= n) {
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(p, p);
    G.selfadjointView<Eigen::Lower>().rankUpdate(Xc.transpose());
    G.diagonal().array() += lambda;
    Eigen::LLT<Eigen::MatrixXd> llt(G.selfadjointView<Eigen::Lower>());
    require(llt.info() == Eigen::Success, Errc::numeric, "solve_dense: factorization failed");
    res.beta = llt.solve(Xc.transpose() * Yc);
  } else {
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(n, n);
    G.selfadjointView<Eigen::Lower>().rankUpdate(Xc);
    G.diagonal().array() += lambda;
    Eigen::LLT<Eigen::MatrixXd> llt(G.selfadjointView<Eigen::Lower>());
    require(llt.info() == Eigen::Success, Errc::numeric, "solve_dense: factorization failed");
    res.beta = Xc.transpose() * llt.solve(Yc);
  }
  res.bias = (ym - xm * res.beta).transpose();
  return res;
}

FsResult solve_fs(const Eigen::MatrixXd& Xc, const Eigen::VectorXd& col_norm2,
                  const Eigen::RowVectorXd& x_mean, const Eigen::VectorXd& y, int k,
                  double rel_tol) {
  const Eigen::Index n = Xc.rows(), p = Xc.cols();
  require(y.size() == n, Errc::invalid_argument, "solve_fs: X/y size mismatch");
  require(col_norm2.size() == p && x_mean.size() == p, Errc::invalid_argument,
          "solve_fs: column stats size mismatch");
  require(y.allFinite(), Errc::numeric, "solve_fs: non-finite target");
  if (k > int(p)) k = int(p);

  FsResult res;
  double ym = y.mean();
  Eigen::VectorXd yc = y.array() - ym;
  res.rss0 = yc.squaredNorm();
  res.rss = res.rss0;
  res.bias = ym;
  // Relative floor keyed to the initial residual; constant targets are
  // bias-only rows with no solve at all.
  const double floor = rel_tol * std::max(res.rss0, double(n) * 1e-30);
  if (res.rss0 <= floor || k <= 0) return res;

  const double var_floor = 1e-14 * double(n);
  Eigen::VectorXd r = yc;
  std::vector<int> picked;
  Eigen::MatrixXd gram(k, k);
  for (int step = 0; step < k; ++step) {
    Eigen::VectorXd corr = Xc.transpose() * r;
    int best = -1;
    double best_score = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (col_norm2[j] <= var_floor) continue;
      bool used = false;
      for (int s : picked)
        if (s == int(j)) {
          used = true;
          break;
        }
      if (used) continue;
      double score = corr[j] * corr[j] / col_norm2[j];
      if (score > best_score) {  // strict: first (lowest) index wins ties
        best_score = score;
        best = int(j);
      }
    }
    if (best < 0) break;
    picked.push_back(best);
    const int s = int(picked.size());
    for (int i = 0; i < s; ++i) {
      gram(i, s - 1) = gram(s - 1, i) = Xc.col(picked[std::size_t(i)]).dot(Xc.col(best));
    }
    Eigen::VectorXd rhs(s);
    for (int i = 0; i < s; ++i) rhs[i] = Xc.col(picked[std::size_t(i)]).dot(yc);
    Eigen::MatrixXd gs = gram.topLeftCorner(s, s);
    // Tiny jitter keeps the refit defined if picked columns are collinear.
    gs.diagonal().array() += 1e-12 * gs.diagonal().maxCoeff();
    Eigen::LDLT<Eigen::MatrixXd> ldlt(gs);
    require(ldlt.info() == Eigen::Success, Errc::numeric, "solve_fs: refit failed");
    Eigen::VectorXd beta = ldlt.solve(rhs);
    r = yc;
    for (int i = 0; i < s; ++i) r -= beta[i] * Xc.col(picked[std::size_t(i)]);
    res.rss = r.squaredNorm();
    res.support = picked;
    res.coeffs.assign(beta.data(), beta.data() + s);
    if (res.rss <= floor) break;
  }

  // Report in ascending column order and fold means into the intercept.
  std::vector<std::size_t> order(res.support.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return res.support[a] < res.support[b]; });
  std::vector<int> sup;
  std::vector<double> cf;
  double dot = 0.0;
  for (std::size_t i : order) {
    sup.push_back(res.support[i]);
    cf.push_back(res.coeffs[i]);
    dot += res.coeffs[i] * x_mean[res.support[i]];
  }
  res.support = std::move(sup);
  res.coeffs = std::move(cf);
  res.bias = ym - dot;
  return res;
}

}  // namespace eqm
