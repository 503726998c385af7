#include "invariance.hpp"

#include <algorithm>
#include <cmath>

#include "common.hpp"

namespace eqm {

std::vector<double> invariance_scores(const TransformationLayer& layer) {
  const int d = layer.d, m = layer.m, r = (m - 1) / 2;
  std::vector<double> scores(std::size_t(d), 0.0);
  for (int t = 0; t < d; ++t) {
    double total = 0.0;
    const double diag = layer.conv.w[std::size_t(((t * m + r) * m + r) * d + t)];
    for (int q = 0; q < m * m * d; ++q) {
      double v = layer.conv.w[std::size_t(t * m * m * d + q)];
      total += v * v;
    }
    double off = total - diag * diag;
    if (off < 0.0) off = 0.0;  // fp cancellation
    scores[std::size_t(t)] = off <= 1e-24 ? 1e12 : std::sqrt(total / off);
  }
  return scores;
}

std::vector<int> invariance_order(const std::vector<double>& scores) {
  std::vector<int> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = int(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[std::size_t(a)] > scores[std::size_t(b)]; });
  return order;
}

TransformationLayer freeze_channels(const TransformationLayer& layer,
                                    const std::vector<int>& channels) {
  const int d = layer.d, m = layer.m, r = (m - 1) / 2;
  TransformationLayer out = layer;
  for (int t : channels) {
    require(t >= 0 && t < d, Errc::invalid_argument, "freeze_channels: channel out of range");
    const double alpha = layer.conv.w[std::size_t(((t * m + r) * m + r) * d + t)];
    for (int q = 0; q < m * m * d; ++q) out.conv.w[std::size_t(t * m * m * d + q)] = 0.0;
    out.conv.w[std::size_t(((t * m + r) * m + r) * d + t)] = alpha;
  }
  return out;
}

InvariantSetResult max_invariant_set(const Network& net, int boundary,
                                     const TransformationLayer& layer, const Dataset& ds,
                                     const Affine2& g_inverse, double tol) {
  InvariantSetResult res;
  res.tol = tol;
  res.scores = invariance_scores(layer);
  res.order = invariance_order(res.scores);
  res.base_err = probe_error(net, boundary, &layer, ds, &g_inverse);
  const double bound = (1.0 + tol) * res.base_err;

  auto probe = [&](int p) {
    std::vector<int> channels(res.order.begin(), res.order.begin() + p);
    TransformationLayer frozen = freeze_channels(layer, channels);
    double err = probe_error(net, boundary, &frozen, ds, &g_inverse);
    bool ok = err <= bound;
    res.evals.push_back({p, err, ok});
    return ok;
  };

  // p = 0 leaves the layer untouched, so it is always accepted.
  int lo = 0, hi = layer.d;
  while (lo < hi) {
    int mid = lo + (hi - lo + 1) / 2;
    if (probe(mid))
      lo = mid;
    else
      hi = mid - 1;
  }
  res.p = lo;

  // The search assumes acceptance is monotone in p; report if the probes
  // contradict that (an accepted prefix larger than a rejected one).
  for (const InvarianceEval& a : res.evals)
    for (const InvarianceEval& b : res.evals)
      if (a.accepted && !b.accepted && a.p > b.p) res.monotone = false;
  return res;
}

}  // namespace eqm
