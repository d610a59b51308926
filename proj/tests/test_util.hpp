#pragma once

#include <functional>
#include <vector>

#include "parlm/graph.hpp"

namespace parlm::testutil {

// Central finite-difference check of d(loss)/d(param) for every entry of the
// listed parameters. `build` must construct the scalar loss from the current
// parameter values. Returns the worst relative error, with small gradients
// compared absolutely against the 1e-2 floor.
inline double max_rel_grad_error(ParamStore& store,
                                 const std::vector<Param*>& params,
                                 const std::function<double(Graph&, bool)>& build,
                                 double h = 1e-5) {
  store.zero_grads();
  {
    Graph g;
    (void)build(g, /*backward=*/true);
  }
  double worst = 0.0;
  for (Param* p : params) {
    for (long i = 0; i < p->rows(); ++i)
      for (long j = 0; j < p->cols(); ++j) {
        const double keep = p->value(i, j);
        p->value(i, j) = keep + h;
        Graph gp;
        const double up = build(gp, false);
        p->value(i, j) = keep - h;
        Graph gm;
        const double dn = build(gm, false);
        p->value(i, j) = keep;
        const double fd = (up - dn) / (2.0 * h);
        const double an = p->grad(i, j);
        const double err = std::abs(fd - an) / std::max({1e-2, std::abs(fd), std::abs(an)});
        worst = std::max(worst, err);
      }
  }
  return worst;
}

inline Mat random_mat(long r, long c, Rng& rng, double scale = 1.0) {
  Mat m(r, c);
  for (long i = 0; i < r; ++i)
    for (long j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
  return m;
}

}  // namespace parlm::testutil
