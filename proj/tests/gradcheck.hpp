#pragma once

// Finite-difference gradient checks shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "nicreg/diff_engine.hpp"

namespace nicreg::testing {

inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Central difference of f at a perturbed coordinate.
inline double central_difference(const std::function<double()>& f, double& coord, double h) {
  const double saved = coord;
  coord = saved + h;
  const double up = f();
  coord = saved - h;
  const double down = f();
  coord = saved;
  return (up - down) / (2.0 * h);
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::string worst;  // "name[index]"
  std::size_t checked = 0;
};

// Compares accumulated parameter gradients with central differences of the
// scalar returned by `loss`, over every entry of every trainable parameter.
// The loss is rebuilt from scratch for each evaluation.
inline GradCheck check_param_gradients(ad::ParamStore& params,
                                       const std::function<ad::Var(ad::Graph&)>& loss,
                                       double h = 1e-5, double floor = 1e-6) {
  params.zero_grad();
  {
    ad::Graph g;
    g.backward(loss(g));
  }
  GradCheck out;
  for (auto& [name, p] : params.entries()) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      auto f = [&] {
        ad::Graph g;
        return loss(g).item();
      };
      const double numeric = central_difference(f, p.value[i], h);
      const double err = rel_error(p.grad[i], numeric, floor);
      ++out.checked;
      if (err > out.max_rel_error) {
        out.max_rel_error = err;
        out.worst = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return out;
}

}  // namespace nicreg::testing
