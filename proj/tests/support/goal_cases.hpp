#pragma once

// Random goal instances for gradient checks. Motions are drawn so that a good
// share of hinge terms are active.

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mscot/common/rng.hpp"
#include "mscot/goals/goals.hpp"

namespace mscot::testing {

struct GoalInstance {
  goals::GoalPtr goal;
  ndiff::Tensor motion;
};

struct GoalCase {
  std::string name;
  std::function<GoalInstance(Rng&)> make;
};

// Signed distance to a sphere, sampled on a regular grid over [-2, 2]^3.
inline std::shared_ptr<goals::SdfGrid> sphere_grid(std::array<double, 3> centre, double radius,
                                                   std::size_t n = 41) {
  std::vector<double> values(n * n * n);
  const double lo = -2.0, h = 4.0 / (n - 1);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < n; ++i) {
        const double x = lo + i * h - centre[0], y = lo + j * h - centre[1], z = lo + k * h - centre[2];
        values[(k * n + j) * n + i] = std::sqrt(x * x + y * y + z * z) - radius;
      }
  return std::make_shared<goals::SdfGrid>(std::array<std::size_t, 3>{n, n, n},
                                          std::array<double, 3>{lo, lo, lo},
                                          std::array<double, 3>{2.0, 2.0, 2.0}, std::move(values));
}

inline ndiff::Tensor random_motion(Rng& rng, std::size_t T, std::size_t D, double spread) {
  ndiff::Tensor m({T, D});
  for (double& v : m.data()) v = rng.uniform(-spread, spread);
  return m;
}

inline goals::GoalPtr random_joint(Rng& rng, std::size_t T, std::size_t D) {
  goals::ControlMask mask(T, D);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < D; ++j)
      if (rng.bernoulli(0.3)) mask.set(t, j, rng.normal(0, 1));
  mask.set(0, 0, rng.normal(0, 1));
  return std::make_shared<goals::JointGoal>(mask, rng.uniform(0.2, 2.0));
}

inline std::vector<GoalCase> all_goal_cases() {
  using namespace goals;
  std::vector<GoalCase> cases;
  cases.push_back({"joint", [](Rng& r) { return GoalInstance{random_joint(r, 8, 4), random_motion(r, 8, 4, 1.5)}; }});
  cases.push_back({"obstacle", [](Rng& r) {
    auto g = std::make_shared<ObstacleGoal>(std::vector<std::size_t>{0, 1},
                                            std::vector<double>{r.uniform(-0.3, 0.3), r.uniform(-0.3, 0.3)},
                                            r.uniform(0.3, 0.7), r.uniform(0.0, 0.4));
    return GoalInstance{g, random_motion(r, 8, 4, 1.2)};
  }});
  cases.push_back({"region", [](Rng& r) {
    auto g = std::make_shared<RegionGoal>(std::vector<std::size_t>{0, 1}, std::vector<double>{-0.5, -0.4},
                                          std::vector<double>{0.4, 0.6});
    return GoalInstance{g, random_motion(r, 8, 4, 1.5)};
  }});
  cases.push_back({"sdf", [](Rng& r) {
    static const auto grid = sphere_grid({0.1, -0.2, 0.0}, 0.8);
    PointProxy body{{0, 1, -1}, {0.0, 0.0, r.uniform(-0.3, 0.3)}, r.uniform(0.05, 0.3)};
    PointProxy foot_a{{0, 1, 2}, {0.0, 0.0, 0.0}, 0.0};
    PointProxy foot_b{{0, 1, 3}, {0.0, 0.0, 0.0}, 0.0};
    auto g = std::make_shared<SdfGoal>(grid, std::vector<PointProxy>{body},
                                      std::vector<PointProxy>{foot_a, foot_b}, 0.05,
                                      r.uniform(0.5, 2.0), r.uniform(0.5, 2.0));
    return GoalInstance{g, random_motion(r, 8, 4, 1.4)};
  }});
  cases.push_back({"composite", [](Rng& r) {
    auto c = std::make_shared<CompositeGoal>();
    c->add(random_joint(r, 8, 4), r.uniform(0.1, 2.0));
    c->add(std::make_shared<RegionGoal>(std::vector<std::size_t>{2}, std::vector<double>{-0.3},
                                        std::vector<double>{0.3}),
           r.uniform(0.1, 2.0));
    c->add(std::make_shared<ObstacleGoal>(std::vector<std::size_t>{0, 1}, std::vector<double>{0.0, 0.0},
                                          0.5, 0.2),
           r.uniform(0.1, 2.0));
    return GoalInstance{c, random_motion(r, 8, 4, 1.2)};
  }});
  return cases;
}

}  // namespace mscot::testing
