#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mscot/ndiff/tape.hpp"

namespace mscot::goals {

// Log-likelihood of a decoded motion with its exact gradient. Every goal is a
// negated penalty, so value <= 0.
struct GoalValue {
  double value = 0.0;
  ndiff::Tensor gradient;
};

class Goal {
 public:
  virtual ~Goal() = default;
  virtual GoalValue evaluate(const ndiff::Tensor& motion) const = 0;
  virtual std::string kind() const = 0;
};

using GoalPtr = std::shared_ptr<const Goal>;

// Places an analytic goal on the tape as a scalar node of `motion`.
ndiff::Var goal_on_tape(const Goal& goal, const ndiff::Var& motion);

// Binary frames x channels mask with targets where the mask is set.
struct ControlMask {
  std::size_t frames = 0, channels = 0;
  std::vector<unsigned char> mask;
  std::vector<double> target;

  ControlMask() = default;
  ControlMask(std::size_t frames, std::size_t channels);
  bool on(std::size_t t, std::size_t j) const { return mask[t * channels + j] != 0; }
  void set(std::size_t t, std::size_t j, double value);
  std::size_t count() const;
  // Frames carrying at least one masked channel.
  std::vector<std::size_t> keyframes() const;
};

// Keyframe mask copying `reference` at `frames` x `channels`.
ControlMask keyframe_mask(const ndiff::Tensor& reference, const std::vector<std::size_t>& frames,
                          const std::vector<std::size_t>& channels);
// `count` keyframes spread evenly over [0, T-1], first and last included.
std::vector<std::size_t> even_keyframes(std::size_t frames, std::size_t count);
// L2 over the masked channels of each keyframe.
std::vector<double> keyframe_errors(const ndiff::Tensor& motion, const ControlMask& mask);

// -(1/2 sigma) sum b (x - xhat)^2.
class JointGoal final : public Goal {
 public:
  JointGoal(ControlMask mask, double sigma = 1.0);
  GoalValue evaluate(const ndiff::Tensor& motion) const override;
  std::string kind() const override { return "joint"; }
  const ControlMask& mask() const { return mask_; }
  double sigma() const { return sigma_; }

 private:
  ControlMask mask_;
  double sigma_;
};

// Sphere repulsion on a point read from `channels` each frame:
// -mean_t max(0, margin - (|p - c| - R))^2.
class ObstacleGoal final : public Goal {
 public:
  ObstacleGoal(std::vector<std::size_t> channels, std::vector<double> center, double radius,
               double margin);
  GoalValue evaluate(const ndiff::Tensor& motion) const override;
  std::string kind() const override { return "obstacle"; }

 private:
  std::vector<std::size_t> channels_;
  std::vector<double> center_;
  double radius_, margin_;
};

// Axis-aligned box containment: -mean over (frame, axis) of the squared
// distance outside [lo, hi].
class RegionGoal final : public Goal {
 public:
  RegionGoal(std::vector<std::size_t> channels, std::vector<double> lo, std::vector<double> hi);
  GoalValue evaluate(const ndiff::Tensor& motion) const override;
  std::string kind() const override { return "region"; }

 private:
  std::vector<std::size_t> channels_;
  std::vector<double> lo_, hi_;
};

// Regular grid of signed distances (positive outside), x fastest.
class SdfGrid {
 public:
  SdfGrid(std::array<std::size_t, 3> resolution, std::array<double, 3> lo, std::array<double, 3> hi,
          std::vector<double> values);

  struct Sample {
    double value = 0.0;
    std::array<double, 3> gradient{};
    bool clamped = false;
  };
  // Trilinear interpolation; queries outside the bounds are clamped to them.
  Sample query(const std::array<double, 3>& p) const;

  const std::array<std::size_t, 3>& resolution() const { return n_; }
  const std::array<double, 3>& lo() const { return lo_; }
  const std::array<double, 3>& hi() const { return hi_; }
  const std::vector<double>& values() const { return values_; }
  double spacing(std::size_t axis) const { return (hi_[axis] - lo_[axis]) / (n_[axis] - 1); }

 private:
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return values_[(k * n_[1] + j) * n_[0] + i];
  }
  std::array<std::size_t, 3> n_;
  std::array<double, 3> lo_, hi_;
  std::vector<double> values_;
};

// Binary layout: "SDF1", uint32 nx ny nz, float32 lo[3], float32 hi[3],
// float32 values (x fastest), all little-endian.
SdfGrid load_sdf(const std::filesystem::path& path);
void save_sdf(const std::filesystem::path& path, const SdfGrid& grid);

// A point proxy: coordinate a reads channel channels[a] (or stays at 0 when
// channels[a] < 0) plus offset[a].
struct PointProxy {
  std::array<int, 3> channels{0, 1, -1};
  std::array<double, 3> offset{};
  double radius = 0.0;
};

// -(lambda_coll * mean max(0, -(phi - r)) + lambda_cont * mean_t max(0, min phi - tau)).
class SdfGoal final : public Goal {
 public:
  SdfGoal(std::shared_ptr<const SdfGrid> grid, std::vector<PointProxy> collision,
          std::vector<PointProxy> contact, double tau, double lambda_coll, double lambda_cont);
  GoalValue evaluate(const ndiff::Tensor& motion) const override;
  std::string kind() const override { return "sdf"; }

 private:
  std::shared_ptr<const SdfGrid> grid_;
  std::vector<PointProxy> collision_, contact_;
  double tau_, lambda_coll_, lambda_cont_;
};

class CompositeGoal final : public Goal {
 public:
  void add(GoalPtr term, double weight);
  GoalValue evaluate(const ndiff::Tensor& motion) const override;
  std::string kind() const override { return "composite"; }
  const std::vector<std::pair<GoalPtr, double>>& terms() const { return terms_; }

 private:
  std::vector<std::pair<GoalPtr, double>> terms_;
};

// Parsed control-spec file. `joint` points at the (first) joint term when one
// exists; the keyframe metrics use its mask.
struct ControlSpec {
  std::shared_ptr<CompositeGoal> goal;
  std::shared_ptr<const JointGoal> joint;
};

// Schema:
// {"terms": [
//   {"type": "joint", "weight": w, "sigma": s,
//    "keyframes": [{"frame": t, "channels": [j...], "values": [x...]}]},
//   {"type": "obstacle", "channels": [..], "center": [..], "radius": R, "margin": d},
//   {"type": "region", "channels": [..], "lo": [..], "hi": [..]},
//   {"type": "sdf", "grid": "file.sdf", "tau": t, "lambda_coll": a, "lambda_cont": b,
//    "collision": [{"channels": [0, 1, -1], "offset": [0, 0, 0], "radius": r}],
//    "contact": [...]}]}
// Relative grid paths resolve against `base_dir`.
ControlSpec parse_control_spec(const nlohmann::json& spec, std::size_t frames, std::size_t channels,
                               const std::filesystem::path& base_dir = {});

}  // namespace mscot::goals
