#include "mscot/goals/goals.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>

#include <spdlog/spdlog.h>

#include "mscot/common/error.hpp"
#include "mscot/io/container.hpp"
#include "mscot/ndiff/ops.hpp"

namespace mscot::goals {

using ndiff::Tensor;

ndiff::Var goal_on_tape(const Goal& goal, const ndiff::Var& motion) {
  GoalValue g = goal.evaluate(motion.value());
  if (!std::isfinite(g.value)) throw NumericError(goal.kind() + " goal is not finite");
  return ndiff::external_scalar(motion, g.value, std::move(g.gradient));
}

namespace {

void require_channels(const Tensor& motion, const std::vector<std::size_t>& channels,
                      const char* what) {
  ndiff::require_matrix(motion, what);
  for (std::size_t c : channels)
    if (c >= motion.cols())
      throw ShapeError(std::string(what) + " goal reads channel " + std::to_string(c) +
                       " of a " + std::to_string(motion.cols()) + "-channel motion");
}

}  // namespace

ControlMask::ControlMask(std::size_t frames_, std::size_t channels_)
    : frames(frames_), channels(channels_), mask(frames_ * channels_, 0),
      target(frames_ * channels_, 0.0) {}

void ControlMask::set(std::size_t t, std::size_t j, double value) {
  if (t >= frames || j >= channels) throw ShapeError("control mask entry out of range");
  if (!std::isfinite(value)) throw NumericError("control target must be finite");
  mask[t * channels + j] = 1;
  target[t * channels + j] = value;
}

std::size_t ControlMask::count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
}

std::vector<std::size_t> ControlMask::keyframes() const {
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t j = 0; j < channels; ++j)
      if (on(t, j)) {
        out.push_back(t);
        break;
      }
  return out;
}

ControlMask keyframe_mask(const Tensor& reference, const std::vector<std::size_t>& frames,
                          const std::vector<std::size_t>& channels) {
  ControlMask m(reference.rows(), reference.cols());
  for (std::size_t t : frames)
    for (std::size_t j : channels) m.set(t, j, reference.at(t, j));
  return m;
}

std::vector<std::size_t> even_keyframes(std::size_t frames, std::size_t count) {
  if (frames == 0 || count == 0) return {};
  if (count == 1) return {(frames - 1) / 2};
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t t = static_cast<std::size_t>(std::lround(static_cast<double>(i) * (frames - 1) / (count - 1)));
    if (out.empty() || out.back() != t) out.push_back(t);
  }
  return out;
}

std::vector<double> keyframe_errors(const Tensor& motion, const ControlMask& mask) {
  if (motion.rows() != mask.frames || motion.cols() != mask.channels)
    throw ShapeError("mask does not match the motion shape");
  std::vector<double> out;
  for (std::size_t t : mask.keyframes()) {
    double s = 0.0;
    for (std::size_t j = 0; j < mask.channels; ++j)
      if (mask.on(t, j)) s += (motion.at(t, j) - mask.target[t * mask.channels + j]) *
                              (motion.at(t, j) - mask.target[t * mask.channels + j]);
    out.push_back(std::sqrt(s));
  }
  return out;
}

JointGoal::JointGoal(ControlMask mask, double sigma) : mask_(std::move(mask)), sigma_(sigma) {
  if (!(sigma > 0)) throw ConfigError("joint goal sigma must be positive");
  if (mask_.count() == 0) spdlog::warn("joint goal has an empty mask; it always evaluates to 0");
}

GoalValue JointGoal::evaluate(const Tensor& motion) const {
  if (motion.rank() != 2 || motion.rows() != mask_.frames || motion.cols() != mask_.channels)
    throw ShapeError("joint goal mask is " + std::to_string(mask_.frames) + "x" +
                     std::to_string(mask_.channels) + ", motion is " + ndiff::shape_string(motion.shape()));
  GoalValue out{0.0, Tensor(motion.shape())};
  const double inv = 1.0 / sigma_;
  for (std::size_t i = 0; i < motion.size(); ++i) {
    if (!mask_.mask[i]) continue;
    const double r = motion[i] - mask_.target[i];
    out.value -= 0.5 * inv * r * r;
    out.gradient[i] = -inv * r;
  }
  return out;
}

ObstacleGoal::ObstacleGoal(std::vector<std::size_t> channels, std::vector<double> center,
                           double radius, double margin)
    : channels_(std::move(channels)), center_(std::move(center)), radius_(radius), margin_(margin) {
  if (channels_.empty() || channels_.size() != center_.size())
    throw ConfigError("obstacle center must match its channel list");
  if (!(radius > 0)) throw ConfigError("obstacle radius must be positive");
  if (margin < 0) throw ConfigError("obstacle margin must be non-negative");
}

GoalValue ObstacleGoal::evaluate(const Tensor& motion) const {
  require_channels(motion, channels_, "obstacle");
  GoalValue out{0.0, Tensor(motion.shape())};
  const double n = static_cast<double>(motion.rows());
  for (std::size_t t = 0; t < motion.rows(); ++t) {
    double dist2 = 0.0;
    for (std::size_t a = 0; a < channels_.size(); ++a) {
      const double d = motion.at(t, channels_[a]) - center_[a];
      dist2 += d * d;
    }
    const double dist = std::sqrt(dist2);
    const double h = margin_ - (dist - radius_);
    if (h <= 0.0) continue;
    out.value -= h * h / n;
    if (dist == 0.0) continue;
    for (std::size_t a = 0; a < channels_.size(); ++a)
      out.gradient.at(t, channels_[a]) += 2.0 * h / n * (motion.at(t, channels_[a]) - center_[a]) / dist;
  }
  return out;
}

RegionGoal::RegionGoal(std::vector<std::size_t> channels, std::vector<double> lo,
                       std::vector<double> hi)
    : channels_(std::move(channels)), lo_(std::move(lo)), hi_(std::move(hi)) {
  if (channels_.empty() || lo_.size() != channels_.size() || hi_.size() != channels_.size())
    throw ConfigError("region bounds must match its channel list");
  for (std::size_t a = 0; a < lo_.size(); ++a)
    if (!(hi_[a] > lo_[a])) throw ConfigError("region box needs positive extent on every axis");
}

GoalValue RegionGoal::evaluate(const Tensor& motion) const {
  require_channels(motion, channels_, "region");
  GoalValue out{0.0, Tensor(motion.shape())};
  const double n = static_cast<double>(motion.rows() * channels_.size());
  for (std::size_t t = 0; t < motion.rows(); ++t)
    for (std::size_t a = 0; a < channels_.size(); ++a) {
      const double p = motion.at(t, channels_[a]);
      const double o = p - std::clamp(p, lo_[a], hi_[a]);
      if (o == 0.0) continue;
      out.value -= o * o / n;
      out.gradient.at(t, channels_[a]) = -2.0 * o / n;
    }
  return out;
}

SdfGrid::SdfGrid(std::array<std::size_t, 3> resolution, std::array<double, 3> lo,
                 std::array<double, 3> hi, std::vector<double> values)
    : n_(resolution), lo_(lo), hi_(hi), values_(std::move(values)) {
  for (std::size_t a = 0; a < 3; ++a) {
    if (n_[a] < 2) throw ConfigError("sdf grid needs at least 2 samples per axis");
    if (!(hi_[a] > lo_[a])) throw ConfigError("sdf grid bounds have zero extent");
  }
  if (values_.size() != n_[0] * n_[1] * n_[2])
    throw ConfigError("sdf grid value count does not match its resolution");
  for (double v : values_)
    if (!std::isfinite(v)) throw ConfigError("sdf grid values must be finite");
}

SdfGrid::Sample SdfGrid::query(const std::array<double, 3>& p) const {
  Sample s;
  std::array<std::size_t, 3> i0{};
  std::array<double, 3> w{}, h{};
  std::array<bool, 3> clamped{};
  for (std::size_t a = 0; a < 3; ++a) {
    h[a] = spacing(a);
    double q = p[a];
    if (q < lo_[a] || q > hi_[a]) {
      q = std::clamp(q, lo_[a], hi_[a]);
      clamped[a] = true;
      s.clamped = true;
    }
    const double u = (q - lo_[a]) / h[a];
    i0[a] = std::min(static_cast<std::size_t>(std::floor(u)), n_[a] - 2);
    w[a] = u - static_cast<double>(i0[a]);
  }
  for (int corner = 0; corner < 8; ++corner) {
    const std::array<std::size_t, 3> bit{static_cast<std::size_t>(corner & 1),
                                         static_cast<std::size_t>((corner >> 1) & 1),
                                         static_cast<std::size_t>((corner >> 2) & 1)};
    const double v = at(i0[0] + bit[0], i0[1] + bit[1], i0[2] + bit[2]);
    std::array<double, 3> f{};
    for (std::size_t a = 0; a < 3; ++a) f[a] = bit[a] ? w[a] : 1.0 - w[a];
    s.value += f[0] * f[1] * f[2] * v;
    for (std::size_t a = 0; a < 3; ++a) {
      double g = (bit[a] ? 1.0 : -1.0) / h[a];
      for (std::size_t b = 0; b < 3; ++b)
        if (b != a) g *= f[b];
      s.gradient[a] += g * v;
    }
  }
  for (std::size_t a = 0; a < 3; ++a)
    if (clamped[a]) s.gradient[a] = 0.0;
  return s;
}

namespace {

constexpr char kSdfMagic[4] = {'S', 'D', 'F', '1'};

template <typename T>
T read_le(const std::string& bytes, std::size_t& pos) {
  if (pos + sizeof(T) > bytes.size()) throw FormatError("sdf file is truncated");
  T v;
  std::memcpy(&v, bytes.data() + pos, sizeof v);
  pos += sizeof v;
  return v;
}

template <typename T>
void write_le(std::string& out, T v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof v);
}

}  // namespace

SdfGrid load_sdf(const std::filesystem::path& path) {
  const std::string bytes = io::read_file(path);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kSdfMagic, 4) != 0)
    throw FormatError(path.string() + " is not an SDF1 file");
  std::size_t pos = 4;
  std::array<std::size_t, 3> n{};
  std::array<double, 3> lo{}, hi{};
  for (auto& v : n) v = read_le<std::uint32_t>(bytes, pos);
  for (auto& v : lo) v = read_le<float>(bytes, pos);
  for (auto& v : hi) v = read_le<float>(bytes, pos);
  std::vector<double> values(n[0] * n[1] * n[2]);
  for (auto& v : values) v = read_le<float>(bytes, pos);
  if (pos != bytes.size()) throw FormatError("sdf file has trailing bytes");
  return SdfGrid(n, lo, hi, std::move(values));
}

void save_sdf(const std::filesystem::path& path, const SdfGrid& grid) {
  std::string out(kSdfMagic, 4);
  for (auto v : grid.resolution()) write_le(out, static_cast<std::uint32_t>(v));
  for (auto v : grid.lo()) write_le(out, static_cast<float>(v));
  for (auto v : grid.hi()) write_le(out, static_cast<float>(v));
  for (auto v : grid.values()) write_le(out, static_cast<float>(v));
  io::atomic_write(path, out);
}

SdfGoal::SdfGoal(std::shared_ptr<const SdfGrid> grid, std::vector<PointProxy> collision,
                 std::vector<PointProxy> contact, double tau, double lambda_coll, double lambda_cont)
    : grid_(std::move(grid)), collision_(std::move(collision)), contact_(std::move(contact)),
      tau_(tau), lambda_coll_(lambda_coll), lambda_cont_(lambda_cont) {
  if (!grid_) throw ConfigError("sdf goal needs a grid");
  if (lambda_coll < 0 || lambda_cont < 0) throw ConfigError("sdf goal weights must be non-negative");
}

GoalValue SdfGoal::evaluate(const Tensor& motion) const {
  ndiff::require_matrix(motion, "motion");
  GoalValue out{0.0, Tensor(motion.shape())};
  bool warned = false;
  auto place = [&](const PointProxy& proxy, std::size_t t) {
    std::array<double, 3> p{};
    for (std::size_t a = 0; a < 3; ++a) {
      const int ch = proxy.channels[a];
      if (ch >= static_cast<int>(motion.cols())) throw ShapeError("sdf proxy channel out of range");
      p[a] = (ch >= 0 ? motion.at(t, static_cast<std::size_t>(ch)) : 0.0) + proxy.offset[a];
    }
    return p;
  };
  auto push_grad = [&](const PointProxy& proxy, std::size_t t, const std::array<double, 3>& g,
                       double scale) {
    for (std::size_t a = 0; a < 3; ++a)
      if (proxy.channels[a] >= 0) out.gradient.at(t, static_cast<std::size_t>(proxy.channels[a])) += scale * g[a];
  };
  auto sample = [&](const std::array<double, 3>& p) {
    auto s = grid_->query(p);
    if (s.clamped && !warned) {
      spdlog::warn("sdf query outside the grid bounds; clamped to the boundary");
      warned = true;
    }
    return s;
  };

  const std::size_t T = motion.rows();
  if (!collision_.empty() && lambda_coll_ > 0) {
    const double n = static_cast<double>(T * collision_.size());
    for (std::size_t t = 0; t < T; ++t)
      for (const auto& proxy : collision_) {
        const auto s = sample(place(proxy, t));
        const double h = proxy.radius - s.value;
        if (h <= 0.0) continue;
        out.value -= lambda_coll_ * h / n;
        push_grad(proxy, t, s.gradient, lambda_coll_ / n);
      }
  }
  if (!contact_.empty() && lambda_cont_ > 0) {
    const double n = static_cast<double>(T);
    for (std::size_t t = 0; t < T; ++t) {
      std::size_t best = 0;
      SdfGrid::Sample best_s = sample(place(contact_[0], t));
      for (std::size_t c = 1; c < contact_.size(); ++c) {
        const auto s = sample(place(contact_[c], t));
        if (s.value < best_s.value) best_s = s, best = c;
      }
      const double h = best_s.value - tau_;
      if (h <= 0.0) continue;
      out.value -= lambda_cont_ * h / n;
      push_grad(contact_[best], t, best_s.gradient, -lambda_cont_ / n);
    }
  }
  return out;
}

void CompositeGoal::add(GoalPtr term, double weight) {
  if (!term) throw ConfigError("composite goal term is null");
  if (!std::isfinite(weight) || weight < 0) throw ConfigError("composite weights must be finite and >= 0");
  terms_.emplace_back(std::move(term), weight);
}

GoalValue CompositeGoal::evaluate(const Tensor& motion) const {
  if (terms_.empty()) throw ConfigError("composite goal has no terms");
  GoalValue out{0.0, Tensor(motion.shape())};
  for (const auto& [term, w] : terms_) {
    GoalValue g = term->evaluate(motion);
    out.value += w * g.value;
    for (std::size_t i = 0; i < g.gradient.size(); ++i) out.gradient[i] += w * g.gradient[i];
  }
  return out;
}

namespace {

PointProxy parse_proxy(const nlohmann::json& j) {
  PointProxy p;
  p.channels = j.at("channels").get<std::array<int, 3>>();
  if (j.contains("offset")) p.offset = j.at("offset").get<std::array<double, 3>>();
  p.radius = j.value("radius", 0.0);
  return p;
}

}  // namespace

ControlSpec parse_control_spec(const nlohmann::json& spec, std::size_t frames, std::size_t channels,
                               const std::filesystem::path& base_dir) {
  ControlSpec out;
  out.goal = std::make_shared<CompositeGoal>();
  try {
    for (const auto& term : spec.at("terms")) {
      const std::string type = term.at("type").get<std::string>();
      const double weight = term.value("weight", 1.0);
      if (type == "joint") {
        ControlMask mask(frames, channels);
        for (const auto& kf : term.at("keyframes")) {
          const auto frame = kf.at("frame").get<std::size_t>();
          const auto chans = kf.at("channels").get<std::vector<std::size_t>>();
          const auto values = kf.at("values").get<std::vector<double>>();
          if (chans.size() != values.size())
            throw ConfigError("keyframe channels and values differ in length");
          for (std::size_t i = 0; i < chans.size(); ++i) mask.set(frame, chans[i], values[i]);
        }
        auto g = std::make_shared<JointGoal>(std::move(mask), term.value("sigma", 1.0));
        if (!out.joint) out.joint = g;
        out.goal->add(g, weight);
      } else if (type == "obstacle") {
        out.goal->add(std::make_shared<ObstacleGoal>(
                          term.at("channels").get<std::vector<std::size_t>>(),
                          term.at("center").get<std::vector<double>>(), term.at("radius").get<double>(),
                          term.value("margin", 0.0)),
                      weight);
      } else if (type == "region") {
        out.goal->add(std::make_shared<RegionGoal>(term.at("channels").get<std::vector<std::size_t>>(),
                                                   term.at("lo").get<std::vector<double>>(),
                                                   term.at("hi").get<std::vector<double>>()),
                      weight);
      } else if (type == "sdf") {
        std::filesystem::path grid_path = term.at("grid").get<std::string>();
        if (grid_path.is_relative()) grid_path = base_dir / grid_path;
        auto grid = std::make_shared<SdfGrid>(load_sdf(grid_path));
        std::vector<PointProxy> coll, cont;
        for (const auto& p : term.value("collision", nlohmann::json::array())) coll.push_back(parse_proxy(p));
        for (const auto& p : term.value("contact", nlohmann::json::array())) cont.push_back(parse_proxy(p));
        out.goal->add(std::make_shared<SdfGoal>(grid, coll, cont, term.value("tau", 0.0),
                                                term.value("lambda_coll", 1.0),
                                                term.value("lambda_cont", 1.0)),
                      weight);
      } else {
        throw ConfigError("unknown goal type '" + type + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("control spec: ") + e.what());
  }
  if (out.goal->terms().empty()) throw ConfigError("control spec declares no terms");
  return out;
}

}  // namespace mscot::goals
