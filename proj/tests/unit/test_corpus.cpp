#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <numbers>
#include <set>

#include "mscot/common/error.hpp"
#include "mscot/corpus/corpus.hpp"
#include "mscot/io/container.hpp"

using namespace mscot;
using namespace mscot::corpus;
using ndiff::Tensor;

namespace {

// |DFT|^2 of one channel, bins 0..T/2.
std::vector<double> power_spectrum(const Tensor& x, std::size_t channel) {
  const std::size_t T = x.rows();
  std::vector<double> p(T / 2 + 1, 0.0);
  for (std::size_t b = 0; b <= T / 2; ++b) {
    double re = 0, im = 0;
    for (std::size_t t = 0; t < T; ++t) {
      const double a = -2.0 * std::numbers::pi * b * t / T;
      re += x.at(t, channel) * std::cos(a);
      im += x.at(t, channel) * std::sin(a);
    }
    p[b] = re * re + im * im;
  }
  return p;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("mscot_test_" + name);
}

}  // namespace

TEST_CASE("generation is deterministic") {
  const auto a = generate_corpus(default_specs(), 6, 42);
  const auto b = generate_corpus(default_specs(), 6, 42);
  CHECK(a.sequences == b.sequences);
  CHECK(a.labels == b.labels);
  CHECK(a.train == b.train);
  const auto c = generate_corpus(default_specs(), 6, 43);
  CHECK(a.sequences != c.sequences);
}

TEST_CASE("degenerate spec gives constant sequences") {
  TrajectorySpec flat{.name = "flat", .length = 16};
  const auto c = generate_corpus({flat}, 3, 1);
  for (const auto& x : c.sequences)
    for (std::size_t t = 0; t < x.rows(); ++t)
      for (std::size_t j = 0; j < x.cols(); ++j) CHECK(x.at(t, j) == x.at(0, j));
  for (bool clamped : c.stats.clamped) CHECK(clamped);
  CHECK_THROWS_AS(generate_corpus({flat}, 0, 1), ConfigError);
  flat.length = 10;
  CHECK_THROWS_AS(generate_corpus({flat}, 2, 1), ConfigError);
}

TEST_CASE("spectral separation of channels") {
  auto specs = default_specs();
  for (auto& s : specs) s.freq_lo = s.freq_hi = 0.34375;  // bin 22 of 64
  const auto c = generate_corpus(specs, 10, 7);
  for (const auto& x : c.sequences) {
    for (std::size_t ch : {0u, 1u}) {
      const auto p = power_spectrum(x, ch);
      double low = 0, total = 0;
      for (std::size_t b = 0; b < p.size(); ++b) {
        total += p[b];
        if (b < x.rows() / 8) low += p[b];  // below a quarter of Nyquist
      }
      CHECK(low > 0.8 * total);
    }
    for (std::size_t ch : {2u, 3u}) {
      const auto p = power_spectrum(x, ch);
      CHECK(std::max_element(p.begin(), p.end()) - p.begin() == 22);
    }
  }
}

TEST_CASE("normalisation") {
  const auto c = generate_corpus(default_specs(), 10, 3);
  const auto train = c.normalized(c.train);
  std::vector<double> mean(4, 0), var(4, 0);
  double n = 0;
  for (const auto& x : train) {
    for (std::size_t t = 0; t < x.rows(); ++t)
      for (std::size_t j = 0; j < 4; ++j) mean[j] += x.at(t, j);
    n += x.rows();
  }
  for (auto& m : mean) m /= n;
  for (const auto& x : train)
    for (std::size_t t = 0; t < x.rows(); ++t)
      for (std::size_t j = 0; j < 4; ++j) var[j] += (x.at(t, j) - mean[j]) * (x.at(t, j) - mean[j]);
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(std::abs(mean[j]) < 1e-9);
    CHECK(std::abs(std::sqrt(var[j] / n) - 1.0) < 1e-9);
  }
  for (const auto& x : c.sequences)
    CHECK(ndiff::max_abs_diff(denormalize(normalize(x, c.stats), c.stats), x) < 1e-12);

  const Stats val = compute_stats(c.normalized(c.validation));
  double dev = 0;
  for (std::size_t j = 0; j < 4; ++j) dev += std::abs(val.mean[j]) + std::abs(val.std[j] - 1.0);
  CHECK(dev > 1e-3);
}

TEST_CASE("splits are disjoint and stratified") {
  const auto c = generate_corpus(default_specs(), 10, 5);
  std::set<std::size_t> tr(c.train.begin(), c.train.end());
  for (std::size_t i : c.validation) CHECK(tr.count(i) == 0);
  CHECK(c.train.size() + c.validation.size() == c.size());
  CHECK(c.validation.size() == 6);
}

TEST_CASE("corpus round trip is byte identical") {
  const auto c = generate_corpus(default_specs(), 4, 9);
  const auto p1 = temp_path("corpus1.bin"), p2 = temp_path("corpus2.bin");
  save_corpus(p1, c);
  const auto loaded = load_corpus(p1);
  CHECK(loaded.sequences == c.sequences);
  CHECK(loaded.labels == c.labels);
  CHECK(loaded.stats.mean == c.stats.mean);
  save_corpus(p2, loaded);
  CHECK(io::read_file(p1) == io::read_file(p2));
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST_CASE("container rejects malformed input") {
  CHECK_THROWS_AS(io::parse("garbage"), FormatError);
  io::Container box;
  box.component = "x";
  box.tensors.emplace_back("t", Tensor({2, 2}, 1.5));
  std::string bytes = io::serialize(box);
  CHECK(io::parse(bytes).tensor("t") == Tensor({2, 2}, 1.5));
  CHECK_THROWS_AS(io::parse(bytes.substr(0, bytes.size() - 4)), FormatError);
  CHECK_THROWS_AS(io::load_container("/nonexistent/file.bin"), IoError);
}
