#pragma once

#include <cstdint>
#include <filesystem>

#include "mscot/corpus/corpus.hpp"
#include "mscot/prior/prior.hpp"
#include "mscot/refiner/refiner.hpp"
#include "mscot/vqvae/vqvae.hpp"

namespace mscot::bench {

// Checkpoints are containers whose manifest echoes the model config, the
// base schedule and the training seed. Parameters are stored as float32, so
// callers round before training results are compared with reloaded ones.
struct VqvaeCheckpoint {
  vqvae::VqvaeModel model;
  corpus::Stats stats;  // normalization of the training corpus
  std::uint64_t seed = 0;
};
struct PriorCheckpoint {
  prior::PriorModel model;
  std::uint64_t seed = 0;
};
struct RefinerCheckpoint {
  refiner::RefinerModel model;
  std::uint64_t seed = 0;
};

void save_vqvae(const std::filesystem::path& path, const VqvaeCheckpoint& ckpt);
VqvaeCheckpoint load_vqvae(const std::filesystem::path& path);
void save_prior(const std::filesystem::path& path, const PriorCheckpoint& ckpt);
PriorCheckpoint load_prior(const std::filesystem::path& path);
void save_refiner(const std::filesystem::path& path, const RefinerCheckpoint& ckpt);
RefinerCheckpoint load_refiner(const std::filesystem::path& path);

}  // namespace mscot::bench
