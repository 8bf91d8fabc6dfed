#include "mscot/bench/checkpoint.hpp"

#include "mscot/bench/config.hpp"
#include "mscot/common/error.hpp"
#include "mscot/io/container.hpp"

namespace mscot::bench {

using nlohmann::json;

namespace {

// Parameters of a container must match a freshly initialised model name by
// name and shape.
ndiff::ParamStore checked_params(const io::Container& box, const ndiff::ParamStore& reference) {
  ndiff::ParamStore store = io::store_of(box);
  if (store.names() != reference.names())
    throw FormatError(box.component + " checkpoint parameters do not match its config");
  for (const auto& name : store.names())
    if (store[name].shape() != reference[name].shape())
      throw FormatError(box.component + " checkpoint tensor '" + name + "' has shape " +
                        ndiff::shape_string(store[name].shape()) + ", expected " +
                        ndiff::shape_string(reference[name].shape()));
  return store;
}

template <class Fn>
auto read_meta(const io::Container& box, Fn fn) {
  try {
    return fn(box.meta);
  } catch (const json::exception& e) {
    throw FormatError(box.component + " checkpoint manifest: " + e.what());
  }
}

io::Container make_box(const char* component, json config, std::uint64_t seed, const ndiff::ParamStore& params) {
  io::Container box;
  box.component = component;
  box.meta = {{"config", std::move(config)}, {"seed", seed}};
  box.tensors = io::tensors_of(params);
  return box;
}

}  // namespace

void save_vqvae(const std::filesystem::path& path, const VqvaeCheckpoint& ckpt) {
  io::Container box = make_box("vqvae", to_json(ckpt.model.config), ckpt.seed, ckpt.model.params);
  box.meta["schedule"] = ckpt.model.config.quant.base_schedule;
  box.meta["stats"] = {{"mean", ckpt.stats.mean}, {"std", ckpt.stats.std}};
  io::save_container(path, box);
}

VqvaeCheckpoint load_vqvae(const std::filesystem::path& path) {
  const auto box = io::load_container(path, "vqvae");
  VqvaeCheckpoint out;
  read_meta(box, [&](const json& m) {
    out.model.config = vqvae_config_from_json(m.at("config"));
    out.seed = m.at("seed").get<std::uint64_t>();
    out.stats.mean = m.at("stats").at("mean").get<std::vector<double>>();
    out.stats.std = m.at("stats").at("std").get<std::vector<double>>();
    out.stats.clamped.assign(out.stats.mean.size(), false);
    return 0;
  });
  if (out.stats.mean.size() != out.model.config.channels || out.stats.std.size() != out.model.config.channels)
    throw FormatError("vqvae checkpoint statistics do not match the channel count");
  out.model.params = checked_params(box, vqvae::init_vqvae(out.model.config, 0).params);
  return out;
}

void save_prior(const std::filesystem::path& path, const PriorCheckpoint& ckpt) {
  io::save_container(path, make_box("prior", to_json(ckpt.model.config), ckpt.seed, ckpt.model.params));
}

PriorCheckpoint load_prior(const std::filesystem::path& path) {
  const auto box = io::load_container(path, "prior");
  PriorCheckpoint out;
  read_meta(box, [&](const json& m) {
    out.model.config = prior_config_from_json(m.at("config"));
    out.seed = m.at("seed").get<std::uint64_t>();
    return 0;
  });
  out.model.params = checked_params(box, prior::init_prior(out.model.config, 0).params);
  return out;
}

void save_refiner(const std::filesystem::path& path, const RefinerCheckpoint& ckpt) {
  io::save_container(path, make_box("refiner", to_json(ckpt.model.config), ckpt.seed, ckpt.model.params));
}

RefinerCheckpoint load_refiner(const std::filesystem::path& path) {
  const auto box = io::load_container(path, "refiner");
  RefinerCheckpoint out;
  read_meta(box, [&](const json& m) {
    out.model.config = refiner_config_from_json(m.at("config"));
    out.seed = m.at("seed").get<std::uint64_t>();
    return 0;
  });
  out.model.params = checked_params(box, refiner::init_refiner(out.model.config, 0).params);
  return out;
}

}  // namespace mscot::bench
