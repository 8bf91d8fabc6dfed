#pragma once

// Binary container shared by checkpoints and corpora:
//   8 bytes   magic "MSCOTC01"
//   8 bytes   manifest length n (uint64, little-endian)
//   n bytes   compact JSON manifest
//   payload   float32 little-endian tensors, in manifest order
// The manifest carries "format_version", "component", free-form metadata and
// "tensors": [{"name", "shape", "offset", "bytes"}] with offsets relative to
// the payload start.

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mscot/ndiff/params.hpp"

namespace mscot::io {

inline constexpr int kFormatVersion = 1;

struct Container {
  std::string component;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, ndiff::Tensor>> tensors;

  const ndiff::Tensor& tensor(const std::string& name) const;
};

std::string serialize(const Container& c);
Container parse(std::string_view bytes);

// Writes to a sibling temporary file and renames it into place.
void atomic_write(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

void save_container(const std::filesystem::path& path, const Container& c);
Container load_container(const std::filesystem::path& path, std::string_view expect_component = {});

// Rounds every entry to the nearest float32 so that a container round trip
// is lossless.
void round_to_float(ndiff::Tensor& t);
void round_to_float(ndiff::ParamStore& store);

// ParamStore <-> tensor list, in store order.
std::vector<std::pair<std::string, ndiff::Tensor>> tensors_of(const ndiff::ParamStore& store);
ndiff::ParamStore store_of(const Container& c);

}  // namespace mscot::io
