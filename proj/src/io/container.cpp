#include "mscot/io/container.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mscot/common/error.hpp"

namespace mscot::io {

static_assert(std::endian::native == std::endian::little, "container I/O assumes little-endian");

namespace {

constexpr char kMagic[8] = {'M', 'S', 'C', 'O', 'T', 'C', '0', '1'};

}  // namespace

const ndiff::Tensor& Container::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw FormatError("container has no tensor '" + name + "'");
}

std::string serialize(const Container& c) {
  nlohmann::json manifest = c.meta;
  manifest["format_version"] = kFormatVersion;
  manifest["component"] = c.component;
  nlohmann::json list = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : c.tensors) {
    const std::uint64_t bytes = t.size() * sizeof(float);
    list.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"bytes", bytes}});
    offset += bytes;
  }
  manifest["tensors"] = list;
  const std::string text = manifest.dump();

  std::string out(kMagic, sizeof kMagic);
  const std::uint64_t n = text.size();
  out.append(reinterpret_cast<const char*>(&n), sizeof n);
  out += text;
  out.reserve(out.size() + offset);
  for (const auto& entry : c.tensors)
    for (double v : entry.second.data()) {
      const float f = static_cast<float>(v);
      out.append(reinterpret_cast<const char*>(&f), sizeof f);
    }
  return out;
}

Container parse(std::string_view bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw FormatError("not a container (bad magic)");
  std::uint64_t n = 0;
  std::memcpy(&n, bytes.data() + 8, sizeof n);
  if (n > bytes.size() - 16) throw FormatError("manifest length exceeds file size");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(16, n));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest is not valid JSON: ") + e.what());
  }
  if (!manifest.contains("format_version"))
    throw FormatError("manifest lacks format_version");
  if (manifest["format_version"] != kFormatVersion)
    throw FormatError("unsupported format_version " + manifest["format_version"].dump());
  const std::string_view payload = bytes.substr(16 + n);

  Container c;
  c.component = manifest.value("component", "");
  std::uint64_t expected = 0;
  for (const auto& entry : manifest.at("tensors")) {
    const auto shape = entry.at("shape").get<ndiff::Shape>();
    const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
    const std::uint64_t nbytes = entry.at("bytes").get<std::uint64_t>();
    const std::string name = entry.at("name").get<std::string>();
    if (nbytes != ndiff::shape_size(shape) * sizeof(float) || offset != expected)
      throw FormatError("tensor '" + name + "' shape does not match its byte range");
    if (offset + nbytes > payload.size()) throw FormatError("tensor '" + name + "' is truncated");
    ndiff::Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) {
      float f;
      std::memcpy(&f, payload.data() + offset + i * sizeof f, sizeof f);
      t[i] = f;
    }
    c.tensors.emplace_back(name, std::move(t));
    expected += nbytes;
  }
  if (expected != payload.size()) throw FormatError("payload has trailing bytes");
  manifest.erase("tensors");
  manifest.erase("format_version");
  manifest.erase("component");
  c.meta = std::move(manifest);
  return c;
}

void atomic_write(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void save_container(const std::filesystem::path& path, const Container& c) {
  atomic_write(path, serialize(c));
}

Container load_container(const std::filesystem::path& path, std::string_view expect_component) {
  Container c = parse(read_file(path));
  if (!expect_component.empty() && c.component != expect_component)
    throw FormatError(path.string() + " holds a '" + c.component + "' container, expected '" +
                      std::string(expect_component) + "'");
  return c;
}

void round_to_float(ndiff::Tensor& t) {
  for (double& v : t.data()) v = static_cast<float>(v);
}

void round_to_float(ndiff::ParamStore& store) {
  for (const auto& name : store.names()) round_to_float(store[name]);
}

std::vector<std::pair<std::string, ndiff::Tensor>> tensors_of(const ndiff::ParamStore& store) {
  std::vector<std::pair<std::string, ndiff::Tensor>> out;
  for (const auto& name : store.names()) out.emplace_back(name, store[name]);
  return out;
}

ndiff::ParamStore store_of(const Container& c) {
  ndiff::ParamStore store;
  for (const auto& [name, t] : c.tensors) store.add(name, t);
  return store;
}

}  // namespace mscot::io
