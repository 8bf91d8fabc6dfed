#include "mscot/bench/config.hpp"

#include <set>

#include <fmt/format.h>

#include "mscot/common/error.hpp"
#include "mscot/common/rng.hpp"
#include "mscot/io/container.hpp"

namespace mscot::bench {

using nlohmann::json;

namespace {

// Reads optional fields of one JSON object and rejects keys nobody asked for.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be a JSON object");
  }
  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw ConfigError("unknown key '" + key + "' in " + where());
  }

  template <class T>
  void field(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where() + "." + key + ": " + e.what());
    }
  }

  template <class E>
  void choice(const std::string& key, E& out, const std::vector<std::pair<std::string, E>>& names) {
    std::string text;
    for (const auto& [n, v] : names)
      if (v == out) text = n;
    field(key, text);
    for (const auto& [n, v] : names)
      if (n == text) {
        out = v;
        return;
      }
    throw ConfigError(where() + "." + key + ": unknown value '" + text + "'");
  }

  const json& object(const std::string& key) {
    seen_.insert(key);
    static const json empty = json::object();
    return j_.contains(key) ? j_.at(key) : empty;
  }
  std::string child(const std::string& key) const { return where() + "." + key; }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

const std::vector<std::pair<std::string, ndiff::Activation>> kActivations{{"silu", ndiff::Activation::kSilu},
                                                                          {"identity", ndiff::Activation::kIdentity}};
const std::vector<std::pair<std::string, guidance::Mode>> kModes{{"off", guidance::Mode::kOff},
                                                                 {"first_order", guidance::Mode::kFirstOrder},
                                                                 {"exact", guidance::Mode::kExact}};
const std::vector<std::pair<std::string, guidance::Expansion>> kExpansions{{"mean", guidance::Expansion::kMean},
                                                                           {"argmax", guidance::Expansion::kArgmax}};
const std::vector<std::pair<std::string, refiner::Optimizer>> kOptimizers{
    {"gradient_ascent", refiner::Optimizer::kGradientAscent}, {"adam", refiner::Optimizer::kAdam}};

template <class E>
std::string name_of(E value, const std::vector<std::pair<std::string, E>>& names) {
  for (const auto& [n, v] : names)
    if (v == value) return n;
  return "?";
}

void read_vqvae(Reader& r, vqvae::VqvaeConfig& c) {
  r.field("channels", c.channels);
  r.field("width", c.width);
  r.choice("activation", c.activation, kActivations);
  r.field("codebook_size", c.quant.codebook_size);
  r.field("code_dim", c.quant.code_dim);
  r.field("normalized", c.quant.normalized);
  r.field("post_kernel", c.quant.post_kernel);
  r.field("base_schedule", c.quant.base_schedule);
}

void read_shape(Reader& r, ndiff::TransformerShape& s, std::size_t& blocks) {
  r.field("width", s.width);
  r.field("heads", s.heads);
  r.field("mlp_ratio", s.mlp_ratio);
  r.field("blocks", blocks);
}

}  // namespace

void DeskConfig::harmonize() {
  const auto K = vqvae.quant.base_schedule.size();
  prior.vocab = vqvae.quant.codebook_size;
  prior.scales = K;
  refiner.code_dim = vqvae.quant.code_dim;
  refiner.scales = K;
  vqvae_train.seed = seed;
  prior_train.seed = seed;
  refiner_train.seed = seed;
  sampling.seed = seed;
  if (corpus.length % vqvae::kDownsample != 0) throw ConfigError("corpus.length must be a multiple of 4");
  if (vqvae.quant.base_schedule.empty()) throw ConfigError("vqvae.base_schedule must not be empty");
}

DeskConfig default_config() {
  DeskConfig c;
  c.vqvae_train.lr = 1e-3;
  c.vqvae_train.clip_norm = 1.0;
  c.vqvae_train.cosine_decay = true;
  c.vqvae_train.epochs = 80;
  c.prior_train.lr = 1e-3;
  c.prior_train.clip_norm = 1.0;
  c.prior_train.cosine_decay = true;
  c.prior_train.epochs = 60;
  c.refiner_train.epochs = 10;
  c.harmonize();
  return c;
}

json to_json(const vqvae::VqvaeConfig& c) {
  return {{"channels", c.channels},
          {"width", c.width},
          {"activation", name_of(c.activation, kActivations)},
          {"codebook_size", c.quant.codebook_size},
          {"code_dim", c.quant.code_dim},
          {"normalized", c.quant.normalized},
          {"post_kernel", c.quant.post_kernel},
          {"base_schedule", c.quant.base_schedule}};
}

vqvae::VqvaeConfig vqvae_config_from_json(const json& j) {
  vqvae::VqvaeConfig c;
  Reader r(j, "vqvae");
  read_vqvae(r, c);
  return c;
}

json to_json(const prior::PriorConfig& c) {
  return {{"vocab", c.vocab},         {"scales", c.scales},          {"num_classes", c.num_classes},
          {"width", c.block.width},   {"heads", c.block.heads},      {"mlp_ratio", c.block.mlp_ratio},
          {"blocks", c.blocks}};
}

prior::PriorConfig prior_config_from_json(const json& j) {
  prior::PriorConfig c;
  Reader r(j, "prior");
  r.field("vocab", c.vocab);
  r.field("scales", c.scales);
  r.field("num_classes", c.num_classes);
  read_shape(r, c.block, c.blocks);
  return c;
}

json to_json(const refiner::RefinerConfig& c) {
  return {{"code_dim", c.code_dim},   {"scales", c.scales},          {"width", c.block.width},
          {"heads", c.block.heads},   {"mlp_ratio", c.block.mlp_ratio}, {"blocks", c.blocks},
          {"positional", c.positional}};
}

refiner::RefinerConfig refiner_config_from_json(const json& j) {
  refiner::RefinerConfig c;
  Reader r(j, "refiner");
  r.field("code_dim", c.code_dim);
  r.field("scales", c.scales);
  read_shape(r, c.block, c.blocks);
  r.field("positional", c.positional);
  return c;
}

json to_json(const DeskConfig& c) {
  json v = to_json(c.vqvae);
  v["train"] = {{"beta", c.vqvae_train.beta},
                {"dropout", c.vqvae_train.dropout},
                {"lr", c.vqvae_train.lr},
                {"clip_norm", c.vqvae_train.clip_norm},
                {"cosine_decay", c.vqvae_train.cosine_decay},
                {"batch_size", c.vqvae_train.batch_size},
                {"epochs", c.vqvae_train.epochs},
                {"reseed_dead_codes", c.vqvae_train.reseed_dead_codes}};
  json p{{"width", c.prior.block.width},
         {"heads", c.prior.block.heads},
         {"mlp_ratio", c.prior.block.mlp_ratio},
         {"blocks", c.prior.blocks},
         {"train",
          {{"lr", c.prior_train.lr},
           {"clip_norm", c.prior_train.clip_norm},
           {"cosine_decay", c.prior_train.cosine_decay},
           {"batch_size", c.prior_train.batch_size},
           {"epochs", c.prior_train.epochs},
           {"null_label_prob", c.prior_train.null_label_prob}}}};
  json f{{"width", c.refiner.block.width},
         {"heads", c.refiner.block.heads},
         {"mlp_ratio", c.refiner.block.mlp_ratio},
         {"blocks", c.refiner.blocks},
         {"positional", c.refiner.positional},
         {"train",
          {{"lr", c.refiner_train.lr},
           {"clip_norm", c.refiner_train.clip_norm},
           {"batch_size", c.refiner_train.batch_size},
           {"epochs", c.refiner_train.epochs}}}};
  return {{"seed", c.seed},
          {"corpus",
           {{"length", c.corpus.length},
            {"per_family", c.corpus.per_family},
            {"validation_fraction", c.corpus.validation_fraction}}},
          {"vqvae", v},
          {"prior", p},
          {"refiner", f},
          {"sampling",
           {{"cfg_weight", c.sampling.cfg_weight}, {"temperature", c.sampling.temperature}, {"top_k", c.sampling.top_k}}},
          {"guidance",
           {{"mode", name_of(c.guidance.mode, kModes)},
            {"grad_scale", c.guidance.first_order.grad_scale},
            {"expansion", name_of(c.guidance.first_order.expansion, kExpansions)},
            {"exact_cost_guard", c.guidance.exact_cost_guard}}},
          {"refinement",
           {{"iterations", c.refinement.iterations},
            {"step", c.refinement.step},
            {"optimizer", name_of(c.refinement.optimizer, kOptimizers)},
            {"tolerance", c.refinement.tolerance}}},
          {"control",
           {{"keyframes", c.control.keyframes},
            {"channels", c.control.channels},
            {"sigma", c.control.sigma},
            {"threshold", c.control.threshold},
            {"seeds", c.control.seeds}}},
          {"target_len", c.target_len}};
}

DeskConfig config_from_json(const json& j) {
  DeskConfig c = default_config();
  {
    Reader r(j, "");
    r.field("seed", c.seed);
    r.field("target_len", c.target_len);
    {
      Reader s(r.object("corpus"), r.child("corpus"));
      s.field("length", c.corpus.length);
      s.field("per_family", c.corpus.per_family);
      s.field("validation_fraction", c.corpus.validation_fraction);
    }
    {
      Reader s(r.object("vqvae"), r.child("vqvae"));
      read_vqvae(s, c.vqvae);
      Reader t(s.object("train"), "vqvae.train");
      t.field("beta", c.vqvae_train.beta);
      t.field("dropout", c.vqvae_train.dropout);
      t.field("lr", c.vqvae_train.lr);
      t.field("clip_norm", c.vqvae_train.clip_norm);
      t.field("cosine_decay", c.vqvae_train.cosine_decay);
      t.field("batch_size", c.vqvae_train.batch_size);
      t.field("epochs", c.vqvae_train.epochs);
      t.field("reseed_dead_codes", c.vqvae_train.reseed_dead_codes);
    }
    {
      Reader s(r.object("prior"), r.child("prior"));
      read_shape(s, c.prior.block, c.prior.blocks);
      Reader t(s.object("train"), "prior.train");
      t.field("lr", c.prior_train.lr);
      t.field("clip_norm", c.prior_train.clip_norm);
      t.field("cosine_decay", c.prior_train.cosine_decay);
      t.field("batch_size", c.prior_train.batch_size);
      t.field("epochs", c.prior_train.epochs);
      t.field("null_label_prob", c.prior_train.null_label_prob);
    }
    {
      Reader s(r.object("refiner"), r.child("refiner"));
      read_shape(s, c.refiner.block, c.refiner.blocks);
      s.field("positional", c.refiner.positional);
      Reader t(s.object("train"), "refiner.train");
      t.field("lr", c.refiner_train.lr);
      t.field("clip_norm", c.refiner_train.clip_norm);
      t.field("batch_size", c.refiner_train.batch_size);
      t.field("epochs", c.refiner_train.epochs);
    }
    {
      Reader s(r.object("sampling"), r.child("sampling"));
      s.field("cfg_weight", c.sampling.cfg_weight);
      s.field("temperature", c.sampling.temperature);
      s.field("top_k", c.sampling.top_k);
    }
    {
      Reader s(r.object("guidance"), r.child("guidance"));
      s.choice("mode", c.guidance.mode, kModes);
      s.field("grad_scale", c.guidance.first_order.grad_scale);
      s.choice("expansion", c.guidance.first_order.expansion, kExpansions);
      s.field("exact_cost_guard", c.guidance.exact_cost_guard);
    }
    {
      Reader s(r.object("refinement"), r.child("refinement"));
      s.field("iterations", c.refinement.iterations);
      s.field("step", c.refinement.step);
      s.choice("optimizer", c.refinement.optimizer, kOptimizers);
      s.field("tolerance", c.refinement.tolerance);
    }
    {
      Reader s(r.object("control"), r.child("control"));
      s.field("keyframes", c.control.keyframes);
      s.field("channels", c.control.channels);
      s.field("sigma", c.control.sigma);
      s.field("threshold", c.control.threshold);
      s.field("seeds", c.control.seeds);
    }
  }
  c.harmonize();
  return c;
}

DeskConfig load_config(const std::filesystem::path& path) {
  const std::string text = io::read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

std::string config_hash(const json& j) { return fmt::format("{:016x}", fnv1a(j.dump())); }

}  // namespace mscot::bench
