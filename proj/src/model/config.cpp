#include "clens/model/config.hpp"

#include <charconv>
#include <stdexcept>

namespace clens {

void ModelConfig::validate() const {
  if (n_layers < 0) throw std::invalid_argument("model config: n_layers must be >= 0");
  if (n_heads <= 0) throw std::invalid_argument("model config: n_heads must be > 0");
  if (d_model <= 0 || d_model % n_heads != 0) {
    throw std::invalid_argument("model config: d_model must be a positive multiple of n_heads");
  }
  if (d_mlp <= 0) throw std::invalid_argument("model config: d_mlp must be > 0");
  if (vocab_size <= 0) throw std::invalid_argument("model config: vocab_size must be > 0");
  if (n_patch_codes <= 0) throw std::invalid_argument("model config: n_patch_codes must be > 0");
  if (n_patches < 0 || n_patches >= max_seq_len) {
    throw std::invalid_argument("model config: need 0 <= n_patches < max_seq_len");
  }
  if (!(init_scale > 0.0)) throw std::invalid_argument("model config: init_scale must be > 0");
}

std::map<std::string, std::string> ModelConfig::to_key_values() const {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), init_scale);
  return {
      {"n_layers", std::to_string(n_layers)},       {"n_heads", std::to_string(n_heads)},
      {"d_model", std::to_string(d_model)},         {"d_mlp", std::to_string(d_mlp)},
      {"vocab_size", std::to_string(vocab_size)},   {"max_seq_len", std::to_string(max_seq_len)},
      {"n_patches", std::to_string(n_patches)},     {"n_patch_codes", std::to_string(n_patch_codes)},
      {"init_scale", std::string(buf, res.ptr)},
  };
}

namespace {

template <typename T>
T parse_number(const std::map<std::string, std::string>& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw std::invalid_argument("model config: missing key '" + key + "'");
  T value{};
  const std::string& s = it->second;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw std::invalid_argument("model config: bad value for '" + key + "': " + s);
  }
  return value;
}

}  // namespace

ModelConfig ModelConfig::from_key_values(const std::map<std::string, std::string>& kv) {
  ModelConfig c;
  c.n_layers = parse_number<int>(kv, "n_layers");
  c.n_heads = parse_number<int>(kv, "n_heads");
  c.d_model = parse_number<int>(kv, "d_model");
  c.d_mlp = parse_number<int>(kv, "d_mlp");
  c.vocab_size = parse_number<int>(kv, "vocab_size");
  c.max_seq_len = parse_number<int>(kv, "max_seq_len");
  c.n_patches = parse_number<int>(kv, "n_patches");
  c.n_patch_codes = parse_number<int>(kv, "n_patch_codes");
  c.init_scale = parse_number<double>(kv, "init_scale");
  c.validate();
  return c;
}

}  // namespace clens
