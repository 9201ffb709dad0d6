#include "clens/model/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace clens {

namespace {

void write_f64_le(std::ostream& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xffu);
  out.write(bytes, 8);
}

double read_f64_le(std::istream& in) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw std::runtime_error("checkpoint: truncated payload");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

std::string read_line(std::istream& in, const char* what) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(std::string("checkpoint: missing ") + what);
  return line;
}

}  // namespace

void write_checkpoint(std::ostream& out, const ModelWeights& weights) {
  weights.validate();
  out << kCheckpointMagic << "\n" << "version " << kCheckpointVersion << "\n";
  const auto kv = weights.config.to_key_values();
  out << "config " << kv.size() << "\n";
  for (const auto& [k, v] : kv) out << k << "=" << v << "\n";
  std::size_t n_blocks = 0;
  weights.for_each([&n_blocks](const std::string&, const MatrixXd&) { ++n_blocks; });
  out << "blocks " << n_blocks << "\n";
  weights.for_each([&out](const std::string& name, const MatrixXd& m) {
    out << "block " << name << " 2 " << m.rows() << " " << m.cols() << "\n";
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) write_f64_le(out, m(r, c));
    }
    out << "\n";
  });
  if (!out) throw std::runtime_error("checkpoint: write failed");
}

ModelWeights read_checkpoint(std::istream& in) {
  if (read_line(in, "magic") != kCheckpointMagic) throw std::runtime_error("checkpoint: bad magic string");
  {
    std::istringstream ver(read_line(in, "version"));
    std::string word;
    int version = 0;
    if (!(ver >> word >> version) || word != "version") throw std::runtime_error("checkpoint: malformed version line");
    if (version != kCheckpointVersion) {
      throw std::runtime_error("checkpoint: unsupported format version " + std::to_string(version));
    }
  }
  std::map<std::string, std::string> kv;
  {
    std::istringstream head(read_line(in, "config header"));
    std::string word;
    std::size_t n = 0;
    if (!(head >> word >> n) || word != "config") throw std::runtime_error("checkpoint: malformed config header");
    for (std::size_t i = 0; i < n; ++i) {
      const std::string line = read_line(in, "config entry");
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw std::runtime_error("checkpoint: malformed config entry '" + line + "'");
      kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }
  ModelWeights weights = ModelWeights::zeros(ModelConfig::from_key_values(kv));
  std::size_t n_blocks = 0;
  {
    std::istringstream head(read_line(in, "blocks header"));
    std::string word;
    if (!(head >> word >> n_blocks) || word != "blocks") throw std::runtime_error("checkpoint: malformed blocks header");
  }
  std::size_t expected_blocks = 0;
  weights.for_each([&expected_blocks](const std::string&, const MatrixXd&) { ++expected_blocks; });
  if (n_blocks != expected_blocks) throw std::runtime_error("checkpoint: block count does not match the config");

  weights.for_each([&in](const std::string& name, MatrixXd& m) {
    std::istringstream head(read_line(in, "block header"));
    std::string word, got_name;
    int rank = 0;
    Eigen::Index rows = 0, cols = 0;
    if (!(head >> word >> got_name >> rank >> rows >> cols) || word != "block" || rank != 2) {
      throw std::runtime_error("checkpoint: malformed header for block '" + name + "'");
    }
    if (got_name != name) throw std::runtime_error("checkpoint: expected block '" + name + "', found '" + got_name + "'");
    if (rows != m.rows() || cols != m.cols()) throw std::runtime_error("checkpoint: block '" + name + "' has wrong shape");
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = read_f64_le(in);
    }
    if (in.get() != '\n') throw std::runtime_error("checkpoint: block '" + name + "' not terminated");
  });
  return weights;
}

void save_checkpoint(const std::filesystem::path& path, const ModelWeights& weights) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
  write_checkpoint(out, weights);
}

ModelWeights load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  return read_checkpoint(in);
}

}  // namespace clens
