#include "clens/report/run_config.hpp"

#include "clens/report/checksum.hpp"
#include "clens/util/csv.hpp"

#include <array>
#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <variant>

namespace clens {

namespace {

using FieldRef = std::variant<int*, std::uint64_t*, double*, bool*, std::string*, std::vector<double>*,
                              std::vector<int>*, std::array<double, 3>*>;

struct Field {
  const char* key;
  FieldRef ref;
};

std::vector<Field> fields(RunConfig& c) {
  return {
      {"seed", &c.seed},
      {"output_dir", &c.output_dir},
      {"world.n_subjects", &c.world.n_subjects},
      {"world.n_attributes", &c.world.n_attributes},
      {"world.grid_rows", &c.world.grid_rows},
      {"world.grid_cols", &c.world.grid_cols},
      {"world.patch_count_weights", &c.world.patch_count_weights},
      {"world.n_distractors", &c.world.n_distractors},
      {"corpus.text_reps", &c.corpus.text_reps},
      {"corpus.caption_reps", &c.corpus.caption_reps},
      {"corpus.scene_reps", &c.corpus.scene_reps},
      {"model.n_layers", &c.model.n_layers},
      {"model.n_heads", &c.model.n_heads},
      {"model.d_model", &c.model.d_model},
      {"model.d_mlp", &c.model.d_mlp},
      {"model.max_seq_len", &c.model.max_seq_len},
      {"model.init_scale", &c.model.init_scale},
      {"train.learning_rate", &c.train.learning_rate},
      {"train.batch_size", &c.train.batch_size},
      {"train.max_steps", &c.train.max_steps},
      {"train.eval_every", &c.train.eval_every},
      {"train.n_probe_captions", &c.train.n_probe_captions},
      {"train.min_fact_accuracy", &c.train.min_fact_accuracy},
      {"train.min_caption_accuracy", &c.train.min_caption_accuracy},
      {"analysis.n_candidates", &c.analysis.n_candidates},
      {"analysis.head_fraction", &c.analysis.head_fraction},
      {"analysis.lambda_grid", &c.analysis.lambda_grid},
      {"analysis.k_grid", &c.analysis.k_grid},
      {"analysis.k_sweep_lambda", &c.analysis.k_sweep_lambda},
      {"analysis.kl_tokens", &c.analysis.kl_tokens},
      {"analysis.n_random_heads", &c.analysis.n_random_heads},
      {"analysis.control_seeds", &c.analysis.control_seeds},
      {"analysis.tau_grid", &c.analysis.tau_grid},
      {"analysis.ablation_mode", &c.analysis.ablation_mode},
      {"analysis.lens_final_norm", &c.analysis.lens_final_norm},
      {"analysis.n_heatmaps", &c.analysis.n_heatmaps},
      {"analysis.heatmap_taus", &c.analysis.heatmap_taus},
  };
}

// Parsed right-hand side of one assignment.
struct Value {
  enum class Kind { integer, real, boolean, string, list } kind = Kind::integer;
  long long integer = 0;
  double real = 0.0;
  bool boolean = false;
  std::string text;
  std::vector<Value> items;

  std::string describe() const {
    switch (kind) {
      case Kind::integer: return "integer";
      case Kind::real: return "float";
      case Kind::boolean: return "boolean";
      case Kind::string: return "string";
      case Kind::list: return "list";
    }
    return "value";
  }
};

class LineParser {
 public:
  LineParser(std::string_view s, int line) : s_(s), line_(line) {}

  Value value() {
    skip_ws();
    if (pos_ >= s_.size()) fail("missing value");
    const char c = s_[pos_];
    if (c == '"') return string();
    if (c == '[') return list();
    if (s_.substr(pos_, 4) == "true") return advance_bool(4, true);
    if (s_.substr(pos_, 5) == "false") return advance_bool(5, false);
    return number();
  }

  void finish() {
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] != '#') fail("unexpected trailing text");
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError("config line " + std::to_string(line_) + ": " + what);
  }

 private:
  void skip_ws() {
    while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
  }

  Value advance_bool(std::size_t n, bool b) {
    pos_ += n;
    Value v;
    v.kind = Value::Kind::boolean;
    v.boolean = b;
    return v;
  }

  Value string() {
    Value v;
    v.kind = Value::Kind::string;
    ++pos_;
    while (pos_ < s_.size() && s_[pos_] != '"') {
      if (s_[pos_] == '\\' && pos_ + 1 < s_.size()) ++pos_;
      v.text.push_back(s_[pos_++]);
    }
    if (pos_ >= s_.size()) fail("unterminated string");
    ++pos_;
    return v;
  }

  Value list() {
    Value v;
    v.kind = Value::Kind::list;
    ++pos_;
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == ']') {
      ++pos_;
      return v;
    }
    while (true) {
      Value item = value();
      if (item.kind == Value::Kind::list) fail("nested lists are not supported");
      v.items.push_back(std::move(item));
      skip_ws();
      if (pos_ >= s_.size()) fail("unterminated list");
      if (s_[pos_] == ']') {
        ++pos_;
        return v;
      }
      if (s_[pos_] != ',') fail("expected ',' or ']' in list");
      ++pos_;
    }
  }

  Value number() {
    std::size_t end = pos_;
    while (end < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[end])) || s_[end] == '.' ||
                               s_[end] == '-' || s_[end] == '+')) {
      ++end;
    }
    const std::string_view tok = s_.substr(pos_, end - pos_);
    if (tok.empty()) fail("expected a value");
    Value v;
    const bool is_real = tok.find_first_of(".eE") != std::string_view::npos && tok.find("0x") == std::string_view::npos;
    const char* first = tok.data();
    if (*first == '+') ++first;
    std::from_chars_result r{};
    if (is_real) {
      v.kind = Value::Kind::real;
      r = std::from_chars(first, tok.data() + tok.size(), v.real);
    } else {
      v.kind = Value::Kind::integer;
      r = std::from_chars(first, tok.data() + tok.size(), v.integer);
    }
    if (r.ec != std::errc() || r.ptr != tok.data() + tok.size()) fail("malformed value '" + std::string(tok) + "'");
    pos_ = end;
    return v;
  }

  std::string_view s_;
  int line_;
  std::size_t pos_ = 0;
};

double as_real(const Value& v, const std::string& key) {
  if (v.kind == Value::Kind::real) return v.real;
  if (v.kind == Value::Kind::integer) return static_cast<double>(v.integer);
  throw ConfigError("config key '" + key + "': expected a number, got " + v.describe());
}

long long as_integer(const Value& v, const std::string& key) {
  if (v.kind != Value::Kind::integer) throw ConfigError("config key '" + key + "': expected an integer, got " + v.describe());
  return v.integer;
}

const std::vector<Value>& as_list(const Value& v, const std::string& key) {
  if (v.kind != Value::Kind::list) throw ConfigError("config key '" + key + "': expected a list, got " + v.describe());
  return v.items;
}

int as_int(const Value& v, const std::string& key) {
  const long long x = as_integer(v, key);
  if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
    throw ConfigError("config key '" + key + "': integer out of range");
  }
  return static_cast<int>(x);
}

void assign(const FieldRef& ref, const Value& v, const std::string& key) {
  std::visit(
      [&](auto* target) {
        using T = std::remove_pointer_t<decltype(target)>;
        if constexpr (std::is_same_v<T, int>) {
          *target = as_int(v, key);
        } else if constexpr (std::is_same_v<T, std::uint64_t>) {
          const long long x = as_integer(v, key);
          if (x < 0) throw ConfigError("config key '" + key + "': expected a non-negative integer");
          *target = static_cast<std::uint64_t>(x);
        } else if constexpr (std::is_same_v<T, double>) {
          *target = as_real(v, key);
        } else if constexpr (std::is_same_v<T, bool>) {
          if (v.kind != Value::Kind::boolean) throw ConfigError("config key '" + key + "': expected a boolean, got " + v.describe());
          *target = v.boolean;
        } else if constexpr (std::is_same_v<T, std::string>) {
          if (v.kind != Value::Kind::string) throw ConfigError("config key '" + key + "': expected a string, got " + v.describe());
          *target = v.text;
        } else if constexpr (std::is_same_v<T, std::vector<double>>) {
          target->clear();
          for (const Value& item : as_list(v, key)) target->push_back(as_real(item, key));
        } else if constexpr (std::is_same_v<T, std::vector<int>>) {
          target->clear();
          for (const Value& item : as_list(v, key)) target->push_back(as_int(item, key));
        } else {
          const auto& items = as_list(v, key);
          if (items.size() != target->size()) {
            throw ConfigError("config key '" + key + "': expected " + std::to_string(target->size()) + " numbers");
          }
          for (std::size_t i = 0; i < items.size(); ++i) (*target)[i] = as_real(items[i], key);
        }
      },
      ref);
}

std::string real_text(double x) {
  std::string s = format_number(x);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

std::string render(const FieldRef& ref) {
  return std::visit(
      [](auto* target) -> std::string {
        using T = std::remove_pointer_t<decltype(target)>;
        if constexpr (std::is_same_v<T, int> || std::is_same_v<T, std::uint64_t>) {
          return std::to_string(*target);
        } else if constexpr (std::is_same_v<T, double>) {
          return real_text(*target);
        } else if constexpr (std::is_same_v<T, bool>) {
          return *target ? "true" : "false";
        } else if constexpr (std::is_same_v<T, std::string>) {
          std::string out = "\"";
          for (char ch : *target) {
            if (ch == '"' || ch == '\\') out.push_back('\\');
            out.push_back(ch);
          }
          return out + "\"";
        } else {
          std::string out = "[";
          bool first = true;
          for (const auto& x : *target) {
            out += first ? "" : ", ";
            first = false;
            if constexpr (std::is_same_v<std::decay_t<decltype(x)>, int>) {
              out += std::to_string(x);
            } else {
              out += real_text(x);
            }
          }
          return out + "]";
        }
      },
      ref);
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig c;
  std::map<std::string, FieldRef> table;
  for (const Field& f : fields(c)) table.emplace(f.key, f.ref);
  std::set<std::string> seen;
  bool have_version = false;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    if (!seen.insert(key).second) throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    LineParser p(std::string_view(line).substr(eq + 1), line_no);
    const Value v = p.value();
    p.finish();
    if (key == "schema_version") {
      const long long version = as_integer(v, key);
      if (version != kSchemaVersion) {
        throw ConfigError("config: unsupported schema_version " + std::to_string(version) + " (expected " +
                          std::to_string(kSchemaVersion) + ")");
      }
      have_version = true;
      continue;
    }
    auto it = table.find(key);
    if (it == table.end()) throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    assign(it->second, v, key);
  }
  if (!have_version) throw ConfigError("config: missing schema_version");
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config: cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string RunConfig::serialize() const {
  RunConfig copy = *this;
  std::string out = "# conflict-lens run configuration\nschema_version = " + std::to_string(kSchemaVersion) + "\n";
  std::string section;
  for (const Field& f : fields(copy)) {
    const std::string key = f.key;
    const std::size_t dot = key.find('.');
    const std::string group = dot == std::string::npos ? "" : key.substr(0, dot);
    if (group != section) {
      out += "\n# " + group + "\n";
      section = group;
    }
    out += key + " = " + render(f.ref) + "\n";
  }
  return out;
}

std::string RunConfig::hash() const { return sha256_hex(serialize()); }

void RunConfig::validate() const {
  try {
    world_config().validate();
    if (corpus.text_reps < 0 || corpus.caption_reps < 0 || corpus.scene_reps < 0) {
      throw std::invalid_argument("corpus repetition counts must be >= 0");
    }
    if (corpus.text_reps + corpus.caption_reps + corpus.scene_reps == 0) throw std::invalid_argument("corpus is empty");
    const FactWorld world = FactWorld::generate(world_config());
    world.model_config(model).validate();
    train_config().validate();
    if (analysis.n_candidates <= 0) throw std::invalid_argument("analysis.n_candidates must be > 0");
    if (!(analysis.head_fraction > 0.0 && analysis.head_fraction <= 0.5)) {
      throw std::invalid_argument("analysis.head_fraction must lie in (0, 0.5]");
    }
    if (analysis.lambda_grid.empty()) throw std::invalid_argument("analysis.lambda_grid is empty");
    for (double l : analysis.lambda_grid) {
      if (!(l >= -3.0 && l <= 3.0)) throw std::invalid_argument("analysis.lambda_grid values must lie in [-3, 3]");
    }
    for (std::size_t i = 0; i < analysis.k_grid.size(); ++i) {
      if (analysis.k_grid[i] < 0 || 2 * analysis.k_grid[i] > model.n_layers * model.n_heads) {
        throw std::invalid_argument("analysis.k_grid values must lie in [0, L*H/2]");
      }
      if (i && analysis.k_grid[i] < analysis.k_grid[i - 1]) throw std::invalid_argument("analysis.k_grid must ascend");
    }
    if (analysis.kl_tokens < 1) throw std::invalid_argument("analysis.kl_tokens must be >= 1");
    if (analysis.n_random_heads < 0 || analysis.n_random_heads > model.n_layers * model.n_heads) {
      throw std::invalid_argument("analysis.n_random_heads must lie in [0, L*H]");
    }
    if (analysis.control_seeds.empty()) throw std::invalid_argument("analysis.control_seeds is empty");
    for (int s : analysis.control_seeds) {
      if (s < 0) throw std::invalid_argument("analysis.control_seeds must be >= 0");
    }
    for (double t : analysis.tau_grid) {
      if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("analysis.tau_grid values must lie in [0, 1]");
    }
    for (double t : analysis.heatmap_taus) {
      if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("analysis.heatmap_taus values must lie in [0, 1]");
    }
    if (analysis.ablation_mode != "object_only" && analysis.ablation_mode != "full") {
      throw std::invalid_argument("analysis.ablation_mode must be \"object_only\" or \"full\"");
    }
    if (analysis.n_heatmaps < 0) throw std::invalid_argument("analysis.n_heatmaps must be >= 0");
    if (output_dir.empty()) throw std::invalid_argument("output_dir is empty");
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

std::uint64_t RunConfig::derived_seed(std::string_view stage) const {
  std::uint64_t h = 1469598103934665603ULL;
  for (char ch : stage) h = (h ^ static_cast<unsigned char>(ch)) * 1099511628211ULL;
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (h | 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

WorldConfig RunConfig::world_config() const {
  WorldConfig w = world;
  w.seed = derived_seed("world");
  return w;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t = train;
  t.seed = derived_seed("train");
  return t;
}

}  // namespace clens
