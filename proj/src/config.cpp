#include "kdar/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "kdar/error.hpp"

namespace kdar {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Shortest text that parses back to the same double.
std::string real_to_string(double v) {
  char buf[40];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

Index to_index(const std::string& v) {
  Index out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw std::invalid_argument("expected an integer, got '" + v + "'");
  }
  return out;
}

double to_real(const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument("expected a number, got '" + v + "'");
  }
  if (used != v.size()) throw std::invalid_argument("expected a number, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("expected true or false, got '" + v + "'");
}

std::string bool_to_string(bool b) { return b ? "true" : "false"; }

std::string join(const std::vector<Index>& v) {
  std::string out;
  for (std::size_t k = 0; k < v.size(); ++k) {
    if (k) out += ",";
    out += std::to_string(v[k]);
  }
  return out;
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

using FieldTable = std::vector<std::pair<std::string, std::vector<std::pair<std::string, Field>>>>;

#define KDAR_FIELD(key, expr, parse, print)                                                     \
  {                                                                                             \
    key, Field {                                                                                \
      [](RunConfig& c, const std::string& v) { c.expr = parse(v); },                           \
          [](const RunConfig& c) { return print(c.expr); }                                      \
    }                                                                                           \
  }

std::string path_to_string(const std::filesystem::path& p) { return p.string(); }
std::filesystem::path to_path(const std::string& v) { return v; }
std::uint64_t to_seed(const std::string& v) {
  const Index s = to_index(v);
  if (s < 0) throw std::invalid_argument("seed must be nonnegative");
  return static_cast<std::uint64_t>(s);
}
std::string seed_to_string(std::uint64_t s) { return std::to_string(s); }
std::string index_to_string(Index i) { return std::to_string(i); }
unsigned to_unsigned(const std::string& v) {
  const Index i = to_index(v);
  if (i < 0) throw std::invalid_argument("must be nonnegative");
  return static_cast<unsigned>(i);
}
std::string unsigned_to_string(unsigned u) { return std::to_string(u); }
std::string format_to_string(InteractionFormat f) { return to_string(f); }

// Section order and key order define the serialized layout.
const FieldTable& fields() {
  static const FieldTable table = {
      {"data",
       {
           KDAR_FIELD("dataset", data.dataset, to_path, path_to_string),
           KDAR_FIELD("interactions", data.interactions, to_path, path_to_string),
           KDAR_FIELD("kg", data.kg, to_path, path_to_string),
           KDAR_FIELD("format", data.format, parse_interaction_format, format_to_string),
           KDAR_FIELD("threshold", data.threshold, to_real, real_to_string),
           KDAR_FIELD("core_k", data.core_k, to_index, index_to_string),
           KDAR_FIELD("split_ratio", data.split_ratio, to_real, real_to_string),
           KDAR_FIELD("inverse_triplets", data.inverse_triplets, to_bool, bool_to_string),
       }},
      {"model",
       {
           KDAR_FIELD("dim", model.dim, to_index, index_to_string),
           KDAR_FIELD("layers", model.layers, to_index, index_to_string),
           KDAR_FIELD("temperature", model.temperature, to_real, real_to_string),
           KDAR_FIELD("lambda_bpr_cf", model.lambda_bpr_cf, to_real, real_to_string),
           KDAR_FIELD("lambda_cl", model.lambda_cl, to_real, real_to_string),
           KDAR_FIELD("lambda_reg", model.lambda_reg, to_real, real_to_string),
           KDAR_FIELD("no_enhancement", ablation.no_enhancement, to_bool, bool_to_string),
           KDAR_FIELD("no_attention", ablation.no_attention, to_bool, bool_to_string),
           KDAR_FIELD("no_cl", ablation.no_cl, to_bool, bool_to_string),
           KDAR_FIELD("no_cg", ablation.no_cg, to_bool, bool_to_string),
       }},
      {"train",
       {
           KDAR_FIELD("epochs", train.epochs, to_index, index_to_string),
           KDAR_FIELD("batch_size", train.batch_size, to_index, index_to_string),
           KDAR_FIELD("learning_rate", model.learning_rate, to_real, real_to_string),
           KDAR_FIELD("eval_every", train.eval_every, to_index, index_to_string),
           KDAR_FIELD("patience", train.patience, to_index, index_to_string),
           KDAR_FIELD("seed", train.seed, to_seed, seed_to_string),
           KDAR_FIELD("cutoffs", train.cutoffs, parse_index_list, join),
           KDAR_FIELD("threads", train.eval_threads, to_unsigned, unsigned_to_string),
           KDAR_FIELD("output", output, to_path, path_to_string),
       }},
  };
  return table;
}

#undef KDAR_FIELD

const Field* find_field(const std::string& section, const std::string& key) {
  for (const auto& [name, entries] : fields()) {
    if (name != section) continue;
    for (const auto& [k, f] : entries) {
      if (k == key) return &f;
    }
  }
  return nullptr;
}

}  // namespace

std::vector<Index> parse_index_list(const std::string& text) {
  std::vector<Index> out;
  std::stringstream in(text);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    tok = trim(tok);
    if (!tok.empty()) out.push_back(to_index(tok));
  }
  return out;
}

std::vector<double> parse_real_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    tok = trim(tok);
    if (!tok.empty()) out.push_back(to_real(tok));
  }
  return out;
}

void RunConfig::validate() const {
  std::vector<std::string> bad;
  auto collect = [&](auto&& fn) {
    try {
      fn();
    } catch (const ConfigError& e) {
      std::stringstream lines(e.what());
      std::string line;
      std::getline(lines, line);  // header
      while (std::getline(lines, line)) bad.push_back(trim(line));
    }
  };
  collect([&] { model.validate(); });
  collect([&] { train.validate(); });
  if (data.core_k < 1) bad.emplace_back("core_k must be >= 1");
  if (!(data.split_ratio > 0 && data.split_ratio < 1)) bad.emplace_back("split_ratio must be in (0, 1)");
  if (!bad.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& b : bad) msg += "\n  " + b;
    throw ConfigError(msg);
  }
}

RunConfig parse_config(const std::string& text) {
  RunConfig config;
  std::vector<std::string> errors;
  std::string section;
  std::stringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') {
        errors.push_back(where + "malformed section header");
        continue;
      }
      section = trim(line.substr(1, line.size() - 2));
      bool known = false;
      for (const auto& [name, entries] : fields()) known = known || name == section;
      if (!known) errors.push_back(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      errors.push_back(where + "expected key = value");
      continue;
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const Field* field = find_field(section, key);
    if (field == nullptr) {
      errors.push_back(where + "unknown key '" + key + "' in [" + section + "]");
      continue;
    }
    try {
      field->set(config, value);
    } catch (const std::exception& e) {
      errors.push_back(where + section + "." + key + ": " + e.what());
    }
  }
  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string serialize_config(const RunConfig& config) {
  std::string out;
  for (const auto& [section, entries] : fields()) {
    if (!out.empty()) out += "\n";
    out += "[" + section + "]\n";
    for (const auto& [key, field] : entries) out += key + " = " + field.get(config) + "\n";
  }
  return out;
}

}  // namespace kdar
