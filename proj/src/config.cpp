#include "ape/config.hpp"

#include <cstdint>
#include <fstream>
#include <sstream>

#include "ape/errors.hpp"

namespace ape {

namespace {

std::int64_t to_count(const std::string& key, const std::string& value) {
  try {
    return std::stoll(value);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an integer, got '" + value + "'");
  }
}

double to_real(const std::string& key, const std::string& value) {
  try {
    return std::stod(value);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + value + "'");
  }
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

}  // namespace

void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "n_layers") {
    cfg.model.n_layers = to_count(key, value);
  } else if (key == "d_model") {
    cfg.model.d_model = to_count(key, value);
  } else if (key == "d_ffn") {
    cfg.model.d_ffn = to_count(key, value);
  } else if (key == "n_heads") {
    cfg.model.n_heads = to_count(key, value);
  } else if (key == "dropout") {
    cfg.model.dropout = to_real(key, value);
  } else if (key == "max_positions") {
    cfg.model.max_positions = to_count(key, value);
  } else if (key == "label_smoothing") {
    cfg.train.label_smoothing = to_real(key, value);
  } else if (key == "lambda") {
    cfg.train.lambda = to_real(key, value);
  } else if (key == "noise_strength") {
    cfg.train.noise.strength = to_real(key, value);
  } else if (key == "noise_dist") {
    if (value == "gaussian") {
      cfg.train.noise.distribution = NoiseDistribution::gaussian;
    } else if (value == "uniform") {
      cfg.train.noise.distribution = NoiseDistribution::uniform;
    } else {
      throw ConfigError("noise_dist must be gaussian or uniform, got '" + value + "'");
    }
  } else if (key == "adam_beta1") {
    cfg.train.adam_beta1 = to_real(key, value);
  } else if (key == "adam_beta2") {
    cfg.train.adam_beta2 = to_real(key, value);
  } else if (key == "adam_eps") {
    cfg.train.adam_eps = to_real(key, value);
  } else if (key == "warmup_steps") {
    cfg.train.warmup_steps = to_count(key, value);
  } else if (key == "save_interval") {
    cfg.train.save_interval = to_count(key, value);
  } else if (key == "keep_last") {
    cfg.train.keep_last = to_count(key, value);
  } else if (key == "average_window") {
    cfg.train.average_window = to_count(key, value);
  } else if (key == "epochs") {
    cfg.train.epochs = to_count(key, value);
  } else if (key == "batch_pe_tokens") {
    cfg.train.batch_pe_tokens = to_count(key, value);
  } else if (key == "seed") {
    cfg.train.seed = static_cast<std::uint64_t>(to_count(key, value));
  } else {
    throw ConfigError("unknown config key: " + key);
  }
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  RunConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
    }
    apply_config_entry(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

std::string serialize_config(const RunConfig& cfg) {
  std::ostringstream os;
  os.precision(17);
  os << "adam_beta1=" << cfg.train.adam_beta1 << '\n'
     << "adam_beta2=" << cfg.train.adam_beta2 << '\n'
     << "adam_eps=" << cfg.train.adam_eps << '\n'
     << "average_window=" << cfg.train.average_window << '\n'
     << "batch_pe_tokens=" << cfg.train.batch_pe_tokens << '\n'
     << "d_ffn=" << cfg.model.d_ffn << '\n'
     << "d_model=" << cfg.model.d_model << '\n'
     << "dropout=" << cfg.model.dropout << '\n'
     << "epochs=" << cfg.train.epochs << '\n'
     << "keep_last=" << cfg.train.keep_last << '\n'
     << "label_smoothing=" << cfg.train.label_smoothing << '\n'
     << "lambda=" << cfg.train.lambda << '\n'
     << "max_positions=" << cfg.model.max_positions << '\n'
     << "n_heads=" << cfg.model.n_heads << '\n'
     << "n_layers=" << cfg.model.n_layers << '\n'
     << "noise_dist="
     << (cfg.train.noise.distribution == NoiseDistribution::gaussian ? "gaussian" : "uniform")
     << '\n'
     << "noise_strength=" << cfg.train.noise.strength << '\n'
     << "save_interval=" << cfg.train.save_interval << '\n'
     << "seed=" << cfg.train.seed << '\n'
     << "vocab_size=" << cfg.model.vocab_size << '\n'
     << "warmup_steps=" << cfg.train.warmup_steps << '\n';
  return os.str();
}

std::string config_digest(const RunConfig& cfg) {
  const std::string text = serialize_config(cfg);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::map<std::string, std::string> model_config_to_meta(const ModelConfig& cfg) {
  return {
      {"n_layers", std::to_string(cfg.n_layers)},
      {"d_model", std::to_string(cfg.d_model)},
      {"d_ffn", std::to_string(cfg.d_ffn)},
      {"n_heads", std::to_string(cfg.n_heads)},
      {"dropout", std::to_string(cfg.dropout)},
      {"max_positions", std::to_string(cfg.max_positions)},
      {"vocab_size", std::to_string(cfg.vocab_size)},
  };
}

ModelConfig model_config_from_meta(const std::map<std::string, std::string>& meta) {
  ModelConfig cfg;
  const auto need = [&](const char* key) {
    auto it = meta.find(key);
    if (it == meta.end()) throw DataError(std::string("checkpoint metadata misses ") + key);
    return it->second;
  };
  cfg.n_layers = std::stoll(need("n_layers"));
  cfg.d_model = std::stoll(need("d_model"));
  cfg.d_ffn = std::stoll(need("d_ffn"));
  cfg.n_heads = std::stoll(need("n_heads"));
  cfg.dropout = std::stod(need("dropout"));
  cfg.max_positions = std::stoll(need("max_positions"));
  cfg.vocab_size = std::stoll(need("vocab_size"));
  return cfg;
}

}  // namespace ape
