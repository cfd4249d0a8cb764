#include "neox/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "neox/error.hpp"

namespace neox::config {

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::default_value: return "default";
    case Provenance::file: return "file";
    case Provenance::flag: return "flag";
    case Provenance::env: return "env";
  }
  return "?";
}

std::string_view to_string(ValueType t) {
  switch (t) {
    case ValueType::count: return "count";
    case ValueType::integer: return "integer";
    case ValueType::fraction: return "fraction";
    case ValueType::number: return "number";
    case ValueType::flag: return "flag";
    case ValueType::string: return "string";
    case ValueType::list: return "list";
  }
  return "?";
}

const std::vector<KeySpec>& known_keys() {
  using T = ValueType;
  static const std::vector<KeySpec> keys = {
      // model
      {"num-layers", T::count, "44", true},
      {"hidden-size", T::count, "6144", true},
      {"num-attention-heads", T::count, "64", true},
      {"rotary-pct", T::fraction, "0.25", true},
      {"rotary-emb-base", T::number, "10000", true},
      {"max-position-embeddings", T::count, "2048", true},
      {"vocab-size", T::count, "50257", true},
      {"no-weight-tying", T::flag, "True", true},
      {"pos-emb", T::string, "rotary", true},
      {"norm", T::string, "layernorm", true},
      {"gpt-j-residual", T::flag, "True", true},
      {"init-method", T::string, "small-init", true},
      {"output-layer-init-method", T::string, "wang-init", true},
      {"attention-dropout", T::fraction, "0", true},
      {"hidden-dropout", T::fraction, "0", true},
      {"bias-gelu-fusion", T::flag, "True", false},
      {"seed", T::integer, "1234", true},
      // training
      {"train-iters", T::count, "150000", true},
      {"lr-decay-iters", T::count, "150000", true},
      {"lr-decay-style", T::string, "cosine", true},
      {"optimizer.type", T::string, "Adam", true},
      {"optimizer.params.lr", T::number, "9.7e-05", true},
      {"optimizer.params.betas", T::list, "[0.9, 0.95]", true},
      {"optimizer.params.eps", T::number, "1e-08", true},
      {"min-lr", T::number, "9.7e-06", true},
      {"warmup", T::fraction, "0.01", true},
      {"weight-decay", T::number, "0.01", true},
      {"gradient-clipping", T::number, "1.0", true},
      {"seq-length", T::count, "2048", true},
      {"train-batch-size", T::count, "1538", true},
      {"save-interval", T::count, "500", true},
      {"eval-interval", T::count, "1000", true},
      {"eval-iters", T::count, "10", true},
      {"log-interval", T::count, "2", true},
      {"split", T::string, "995,4,1", true},
      // accepted for fidelity with upstream configs, not used at desk scale
      {"checkpoint-activations", T::flag, "True", false},
      {"checkpoint-num-layers", T::count, "1", false},
      {"data-impl", T::string, "mmap", false},
      {"distributed-backend", T::string, "nccl", false},
      {"fp16.enabled", T::flag, "True", false},
      {"fp16.fp16", T::flag, "True", false},
      {"fp16.hysteresis", T::count, "2", false},
      {"fp16.initial-scale-power", T::count, "12", false},
      {"fp16.loss-scale", T::number, "0", false},
      {"fp16.loss-scale-window", T::count, "1000", false},
      {"fp16.min-loss-scale", T::number, "1", false},
      {"gradient-accumulation-steps", T::count, "32", false},
      {"model-parallel-size", T::count, "2", false},
      {"output-layer-parallelism", T::string, "column", false},
      {"partition-activations", T::flag, "False", false},
      {"pipe-parallel-size", T::count, "4", false},
      {"scaled-upper-triang-masked-softmax-fusion", T::flag, "True", false},
      {"steps-per-print", T::count, "2", false},
      {"synchronize-each-layer", T::flag, "True", false},
      {"tokenizer-type", T::string, "HFTokenizer", false},
      {"train-micro-batch-size-per-gpu", T::count, "4", false},
      {"vocab-file", T::string, "20B-tokenizer.json", false},
      {"wall-clock-breakdown", T::flag, "False", false},
      {"zero-optimization.allgather-bucket-size", T::count, "1260000000", false},
      {"zero-optimization.allgather-partitions", T::flag, "True", false},
      {"zero-optimization.contiguous-gradients", T::flag, "True", false},
      {"zero-optimization.cpu-offload", T::flag, "False", false},
      {"zero-optimization.overlap-comm", T::flag, "True", false},
      {"zero-optimization.reduce-bucket-size", T::count, "1260000000", false},
      {"zero-optimization.reduce-scatter", T::flag, "True", false},
      {"zero-optimization.stage", T::count, "1", false},
  };
  return keys;
}

namespace {

const KeySpec* find_spec(const std::string& key) {
  for (const auto& s : known_keys()) {
    if (s.key == key) return &s;
  }
  return nullptr;
}

[[noreturn]] void type_error(const std::string& key, ValueType t, const std::string& value) {
  throw ValidationError("config key " + key + " expects a " + std::string(to_string(t)) + ", got '" + value + "'");
}

bool parse_double(const std::string& s, double& out) {
  try {
    std::size_t pos = 0;
    out = std::stod(s, &pos);
    return pos == s.size() && std::isfinite(out);
  } catch (const std::exception&) {
    return false;
  }
}

bool parse_int(const std::string& s, long long& out) {
  try {
    std::size_t pos = 0;
    out = std::stoll(s, &pos);
    return pos == s.size();
  } catch (const std::exception&) {
    return false;
  }
}

bool parse_flag(const std::string& s, bool& out) {
  std::string l = s;
  std::transform(l.begin(), l.end(), l.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (l == "true" || l == "1" || l == "yes") return out = true, true;
  if (l == "false" || l == "0" || l == "no") return out = false, true;
  return false;
}

bool parse_list(const std::string& s, std::vector<double>& out) {
  std::string body = s;
  if (!body.empty() && body.front() == '[') {
    if (body.back() != ']') return false;
    body = body.substr(1, body.size() - 2);
  }
  out.clear();
  std::istringstream in(body);
  for (std::string item; std::getline(in, item, ',');) {
    const auto b = item.find_first_not_of(' ');
    const auto e = item.find_last_not_of(' ');
    if (b == std::string::npos) return false;
    double v;
    if (!parse_double(item.substr(b, e - b + 1), v)) return false;
    out.push_back(v);
  }
  return !out.empty();
}

void check_type(const std::string& key, ValueType t, const std::string& value) {
  double d;
  long long i;
  bool b;
  std::vector<double> l;
  switch (t) {
    case ValueType::count:
      if (!parse_int(value, i) || i < 0) type_error(key, t, value);
      break;
    case ValueType::integer:
      if (!parse_int(value, i)) type_error(key, t, value);
      break;
    case ValueType::fraction:
      if (!parse_double(value, d) || d < 0.0 || d > 1.0) type_error(key, t, value);
      break;
    case ValueType::number:
      if (!parse_double(value, d)) type_error(key, t, value);
      break;
    case ValueType::flag:
      if (!parse_flag(value, b)) type_error(key, t, value);
      break;
    case ValueType::list:
      if (!parse_list(value, l)) type_error(key, t, value);
      break;
    case ValueType::string:
      break;
  }
}

bool valid_key(const std::string& k) {
  return !k.empty() && std::all_of(k.begin(), k.end(), [](unsigned char c) {
    return std::isalnum(c) || c == '-' || c == '_' || c == '.';
  });
}

std::string strip(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& s : known_keys()) entries_[s.key] = {s.default_value, Provenance::default_value};
}

void RunConfig::set(const std::string& key, const std::string& value, Provenance source) {
  if (!valid_key(key)) throw ValidationError("invalid config key '" + key + "'");
  if (const KeySpec* spec = find_spec(key)) {
    check_type(key, spec->type, value);
  } else if (!entries_.count(key)) {
    warnings_.push_back("unknown config key " + key);
  }
  entries_[key] = {value, source};
}

const Entry& RunConfig::entry(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) throw ValidationError("config key " + key + " is not set");
  return it->second;
}

std::size_t RunConfig::get_count(const std::string& key) const {
  long long v;
  if (!parse_int(entry(key).value, v) || v < 0) type_error(key, ValueType::count, entry(key).value);
  return static_cast<std::size_t>(v);
}

long long RunConfig::get_integer(const std::string& key) const {
  long long v;
  if (!parse_int(entry(key).value, v)) type_error(key, ValueType::integer, entry(key).value);
  return v;
}

double RunConfig::get_number(const std::string& key) const {
  double v;
  if (!parse_double(entry(key).value, v)) type_error(key, ValueType::number, entry(key).value);
  return v;
}

bool RunConfig::get_flag(const std::string& key) const {
  bool v;
  if (!parse_flag(entry(key).value, v)) type_error(key, ValueType::flag, entry(key).value);
  return v;
}

const std::string& RunConfig::get_string(const std::string& key) const { return entry(key).value; }

std::vector<double> RunConfig::get_list(const std::string& key) const {
  std::vector<double> v;
  if (!parse_list(entry(key).value, v)) type_error(key, ValueType::list, entry(key).value);
  return v;
}

RunConfig parse_config_text(const std::string& text, const Overrides& flags) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = strip(line);
    if (line.empty()) continue;
    const auto sep = line.find_first_of(" \t:=");
    if (sep == std::string::npos) throw ParseError("expected `key value`, got '" + line + "'", ln);
    const std::string key = line.substr(0, sep);
    std::string rest = strip(line.substr(sep));
    if (!rest.empty() && (rest.front() == ':' || rest.front() == '=')) rest = strip(rest.substr(1));
    if (!valid_key(key)) throw ParseError("invalid key '" + key + "'", ln);
    if (rest.empty()) throw ParseError("key " + key + " has no value", ln);
    try {
      cfg.set(key, rest, Provenance::file);
    } catch (const ParseError&) {
      throw;
    } catch (const ValidationError& e) {
      throw ParseError(e.what(), ln);
    }
  }
  for (const auto& [key, value] : flags) cfg.set(key, value, Provenance::flag);
  return cfg;
}

RunConfig parse_config(const std::filesystem::path& path, const Overrides& flags) {
  std::ifstream in(path);
  if (!in) throw RuntimeError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), flags);
}

std::string emit_config(const RunConfig& cfg) {
  std::ostringstream os;
  for (const auto& [key, e] : cfg.entries()) {
    if (e.source != Provenance::default_value) os << key << ' ' << e.value << '\n';
  }
  return os.str();
}

namespace {

void require(const RunConfig& cfg, const std::string& key, const std::string& want) {
  if (cfg.get_string(key) != want) {
    throw ValidationError("config key " + key + " must be " + want + " (got " + cfg.get_string(key) + ")");
  }
}

}  // namespace

model::ModelConfig model_config(const RunConfig& cfg) {
  require(cfg, "pos-emb", "rotary");
  require(cfg, "norm", "layernorm");
  require(cfg, "init-method", "small-init");
  require(cfg, "output-layer-init-method", "wang-init");
  if (!cfg.get_flag("gpt-j-residual")) throw ValidationError("only parallel residual blocks are supported");
  if (cfg.get_number("attention-dropout") != 0.0 || cfg.get_number("hidden-dropout") != 0.0) {
    throw ValidationError("dropout is not supported; set attention-dropout and hidden-dropout to 0");
  }
  model::ModelConfig m;
  m.num_layers = cfg.get_count("num-layers");
  m.hidden_size = cfg.get_count("hidden-size");
  m.num_heads = cfg.get_count("num-attention-heads");
  m.rotary_pct = cfg.get_number("rotary-pct");
  m.rotary_base = cfg.get_number("rotary-emb-base");
  m.max_positions = cfg.get_count("max-position-embeddings");
  m.vocab_size = cfg.get_count("vocab-size");
  m.weight_tying = !cfg.get_flag("no-weight-tying");
  m.seed = static_cast<std::uint64_t>(cfg.get_integer("seed"));
  m.validate();
  return m;
}

train::TrainConfig train_config(const RunConfig& cfg) {
  require(cfg, "lr-decay-style", "cosine");
  const std::string opt = cfg.get_string("optimizer.type");
  if (opt != "Adam" && opt != "AdamW") throw ValidationError("optimizer.type must be Adam or AdamW");
  train::TrainConfig t;
  t.total_steps = cfg.get_count("train-iters");
  if (cfg.get_count("lr-decay-iters") != t.total_steps) {
    throw ValidationError("lr-decay-iters must equal train-iters");
  }
  t.peak_lr = cfg.get_number("optimizer.params.lr");
  const double min_lr = cfg.get_number("min-lr");
  if (std::abs(min_lr - t.min_lr()) > 1e-12 * t.peak_lr) {
    throw ValidationError("min-lr must be one tenth of optimizer.params.lr (" + std::to_string(t.min_lr()) + ")");
  }
  const auto betas = cfg.get_list("optimizer.params.betas");
  if (betas.size() != 2) throw ValidationError("optimizer.params.betas needs two values");
  t.beta1 = betas[0];
  t.beta2 = betas[1];
  t.eps = cfg.get_number("optimizer.params.eps");
  t.warmup_frac = cfg.get_number("warmup");
  t.weight_decay = cfg.get_number("weight-decay");
  t.grad_clip = cfg.get_number("gradient-clipping");
  t.seq_len = cfg.get_count("seq-length");
  t.contexts = cfg.get_count("train-batch-size");
  t.checkpoint_interval = cfg.get_count("save-interval");
  t.eval_interval = cfg.get_count("eval-interval");
  t.eval_contexts = cfg.get_count("eval-iters");
  t.log_interval = cfg.get_count("log-interval");
  t.seed = static_cast<std::uint64_t>(cfg.get_integer("seed"));
  t.validate();
  return t;
}

}  // namespace neox::config
