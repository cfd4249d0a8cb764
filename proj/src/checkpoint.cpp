#include "neox/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "neox/error.hpp"

namespace neox::model {

namespace {

constexpr char kMagic[8] = {'N', 'E', 'O', 'X', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

template <class T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw ValidationError("checkpoint is truncated");
  return v;
}

std::string get_string(std::istream& is, std::size_t n) {
  std::string s(n, '\0');
  if (n > 0 && !is.read(s.data(), static_cast<std::streamsize>(n))) throw ValidationError("checkpoint is truncated");
  return s;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string header_text(const ModelConfig& c, const std::map<std::string, std::string>& meta) {
  std::ostringstream os;
  os << "num-layers " << c.num_layers << '\n'
     << "hidden-size " << c.hidden_size << '\n'
     << "num-attention-heads " << c.num_heads << '\n'
     << "rotary-pct " << fmt_double(c.rotary_pct) << '\n'
     << "rotary-emb-base " << fmt_double(c.rotary_base) << '\n'
     << "max-position-embeddings " << c.max_positions << '\n'
     << "vocab-size " << c.vocab_size << '\n'
     << "no-weight-tying " << (c.weight_tying ? "false" : "true") << '\n'
     << "seed " << c.seed << '\n';
  for (const auto& [key, value] : meta) os << key << ' ' << value << '\n';
  return os.str();
}

std::size_t to_count(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const auto n = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw ValidationError("checkpoint header: " + key + " is not a count: " + v);
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ValidationError("checkpoint header: " + key + " is not a number: " + v);
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const LMModel& model,
                     const std::map<std::string, std::string>& meta) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw RuntimeError("cannot write " + tmp.string());
    os.write(kMagic, sizeof kMagic);
    put_u32(os, kCheckpointVersion);
    const std::string header = header_text(model.config(), meta);
    put_u32(os, static_cast<std::uint32_t>(header.size()));
    os.write(header.data(), static_cast<std::streamsize>(header.size()));

    std::uint32_t count = 0;
    for_each_param(model.params(), [&](const std::string&, std::span<const double>, ParamKind) { ++count; });
    put_u32(os, count);
    for_each_param(model.params(), [&](const std::string& name, std::span<const double> v, ParamKind) {
      put_u32(os, static_cast<std::uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      put_u64(os, v.size());
      os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    });
    if (!os) throw RuntimeError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw RuntimeError("cannot open " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw ValidationError(path.string() + " is not a checkpoint (bad magic)");
  }
  const auto version = get<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw ValidationError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::string header = get_string(is, get<std::uint32_t>(is));

  Checkpoint ck;
  ModelConfig c;
  std::istringstream hs(header);
  std::string line;
  while (std::getline(hs, line)) {
    if (line.empty()) continue;
    const auto sp = line.find(' ');
    if (sp == std::string::npos) throw ValidationError("checkpoint header line without value: " + line);
    const std::string key = line.substr(0, sp), value = line.substr(sp + 1);
    if (key == "num-layers") c.num_layers = to_count(key, value);
    else if (key == "hidden-size") c.hidden_size = to_count(key, value);
    else if (key == "num-attention-heads") c.num_heads = to_count(key, value);
    else if (key == "rotary-pct") c.rotary_pct = to_double(key, value);
    else if (key == "rotary-emb-base") c.rotary_base = to_double(key, value);
    else if (key == "max-position-embeddings") c.max_positions = to_count(key, value);
    else if (key == "vocab-size") c.vocab_size = to_count(key, value);
    else if (key == "no-weight-tying") c.weight_tying = value != "true";
    else if (key == "seed") c.seed = to_count(key, value);
    else ck.meta[key] = value;
  }
  c.validate();

  Params p = zeros_like(c);
  std::map<std::string, std::span<double>> slots;
  for_each_param(p, [&](const std::string& name, std::span<double> v, ParamKind) { slots.emplace(name, v); });
  const auto count = get<std::uint32_t>(is);
  if (count != slots.size()) {
    throw ValidationError("checkpoint has " + std::to_string(count) + " tensors, config implies " +
                          std::to_string(slots.size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = get_string(is, get<std::uint32_t>(is));
    const auto n = get<std::uint64_t>(is);
    const auto it = slots.find(name);
    if (it == slots.end()) throw ValidationError("checkpoint has unexpected tensor " + name);
    if (n != it->second.size()) {
      throw ValidationError("tensor " + name + " has " + std::to_string(n) + " values, expected " +
                            std::to_string(it->second.size()));
    }
    if (n > 0 && !is.read(reinterpret_cast<char*>(it->second.data()), static_cast<std::streamsize>(n * 8))) {
      throw ValidationError("checkpoint is truncated in tensor " + name);
    }
    slots.erase(it);
  }
  ck.model = LMModel(c, std::move(p));
  return ck;
}

}  // namespace neox::model
