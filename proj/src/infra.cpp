#include "neox/infra.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "neox/error.hpp"

namespace neox::infra {

ParallelLayout derive_layout(const ClusterTopology& topo, std::size_t tp, std::size_t pp) {
  if (topo.nodes == 0 || topo.gpus_per_node == 0) throw ValidationError("nodes and gpus per node must be >= 1");
  if (tp == 0 || pp == 0) throw ValidationError("tp and pp must be >= 1");
  const std::size_t group = tp * pp;
  const std::size_t total = topo.total_gpus();
  if (total % group != 0) {
    throw ValidationError("tp*pp = " + std::to_string(group) + " does not divide " + std::to_string(total) +
                          " GPUs (remainder " + std::to_string(total % group) + ")");
  }
  ParallelLayout l;
  l.tp = tp;
  l.pp = pp;
  l.dp = total / group;
  l.intra_node = group <= topo.gpus_per_node && topo.gpus_per_node % group == 0;
  return l;
}

AllReduceCount allreduce_count(std::size_t num_layers, ResidualMode mode) {
  if (num_layers == 0) throw ValidationError("num_layers must be >= 1");
  // Serial blocks reduce after attention and again after the MLP; parallel
  // blocks sum both branches locally and reduce once.
  const std::size_t per_layer = mode == ResidualMode::serial ? 2 : 1;
  return {per_layer * num_layers, per_layer * num_layers};
}

void validate_mix(const EnergyMix& mix) {
  if (mix.sources.empty()) throw ValidationError("energy mix has no sources");
  double sum = 0.0;
  for (const auto& s : mix.sources) {
    if (!(s.share >= 0.0) || !std::isfinite(s.share)) throw ValidationError("source " + s.name + ": bad share");
    if (!(s.intensity >= 0.0) || !std::isfinite(s.intensity)) {
      throw ValidationError("source " + s.name + ": intensity must be >= 0");
    }
    sum += s.share;
  }
  if (std::abs(sum - 1.0) > kShareTolerance) {
    throw ValidationError("energy shares sum to " + std::to_string(sum) + ", not 1");
  }
}

double mix_intensity(const EnergyMix& mix) {
  validate_mix(mix);
  double total = 0.0;
  for (const auto& s : mix.sources) total += s.share * s.intensity;
  return total;
}

double emissions(double mwh, double intensity) {
  if (!(mwh >= 0.0) || !(intensity >= 0.0)) throw ValidationError("energy and intensity must be >= 0");
  return mwh * intensity;
}

namespace {

double parse_number(const std::string& tok, std::size_t line, bool allow_percent) {
  std::string s = tok;
  double factor = 1.0;
  if (allow_percent && !s.empty() && s.back() == '%') {
    s.pop_back();
    factor = 0.01;
  }
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v * factor;
  } catch (const std::exception&) {
    throw ParseError("not a number: " + tok, line);
  }
}

}  // namespace

EnergyMix parse_mix(const std::string& text) {
  EnergyMix mix;
  std::istringstream in(text);
  std::string line;
  std::size_t ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::vector<std::string> toks;
    for (std::string t; ls >> t;) toks.push_back(t);
    if (toks.empty()) continue;
    if (toks.size() < 3) throw ParseError("expected `name share intensity`", ln);
    EnergySource s;
    for (std::size_t i = 0; i + 2 < toks.size(); ++i) s.name += (i ? " " : "") + toks[i];
    s.share = parse_number(toks[toks.size() - 2], ln, true);
    s.intensity = parse_number(toks.back(), ln, false);
    mix.sources.push_back(std::move(s));
  }
  validate_mix(mix);
  return mix;
}

EnergyMix load_mix(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw RuntimeError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_mix(ss.str());
}

ThroughputReport throughput_report(std::size_t gpu_count, double per_gpu_tflops, double step_tokens,
                                   double step_time_s) {
  if (gpu_count == 0 || !(per_gpu_tflops > 0.0) || !(step_tokens > 0.0) || !(step_time_s > 0.0)) {
    throw ValidationError("throughput inputs must be positive");
  }
  return {static_cast<double>(gpu_count) * per_gpu_tflops, step_tokens / step_time_s};
}

}  // namespace neox::infra
