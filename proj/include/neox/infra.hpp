#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

// Back-of-envelope models for cluster layout, residual all-reduce counts,
// throughput and energy/carbon bookkeeping.
namespace neox::infra {

struct ClusterTopology {
  std::size_t nodes = 1;
  std::size_t gpus_per_node = 1;
  std::size_t total_gpus() const { return nodes * gpus_per_node; }
};

struct ParallelLayout {
  std::size_t tp = 1;
  std::size_t pp = 1;
  std::size_t dp = 1;
  // tp*pp groups fit inside, and tile, a single node.
  bool intra_node = true;
};

// Throws ValidationError when tp*pp does not divide the GPU count.
ParallelLayout derive_layout(const ClusterTopology& topo, std::size_t tp, std::size_t pp);

enum class ResidualMode { serial, parallel };

struct AllReduceCount {
  std::size_t forward = 0;
  std::size_t backward = 0;
};

// Tensor-parallel all-reduces at residual boundaries per pass.
AllReduceCount allreduce_count(std::size_t num_layers, ResidualMode mode);

struct EnergySource {
  std::string name;
  double share = 0.0;  // fraction of supply
  double intensity = 0.0;  // t CO2 per MWh
};

struct EnergyMix {
  std::vector<EnergySource> sources;
};

// Published grid mixes are rounded to 0.1%, so shares are accepted when they
// sum to 1 within this tolerance.
inline constexpr double kShareTolerance = 5e-3;

void validate_mix(const EnergyMix& mix);

// sum of share * intensity, in t CO2 per MWh.
double mix_intensity(const EnergyMix& mix);

// mwh * intensity. Negative inputs are rejected.
double emissions(double mwh, double intensity);

// Lines of `name share intensity`; the name may contain spaces, shares may be
// fractions or percentages ending in '%'. '#' starts a comment.
EnergyMix parse_mix(const std::string& text);
EnergyMix load_mix(const std::filesystem::path& path);

struct ThroughputReport {
  double aggregate_tflops = 0.0;
  double tokens_per_second = 0.0;
};

ThroughputReport throughput_report(std::size_t gpu_count, double per_gpu_tflops, double step_tokens,
                                   double step_time_s);

}  // namespace neox::infra
