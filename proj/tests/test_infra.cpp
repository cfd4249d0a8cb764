#include <cmath>

#include "doctest.h"
#include "neox/error.hpp"
#include "neox/infra.hpp"

using namespace neox;
using namespace neox::infra;

TEST_CASE("layout derivation") {
  const auto l = derive_layout({12, 8}, 2, 4);
  CHECK(l.dp == 12);
  CHECK(l.intra_node);
  const auto flat = derive_layout({12, 8}, 1, 1);
  CHECK(flat.dp == 96);
  CHECK(flat.intra_node);
  const auto odd = derive_layout({12, 8}, 3, 1);
  CHECK(odd.dp == 32);
  CHECK(!odd.intra_node);
  const auto wide = derive_layout({12, 8}, 4, 4);
  CHECK(!wide.intra_node);
  CHECK_THROWS_AS(derive_layout({12, 8}, 5, 1), ValidationError);
  for (std::size_t tp = 1; tp <= 8; ++tp)
    for (std::size_t pp = 1; pp <= 8; ++pp) {
      if (96 % (tp * pp) != 0) continue;
      const auto x = derive_layout({12, 8}, tp, pp);
      CHECK(x.tp * x.pp * x.dp == 96);
    }
}

TEST_CASE("all-reduce counts") {
  const auto s = allreduce_count(44, ResidualMode::serial);
  const auto p = allreduce_count(44, ResidualMode::parallel);
  CHECK(s.forward == 88);
  CHECK(s.backward == 88);
  CHECK(p.forward == 44);
  CHECK(p.backward == 44);
  for (std::size_t L = 1; L <= 64; ++L) {
    CHECK(2 * allreduce_count(L, ResidualMode::parallel).forward == allreduce_count(L, ResidualMode::serial).forward);
  }
  CHECK_THROWS_AS(allreduce_count(0, ResidualMode::serial), ValidationError);
}

TEST_CASE("energy mix") {
  const auto mix = load_mix(NEOX_FIXTURES "/grid_mix.txt");
  REQUIRE(mix.sources.size() == 7);
  CHECK(mix.sources[6].name == "Other Renewables");
  CHECK(mix.sources[0].share == doctest::Approx(0.304));
  const double i = mix_intensity(mix);
  CHECK(std::abs(i - 0.47905) < 5e-5);
  CHECK(std::abs(emissions(66.24, 0.47905) - 31.73) < 0.01);
  CHECK(std::abs(emissions(43.92, 0.47905) - 21.04) < 0.01);
  CHECK(emissions(0.0, 0.47905) == 0.0);
  CHECK_THROWS_AS(emissions(-1.0, 0.5), ValidationError);
  CHECK(emissions(10.0 + 5.0, 0.3) == doctest::Approx(emissions(10.0, 0.3) + emissions(5.0, 0.3)));

  EnergyMix green{{{"Wind", 0.6, 0.0}, {"Solar", 0.4, 0.0}}};
  CHECK(mix_intensity(green) == 0.0);
  EnergyMix two{{{"A", 0.25, 0.8}, {"B", 0.75, 0.2}}};
  CHECK(mix_intensity(two) == doctest::Approx(0.25 * 0.8 + 0.75 * 0.2));
  EnergyMix scaled = two;
  for (auto& s : scaled.sources) s.intensity *= 3.0;
  CHECK(mix_intensity(scaled) == doctest::Approx(3.0 * mix_intensity(two)));
  EnergyMix bad{{{"A", 0.5, 0.8}}};
  CHECK_THROWS_AS(mix_intensity(bad), ValidationError);
  CHECK_THROWS_AS(parse_mix("Coal 0.5\n"), ParseError);
  CHECK_THROWS_AS(parse_mix("Coal abc 0.5\n"), ParseError);
}

TEST_CASE("throughput") {
  const auto r = throughput_report(96, 117.0, 3149824.0, 10.0);
  CHECK(r.aggregate_tflops == 11232.0);
  CHECK(r.tokens_per_second == doctest::Approx(314982.4));
  CHECK(throughput_report(1, 1.0, 1.0, 1.0).aggregate_tflops == 1.0);
  CHECK_THROWS_AS(throughput_report(0, 1.0, 1.0, 1.0), ValidationError);
}
