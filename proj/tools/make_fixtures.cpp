// Recomputes the pattern-library constants stored in tests/fixtures.
//   make_fixtures <out.json>

#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

#include "tdit/evalsuite.hpp"

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: %s <out.json>\n", argv[0]);
    return 1;
  }
  const tdit::CorpusConfig cfg;
  const std::size_t render_samples = 2000, chance_trials = 100;
  const std::uint64_t seed = 2024;
  nlohmann::json j = {
      {"version", 1},
      {"corpus", tdit::to_json(cfg)},
      {"seed", seed},
      {"render_samples", render_samples},
      {"chance_trials", chance_trials},
      {"min_pairwise_distance", tdit::PatternLibrary(cfg.num_patterns, cfg.grid).min_pairwise_distance()},
      {"smoothness", tdit::measure_smoothness(cfg, render_samples, seed)},
      {"min_cut_change", tdit::measure_min_cut_change(cfg, render_samples, seed)},
      {"chance_level", tdit::measure_chance_level(cfg, chance_trials, seed)},
  };
  std::ofstream out(argv[1]);
  if (!out) {
    std::fprintf(stderr, "cannot write %s\n", argv[1]);
    return 2;
  }
  out << j.dump(2) << '\n';
  std::printf("%s\n", j.dump(2).c_str());
  return 0;
}
