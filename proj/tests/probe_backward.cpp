// Scratch probe: per-restart SMI spread of one orientation's fit.
#include <cstdio>
#include <cstdlib>
#include <cstring>

#include "lsir/data.hpp"
#include "lsir/lsir.hpp"

using namespace lsir;

int main(int argc, char** argv) {
  const int seeds = argc > 1 ? std::atoi(argv[1]) : 8;
  const Index n = argc > 2 ? std::atoi(argv[2]) : 300;
  const int first = argc > 3 ? std::atoi(argv[3]) : 0;
  const bool forward = argc > 4 && std::strcmp(argv[4], "fwd") == 0;

  for (int s = first; s < seeds; ++s) {
    SynthSpec spec;
    spec.n = n;
    spec.seed = static_cast<std::uint64_t>(s);
    SamplePairs pairs = generate(spec);
    if (!forward) pairs = swapped(pairs);

    LsirConfig config;
    // Mirror run_orientation's stream layout: fit from child(0) of the
    // orientation's rng, which infer_direction derives as the same stream
    // for both orientations.
    const LsirFit fit = fit_lsir(pairs, config, RngStream(1000 + s).child(0));
    const int w = fit.trace.restart_index;
    std::printf("seed %2d  iters %3d  pool:", s, fit.trace.iterations);
    for (const double v : fit.trace.restart_smis) std::printf(" %8.5f", v);
    std::printf("  own:");
    for (const auto& m : fit.restart_measurements)
      std::printf(" %8.5f", m.smi.value);
    std::printf("  w=r%d pool %7.4f own %7.4f\n", w, fit.trace.final_smi,
                fit.restart_measurements[static_cast<std::size_t>(w)]
                    .smi.value);
    std::fflush(stdout);
  }
  return 0;
}