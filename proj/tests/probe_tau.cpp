// Scratch probe: fit one orientation with a restricted tau grid.
#include <cstdio>
#include <cstdlib>
#include <cstring>

#include "lsir/data.hpp"
#include "lsir/lsir.hpp"

using namespace lsir;

int main(int argc, char** argv) {
  // args: seed n fwd|bwd tau...
  const int s = argc > 1 ? std::atoi(argv[1]) : 0;
  const Index n = argc > 2 ? std::atoi(argv[2]) : 300;
  const bool forward = argc > 3 && std::strcmp(argv[3], "fwd") == 0;

  SynthSpec spec;
  spec.n = n;
  spec.seed = static_cast<std::uint64_t>(s);
  SamplePairs pairs = generate(spec);
  if (!forward) pairs = swapped(pairs);

  LsirConfig config;
  if (argc > 4) {
    config.tau_multipliers.clear();
    for (int i = 4; i < argc; ++i)
      config.tau_multipliers.push_back(std::atof(argv[i]));
  }

  const LsirFit fit = fit_lsir(pairs, config, RngStream(1000 + s).child(0));
  const int w = fit.trace.restart_index;
  std::printf("seed %2d %s tau %.2f gamma %g iters %3d  pool:", s,
              forward ? "fwd" : "bwd", fit.trace.tau, fit.trace.gamma,
              fit.trace.iterations);
  for (const double v : fit.trace.restart_smis) std::printf(" %8.5f", v);
  std::printf("  own:");
  for (const auto& m : fit.restart_measurements)
    std::printf(" %8.5f", m.smi.value);
  std::printf("  w=r%d pool %7.4f own %7.4f\n", w, fit.trace.final_smi,
              fit.restart_measurements[static_cast<std::size_t>(w)].smi.value);
  return 0;
}
