// Writes a full-size synthetic CIFAR-10 binary tree for smoke runs.

#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "fedcon/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate synthetic CIFAR-10 format batches"};
  std::string out;
  std::uint64_t seed = 0;
  app.add_option("--out", out, "Root directory")->required();
  app.add_option("--seed", seed, "Generator seed");
  CLI11_PARSE(app, argc, argv);
  try {
    const auto dir = fedcon::write_synthetic_cifar(out, seed);
    std::printf("wrote %s\n", dir.string().c_str());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "synth_cifar: error [io]: %s\n", e.what());
    return 5;
  }
  return 0;
}
