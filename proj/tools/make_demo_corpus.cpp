// Writes a small simulated corpus (schema, annotations, profiles, text
// embeddings and texts) for trying out the demoe command line.

#include "demoe/simulate.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv)
{
  CLI::App app{"Write a simulated demo corpus"};
  std::string out;
  std::uint64_t seed = 7;
  demoe::SimulationSpec spec = demoe::signal_and_noise_spec(seed);
  app.add_option("--out", out, "output directory")->required();
  app.add_option("--seed", seed, "simulation seed");
  app.add_option("--instances", spec.instances, "number of instances");
  app.add_option("--annotators", spec.annotators, "number of annotators");
  app.add_option("--per-instance", spec.per_instance, "annotations per instance");
  app.add_option("--noise", spec.noise, "rating noise SD");
  app.add_option("--undisclosed-rate", spec.undisclosed_rate, "probability a profile field is undisclosed");
  CLI11_PARSE(app, argc, argv);
  spec.seed = seed;

  try {
    const auto sim = demoe::simulate_corpus(spec);
    demoe::write_simulated_corpus(sim, out);
    std::cout << "wrote " << sim.corpus.records.size() << " annotations to " << out << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
