#include "stepsteer/synthetic.hpp"

#include "stepsteer/random.hpp"

namespace stepsteer {

std::vector<LabeledSample> make_synthetic_samples(std::size_t n, std::uint64_t seed) {
  std::vector<LabeledSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, SeedStream::Synthetic, i));
    const long a = 2 + static_cast<long>(uniform_index(rng, 90));
    const long b = 2 + static_cast<long>(uniform_index(rng, 90));
    const std::size_t n_steps = 2 + uniform_index(rng, 4);
    const bool erroneous = uniform01(rng) < 0.5;
    const int first_error = erroneous ? static_cast<int>(uniform_index(rng, n_steps)) : -1;

    LabeledSample s;
    s.sample_id = "syn-" + std::to_string(i);
    s.first_error = first_error;
    s.problem = "A crate holds " + std::to_string(a) + " apples and another holds " +
                std::to_string(b) + ". Each apple is doubled " + std::to_string(n_steps - 1) +
                " times. How many apples are there?";
    long running = 0;
    for (std::size_t k = 0; k < n_steps; ++k) {
      const long expected = k == 0 ? a + b : running * 2;
      const long delta = static_cast<int>(k) == first_error ? 1 + static_cast<long>(uniform_index(rng, 9)) : 0;
      const long shown = expected + delta;
      if (k == 0) {
        s.steps.push_back("Adding the crates gives " + std::to_string(a) + " + " + std::to_string(b) +
                          " = " + std::to_string(shown) + ".");
      } else {
        s.steps.push_back("Doubling " + std::to_string(running) + " gives " + std::to_string(shown) + ".");
      }
      running = shown;
    }
    s.validate();
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace stepsteer
