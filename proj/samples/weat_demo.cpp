// Minimal WEAT run on a toy 2-d embedding space.
#include <iostream>

#include "fairlens/fairlens.hpp"

int main() {
  using namespace fairlens;
  WeatInputs in;
  in.a1 = {{1.0, 0.0}, {0.9, 0.1}};
  in.a2 = {{0.0, 1.0}, {0.1, 0.9}};
  in.w1 = {{1.0, 0.05}, {0.95, 0.0}};
  in.w2 = {{0.05, 1.0}, {0.0, 0.95}};

  const WeatResult r = weat(in, PermutationOptions{});
  std::cout << "effect size: " << r.effect_size << '\n';
  if (r.p_value) std::cout << "p-value:     " << *r.p_value << '\n';
}
