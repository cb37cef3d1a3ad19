// Builds a planted model and walks the analysis chain in-process: patching
// localizes the copy head, PCA recovers the number direction, and steering
// with that direction flips the predicted verb number.

#include "circuit_lens/circuit_lens.hpp"

#include <iostream>

using namespace circuit_lens;

int main() {
  PlantedCircuitSpec spec;
  spec.noise_std = 0.02 * spec.write_scale;
  const PlantedModel pm = build_planted_model(spec);
  const auto& W = pm.weights;
  const auto& C = pm.config;

  const Dataset train = generate_dataset(pm.lexicon.english, 100, 1, Split::train);
  const Dataset test = generate_dataset(pm.lexicon.spanish, 100, 1, Split::test);

  const PatchGrid grid = compute_grid(W, C, train.pairs, PatchFamily::head_out_last_pos);
  const auto [layer, head] = argmax_cell(grid.values_delta);
  std::cout << "head patching argmax: L" << layer << "H" << head << " (planted L" << pm.oracle.copy_layer
            << "H" << pm.oracle.copy_head << ")\n";

  const Direction dir = fit_direction(collect_head_outputs(W, C, train.pairs, layer, head), "english/train");
  std::cout << "|cos(PC1, planted d)| = " << std::abs(cosine(dir.vector, pm.oracle.direction)) << "\n";

  const SteerReport r = steer_toward_opposite(W, C, test.pairs, dir, 12.0, layer, head);
  std::cout << "spanish test flip rate at alpha 12: " << r.flip_rate << " (singular " << r.sing.flip_rate
            << ", plural " << r.plur.flip_rate << ")\n";
  std::cout << "mean logit diff, singular subjects: " << r.sing.mean_pre_ld << " -> " << r.sing.mean_post_ld
            << "\n";
  std::cout << "mean logit diff, plural subjects:   " << r.plur.mean_pre_ld << " -> " << r.plur.mean_post_ld
            << "\n";
}
