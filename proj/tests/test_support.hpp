#pragma once

#include "multibarf/synthetic.hpp"
#include "multibarf/training.hpp"

namespace mbarf::testing {

inline RunConfig tiny_run_config(Schedule schedule = Schedule::kAlternating, long iterations = 40) {
  RunConfig cfg;
  cfg.encoding.position_bands = 2;
  cfg.encoding.direction_bands = 1;
  cfg.field.trunk_layers = 2;
  cfg.field.trunk_width = 16;
  cfg.field.skip_layer = 0;
  cfg.field.head_layers = 2;
  cfg.field.head_width = 8;
  cfg.sampling.samples_per_ray = 8;
  cfg.train.iterations = iterations;
  cfg.train.batch_pixels = 32;
  cfg.train.schedule = schedule;
  cfg.train.log_interval = 10;
  cfg.train.validation_interval = 0;
  cfg.train.seed = 17;
  cfg.finalize();
  return cfg;
}

inline SyntheticDataset tiny_dataset(int views = 8, int size = 8, std::uint64_t seed = 3) {
  DatasetOptions opt;
  opt.width = size;
  opt.height = size;
  return make_dataset(generate_scene("textured-shapes", 1), views, views, {5.0, 0.02}, seed, opt);
}

}  // namespace mbarf::testing
