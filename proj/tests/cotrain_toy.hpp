#pragma once

#include <vector>

#include "coopir/cotrain.hpp"
#include "coopir/planner.hpp"

namespace testing {

// The single-combo co-training toy: rain+noise inputs through the fixed plan
// [denoise_mid, derain] on the default registry.
struct CotrainToy {
  std::vector<coopir::cotrain::TrainSample> train;
  std::vector<coopir::cotrain::TrainSample> held;
  std::vector<coopir::Image> clean;  // misuse evaluation set
};

inline CotrainToy make_cotrain_toy(const coopir::tools::ToolRegistry& reg, int samples = 50, int held = 3,
                                   int clean_images = 20) {
  using namespace coopir;
  planner::PlannerTask task;
  task.registry = "default";
  task.image_size = 64;
  const std::vector<KindSet> combo = {KindSet{DegradationKind::rain, DegradationKind::noise}};
  const search::Plan plan = {reg.id_of("denoise_mid"), reg.id_of("derain")};
  CotrainToy toy;
  for (int i = 0; i < samples + held; ++i) {
    const auto pr = planner::make_prompt(task, combo, derive_seed(0xc0ffee, static_cast<std::uint64_t>(i)));
    (i < samples ? toy.train : toy.held).push_back({pr.lq, pr.clean, plan});
  }
  for (int i = 0; i < clean_images; ++i) {
    Prng rng(derive_seed(0x5eed, static_cast<std::uint64_t>(i)));
    toy.clean.push_back(degrade::gen_clean(degrade::CleanKind::value_noise_texture, 64, rng));
  }
  return toy;
}

inline double held_psnr(const coopir::tools::ToolRegistry& reg, const std::vector<coopir::cotrain::TrainSample>& held) {
  double s = 0.0;
  for (const auto& h : held) s += coopir::psnr(coopir::search::execute_plan(reg, h.plan, h.lq), h.gt);
  return s / static_cast<double>(held.size());
}

}  // namespace testing
