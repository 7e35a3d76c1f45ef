// Small end-to-end walk through the library on a freshly simulated dataset.

#include <cstdio>

#include "seqloc/gt.hpp"
#include "seqloc/seqloc.hpp"

using namespace seqloc;

int main() {
  SimConfig cfg;
  cfg.experiences = 3;
  cfg.frames = 30;
  const auto sim = simulate(cfg, 7);
  const auto& ds = sim.dataset;

  const auto raw = seqslam(ds.experiences[1], ds.experiences[0], SeqSlamParams{});
  const auto cs = validate_matches(ds.experiences[1], ds.experiences[0], raw, 0.25);
  int validated = 0;
  for (const auto& e : cs.entries) validated += e.status == MatchStatus::Validated;
  std::printf("experience 1 -> 0: %d of %zu frames validated, edge cost %.3f\n", validated, cs.entries.size(),
              edge_cost(cs));

  // Pose between a validated pair using the renderer's dense ground-truth maps.
  for (const auto& e : cs.entries) {
    if (e.status != MatchStatus::Validated || e.query_frame < 10) continue;
    const auto src = sim.render(1, e.query_frame);
    const auto tgt = sim.render(0, e.ref_frame);
    const auto est = estimate_pose(src.gt_map, src.disparity, tgt.gt_map, tgt.disparity, ds.camera, PoseParams{});
    const auto [rot, trans] = pose_error(est.t_ts, gt_relative(ds, 0, e.ref_frame, 1, e.query_frame));
    std::printf("frames %d -> %d: %d inliers, rotation error %.3f deg, translation error %.3f m\n", e.query_frame,
                e.ref_frame, est.inlier_count, rot, trans);
    break;
  }
  return 0;
}
