#pragma once

// Ground-truth reader. Only evaluation code and test oracles include this header;
// a build with SEQLOC_NO_GT proves the self-supervised stages never need it.
#ifdef SEQLOC_NO_GT
#error "gt.hpp is unavailable in a SEQLOC_NO_GT build"
#endif

#include <filesystem>
#include <limits>
#include <vector>

#include "seqloc/simworld.hpp"

namespace seqloc {

/// Attaches camera-to-world poses and arc lengths from exp_<id>/gt.jsonl.
inline void load_ground_truth(Dataset& ds) {
  for (auto& e : ds.experiences) {
    const auto path = ds.experience_dir(e.id) / "gt.jsonl";
    const auto rows = detail::read_jsonl(path);
    if (rows.size() != e.frames.size())
      throw Error(Errc::CorruptDataset, path.string() + ": expected one pose per frame");
    for (std::size_t n = 0; n < rows.size(); ++n) {
      try {
        e.frames[n].gt_pose = transform_from_json(rows[n]);
        if (rows[n].contains("arc_length")) e.frames[n].gt_arc_length = rows[n].at("arc_length").get<double>();
      } catch (const Error& err) {
        throw Error(Errc::CorruptDataset, path.string() + ": " + err.what());
      } catch (const nlohmann::json::exception& err) {
        throw Error(Errc::CorruptDataset, path.string() + ": " + err.what());
      }
    }
  }
}

/// Ground-truth T_ts: maps points in the source camera frame into the target camera frame.
inline Transform gt_relative(const Dataset& ds, int exp_target, int frame_target, int exp_source, int frame_source) {
  const auto& t = ds.experience(exp_target).frames.at(frame_target).gt_pose;
  const auto& s = ds.experience(exp_source).frames.at(frame_source).gt_pose;
  if (!t || !s) throw Error(Errc::InvalidConfig, "ground truth not loaded");
  return compose(inverse(*t), *s);
}

/// Index of the reference frame nearest (in gt arc length) to each query frame.
inline std::vector<int> gt_alignment(const Experience& query, const Experience& ref) {
  std::vector<int> out;
  for (const auto& q : query.frames) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (const auto& r : ref.frames) {
      const double d = std::abs(*q.gt_arc_length - *r.gt_arc_length);
      if (d < best_d) {
        best_d = d;
        best = r.index;
      }
    }
    out.push_back(best);
  }
  return out;
}

}  // namespace seqloc
