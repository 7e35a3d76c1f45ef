#pragma once

// Pipeline configuration: one JSON document, every key optional, unknown keys rejected.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "seqloc/assoc.hpp"
#include "seqloc/emtrain.hpp"
#include "seqloc/error.hpp"
#include "seqloc/geometry.hpp"
#include "seqloc/placerec.hpp"
#include "seqloc/pose.hpp"
#include "seqloc/simworld.hpp"

namespace seqloc {

struct SampleParams {
  int n = 200;         // training pairs
  int held_out = 100;  // evaluation pairs, drawn with a different seed
  int src = -1;        // -1: every experience pair
  int dst = -1;
  int max_gap = 1;     // experience pairs at most this far apart in collection order; 0: all

  void validate() const {
    if (max_gap < 0) throw Error(Errc::InvalidConfig, "sample.max_gap must be >= 0");
    if (n < 1 || held_out < 0) throw Error(Errc::InvalidConfig, "sample.n must be >= 1 and sample.held_out >= 0");
    if ((src < 0) != (dst < 0)) throw Error(Errc::InvalidConfig, "sample.src and sample.dst must be set together");
  }
};

struct PipelineConfig {
  std::uint64_t seed = 42;
  int threads = 0;  // 0: hardware concurrency
  std::string dataset;  // empty: simulate into <out_dir>/dataset
  bool simulate = true;
  SimConfig sim{};
  SeqSlamParams seqslam{};
  AssocParams assoc{};
  SampleParams sample{};
  TrainConfig train{};

  void validate() const {
    if (threads < 0) throw Error(Errc::InvalidConfig, "threads must be >= 0");
    if (!simulate && dataset.empty()) throw Error(Errc::InvalidConfig, "dataset path required when simulate is false");
    sim.validate();
    if (seqslam.down_w < 1 || seqslam.down_h < 1 || seqslam.patch_size < 1 || seqslam.seq_len < 3 ||
        seqslam.seq_len % 2 == 0 || !(seqslam.v_min > 0) || seqslam.v_max < seqslam.v_min || seqslam.v_steps < 1 ||
        seqslam.window_r < 0)
      throw Error(Errc::InvalidConfig, "seqslam parameters out of range");
    if (!(assoc.e_sq > 0) || assoc.replace_window < 0 || assoc.k < 1)
      throw Error(Errc::InvalidConfig, "assoc parameters out of range");
    sample.validate();
    train.validate();
  }
};

namespace detail {

/// Reads known keys from one JSON object and rejects the rest.
class StrictObject {
 public:
  StrictObject(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw Error(Errc::InvalidConfig, where() + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw Error(Errc::InvalidConfig, where() + "." + key + " has the wrong type");
    }
  }

  StrictObject child(const char* key) {
    seen_.insert(key);
    static const nlohmann::json empty = nlohmann::json::object();
    const auto it = j_.find(key);
    return StrictObject(it == j_.end() ? empty : *it, path_ + "." + key);
  }

  bool has(const char* key) const { return j_.contains(key); }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw Error(Errc::InvalidConfig, "unknown config key " + path_ + "." + key);
  }

 private:
  std::string where() const { return path_; }
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline PipelineConfig config_from_json(const nlohmann::json& j) {
  PipelineConfig c;
  detail::StrictObject root(j, "config");
  root.get("seed", c.seed);
  root.get("threads", c.threads);
  root.get("dataset", c.dataset);
  root.get("simulate", c.simulate);

  auto sim = root.child("sim");
  sim.get("experiences", c.sim.experiences);
  sim.get("frames", c.sim.frames);
  sim.get("frame_jitter", c.sim.frame_jitter);
  sim.get("step_m", c.sim.step_m);
  sim.get("appearance_start", c.sim.appearance_start);
  sim.get("appearance_step", c.sim.appearance_step);
  sim.get("drift", c.sim.drift);
  sim.get("lateral_offset_m", c.sim.lateral_offset_m);
  sim.get("yaw_jitter_deg", c.sim.yaw_jitter_deg);
  sim.get("landmarks", c.sim.landmarks);
  sim.get("descriptor_dim", c.sim.descriptor_dim);
  sim.get("landmark_radius_m", c.sim.landmark_radius_m);
  sim.get("pixel_noise", c.sim.pixel_noise);
  sim.get("z_min", c.sim.z_min);
  sim.get("pair_radius_m", c.sim.pair_radius_m);
  sim.get("write_maps", c.sim.write_maps);
  auto cam = sim.child("camera");
  cam.get("fu", c.sim.camera.fu);
  cam.get("fv", c.sim.camera.fv);
  cam.get("cu", c.sim.camera.cu);
  cam.get("cv", c.sim.camera.cv);
  cam.get("b", c.sim.camera.baseline);
  cam.get("width", c.sim.camera.width);
  cam.get("height", c.sim.camera.height);
  cam.finish();
  sim.finish();

  auto ss = root.child("seqslam");
  ss.get("down_w", c.seqslam.down_w);
  ss.get("down_h", c.seqslam.down_h);
  ss.get("patch_size", c.seqslam.patch_size);
  ss.get("seq_len", c.seqslam.seq_len);
  ss.get("v_min", c.seqslam.v_min);
  ss.get("v_max", c.seqslam.v_max);
  ss.get("v_steps", c.seqslam.v_steps);
  ss.get("window_r", c.seqslam.window_r);
  ss.get("contrast_enhance", c.seqslam.contrast_enhance);
  ss.finish();

  auto as = root.child("assoc");
  as.get("e_sq", c.assoc.e_sq);
  as.get("replace_window", c.assoc.replace_window);
  as.get("k", c.assoc.k);
  as.finish();

  auto sp = root.child("sample");
  sp.get("n", c.sample.n);
  sp.get("held_out", c.sample.held_out);
  sp.get("src", c.sample.src);
  sp.get("dst", c.sample.dst);
  sp.get("max_gap", c.sample.max_gap);
  sp.finish();

  auto ps = root.child("pose");
  auto& pose = c.train.pose;
  ps.get("cell", pose.cell);
  ps.get("tau", pose.tau);
  ps.get("stride", pose.stride);
  ps.get("ransac_iters", pose.ransac_iters);
  ps.get("inlier_sq", pose.inlier_sq);
  ps.get("d_min", pose.d_min);
  ps.get("min_inliers", pose.min_inliers);
  ps.finish();

  auto tr = root.child("train");
  tr.get("k", c.train.k);
  tr.get("dim", c.train.dim);
  tr.get("epochs", c.train.epochs);
  tr.get("lr", c.train.lr);
  tr.get("steps", c.train.steps);
  tr.get("batch_size", c.train.batch_size);
  auto asg = tr.child("assignment");
  asg.get("patch_radius", c.train.assignment.patch_radius);
  asg.get("dilation", c.train.assignment.dilation);
  asg.get("top_m", c.train.assignment.top_m);
  asg.get("sharpness", c.train.assignment.sharpness);
  asg.get("detect_gain", c.train.assignment.detect_gain);
  asg.get("codebook_seed", c.train.assignment.codebook_seed);
  asg.finish();
  tr.finish();

  root.finish();
  c.train.seed = c.seed;
  c.train.pose.seed = c.seed;
  c.validate();
  return c;
}

inline nlohmann::json to_json(const PipelineConfig& c) {
  const auto& p = c.train.pose;
  const auto& a = c.train.assignment;
  return {{"seed", c.seed},
          {"threads", c.threads},
          {"dataset", c.dataset},
          {"simulate", c.simulate},
          {"sim", to_json(c.sim)},
          {"seqslam",
           {{"down_w", c.seqslam.down_w},
            {"down_h", c.seqslam.down_h},
            {"patch_size", c.seqslam.patch_size},
            {"seq_len", c.seqslam.seq_len},
            {"v_min", c.seqslam.v_min},
            {"v_max", c.seqslam.v_max},
            {"v_steps", c.seqslam.v_steps},
            {"window_r", c.seqslam.window_r},
            {"contrast_enhance", c.seqslam.contrast_enhance}}},
          {"assoc", {{"e_sq", c.assoc.e_sq}, {"replace_window", c.assoc.replace_window}, {"k", c.assoc.k}}},
          {"sample", {{"n", c.sample.n}, {"held_out", c.sample.held_out}, {"src", c.sample.src}, {"dst", c.sample.dst}, {"max_gap", c.sample.max_gap}}},
          {"pose",
           {{"cell", p.cell},
            {"tau", p.tau},
            {"stride", p.stride},
            {"ransac_iters", p.ransac_iters},
            {"inlier_sq", p.inlier_sq},
            {"d_min", p.d_min},
            {"min_inliers", p.min_inliers}}},
          {"train",
           {{"k", c.train.k},
            {"dim", c.train.dim},
            {"epochs", c.train.epochs},
            {"lr", c.train.lr},
            {"steps", c.train.steps},
            {"batch_size", c.train.batch_size},
            {"assignment",
             {{"patch_radius", a.patch_radius},
              {"dilation", a.dilation},
              {"top_m", a.top_m},
              {"sharpness", a.sharpness},
              {"detect_gain", a.detect_gain},
              {"codebook_seed", a.codebook_seed}}}}}};
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::InvalidConfig, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidConfig, "config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

}  // namespace seqloc
