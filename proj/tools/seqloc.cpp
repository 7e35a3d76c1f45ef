// seqloc command-line driver. Logs are JSON lines on stderr; artifacts go only to explicit paths.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "seqloc/seqloc.hpp"
#ifndef SEQLOC_NO_GT
#include "seqloc/gt.hpp"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace seqloc;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitStage = 3;

void log(const std::string& stage, const std::string& msg, json extra = json::object()) {
  extra["level"] = "info";
  extra["stage"] = stage;
  extra["msg"] = msg;
  std::cerr << extra.dump() << '\n';
}

/// Input errors map to exit 2, everything else a stage raises maps to 3.
int exit_code_for(Errc code) {
  switch (code) {
    case Errc::InvalidConfig:
    case Errc::CorruptDataset:
    case Errc::Io: return kExitUsage;
    default: return kExitStage;
  }
}

int report_error(const std::string& stage, const std::string& error, const std::string& message, int code) {
  std::cerr << json{{"level", "error"}, {"stage", stage}, {"error", error}, {"message", message}, {"exit_code", code}}.dump()
            << '\n';
  return code;
}

struct FrameRef {
  int exp = 0, frame = 0;
};

FrameRef parse_frame_ref(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos) throw Error(Errc::InvalidConfig, "frame reference must be <exp>:<frame>, got " + s);
  try {
    return {std::stoi(s.substr(0, colon)), std::stoi(s.substr(colon + 1))};
  } catch (const std::exception&) {
    throw Error(Errc::InvalidConfig, "frame reference must be <exp>:<frame>, got " + s);
  }
}

Dataset open_dataset(const fs::path& dir) {
  if (!fs::exists(dir)) throw Error(Errc::InvalidConfig, "dataset not found: " + dir.string());
  return load_dataset(dir);
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

void write_json(const json& j, const fs::path& path) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot open " + path.string());
  out << j.dump(2) << '\n';
}

/// Held-out pairs come from a second draw and exclude anything in the training list.
std::vector<ImagePair> held_out_pairs(const std::vector<CorrespondenceSet>& sets, const std::vector<ImagePair>& train,
                                      int n, std::uint64_t seed) {
  if (n <= 0) return {};
  auto drawn = sample_pairs(sets, n, derive_seed(seed, {0x68656c64ull}));
  std::vector<ImagePair> out;
  for (const auto& p : drawn)
    if (std::find(train.begin(), train.end(), p) == train.end()) out.push_back(p);
  return out;
}

#ifndef SEQLOC_NO_GT
struct EvalRow {
  double rot = 0, trans = 0;
  int inliers = 0;
};

std::vector<EvalRow> evaluate_pairs(const Dataset& ds, const std::vector<ImagePair>& pairs,
                                    const std::vector<PairOutcome>& outcomes) {
  std::vector<EvalRow> rows;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    const auto truth = gt_relative(ds, p.exp_b, p.frame_b, p.exp_a, p.frame_a);
    const auto [r, t] = pose_error(outcomes[i].t_ts, truth);
    rows.push_back({r, t, outcomes[i].estimate ? outcomes[i].estimate->inlier_count : 0});
  }
  return rows;
}

double quantile(std::vector<double> v, double q) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

json write_eval(const std::vector<EvalRow>& rows, const fs::path& path) {
  std::vector<std::vector<std::string>> out;
  std::vector<double> rot, trans, inl;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.push_back({std::to_string(i), csv::format(rows[i].rot), csv::format(rows[i].trans), std::to_string(rows[i].inliers)});
    rot.push_back(rows[i].rot);
    trans.push_back(rows[i].trans);
    inl.push_back(rows[i].inliers);
  }
  ensure_parent(path);
  csv::write(path, "pair,rot_err_deg,trans_err_m,inliers", out);
  json summary;
  for (const auto& [name, v] : {std::pair{"rot_err_deg", &rot}, {"trans_err_m", &trans}, {"inliers", &inl}}) {
    double mean = 0;
    for (double x : *v) mean += x;
    mean /= std::max<std::size_t>(1, v->size());
    summary[name] = {{"mean", mean}, {"p50", quantile(*v, 0.5)}, {"p90", quantile(*v, 0.9)}, {"max", quantile(*v, 1.0)}};
  }
  return summary;
}
#endif

/// Model-side inputs for pose/eval: a trained model, a random one, or the dataset's gt maps.
struct MapSource {
  std::string kind;  // "model", "random", "gt"
  DescriptorModel model;
};

MapSource open_maps(const std::string& which, const PipelineConfig& cfg) {
  if (which == "gt") return {"gt", {}};
  if (which == "random") return {"random", initial_model(cfg.train)};
  return {"model", read_model(which)};
}

PoseEstimate estimate_with(const MapSource& maps, const Dataset& ds, FrameRef s, FrameRef t, const PoseParams& pp,
                           const AssignmentParams& ap) {
  const auto& fs_ = ds.experience(s.exp).frames.at(static_cast<std::size_t>(s.frame));
  const auto& ft = ds.experience(t.exp).frames.at(static_cast<std::size_t>(t.frame));
  if (fs_.disparity.values.empty() || ft.disparity.values.empty())
    throw Error(Errc::CorruptDataset, "frames lack a disparity channel");
  if (maps.kind == "gt") {
    if (!ds.has_maps) throw Error(Errc::CorruptDataset, "dataset has no dense maps; simulate with --maps");
    return estimate_pose(read_slfm(ds.map_path(s.exp, s.frame)), fs_.disparity, read_slfm(ds.map_path(t.exp, t.frame)),
                         ft.disparity, ds.camera, pp);
  }
  return estimate_pose(forward(maps.model, fs_.left, ap), fs_.disparity, forward(maps.model, ft.left, ap), ft.disparity,
                       ds.camera, pp);
}

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string out_dir = ".";
};

PipelineConfig resolve_config(const Globals& g) {
  PipelineConfig cfg = g.config_path.empty() ? PipelineConfig{} : load_config(g.config_path);
  if (g.seed) {
    cfg.seed = *g.seed;
    cfg.train.seed = *g.seed;
    cfg.train.pose.seed = *g.seed;
  }
  if (g.threads) cfg.threads = *g.threads;
  cfg.validate();
  set_thread_limit(cfg.threads);
  return cfg;
}

fs::path under(const Globals& g, const std::string& path) {
  const fs::path p(path);
  return p.is_absolute() ? p : fs::path(g.out_dir) / p;
}

// ---------------------------------------------------------------------------
// Pipeline

int run_pipeline(const Globals& g, const PipelineConfig& cfg_in, const std::string& dataset_flag, bool simulate_flag) {
  PipelineConfig cfg = cfg_in;
  if (!dataset_flag.empty()) cfg.dataset = dataset_flag;
  const fs::path out(g.out_dir);
  fs::create_directories(out);
  const fs::path data_dir = cfg.dataset.empty() ? out / "dataset" : fs::path(cfg.dataset);
  const bool simulate = simulate_flag || cfg.simulate;
  std::string stage = "config";
  try {
    write_json(to_json(cfg), out / "config.json");
    if (simulate) {
      stage = "simulate";
      generate_dataset(cfg.sim, cfg.seed, data_dir);
      log(stage, "dataset written", {{"path", data_dir.string()}});
    } else if (!fs::exists(data_dir / "meta.json")) {
      return report_error("config", "InvalidConfig", "dataset not found: " + data_dir.string() + " (pass --simulate)",
                          kExitUsage);
    }
    stage = "load";
    // The self-supervised stages see no ground truth: the dataset is read back without it.
    const Dataset ds = load_dataset(data_dir);

    stage = "seqslam";
    ExperienceGraph graph;
    graph.k = cfg.assoc.k;
    {
      std::vector<const Experience*> ordered;
      for (const auto& e : ds.experiences) ordered.push_back(&e);
      for (const auto* e : ordered) graph.vertices.push_back(e->id);
      for (std::size_t i = 1; i < ordered.size(); ++i) {
        for (std::size_t j = i > static_cast<std::size_t>(cfg.assoc.k) ? i - cfg.assoc.k : 0; j < i; ++j) {
          const auto& q = *ordered[i];
          const auto& r = *ordered[j];
          stage = "seqslam";
          const auto raw = seqslam(q, r, cfg.seqslam);
          const auto tag = std::to_string(q.id) + "_" + std::to_string(r.id);
          write_raw_matches(raw, out / ("matches_raw_" + tag + ".csv"));
          stage = "validate";
          GraphEdge edge;
          edge.query = q.id;
          edge.ref = r.id;
          edge.matches = validate_matches(q, r, raw, cfg.assoc.e_sq, cfg.assoc.replace_window);
          edge.cost = edge_cost(edge.matches);
          edge.match_file = "matches_" + tag + ".csv";
          write_matches(edge.matches, out / edge.match_file);
          log(stage, "edge validated", {{"query", q.id}, {"ref", r.id}, {"cost", edge.cost}});
          graph.edges.push_back(std::move(edge));
        }
      }
    }
    stage = "graph";
    const auto counts = frame_counts(ds);
    write_graph(graph, out / "graph.json", counts);

    stage = "sample";
    const auto sets = correspondence_sets(graph, counts, cfg.sample.src, cfg.sample.dst, cfg.sample.max_gap);
    const auto pairs = sample_pairs(sets, cfg.sample.n, cfg.seed);
    write_pairs(pairs, out / "pairs.csv");
    const auto held = held_out_pairs(sets, pairs, cfg.sample.held_out, cfg.seed);
    write_pairs(held, out / "heldout_pairs.csv");
    log(stage, "pairs sampled", {{"train", pairs.size()}, {"held_out", held.size()}});

    stage = "train";
    const auto result = train(ds, pairs, cfg.train, {}, [&](const EpochStats& s) {
      log("train", "epoch", {{"epoch", s.epoch}, {"mean_loss", s.mean_loss}, {"mean_inliers", s.mean_inliers},
                             {"skipped", s.skipped}});
    });
    write_model(result.model, out / "model.bin");
    write_report(result.report, out / "report.csv");

#ifndef SEQLOC_NO_GT
    stage = "eval";
    if (!held.empty()) {
      Dataset gt_ds = ds;
      load_ground_truth(gt_ds);
      const FrameCache cache(gt_ds, held, cfg.train.k, cfg.train.assignment);
      json summary;
      for (const auto& [name, model] :
           {std::pair<std::string, DescriptorModel>{"untrained", initial_model(cfg.train)}, {"trained", result.model}}) {
        std::vector<PairOutcome> outcomes;
        evaluate(model, cache, held, gt_ds.camera, cfg.train.pose, derive_seed(cfg.seed, {0x6576616cull}), {}, &outcomes);
        summary[name] = write_eval(evaluate_pairs(gt_ds, held, outcomes), out / ("eval_" + name + ".csv"));
      }
      write_json(summary, out / "eval_summary.json");
      log(stage, "held-out evaluation", summary);
    }
#endif
    log("pipeline", "done", {{"out_dir", out.string()}});
    return kExitOk;
  } catch (const Error& e) {
    return report_error(stage, std::string(errc_name(e.code())), e.what(), exit_code_for(e.code()));
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"seqloc: sequence-based correspondences and EM feature refinement"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed_value = 0;
  int threads_value = 0;
  app.add_option("--config", g.config_path, "pipeline config JSON")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed_value, "seed for every stochastic stage");
  auto* threads_opt = app.add_option("--threads", threads_value, "worker cap (0 = all cores)")->check(CLI::NonNegativeNumber);
  app.add_option("--out-dir", g.out_dir, "directory for artifacts");

  // simulate
  auto* sim = app.add_subcommand("simulate", "generate a multi-experience dataset");
  std::string sim_out = "dataset";
  bool sim_maps = false;
  std::optional<int> sim_exps, sim_frames;
  sim->add_option("--out", sim_out, "dataset directory (relative paths land under --out-dir)");
  sim->add_flag("--maps", sim_maps, "also write dense ground-truth feature maps");
  sim->add_option("--experiences", sim_exps, "number of experiences");
  sim->add_option("--frames", sim_frames, "nominal frames per experience");

  // seqslam
  auto* ss = app.add_subcommand("seqslam", "sequence matching between two experiences");
  std::string ss_dataset, ss_out, ss_diff;
  int ss_query = 0, ss_ref = 0;
  ss->add_option("--dataset", ss_dataset)->required();
  ss->add_option("--query", ss_query)->required();
  ss->add_option("--ref", ss_ref)->required();
  ss->add_option("--out", ss_out)->required();
  ss->add_option("--diff-out", ss_diff);

  // validate
  auto* va = app.add_subcommand("validate", "VO validation of raw matches");
  std::string va_dataset, va_raw, va_out;
  int va_query = 0, va_ref = 0;
  std::optional<double> va_esq;
  va->add_option("--dataset", va_dataset)->required();
  va->add_option("--query", va_query)->required();
  va->add_option("--ref", va_ref)->required();
  va->add_option("--raw", va_raw)->required()->check(CLI::ExistingFile);
  va->add_option("--e-sq", va_esq);
  va->add_option("--out", va_out)->required();

  // graph
  auto* gr = app.add_subcommand("graph", "experience-association graph");
  std::string gr_dataset, gr_out;
  std::optional<int> gr_k;
  gr->add_option("--dataset", gr_dataset)->required();
  gr->add_option("--k", gr_k);
  gr->add_option("--out", gr_out)->required();

  // sample
  auto* sa = app.add_subcommand("sample", "sample image pairs from indirect correspondences");
  std::string sa_graph, sa_out;
  int sa_src = -1, sa_dst = -1;
  std::optional<int> sa_n, sa_gap;
  sa->add_option("--graph", sa_graph)->required()->check(CLI::ExistingFile);
  sa->add_option("--src", sa_src);
  sa->add_option("--dst", sa_dst);
  sa->add_option("--n", sa_n);
  sa->add_option("--max-gap", sa_gap, "experience pairs at most this far apart (0: all)");
  sa->add_option("--out", sa_out)->required();

  // detect
  auto* de = app.add_subcommand("detect", "grid keypoints from a dense map");
  std::string de_map, de_out;
  int de_cell = 16;
  de->add_option("--map", de_map)->required()->check(CLI::ExistingFile);
  de->add_option("--cell", de_cell);
  de->add_option("--out", de_out)->required();

  // pose
  auto* po = app.add_subcommand("pose", "relative pose between two frames");
  std::string po_dataset, po_src, po_tgt, po_maps = "gt", po_out;
  std::optional<double> po_tau, po_inlier_sq;
  std::optional<int> po_iters;
  po->add_option("--dataset", po_dataset)->required();
  po->add_option("--src", po_src, "<exp>:<frame>")->required();
  po->add_option("--tgt", po_tgt, "<exp>:<frame>")->required();
  po->add_option("--maps", po_maps, "gt, random or a model.bin path");
  po->add_option("--tau", po_tau);
  po->add_option("--ransac-iters", po_iters);
  po->add_option("--inlier-sq", po_inlier_sq);
  po->add_option("--out", po_out)->required();

  // train
  auto* tr = app.add_subcommand("train", "EM refinement of the descriptor model");
  std::string tr_dataset, tr_pairs, tr_model = "model.bin", tr_report = "report.csv";
  std::optional<int> tr_epochs;
  std::optional<double> tr_lr;
  tr->add_option("--dataset", tr_dataset)->required();
  tr->add_option("--pairs", tr_pairs)->required()->check(CLI::ExistingFile);
  tr->add_option("--epochs", tr_epochs);
  tr->add_option("--lr", tr_lr);
  tr->add_option("--model-out", tr_model);
  tr->add_option("--report", tr_report);

  // eval
  auto* ev = app.add_subcommand("eval", "pose error against ground truth");
  std::string ev_dataset, ev_model = "random", ev_pairs, ev_out = "eval.csv";
  ev->add_option("--dataset", ev_dataset)->required();
  ev->add_option("--model", ev_model, "model.bin path, random or gt");
  ev->add_option("--pairs", ev_pairs)->required()->check(CLI::ExistingFile);
  ev->add_option("--out", ev_out);

  // pipeline
  auto* pi = app.add_subcommand("pipeline", "simulate through eval with all artifacts under --out-dir");
  std::string pi_dataset;
  bool pi_simulate = false;
  pi->add_option("--dataset", pi_dataset);
  pi->add_flag("--simulate", pi_simulate, "generate the dataset first");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("usage", "UsageError", e.what(), kExitUsage);
  }
  if (*seed_opt) g.seed = seed_value;
  if (*threads_opt) g.threads = threads_value;

  std::string stage = "config";
  try {
    PipelineConfig cfg = resolve_config(g);

    if (*sim) {
      stage = "simulate";
      if (sim_exps) cfg.sim.experiences = *sim_exps;
      if (sim_frames) cfg.sim.frames = *sim_frames;
      cfg.sim.write_maps = cfg.sim.write_maps || sim_maps;
      const auto dir = under(g, sim_out);
      const auto s = generate_dataset(cfg.sim, cfg.seed, dir);
      log(stage, "dataset written", {{"path", dir.string()}, {"experiences", s.dataset.experiences.size()}});
    } else if (*ss) {
      stage = "seqslam";
      const auto ds = open_dataset(ss_dataset);
      DifferenceMatrix diff;
      const auto raw = seqslam(ds.experience(ss_query), ds.experience(ss_ref), cfg.seqslam, &diff);
      ensure_parent(under(g, ss_out));
      write_raw_matches(raw, under(g, ss_out));
      if (!ss_diff.empty()) write_difference_matrix(diff, under(g, ss_diff));
      log(stage, "raw matches written", {{"query", ss_query}, {"ref", ss_ref}, {"frames", raw.size()}});
    } else if (*va) {
      stage = "validate";
      const auto ds = open_dataset(va_dataset);
      const auto raw = read_raw_matches(va_raw);
      const auto cs = validate_matches(ds.experience(va_query), ds.experience(va_ref), raw, va_esq.value_or(cfg.assoc.e_sq),
                                       cfg.assoc.replace_window);
      ensure_parent(under(g, va_out));
      write_matches(cs, under(g, va_out));
      log(stage, "validated matches written", {{"cost", edge_cost(cs)}});
    } else if (*gr) {
      stage = "graph";
      const auto ds = open_dataset(gr_dataset);
      const auto graph = build_graph(ds, gr_k.value_or(cfg.assoc.k), cfg.assoc.e_sq, cfg.seqslam, cfg.assoc.replace_window);
      ensure_parent(under(g, gr_out));
      write_graph(graph, under(g, gr_out), frame_counts(ds));
      log(stage, "graph written", {{"edges", graph.edges.size()}});
    } else if (*sa) {
      stage = "sample";
      const auto [graph, counts] = read_graph(sa_graph);
      const auto sets = correspondence_sets(graph, counts, sa_src, sa_dst, sa_gap.value_or(cfg.sample.max_gap));
      const auto pairs = sample_pairs(sets, sa_n.value_or(cfg.sample.n), cfg.seed);
      ensure_parent(under(g, sa_out));
      write_pairs(pairs, under(g, sa_out));
      log(stage, "pairs written", {{"n", pairs.size()}});
    } else if (*de) {
      stage = "detect";
      const auto map = read_slfm(de_map);
      const auto kps = detect_keypoints(map, de_cell);
      std::vector<std::vector<std::string>> rows;
      for (const auto& k : kps) rows.push_back({csv::format(k.q.x()), csv::format(k.q.y()), csv::format(k.score)});
      ensure_parent(under(g, de_out));
      csv::write(under(g, de_out), "u,v,score", rows);
      log(stage, "keypoints written", {{"n", kps.size()}});
    } else if (*po) {
      stage = "pose";
      const auto ds = open_dataset(po_dataset);
      PoseParams pp = cfg.train.pose;
      if (po_tau) pp.tau = *po_tau;
      if (po_iters) pp.ransac_iters = *po_iters;
      if (po_inlier_sq) pp.inlier_sq = *po_inlier_sq;
      const auto maps = open_maps(po_maps, cfg);
      if (maps.kind == "gt") pp.cell = PoseParams{}.cell;
      const auto est = estimate_with(maps, ds, parse_frame_ref(po_src), parse_frame_ref(po_tgt), pp, cfg.train.assignment);
      auto j = to_json(est.t_ts);
      j["inlier_count"] = est.inlier_count;
      j["loss"] = est.loss;
      write_json(j, under(g, po_out));
      log(stage, "pose written", {{"inliers", est.inlier_count}, {"loss", est.loss}});
    } else if (*tr) {
      stage = "train";
      Dataset ds = open_dataset(tr_dataset);
      const auto pairs = read_pairs(tr_pairs);
      TrainConfig tc = cfg.train;
      if (tr_epochs) tc.epochs = *tr_epochs;
      if (tr_lr) tc.lr = *tr_lr;
      PairTruth truth;
#ifndef SEQLOC_NO_GT
      // Ground truth only fills the report's evaluation columns.
      bool have_gt = true;
      for (const auto& e : ds.experiences) have_gt = have_gt && fs::exists(ds.experience_dir(e.id) / "gt.jsonl");
      if (have_gt) {
        load_ground_truth(ds);
        truth = [&ds](const ImagePair& p) { return gt_relative(ds, p.exp_b, p.frame_b, p.exp_a, p.frame_a); };
      }
#endif
      const auto result = train(ds, pairs, tc, truth, [](const EpochStats& s) {
        log("train", "epoch", {{"epoch", s.epoch}, {"mean_loss", s.mean_loss}, {"mean_inliers", s.mean_inliers},
                               {"skipped", s.skipped}});
      });
      ensure_parent(under(g, tr_model));
      write_model(result.model, under(g, tr_model));
      ensure_parent(under(g, tr_report));
      write_report(result.report, under(g, tr_report));
    } else if (*ev) {
      stage = "eval";
#ifdef SEQLOC_NO_GT
      return report_error(stage, "Unavailable", "eval needs the ground-truth reader, which this build omits", kExitUsage);
#else
      Dataset ds = open_dataset(ev_dataset);
      load_ground_truth(ds);
      const auto pairs = read_pairs(ev_pairs);
      const auto maps = open_maps(ev_model, cfg);
      std::vector<PairOutcome> outcomes;
      if (maps.kind == "gt") {
        PoseParams pp = cfg.train.pose;
        pp.cell = PoseParams{}.cell;
        for (std::size_t i = 0; i < pairs.size(); ++i) {
          pp.seed = derive_seed(cfg.seed, {0, static_cast<std::uint64_t>(i)});
          PairOutcome o;
          try {
            auto est = estimate_with(maps, ds, {pairs[i].exp_a, pairs[i].frame_a}, {pairs[i].exp_b, pairs[i].frame_b}, pp,
                                     cfg.train.assignment);
            o.t_ts = est.t_ts;
            o.estimate = std::move(est);
          } catch (const Error& e) {
            if (e.code() != Errc::NoConsensus && e.code() != Errc::TooFewValidDepths &&
                e.code() != Errc::DegenerateGeometry)
              throw;
          }
          outcomes.push_back(std::move(o));
        }
      } else {
        const FrameCache cache(ds, pairs, maps.model.k(), cfg.train.assignment);
        evaluate(maps.model, cache, pairs, ds.camera, cfg.train.pose, cfg.seed, {}, &outcomes);
      }
      const auto summary = write_eval(evaluate_pairs(ds, pairs, outcomes), under(g, ev_out));
      log(stage, "evaluation written", summary);
#endif
    } else if (*pi) {
      return run_pipeline(g, cfg, pi_dataset, pi_simulate);
    }
    return kExitOk;
  } catch (const Error& e) {
    return report_error(stage, std::string(errc_name(e.code())), e.what(), exit_code_for(e.code()));
  } catch (const std::exception& e) {
    return report_error(stage, "Internal", e.what(), kExitStage);
  }
}
