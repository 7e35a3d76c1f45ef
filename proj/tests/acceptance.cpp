// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numbers>
#include <string>
#include <vector>

#include "seqloc/gt.hpp"
#include "seqloc/seqloc.hpp"
#include "support.hpp"

using namespace seqloc;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

int run(const std::string& binary, const std::string& args, const fs::path& log) {
  const std::string cmd = binary + " " + args + " >" + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

const char* kSmallConfig = R"({
  "sim": {"experiences": 3, "frames": 24, "frame_jitter": 1},
  "seqslam": {"seq_len": 7},
  "sample": {"n": 16, "held_out": 8},
  "train": {"epochs": 2}
})";

// ---------------------------------------------------------------------------

Verdict geometry() {
  const StereoCamera cam;
  auto rng = make_rng(1);
  double worst_rt = 0;
  for (int i = 0; i < 10000; ++i) {
    const Vec3 p(uniform(rng, -5, 5), uniform(rng, -4, 4), uniform(rng, 0.2, 50));
    worst_rt = std::max(worst_rt, (backproject(cam, project(cam, p)) - p).cwiseAbs().maxCoeff());
  }
  double worst_r = 0, worst_t = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto truth = Transform::from_axis_angle(Vec3(gaussian(rng), gaussian(rng), gaussian(rng)),
                                                  Vec3(gaussian(rng), gaussian(rng), gaussian(rng)));
    std::vector<Vec3> s, t;
    std::vector<double> w;
    for (int k = 0; k < 3 + i % 30; ++k) {
      s.emplace_back(uniform(rng, -2, 2), uniform(rng, -2, 2), uniform(rng, 1, 10));
      t.push_back(apply(truth, s.back()));
      w.push_back(uniform(rng, 0.1, 1));
    }
    const auto est = weighted_alignment(s, t, w);
    worst_r = std::max(worst_r, rotation_angle(est.rotation.transpose() * truth.rotation));
    worst_t = std::max(worst_t, (est.translation - truth.translation).norm());
  }
  return {worst_rt < 1e-9 && worst_r < 1e-9 && worst_t < 1e-9,
          fmt("round-trip max err %.2e over 1e4 points; alignment max rot err %.2e rad, trans err %.2e m over 1000 "
              "instances",
              worst_rt, worst_r, worst_t)};
}

Verdict gradient() {
  double worst = 0;
  const int n = 25;
  for (int i = 0; i < n; ++i) worst = std::max(worst, fixtures::gradient_relative_error(*fixtures::make_gradient_instance(i)));
  return {worst < 1e-4, fmt("max relative L2 error %.2e over %d random instances", worst, n)};
}

Verdict sequence_matching(const Dataset& ds, const fs::path& out) {
  int raw_ok = 0, raw_n = 0, val_ok = 0, val_n = 0;
  double raw_min = 1;
  for (std::size_t i = 1; i < ds.experiences.size(); ++i) {
    const auto& q = ds.experiences[i];
    const auto& r = ds.experiences[i - 1];
    const auto gt = gt_alignment(q, r);
    const auto tag = std::to_string(q.id) + "_" + std::to_string(r.id);
    const auto raw = read_raw_matches(out / ("matches_raw_" + tag + ".csv"));
    int ok = 0;
    for (std::size_t f = 0; f < raw.size(); ++f) ok += std::abs(raw[f].ref_frame - gt[f]) <= 2;
    raw_ok += ok;
    raw_n += static_cast<int>(raw.size());
    raw_min = std::min(raw_min, ok / static_cast<double>(raw.size()));
    const auto cs = read_matches(out / ("matches_" + tag + ".csv"), q.id, r.id, r.size());
    for (const auto& e : cs.entries) {
      ++val_n;
      val_ok += e.status != MatchStatus::Rejected && std::abs(e.ref_frame - gt[static_cast<std::size_t>(e.query_frame)]) <= 1;
    }
  }
  const double raw_frac = raw_ok / static_cast<double>(raw_n), val_frac = val_ok / static_cast<double>(val_n);
  return {raw_frac >= 0.95 && val_frac >= 0.98,
          fmt("raw within +/-2: %.1f%% (worst pair %.1f%%); validated non-rejected and within +/-1: %.1f%% of %d query frames", 100 * raw_frac,
              100 * raw_min, 100 * val_frac, val_n)};
}

void enumerate(const ExperienceGraph& g, std::vector<int>& path, int dst, std::vector<std::vector<int>>& out) {
  if (path.back() == dst) {
    out.push_back(path);
    return;
  }
  for (int v : g.vertices) {
    if (std::find(path.begin(), path.end(), v) != path.end() || !g.find_edge(path.back(), v)) continue;
    path.push_back(v);
    enumerate(g, path, dst, out);
    path.pop_back();
  }
}

Verdict graph_search() {
  auto rng = make_rng(4);
  int agree = 0, cases = 0;
  while (cases < 200) {
    ExperienceGraph g;
    const int n = 2 + static_cast<int>(rng() % 7);
    for (int v = 0; v < n; ++v) g.vertices.push_back(v);
    for (int a = 1; a < n; ++a)
      for (int b = 0; b < a; ++b)
        if (uniform(rng, 0, 1) < 0.5) g.edges.push_back({a, b, std::round(uniform(rng, 0, 1) * 10) / 10, {}, {}});
    const int src = static_cast<int>(rng() % n), dst = static_cast<int>(rng() % n);
    std::vector<std::vector<int>> all;
    std::vector<int> start{src};
    enumerate(g, start, dst, all);
    if (all.empty()) continue;
    ++cases;
    auto best = all.front();
    for (const auto& p : all) {
      const double cp = path_cost(g, p), cb = path_cost(g, best);
      if (cp < cb - 1e-9 || (std::abs(cp - cb) <= 1e-9 && (p.size() < best.size() || (p.size() == best.size() && p < best))))
        best = p;
    }
    const auto got = min_cost_path(g, src, dst);
    agree += got == best && std::abs(path_cost(g, got) - path_cost(g, best)) <= 1e-12;
  }
  return {agree == cases, fmt("%d of %d random graphs (<= 8 vertices) match brute force", agree, cases)};
}

Verdict pair_quality(const Dataset& ds, const fs::path& out, double radius) {
  const auto [g, counts] = read_graph(out / "graph.json");
  const int src = g.vertices.back(), dst = g.vertices.front();
  const auto path = min_cost_path(g, src, dst);
  const auto pairs = sample_pairs(correspondence_sets(g, counts, src, dst), 1000, 42);
  int ok = 0;
  for (const auto& p : pairs) {
    const double a = *ds.experience(p.exp_a).frames.at(static_cast<std::size_t>(p.frame_a)).gt_arc_length;
    const double b = *ds.experience(p.exp_b).frames.at(static_cast<std::size_t>(p.frame_b)).gt_arc_length;
    ok += std::abs(a - b) <= radius;
  }
  std::string hops;
  for (int v : path) hops += (hops.empty() ? "" : "-") + std::to_string(v);
  return {ok >= 900 && path.size() > 2,
          fmt("%d of 1000 pairs %d->%d within %.1f m arc length (path %s)", ok, src, dst, radius, hops.c_str())};
}

Verdict ransac_robustness() {
  auto rng = make_rng(6);
  const auto truth = Transform::from_axis_angle({0.05, -0.2, 0.03}, {0.4, -0.1, 0.6});
  std::vector<MatchedPair> pairs;
  std::vector<bool> label;
  for (int i = 0; i < 50; ++i) {
    MatchedPair p;
    p.p_s = Vec3(uniform(rng, -3, 3), uniform(rng, -2, 2), uniform(rng, 2, 12));
    const bool inlier = i % 10 >= 3;
    p.p_t = inlier ? apply(truth, p.p_s) + Vec3(gaussian(rng, 0.01), gaussian(rng, 0.01), gaussian(rng, 0.01))
                   : Vec3(uniform(rng, -3, 3), uniform(rng, -2, 2), uniform(rng, 2, 12));
    p.w = 1;
    pairs.push_back(p);
    label.push_back(inlier);
  }
  const auto r = ransac(pairs, 500, 0.01, 42);
  int tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    tp += r.inliers[i] && label[i];
    fp += r.inliers[i] && !label[i];
    fn += !r.inliers[i] && label[i];
  }
  const double recall = tp / double(tp + fn), precision = tp / double(std::max(1, tp + fp));
  return {recall >= 0.95 && precision >= 0.95, fmt("recall %.3f, precision %.3f (15 of 50 pairs are outliers)", recall, precision)};
}

Verdict training(const fs::path& out) {
  const auto report = read_report(out / "report.csv");
  const auto& first = report.epochs.front();
  const auto& last = report.epochs.back();
  nlohmann::json summary;
  std::ifstream(out / "eval_summary.json") >> summary;
  const double r0 = summary["untrained"]["rot_err_deg"]["mean"], r1 = summary["trained"]["rot_err_deg"]["mean"];
  const double t0 = summary["untrained"]["trans_err_m"]["mean"], t1 = summary["trained"]["trans_err_m"]["mean"];
  const double loss_ratio = last.mean_loss / first.mean_loss;
  const double inlier_ratio = last.mean_inliers / first.mean_inliers;
  const bool loss_ok = loss_ratio <= 0.5, inlier_ok = inlier_ratio >= 1.5, rot_ok = r1 < r0, trans_ok = t1 < t0;
  return {loss_ok && inlier_ok && rot_ok && trans_ok,
          fmt("loss %.4f -> %.4f (x%.2f, %s); inliers %.2f -> %.2f (x%.2f, %s); held-out rot %.3f -> %.3f deg (%s), "
              "trans %.3f -> %.3f m (%s)",
              first.mean_loss, last.mean_loss, loss_ratio, loss_ok ? "ok" : "needs <= 0.5", first.mean_inliers,
              last.mean_inliers, inlier_ratio, inlier_ok ? "ok" : "needs >= 1.5", r0, r1, rot_ok ? "ok" : "not lower", t0,
              t1, trans_ok ? "ok" : "not lower")};
}

Verdict determinism(const fs::path& work) {
  const auto cfg = work / "small.json";
  std::ofstream(cfg) << kSmallConfig;
  std::vector<fs::path> dirs{work / "det_a", work / "det_b"};
  for (const auto& d : dirs) {
    fs::remove_all(d);
    const int code = run(SEQLOC_CLI_PATH, "--config " + cfg.string() + " --out-dir " + d.string() + " pipeline --simulate",
                         work / (d.filename().string() + ".log"));
    if (code != 0) return {false, fmt("pipeline run exited with %d", code)};
  }
  int files = 0, differ = 0;
  std::string first_diff;
  for (const auto& entry : fs::recursive_directory_iterator(dirs[0])) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), dirs[0]);
    ++files;
    if (!fs::exists(dirs[1] / rel) || slurp(entry.path()) != slurp(dirs[1] / rel)) {
      ++differ;
      if (first_diff.empty()) first_diff = rel.string();
    }
  }
  int files_b = 0;
  for (const auto& entry : fs::recursive_directory_iterator(dirs[1])) files_b += entry.is_regular_file();
  const bool ok = differ == 0 && files == files_b && files > 0;
  return {ok, ok ? fmt("%d artifacts byte-identical across two seeded pipeline runs", files)
                 : fmt("%d of %d artifacts differ (first: %s), %d vs %d files", differ, files, first_diff.c_str(), files,
                       files_b)};
}

Verdict no_gt_build(const fs::path& work) {
  const auto dir = work / "nogt";
  fs::remove_all(dir);
  const int code = run(SEQLOC_NOGT_PATH,
                       "--config " + (work / "small.json").string() + " --out-dir " + dir.string() + " pipeline --simulate",
                       work / "nogt.log");
  const bool artifacts = fs::exists(dir / "model.bin") && fs::exists(dir / "report.csv") && fs::exists(dir / "pairs.csv");
  const bool no_eval = !fs::exists(dir / "eval_summary.json");
  return {code == 0 && artifacts && no_eval,
          fmt("build without the gt reader: pipeline exit %d, model and report written: %s, eval skipped: %s", code,
              artifacts ? "yes" : "no", no_eval ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "seqloc_acceptance";
  fs::create_directories(work);
  const auto t0 = std::chrono::steady_clock::now();

  // Default configuration, seed 42: the dataset and artifacts behind criteria 3, 5 and 7.
  const auto full = work / "full";
  fs::remove_all(full);
  const int full_code = run(SEQLOC_CLI_PATH, "--out-dir " + full.string() + " pipeline --simulate", work / "full.log");
  std::optional<Dataset> ds;
  if (full_code == 0) {
    ds = load_dataset(full / "dataset");
    load_ground_truth(*ds);
  }
  const PipelineConfig defaults;
  auto needs_full = [&](const std::function<Verdict()>& f) {
    return ds ? f() : Verdict{false, fmt("default pipeline run failed with exit %d (see %s)", full_code,
                                         (work / "full.log").c_str())};
  };

  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"geometry exactness", geometry},
      {"gradient oracle", gradient},
      {"sequence matching", [&] { return needs_full([&] { return sequence_matching(*ds, full); }); }},
      {"graph correctness", graph_search},
      {"pair quality", [&] { return needs_full([&] { return pair_quality(*ds, full, defaults.sim.pair_radius_m); }); }},
      {"RANSAC robustness", ransac_robustness},
      {"EM training efficacy", [&] { return needs_full([&] { return training(full); }); }},
      {"determinism", [&] { return determinism(work); }},
      {"self-supervision boundary", [&] { return no_gt_build(work); }},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += !v.pass;
    std::printf("criterion %zu %s: %s: %s\n", i + 1, v.pass ? "PASS" : "FAIL", criteria[i].first, v.detail.c_str());
    std::fflush(stdout);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%d of %zu criteria passed in %.0f s\n", static_cast<int>(criteria.size()) - failures, criteria.size(), secs);
  return failures == 0 ? 0 : 1;
}
