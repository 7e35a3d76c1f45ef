#pragma once

// Odometry validation of raw place matches, the experience-association graph and
// indirect correspondences along its minimum-cost paths.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seqloc/csv.hpp"
#include "seqloc/error.hpp"
#include "seqloc/geometry.hpp"
#include "seqloc/placerec.hpp"
#include "seqloc/random.hpp"
#include "seqloc/simworld.hpp"

namespace seqloc {

enum class MatchStatus { Validated, Replaced, Rejected };

inline std::string to_string(MatchStatus s) {
  switch (s) {
    case MatchStatus::Validated: return "validated";
    case MatchStatus::Replaced: return "replaced";
    case MatchStatus::Rejected: return "rejected";
  }
  return "rejected";
}

inline MatchStatus status_from_string(const std::string& s) {
  if (s == "validated") return MatchStatus::Validated;
  if (s == "replaced") return MatchStatus::Replaced;
  if (s == "rejected") return MatchStatus::Rejected;
  throw Error(Errc::Io, "unknown match status '" + s + "'");
}

struct CorrespondenceEntry {
  int query_frame = 0;
  int ref_frame = 0;
  MatchStatus status = MatchStatus::Rejected;
  double sq_distance = 0;  // m^2, VO-predicted
  int chain_length = 0;    // VO edges composed since the last validated match
};

struct CorrespondenceSet {
  int query_id = 0;
  int ref_id = 0;
  int ref_size = 0;
  std::vector<CorrespondenceEntry> entries;  // one per query frame, in order
};

struct AssocParams {
  double e_sq = 0.25;     // m^2
  int replace_window = 10;
  int k = 3;
};

/// T_{a,b} within one experience: pose of frame b expressed in frame a, from VO edges only.
inline Transform vo_relative(const Experience& e, int a, int b) {
  if (a == b) return Transform::identity();
  const int lo = std::min(a, b), hi = std::max(a, b);
  std::vector<Transform> chain;
  chain.reserve(static_cast<std::size_t>(hi - lo));
  for (int n = lo + 1; n <= hi; ++n) {
    const auto& edge = e.frames.at(static_cast<std::size_t>(n)).vo_edge;
    if (!edge)
      throw Error(Errc::MissingVO, "experience " + std::to_string(e.id) + " frame " + std::to_string(n) + " has no VO edge");
    chain.push_back(*edge);
  }
  const Transform lo_hi = compose_chain(chain);
  return a < b ? lo_hi : inverse(lo_hi);
}

/// Walks the query sequence keeping the last validated match m. A candidate is
/// validated when the VO-predicted squared offset (last match taken as coincident)
/// is <= e_sq; otherwise the closest reference frame within +/-window of the candidate
/// replaces it, or the candidate is rejected if even that exceeds e_sq.
inline CorrespondenceSet validate_matches(const Experience& query, const Experience& ref, const RawMatchList& raw,
                                          double e_sq, int window = 10) {
  if (e_sq < 0) throw Error(Errc::InvalidConfig, "e_sq must be non-negative");
  if (raw.size() != query.frames.size()) throw Error(Errc::InvalidConfig, "raw match list length must equal query length");
  CorrespondenceSet cs;
  cs.query_id = query.id;
  cs.ref_id = ref.id;
  cs.ref_size = ref.size();
  if (query.frames.empty()) return cs;
  cs.entries.push_back({0, 0, MatchStatus::Validated, 0.0, 0});
  int mq = 0, mr = 0;
  const int nref = ref.size();
  for (int q = 1; q < query.size(); ++q) {
    const int cand = std::clamp(raw[static_cast<std::size_t>(q)].ref_frame, 0, nref - 1);
    const Transform mq_q = vo_relative(query, mq, q);
    auto predicted = [&](int r) { return sq_translation_distance(compose(vo_relative(ref, r, mr), mq_q)); };
    const double d = predicted(cand);
    const int chain = std::abs(q - mq) + std::abs(cand - mr);
    if (d <= e_sq) {
      cs.entries.push_back({q, cand, MatchStatus::Validated, d, chain});
      mq = q;
      mr = cand;
      continue;
    }
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (int off = 0; off <= window; ++off) {
      for (int r : {cand - off, cand + off}) {
        if (r < 0 || r >= nref || (off == 0 && r != cand) || r == best) continue;
        const double dr = predicted(r);
        if (dr < best_d) {
          best_d = dr;
          best = r;
        }
      }
    }
    if (best >= 0 && best_d <= e_sq)
      cs.entries.push_back({q, best, MatchStatus::Replaced, best_d, std::abs(q - mq) + std::abs(best - mr)});
    else
      cs.entries.push_back({q, cand, MatchStatus::Rejected, d, chain});
  }
  return cs;
}

/// Fraction of entries whose place-recognition candidate failed VO validation.
inline double edge_cost(const CorrespondenceSet& cs) {
  if (cs.entries.empty()) throw Error(Errc::EmptyCorrespondences, "edge_cost of an empty set");
  const auto bad = std::count_if(cs.entries.begin(), cs.entries.end(),
                                 [](const auto& e) { return e.status != MatchStatus::Validated; });
  return static_cast<double>(bad) / static_cast<double>(cs.entries.size());
}

// ---------------------------------------------------------------------------
// Graph

struct GraphEdge {
  int query = 0;  // newer experience
  int ref = 0;    // older experience
  double cost = 0;
  CorrespondenceSet matches;
  std::string match_file;
};

struct ExperienceGraph {
  std::vector<int> vertices;
  std::vector<GraphEdge> edges;
  int k = 0;

  const GraphEdge* find_edge(int a, int b) const {
    for (const auto& e : edges)
      if ((e.query == a && e.ref == b) || (e.query == b && e.ref == a)) return &e;
    return nullptr;
  }
  bool has_vertex(int v) const { return std::find(vertices.begin(), vertices.end(), v) != vertices.end(); }
};

/// Matches every experience against its k predecessors (in collection order).
inline ExperienceGraph build_graph(const Dataset& ds, int k, double e_sq, const SeqSlamParams& sp,
                                   int replace_window = 10) {
  if (ds.experiences.size() < 2) throw Error(Errc::InvalidConfig, "graph needs at least 2 experiences");
  if (k < 1) throw Error(Errc::InvalidConfig, "k must be >= 1");
  ExperienceGraph g;
  g.k = k;
  std::vector<const Experience*> ordered;
  for (const auto& e : ds.experiences) ordered.push_back(&e);
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const Experience* a, const Experience* b) { return a->collection_index < b->collection_index; });
  for (const auto* e : ordered) g.vertices.push_back(e->id);
  for (std::size_t i = 1; i < ordered.size(); ++i) {
    for (std::size_t j = i > static_cast<std::size_t>(k) ? i - k : 0; j < i; ++j) {
      const auto& q = *ordered[i];
      const auto& r = *ordered[j];
      try {
        const auto raw = seqslam(q, r, sp);
        GraphEdge edge;
        edge.query = q.id;
        edge.ref = r.id;
        edge.matches = validate_matches(q, r, raw, e_sq, replace_window);
        edge.cost = edge_cost(edge.matches);
        edge.match_file = "matches_" + std::to_string(q.id) + "_" + std::to_string(r.id) + ".csv";
        g.edges.push_back(std::move(edge));
      } catch (const Error& err) {
        throw Error(err.code(), "edge " + std::to_string(q.id) + "->" + std::to_string(r.id) + ": " + err.what());
      }
    }
  }
  return g;
}

namespace detail {

inline constexpr double kCostTieTolerance = 1e-9;

struct PathLabel {
  double cost = 0;
  std::vector<int> path;
};

/// Strict order: cost (within tolerance), then hop count, then lexicographic ids.
inline bool label_less(const PathLabel& a, const PathLabel& b) {
  if (a.cost < b.cost - kCostTieTolerance) return true;
  if (b.cost < a.cost - kCostTieTolerance) return false;
  if (a.path.size() != b.path.size()) return a.path.size() < b.path.size();
  return a.path < b.path;
}

}  // namespace detail

inline double path_cost(const ExperienceGraph& g, const std::vector<int>& path) {
  double cost = 0;
  for (std::size_t i = 1; i < path.size(); ++i) {
    const auto* e = g.find_edge(path[i - 1], path[i]);
    if (!e) throw Error(Errc::NoPath, "path uses a missing edge");
    cost += e->cost;
  }
  return cost;
}

/// Uniform-cost search over undirected edges. Ties: fewer edges, then lexicographically smaller ids.
inline std::vector<int> min_cost_path(const ExperienceGraph& g, int src, int dst) {
  if (!g.has_vertex(src) || !g.has_vertex(dst)) throw Error(Errc::InvalidConfig, "path endpoints must be graph vertices");
  std::map<int, std::vector<std::pair<int, double>>> adj;
  for (const auto& e : g.edges) {
    adj[e.query].push_back({e.ref, e.cost});
    adj[e.ref].push_back({e.query, e.cost});
  }
  auto greater = [](const detail::PathLabel& a, const detail::PathLabel& b) { return detail::label_less(b, a); };
  std::priority_queue<detail::PathLabel, std::vector<detail::PathLabel>, decltype(greater)> open(greater);
  std::map<int, bool> settled;
  open.push({0.0, {src}});
  while (!open.empty()) {
    auto label = open.top();
    open.pop();
    const int v = label.path.back();
    if (settled[v]) continue;
    settled[v] = true;
    if (v == dst) return label.path;
    for (const auto& [w, c] : adj[v]) {
      if (settled[w]) continue;
      detail::PathLabel next{label.cost + c, label.path};
      next.path.push_back(w);
      open.push(std::move(next));
    }
  }
  throw Error(Errc::NoPath, "no path from " + std::to_string(src) + " to " + std::to_string(dst));
}

namespace detail {

struct HopMatch {
  int frame = 0;
  MatchStatus status = MatchStatus::Rejected;
  double sq_distance = 0;
};

/// Frame map from experience `from` to `to` over one edge, inverting it when needed.
inline std::vector<HopMatch> hop_map(const GraphEdge& edge, int from, int from_size) {
  const auto& cs = edge.matches;
  std::vector<HopMatch> out(static_cast<std::size_t>(from_size));
  if (edge.query == from) {
    for (std::size_t i = 0; i < out.size() && i < cs.entries.size(); ++i)
      out[i] = {cs.entries[i].ref_frame, cs.entries[i].status, cs.entries[i].sq_distance};
    return out;
  }
  // Inverse: a reference frame maps to the query frame whose accepted match lands on it,
  // or failing that on an adjacent frame (then marked replaced).
  for (int f = 0; f < from_size; ++f) {
    const CorrespondenceEntry* best = nullptr;
    int best_gap = 2;
    for (const auto& e : cs.entries) {
      if (e.status == MatchStatus::Rejected) continue;
      const int gap = std::abs(e.ref_frame - f);
      if (gap < best_gap || (gap == best_gap && best && e.sq_distance < best->sq_distance)) {
        best = &e;
        best_gap = gap;
      }
    }
    if (best) {
      const auto status = best_gap == 0 ? best->status : MatchStatus::Replaced;
      out[static_cast<std::size_t>(f)] = {best->query_frame, status, best->sq_distance};
    } else {
      // nearest query frame of any status, kept only so rejected entries carry an index
      int nearest = 0, gap = std::numeric_limits<int>::max();
      for (const auto& e : cs.entries)
        if (std::abs(e.ref_frame - f) < gap) {
          gap = std::abs(e.ref_frame - f);
          nearest = e.query_frame;
        }
      out[static_cast<std::size_t>(f)] = {nearest, MatchStatus::Rejected, 0.0};
    }
  }
  return out;
}

inline MatchStatus worse(MatchStatus a, MatchStatus b) { return static_cast<int>(a) > static_cast<int>(b) ? a : b; }

}  // namespace detail

/// Chains frame maps along a path. The result is a src->dst set (query = src).
/// `frame_counts` gives each experience's length (needed to invert edges).
inline CorrespondenceSet compose_correspondences(const ExperienceGraph& g, const std::vector<int>& path,
                                                 const std::map<int, int>& frame_counts) {
  if (path.empty()) throw Error(Errc::InvalidConfig, "empty path");
  const int src = path.front(), dst = path.back();
  CorrespondenceSet out;
  out.query_id = src;
  out.ref_id = dst;
  out.ref_size = frame_counts.at(dst);
  const int n = frame_counts.at(src);
  if (path.size() == 2) {
    const auto* e = g.find_edge(src, dst);
    if (!e) throw Error(Errc::NoPath, "path uses a missing edge");
    if (e->query == src) return e->matches;
  }
  std::vector<CorrespondenceEntry> entries(static_cast<std::size_t>(n));
  for (int f = 0; f < n; ++f) entries[static_cast<std::size_t>(f)] = {f, f, MatchStatus::Validated, 0.0, 0};
  for (std::size_t h = 1; h < path.size(); ++h) {
    const auto* e = g.find_edge(path[h - 1], path[h]);
    if (!e) throw Error(Errc::NoPath, "path uses a missing edge");
    const auto map = detail::hop_map(*e, path[h - 1], frame_counts.at(path[h - 1]));
    for (auto& entry : entries) {
      const auto& m = map.at(static_cast<std::size_t>(entry.ref_frame));
      entry.ref_frame = m.frame;
      entry.status = detail::worse(entry.status, m.status);
      entry.sq_distance += m.sq_distance;
      entry.chain_length += 1;
    }
  }
  out.entries = std::move(entries);
  return out;
}

inline std::map<int, int> frame_counts(const Dataset& ds) {
  std::map<int, int> out;
  for (const auto& e : ds.experiences) out[e.id] = e.size();
  return out;
}

struct ImagePair {
  int exp_a = 0, frame_a = 0, exp_b = 0, frame_b = 0;
  bool operator==(const ImagePair&) const = default;
};

/// Uniform sampling with replacement over every non-rejected entry of the given sets.
inline std::vector<ImagePair> sample_pairs(const std::vector<CorrespondenceSet>& sets, int n, std::uint64_t seed) {
  if (n < 1) throw Error(Errc::InvalidConfig, "n must be >= 1");
  std::vector<ImagePair> pool;
  for (const auto& cs : sets)
    for (const auto& e : cs.entries)
      if (e.status != MatchStatus::Rejected) pool.push_back({cs.query_id, e.query_frame, cs.ref_id, e.ref_frame});
  if (pool.empty()) throw Error(Errc::EmptyCorrespondences, "no non-rejected correspondences to sample from");
  auto rng = make_rng(seed, {0x5a11});
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  std::vector<ImagePair> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(pool[pick(rng)]);
  return out;
}

/// Indirect correspondence sets to sample from. With src and dst set, the single src->dst
/// set along the min-cost path; with both negative, one set per unordered experience pair
/// at most max_gap apart in collection order (0: no limit), oriented newer -> older.
inline std::vector<CorrespondenceSet> correspondence_sets(const ExperienceGraph& g, const std::map<int, int>& counts,
                                                          int src = -1, int dst = -1, int max_gap = 0) {
  std::vector<CorrespondenceSet> sets;
  if (src >= 0 || dst >= 0) {
    if (!g.has_vertex(src) || !g.has_vertex(dst)) throw Error(Errc::InvalidConfig, "src/dst not in graph");
    if (src == dst) throw Error(Errc::InvalidConfig, "src and dst must differ");
    sets.push_back(compose_correspondences(g, min_cost_path(g, src, dst), counts));
    return sets;
  }
  if (max_gap < 0) throw Error(Errc::InvalidConfig, "max_gap must be >= 0");
  for (std::size_t i = 1; i < g.vertices.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (max_gap == 0 || i - j <= static_cast<std::size_t>(max_gap))
        sets.push_back(compose_correspondences(g, min_cost_path(g, g.vertices[i], g.vertices[j]), counts));
  return sets;
}

// ---------------------------------------------------------------------------
// Files

inline void write_raw_matches(const RawMatchList& raw, const std::filesystem::path& path) {
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < raw.size(); ++i)
    rows.push_back({std::to_string(i), std::to_string(raw[i].ref_frame), csv::format(raw[i].score)});
  csv::write(path, "query_frame,ref_frame,score", rows);
}

inline RawMatchList read_raw_matches(const std::filesystem::path& path) {
  const auto t = csv::read(path, "query_frame,ref_frame,score");
  RawMatchList raw;
  for (const auto& row : t.rows) {
    if (csv::to_int(row[0]) != static_cast<int>(raw.size())) throw Error(Errc::Io, path.string() + ": rows out of order");
    raw.push_back({csv::to_int(row[1]), csv::to_double(row[2])});
  }
  return raw;
}

inline void write_matches(const CorrespondenceSet& cs, const std::filesystem::path& path) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& e : cs.entries)
    rows.push_back({std::to_string(e.query_frame), std::to_string(e.ref_frame), to_string(e.status),
                    csv::format(e.sq_distance)});
  csv::write(path, "query_frame,ref_frame,status,sq_distance", rows);
}

inline CorrespondenceSet read_matches(const std::filesystem::path& path, int query_id, int ref_id, int ref_size) {
  const auto t = csv::read(path, "query_frame,ref_frame,status,sq_distance");
  CorrespondenceSet cs;
  cs.query_id = query_id;
  cs.ref_id = ref_id;
  cs.ref_size = ref_size;
  for (const auto& row : t.rows)
    cs.entries.push_back({csv::to_int(row[0]), csv::to_int(row[1]), status_from_string(row[2]), csv::to_double(row[3]), 0});
  return cs;
}

inline void write_difference_matrix(const DifferenceMatrix& d, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot open " + path.string());
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    for (Eigen::Index j = 0; j < d.cols(); ++j) out << (j ? "," : "") << csv::format(d.values(i, j));
    out << '\n';
  }
}

inline void write_pairs(const std::vector<ImagePair>& pairs, const std::filesystem::path& path) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& p : pairs)
    rows.push_back({std::to_string(p.exp_a), std::to_string(p.frame_a), std::to_string(p.exp_b), std::to_string(p.frame_b)});
  csv::write(path, "exp_a,frame_a,exp_b,frame_b", rows);
}

inline std::vector<ImagePair> read_pairs(const std::filesystem::path& path) {
  const auto t = csv::read(path, "exp_a,frame_a,exp_b,frame_b");
  std::vector<ImagePair> out;
  for (const auto& row : t.rows)
    out.push_back({csv::to_int(row[0]), csv::to_int(row[1]), csv::to_int(row[2]), csv::to_int(row[3])});
  return out;
}

/// graph.json plus one matches_<q>_<r>.csv per edge, next to it.
inline void write_graph(const ExperienceGraph& g, const std::filesystem::path& path, const std::map<int, int>& counts) {
  nlohmann::json j;
  j["k"] = g.k;
  j["vertices"] = g.vertices;
  nlohmann::json sizes = nlohmann::json::object();
  for (const auto& [id, n] : counts) sizes[std::to_string(id)] = n;
  j["frame_counts"] = sizes;
  j["edges"] = nlohmann::json::array();
  const auto dir = path.parent_path();
  for (const auto& e : g.edges) {
    j["edges"].push_back({{"query", e.query}, {"ref", e.ref}, {"cost", e.cost}, {"matches", e.match_file}});
    write_matches(e.matches, dir / e.match_file);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot open " + path.string());
  out << j.dump(2) << '\n';
}

inline std::pair<ExperienceGraph, std::map<int, int>> read_graph(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());
  ExperienceGraph g;
  std::map<int, int> counts;
  try {
    const auto j = nlohmann::json::parse(in);
    g.k = j.at("k").get<int>();
    g.vertices = j.at("vertices").get<std::vector<int>>();
    for (const auto& [id, n] : j.at("frame_counts").items()) counts[std::stoi(id)] = n.get<int>();
    for (const auto& je : j.at("edges")) {
      GraphEdge e;
      e.query = je.at("query").get<int>();
      e.ref = je.at("ref").get<int>();
      e.cost = je.at("cost").get<double>();
      e.match_file = je.at("matches").get<std::string>();
      e.matches = read_matches(path.parent_path() / e.match_file, e.query, e.ref, counts.at(e.ref));
      g.edges.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw Error(Errc::Io, path.string() + ": " + ex.what());
  } catch (const std::out_of_range&) {
    throw Error(Errc::Io, path.string() + ": frame_counts missing an experience");
  }
  return {std::move(g), std::move(counts)};
}

}  // namespace seqloc
