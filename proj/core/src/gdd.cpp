#include "htapsim/gdd.hpp"

#include <algorithm>
#include <map>
#include <numeric>

#include <fmt/format.h>

namespace htapsim {

namespace {

std::vector<WaitEdge> remove_edges_to(LocalWaitGraph& local, Dxid v, bool dotted_only) {
  std::vector<WaitEdge> removed;
  auto keep = std::remove_if(local.edges.begin(), local.edges.end(), [&](const WaitEdge& e) {
    const bool hit = e.holder == v && (!dotted_only || e.kind == EdgeKind::Dotted);
    if (hit) removed.push_back(e);
    return hit;
  });
  local.edges.erase(keep, local.edges.end());
  return removed;
}

bool has_in_edge(const GlobalWaitForGraph& g, Dxid v) {
  for (const auto& l : g.locals()) {
    for (const auto& e : l.edges) {
      if (e.holder == v) return true;
    }
  }
  return false;
}

bool has_dotted_in_edge(const LocalWaitGraph& l, Dxid v) {
  return std::any_of(l.edges.begin(), l.edges.end(),
                     [&](const WaitEdge& e) { return e.holder == v && e.kind == EdgeKind::Dotted; });
}

std::string default_label(Dxid v) { return to_string(v); }

}  // namespace

std::vector<RuleApplication> applicable_rules(const GlobalWaitForGraph& g) {
  std::vector<RuleApplication> out;
  for (Dxid v : g.vertices()) {
    if (g.global_out_degree(v) == 0 && has_in_edge(g, v)) {
      out.push_back({ReductionRule::ZeroGlobalOutDegree, v, kCoordinator});
    }
  }
  for (const auto& l : g.locals()) {
    std::set<Dxid> targets;
    for (const auto& e : l.edges) {
      if (e.kind == EdgeKind::Dotted) targets.insert(e.holder);
    }
    for (Dxid v : targets) {
      if (l.out_degree(v) == 0) out.push_back({ReductionRule::ZeroLocalOutDegree, v, l.segment});
    }
  }
  return out;
}

std::vector<WaitEdge> apply_rule(GlobalWaitForGraph& g, const RuleApplication& a) {
  std::vector<WaitEdge> removed;
  if (a.rule == ReductionRule::ZeroGlobalOutDegree) {
    if (g.global_out_degree(a.vertex) != 0) return removed;
    for (auto& l : g.locals()) {
      auto r = remove_edges_to(l, a.vertex, false);
      removed.insert(removed.end(), r.begin(), r.end());
    }
    return removed;
  }
  for (auto& l : g.locals()) {
    if (l.segment != a.segment) continue;
    if (l.out_degree(a.vertex) != 0) return removed;
    return remove_edges_to(l, a.vertex, true);
  }
  return removed;
}

GlobalWaitForGraph reduce(GlobalWaitForGraph g, std::vector<RemovalStep>* trace) {
  auto record = [&](const RuleApplication& a, std::vector<WaitEdge> removed) {
    if (removed.empty()) return false;
    if (trace != nullptr) trace->push_back(RemovalStep{a, std::move(removed)});
    return true;
  };
  bool removed_any = true;
  while (removed_any) {
    removed_any = false;
    for (Dxid v : g.vertices()) {
      const RuleApplication a{ReductionRule::ZeroGlobalOutDegree, v, kCoordinator};
      removed_any |= record(a, apply_rule(g, a));
    }
    for (std::size_t i = 0; i < g.locals().size(); ++i) {
      const SegmentId seg = g.locals()[i].segment;
      std::set<Dxid> vs;
      for (const auto& e : g.locals()[i].edges) {
        vs.insert(e.waiter);
        vs.insert(e.holder);
      }
      for (Dxid v : vs) {
        if (!has_dotted_in_edge(g.locals()[i], v)) continue;
        const RuleApplication a{ReductionRule::ZeroLocalOutDegree, v, seg};
        removed_any |= record(a, apply_rule(g, a));
      }
    }
  }
  return g;
}

std::string describe_step(const RemovalStep& step, const std::function<std::string(Dxid)>& label) {
  const auto& name = label ? label : std::function<std::string(Dxid)>(default_label);
  std::vector<std::string> edges;
  for (const auto& e : step.removed) {
    edges.push_back(fmt::format("{}:{}->{}({})", to_string(e.segment), name(e.waiter), name(e.holder),
                                to_string(e.kind)));
  }
  const std::string v = name(step.application.vertex);
  if (step.application.rule == ReductionRule::ZeroGlobalOutDegree) {
    return fmt::format("deg(G)({})=0: remove vertex {} and all edges to {} [{}]", v, v, v,
                       fmt::join(edges, ", "));
  }
  const int seg = to_underlying(step.application.segment);
  return fmt::format("deg{}({})=0: remove dotted edges to {} on {} [{}]", seg, v, v,
                     to_string(step.application.segment), fmt::join(edges, ", "));
}

std::string compact_step(const RemovalStep& step, const std::function<std::string(Dxid)>& label) {
  const std::string v = label ? label(step.application.vertex) : default_label(step.application.vertex);
  if (step.application.rule == ReductionRule::ZeroGlobalOutDegree) return "R1 " + v;
  return fmt::format("R2 {}@{}", v, to_string(step.application.segment));
}

std::string_view to_string(DetectionOutcome o) noexcept {
  switch (o) {
    case DetectionOutcome::Clean: return "clean";
    case DetectionOutcome::Deadlock: return "deadlock";
    case DetectionOutcome::Stale: return "stale";
  }
  return "?";
}

void GddConfig::validate() const {
  if (period < 1) throw std::invalid_argument("gdd period must be at least 1 tick");
}

std::vector<Dxid> find_cycle(const std::vector<WaitEdge>& edges) {
  std::map<Dxid, std::vector<Dxid>> adj;
  for (const auto& e : edges) adj[e.waiter].push_back(e.holder);
  for (auto& [v, out] : adj) {
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
  }
  enum class Mark : std::uint8_t { White, Grey, Black };
  std::map<Dxid, Mark> mark;
  std::vector<Dxid> stack;

  // Iterative DFS; on meeting a grey vertex the cycle is the stack suffix.
  for (const auto& [root, unused] : adj) {
    if (mark[root] != Mark::White) continue;
    std::vector<std::pair<Dxid, std::size_t>> frames{{root, 0}};
    mark[root] = Mark::Grey;
    stack.assign(1, root);
    while (!frames.empty()) {
      auto& [v, next] = frames.back();
      const auto& out = adj[v];
      if (next == out.size()) {
        mark[v] = Mark::Black;
        frames.pop_back();
        stack.pop_back();
        continue;
      }
      const Dxid w = out[next++];
      if (mark[w] == Mark::Grey) {
        auto from = std::find(stack.begin(), stack.end(), w);
        std::vector<Dxid> cycle(from, stack.end());
        cycle.push_back(w);
        return cycle;
      }
      if (mark[w] == Mark::White) {
        mark[w] = Mark::Grey;
        stack.push_back(w);
        frames.emplace_back(w, 0);
      }
    }
  }
  return {};
}

namespace {

// Vertices lying on some directed cycle (members of nontrivial strongly
// connected components; self loops cannot occur in wait graphs).
std::set<Dxid> cyclic_vertices(const std::vector<WaitEdge>& edges) {
  std::map<Dxid, std::set<Dxid>> fwd;
  std::map<Dxid, std::set<Dxid>> rev;
  std::set<Dxid> all;
  for (const auto& e : edges) {
    fwd[e.waiter].insert(e.holder);
    rev[e.holder].insert(e.waiter);
    all.insert(e.waiter);
    all.insert(e.holder);
  }
  auto reach = [](const std::map<Dxid, std::set<Dxid>>& adj, Dxid from) {
    std::set<Dxid> seen;
    std::vector<Dxid> todo;
    if (auto it = adj.find(from); it != adj.end()) todo.assign(it->second.begin(), it->second.end());
    while (!todo.empty()) {
      const Dxid v = todo.back();
      todo.pop_back();
      if (!seen.insert(v).second) continue;
      if (auto it = adj.find(v); it != adj.end()) todo.insert(todo.end(), it->second.begin(), it->second.end());
    }
    return seen;
  };
  std::set<Dxid> out;
  for (Dxid v : all) {
    if (reach(fwd, v).contains(v)) out.insert(v);
  }
  return out;
}

}  // namespace

std::vector<Dxid> select_victims(const std::vector<WaitEdge>& residual, VictimPolicy policy) {
  (void)policy;  // YoungestDxid is the only policy
  std::map<Dxid, Dxid> parent;
  auto find = [&](Dxid v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
  };
  for (const auto& e : residual) {
    parent.try_emplace(e.waiter, e.waiter);
    parent.try_emplace(e.holder, e.holder);
  }
  for (const auto& e : residual) {
    const Dxid a = find(e.waiter);
    const Dxid b = find(e.holder);
    if (a != b) parent[a] = b;
  }
  const std::set<Dxid> cyclic = cyclic_vertices(residual);
  std::map<Dxid, Dxid> best;  // component root -> victim
  std::map<Dxid, bool> best_cyclic;
  for (const auto& [v, unused] : parent) {
    const Dxid root = find(v);
    const bool on_cycle = cyclic.contains(v);
    auto it = best.find(root);
    if (it == best.end()) {
      best[root] = v;
      best_cyclic[root] = on_cycle;
      continue;
    }
    // Prefer cycle members; among equals take the largest dxid.
    if ((on_cycle && !best_cyclic[root]) || (on_cycle == best_cyclic[root] && v > it->second)) {
      it->second = v;
      best_cyclic[root] = on_cycle;
    }
  }
  std::vector<Dxid> victims;
  for (const auto& [root, v] : best) victims.push_back(v);
  std::sort(victims.begin(), victims.end(), std::greater<>());
  return victims;
}

DetectionVerdict detect(const GlobalWaitForGraph& g, const LiveView& live, VictimPolicy policy) {
  DetectionVerdict verdict;
  const GlobalWaitForGraph residual = reduce(g, &verdict.trace);
  verdict.residual_edges = residual.edges();
  if (verdict.residual_edges.empty()) {
    verdict.outcome = DetectionOutcome::Clean;
    return verdict;
  }
  bool stale = false;
  if (live.running) {
    for (Dxid v : residual.vertices()) stale = stale || !live.running(v);
  }
  if (!stale && live.edge_present) {
    for (const auto& e : verdict.residual_edges) stale = stale || !live.edge_present(e);
  }
  if (stale) {
    verdict.outcome = DetectionOutcome::Stale;
    return verdict;
  }
  verdict.outcome = DetectionOutcome::Deadlock;
  verdict.cycle = find_cycle(verdict.residual_edges);
  verdict.victims = select_victims(verdict.residual_edges, policy);
  return verdict;
}

std::vector<Dxid> break_deadlock(const DetectionVerdict& verdict, ClusterControl& cluster) {
  if (verdict.outcome != DetectionOutcome::Deadlock) {
    throw ProtocolError(fmt::format("break_deadlock needs a deadlock verdict, got {}",
                                    to_string(verdict.outcome)));
  }
  std::vector<Dxid> aborted;
  for (Dxid v : verdict.victims) {
    if (!cluster.is_running(v)) continue;
    cluster.abort_transaction(v, "deadlock victim");
    aborted.push_back(v);
  }
  return aborted;
}

}  // namespace htapsim
