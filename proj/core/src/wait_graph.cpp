#include "htapsim/wait_graph.hpp"

#include <algorithm>

#include <fmt/format.h>
#include <json.hpp>

namespace htapsim {

std::string_view to_string(EdgeKind k) noexcept { return k == EdgeKind::Dotted ? "dotted" : "solid"; }

EdgeKind edge_kind_for(LockTagKind blocked_on) noexcept {
  return blocked_on == LockTagKind::Tuple ? EdgeKind::Dotted : EdgeKind::Solid;
}

std::size_t LocalWaitGraph::out_degree(Dxid v) const {
  return static_cast<std::size_t>(
      std::count_if(edges.begin(), edges.end(), [&](const WaitEdge& e) { return e.waiter == v; }));
}

LocalWaitGraph snapshot_local(const LockTable& table, Tick now) {
  LocalWaitGraph g{table.segment(), {}, now};
  for (const auto& [tag, queue] : table.queues()) {
    const EdgeKind kind = edge_kind_for(tag.kind);
    for (std::size_t i = 0; i < queue.size(); ++i) {
      const LockRequest& w = queue[i];
      if (w.status != LockStatus::Waiting) continue;
      for (std::size_t j = 0; j < queue.size(); ++j) {
        const LockRequest& b = queue[j];
        if (b.txn == w.txn || !conflicts(b.mode, w.mode)) continue;
        const bool holder = b.status == LockStatus::Granted;
        const bool earlier_waiter = b.status == LockStatus::Waiting && j < i;
        if (holder || earlier_waiter) g.edges.push_back(WaitEdge{table.segment(), w.txn, b.txn, kind});
      }
    }
  }
  std::sort(g.edges.begin(), g.edges.end());
  g.edges.erase(std::unique(g.edges.begin(), g.edges.end()), g.edges.end());
  return g;
}

GlobalWaitForGraph::GlobalWaitForGraph(std::vector<LocalWaitGraph> locals) {
  for (auto& l : locals) add_local(std::move(l));
}

void GlobalWaitForGraph::add_local(LocalWaitGraph local) {
  for (const WaitEdge& e : local.edges) {
    if (e.segment != local.segment) {
      throw std::invalid_argument(fmt::format("edge on {} filed in the graph of {}",
                                              to_string(e.segment), to_string(local.segment)));
    }
  }
  std::sort(local.edges.begin(), local.edges.end());
  local.edges.erase(std::unique(local.edges.begin(), local.edges.end()), local.edges.end());
  auto it = std::lower_bound(locals_.begin(), locals_.end(), local.segment,
                             [](const LocalWaitGraph& l, SegmentId s) { return l.segment < s; });
  if (it != locals_.end() && it->segment == local.segment) {
    *it = std::move(local);
  } else {
    locals_.insert(it, std::move(local));
  }
}

void GlobalWaitForGraph::add_edge(const WaitEdge& edge) {
  auto it = std::lower_bound(locals_.begin(), locals_.end(), edge.segment,
                             [](const LocalWaitGraph& l, SegmentId s) { return l.segment < s; });
  if (it == locals_.end() || it->segment != edge.segment) {
    it = locals_.insert(it, LocalWaitGraph{edge.segment, {}, 0});
  }
  auto pos = std::lower_bound(it->edges.begin(), it->edges.end(), edge);
  if (pos == it->edges.end() || *pos != edge) it->edges.insert(pos, edge);
}

std::set<Dxid> GlobalWaitForGraph::vertices() const {
  std::set<Dxid> out;
  for (const auto& l : locals_) {
    for (const auto& e : l.edges) {
      out.insert(e.waiter);
      out.insert(e.holder);
    }
  }
  return out;
}

std::vector<WaitEdge> GlobalWaitForGraph::edges() const {
  std::vector<WaitEdge> out;
  for (const auto& l : locals_) out.insert(out.end(), l.edges.begin(), l.edges.end());
  return out;
}

std::size_t GlobalWaitForGraph::edge_count() const {
  std::size_t n = 0;
  for (const auto& l : locals_) n += l.edges.size();
  return n;
}

std::size_t GlobalWaitForGraph::global_out_degree(Dxid v) const {
  std::size_t n = 0;
  for (const auto& l : locals_) n += l.out_degree(v);
  return n;
}

std::size_t GlobalWaitForGraph::local_out_degree(SegmentId segment, Dxid v) const {
  for (const auto& l : locals_) {
    if (l.segment == segment) return l.out_degree(v);
  }
  return 0;
}

std::string to_graph_document(const GlobalWaitForGraph& g) {
  nlohmann::json doc;
  doc["vertices"] = nlohmann::json::array();
  for (Dxid v : g.vertices()) doc["vertices"].push_back(to_underlying(v));
  doc["edges"] = nlohmann::json::array();
  for (const WaitEdge& e : g.edges()) {
    doc["edges"].push_back({{"segment", to_underlying(e.segment)},
                            {"from", to_underlying(e.waiter)},
                            {"to", to_underlying(e.holder)},
                            {"kind", std::string(to_string(e.kind))}});
  }
  return doc.dump(2);
}

GlobalWaitForGraph parse_graph_document(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw GraphFormatError(fmt::format("graph document is not valid JSON: {}", e.what()));
  }
  if (!doc.is_object() || !doc.contains("edges") || !doc["edges"].is_array()) {
    throw GraphFormatError("graph document needs an \"edges\" array");
  }
  std::set<std::uint64_t> declared;
  const bool has_vertices = doc.contains("vertices");
  if (has_vertices) {
    if (!doc["vertices"].is_array()) throw GraphFormatError("\"vertices\" must be an array");
    for (const auto& v : doc["vertices"]) {
      if (!v.is_number_unsigned()) throw GraphFormatError("vertex ids must be non-negative integers");
      declared.insert(v.get<std::uint64_t>());
    }
  }
  GlobalWaitForGraph g;
  std::size_t index = 0;
  for (const auto& e : doc["edges"]) {
    auto field = [&](const char* name) -> const nlohmann::json& {
      if (!e.is_object() || !e.contains(name)) {
        throw GraphFormatError(fmt::format("edge {} is missing \"{}\"", index, name));
      }
      return e[name];
    };
    const auto& seg = field("segment");
    const auto& from = field("from");
    const auto& to = field("to");
    const auto& kind = field("kind");
    if (!seg.is_number_integer() || !from.is_number_unsigned() || !to.is_number_unsigned() ||
        !kind.is_string()) {
      throw GraphFormatError(fmt::format("edge {} has a field of the wrong type", index));
    }
    const std::string k = kind.get<std::string>();
    if (k != "solid" && k != "dotted") {
      throw GraphFormatError(fmt::format("edge {} has kind \"{}\"", index, k));
    }
    const auto w = from.get<std::uint64_t>();
    const auto h = to.get<std::uint64_t>();
    if (w == h) throw GraphFormatError(fmt::format("edge {} is a self loop", index));
    if (has_vertices && (!declared.contains(w) || !declared.contains(h))) {
      throw GraphFormatError(fmt::format("edge {} references an undeclared vertex", index));
    }
    g.add_edge(WaitEdge{SegmentId{seg.get<int>()}, Dxid{w}, Dxid{h},
                        k == "dotted" ? EdgeKind::Dotted : EdgeKind::Solid});
    ++index;
  }
  return g;
}

}  // namespace htapsim
