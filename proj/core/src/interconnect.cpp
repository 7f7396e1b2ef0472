#include "htapsim/interconnect.hpp"

#include <algorithm>
#include <array>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>

#include <fmt/format.h>

#include "htapsim/segment_store.hpp"

namespace htapsim {

std::string to_string(const ProcessId& p) { return fmt::format("p(seg{},slice{})", p.segment, p.slice); }

std::string describe_cycle(const std::vector<ProcessId>& cycle) {
  std::vector<std::string> parts;
  parts.reserve(cycle.size());
  for (const auto& p : cycle) parts.push_back(to_string(p));
  return fmt::format("{}", fmt::join(parts, " -> "));
}

JoinInput adversarial_join_input(int segments, int capacity) {
  if (segments < 3) throw std::invalid_argument("the deadlocking layout needs at least 3 segments");
  if (capacity < 1) throw std::invalid_argument("channel capacity must be at least 1");
  JoinInput in;
  in.segments = segments;
  in.outer.resize(static_cast<std::size_t>(segments));
  in.inner.resize(static_cast<std::size_t>(segments));
  // Outer scan on seg1: enough for seg0 to stop reading outer with a full
  // channel, then the one tuple seg1's join is waiting for.
  for (int i = 0; i < capacity + 2; ++i) in.outer[1].push_back({0, 0});
  in.outer[1].push_back({1, 1});
  // Inner scan on seg2: floods seg1, whose join is still waiting for its
  // first outer tuple, before seg0 gets its inner tuple.
  for (int i = 0; i < capacity + 1; ++i) in.inner[2].push_back({1, 1});
  in.inner[2].push_back({0, 0});
  return in;
}

JoinInput hashed_join_input(int segments, const std::vector<std::vector<std::int64_t>>& outer_keys,
                            const std::vector<std::vector<std::int64_t>>& inner_keys) {
  JoinInput in;
  in.segments = segments;
  in.outer.resize(static_cast<std::size_t>(segments));
  in.inner.resize(static_cast<std::size_t>(segments));
  auto fill = [&](const std::vector<std::vector<std::int64_t>>& keys, std::vector<std::vector<RoutedTuple>>& out) {
    if (keys.size() != static_cast<std::size_t>(segments)) {
      throw std::invalid_argument("need one key list per segment");
    }
    for (std::size_t s = 0; s < keys.size(); ++s) {
      for (std::int64_t k : keys[s]) out[s].push_back({to_underlying(route(k, segments)), k});
    }
  };
  fill(outer_keys, in.outer);
  fill(inner_keys, in.inner);
  return in;
}

std::uint64_t expected_join_pairs(const JoinInput& input) {
  std::map<std::pair<int, std::int64_t>, std::uint64_t> inner;
  for (const auto& side : input.inner) {
    for (const auto& t : side) ++inner[{t.destination, t.key}];
  }
  std::uint64_t n = 0;
  for (const auto& side : input.outer) {
    for (const auto& t : side) {
      auto it = inner.find({t.destination, t.key});
      if (it != inner.end()) n += it->second;
    }
  }
  return n;
}

namespace {

enum class Motion : std::uint8_t { Outer = 0, Inner = 1 };

class JoinDataflow {
 public:
  JoinDataflow(const JoinInput& in, int capacity, bool prefetch)
      : in_(in), n_(static_cast<std::size_t>(in.segments)), capacity_(static_cast<std::size_t>(capacity)),
        prefetch_(prefetch) {
    if (in.segments < 1) throw std::invalid_argument("need at least one segment");
    if (capacity < 1) throw std::invalid_argument("channel capacity must be at least 1");
    if (in.outer.size() != n_ || in.inner.size() != n_) throw std::invalid_argument("need one tuple list per segment");
    for (const auto* side : {&in.outer, &in.inner}) {
      for (const auto& list : *side) {
        for (const auto& t : list) {
          if (t.destination < 0 || static_cast<std::size_t>(t.destination) >= n_) {
            throw std::invalid_argument(fmt::format("destination seg{} does not exist", t.destination));
          }
        }
      }
    }
    for (auto& m : chan_) m.assign(n_ * n_, Channel{});
    producers_.assign(2 * n_, Producer{});
    consumers_.assign(n_, Consumer{});
    for (auto& c : consumers_) c.phase = prefetch_ ? Phase::Inner : Phase::FirstOuter;
  }

  JoinRun run() {
    JoinRun out;
    bool progress = true;
    while (progress) {
      progress = false;
      for (std::size_t m = 0; m < 2; ++m) {
        for (std::size_t s = 0; s < n_; ++s) {
          if (step_producer(static_cast<Motion>(m), s)) {
            progress = true;
            ++out.steps;
          }
        }
      }
      for (std::size_t s = 0; s < n_; ++s) {
        if (step_consumer(s)) {
          progress = true;
          ++out.steps;
        }
      }
    }
    out.completed = all_done();
    for (const auto& c : consumers_) out.joined_pairs += c.pairs;
    if (!out.completed) {
      out.waits = waits();
      out.cycle = find_cycle(out.waits);
    }
    return out;
  }

 private:
  struct Channel {
    std::deque<std::int64_t> tuples;
    bool eos = false;
  };
  struct Producer {
    std::size_t cursor = 0;
    bool eos_sent = false;
  };
  enum class Phase : std::uint8_t { FirstOuter, Inner, Outer, DrainInner, Done };
  struct Consumer {
    Phase phase = Phase::FirstOuter;
    std::map<std::int64_t, std::uint64_t> hash;  // built from the inner side
    std::vector<std::int64_t> pending_outer;
    std::uint64_t pairs = 0;
  };

  Channel& channel(Motion m, std::size_t from, std::size_t to) {
    return chan_[static_cast<std::size_t>(m)][from * n_ + to];
  }
  const std::vector<RoutedTuple>& tuples(Motion m, std::size_t seg) const {
    return m == Motion::Outer ? in_.outer[seg] : in_.inner[seg];
  }
  Producer& producer(Motion m, std::size_t seg) { return producers_[static_cast<std::size_t>(m) * n_ + seg]; }

  bool step_producer(Motion m, std::size_t seg) {
    Producer& p = producer(m, seg);
    const auto& list = tuples(m, seg);
    if (p.cursor < list.size()) {
      const RoutedTuple& t = list[p.cursor];
      Channel& c = channel(m, seg, static_cast<std::size_t>(t.destination));
      if (c.tuples.size() >= capacity_) return false;
      c.tuples.push_back(t.key);
      ++p.cursor;
      return true;
    }
    if (p.eos_sent) return false;
    for (std::size_t r = 0; r < n_; ++r) channel(m, seg, r).eos = true;
    p.eos_sent = true;
    return true;
  }

  // A tuple from motion m for consumer `seg`; nullopt with `exhausted` set
  // when every sender has finished.
  std::optional<std::int64_t> receive(Motion m, std::size_t seg, bool& exhausted) {
    exhausted = true;
    for (std::size_t s = 0; s < n_; ++s) {
      Channel& c = channel(m, s, seg);
      if (!c.tuples.empty()) {
        const std::int64_t k = c.tuples.front();
        c.tuples.pop_front();
        exhausted = false;
        return k;
      }
      if (!c.eos) exhausted = false;
    }
    return std::nullopt;
  }

  void probe(Consumer& c, std::int64_t key) {
    auto it = c.hash.find(key);
    if (it != c.hash.end()) c.pairs += it->second;
  }

  bool step_consumer(std::size_t seg) {
    Consumer& c = consumers_[seg];
    bool exhausted = false;
    switch (c.phase) {
      case Phase::FirstOuter: {
        auto k = receive(Motion::Outer, seg, exhausted);
        if (k) {
          c.pending_outer.push_back(*k);
          c.phase = Phase::Inner;
          return true;
        }
        if (exhausted) {
          c.phase = Phase::DrainInner;
          return true;
        }
        return false;
      }
      case Phase::Inner: {
        auto k = receive(Motion::Inner, seg, exhausted);
        if (k) {
          ++c.hash[*k];
          return true;
        }
        if (!exhausted) return false;
        for (std::int64_t o : c.pending_outer) probe(c, o);
        c.pending_outer.clear();
        c.phase = Phase::Outer;
        return true;
      }
      case Phase::Outer: {
        auto k = receive(Motion::Outer, seg, exhausted);
        if (k) {
          probe(c, *k);
          return true;
        }
        if (!exhausted) return false;
        c.phase = Phase::Done;
        return true;
      }
      case Phase::DrainInner: {
        auto k = receive(Motion::Inner, seg, exhausted);
        if (k) return true;
        if (!exhausted) return false;
        c.phase = Phase::Done;
        return true;
      }
      case Phase::Done:
        return false;
    }
    return false;
  }

  bool all_done() const {
    for (const auto& p : producers_) {
      if (!p.eos_sent) return false;
    }
    return std::all_of(consumers_.begin(), consumers_.end(), [](const Consumer& c) { return c.phase == Phase::Done; });
  }

  std::vector<std::pair<ProcessId, ProcessId>> waits() {
    std::vector<std::pair<ProcessId, ProcessId>> out;
    for (std::size_t m = 0; m < 2; ++m) {
      for (std::size_t s = 0; s < n_; ++s) {
        const Producer& p = producers_[m * n_ + s];
        const auto& list = tuples(static_cast<Motion>(m), s);
        if (p.cursor < list.size()) {
          out.push_back({ProcessId{static_cast<int>(s), static_cast<int>(m) + 1},
                         ProcessId{list[p.cursor].destination, 3}});
        }
      }
    }
    for (std::size_t s = 0; s < n_; ++s) {
      const Consumer& c = consumers_[s];
      Motion m = Motion::Outer;
      if (c.phase == Phase::Inner || c.phase == Phase::DrainInner) m = Motion::Inner;
      if (c.phase == Phase::Done) continue;
      for (std::size_t from = 0; from < n_; ++from) {
        const Channel& ch = channel(m, from, s);
        if (ch.tuples.empty() && !ch.eos) {
          out.push_back({ProcessId{static_cast<int>(s), 3}, ProcessId{static_cast<int>(from), static_cast<int>(m) + 1}});
        }
      }
    }
    return out;
  }

  static std::vector<ProcessId> find_cycle(const std::vector<std::pair<ProcessId, ProcessId>>& waits) {
    std::map<ProcessId, std::vector<ProcessId>> adj;
    for (const auto& [a, b] : waits) adj[a].push_back(b);
    // Start from join processes first so the reported cycle begins at one.
    std::vector<ProcessId> roots;
    for (const auto& [a, unused] : adj) roots.push_back(a);
    std::stable_sort(roots.begin(), roots.end(), [](const ProcessId& x, const ProcessId& y) {
      return (x.slice == 3) > (y.slice == 3);
    });
    for (const auto& root : roots) {
      std::vector<ProcessId> path{root};
      std::set<ProcessId> on_path{root};
      std::vector<std::size_t> next{0};
      while (!path.empty()) {
        const auto& out = adj[path.back()];
        if (next.back() == out.size()) {
          on_path.erase(path.back());
          path.pop_back();
          next.pop_back();
          continue;
        }
        const ProcessId w = out[next.back()++];
        if (w == root) {
          path.push_back(root);
          return path;
        }
        if (on_path.contains(w) || !adj.contains(w)) continue;
        path.push_back(w);
        on_path.insert(w);
        next.push_back(0);
      }
    }
    return {};
  }

  const JoinInput& in_;
  std::size_t n_;
  std::size_t capacity_;
  bool prefetch_;
  std::array<std::vector<Channel>, 2> chan_;
  std::vector<Producer> producers_;
  std::vector<Consumer> consumers_;
};

}  // namespace

JoinRun run_join(const JoinInput& input, int capacity, bool prefetch) {
  return JoinDataflow(input, capacity, prefetch).run();
}

JoinRun run_join_scenario(int segments, int capacity, bool prefetch) {
  return run_join(adversarial_join_input(segments, capacity), capacity, prefetch);
}

}  // namespace htapsim
