#include "htapsim/resource_group.hpp"

#include <algorithm>
#include <charconv>
#include <stdexcept>

#include <fmt/format.h>

namespace htapsim {

namespace {

constexpr std::uint64_t kStrideScale = 1'000'000;

bool percent_ok(int p) { return p > 0 && p <= 100; }

}  // namespace

void ResourceGroupConfig::validate() const {
  if (name.empty()) throw std::invalid_argument("resource group needs a name");
  if (concurrency < 1) throw std::invalid_argument(fmt::format("group {}: CONCURRENCY must be at least 1", name));
  if (!percent_ok(memory_limit)) {
    throw std::invalid_argument(fmt::format("group {}: MEMORY_LIMIT must be in (0, 100]", name));
  }
  if (!percent_ok(memory_shared_quota)) {
    throw std::invalid_argument(fmt::format("group {}: MEMORY_SHARED_QUOTA must be in (0, 100]", name));
  }
  if (cpu_rate_limit.has_value() == cpuset.has_value()) {
    throw std::invalid_argument(fmt::format("group {}: set exactly one of CPU_RATE_LIMIT and CPUSET", name));
  }
  if (cpu_rate_limit && !percent_ok(*cpu_rate_limit)) {
    throw std::invalid_argument(fmt::format("group {}: CPU_RATE_LIMIT must be in (0, 100]", name));
  }
  if (cpuset && cpuset->empty()) throw std::invalid_argument(fmt::format("group {}: empty CPUSET", name));
}

std::set<int> parse_cpuset(std::string_view text) {
  std::set<int> out;
  auto number = [&](std::string_view s) {
    int v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || v < 0) {
      throw std::invalid_argument(fmt::format("bad CPUSET entry '{}'", s));
    }
    return v;
  };
  while (!text.empty()) {
    const std::size_t comma = text.find(',');
    std::string_view part = text.substr(0, comma);
    while (!part.empty() && part.front() == ' ') part.remove_prefix(1);
    while (!part.empty() && part.back() == ' ') part.remove_suffix(1);
    const std::size_t dash = part.find('-');
    if (dash == std::string_view::npos) {
      out.insert(number(part));
    } else {
      const int lo = number(part.substr(0, dash));
      const int hi = number(part.substr(dash + 1));
      if (hi < lo) throw std::invalid_argument(fmt::format("bad CPUSET range '{}'", part));
      for (int c = lo; c <= hi; ++c) out.insert(c);
    }
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
  }
  if (out.empty()) throw std::invalid_argument("empty CPUSET");
  return out;
}

void validate_groups(const std::vector<ResourceGroupConfig>& groups, int cores) {
  int memory = 0;
  std::set<int> pinned;
  std::set<std::string> names;
  for (const auto& g : groups) {
    g.validate();
    if (!names.insert(g.name).second) throw std::invalid_argument(fmt::format("duplicate group {}", g.name));
    memory += g.memory_limit;
    if (!g.cpuset) continue;
    for (int c : *g.cpuset) {
      if (c >= cores) {
        throw std::invalid_argument(fmt::format("group {}: core {} does not exist ({} cores)", g.name, c, cores));
      }
      if (!pinned.insert(c).second) {
        throw std::invalid_argument(fmt::format("group {}: core {} is in another CPUSET", g.name, c));
      }
    }
  }
  if (memory > 100) throw std::invalid_argument(fmt::format("MEMORY_LIMIT values sum to {} > 100", memory));
}

ResourceManager::ResourceManager(std::vector<ResourceGroupConfig> groups, std::uint64_t global_memory)
    : groups_(std::move(groups)),
      global_memory_(global_memory),
      group_shared_used_(groups_.size(), 0),
      running_(groups_.size(), 0),
      queues_(groups_.size()) {
  for (const auto& g : groups_) g.validate();
  std::uint64_t sum = 0;
  for (std::size_t i = 0; i < groups_.size(); ++i) sum += group_memory(i);
  if (sum > global_memory_) throw std::invalid_argument("group memory exceeds global memory");
  global_shared_capacity_ = global_memory_ - sum;
}

std::size_t ResourceManager::group_index(std::string_view name) const {
  for (std::size_t i = 0; i < groups_.size(); ++i) {
    if (groups_[i].name == name) return i;
  }
  throw std::invalid_argument(fmt::format("unknown resource group {}", name));
}

std::uint64_t ResourceManager::group_memory(std::size_t g) const {
  return global_memory_ * static_cast<std::uint64_t>(groups_.at(g).memory_limit) / 100;
}

std::uint64_t ResourceManager::group_shared_capacity(std::size_t g) const {
  return group_memory(g) * static_cast<std::uint64_t>(groups_.at(g).memory_shared_quota) / 100;
}

std::uint64_t ResourceManager::slot_quota(std::size_t g) const {
  return (group_memory(g) - group_shared_capacity(g)) / static_cast<std::uint64_t>(groups_.at(g).concurrency);
}

Admission ResourceManager::admit(QueryId q, std::string_view group) {
  const std::size_t g = group_index(group);
  if (queries_.contains(q)) throw std::invalid_argument(fmt::format("query {} already admitted", q));
  Query& entry = queries_[q];
  entry.group = g;
  if (running_[g] < static_cast<std::size_t>(groups_[g].concurrency)) {
    entry.running = true;
    ++running_[g];
    return Admission::Run;
  }
  queues_[g].push_back(q);
  return Admission::Queue;
}

void ResourceManager::release(Query& q) {
  group_shared_used_[q.group] -= q.charges.group_shared;
  global_shared_used_ -= q.charges.global_shared;
  q.charges = {};
}

std::vector<QueryId> ResourceManager::finish(QueryId q) {
  std::vector<QueryId> started;
  auto it = queries_.find(q);
  if (it == queries_.end()) return started;
  const std::size_t g = it->second.group;
  release(it->second);
  if (!it->second.running) {
    auto& queue = queues_[g];
    queue.erase(std::remove(queue.begin(), queue.end(), q), queue.end());
    queries_.erase(it);
    return started;
  }
  queries_.erase(it);
  --running_[g];
  while (!queues_[g].empty() && running_[g] < static_cast<std::size_t>(groups_[g].concurrency)) {
    const QueryId next = queues_[g].front();
    queues_[g].pop_front();
    queries_.at(next).running = true;
    ++running_[g];
    started.push_back(next);
  }
  return started;
}

MemoryOutcome ResourceManager::charge_memory(QueryId q, std::int64_t bytes) {
  if (bytes < 0) throw std::invalid_argument("memory charge must not be negative");
  auto it = queries_.find(q);
  if (it == queries_.end() || !it->second.running) {
    throw std::invalid_argument(fmt::format("query {} is not running", q));
  }
  Query& query = it->second;
  const std::size_t g = query.group;
  auto want = static_cast<std::uint64_t>(bytes);
  const std::uint64_t slot_room = slot_quota(g) - std::min(slot_quota(g), query.charges.slot);
  const std::uint64_t group_room = group_shared_capacity(g) - group_shared_used_[g];
  const std::uint64_t global_room = global_shared_capacity_ - global_shared_used_;
  if (slot_room + group_room + global_room < want) {
    release(query);
    return MemoryOutcome::Cancelled;
  }
  const std::uint64_t s = std::min(want, slot_room);
  want -= s;
  const std::uint64_t gs = std::min(want, group_room);
  want -= gs;
  query.charges.slot += s;
  query.charges.group_shared += gs;
  query.charges.global_shared += want;
  group_shared_used_[g] += gs;
  global_shared_used_ += want;
  return MemoryOutcome::Ok;
}

bool ResourceManager::running(QueryId q) const {
  auto it = queries_.find(q);
  return it != queries_.end() && it->second.running;
}

bool ResourceManager::queued(QueryId q) const {
  auto it = queries_.find(q);
  return it != queries_.end() && !it->second.running;
}

std::size_t ResourceManager::running_count(std::size_t g) const { return running_.at(g); }
std::size_t ResourceManager::queued_count(std::size_t g) const { return queues_.at(g).size(); }

QueryCharges ResourceManager::charges(QueryId q) const {
  auto it = queries_.find(q);
  return it == queries_.end() ? QueryCharges{} : it->second.charges;
}

std::uint64_t ResourceManager::total_charged() const {
  std::uint64_t n = 0;
  for (const auto& [id, q] : queries_) n += q.charges.total();
  return n;
}

std::uint64_t ResourceManager::layer_usage_total() const {
  std::uint64_t n = global_shared_used_;
  for (const auto& [id, q] : queries_) n += q.charges.slot;
  for (std::uint64_t u : group_shared_used_) n += u;
  return n;
}

std::size_t CpuScheduler::Core::load() const {
  std::size_t n = 0;
  for (const auto& [g, q] : queues) n += q.size();
  return n;
}

CpuScheduler::CpuScheduler(int cores, const std::vector<ResourceGroupConfig>& groups)
    : cores_(cores), core_(static_cast<std::size_t>(cores)), group_ticks_(groups.size(), 0) {
  if (cores < 1) throw std::invalid_argument("need at least one core");
  validate_groups(groups, cores);
  for (const auto& g : groups) {
    cpusets_.push_back(g.cpuset);
    stride_.push_back(g.cpu_rate_limit ? kStrideScale / static_cast<std::uint64_t>(*g.cpu_rate_limit) : kStrideScale);
  }
}

bool CpuScheduler::allowed(std::size_t group, int core) const {
  if (cpusets_[group]) return cpusets_[group]->contains(core);
  return std::none_of(cpusets_.begin(), cpusets_.end(),
                      [&](const auto& cs) { return cs && cs->contains(core); });
}

void CpuScheduler::place(std::uint64_t pid, int core) {
  Core& c = core_[static_cast<std::size_t>(core)];
  const std::size_t g = procs_.at(pid).group;
  auto& q = c.queues[g];
  if (q.empty()) {
    // A group (re)joining a core starts at the core's virtual time.
    auto& pass = c.pass[g];
    pass = std::max(pass, c.virtual_time);
  }
  q.push_back(pid);
}

void CpuScheduler::submit(JobId job, std::size_t group, std::uint64_t work, unsigned processes) {
  if (group >= stride_.size()) throw std::invalid_argument(fmt::format("no group {}", group));
  if (jobs_.contains(job)) throw std::invalid_argument(fmt::format("job {} already submitted", job));
  if (work == 0 || processes == 0) throw std::invalid_argument("a job needs work and at least one process");
  std::vector<int> candidates;
  for (int c = 0; c < cores_; ++c) {
    if (allowed(group, c)) candidates.push_back(c);
  }
  if (candidates.empty()) throw std::invalid_argument(fmt::format("group {} has no core to run on", group));
  auto& pids = jobs_[job];
  for (unsigned i = 0; i < processes; ++i) {
    const std::uint64_t pid = next_pid_++;
    procs_[pid] = Process{job, group, work};
    pids.insert(pid);
    const int target = *std::min_element(candidates.begin(), candidates.end(), [&](int a, int b) {
      return core_[static_cast<std::size_t>(a)].load() < core_[static_cast<std::size_t>(b)].load();
    });
    place(pid, target);
  }
}

void CpuScheduler::kill(JobId job) {
  auto it = jobs_.find(job);
  if (it == jobs_.end()) return;
  for (std::uint64_t pid : it->second) {
    for (auto& c : core_) {
      for (auto& [g, q] : c.queues) q.erase(std::remove(q.begin(), q.end(), pid), q.end());
    }
    procs_.erase(pid);
  }
  for (auto& c : core_) std::erase_if(c.queues, [](const auto& kv) { return kv.second.empty(); });
  jobs_.erase(it);
}

void CpuScheduler::steal_for_idle_cores() {
  for (int idle = 0; idle < cores_; ++idle) {
    if (core_[static_cast<std::size_t>(idle)].load() != 0) continue;
    int victim = -1;
    std::size_t victim_group = 0;
    std::size_t best = 1;
    for (int c = 0; c < cores_; ++c) {
      const Core& core = core_[static_cast<std::size_t>(c)];
      if (core.load() <= best) continue;
      for (const auto& [g, q] : core.queues) {
        if (!q.empty() && allowed(g, idle)) {
          victim = c;
          victim_group = g;
          best = core.load();
          break;
        }
      }
    }
    if (victim < 0) continue;
    Core& from = core_[static_cast<std::size_t>(victim)];
    auto& q = from.queues[victim_group];
    const std::uint64_t pid = q.back();
    q.pop_back();
    if (q.empty()) from.queues.erase(victim_group);
    place(pid, idle);
  }
}

CpuTick CpuScheduler::schedule_tick() {
  CpuTick out;
  steal_for_idle_cores();
  // An idle core while a process that may run there waits on a busy core.
  for (int ci = 0; ci < cores_; ++ci) {
    if (!core_[static_cast<std::size_t>(ci)].queues.empty()) continue;
    for (const auto& c : core_) {
      if (c.load() < 2) continue;
      for (const auto& [g, q] : c.queues) {
        if (allowed(g, ci)) ++violations_;
      }
    }
  }
  std::map<JobId, unsigned> grants;
  for (int ci = 0; ci < cores_; ++ci) {
    Core& c = core_[static_cast<std::size_t>(ci)];
    if (c.queues.empty()) {
      ++idle_core_ticks_;
      continue;
    }
    std::size_t pick = c.queues.begin()->first;
    for (const auto& [g, q] : c.queues) {
      if (c.pass[g] < c.pass[pick]) pick = g;
    }
    c.virtual_time = c.pass[pick];
    c.pass[pick] += stride_[pick];
    auto& q = c.queues[pick];
    const std::uint64_t pid = q.front();
    q.pop_front();
    Process& p = procs_.at(pid);
    ++group_ticks_[pick];
    ++grants[p.job];
    if (--p.remaining > 0) {
      q.push_back(pid);
    } else {
      auto& pids = jobs_.at(p.job);
      pids.erase(pid);
      if (pids.empty()) {
        out.completed.push_back(p.job);
        jobs_.erase(p.job);
      }
      procs_.erase(pid);
    }
    if (q.empty()) c.queues.erase(pick);
  }
  for (const auto& [job, n] : grants) out.grants.push_back({job, n});
  std::sort(out.completed.begin(), out.completed.end());
  return out;
}

}  // namespace htapsim
