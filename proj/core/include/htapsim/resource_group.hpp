#pragma once

// Resource groups: concurrency admission, three-layer memory accounting and a
// simulated CPU scheduler.
//
// Memory layers for a group g with global memory M:
//   group memory   = M * MEMORY_LIMIT / 100
//   group shared   = group memory * MEMORY_SHARED_QUOTA / 100
//   slot quota     = (group memory - group shared) / CONCURRENCY
//   global shared  = M - sum of group memory
// A query's charge fills its slot, then the group shared pool, then the
// global shared pool; it is cancelled only when all three together cannot
// hold the request.
//
// CPU: every process of a job is placed on one core and stays there unless an
// idle core steals it. A core serves one process per tick. Groups with
// CPU_RATE_LIMIT share the cores outside every cpuset; on each core the groups
// present are stride-scheduled by their rate limits and processes of one
// group take turns. Groups with CPUSET run only on their own cores.

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace htapsim {

struct ResourceGroupConfig {
  std::string name;
  int concurrency = 20;
  int memory_limit = 0;          // percent of global memory
  int memory_shared_quota = 20;  // percent of group memory
  std::optional<int> cpu_rate_limit;
  std::optional<std::set<int>> cpuset;

  void validate() const;
};

/// "0-3", "4-31", "0,2,5-7".
std::set<int> parse_cpuset(std::string_view text);

/// Per-group checks plus the cross-group ones: memory limits sum to at most
/// 100, cpusets are disjoint and inside [0, cores).
void validate_groups(const std::vector<ResourceGroupConfig>& groups, int cores);

using QueryId = std::uint64_t;

enum class Admission : std::uint8_t { Run, Queue };
enum class MemoryOutcome : std::uint8_t { Ok, Cancelled };

struct QueryCharges {
  std::uint64_t slot = 0;
  std::uint64_t group_shared = 0;
  std::uint64_t global_shared = 0;

  std::uint64_t total() const noexcept { return slot + group_shared + global_shared; }
};

class ResourceManager {
 public:
  ResourceManager(std::vector<ResourceGroupConfig> groups, std::uint64_t global_memory);

  const std::vector<ResourceGroupConfig>& groups() const noexcept { return groups_; }
  /// Index of the named group; throws std::invalid_argument when unknown.
  std::size_t group_index(std::string_view name) const;

  std::uint64_t group_memory(std::size_t g) const;
  std::uint64_t group_shared_capacity(std::size_t g) const;
  std::uint64_t slot_quota(std::size_t g) const;
  std::uint64_t global_shared_capacity() const noexcept { return global_shared_capacity_; }

  /// Run iff fewer than CONCURRENCY queries of the group are running;
  /// otherwise the query joins the group's FIFO queue.
  Admission admit(QueryId q, std::string_view group);
  /// Ends a running or queued query, releases its memory and returns the
  /// queries admitted in its place.
  std::vector<QueryId> finish(QueryId q);

  /// Throws std::invalid_argument for a negative amount.
  MemoryOutcome charge_memory(QueryId q, std::int64_t bytes);

  bool running(QueryId q) const;
  bool queued(QueryId q) const;
  std::size_t running_count(std::size_t g) const;
  std::size_t queued_count(std::size_t g) const;
  QueryCharges charges(QueryId q) const;
  std::uint64_t group_shared_used(std::size_t g) const { return group_shared_used_.at(g); }
  std::uint64_t global_shared_used() const noexcept { return global_shared_used_; }
  /// Sum of every recorded charge, equal to the layer usage totals.
  std::uint64_t total_charged() const;
  std::uint64_t layer_usage_total() const;

 private:
  struct Query {
    std::size_t group = 0;
    bool running = false;
    QueryCharges charges;
  };

  void release(Query& q);

  std::vector<ResourceGroupConfig> groups_;
  std::uint64_t global_memory_;
  std::uint64_t global_shared_capacity_ = 0;
  std::vector<std::uint64_t> group_shared_used_;
  std::uint64_t global_shared_used_ = 0;
  std::vector<std::size_t> running_;
  std::vector<std::deque<QueryId>> queues_;
  std::map<QueryId, Query> queries_;
};

using JobId = std::uint64_t;

struct CpuGrant {
  JobId job = 0;
  unsigned cores = 0;
};

struct CpuTick {
  std::vector<CpuGrant> grants;
  std::vector<JobId> completed;
};

class CpuScheduler {
 public:
  /// Groups without a cpuset use their CPU_RATE_LIMIT as their weight.
  CpuScheduler(int cores, const std::vector<ResourceGroupConfig>& groups);

  int cores() const noexcept { return cores_; }

  /// A job of `processes` processes each needing `work` core-ticks.
  void submit(JobId job, std::size_t group, std::uint64_t work, unsigned processes);
  /// Drops a job that will not run any more (its query was cancelled).
  void kill(JobId job);
  bool has_job(JobId job) const { return jobs_.contains(job); }
  bool idle() const noexcept { return jobs_.empty(); }

  CpuTick schedule_tick();

  std::uint64_t group_ticks(std::size_t g) const { return group_ticks_.at(g); }
  std::uint64_t idle_core_ticks() const noexcept { return idle_core_ticks_; }
  /// Core-ticks left idle although a process was allowed to run there.
  std::uint64_t conservation_violations() const noexcept { return violations_; }

 private:
  struct Process {
    JobId job = 0;
    std::size_t group = 0;
    std::uint64_t remaining = 0;
  };
  struct Core {
    std::map<std::size_t, std::deque<std::uint64_t>> queues;  // group -> process ids
    std::map<std::size_t, std::uint64_t> pass;
    std::uint64_t virtual_time = 0;

    std::size_t load() const;
  };

  bool allowed(std::size_t group, int core) const;
  void place(std::uint64_t pid, int core);
  void steal_for_idle_cores();

  int cores_;
  std::vector<std::uint64_t> stride_;
  std::vector<std::optional<std::set<int>>> cpusets_;
  std::vector<Core> core_;
  std::map<std::uint64_t, Process> procs_;
  std::map<JobId, std::set<std::uint64_t>> jobs_;
  std::uint64_t next_pid_ = 1;
  std::vector<std::uint64_t> group_ticks_;
  std::uint64_t idle_core_ticks_ = 0;
  std::uint64_t violations_ = 0;
};

}  // namespace htapsim
