#pragma once

#include <functional>
#include <string>

#include "hcat/common.hpp"

namespace hcat {

// Wall-clock micro-benchmark: warmups, then >= 30 timed repetitions on the
// monotonic clock. Callables too fast for the timer are batched automatically
// and the per-call time reported. Everything runs on one thread.

struct BenchResult {
  std::string config_id;
  int reps = 0;
  int warmups = 0;
  int threads = 1;
  int64_t batch = 1;       // calls per timed sample
  double median_ns = 0.0;  // per call
  double iqr_ns = 0.0;     // q75 - q25, per call
  std::string env;         // compiler/build metadata
};

uint64_t mono_ns();

BenchResult bench_forward(const std::function<void()>& fn,
                          const std::string& config_id, int reps, int warmups);

// machine=true emits one parseable record:
//   hcat-bench v1 config=<id> reps=<n> warmups=<n> threads=1 batch=<n>
//       median_ns=<x> iqr_ns=<x> env=<...>
std::string format_bench(const BenchResult& result, bool machine);
BenchResult parse_bench(const std::string& line);

}  // namespace hcat
