#include "hcat/bench.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <iomanip>
#include <sstream>
#include <vector>

namespace hcat {

uint64_t mono_ns() {
  timespec ts;
  clock_gettime(CLOCK_MONOTONIC, &ts);
  return static_cast<uint64_t>(ts.tv_sec) * 1000000000ull +
         static_cast<uint64_t>(ts.tv_nsec);
}

namespace {

double quantile(std::vector<double> sorted_samples, double q) {
  const double pos = q * (static_cast<double>(sorted_samples.size()) - 1.0);
  const size_t lo = static_cast<size_t>(std::floor(pos));
  const size_t hi = static_cast<size_t>(std::ceil(pos));
  const double frac = pos - static_cast<double>(lo);
  return sorted_samples[lo] * (1.0 - frac) + sorted_samples[hi] * frac;
}

std::string env_string() {
#if defined(__clang__)
  std::string compiler = str("clang-", __clang_major__, ".", __clang_minor__);
#elif defined(__GNUC__)
  std::string compiler = str("gcc-", __GNUC__, ".", __GNUC_MINOR__);
#else
  std::string compiler = "unknown-compiler";
#endif
#if defined(NDEBUG)
  return compiler + "/release";
#else
  return compiler + "/debug";
#endif
}

}  // namespace

BenchResult bench_forward(const std::function<void()>& fn,
                          const std::string& config_id, int reps, int warmups) {
  check(reps >= 30, "bench: need at least 30 repetitions, got ", reps);
  check(warmups >= 0, "bench: negative warmup count");

  for (int i = 0; i < std::max(warmups, 1); ++i) fn();

  // Estimate one call to size batches; too-fast callables get batched so each
  // timed sample spans at least ~100us.
  const uint64_t t0 = mono_ns();
  fn();
  const uint64_t estimate = std::max<uint64_t>(mono_ns() - t0, 1);
  const int64_t batch =
      estimate >= 100000 ? 1
                         : static_cast<int64_t>(100000 / estimate) + 1;

  std::vector<double> samples(static_cast<size_t>(reps));
  for (int r = 0; r < reps; ++r) {
    const uint64_t begin = mono_ns();
    for (int64_t i = 0; i < batch; ++i) fn();
    const uint64_t end = mono_ns();
    samples[static_cast<size_t>(r)] =
        static_cast<double>(end - begin) / static_cast<double>(batch);
  }
  std::sort(samples.begin(), samples.end());

  BenchResult result;
  result.config_id = config_id;
  result.reps = reps;
  result.warmups = warmups;
  result.threads = 1;
  result.batch = batch;
  result.median_ns = quantile(samples, 0.5);
  result.iqr_ns = quantile(samples, 0.75) - quantile(samples, 0.25);
  result.env = env_string();
  return result;
}

std::string format_bench(const BenchResult& r, bool machine) {
  std::ostringstream os;
  if (machine) {
    os << "hcat-bench v1 config=" << r.config_id << " reps=" << r.reps
       << " warmups=" << r.warmups << " threads=" << r.threads
       << " batch=" << r.batch << " median_ns=" << std::fixed
       << std::setprecision(1) << r.median_ns << " iqr_ns=" << r.iqr_ns
       << " env=" << r.env << "\n";
    return os.str();
  }
  os << "bench " << r.config_id << ": median " << std::fixed
     << std::setprecision(3) << r.median_ns / 1e6 << " ms, IQR "
     << r.iqr_ns / 1e6 << " ms (" << r.reps << " reps, " << r.warmups
     << " warmups, batch " << r.batch << ", 1 thread, " << r.env << ")\n";
  return os.str();
}

BenchResult parse_bench(const std::string& line) {
  std::istringstream is(line);
  std::string magic, version;
  is >> magic >> version;
  check(magic == "hcat-bench" && version == "v1", "parse_bench: bad header");
  BenchResult r;
  std::string token;
  while (is >> token) {
    const auto eq = token.find('=');
    check(eq != std::string::npos, "parse_bench: malformed token ", token);
    const std::string key = token.substr(0, eq), value = token.substr(eq + 1);
    if (key == "config") r.config_id = value;
    else if (key == "reps") r.reps = std::stoi(value);
    else if (key == "warmups") r.warmups = std::stoi(value);
    else if (key == "threads") r.threads = std::stoi(value);
    else if (key == "batch") r.batch = std::stoll(value);
    else if (key == "median_ns") r.median_ns = std::stod(value);
    else if (key == "iqr_ns") r.iqr_ns = std::stod(value);
    else if (key == "env") r.env = value;
    else fail("parse_bench: unknown key ", key);
  }
  check(r.reps >= 30, "parse_bench: invalid repetition count");
  return r;
}

}  // namespace hcat
