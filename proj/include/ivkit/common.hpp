// include/ivkit/common.hpp

// Copyright 2026  ivkit authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace ivkit {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

// ---------------------------------------------------------------------------
// Errors. Each kind maps onto a process exit code used by the command line.

enum class ErrorKind { kConfig, kData, kNumerical };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  int exit_code() const noexcept {
    switch (kind_) {
      case ErrorKind::kConfig: return 2;
      case ErrorKind::kData: return 3;
      case ErrorKind::kNumerical: return 4;
    }
    return 1;
  }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorKind::kConfig, what) {}
};
struct DataError : Error {
  explicit DataError(const std::string& what) : Error(ErrorKind::kData, what) {}
};
struct NumericalError : Error {
  explicit NumericalError(const std::string& what)
      : Error(ErrorKind::kNumerical, what) {}
};

// ---------------------------------------------------------------------------
// Warnings. Printed to stderr and, while a WarningCapture is alive, recorded
// so that the run manifest can list them.

namespace detail {
struct WarningState {
  std::mutex mutex;
  std::vector<std::vector<std::string>*> captures;
  bool echo = true;
};
inline WarningState& warning_state() {
  static WarningState state;
  return state;
}
}  // namespace detail

inline void warn(const std::string& msg) {
  auto& st = detail::warning_state();
  std::lock_guard lock(st.mutex);
  if (st.echo) std::cerr << "WARNING (ivkit): " << msg << '\n';
  for (auto* sink : st.captures) sink->push_back(msg);
}

inline void set_warning_echo(bool echo) {
  auto& st = detail::warning_state();
  std::lock_guard lock(st.mutex);
  st.echo = echo;
}

class WarningCapture {
 public:
  WarningCapture() {
    auto& st = detail::warning_state();
    std::lock_guard lock(st.mutex);
    st.captures.push_back(&messages_);
  }
  ~WarningCapture() {
    auto& st = detail::warning_state();
    std::lock_guard lock(st.mutex);
    std::erase(st.captures, &messages_);
  }
  WarningCapture(const WarningCapture&) = delete;
  WarningCapture& operator=(const WarningCapture&) = delete;

  const std::vector<std::string>& messages() const { return messages_; }

 private:
  std::vector<std::string> messages_;
};

// ---------------------------------------------------------------------------
// Random numbers. Every stochastic step draws from its own stream derived from
// (seed, stream, index), so results do not depend on call order.

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

inline Vector randn(Rng& rng, Index n, double stddev = 1.0) {
  std::normal_distribution<double> dist(0.0, stddev);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v(i) = dist(rng);
  return v;
}

inline Matrix randn(Rng& rng, Index rows, Index cols, double stddev = 1.0) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  // Column-major fill order is part of the reproducibility contract.
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
  return m;
}

// FNV-1a, used for stable sub-seeds and config hashes.
inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Labeled embeddings, trials and scores.

enum class Partition {
  kPrimaryTrain,
  kUnlabeledMajor,
  kUnlabeledMinor,
  kDevLabeled,
  kEnroll,
  kTest,
};

inline std::string_view to_string(Partition p) {
  switch (p) {
    case Partition::kPrimaryTrain: return "primary_train";
    case Partition::kUnlabeledMajor: return "unlabeled_major";
    case Partition::kUnlabeledMinor: return "unlabeled_minor";
    case Partition::kDevLabeled: return "dev_labeled";
    case Partition::kEnroll: return "enroll";
    case Partition::kTest: return "test";
  }
  return "?";
}

inline Partition partition_from_string(std::string_view s) {
  for (auto p : {Partition::kPrimaryTrain, Partition::kUnlabeledMajor, Partition::kUnlabeledMinor,
                 Partition::kDevLabeled, Partition::kEnroll, Partition::kTest})
    if (to_string(p) == s) return p;
  throw DataError("unknown partition '" + std::string(s) + "'");
}

struct LabeledIvector {
  std::string utt_id;
  Vector vector;
  std::optional<std::string> speaker_id;
  std::optional<std::string> language_id;
  Partition partition = Partition::kPrimaryTrain;
};

inline void check_finite(const Vector& v, std::string_view what) {
  if (!v.allFinite()) throw NumericalError(std::string(what) + " contains non-finite values");
}

// Throws DataError if any utt_id repeats or any vector is non-finite.
inline void validate_corpus(const std::vector<LabeledIvector>& corpus) {
  std::unordered_set<std::string> seen;
  for (const auto& u : corpus) {
    if (!seen.insert(u.utt_id).second) throw DataError("duplicate utt_id '" + u.utt_id + "'");
    if (!u.vector.allFinite()) throw DataError("non-finite vector for '" + u.utt_id + "'");
  }
}

struct TrialId {
  std::string model_id;
  std::string test_id;
  auto operator<=>(const TrialId&) const = default;
};

struct TrialIdHash {
  std::size_t operator()(const TrialId& t) const noexcept {
    return fnv1a(t.test_id, fnv1a(t.model_id) ^ 0x9e3779b97f4a7c15ULL);
  }
};

struct KeyEntry {
  std::string model_id;
  std::string test_id;
  bool is_target = false;
};

struct TrialKey {
  std::vector<KeyEntry> entries;

  std::vector<TrialId> trials() const {
    std::vector<TrialId> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back({e.model_id, e.test_id});
    return out;
  }
  std::size_t num_targets() const {
    return static_cast<std::size_t>(
        std::count_if(entries.begin(), entries.end(), [](const auto& e) { return e.is_target; }));
  }
};

// Throws DataError on duplicate (model, test) pairs.
inline void check_unique_trials(const std::vector<TrialId>& trials) {
  std::unordered_set<TrialId, TrialIdHash> seen;
  for (const auto& t : trials)
    if (!seen.insert(t).second)
      throw DataError("duplicate trial (" + t.model_id + ", " + t.test_id + ")");
}

struct ScoreEntry {
  std::string model_id;
  std::string test_id;
  double score = 0.0;
};

struct ScoreSet {
  std::vector<ScoreEntry> entries;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
  std::vector<TrialId> trials() const {
    std::vector<TrialId> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back({e.model_id, e.test_id});
    return out;
  }
};

// model_id -> utterance ids used to enroll it.
using EnrollmentMap = std::map<std::string, std::vector<std::string>>;

// Rows of `rows` selected by `idx`.
inline Matrix select_rows(const Matrix& rows, const std::vector<Index>& idx) {
  Matrix out(static_cast<Index>(idx.size()), rows.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Index>(i)) = rows.row(idx[i]);
  return out;
}

// Calls f(i) for i in [0, n) over `jobs` threads in contiguous chunks. Every
// index is processed by the same code either way, so results do not depend on
// `jobs`. The first exception thrown by a worker is rethrown here.
template <typename F>
void parallel_for(std::size_t n, int jobs, F&& f) {
  const std::size_t n_jobs = static_cast<std::size_t>(std::max(1, jobs));
  if (n_jobs == 1 || n < 2 * n_jobs) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::exception_ptr error;
  std::mutex mu;
  {
    std::vector<std::jthread> threads;
    const std::size_t chunk = (n + n_jobs - 1) / n_jobs;
    for (std::size_t b = 0; b < n; b += chunk)
      threads.emplace_back([&, b] {
        try {
          for (std::size_t i = b; i < std::min(n, b + chunk); ++i) f(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!error) error = std::current_exception();
        }
      });
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace ivkit
