#pragma once

#include <cstdint>

namespace unipool {

/// Collects the discrete decisions (relu sign patterns, argmax picks) made
/// during a forward pass. Finite-difference probing installs one around each
/// evaluation and skips probes whose traces disagree, since a flipped branch
/// means the function has a kink inside the probe interval.
class BranchTrace {
 public:
  void feed(std::uint64_t v) {
    hash_ ^= v + 0x9e3779b97f4a7c15ull + (hash_ << 6) + (hash_ >> 2);
  }
  std::uint64_t hash() const { return hash_; }

  /// Trace active on this thread, or nullptr.
  static BranchTrace*& current();

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ull;
};

/// Installs a fresh trace for the enclosing scope.
class BranchTraceScope {
 public:
  BranchTraceScope() : prev_(BranchTrace::current()) {
    BranchTrace::current() = &trace_;
  }
  ~BranchTraceScope() { BranchTrace::current() = prev_; }
  BranchTraceScope(const BranchTraceScope&) = delete;
  BranchTraceScope& operator=(const BranchTraceScope&) = delete;

  std::uint64_t hash() const { return trace_.hash(); }

 private:
  BranchTrace trace_;
  BranchTrace* prev_;
};

inline void branch_feed(std::uint64_t v) {
  if (BranchTrace* t = BranchTrace::current()) t->feed(v);
}

}  // namespace unipool
