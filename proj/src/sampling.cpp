#include "distill/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

namespace distill {

std::optional<NegativeStrategy> parse_negative_strategy(std::string_view s) {
  if (s == "random") return NegativeStrategy::random;
  if (s == "hardest") return NegativeStrategy::hardest;
  return std::nullopt;
}

std::optional<NegativeBy> parse_negative_by(std::string_view s) {
  if (s == "teacher_argmax") return NegativeBy::teacher_argmax;
  if (s == "ground_truth") return NegativeBy::ground_truth;
  return std::nullopt;
}

std::string_view to_string(NegativeStrategy s) { return s == NegativeStrategy::random ? "random" : "hardest"; }
std::string_view to_string(NegativeBy b) {
  return b == NegativeBy::teacher_argmax ? "teacher_argmax" : "ground_truth";
}

namespace {

// Floyd's algorithm: `count` distinct ranks from [0, total), in draw order.
std::vector<std::uint64_t> distinct_ranks(std::uint64_t total, std::uint64_t count, Rng& rng) {
  std::vector<std::uint64_t> out;
  out.reserve(count);
  std::unordered_set<std::uint64_t> seen;
  for (std::uint64_t j = total - count; j < total; ++j) {
    std::uniform_int_distribution<std::uint64_t> pick(0, j);
    const std::uint64_t t = pick(rng);
    const std::uint64_t chosen = seen.contains(t) ? j : t;
    seen.insert(chosen);
    out.push_back(chosen);
  }
  return out;
}

}  // namespace

PairSet sample_pairs(std::size_t batch_size, std::size_t count, Rng& rng) {
  if (batch_size < 2) throw std::invalid_argument("sample_pairs needs batch_size >= 2");
  const std::uint64_t n = batch_size;
  const std::uint64_t total = n * (n - 1) / 2;
  PairSet set;
  if (count > total) {
    set.truncated = true;
    count = total;
  }
  for (auto rank : distinct_ranks(total, count, rng)) {
    // Row-major over the strict upper triangle.
    std::uint64_t i = 0, remaining = rank;
    while (remaining >= n - 1 - i) {
      remaining -= n - 1 - i;
      ++i;
    }
    set.pairs.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(i + 1 + remaining)});
  }
  return set;
}

TripletSet sample_triplets(std::size_t batch_size, std::size_t count, Rng& rng) {
  if (batch_size < 3) throw std::invalid_argument("sample_triplets needs batch_size >= 3");
  const std::uint64_t n = batch_size;
  const std::uint64_t total = n * (n - 1) * (n - 2);
  TripletSet set;
  if (count > total) {
    set.truncated = true;
    count = total;
  }
  for (auto rank : distinct_ranks(total, count, rng)) {
    // Mixed radix (n, n-1, n-2) over ordered triples of distinct members.
    const std::uint64_t a = rank / ((n - 1) * (n - 2));
    const std::uint64_t rest = rank % ((n - 1) * (n - 2));
    std::uint64_t b = rest / (n - 2);
    std::uint64_t c = rest % (n - 2);
    if (b >= a) ++b;
    const std::uint64_t lo = std::min(a, b), hi = std::max(a, b);
    if (c >= lo) ++c;
    if (c >= hi) ++c;
    set.triplets.push_back({static_cast<std::size_t>(a), static_cast<std::size_t>(b), static_cast<std::size_t>(c)});
  }
  return set;
}

std::vector<std::size_t> argmax_rows(const Tensor& scores) {
  if (scores.rank() != 2) throw ShapeError("argmax_rows expects [N,K], got " + shape_string(scores.shape()));
  std::vector<std::size_t> out(scores.dim(0));
  for (std::size_t r = 0; r < out.size(); ++r) {
    auto row = scores.row(r);
    out[r] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

KDTripletSet sample_kd_negatives(const Tensor& teacher_out, const NegativeOptions& options, Rng& rng,
                                 const Tensor* student_out, std::span<const std::size_t> labels) {
  if (teacher_out.rank() != 2) throw ShapeError("teacher outputs must be [N,K]");
  const std::size_t n = teacher_out.dim(0);
  if (n < 2) throw std::invalid_argument("sample_kd_negatives needs at least 2 samples");
  std::vector<std::size_t> classes;
  if (options.by == NegativeBy::teacher_argmax) {
    classes = argmax_rows(teacher_out);
  } else {
    if (labels.size() != n) throw std::invalid_argument("ground_truth negatives need one label per sample");
    classes.assign(labels.begin(), labels.end());
  }
  if (options.strategy == NegativeStrategy::hardest) {
    if (!student_out || student_out->shape() != teacher_out.shape()) {
      throw std::invalid_argument("hardest negatives need student outputs shaped like the teacher's");
    }
  }

  KDTripletSet set;
  set.per_anchor_count.assign(n, 0);
  std::vector<std::size_t> candidates;
  for (std::size_t a = 0; a < n; ++a) {
    candidates.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (classes[j] != classes[a]) candidates.push_back(j);
    }
    if (candidates.empty()) continue;
    const std::size_t take = std::min(options.per_anchor, candidates.size());
    if (options.strategy == NegativeStrategy::random) {
      // Partial Fisher-Yates over the candidate list.
      for (std::size_t k = 0; k < take; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, candidates.size() - 1);
        std::swap(candidates[k], candidates[pick(rng)]);
      }
    } else {
      auto ta = teacher_out.row(a);
      std::vector<double> dist(n, 0.0);
      for (auto j : candidates) {
        auto sj = student_out->row(j);
        double d = 0.0;
        for (std::size_t k = 0; k < ta.size(); ++k) d += (ta[k] - sj[k]) * (ta[k] - sj[k]);
        dist[j] = d;
      }
      std::stable_sort(candidates.begin(), candidates.end(),
                       [&](std::size_t x, std::size_t y) { return dist[x] < dist[y]; });
    }
    for (std::size_t k = 0; k < take; ++k) set.entries.push_back({a, candidates[k]});
    set.per_anchor_count[a] = take;
  }
  return set;
}

}  // namespace distill
