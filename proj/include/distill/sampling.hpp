#pragma once

#include <array>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "distill/random.hpp"
#include "distill/tensor.hpp"

namespace distill {

/// Distinct unordered pairs (i < j) drawn from a mini-batch.
struct PairSet {
  std::vector<std::array<std::size_t, 2>> pairs;
  bool truncated = false;  // request exceeded the number of distinct pairs
};

/// Ordered triples of distinct indices; no triple is repeated.
struct TripletSet {
  std::vector<std::array<std::size_t, 3>> triplets;
  bool truncated = false;
};

/// Anchor/negative pairs for the triplet distillation loss.
struct KDTripletSet {
  std::vector<std::array<std::size_t, 2>> entries;  // (anchor, negative)
  std::vector<std::size_t> per_anchor_count;        // indexed by batch position
};

struct BatchIndexSets {
  PairSet pairs;
  TripletSet triplets;
  KDTripletSet negatives;
};

enum class NegativeStrategy { random, hardest };
enum class NegativeBy { teacher_argmax, ground_truth };

std::optional<NegativeStrategy> parse_negative_strategy(std::string_view s);
std::optional<NegativeBy> parse_negative_by(std::string_view s);
std::string_view to_string(NegativeStrategy s);
std::string_view to_string(NegativeBy b);

PairSet sample_pairs(std::size_t batch_size, std::size_t count, Rng& rng);
TripletSet sample_triplets(std::size_t batch_size, std::size_t count, Rng& rng);

/// Row-wise argmax; ties go to the lowest class index.
std::vector<std::size_t> argmax_rows(const Tensor& scores);

struct NegativeOptions {
  std::size_t per_anchor = 1;
  NegativeStrategy strategy = NegativeStrategy::random;
  NegativeBy by = NegativeBy::teacher_argmax;
};

/// Every batch member is an anchor. Negatives are members whose class differs
/// from the anchor's class (the teacher's argmax by default). `hardest` takes
/// the candidates with the smallest ||t(x_a) - s(x_n)|| and needs
/// `student_out`; `ground_truth` needs `labels`.
KDTripletSet sample_kd_negatives(const Tensor& teacher_out, const NegativeOptions& options, Rng& rng,
                                 const Tensor* student_out = nullptr, std::span<const std::size_t> labels = {});

}  // namespace distill
