#pragma once

// Distillation and metric-learning losses. Every loss maps teacher/student
// outputs (plus index sets or labels) to a scalar node; teacher outputs are
// expected to be constants on the tape so gradients reach the student only.

#include <array>
#include <optional>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "distill/autodiff.hpp"
#include "distill/sampling.hpp"

namespace distill {

/// Raised when an index set carries no usable relation (all distances zero,
/// every angle triplet degenerate, empty pair set).
class DegenerateBatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kProbabilityFloor = 1e-12;

// ---- scalar reference forms -----------------------------------------------

double pairwise_distance(std::span<const double> a, std::span<const double> b);
/// sum p_i ln(p_i / q_i) with q (and p inside the log) floored at 1e-12.
double kl_divergence(std::span<const double> p, std::span<const double> q);
double huber(double p, double q);
/// Cosine of the angle at j formed by i and k; nullopt when i or k coincides with j.
std::optional<double> psi_angle(std::span<const double> i, std::span<const double> j, std::span<const double> k);

enum class PsiNorm { sum, mean };
std::optional<PsiNorm> parse_psi_norm(std::string_view s);
std::string_view to_string(PsiNorm n);

/// Normalized pair distances over `pairs` for outputs [N, K].
std::vector<double> psi_distance(const Tensor& outputs, const PairSet& pairs, PsiNorm norm = PsiNorm::sum);

// ---- differentiable losses -------------------------------------------------

/// ||out_i - out_j||_2 per pair -> [P]
Var pair_distances(Var outputs, const PairSet& pairs);

/// (1 / 2|X2|) sum [ l D^2 + (1 - l) max(m - D, 0)^2 ]; `similar[p]` is l for pair p.
Var contrastive_loss(Var embeddings, const PairSet& pairs, std::span<const int> similar, double margin);

/// sum over (a, p, n) of max(0, m + ||f_a - f_p||^2 - ||f_a - f_n||^2)
Var triplet_metric_loss(Var embeddings, std::span<const std::array<std::size_t, 3>> triplets, double margin);

/// (1/2) sum_i ||t_i - s_i||^2, summed over the batch.
Var bkd_loss(Var teacher, Var student);

/// Row-wise KL(p || q) summed over rows, for probability tensors [N, K].
Var kl_divergence(Var p, Var q);

/// sum_i KL(softmax(t_i / T) || softmax(s_i / T)); optionally scaled by T^2.
Var hkd_loss(Var teacher_logits, Var student_logits, double temperature, bool t2_scaling = false);

Var psi_distance(Var outputs, const PairSet& pairs, PsiNorm norm = PsiNorm::sum);
Var rkd_d_loss(const PairSet& pairs, Var teacher, Var student, PsiNorm norm = PsiNorm::sum);

/// Cosines for the given triplets (i, j, k), angle at j -> [M]. Callers filter
/// degenerate triplets first.
Var psi_angles(Var outputs, std::span<const std::array<std::size_t, 3>> triplets);
/// Triplets where either side has coincident outputs are skipped.
Var rkd_a_loss(const TripletSet& triplets, Var teacher, Var student);
Var rkd_da_loss(const PairSet& pairs, const TripletSet& triplets, Var teacher, Var student, double weight_d,
                double weight_a, PsiNorm norm = PsiNorm::sum);

struct LossDiagnostics {
  std::size_t empty_omega = 0;        // batches where no anchor had a negative
  std::size_t skipped_angles = 0;     // degenerate RKD-A triplets dropped
};

/// sum over (a, n) in Omega of max(0, m + ||t_a - s_a||^2 - ||t_a - s_n||^2).
/// An empty Omega yields 0 and bumps diagnostics->empty_omega.
Var triplet_kd_loss(const KDTripletSet& omega, Var teacher, Var student, double margin,
                    LossDiagnostics* diagnostics = nullptr);

/// Mean over the batch of -ln softmax(s_i)[y_i].
Var cross_entropy_loss(Var logits, std::span<const std::size_t> labels);

// ---- combination -----------------------------------------------------------

enum class SoftLoss { bkd, hkd, rkd_d, rkd_a, triplet_kd };
inline constexpr std::array<SoftLoss, 5> kSoftLosses{SoftLoss::bkd, SoftLoss::hkd, SoftLoss::rkd_d, SoftLoss::rkd_a,
                                                     SoftLoss::triplet_kd};
std::string_view to_string(SoftLoss kind);
std::optional<SoftLoss> parse_soft_loss(std::string_view name);

/// Which outputs BKD, RKD and the triplet distillation loss compare.
enum class TargetSpace { logits, softmax };
std::optional<TargetSpace> parse_target_space(std::string_view s);
std::string_view to_string(TargetSpace s);

struct LossTerm {
  SoftLoss kind;
  double weight;
};

struct LossSpec {
  std::vector<LossTerm> terms;
  double temperature = 4.0;
  double margin = 5.0;
  bool hkd_t2_scaling = false;
  PsiNorm psi_norm = PsiNorm::sum;
  TargetSpace target_space = TargetSpace::logits;

  double weight(SoftLoss kind) const;
  bool uses(SoftLoss kind) const { return weight(kind) != 0.0; }
  /// Throws std::invalid_argument listing every violation.
  void validate() const;
};

struct BatchOutputs {
  Var teacher;  // [N, K], constant
  Var student;  // [N, K]
  std::span<const std::size_t> labels;
  const BatchIndexSets* index_sets = nullptr;
};

struct LossBreakdown {
  Var total;
  double hard = 0.0;
  std::array<double, kSoftLosses.size()> soft{};  // unweighted term values, 0 when inactive
};

/// E_hard + sum of weight * E_term over the active soft terms.
LossBreakdown combined_loss(const LossSpec& spec, const BatchOutputs& batch, LossDiagnostics* diagnostics = nullptr);

}  // namespace distill
