#include "distill/losses.hpp"

#include <cmath>
#include <sstream>

namespace distill {

// ---- scalar reference forms -----------------------------------------------

double pairwise_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("pairwise_distance: width mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return std::sqrt(s);
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("kl_divergence: width mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] == 0.0) continue;
    s += p[k] * (std::log(std::max(p[k], kProbabilityFloor)) - std::log(std::max(q[k], kProbabilityFloor)));
  }
  return s;
}

double huber(double p, double q) {
  const double d = std::abs(p - q);
  return d <= 1.0 ? 0.5 * d * d : d - 0.5;
}

std::optional<double> psi_angle(std::span<const double> i, std::span<const double> j, std::span<const double> k) {
  if (i.size() != j.size() || k.size() != j.size()) throw ShapeError("psi_angle: width mismatch");
  const double nij = pairwise_distance(i, j);
  const double nkj = pairwise_distance(k, j);
  if (nij == 0.0 || nkj == 0.0) return std::nullopt;
  double dot = 0.0;
  for (std::size_t c = 0; c < j.size(); ++c) dot += (i[c] - j[c]) * (k[c] - j[c]);
  return dot / (nij * nkj);
}

std::optional<PsiNorm> parse_psi_norm(std::string_view s) {
  if (s == "sum") return PsiNorm::sum;
  if (s == "mean") return PsiNorm::mean;
  return std::nullopt;
}

std::string_view to_string(PsiNorm n) { return n == PsiNorm::sum ? "sum" : "mean"; }

std::vector<double> psi_distance(const Tensor& outputs, const PairSet& pairs, PsiNorm norm) {
  if (pairs.pairs.empty()) throw DegenerateBatch("psi_distance: empty pair set");
  std::vector<double> d;
  double total = 0.0;
  for (const auto& [i, j] : pairs.pairs) {
    d.push_back(pairwise_distance(outputs.row(i), outputs.row(j)));
    total += d.back();
  }
  if (total == 0.0) throw DegenerateBatch("psi_distance: all pair distances are zero");
  const double denom = norm == PsiNorm::sum ? total : total / static_cast<double>(d.size());
  for (auto& v : d) v /= denom;
  return d;
}

// ---- differentiable losses -------------------------------------------------

namespace {

struct PairIndex {
  std::vector<std::size_t> first, second;
};

PairIndex split_pairs(const PairSet& pairs) {
  PairIndex idx;
  for (const auto& [i, j] : pairs.pairs) {
    idx.first.push_back(i);
    idx.second.push_back(j);
  }
  return idx;
}

Var zero_scalar(Tape& tape) { return tape.constant(Tensor::scalar(0.0)); }

Var squared_distances(Var a, Var b) { return row_sum(square(a - b)); }

void require_pair_shapes(Var teacher, Var student, const char* what) {
  const Tensor& t = teacher.value();
  const Tensor& s = student.value();
  if (t.rank() != 2 || t.shape() != s.shape()) {
    throw ShapeError(std::string(what) + ": teacher " + shape_string(t.shape()) + " vs student " +
                     shape_string(s.shape()));
  }
}

bool coincident(std::span<const double> a, std::span<const double> b) {
  return pairwise_distance(a, b) < 1e-12;
}

}  // namespace

Var pair_distances(Var outputs, const PairSet& pairs) {
  if (pairs.pairs.empty()) throw DegenerateBatch("pair_distances: empty pair set");
  const PairIndex idx = split_pairs(pairs);
  return sqrt(squared_distances(gather_rows(outputs, idx.first), gather_rows(outputs, idx.second)));
}

Var contrastive_loss(Var embeddings, const PairSet& pairs, std::span<const int> similar, double margin) {
  if (pairs.pairs.empty()) throw DegenerateBatch("contrastive_loss: empty pair set");
  if (similar.size() != pairs.pairs.size()) throw std::invalid_argument("contrastive_loss: one label per pair");
  Tape& tape = *embeddings.tape;
  const std::size_t p = pairs.pairs.size();
  Tensor similar_mask(Shape{p}), dissimilar_mask(Shape{p});
  for (std::size_t k = 0; k < p; ++k) {
    if (similar[k] != 0 && similar[k] != 1) throw std::invalid_argument("contrastive_loss: labels must be 0 or 1");
    similar_mask[k] = similar[k];
    dissimilar_mask[k] = 1.0 - similar[k];
  }
  const PairIndex idx = split_pairs(pairs);
  const Var d2 = squared_distances(gather_rows(embeddings, idx.first), gather_rows(embeddings, idx.second));
  const Var hinge = relu(add_scalar(neg(sqrt(d2)), margin));
  const Var terms =
      tape.constant(std::move(similar_mask)) * d2 + tape.constant(std::move(dissimilar_mask)) * square(hinge);
  return scale(sum(terms), 1.0 / (2.0 * static_cast<double>(p)));
}

Var triplet_metric_loss(Var embeddings, std::span<const std::array<std::size_t, 3>> triplets, double margin) {
  if (triplets.empty()) throw DegenerateBatch("triplet_metric_loss: empty triplet set");
  std::vector<std::size_t> a, p, n;
  for (const auto& t : triplets) {
    a.push_back(t[0]);
    p.push_back(t[1]);
    n.push_back(t[2]);
  }
  const Var anchor = gather_rows(embeddings, a);
  const Var d_ap = squared_distances(anchor, gather_rows(embeddings, p));
  const Var d_an = squared_distances(anchor, gather_rows(embeddings, n));
  return sum(relu(add_scalar(d_ap - d_an, margin)));
}

Var bkd_loss(Var teacher, Var student) {
  require_pair_shapes(teacher, student, "bkd_loss");
  return scale(sum(square(teacher - student)), 0.5);
}

Var kl_divergence(Var p, Var q) {
  require_pair_shapes(p, q, "kl_divergence");
  const Var log_p = log(clamp_min(p, kProbabilityFloor));
  const Var log_q = log(clamp_min(q, kProbabilityFloor));
  return sum(p * (log_p - log_q));
}

Var hkd_loss(Var teacher_logits, Var student_logits, double temperature, bool t2_scaling) {
  if (!(temperature > 0.0)) throw std::invalid_argument("hkd_loss: temperature must be positive");
  require_pair_shapes(teacher_logits, student_logits, "hkd_loss");
  const double inv_t = 1.0 / temperature;
  const double log_floor = std::log(kProbabilityFloor);
  const Var p = softmax_rows(scale(teacher_logits, inv_t));
  const Var log_p = clamp_min(log_softmax_rows(scale(teacher_logits, inv_t)), log_floor);
  const Var log_q = clamp_min(log_softmax_rows(scale(student_logits, inv_t)), log_floor);
  const Var kl = sum(p * (log_p - log_q));
  return t2_scaling ? scale(kl, temperature * temperature) : kl;
}

Var psi_distance(Var outputs, const PairSet& pairs, PsiNorm norm) {
  const Var d = pair_distances(outputs, pairs);
  const Var total = sum(d);
  if (total.value().item() == 0.0) throw DegenerateBatch("psi_distance: all pair distances are zero");
  const Var denom = norm == PsiNorm::sum ? total : scale(total, 1.0 / static_cast<double>(pairs.pairs.size()));
  return div_scalar(d, denom);
}

Var rkd_d_loss(const PairSet& pairs, Var teacher, Var student, PsiNorm norm) {
  require_pair_shapes(teacher, student, "rkd_d_loss");
  return sum(huber(psi_distance(teacher, pairs, norm) - psi_distance(student, pairs, norm)));
}

Var psi_angles(Var outputs, std::span<const std::array<std::size_t, 3>> triplets) {
  if (triplets.empty()) throw DegenerateBatch("psi_angles: empty triplet set");
  std::vector<std::size_t> i, j, k;
  for (const auto& t : triplets) {
    i.push_back(t[0]);
    j.push_back(t[1]);
    k.push_back(t[2]);
  }
  const Var vertex = gather_rows(outputs, j);
  const Var e_ij = gather_rows(outputs, i) - vertex;
  const Var e_kj = gather_rows(outputs, k) - vertex;
  const Var norms = sqrt(row_sum(square(e_ij))) * sqrt(row_sum(square(e_kj)));
  return row_sum(e_ij * e_kj) / norms;
}

Var rkd_a_loss(const TripletSet& triplets, Var teacher, Var student) {
  require_pair_shapes(teacher, student, "rkd_a_loss");
  std::vector<std::array<std::size_t, 3>> valid;
  const Tensor& t = teacher.value();
  const Tensor& s = student.value();
  for (const auto& tr : triplets.triplets) {
    const bool degenerate = coincident(t.row(tr[0]), t.row(tr[1])) || coincident(t.row(tr[2]), t.row(tr[1])) ||
                            coincident(s.row(tr[0]), s.row(tr[1])) || coincident(s.row(tr[2]), s.row(tr[1]));
    if (!degenerate) valid.push_back(tr);
  }
  if (valid.empty()) throw DegenerateBatch("rkd_a_loss: every angle triplet is degenerate");
  return sum(huber(psi_angles(teacher, valid) - psi_angles(student, valid)));
}

Var rkd_da_loss(const PairSet& pairs, const TripletSet& triplets, Var teacher, Var student, double weight_d,
                double weight_a, PsiNorm norm) {
  if (weight_d < 0.0 || weight_a < 0.0) throw std::invalid_argument("rkd_da_loss: weights must be non-negative");
  Var total = zero_scalar(*teacher.tape);
  if (weight_d != 0.0) total = total + scale(rkd_d_loss(pairs, teacher, student, norm), weight_d);
  if (weight_a != 0.0) total = total + scale(rkd_a_loss(triplets, teacher, student), weight_a);
  return total;
}

Var triplet_kd_loss(const KDTripletSet& omega, Var teacher, Var student, double margin,
                    LossDiagnostics* diagnostics) {
  require_pair_shapes(teacher, student, "triplet_kd_loss");
  if (omega.entries.empty()) {
    if (diagnostics) ++diagnostics->empty_omega;
    return zero_scalar(*student.tape);
  }
  std::vector<std::size_t> anchors, negatives;
  for (const auto& [a, n] : omega.entries) {
    anchors.push_back(a);
    negatives.push_back(n);
  }
  const Var t_a = gather_rows(teacher, anchors);
  const Var positive = squared_distances(t_a, gather_rows(student, anchors));
  const Var negative = squared_distances(t_a, gather_rows(student, negatives));
  return sum(relu(add_scalar(positive - negative, margin)));
}

Var cross_entropy_loss(Var logits, std::span<const std::size_t> labels) {
  const Tensor& z = logits.value();
  if (z.rank() != 2 || labels.size() != z.dim(0)) {
    throw ShapeError("cross_entropy_loss: logits " + shape_string(z.shape()) + " with " +
                     std::to_string(labels.size()) + " labels");
  }
  for (auto y : labels) {
    if (y >= z.dim(1)) throw std::out_of_range("cross_entropy_loss: label " + std::to_string(y) + " out of range");
  }
  return scale(sum(pick(log_softmax_rows(logits), labels)), -1.0 / static_cast<double>(labels.size()));
}

// ---- combination -----------------------------------------------------------

namespace {

constexpr std::array<std::string_view, kSoftLosses.size()> kSoftLossNames{"bkd", "hkd", "rkd_d", "rkd_a",
                                                                          "triplet_kd"};

}  // namespace

std::string_view to_string(SoftLoss kind) { return kSoftLossNames[static_cast<std::size_t>(kind)]; }

std::optional<SoftLoss> parse_soft_loss(std::string_view name) {
  if (name == "ours") return SoftLoss::triplet_kd;
  for (std::size_t i = 0; i < kSoftLossNames.size(); ++i) {
    if (kSoftLossNames[i] == name) return kSoftLosses[i];
  }
  return std::nullopt;
}

std::optional<TargetSpace> parse_target_space(std::string_view s) {
  if (s == "logits") return TargetSpace::logits;
  if (s == "softmax") return TargetSpace::softmax;
  return std::nullopt;
}

std::string_view to_string(TargetSpace s) { return s == TargetSpace::logits ? "logits" : "softmax"; }

double LossSpec::weight(SoftLoss kind) const {
  double w = 0.0;
  for (const auto& t : terms) {
    if (t.kind == kind) w += t.weight;
  }
  return w;
}

void LossSpec::validate() const {
  std::ostringstream errors;
  for (const auto& t : terms) {
    if (!(t.weight >= 0.0) || !std::isfinite(t.weight)) {
      errors << "weight of " << to_string(t.kind) << " must be a non-negative number; ";
    }
  }
  if (!(temperature > 0.0) || !std::isfinite(temperature)) errors << "temperature must be positive; ";
  if (!(margin >= 0.0) || !std::isfinite(margin)) errors << "margin must be non-negative; ";
  const std::string msg = errors.str();
  if (!msg.empty()) throw std::invalid_argument(msg.substr(0, msg.size() - 2));
}

LossBreakdown combined_loss(const LossSpec& spec, const BatchOutputs& batch, LossDiagnostics* diagnostics) {
  require_pair_shapes(batch.teacher, batch.student, "combined_loss");
  LossBreakdown out;
  const Var hard = cross_entropy_loss(batch.student, batch.labels);
  out.hard = hard.value().item();
  out.total = hard;

  const bool relational = spec.uses(SoftLoss::rkd_d) || spec.uses(SoftLoss::rkd_a) || spec.uses(SoftLoss::triplet_kd);
  if (relational && !batch.index_sets) throw std::invalid_argument("combined_loss: relational terms need index sets");

  Var t = batch.teacher, s = batch.student;
  if (spec.target_space == TargetSpace::softmax) {
    t = softmax_rows(t);
    s = softmax_rows(s);
  }
  for (std::size_t k = 0; k < kSoftLosses.size(); ++k) {
    const SoftLoss kind = kSoftLosses[k];
    const double w = spec.weight(kind);
    if (w == 0.0) continue;
    Var term;
    switch (kind) {
      case SoftLoss::bkd:
        term = bkd_loss(t, s);
        break;
      case SoftLoss::hkd:
        term = hkd_loss(batch.teacher, batch.student, spec.temperature, spec.hkd_t2_scaling);
        break;
      case SoftLoss::rkd_d:
        term = rkd_d_loss(batch.index_sets->pairs, t, s, spec.psi_norm);
        break;
      case SoftLoss::rkd_a:
        term = rkd_a_loss(batch.index_sets->triplets, t, s);
        break;
      case SoftLoss::triplet_kd:
        term = triplet_kd_loss(batch.index_sets->negatives, t, s, spec.margin, diagnostics);
        break;
    }
    out.soft[k] = term.value().item();
    out.total = out.total + scale(term, w);
  }
  return out;
}

}  // namespace distill
