#pragma once

// Reverse-mode automatic differentiation over an append-only tape.
//
// Nodes are recorded in creation order, so the tape is always topologically
// sorted and backward() is a single reverse sweep. Gradients accumulate into
// each input in that fixed order, which makes repeated runs bit-identical.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "distill/tensor.hpp"

namespace distill {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
};

struct BackwardArgs {
  const Tensor& grad;    // dE/d(output)
  const Tensor& output;  // forward value of this node
  std::span<const Tensor* const> inputs;
  std::span<Tensor* const> input_grads;  // nullptr where no gradient flows
};

using BackwardFn = std::function<void(const BackwardArgs&)>;

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Gradients of a scalar with respect to the leaves of a tape.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::vector<std::optional<Tensor>> grads) : grads_(std::move(grads)) {}

  /// Gradient of `v`; an all-zero tensor of v's shape if none reached it.
  Tensor of(Var v) const;
  bool has(Var v) const { return v.id < grads_.size() && grads_[v.id].has_value(); }

 private:
  std::vector<std::optional<Tensor>> grads_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable input (parameters, inputs under test).
  Var leaf(Tensor value);
  /// Input that never receives gradient (data, frozen teacher outputs).
  Var constant(Tensor value);
  /// Records the result of an operation. The node requires grad iff any input does.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward);

  /// Reverse sweep from a single-element output.
  Gradients backward(Var output) const;

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->value(id); }
inline bool Var::requires_grad() const { return tape->requires_grad(id); }

// Kink bookkeeping for gradient checking. Operations with a non-differentiable
// point (relu, max, hinge, huber, clamp) report which branch each element took.
// While a BranchRecorder is alive on this thread those reports are folded into a
// signature; a finite difference whose two probes disagree with the base
// signature straddled a kink and is skipped.
class BranchRecorder {
 public:
  BranchRecorder();
  ~BranchRecorder();
  BranchRecorder(const BranchRecorder&) = delete;
  BranchRecorder& operator=(const BranchRecorder&) = delete;

  std::uint64_t signature() const { return hash_; }
  void reset() { hash_ = kSeed; }
  void note(std::uint64_t branch);

  static BranchRecorder* active();

 private:
  static constexpr std::uint64_t kSeed = 1469598103934665603ULL;
  std::uint64_t hash_ = kSeed;
  BranchRecorder* previous_ = nullptr;
};

inline void note_branch(std::uint64_t branch) {
  if (auto* r = BranchRecorder::active()) r->note(branch);
}

// ---- elementwise -----------------------------------------------------------
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double factor);
Var add_scalar(Var a, double c);
Var square(Var a);
/// sqrt with derivative 0 at exactly 0 (distance of coincident points).
Var sqrt(Var a);
Var exp(Var a);
Var log(Var a);
Var relu(Var a);
/// max(a, floor) elementwise; gradient passes only where a > floor.
Var clamp_min(Var a, double floor);
/// Huber penalty of a residual: r^2/2 for |r| <= 1, |r| - 1/2 otherwise.
Var huber(Var residual);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator-(Var a) { return neg(a); }

/// x * s where s is a single-element node.
Var mul_scalar(Var x, Var s);
/// x / s where s is a single-element node.
Var div_scalar(Var x, Var s);

// ---- reductions and shape --------------------------------------------------
Var sum(Var a);
Var mean(Var a);
/// [N, ...] -> [N]: sum over everything but the leading axis.
Var row_sum(Var a);
Var reshape(Var a, Shape shape);
/// Rows of `a` at `indices` (repeats allowed). Backward scatters in index order.
Var gather_rows(Var a, std::span<const std::size_t> indices);
/// out[i] = a[i, cols[i]] for a of shape [N, K].
Var pick(Var a, std::span<const std::size_t> cols);

// ---- matrix and softmax ----------------------------------------------------
/// [N, K] x [K, M] -> [N, M]
Var matmul(Var a, Var b);
/// Row-wise softmax over the last axis of an [N, K] node.
Var softmax_rows(Var a);
Var log_softmax_rows(Var a);

// Plain-tensor helpers shared by ops and samplers.
Tensor softmax_rows(const Tensor& logits);
Tensor log_softmax_rows(const Tensor& logits);

}  // namespace distill
