#include "distill/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace distill {

Tensor Gradients::of(Var v) const {
  if (has(v)) return *grads_[v.id];
  return Tensor::zeros_like(v.value());
}

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, true});
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(std::move(value), std::vector<Var>(inputs), std::move(backward));
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
  Node node{std::move(value), {}, {}, false};
  node.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    if (in.tape != this) throw GraphError("operation mixes nodes from different tapes");
    node.inputs.push_back(in.id);
    node.requires_grad = node.requires_grad || nodes_[in.id].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Gradients Tape::backward(Var output) const {
  if (output.tape != this) throw GraphError("backward on a node from another tape");
  const Tensor& out_value = nodes_.at(output.id).value;
  if (out_value.size() != 1) {
    throw GraphError("backward requires a scalar output, got shape " + shape_string(out_value.shape()));
  }
  std::vector<std::optional<Tensor>> grads(output.id + 1);
  if (!nodes_[output.id].requires_grad) return Gradients(std::move(grads));
  grads[output.id] = Tensor::ones_like(out_value);

  std::vector<const Tensor*> in_values;
  std::vector<Tensor*> in_grads;
  for (std::size_t i = output.id + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (!grads[i] || !node.backward) continue;
    in_values.clear();
    in_grads.clear();
    for (auto j : node.inputs) {
      in_values.push_back(&nodes_[j].value);
      if (nodes_[j].requires_grad) {
        if (!grads[j]) grads[j] = Tensor::zeros_like(nodes_[j].value);
        in_grads.push_back(&*grads[j]);
      } else {
        in_grads.push_back(nullptr);
      }
    }
    node.backward(BackwardArgs{*grads[i], node.value, in_values, in_grads});
    grads[i].reset();  // only leaf gradients are reported
  }
  return Gradients(std::move(grads));
}

// ---- branch recording ------------------------------------------------------

namespace {
thread_local BranchRecorder* g_active_recorder = nullptr;
}

BranchRecorder::BranchRecorder() : previous_(g_active_recorder) { g_active_recorder = this; }
BranchRecorder::~BranchRecorder() { g_active_recorder = previous_; }
BranchRecorder* BranchRecorder::active() { return g_active_recorder; }

void BranchRecorder::note(std::uint64_t branch) {
  hash_ ^= branch + 0x9e3779b97f4a7c15ULL;
  hash_ *= 1099511628211ULL;
}

// ---- elementwise -----------------------------------------------------------

namespace {

template <typename Fwd, typename Deriv>
Var unary(Var a, Fwd fwd, Deriv deriv) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
  return a.tape->record(std::move(out), {a}, [deriv](const BackwardArgs& args) {
    const Tensor& x = *args.inputs[0];
    Tensor& gx = *args.input_grads[0];
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += args.grad[i] * deriv(x[i], args.output[i]);
  });
}

}  // namespace

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  out += b.value();
  return a.tape->record(std::move(out), {a, b}, [](const BackwardArgs& args) {
    if (auto* g = args.input_grads[0]) *g += args.grad;
    if (auto* g = args.input_grads[1]) *g += args.grad;
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  return a.tape->record(std::move(out), {a, b}, [](const BackwardArgs& args) {
    if (auto* g = args.input_grads[0]) *g += args.grad;
    if (auto* g = args.input_grads[1]) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= args.grad[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return a.tape->record(std::move(out), {a, b}, [](const BackwardArgs& args) {
    const Tensor& x = *args.inputs[0];
    const Tensor& y = *args.inputs[1];
    if (auto* g = args.input_grads[0]) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += args.grad[i] * y[i];
    }
    if (auto* g = args.input_grads[1]) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += args.grad[i] * x[i];
    }
  });
}

Var div(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "div");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / y[i];
  return a.tape->record(std::move(out), {a, b}, [](const BackwardArgs& args) {
    const Tensor& y = *args.inputs[1];
    if (auto* g = args.input_grads[0]) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += args.grad[i] / y[i];
    }
    if (auto* g = args.input_grads[1]) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= args.grad[i] * args.output[i] / y[i];
    }
  });
}

Var neg(Var a) { return scale(a, -1.0); }

Var scale(Var a, double factor) {
  return unary(a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Var add_scalar(Var a, double c) {
  return unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sqrt(Var a) {
  return unary(
      a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var relu(Var a) {
  return unary(
      a,
      [](double x) {
        note_branch(x > 0.0);
        return x > 0.0 ? x : 0.0;
      },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var clamp_min(Var a, double floor) {
  return unary(
      a,
      [floor](double x) {
        note_branch(x > floor);
        return x > floor ? x : floor;
      },
      [floor](double x, double) { return x > floor ? 1.0 : 0.0; });
}

Var huber(Var residual) {
  return unary(
      residual,
      [](double r) {
        const double ar = std::abs(r);
        note_branch(ar <= 1.0 ? 0 : (r > 0 ? 1 : 2));
        return ar <= 1.0 ? 0.5 * r * r : ar - 0.5;
      },
      [](double r, double) {
        if (std::abs(r) <= 1.0) return r;
        return r > 0.0 ? 1.0 : -1.0;
      });
}

Var mul_scalar(Var x, Var s) {
  const double c = s.value().item();
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * c;
  return x.tape->record(std::move(out), {x, s}, [](const BackwardArgs& args) {
    const Tensor& xv = *args.inputs[0];
    const double c = args.inputs[1]->item();
    if (auto* g = args.input_grads[0]) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += args.grad[i] * c;
    }
    if (auto* g = args.input_grads[1]) {
      double acc = 0.0;
      for (std::size_t i = 0; i < xv.size(); ++i) acc += args.grad[i] * xv[i];
      (*g)[0] += acc;
    }
  });
}

Var div_scalar(Var x, Var s) {
  const double c = s.value().item();
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] / c;
  return x.tape->record(std::move(out), {x, s}, [](const BackwardArgs& args) {
    const double c = args.inputs[1]->item();
    if (auto* g = args.input_grads[0]) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += args.grad[i] / c;
    }
    if (auto* g = args.input_grads[1]) {
      double acc = 0.0;
      for (std::size_t i = 0; i < args.output.size(); ++i) acc += args.grad[i] * args.output[i];
      (*g)[0] -= acc / c;
    }
  });
}

// ---- reductions and shape --------------------------------------------------

Var sum(Var a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return a.tape->record(Tensor::scalar(total), {a}, [](const BackwardArgs& args) {
    const double g = args.grad.item();
    for (auto& v : args.input_grads[0]->data()) v += g;
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var row_sum(Var a) {
  const Tensor& x = a.value();
  if (x.rank() == 0) throw ShapeError("row_sum on a scalar");
  const std::size_t rows = x.dim(0);
  Tensor out(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (double v : x.row(r)) acc += v;
    out[r] = acc;
  }
  return a.tape->record(std::move(out), {a}, [](const BackwardArgs& args) {
    Tensor& g = *args.input_grads[0];
    for (std::size_t r = 0; r < args.grad.size(); ++r) {
      for (auto& v : g.row(r)) v += args.grad[r];
    }
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape->record(std::move(out), {a}, [](const BackwardArgs& args) {
    Tensor& g = *args.input_grads[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += args.grad[i];
  });
}

Var gather_rows(Var a, std::span<const std::size_t> indices) {
  const Tensor& x = a.value();
  if (x.rank() == 0) throw ShapeError("gather_rows on a scalar");
  Shape shape = x.shape();
  shape[0] = indices.size();
  if (indices.empty()) throw ShapeError("gather_rows with no indices");
  Tensor out(shape);
  const std::size_t width = x.row_size();
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= x.dim(0)) throw ShapeError("gather_rows index out of range");
    std::copy_n(x.row(indices[r]).begin(), width, out.row(r).begin());
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return a.tape->record(std::move(out), {a}, [idx = std::move(idx)](const BackwardArgs& args) {
    Tensor& g = *args.input_grads[0];
    for (std::size_t r = 0; r < idx.size(); ++r) {
      auto src = args.grad.row(r);
      auto dst = g.row(idx[r]);
      for (std::size_t k = 0; k < src.size(); ++k) dst[k] += src[k];
    }
  });
}

Var pick(Var a, std::span<const std::size_t> cols) {
  const Tensor& x = a.value();
  if (x.rank() != 2 || cols.size() != x.dim(0)) throw ShapeError("pick expects [N,K] and N column indices");
  const std::size_t k = x.dim(1);
  Tensor out(Shape{cols.size()});
  for (std::size_t r = 0; r < cols.size(); ++r) {
    if (cols[r] >= k) throw ShapeError("pick column out of range");
    out[r] = x[r * k + cols[r]];
  }
  std::vector<std::size_t> c(cols.begin(), cols.end());
  return a.tape->record(std::move(out), {a}, [c = std::move(c), k](const BackwardArgs& args) {
    Tensor& g = *args.input_grads[0];
    for (std::size_t r = 0; r < c.size(); ++r) g[r * k + c[r]] += args.grad[r];
  });
}

// ---- matrix and softmax ----------------------------------------------------

Var matmul(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_string(x.shape()) + " x " + shape_string(y.shape()));
  }
  const std::size_t n = x.dim(0), kk = x.dim(1), m = y.dim(1);
  Tensor out(Shape{n, m});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < kk; ++p) {
      const double xv = x[i * kk + p];
      for (std::size_t j = 0; j < m; ++j) out[i * m + j] += xv * y[p * m + j];
    }
  }
  return a.tape->record(std::move(out), {a, b}, [n, kk, m](const BackwardArgs& args) {
    const Tensor& x = *args.inputs[0];
    const Tensor& y = *args.inputs[1];
    const Tensor& g = args.grad;
    if (auto* gx = args.input_grads[0]) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < kk; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < m; ++j) acc += g[i * m + j] * y[p * m + j];
          (*gx)[i * kk + p] += acc;
        }
    }
    if (auto* gy = args.input_grads[1]) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < kk; ++p) {
          const double xv = x[i * kk + p];
          for (std::size_t j = 0; j < m; ++j) (*gy)[p * m + j] += xv * g[i * m + j];
        }
    }
  });
}

Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("softmax expects [N,K], got " + shape_string(logits.shape()));
  Tensor out(logits.shape());
  for (std::size_t r = 0; r < logits.dim(0); ++r) {
    auto in = logits.row(r);
    auto o = out.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (std::size_t k = 0; k < in.size(); ++k) z += (o[k] = std::exp(in[k] - mx));
    for (auto& v : o) v /= z;
  }
  return out;
}

Tensor log_softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("log_softmax expects [N,K], got " + shape_string(logits.shape()));
  Tensor out(logits.shape());
  for (std::size_t r = 0; r < logits.dim(0); ++r) {
    auto in = logits.row(r);
    auto o = out.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (double v : in) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    for (std::size_t k = 0; k < in.size(); ++k) o[k] = in[k] - lse;
  }
  return out;
}

Var softmax_rows(Var a) {
  return a.tape->record(softmax_rows(a.value()), {a}, [](const BackwardArgs& args) {
    const Tensor& y = args.output;
    Tensor& gx = *args.input_grads[0];
    for (std::size_t r = 0; r < y.dim(0); ++r) {
      auto yr = y.row(r);
      auto gr = args.grad.row(r);
      double dot = 0.0;
      for (std::size_t k = 0; k < yr.size(); ++k) dot += gr[k] * yr[k];
      auto out = gx.row(r);
      for (std::size_t k = 0; k < yr.size(); ++k) out[k] += yr[k] * (gr[k] - dot);
    }
  });
}

Var log_softmax_rows(Var a) {
  return a.tape->record(log_softmax_rows(a.value()), {a}, [](const BackwardArgs& args) {
    const Tensor& y = args.output;
    Tensor& gx = *args.input_grads[0];
    for (std::size_t r = 0; r < y.dim(0); ++r) {
      auto yr = y.row(r);
      auto gr = args.grad.row(r);
      double total = 0.0;
      for (double v : gr) total += v;
      auto out = gx.row(r);
      for (std::size_t k = 0; k < yr.size(); ++k) out[k] += gr[k] - std::exp(yr[k]) * total;
    }
  });
}

}  // namespace distill
