#pragma once

#include "distill/autodiff.hpp"
#include "distill/random.hpp"

namespace distill {

/// 2-D cross-correlation with zero padding, stride 1.
/// x: [N, Cin, H, W], weights: [Cout, Cin, kh, kw], bias: [Cout]
/// -> [N, Cout, H + 2 pad - kh + 1, W + 2 pad - kw + 1]
Var conv2d(Var x, Var weights, Var bias, std::size_t padding);

/// Non-overlapping 2x2 max with stride 2; an odd trailing row/column is dropped.
/// Ties go to the first element in row-major block order.
Var maxpool2x2(Var x);

/// x: [N, in], weights: [out, in], bias: [out] -> x W^T + b
Var linear(Var x, Var weights, Var bias);

struct ChannelStats {
  Tensor mean;
  Tensor variance;  // biased (divides by count)
  std::size_t count = 0;
};

/// Training-mode batch normalization over [N, C, H, W] (or [N, C]) with batch
/// statistics. When `stats` is non-null it receives the per-channel batch stats.
Var batchnorm_train(Var x, Var gamma, Var beta, double eps, ChannelStats* stats = nullptr);

/// Inference-mode batch normalization using running statistics.
Var batchnorm_infer(Var x, Var gamma, Var beta, const Tensor& running_mean, const Tensor& running_var, double eps);

/// Inverted dropout. Identity when !training or rate == 0.
Var dropout(Var x, double rate, bool training, Rng& rng);

}  // namespace distill
