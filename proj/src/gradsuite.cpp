#include "distill/gradsuite.hpp"

#include <algorithm>
#include <functional>
#include <memory>
#include <numeric>

#include "distill/layers.hpp"
#include "distill/losses.hpp"
#include "distill/random.hpp"
#include "distill/sampling.hpp"

namespace distill {

bool SuiteReport::passed() const {
  return std::all_of(cases.begin(), cases.end(), [](const SuiteCase& c) { return c.passed(); });
}

namespace {

struct Fixture {
  std::vector<Tensor> inputs;
  std::vector<std::string> names;
  TapeFn fn;
};

using Builder = std::function<Fixture(Rng&)>;

Tensor randn(Shape shape, Rng& rng, double sd = 1.0) {
  std::normal_distribution<double> normal(0.0, sd);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = normal(rng);
  return t;
}

// Scalar probe of a non-scalar output: sum(out * R) with a fixed random R.
Var probe(Var out, const Tensor& weights) { return sum(mul(out, out.tape->constant(weights))); }

constexpr std::size_t kBatch = 6;
constexpr std::size_t kClasses = 5;

std::vector<std::size_t> random_labels(std::size_t n, std::size_t k, Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, k - 1);
  std::vector<std::size_t> out(n);
  for (auto& y : out) y = pick(rng);
  return out;
}

// Student-vs-teacher loss fixture: the teacher is a captured constant.
Fixture distill_fixture(Rng& rng, std::function<Var(Var, Var)> loss) {
  Tensor teacher = randn({kBatch, kClasses}, rng);
  Tensor student = randn({kBatch, kClasses}, rng);
  return {{student}, {"student"}, [teacher, loss](Tape& tape, std::span<const Var> in) {
            return loss(tape.constant(teacher), in[0]);
          }};
}

// Triplets in which no anchor meets the same partner twice. A repeated
// (anchor, partner) in opposite roles cancels exactly, leaving a zero gradient
// that central differences only resolve to roundoff.
TripletSet distinct_partner_triplets(std::size_t n, std::size_t count, Rng& rng) {
  TripletSet drawn = sample_triplets(n, n * (n - 1) * (n - 2), rng);
  TripletSet out;
  std::vector<std::vector<bool>> used(n, std::vector<bool>(n, false));
  for (const auto& t : drawn.triplets) {
    if (out.triplets.size() == count) break;
    if (used[t[0]][t[1]] || used[t[0]][t[2]]) continue;
    used[t[0]][t[1]] = used[t[0]][t[2]] = true;
    out.triplets.push_back(t);
  }
  return out;
}

Var wrong_square(Var x) {
  // Deliberately broken: reports 3x instead of 2x.
  Tensor out = x.value();
  for (auto& v : out.data()) v *= v;
  return x.tape->record(std::move(out), {x}, [](const BackwardArgs& args) {
    if (Tensor* gx = args.input_grads[0]) {
      const Tensor& in = *args.inputs[0];
      for (std::size_t i = 0; i < in.size(); ++i) (*gx)[i] += 3.0 * in[i] * args.grad[i];
    }
  });
}

std::vector<std::pair<std::string, Builder>> builders(bool inject_fault) {
  std::vector<std::pair<std::string, Builder>> out;

  out.emplace_back("contrastive", [](Rng& rng) {
    Tensor emb = randn({kBatch, 4}, rng);
    auto pairs = std::make_shared<PairSet>(sample_pairs(kBatch, 15, rng));
    auto similar = std::make_shared<std::vector<int>>();
    std::bernoulli_distribution coin(0.5);
    for (std::size_t p = 0; p < pairs->pairs.size(); ++p) similar->push_back(coin(rng) ? 1 : 0);
    return Fixture{{emb}, {"embeddings"}, [pairs, similar](Tape&, std::span<const Var> in) {
                     return contrastive_loss(in[0], *pairs, *similar, 3.0);
                   }};
  });
  out.emplace_back("triplet_metric", [](Rng& rng) {
    Tensor emb = randn({kBatch, 4}, rng);
    auto set = std::make_shared<TripletSet>(distinct_partner_triplets(kBatch, 8, rng));
    return Fixture{{emb}, {"embeddings"}, [set](Tape&, std::span<const Var> in) {
                     return triplet_metric_loss(in[0], set->triplets, 1.0);
                   }};
  });
  out.emplace_back("bkd", [](Rng& rng) { return distill_fixture(rng, [](Var t, Var s) { return bkd_loss(t, s); }); });
  out.emplace_back("hkd_T1", [](Rng& rng) {
    return distill_fixture(rng, [](Var t, Var s) { return hkd_loss(t, s, 1.0); });
  });
  out.emplace_back("hkd_T4", [](Rng& rng) {
    return distill_fixture(rng, [](Var t, Var s) { return hkd_loss(t, s, 4.0); });
  });
  out.emplace_back("rkd_d", [](Rng& rng) {
    auto pairs = std::make_shared<PairSet>(sample_pairs(kBatch, 10, rng));
    return distill_fixture(rng, [pairs](Var t, Var s) { return rkd_d_loss(*pairs, t, s); });
  });
  out.emplace_back("rkd_a", [](Rng& rng) {
    auto set = std::make_shared<TripletSet>(sample_triplets(kBatch, 12, rng));
    return distill_fixture(rng, [set](Var t, Var s) { return rkd_a_loss(*set, t, s); });
  });
  out.emplace_back("rkd_da", [](Rng& rng) {
    auto pairs = std::make_shared<PairSet>(sample_pairs(kBatch, 10, rng));
    auto set = std::make_shared<TripletSet>(sample_triplets(kBatch, 12, rng));
    return distill_fixture(rng, [pairs, set](Var t, Var s) { return rkd_da_loss(*pairs, *set, t, s, 1.0, 2.0); });
  });
  out.emplace_back("triplet_kd", [](Rng& rng) {
    Tensor teacher = randn({kBatch, kClasses}, rng);
    Tensor student = randn({kBatch, kClasses}, rng);
    auto omega = std::make_shared<KDTripletSet>(sample_kd_negatives(teacher, NegativeOptions{2}, rng));
    return Fixture{{student}, {"student"}, [teacher, omega](Tape& tape, std::span<const Var> in) {
                     return triplet_kd_loss(*omega, tape.constant(teacher), in[0], 5.0);
                   }};
  });
  out.emplace_back("cross_entropy", [](Rng& rng) {
    Tensor logits = randn({kBatch, kClasses}, rng);
    auto labels = std::make_shared<std::vector<std::size_t>>(random_labels(kBatch, kClasses, rng));
    return Fixture{{logits}, {"logits"}, [labels](Tape&, std::span<const Var> in) {
                     return cross_entropy_loss(in[0], *labels);
                   }};
  });
  out.emplace_back("combined", [](Rng& rng) {
    Tensor teacher = randn({kBatch, kClasses}, rng);
    Tensor student = randn({kBatch, kClasses}, rng);
    auto labels = std::make_shared<std::vector<std::size_t>>(random_labels(kBatch, kClasses, rng));
    auto sets = std::make_shared<BatchIndexSets>();
    sets->pairs = sample_pairs(kBatch, 10, rng);
    sets->triplets = sample_triplets(kBatch, 12, rng);
    sets->negatives = sample_kd_negatives(teacher, NegativeOptions{}, rng);
    LossSpec spec;
    spec.terms = {{SoftLoss::bkd, 2.0},
                  {SoftLoss::hkd, 16.0},
                  {SoftLoss::rkd_d, 1.0},
                  {SoftLoss::rkd_a, 2.0},
                  {SoftLoss::triplet_kd, 2.0}};
    return Fixture{{student}, {"student"}, [teacher, labels, sets, spec](Tape& tape, std::span<const Var> in) {
                     return combined_loss(spec, BatchOutputs{tape.constant(teacher), in[0], *labels, sets.get()})
                         .total;
                   }};
  });

  out.emplace_back("conv2d", [](Rng& rng) {
    Tensor x = randn({2, 2, 5, 5}, rng), w = randn({3, 2, 3, 3}, rng, 0.5), b = randn({3}, rng);
    Tensor r = randn({2, 3, 5, 5}, rng);
    return Fixture{{x, w, b}, {"x", "weight", "bias"}, [r](Tape&, std::span<const Var> in) {
                     return probe(conv2d(in[0], in[1], in[2], 1), r);
                   }};
  });
  out.emplace_back("maxpool2x2", [](Rng& rng) {
    Tensor x = randn({2, 2, 4, 6}, rng), r = randn({2, 2, 2, 3}, rng);
    return Fixture{{x}, {"x"}, [r](Tape&, std::span<const Var> in) { return probe(maxpool2x2(in[0]), r); }};
  });
  out.emplace_back("relu", [](Rng& rng) {
    Tensor x = randn({4, 7}, rng), r = randn({4, 7}, rng);
    return Fixture{{x}, {"x"}, [r](Tape&, std::span<const Var> in) { return probe(relu(in[0]), r); }};
  });
  out.emplace_back("linear", [](Rng& rng) {
    Tensor x = randn({4, 6}, rng), w = randn({3, 6}, rng), b = randn({3}, rng), r = randn({4, 3}, rng);
    return Fixture{{x, w, b}, {"x", "weight", "bias"}, [r](Tape&, std::span<const Var> in) {
                     return probe(linear(in[0], in[1], in[2]), r);
                   }};
  });
  out.emplace_back("batchnorm2d", [](Rng& rng) {
    Tensor x = randn({3, 2, 2, 3}, rng), g = randn({2}, rng), b = randn({2}, rng), r = randn({3, 2, 2, 3}, rng);
    return Fixture{{x, g, b}, {"x", "gamma", "beta"}, [r](Tape&, std::span<const Var> in) {
                     return probe(batchnorm_train(in[0], in[1], in[2], 1e-5), r);
                   }};
  });
  out.emplace_back("batchnorm2d_inference", [](Rng& rng) {
    Tensor x = randn({3, 2, 2, 3}, rng), g = randn({2}, rng), b = randn({2}, rng), r = randn({3, 2, 2, 3}, rng);
    Tensor mean = randn({2}, rng), var({2}, std::vector<double>{0.5, 2.0});
    return Fixture{{x, g, b}, {"x", "gamma", "beta"}, [r, mean, var](Tape&, std::span<const Var> in) {
                     return probe(batchnorm_infer(in[0], in[1], in[2], mean, var, 1e-5), r);
                   }};
  });
  out.emplace_back("dropout", [](Rng& rng) {
    Tensor x = randn({4, 8}, rng), r = randn({4, 8}, rng);
    const std::uint64_t mask_seed = rng();
    return Fixture{{x}, {"x"}, [r, mask_seed](Tape&, std::span<const Var> in) {
                     Rng mask(mask_seed);  // same mask on every probe
                     return probe(dropout(in[0], 0.5, true, mask), r);
                   }};
  });
  out.emplace_back("softmax", [](Rng& rng) {
    Tensor x = randn({4, 5}, rng), r = randn({4, 5}, rng);
    return Fixture{{x}, {"x"}, [r](Tape&, std::span<const Var> in) { return probe(softmax_rows(in[0]), r); }};
  });
  out.emplace_back("log_softmax", [](Rng& rng) {
    Tensor x = randn({4, 5}, rng), r = randn({4, 5}, rng);
    return Fixture{{x}, {"x"}, [r](Tape&, std::span<const Var> in) { return probe(log_softmax_rows(in[0]), r); }};
  });
  out.emplace_back("flatten", [](Rng& rng) {
    Tensor x = randn({2, 3, 2, 2}, rng), r = randn({2, 12}, rng);
    return Fixture{{x}, {"x"}, [r](Tape&, std::span<const Var> in) { return probe(reshape(in[0], {2, 12}), r); }};
  });

  if (inject_fault) {
    out.emplace_back("injected_fault", [](Rng& rng) {
      Tensor x = randn({3, 3}, rng);
      return Fixture{{x}, {"x"}, [](Tape&, std::span<const Var> in) { return sum(wrong_square(in[0])); }};
    });
  }
  return out;
}

}  // namespace

std::vector<std::string> gradient_suite_cases(bool inject_fault) {
  std::vector<std::string> names;
  for (const auto& [name, _] : builders(inject_fault)) names.push_back(name);
  return names;
}

SuiteReport run_gradient_suite(const SuiteOptions& options) {
  SuiteReport report;
  report.tolerance = options.tolerance;
  const auto all = builders(options.inject_fault);
  for (std::size_t c = 0; c < all.size(); ++c) {
    SuiteCase sc;
    sc.name = all[c].first;
    for (std::size_t s = 0; s < options.seeds; ++s) {
      Rng rng = derive_rng(options.base_seed, {0x67726164, c, s});
      const Fixture fx = all[c].second(rng);
      const GradReport r = gradient_check(fx.fn, fx.inputs, options.tolerance, options.eps, fx.names);
      ++sc.seeds_run;
      sc.seeds_passed += r.passed ? 1 : 0;
      sc.max_rel_error = std::max(sc.max_rel_error, r.max_rel_error());
      sc.max_abs_error = std::max(sc.max_abs_error, r.max_abs_error());
      for (const auto& p : r.params) {
        sc.checked += p.checked;
        sc.skipped += p.skipped;
      }
    }
    report.cases.push_back(sc);
  }
  return report;
}

}  // namespace distill
