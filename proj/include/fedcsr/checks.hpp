#pragma once

// Self-checks shared by the `oracle-check` verb, the unit tests and the
// acceptance runner.

#include <cstdint>
#include <string>
#include <vector>

namespace fedcsr {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Relative error ‖analytic − numeric‖ / (‖analytic‖ + ‖numeric‖) of one loss
/// term's gradient with respect to one parameter group.
struct GradientCheckRow {
  std::string term;
  std::string group;
  double rel_error = 0.0;
  double grad_norm = 0.0;
  std::size_t entries = 0;
};

struct GradientCheckOptions {
  int dim = 4;
  int seq_len = 5;
  int vocab = 12;  // including pad
  int batch = 3;
  double step = 1e-5;
  std::uint64_t seed = 17;
};

/// Central finite differences for every loss term against every parameter
/// group (shared encoder, exclusive encoder, predictor, discriminator).
std::vector<GradientCheckRow> gradient_check(const GradientCheckOptions& opts = {});

/// Closed-form example values for the loss functions and ranking metrics,
/// each recomputed from its defining formula.
std::vector<CheckResult> closed_form_oracles(double tolerance = 1e-6);

/// rank_of_target against a full sort over `trials` random score vectors
/// with exhaustive candidate sets.
CheckResult ranking_oracle(int trials = 1000, int max_vocab = 20, std::uint64_t seed = 5);

/// Aggregation identity, symmetry, weighted mean, permutation invariance and
/// the message privacy boundary.
std::vector<CheckResult> protocol_checks();

/// Perturbing items after position t leaves (μ_t, σ_t) unchanged, bit for bit.
CheckResult causality_check(std::uint64_t seed = 3);

}  // namespace fedcsr
