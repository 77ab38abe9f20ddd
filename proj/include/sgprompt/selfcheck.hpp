#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "sgprompt/autograd.hpp"

namespace sgprompt {

struct CheckOutcome {
  bool passed = false;
  std::string detail;
};

struct NamedCheck {
  std::string name;
  std::function<CheckOutcome()> run;
};

class CheckRegistry {
 public:
  void add(std::string name, std::function<CheckOutcome()> run) {
    checks_.push_back({std::move(name), std::move(run)});
  }
  const std::vector<NamedCheck>& checks() const { return checks_; }
  bool empty() const { return checks_.empty(); }

 private:
  std::vector<NamedCheck> checks_;
};

struct SelfcheckSummary {
  std::size_t passed = 0;
  std::vector<std::string> failures;  // check names

  // Non-zero when anything failed or nothing ran.
  int exit_code() const { return failures.empty() && passed > 0 ? 0 : 1; }
};

/// Runs every check, printing one PASS/FAIL line each. Exceptions thrown by
/// a check count as its failure.
SelfcheckSummary run_checks(const CheckRegistry& registry, std::ostream& out);

inline constexpr double kGradTolerance = 1e-4;
inline constexpr double kGradStep = 1e-5;

/// Finite-difference check of a scalar expression; the detail names `op`
/// and the worst leaf on failure.
CheckOutcome gradient_check(const std::string& op, const ag::Expr& root,
                            double tolerance = kGradTolerance, double step = kGradStep);

/// One scalar test expression per differentiable primitive, each a random
/// projection of the primitive's output.
std::vector<std::pair<std::string, ag::Expr>> primitive_gradient_cases(std::uint64_t seed);

/// Link-prediction loss through a 2-layer encoder on a random 6-node graph,
/// with the encoder weights as trainable leaves.
ag::Expr encoder_link_pred_case(std::uint64_t seed);

/// Random expression over a few trainable leaves, composed of smooth
/// primitives to the given depth, reduced to a scalar.
ag::Expr random_expression(std::uint64_t seed, std::size_t depth, std::size_t max_dim);

/// Gradient, identity and oracle suites.
CheckRegistry default_checks();

}  // namespace sgprompt
