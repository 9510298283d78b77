#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "msggan/tensor.hpp"

// Central finite-difference checks of the reverse-mode gradients.
namespace msggan::gradcheck {

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

// Largest, over all inputs, of ||analytic - numeric||_inf / max(||analytic||_inf,
// ||numeric||_inf). Inputs must be fp64 leaves; they are perturbed by ±h one
// element at a time and f is re-evaluated without graph recording.
double max_relative_error(const ScalarFn& f, const std::vector<Tensor>& inputs, double h = 1e-5);

// Same comparison for precomputed gradients.
double relative_error(const std::vector<Tensor>& analytic, const std::vector<Tensor>& numeric);

// Numeric gradient of f with respect to each input.
std::vector<Tensor> numeric_gradient(const ScalarFn& f, const std::vector<Tensor>& inputs,
                                     double h = 1e-5);

struct CheckResult {
  std::string name;
  double error = 0.0;
  double tolerance = 0.0;
  bool pass() const { return error < tolerance; }
};

// One check per differentiable op, random fp64 inputs in [-1, 1].
std::vector<CheckResult> run_op_suite(std::uint64_t seed = 1, double tolerance = 1e-6);

// Gradient-penalty parameter gradients (double backprop) on small critics.
std::vector<CheckResult> run_penalty_suite(std::uint64_t seed = 1, double tolerance = 1e-4);

void print_results(const std::vector<CheckResult>& results, std::ostream& os);

}  // namespace msggan::gradcheck
