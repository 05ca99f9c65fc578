#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mdr/tensor.hpp"

namespace mdr::check {

struct GradCheckReport {
  std::string op;         // what was differentiated, e.g. "rdl/x" or "full-model/layer1.tcb.branch0"
  std::size_t coord = 0;  // flat index into that tensor
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
  bool pass = false;
  double h = 0.0;  // step actually used
};

/// |a - n| / max(|a|, |n|, 1e-12)
double relative_error(double analytic, double numeric);

using ScalarFn = std::function<double(const Tensor&)>;

/// (f(x + h e) - f(x - h e)) / (2h) with e the unit vector of `coord`.
/// When a relu or hardswish input changes piece between the two evaluations the
/// step shrinks tenfold, at most four times; `used_h` receives the final step.
/// Throws NumericError when either evaluation is not finite.
double central_difference(const ScalarFn& f, const Tensor& x, std::size_t coord, double h,
                          double* used_h = nullptr);

/// Compares `analytic` against central differences of f at each listed coordinate.
std::vector<GradCheckReport> check_gradient(const std::string& op, const ScalarFn& f, const Tensor& x,
                                            std::span<const double> analytic,
                                            std::span<const std::size_t> coords, double h, double tol);

enum class Target { tensor_op, rdl, cvsta, layer, full_model };

Target parse_target(const std::string& name);
std::string to_string(Target t);

struct CheckOptions {
  double h = 1e-5;
  /// 0 selects the target default: 1e-6 for closed-form targets, 1e-4 for deep compositions.
  double tolerance = 0.0;
  /// Lower bound on coordinates compared per call.
  std::size_t min_coords = 100;
};

double default_tolerance(Target t);

/// Random inputs and parameters drawn from `seed`; each trial adds fresh draws.
/// Failing coordinates are reported, not thrown.
///   tensor-op   tape gradients of every op against differences of the op itself
///   rdl         closed-form X and C gradients against differences of an
///               extended-precision evaluation of the loss, plus the tape route
///   cvsta       graph convolution block, input and all parameters
///   layer       one full layer
///   full-model  tiny network with softmax and RDL objective, parameter coordinates
std::vector<GradCheckReport> check_module(Target target, std::size_t trials, std::uint64_t seed,
                                          const CheckOptions& options = {});

bool all_pass(const std::vector<GradCheckReport>& reports);
double max_rel_err(const std::vector<GradCheckReport>& reports);

void write_reports_csv(std::ostream& os, const std::vector<GradCheckReport>& reports);
/// One line per op: coordinate count, failures, worst relative error.
void write_reports_table(std::ostream& os, const std::vector<GradCheckReport>& reports);

}  // namespace mdr::check
