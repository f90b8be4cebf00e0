#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "mlctl/autodiff.hpp"

namespace mlctl {

// Ordered collection of named leaf tensors. Order is insertion order and is
// the order used by the optimizer and the checkpoint file.
class ParamSet {
 public:
  // Returns a handle sharing storage with the stored tensor.
  ad::Tensor add(std::string name, ad::Tensor t);
  ad::Tensor& get(const std::string& name);
  const ad::Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t total_elements() const;
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void zero_grad();
  double grad_norm() const;
  // Deep copy: fresh leaves with the same values and requires_grad flags.
  ParamSet clone() const;

 private:
  std::vector<std::pair<std::string, ad::Tensor>> entries_;
};

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

// One bias-corrected Adam update over every parameter in `params`, using the
// gradients currently accumulated on them. Throws NumericError on a
// non-finite gradient and leaves parameters untouched in that case.
void adam_step(ParamSet& params, AdamState& state);

}  // namespace mlctl
