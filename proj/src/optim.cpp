#include "mlctl/optim.hpp"

#include <algorithm>
#include <cmath>

#include "mlctl/error.hpp"

namespace mlctl {

ad::Tensor ParamSet::add(std::string name, ad::Tensor t) {
  if (contains(name)) throw ContractError("ParamSet: duplicate parameter '" + name + "'");
  entries_.emplace_back(std::move(name), std::move(t));
  return entries_.back().second;
}

ad::Tensor& ParamSet::get(const std::string& name) {
  for (auto& [n, t] : entries_)
    if (n == name) return t;
  throw ContractError("ParamSet: no parameter '" + name + "'");
}

const ad::Tensor& ParamSet::get(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  throw ContractError("ParamSet: no parameter '" + name + "'");
}

bool ParamSet::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
}

std::size_t ParamSet::total_elements() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.numel();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& e : entries_) e.second.zero_grad();
}

double ParamSet::grad_norm() const {
  double s = 0.0;
  for (const auto& e : entries_) {
    if (!e.second.has_grad()) continue;
    for (double g : e.second.grad()) s += g * g;
  }
  return std::sqrt(s);
}

ParamSet ParamSet::clone() const {
  ParamSet out;
  for (const auto& [name, t] : entries_) {
    out.add(name, ad::Tensor::from(t.shape(), std::vector<double>(t.data().begin(), t.data().end()), t.requires_grad()));
  }
  return out;
}

void adam_step(ParamSet& params, AdamState& state) {
  if (state.m.empty()) {
    for (const auto& [name, t] : params) {
      state.m.emplace_back(t.numel(), 0.0);
      state.v.emplace_back(t.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ContractError("adam_step: optimizer state does not match parameters");

  std::vector<std::vector<double>> grads;
  grads.reserve(params.size());
  std::size_t k = 0;
  for (const auto& [name, t] : params) {
    if (state.m[k].size() != t.numel()) throw ContractError("adam_step: moment shape mismatch for '" + name + "'");
    grads.push_back(t.grad());
    for (double g : grads.back()) {
      if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient in parameter '" + name + "'");
    }
    ++k;
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  k = 0;
  for (auto& [name, p] : params) {
    if (!p.requires_grad()) {
      ++k;
      continue;
    }
    auto data = p.mutable_data();
    auto& m = state.m[k];
    auto& v = state.v[k];
    const auto& g = grads[k];
    for (std::size_t i = 0; i < data.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      data[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
    ++k;
  }
}

}  // namespace mlctl
