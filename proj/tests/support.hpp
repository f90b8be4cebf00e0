#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include <gtest/gtest.h>

#include "mlctl/autodiff.hpp"
#include "mlctl/log.hpp"

namespace mlctl::test {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("mlctl_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Collects warnings while alive.
class CaptureWarnings {
 public:
  CaptureWarnings() {
    previous_ = log::set_warning_sink([this](const std::string& m) { messages.push_back(m); });
  }
  ~CaptureWarnings() { log::set_warning_sink(previous_); }
  std::vector<std::string> messages;

 private:
  log::Sink previous_;
};

inline std::vector<double> random_values(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

using GraphFn = std::function<ad::Tensor(const std::vector<ad::Tensor>&)>;

// Max over every input element of |analytic - central difference| /
// (|analytic| + 1e-8), with step h.
inline double max_fd_error(const GraphFn& f, const std::vector<ad::Tensor>& inputs, double h = 1e-6) {
  std::vector<ad::Tensor> leaves;
  for (const auto& t : inputs) {
    auto d = t.data();
    leaves.push_back(ad::Tensor::from(t.shape(), std::vector<double>(d.begin(), d.end()), true));
  }
  ad::backward(f(leaves));
  double worst = 0.0;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    const auto g = leaves[i].grad();
    for (std::size_t k = 0; k < leaves[i].numel(); ++k) {
      auto eval = [&](double delta) {
        std::vector<ad::Tensor> probe;
        for (std::size_t j = 0; j < leaves.size(); ++j) {
          auto d = leaves[j].data();
          std::vector<double> v(d.begin(), d.end());
          if (j == i) v[k] += delta;
          probe.push_back(ad::Tensor::from(leaves[j].shape(), std::move(v)));
        }
        return f(probe).item();
      };
      const double fd = (eval(h) - eval(-h)) / (2.0 * h);
      const double a = g.data()[k];
      worst = std::max(worst, std::abs(a - fd) / (std::abs(a) + 1e-8));
    }
  }
  return worst;
}

}  // namespace mlctl::test
