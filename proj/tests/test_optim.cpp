#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <gtest/gtest.h>

#include "mlctl/checkpoint.hpp"
#include "mlctl/error.hpp"
#include "mlctl/optim.hpp"
#include "support.hpp"

using namespace mlctl;
using ad::Tensor;

namespace {

void set_grad(Tensor& t, const std::vector<double>& g) {
  // loss = sum(t * g) leaves exactly g on t.
  t.zero_grad();
  ad::backward(ad::sum(ad::mul(t, Tensor::from(t.shape(), g))));
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  ParamSet p;
  auto w = p.add("w", Tensor::vector({0.5, -1.0, 2.0}, true));
  set_grad(w, {0.0, 0.0, 0.0});
  AdamState st;
  adam_step(p, st);
  EXPECT_EQ(std::vector<double>(w.data().begin(), w.data().end()), (std::vector<double>{0.5, -1.0, 2.0}));
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamSet p;
  auto w = p.add("w", Tensor::scalar(0.0, true));
  set_grad(w, {1.0});
  AdamState st;
  st.lr = 0.1;
  adam_step(p, st);
  // m_hat = 1, v_hat = 1 -> step = lr / (1 + eps)
  EXPECT_NEAR(w.item(), -0.1 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, MatchesHandComputedTrajectory) {
  ParamSet p;
  auto w = p.add("w", Tensor::scalar(1.0, true));
  AdamState st;
  st.lr = 0.01;
  double m = 0, v = 0, x = 1.0;
  const std::vector<double> grads{0.3, -1.2, 0.7, 2.0};
  for (std::size_t k = 0; k < grads.size(); ++k) {
    set_grad(w, {grads[k]});
    adam_step(p, st);
    m = 0.9 * m + 0.1 * grads[k];
    v = 0.999 * v + 0.001 * grads[k] * grads[k];
    const double mh = m / (1 - std::pow(0.9, k + 1));
    const double vh = v / (1 - std::pow(0.999, k + 1));
    x -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    EXPECT_NEAR(w.item(), x, 1e-15);
  }
}

TEST(Adam, NonFiniteGradientAbortsWithoutUpdate) {
  ParamSet p;
  auto a = p.add("a", Tensor::vector({1.0, 2.0}, true));
  auto b = p.add("b", Tensor::vector({3.0}, true));
  set_grad(a, {0.1, 0.2});
  set_grad(b, {std::numeric_limits<double>::quiet_NaN()});
  AdamState st;
  try {
    adam_step(p, st);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("b"), std::string::npos);
  }
  EXPECT_EQ(a.at(0), 1.0);
  EXPECT_EQ(b.at(0), 3.0);
  EXPECT_EQ(st.step, 0u);
}

TEST(Adam, DefaultsAreStandard) {
  AdamState st;
  EXPECT_EQ(st.beta1, 0.9);
  EXPECT_EQ(st.beta2, 0.999);
  EXPECT_EQ(st.eps, 1e-8);
}

TEST(ParamSet, NamesAndGradNorm) {
  ParamSet p;
  auto a = p.add("a", Tensor::vector({1.0, 2.0}, true));
  p.add("b", Tensor::scalar(0.0, true));
  EXPECT_THROW(p.add("a", Tensor::scalar(1.0)), ContractError);
  EXPECT_THROW(p.get("missing"), ContractError);
  EXPECT_EQ(p.total_elements(), 3u);
  set_grad(a, {3.0, 4.0});
  EXPECT_DOUBLE_EQ(p.grad_norm(), 5.0);
  p.zero_grad();
  EXPECT_EQ(p.grad_norm(), 0.0);
}

TEST(ParamSet, CloneIsDeep) {
  ParamSet p;
  p.add("a", Tensor::vector({1.0, 2.0}, true));
  auto q = p.clone();
  q.get("a").mutable_data()[0] = 9.0;
  EXPECT_EQ(p.get("a").at(0), 1.0);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  test::TempDir dir("ckpt");
  CheckpointFile ck;
  ck.step = 42;
  ck.meta["note"] = "x";
  ck.arrays.push_back({"w", {2, 2}, {0.1, -0.0, 1e-310, std::numeric_limits<double>::max()}});
  ck.arrays.push_back({"s", {}, {3.25}});
  write_checkpoint(dir / "c.bin", ck);
  const auto back = read_checkpoint(dir / "c.bin");
  EXPECT_EQ(back.step, 42u);
  EXPECT_EQ(back.meta["note"], "x");
  ASSERT_EQ(back.arrays.size(), 2u);
  EXPECT_EQ(back.arrays[0].shape, (ad::Shape{2, 2}));
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(std::memcmp(&back.arrays[0].values[i], &ck.arrays[0].values[i], sizeof(double)), 0);
  }
  EXPECT_EQ(back.find("s")->values[0], 3.25);
  EXPECT_EQ(back.find("nope"), nullptr);
}

TEST(Checkpoint, HeaderLayout) {
  test::TempDir dir("ckpt");
  CheckpointFile ck;
  ck.arrays.push_back({"w", {3}, {1.0, 2.0, 3.0}});
  write_checkpoint(dir / "c.bin", ck);
  std::ifstream in(dir / "c.bin", std::ios::binary);
  char magic[8];
  in.read(magic, 8);
  EXPECT_EQ(std::string(magic, 8), "MLCTLCK1");
  std::uint64_t h = 0;
  in.read(reinterpret_cast<char*>(&h), 8);
  std::string header(h, '\0');
  in.read(header.data(), static_cast<std::streamsize>(h));
  const auto j = nlohmann::json::parse(header);
  EXPECT_EQ(j["dtype"], "f64");
  EXPECT_EQ(j["arrays"][0]["name"], "w");
  EXPECT_EQ(j["arrays"][0]["count"], 3);
  double vals[3];
  in.read(reinterpret_cast<char*>(vals), sizeof vals);
  EXPECT_EQ(vals[2], 3.0);
}

TEST(Checkpoint, RejectsCorruptFiles) {
  test::TempDir dir("ckpt");
  {
    std::ofstream out(dir / "bad.bin", std::ios::binary);
    out << "NOTACKPTxxxxxxxx";
  }
  EXPECT_THROW(read_checkpoint(dir / "bad.bin"), InputError);
  EXPECT_THROW(read_checkpoint(dir / "missing.bin"), IoError);

  CheckpointFile ck;
  ck.arrays.push_back({"w", {4}, {1, 2, 3, 4}});
  write_checkpoint(dir / "c.bin", ck);
  const auto size = std::filesystem::file_size(dir / "c.bin");
  std::filesystem::resize_file(dir / "c.bin", size - 8);
  EXPECT_THROW(read_checkpoint(dir / "c.bin"), InputError);
}

TEST(Checkpoint, ParamsAndAdamRestore) {
  test::TempDir dir("ckpt");
  ParamSet p;
  auto w = p.add("w", Tensor::vector({1.0, 2.0}, true));
  AdamState st;
  set_grad(w, {0.5, -0.5});
  adam_step(p, st);

  CheckpointFile ck;
  ck.step = 1;
  append_params(ck, p);
  append_adam(ck, p, st);
  write_checkpoint(dir / "c.bin", ck);

  ParamSet q;
  q.add("w", Tensor::vector({0.0, 0.0}, true));
  const auto back = read_checkpoint(dir / "c.bin");
  restore_params(back, q);
  EXPECT_EQ(q.get("w").at(0), w.at(0));
  const auto st2 = restore_adam(back, q, AdamState{});
  EXPECT_EQ(st2.step, st.step);
  EXPECT_EQ(st2.m, st.m);
  EXPECT_EQ(st2.v, st.v);

  ParamSet wrong;
  wrong.add("w", Tensor::vector({0.0, 0.0, 0.0}, true));
  EXPECT_THROW(restore_params(back, wrong), InputError);
}
