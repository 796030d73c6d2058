#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <filesystem>

#include "gridpix/adam.hpp"
#include "gridpix/checkpoint.hpp"
#include "gridpix/gradcheck.hpp"
#include "gridpix/ops.hpp"
#include "test_util.hpp"

using namespace gridpix;
using testutil::random_tensor;

TEST_CASE("backward of a plain sum gives all-ones gradients") {
  Rng rng(1);
  auto p = ad::param(random_tensor(rng, {3, 4}), "p");
  ad::backward(ad::sum_all(p));
  for (float g : p->grad.data) CHECK(g == 1.0f);
}

TEST_CASE("backward rejects non-scalar losses") {
  Rng rng(2);
  auto p = ad::param(random_tensor(rng, {2, 2}), "p");
  CHECK_THROWS_AS(ad::backward(ad::scale(p, 2.0)), std::invalid_argument);
}

TEST_CASE("parameters not reached by the loss keep zero gradients") {
  Rng rng(3);
  auto used = ad::param(random_tensor(rng, {4}), "used");
  auto unused = ad::param(random_tensor(rng, {4}), "unused");
  used->grad = Tensor();
  unused->grad = Tensor();
  ad::backward(ad::sum_all(used));
  const Tensor g = ad::grad_or_zeros(unused);
  for (float v : g.data) CHECK(v == 0.0f);
  for (float v : used->grad.data) CHECK(v == 1.0f);
}

TEST_CASE("conv + leaky relu + sum matches central differences") {
  Rng rng(5);
  auto x = ad::param(random_tensor(rng, {1, 2, 5, 5}), "x");
  auto w = ad::param(random_tensor(rng, {2, 2, 3, 3}), "w");
  auto b = ad::param(random_tensor(rng, {2}), "b");
  auto build = [&] {
    return ad::sum_all(ad::leaky_relu(ad::conv2d(x, w, b, 1, 1), 0.1f));
  };
  CHECK(fd_max_rel_err(build, {x, w, b}, 30, rng, 1e-3) < 1e-4);
}

TEST_CASE("gradients accumulate when a node feeds two consumers") {
  Rng rng(6);
  auto p = ad::param(random_tensor(rng, {5}), "p");
  auto loss = ad::add(ad::sum_all(p), ad::sum_all(ad::scale(p, 2.0)));
  ad::backward(loss);
  for (float g : p->grad.data) CHECK(g == doctest::Approx(3.0f));
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  auto p = ad::param(Tensor({3}, 1.5f), "p");
  Adam adam({p}, AdamConfig{0.1, 0.9, 0.999, 1e-8});
  p->grad = Tensor({3});  // zeros
  adam.step();
  for (float v : p->value.data) CHECK(v == doctest::Approx(1.5f));
}

TEST_CASE("adam: bias correction makes the first step magnitude equal lr") {
  auto p = ad::param(Tensor({1}, 0.0f), "p");
  Adam adam({p}, AdamConfig{0.1, 0.9, 0.999, 1e-8});
  p->grad = Tensor({1}, 1.0f);
  adam.step();
  CHECK(p->value.data[0] == doctest::Approx(-0.1).epsilon(1e-6));
}

TEST_CASE("adam: identical seeds give bitwise-identical trajectories") {
  auto run = [] {
    Rng rng(42);
    auto p = ad::param(random_tensor(rng, {8}), "p");
    Adam adam({p}, AdamConfig{0.01, 0.9, 0.999, 1e-8});
    for (int i = 0; i < 50; ++i) {
      p->grad = Tensor();
      ad::backward(ad::sum_all(ad::mul(p, p)));
      adam.step();
    }
    return p->value;
  };
  const Tensor a = run();
  const Tensor b = run();
  CHECK(std::memcmp(a.ptr(), b.ptr(), a.numel() * sizeof(float)) == 0);
}

TEST_CASE("adam rejects gradient shape mismatches") {
  auto p = ad::param(Tensor({3}, 1.0f), "p");
  Adam adam({p}, AdamConfig{});
  p->grad = Tensor({2}, 1.0f);
  CHECK_THROWS_AS(adam.step(), std::invalid_argument);
}

TEST_CASE("adam rejects betas outside (0,1)") {
  auto p = ad::param(Tensor({1}), "p");
  CHECK_THROWS_AS(Adam({p}, AdamConfig{0.1, 1.0, 0.999, 1e-8}),
                  std::invalid_argument);
}

TEST_CASE("checkpoint round trip is bit exact") {
  Rng rng(7);
  const std::string path =
      (std::filesystem::temp_directory_path() / "gpx_ckpt_test.bin").string();
  std::vector<CheckpointEntry> entries;
  entries.push_back({"a.weight", random_tensor(rng, {3, 2, 3, 3})});
  entries.push_back({"a.bias", random_tensor(rng, {3})});
  entries.push_back({"stats", random_tensor(rng, {5}, -1e20, 1e20)});
  save_checkpoint(path, entries, {{"cell_size", 16}, {"note", "t"}});

  const Checkpoint ckpt = load_checkpoint(path);
  REQUIRE(ckpt.entries.size() == 3);
  CHECK(ckpt.meta["cell_size"] == 16);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    CHECK(ckpt.entries[i].name == entries[i].name);
    REQUIRE(ckpt.entries[i].tensor.shape == entries[i].tensor.shape);
    CHECK(std::memcmp(ckpt.entries[i].tensor.ptr(), entries[i].tensor.ptr(),
                      entries[i].tensor.numel() * sizeof(float)) == 0);
  }
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint loader rejects foreign and truncated files") {
  const auto dir = std::filesystem::temp_directory_path();
  const std::string bad = (dir / "gpx_bad_magic.bin").string();
  {
    std::FILE* f = std::fopen(bad.c_str(), "wb");
    std::fwrite("NOTACKPT________", 1, 16, f);
    std::fclose(f);
  }
  CHECK_THROWS(load_checkpoint(bad));
  std::filesystem::remove(bad);

  const std::string trunc = (dir / "gpx_trunc.bin").string();
  save_checkpoint(trunc, {{"w", Tensor({64}, 1.0f)}}, {});
  std::filesystem::resize_file(trunc, std::filesystem::file_size(trunc) - 32);
  CHECK_THROWS(load_checkpoint(trunc));
  std::filesystem::remove(trunc);
}
