#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "gridpix/slic.hpp"
#include "test_util.hpp"

using namespace gridpix;
using testutil::random_tensor;

TEST_CASE("rgb_to_lab: white point and black map to the expected corners") {
  Tensor img({1, 2, 3});
  img.data = {1.0f, 1.0f, 1.0f, 0.0f, 0.0f, 0.0f};
  const LabImage lab = rgb_to_lab(img);
  CHECK(lab.values.at(0, 0, 0) == doctest::Approx(100.0).epsilon(1e-4));
  CHECK(std::fabs(lab.values.at(0, 0, 1)) < 0.01);
  CHECK(std::fabs(lab.values.at(0, 0, 2)) < 0.01);
  CHECK(std::fabs(lab.values.at(0, 1, 0)) < 1e-4);
  CHECK(std::fabs(lab.values.at(0, 1, 1)) < 1e-4);
  CHECK(std::fabs(lab.values.at(0, 1, 2)) < 1e-4);
  CHECK(lab.clamped == 0);
}

TEST_CASE("rgb_to_lab: mid-gray lands at the reference lightness") {
  Tensor img({1, 1, 3}, 0.5f);
  const LabImage lab = rgb_to_lab(img);
  CHECK(lab.values.at(0, 0, 0) == doctest::Approx(53.39).epsilon(1e-3));
  CHECK(std::fabs(lab.values.at(0, 0, 1)) < 0.01);
  CHECK(std::fabs(lab.values.at(0, 0, 2)) < 0.01);
}

TEST_CASE("rgb_to_lab counts clamped out-of-range inputs") {
  Tensor img({1, 1, 3});
  img.data = {1.5f, -0.25f, 0.5f};
  const LabImage lab = rgb_to_lab(img);
  CHECK(lab.clamped == 2);
}

TEST_CASE("sRGB -> LAB -> sRGB round trip stays within one 8-bit step") {
  Rng rng(1);
  Tensor img({8, 8, 3});
  for (auto& v : img.data)
    v = static_cast<float>(rng.uniform_int(0, 255)) / 255.0f;
  const Tensor back = lab_to_rgb(rgb_to_lab(img).values);
  for (std::size_t i = 0; i < img.numel(); ++i) {
    const int a = static_cast<int>(std::lround(img.data[i] * 255.0f));
    const int b = static_cast<int>(std::lround(back.data[i] * 255.0f));
    CHECK(std::abs(a - b) <= 1);
  }
}

TEST_CASE("slic: constant color splits into near-equal quadrants") {
  Tensor img({16, 16, 3}, 0.5f);
  const SlicResult res = slic(rgb_to_lab(img), 4, 10.0, 10);
  CHECK(res.n_seeds == 4);
  CHECK(res.labels.n_labels == 4);
  std::map<std::int32_t, int> counts;
  for (auto v : res.labels.labels) ++counts[v];
  for (const auto& [lab, c] : counts) CHECK(c == 64);  // position term dominates
}

TEST_CASE("slic: a two-tone split is recovered within one pixel") {
  Tensor img({16, 16, 3});
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      const float v = x < 8 ? 0.05f : 0.95f;
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = v;
    }
  const SlicResult res = slic(rgb_to_lab(img), 2, 10.0, 25);
  CHECK(res.labels.n_labels == 2);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      if (x <= 6) CHECK(res.labels.at(y, x) == res.labels.at(0, 0));
      if (x >= 9) CHECK(res.labels.at(y, x) == res.labels.at(0, 15));
    }
}

TEST_CASE("slic is deterministic across runs") {
  Rng rng(2);
  Tensor img = random_tensor(rng, {24, 24, 3}, 0, 1);
  const LabImage lab = rgb_to_lab(img);
  const SlicResult a = slic(lab, 9, 10.0, 10);
  const SlicResult b = slic(lab, 9, 10.0, 10);
  CHECK(a.labels.labels == b.labels.labels);
  CHECK(a.cost_history == b.cost_history);
}

TEST_CASE("slic: assignment cost never increases across iterations") {
  Rng rng(3);
  for (int trial = 0; trial < 3; ++trial) {
    Tensor img = random_tensor(rng, {32, 32, 3}, 0, 1);
    const SlicResult res = slic(rgb_to_lab(img), 16, 10.0, 10);
    for (std::size_t i = 1; i < res.cost_history.size(); ++i)
      CHECK(res.cost_history[i] <= res.cost_history[i - 1] + 1e-6);
  }
}

TEST_CASE("slic: label count before enforcement never exceeds the request") {
  Rng rng(4);
  for (int k : {1, 2, 7, 30, 64}) {
    Tensor img = random_tensor(rng, {20, 28, 3}, 0, 1);
    const SlicResult res = slic(rgb_to_lab(img), k, 10.0, 4);
    std::set<std::int32_t> distinct(res.raw_labels.labels.begin(),
                                    res.raw_labels.labels.end());
    CHECK(static_cast<int>(distinct.size()) <= k);
    CHECK(res.n_seeds <= k);
  }
}

TEST_CASE("slic rejects degenerate requests") {
  Tensor img({4, 4, 3}, 0.5f);
  const LabImage lab = rgb_to_lab(img);
  CHECK_THROWS_AS(slic(lab, 17, 10.0, 5), std::invalid_argument);
  CHECK_THROWS_AS(slic(lab, 0, 10.0, 5), std::invalid_argument);
  CHECK_THROWS_AS(slic(lab, 4, 10.0, 0), std::invalid_argument);
}
