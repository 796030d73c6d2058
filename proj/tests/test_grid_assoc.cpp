#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gridpix/gradcheck.hpp"
#include "gridpix/ops.hpp"
#include "test_util.hpp"

using namespace gridpix;
using testutil::hard_owner_assoc;
using testutil::max_abs_diff;
using testutil::random_assoc;
using testutil::random_tensor;
using testutil::uniform_assoc;

namespace {

// direct double-loop evaluation of the association-weighted centers: for each
// cell, sum over every pixel that lists it as a candidate
CenterMap centers_oracle(const AssociationMap& assoc, const Tensor& features) {
  const GridSpec& g = assoc.grid;
  const int gh = g.grid_h(), gw = g.grid_w(), c = features.dim(2);
  CenterMap cm;
  cm.property = Tensor({gh, gw, c});
  cm.location = Tensor({gh, gw, 2});
  cm.mass = Tensor({gh, gw});
  for (int ci = 0; ci < gh; ++ci)
    for (int cj = 0; cj < gw; ++cj) {
      double mass = 0.0;
      std::vector<double> acc(c + 2, 0.0);
      for (int y = 0; y < g.image_h; ++y)
        for (int x = 0; x < g.image_w; ++x) {
          const NeighborSet ns = neighborhood(g, x, y);
          for (int k = 0; k < 9; ++k) {
            if (!ns.valid[k] || ns.cell[k] != ci * gw + cj) continue;
            const double q = assoc.probs.at(y, x, k);
            mass += q;
            for (int ch = 0; ch < c; ++ch) acc[ch] += q * features.at(y, x, ch);
            acc[c] += q * x;
            acc[c + 1] += q * y;
          }
        }
      cm.mass.at(ci, cj) = static_cast<float>(mass);
      for (int ch = 0; ch < c; ++ch)
        cm.property.at(ci, cj, ch) = static_cast<float>(acc[ch] / mass);
      cm.location.at(ci, cj, 0) = static_cast<float>(acc[c] / mass);
      cm.location.at(ci, cj, 1) = static_cast<float>(acc[c + 1] / mass);
    }
  return cm;
}

}  // namespace

TEST_CASE("neighborhood: interior pixel sees the full 3x3 block of cells") {
  GridSpec grid(16, 16, 2);  // 8x8 cells
  const NeighborSet ns = neighborhood(grid, 7, 7);  // owner (3,3)
  CHECK(ns.valid_count == 9);
  int k = 0;
  for (int di = -1; di <= 1; ++di)
    for (int dj = -1; dj <= 1; ++dj, ++k) {
      CHECK(ns.valid[k]);
      CHECK(ns.cell[k] == (3 + di) * 8 + (3 + dj));
    }
}

TEST_CASE("neighborhood: corner pixel keeps 4 of 9 candidates") {
  GridSpec grid(16, 16, 2);
  const NeighborSet ns = neighborhood(grid, 0, 0);
  CHECK(ns.valid_count == 4);
  CHECK(ns.valid[4]);   // own cell
  CHECK(!ns.valid[0]);  // (-1,-1)
}

TEST_CASE("neighborhood: out-of-image pixels are rejected") {
  GridSpec grid(8, 8, 2);
  CHECK_THROWS_AS(neighborhood(grid, 8, 0), std::out_of_range);
  CHECK_THROWS_AS(neighborhood(grid, 0, -1), std::out_of_range);
}

TEST_CASE("neighborhood: every candidate stays within Chebyshev distance 1") {
  GridSpec grid(6, 6, 2);
  const int gw = grid.grid_w();
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x) {
      const NeighborSet ns = neighborhood(grid, x, y);
      for (int k = 0; k < 9; ++k) {
        if (!ns.valid[k]) continue;
        const int ci = ns.cell[k] / gw, cj = ns.cell[k] % gw;
        CHECK(std::abs(ci - grid.owner_row(y)) <= 1);
        CHECK(std::abs(cj - grid.owner_col(x)) <= 1);
      }
    }
}

TEST_CASE("compute_centers: constant features give constant property centers") {
  Rng rng(1);
  AssociationMap assoc = random_assoc(rng, 6, 6, 2);
  Tensor f({6, 6, 3});
  for (std::size_t i = 0; i < f.numel(); i += 3) {
    f.data[i] = 0.25f;
    f.data[i + 1] = -1.5f;
    f.data[i + 2] = 7.0f;
  }
  const CenterMap cm = compute_centers(assoc, f);
  for (int ci = 0; ci < 3; ++ci)
    for (int cj = 0; cj < 3; ++cj) {
      CHECK(cm.property.at(ci, cj, 0) == doctest::Approx(0.25f));
      CHECK(cm.property.at(ci, cj, 1) == doctest::Approx(-1.5f));
      CHECK(cm.property.at(ci, cj, 2) == doctest::Approx(7.0f));
    }
}

TEST_CASE("compute_centers: hard assignment reduces to block means and centroids") {
  Rng rng(2);
  AssociationMap assoc = hard_owner_assoc(6, 6, 2);
  Tensor f = random_tensor(rng, {6, 6, 2});
  const CenterMap cm = compute_centers(assoc, f);
  for (int ci = 0; ci < 3; ++ci)
    for (int cj = 0; cj < 3; ++cj) {
      double sum0 = 0, sum1 = 0;
      for (int y = 2 * ci; y < 2 * ci + 2; ++y)
        for (int x = 2 * cj; x < 2 * cj + 2; ++x) {
          sum0 += f.at(y, x, 0);
          sum1 += f.at(y, x, 1);
        }
      CHECK(cm.property.at(ci, cj, 0) == doctest::Approx(sum0 / 4).epsilon(1e-5));
      CHECK(cm.property.at(ci, cj, 1) == doctest::Approx(sum1 / 4).epsilon(1e-5));
      CHECK(cm.location.at(ci, cj, 0) == doctest::Approx(2 * cj + 0.5));
      CHECK(cm.location.at(ci, cj, 1) == doctest::Approx(2 * ci + 0.5));
    }
}

TEST_CASE("compute_centers matches the double-loop oracle on random input") {
  Rng rng(3);
  AssociationMap assoc = random_assoc(rng, 6, 6, 2);
  Tensor f = random_tensor(rng, {6, 6, 3});
  const CenterMap got = compute_centers(assoc, f);
  const CenterMap ref = centers_oracle(assoc, f);
  CHECK(max_abs_diff(got.property, ref.property) < 1e-5);
  CHECK(max_abs_diff(got.location, ref.location) < 1e-5);
}

TEST_CASE("compute_centers: location centers stay in the 3Sx3S home region") {
  Rng rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    const int s = trial % 2 ? 2 : 4;
    AssociationMap assoc = random_assoc(rng, 11, 13, s);  // partial edge cells
    Tensor f = random_tensor(rng, {11, 13, 1});
    const CenterMap cm = compute_centers(assoc, f);
    for (int ci = 0; ci < assoc.grid.grid_h(); ++ci)
      for (int cj = 0; cj < assoc.grid.grid_w(); ++cj) {
        const float lx = cm.location.at(ci, cj, 0);
        const float ly = cm.location.at(ci, cj, 1);
        CHECK(lx >= 0.0f);
        CHECK(lx <= 12.0f);
        CHECK(ly >= 0.0f);
        CHECK(ly <= 10.0f);
        CHECK(lx >= (cj - 1) * s);
        CHECK(lx < (cj + 2) * s);
        CHECK(ly >= (ci - 1) * s);
        CHECK(ly < (ci + 2) * s);
      }
  }
}

TEST_CASE("reconstruct: constant image reproduces the constant") {
  Rng rng(5);
  AssociationMap assoc = random_assoc(rng, 8, 8, 2);
  Tensor f({8, 8, 1}, 3.75f);
  const auto [fr, pr] = reconstruct(assoc, compute_centers(assoc, f));
  for (float v : fr.data) CHECK(v == doctest::Approx(3.75f).epsilon(1e-6));
}

TEST_CASE("reconstruct: hard assignment with cell-constant features is exact") {
  AssociationMap assoc = hard_owner_assoc(8, 8, 2);
  Tensor f({8, 8, 2});
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      f.at(y, x, 0) = static_cast<float>((y / 2) * 4 + (x / 2));
      f.at(y, x, 1) = -f.at(y, x, 0);
    }
  const auto [fr, pr] = reconstruct(assoc, compute_centers(assoc, f));
  CHECK(max_abs_diff(fr, f) < 1e-6);
}

TEST_CASE("reconstruct matches the per-pixel 9-term oracle") {
  Rng rng(6);
  AssociationMap assoc = random_assoc(rng, 6, 6, 2);
  Tensor f = random_tensor(rng, {6, 6, 3});
  const CenterMap cm = compute_centers(assoc, f);
  const auto [fr, pr] = reconstruct(assoc, cm);
  const GridSpec& g = assoc.grid;
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x) {
      const NeighborSet ns = neighborhood(g, x, y);
      for (int ch = 0; ch < 3; ++ch) {
        double acc = 0.0;
        for (int k = 0; k < 9; ++k) {
          if (!ns.valid[k]) continue;
          const int ci = ns.cell[k] / g.grid_w(), cj = ns.cell[k] % g.grid_w();
          acc += static_cast<double>(assoc.probs.at(y, x, k)) *
                 cm.property.at(ci, cj, ch);
        }
        CHECK(std::fabs(fr.at(y, x, ch) - acc) < 1e-6);
      }
    }
}

TEST_CASE("reconstruction is a convex combination of the contributing centers") {
  Rng rng(7);
  AssociationMap assoc = random_assoc(rng, 12, 12, 4);
  Tensor f = random_tensor(rng, {12, 12, 2}, -5, 5);
  const CenterMap cm = compute_centers(assoc, f);
  const auto [fr, pr] = reconstruct(assoc, cm);
  const GridSpec& g = assoc.grid;
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 12; ++x) {
      const NeighborSet ns = neighborhood(g, x, y);
      for (int ch = 0; ch < 2; ++ch) {
        double lo = 1e300, hi = -1e300;
        for (int k = 0; k < 9; ++k) {
          if (!ns.valid[k]) continue;
          const float u =
              cm.property.at(ns.cell[k] / g.grid_w(), ns.cell[k] % g.grid_w(), ch);
          lo = std::min(lo, static_cast<double>(u));
          hi = std::max(hi, static_cast<double>(u));
        }
        CHECK(fr.at(y, x, ch) >= lo - 1e-5);
        CHECK(fr.at(y, x, ch) <= hi + 1e-5);
      }
    }
}

TEST_CASE("csp_centers equals compute_centers exactly on hard assignments") {
  Rng rng(8);
  AssociationMap assoc = hard_owner_assoc(6, 6, 2);
  Tensor f = random_tensor(rng, {6, 6, 3});
  const CenterMap a = compute_centers(assoc, f);
  const CenterMap b = csp_centers(assoc, f, 2);
  CHECK(max_abs_diff(a.property, b.property) == 0.0);
  CHECK(max_abs_diff(a.location, b.location) == 0.0);
}

TEST_CASE("csp_centers: scatter/gather duality within 1e-6 on random maps") {
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    AssociationMap assoc = random_assoc(rng, 12, 12, 4);
    Tensor f = random_tensor(rng, {12, 12, 3}, -10, 10);
    const CenterMap a = compute_centers(assoc, f);
    const CenterMap b = csp_centers(assoc, f, 4);
    CHECK(max_abs_diff(a.property, b.property) < 1e-6);
    CHECK(max_abs_diff(a.location, b.location) < 1e-6);
    CHECK(max_abs_diff(a.mass, b.mass) < 1e-6);
  }
}

TEST_CASE("csp_centers: uniform Q makes interior centers plain window means") {
  AssociationMap assoc = uniform_assoc(12, 12, 2);  // 6x6 grid
  Rng rng(10);
  Tensor f = random_tensor(rng, {12, 12, 1});
  const CenterMap cm = csp_centers(assoc, f, 2);
  // cell (2,2): window rows/cols 2..7, every pixel interior (9 candidates)
  double mean = 0.0;
  for (int y = 2; y < 8; ++y)
    for (int x = 2; x < 8; ++x) mean += f.at(y, x, 0);
  mean /= 36.0;
  CHECK(cm.property.at(2, 2, 0) == doctest::Approx(mean).epsilon(1e-5));
}

TEST_CASE("csp_centers rejects a cell size that disagrees with the grid") {
  Rng rng(11);
  AssociationMap assoc = random_assoc(rng, 8, 8, 2);
  Tensor f = random_tensor(rng, {8, 8, 1});
  CHECK_THROWS_AS(csp_centers(assoc, f, 4), std::invalid_argument);
}

TEST_CASE("degenerate cells fall back to the plain average of owned pixels") {
  // all pixels put their mass on their own cell, except the pixels owned by
  // cell (0,0), which push everything to the right neighbor
  GridSpec grid(4, 4, 2);
  AssociationMap assoc{Tensor({4, 4, 9}), grid};
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      if (y < 2 && x < 2)
        assoc.probs.at(y, x, 5) = 1.0f;  // offset (0,+1)
      else
        assoc.probs.at(y, x, 4) = 1.0f;
    }
  Tensor f({4, 4, 1});
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) f.at(y, x, 0) = static_cast<float>(y * 4 + x);
  const CenterMap cm = compute_centers(assoc, f);
  CHECK(cm.mass.at(0, 0) == doctest::Approx(0.0f));
  // plain average over the owned 2x2 block: (0+1+4+5)/4
  CHECK(cm.property.at(0, 0, 0) == doctest::Approx(2.5f));
  CHECK(cm.location.at(0, 0, 0) == doctest::Approx(0.5f));
  CHECK(cm.location.at(0, 0, 1) == doctest::Approx(0.5f));
}

TEST_CASE("validate accepts well-formed maps and rejects broken ones") {
  Rng rng(12);
  AssociationMap good = random_assoc(rng, 6, 6, 2);
  CHECK_NOTHROW(validate(good));
  AssociationMap off = good;
  off.probs.at(0, 0, 0) = 0.1f;  // off-grid channel of the corner pixel
  CHECK_THROWS(validate(off));
  AssociationMap skew = good;
  skew.probs.at(3, 3, 4) += 0.25f;
  CHECK_THROWS(validate(skew));
}

TEST_CASE("graph centers and reconstruction pass finite differences") {
  Rng rng(13);
  GridSpec grid(8, 8, 4);
  auto logits = ad::param(random_tensor(rng, {1, 9, 8, 8}), "logits");
  auto f = ad::param(random_tensor(rng, {1, 2, 8, 8}), "f");
  const Tensor mask = validity_mask(grid);
  auto probe = ad::constant(random_tensor(rng, {1, 2, 8, 8}));
  auto build = [&] {
    auto q = ad::masked_softmax_channels(logits, mask);
    auto u = ad::weighted_cell_mean(q, f, grid);
    return ad::sum_all(ad::mul(ad::reconstruct_cells(q, u, grid), probe));
  };
  CHECK(fd_max_rel_err(build, {logits, f}, 40, rng, 1e-3) < 1e-4);
}
