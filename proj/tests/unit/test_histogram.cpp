#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "omniinput/energy.hpp"
#include "omniinput/histogram.hpp"
#include "test_util.hpp"

using namespace omni;

namespace {

// Exact SumEnergy histogram built by direct enumeration and record_visit.
OutputDistribution sum_histogram(int vocab, int length) {
  const SumEnergy m(InputSpace(vocab, length));
  OutputDistribution h(BinGrid(0, (vocab - 1) * length + 1, 1));
  enumerate(m.space(), [&](const Sequence& s) {
    h.record_visit(h.grid.bin_of(m.score(s)));
    return true;
  });
  return h;
}

}  // namespace

TEST(BinGrid, BinOfExamples) {
  const BinGrid g(2.0, 4.0, 0.1);
  EXPECT_EQ(g.bin_count(), 20);
  EXPECT_EQ(g.bin_of(2.05), 0);
  EXPECT_EQ(g.bin_of(3.55), 15);
  EXPECT_EQ(g.bin_of(4.0), 19);   // clamped by default
  EXPECT_EQ(g.bin_of(-7.0), 0);
  const BinGrid r(2.0, 4.0, 0.1, OutOfRangePolicy::kReject);
  try {
    r.bin_of(4.0);
    FAIL();
  } catch (const OutOfRangeError& e) {
    EXPECT_EQ(e.z(), 4.0);
  }
  EXPECT_THROW(r.bin_of(1.99), OutOfRangeError);
  EXPECT_THROW(g.bin_of(std::nan("")), std::exception);
  EXPECT_FALSE(r.find(4.0).has_value());
  EXPECT_EQ(r.find(3.999), 19);
}

TEST(BinGrid, EdgesAreExactAndHalfOpen) {
  const BinGrid g(2.0, 4.0, 0.1);
  for (int k = 0; k < g.bin_count(); ++k) {
    EXPECT_EQ(g.lo(k), 2.0 + k * 0.1);
    EXPECT_EQ(g.bin_of(g.lo(k)), k) << k;
    EXPECT_EQ(g.hi(k), g.lo(k + 1));
  }
  const BinGrid ints(0, 37, 1);
  for (int z = 0; z <= 36; ++z) EXPECT_EQ(ints.bin_of(z), z);
  EXPECT_EQ(BinGrid(0, 1, 0.3).bin_count(), 4);  // ceil
}

TEST(BinGrid, InvalidConstructionAndParsing) {
  EXPECT_THROW(BinGrid(0, 1, 0), std::exception);
  EXPECT_THROW(BinGrid(1, 0, 0.1), std::exception);
  EXPECT_EQ(BinGrid::parse("0,37,1"), BinGrid(0, 37, 1));
  try {
    BinGrid::parse("0,abc");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "grid");
  }
  const BinGrid g(2.0, 4.0, 0.1, OutOfRangePolicy::kReject);
  EXPECT_EQ(BinGrid::from_json(g.to_json()), g);
}

TEST(BinGrid, TypicalRangeWarningAndLowerEdgeQuery) {
  EXPECT_TRUE(BinGrid(0, 37, 1).bin_count_outside_typical_range());
  EXPECT_FALSE(BinGrid(0, 30, 0.1).bin_count_outside_typical_range());
  const BinGrid g(0, 10, 1);
  EXPECT_EQ(g.bins_with_lower_edge_in(2, 5), (std::pair<int, int>{2, 5}));
  EXPECT_EQ(g.bins_with_lower_edge_in(2.5, 4.5), (std::pair<int, int>{3, 4}));
  EXPECT_FALSE(g.bins_with_lower_edge_in(2.2, 2.8).has_value());
}

TEST(Merge, IdentityCommutativityAndAdditivity) {
  const BinGrid g(0, 8, 1);
  OutputDistribution a(g), b(g), empty(g);
  a.record_visit(3);
  b.record_visit(3);
  const auto m = merge(a, b);
  EXPECT_DOUBLE_EQ(m.log_counts[3], std::log(2.0));
  EXPECT_EQ(m.visits[3], 2u);

  Rng rng(1);
  OutputDistribution x(g), y(g), z(g);
  for (int i = 0; i < 200; ++i) {
    x.record_visit(static_cast<int>(rng.below(8)), rng.uniform(0, 3));
    y.record_visit(static_cast<int>(rng.below(8)), rng.uniform(0, 3));
    z.record_visit(static_cast<int>(rng.below(8)), rng.uniform(0, 3));
  }
  const auto xe = merge(x, empty);
  EXPECT_EQ(xe.log_counts, x.log_counts);
  EXPECT_EQ(xe.visits, x.visits);
  EXPECT_EQ(merge(x, y).log_counts, merge(y, x).log_counts);  // bitwise
  const auto l = merge(merge(x, y), z).log_counts;
  const auto r = merge(x, merge(y, z)).log_counts;
  for (std::size_t k = 0; k < l.size(); ++k) EXPECT_NEAR(l[k], r[k], 1e-12);
  EXPECT_THROW(merge(x, OutputDistribution(BinGrid(0, 9, 1))), GridMismatchError);
}

TEST(RecordVisit, RejectsBadInput) {
  OutputDistribution h(BinGrid(0, 4, 1));
  EXPECT_THROW(h.record_visit(4), std::exception);
  EXPECT_THROW(h.record_visit(0, -1.0), std::exception);
  h.record_visit(1, 0.0);  // zero weight counts a visit but adds no mass
  EXPECT_EQ(h.visits[1], 1u);
  EXPECT_FALSE(h.has_mass(1));
}

TEST(Normalize, EnumerationClosesOnSpaceSize) {
  const auto h = sum_histogram(10, 4);
  const auto n = normalize_to_space(h, InputSpace(10, 4));
  EXPECT_EQ(n.state, Normalization::kNormalizedToSpace);
  double total = 0;
  for (double v : n.log_counts) total += std::exp(v);
  EXPECT_NEAR(total, 10000.0, 1e-9 * 10000.0);
  EXPECT_NEAR(std::exp(n.log_counts[0]), 1.0, 1e-9);
}

TEST(Normalize, SingleBinHoldsLogTotal) {
  OutputDistribution h(BinGrid(0, 1, 1));
  h.record_visit(0, 17.0);
  const InputSpace space(10, 6);
  EXPECT_NEAR(normalize_to_space(h, space).log_counts[0], std::log(1e6), 1e-12);
}

TEST(Normalize, ThousandBinsSumToTotalAndEmptyFails) {
  OutputDistribution h(BinGrid(0, 1000, 1));
  Rng rng(4);
  for (int k = 0; k < 1000; ++k) h.log_counts[static_cast<std::size_t>(k)] = rng.uniform(-300, 300);
  const InputSpace space(50257, 25);
  const auto n = normalize_to_space(h, space);
  EXPECT_NEAR(log_sum_exp(n.log_counts), space.log_total_size(), 1e-9 * space.log_total_size());
  EXPECT_THROW(normalize_to_space(OutputDistribution(BinGrid(0, 3, 1)), space), Error);
}

TEST(EntropyAnchor, Examples) {
  const auto h = sum_histogram(10, 4);
  const auto s = entropy_anchor(h, 0);
  EXPECT_EQ(s[0], 0.0);
  EXPECT_NEAR(s[1] - s[0], std::log(4.0), 1e-12);
  OutputDistribution anchored = h;
  anchored.log_counts = s;
  EXPECT_EQ(entropy_anchor(anchored, 0), s);  // idempotent

  OutputDistribution shifted = h;
  Rng rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    const double c = rng.uniform(-500, 500);
    for (std::size_t k = 0; k < h.log_counts.size(); ++k) shifted.log_counts[k] = h.log_counts[k] + c;
    const auto t = entropy_anchor(shifted, 5);
    const auto u = entropy_anchor(h, 5);
    for (std::size_t k = 0; k < t.size(); ++k) EXPECT_NEAR(t[k], u[k], 1e-9);
  }

  OutputDistribution sparse(BinGrid(0, 3, 1));
  sparse.record_visit(1);
  EXPECT_THROW(entropy_anchor(sparse, 0), Error);
  EXPECT_TRUE(std::isinf(entropy_anchor(sparse, 1)[2]));
}

TEST(HistogramFiles, CsvAndManifestRoundTrip) {
  OutputDistribution h(BinGrid(-1.5, 2.5, 0.5), Normalization::kRelativeEntropy);
  h.record_visit(0, 3.0);
  h.record_visit(4, 0.1);
  h.log_counts[7] = 812.25;
  std::ostringstream csv;
  write_histogram_csv(csv, h);
  EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')), "bin_lo,bin_hi,log_count,visits");
  std::istringstream in(csv.str());
  const auto back = read_histogram_csv(in, h.grid, h.state);
  EXPECT_EQ(back.log_counts, h.log_counts);
  EXPECT_EQ(back.visits, h.visits);

  test::TempDir dir;
  save_histogram(dir.str("h"), h, "sum", "enumeration", {{"extra", 1}});
  nlohmann::json manifest;
  const auto loaded = load_histogram(dir.str("h"), &manifest);
  EXPECT_EQ(loaded.log_counts, h.log_counts);
  EXPECT_EQ(loaded.grid, h.grid);
  EXPECT_EQ(loaded.state, Normalization::kRelativeEntropy);
  EXPECT_EQ(manifest.at("source"), "enumeration");
  EXPECT_EQ(manifest.at("model"), "sum");
  EXPECT_EQ(manifest.at("extra"), 1);
  std::istringstream bad("wrong,header\n");
  EXPECT_THROW(read_histogram_csv(bad, h.grid, h.state), IoError);
}
