#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <unordered_set>
#include <vector>

#include "omniinput/histogram.hpp"
#include "omniinput/rng.hpp"
#include "omniinput/space.hpp"

namespace omni {

struct ReservoirItem {
  Sequence seq;
  double z = 0.0;
  std::uint64_t hash = 0;
  // Set for items collected by a tempered replica.
  std::optional<double> temperature;
};

// Per-bin fixed-capacity uniform subsample of the distinct inputs offered to
// each bin (classic reservoir rule applied to first sightings only).
class BinReservoir {
 public:
  BinReservoir(int bin_count, int capacity = 30, std::uint64_t seed = 0);

  // True when the item entered the reservoir. Repeat offers of an already
  // seen sequence are ignored.
  bool offer(int bin, const Sequence& seq, double z,
             std::optional<double> temperature = std::nullopt);

  int bin_count() const { return static_cast<int>(bins_.size()); }
  int capacity() const { return capacity_; }
  const std::vector<ReservoirItem>& items(int bin) const {
    return bins_.at(static_cast<std::size_t>(bin)).items;
  }
  std::size_t size(int bin) const { return items(bin).size(); }
  // Distinct sequences ever offered to the bin.
  std::uint64_t seen(int bin) const { return bins_.at(static_cast<std::size_t>(bin)).seen; }
  std::size_t total_size() const;

 private:
  struct Bin {
    std::vector<ReservoirItem> items;
    std::unordered_set<std::uint64_t> hashes;
    std::uint64_t seen = 0;
  };
  int capacity_;
  Rng rng_;
  std::vector<Bin> bins_;
};

// One line per item: {"tokens":[...],"z":..,"bin":..,"temperature":..|null,"hash":"hex"}
void write_reservoir_jsonl(std::ostream& out, const BinReservoir& reservoir);

struct SampledInput {
  Sequence seq;
  double z = 0.0;
  int bin = 0;
  std::optional<double> temperature;
  std::uint64_t hash = 0;
};
std::vector<SampledInput> read_samples_jsonl(std::istream& in);

}  // namespace omni
