#include "omniinput/reservoir.hpp"

#include <istream>
#include <ostream>

#include <json.hpp>

namespace omni {

BinReservoir::BinReservoir(int bin_count, int capacity, std::uint64_t seed)
    : capacity_(capacity), rng_(seed), bins_(static_cast<std::size_t>(bin_count)) {
  if (capacity < 1) throw InvalidArgument("reservoir capacity must be >= 1");
  if (bin_count < 1) throw InvalidArgument("reservoir needs at least one bin");
}

bool BinReservoir::offer(int bin, const Sequence& seq, double z,
                         std::optional<double> temperature) {
  auto& b = bins_.at(static_cast<std::size_t>(bin));
  const auto h = canonical_hash(seq);
  if (!b.hashes.insert(h).second) return false;
  ++b.seen;
  if (b.items.size() < static_cast<std::size_t>(capacity_)) {
    b.items.push_back({seq, z, h, temperature});
    return true;
  }
  const auto j = rng_.below(b.seen);
  if (j < static_cast<std::uint64_t>(capacity_)) {
    b.items[static_cast<std::size_t>(j)] = {seq, z, h, temperature};
    return true;
  }
  return false;
}

std::size_t BinReservoir::total_size() const {
  std::size_t n = 0;
  for (const auto& b : bins_) n += b.items.size();
  return n;
}

void write_reservoir_jsonl(std::ostream& out, const BinReservoir& reservoir) {
  for (int k = 0; k < reservoir.bin_count(); ++k) {
    for (const auto& item : reservoir.items(k)) {
      nlohmann::json j;
      j["tokens"] = item.seq.tokens;
      j["z"] = item.z;
      j["bin"] = k;
      j["temperature"] = item.temperature ? nlohmann::json(*item.temperature) : nlohmann::json();
      j["hash"] = hash_hex(item.hash);
      out << j.dump() << '\n';
    }
  }
}

std::vector<SampledInput> read_samples_jsonl(std::istream& in) {
  std::vector<SampledInput> out;
  for (auto& rec : read_sequence_jsonl(in)) {
    SampledInput s;
    s.seq = std::move(rec.seq);
    try {
      s.z = rec.extra.at("z").get<double>();
      s.bin = rec.extra.at("bin").get<int>();
      if (rec.extra.contains("temperature") && !rec.extra["temperature"].is_null()) {
        s.temperature = rec.extra["temperature"].get<double>();
      }
    } catch (const nlohmann::json::exception& e) {
      throw IoError(std::string("sample record: ") + e.what());
    }
    s.hash = canonical_hash(s.seq);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace omni
