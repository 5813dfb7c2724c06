#pragma once

#include <cstdint>
#include <iosfwd>
#include <mutex>
#include <string>

#include <json.hpp>

#include "omniinput/energy.hpp"

namespace omni {

// Line-delimited JSON scoring protocol spoken with out-of-process models.
//
//   server -> client, once:  {"protocol":"omniinput-score","version":1,"direction":"lower"}
//   client -> server:        {"id":7,"tokens":[1,2,3]}
//   server -> client:        {"id":7,"z":2.5}
//
// Responses may arrive in any order and are matched by id.
namespace wire {

inline constexpr const char* kProtocolName = "omniinput-score";
inline constexpr int kProtocolVersion = 1;

struct Handshake {
  Direction direction = Direction::kLowerIsConfident;
};

struct Request {
  std::int64_t id = 0;
  Sequence seq;
};

struct Response {
  std::int64_t id = 0;
  double z = 0.0;
};

std::string encode_handshake(const Handshake& h);
Handshake decode_handshake(const std::string& line);
std::string encode_request(const Request& r);
Request decode_request(const std::string& line);
std::string encode_response(const Response& r);
Response decode_response(const std::string& line);

// Serves `model` over a pair of streams until `in` hits EOF: writes the
// handshake, then answers each request line. Malformed request lines get an
// {"id":..,"error":".."} reply instead of a score.
void serve(const EnergyModel& model, std::istream& in, std::ostream& out);

}  // namespace wire

// Client side of the wire protocol over a pair of file descriptors. Requests
// are serialized per connection; open more connections for parallelism.
class ExternalModel final : public EnergyModel {
 public:
  // Takes ownership of both descriptors. Reads the handshake immediately.
  ExternalModel(std::string name, InputSpace space, int read_fd, int write_fd,
                int child_pid = -1);
  ~ExternalModel() override;

  ExternalModel(const ExternalModel&) = delete;
  ExternalModel& operator=(const ExternalModel&) = delete;

  // Launches `/bin/sh -c command` with its stdin/stdout connected.
  static std::unique_ptr<ExternalModel> spawn(const std::string& command,
                                              InputSpace space);

  std::string name() const override { return name_; }
  Direction direction() const override { return direction_; }
  const InputSpace& space() const override { return space_; }
  double score(const Sequence& seq) const override;
  std::vector<double> score_batch(std::span<const Sequence> seqs) const override;

 private:
  std::string read_line() const;
  void write_all(const std::string& data) const;

  std::string name_;
  InputSpace space_;
  Direction direction_ = Direction::kLowerIsConfident;
  int read_fd_;
  int write_fd_;
  int child_pid_;
  mutable std::mutex mu_;
  mutable std::string buffer_;
  mutable std::int64_t next_id_ = 0;
};

}  // namespace omni
