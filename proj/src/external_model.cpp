#include "omniinput/external_model.hpp"

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <unordered_map>

namespace omni {
namespace wire {

namespace {

nlohmann::json parse_line(const std::string& line, const char* what) {
  try {
    auto j = nlohmann::json::parse(line);
    if (!j.is_object()) throw IoError(std::string(what) + ": expected JSON object");
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string(what) + ": " + e.what());
  }
}

}  // namespace

std::string encode_handshake(const Handshake& h) {
  nlohmann::ordered_json j;
  j["protocol"] = kProtocolName;
  j["version"] = kProtocolVersion;
  j["direction"] = to_string(h.direction);
  return j.dump() + "\n";
}

Handshake decode_handshake(const std::string& line) {
  auto j = parse_line(line, "handshake");
  if (j.value("protocol", "") != kProtocolName) {
    throw IoError("handshake: unexpected protocol " + j.value("protocol", "<missing>"));
  }
  if (j.value("version", 0) != kProtocolVersion) {
    throw IoError("handshake: unsupported version " + std::to_string(j.value("version", 0)));
  }
  Handshake h;
  h.direction = direction_from_string(j.value("direction", ""));
  return h;
}

std::string encode_request(const Request& r) {
  nlohmann::json j;
  j["id"] = r.id;
  j["tokens"] = r.seq.tokens;
  return j.dump() + "\n";
}

Request decode_request(const std::string& line) {
  auto j = parse_line(line, "request");
  if (!j.contains("id") || !j["id"].is_number_integer() || !j.contains("tokens") ||
      !j["tokens"].is_array()) {
    throw IoError("request: needs integer \"id\" and \"tokens\" array");
  }
  Request r;
  r.id = j["id"].get<std::int64_t>();
  r.seq.tokens = j["tokens"].get<std::vector<Token>>();
  return r;
}

std::string encode_response(const Response& r) {
  nlohmann::json j;
  j["id"] = r.id;
  j["z"] = r.z;
  return j.dump() + "\n";
}

Response decode_response(const std::string& line) {
  auto j = parse_line(line, "response");
  if (j.contains("error")) {
    throw IoError("server error for id " + j.value("id", nlohmann::json()).dump() + ": " +
                  j["error"].dump());
  }
  if (!j.contains("id") || !j["id"].is_number_integer() || !j.contains("z") ||
      !j["z"].is_number()) {
    throw IoError("response: needs integer \"id\" and numeric \"z\"");
  }
  return Response{j["id"].get<std::int64_t>(), j["z"].get<double>()};
}

void serve(const EnergyModel& model, std::istream& in, std::ostream& out) {
  out << encode_handshake(Handshake{model.direction()}) << std::flush;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json reply;
    try {
      auto req = decode_request(line);
      reply["id"] = req.id;
      model.space().validate(req.seq);
      const double z = model.score(req.seq);
      if (!std::isfinite(z)) throw InvalidArgument("score is not finite");
      reply["z"] = z;
    } catch (const std::exception& e) {
      reply["error"] = e.what();
    }
    out << reply.dump() << '\n' << std::flush;
  }
}

}  // namespace wire

ExternalModel::ExternalModel(std::string name, InputSpace space, int read_fd,
                             int write_fd, int child_pid)
    : name_(std::move(name)),
      space_(std::move(space)),
      read_fd_(read_fd),
      write_fd_(write_fd),
      child_pid_(child_pid) {
  try {
    direction_ = wire::decode_handshake(read_line()).direction;
  } catch (...) {
    ::close(read_fd_);
    ::close(write_fd_);
    if (child_pid_ > 0) ::waitpid(child_pid_, nullptr, 0);
    throw;
  }
}

ExternalModel::~ExternalModel() {
  ::close(write_fd_);
  ::close(read_fd_);
  if (child_pid_ > 0) {
    int status = 0;
    ::waitpid(child_pid_, &status, 0);
  }
}

std::unique_ptr<ExternalModel> ExternalModel::spawn(const std::string& command,
                                                    InputSpace space) {
  int to_child[2];
  int from_child[2];
  if (::pipe(to_child) != 0) throw IoError(std::string("pipe: ") + std::strerror(errno));
  if (::pipe(from_child) != 0) {
    ::close(to_child[0]);
    ::close(to_child[1]);
    throw IoError(std::string("pipe: ") + std::strerror(errno));
  }
  const pid_t pid = ::fork();
  if (pid < 0) throw IoError(std::string("fork: ") + std::strerror(errno));
  if (pid == 0) {
    ::dup2(to_child[0], STDIN_FILENO);
    ::dup2(from_child[1], STDOUT_FILENO);
    ::close(to_child[0]);
    ::close(to_child[1]);
    ::close(from_child[0]);
    ::close(from_child[1]);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(to_child[0]);
  ::close(from_child[1]);
  ::fcntl(to_child[1], F_SETFD, FD_CLOEXEC);
  ::fcntl(from_child[0], F_SETFD, FD_CLOEXEC);
  // A dead server must surface as a write error, not kill the client.
  ::signal(SIGPIPE, SIG_IGN);
  return std::make_unique<ExternalModel>("external:" + command, std::move(space),
                                         from_child[0], to_child[1], pid);
}

std::string ExternalModel::read_line() const {
  for (;;) {
    if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      return line;
    }
    char chunk[4096];
    const ssize_t n = ::read(read_fd_, chunk, sizeof(chunk));
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) throw IoError("external model closed its output stream");
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

void ExternalModel::write_all(const std::string& data) const {
  std::size_t done = 0;
  while (done < data.size()) {
    const ssize_t n = ::write(write_fd_, data.data() + done, data.size() - done);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) throw IoError(std::string("write to external model: ") + std::strerror(errno));
    done += static_cast<std::size_t>(n);
  }
}

double ExternalModel::score(const Sequence& seq) const {
  return score_batch(std::span<const Sequence>(&seq, 1)).front();
}

std::vector<double> ExternalModel::score_batch(std::span<const Sequence> seqs) const {
  // Bounded in-flight window so neither side blocks on a full pipe.
  constexpr std::size_t kWindow = 64;
  for (const auto& seq : seqs) {
    try {
      space_.validate(seq);
    } catch (const Error& e) {
      throw ScoringError(e.what(), seq);
    }
  }
  std::lock_guard lock(mu_);
  std::vector<double> out(seqs.size(), std::nan(""));
  const std::int64_t first_id = next_id_;
  std::size_t sent = 0;
  std::size_t received = 0;
  std::unordered_map<std::int64_t, std::size_t> pending;
  try {
    while (received < seqs.size()) {
      std::string batch;
      while (sent < seqs.size() && sent - received < kWindow) {
        const auto id = next_id_++;
        pending.emplace(id, sent);
        batch += wire::encode_request({id, seqs[sent]});
        ++sent;
      }
      if (!batch.empty()) write_all(batch);
      const std::string line = read_line();
      const auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_object() && j.contains("error") && j.contains("id") && j["id"].is_number_integer()) {
        const auto it = pending.find(j["id"].get<std::int64_t>());
        if (it != pending.end()) {
          throw ScoringError("model server: " + j["error"].dump(), seqs[it->second]);
        }
      }
      const auto resp = wire::decode_response(line);
      // Replies to an earlier batch that failed part way are stale.
      if (resp.id < first_id) continue;
      auto it = pending.find(resp.id);
      if (it == pending.end()) {
        throw IoError("response for unknown id " + std::to_string(resp.id));
      }
      out[it->second] = resp.z;
      pending.erase(it);
      ++received;
    }
  } catch (const ScoringError&) {
    throw;
  } catch (const Error& e) {
    std::size_t bad = std::min(sent, seqs.size() - 1);
    for (const auto& [id, index] : pending) bad = std::min(bad, index);
    throw ScoringError(e.what(), seqs.empty() ? Sequence{} : seqs[bad]);
  }
  return out;
}

}  // namespace omni
