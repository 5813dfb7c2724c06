#include <gtest/gtest.h>

#include <unistd.h>

#include <fstream>
#include <sstream>
#include <thread>

#include "omniinput/external_model.hpp"
#include "omniinput/models.hpp"

using namespace omni;

namespace {

const std::string kCorpus = std::string(OMNI_TEST_DATA) + "/corpus.txt";

NGramModel corpus_model(int order, double alpha, int length) {
  std::ifstream in(kCorpus);
  return NGramModel::from_text(in, order, alpha, length);
}

std::string read_fd_line(int fd) {
  std::string line;
  char c;
  while (::read(fd, &c, 1) == 1) {
    if (c == '\n') return line;
    line.push_back(c);
  }
  return line;
}

void write_fd(int fd, const std::string& s) {
  std::size_t off = 0;
  while (off < s.size()) {
    const auto n = ::write(fd, s.data() + off, s.size() - off);
    if (n <= 0) return;
    off += static_cast<std::size_t>(n);
  }
}

// A scripted server on a pair of pipes; `serve` gets (read_fd, write_fd).
struct PipeServer {
  int to_server[2];
  int to_client[2];
  std::thread thread;

  template <typename Fn>
  explicit PipeServer(Fn serve) {
    if (::pipe(to_server) != 0 || ::pipe(to_client) != 0) throw std::runtime_error("pipe");
    thread = std::thread([this, serve] {
      serve(to_server[0], to_client[1]);
      ::close(to_client[1]);
    });
  }
  std::unique_ptr<ExternalModel> client(const InputSpace& space) {
    return std::make_unique<ExternalModel>("scripted", space, to_client[0], to_server[1]);
  }
  ~PipeServer() {
    thread.join();
    ::close(to_server[0]);
  }
};

}  // namespace

TEST(Wire, LinesAreBitExact) {
  EXPECT_EQ(wire::encode_handshake({Direction::kLowerIsConfident}),
            "{\"protocol\":\"omniinput-score\",\"version\":1,\"direction\":\"lower\"}\n");
  EXPECT_EQ(wire::encode_request({7, Sequence{1, 2, 3}}), "{\"id\":7,\"tokens\":[1,2,3]}\n");
  EXPECT_EQ(wire::encode_response({7, 2.5}), "{\"id\":7,\"z\":2.5}\n");
}

TEST(Wire, DecodeRoundTrip) {
  const auto h = wire::decode_handshake(wire::encode_handshake({Direction::kHigherIsConfident}));
  EXPECT_EQ(h.direction, Direction::kHigherIsConfident);
  const auto r = wire::decode_request(wire::encode_request({42, Sequence{0, 9}}));
  EXPECT_EQ(r.id, 42);
  EXPECT_EQ(r.seq, (Sequence{0, 9}));
  const double z = 0.1 + 0.2;
  EXPECT_EQ(wire::decode_response(wire::encode_response({3, z})).z, z);
  EXPECT_THROW(wire::decode_handshake("{\"protocol\":\"other\",\"version\":1}"), std::exception);
  EXPECT_THROW(wire::decode_request("{\"tokens\":[1]}"), std::exception);
  EXPECT_THROW(wire::decode_response("not json"), std::exception);
}

TEST(Wire, ServeAnswersEachRequestAndReportsErrors) {
  const SumEnergy m(InputSpace(10, 3));
  std::istringstream in("{\"id\":1,\"tokens\":[1,2,3]}\n\n{\"id\":2,\"tokens\":[1,2]}\n{\"id\":3,\"tokens\":[9,9,9]}\n");
  std::ostringstream out;
  wire::serve(m, in, out);
  std::istringstream lines(out.str());
  std::string handshake, a, b, c;
  std::getline(lines, handshake);
  std::getline(lines, a);
  std::getline(lines, b);
  std::getline(lines, c);
  EXPECT_EQ(wire::decode_handshake(handshake).direction, Direction::kLowerIsConfident);
  EXPECT_EQ(a, "{\"id\":1,\"z\":6.0}");
  EXPECT_NE(b.find("\"error\""), std::string::npos);
  EXPECT_NE(b.find("\"id\":2"), std::string::npos);
  EXPECT_EQ(c, "{\"id\":3,\"z\":27.0}");
}

TEST(ExternalModel, NGramRoundTripThroughSubprocessMatchesInProcess) {
  const auto local = corpus_model(2, 0.1, 5);
  const std::string cmd = std::string(OMNI_CLI_PATH) + " serve-model --model ngram:" + kCorpus +
                          ":2:0.1 --D 5";
  auto remote = ExternalModel::spawn(cmd, local.space());
  EXPECT_EQ(remote->direction(), Direction::kLowerIsConfident);
  Rng rng(17);
  std::vector<Sequence> seqs;
  for (int i = 0; i < 500; ++i) seqs.push_back(uniform_sample(local.space(), rng));
  const auto z = remote->score_batch(seqs);
  for (std::size_t i = 0; i < seqs.size(); ++i) EXPECT_NEAR(z[i], local.score(seqs[i]), 1e-6);
  EXPECT_NEAR(remote->score(seqs[3]), local.score(seqs[3]), 1e-6);
}

TEST(ExternalModel, MakeModelSpawnsExternalCommand) {
  const std::string cmd = std::string(OMNI_CLI_PATH) + " serve-model --model sum --D 3 --N 9";
  auto m = make_model({"external:" + cmd, 3, 9});
  EXPECT_EQ(m->score(Sequence{1, 2, 3}), 6.0);
}

TEST(ExternalModel, OutOfOrderResponsesAreMatchedById) {
  const InputSpace space(10, 2);
  const int n = 50;
  PipeServer server([n](int in, int out) {
    write_fd(out, wire::encode_handshake({Direction::kHigherIsConfident}));
    std::vector<wire::Request> reqs;
    for (int i = 0; i < n; ++i) reqs.push_back(wire::decode_request(read_fd_line(in)));
    for (auto it = reqs.rbegin(); it != reqs.rend(); ++it) {
      write_fd(out, wire::encode_response({it->id, 10.0 * it->seq[0] + it->seq[1]}));
    }
  });
  auto client = server.client(space);
  std::vector<Sequence> seqs;
  for (int i = 0; i < n; ++i) seqs.push_back(space.at(static_cast<std::uint64_t>(i)));
  const auto z = client->score_batch(seqs);
  for (int i = 0; i < n; ++i) EXPECT_EQ(z[static_cast<std::size_t>(i)], i);
  client.reset();
}

TEST(ExternalModel, ServerErrorCarriesOffendingSequence) {
  const InputSpace space(10, 2);
  PipeServer server([](int in, int out) {
    write_fd(out, wire::encode_handshake({Direction::kLowerIsConfident}));
    for (int i = 0; i < 3; ++i) {
      const auto req = wire::decode_request(read_fd_line(in));
      if (req.seq[0] == 7) {
        write_fd(out, "{\"id\":" + std::to_string(req.id) + ",\"error\":\"boom\"}\n");
      } else {
        write_fd(out, wire::encode_response({req.id, 1.0}));
      }
    }
  });
  auto client = server.client(space);
  const std::vector<Sequence> seqs{{1, 1}, {7, 2}, {3, 3}};
  try {
    client->score_batch(seqs);
    FAIL() << "expected a scoring error";
  } catch (const ScoringError& e) {
    EXPECT_EQ(e.sequence(), (Sequence{7, 2}));
    EXPECT_EQ(e.code(), "scoring_error");
  }
  client.reset();
}

TEST(ExternalModel, TransportFailureIsAScoringError) {
  const InputSpace space(10, 2);
  auto m = ExternalModel::spawn(
      "printf '{\"protocol\":\"omniinput-score\",\"version\":1,\"direction\":\"lower\"}\\n'; exit 0",
      space);
  try {
    m->score(Sequence{4, 5});
    FAIL() << "expected a scoring error";
  } catch (const ScoringError& e) {
    EXPECT_EQ(e.sequence(), (Sequence{4, 5}));
  }
}

TEST(ExternalModel, MissingHandshakeFailsAtStartup) {
  EXPECT_THROW(ExternalModel::spawn("exit 0", InputSpace(10, 2)), std::exception);
}

TEST(ExternalModel, InvalidSequenceIsRejectedBeforeSending) {
  const std::string cmd = std::string(OMNI_CLI_PATH) + " serve-model --model sum --D 2 --N 9";
  auto m = ExternalModel::spawn(cmd, InputSpace(10, 2));
  const std::vector<Sequence> seqs{{1, 1}, {1, 12}};
  try {
    m->score_batch(seqs);
    FAIL();
  } catch (const ScoringError& e) {
    EXPECT_EQ(e.sequence(), (Sequence{1, 12}));
  }
  EXPECT_EQ(m->score(Sequence{2, 2}), 4.0);
}
