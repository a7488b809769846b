#include <doctest.h>

#include <filesystem>
#include <sys/wait.h>
#include <thread>
#include <unistd.h>

#include "orfactor/backend.hpp"
#include "orfactor/solver.hpp"

using namespace orfactor;
using namespace std::chrono_literals;

namespace {

BackendDescriptor echo(std::vector<std::string> extra = {}) {
  BackendDescriptor d;
  d.kind = BackendKind::External;
  d.command = {ORFACTOR_CLI_PATH, "serve-echo"};
  d.command.insert(d.command.end(), extra.begin(), extra.end());
  d.handshake_timeout = 5000ms;
  d.request_timeout = 5000ms;
  return d;
}

// Local copy of the mirror decoder: x_i = f_(i mod D).
class Mirror : public Generator {
 public:
  Mirror() : layout_(default_block_linear_spec().layout) {}
  Eigen::Index feature_dim() const override { return 64; }
  Eigen::Index code_dim() const override { return 16; }
  const PatchLayout& layout() const override { return layout_; }
  ImageBuffer forward(const FeatureVector& f) const override {
    Eigen::VectorXd x(layout_.num_values());
    for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = f[i % 64];
    return ImageBuffer(layout_, x);
  }
  FeatureVector vjp(const FeatureVector&, const Eigen::VectorXd& u) const override {
    FeatureVector g = FeatureVector::Zero(64);
    for (Eigen::Index i = 0; i < u.size(); ++i) g[i % 64] += u[i];
    return g;
  }
  FeatureVector encode(const Eigen::VectorXd&) const override { return FeatureVector::Zero(64); }

 private:
  PatchLayout layout_;
};

}  // namespace

TEST_CASE("handshake payload round trip") {
  HandshakeInfo info = EchoOptions::defaults().info;
  json p = handshake_payload(info);
  p["protocol"] = kProtocolVersion;
  const auto back = parse_handshake(p);
  CHECK(back.feature_dim == 64);
  CHECK(back.code_dim == 16);
  CHECK(back.layout.selected() == info.layout.selected());
  CHECK(back.layout.image_h() == 32);
  CHECK(back.vjp_supported);
  json wrong = p;
  wrong["protocol"] = 2;
  CHECK_THROWS_AS(parse_handshake(wrong), ProtocolError);
  json missing = p;
  missing.erase("D");
  CHECK_THROWS_AS(parse_handshake(missing), ProtocolError);
}

TEST_CASE("backend kind names") {
  CHECK(backend_kind_from_string("external") == BackendKind::External);
  CHECK(to_string(BackendKind::Socket) == "socket");
  CHECK_THROWS(backend_kind_from_string("grpc"));
}

TEST_CASE("builtin descriptors connect to a toy generator") {
  BackendDescriptor d;
  d.spec = default_mlp_spec();
  auto g = connect(d);
  CHECK(dynamic_cast<ToyGenerator*>(g.get()) != nullptr);
  CHECK(g->feature_dim() == 64);
  CHECK_THROWS(BackendSession::open(d));
}

TEST_CASE("mirror echo over a subprocess") {
  auto s = BackendSession::open(echo({"--mode", "mirror"}));
  CHECK(s->feature_dim() == 64);
  CHECK(s->info().layout.num_patches() == 6);
  const Mirror local;
  SplitMix64 rng(1);
  const FeatureVector f = rng.normal_vector(64);
  CHECK(s->forward(f).pixels() == local.forward(f).pixels());
  const Eigen::VectorXd u = rng.normal_vector(local.layout().num_values());
  CHECK((s->vjp(f, u) - local.vjp(f, u)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(s->encode(Eigen::VectorXd::Ones(16)) == FeatureVector::Zero(64));
  CHECK(s->estimate_baseline(8, 1) == FeatureVector::Zero(64));
  CHECK(s->last_id() == 5);
  CHECK_FALSE(s->concurrent_safe());
  s->close();
  s->close();
  CHECK_THROWS_AS(s->forward(f), ProtocolError);
}

TEST_CASE("table through the echo backend equals the local build") {
  auto s = BackendSession::open(echo({"--mode", "mirror"}));
  const Mirror local;
  SplitMix64 rng(2);
  const FeatureVector f0 = FeatureVector::Zero(64);
  const FeatureVector f = rng.normal_vector(64);
  const ImageBuffer x = local.forward(f);
  SolverConfig c;
  c.learning_rate = 1e-6;
  c.max_iterations = 5;
  const auto remote = build_table(*s, f, f0, x, c);
  const auto mine = build_table(local, f, f0, x, c);
  for (std::uint32_t m = 0; m < 64; ++m) CHECK(remote.f_hat(PatchSet(m, 6)) == mine.f_hat(PatchSet(m, 6)));
}

TEST_CASE("zeros echo answers zeros") {
  auto s = BackendSession::open(echo());
  CHECK(s->forward(FeatureVector::Ones(64)).pixels().isZero(0.0));
  CHECK(s->vjp(FeatureVector::Ones(64), Eigen::VectorXd::Ones(3072)).isZero(0.0));
}

TEST_CASE("backend error messages surface verbatim and keep the session") {
  auto s = BackendSession::open(echo({"--mode", "mirror", "--fail-op", "vjp"}));
  try {
    s->vjp(FeatureVector::Zero(64), Eigen::VectorXd::Zero(3072));
    FAIL("expected BackendError");
  } catch (const BackendError& e) {
    CHECK(std::string(e.what()) == "echo: vjp disabled");
  }
  CHECK(s->forward(FeatureVector::Ones(64)).pixels().sum() == 3072.0);
}

TEST_CASE("request timeout breaks the session") {
  auto d = echo({"--delay-ms", "400"});
  d.request_timeout = 100ms;
  auto s = BackendSession::open(d);
  const auto t0 = std::chrono::steady_clock::now();
  CHECK_THROWS_AS(s->forward(FeatureVector::Zero(64)), TimeoutError);
  CHECK(std::chrono::steady_clock::now() - t0 < 350ms);
  CHECK_THROWS_AS(s->forward(FeatureVector::Zero(64)), ProtocolError);
}

TEST_CASE("handshake timeout") {
  auto d = echo({"--delay-ms", "2000"});
  d.handshake_timeout = 100ms;
  CHECK_THROWS_AS(BackendSession::open(d), TimeoutError);
}

TEST_CASE("non-finite answers are rejected") {
  auto s = BackendSession::open(echo({"--emit-nan"}));
  CHECK_THROWS_AS(s->forward(FeatureVector::Zero(64)), NonFiniteError);
}

TEST_CASE("garbled answers are protocol errors") {
  auto s = BackendSession::open(echo({"--garble"}));
  CHECK_THROWS_AS(s->forward(FeatureVector::Zero(64)), ProtocolError);
}

TEST_CASE("protocol version mismatch is detected at handshake") {
  try {
    BackendSession::open(echo({"--protocol", "2"}));
    FAIL("expected ProtocolError");
  } catch (const ProtocolError& e) {
    CHECK(std::string(e.what()).find("protocol version mismatch") != std::string::npos);
  }
}

TEST_CASE("a backend that exits early is a protocol error") {
  BackendDescriptor d;
  d.kind = BackendKind::External;
  d.command = {"/nonexistent/backend"};
  d.handshake_timeout = 2000ms;
  CHECK_THROWS_AS(BackendSession::open(d), ProtocolError);
}

TEST_CASE("missing vjp falls back to finite differences") {
  auto s = BackendSession::open(echo({"--mode", "mirror", "--no-vjp"}));
  CHECK_FALSE(s->vjp_exact());
  const Mirror local;
  SplitMix64 rng(3);
  const FeatureVector f = rng.normal_vector(64);
  const Eigen::VectorXd u = rng.normal_vector(3072);
  CHECK((s->vjp(f, u) - local.vjp(f, u)).norm() / local.vjp(f, u).norm() < 1e-8);
}

TEST_CASE("finite-difference vjp on a known map") {
  const Mirror local;
  const FeatureVector f = FeatureVector::LinSpaced(64, -1, 1);
  const Eigen::VectorXd u = Eigen::VectorXd::Ones(3072);
  CHECK((finite_difference_vjp(local, f, u) - local.vjp(f, u)).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("socket transport") {
  const std::string path =
      (std::filesystem::temp_directory_path() / ("orfactor_echo_" + std::to_string(getpid()) + ".sock")).string();
  const pid_t pid = fork();
  REQUIRE(pid >= 0);
  if (pid == 0) {
    execl(ORFACTOR_CLI_PATH, ORFACTOR_CLI_PATH, "serve-echo", "--mode", "mirror", "--socket", path.c_str(),
          static_cast<char*>(nullptr));
    _exit(127);
  }
  BackendDescriptor d;
  d.kind = BackendKind::Socket;
  d.socket_path = path;
  d.handshake_timeout = 5000ms;
  {
    auto s = BackendSession::open(d);
    const FeatureVector f = FeatureVector::LinSpaced(64, 0, 63);
    CHECK(s->forward(f).pixels()[65] == 1.0);
  }
  int status = 0;
  waitpid(pid, &status, 0);
  CHECK(WIFEXITED(status));
  CHECK(WEXITSTATUS(status) == 0);
  CHECK_FALSE(std::filesystem::exists(path));
}
