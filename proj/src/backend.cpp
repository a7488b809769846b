#include "orfactor/backend.hpp"

#include <fcntl.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstring>
#include <thread>

namespace orfactor {

std::string to_string(BackendKind k) {
  switch (k) {
    case BackendKind::Builtin: return "builtin";
    case BackendKind::External: return "external";
    case BackendKind::Socket: return "socket";
  }
  return "?";
}

BackendKind backend_kind_from_string(const std::string& s) {
  if (s == "builtin") return BackendKind::Builtin;
  if (s == "external") return BackendKind::External;
  if (s == "socket") return BackendKind::Socket;
  throw std::invalid_argument("unknown backend kind '" + s + "'");
}

HandshakeInfo parse_handshake(const json& p) {
  try {
    HandshakeInfo info;
    if (p.contains("protocol") && p.at("protocol").get<int>() != kProtocolVersion)
      throw ProtocolError("protocol version mismatch: backend speaks " +
                          std::to_string(p.at("protocol").get<int>()) + ", client speaks " +
                          std::to_string(kProtocolVersion));
    info.feature_dim = p.at("D").get<Eigen::Index>();
    info.code_dim = p.value("code_dim", Eigen::Index{0});
    const auto image = p.at("image").get<std::vector<int>>();
    const auto grid = p.at("grid").get<std::vector<int>>();
    if (image.size() != 3 || grid.size() != 2) throw ProtocolError("handshake: image must be [H,W,C], grid [rows,cols]");
    info.layout = PatchLayout(grid[0], grid[1], image[0], image[1], image[2],
                              p.at("selected").get<std::vector<int>>());
    const auto& caps = p.at("caps");
    info.vjp_supported = caps.value("vjp", false);
    info.encode_supported = caps.value("encode", false);
    if (info.feature_dim <= 0) throw ProtocolError("handshake: D must be positive");
    return info;
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed handshake: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ProtocolError(std::string("malformed handshake: ") + e.what());
  }
}

json handshake_payload(const HandshakeInfo& info) {
  const auto& l = info.layout;
  return json{{"protocol", kProtocolVersion},
              {"D", info.feature_dim},
              {"code_dim", info.code_dim},
              {"image", {l.image_h(), l.image_w(), l.channels()}},
              {"grid", {l.grid_rows(), l.grid_cols()}},
              {"selected", l.selected()},
              {"caps", {{"vjp", info.vjp_supported}, {"encode", info.encode_supported}}}};
}

FeatureVector finite_difference_vjp(const Generator& gen, const FeatureVector& f,
                                    const Eigen::VectorXd& upstream, double step) {
  require_same_dim(f.size(), gen.feature_dim(), "finite_difference_vjp f");
  require_same_dim(upstream.size(), gen.layout().num_values(), "finite_difference_vjp upstream");
  FeatureVector grad(f.size());
  FeatureVector probe = f;
  for (Eigen::Index j = 0; j < f.size(); ++j) {
    probe[j] = f[j] + step;
    const double up = upstream.dot(gen.forward(probe).pixels());
    probe[j] = f[j] - step;
    const double down = upstream.dot(gen.forward(probe).pixels());
    probe[j] = f[j];
    grad[j] = (up - down) / (2.0 * step);
  }
  return grad;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::int64_t> image_shape(const PatchLayout& l) {
  return {l.image_h(), l.image_w(), l.channels()};
}

Eigen::VectorXd finite_or_throw(Eigen::VectorXd v) {
  if (!v.allFinite()) throw NonFiniteError("non-finite backend output");
  return v;
}

void ignore_sigpipe() {
  static std::once_flag once;
  std::call_once(once, [] { ::signal(SIGPIPE, SIG_IGN); });
}

}  // namespace

BackendSession::BackendSession(const BackendDescriptor& desc, int read_fd, int write_fd, int pid)
    : desc_(desc), read_fd_(read_fd), write_fd_(write_fd), pid_(pid), channel_(read_fd, write_fd) {}

std::unique_ptr<BackendSession> BackendSession::open(const BackendDescriptor& desc) {
  ignore_sigpipe();
  int rfd = -1, wfd = -1, pid = -1;
  if (desc.kind == BackendKind::External) {
    if (desc.command.empty()) throw std::invalid_argument("backend.command must not be empty");
    int to_child[2], from_child[2];
    if (::pipe2(to_child, O_CLOEXEC) != 0 || ::pipe2(from_child, O_CLOEXEC) != 0)
      throw std::runtime_error(std::string("pipe failed: ") + std::strerror(errno));
    std::vector<char*> argv;
    for (const auto& a : desc.command) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    pid = ::fork();
    if (pid < 0) throw std::runtime_error(std::string("fork failed: ") + std::strerror(errno));
    if (pid == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      ::execvp(argv[0], argv.data());
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    rfd = from_child[0];
    wfd = to_child[1];
  } else if (desc.kind == BackendKind::Socket) {
    sockaddr_un addr{};
    addr.sun_family = AF_UNIX;
    if (desc.socket_path.size() >= sizeof addr.sun_path) throw std::invalid_argument("backend.socket path too long");
    std::strcpy(addr.sun_path, desc.socket_path.c_str());
    const auto deadline = std::chrono::steady_clock::now() + desc.handshake_timeout;
    for (;;) {
      const int fd = ::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
      if (fd < 0) throw std::runtime_error(std::string("socket failed: ") + std::strerror(errno));
      if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0) {
        rfd = fd;
        wfd = ::dup(fd);
        break;
      }
      const int err = errno;
      ::close(fd);
      if (std::chrono::steady_clock::now() >= deadline)
        throw TimeoutError("cannot connect to backend socket " + desc.socket_path + ": " + std::strerror(err));
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
  } else {
    throw std::invalid_argument("BackendSession::open: builtin backends have no session");
  }

  std::unique_ptr<BackendSession> s(new BackendSession(desc, rfd, wfd, pid));
  try {
    std::lock_guard lock(s->mu_);
    const json reply = s->request_locked("handshake", json{{"protocol", kProtocolVersion}}, desc.handshake_timeout);
    s->info_ = parse_handshake(reply);
  } catch (...) {
    s->broken_ = true;
    s->close();
    throw;
  }
  return s;
}

BackendSession::~BackendSession() {
  try {
    close();
  } catch (...) {
  }
}

void BackendSession::close() {
  if (closed_) return;
  closed_ = true;
  if (!broken_) {
    try {
      channel_.write_line(WireMessage{next_id_++, "shutdown", json::object()}.to_line());
    } catch (...) {
    }
  }
  if (write_fd_ >= 0) ::close(write_fd_);
  if (read_fd_ >= 0) ::close(read_fd_);
  write_fd_ = read_fd_ = -1;
  if (pid_ > 0) {
    int status = 0;
    for (int i = 0; i < 200; ++i) {
      if (::waitpid(pid_, &status, WNOHANG) == pid_) {
        pid_ = -1;
        return;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    ::kill(pid_, SIGKILL);
    ::waitpid(pid_, &status, 0);
    pid_ = -1;
  }
}

std::uint64_t BackendSession::last_id() const {
  std::lock_guard lock(mu_);
  return next_id_ - 1;
}

json BackendSession::request(const std::string& op, json payload) const {
  std::lock_guard lock(mu_);
  return request_locked(op, std::move(payload), desc_.request_timeout);
}

json BackendSession::request_locked(const std::string& op, json payload,
                                    std::chrono::milliseconds timeout) const {
  if (broken_ || closed_) throw ProtocolError("backend session is no longer usable");
  const std::uint64_t id = next_id_++;
  try {
    channel_.write_line(WireMessage{id, op, std::move(payload)}.to_line());
    const auto line = channel_.read_line(timeout);
    if (!line) throw ProtocolError("backend closed the connection during " + op);
    const WireMessage reply = WireMessage::parse(*line);
    if (reply.id != id)
      throw ProtocolError("response id " + std::to_string(reply.id) + " does not match request " + std::to_string(id));
    if (reply.op == "error") {
      if (!reply.payload.contains("message") || !reply.payload["message"].is_string())
        throw ProtocolError("error response without a message");
      throw BackendError(reply.payload["message"].get<std::string>());
    }
    if (reply.op != op) throw ProtocolError("response op '" + reply.op + "' does not match request '" + op + "'");
    return reply.payload;
  } catch (const BackendError&) {
    throw;
  } catch (...) {
    broken_ = true;
    throw;
  }
}

ImageBuffer BackendSession::forward(const FeatureVector& f) const {
  require_same_dim(f.size(), info_.feature_dim, "remote forward f");
  const json reply = request("forward", json{{"f", encode_tensor(f, {info_.feature_dim})}});
  if (!reply.contains("x")) throw ProtocolError("forward response lacks x");
  return ImageBuffer(info_.layout, finite_or_throw(decode_tensor(reply["x"], image_shape(info_.layout))));
}

FeatureVector BackendSession::vjp(const FeatureVector& f, const Eigen::VectorXd& upstream) const {
  if (!info_.vjp_supported) return finite_difference_vjp(*this, f, upstream);
  require_same_dim(f.size(), info_.feature_dim, "remote vjp f");
  require_same_dim(upstream.size(), info_.layout.num_values(), "remote vjp upstream");
  const json reply = request("vjp", json{{"f", encode_tensor(f, {info_.feature_dim})},
                                         {"upstream", encode_tensor(upstream, image_shape(info_.layout))}});
  if (!reply.contains("grad")) throw ProtocolError("vjp response lacks grad");
  return finite_or_throw(decode_tensor(reply["grad"], {info_.feature_dim}));
}

FeatureVector BackendSession::encode(const Eigen::VectorXd& z) const {
  if (!info_.encode_supported) throw std::logic_error("backend does not support encode");
  require_same_dim(z.size(), info_.code_dim, "remote encode z");
  const json reply = request("encode", json{{"z", encode_tensor(z, {info_.code_dim})}});
  if (!reply.contains("f")) throw ProtocolError("encode response lacks f");
  return finite_or_throw(decode_tensor(reply["f"], {info_.feature_dim}));
}

FeatureVector BackendSession::estimate_baseline(int num_samples, std::uint64_t seed) const {
  if (num_samples < 1) throw std::invalid_argument("num_samples must be >= 1");
  const json reply = request("baseline", json{{"num_samples", num_samples}, {"seed", seed}});
  if (!reply.contains("f0")) throw ProtocolError("baseline response lacks f0");
  return finite_or_throw(decode_tensor(reply["f0"], {info_.feature_dim}));
}

std::unique_ptr<Generator> connect(const BackendDescriptor& desc) {
  if (desc.kind == BackendKind::Builtin) return std::make_unique<ToyGenerator>(desc.spec);
  return BackendSession::open(desc);
}

// ---------------------------------------------------------------------------

EchoOptions EchoOptions::defaults() {
  EchoOptions o;
  const auto spec = default_block_linear_spec();
  o.info.feature_dim = spec.feature_dim;
  o.info.code_dim = spec.code_dim;
  o.info.layout = spec.layout;
  o.info.vjp_supported = true;
  o.info.encode_supported = true;
  return o;
}

namespace {

json echo_answer(const WireMessage& req, const EchoOptions& o) {
  const auto d = o.info.feature_dim;
  const auto& layout = o.info.layout;
  const auto px = layout.num_values();
  const auto shape = image_shape(layout);
  if (req.op == "forward") {
    const auto f = decode_tensor(req.payload.at("f"), {d});
    Eigen::VectorXd x = Eigen::VectorXd::Zero(px);
    if (o.mode == EchoOptions::Mode::Mirror)
      for (Eigen::Index i = 0; i < px; ++i) x[i] = f[i % d];
    if (o.emit_nan) x[0] = std::nan("");
    return json{{"x", encode_tensor(x, shape)}};
  }
  if (req.op == "vjp") {
    if (!o.info.vjp_supported) throw std::runtime_error("echo: vjp not supported");
    decode_tensor(req.payload.at("f"), {d});
    const auto up = decode_tensor(req.payload.at("upstream"), shape);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(d);
    if (o.mode == EchoOptions::Mode::Mirror)
      for (Eigen::Index i = 0; i < px; ++i) g[i % d] += up[i];
    return json{{"grad", encode_tensor(g, {d})}};
  }
  if (req.op == "encode") {
    if (!o.info.encode_supported) throw std::runtime_error("echo: encode not supported");
    decode_tensor(req.payload.at("z"), {o.info.code_dim});
    return json{{"f", encode_tensor(Eigen::VectorXd::Zero(d), {d})}};
  }
  if (req.op == "baseline") {
    if (req.payload.at("num_samples").get<int>() < 1) throw std::runtime_error("echo: num_samples must be >= 1");
    return json{{"f0", encode_tensor(Eigen::VectorXd::Zero(d), {d})}};
  }
  throw std::runtime_error("echo: unknown op '" + req.op + "'");
}

}  // namespace

int serve_echo(int in_fd, int out_fd, const EchoOptions& opts) {
  ignore_sigpipe();
  LineChannel ch(in_fd, out_fd);
  // A client that hung up ends the session like end of input.
  auto send = [&](const std::string& text) {
    try {
      ch.write_line(text);
      return true;
    } catch (const ProtocolError&) {
      return false;
    }
  };
  std::uint64_t last_id = 0;
  while (auto line = ch.read_line()) {
    if (line->empty()) continue;
    WireMessage req;
    try {
      req = WireMessage::parse(*line);
    } catch (const std::exception& e) {
      if (!send(WireMessage{last_id, "error", json{{"message", e.what()}}}.to_line())) return 0;
      continue;
    }
    last_id = req.id;
    if (req.op == "shutdown") return 0;
    if (opts.delay_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(opts.delay_ms));

    WireMessage reply{req.id, req.op, json::object()};
    try {
      if (req.op == "handshake") {
        reply.payload = handshake_payload(opts.info);
        reply.payload["protocol"] = opts.protocol;
      } else if (!opts.fail_op.empty() && req.op == opts.fail_op) {
        throw std::runtime_error("echo: " + req.op + " disabled");
      } else {
        reply.payload = echo_answer(req, opts);
      }
    } catch (const std::exception& e) {
      reply = WireMessage{req.id, "error", json{{"message", e.what()}}};
    }
    if (!send(opts.garble && req.op != "handshake" ? std::string("<<garbled>>\n") : reply.to_line())) return 0;
  }
  return 0;
}

int serve_echo_socket(const std::string& path, const EchoOptions& opts) {
  sockaddr_un addr{};
  addr.sun_family = AF_UNIX;
  if (path.size() >= sizeof addr.sun_path) throw std::invalid_argument("socket path too long");
  std::strcpy(addr.sun_path, path.c_str());
  const int srv = ::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (srv < 0) throw std::runtime_error(std::string("socket failed: ") + std::strerror(errno));
  ::unlink(path.c_str());
  if (::bind(srv, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(srv, 1) != 0) {
    const int err = errno;
    ::close(srv);
    throw std::runtime_error("cannot listen on " + path + ": " + std::strerror(err));
  }
  const int conn = ::accept(srv, nullptr, nullptr);
  ::close(srv);
  ::unlink(path.c_str());
  if (conn < 0) throw std::runtime_error(std::string("accept failed: ") + std::strerror(errno));
  const int rc = serve_echo(conn, conn, opts);
  ::close(conn);
  return rc;
}

}  // namespace orfactor
