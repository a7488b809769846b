#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "orfactor/generator.hpp"
#include "orfactor/toygen.hpp"
#include "orfactor/wire.hpp"

namespace orfactor {

enum class BackendKind { Builtin, External, Socket };

std::string to_string(BackendKind k);
BackendKind backend_kind_from_string(const std::string& s);

struct BackendDescriptor {
  BackendKind kind = BackendKind::Builtin;
  ToyGeneratorSpec spec;              // builtin
  std::vector<std::string> command;   // external: argv of the process to launch
  std::string socket_path;            // socket: AF_UNIX address
  std::chrono::milliseconds handshake_timeout{10000};
  std::chrono::milliseconds request_timeout{60000};
};

struct HandshakeInfo {
  Eigen::Index feature_dim = 0;
  Eigen::Index code_dim = 0;
  PatchLayout layout;
  bool vjp_supported = false;
  bool encode_supported = false;
};

/// Parses a handshake response payload.
HandshakeInfo parse_handshake(const json& payload);
json handshake_payload(const HandshakeInfo& info);

/// Central differences of <upstream, g(f)> with the given step, O(D) forwards.
FeatureVector finite_difference_vjp(const Generator& gen, const FeatureVector& f,
                                    const Eigen::VectorXd& upstream, double step = 1e-4);

/*
 * Generator served by an external process over protocol v1. Requests are
 * serialized (one outstanding at a time, ids strictly increasing). A timeout
 * or malformed response leaves the session unusable.
 */
class BackendSession : public Generator {
 public:
  static std::unique_ptr<BackendSession> open(const BackendDescriptor& desc);
  ~BackendSession() override;

  BackendSession(const BackendSession&) = delete;
  BackendSession& operator=(const BackendSession&) = delete;

  const HandshakeInfo& info() const { return info_; }

  Eigen::Index feature_dim() const override { return info_.feature_dim; }
  Eigen::Index code_dim() const override { return info_.code_dim; }
  const PatchLayout& layout() const override { return info_.layout; }

  ImageBuffer forward(const FeatureVector& f) const override;
  /// Remote vjp, or the finite-difference fallback when the backend lacks it.
  FeatureVector vjp(const FeatureVector& f, const Eigen::VectorXd& upstream) const override;
  FeatureVector encode(const Eigen::VectorXd& z) const override;
  FeatureVector estimate_baseline(int num_samples, std::uint64_t seed) const override;

  bool concurrent_safe() const override { return false; }
  bool vjp_exact() const override { return info_.vjp_supported; }

  /// One request/response round trip; returns the response payload.
  json request(const std::string& op, json payload) const;
  /// Ids sent so far, for protocol checks.
  std::uint64_t last_id() const;
  /// Sends shutdown and reaps the process. Idempotent.
  void close();

 private:
  BackendSession(const BackendDescriptor& desc, int read_fd, int write_fd, int pid);
  json request_locked(const std::string& op, json payload, std::chrono::milliseconds timeout) const;

  BackendDescriptor desc_;
  HandshakeInfo info_;
  int read_fd_ = -1, write_fd_ = -1, pid_ = -1;
  mutable std::mutex mu_;
  mutable LineChannel channel_;
  mutable std::uint64_t next_id_ = 1;
  mutable bool broken_ = false;
  bool closed_ = false;
};

/// Builtin descriptors yield a ToyGenerator; others open a BackendSession.
std::unique_ptr<Generator> connect(const BackendDescriptor& desc);

// ---------------------------------------------------------------------------
// In-language echo backend

struct EchoOptions {
  enum class Mode { Zeros, Mirror } mode = Mode::Zeros;
  HandshakeInfo info;              // advertised shape; defaults to the desk layout
  int delay_ms = 0;                // sleep before every response
  bool emit_nan = false;           // forward answers contain NaN
  bool garble = false;             // non-handshake answers are not JSON
  std::string fail_op;             // this op answers with an error message
  int protocol = kProtocolVersion; // advertised protocol version

  static EchoOptions defaults();
};

/*
 * Zeros: every tensor answer is zero. Mirror: x_i = f_(i mod D) and the vjp is
 * its exact adjoint. encode and baseline answer zeros in both modes.
 * Returns 0 after shutdown or end of input.
 */
int serve_echo(int in_fd, int out_fd, const EchoOptions& opts);
/// Listens on an AF_UNIX socket, serves one connection, then unlinks it.
int serve_echo_socket(const std::string& path, const EchoOptions& opts);

}  // namespace orfactor
