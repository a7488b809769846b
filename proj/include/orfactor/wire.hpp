#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace orfactor {

using json = nlohmann::json;

inline constexpr int kProtocolVersion = 1;

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TimeoutError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Error string reported by the backend itself, surfaced verbatim.
class BackendError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string base64_encode(const std::string& bytes);
/// Throws ProtocolError on malformed input.
std::string base64_decode(const std::string& text);

/// {shape:[...], data:<base64 of little-endian f64>}
json encode_tensor(const Eigen::VectorXd& values, const std::vector<std::int64_t>& shape);
/// Decodes a tensor, checking it against `expected_shape` when that is nonempty.
Eigen::VectorXd decode_tensor(const json& t, const std::vector<std::int64_t>& expected_shape = {});

struct WireMessage {
  std::uint64_t id = 0;
  std::string op;
  json payload = json::object();

  std::string to_line() const;  // compact JSON plus '\n'
  static WireMessage parse(const std::string& line);
};

/// Newline-delimited byte stream over a pair of file descriptors.
class LineChannel {
 public:
  LineChannel() = default;
  LineChannel(int read_fd, int write_fd) : rfd_(read_fd), wfd_(write_fd) {}

  void write_line(const std::string& line);
  /// Next line without its terminator, or nullopt on EOF. Throws TimeoutError
  /// when no complete line arrives within `timeout`.
  std::optional<std::string> read_line(std::chrono::milliseconds timeout);
  std::optional<std::string> read_line();  // blocking

 private:
  std::optional<std::string> take_line();

  int rfd_ = -1, wfd_ = -1;
  std::string buf_;
  bool eof_ = false;
};

}  // namespace orfactor
