#include "orfactor/wire.hpp"

#include <openssl/evp.h>
#include <poll.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace orfactor {

std::string base64_encode(const std::string& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) throw ProtocolError("base64 length is not a multiple of 4");
  if (text.empty()) return {};
  std::string out(3 * (text.size() / 4), '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw ProtocolError("malformed base64");
  // DecodeBlock keeps the bytes that padding stands for; drop them.
  std::size_t pad = 0;
  if (text.back() == '=') ++pad;
  if (text.size() >= 2 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

json encode_tensor(const Eigen::VectorXd& values, const std::vector<std::int64_t>& shape) {
  std::int64_t count = 1;
  for (auto s : shape) count *= s;
  if (count != values.size()) throw ProtocolError("tensor shape does not match value count");
  const std::string raw(reinterpret_cast<const char*>(values.data()),
                        static_cast<std::size_t>(values.size()) * sizeof(double));
  return json{{"shape", shape}, {"data", base64_encode(raw)}};
}

Eigen::VectorXd decode_tensor(const json& t, const std::vector<std::int64_t>& expected_shape) {
  if (!t.is_object() || !t.contains("shape") || !t.contains("data"))
    throw ProtocolError("malformed tensor: need shape and data");
  std::vector<std::int64_t> shape;
  try {
    shape = t.at("shape").get<std::vector<std::int64_t>>();
  } catch (const json::exception&) {
    throw ProtocolError("malformed tensor shape");
  }
  if (!t.at("data").is_string()) throw ProtocolError("malformed tensor data");
  if (!expected_shape.empty() && shape != expected_shape) throw ProtocolError("unexpected tensor shape");
  std::int64_t count = 1;
  for (auto s : shape) {
    if (s < 0) throw ProtocolError("negative tensor extent");
    count *= s;
  }
  const std::string raw = base64_decode(t.at("data").get<std::string>());
  if (raw.size() != static_cast<std::size_t>(count) * sizeof(double))
    throw ProtocolError("tensor data length does not match shape");
  Eigen::VectorXd v(count);
  std::memcpy(v.data(), raw.data(), raw.size());
  return v;
}

std::string WireMessage::to_line() const {
  return json{{"id", id}, {"op", op}, {"payload", payload}}.dump() + "\n";
}

WireMessage WireMessage::parse(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed message: ") + e.what());
  }
  if (!j.is_object() || !j.contains("id") || !j.contains("op") || !j["id"].is_number_unsigned() ||
      !j["op"].is_string())
    throw ProtocolError("malformed message: need integer id and string op");
  WireMessage m;
  m.id = j["id"].get<std::uint64_t>();
  m.op = j["op"].get<std::string>();
  if (j.contains("payload")) m.payload = j["payload"];
  if (!m.payload.is_object()) throw ProtocolError("malformed message: payload must be an object");
  return m;
}

// ---------------------------------------------------------------------------

void LineChannel::write_line(const std::string& line) {
  std::size_t off = 0;
  while (off < line.size()) {
    const ssize_t n = ::write(wfd_, line.data() + off, line.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw ProtocolError(std::string("write failed: ") + std::strerror(errno));
    }
    off += static_cast<std::size_t>(n);
  }
}

std::optional<std::string> LineChannel::take_line() {
  const auto pos = buf_.find('\n');
  if (pos == std::string::npos) return std::nullopt;
  std::string line = buf_.substr(0, pos);
  buf_.erase(0, pos + 1);
  return line;
}

std::optional<std::string> LineChannel::read_line(std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  for (;;) {
    if (auto line = take_line()) return line;
    if (eof_) return std::nullopt;
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) throw TimeoutError("timed out waiting for backend response");
    pollfd p{rfd_, POLLIN, 0};
    const int r = ::poll(&p, 1, static_cast<int>(left.count()));
    if (r < 0) {
      if (errno == EINTR) continue;
      throw ProtocolError(std::string("poll failed: ") + std::strerror(errno));
    }
    if (r == 0) continue;
    char chunk[65536];
    const ssize_t n = ::read(rfd_, chunk, sizeof chunk);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw ProtocolError(std::string("read failed: ") + std::strerror(errno));
    }
    if (n == 0) eof_ = true;
    buf_.append(chunk, static_cast<std::size_t>(n));
  }
}

std::optional<std::string> LineChannel::read_line() {
  for (;;) {
    if (auto line = take_line()) return line;
    if (eof_) return std::nullopt;
    char chunk[65536];
    const ssize_t n = ::read(rfd_, chunk, sizeof chunk);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw ProtocolError(std::string("read failed: ") + std::strerror(errno));
    }
    if (n == 0) eof_ = true;
    buf_.append(chunk, static_cast<std::size_t>(n));
  }
}

}  // namespace orfactor
