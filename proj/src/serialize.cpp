#include "orfactor/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace orfactor {

static_assert(std::endian::native == std::endian::little, "artifact codec assumes a little-endian host");

namespace {

constexpr char kTrailer[4] = {'C', 'F', 'G', 'H'};

class Writer {
 public:
  void bytes(const char* p, std::size_t n) { out_.append(p, n); }
  template <typename T>
  void put(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void vec(const Eigen::VectorXd& v) {
    bytes(reinterpret_cast<const char*>(v.data()), static_cast<std::size_t>(v.size()) * sizeof(double));
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& s) : s_(s) {}
  void need(std::size_t n) const {
    if (s_.size() - pos_ < n) throw FormatError("truncated artifact");
  }
  void magic(const char (&m)[5]) {
    need(4);
    if (std::memcmp(s_.data() + pos_, m, 4) != 0) throw FormatError(std::string("bad magic, expected ") + m);
    pos_ += 4;
  }
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, s_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  Eigen::VectorXd vec(Eigen::Index n) {
    need(static_cast<std::size_t>(n) * sizeof(double));
    Eigen::VectorXd v(n);
    std::memcpy(v.data(), s_.data() + pos_, static_cast<std::size_t>(n) * sizeof(double));
    pos_ += static_cast<std::size_t>(n) * sizeof(double);
    return v;
  }
  std::uint64_t trailer() {
    need(4);
    if (std::memcmp(s_.data() + pos_, kTrailer, 4) != 0) throw FormatError("missing config-hash trailer");
    pos_ += 4;
    const auto h = get<std::uint64_t>();
    if (pos_ != s_.size()) throw FormatError("trailing bytes after artifact");
    return h;
  }

 private:
  const std::string& s_;
  std::size_t pos_ = 0;
};

void check_hash(std::uint64_t got, std::optional<std::uint64_t> expected) {
  if (expected && *expected != got) {
    std::ostringstream os;
    os << "config hash mismatch: artifact has " << std::hex << got << ", expected " << *expected;
    throw FormatError(os.str());
  }
}

std::pair<int, Eigen::Index> header(Reader& r) {
  const auto n = r.get<std::uint32_t>();
  const auto d = r.get<std::uint32_t>();
  if (n > static_cast<std::uint32_t>(PatchSet::kMaxUniverse)) throw FormatError("universe too large");
  if (d == 0) throw FormatError("zero feature dimension");
  return {static_cast<int>(n), static_cast<Eigen::Index>(d)};
}

}  // namespace

std::string encode_table(const MinimalFeatureTable& table, std::uint64_t config_hash) {
  if (!table.complete()) throw std::invalid_argument("encode_table: table is incomplete");
  Writer w;
  w.bytes("MFT1", 4);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(table.universe()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(table.dim()));
  const int n = table.universe();
  for (std::uint32_t m = 0; m < (1u << n); ++m) {
    const auto& e = table.at(PatchSet(m, n));
    w.vec(e.f_hat);
    w.put<double>(e.reconstruction_error);
    w.put<std::uint8_t>(e.converged ? 1 : 0);
    w.put<std::uint32_t>(e.iterations_used);
  }
  w.bytes(kTrailer, 4);
  w.put<std::uint64_t>(config_hash);
  return w.take();
}

std::string encode_components(const ComponentSet& cs, std::uint64_t config_hash) {
  if (!cs.complete()) throw std::invalid_argument("encode_components: component set is incomplete");
  Writer w;
  w.bytes("ORC1", 4);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cs.universe()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cs.dim()));
  for (const auto& k : cs.keys()) {
    const auto& rec = cs.at(k);
    w.put<std::uint32_t>(k.mask());
    w.vec(rec.delta_f);
    w.put<double>(rec.l2_norm);
  }
  w.vec(cs.baseline());
  w.bytes(kTrailer, 4);
  w.put<std::uint64_t>(config_hash);
  return w.take();
}

LoadedTable decode_table(const std::string& bytes, std::optional<std::uint64_t> expected_hash) {
  Reader r(bytes);
  r.magic("MFT1");
  const auto [n, d] = header(r);
  MinimalFeatureTable table(n, d);
  for (std::uint32_t m = 0; m < (1u << n); ++m) {
    TableEntry e;
    e.f_hat = r.vec(d);
    e.reconstruction_error = r.get<double>();
    const auto conv = r.get<std::uint8_t>();
    if (conv > 1) throw FormatError("bad converged flag");
    e.converged = conv == 1;
    e.iterations_used = r.get<std::uint32_t>();
    table.set(PatchSet(m, n), std::move(e));
  }
  const auto h = r.trailer();
  check_hash(h, expected_hash);
  return LoadedTable{std::move(table), h};
}

LoadedComponents decode_components(const std::string& bytes, std::optional<std::uint64_t> expected_hash) {
  Reader r(bytes);
  r.magic("ORC1");
  const auto [n, d] = header(r);
  std::vector<ComponentRecord> recs;
  for (std::uint32_t i = 1; i < (1u << n); ++i) {
    const auto mask = r.get<std::uint32_t>();
    if (mask != i) throw FormatError("component records out of order");
    ComponentRecord rec;
    rec.action_field = PatchSet(mask, n);
    rec.delta_f = r.vec(d);
    rec.l2_norm = r.get<double>();
    recs.push_back(std::move(rec));
  }
  ComponentSet cs(n, r.vec(d));
  for (auto& rec : recs) cs.set(std::move(rec));
  const auto h = r.trailer();
  check_hash(h, expected_hash);
  return LoadedComponents{std::move(cs), h};
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("failed writing " + path);
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace orfactor
