#include <doctest.h>

#include <cstring>
#include <filesystem>

#include "orfactor/serialize.hpp"
#include "orfactor/verify.hpp"

using namespace orfactor;

namespace {

MinimalFeatureTable sample_table() {
  auto t = random_table(3, 4, 17);
  auto e = t.at(PatchSet(5, 3));
  e.converged = false;
  e.reconstruction_error = 0.125;
  e.iterations_used = 77;
  t.set(PatchSet(5, 3), e);
  return t;
}

std::uint64_t trailer_hash(const std::string& bytes) {
  std::uint64_t h = 0;
  std::memcpy(&h, bytes.data() + bytes.size() - 8, 8);
  return h;
}

}  // namespace

TEST_CASE("table round trip is bit exact") {
  const auto t = sample_table();
  const std::string bytes = encode_table(t, 0xabcdefull);
  CHECK(bytes.substr(0, 4) == "MFT1");
  CHECK(bytes.substr(bytes.size() - 12, 4) == "CFGH");
  CHECK(trailer_hash(bytes) == 0xabcdefull);
  // header 12, 8 records of (4 + 1) doubles + u8 + u32, trailer 12
  CHECK(bytes.size() == 12 + 8 * (5 * 8 + 1 + 4) + 12);
  const auto back = decode_table(bytes, 0xabcdefull);
  CHECK(back.config_hash == 0xabcdefull);
  for (std::uint32_t m = 0; m < 8; ++m) {
    const PatchSet s(m, 3);
    CHECK(back.table.f_hat(s) == t.f_hat(s));
    CHECK(back.table.at(s).converged == t.at(s).converged);
    CHECK(back.table.at(s).iterations_used == t.at(s).iterations_used);
    CHECK(back.table.at(s).reconstruction_error == t.at(s).reconstruction_error);
  }
  CHECK(encode_table(back.table, 0xabcdefull) == bytes);
}

TEST_CASE("component round trip is bit exact") {
  const auto cs = extract_components(random_table(3, 4, 18));
  const std::string bytes = encode_components(cs, 7);
  CHECK(bytes.substr(0, 4) == "ORC1");
  const auto back = decode_components(bytes, 7);
  CHECK(back.components.baseline() == cs.baseline());
  for (const auto& k : cs.keys()) {
    CHECK(back.components.at(k).delta_f == cs.at(k).delta_f);
    CHECK(back.components.at(k).l2_norm == cs.at(k).l2_norm);
  }
  CHECK(encode_components(back.components, 7) == bytes);
}

TEST_CASE("decoders reject damaged input") {
  const std::string bytes = encode_table(sample_table(), 1);
  CHECK_THROWS_AS(decode_table("XFT1" + bytes.substr(4)), FormatError);
  CHECK_THROWS_AS(decode_table(bytes.substr(0, bytes.size() - 1)), FormatError);
  CHECK_THROWS_AS(decode_table(bytes.substr(0, 30)), FormatError);
  CHECK_THROWS_AS(decode_table(bytes + "x"), FormatError);
  CHECK_THROWS_AS(decode_table(bytes, 2), FormatError);
  CHECK_NOTHROW(decode_table(bytes));
  CHECK_THROWS_AS(decode_components(bytes), FormatError);

  std::string bad_flag = bytes;
  bad_flag[12 + 5 * 8] = 2;  // converged byte of the first record
  CHECK_THROWS_AS(decode_table(bad_flag), FormatError);

  const std::string comps = encode_components(extract_components(random_table(2, 1, 3)), 1);
  std::string swapped = comps;
  swapped[12] = 2;  // first record claims mask 2
  CHECK_THROWS_AS(decode_components(swapped), FormatError);
}

TEST_CASE("incomplete inputs are not encoded") {
  MinimalFeatureTable t(2, 1);
  t.set(PatchSet(0, 2), {FeatureVector::Zero(1), 0, true, 0});
  CHECK_THROWS(encode_table(t, 0));
  CHECK_THROWS(encode_components(ComponentSet(2, FeatureVector::Zero(1)), 0));
}

TEST_CASE("file helpers") {
  const auto dir = std::filesystem::temp_directory_path() / "orfactor_serialize_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "blob.bin").string();
  const std::string payload("a\0b\xff", 4);
  write_file(path, payload);
  CHECK(read_file(path) == payload);
  CHECK_THROWS(read_file((dir / "missing.bin").string()));
  std::filesystem::remove_all(dir);
}
