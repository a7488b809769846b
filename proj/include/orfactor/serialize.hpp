#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

#include "orfactor/interactions.hpp"

namespace orfactor {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/*
 * Binary artifacts, all little-endian.
 *
 * MFT1 (minimal-feature table):
 *   "MFT1", n u32, D u32,
 *   2^n records by ascending mask: f_hat D x f64, reconstruction_error f64,
 *   converged u8, iterations u32.
 *
 * ORC1 (component set):
 *   "ORC1", n u32, D u32,
 *   2^n - 1 records by ascending mask: mask u32, delta_f D x f64, l2_norm f64,
 *   then f0 as D x f64.
 *
 * Both end with the trailer "CFGH" + config hash u64.
 */
std::string encode_table(const MinimalFeatureTable& table, std::uint64_t config_hash);
std::string encode_components(const ComponentSet& cs, std::uint64_t config_hash);

struct LoadedTable {
  MinimalFeatureTable table;
  std::uint64_t config_hash = 0;
};

struct LoadedComponents {
  ComponentSet components;
  std::uint64_t config_hash = 0;
};

/// Throws FormatError on bad magic, truncation, trailing bytes, or when
/// `expected_hash` is given and differs from the embedded hash.
LoadedTable decode_table(const std::string& bytes, std::optional<std::uint64_t> expected_hash = {});
LoadedComponents decode_components(const std::string& bytes,
                                   std::optional<std::uint64_t> expected_hash = {});

void write_file(const std::string& path, const std::string& bytes);
std::string read_file(const std::string& path);

}  // namespace orfactor
