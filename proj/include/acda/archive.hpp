#pragma once

// Flat binary archive of named numeric arrays.
//
// Layout (all integers little-endian):
//   bytes 0..7    magic "ACDAARC1"
//   bytes 8..15   uint64 manifest length L
//   next L bytes  UTF-8 JSON manifest:
//                   {"format": "acda-archive", "version": 1, "meta": {...},
//                    "arrays": [{"name", "shape", "dtype", "offset", "nbytes"}]}
//   remainder     array payloads; offset is relative to the payload start
//
// dtype is one of "f64", "f32", "i64". Arrays are held in memory as doubles.

#include "acda/errors.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace acda::archive {

struct Array {
  std::string name;
  std::vector<int> shape;
  std::string dtype = "f64";
  std::vector<double> data;
};

struct Archive {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<Array> arrays;

  const Array& get(const std::string& name) const;
  bool contains(const std::string& name) const;
};

void write(const std::filesystem::path& path, const Archive& archive);
Archive read(const std::filesystem::path& path);

}  // namespace acda::archive
