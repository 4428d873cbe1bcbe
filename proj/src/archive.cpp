#include "acda/archive.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>

namespace acda::archive {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'A', 'C', 'D', 'A', 'A', 'R', 'C', '1'};

std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "f64" || dtype == "i64") return 8;
  if (dtype == "f32") return 4;
  throw RuntimeFailure("archive: unsupported dtype '" + dtype + "'");
}

std::size_t element_count(const std::vector<int>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, int d) { return a * static_cast<std::size_t>(d); });
}

}  // namespace

const Array& Archive::get(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return a;
  throw RuntimeFailure("archive: no array named '" + name + "'");
}

bool Archive::contains(const std::string& name) const {
  return std::any_of(arrays.begin(), arrays.end(), [&](const Array& a) { return a.name == name; });
}

void write(const std::filesystem::path& path, const Archive& archive) {
  nlohmann::json manifest{{"format", "acda-archive"}, {"version", 1}, {"meta", archive.meta}};
  manifest["arrays"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& a : archive.arrays) {
    if (element_count(a.shape) != a.data.size())
      throw RuntimeFailure("archive: array '" + a.name + "' shape does not match its data");
    const std::uint64_t nbytes = a.data.size() * dtype_size(a.dtype);
    manifest["arrays"].push_back(
        {{"name", a.name}, {"shape", a.shape}, {"dtype", a.dtype}, {"offset", offset}, {"nbytes", nbytes}});
    offset += nbytes;
  }
  const std::string text = manifest.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeFailure("archive: cannot open " + path.string() + " for writing");
  out.write(kMagic, sizeof kMagic);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& a : archive.arrays) {
    if (a.dtype == "f64") {
      out.write(reinterpret_cast<const char*>(a.data.data()), static_cast<std::streamsize>(a.data.size() * 8));
    } else if (a.dtype == "f32") {
      std::vector<float> f(a.data.begin(), a.data.end());
      out.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(f.size() * 4));
    } else {
      std::vector<std::int64_t> v;
      v.reserve(a.data.size());
      for (double x : a.data) v.push_back(static_cast<std::int64_t>(x));
      out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 8));
    }
  }
  if (!out) throw RuntimeFailure("archive: write failed for " + path.string());
}

Archive read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeFailure("archive: cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw RuntimeFailure("archive: " + path.string() + " is not an acda archive");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw RuntimeFailure("archive: truncated manifest in " + path.string());

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw RuntimeFailure("archive: malformed manifest in " + path.string() + ": " + e.what());
  }
  const auto base = in.tellg();

  Archive archive;
  archive.meta = manifest.value("meta", nlohmann::json::object());
  for (const auto& entry : manifest.at("arrays")) {
    Array a;
    a.name = entry.at("name").get<std::string>();
    a.shape = entry.at("shape").get<std::vector<int>>();
    a.dtype = entry.at("dtype").get<std::string>();
    const auto n = element_count(a.shape);
    const auto offset = entry.at("offset").get<std::uint64_t>();
    if (entry.at("nbytes").get<std::uint64_t>() != n * dtype_size(a.dtype))
      throw RuntimeFailure("archive: array '" + a.name + "' has inconsistent byte count");
    in.seekg(base + static_cast<std::streamoff>(offset));
    a.data.resize(n);
    if (a.dtype == "f64") {
      in.read(reinterpret_cast<char*>(a.data.data()), static_cast<std::streamsize>(n * 8));
    } else if (a.dtype == "f32") {
      std::vector<float> f(n);
      in.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(n * 4));
      std::copy(f.begin(), f.end(), a.data.begin());
    } else {
      std::vector<std::int64_t> v(n);
      in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * 8));
      std::copy(v.begin(), v.end(), a.data.begin());
    }
    if (!in) throw RuntimeFailure("archive: truncated payload for '" + a.name + "'");
    archive.arrays.push_back(std::move(a));
  }
  return archive;
}

}  // namespace acda::archive
