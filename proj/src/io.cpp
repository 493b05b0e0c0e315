#include "organocc/io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "organocc/error.hpp"
#include "json.hpp"

namespace organocc {

static_assert(std::endian::native == std::endian::little, "payload I/O assumes a little-endian host");

std::string fingerprint(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path);
  out << text;
  require(static_cast<bool>(out), ErrorKind::Io, "write failed: " + path);
}

void write_f32_payload(const std::string& path, const std::vector<float>& data) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
  require(static_cast<bool>(out), ErrorKind::Io, "write failed: " + path);
}

std::vector<float> read_f32_payload(const std::string& path, std::size_t expected) {
  const auto bytes = read_bytes(path);
  require(bytes.size() == expected * sizeof(float), ErrorKind::Io,
          "payload size mismatch in " + path + ": " + std::to_string(bytes.size()) + " bytes");
  std::vector<float> out(expected);
  if (expected) std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& data) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  require(static_cast<bool>(out), ErrorKind::Io, "write failed: " + path);
}

std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

namespace {

std::string payload_name(const std::string& path) {
  return std::filesystem::path(path).filename().string() + ".raw";
}

}  // namespace

void write_vol(const VolumeGrid& v, const std::string& path, const std::string& meta_json) {
  v.validate();
  nlohmann::ordered_json h;
  h["dims"] = {v.dims[0], v.dims[1], v.dims[2]};
  h["spacing"] = {v.spacing.x, v.spacing.y, v.spacing.z};
  h["origin"] = {v.origin.x, v.origin.y, v.origin.z};
  h["dtype"] = "f32";
  h["order"] = "z-major";
  h["payload"] = payload_name(path);
  if (v.fill) h["fill"] = *v.fill;
  h["meta"] = nlohmann::ordered_json::parse(meta_json);
  write_text(path, h.dump(2) + "\n");
  std::vector<float> data(v.values.begin(), v.values.end());
  write_f32_payload((std::filesystem::path(path).parent_path() / payload_name(path)).string(), data);
}

VolumeGrid read_vol(const std::string& path) {
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Io, "bad .vol header " + path + ": " + e.what());
  }
  try {
    require(h.value("dtype", "") == "f32" && h.value("order", "") == "z-major", ErrorKind::Io,
            "unsupported .vol dtype/order in " + path);
    const auto d = h.at("dims").get<std::vector<int>>();
    const auto s = h.at("spacing").get<std::vector<double>>();
    const auto o = h.at("origin").get<std::vector<double>>();
    require(d.size() == 3 && s.size() == 3 && o.size() == 3, ErrorKind::Io, "bad .vol geometry in " + path);
    VolumeGrid v({d[0], d[1], d[2]}, {s[0], s[1], s[2]}, {o[0], o[1], o[2]});
    const std::string payload = h.value("payload", payload_name(path));
    const auto data =
        read_f32_payload((std::filesystem::path(path).parent_path() / payload).string(), v.values.size());
    for (std::size_t i = 0; i < data.size(); ++i) v.values[i] = data[i];
    if (h.contains("fill")) v.fill = static_cast<double>(static_cast<float>(h["fill"].get<double>()));
    return v;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Io, "bad .vol header " + path + ": " + e.what());
  }
}

}  // namespace organocc
