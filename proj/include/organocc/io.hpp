#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "organocc/volume.hpp"

namespace organocc {

// FNV-1a, rendered as 16 hex digits. Used for config fingerprints.
std::string fingerprint(const std::string& text);

std::string read_text(const std::string& path);
void write_text(const std::string& path, const std::string& text);

// Little-endian raw payloads.
void write_f32_payload(const std::string& path, const std::vector<float>& data);
std::vector<float> read_f32_payload(const std::string& path, std::size_t expected);
void write_bytes(const std::string& path, const std::vector<std::uint8_t>& data);
std::vector<std::uint8_t> read_bytes(const std::string& path);

// `.vol`: JSON header at `path`, float32 payload next to it (x fastest).
// `meta_json` is embedded verbatim under "meta".
void write_vol(const VolumeGrid& v, const std::string& path, const std::string& meta_json = "{}");
VolumeGrid read_vol(const std::string& path);

}  // namespace organocc
