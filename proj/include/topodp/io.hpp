#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

namespace topodp::io {

/// Header + binary blob container. Layout: 8-byte magic "TOPODP\0\1",
/// little-endian u64 header length, UTF-8 JSON header, raw payload bytes.
struct Container {
  nlohmann::json header;
  std::vector<std::byte> payload;
};

void write_container(const std::filesystem::path& path, const nlohmann::json& header,
                     std::span<const std::byte> payload);
Container read_container(const std::filesystem::path& path);

/// Appends rows to a CSV, writing `columns` as the header when the file is new or empty.
void append_csv(const std::filesystem::path& path, const std::vector<std::string>& columns,
                const std::vector<std::vector<std::string>>& rows);

/// Shortest round-trippable decimal form of a double.
std::string fmt_double(double v);

}  // namespace topodp::io
