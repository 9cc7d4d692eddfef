#include "topodp/io.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

namespace topodp::io {

namespace {

constexpr std::array<char, 8> kMagic = {'T', 'O', 'P', 'O', 'D', 'P', '\0', '\1'};

static_assert(std::endian::native == std::endian::little, "container format assumes little-endian");

}  // namespace

void write_container(const std::filesystem::path& path, const nlohmann::json& header,
                     std::span<const std::byte> payload) {
  nlohmann::json h = header;
  h["payload_bytes"] = payload.size();
  const std::string text = h.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const std::uint64_t len = text.size();
  out.write(kMagic.data(), kMagic.size());
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!out) throw std::runtime_error("short write to " + path.string());
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw std::runtime_error(path.string() + ": not a topodp container");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error(path.string() + ": truncated header");
  Container c;
  c.header = nlohmann::json::parse(text);
  const auto bytes = c.header.at("payload_bytes").get<std::uint64_t>();
  c.payload.resize(bytes);
  in.read(reinterpret_cast<char*>(c.payload.data()), static_cast<std::streamsize>(bytes));
  if (static_cast<std::uint64_t>(in.gcount()) != bytes)
    throw std::runtime_error(path.string() + ": truncated payload");
  return c;
}

void append_csv(const std::filesystem::path& path, const std::vector<std::string>& columns,
                const std::vector<std::vector<std::string>>& rows) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t k = 0; k < cells.size(); ++k) out << (k ? "," : "") << cells[k];
    out << '\n';
  };
  if (fresh) line(columns);
  for (const auto& r : rows) {
    if (r.size() != columns.size()) throw std::invalid_argument("CSV row width mismatch");
    line(r);
  }
}

std::string fmt_double(double v) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc{}) return "nan";
  return std::string(buf.data(), end);
}

}  // namespace topodp::io
