#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "topodp/io.hpp"
#include "topodp/parallel.hpp"

using namespace topodp;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "topodp_test_io";
  fs::create_directories(dir);
  const auto p = dir / name;
  fs::remove(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("container round trip") {
  const auto p = scratch("c.bin");
  std::vector<std::byte> payload(37);
  for (std::size_t k = 0; k < payload.size(); ++k) payload[k] = static_cast<std::byte>(k * 7);
  io::write_container(p, {{"kind", "test"}, {"values", {1, 2, 3}}}, payload);
  const auto c = io::read_container(p);
  CHECK(c.header["kind"] == "test");
  CHECK(c.header["payload_bytes"] == 37);
  CHECK(c.payload == payload);

  io::write_container(p, {{"kind", "empty"}}, {});
  CHECK(io::read_container(p).payload.empty());
}

TEST_CASE("container corruption is reported") {
  const auto p = scratch("bad.bin");
  {
    std::ofstream out(p, std::ios::binary);
    out << "not a container at all";
  }
  CHECK_THROWS_AS(io::read_container(p), std::runtime_error);
  CHECK_THROWS_AS(io::read_container(scratch("missing.bin")), std::runtime_error);

  std::vector<std::byte> payload(100, std::byte{1});
  io::write_container(p, {{"kind", "x"}}, payload);
  fs::resize_file(p, fs::file_size(p) - 10);
  CHECK_THROWS_AS(io::read_container(p), std::runtime_error);
}

TEST_CASE("csv append writes the header once") {
  const auto p = scratch("t.csv");
  io::append_csv(p, {"a", "b"}, {{"1", "2"}});
  io::append_csv(p, {"a", "b"}, {{"3", "4"}, {"5", "6"}});
  CHECK(slurp(p) == "a,b\n1,2\n3,4\n5,6\n");
}

TEST_CASE("double formatting round-trips") {
  for (double v : {0.0, 1.0, -2.5, 0.1, 1.0 / 3.0, 1e-300, 6.02214076e23, 1.1963}) {
    const auto s = io::fmt_double(v);
    CHECK(std::stod(s) == v);
  }
  CHECK(io::fmt_double(0.5) == "0.5");
}

TEST_CASE("parallel_for covers every index once and propagates errors") {
  for (unsigned workers : {1u, 2u, 8u}) {
    std::vector<std::atomic<int>> hits(100);
    parallel_for(100, workers, [&](std::size_t i) { ++hits[i]; });
    for (auto& h : hits) CHECK(h.load() == 1);
  }
  CHECK_THROWS_AS(parallel_for(50, 4,
                               [](std::size_t i) {
                                 if (i == 17) throw std::logic_error("boom");
                               }),
                  std::logic_error);
  int calls = 0;
  parallel_for(0, 4, [&](std::size_t) { ++calls; });
  CHECK(calls == 0);
}
