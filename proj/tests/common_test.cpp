#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "gwinv/common.hpp"
#include "gwinv/rng.hpp"
#include "test_support.hpp"

using namespace gwinv;

TEST_CASE("fmt17 round-trips doubles exactly") {
  for (const double v : {1.0 / 3.0, 2.0, -1.5e-300, 6.02214076e23, 0.0,
                         -0.0, 1e-16, 201.9999999999}) {
    CHECK(parse_double(fmt17(v)) == v);
  }
}

TEST_CASE("parse_double rejects junk") {
  CHECK_THROWS_AS(parse_double("abc"), IoError);
  CHECK_THROWS_AS(parse_double(""), IoError);
  CHECK_THROWS_AS(parse_double("1.5x"), IoError);
  CHECK(parse_double("  2.5 ") == 2.5);
}

TEST_CASE("parse_int parses and rejects") {
  CHECK(parse_int("42") == 42);
  CHECK(parse_int("-7") == -7);
  CHECK_THROWS_AS(parse_int("4.2"), IoError);
  CHECK_THROWS_AS(parse_int(""), IoError);
}

TEST_CASE("split and trim") {
  const auto parts = split("a, b,,c", ',');
  REQUIRE(parts.size() == 4);
  CHECK(parts[0] == "a");
  CHECK(parts[1] == " b");
  CHECK(parts[2] == "");
  CHECK(parts[3] == "c");
  CHECK(trim("  x y  ") == "x y");
  CHECK(trim("") == "");
  CHECK(trim(" \t ") == "");
}

TEST_CASE("fnv1a64 matches published vectors") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
  CHECK(hex64(0xcbf29ce484222325ull) == "cbf29ce484222325");
  CHECK(hex64(0) == "0000000000000000");
}

TEST_CASE("text file round trip and missing-file error") {
  const std::string dir = gwtest::temp_dir("common");
  const std::string path = gwtest::temp_file(dir, "t.txt");
  write_text_file(path, "line1\nline2\n");
  CHECK(read_text_file(path) == "line1\nline2\n");
  CHECK_THROWS_AS(read_text_file(gwtest::temp_file(dir, "missing.txt")),
                  IoError);
}

TEST_CASE("rng streams are deterministic and mappings are in range") {
  Rng a(12345), b(12345);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng r(7);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const double v = r.uniform(2.0, 5.0);
    CHECK(v >= 2.0);
    CHECK(v < 5.0);
    CHECK(r.uniform_index(10) < 10);
  }
}

TEST_CASE("rng normal moments are sane") {
  Rng r(99);
  double sum = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.05);
  CHECK(std::abs(sq / n - 1.0) < 0.05);
}

TEST_CASE("rng substreams differ from parent and from each other") {
  const Rng root(42);
  Rng a = root.substream("alpha");
  Rng b = root.substream("beta");
  Rng a2 = root.substream("alpha");
  CHECK(a.next_u64() != b.next_u64());
  Rng a3 = root.substream("alpha");
  CHECK(a3.next_u64() == a2.next_u64());
  Rng i0 = root.substream("rep", 0);
  Rng i1 = root.substream("rep", 1);
  CHECK(i0.next_u64() != i1.next_u64());
}

TEST_CASE("rng shuffle is a permutation and seed-stable") {
  Rng r(5);
  std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7};
  r.shuffle(v);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7});

  Rng r2(5);
  std::vector<int> w{0, 1, 2, 3, 4, 5, 6, 7};
  r2.shuffle(w);
  CHECK(v == w);
}
