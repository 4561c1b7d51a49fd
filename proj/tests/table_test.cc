// tests/table_test.cc

// Copyright 2026  The segprobe Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <sstream>

#include <doctest.h>

#include "segprobe/error.h"
#include "segprobe/table.h"
#include "test_util.h"

using namespace segprobe;

TEST_CASE("split and trim") {
  CHECK(split("a\tb\t\tc", '\t') == std::vector<std::string>{"a", "b", "", "c"});
  CHECK(split("", '\t') == std::vector<std::string>{""});
  CHECK(trim("  x y \t") == "x y");
  CHECK(join({"a", "b"}, ", ") == "a, b");
}

TEST_CASE("number formatting round-trips and never prints negative zero") {
  for (double x : {0.1, 1.0 / 3.0, 1e-300, 12345.678}) CHECK(parse_double(format_exact(x), "x") == x);
  CHECK(format_fixed(-0.0001, 3) == "0.000");
  CHECK(format_fixed(-0.5, 1) == "-0.5");
  CHECK(format_fixed(std::nan(""), 2) == "NA");
  CHECK_THROWS_AS(parse_double("1.5x", "ctx"), ParseError);
  CHECK_THROWS_AS(parse_int("2.0", "ctx"), ParseError);
}

TEST_CASE("TSV round trip keeps comments and rejects ragged rows") {
  TsvTable t;
  t.comments = {"config_hash: abc"};
  t.columns = {"a", "b"};
  t.rows = {{"1", "ʋ"}, {"2", ""}};
  std::ostringstream os;
  write_tsv(os, t);
  CHECK(os.str() == "# config_hash: abc\na\tb\n1\tʋ\n2\t\n");
  std::istringstream is(os.str());
  const auto back = parse_tsv(is, "mem");
  CHECK(back.comments == t.comments);
  CHECK(back.rows == t.rows);
  CHECK(back.column("b") == 1);
  CHECK_THROWS_AS(back.column("zzz"), ParseError);

  std::istringstream bad("a\tb\n1\n");
  CHECK_THROWS_WITH_AS(parse_tsv(bad, "bad.tsv"), doctest::Contains("bad.tsv:2"), ParseError);
}

TEST_CASE("atomic writes replace the file contents") {
  testing::TempDir dir("table");
  const auto p = dir / "x.txt";
  write_file_atomic(p, "one");
  write_file_atomic(p, "two");
  CHECK(read_file(p) == "two");
  CHECK_THROWS_AS(read_file(dir / "missing"), ParseError);
}
