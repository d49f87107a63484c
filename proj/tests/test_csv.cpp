#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include <icunomo/csv.hpp>

using namespace icunomo;

TEST(Csv, QuotedCellsAndBom) {
  std::istringstream in("\xEF\xBB\xBFid,note\r\n1,\"a, \"\"b\"\"\"\r\n2,plain\n");
  const auto t = parse_csv(in);
  ASSERT_EQ(t.header, (std::vector<std::string>{"id", "note"}));
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0][1], "a, \"b\"");
  EXPECT_EQ(*t.column("note"), 1u);
}

TEST(Csv, EmptyInputHasNoHeader) {
  std::istringstream in("");
  try {
    parse_csv(in);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyFile);
  }
}

TEST(Csv, WriteThenParseRoundTrips) {
  CsvTable t{{"a", "b,c"}, {{"x\"y", "1"}, {"", "2.5"}}};
  std::stringstream s;
  write_csv(s, t);
  const auto back = parse_csv(s);
  EXPECT_EQ(back.header, t.header);
  EXPECT_EQ(back.rows, t.rows);
}

TEST(Csv, DoubleFormattingRoundTripsExactly) {
  std::mt19937_64 g(5);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 2000; ++i) {
    double v = u(g) * std::pow(10.0, static_cast<int>(g() % 20) - 10);
    bool ok = true;
    EXPECT_EQ(*parse_number(format_double(v), ok), v);
    EXPECT_TRUE(ok);
  }
  EXPECT_EQ(format_double(std::nan("")), "");
}

TEST(Csv, ParseNumberCases) {
  bool ok = true;
  EXPECT_FALSE(parse_number("  ", ok).has_value());
  EXPECT_TRUE(ok);
  EXPECT_EQ(*parse_number(" +3.5 ", ok), 3.5);
  EXPECT_FALSE(parse_number("3.5x", ok).has_value());
  EXPECT_FALSE(ok);
  parse_number("inf", ok);
  EXPECT_FALSE(ok);
}

TEST(Timestamp, AcceptedForms) {
  const auto a = parse_timestamp("2150-03-01");
  const auto b = parse_timestamp("2150-03-01T12:30");
  const auto c = parse_timestamp("2150-03-01 12:30:15.250Z");
  ASSERT_TRUE(a && b && c);
  EXPECT_DOUBLE_EQ(days_between(*a, *b), 0.5 + 30.0 / 1440.0);
  EXPECT_EQ(format_timestamp(*c), "2150-03-01T12:30:15");
  EXPECT_EQ(parse_timestamp(format_timestamp(*c)), c);
}

TEST(Timestamp, Rejected) {
  for (const char* s : {"", "2150-13-01", "2150-02-30", "2150/03/01", "2150-03-01X10:00", "2150-03-01T25:00"})
    EXPECT_FALSE(parse_timestamp(s).has_value()) << s;
}

TEST(Timestamp, LeapDay) {
  EXPECT_TRUE(parse_timestamp("2024-02-29"));
  EXPECT_FALSE(parse_timestamp("2023-02-29"));
  EXPECT_DOUBLE_EQ(days_between(*parse_timestamp("2024-02-28"), *parse_timestamp("2024-03-01")), 2.0);
}
