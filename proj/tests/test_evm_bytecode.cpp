#include <doctest.h>

#include <set>

#include "evm_reference.hpp"
#include "vulnscan/error.hpp"
#include "vulnscan/evm_bytecode.hpp"
#include "vulnscan/random.hpp"

using namespace vulnscan;
using namespace vulnscan::evm;
using vulnscan::testing::reference_assigned;
using vulnscan::testing::reference_disassemble;

namespace {

std::vector<int> as_ints(const OpSequence& ops) {
  std::vector<int> out;
  for (Token t : ops) out.push_back(t.is_invalid() ? -1 : t.byte());
  return out;
}

}  // namespace

TEST_CASE("parse_hex") {
  CHECK(parse_hex("0x").empty());
  CHECK(parse_hex("").empty());
  CHECK(parse_hex("6001") == RawBytecode{0x60, 0x01});
  CHECK(parse_hex("0xDEadBe") == RawBytecode{0xde, 0xad, 0xbe});

  SUBCASE("invalid digit reports its position") {
    try {
      parse_hex("6G");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      REQUIRE(e.position().has_value());
      CHECK(*e.position() == 1);
    }
  }
  SUBCASE("position counts the prefix") {
    try {
      parse_hex("0x60z1");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(*e.position() == 4);
    }
  }
  CHECK_THROWS_AS(parse_hex("600"), ParseError);
  CHECK_THROWS_AS(parse_hex("0x6"), ParseError);
}

TEST_CASE("opcode table file matches the compiled-in default") {
  const auto from_file = OpcodeTable::load(VULNSCAN_OPCODE_TABLE_PATH);
  const auto& builtin = default_opcode_table();
  CHECK(builtin.size() == 149);
  for (unsigned b = 0; b < 256; ++b) {
    const auto byte = static_cast<std::uint8_t>(b);
    REQUIRE(from_file.contains(byte) == builtin.contains(byte));
    CHECK(builtin.contains(byte) == reference_assigned(b));
    if (builtin.contains(byte)) {
      CHECK(from_file.entry(byte)->mnemonic == builtin.entry(byte)->mnemonic);
    }
  }
  CHECK(builtin.mnemonic(Token(0x60)) == "PUSH1");
  CHECK(builtin.mnemonic(Token(0x7f)) == "PUSH32");
  CHECK(builtin.mnemonic(Token(0x0c)) == "XX");
  CHECK(builtin.entry(0x7f)->operand_bytes == 32);
  CHECK(builtin.entry(0x5f)->operand_bytes == 0);
}

TEST_CASE("opcode table parse errors") {
  CHECK_THROWS_AS(OpcodeTable::parse("61 PUSH2 1\n"), ParseError);
  CHECK_THROWS_AS(OpcodeTable::parse("01 ADD 0\n01 ADD 0\n"), ParseError);
  CHECK_THROWS_AS(OpcodeTable::parse("01 ADD\n"), ParseError);
  CHECK_THROWS_AS(OpcodeTable::parse("1ff BIG 0\n"), ParseError);
  CHECK_THROWS_AS(OpcodeTable::parse("02 MUL 1\n"), ParseError);
  const auto t = OpcodeTable::parse("# comment\n\n01 ADD 0\n");
  CHECK(t.size() == 1);
  try {
    OpcodeTable::parse("# c\n01 ADD 0\nzz X 0\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(*e.line() == 3);
  }
}

TEST_CASE("disassemble") {
  const RawBytecode code{0x60, 0x01, 0x60, 0x02, 0x01, 0x00};
  const auto ops = disassemble(code);
  CHECK(ops == OpSequence{Token(0x60), Token(0x60), Token(0x01), Token(0x00)});
  CHECK(as_ints(ops) == reference_disassemble(code));

  CHECK(disassemble(RawBytecode{0x0c}) == OpSequence{Token::invalid()});
  CHECK(disassemble(RawBytecode{}).empty());

  SUBCASE("truncated PUSH operand runs to end of code") {
    CHECK(disassemble(RawBytecode{0x01, 0x63, 0xaa}) == OpSequence{Token(0x01), Token(0x63)});
  }
}

TEST_CASE("disassemble agrees with the reference decoder on random code") {
  Rng rng(7);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<std::uint8_t> code(rng.below(200));
    for (auto& b : code) b = static_cast<std::uint8_t>(rng.below(256));
    const auto ops = disassemble(code);
    CHECK(as_ints(ops) == reference_disassemble(code));
    CHECK(ops.size() <= code.size());
  }
}

TEST_CASE("normalize") {
  CHECK(normalize({Token(0x66), Token(0x7f)}).tokens == std::vector{Token(0x60), Token(0x60)});
  CHECK(normalize({Token(0x01), Token::invalid(), Token(0x00)}).tokens ==
        std::vector{Token(0x01), Token::invalid(), Token(0x00)});
  CHECK(normalize({Token(0x82), Token(0x9f), Token(0xa2)}).tokens ==
        std::vector{Token(0x80), Token(0x90), Token(0xa0)});
  CHECK(normalize({Token(0x5f)}).tokens == std::vector{Token(0x5f)});  // PUSH0 is not in the family
}

TEST_CASE("normalize family rule over all byte values") {
  for (unsigned b = 0; b < 256; ++b) {
    const Token n = normalize_token(Token(static_cast<std::uint8_t>(b)));
    unsigned expected = b;
    if (b >= 0x60 && b <= 0x7f) expected = 0x60;
    else if (b >= 0x80 && b <= 0x8f) expected = 0x80;
    else if (b >= 0x90 && b <= 0x9f) expected = 0x90;
    else if (b >= 0xa0 && b <= 0xa4) expected = 0xa0;
    CHECK(n.byte() == expected);
    CHECK(normalize_token(n) == n);
  }
  CHECK(normalize_token(Token::invalid()).is_invalid());
}

TEST_CASE("render and parse_normalized") {
  CHECK(render({{Token(0x60), Token(0x01)}}) == "60 01");
  CHECK(render({}) == "");
  CHECK(render({{Token::invalid()}}) == "xx");
  CHECK(parse_normalized("60 01") == NormalizedSequence{{Token(0x60), Token(0x01)}});
  CHECK(parse_normalized("").tokens.empty());
  CHECK(parse_normalized("xx f1").tokens == std::vector{Token::invalid(), Token(0xf1)});

  CHECK_THROWS_AS(parse_normalized("61"), ParseError);     // merged member
  CHECK_THROWS_AS(parse_normalized("0c"), ParseError);     // unassigned byte
  CHECK_THROWS_AS(parse_normalized("6"), ParseError);
  CHECK_THROWS_AS(parse_normalized("60  01"), ParseError);
  CHECK_THROWS_AS(parse_normalized("60 "), ParseError);
  CHECK_THROWS_AS(parse_normalized("F1"), ParseError);
  CHECK_THROWS_AS(parse_normalized("XX"), ParseError);
}

TEST_CASE("pipeline is total and render round-trips on random byte strings") {
  Rng rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<std::uint8_t> code(rng.below(120));
    for (auto& b : code) b = static_cast<std::uint8_t>(rng.below(256));
    const auto seq = normalize(disassemble(code));
    const auto text = render(seq);
    CHECK(parse_normalized(text) == seq);
    CHECK(render(normalize(seq.tokens)) == text);  // idempotent
    CHECK(render(normalize(disassemble(code))) == text);
  }
}

TEST_CASE("preprocess") {
  CHECK(render(preprocess("6001")) == "60");
  CHECK(preprocess("0x").tokens.empty());
  CHECK(render(preprocess("0x6060604052")) == "60 60 52");
}
