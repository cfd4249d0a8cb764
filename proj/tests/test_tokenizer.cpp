#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "neox/corpus.hpp"
#include "neox/error.hpp"
#include "neox/tokenizer.hpp"

using namespace neox::tok;

namespace {

const TokenizerModel& trained() {
  static const TokenizerModel m = [] {
    const auto docs = neox::synthetic_documents(300, 7);
    return train_bpe(docs, {600, {"<|endoftext|>"}}).model;
  }();
  return m;
}

std::string concat(const std::vector<Segment>& segs) {
  std::string s;
  for (const auto& g : segs) s += g.bytes;
  return s;
}

}  // namespace

TEST_CASE("base vocabulary layout") {
  const std::vector<std::string> reserved{"<|endoftext|>", "<|pad|>"};
  const auto m = TokenizerModel::with_base_vocab(reserved);
  CHECK(m.vocab_size() == kBaseVocab + 2);
  CHECK(min_vocab_size(2) == kBaseVocab + 2);
  for (int b = 0; b < 256; ++b) CHECK(m.token_bytes(b) == std::string(1, static_cast<char>(b)));
  for (int k = 1; k <= kMaxSpaceRun; ++k) {
    CHECK(m.token_bytes(m.space_run_id(k)) == std::string(static_cast<std::size_t>(k), ' '));
    CHECK(m.is_space_run(m.space_run_id(k)));
  }
  CHECK(!m.is_space_run(' '));
  CHECK(m.reserved_ids().size() == 2);
  CHECK(m.token_bytes(m.reserved_ids()[0]) == "<|endoftext|>");
  CHECK_NOTHROW(m.validate());
  CHECK_THROWS_AS(m.token_bytes(m.id_bounds()), neox::ValidationError);
}

TEST_CASE("pretokenize is total and lossless") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 300; ++i) {
    std::string s(rng() % 40, '\0');
    for (char& c : s) c = static_cast<char>(rng() % 256);
    CHECK(concat(pretokenize(s)) == s);
  }
  const auto segs = pretokenize("def f(x):\n    if x:");
  CHECK(concat(segs) == "def f(x):\n    if x:");
  bool saw_run = false;
  for (const auto& g : segs) saw_run |= g.kind == SegmentKind::space_run && g.bytes == "    ";
  CHECK(saw_run);
}

TEST_CASE("space runs") {
  const auto& m = trained();
  for (int k = 1; k <= 24; ++k) {
    const auto ids = m.encode(std::string(static_cast<std::size_t>(k), ' '));
    REQUIRE(ids.size() == 1);
    CHECK(ids[0] == m.space_run_id(k));
  }
  for (int k = 25; k <= 48; ++k) CHECK(m.encode(std::string(static_cast<std::size_t>(k), ' ')).size() == 2);
  CHECK(m.encode(std::string(49, ' ')).size() == 3);
}

TEST_CASE("string-start words encode like space-prefixed words") {
  const auto& m = trained();
  for (const char* w : {"the", "model", "gradient", "zebra", "Qx9", "!"}) {
    const std::string word = w;
    CHECK(m.encode(word) == m.encode(" " + word, {.at_string_start = false}));
    CHECK(m.decode(m.encode(word)) == word);
  }
}

TEST_CASE("round trips") {
  const auto& m = trained();
  std::mt19937_64 rng(2);
  for (int i = 0; i < 500; ++i) {
    std::string s(rng() % 64, '\0');
    for (char& c : s) c = static_cast<char>(rng() % 256);
    CHECK(m.decode(m.encode(s)) == s);
    CHECK(m.decode(m.encode(s, {.at_string_start = false}), {.at_string_start = false}) == s);
  }
  for (const auto& doc : neox::synthetic_documents(20, 99)) CHECK(m.decode(m.encode(doc)) == doc);
  const std::string utf8 = "na\xC3\xAFve caf\xC3\xA9 \xE6\x97\xA5\xE6\x9C\xAC \xF0\x9F\x98\x80";
  CHECK(m.decode(m.encode(utf8)) == utf8);
}

TEST_CASE("decode rejects ids outside the vocabulary") {
  const auto& m = trained();
  const std::vector<TokenId> bad{1, m.id_bounds()};
  CHECK_THROWS_AS(m.decode(bad), neox::ValidationError);
  const std::vector<TokenId> neg{-1};
  CHECK_THROWS_AS(m.decode(neg), neox::ValidationError);
}

TEST_CASE("bpe training") {
  const auto docs = neox::synthetic_documents(100, 3);
  const auto a = train_bpe(docs, {400, {}});
  const auto b = train_bpe(docs, {400, {}});
  CHECK(a.model == b.model);
  CHECK(a.model.vocab_size() == 400);
  CHECK(a.model.merges().size() == 400 - kBaseVocab);
  CHECK_NOTHROW(a.model.validate());
  // Merges compress: the trained model never needs more tokens than bytes.
  for (const auto& d : docs) CHECK(a.model.encode(d).size() < d.size());

  CHECK_THROWS_AS(train_bpe(docs, {kBaseVocab - 1, {}}), neox::ValidationError);
  const auto base = train_bpe(docs, {kBaseVocab, {}});
  CHECK(base.model.merges().empty());
}

TEST_CASE("first merges include the implicit leading space") {
  const std::vector<std::string> docs{"xy"};
  const auto r = train_bpe(docs, {kBaseVocab + 2, {}});
  REQUIRE(r.model.merges().size() == 2);
  CHECK(r.model.token_bytes(r.model.merges()[0].result) == " x");
  CHECK(r.model.token_bytes(r.model.merges()[1].result) == " xy");
  CHECK(r.model.encode("xy").size() == 1);
}

TEST_CASE("training stops with a warning when pairs run out") {
  const std::vector<std::string> docs{"a"};
  const auto r = train_bpe(docs, {kBaseVocab + 5, {}});
  CHECK(r.model.vocab_size() == kBaseVocab + 1);
  CHECK(!r.warnings.empty());
}

TEST_CASE("serialization round trip and parse errors") {
  const auto& m = trained();
  const std::string text = serialize_model(m);
  CHECK(parse_model(text) == m);
  CHECK(escape_bytes(" a\\\n") == "\\x20a\\x5C\\x0A");
  CHECK(unescape_bytes(escape_bytes("\x01 z\xff")) == "\x01 z\xff");
  CHECK_THROWS_AS(unescape_bytes("\\x4"), neox::ValidationError);

  CHECK_THROWS_AS(parse_model("bogus header\n"), neox::ParseError);
  std::string broken = text;
  const auto pos = broken.find("#MERGES\n");
  broken.insert(pos + 8, "1 2 zzz\n");
  try {
    parse_model(broken);
    FAIL("expected a parse error");
  } catch (const neox::ParseError& e) {
    CHECK(e.line() > 1);
  }
}
