#include <doctest.h>

#include <cstdio>

#include "gradechat/errors.hpp"
#include "gradechat/level.hpp"
#include "gradechat/rng.hpp"
#include "gradechat/text.hpp"

using namespace gradechat;

TEST_SUITE("level") {
  TEST_CASE("values and labels line up from N5 to N1") {
    const auto all = Level::all();
    for (int i = 0; i < Level::kCount; ++i) {
      CHECK(all[static_cast<std::size_t>(i)].value() == i + 1);
      CHECK(all[static_cast<std::size_t>(i)].index() == i);
      CHECK(all[static_cast<std::size_t>(i)].label() == std::string(kLevelLabels[static_cast<std::size_t>(i)]));
    }
    CHECK(Level::from_value(1).label() == "N5");
    CHECK(Level::from_value(5).label() == "N1");
    CHECK(Level::from_value(1) < Level::from_value(2));
  }

  TEST_CASE("parse accepts labels and scalars, rejects the rest") {
    CHECK(Level::parse("N3")->value() == 3);
    CHECK(Level::parse("n1")->value() == 5);
    CHECK(Level::parse("2")->value() == 2);
    CHECK_FALSE(Level::parse("N6"));
    CHECK_FALSE(Level::parse("0"));
    CHECK_FALSE(Level::parse(""));
    CHECK_FALSE(Level::parse("N"));
    CHECK_THROWS_AS(Level::from_label("N0"), ValidationError);
    CHECK_THROWS_AS(Level::from_value(6), ValidationError);
    CHECK_THROWS_AS(Level::from_value(0), ValidationError);
  }
}

TEST_SUITE("text") {
  TEST_CASE("utf8 round trip and code point offsets") {
    const std::string s = "日本語abc。";
    CHECK(text::length(s) == 7);
    CHECK(text::encode_utf8(text::decode_utf8(s)) == s);
    CHECK(text::substr(s, 1, 3) == "本語");
    CHECK(text::substr(s, 3, 6) == "abc");
    CHECK(text::substr(s, 6, 7) == "。");
    CHECK(text::encode_utf8(U'😀') == "\xF0\x9F\x98\x80");
  }

  TEST_CASE("malformed utf8 is rejected") {
    CHECK_FALSE(text::is_valid_utf8("\xC3"));
    CHECK_FALSE(text::is_valid_utf8("\xC0\xAF"));      // overlong
    CHECK_FALSE(text::is_valid_utf8("\xED\xA0\x80"));  // surrogate
    CHECK_THROWS_AS(text::decode_utf8("a\xFF"), ValidationError);
    CHECK(text::is_valid_utf8(""));
  }

  TEST_CASE("nfkc folds width variants") {
    CHECK(text::nfkc("ｶﾒﾗ") == "カメラ");
    CHECK(text::nfkc("ＡＢＣ１") == "ABC1");
    CHECK(text::nfkc("～") == "~");
  }

  TEST_CASE("script classes") {
    CHECK(text::all_japanese_script("食べる"));
    CHECK(text::all_japanese_script("カメラー"));
    CHECK(text::all_japanese_script("人々"));
    CHECK_FALSE(text::all_japanese_script("abc"));
    CHECK_FALSE(text::all_japanese_script("猫1"));
    CHECK(text::is_punct_or_space(U'。'));
    CHECK(text::is_punct_or_space(U' '));
    CHECK(text::is_punct_or_space(U'\n'));
    CHECK_FALSE(text::is_punct_or_space(U'あ'));
    CHECK(text::is_hiragana(U'の'));
    CHECK_FALSE(text::is_hiragana(U'ノ'));
  }

  TEST_CASE("digest is fnv-1a 64 with a separator byte after each update") {
    const auto fnv = [](std::string_view bytes) {
      std::uint64_t h = 0xcbf29ce484222325ULL;
      for (unsigned char c : bytes) h = (h ^ c) * 0x100000001b3ULL;
      char buf[17];
      std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
      return std::string(buf);
    };
    // The oracle against published FNV-1a 64 vectors first.
    CHECK(fnv("") == "cbf29ce484222325");
    CHECK(fnv("a") == "af63dc4c8601ec8c");
    CHECK(fnv("foobar") == "85944171f73967e8");

    CHECK(text::Digest().hex() == "cbf29ce484222325");
    CHECK(text::Digest().update("a").hex() == fnv("a\xff"));
    CHECK(text::Digest().update("foo").update("bar").hex() == fnv("foo\xff" "bar\xff"));
    CHECK(text::Digest().update("fo").update("obar").hex() != text::Digest().update("foo").update("bar").hex());
  }

  TEST_CASE("split_lines drops carriage returns") {
    const auto lines = text::split_lines("a\r\nb\n\nc");
    REQUIRE(lines.size() == 4);
    CHECK(lines[0] == "a");
    CHECK(lines[1] == "b");
    CHECK(lines[2].empty());
    CHECK(lines[3] == "c");
  }
}

TEST_SUITE("rng") {
  TEST_CASE("derive_seed separates tags and is stable") {
    CHECK(derive_seed(1, {2}) == derive_seed(1, {2}));
    CHECK(derive_seed(1, {2}) != derive_seed(1, {3}));
    CHECK(derive_seed(1, {2, 3}) != derive_seed(1, {3, 2}));
    CHECK(derive_seed(0, {}) == splitmix64(0));
  }

  TEST_CASE("below is in range and roughly uniform") {
    Rng rng(42);
    std::array<int, 7> hist{};
    for (int i = 0; i < 70000; ++i) {
      const auto v = rng.below(7);
      REQUIRE(v < 7);
      ++hist[v];
    }
    for (int h : hist) CHECK(std::abs(h - 10000) < 500);
    CHECK(rng.below(1) == 0);
    CHECK(rng.below(0) == 0);
  }

  TEST_CASE("uniform stays in [0, 1)") {
    Rng rng(3);
    double lo = 1, hi = 0, sum = 0;
    for (int i = 0; i < 10000; ++i) {
      const double u = rng.uniform();
      lo = std::min(lo, u);
      hi = std::max(hi, u);
      sum += u;
    }
    CHECK(lo >= 0.0);
    CHECK(hi < 1.0);
    CHECK(sum / 10000 == doctest::Approx(0.5).epsilon(0.02));
  }
}
