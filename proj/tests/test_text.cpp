#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "rnmt/text.hpp"

using namespace rnmt;

TEST_CASE("tokenize clean mode splits on whitespace and lowercases") {
  CHECK(tokenize("a b c", TokenizeMode::Clean) == Sentence{"a", "b", "c"});
  CHECK(tokenize("  A\tB  ", TokenizeMode::Clean) == Sentence{"a", "b"});
  CHECK(tokenize("Hello, world!", TokenizeMode::Clean) ==
        Sentence{"hello,", "world!"});
}

TEST_CASE("tokenize asr-like strips punctuation and uppercase") {
  CHECK(tokenize("Hello, world!", TokenizeMode::AsrLike) ==
        Sentence{"hello", "world"});
  CHECK(tokenize("...", TokenizeMode::AsrLike).empty());  // empty-sentence
  Sentence s = tokenize("it's a (test)", TokenizeMode::AsrLike);
  for (const auto& t : s) {
    for (char c : t) {
      CHECK_FALSE(std::ispunct(static_cast<unsigned char>(c)));
      CHECK_FALSE(std::isupper(static_cast<unsigned char>(c)));
    }
  }
}

TEST_CASE("tokenize is idempotent on its own output") {
  std::mt19937_64 rng(7);
  const std::string alphabet = "aB.,z! q";
  for (int trial = 0; trial < 200; ++trial) {
    std::string raw;
    for (int i = 0; i < 30; ++i) raw += alphabet[rng() % alphabet.size()];
    for (auto mode : {TokenizeMode::Clean, TokenizeMode::AsrLike}) {
      Sentence once = tokenize(raw, mode);
      Sentence twice = tokenize(join_tokens(once), mode);
      CHECK(once == twice);
    }
  }
}

TEST_CASE("clean_pair length and ratio rules") {
  CHECK(clean_pair_keep(50, 50));
  CHECK_FALSE(clean_pair_keep(101, 60));  // over 100 tokens
  CHECK_FALSE(clean_pair_keep(10, 21));   // ratio below 1/2
  CHECK_FALSE(clean_pair_keep(21, 10));
  CHECK(clean_pair_keep(10, 20));
  CHECK_FALSE(clean_pair_keep(0, 5));

  // keep implies both conditions, exhaustively over 1..120 x 1..120
  for (std::size_t a = 1; a <= 120; ++a)
    for (std::size_t b = 1; b <= 120; ++b) {
      bool keep = clean_pair_keep(a, b);
      bool len_ok = a <= 100 && b <= 100;
      double r = static_cast<double>(a) / static_cast<double>(b);
      bool ratio_ok = r >= 0.5 && r <= 2.0;
      CHECK(keep == (len_ok && ratio_ok));
    }
}

TEST_CASE("build_vocab frequency and reserved ids") {
  std::vector<Sentence> corpus{{"a", "a", "b"}};
  Vocabulary v1 = build_vocab(corpus, 1);
  CHECK(v1.size() == 6);
  CHECK(v1.id("a") == 4);  // higher frequency first
  CHECK(v1.id("b") == 5);

  Vocabulary v2 = build_vocab(corpus, 2);
  CHECK(v2.size() == 5);
  CHECK(v2.id("b") == Vocabulary::kUnk);

  CHECK(v1.token(Vocabulary::kPad) == "<pad>");
  CHECK(v1.token(Vocabulary::kBos) == "<bos>");
  CHECK(v1.token(Vocabulary::kEos) == "<eos>");
  CHECK(v1.token(Vocabulary::kUnk) == "<unk>");

  CHECK_THROWS_AS(build_vocab({}, 1), std::invalid_argument);
}

TEST_CASE("build_vocab max_size against a frequency-sort oracle") {
  std::mt19937_64 rng(11);
  std::vector<Sentence> corpus;
  std::map<std::string, std::size_t> freq;
  for (int i = 0; i < 1000; ++i) {
    Sentence s;
    int len = 3 + static_cast<int>(rng() % 8);
    for (int j = 0; j < len; ++j) {
      std::string tok = "w" + std::to_string(rng() % 200);
      ++freq[tok];
      s.push_back(tok);
    }
    corpus.push_back(s);
  }
  Vocabulary v = build_vocab(corpus, 1, 50);
  CHECK(v.size() == 54);  // 50 + reserved

  // the kept tokens are exactly the 50 most frequent under the tie-break
  std::vector<std::pair<std::string, std::size_t>> sorted(freq.begin(),
                                                          freq.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  for (int i = 0; i < 50; ++i) CHECK(v.id(sorted[i].first) == 4 + i);
}

TEST_CASE("encode/decode round trip and UNK mapping") {
  Vocabulary v = build_vocab({{"a", "b", "c"}});
  Sentence s{"a", "c", "b"};
  CHECK(decode_ids(encode_ids(s, v), v) == s);
  CHECK(encode_ids({"zzz"}, v) == std::vector<int>{Vocabulary::kUnk});

  auto with_marks = encode_ids(s, v, true);
  CHECK(with_marks.front() == Vocabulary::kBos);
  CHECK(with_marks.back() == Vocabulary::kEos);
  CHECK(decode_ids(with_marks, v) == Sentence{"a", "c", "b"});
}

TEST_CASE("encode/decode round trip fuzz on in-vocabulary sentences") {
  std::vector<Sentence> corpus;
  for (int i = 0; i < 40; ++i) corpus.push_back({"t" + std::to_string(i)});
  Vocabulary v = build_vocab(corpus);
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    Sentence s;
    int len = 1 + static_cast<int>(rng() % 12);
    for (int j = 0; j < len; ++j)
      s.push_back("t" + std::to_string(rng() % 40));
    CHECK(decode_ids(encode_ids(s, v), v) == s);
  }
}

TEST_CASE("vocabulary save/load round trip") {
  Vocabulary v = build_vocab({{"x", "y", "x"}});
  std::string path = "vocab_test.tmp";
  v.save(path);
  Vocabulary loaded = Vocabulary::load(path);
  CHECK(loaded.size() == v.size());
  CHECK(loaded.id("x") == v.id("x"));
  CHECK(loaded.id("y") == v.id("y"));
  std::remove(path.c_str());
}
