#include <gtest/gtest.h>

#include <random>

#include "memcap/tokenizer.hpp"

namespace memcap {
namespace {

TEST(WordTokenizer, SplitsPunctuationAndKeepsSpecials) {
  EXPECT_EQ(split_words("Hello, world!  It's <bos>x<unk>"),
            (std::vector<std::string>{"Hello", ",", "world", "!", "It", "'", "s", "<bos>", "x", "<unk>"}));
  EXPECT_TRUE(split_words(" \n\t").empty());
}

TEST(WordTokenizer, VocabularyRanksByFrequencyThenLexically) {
  const Vocabulary v = build_word_vocab("b a b c c b a d", 5);
  EXPECT_EQ(v.tokens(), (std::vector<std::string>{"<bos>", "<unk>", "b", "a", "c"}));
  EXPECT_EQ(v.bos(), TokenId{0});
  EXPECT_EQ(v.unk(), TokenId{1});
  EXPECT_THROW(build_word_vocab("", 5), ConfigError);
}

TEST(WordTokenizer, UnknownWordsMapToUnk) {
  const WordTokenizer tok(build_word_vocab("the cat sat .", 10));
  const auto ids = tok.encode("the dog sat.");
  EXPECT_EQ(ids.size(), 4u);
  EXPECT_EQ(ids[1], *tok.vocab().unk());
  EXPECT_EQ(tok.decode(ids), "the <unk> sat.");
}

TEST(WordTokenizer, CanonicalDecodeReencodesExactly) {
  const std::string corpus = "Alice said, \"Oh (dear) me!\" -- it's time; isn't it? [yes] {no} `q'";
  const WordTokenizer tok(build_word_vocab(corpus, 64));
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<TokenId> pick(0, static_cast<TokenId>(tok.vocab().size() - 1));
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<TokenId> ids(1 + trial % 20);
    for (auto& id : ids) id = pick(rng);
    EXPECT_EQ(tok.encode(tok.decode(ids)), ids) << tok.decode(ids);
  }
}

TEST(WordTokenizer, VocabularyJsonRoundTrip) {
  const Vocabulary v = build_word_vocab("x y z y", 4);
  const Vocabulary back = Vocabulary::from_json(v.to_json());
  EXPECT_EQ(back.tokens(), v.tokens());
  EXPECT_EQ(back.bos(), v.bos());
  EXPECT_EQ(back.unk(), v.unk());
  EXPECT_THROW(Vocabulary({"a", "a"}, std::nullopt, std::nullopt), ConfigError);
  EXPECT_THROW(v.token(99), ShapeError);
}

// Hand-built GPT-2 style tables: "Ġ" is the printable stand-in for a space.
BpeTokenizer toy_bpe() {
  const std::vector<std::string> tokens = {"h", "e", "l", "o", "Ġ", "w", "r", "d", "he", "ll", "hell", "hello", "Ġw",
                                           "!", "<|endoftext|>"};
  nlohmann::json map = nlohmann::json::object();
  for (std::size_t i = 0; i < tokens.size(); ++i) map[tokens[i]] = i;
  return BpeTokenizer(BpeMerges::parse("#version: 0.2\nh e\nl l\nhe ll\nhell o\nĠ w\n"),
                      Vocabulary::from_token_map(map));
}

TEST(Bpe, AppliesMergesByRank) {
  const BpeTokenizer tok = toy_bpe();
  const auto ids = tok.encode("hello world!");
  std::vector<std::string> surfaces;
  for (auto id : ids) surfaces.push_back(tok.vocab().token(id));
  EXPECT_EQ(surfaces, (std::vector<std::string>{"hello", "Ġw", "o", "r", "l", "d", "!"}));
  EXPECT_EQ(tok.decode(ids), "hello world!");
  EXPECT_EQ(tok.vocab().bos(), TokenId{14});
}

TEST(Bpe, PretokenizerFollowsGpt2Pattern) {
  EXPECT_EQ(bpe_pretokenize("I'm here  42x!"),
            (std::vector<std::string>{"I", "'m", " here", " ", " 42", "x", "!"}));
}

TEST(Bpe, ByteTableIsABijection) {
  const auto& table = byte_to_unicode();
  ASSERT_EQ(table.size(), 256u);
  for (int b = 0; b < 256; ++b) EXPECT_EQ(unicode_to_byte().at(table[b]), b);
  EXPECT_EQ(table[' '], "Ġ");
}

TEST(Bpe, RejectsSparseVocabulary) {
  EXPECT_THROW(Vocabulary::from_token_map(nlohmann::json{{"a", 0}, {"b", 2}}), ParseError);
}

}  // namespace
}  // namespace memcap
