#include <gtest/gtest.h>

#include <set>

#include "memcap/corpus.hpp"

namespace memcap {
namespace {

TEST(Corpus, SentenceStarts) {
  const std::string text = "  One. Two!  Three?\nFour.No split. ";
  const auto starts = sentence_starts(text);
  std::vector<std::string> heads;
  for (auto s : starts) heads.push_back(text.substr(s, 4));
  EXPECT_EQ(heads, (std::vector<std::string>{"One.", "Two!", "Thre", "Four"}));
  EXPECT_TRUE(sentence_starts("   ").empty());
}

std::vector<CorpusFile> toy_corpus() {
  std::string a, b;
  for (int i = 0; i < 40; ++i) a += "The cat number " + std::to_string(i) + " sat on the mat. ";
  for (int i = 0; i < 40; ++i) b += "A dog barked " + std::to_string(i) + " times! ";
  return {{"a.txt", a}, {"b.txt", b}};
}

TEST(Corpus, NaturalPassagesHaveExactLengthAndAreDistinct) {
  const auto corpus = toy_corpus();
  const WordTokenizer tok(build_word_vocab(join_corpus(corpus), 200));
  const auto passages = sample_natural_passages(corpus, tok, 12, 20, 7);
  ASSERT_EQ(passages.size(), 20u);
  std::set<std::vector<TokenId>> distinct;
  for (const auto& p : passages) {
    EXPECT_EQ(p.n(), 12u);
    EXPECT_EQ(p.source, SourceKind::kNatural);
    distinct.insert(p.tokens);
    // Each passage starts at a sentence start and is a prefix of the text from there.
    const auto colon = p.provenance.find(':');
    const auto& file = p.provenance.substr(0, colon) == "a.txt" ? corpus[0] : corpus[1];
    const auto offset = std::stoul(p.provenance.substr(colon + 1));
    auto from_here = tok.encode(std::string_view(file.text).substr(offset));
    from_here.resize(12);
    EXPECT_EQ(from_here, p.tokens);
  }
  EXPECT_EQ(distinct.size(), 20u);
  EXPECT_EQ(sample_natural_passages(corpus, tok, 12, 20, 7)[3].tokens, passages[3].tokens);
  EXPECT_THROW(sample_natural_passages(corpus, tok, 12, 1000, 7), ConfigError);
}

TEST(Corpus, RandomWordTextsAreSeededAndExact) {
  const std::vector<std::string> words = {"alpha", "beta", "gamma", "delta", "it's"};
  const WordTokenizer tok(build_word_vocab("alpha beta gamma delta it ' s", 20));
  const auto a = generate_random_word_texts(words, tok, 15, 5, 3);
  const auto b = generate_random_word_texts(words, tok, 15, 5, 3);
  ASSERT_EQ(a.size(), 5u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].n(), 15u);
    EXPECT_EQ(a[i].tokens, b[i].tokens);
    for (auto id : a[i].tokens) EXPECT_NE(id, *tok.vocab().unk());
  }
  EXPECT_NE(a[0].tokens, a[1].tokens);
  EXPECT_NE(generate_random_word_texts(words, tok, 15, 1, 4)[0].tokens, a[0].tokens);
}

TEST(Corpus, WordListParsing) {
  EXPECT_EQ(parse_word_list(" the\n\nof \nthe\r\nand\n"), (std::vector<std::string>{"the", "of", "and"}));
  EXPECT_THROW(parse_word_list("\n \n"), ConfigError);
  const WordTokenizer tok(build_word_vocab("the of", 10));
  const std::vector<std::string> words = {"the", "zebra", "of"};
  EXPECT_EQ(known_words(words, tok), (std::vector<std::string>{"the", "of"}));
}

TEST(Corpus, BundledDataIsPresent) {
  const auto files = load_corpus_files(bundled_corpus_paths());
  EXPECT_EQ(files.size(), 4u);
  for (const auto& f : files) EXPECT_GT(f.text.size(), 100000u) << f.name;
  EXPECT_GT(load_word_list(bundled_word_list_path()).size(), 1000u);
  EXPECT_THROW(load_corpus_files({"/nonexistent/file.txt"}), IoError);
}

TEST(Corpus, SourceKindNames) {
  EXPECT_EQ(source_kind_from_string("natural"), SourceKind::kNatural);
  EXPECT_EQ(to_string(SourceKind::kRandom), "random");
  EXPECT_THROW(source_kind_from_string("poetry"), ConfigError);
}

}  // namespace
}  // namespace memcap
