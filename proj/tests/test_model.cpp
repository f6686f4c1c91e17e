#include <gtest/gtest.h>

#include <filesystem>
#include <numeric>
#include <random>

#include "memcap/archive.hpp"
#include "memcap/model.hpp"
#include "reference_model.hpp"
#include "test_util.hpp"

namespace memcap {
namespace {

using testing::random_tokens;
using testing::random_values;
using testing::tiny_model;

// The analytic gradient of the compression loss with respect to the mem
// vectors agrees with central differences of the double-precision reference.
TEST(ModelGradients, MemVectorsMatchFiniteDifferences) {
  const ModelWeights w = tiny_model(3);
  std::mt19937_64 rng(17);
  for (int c = 0; c < 10; ++c) {
    const std::size_t k = 1 + c % 3;
    const auto tokens = random_tokens(6 + c, w.config.vocab_size, rng);
    const auto mem = random_values(k * w.config.d_model, rng);
    Tensor prefix({k, w.config.d_model}, mem, true);
    Tape tape;
    tape.backward(cross_entropy_bits(tape, target_logits(tape, w, &prefix, tokens), tokens));
    for (std::size_t i = 0; i < mem.size(); i += 7) {
      std::vector<double> plus(mem.begin(), mem.end()), minus = plus;
      const double h = 1e-4;
      plus[i] += h;
      minus[i] -= h;
      const double numeric =
          (testing::reference_mem_loss(w, plus, tokens) - testing::reference_mem_loss(w, minus, tokens)) / (2 * h);
      EXPECT_NEAR(prefix.grad()[i], numeric, 5e-3 * std::max(1.0, std::abs(numeric))) << "case " << c << " i " << i;
    }
  }
}

TEST(Model, ForwardMatchesReference) {
  const ModelWeights w = tiny_model(12);
  std::mt19937_64 rng(3);
  const auto tokens = random_tokens(9, w.config.vocab_size, rng);
  const auto mem = random_values(2 * w.config.d_model, rng);
  Tensor prefix({2, w.config.d_model}, mem);
  Tape tape;
  const Tensor logits = forward(tape, w, &prefix, tokens);
  testing::Matrix ref_prefix(2, std::vector<double>(w.config.d_model));
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t i = 0; i < w.config.d_model; ++i) ref_prefix[r][i] = mem[r * w.config.d_model + i];
  }
  const auto ref = testing::reference_forward(w, ref_prefix, tokens);
  for (std::size_t t = 0; t < ref.size(); ++t) {
    for (std::size_t v = 0; v < ref[t].size(); ++v) {
      ASSERT_NEAR(logits.at(t, v), ref[t][v], 1e-3 * std::max(1.0, std::abs(ref[t][v])));
    }
  }
}

TEST(ModelGradients, FrozenWeightsGetNoGradient) {
  const ModelWeights w = tiny_model(3);
  Tensor prefix = Tensor::zeros({1, w.config.d_model}, true);
  const std::vector<TokenId> tokens = {1, 2, 3};
  Tape tape;
  tape.backward(cross_entropy_bits(tape, target_logits(tape, w, &prefix, tokens), tokens));
  for (const auto& [name, t] : w.named_tensors()) EXPECT_FALSE(t.has_grad()) << name;
}

TEST(Model, ForwardShapes) {
  const ModelWeights w = tiny_model();
  std::mt19937_64 rng(1);
  const auto tokens = random_tokens(5, 64, rng);
  Tape tape;
  EXPECT_EQ(forward(tape, w, nullptr, tokens).shape(), (Shape{5, 64}));
  Tensor prefix({2, 32}, random_values(64, rng));
  EXPECT_EQ(forward(tape, w, &prefix, tokens).shape(), (Shape{7, 64}));
  EXPECT_EQ(target_logits(tape, w, &prefix, tokens).shape(), (Shape{5, 64}));
  EXPECT_EQ(target_logits(tape, w, nullptr, tokens).shape(), (Shape{5, 64}));
}

TEST(Model, TargetLogitsWithoutPrefixStartFromBos) {
  const ModelWeights w = tiny_model();
  const std::vector<TokenId> tokens = {5, 6, 7};
  const std::vector<TokenId> context = {0, 5, 6};
  Tape tape;
  Tensor a = target_logits(tape, w, nullptr, tokens);
  Tensor b = forward(tape, w, nullptr, context);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_FLOAT_EQ(a.values()[i], b.values()[i]);
}

TEST(Model, ContextLimitIsEnforced) {
  const ModelWeights w = tiny_model();
  std::vector<TokenId> tokens(w.config.max_positions + 1, 1);
  Tape tape;
  EXPECT_THROW(forward(tape, w, nullptr, tokens), ConfigError);
  EXPECT_THROW(greedy_decode(w, nullptr, w.config.max_positions), ConfigError);
}

TEST(Model, GreedyDecodeReproducesTeacherForcedArgmax) {
  const ModelWeights w = tiny_model(4);
  std::mt19937_64 rng(2);
  Tensor prefix({1, 32}, random_values(32, rng));
  const auto decoded = greedy_decode(w, &prefix, 12);
  ASSERT_EQ(decoded.size(), 12u);
  // The decoded sequence is, by construction, predicted perfectly by argmax.
  EXPECT_EQ(teacher_forced_correct(w, &prefix, decoded), decoded.size());
}

TEST(Model, ConfigValidation) {
  ModelConfig c = testing::tiny_config();
  c.n_heads = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = testing::tiny_config();
  c.vocab_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = testing::tiny_config();
  EXPECT_EQ(ModelConfig::from_json(c.to_json()), c);
}

TEST(Model, InitIsDeterministicAndHashDiscriminates) {
  const auto c = testing::tiny_config();
  EXPECT_EQ(init_model(c, 9).hash(), init_model(c, 9).hash());
  EXPECT_NE(init_model(c, 9).hash(), init_model(c, 10).hash());
}

TEST(Model, NextTokenProbsMatchTargetLogits) {
  const ModelWeights w = tiny_model(6);
  const std::vector<TokenId> tokens = {3, 9, 4};
  const auto probs = next_token_probs(w, std::span(tokens).first(2));
  double total = 0.0;
  for (float p : probs) total += p;
  EXPECT_NEAR(total, 1.0, 1e-5);
  Tape tape;
  const auto rows = row_cross_entropy_bits(target_logits(tape, w, nullptr, tokens), tokens);
  EXPECT_NEAR(-std::log2(probs[4]), rows[2], 1e-4);
}

TEST(Archive, RoundTripPreservesWeightsAndMetadata) {
  const ModelWeights w = tiny_model(8);
  const auto path = (std::filesystem::temp_directory_path() / "memcap_archive_test.safetensors").string();
  save_weights(w, path, {{"note", "hello"}});
  const ModelWeights back = load_weights(path);
  EXPECT_EQ(back.hash(), w.hash());
  EXPECT_EQ(back.config, w.config);
  EXPECT_EQ(read_archive(path).metadata.at("note"), "hello");
  std::filesystem::remove(path);
}

TEST(Archive, RejectsCorruptInput) {
  EXPECT_THROW(parse_archive({1, 2, 3}), ParseError);
  const ModelWeights w = tiny_model(8);
  Archive a;
  for (const auto& nt : w.named_tensors()) a.tensors.push_back(nt);
  auto bytes = serialize_archive(a);
  bytes.resize(bytes.size() - 4);
  EXPECT_THROW(parse_archive(bytes), ParseError);
  Archive wrong = a;
  wrong.tensors.pop_back();
  EXPECT_THROW(weights_from_archive(wrong, w.config), ParseError);
}

}  // namespace
}  // namespace memcap
