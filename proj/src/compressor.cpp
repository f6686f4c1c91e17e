#include "memcap/compressor.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>

#include "memcap/archive.hpp"

namespace memcap {

void adamw_update(std::span<float> param, std::span<const float> grad, std::span<float> first_moment,
                  std::span<float> second_moment, std::uint64_t step, const AdamWParams& p) {
  if (grad.size() != param.size() || first_moment.size() != param.size() || second_moment.size() != param.size()) {
    throw ShapeError("adamw_update: parameter, gradient and moment sizes differ");
  }
  if (step == 0) throw ConfigError("adamw_update: step is 1-based");
  check_finite(grad, "adamw gradient");
  const double bc1 = 1.0 - std::pow(static_cast<double>(p.beta1), static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(static_cast<double>(p.beta2), static_cast<double>(step));
  const float decay = 1.0f - p.learning_rate * p.weight_decay;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const float g = grad[i];
    first_moment[i] = p.beta1 * first_moment[i] + (1.0f - p.beta1) * g;
    second_moment[i] = p.beta2 * second_moment[i] + (1.0f - p.beta2) * g * g;
    const double m_hat = first_moment[i] / bc1;
    const double v_hat = second_moment[i] / bc2;
    param[i] = param[i] * decay - static_cast<float>(p.learning_rate * m_hat / (std::sqrt(v_hat) + p.epsilon));
  }
  check_finite(param, "adamw update");
}

void CompressionConfig::validate() const {
  if (k < 1) throw ConfigError("compression: K must be at least 1");
  if (!(accuracy_target > 0.0 && accuracy_target <= 1.0)) {
    throw ConfigError("compression: accuracy_target must lie in (0, 1]");
  }
  if (max_steps < 1) throw ConfigError("compression: max_steps must be at least 1");
  if (eval_every < 1) throw ConfigError("compression: eval_every must be at least 1");
  if (!(learning_rate > 0.0f)) throw ConfigError("compression: learning rate must be positive");
  if (lr_schedule != "constant" && lr_schedule != "cosine") {
    throw ConfigError("compression: unknown lr_schedule '" + lr_schedule + "'");
  }
}

nlohmann::json CompressionConfig::to_json() const {
  return {{"k", k},
          {"learning_rate", learning_rate},
          {"beta1", beta1},
          {"beta2", beta2},
          {"weight_decay", weight_decay},
          {"adam_epsilon", adam_epsilon},
          {"max_steps", max_steps},
          {"accuracy_target", accuracy_target},
          {"eval_every", eval_every},
          {"init_scale_mode", init_scale_mode == InitScale::kEmbeddingStd ? "embedding_std" : "fixed"},
          {"fixed_init_std", fixed_init_std},
          {"seed", seed},
          {"lr_schedule", lr_schedule},
          {"grad_clip", grad_clip},
          {"trace_every", trace_every}};
}

CompressionConfig CompressionConfig::from_json(const nlohmann::json& j) {
  CompressionConfig c;
  c.k = j.value("k", c.k);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.adam_epsilon = j.value("adam_epsilon", c.adam_epsilon);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.accuracy_target = j.value("accuracy_target", c.accuracy_target);
  c.eval_every = j.value("eval_every", c.eval_every);
  const auto mode = j.value("init_scale_mode", std::string("embedding_std"));
  if (mode == "embedding_std") {
    c.init_scale_mode = InitScale::kEmbeddingStd;
  } else if (mode == "fixed") {
    c.init_scale_mode = InitScale::kFixed;
  } else {
    throw ConfigError("compression: unknown init_scale_mode '" + mode + "'");
  }
  c.fixed_init_std = j.value("fixed_init_std", c.fixed_init_std);
  c.seed = j.value("seed", c.seed);
  c.lr_schedule = j.value("lr_schedule", c.lr_schedule);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.trace_every = j.value("trace_every", c.trace_every);
  c.validate();
  return c;
}

long CompressionResult::token_gain() const {
  return static_cast<long>(correct_with_mem) - static_cast<long>(correct_without_mem);
}

double CompressionResult::information_gain() const { return h_lm - h_lm_mem; }

nlohmann::json CompressionResult::to_json() const {
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& [step, loss] : loss_trace) trace.push_back({step, loss});
  return {{"text_id", text_id},
          {"n", n},
          {"k", k},
          {"steps_used", steps_used},
          {"accuracy", accuracy},
          {"correct_with_mem", correct_with_mem},
          {"correct_without_mem", correct_without_mem},
          {"h_lm", h_lm},
          {"h_lm_mem", h_lm_mem},
          {"token_gain", token_gain()},
          {"information_gain", information_gain()},
          {"lossless", lossless},
          {"loss_trace", trace}};
}

CompressionResult CompressionResult::from_json(const nlohmann::json& j) {
  CompressionResult r;
  r.text_id = j.at("text_id").get<std::string>();
  r.n = j.at("n").get<std::size_t>();
  r.k = j.at("k").get<std::size_t>();
  r.steps_used = j.at("steps_used").get<std::size_t>();
  r.accuracy = j.at("accuracy").get<double>();
  r.correct_with_mem = j.at("correct_with_mem").get<std::size_t>();
  r.correct_without_mem = j.at("correct_without_mem").get<std::size_t>();
  r.h_lm = j.at("h_lm").get<double>();
  r.h_lm_mem = j.at("h_lm_mem").get<double>();
  r.lossless = j.at("lossless").get<bool>();
  for (const auto& p : j.value("loss_trace", nlohmann::json::array())) {
    r.loss_trace.emplace_back(p.at(0).get<std::size_t>(), p.at(1).get<double>());
  }
  return r;
}

double embedding_std(const ModelWeights& model) {
  const auto v = model.token_embedding.values();
  double mean = 0.0;
  for (float x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (float x : v) var += (x - mean) * (x - mean);
  return std::sqrt(var / static_cast<double>(v.size()));
}

MemState init_mem(const CompressionConfig& config, const ModelWeights& model) {
  config.validate();
  const double sigma =
      config.init_scale_mode == InitScale::kEmbeddingStd ? embedding_std(model) : config.fixed_init_std;
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, sigma);
  const std::size_t n = config.k * model.config.d_model;
  std::vector<float> values(n);
  for (auto& x : values) x = static_cast<float>(normal(rng));
  MemState state;
  state.vectors = Tensor({config.k, model.config.d_model}, std::move(values), true);
  state.first_moment.assign(n, 0.0f);
  state.second_moment.assign(n, 0.0f);
  return state;
}

void adamw_step(MemState& state, std::span<const float> grad, const CompressionConfig& config) {
  AdamWParams params = config.adamw();
  if (config.lr_schedule == "cosine") {
    const double progress = std::min(1.0, static_cast<double>(state.step) / static_cast<double>(config.max_steps));
    params.learning_rate *= static_cast<float>(0.1 + 0.9 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
  }
  std::vector<float> clipped;
  if (config.grad_clip > 0.0f) {
    double norm = 0.0;
    for (float g : grad) norm += static_cast<double>(g) * g;
    norm = std::sqrt(norm);
    if (norm > config.grad_clip) {
      clipped.assign(grad.begin(), grad.end());
      for (auto& g : clipped) g = static_cast<float>(g * config.grad_clip / norm);
      grad = clipped;
    }
  }
  ++state.step;
  adamw_update(state.vectors.values(), grad, state.first_moment, state.second_moment, state.step, params);
}

double teacher_forced_accuracy(const ModelWeights& model, const Tensor* prefix, std::span<const TokenId> tokens) {
  if (tokens.empty()) return 1.0;
  return static_cast<double>(teacher_forced_correct(model, prefix, tokens)) / static_cast<double>(tokens.size());
}

std::pair<MemState, CompressionResult> compress(const ModelWeights& model, std::span<const TokenId> tokens,
                                                const CompressionConfig& config, std::string text_id) {
  config.validate();
  const std::size_t n = tokens.size();
  if (config.k + n > model.config.max_positions) {
    throw ConfigError("compress: K + N = " + std::to_string(config.k + n) + " exceeds max_positions " +
                      std::to_string(model.config.max_positions));
  }
  CompressionResult result;
  result.text_id = std::move(text_id);
  result.n = n;
  result.k = config.k;
  result.correct_without_mem = teacher_forced_correct(model, nullptr, tokens);
  result.h_lm = sequence_cross_entropy(model, nullptr, tokens);

  MemState state = init_mem(config, model);
  std::vector<float> best(state.vectors.values().begin(), state.vectors.values().end());
  std::size_t best_correct = 0;
  double best_loss = std::numeric_limits<double>::infinity();
  bool have_best = n == 0;
  const auto target_correct = static_cast<std::size_t>(std::ceil(config.accuracy_target * static_cast<double>(n) - 1e-9));

  for (std::size_t step = 0; n > 0; ++step) {
    Tape tape;
    Tensor logits = target_logits(tape, model, &state.vectors, tokens);
    Tensor loss = cross_entropy_bits(tape, logits, tokens);
    const double loss_bits = loss.item();
    const bool last = step == config.max_steps;
    if (config.trace_every > 0 && step % config.trace_every == 0) result.loss_trace.emplace_back(step, loss_bits);

    if (step % config.eval_every == 0 || last) {
      const auto predicted = argmax_rows(logits);
      std::size_t correct = 0;
      for (std::size_t i = 0; i < n; ++i) correct += predicted[i] == tokens[i];
      if (!have_best || correct > best_correct || (correct == best_correct && loss_bits < best_loss)) {
        have_best = true;
        best_correct = correct;
        best_loss = loss_bits;
        std::copy(state.vectors.values().begin(), state.vectors.values().end(), best.begin());
      }
      if (correct >= target_correct) {
        result.steps_used = step;
        break;
      }
    }
    if (last) {
      result.steps_used = step;
      break;
    }
    state.vectors.zero_grad();
    tape.backward(loss);
    adamw_step(state, state.vectors.grad(), config);
  }
  if (config.trace_every == 0 || result.loss_trace.empty() || result.loss_trace.back().first != result.steps_used) {
    if (n > 0) result.loss_trace.emplace_back(result.steps_used, best_loss);
  }

  std::copy(best.begin(), best.end(), state.vectors.values().begin());
  state.vectors.drop_grad();
  result.correct_with_mem = teacher_forced_correct(model, &state.vectors, tokens);
  result.h_lm_mem = sequence_cross_entropy(model, &state.vectors, tokens);
  result.accuracy = n == 0 ? 1.0 : static_cast<double>(result.correct_with_mem) / static_cast<double>(n);
  result.lossless = result.correct_with_mem == n;
  return {std::move(state), std::move(result)};
}

void save_mem(const std::string& stem, const Tensor& vectors, const CompressionConfig& config,
              const std::string& text_id, const nlohmann::json& extra) {
  const std::size_t d = vectors.cols();
  Archive archive;
  for (std::size_t i = 0; i < vectors.rows(); ++i) {
    std::vector<float> row(vectors.values().begin() + static_cast<std::ptrdiff_t>(i * d),
                           vectors.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
    archive.tensors.emplace_back("mem." + std::to_string(i), Tensor({d}, std::move(row)));
  }
  archive.metadata["text_id"] = text_id;
  write_archive(stem + ".safetensors", archive);
  nlohmann::json sidecar = extra;
  sidecar["text_id"] = text_id;
  sidecar["compression"] = config.to_json();
  std::ofstream out(stem + ".json");
  if (!out) throw IoError("cannot write " + stem + ".json");
  out << sidecar.dump(2) << '\n';
}

Tensor load_mem(const std::string& archive_path) {
  const Archive archive = read_archive(archive_path);
  std::vector<float> values;
  std::size_t d = 0;
  std::size_t k = 0;
  for (;; ++k) {
    const std::string name = "mem." + std::to_string(k);
    auto it = std::find_if(archive.tensors.begin(), archive.tensors.end(),
                           [&](const auto& p) { return p.first == name; });
    if (it == archive.tensors.end()) break;
    if (it->second.rank() != 1 || (d != 0 && it->second.numel() != d)) {
      throw ShapeError(archive_path + ": tensor '" + name + "' has inconsistent shape");
    }
    d = it->second.numel();
    values.insert(values.end(), it->second.values().begin(), it->second.values().end());
  }
  if (k == 0) throw ParseError(archive_path + ": no mem vectors");
  return Tensor({k, d}, std::move(values));
}

}  // namespace memcap
