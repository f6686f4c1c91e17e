#include "memcap/runner.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <iomanip>
#include <sstream>
#include <thread>

#include "memcap/archive.hpp"
#include "memcap/codecs.hpp"
#include "memcap/geometry.hpp"
#include "memcap/hash.hpp"

namespace memcap {

namespace fs = std::filesystem;
using nlohmann::json;

// --- Configuration -------------------------------------------------------------

void ExperimentConfig::validate() const {
  model.validate();
  train.validate();
  compression.validate();
  capacity.search.validate();
  if (workers == 0) throw ConfigError("workers must be at least 1");
  if (tokenizer.kind != "word" && tokenizer.kind != "bpe") {
    throw ConfigError("tokenizer.kind must be 'word' or 'bpe', got '" + tokenizer.kind + "'");
  }
  if (tokenizer.kind == "bpe" && weights_path.empty()) {
    throw ConfigError("a BPE tokenizer needs a pre-trained weights_path");
  }
  auto require_file = [](const std::string& path, const std::string& what) {
    if (!path.empty() && !fs::exists(path)) throw ConfigError(what + " not found: " + path);
  };
  require_file(weights_path, "weights_path");
  require_file(tokenizer.vocab_path, "tokenizer.vocab_path");
  require_file(tokenizer.merges_path, "tokenizer.merges_path");
  require_file(texts.word_list, "texts.word_list");
  for (const auto& f : texts.corpus_files) require_file(f, "corpus file");
  if (tokenizer.kind == "bpe" && (tokenizer.vocab_path.empty() || tokenizer.merges_path.empty())) {
    throw ConfigError("a BPE tokenizer needs tokenizer.vocab_path and tokenizer.merges_path");
  }
  for (const auto& s : capacity.sources) source_kind_from_string(s);
  for (const auto& s : scaling.sources) source_kind_from_string(s);
  source_kind_from_string(compress.source);
  if (scaling.ks.empty()) throw ConfigError("scaling.ks must not be empty");
  for (auto k : scaling.ks) {
    if (k == 0) throw ConfigError("scaling.ks entries must be positive");
  }
  if (!capacity.random_lengths.empty()) {
    CapacitySearchConfig c = capacity.search;
    c.lengths = capacity.random_lengths;
    c.validate();
  }
  if (geometry.restarts < 2) throw ConfigError("geometry.restarts must be at least 2");
  if (geometry.texts == 0 || geometry.length == 0) throw ConfigError("geometry needs texts and a positive length");
  if (codec.texts == 0 || codec.length == 0) throw ConfigError("codec needs texts and a positive length");
}

json ExperimentConfig::to_json() const {
  return {
      {"name", name},
      {"seed", seed},
      {"workers", workers},
      {"out_dir", out_dir},
      {"cache_dir", cache_dir},
      {"weights_path", weights_path},
      {"model", model.to_json()},
      {"train", train.to_json()},
      {"tokenizer", {{"kind", tokenizer.kind}, {"vocab_path", tokenizer.vocab_path}, {"merges_path", tokenizer.merges_path}}},
      {"texts",
       {{"corpus_files", texts.corpus_files},
        {"word_list", texts.word_list},
        {"word_list_top_n", texts.word_list_top_n},
        {"known_words_only", texts.known_words_only}}},
      {"compression", compression.to_json()},
      {"capacity",
       {{"search", capacity.search.to_json()},
        {"sources", capacity.sources},
        {"random_lengths", capacity.random_lengths},
        {"save_archives", capacity.save_archives}}},
      {"scaling", {{"ks", scaling.ks}, {"sources", scaling.sources}}},
      {"codec",
       {{"texts", codec.texts},
        {"length", codec.length},
        {"lm_scale", codec.lm_scale},
        {"external", codec.external},
        {"verify_roundtrip", codec.verify_roundtrip}}},
      {"geometry",
       {{"texts", geometry.texts},
        {"length", geometry.length},
        {"restarts", geometry.restarts},
        {"grid_points", geometry.grid_points},
        {"spare_attempts", geometry.spare_attempts},
        {"max_pairs_per_text", geometry.max_pairs_per_text}}},
      {"compress",
       {{"source", compress.source}, {"length", compress.length}, {"count", compress.count}, {"text", compress.text}}},
  };
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  try {
    ExperimentConfig c;
    c.name = j.at("name").get<std::string>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.workers = j.at("workers").get<std::size_t>();
    c.out_dir = j.at("out_dir").get<std::string>();
    c.cache_dir = j.at("cache_dir").get<std::string>();
    c.weights_path = j.at("weights_path").get<std::string>();
    c.model = ModelConfig::from_json(j.at("model"));
    c.train = TrainConfig::from_json(j.at("train"));
    const auto& t = j.at("tokenizer");
    c.tokenizer = {t.at("kind").get<std::string>(), t.at("vocab_path").get<std::string>(),
                   t.at("merges_path").get<std::string>()};
    const auto& x = j.at("texts");
    c.texts.corpus_files = x.at("corpus_files").get<std::vector<std::string>>();
    c.texts.word_list = x.at("word_list").get<std::string>();
    c.texts.word_list_top_n = x.at("word_list_top_n").get<std::size_t>();
    c.texts.known_words_only = x.at("known_words_only").get<bool>();
    c.compression = CompressionConfig::from_json(j.at("compression"));
    const auto& cap = j.at("capacity");
    c.capacity.search = CapacitySearchConfig::from_json(cap.at("search"));
    c.capacity.sources = cap.at("sources").get<std::vector<std::string>>();
    c.capacity.random_lengths = cap.at("random_lengths").get<std::vector<std::size_t>>();
    c.capacity.save_archives = cap.at("save_archives").get<bool>();
    const auto& sc = j.at("scaling");
    c.scaling.ks = sc.at("ks").get<std::vector<std::size_t>>();
    c.scaling.sources = sc.at("sources").get<std::vector<std::string>>();
    const auto& co = j.at("codec");
    c.codec.texts = co.at("texts").get<std::size_t>();
    c.codec.length = co.at("length").get<std::size_t>();
    c.codec.lm_scale = co.at("lm_scale").get<std::uint64_t>();
    c.codec.external = co.at("external").get<bool>();
    c.codec.verify_roundtrip = co.at("verify_roundtrip").get<bool>();
    const auto& g = j.at("geometry");
    c.geometry.texts = g.at("texts").get<std::size_t>();
    c.geometry.length = g.at("length").get<std::size_t>();
    c.geometry.restarts = g.at("restarts").get<std::size_t>();
    c.geometry.grid_points = g.at("grid_points").get<std::size_t>();
    c.geometry.spare_attempts = g.at("spare_attempts").get<std::size_t>();
    c.geometry.max_pairs_per_text = g.at("max_pairs_per_text").get<std::size_t>();
    const auto& cm = j.at("compress");
    c.compress.source = cm.at("source").get<std::string>();
    c.compress.length = cm.at("length").get<std::size_t>();
    c.compress.count = cm.at("count").get<std::size_t>();
    c.compress.text = cm.at("text").get<std::string>();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }
}

std::uint64_t ExperimentConfig::hash() const {
  json j = to_json();
  j.erase("workers");
  j.erase("out_dir");
  j.erase("cache_dir");
  return fnv1a64(j.dump());
}

std::string ExperimentConfig::hash_hex() const {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << hash();
  return s.str();
}

void merge_config(json& base, const json& patch, const std::string& path) {
  if (!patch.is_object()) throw ConfigError("config" + (path.empty() ? "" : " key '" + path + "'") + " must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string full = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + full + "'");
    // Model fields such as bos_id may be null, and objects whose defaults
    // are objects recurse; everything else is replaced wholesale.
    if (base[key].is_object() && value.is_object()) {
      merge_config(base[key], value, full);
    } else {
      base[key] = value;
    }
  }
}

void apply_override(json& config, const std::string& dotted_key, const std::string& value) {
  if (dotted_key.empty()) throw ConfigError("empty override key");
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::parse_error&) {
    parsed = value;
  }
  json patch = parsed;
  std::string key = dotted_key;
  for (auto pos = key.rfind('.'); pos != std::string::npos; pos = key.rfind('.')) {
    patch = json{{key.substr(pos + 1), patch}};
    key = key.substr(0, pos);
  }
  patch = json{{key, patch}};
  merge_config(config, patch);
}

ExperimentConfig load_experiment_config(const std::string& path,
                                        const std::vector<std::pair<std::string, std::string>>& overrides) {
  json j = ExperimentConfig{}.to_json();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    json file;
    try {
      file = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ParseError(path + ": " + e.what());
    }
    merge_config(j, file);
  }
  for (const auto& [k, v] : overrides) apply_override(j, k, v);
  ExperimentConfig c = ExperimentConfig::from_json(j);
  c.validate();
  return c;
}

// --- Execution plumbing --------------------------------------------------------

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

namespace {

std::string timestamp(const char* format) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  localtime_r(&now, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, format);
  return s.str();
}

std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

}  // namespace

RunContext::RunContext(const ExperimentConfig& config, const std::string& command) : hash_(config.hash_hex()) {
  const std::string stem = timestamp("%Y%m%d-%H%M%S") + "-" + hash_;
  dir_ = fs::path(config.out_dir) / stem;
  for (int i = 2; fs::exists(dir_); ++i) dir_ = fs::path(config.out_dir) / (stem + "-" + std::to_string(i));
  fs::create_directories(dir_ / "archives");
  json snapshot = config.to_json();
  snapshot["command"] = command;
  write_json("config.json", snapshot);
  results_.open(dir_ / "results.jsonl", std::ios::trunc);
  log_.open(dir_ / "run.log", std::ios::trunc);
  if (!results_ || !log_) throw IoError("cannot create outputs in " + dir_.string());
  log("command " + command + ", config " + hash_);
}

void RunContext::append_result(json row) {
  std::lock_guard lock(mutex_);
  row["config_hash"] = hash_;
  results_ << row.dump() << '\n';
  results_.flush();
}

void RunContext::write_csv(const std::string& name, const std::string& body) const {
  std::ofstream out(dir_ / name, std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir_ / name).string());
  out << "# config_hash=" << hash_ << '\n' << body;
}

void RunContext::write_json(const std::string& name, const json& j) const {
  std::ofstream out(dir_ / name, std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir_ / name).string());
  json copy = j;
  if (copy.is_object()) copy["config_hash"] = hash_;
  out << copy.dump(2) << '\n';
}

void RunContext::log(const std::string& message) {
  std::lock_guard lock(mutex_);
  log_ << timestamp("%Y-%m-%dT%H:%M:%S") << ' ' << message << '\n';
  log_.flush();
}

int CommandOutcome::exit_code() const {
  return failed_jobs == 0 && weights_hash_before == weights_hash_after ? 0 : 1;
}

// --- Model and texts -----------------------------------------------------------

namespace {

std::vector<std::string> corpus_paths(const ExperimentConfig& c) {
  return c.texts.corpus_files.empty() ? bundled_corpus_paths() : c.texts.corpus_files;
}

std::uint64_t model_cache_key(const ExperimentConfig& c, const std::vector<CorpusFile>& corpus) {
  json key = {{"model", c.model.to_json()}, {"train", c.train.to_json()}, {"tokenizer", c.tokenizer.kind}};
  std::uint64_t h = fnv1a64(key.dump());
  for (const auto& f : corpus) h = fnv1a64(f.text, fnv1a64(f.name, h));
  return h;
}

}  // namespace

LoadedModel load_or_train_model(const ExperimentConfig& config, RunContext* ctx) {
  LoadedModel out;
  auto log = [&](const std::string& m) {
    if (ctx) ctx->log(m);
  };
  auto tokenizer_from_metadata = [&](const std::map<std::string, std::string>& meta) -> std::unique_ptr<Tokenizer> {
    auto it = meta.find("vocab");
    if (it == meta.end()) return nullptr;
    return std::make_unique<WordTokenizer>(Vocabulary::from_json(json::parse(it->second)));
  };

  if (!config.weights_path.empty()) {
    const Archive archive = read_archive(config.weights_path);
    ModelConfig mc = config.model;
    if (auto it = archive.metadata.find("config"); it != archive.metadata.end()) {
      mc = ModelConfig::from_json(json::parse(it->second));
    }
    out.weights = weights_from_archive(archive, mc);
    out.tokenizer = tokenizer_from_metadata(archive.metadata);
    if (!out.tokenizer && config.tokenizer.kind == "bpe") {
      out.tokenizer = std::make_unique<BpeTokenizer>(
          BpeTokenizer::load(config.tokenizer.vocab_path, config.tokenizer.merges_path));
    }
    if (!out.tokenizer) {
      const auto corpus = load_corpus_files(corpus_paths(config));
      out.tokenizer = std::make_unique<WordTokenizer>(build_word_vocab(join_corpus(corpus), mc.vocab_size));
    }
    out.source = config.weights_path;
  } else {
    const auto corpus = load_corpus_files(corpus_paths(config));
    const fs::path cache = config.cache_dir.empty() ? fs::path(config.out_dir) / "cache" : fs::path(config.cache_dir);
    const fs::path path = cache / ("lm-" + hex64(model_cache_key(config, corpus)) + ".safetensors");
    if (fs::exists(path)) {
      const Archive archive = read_archive(path.string());
      out.weights = weights_from_archive(archive, config.model);
      out.tokenizer = tokenizer_from_metadata(archive.metadata);
      if (!out.tokenizer) throw ParseError(path.string() + ": cached model lacks its vocabulary");
      log("loaded cached model " + path.string());
    } else {
      const std::string text = join_corpus(corpus);
      Vocabulary vocab = build_word_vocab(text, config.model.vocab_size);
      if (vocab.size() != config.model.vocab_size) {
        throw ConfigError("corpus yields only " + std::to_string(vocab.size()) + " distinct tokens for a vocabulary of " +
                          std::to_string(config.model.vocab_size));
      }
      ModelConfig mc = config.model;
      mc.bos_id = vocab.bos();
      WordTokenizer tok(vocab);
      const auto ids = tok.encode(text);
      log("training micro LM on " + std::to_string(ids.size()) + " tokens");
      TrainResult trained = train_lm(mc, ids, config.train, [&](const LossPoint& p) {
        log("train step " + std::to_string(p.step) + " bits/token " + std::to_string(p.bits_per_token));
      });
      fs::create_directories(cache);
      // Write to a temporary name first so concurrent runs never read a partial file.
      const fs::path tmp = path.string() + ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
      std::ostringstream curve;
      curve << "step,bits_per_token\n";
      for (const auto& p : trained.curve) curve << p.step << ',' << std::setprecision(10) << p.bits_per_token << '\n';
      save_weights(trained.weights, tmp.string(),
                   {{"vocab", vocab.to_json().dump()},
                    {"train", config.train.to_json().dump()},
                    {"loss_curve", curve.str()}});
      fs::rename(tmp, path);
      out.weights = std::move(trained.weights);
      out.tokenizer = std::make_unique<WordTokenizer>(std::move(vocab));
      log("cached model " + path.string());
    }
    out.source = path.string();
  }
  if (out.tokenizer->vocab().size() != out.weights.config.vocab_size) {
    throw ConfigError("tokenizer vocabulary size " + std::to_string(out.tokenizer->vocab().size()) +
                      " differs from the model's " + std::to_string(out.weights.config.vocab_size));
  }
  out.weights.freeze();
  return out;
}

namespace {

/// Shared state of one command: config, outputs, frozen model and texts.
class Session {
 public:
  Session(const ExperimentConfig& config, const std::string& command)
      : config_(config), ctx_(config, command), model_(load_or_train_model(config, &ctx_)) {
    outcome_.run_dir = ctx_.dir();
    outcome_.weights_hash_before = model_.weights.hash();
  }

  const ExperimentConfig& config() const { return config_; }
  RunContext& ctx() { return ctx_; }
  const ModelWeights& weights() const { return model_.weights; }
  const Tokenizer& tokenizer() const { return *model_.tokenizer; }
  const std::string& model_source() const { return model_.source; }
  CommandOutcome& outcome() { return outcome_; }

  const std::vector<CorpusFile>& corpus() {
    if (corpus_.empty()) corpus_ = load_corpus_files(corpus_paths(config_));
    return corpus_;
  }

  const std::vector<std::string>& words() {
    if (words_.empty()) {
      auto all = load_word_list(config_.texts.word_list.empty() ? bundled_word_list_path() : config_.texts.word_list);
      if (config_.texts.word_list_top_n > 0 && all.size() > config_.texts.word_list_top_n) {
        all.resize(config_.texts.word_list_top_n);
      }
      words_ = config_.texts.known_words_only ? known_words(all, tokenizer()) : all;
      if (words_.empty()) throw ConfigError("no usable words in the word list");
    }
    return words_;
  }

  std::vector<TextSample> texts(const std::string& source, std::size_t n, std::size_t count) {
    const std::uint64_t seed = derive_seed(config_.seed, "texts." + source + "." + std::to_string(n), 0);
    if (source_kind_from_string(source) == SourceKind::kNatural) {
      return sample_natural_passages(corpus(), tokenizer(), n, count, seed);
    }
    return generate_random_word_texts(words(), tokenizer(), n, count, seed);
  }

  CommandOutcome finish() {
    outcome_.weights_hash_after = model_.weights.hash();
    outcome_.summary["weights_hash_before"] = hex64(outcome_.weights_hash_before);
    outcome_.summary["weights_hash_after"] = hex64(outcome_.weights_hash_after);
    outcome_.summary["jobs"] = outcome_.jobs;
    outcome_.summary["failed_jobs"] = outcome_.failed_jobs;
    outcome_.summary["model"] = model_.source;
    if (outcome_.weights_hash_before != outcome_.weights_hash_after) {
      ctx_.log("ERROR: model weights changed during the run");
    }
    ctx_.write_json("summary.json", outcome_.summary);
    ctx_.log("done: " + std::to_string(outcome_.jobs) + " jobs, " + std::to_string(outcome_.failed_jobs) + " failed");
    return outcome_;
  }

 private:
  ExperimentConfig config_;
  RunContext ctx_;
  LoadedModel model_;
  CommandOutcome outcome_;
  std::vector<CorpusFile> corpus_;
  std::vector<std::string> words_;
};

struct JobOutput {
  std::optional<CompressionResult> result;
  Tensor mem;
  json row;
};

/// Compresses every text on the worker pool and appends rows in text order.
std::vector<JobOutput> run_compression_jobs(Session& s, const std::vector<TextSample>& texts,
                                            const CompressionConfig& base, const std::string& stream,
                                            const json& tags, bool save_archives) {
  std::vector<JobOutput> out(texts.size());
  parallel_for(texts.size(), s.config().workers, [&](std::size_t i) {
    CompressionConfig c = base;
    c.seed = derive_seed(s.config().seed, stream, i);
    JobOutput& job = out[i];
    job.row = tags;
    job.row["index"] = i;
    job.row["seed"] = c.seed;
    job.row["provenance"] = texts[i].provenance;
    try {
      auto [state, result] = compress(s.weights(), texts[i].tokens, c, texts[i].id);
      job.row.update(result.to_json());
      job.row["status"] = "ok";
      if (save_archives) {
        save_mem((s.ctx().archives_dir() / (stream + "-" + std::to_string(i))).string(), state.vectors, c,
                 texts[i].id, {{"tokens", texts[i].tokens}, {"model_hash", hex64(s.weights().hash())}});
      }
      job.result = std::move(result);
      job.mem = state.vectors;
    } catch (const std::exception& e) {
      job.row["text_id"] = texts[i].id;
      job.row["n"] = texts[i].n();
      job.row["status"] = "failed";
      job.row["error"] = e.what();
    }
  });
  for (auto& job : out) {
    s.ctx().append_result(job.row);
    ++s.outcome().jobs;
    if (!job.result) ++s.outcome().failed_jobs;
  }
  return out;
}

std::string format_double(double v) {
  std::ostringstream s;
  s << std::setprecision(10) << v;
  return s.str();
}

CapacityParams capacity_params(const ModelWeights& w) { return {w.config.d_model, 16, w.config.vocab_size}; }

/// Capacity search for one source and K; appends scatter rows.
CapacitySearchResult capacity_for_source(Session& s, const std::string& source, std::size_t k, std::string& scatter) {
  const auto& cfg = s.config();
  CapacitySearchConfig search = cfg.capacity.search;
  if (source == "random" && !cfg.capacity.random_lengths.empty()) search.lengths = cfg.capacity.random_lengths;
  CompressionConfig compression = cfg.compression;
  compression.k = k;
  std::map<std::size_t, std::vector<TextSample>> cache;
  TextProvider provider = [&](std::size_t n, std::size_t count) {
    cache[n] = s.texts(source, n, count);
    std::vector<std::pair<std::string, std::vector<TokenId>>> out;
    for (const auto& t : cache[n]) out.emplace_back(t.id, t.tokens);
    return out;
  };
  LengthEvaluator evaluate = [&](std::size_t n, const std::vector<std::pair<std::string, std::vector<TokenId>>>&) {
    const std::string stream = "capacity." + source + ".k" + std::to_string(k) + ".n" + std::to_string(n);
    json tags = {{"experiment", "capacity"}, {"source", source}, {"k", k}, {"length", n}};
    auto jobs = run_compression_jobs(s, cache[n], compression, stream, tags, cfg.capacity.save_archives);
    LengthOutcome outcome;
    for (auto& j : jobs) {
      if (!j.result) {
        ++outcome.failed;
        continue;
      }
      const auto& r = *j.result;
      scatter += source + ',' + std::to_string(k) + ',' + std::to_string(n) + ',' + r.text_id + ',' +
                 format_double(r.h_lm) + ',' + format_double(r.h_lm_mem) + ',' + format_double(r.accuracy) + ',' +
                 std::to_string(r.token_gain()) + ',' + (r.lossless ? "1" : "0") + '\n';
      outcome.results.push_back(r);
    }
    s.ctx().log(source + " K=" + std::to_string(k) + " length " + std::to_string(n) + " done");
    return outcome;
  };
  return decoding_capacity_search(search, capacity_params(s.weights()), k, s.weights().config.max_positions, source,
                                  provider, evaluate);
}

json lossless_residuals(const std::vector<CompressionResult>& results) {
  std::vector<double> residual;
  for (const auto& r : results) {
    if (r.lossless) residual.push_back(r.h_lm_mem);
  }
  const auto ms = mean_std(residual);
  const double max = residual.empty() ? 0.0 : *std::max_element(residual.begin(), residual.end());
  return {{"count", residual.size()}, {"mean_bits", ms.mean}, {"std_bits", ms.std}, {"max_bits", max}};
}

const char* kScatterHeader = "source,k,length,text_id,h_lm,h_lm_mem,accuracy,token_gain,lossless\n";

}  // namespace

// --- Commands ------------------------------------------------------------------

CommandOutcome cmd_train_lm(const ExperimentConfig& config) {
  config.validate();
  if (!config.weights_path.empty()) throw ConfigError("train-lm trains from the corpus; leave weights_path empty");
  Session s(config, "train-lm");
  const fs::path target = s.ctx().dir() / "lm.safetensors";
  fs::copy_file(s.model_source(), target, fs::copy_options::overwrite_existing);
  const Archive archive = read_archive(target.string());
  if (auto it = archive.metadata.find("loss_curve"); it != archive.metadata.end()) {
    s.ctx().write_csv("loss_curve.csv", it->second);
  }
  const double uniform = std::log2(static_cast<double>(s.weights().config.vocab_size));
  s.outcome().summary["archive"] = target.string();
  s.outcome().summary["uniform_bits_per_token"] = uniform;
  s.outcome().summary["parameters"] = s.weights().parameter_count();
  return s.finish();
}

CommandOutcome cmd_compress(const ExperimentConfig& config) {
  config.validate();
  Session s(config, "compress");
  const auto& c = config.compress;
  std::vector<TextSample> texts;
  if (!c.text.empty()) {
    TextSample t;
    t.id = "literal-0";
    t.tokens = s.tokenizer().encode(c.text);
    t.provenance = "literal";
    if (t.tokens.empty()) throw ConfigError("compress.text tokenizes to nothing");
    texts.push_back(std::move(t));
  } else {
    texts = s.texts(c.source, c.length, c.count);
  }
  json manifest = json::array();
  for (const auto& t : texts) manifest.push_back(t.manifest_entry());
  s.ctx().write_json("texts.json", {{"texts", manifest}});
  json tags = {{"experiment", "compress"}, {"source", c.text.empty() ? c.source : "literal"}, {"k", config.compression.k}};
  auto jobs = run_compression_jobs(s, texts, config.compression, "compress", tags, true);
  std::size_t lossless = 0;
  for (const auto& j : jobs) lossless += j.result && j.result->lossless ? 1 : 0;
  s.outcome().summary["texts"] = texts.size();
  s.outcome().summary["lossless"] = lossless;
  return s.finish();
}

CommandOutcome cmd_capacity(const ExperimentConfig& config) {
  config.validate();
  Session s(config, "capacity");
  std::string scatter = kScatterHeader;
  std::ostringstream summary;
  summary << "source,k,l_max,mean_gain_tokens,std_gain_tokens,mean_gain_bits,std_gain_bits,entropy_cutoff_bits,"
             "entropy_cutoff_std,utilization,theoretical_capacity\n";
  const auto params = capacity_params(s.weights());
  for (const auto& source : config.capacity.sources) {
    const auto result = capacity_for_source(s, source, config.compression.k, scatter);
    const auto& r = result.report;
    json j = r.to_json();
    j["lossless_residual"] = lossless_residuals(result.results);
    s.ctx().write_json("capacity_" + source + ".json", j);
    s.ctx().write_csv("capacity_curve_" + source + ".csv", r.curve_csv());
    summary << source << ',' << r.k << ',' << r.l_max << ',' << format_double(r.token_gain.mean) << ','
            << format_double(r.token_gain.std) << ',' << format_double(r.information_gain.mean) << ','
            << format_double(r.information_gain.std) << ','
            << (r.entropy_cutoff ? format_double(r.entropy_cutoff->mean) : "") << ','
            << (r.entropy_cutoff ? format_double(r.entropy_cutoff->std) : "") << ',' << format_double(r.utilization)
            << ',' << theoretical_capacity(params) * r.k << '\n';
    s.outcome().summary[source] = {{"l_max", r.l_max}, {"token_gain", r.token_gain.mean},
                                   {"information_gain", r.information_gain.mean}};
  }
  s.ctx().write_csv("scatter.csv", scatter);
  s.ctx().write_csv("capacity_summary.csv", summary.str());
  return s.finish();
}

CommandOutcome cmd_scaling(const ExperimentConfig& config) {
  config.validate();
  Session s(config, "scaling");
  std::string scatter = kScatterHeader;
  std::ostringstream csv;
  csv << "source,k,l_max,l_max_ratio,mean_gain_tokens,std_gain_tokens,mean_gain_bits,std_gain_bits,utilization,"
         "theoretical_capacity\n";
  const auto params = capacity_params(s.weights());
  for (const auto& source : config.scaling.sources) {
    std::optional<std::size_t> base;
    json per_k = json::array();
    for (auto k : config.scaling.ks) {
      const auto result = capacity_for_source(s, source, k, scatter);
      const auto& r = result.report;
      if (!base) base = r.l_max;
      const double ratio = *base > 0 ? static_cast<double>(r.l_max) / static_cast<double>(*base) : 0.0;
      s.ctx().write_csv("capacity_curve_" + source + "_k" + std::to_string(k) + ".csv", r.curve_csv());
      per_k.push_back(r.to_json());
      csv << source << ',' << k << ',' << r.l_max << ',' << format_double(ratio) << ','
          << format_double(r.token_gain.mean) << ',' << format_double(r.token_gain.std) << ','
          << format_double(r.information_gain.mean) << ',' << format_double(r.information_gain.std) << ','
          << format_double(r.utilization) << ',' << theoretical_capacity(params) * k << '\n';
      s.outcome().summary[source]["k" + std::to_string(k)] = r.l_max;
    }
    s.ctx().write_json("scaling_" + source + ".json", {{"source", source}, {"reports", per_k}});
  }
  s.ctx().write_csv("scaling.csv", csv.str());
  s.ctx().write_csv("scatter.csv", scatter);
  return s.finish();
}

namespace {

struct CodecRow {
  std::vector<double> ratios;
  std::size_t texts = 0;
};

}  // namespace

CommandOutcome cmd_codec_bench(const ExperimentConfig& config) {
  config.validate();
  Session s(config, "codec-bench");
  const auto& cc = config.codec;
  const auto texts = s.texts("natural", cc.length, cc.texts);
  const auto externals = cc.external ? default_external_codecs() : std::vector<ExternalCodec>{};
  const LmCodecOptions lm_options{cc.lm_scale};

  struct PerText {
    json row;
    std::map<std::string, double> ratios;
    bool ok = true;
  };
  std::vector<PerText> per_text(texts.size());
  parallel_for(texts.size(), config.workers, [&](std::size_t i) {
    PerText& out = per_text[i];
    const auto& t = texts[i];
    out.row = {{"experiment", "codec"}, {"text_id", t.id}, {"n", t.n()}, {"provenance", t.provenance}};
    try {
      // Every codec sees the canonical detokenization, which re-encodes to the same tokens.
      const std::string text = s.tokenizer().decode(t.tokens);
      if (s.tokenizer().encode(text) != t.tokens) throw NumericError("canonical text does not re-tokenize");
      const double original_bits = 8.0 * static_cast<double>(text.size());
      out.row["bytes"] = text.size();
      const auto data = std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size());

      const auto huff = huffman_encode(data);
      if (cc.verify_roundtrip) {
        const auto back = huffman_decode(huff.table, huff.payload, huff.payload_bits, data.size());
        if (!std::equal(back.begin(), back.end(), data.begin(), data.end())) throw NumericError("Huffman round trip");
      }
      out.ratios["huffman"] = compression_ratio(original_bits, static_cast<double>(huff.payload_bits));
      out.ratios["huffman+header"] =
          compression_ratio(original_bits, static_cast<double>(huff.payload_bits + huff.header_bits()));
      out.row["huffman_bits"] = huff.payload_bits;
      out.row["huffman_header_bits"] = huff.header_bits();

      const auto lm = lm_arith_encode(s.weights(), t.tokens, lm_options);
      if (cc.verify_roundtrip && lm_arith_decode(s.weights(), lm.bytes, t.n(), lm_options) != t.tokens) {
        throw NumericError("LM arithmetic round trip");
      }
      const double ce = sequence_cross_entropy(s.weights(), nullptr, t.tokens);
      out.ratios["lm-ac"] = compression_ratio(original_bits, static_cast<double>(lm.payload_bits));
      out.ratios["lm-ac+header"] = compression_ratio(original_bits, 8.0 * static_cast<double>(lm.bytes.size()));
      out.row["lm_ac_bits"] = lm.payload_bits;
      out.row["cross_entropy_bits"] = ce;

      for (const auto& codec : externals) {
        if (auto bytes = run_external_codec(codec, text)) {
          out.ratios[codec.name] = compression_ratio(original_bits, 8.0 * static_cast<double>(*bytes));
        }
      }
      json ratios = json::object();
      for (const auto& [k, v] : out.ratios) ratios[k] = v;
      out.row["ratios"] = ratios;
      out.row["status"] = "ok";
    } catch (const std::exception& e) {
      out.ok = false;
      out.row["status"] = "failed";
      out.row["error"] = e.what();
    }
  });

  std::vector<std::string> order = {"huffman", "huffman+header", "lm-ac", "lm-ac+header"};
  for (const auto& codec : externals) order.push_back(codec.name);
  std::map<std::string, std::vector<double>> by_codec;
  for (auto& p : per_text) {
    s.ctx().append_result(p.row);
    ++s.outcome().jobs;
    if (!p.ok) ++s.outcome().failed_jobs;
    for (const auto& [k, v] : p.ratios) by_codec[k].push_back(v);
  }
  std::ostringstream csv;
  csv << "codec,corpus,mean_ratio,std_ratio,texts\n";
  for (const auto& name : order) {
    auto it = by_codec.find(name);
    if (it == by_codec.end()) {
      s.ctx().log("codec " + name + " unavailable");
      continue;
    }
    const auto ms = mean_std(it->second);
    csv << name << ",natural," << format_double(ms.mean) << ',' << format_double(ms.std) << ',' << ms.count << '\n';
    s.outcome().summary["mean_ratio"][name] = ms.mean;
  }
  s.ctx().write_csv("codec_bench.csv", csv.str());
  return s.finish();
}

CommandOutcome cmd_geometry(const ExperimentConfig& config) {
  config.validate();
  Session s(config, "geometry");
  const auto& g = config.geometry;
  const auto texts = s.texts("natural", g.length, g.texts);

  struct TextStates {
    std::vector<Tensor> states;
    std::vector<json> rows;
    std::size_t attempts = 0;
  };
  std::vector<TextStates> found(texts.size());
  const std::size_t budget = g.restarts + g.spare_attempts;
  parallel_for(texts.size(), config.workers, [&](std::size_t i) {
    auto& f = found[i];
    for (std::size_t attempt = 0; attempt < budget && f.states.size() < g.restarts; ++attempt) {
      CompressionConfig c = config.compression;
      c.seed = derive_seed(config.seed, "geometry." + std::to_string(i), attempt);
      json row = {{"experiment", "geometry"}, {"text_index", i}, {"attempt", attempt}, {"seed", c.seed},
                  {"text_id", texts[i].id}};
      ++f.attempts;
      try {
        auto [state, result] = compress(s.weights(), texts[i].tokens, c, texts[i].id);
        row.update(result.to_json());
        row["status"] = "ok";
        if (result.lossless) {
          const std::size_t r = f.states.size();
          save_mem((s.ctx().archives_dir() / ("geometry-t" + std::to_string(i) + "-r" + std::to_string(r))).string(),
                   state.vectors, c, texts[i].id, {{"restart", r}, {"tokens", texts[i].tokens}});
          f.states.push_back(state.vectors);
        }
      } catch (const std::exception& e) {
        row["status"] = "failed";
        row["error"] = e.what();
      }
      f.rows.push_back(std::move(row));
    }
  });

  EmbeddingBank bank;
  std::size_t incomplete = 0;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    for (auto& row : found[i].rows) {
      s.ctx().append_result(row);
      ++s.outcome().jobs;
      if (row["status"] != "ok") ++s.outcome().failed_jobs;
    }
    if (found[i].states.size() == g.restarts) {
      bank.text_ids.push_back(texts[i].id);
      bank.texts.push_back(texts[i].tokens);
      bank.states.push_back(std::move(found[i].states));
    } else {
      ++incomplete;
      s.ctx().log("text " + texts[i].id + " reached only " + std::to_string(found[i].states.size()) +
                  " lossless restarts");
    }
  }
  // A text without a full set of lossless restarts is a failed job of its own.
  s.outcome().failed_jobs += incomplete;
  json summary = {{"texts", texts.size()}, {"bank_texts", bank.text_ids.size()}, {"incomplete_texts", incomplete}};
  if (bank.text_ids.empty()) {
    s.ctx().write_json("geometry.json", summary);
    s.outcome().summary["geometry"] = summary;
    return s.finish();
  }

  const auto sim = cosine_similarity_study(bank);
  s.ctx().write_csv("cosine_histogram.csv", sim.histogram_csv());
  std::ostringstream pairs;
  pairs << "text,restart_a,restart_b,vector_a,vector_b,cosine\n";
  for (const auto& p : sim.per_vector) {
    pairs << p.text << ',' << p.a << ',' << p.b << ',' << p.i << ',' << p.j << ',' << format_double(p.cosine) << '\n';
  }
  s.ctx().write_csv("cosine_pairs.csv", pairs.str());

  const auto alphas = interpolation_grid(g.grid_points);
  const auto interp = interpolation_study(s.weights(), bank, alphas, g.max_pairs_per_text);
  s.ctx().write_csv("interpolation.csv", interp.csv());

  const auto intra = mean_std(sim.intra);
  const auto inter = mean_std(sim.inter);
  summary["intra_cosine"] = {{"mean", intra.mean}, {"std", intra.std}, {"pairs", intra.count}};
  summary["inter_cosine"] = {{"mean", inter.mean}, {"std", inter.std}, {"pairs", inter.count}};
  summary["intra_fraction_above_0.8"] = sim.intra_fraction_above(0.8);
  summary["min_interior_accuracy"] = interp.min_interior_accuracy();
  summary["interpolation_curves"] = interp.curves.size();
  s.ctx().write_json("geometry.json", summary);
  s.outcome().summary["geometry"] = summary;
  return s.finish();
}

}  // namespace memcap
