#include "memcap/archive.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace memcap {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

const Tensor& Archive::get(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw ParseError("archive: missing tensor '" + name + "'");
}

std::vector<std::uint8_t> serialize_archive(const Archive& archive) {
  nlohmann::json header = nlohmann::json::object();
  std::size_t offset = 0;
  for (const auto& [name, t] : archive.tensors) {
    const std::size_t bytes = t.numel() * sizeof(float);
    header[name] = {{"dtype", "F32"}, {"shape", t.shape()}, {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  if (!archive.metadata.empty()) header["__metadata__"] = archive.metadata;
  std::string text = header.dump();
  while ((text.size() + 8) % 8 != 0) text.push_back(' ');

  std::vector<std::uint8_t> out(8 + text.size() + offset);
  const std::uint64_t len = text.size();
  std::memcpy(out.data(), &len, 8);
  std::memcpy(out.data() + 8, text.data(), text.size());
  std::uint8_t* data = out.data() + 8 + text.size();
  for (const auto& [name, t] : archive.tensors) {
    const std::size_t bytes = t.numel() * sizeof(float);
    if (bytes) std::memcpy(data, t.values().data(), bytes);
    data += bytes;
  }
  return out;
}

Archive parse_archive(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8) throw ParseError("archive: truncated header length");
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data(), 8);
  if (len > bytes.size() - 8) throw ParseError("archive: header length exceeds file size");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(len));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("archive: malformed header: ") + e.what());
  }
  if (!header.is_object()) throw ParseError("archive: header is not a JSON object");
  const std::size_t data_begin = 8 + len;
  const std::size_t data_size = bytes.size() - data_begin;

  struct Entry {
    std::size_t begin;
    std::string name;
    Shape shape;
  };
  std::vector<Entry> entries;
  Archive archive;
  for (const auto& [name, info] : header.items()) {
    if (name == "__metadata__") {
      try {
        archive.metadata = info.get<std::map<std::string, std::string>>();
      } catch (const nlohmann::json::exception&) {
        throw ParseError("archive: __metadata__ must map strings to strings");
      }
      continue;
    }
    try {
      const auto dtype = info.at("dtype").get<std::string>();
      if (dtype != "F32") throw ParseError("archive: tensor '" + name + "' has unsupported dtype " + dtype);
      Shape shape = info.at("shape").get<Shape>();
      const auto offsets = info.at("data_offsets").get<std::vector<std::size_t>>();
      if (offsets.size() != 2 || offsets[0] > offsets[1] || offsets[1] > data_size) {
        throw ParseError("archive: tensor '" + name + "' has data offsets outside the data section");
      }
      if (offsets[1] - offsets[0] != shape_numel(shape) * sizeof(float)) {
        throw ParseError("archive: tensor '" + name + "' byte length does not match shape " +
                         shape_to_string(shape));
      }
      entries.push_back({offsets[0], name, std::move(shape)});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("archive: tensor '" + name + "': " + e.what());
    }
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) { return a.begin < b.begin; });
  for (auto& e : entries) {
    std::vector<float> values(shape_numel(e.shape));
    if (!values.empty()) std::memcpy(values.data(), bytes.data() + data_begin + e.begin, values.size() * 4);
    archive.tensors.emplace_back(e.name, Tensor(std::move(e.shape), std::move(values)));
  }
  return archive;
}

void write_archive(const std::string& path, const Archive& archive) {
  const auto bytes = serialize_archive(archive);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path);
}

Archive read_archive(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_archive(bytes);
}

void save_weights(const ModelWeights& weights, const std::string& path,
                  const std::map<std::string, std::string>& extra) {
  Archive archive;
  archive.tensors = weights.named_tensors();
  archive.metadata = extra;
  archive.metadata["config"] = weights.config.to_json().dump();
  write_archive(path, archive);
}

ModelWeights weights_from_archive(const Archive& archive, const ModelConfig& config) {
  config.validate();
  ModelWeights w;
  w.config = config;
  std::map<std::string, Tensor> by_name(archive.tensors.begin(), archive.tensors.end());
  for (const auto& [name, shape] : w.expected_shapes()) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ParseError("archive: missing tensor '" + name + "'");
    if (it->second.shape() != shape) {
      throw ShapeError("archive: tensor '" + name + "' has shape " + shape_to_string(it->second.shape()) +
                       ", config expects " + shape_to_string(shape));
    }
    check_finite(it->second.values(), name.c_str());
  }
  auto take = [&](const std::string& name) { return by_name.at(name); };
  w.token_embedding = take("embedding.token");
  w.position_embedding = take("embedding.position");
  for (std::size_t i = 0; i < config.n_layers; ++i) {
    const std::string p = "transformer.layer." + std::to_string(i) + ".";
    LayerWeights l;
    l.ln1_gain = take(p + "ln1.gain");
    l.ln1_bias = take(p + "ln1.bias");
    l.qkv_weight = take(p + "attn.qkv.weight");
    l.qkv_bias = take(p + "attn.qkv.bias");
    l.proj_weight = take(p + "attn.proj.weight");
    l.proj_bias = take(p + "attn.proj.bias");
    l.ln2_gain = take(p + "ln2.gain");
    l.ln2_bias = take(p + "ln2.bias");
    l.fc_weight = take(p + "mlp.fc.weight");
    l.fc_bias = take(p + "mlp.fc.bias");
    l.out_weight = take(p + "mlp.proj.weight");
    l.out_bias = take(p + "mlp.proj.bias");
    w.layers.push_back(std::move(l));
  }
  w.final_gain = take("ln_final.gain");
  w.final_bias = take("ln_final.bias");
  if (!config.tied_embeddings) w.lm_head = take("lm_head");
  w.freeze();
  return w;
}

ModelWeights load_weights(const std::string& path) {
  Archive archive = read_archive(path);
  auto it = archive.metadata.find("config");
  if (it == archive.metadata.end()) throw ParseError(path + ": archive carries no model config metadata");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(it->second);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": malformed config metadata: " + e.what());
  }
  return weights_from_archive(archive, ModelConfig::from_json(j));
}

ModelWeights load_weights(const std::string& path, const ModelConfig& config) {
  return weights_from_archive(read_archive(path), config);
}

}  // namespace memcap
