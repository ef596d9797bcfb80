#include "narasr/checkpoint.hpp"

#include <cstring>

#include "json.hpp"
#include "narasr/dataset.hpp"
#include "narasr/errors.hpp"

namespace narasr {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'N', 'A', 'R', 'C', 'K', 'P', 'T', '1'};
constexpr int kFormatVersion = 1;

json config_to_json(const ModelConfig& c) {
  return json{{"input_dim", c.input_dim},   {"model_dim", c.model_dim},
              {"heads", c.heads},           {"ffn_dim", c.ffn_dim},
              {"encoder_layers", c.encoder_layers}, {"lm_layers", c.lm_layers},
              {"vocab_size", c.vocab_size}, {"alpha", c.alpha}};
}

[[noreturn]] void bad_field(const std::string& field, const std::string& why) {
  throw FormatError("checkpoint field '" + field + "': " + why);
}

const json& field(const json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object() || !obj.contains(key)) bad_field(path + key, "missing");
  return obj.at(key);
}

std::size_t size_field(const json& obj, const std::string& key, const std::string& path) {
  const json& v = field(obj, key, path);
  if (!v.is_number_unsigned()) bad_field(path + key, "expected a non-negative integer");
  return v.get<std::size_t>();
}

ModelConfig config_from_json(const json& j) {
  const std::string p = "model.";
  ModelConfig c;
  c.input_dim = size_field(j, "input_dim", p);
  c.model_dim = size_field(j, "model_dim", p);
  c.heads = size_field(j, "heads", p);
  c.ffn_dim = size_field(j, "ffn_dim", p);
  c.encoder_layers = size_field(j, "encoder_layers", p);
  c.lm_layers = size_field(j, "lm_layers", p);
  c.vocab_size = size_field(j, "vocab_size", p);
  const json& alpha = field(j, "alpha", p);
  if (!alpha.is_number()) bad_field("model.alpha", "expected a number");
  c.alpha = alpha.get<double>();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    bad_field("model", e.what());
  }
  return c;
}

}  // namespace

std::string serialize_checkpoint(const ModelParams& params, const Vocabulary& vocab) {
  if (params.config().vocab_size != vocab.size()) {
    throw ContractViolation("checkpoint: model vocab_size differs from vocabulary size");
  }
  json tensors = json::array();
  std::size_t offset = 0;
  for (const auto& nt : params.tensors()) {
    tensors.push_back(json{{"name", nt.name},
                           {"shape", json::array({nt.value.rows(), nt.value.cols()})},
                           {"offset", offset}});
    offset += nt.value.size();
  }
  json manifest{{"format", kFormatVersion},
                {"model", config_to_json(params.config())},
                {"vocab", json{{"hash", vocab.hash_hex()}, {"tokens", vocab.tokens()}}},
                {"tensors", tensors}};
  const std::string header = manifest.dump();

  std::string out(kMagic, sizeof kMagic);
  io::put_u64(out, header.size());
  out += header;
  out.reserve(out.size() + offset * 8);
  for (const auto& nt : params.tensors())
    for (double v : nt.value.values()) io::put_f64(out, v);
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes, const std::optional<std::string>& expected_vocab_hash) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) bad_field("magic", "not a checkpoint");
  const std::uint64_t header_len = io::get_u64(bytes.data() + 8);
  if (header_len > bytes.size() - 16) bad_field("header_length", "exceeds file size");
  json manifest;
  try {
    manifest = json::parse(bytes.substr(16, header_len));
  } catch (const json::exception& e) {
    bad_field("header", std::string("invalid JSON: ") + e.what());
  }

  const json& format = field(manifest, "format", "");
  if (!format.is_number_integer() || format.get<int>() != kFormatVersion) bad_field("format", "unsupported version");

  const ModelConfig config = config_from_json(field(manifest, "model", ""));

  const json& vocab_j = field(manifest, "vocab", "");
  const json& tokens_j = field(vocab_j, "tokens", "vocab.");
  if (!tokens_j.is_array()) bad_field("vocab.tokens", "expected an array");
  std::vector<std::string> tokens;
  for (const auto& t : tokens_j) {
    if (!t.is_string()) bad_field("vocab.tokens", "expected strings");
    tokens.push_back(t.get<std::string>());
  }
  std::optional<Vocabulary> vocab;
  try {
    vocab.emplace(std::move(tokens));
  } catch (const FormatError& e) {
    bad_field("vocab.tokens", e.what());
  }
  const json& hash_j = field(vocab_j, "hash", "vocab.");
  if (!hash_j.is_string() || hash_j.get<std::string>() != vocab->hash_hex()) {
    bad_field("vocab.hash", "does not match the stored tokens");
  }
  if (expected_vocab_hash && *expected_vocab_hash != vocab->hash_hex()) {
    bad_field("vocab.hash", "checkpoint vocabulary " + vocab->hash_hex() + " differs from expected " +
                                *expected_vocab_hash);
  }
  if (vocab->size() != config.vocab_size) bad_field("model.vocab_size", "differs from vocabulary size");

  ModelParams params(config);
  const json& tensors = field(manifest, "tensors", "");
  if (!tensors.is_array() || tensors.size() != params.tensors().size()) {
    bad_field("tensors", "expected " + std::to_string(params.tensors().size()) + " entries");
  }
  const std::size_t payload_start = 16 + header_len;
  const std::size_t payload_doubles = (bytes.size() - payload_start) / 8;
  if ((bytes.size() - payload_start) % 8 != 0) bad_field("payload", "length is not a multiple of 8");
  std::size_t expected_offset = 0;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto& nt = params.tensors()[i];
    const std::string path = "tensors[" + std::to_string(i) + "].";
    const json& entry = tensors[i];
    const json& name = field(entry, "name", path);
    if (!name.is_string() || name.get<std::string>() != nt.name) bad_field(path + "name", "expected '" + nt.name + "'");
    const json& shape = field(entry, "shape", path);
    if (!shape.is_array() || shape.size() != 2 || !shape[0].is_number_unsigned() || !shape[1].is_number_unsigned() ||
        shape[0].get<std::size_t>() != nt.value.rows() || shape[1].get<std::size_t>() != nt.value.cols()) {
      bad_field(path + "shape", "expected [" + std::to_string(nt.value.rows()) + ", " +
                                    std::to_string(nt.value.cols()) + "] for " + nt.name);
    }
    if (size_field(entry, "offset", path) != expected_offset) bad_field(path + "offset", "not contiguous");
    if (expected_offset + nt.value.size() > payload_doubles) bad_field(path + "shape", "payload too short for " + nt.name);
    const char* src = bytes.data() + payload_start + 8 * expected_offset;
    auto dst = nt.value.values();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = io::get_f64(src + 8 * k);
    expected_offset += nt.value.size();
  }
  if (expected_offset != payload_doubles) bad_field("payload", "has trailing data");
  return Checkpoint{std::move(params), std::move(*vocab)};
}

void save_checkpoint(const ModelParams& params, const Vocabulary& vocab, const std::filesystem::path& path) {
  io::write_file(path, serialize_checkpoint(params, vocab));
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::optional<std::string>& expected_vocab_hash) {
  return deserialize_checkpoint(io::read_file(path), expected_vocab_hash);
}

}  // namespace narasr
