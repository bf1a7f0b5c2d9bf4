#include "muserec/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "nlohmann/json.hpp"

namespace muserec {

namespace {

constexpr const char* kMagic = "MUSEREC_CKPT 1";

const char* baseline_name(BaselineMode mode) {
  switch (mode) {
    case BaselineMode::gru4rec: return "gru4rec";
    case BaselineMode::ann: return "ann";
    default: return "none";
  }
}

void write_double_le(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

double read_double_le(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw Error("checkpoint: truncated tensor payload");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

}  // namespace

void save_checkpoint(const FusionModel& model, const CheckpointMeta& meta,
                     const std::string& path) {
  const auto expected = fusion_param_shapes(model.config, model.vocab_size);
  nlohmann::ordered_json header;
  header["label"] = meta.label;
  header["track_provenance"] = meta.track_provenance;
  header["vocab_hash"] = meta.vocab_hash;
  header["vocab_size"] = model.vocab_size;
  const ModelConfig& c = model.config;
  header["config"] = {{"baseline", baseline_name(c.baseline)},
                      {"use_acoustic", c.use_acoustic},
                      {"use_lyrics", c.use_lyrics},
                      {"use_tags", c.use_tags},
                      {"embed_dim", c.embed_dim},
                      {"gru_hidden", c.gru_hidden},
                      {"fusion_hidden", c.fusion_hidden},
                      {"dropout", c.dropout},
                      {"lr", c.lr},
                      {"batch", c.batch},
                      {"leaky_slope", c.leaky_slope},
                      {"epochs", c.epochs}};
  auto tensors = nlohmann::ordered_json::array();
  for (const auto& [name, shape] : expected) {
    const Tensor& t = model.store.param(name);
    if (t.shape != shape) throw Error("checkpoint: parameter '" + name + "' has an off-contract shape");
    require_finite(t, name.c_str());
    tensors.push_back({{"name", name}, {"shape", shape}});
  }
  header["tensors"] = std::move(tensors);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("checkpoint: cannot write " + path);
  const std::string head = header.dump();
  out << kMagic << '\n' << head.size() << '\n' << head << '\n';
  for (const auto& [name, shape] : expected) {
    for (double v : model.store.param(name).data) write_double_le(out, v);
  }
  if (!out.good()) throw Error("checkpoint: write failed for " + path);
}

FusionModel load_checkpoint(const std::string& path, const std::string& expected_vocab_hash,
                            CheckpointMeta* meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("checkpoint: cannot open " + path);
  std::string magic;
  if (!std::getline(in, magic)) throw Error("checkpoint: " + path + " is empty");
  if (magic != kMagic) throw Error("checkpoint: unsupported container version in " + path);
  std::string length_line;
  if (!std::getline(in, length_line)) throw Error("checkpoint: missing header length");
  std::size_t head_len = 0;
  try {
    head_len = static_cast<std::size_t>(std::stoull(length_line));
  } catch (const std::exception&) {
    throw Error("checkpoint: bad header length '" + length_line + "'");
  }
  std::string head(head_len, '\0');
  in.read(head.data(), static_cast<std::streamsize>(head_len));
  if (!in) throw Error("checkpoint: truncated header");
  if (in.get() != '\n') throw Error("checkpoint: malformed header terminator");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(head);
  } catch (const std::exception& e) {
    throw Error(std::string("checkpoint: bad header: ") + e.what());
  }

  FusionModel model;
  CheckpointMeta loaded;
  try {
    loaded.label = header.at("label").get<std::string>();
    loaded.track_provenance = header.at("track_provenance").get<std::string>();
    loaded.vocab_hash = header.at("vocab_hash").get<std::string>();
    model.vocab_size = header.at("vocab_size").get<std::size_t>();
    const auto& c = header.at("config");
    model.config.baseline = parse_baseline_mode(c.at("baseline").get<std::string>());
    model.config.use_acoustic = c.at("use_acoustic").get<bool>();
    model.config.use_lyrics = c.at("use_lyrics").get<bool>();
    model.config.use_tags = c.at("use_tags").get<bool>();
    model.config.embed_dim = c.at("embed_dim").get<std::size_t>();
    model.config.gru_hidden = c.at("gru_hidden").get<std::size_t>();
    model.config.fusion_hidden = c.at("fusion_hidden").get<std::size_t>();
    model.config.dropout = c.at("dropout").get<double>();
    model.config.lr = c.at("lr").get<double>();
    model.config.batch = c.at("batch").get<std::size_t>();
    model.config.leaky_slope = c.at("leaky_slope").get<double>();
    model.config.epochs = c.at("epochs").get<std::size_t>();
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(std::string("checkpoint: bad header: ") + e.what());
  }

  if (!expected_vocab_hash.empty() && loaded.vocab_hash != expected_vocab_hash) {
    throw Error("checkpoint: vocabulary hash mismatch (checkpoint " + loaded.vocab_hash +
                ", current " + expected_vocab_hash + ")");
  }

  const auto expected = fusion_param_shapes(model.config, model.vocab_size);
  const auto& tensors = header.at("tensors");
  if (!tensors.is_array() || tensors.size() != expected.size()) {
    throw Error("checkpoint: parameter directory does not match the config");
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    std::string name;
    std::vector<std::size_t> shape;
    try {
      name = tensors[i].at("name").get<std::string>();
      shape = tensors[i].at("shape").get<std::vector<std::size_t>>();
    } catch (const std::exception& e) {
      throw Error(std::string("checkpoint: bad tensor directory entry: ") + e.what());
    }
    if (name != expected[i].first || shape != expected[i].second) {
      throw Error("checkpoint: parameter directory does not match the config (entry '" + name +
                  "')");
    }
  }

  for (const auto& [name, shape] : expected) {
    Tensor t = Tensor::zeros(shape);
    for (double& v : t.data) v = read_double_le(in);
    require_finite(t, name.c_str());
    model.store.add(name, std::move(t));
  }
  if (in.get() != std::ifstream::traits_type::eof()) {
    throw Error("checkpoint: trailing data after tensors in " + path);
  }
  if (meta != nullptr) *meta = loaded;
  return model;
}

}  // namespace muserec
