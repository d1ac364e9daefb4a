#include "tpmil/checkpoint.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>

#include "binary_io.hpp"
#include "tpmil/error.hpp"

namespace tpmil {

std::vector<unsigned char> encode_checkpoint(const Model& model) {
  const ModelConfig& c = model.config;
  model.params.check_shapes(c);
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(c.num_classes));
  w.u32(static_cast<std::uint32_t>(c.feature_dim));
  w.u32(static_cast<std::uint32_t>(c.hidden_dim));
  w.u32(static_cast<std::uint32_t>(c.attention_dim));
  w.f64(c.tau);
  w.f64(c.lambda);
  w.u8(static_cast<std::uint8_t>(c.norm));
  w.u8(static_cast<std::uint8_t>(c.activation));
  w.u8(c.prototype_module ? 1 : 0);
  const auto tensors = model.params.tensors();
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    w.str(std::string(ModelParams::tensor_names()[i]));
    w.u32(static_cast<std::uint32_t>(tensors[i]->rows()));
    w.u32(static_cast<std::uint32_t>(tensors[i]->cols()));
    for (double v : tensors[i]->values()) w.f64(v);
  }
  return w.buffer();
}

Model decode_checkpoint(const std::vector<unsigned char>& bytes) {
  detail::ByteReader r(bytes);
  char magic[4] = {};
  if (!r.take(magic, 4) || !std::equal(magic, magic + 4, kCheckpointMagic)) {
    throw InvalidInput("checkpoint: bad magic");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw InvalidInput("checkpoint: unsupported version " + std::to_string(version));
  }
  Model m;
  ModelConfig& c = m.config;
  c.num_classes = r.u32();
  c.feature_dim = r.u32();
  c.hidden_dim = r.u32();
  c.attention_dim = r.u32();
  c.tau = r.f64();
  c.lambda = r.f64();
  const std::uint8_t norm = r.u8();
  const std::uint8_t act = r.u8();
  const std::uint8_t proto = r.u8();
  if (r.truncated()) throw InvalidInput("checkpoint: truncated header");
  if (norm > 1 || act > 1 || proto > 1) throw InvalidInput("checkpoint: invalid config flags");
  c.norm = static_cast<AttentionNorm>(norm);
  c.activation = static_cast<Activation>(act);
  c.prototype_module = proto == 1;
  c.validate();

  m.params = ModelParams::zeros(c);
  const std::uint32_t count = r.u32();
  if (count != kNumTensors) throw InvalidInput("checkpoint: expected " + std::to_string(kNumTensors) + " tensors");
  auto tensors = m.params.tensors();
  for (std::size_t i = 0; i < kNumTensors; ++i) {
    const std::string name = r.str();
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    if (r.truncated()) throw InvalidInput("checkpoint: truncated tensor header");
    if (name != ModelParams::tensor_names()[i]) {
      throw InvalidInput("checkpoint: unexpected tensor '" + name + "'");
    }
    if (rows != tensors[i]->rows() || cols != tensors[i]->cols()) {
      throw InvalidInput("checkpoint: tensor " + name + " shape disagrees with config");
    }
    for (double& v : tensors[i]->values()) v = r.f64();
    if (r.truncated()) throw InvalidInput("checkpoint: truncated payload in " + name);
    if (!all_finite(tensors[i]->values())) throw InvalidInput("checkpoint: non-finite values in " + name);
  }
  if (r.remaining() != 0) throw InvalidInput("checkpoint: trailing bytes");
  return m;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  const auto bytes = encode_checkpoint(model);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("checkpoint write failed: " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("checkpoint not found: " + path.string());
  const std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes);
}

std::string checkpoint_hash(const Model& model) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : encode_checkpoint(model)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = "0123456789abcdef"[h & 0xF];
    h >>= 4;
  }
  return out;
}

}  // namespace tpmil
