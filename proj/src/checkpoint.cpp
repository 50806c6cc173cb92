#include <fstream>

#include "mqt/model.hpp"
#include "mqt/serialize.hpp"

namespace mqt {

namespace {

constexpr char kMagic[4] = {'M', 'Q', 'T', 'M'};
constexpr uint32_t kVersion = 1;

void write_config(std::ostream& os, const ModelConfig& c) {
  write_u8(os, static_cast<uint8_t>(c.modality));
  write_u8(os, static_cast<uint8_t>(c.fusion));
  write_i32(os, c.num_classes);
  write_u8(os, c.multitask ? 1 : 0);
  write_u8(os, static_cast<uint8_t>(c.audio_channels.size()));
  for (int ch : c.audio_channels) write_i32(os, ch);
  write_u8(os, static_cast<uint8_t>(c.text_channels.size()));
  for (int ch : c.text_channels) write_i32(os, ch);
  write_i32(os, c.trunk_units);
  write_i32(os, c.trunk_layers);
  write_f32(os, c.dropout_conv);
  write_f32(os, c.dropout_trunk);
  write_f32(os, c.bn_momentum);
  write_f32(os, c.bn_eps);
  write_f32(os, c.l2);
  write_u64(os, c.init_seed);
}

ModelConfig read_config(std::istream& is) {
  ModelConfig c;
  const uint8_t modality = read_u8(is, "config modality");
  if (modality > 2) throw MqtError("checkpoint: bad modality value");
  c.modality = static_cast<Modality>(modality);
  const uint8_t fusion = read_u8(is, "config fusion");
  if (fusion > 1) throw MqtError("checkpoint: bad fusion value");
  c.fusion = static_cast<FusionMode>(fusion);
  c.num_classes = read_i32(is, "config num_classes");
  c.multitask = read_u8(is, "config multitask") != 0;
  c.audio_channels.resize(read_u8(is, "config audio depth"));
  for (int& ch : c.audio_channels) ch = read_i32(is, "config audio channels");
  c.text_channels.resize(read_u8(is, "config text depth"));
  for (int& ch : c.text_channels) ch = read_i32(is, "config text channels");
  c.trunk_units = read_i32(is, "config trunk_units");
  c.trunk_layers = read_i32(is, "config trunk_layers");
  c.dropout_conv = read_f32(is, "config dropout_conv");
  c.dropout_trunk = read_f32(is, "config dropout_trunk");
  c.bn_momentum = read_f32(is, "config bn_momentum");
  c.bn_eps = read_f32(is, "config bn_eps");
  c.l2 = read_f32(is, "config l2");
  c.init_seed = read_u64(is, "config init_seed");
  c.validate();
  return c;
}

}  // namespace

void save_checkpoint(const ModelParamsT<float>& params, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw MqtError("cannot open " + path + " for writing");
  write_bytes(os, kMagic, 4);
  write_u32(os, kVersion);
  write_config(os, params.cfg);
  uint32_t n = 0;
  params.for_each([&](const std::string&, const Tensor&, ParamKind) { ++n; });
  write_u32(os, n);
  params.for_each([&](const std::string& name, const Tensor& t, ParamKind) {
    write_tensor_record(os, name, t);
  });
  os.flush();
  if (!os) throw MqtError("write failed for " + path);
}

ModelParamsT<float> load_checkpoint(const std::string& path, int expected_classes) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MqtError("cannot open " + path);
  char magic[4];
  read_bytes(is, magic, 4, "magic");
  if (std::string(magic, 4) != std::string(kMagic, 4))
    throw MqtError(path + ": not a model checkpoint (bad magic)");
  const uint32_t version = read_u32(is, "version");
  if (version != kVersion)
    throw MqtError(path + ": unsupported checkpoint version " + std::to_string(version));
  const ModelConfig cfg = read_config(is);
  if (expected_classes >= 0 && cfg.num_classes != expected_classes)
    throw MqtError(path + ": checkpoint has " + std::to_string(cfg.num_classes) +
                   " classes, expected " + std::to_string(expected_classes));

  ModelParamsT<float> params = ModelParamsT<float>::init(cfg);
  const uint32_t n = read_u32(is, "record count");
  uint32_t have = 0;
  params.for_each([&](const std::string&, const Tensor&, ParamKind) { ++have; });
  if (n != have)
    throw MqtError(path + ": checkpoint holds " + std::to_string(n) + " tensors, config implies " +
                   std::to_string(have));
  params.for_each([&](const std::string& name, Tensor& t, ParamKind) {
    TensorRecord rec = read_tensor_record(is);
    if (rec.name != name)
      throw MqtError(path + ": unexpected record '" + rec.name + "', wanted '" + name + "'");
    if (rec.dtype != kDtypeF32 || rec.dims != t.shape)
      throw MqtError(path + ": record '" + name + "' has wrong dtype or shape");
    t = std::move(rec.f32);
  });
  return params;
}

}  // namespace mqt
