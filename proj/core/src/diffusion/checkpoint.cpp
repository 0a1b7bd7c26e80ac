#include "candleforge/diffusion/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <string>

#include <nlohmann/json.hpp>

#include "candleforge/error.hpp"
#include "candleforge/image.hpp"

namespace candleforge::diffusion {
namespace {

constexpr char kMagic[4] = {'C', 'F', 'C', 'K'};
constexpr std::uint8_t kF32 = 0;
constexpr std::uint8_t kF64 = 1;

class Writer {
 public:
  std::vector<std::uint8_t> out;

  void u8(std::uint8_t v) { out.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void bytes(std::string_view s) { out.insert(out.end(), s.begin(), s.end()); }
  void value(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void value(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

  std::size_t offset() const noexcept { return pos_; }
  bool done() const noexcept { return pos_ == data_.size(); }

  void need(std::size_t n, const char* what) const {
    if (data_.size() - pos_ < n) throw ParseError(std::string("checkpoint truncated reading ") + what + " at byte " +
                                                      std::to_string(pos_), pos_);
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return data_[pos_++];
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_++]) << (8 * i);
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

nlohmann::json meta_to_json(const CheckpointMeta& m) {
  return {{"unet", m.unet},
          {"schedule", {{"steps", m.schedule_steps}, {"beta_start", m.beta_start}, {"beta_end", m.beta_end}}},
          {"codec_seed", m.codec_seed},
          {"image", {{"width", m.image_width}, {"height", m.image_height}}},
          {"train", {{"seed", m.train_seed}, {"steps", m.train_steps}}}};
}

CheckpointMeta meta_from_json(const nlohmann::json& j) {
  CheckpointMeta m;
  m.unet = j.at("unet").get<UNetConfig>();
  m.schedule_steps = j.at("schedule").at("steps").get<int>();
  m.beta_start = j.at("schedule").at("beta_start").get<double>();
  m.beta_end = j.at("schedule").at("beta_end").get<double>();
  m.codec_seed = j.at("codec_seed").get<std::uint64_t>();
  m.image_width = j.at("image").at("width").get<int>();
  m.image_height = j.at("image").at("height").get<int>();
  m.train_seed = j.at("train").at("seed").get<std::uint64_t>();
  m.train_steps = j.at("train").at("steps").get<int>();
  return m;
}

template <typename T>
Denoiser<T> read_body(std::span<const std::uint8_t> bytes, CheckpointMeta& meta) {
  Reader r(bytes);
  if (r.str(4, "magic") != std::string_view(kMagic, 4)) throw ParseError("not a checkpoint file (bad magic)", 0);
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(version), 4);
  }
  const std::uint32_t json_len = r.u32("config length");
  const std::size_t json_at = r.offset();
  const std::string text = r.str(json_len, "config");
  try {
    meta = meta_from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint config: ") + e.what(), json_at);
  }
  Denoiser<T> model(meta.unet);
  const std::uint32_t count = r.u32("tensor count");
  if (count != model.layout().size()) {
    throw ParseError("checkpoint has " + std::to_string(count) + " tensors, architecture expects " +
                         std::to_string(model.layout().size()),
                     r.offset());
  }
  for (const ParamInfo& info : model.layout()) {
    const std::size_t at = r.offset();
    const std::string name = r.str(r.u32("name length"), "name");
    if (name != info.name) throw ParseError("expected tensor '" + info.name + "', found '" + name + "'", at);
    const std::uint8_t dtype = r.u8("dtype");
    if (dtype != kF32 && dtype != kF64) throw ParseError("unknown dtype tag for '" + name + "'", at);
    const std::uint32_t rank = r.u32("rank");
    if (rank != info.shape.size()) throw ParseError("rank mismatch for '" + name + "'", at);
    for (std::uint32_t k = 0; k < rank; ++k) {
      if (r.u32("dim") != static_cast<std::uint32_t>(info.shape[k])) throw ParseError("shape mismatch for '" + name + "'", at);
    }
    T* dst = model.params().data() + info.offset;
    for (std::size_t i = 0; i < info.size; ++i) {
      if (dtype == kF32) {
        dst[i] = static_cast<T>(std::bit_cast<float>(r.u32("payload")));
      } else {
        dst[i] = static_cast<T>(std::bit_cast<double>(r.u64("payload")));
      }
    }
  }
  if (!r.done()) throw ParseError("trailing bytes after checkpoint payload", r.offset());
  return model;
}

}  // namespace

template <typename T>
std::vector<std::uint8_t> serialize_checkpoint(const Denoiser<T>& model, const CheckpointMeta& meta) {
  if (!(meta.unet == model.config())) throw ArgumentError("checkpoint metadata does not match the model config");
  Writer w;
  w.bytes(std::string_view(kMagic, 4));
  w.u32(kCheckpointVersion);
  const std::string text = meta_to_json(meta).dump();
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.bytes(text);
  w.u32(static_cast<std::uint32_t>(model.layout().size()));
  for (const ParamInfo& info : model.layout()) {
    w.u32(static_cast<std::uint32_t>(info.name.size()));
    w.bytes(info.name);
    w.u8(std::is_same_v<T, float> ? kF32 : kF64);
    w.u32(static_cast<std::uint32_t>(info.shape.size()));
    for (int d : info.shape) w.u32(static_cast<std::uint32_t>(d));
    for (std::size_t i = 0; i < info.size; ++i) w.value(model.params()[info.offset + i]);
  }
  return std::move(w.out);
}

template <typename T>
void save_checkpoint(const Denoiser<T>& model, const CheckpointMeta& meta, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(model, meta);
  write_file_bytes(path, bytes);
}

LoadedCheckpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  CheckpointMeta meta;
  Denoiser<float> model = read_body<float>(bytes, meta);
  return {meta, std::move(model)};
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return deserialize_checkpoint(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.location());
  }
}

Denoiser<double> load_checkpoint_f64(const std::filesystem::path& path, CheckpointMeta* meta) {
  const auto bytes = read_file_bytes(path);
  CheckpointMeta m;
  Denoiser<double> model = read_body<double>(bytes, m);
  if (meta) *meta = m;
  return model;
}

template std::vector<std::uint8_t> serialize_checkpoint(const Denoiser<float>&, const CheckpointMeta&);
template std::vector<std::uint8_t> serialize_checkpoint(const Denoiser<double>&, const CheckpointMeta&);
template void save_checkpoint(const Denoiser<float>&, const CheckpointMeta&, const std::filesystem::path&);
template void save_checkpoint(const Denoiser<double>&, const CheckpointMeta&, const std::filesystem::path&);

}  // namespace candleforge::diffusion
