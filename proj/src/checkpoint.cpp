#include "ambl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "ambl/dataset_io.hpp"

namespace ambl::ckpt {

nlohmann::json hyperparams_to_json(const model::HyperParams& hp) {
  return {{"depth", hp.depth},
          {"heads", hp.heads},
          {"hidden", hp.hidden},
          {"weight_decay", hp.weight_decay},
          {"learning_rate", hp.learning_rate},
          {"init_seed", hp.init_seed},
          {"shuffle_seed", hp.shuffle_seed}};
}

model::HyperParams hyperparams_from_json(const nlohmann::json& j) {
  model::HyperParams hp;
  hp.depth = j.at("depth").get<int>();
  hp.heads = j.at("heads").get<int>();
  hp.hidden = j.at("hidden").get<int>();
  hp.weight_decay = j.at("weight_decay").get<double>();
  hp.learning_rate = j.at("learning_rate").get<double>();
  hp.init_seed = j.at("init_seed").get<uint64_t>();
  hp.shuffle_seed = j.at("shuffle_seed").get<uint64_t>();
  return hp;
}

namespace {

constexpr char kMagic[4] = {'A', 'M', 'B', 'L'};

template <typename U>
void put(std::string& out, U v) {
  static_assert(std::is_unsigned_v<U>);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(std::string_view bytes, const std::string& origin) : b_(bytes), origin_(origin) {}

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == b_.size(); }
  const std::string& origin() const { return origin_; }

 private:
  void need(std::size_t n, const char* what) {
    if (b_.size() - pos_ < n) {
      throw CheckpointError(ErrorKind::Truncated, origin_ + ": truncated while reading " + what + " at byte " +
                                                      std::to_string(pos_));
    }
  }

  std::string_view b_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const model::ModelRecord& model, const nlohmann::json& metadata) {
  nlohmann::json meta = metadata.is_object() ? metadata : nlohmann::json::object();
  meta["hyperparams"] = hyperparams_to_json(model.hp);
  const std::string meta_text = meta.dump();

  std::string out(kMagic, 4);
  put<uint32_t>(out, kFormatVersion);
  put<uint64_t>(out, meta_text.size());
  out += meta_text;
  const auto params = model.params();
  put<uint32_t>(out, static_cast<uint32_t>(params.size()));
  for (const auto& p : params) {
    put<uint32_t>(out, static_cast<uint32_t>(p.name.size()));
    out += p.name;
    put<uint32_t>(out, static_cast<uint32_t>(p.tensor->rank()));
    for (const int d : p.tensor->shape()) put<uint32_t>(out, static_cast<uint32_t>(d));
    for (const float x : p.tensor->values()) put<uint32_t>(out, std::bit_cast<uint32_t>(x));
  }
  return out;
}

void save_checkpoint(const model::ModelRecord& model, const nlohmann::json& metadata, const std::filesystem::path& path) {
  try {
    write_file_atomic(path, encode_checkpoint(model, metadata));
  } catch (const std::exception& e) {
    throw CheckpointError(ErrorKind::Io, e.what());
  }
}

LoadedCheckpoint decode_checkpoint(std::string_view bytes, const std::string& origin) {
  Reader r(bytes, origin);
  const auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw CheckpointError(ErrorKind::BadMagic, origin + ": not an AMBL checkpoint");
  const auto version = r.get<uint32_t>("version");
  if (version != kFormatVersion) {
    throw CheckpointError(ErrorKind::VersionMismatch, origin + ": format version " + std::to_string(version) +
                                                          " is not supported (expected " +
                                                          std::to_string(kFormatVersion) + ")");
  }
  const auto meta_len = r.get<uint64_t>("metadata length");
  const auto meta_text = r.take(meta_len, "metadata");

  LoadedCheckpoint out;
  model::HyperParams hp;
  try {
    out.metadata = nlohmann::json::parse(meta_text);
    hp = hyperparams_from_json(out.metadata.at("hyperparams"));
    hp.validate();
  } catch (const std::exception& e) {
    throw CheckpointError(ErrorKind::Malformed, origin + ": bad metadata: " + e.what());
  }
  out.model = model::zeros_model<float>(hp);
  auto params = out.model.params();

  const auto count = r.get<uint32_t>("tensor count");
  if (count != params.size()) {
    throw CheckpointError(ErrorKind::ShapeMismatch, origin + ": " + std::to_string(count) + " tensors stored, model has " +
                                                        std::to_string(params.size()));
  }
  for (auto& p : params) {
    const auto name_len = r.get<uint32_t>("tensor name length");
    const std::string name(r.take(name_len, "tensor name"));
    if (name != p.name) {
      throw CheckpointError(ErrorKind::ShapeMismatch, origin + ": expected tensor " + p.name + ", found " + name);
    }
    const auto rank = r.get<uint32_t>("tensor rank");
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(r.get<uint32_t>("tensor dims"));
    if (shape != p.tensor->shape()) {
      throw CheckpointError(ErrorKind::ShapeMismatch, origin + ": tensor " + name + " stored as " + shape_string(shape) +
                                                          ", model expects " + shape_string(p.tensor->shape()));
    }
    for (float& x : p.tensor->values()) x = std::bit_cast<float>(r.get<uint32_t>("tensor data"));
  }
  if (!r.done()) throw CheckpointError(ErrorKind::Malformed, origin + ": trailing bytes after last tensor");
  return out;
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const std::exception& e) {
    throw CheckpointError(ErrorKind::Io, e.what());
  }
  return decode_checkpoint(bytes, path.string());
}

}  // namespace ambl::ckpt
