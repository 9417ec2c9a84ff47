#include "mlec/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include <zlib.h>

#include "mlec/config.hpp"
#include "mlec/rng.hpp"

namespace mlec {

namespace {

constexpr char kMagic[4] = {'M', 'L', 'C', 'K'};

template <class T>
void put(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

template <class T>
T get(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw CheckpointError("checkpoint is truncated");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += sizeof(T);
  return static_cast<T>(v);
}

std::uint32_t crc32_of(const std::string& bytes, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(n));
  return static_cast<std::uint32_t>(crc);
}

void add_section(std::string& out, const std::string& name, const std::string& payload) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  put<std::uint64_t>(out, payload.size());
  out += payload;
}

}  // namespace

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw std::runtime_error("write failed for " + path.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  Model& model = const_cast<Model&>(ckpt.model);
  const ParameterRefs params = model.parameters();

  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(5 + params.size()));
  add_section(out, "model_config", model_config_to_json(ckpt.model.config()).dump());
  add_section(out, "train_config", train_config_to_json(ckpt.train).dump());
  add_section(out, "labels", ojson(ckpt.labels.names()).dump());
  std::ostringstream vocab;
  ckpt.tokens.write(vocab);
  add_section(out, "token_vocab", vocab.str());
  std::string digest;
  put<std::uint64_t>(digest, ckpt.rng_digest);
  add_section(out, "rng_digest", digest);
  for (const Parameter* p : params) {
    std::ostringstream t(std::ios::binary);
    write_tensor(t, p->value);
    add_section(out, "param:" + p->name, t.str());
  }
  put<std::uint32_t>(out, crc32_of(out, out.size()));
  write_file_atomic(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint not found: " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw CheckpointError(path.string() + " is not a checkpoint");
  std::size_t pos = 4;
  const auto version = get<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint format version mismatch: file has " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  }
  if (bytes.size() < 16) throw CheckpointError("checkpoint checksum mismatch (file truncated)");
  const std::size_t body = bytes.size() - 4;
  std::size_t crc_pos = body;
  if (get<std::uint32_t>(bytes, crc_pos) != crc32_of(bytes, body)) {
    throw CheckpointError("checkpoint checksum mismatch (corrupt or truncated file)");
  }
  const std::string payload = bytes.substr(0, body);
  const auto count = get<std::uint32_t>(payload, pos);
  std::map<std::string, std::string> sections;
  for (std::uint32_t s = 0; s < count; ++s) {
    const auto name_len = get<std::uint32_t>(payload, pos);
    if (pos + name_len > payload.size()) throw CheckpointError("checkpoint is truncated");
    std::string name = payload.substr(pos, name_len);
    pos += name_len;
    const auto len = get<std::uint64_t>(payload, pos);
    if (len > payload.size() - pos) throw CheckpointError("checkpoint is truncated");
    sections[name] = payload.substr(pos, len);
    pos += len;
  }
  auto section = [&](const std::string& name) -> const std::string& {
    const auto it = sections.find(name);
    if (it == sections.end()) throw CheckpointError("checkpoint lacks section '" + name + "'");
    return it->second;
  };

  try {
    const ModelConfig cfg = model_config_from_json(ojson::parse(section("model_config")));
    const TrainConfig train = train_config_from_json(ojson::parse(section("train_config")));
    LabelVocab labels(ojson::parse(section("labels")).get<std::vector<std::string>>());
    std::istringstream vocab_in(section("token_vocab"));
    TokenVocab tokens = TokenVocab::read(vocab_in);
    std::size_t dpos = 0;
    const auto digest = get<std::uint64_t>(section("rng_digest"), dpos);
    if (tokens.size() != cfg.encoder.vocab_size) throw CheckpointError("checkpoint vocabulary size disagrees with the model config");
    if (labels.size() != cfg.decoder.label_count) throw CheckpointError("checkpoint label vocabulary disagrees with the model config");

    Rng rng(0);
    Checkpoint ckpt{Model(cfg, rng), std::move(tokens), std::move(labels), train, digest};
    std::size_t used = 0;
    for (Parameter* p : ckpt.model.parameters()) {
      std::istringstream t(section("param:" + p->name), std::ios::binary);
      const Tensor loaded = read_tensor(t);
      if (loaded.shape() != p->value.shape()) {
        throw CheckpointError("parameter " + p->name + " has shape " + shape_str(loaded.shape()) + ", expected " +
                              shape_str(p->value.shape()));
      }
      const auto src = loaded.data();
      std::copy(src.begin(), src.end(), p->value.mutable_data().begin());
      ++used;
    }
    if (used + 5 != sections.size()) throw CheckpointError("checkpoint has parameters the model does not know");
    return ckpt;
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& ex) {
    throw CheckpointError(std::string("checkpoint is malformed: ") + ex.what());
  }
}

}  // namespace mlec
