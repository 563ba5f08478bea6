#include "egnmt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "egnmt/errors.hpp"

namespace egnmt {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'E', 'G', 'N', 'M', 'T', 'C', 'K', 'P'};

template <typename U>
void put(std::string& out, U value) {
  char buf[sizeof(U)];
  std::memcpy(buf, &value, sizeof(U));
  out.append(buf, sizeof(U));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t end, std::string path) : bytes_(bytes), end_(end), path_(std::move(path)) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return value;
  }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void get_floats(float* dst, std::size_t n) {
    need(n * sizeof(float));
    std::memcpy(dst, bytes_.data() + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
  }
  bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw InputError(path_ + ": truncated checkpoint");
  }
  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
  std::string path_;
};

}  // namespace

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t hash) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    hash ^= p[i];
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

void write_file_atomic(const std::string& path, const std::string& bytes) {
  const std::string temp = path + ".tmp";
  {
    std::ofstream out(temp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + temp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InputError("short write to " + temp);
  }
  std::filesystem::rename(temp, path);
}

void save_checkpoint(const std::string& path, const ModelConfig& config, const ModelParams<float>& params,
                     const nlohmann::json& meta) {
  const auto named = params.named();
  nlohmann::json header = {{"config", config.to_json()},
                           {"meta", meta},
                           {"tensors", named.size()},
                           {"shared", {{"auxiliary_decoder", "decoder"}}}};
  const std::string header_text = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, header_text.size());
  out += header_text;
  for (const auto& [name, tensor] : named) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
    for (auto d : tensor.shape()) put<std::uint64_t>(out, d);
    const auto data = tensor.data();
    out.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(float));
  }
  put<std::uint64_t>(out, fnv1a64(out.data(), out.size()));
  write_file_atomic(path, out);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read checkpoint " + path + " (produced by train)");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof(kMagic) + 4 + 8 + 8 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw InputError(path + ": not a checkpoint file");
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, 8);
  if (stored != fnv1a64(bytes.data(), body)) throw InputError(path + ": checkpoint checksum mismatch");

  Reader r(bytes, body, path);
  r.get_string(sizeof(kMagic));
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw InputError(path + ": unsupported checkpoint version " + std::to_string(version));
  const auto header = nlohmann::json::parse(r.get_string(r.get<std::uint64_t>()));

  Checkpoint ckpt;
  ckpt.config = ModelConfig::from_json(header.at("config"));
  ckpt.meta = header.at("meta");
  ckpt.params = init_params<float>(ckpt.config, 0);
  const auto expected = header.at("tensors").get<std::size_t>();
  std::size_t count = 0;
  ckpt.params.for_each([&](const std::string& name, Tensor<float>& t) {
    const auto stored_name = r.get_string(r.get<std::uint32_t>());
    if (stored_name != name) throw InputError(path + ": expected tensor " + name + ", found " + stored_name);
    Shape shape(r.get<std::uint32_t>());
    for (auto& d : shape) d = r.get<std::uint64_t>();
    if (shape != t.shape())
      throw InputError(path + ": tensor " + name + " has shape " + shape_string(shape) + ", expected " +
                       shape_string(t.shape()));
    r.get_floats(t.mutable_data().data(), t.size());
    ++count;
  });
  if (count != expected || !r.done()) throw InputError(path + ": tensor count mismatch");
  return ckpt;
}

}  // namespace egnmt
