#include "recbase/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "recbase/error.hpp"

namespace recbase::nn {
namespace {

constexpr char kMagic[4] = {'R', 'B', 'C', 'K'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string take(size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(size_t n) const {
    if (pos_ + n > bytes_.size()) throw Error(ErrorKind::kData, "checkpoint truncated");
  }
  const std::string& bytes_;
  size_t pos_ = 0;
};

void put_floats(std::string& out, const Tensor& t) {
  for (double v : t.values()) put<float>(out, static_cast<float>(v));
}

void get_floats(Reader& in, Tensor& t) {
  for (auto& v : t.values()) v = static_cast<double>(in.get<float>());
}

}  // namespace

std::string serialize_checkpoint(const ParameterStore& store, const nlohmann::json& meta) {
  std::string out;
  put<uint8_t>(out, kCheckpointVersion);
  out.append(kMagic, 4);
  const std::string meta_text = meta.dump();
  put<uint64_t>(out, meta_text.size());
  out += meta_text;
  put<uint64_t>(out, store.step());
  put<uint64_t>(out, store.size());
  for (const auto& p : store.params()) {
    put<uint32_t>(out, static_cast<uint32_t>(p.name.size()));
    out += p.name;
    put<uint8_t>(out, p.trainable ? 1 : 0);
    put<uint32_t>(out, static_cast<uint32_t>(p.value.rank()));
    for (size_t d : p.value.shape()) put<uint64_t>(out, d);
    put_floats(out, p.value);
    put_floats(out, p.m);
    put_floats(out, p.v);
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  const auto version = in.get<uint8_t>();
  if (version != kCheckpointVersion) {
    throw Error(ErrorKind::kMismatch, "unsupported checkpoint version " + std::to_string(version));
  }
  if (in.take(4) != std::string(kMagic, 4)) throw Error(ErrorKind::kData, "not a checkpoint (bad magic)");
  Checkpoint ck;
  const auto meta_len = in.get<uint64_t>();
  try {
    ck.meta = nlohmann::json::parse(in.take(meta_len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kData, std::string("checkpoint metadata: ") + e.what());
  }
  const auto step = in.get<uint64_t>();
  const auto count = in.get<uint64_t>();
  for (uint64_t i = 0; i < count; ++i) {
    const auto name = in.take(in.get<uint32_t>());
    const bool trainable = in.get<uint8_t>() != 0;
    std::vector<size_t> shape(in.get<uint32_t>());
    for (auto& d : shape) d = in.get<uint64_t>();
    auto& p = ck.store.at(ck.store.add(name, shape, trainable));
    get_floats(in, p.value);
    get_floats(in, p.m);
    get_floats(in, p.v);
  }
  if (!in.done()) throw Error(ErrorKind::kData, "checkpoint has trailing bytes");
  ck.store.set_step(step);
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& store,
                     const nlohmann::json& meta) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kData, "cannot write " + path.string());
  const auto bytes = serialize_checkpoint(store, meta);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kData, "cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_checkpoint(buf.str());
}

void assign_parameters(ParameterStore& dst, const ParameterStore& src) {
  if (dst.size() != src.size()) {
    throw Error(ErrorKind::kMismatch, "parameter count mismatch: " + std::to_string(dst.size()) +
                                          " vs " + std::to_string(src.size()));
  }
  for (const auto& p : src.params()) {
    auto& q = dst.at(p.name);
    if (!q.value.same_shape(p.value)) throw ShapeError("assign '" + p.name + "'", q.value.shape(), p.value.shape());
    q.value = p.value;
    q.m = p.m;
    q.v = p.v;
    q.trainable = p.trainable;
  }
  dst.set_step(src.step());
}

}  // namespace recbase::nn
