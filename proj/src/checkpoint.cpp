#include "derm/checkpoint.hpp"

#include <cstring>

#include "derm/error.hpp"
#include "derm/io.hpp"

namespace derm::ckpt {

namespace {

constexpr char kMagic[8] = {'D', 'E', 'R', 'M', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_string(std::string& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out += s;
}

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t end, const std::string& origin)
      : bytes_(bytes), end_(end), origin_(origin) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string get_string() {
    const auto n = get<std::uint64_t>();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void read_into(double* dst, std::size_t count) {
    need(count * sizeof(double));
    std::memcpy(dst, bytes_.data() + pos_, count * sizeof(double));
    pos_ += count * sizeof(double);
  }

  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (n > end_ - pos_) throw CheckpointError(origin_ + ": truncated at byte " + std::to_string(pos_));
  }
  const std::string& bytes_;
  std::size_t end_;
  const std::string& origin_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize(const Checkpoint& c) {
  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kFormatVersion);
  put_string(out, c.config_echo);
  put<std::uint64_t>(out, c.tensors.size());
  for (const auto& [name, t] : c.tensors) {
    put_string(out, name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (ad::Index d : t.shape()) put<std::int64_t>(out, d);
    out.append(reinterpret_cast<const char*>(t.raw()), static_cast<std::size_t>(t.size()) * sizeof(double));
  }
  put<std::uint64_t>(out, io::fnv1a(out));
  return out;
}

Checkpoint deserialize(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < sizeof kMagic + sizeof(std::uint64_t) || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw CheckpointError(origin + ": not a checkpoint file");
  const std::size_t body = bytes.size() - sizeof(std::uint64_t);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, sizeof stored);
  if (stored != io::fnv1a(std::string_view(bytes.data(), body)))
    throw CheckpointError(origin + ": checksum mismatch");
  Reader r(bytes, body, origin);
  for (std::size_t i = 0; i < sizeof kMagic; ++i) r.get<char>();
  const auto version = r.get<std::uint32_t>();
  if (version != kFormatVersion)
    throw CheckpointError(origin + ": format version " + std::to_string(version) + " (expected " +
                          std::to_string(kFormatVersion) + ")");
  Checkpoint c;
  c.config_echo = r.get_string();
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.get_string();
    const auto rank = r.get<std::uint32_t>();
    if (rank == 0 || rank > 8) throw CheckpointError(origin + ": tensor '" + name + "' has rank " + std::to_string(rank));
    ad::Shape shape(rank);
    for (auto& d : shape) {
      d = r.get<std::int64_t>();
      if (d < 1) throw CheckpointError(origin + ": tensor '" + name + "' has a non-positive extent");
    }
    ad::TensorD t(shape);
    r.read_into(t.raw(), static_cast<std::size_t>(t.size()));
    c.tensors.emplace(std::move(name), std::move(t));
  }
  if (r.pos() != body) throw CheckpointError(origin + ": trailing bytes after the last tensor");
  return c;
}

void save(const Checkpoint& c, const std::filesystem::path& path) { io::write_file_atomic(path, serialize(c)); }

Checkpoint load(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = io::read_file(path);
  } catch (const IoError& e) {
    throw CheckpointError(e.what());
  }
  return deserialize(bytes, path.string());
}

}  // namespace derm::ckpt
