#include "ssmoe/data/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace ssmoe::data {

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void i64(std::int64_t v) { le(static_cast<std::uint64_t>(v), 8); }
  void bytes(const std::string& s) { buf_ += s; }
  std::size_t size() const { return buf_.size(); }
  std::string& str() { return buf_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(const std::string& b) : b_(b) {}
  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw ArchiveError("archive: truncated header at byte " + std::to_string(pos_));
  }
  const std::string& b_;
  std::size_t pos_ = 0;
};

std::size_t element_size(DType dt) { return dt == DType::f32 ? 4 : 8; }

}  // namespace

void TensorArchive::add(const std::string& name, const Tensor& t) {
  if (name.empty() || name.size() > 0xffff) throw ArchiveError("archive: invalid entry name '" + name + "'");
  if (index_.count(name)) throw ArchiveError("archive: duplicate entry '" + name + "'");
  if (t.ndim() > 255) throw ArchiveError("archive: too many axes for '" + name + "'");
  index_[name] = entries_.size();
  entries_.emplace_back(name, t.detach());
}

bool TensorArchive::has(const std::string& name) const { return index_.count(name) > 0; }

const Tensor& TensorArchive::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ArchiveError("archive: no entry '" + name + "'");
  return entries_[it->second].second;
}

std::map<std::string, Tensor> TensorArchive::with_prefix(const std::string& prefix) const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, t] : entries_) {
    if (name.compare(0, prefix.size(), prefix) == 0) out[name.substr(prefix.size())] = t;
  }
  return out;
}

std::string TensorArchive::serialize() const {
  Writer h;
  h.bytes(std::string(kArchiveMagic, 8));
  h.u32(kArchiveVersion);
  h.u32(static_cast<std::uint32_t>(metadata.size()));
  for (const auto& [k, v] : metadata) {
    h.u32(static_cast<std::uint32_t>(k.size()));
    h.bytes(k);
    h.u32(static_cast<std::uint32_t>(v.size()));
    h.bytes(v);
  }
  h.u32(static_cast<std::uint32_t>(entries_.size()));

  std::size_t table_size = 0;
  for (const auto& [name, t] : entries_) table_size += 2 + name.size() + 1 + 1 + 8 * t.shape().size() + 8 + 8;
  std::uint64_t offset = h.size() + table_size;
  offset = (offset + 7) / 8 * 8;

  std::vector<std::uint64_t> offsets;
  for (const auto& [name, t] : entries_) {
    h.u16(static_cast<std::uint16_t>(name.size()));
    h.bytes(name);
    h.u8(static_cast<std::uint8_t>(t.dtype()));
    h.u8(static_cast<std::uint8_t>(t.ndim()));
    for (auto d : t.shape()) h.i64(d);
    const std::uint64_t nbytes = static_cast<std::uint64_t>(t.numel()) * element_size(t.dtype());
    h.u64(offset);
    h.u64(nbytes);
    offsets.push_back(offset);
    offset += (nbytes + 7) / 8 * 8;
  }
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    while (h.size() < offsets[i]) h.u8(0);
    const Tensor& t = entries_[i].second;
    dispatch(t.dtype(), [&]<class T>(T) {
      for (T v : t.data<T>()) {
        if constexpr (std::is_same_v<T, float>) {
          h.u32(std::bit_cast<std::uint32_t>(v));
        } else {
          h.u64(std::bit_cast<std::uint64_t>(v));
        }
      }
    });
  }
  while (h.size() % 8) h.u8(0);
  return std::move(h.str());
}

TensorArchive TensorArchive::deserialize(const std::string& bytes) {
  Reader r(bytes);
  if (r.bytes(8) != std::string(kArchiveMagic, 8)) throw ArchiveError("archive: bad magic");
  const auto version = r.le(4);
  if (version != kArchiveVersion) throw ArchiveError("archive: unsupported version " + std::to_string(version));
  TensorArchive a;
  const auto nmeta = r.le(4);
  for (std::uint64_t i = 0; i < nmeta; ++i) {
    std::string k = r.bytes(r.le(4));
    a.metadata[k] = r.bytes(r.le(4));
  }
  const auto n = r.le(4);
  struct Entry {
    std::string name;
    DType dt;
    Shape shape;
    std::uint64_t offset, nbytes;
  };
  std::vector<Entry> table;
  for (std::uint64_t i = 0; i < n; ++i) {
    Entry e;
    e.name = r.bytes(r.le(2));
    const auto dt = r.le(1);
    if (dt > 1) throw ArchiveError("archive: unknown dtype code " + std::to_string(dt) + " for '" + e.name + "'");
    e.dt = static_cast<DType>(dt);
    const auto nd = r.le(1);
    for (std::uint64_t d = 0; d < nd; ++d) {
      const auto v = static_cast<std::int64_t>(r.le(8));
      if (v < 0) throw ArchiveError("archive: negative extent in '" + e.name + "'");
      e.shape.push_back(v);
    }
    e.offset = r.le(8);
    e.nbytes = r.le(8);
    if (e.nbytes != static_cast<std::uint64_t>(numel_of(e.shape)) * element_size(e.dt)) {
      throw ArchiveError("archive: size mismatch for '" + e.name + "'");
    }
    if (e.offset < r.pos() || e.offset + e.nbytes > bytes.size()) {
      throw ArchiveError("archive: payload of '" + e.name + "' out of bounds");
    }
    table.push_back(std::move(e));
  }
  for (const auto& e : table) {
    Tensor t = Tensor::empty(e.shape, e.dt);
    dispatch(e.dt, [&]<class T>(T) {
      auto d = t.mutable_data<T>();
      const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + e.offset);
      for (std::size_t i = 0; i < d.size(); ++i) {
        std::uint64_t v = 0;
        for (std::size_t b = 0; b < sizeof(T); ++b) v |= static_cast<std::uint64_t>(p[i * sizeof(T) + b]) << (8 * b);
        if constexpr (std::is_same_v<T, float>) {
          d[i] = std::bit_cast<float>(static_cast<std::uint32_t>(v));
        } else {
          d[i] = std::bit_cast<double>(v);
        }
      }
    });
    a.add(e.name, t);
  }
  return a;
}

void TensorArchive::save(const std::string& path) const {
  const std::string bytes = serialize();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ArchiveError("archive: cannot open '" + path + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw ArchiveError("archive: write to '" + path + "' failed");
}

TensorArchive TensorArchive::load(const std::string& path) { return deserialize(read_file(path)); }

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ArchiveError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::uint64_t fnv1a64(const std::string& bytes, std::uint64_t h) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

}  // namespace ssmoe::data
