#include "cmkm/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace cmkm::io {

static_assert(std::endian::native == std::endian::little,
              "the archive writer assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'C', 'M', 'K', 'T'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("cannot open for writing: " + path.string());
  }
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  template <typename T>
  void pod(T v) { bytes(&v, sizeof(T)); }
  void finish(const std::filesystem::path& path) {
    out_.flush();
    if (!out_) throw std::runtime_error("write failed: " + path.string());
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw std::runtime_error("cannot open: " + path.string());
  }
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in_) throw std::runtime_error("truncated archive: " + path_.string());
  }
  template <typename T>
  T pod() {
    T v;
    bytes(&v, sizeof(T));
    return v;
  }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
};

template <typename Real>
void write_tensor(Writer& w, DType dtype, const Tensor<Real>& t) {
  w.pod(static_cast<std::uint32_t>(dtype));
  w.pod(static_cast<std::uint32_t>(t.rank()));
  for (Index d : t.shape()) w.pod(static_cast<std::uint64_t>(d));
  w.bytes(t.data(), static_cast<std::size_t>(t.size()) * sizeof(Real));
}

}  // namespace

void write_archive(const std::filesystem::path& path, const Archive& archive) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  Writer w(path);
  w.bytes(kMagic, 4);
  w.pod(kVersion);
  w.pod(static_cast<std::uint32_t>(archive.size()));
  for (const auto& [name, entry] : archive) {
    w.pod(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    if (const auto* f = std::get_if<Tensor<float>>(&entry)) {
      write_tensor(w, DType::f32, *f);
    } else if (const auto* d = std::get_if<Tensor<double>>(&entry)) {
      write_tensor(w, DType::f64, *d);
    } else {
      const auto& s = std::get<std::string>(entry);
      w.pod(static_cast<std::uint32_t>(DType::u8));
      w.pod(std::uint32_t{1});
      w.pod(static_cast<std::uint64_t>(s.size()));
      w.bytes(s.data(), s.size());
    }
  }
  w.finish(path);
}

Archive read_archive(const std::filesystem::path& path) {
  Reader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("not a CMKT archive: " + path.string());
  const auto version = r.pod<std::uint32_t>();
  if (version != kVersion)
    throw std::runtime_error("unsupported CMKT version " + std::to_string(version) + ": " + path.string());
  const auto count = r.pod<std::uint32_t>();
  Archive archive;
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto name_len = r.pod<std::uint32_t>();
    std::string name(name_len, '\0');
    r.bytes(name.data(), name_len);
    const auto dtype = static_cast<DType>(r.pod<std::uint32_t>());
    const auto rank = r.pod<std::uint32_t>();
    if (rank > 16) throw std::runtime_error("implausible tensor rank in " + path.string());
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<Index>(r.pod<std::uint64_t>());
    const Index n = shape_size(shape);
    switch (dtype) {
      case DType::f32: {
        Tensor<float> t(shape);
        r.bytes(t.data(), static_cast<std::size_t>(n) * sizeof(float));
        archive.emplace(name, std::move(t));
        break;
      }
      case DType::f64: {
        Tensor<double> t(shape);
        r.bytes(t.data(), static_cast<std::size_t>(n) * sizeof(double));
        archive.emplace(name, std::move(t));
        break;
      }
      case DType::u8: {
        std::string s(static_cast<std::size_t>(n), '\0');
        r.bytes(s.data(), s.size());
        archive.emplace(name, std::move(s));
        break;
      }
      default:
        throw std::runtime_error("unknown dtype in " + path.string());
    }
  }
  return archive;
}

Tensor<float> get_f32(const Archive& archive, const std::string& name,
                      const std::filesystem::path& origin) {
  const auto it = archive.find(name);
  if (it == archive.end())
    throw std::runtime_error("missing tensor '" + name + "' in " + origin.string());
  if (const auto* f = std::get_if<Tensor<float>>(&it->second)) return *f;
  if (const auto* d = std::get_if<Tensor<double>>(&it->second)) return d->cast<float>();
  throw std::runtime_error("entry '" + name + "' is not a tensor in " + origin.string());
}

const std::string& get_bytes(const Archive& archive, const std::string& name,
                             const std::filesystem::path& origin) {
  const auto it = archive.find(name);
  if (it == archive.end() || !std::holds_alternative<std::string>(it->second))
    throw std::runtime_error("missing byte entry '" + name + "' in " + origin.string());
  return std::get<std::string>(it->second);
}

}  // namespace cmkm::io
