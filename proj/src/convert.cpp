#include "cmkm/convert.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <regex>
#include <sstream>

#include "cmkm/errors.hpp"

namespace cmkm::convert {

namespace fs = std::filesystem;

namespace {

// Level 5 MAT-file data types.
enum : std::uint32_t {
  miINT8 = 1, miUINT8 = 2, miINT16 = 3, miUINT16 = 4, miINT32 = 5, miUINT32 = 6,
  miSINGLE = 7, miDOUBLE = 9, miINT64 = 12, miUINT64 = 13, miMATRIX = 14, miCOMPRESSED = 15,
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string inflate_all(const char* data, std::size_t size, const fs::path& path) {
  z_stream zs{};
  if (inflateInit(&zs) != Z_OK) throw LoadError("zlib init failed");
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(data));
  zs.avail_in = static_cast<uInt>(size);
  std::string out;
  char buf[1 << 15];
  int rc;
  do {
    zs.next_out = reinterpret_cast<Bytef*>(buf);
    zs.avail_out = sizeof(buf);
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw LoadError("corrupt compressed element in " + path.string());
    }
    out.append(buf, sizeof(buf) - zs.avail_out);
  } while (rc != Z_STREAM_END && zs.avail_in > 0);
  inflateEnd(&zs);
  return out;
}

struct Element {
  std::uint32_t type = 0;
  const char* data = nullptr;
  std::size_t size = 0;
  std::size_t next = 0;  // offset after the (padded) element
};

Element read_element(const std::string& buf, std::size_t pos, bool pad, const fs::path& path) {
  if (pos + 8 > buf.size()) throw LoadError("truncated MAT element in " + path.string());
  std::uint32_t w0, w1;
  std::memcpy(&w0, buf.data() + pos, 4);
  std::memcpy(&w1, buf.data() + pos + 4, 4);
  Element e;
  if (w0 >> 16) {  // small data element: 2-byte size, 2-byte type, 4 bytes of data
    e.type = w0 & 0xFFFF;
    e.size = w0 >> 16;
    e.data = buf.data() + pos + 4;
    e.next = pos + 8;
    return e;
  }
  e.type = w0;
  e.size = w1;
  e.data = buf.data() + pos + 8;
  if (pos + 8 + e.size > buf.size()) throw LoadError("truncated MAT element in " + path.string());
  e.next = pos + 8 + (pad ? (e.size + 7) / 8 * 8 : e.size);
  return e;
}

template <typename T>
void widen(const char* p, std::size_t count, std::vector<double>& out) {
  for (std::size_t i = 0; i < count; ++i) {
    T v;
    std::memcpy(&v, p + i * sizeof(T), sizeof(T));
    out.push_back(static_cast<double>(v));
  }
}

bool numeric_values(const Element& e, std::vector<double>& out) {
  switch (e.type) {
    case miINT8: widen<std::int8_t>(e.data, e.size, out); return true;
    case miUINT8: widen<std::uint8_t>(e.data, e.size, out); return true;
    case miINT16: widen<std::int16_t>(e.data, e.size / 2, out); return true;
    case miUINT16: widen<std::uint16_t>(e.data, e.size / 2, out); return true;
    case miINT32: widen<std::int32_t>(e.data, e.size / 4, out); return true;
    case miUINT32: widen<std::uint32_t>(e.data, e.size / 4, out); return true;
    case miSINGLE: widen<float>(e.data, e.size / 4, out); return true;
    case miDOUBLE: widen<double>(e.data, e.size / 8, out); return true;
    case miINT64: widen<std::int64_t>(e.data, e.size / 8, out); return true;
    case miUINT64: widen<std::uint64_t>(e.data, e.size / 8, out); return true;
    default: return false;
  }
}

void parse_matrix(const std::string& buf, std::size_t begin, std::size_t end, const fs::path& path,
                  std::map<std::string, MatArray>& out) {
  std::size_t pos = begin;
  const Element flags = read_element(buf, pos, true, path);
  pos = flags.next;
  std::uint32_t f0 = 0;
  if (flags.size >= 4) std::memcpy(&f0, flags.data, 4);
  const std::uint32_t cls = f0 & 0xFF;
  const bool complex = (f0 >> 11) & 1;
  if (cls < 6 || cls > 15 || complex) return;  // only real numeric arrays

  const Element dims = read_element(buf, pos, true, path);
  pos = dims.next;
  MatArray a;
  for (std::size_t i = 0; i < dims.size / 4; ++i) {
    std::int32_t d;
    std::memcpy(&d, dims.data + 4 * i, 4);
    a.dims.push_back(static_cast<std::size_t>(d));
  }
  const Element name = read_element(buf, pos, true, path);
  pos = name.next;
  const Element real = read_element(buf, pos, true, path);
  if (real.next > end + 8) throw LoadError("malformed matrix in " + path.string());
  if (!numeric_values(real, a.values)) return;
  std::size_t expected = 1;
  for (auto d : a.dims) expected *= d;
  if (a.values.size() != expected) throw LoadError("matrix size mismatch in " + path.string());
  out[std::string(name.data, name.size)] = std::move(a);
}

void parse_elements(const std::string& buf, std::size_t pos, const fs::path& path,
                    std::map<std::string, MatArray>& out) {
  while (pos + 8 <= buf.size()) {
    const Element e = read_element(buf, pos, true, path);
    if (e.type == miCOMPRESSED) {
      const std::string inner = inflate_all(e.data, e.size, path);
      parse_elements(inner, 0, path, out);
      pos = pos + 8 + e.size;  // compressed elements are not padded
    } else {
      if (e.type == miMATRIX && e.size > 0)
        parse_matrix(buf, static_cast<std::size_t>(e.data - buf.data()),
                     static_cast<std::size_t>(e.data - buf.data()) + e.size, path, out);
      pos = e.next;
    }
  }
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open: " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.emplace_back();
    rows.push_back(std::move(cells));
  }
  return rows;
}

Tensor<float> numeric_csv(const fs::path& path) {
  auto rows = read_csv(path);
  if (rows.empty()) throw ValidationError("empty CSV: " + path.string());
  const std::size_t cols = rows[0].size();
  Tensor<float> t({static_cast<Index>(rows.size()), static_cast<Index>(cols)});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != cols) throw ValidationError(path.string() + ": ragged row " + std::to_string(r + 1));
    for (std::size_t c = 0; c < cols; ++c) {
      try {
        t(static_cast<Index>(r), static_cast<Index>(c)) = std::stof(rows[r][c]);
      } catch (const std::exception&) {
        throw ValidationError(path.string() + ": non-numeric cell at row " + std::to_string(r + 1));
      }
    }
  }
  return t;
}

}  // namespace

std::map<std::string, MatArray> read_mat_file(const fs::path& path) {
  const std::string buf = read_file(path);
  if (buf.size() < 128) throw LoadError("not a MAT-file: " + path.string());
  if (buf[126] != 'I' || buf[127] != 'M')
    throw LoadError("unsupported MAT-file (not level 5 little-endian): " + path.string());
  std::map<std::string, MatArray> out;
  parse_elements(buf, 128, path, out);
  return out;
}

data::Dataset convert_utd_mhad(const fs::path& source_dir) {
  if (!fs::is_directory(source_dir)) throw LoadError("UTD-MHAD directory not found: " + source_dir.string());
  const std::regex pattern(R"(a(\d+)_s(\d+)_t(\d+)_inertial\.mat)");
  struct Key {
    int a, s, t;
    fs::path inertial, skeleton;
  };
  std::vector<Key> keys;
  for (const auto& entry : fs::recursive_directory_iterator(source_dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (!std::regex_match(name, m, pattern)) continue;
    const int a = std::stoi(m[1]), s = std::stoi(m[2]), t = std::stoi(m[3]);
    const std::string skel_name = "a" + std::to_string(a) + "_s" + std::to_string(s) + "_t" + std::to_string(t) + "_skeleton.mat";
    fs::path skel;
    for (const auto& dir : {entry.path().parent_path(), entry.path().parent_path().parent_path() / "Skeleton"})
      if (fs::exists(dir / skel_name)) skel = dir / skel_name;
    if (skel.empty())
      for (const auto& e2 : fs::recursive_directory_iterator(source_dir))
        if (e2.path().filename() == skel_name) skel = e2.path();
    if (skel.empty()) throw LoadError("no skeleton file for " + entry.path().string());
    keys.push_back({a, s, t, entry.path(), skel});
  }
  if (keys.empty()) throw ValidationError("no UTD-MHAD *_inertial.mat files under " + source_dir.string());
  std::sort(keys.begin(), keys.end(), [](const Key& x, const Key& y) {
    return std::tie(x.a, x.s, x.t) < std::tie(y.a, y.s, y.t);
  });

  data::Dataset ds;
  ds.info = {"utd_mhad", 27, 6, 20, 3};
  for (const auto& k : keys) {
    const auto im = read_mat_file(k.inertial);
    const auto sm = read_mat_file(k.skeleton);
    const auto ii = im.find("d_iner");
    const auto si = sm.find("d_skel");
    if (ii == im.end()) throw ValidationError("d_iner missing in " + k.inertial.string());
    if (si == sm.end()) throw ValidationError("d_skel missing in " + k.skeleton.string());
    const MatArray& ia = ii->second;
    const MatArray& sa = si->second;
    if (ia.dims.size() != 2 || ia.dims[1] != 6) throw ValidationError("d_iner must be T x 6 in " + k.inertial.string());
    if (sa.dims.size() != 3 || sa.dims[0] != 20 || sa.dims[1] != 3)
      throw ValidationError("d_skel must be 20 x 3 x T in " + k.skeleton.string());
    const Index ti = static_cast<Index>(ia.dims[0]), ts = static_cast<Index>(sa.dims[2]);
    data::MultimodalSample sample;
    sample.inertial.values = Tensor<float>({ti, 6});
    for (Index t = 0; t < ti; ++t)
      for (Index c = 0; c < 6; ++c)
        sample.inertial.values(t, c) = static_cast<float>(ia.values[static_cast<std::size_t>(t + ti * c)]);
    sample.skeleton.values = Tensor<float>({ts, 20, 3});
    for (Index t = 0; t < ts; ++t)
      for (Index j = 0; j < 20; ++j)
        for (Index c = 0; c < 3; ++c)
          sample.skeleton.values(t, j, c) = static_cast<float>(sa.values[static_cast<std::size_t>(j + 20 * (c + 3 * t))]);
    sample.label = k.a - 1;
    sample.subject_id = k.s;
    sample.inertial.validate();
    sample.skeleton.validate();
    ds.samples.push_back(std::move(sample));
  }
  return ds;
}

data::Dataset convert_csv(const fs::path& index_csv, Index coords, int num_classes, const std::string& name) {
  if (coords != 2 && coords != 3) throw std::invalid_argument("convert: coords must be 2 or 3");
  auto rows = read_csv(index_csv);
  if (rows.size() < 2) throw ValidationError("index has no samples: " + index_csv.string());
  const auto& header = rows[0];
  auto col = [&](const std::string& n, bool required) -> int {
    const auto it = std::find(header.begin(), header.end(), n);
    if (it == header.end()) {
      if (required) throw ValidationError(index_csv.string() + ": missing column '" + n + "'");
      return -1;
    }
    return static_cast<int>(it - header.begin());
  };
  const int ci = col("inertial", true), cs = col("skeleton", true), cl = col("label", true),
            cu = col("subject_id", true), cc = col("scene_id", false);
  const fs::path base = index_csv.parent_path();
  data::Dataset ds;
  ds.info.name = name;
  ds.info.num_classes = num_classes;
  ds.info.coord_channels = coords;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    auto cell = [&](int c) { return c >= 0 && static_cast<std::size_t>(c) < row.size() ? row[static_cast<std::size_t>(c)] : std::string(); };
    data::MultimodalSample s;
    s.inertial.values = numeric_csv(base / cell(ci));
    const Tensor<float> flat = numeric_csv(base / cell(cs));
    if (flat.dim(1) % coords != 0)
      throw ValidationError(cell(cs) + ": column count is not a multiple of " + std::to_string(coords));
    s.skeleton.values = flat.reshaped({flat.dim(0), flat.dim(1) / coords, coords});
    if (!cell(cl).empty()) s.label = std::stoi(cell(cl));
    s.subject_id = std::stoi(cell(cu));
    if (!cell(cc).empty()) s.scene_id = cell(cc);
    s.inertial.validate();
    s.skeleton.validate();
    if (ds.samples.empty()) {
      ds.info.sensor_channels = s.inertial.channels();
      ds.info.num_joints = s.skeleton.joints();
    } else if (s.inertial.channels() != ds.info.sensor_channels || s.skeleton.joints() != ds.info.num_joints) {
      throw ValidationError("row " + std::to_string(r) + ": channel or joint count differs from the first sample");
    }
    if (s.label && (*s.label < 0 || *s.label >= num_classes))
      throw ValidationError("row " + std::to_string(r) + ": label out of range");
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace cmkm::convert
