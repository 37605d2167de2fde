#include <gtest/gtest.h>

#include <cstdint>
#include <cstring>
#include <fstream>

#include <zlib.h>

#include "cmkm/convert.hpp"
#include "test_util.hpp"

using namespace cmkm;
using namespace cmkm::convert;
namespace fs = std::filesystem;

namespace {

// Minimal Level 5 MAT-file writer.
class MatWriter {
 public:
  void add(const std::string& name, const std::vector<std::uint32_t>& dims, const std::vector<double>& values,
           bool as_uint8 = false) {
    std::string m;
    tag(m, 6, 8);  // array flags, class 6 = double
    u32(m, 6);
    u32(m, 0);
    tag(m, 5, static_cast<std::uint32_t>(4 * dims.size()));
    for (auto d : dims) u32(m, d);
    pad(m);
    if (name.size() <= 4) {  // small data element
      u32(m, static_cast<std::uint32_t>(name.size()) << 16 | 1);
      std::string n = name;
      n.resize(4, '\0');
      m += n;
    } else {
      tag(m, 1, static_cast<std::uint32_t>(name.size()));
      m += name;
      pad(m);
    }
    if (as_uint8) {
      tag(m, 2, static_cast<std::uint32_t>(values.size()));
      for (double v : values) m.push_back(static_cast<char>(static_cast<std::uint8_t>(v)));
    } else {
      tag(m, 9, static_cast<std::uint32_t>(8 * values.size()));
      for (double v : values) m.append(reinterpret_cast<const char*>(&v), 8);
    }
    pad(m);
    std::string element;
    tag(element, 14, static_cast<std::uint32_t>(m.size()));
    element += m;
    elements_.push_back(element);
  }

  void write(const fs::path& path, bool compressed) const {
    std::string out(116, ' ');
    out.replace(0, 24, "MATLAB 5.0 MAT-file test");
    out.append(8, '\0');
    out.push_back(0x00);
    out.push_back(0x01);
    out += "IM";
    for (const auto& e : elements_) {
      if (!compressed) {
        out += e;
        continue;
      }
      uLongf size = compressBound(static_cast<uLong>(e.size()));
      std::string z(size, '\0');
      ASSERT_EQ(compress(reinterpret_cast<Bytef*>(z.data()), &size, reinterpret_cast<const Bytef*>(e.data()),
                         static_cast<uLong>(e.size())),
                Z_OK);
      z.resize(size);
      tag(out, 15, static_cast<std::uint32_t>(z.size()));
      out += z;
    }
    std::ofstream(path, std::ios::binary) << out;
  }

 private:
  static void u32(std::string& s, std::uint32_t v) { s.append(reinterpret_cast<const char*>(&v), 4); }
  static void tag(std::string& s, std::uint32_t type, std::uint32_t bytes) {
    u32(s, type);
    u32(s, bytes);
  }
  static void pad(std::string& s) { s.resize((s.size() + 7) / 8 * 8, '\0'); }

  std::vector<std::string> elements_;
};

std::vector<double> iota_values(std::size_t n, double start = 0) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = start + static_cast<double>(i);
  return v;
}

void write_utd_pair(const fs::path& dir, int a, int s, int t, std::uint32_t ti, std::uint32_t ts, bool compressed) {
  const std::string stem = "a" + std::to_string(a) + "_s" + std::to_string(s) + "_t" + std::to_string(t);
  MatWriter i;
  i.add("d_iner", {ti, 6}, iota_values(ti * 6));
  i.write(dir / (stem + "_inertial.mat"), compressed);
  MatWriter k;
  k.add("d_skel", {20, 3, ts}, iota_values(20 * 3 * ts, 1000));
  k.write(dir / (stem + "_skeleton.mat"), compressed);
}

void write_text(const fs::path& path, const std::string& text) { std::ofstream(path) << text; }

}  // namespace

TEST(MatFile, RawAndCompressedReadTheSame) {
  cmkm::testing::TempDir dir("mat");
  MatWriter w;
  w.add("values", {2, 3}, {1.5, -2, 3, 4, 5, 6.25});
  w.add("x", {1, 3}, {7, 8, 9}, true);
  w.write(dir.path() / "raw.mat", false);
  w.write(dir.path() / "z.mat", true);
  for (const char* f : {"raw.mat", "z.mat"}) {
    const auto arrays = read_mat_file(dir.path() / f);
    ASSERT_EQ(arrays.size(), 2u) << f;
    EXPECT_EQ(arrays.at("values").dims, (std::vector<std::size_t>{2, 3}));
    EXPECT_EQ(arrays.at("values").values, (std::vector<double>{1.5, -2, 3, 4, 5, 6.25}));
    EXPECT_EQ(arrays.at("x").values, (std::vector<double>{7, 8, 9}));
  }
}

TEST(MatFile, RejectsNonMatInput) {
  cmkm::testing::TempDir dir("mat_bad");
  write_text(dir.path() / "bad.mat", "hello");
  EXPECT_THROW(read_mat_file(dir.path() / "bad.mat"), LoadError);
  EXPECT_THROW(read_mat_file(dir.path() / "missing.mat"), LoadError);
}

TEST(Utd, ConvertsPairsWithLayoutAndLabels) {
  cmkm::testing::TempDir dir("utd");
  write_utd_pair(dir.path(), 2, 3, 1, 4, 5, true);
  write_utd_pair(dir.path(), 1, 1, 2, 3, 2, false);
  const auto ds = convert_utd_mhad(dir.path());
  EXPECT_EQ(ds.info.num_classes, 27);
  ASSERT_EQ(ds.samples.size(), 2u);
  // Sorted by (action, subject, trial).
  const auto& first = ds.samples[0];
  EXPECT_EQ(first.label, 0);
  EXPECT_EQ(first.subject_id, 1);
  EXPECT_EQ(first.inertial.values.shape(), (Shape{3, 6}));
  EXPECT_EQ(first.skeleton.values.shape(), (Shape{2, 20, 3}));
  const auto& second = ds.samples[1];
  EXPECT_EQ(second.label, 1);
  EXPECT_EQ(second.subject_id, 3);
  // Column-major sources: d_iner(t, c) sits at t + T*c, d_skel(j, c, t) at j + 20*(c + 3*t).
  EXPECT_EQ(second.inertial.values(2, 4), static_cast<float>(2 + 4 * 4));
  EXPECT_EQ(second.skeleton.values(3, 7, 2), static_cast<float>(1000 + 7 + 20 * (2 + 3 * 3)));
}

TEST(Utd, MissingSkeletonAndBadShapes) {
  cmkm::testing::TempDir dir("utd_bad");
  MatWriter i;
  i.add("d_iner", {4, 6}, iota_values(24));
  i.write(dir.path() / "a1_s1_t1_inertial.mat", false);
  EXPECT_THROW(convert_utd_mhad(dir.path()), LoadError);
  MatWriter k;
  k.add("d_skel", {19, 3, 2}, iota_values(19 * 6));
  k.write(dir.path() / "a1_s1_t1_skeleton.mat", false);
  EXPECT_THROW(convert_utd_mhad(dir.path()), ValidationError);
  EXPECT_THROW(convert_utd_mhad(dir.path() / "nowhere"), LoadError);
}

TEST(Csv, ConvertsAndRoundTripsThroughManifest) {
  cmkm::testing::TempDir dir("csv");
  write_text(dir.path() / "i0.csv", "1,2\n3,4\n5,6\n");
  write_text(dir.path() / "s0.csv", "0,0,1,1\n0,1,1,2\n0,2,1,3\n");
  write_text(dir.path() / "i1.csv", "7,8\n9,10\n");
  write_text(dir.path() / "s1.csv", "1,1,2,2\n1,1,2,2\n");
  write_text(dir.path() / "index.csv",
             "inertial,skeleton,label,subject_id,scene_id\n"
             "i0.csv,s0.csv,1,4,occlusion\n"
             "i1.csv,s1.csv,,5,\n");
  auto ds = convert_csv(dir.path() / "index.csv", 2, 3, "toy");
  ASSERT_EQ(ds.samples.size(), 2u);
  EXPECT_EQ(ds.info.sensor_channels, 2);
  EXPECT_EQ(ds.info.num_joints, 2);
  const auto& a = ds.samples[0];
  EXPECT_EQ(a.inertial.values.shape(), (Shape{3, 2}));
  EXPECT_EQ(a.skeleton.values.shape(), (Shape{3, 2, 2}));
  EXPECT_EQ(a.skeleton.values(2, 1, 1), 3.0f);
  EXPECT_EQ(a.label, 1);
  EXPECT_EQ(a.scene_id, "occlusion");
  EXPECT_FALSE(ds.samples[1].label.has_value());
  EXPECT_FALSE(ds.samples[1].scene_id.has_value());

  data::save_dataset(ds, dir.path() / "out" / "manifest.json");
  auto back = data::load_dataset(dir.path() / "out" / "manifest.json");
  ASSERT_EQ(back.samples.size(), 2u);
  EXPECT_EQ(back.samples[0].skeleton.values, a.skeleton.values);
  EXPECT_EQ(back.samples[1].subject_id, 5);
}

TEST(Csv, RejectsBadCells) {
  cmkm::testing::TempDir dir("csv_bad");
  write_text(dir.path() / "i0.csv", "1,x\n");
  write_text(dir.path() / "s0.csv", "0,0,1\n");
  write_text(dir.path() / "index.csv", "inertial,skeleton,label,subject_id\ni0.csv,s0.csv,0,1\n");
  EXPECT_THROW(convert_csv(dir.path() / "index.csv", 2, 2, "bad"), ValidationError);
  EXPECT_THROW(convert_csv(dir.path() / "index.csv", 4, 2, "bad"), std::invalid_argument);
}
