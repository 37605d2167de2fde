#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cmkm/data.hpp"

// Converters from raw dataset layouts into the canonical manifest + CMKT form.
namespace cmkm::convert {

/// A numeric MATLAB array, converted to double, in MATLAB's column-major order.
struct MatArray {
  std::vector<std::size_t> dims;
  std::vector<double> values;
};

/// Reads every real numeric array of a Level 5 MAT-file (compressed or not).
std::map<std::string, MatArray> read_mat_file(const std::filesystem::path& path);

/// UTD-MHAD: a<action>_s<subject>_t<trial>_{inertial,skeleton}.mat pairs with
/// d_iner (T x 6) and d_skel (20 x 3 x T). Labels are action - 1.
data::Dataset convert_utd_mhad(const std::filesystem::path& source_dir);

/// Generic CSV layout. `index.csv` has a header and the columns
///   inertial,skeleton,label,subject_id[,scene_id]
/// where inertial/skeleton name CSV files (relative to the index) holding one
/// frame per row: S sensor columns, or J*C skeleton columns ordered
/// joint-major (x1,y1[,z1],x2,...). Empty label/scene cells mean "absent".
data::Dataset convert_csv(const std::filesystem::path& index_csv, Index coords, int num_classes,
                          const std::string& name);

}  // namespace cmkm::convert
