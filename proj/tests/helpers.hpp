#pragma once

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "hiercl/error.hpp"
#include "hiercl/matrix.hpp"
#include "hiercl/rng.hpp"
#include "hiercl/taxonomy.hpp"

namespace test {

// Self-cleaning scratch directory for file-based tests.
struct TempDir {
  std::filesystem::path dir;
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "hiercl-test-XXXXXX").string();
    const char* made = ::mkdtemp(tmpl.data());
    REQUIRE(made != nullptr);
    dir = made;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(dir, ec);
  }
  std::string path(const std::string& name) const { return (dir / name).string(); }
};

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  REQUIRE(out.good());
  out << content;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Asserts that fn throws hiercl::Error with the exact error code.
template <class Fn>
void expect_error(const std::string& code, Fn&& fn) {
  try {
    fn();
    FAIL("expected error[" << code << "], but no error was thrown");
  } catch (const hiercl::Error& e) {
    INFO(e.what());
    REQUIRE(e.code() == code);
  }
}

inline hiercl::DenseMatrix random_matrix(std::size_t rows, std::size_t cols,
                                         hiercl::Rng& rng, double scale = 1.0) {
  hiercl::DenseMatrix m(rows, cols);
  for (double& v : m.values()) v = rng.normal(0.0, scale);
  return m;
}

inline double max_abs_diff(const hiercl::DenseMatrix& a, const hiercl::DenseMatrix& b) {
  REQUIRE(a.rows() == b.rows());
  REQUIRE(a.cols() == b.cols());
  double m = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i)
    m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

// Random 3-level labels: a handful of mains, two subclasses each, patents
// spread over them so batches mix all four relevance cases.
inline std::vector<hiercl::HierLabel> random_labels(std::size_t k, hiercl::Rng& rng) {
  std::vector<hiercl::HierLabel> labels(k);
  for (std::size_t i = 0; i < k; ++i) {
    const int main_code = 10 + static_cast<int>(rng.below(3));
    const int subclass = main_code * 100 + 1 + static_cast<int>(rng.below(2));
    labels[i].main_class = main_code;
    labels[i].subclass = subclass;
    labels[i].patent_id = "P" + std::to_string(subclass) + "-" + std::to_string(rng.below(4));
  }
  return labels;
}

}  // namespace test
