#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pacbayes/losses.hpp"
#include "pacbayes/numeric.hpp"

namespace pacbayes {

using IndexList = std::vector<Index>;

struct Dataset {
  Matrix x;  // n x d
  Labels y;  // n, each in [0, num_classes)
  int num_classes = 0;
  std::string name;
  std::vector<std::string> class_names;
  // Rows of a published test split, when the source ships one (MNIST).
  IndexList predefined_test;

  Index size() const { return x.rows(); }
  Index features() const { return x.cols(); }

  // Throws DataError if labels are out of range, a class is missing, or a
  // feature is not finite.
  void validate() const;
};

Dataset subset(const Dataset& ds, std::span<const Index> rows);

struct TabularSchema {
  // Label column chosen by header name when non-empty, otherwise by index;
  // a negative index counts from the end (-1 is the last column).
  std::string label_name;
  long label_index = -1;
  char delimiter = ',';
};

Dataset load_tabular(const std::string& path, const TabularSchema& schema = {});

// IDX files: big-endian, magic 0x00000803 for images (n, rows, cols) and
// 0x00000801 for labels (n). Pixels are kept as raw values in [0, 255].
Dataset load_idx_images(const std::string& images_path, const std::string& labels_path);
void write_idx_images(const std::string& path, std::span<const std::uint8_t> pixels, std::uint32_t count,
                      std::uint32_t rows, std::uint32_t cols);
void write_idx_labels(const std::string& path, std::span<const std::uint8_t> labels);

// Standard MNIST directory (train-/t10k- image and label files). The
// result stacks train over test and records the test rows.
Dataset load_mnist(const std::string& dir);

struct Standardizer {
  Vector mean;
  Vector std;  // zero-variance features get 1
};

Standardizer fit_standardizer(const Matrix& x);
Matrix apply_standardizer(const Standardizer& s, const Matrix& x);

// Per-class proportional split of `pool`; part_a receives round(fraction*|pool|)
// rows. Rounding leftovers go to the largest fractional parts, ties to the
// smaller class. Both parts come back sorted.
std::pair<IndexList, IndexList> stratified_split(const Dataset& ds, std::span<const Index> pool, double fraction,
                                                 SeededRng& rng);
std::pair<IndexList, IndexList> stratified_split(const Dataset& ds, double fraction, SeededRng& rng);

struct PartitionPlan {
  double test_fraction = 0.2;
  double prior_fraction = 0.5;       // one of {0, 0.1, 0.25, 0.5, 0.75, 0.9} in the protocol
  double prior_val_fraction = 0.05;  // of the prior set
  bool prior_validation = true;
  double subsample_fraction = 1.0;   // < 1 starves S before partitioning
  bool standard_split = false;       // use ds.predefined_test instead of test_fraction

  void validate() const;
};

struct Partition {
  IndexList test;
  IndexList prior_train;
  IndexList prior_val;
  IndexList cert;
  IndexList unused;  // dropped by subsampling

  // Everything the learner may train on: prior_train, prior_val and cert.
  IndexList learner() const;
  IndexList prior() const;
};

Partition make_partition(const Dataset& ds, const PartitionPlan& plan, SeededRng& rng);

// Throws PartitionError unless the sets are pairwise disjoint and, with
// `test`, cover {0..n-1} exactly once.
void check_partition(const Partition& p, Index n);

}  // namespace pacbayes
