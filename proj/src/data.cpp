#include "pacbayes/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

namespace pacbayes {

void Dataset::validate() const {
  if (static_cast<std::size_t>(x.rows()) != y.size()) throw DataError(name + ": feature rows and labels differ");
  if (num_classes < 1) throw DataError(name + ": no classes");
  std::vector<Index> counts(num_classes, 0);
  for (int label : y) {
    if (label < 0 || label >= num_classes) throw DataError(name + ": label out of range");
    ++counts[label];
  }
  for (int c = 0; c < num_classes; ++c) {
    if (counts[c] == 0) throw DataError(name + ": class " + std::to_string(c) + " has no examples");
  }
  if (!x.allFinite()) throw DataError(name + ": non-finite feature value");
}

Dataset subset(const Dataset& ds, std::span<const Index> rows) {
  Dataset out;
  out.name = ds.name;
  out.num_classes = ds.num_classes;
  out.class_names = ds.class_names;
  out.x.resize(static_cast<Index>(rows.size()), ds.features());
  out.y.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.x.row(static_cast<Index>(i)) = ds.x.row(rows[i]);
    out.y[i] = ds.y[rows[i]];
  }
  return out;
}

namespace {

std::string trim(std::string s) {
  auto issp = [](unsigned char c) { return std::isspace(c) != 0; };
  s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), issp));
  s.erase(std::find_if_not(s.rbegin(), s.rend(), issp).base(), s.end());
  if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') || (s.front() == '\'' && s.back() == '\''))) {
    s = s.substr(1, s.size() - 2);
  }
  return s;
}

std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, delim)) out.push_back(trim(cell));
  if (!line.empty() && line.back() == delim) out.emplace_back();
  return out;
}

}  // namespace

Dataset load_tabular(const std::string& path, const TabularSchema& schema) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw SchemaError(path + ": missing header row");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_line(line, schema.delimiter);
  const long ncols = static_cast<long>(header.size());

  long label_col = -1;
  if (!schema.label_name.empty()) {
    const auto it = std::find(header.begin(), header.end(), schema.label_name);
    if (it == header.end()) throw SchemaError(path + ": no column named '" + schema.label_name + "'");
    label_col = static_cast<long>(it - header.begin());
  } else {
    label_col = schema.label_index < 0 ? ncols + schema.label_index : schema.label_index;
    if (label_col < 0 || label_col >= ncols) throw SchemaError(path + ": label column index out of range");
  }
  if (ncols < 2) throw SchemaError(path + ": need at least one feature and a label");

  Dataset ds;
  ds.name = path.substr(path.find_last_of('/') + 1);
  std::unordered_map<std::string, int> label_ids;
  std::vector<double> values;
  long row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    ++row;
    const auto cells = split_line(line, schema.delimiter);
    if (static_cast<long>(cells.size()) != ncols) {
      throw LoadError(path + ": row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                          " fields, header has " + std::to_string(ncols),
                      row, static_cast<long>(cells.size()));
    }
    for (long c = 0; c < ncols; ++c) {
      const std::string& cell = cells[c];
      if (c == label_col) {
        if (cell.empty()) throw LoadError(path + ": empty label at row " + std::to_string(row), row, c);
        auto [it, inserted] = label_ids.emplace(cell, static_cast<int>(label_ids.size()));
        if (inserted) ds.class_names.push_back(cell);
        ds.y.push_back(it->second);
        continue;
      }
      double v = 0.0;
      const char* first = cell.data();
      const char* last = cell.data() + cell.size();
      if (!cell.empty() && *first == '+') ++first;
      const auto [ptr, ec] = std::from_chars(first, last, v);
      if (cell.empty() || ec != std::errc() || ptr != last || !std::isfinite(v)) {
        throw LoadError(path + ": cannot parse '" + cell + "' at row " + std::to_string(row) + ", column " +
                            std::to_string(c) + " (" + header[c] + ")",
                        row, c);
      }
      values.push_back(v);
    }
  }
  if (row == 0) throw DataError(path + ": no data rows");
  const Index d = ncols - 1;
  ds.x = Eigen::Map<const Matrix>(values.data(), row, d);
  ds.num_classes = static_cast<int>(label_ids.size());
  ds.validate();
  return ds;
}

namespace {

std::uint32_t read_be32(std::ifstream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw FormatError(path + ": truncated header");
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) | b[3];
}

void write_be32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

}  // namespace

Dataset load_idx_images(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw IoError("cannot open " + images_path);
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw IoError("cannot open " + labels_path);

  if (read_be32(img, images_path) != kImagesMagic) throw FormatError(images_path + ": bad magic number");
  const std::uint32_t n = read_be32(img, images_path);
  const std::uint32_t rows = read_be32(img, images_path);
  const std::uint32_t cols = read_be32(img, images_path);
  if (read_be32(lab, labels_path) != kLabelsMagic) throw FormatError(labels_path + ": bad magic number");
  const std::uint32_t n_labels = read_be32(lab, labels_path);
  if (n != n_labels) throw FormatError("image count " + std::to_string(n) + " != label count " + std::to_string(n_labels));

  const std::size_t d = static_cast<std::size_t>(rows) * cols;
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(n) * d);
  img.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!img) throw FormatError(images_path + ": truncated pixel data");
  std::vector<std::uint8_t> labels(n);
  lab.read(reinterpret_cast<char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
  if (!lab) throw FormatError(labels_path + ": truncated label data");

  Dataset ds;
  ds.name = images_path.substr(images_path.find_last_of('/') + 1);
  ds.x.resize(n, static_cast<Index>(d));
  for (std::size_t i = 0; i < pixels.size(); ++i) ds.x.data()[i] = pixels[i];
  int max_label = 0;
  ds.y.reserve(n);
  for (auto l : labels) {
    ds.y.push_back(l);
    max_label = std::max(max_label, static_cast<int>(l));
  }
  ds.num_classes = max_label + 1;
  for (int c = 0; c < ds.num_classes; ++c) ds.class_names.push_back(std::to_string(c));
  return ds;
}

void write_idx_images(const std::string& path, std::span<const std::uint8_t> pixels, std::uint32_t count,
                      std::uint32_t rows, std::uint32_t cols) {
  if (pixels.size() != static_cast<std::size_t>(count) * rows * cols) {
    throw DimensionError("write_idx_images: pixel buffer size mismatch");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_be32(out, kImagesMagic);
  write_be32(out, count);
  write_be32(out, rows);
  write_be32(out, cols);
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!out) throw IoError("write failed for " + path);
}

void write_idx_labels(const std::string& path, std::span<const std::uint8_t> labels) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_be32(out, kLabelsMagic);
  write_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
  if (!out) throw IoError("write failed for " + path);
}

Dataset load_mnist(const std::string& dir) {
  Dataset train = load_idx_images(dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte");
  Dataset test = load_idx_images(dir + "/t10k-images-idx3-ubyte", dir + "/t10k-labels-idx1-ubyte");
  if (train.features() != test.features()) throw FormatError("MNIST train/test image sizes differ");
  Dataset ds;
  ds.name = "mnist";
  ds.num_classes = std::max(train.num_classes, test.num_classes);
  for (int c = 0; c < ds.num_classes; ++c) ds.class_names.push_back(std::to_string(c));
  ds.x.resize(train.size() + test.size(), train.features());
  ds.x.topRows(train.size()) = train.x;
  ds.x.bottomRows(test.size()) = test.x;
  ds.y = train.y;
  ds.y.insert(ds.y.end(), test.y.begin(), test.y.end());
  for (Index i = 0; i < test.size(); ++i) ds.predefined_test.push_back(train.size() + i);
  ds.validate();
  return ds;
}

Standardizer fit_standardizer(const Matrix& x) {
  if (x.rows() == 0) throw DataError("fit_standardizer: no rows");
  Standardizer s;
  s.mean = x.colwise().mean().transpose();
  s.std.resize(x.cols());
  for (Index c = 0; c < x.cols(); ++c) {
    const double var = (x.col(c).array() - s.mean[c]).square().mean();
    const double sd = std::sqrt(var);
    s.std[c] = (sd > 1e-12 * std::max(1.0, std::abs(s.mean[c]))) ? sd : 1.0;
  }
  return s;
}

Matrix apply_standardizer(const Standardizer& s, const Matrix& x) {
  if (x.cols() != s.mean.size()) throw DimensionError("apply_standardizer: feature count mismatch");
  Matrix out = x;
  out.rowwise() -= s.mean.transpose();
  out.array().rowwise() /= s.std.transpose().array();
  return out;
}

std::pair<IndexList, IndexList> stratified_split(const Dataset& ds, std::span<const Index> pool, double fraction,
                                                 SeededRng& rng) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ParameterError("stratified_split: fraction must lie in (0, 1)");
  std::map<int, IndexList> by_class;
  for (Index i : pool) by_class[ds.y.at(static_cast<std::size_t>(i))].push_back(i);
  for (const auto& [label, members] : by_class) {
    if (members.size() < 2) {
      throw DataError("stratified_split: class " + std::to_string(label) + " has a single example");
    }
  }

  const auto target = static_cast<Index>(std::llround(fraction * static_cast<double>(pool.size())));
  struct Quota {
    int label;
    Index take;
    double frac;
    Index available;
  };
  std::vector<Quota> quotas;
  Index assigned = 0;
  for (const auto& [label, members] : by_class) {
    const double exact = fraction * static_cast<double>(members.size());
    const auto base = static_cast<Index>(std::floor(exact));
    quotas.push_back({label, base, exact - static_cast<double>(base), static_cast<Index>(members.size())});
    assigned += base;
  }
  std::vector<std::size_t> order(quotas.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return quotas[a].frac > quotas[b].frac; });
  for (std::size_t k = 0; assigned < target && k < order.size(); ++k) {
    auto& q = quotas[order[k]];
    if (q.take < q.available) {
      ++q.take;
      ++assigned;
    }
  }

  IndexList a, b;
  for (const auto& q : quotas) {
    IndexList members = by_class[q.label];
    std::shuffle(members.begin(), members.end(), rng.engine());
    a.insert(a.end(), members.begin(), members.begin() + q.take);
    b.insert(b.end(), members.begin() + q.take, members.end());
  }
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return {std::move(a), std::move(b)};
}

std::pair<IndexList, IndexList> stratified_split(const Dataset& ds, double fraction, SeededRng& rng) {
  IndexList all(static_cast<std::size_t>(ds.size()));
  for (Index i = 0; i < ds.size(); ++i) all[static_cast<std::size_t>(i)] = i;
  return stratified_split(ds, all, fraction, rng);
}

void PartitionPlan::validate() const {
  auto in_unit = [](double f) { return f >= 0.0 && f < 1.0; };
  if (!standard_split && !(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ConfigError("PartitionPlan: test_fraction must lie in (0, 1)");
  }
  if (!in_unit(prior_fraction)) throw ConfigError("PartitionPlan: prior_fraction must lie in [0, 1)");
  if (!in_unit(prior_val_fraction)) throw ConfigError("PartitionPlan: prior_val_fraction must lie in [0, 1)");
  if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0)) {
    throw ConfigError("PartitionPlan: subsample_fraction must lie in (0, 1]");
  }
}

IndexList Partition::prior() const {
  IndexList out = prior_train;
  out.insert(out.end(), prior_val.begin(), prior_val.end());
  std::sort(out.begin(), out.end());
  return out;
}

IndexList Partition::learner() const {
  IndexList out = prior();
  out.insert(out.end(), cert.begin(), cert.end());
  std::sort(out.begin(), out.end());
  return out;
}

Partition make_partition(const Dataset& ds, const PartitionPlan& plan, SeededRng& rng) {
  plan.validate();
  Partition p;
  SeededRng test_rng = rng.child("partition/test");
  SeededRng sub_rng = rng.child("partition/subsample");
  SeededRng prior_rng = rng.child("partition/prior");
  SeededRng val_rng = rng.child("partition/prior-val");

  IndexList s;
  if (plan.standard_split) {
    if (ds.predefined_test.empty()) throw ConfigError("standard split requested but dataset has none");
    p.test = ds.predefined_test;
    std::sort(p.test.begin(), p.test.end());
    std::vector<char> is_test(static_cast<std::size_t>(ds.size()), 0);
    for (Index i : p.test) is_test[static_cast<std::size_t>(i)] = 1;
    for (Index i = 0; i < ds.size(); ++i) {
      if (!is_test[static_cast<std::size_t>(i)]) s.push_back(i);
    }
  } else {
    auto [test, rest] = stratified_split(ds, plan.test_fraction, test_rng);
    p.test = std::move(test);
    s = std::move(rest);
  }

  if (plan.subsample_fraction < 1.0) {
    auto [kept, dropped] = stratified_split(ds, s, plan.subsample_fraction, sub_rng);
    s = std::move(kept);
    p.unused = std::move(dropped);
  }

  if (plan.prior_fraction > 0.0) {
    auto [prior, cert] = stratified_split(ds, s, plan.prior_fraction, prior_rng);
    p.cert = std::move(cert);
    if (plan.prior_validation && plan.prior_val_fraction > 0.0) {
      auto [val, train] = stratified_split(ds, prior, plan.prior_val_fraction, val_rng);
      p.prior_val = std::move(val);
      p.prior_train = std::move(train);
    } else {
      p.prior_train = std::move(prior);
    }
  } else {
    p.cert = std::move(s);
  }
  check_partition(p, ds.size());
  return p;
}

void check_partition(const Partition& p, Index n) {
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  auto mark = [&](const IndexList& set, const char* name) {
    for (Index i : set) {
      if (i < 0 || i >= n) throw PartitionError(std::string("partition: index out of range in ") + name);
      if (seen[static_cast<std::size_t>(i)]) {
        throw PartitionError(std::string("partition: index ") + std::to_string(i) + " appears twice (" + name + ")");
      }
      seen[static_cast<std::size_t>(i)] = 1;
    }
  };
  mark(p.test, "test");
  mark(p.prior_train, "prior_train");
  mark(p.prior_val, "prior_val");
  mark(p.cert, "cert");
  mark(p.unused, "unused");
  for (Index i = 0; i < n; ++i) {
    if (!seen[static_cast<std::size_t>(i)]) throw PartitionError("partition: index " + std::to_string(i) + " unassigned");
  }
}

}  // namespace pacbayes
