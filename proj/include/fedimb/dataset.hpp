#pragma once

#include "fedimb/error.hpp"
#include "fedimb/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

namespace fedimb {

// Row-major dense matrix of doubles.
class Matrix {
public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  void append_row(std::span<const double> r) {
    if (rows_ == 0 && cols_ == 0) cols_ = r.size();
    if (r.size() != cols_) throw ShapeMismatch("Matrix::append_row: width mismatch");
    data_.insert(data_.end(), r.begin(), r.end());
    ++rows_;
  }

  void reserve_rows(std::size_t n) { data_.reserve(n * cols_); }

  friend bool operator==(const Matrix&, const Matrix&) = default;

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct LabeledDataset {
  Matrix features;         // n x d, every entry in [0, 1]
  std::vector<int> labels; // n, each in [0, num_classes)
  int num_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return features.cols(); }
};

// Throws InvalidParameter if any LabeledDataset invariant is broken.
inline void validate(const LabeledDataset& ds) {
  if (ds.features.rows() != ds.labels.size())
    throw InvalidParameter("dataset: feature rows (" + std::to_string(ds.features.rows()) +
                           ") != label count (" + std::to_string(ds.labels.size()) + ")");
  if (ds.num_classes < 1) throw InvalidParameter("dataset: num_classes must be >= 1");
  for (std::size_t i = 0; i < ds.labels.size(); ++i)
    if (ds.labels[i] < 0 || ds.labels[i] >= ds.num_classes)
      throw InvalidParameter("dataset: label out of range at sample " + std::to_string(i));
  for (double v : ds.features.values())
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidParameter("dataset: feature outside [0, 1]");
}

using ClassCounts = std::vector<std::size_t>;

// ---------------------------------------------------------------------------
// CIFAR-10 binary batch format.
//
// Each file is a headerless sequence of 3073-byte records:
//   byte 0       label (0-9)
//   bytes 1-3072 pixels, channel-major: R[32x32] G[32x32] B[32x32]
// Pixels are scaled by 1/255; record order is preserved.
// ---------------------------------------------------------------------------
namespace cifar10 {
inline constexpr std::size_t kImageBytes = 3 * 32 * 32;
inline constexpr std::size_t kRecordBytes = 1 + kImageBytes;
inline constexpr int kNumClasses = 10;
} // namespace cifar10

// Appends the records in `bytes` to `out`. `first_record` is the global index
// of the first record, used in error messages when several files are chained.
inline void append_cifar10_records(std::span<const std::uint8_t> bytes, LabeledDataset& out,
                                   std::size_t first_record = 0,
                                   const std::string& source = "<buffer>") {
  using namespace cifar10;
  if (bytes.size() % kRecordBytes != 0)
    throw MalformedFile("cifar10: " + source + " has " + std::to_string(bytes.size()) +
                        " bytes, not a multiple of " + std::to_string(kRecordBytes));
  const std::size_t n = bytes.size() / kRecordBytes;
  if (out.features.rows() == 0) out.features = Matrix(0, kImageBytes);
  out.num_classes = kNumClasses;
  out.features.reserve_rows(out.features.rows() + n);
  std::vector<double> pixels(kImageBytes);
  for (std::size_t r = 0; r < n; ++r) {
    const auto rec = bytes.subspan(r * kRecordBytes, kRecordBytes);
    if (rec[0] >= kNumClasses)
      throw CorruptRecord("cifar10: record " + std::to_string(first_record + r) + " in " +
                              source + " has label byte " + std::to_string(rec[0]),
                          first_record + r);
    for (std::size_t j = 0; j < kImageBytes; ++j) pixels[j] = rec[1 + j] / 255.0;
    out.features.append_row(pixels);
    out.labels.push_back(rec[0]);
  }
}

inline LabeledDataset parse_cifar10(std::span<const std::uint8_t> bytes) {
  LabeledDataset ds;
  ds.features = Matrix(0, cifar10::kImageBytes);
  ds.num_classes = cifar10::kNumClasses;
  append_cifar10_records(bytes, ds);
  return ds;
}

inline LabeledDataset load_cifar10_binary(std::span<const std::filesystem::path> paths) {
  LabeledDataset ds;
  ds.features = Matrix(0, cifar10::kImageBytes);
  ds.num_classes = cifar10::kNumClasses;
  for (const auto& path : paths) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MalformedFile("cifar10: cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    append_cifar10_records(bytes, ds, ds.size(), path.string());
  }
  return ds;
}

// Center of class c for synthetic blobs: a one-hot-plus-offset pattern
// (0.8 on coordinates j with j % B == c, 0.2 elsewhere). When d < B some
// classes have no one-hot coordinate, so the last coordinate carries a
// class-graded level instead, keeping all centers distinct.
inline std::vector<double> blob_center(int cls, int num_classes, std::size_t dim) {
  std::vector<double> center(dim);
  for (std::size_t j = 0; j < dim; ++j)
    center[j] = (static_cast<int>(j % num_classes) == cls) ? 0.8 : 0.2;
  if (dim < static_cast<std::size_t>(num_classes))
    center[dim - 1] = 0.1 + 0.8 * static_cast<double>(cls) / (num_classes - 1);
  return center;
}

// Class-balanced Gaussian blobs around blob_center(), clamped to [0, 1].
// Samples are ordered by class, then by draw.
inline LabeledDataset make_synthetic_blobs(std::size_t n_per_class, int num_classes,
                                           std::size_t dim, double spread,
                                           std::uint64_t seed) {
  if (!(spread >= 0.0) || !std::isfinite(spread))
    throw InvalidParameter("make_synthetic_blobs: spread must be >= 0");
  if (n_per_class < 1) throw InvalidParameter("make_synthetic_blobs: n_per_class must be >= 1");
  if (num_classes < 2) throw InvalidParameter("make_synthetic_blobs: num_classes must be >= 2");
  if (dim < 2) throw InvalidParameter("make_synthetic_blobs: dim must be >= 2");

  LabeledDataset ds;
  ds.num_classes = num_classes;
  ds.features = Matrix(n_per_class * num_classes, dim);
  ds.labels.reserve(n_per_class * num_classes);
  Rng rng = make_rng(seed, {0xB10B});
  std::normal_distribution<double> noise(0.0, 1.0);
  std::size_t row = 0;
  for (int c = 0; c < num_classes; ++c) {
    const auto center = blob_center(c, num_classes, dim);
    for (std::size_t i = 0; i < n_per_class; ++i, ++row) {
      for (std::size_t j = 0; j < dim; ++j) {
        double v = center[j];
        if (spread > 0.0) v += spread * noise(rng);
        ds.features(row, j) = std::clamp(v, 0.0, 1.0);
      }
      ds.labels.push_back(c);
    }
  }
  return ds;
}

inline ClassCounts class_counts(const LabeledDataset& ds, std::span<const std::size_t> indices) {
  ClassCounts counts(static_cast<std::size_t>(ds.num_classes), 0);
  for (auto idx : indices) {
    if (idx >= ds.size())
      throw IndexError("class_counts: index " + std::to_string(idx) + " out of range [0, " +
                           std::to_string(ds.size()) + ")",
                       static_cast<long long>(idx));
    ++counts[static_cast<std::size_t>(ds.labels[idx])];
  }
  return counts;
}

inline ClassCounts class_counts(const LabeledDataset& ds) {
  ClassCounts counts(static_cast<std::size_t>(ds.num_classes), 0);
  for (int l : ds.labels) ++counts[static_cast<std::size_t>(l)];
  return counts;
}

} // namespace fedimb
