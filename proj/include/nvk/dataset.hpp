// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "nvk/rng.hpp"
#include "nvk/tensor.hpp"

namespace nvk {

struct Record {
  std::string path;                    // as written in the manifest
  std::map<std::string, int> labels;   // task -> class; absent tasks are unknown
};

/// Images with per-task labels. A task's alphabet is either declared up front
/// or grown from the labels seen.
class LabeledDataset {
 public:
  /// Reads a `path,task,label` CSV (header required). Rows sharing a path
  /// merge into one record; relative paths resolve against the CSV's folder.
  static LabeledDataset load_csv(const std::filesystem::path& csv);
  void save_csv(const std::filesystem::path& csv) const;

  /// Adds a label, creating the record on first sight of `path`.
  void add(const std::string& path, const std::string& task, int label);
  /// Fixes the alphabet of `task`; present and future labels must belong to it.
  void set_alphabet(const std::string& task, std::vector<int> classes);
  const std::vector<int>& alphabet(const std::string& task) const;
  std::vector<std::string> tasks() const;

  std::size_t size() const { return records_.size(); }
  const Record& record(std::size_t i) const { return records_.at(i); }
  const std::vector<Record>& records() const { return records_; }
  std::optional<int> label(std::size_t i, const std::string& task) const;
  /// Image location (root folder joined with the record path).
  std::filesystem::path resolve(std::size_t i) const;
  const std::filesystem::path& root() const { return root_; }
  void set_root(std::filesystem::path root) { root_ = std::move(root); }

  /// Records carrying a label for `task`, in order.
  LabeledDataset with_task(const std::string& task) const;

 private:
  std::filesystem::path root_;
  std::vector<Record> records_;
  std::map<std::string, std::size_t> index_;
  std::map<std::string, std::vector<int>> alphabets_;
  std::map<std::string, bool> declared_;
};

enum class Split : std::uint8_t { train = 0, val = 1, test = 2 };
std::string to_string(Split s);
Split parse_split(const std::string& name);

struct SplitManifest {
  std::string task;
  std::array<double, 3> ratios{0.75, 0.10, 0.15};
  std::uint64_t seed = 0;
  std::vector<Split> assignment;  // one per dataset record

  std::vector<std::size_t> indices(Split s) const;
  /// class -> {train, val, test} counts.
  std::map<int, std::array<std::size_t, 3>> class_counts(const LabeledDataset& dataset) const;

  /// `path,split` CSV keyed by the dataset's record paths.
  void save_csv(const std::filesystem::path& csv, const LabeledDataset& dataset) const;
  static SplitManifest load_csv(const std::filesystem::path& csv, const LabeledDataset& dataset);
};

/// Largest-remainder apportionment of `n` items to `ratios`; leftover units go
/// to the largest fractional parts, ties to the earlier split.
std::array<std::size_t, 3> apportion(std::size_t n, const std::array<double, 3>& ratios);

/// Per-class shuffle (seeded) then apportionment. Every record must carry the
/// task label; an empty alphabet class only produces a warning.
SplitManifest stratified_split(const LabeledDataset& dataset, const std::string& task,
                               const std::array<double, 3>& ratios, std::uint64_t seed);

/// Draws a class uniformly, then a member of it uniformly (with replacement).
class BalancedSampler {
 public:
  BalancedSampler(const std::vector<std::size_t>& indices, const std::vector<int>& labels, std::uint64_t seed);
  std::size_t next();
  std::vector<std::size_t> next_batch(std::size_t batch_size);
  std::size_t num_classes() const { return groups_.size(); }

 private:
  std::vector<std::vector<std::size_t>> groups_;
  Rng rng_;
};

/// Shuffled pass where each selected index is emitted `repeats` times in a
/// row, each emission with its own augmentation seed.
class RepeatedAugmentationSampler {
 public:
  struct Emission {
    std::size_t index;
    std::uint64_t aug_seed;
  };

  RepeatedAugmentationSampler(std::vector<std::size_t> indices, std::size_t repeats, std::uint64_t seed);
  std::vector<Emission> epoch(std::uint64_t epoch) const;

 private:
  std::vector<std::size_t> indices_;
  std::size_t repeats_;
  std::uint64_t seed_;
};

/// Decoded images keyed by path. Entries can also be injected directly, which
/// is how in-memory synthetic corpora are served. Thread-safe.
class ImageStore {
 public:
  const Tensor& get(const std::string& key);
  void put(const std::string& key, Tensor image);
  bool contains(const std::string& key) const;

 private:
  mutable std::mutex mutex_;
  std::map<std::string, Tensor> cache_;
};

/// PNG and PPM files directly inside `dir`, sorted by name.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

}  // namespace nvk
