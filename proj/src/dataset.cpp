// SPDX-License-Identifier: Apache-2.0
#include "nvk/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "nvk/error.hpp"
#include "nvk/image.hpp"
#include "nvk/logging.hpp"

namespace nvk {
namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    out.push_back(cell);
  }
  return out;
}

int parse_label(const std::string& text, const std::string& where) {
  try {
    std::size_t used = 0;
    int v = std::stoi(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw ContractError(where + ": label '" + text + "' is not an integer");
}

}  // namespace

LabeledDataset LabeledDataset::load_csv(const std::filesystem::path& csv) {
  std::ifstream f(csv);
  if (!f) throw IoError("cannot read label manifest " + csv.string());
  LabeledDataset ds;
  ds.root_ = csv.parent_path();
  std::string line;
  if (!std::getline(f, line) || split_csv_line(line) != std::vector<std::string>{"path", "task", "label"}) {
    throw ContractError(csv.string() + ": expected header 'path,task,label'");
  }
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto cells = split_csv_line(line);
    const std::string where = csv.string() + ":" + std::to_string(lineno);
    if (cells.size() != 3) throw ContractError(where + ": expected 3 columns");
    ds.add(cells[0], cells[1], parse_label(cells[2], where));
  }
  return ds;
}

void LabeledDataset::save_csv(const std::filesystem::path& csv) const {
  std::ofstream f(csv);
  if (!f) throw IoError("cannot write label manifest " + csv.string());
  f << "path,task,label\n";
  for (const auto& r : records_) {
    for (const auto& [task, label] : r.labels) f << r.path << "," << task << "," << label << "\n";
  }
  if (!f) throw IoError("short write to " + csv.string());
}

void LabeledDataset::add(const std::string& path, const std::string& task, int label) {
  auto& alpha = alphabets_[task];
  if (declared_[task]) {
    if (!std::binary_search(alpha.begin(), alpha.end(), label)) {
      throw ContractError("label " + std::to_string(label) + " is outside the alphabet of task '" + task + "'");
    }
  } else if (!std::binary_search(alpha.begin(), alpha.end(), label)) {
    alpha.insert(std::lower_bound(alpha.begin(), alpha.end(), label), label);
  }
  auto [it, inserted] = index_.emplace(path, records_.size());
  if (inserted) records_.push_back(Record{path, {}});
  records_[it->second].labels[task] = label;
}

void LabeledDataset::set_alphabet(const std::string& task, std::vector<int> classes) {
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  for (const auto& r : records_) {
    auto it = r.labels.find(task);
    if (it != r.labels.end() && !std::binary_search(classes.begin(), classes.end(), it->second)) {
      throw ContractError("existing label " + std::to_string(it->second) + " is outside the declared alphabet of '" +
                          task + "'");
    }
  }
  alphabets_[task] = std::move(classes);
  declared_[task] = true;
}

const std::vector<int>& LabeledDataset::alphabet(const std::string& task) const {
  auto it = alphabets_.find(task);
  if (it == alphabets_.end()) throw ContractError("dataset has no task '" + task + "'");
  return it->second;
}

std::vector<std::string> LabeledDataset::tasks() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : alphabets_) out.push_back(k);
  return out;
}

std::optional<int> LabeledDataset::label(std::size_t i, const std::string& task) const {
  const auto& labels = records_.at(i).labels;
  auto it = labels.find(task);
  if (it == labels.end()) return std::nullopt;
  return it->second;
}

std::filesystem::path LabeledDataset::resolve(std::size_t i) const {
  std::filesystem::path p(records_.at(i).path);
  return p.is_absolute() || root_.empty() ? p : root_ / p;
}

LabeledDataset LabeledDataset::with_task(const std::string& task) const {
  LabeledDataset out;
  out.root_ = root_;
  out.alphabets_[task] = alphabet(task);
  out.declared_[task] = true;
  for (const auto& r : records_) {
    auto it = r.labels.find(task);
    if (it == r.labels.end()) continue;
    out.index_.emplace(r.path, out.records_.size());
    out.records_.push_back(Record{r.path, {{task, it->second}}});
  }
  return out;
}

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw ContractError("unknown split '" + name + "' (expected train, val or test)");
}

std::vector<std::size_t> SplitManifest::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] == s) out.push_back(i);
  }
  return out;
}

std::map<int, std::array<std::size_t, 3>> SplitManifest::class_counts(const LabeledDataset& dataset) const {
  std::map<int, std::array<std::size_t, 3>> out;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    auto label = dataset.label(i, task);
    if (label) ++out[*label][static_cast<std::size_t>(assignment[i])];
  }
  return out;
}

void SplitManifest::save_csv(const std::filesystem::path& csv, const LabeledDataset& dataset) const {
  if (assignment.size() != dataset.size()) throw ContractError("split manifest does not match the dataset size");
  std::ofstream f(csv);
  if (!f) throw IoError("cannot write split manifest " + csv.string());
  f << "path,split\n";
  for (std::size_t i = 0; i < assignment.size(); ++i) f << dataset.record(i).path << "," << to_string(assignment[i]) << "\n";
  if (!f) throw IoError("short write to " + csv.string());
}

SplitManifest SplitManifest::load_csv(const std::filesystem::path& csv, const LabeledDataset& dataset) {
  std::ifstream f(csv);
  if (!f) throw IoError("cannot read split manifest " + csv.string());
  std::string line;
  if (!std::getline(f, line) || split_csv_line(line) != std::vector<std::string>{"path", "split"}) {
    throw ContractError(csv.string() + ": expected header 'path,split'");
  }
  std::map<std::string, Split> by_path;
  while (std::getline(f, line)) {
    if (line.empty() || line == "\r") continue;
    auto cells = split_csv_line(line);
    if (cells.size() != 2) throw ContractError(csv.string() + ": expected 2 columns in '" + line + "'");
    by_path[cells[0]] = parse_split(cells[1]);
  }
  SplitManifest m;
  m.assignment.reserve(dataset.size());
  for (const auto& r : dataset.records()) {
    auto it = by_path.find(r.path);
    if (it == by_path.end()) throw ContractError("split manifest has no entry for '" + r.path + "'");
    m.assignment.push_back(it->second);
  }
  return m;
}

std::array<std::size_t, 3> apportion(std::size_t n, const std::array<double, 3>& ratios) {
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> frac{};
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double quota = static_cast<double>(n) * ratios[k];
    // The epsilon absorbs binary representation error in ratios like 0.15.
    const double whole = std::floor(quota + 1e-9);
    counts[k] = static_cast<std::size_t>(whole);
    frac[k] = std::max(0.0, quota - whole);
    assigned += counts[k];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b] + 1e-9; });
  for (std::size_t i = 0; assigned < n; i = (i + 1) % 3, ++assigned) ++counts[order[i]];
  return counts;
}

SplitManifest stratified_split(const LabeledDataset& dataset, const std::string& task,
                               const std::array<double, 3>& ratios, std::uint64_t seed) {
  double total = 0;
  for (double r : ratios) {
    if (r < 0) throw PreconditionError("split ratios must be non-negative");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-6) throw PreconditionError("split ratios must sum to 1, got " + std::to_string(total));

  std::map<int, std::vector<std::size_t>> members;
  for (int c : dataset.alphabet(task)) members[c];
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    auto label = dataset.label(i, task);
    if (!label) throw ContractError("record '" + dataset.record(i).path + "' has no label for task '" + task + "'");
    members[*label].push_back(i);
  }

  SplitManifest m;
  m.task = task;
  m.ratios = ratios;
  m.seed = seed;
  m.assignment.assign(dataset.size(), Split::train);
  for (auto& [cls, idx] : members) {
    if (idx.empty()) {
      warn("class " + std::to_string(cls) + " of task '" + task + "' has no records");
      continue;
    }
    Rng rng(Rng::derive(seed, {static_cast<std::uint64_t>(static_cast<std::int64_t>(cls))}));
    shuffle(idx.begin(), idx.end(), rng);
    const auto counts = apportion(idx.size(), ratios);
    std::size_t pos = 0;
    for (std::size_t k = 0; k < 3; ++k) {
      for (std::size_t j = 0; j < counts[k]; ++j) m.assignment[idx[pos++]] = static_cast<Split>(k);
    }
  }
  return m;
}

BalancedSampler::BalancedSampler(const std::vector<std::size_t>& indices, const std::vector<int>& labels,
                                 std::uint64_t seed)
    : rng_(seed) {
  if (indices.size() != labels.size()) throw ContractError("balanced sampler needs one label per index");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < indices.size(); ++i) by_class[labels[i]].push_back(indices[i]);
  for (auto& [c, members] : by_class) groups_.push_back(std::move(members));
  if (groups_.empty()) throw PreconditionError("balanced sampler needs at least one sample");
}

std::size_t BalancedSampler::next() {
  const auto& group = groups_[rng_.below(groups_.size())];
  return group[rng_.below(group.size())];
}

std::vector<std::size_t> BalancedSampler::next_batch(std::size_t batch_size) {
  std::vector<std::size_t> out(batch_size);
  for (auto& i : out) i = next();
  return out;
}

RepeatedAugmentationSampler::RepeatedAugmentationSampler(std::vector<std::size_t> indices, std::size_t repeats,
                                                         std::uint64_t seed)
    : indices_(std::move(indices)), repeats_(repeats), seed_(seed) {
  if (repeats_ == 0) throw PreconditionError("repeats must be at least 1");
}

std::vector<RepeatedAugmentationSampler::Emission> RepeatedAugmentationSampler::epoch(std::uint64_t epoch) const {
  std::vector<std::size_t> order = indices_;
  Rng rng(Rng::derive(seed_, {epoch}));
  shuffle(order.begin(), order.end(), rng);
  std::vector<Emission> out;
  out.reserve(order.size() * repeats_);
  for (std::size_t idx : order) {
    for (std::size_t r = 0; r < repeats_; ++r) out.push_back({idx, Rng::derive(seed_, {epoch, out.size(), 1})});
  }
  return out;
}

const Tensor& ImageStore::get(const std::string& key) {
  {
    std::lock_guard lock(mutex_);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
  }
  Tensor image = to_tensor(read_image(key));
  std::lock_guard lock(mutex_);
  return cache_.emplace(key, std::move(image)).first->second;
}

void ImageStore::put(const std::string& key, Tensor image) {
  std::lock_guard lock(mutex_);
  cache_[key] = std::move(image);
}

bool ImageStore::contains(const std::string& key) const {
  std::lock_guard lock(mutex_);
  return cache_.count(key) > 0;
}

std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".png" || ext == ".ppm")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace nvk
