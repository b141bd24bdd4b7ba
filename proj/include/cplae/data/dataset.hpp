#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "cplae/core/error.hpp"
#include "cplae/data/image.hpp"

namespace cplae::data {

enum class Split { train, val, test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline std::optional<Split> split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  return std::nullopt;
}

/// Images with class labels and split tags. Labels index class_names; a class
/// belongs to exactly one split.
struct LabeledDataset {
  std::vector<std::string> class_names;
  std::vector<Image> images;
  std::vector<std::size_t> labels;
  std::vector<Split> splits;

  std::size_t size() const { return images.size(); }

  /// label → sample ids (ascending), for classes that have samples.
  std::map<std::size_t, std::vector<std::size_t>> class_index() const {
    std::map<std::size_t, std::vector<std::size_t>> idx;
    for (std::size_t i = 0; i < labels.size(); ++i) idx[labels[i]].push_back(i);
    return idx;
  }

  std::vector<std::size_t> classes() const {
    std::set<std::size_t> s(labels.begin(), labels.end());
    return {s.begin(), s.end()};
  }

  /// Samples of one split; labels and class_names are kept global.
  LabeledDataset subset(Split split) const {
    LabeledDataset out;
    out.class_names = class_names;
    for (std::size_t i = 0; i < images.size(); ++i)
      if (splits[i] == split) {
        out.images.push_back(images[i]);
        out.labels.push_back(labels[i]);
        out.splits.push_back(split);
      }
    return out;
  }

  /// Throws IngestionError if a class appears in two splits or images differ in shape.
  void validate() const {
    if (images.size() != labels.size() || images.size() != splits.size())
      throw IngestionError("dataset field lengths disagree");
    std::map<std::size_t, Split> owner;
    for (std::size_t i = 0; i < images.size(); ++i) {
      if (labels[i] >= class_names.size()) throw IngestionError("sample " + std::to_string(i) + " has unknown label id");
      auto [it, fresh] = owner.emplace(labels[i], splits[i]);
      if (!fresh && it->second != splits[i])
        throw IngestionError("class '" + class_names[labels[i]] + "' appears in both " + to_string(it->second) +
                             " and " + to_string(splits[i]) + " splits");
      if (!images[i].same_shape(images[0]))
        throw IngestionError("sample " + std::to_string(i) + " has shape " + images[i].shape_str() + ", expected " +
                             images[0].shape_str());
    }
  }

  bool operator==(const LabeledDataset&) const = default;
};

/// Reads a JSON-lines manifest of {"path", "label", "split"} records. Paths are
/// relative to the manifest's directory. Every image must have the shape of the
/// first one (or of `expected`, when given).
inline LabeledDataset load_dataset(const std::filesystem::path& manifest, const std::optional<Image>& expected = {}) {
  std::ifstream in(manifest);
  if (!in) throw IngestionError(manifest.string() + ": cannot open manifest");
  const auto base = manifest.parent_path();
  LabeledDataset ds;
  std::map<std::string, std::size_t> label_ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = manifest.string() + ":" + std::to_string(line_no);
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw IngestionError(where + ": malformed JSON record (" + e.what() + ")");
    }
    auto field = [&](const char* key) {
      if (!rec.is_object() || !rec.contains(key) || !rec[key].is_string())
        throw IngestionError(where + ": record needs string field \"" + key + "\"");
      return rec[key].get<std::string>();
    };
    const std::string path = field("path"), label = field("label"), split_name = field("split");
    const auto split = split_from_string(split_name);
    if (!split) throw IngestionError(where + ": split must be train, val or test, got \"" + split_name + "\"");
    Image img;
    try {
      img = read_netpbm(base / path);
    } catch (const IngestionError& e) {
      throw IngestionError(where + ": " + e.what());
    }
    const Image& ref = expected ? *expected : (ds.images.empty() ? img : ds.images.front());
    if (!img.same_shape(ref))
      throw IngestionError(where + ": image " + path + " is " + img.shape_str() + ", expected " + ref.shape_str());
    auto [it, fresh] = label_ids.emplace(label, ds.class_names.size());
    if (fresh) ds.class_names.push_back(label);
    ds.images.push_back(std::move(img));
    ds.labels.push_back(it->second);
    ds.splits.push_back(*split);
  }
  try {
    ds.validate();
  } catch (const IngestionError& e) {
    throw IngestionError(manifest.string() + ": " + e.what());
  }
  return ds;
}

/// Writes images under `dir`/images and a manifest.jsonl beside them.
/// Returns the manifest path.
inline std::filesystem::path write_dataset(const std::filesystem::path& dir, const LabeledDataset& ds) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  const fs::path manifest = dir / "manifest.jsonl";
  std::ofstream out(manifest, std::ios::trunc);
  if (!out) throw IngestionError(manifest.string() + ": cannot open for writing");
  const char* ext = (!ds.images.empty() && ds.images[0].channels == 3) ? ".ppm" : ".pgm";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%06zu", i);
    const std::string rel = "images/" + std::string(name) + ext;
    write_netpbm(dir / rel, ds.images[i]);
    nlohmann::json rec{{"path", rel}, {"label", ds.class_names[ds.labels[i]]}, {"split", to_string(ds.splits[i])}};
    out << rec.dump() << "\n";
  }
  if (!out) throw IngestionError(manifest.string() + ": write failed");
  return manifest;
}

}  // namespace cplae::data
