#pragma once

// File formats: binary PPM images, JSON-lines annotations, CSV output.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pgecap/eot.hpp"

namespace pgecap {

namespace fs = std::filesystem;

/// Writes a (3, H, W) [0, 1] image as an 8-bit binary PPM (P6).
inline void write_ppm(const fs::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.shape[0] != 3) throw ShapeError("write_ppm expects (3, H, W)");
  const std::size_t h = image.shape[1], w = image.shape[2];
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P6\n" << w << ' ' << h << "\n255\n";
  std::vector<unsigned char> row(w * 3);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(image.at(c, y, x), 0.0, 1.0);
        row[x * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw DataError("failed writing " + path.string());
}

inline Tensor read_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path.string());
  auto token = [&in, &path]() {
    std::string t;
    while (in >> t) {
      if (t[0] != '#') return t;
      std::string rest;
      std::getline(in, rest);
    }
    throw DataError("truncated PPM header in " + path.string());
  };
  if (token() != "P6") throw DataError(path.string() + " is not a binary PPM (P6)");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::logic_error&) {
    throw DataError("bad PPM header in " + path.string());
  }
  if (w == 0 || h == 0 || maxval != 255) throw DataError("unsupported PPM in " + path.string());
  in.get();
  std::vector<unsigned char> bytes(w * h * 3);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw DataError("truncated pixel data in " + path.string());
  }
  Tensor img({3, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = bytes[(y * w + x) * 3 + c] / 255.0;
  return img;
}

/// One annotated image: path (relative to the annotation file) and person boxes.
struct AnnotationRecord {
  std::string image;
  std::vector<Box> boxes;
};

struct Dataset {
  fs::path root;
  std::vector<AnnotationRecord> records;
  std::vector<Tensor> images;

  std::size_t size() const { return records.size(); }
};

inline nlohmann::json to_json(const AnnotationRecord& r) {
  nlohmann::json boxes = nlohmann::json::array();
  for (const Box& b : r.boxes) boxes.push_back({b.x1, b.y1, b.x2, b.y2});
  return {{"image", r.image}, {"boxes", boxes}};
}

inline void write_annotations(const fs::path& path, const std::vector<AnnotationRecord>& records) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

/// Reads JSON-lines annotations: {"image": "...", "boxes": [[x1, y1, x2, y2], ...]}.
inline std::vector<AnnotationRecord> read_annotations(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open annotation file " + path.string());
  std::vector<AnnotationRecord> out;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    AnnotationRecord r;
    try {
      const auto j = nlohmann::json::parse(line);
      r.image = j.at("image").get<std::string>();
      for (const auto& b : j.at("boxes")) {
        if (b.size() != 4) throw DataError(where + ": boxes need 4 coordinates");
        r.boxes.push_back({b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()});
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": " + e.what());
    }
    for (const Box& b : r.boxes) {
      if (!b.valid()) throw DataError(where + ": degenerate box");
    }
    out.push_back(std::move(r));
  }
  return out;
}

/// Loads annotations and images; every problem is collected into one error.
inline Dataset load_dataset(const fs::path& annotation_path) {
  if (!fs::exists(annotation_path)) throw DataError("dataset not found: " + annotation_path.string());
  Dataset ds;
  ds.root = annotation_path.parent_path();
  ds.records = read_annotations(annotation_path);
  if (ds.records.empty()) throw DataError("dataset is empty: " + annotation_path.string());
  std::vector<std::string> problems;
  for (const auto& r : ds.records) {
    const fs::path p = ds.root / r.image;
    if (!fs::exists(p)) {
      problems.push_back(r.image + ": image file missing");
      continue;
    }
    Tensor img = read_ppm(p);
    for (const Box& b : r.boxes) {
      if (b.x1 < 0 || b.y1 < 0 || b.x2 > static_cast<double>(img.shape[2]) ||
          b.y2 > static_cast<double>(img.shape[1])) {
        problems.push_back(r.image + ": box outside image bounds");
        break;
      }
    }
    ds.images.push_back(std::move(img));
  }
  if (!problems.empty()) {
    std::string msg = "annotation/image mismatch:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw DataError(msg);
  }
  return ds;
}

/// Converts a PASCAL-style INRIA annotation ("Image filename : ..." plus
/// "Bounding box for object N ... : (x1, y1) - (x2, y2)" lines) into a record.
/// INRIA boxes are inclusive pixel indices, so x2/y2 gain one pixel.
inline AnnotationRecord import_inria_annotation(std::istream& in) {
  static const std::regex filename_re(R"(Image filename\s*:\s*\"([^\"]+)\")");
  static const std::regex box_re(
      R"(Bounding box for object \d+[^:]*:\s*\((\d+),\s*(\d+)\)\s*-\s*\((\d+),\s*(\d+)\))");
  AnnotationRecord r;
  std::string line;
  std::smatch m;
  while (std::getline(in, line)) {
    if (std::regex_search(line, m, filename_re)) {
      r.image = m[1];
    } else if (std::regex_search(line, m, box_re)) {
      r.boxes.push_back({std::stod(m[1]), std::stod(m[2]), std::stod(m[3]) + 1.0, std::stod(m[4]) + 1.0});
    }
  }
  if (r.image.empty()) throw DataError("INRIA annotation without an image filename");
  return r;
}

/// Minimal CSV writer with fixed column order.
class CsvWriter {
 public:
  CsvWriter(const fs::path& path, const std::vector<std::string>& header) : out_(path) {
    if (!out_) throw DataError("cannot write " + path.string());
    row(header);
  }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << cells[i];
    }
    out_ << '\n';
  }

 private:
  std::ofstream out_;
};

/// Shortest representation that reads back to the same double.
inline std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// Reads a CSV file into rows of cells (no quoting support).
inline std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> cells;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(std::move(cells));
  }
  return rows;
}

}  // namespace pgecap
