#include "wps/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include <json.hpp>

#include "wps/image_io.hpp"

namespace wps {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {
thread_local int evaluation_depth = 0;
}  // namespace

EvaluationScope::EvaluationScope() { ++evaluation_depth; }
EvaluationScope::~EvaluationScope() { --evaluation_depth; }
bool EvaluationScope::active() { return evaluation_depth > 0; }

const SemanticSegmentation& GroundTruthMask::get() const {
  if (!EvaluationScope::active()) {
    throw Error(ErrorCode::kTaintViolation, "ground-truth mask read outside an evaluation scope");
  }
  if (!mask_) throw Error(ErrorCode::kMissingImage, "record has no ground-truth mask");
  return *mask_;
}

int Dataset::max_parts() const {
  size_t most = 0;
  for (const auto& r : records) most = std::max(most, r.weak_labels.size());
  return static_cast<int>(most);
}

std::vector<WeakLabel> derive_weak_labels(const DatasetRecord& record, LabelKind mode) {
  std::vector<WeakLabel> out;
  out.reserve(record.weak_labels.size());
  for (const WeakLabel& label : record.weak_labels) {
    if (mode == LabelKind::kBox || label.kind == LabelKind::kPoint) {
      out.push_back(label);
    } else {
      out.push_back(WeakLabel::make_point(label.box.center_x(), label.box.center_y(), label.category));
    }
  }
  return out;
}

namespace {

struct Rect {
  int x0, y0, x1, y1;  // half-open pixel ranges

  bool overlaps(const Rect& o, int margin) const {
    return x0 < o.x1 + margin && o.x0 < x1 + margin && y0 < o.y1 + margin && o.y0 < y1 + margin;
  }
};

struct Texture {
  double color[3];
  double angle;
  double period;
};

std::vector<Texture> category_textures(int n_categories) {
  const auto palette = category_palette(n_categories);
  std::vector<Texture> textures;
  for (int c = 0; c < n_categories; ++c) {
    Texture t{};
    for (int k = 0; k < 3; ++k) t.color[k] = 0.1 + 0.8 * palette[c][k] / 255.0;
    t.angle = M_PI * c / n_categories;
    t.period = 4.0 + 2.0 * (c % 3);
    textures.push_back(t);
  }
  return textures;
}

}  // namespace

Dataset generate_synthetic(const SyntheticOptions& options) {
  if (options.n_categories <= 0 || options.max_parts <= 0 || options.size < 16) {
    throw Error(ErrorCode::kInvalidConfig, "synthetic generator needs categories, parts and size >= 16");
  }
  Dataset dataset;
  dataset.image_size = options.size;
  for (int c = 0; c < options.n_categories; ++c) dataset.category_names.push_back("part_" + std::to_string(c));
  const auto textures = category_textures(options.n_categories);

  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int size = options.size;
  const int min_side = std::max(2, static_cast<int>(std::lround(options.min_extent * size)));
  const int max_side = std::max(min_side, static_cast<int>(std::lround(options.max_extent * size)));
  std::uniform_int_distribution<int> side(min_side, max_side);
  std::uniform_int_distribution<int> parts(1, options.max_parts);
  std::uniform_int_distribution<int> category(0, options.n_categories - 1);

  for (int n = 0; n < options.n_images; ++n) {
    DatasetRecord record;
    char id[32];
    std::snprintf(id, sizeof(id), "syn_%06d", n);
    record.id = id;
    record.image = ImageTensor(size, size);
    SemanticSegmentation mask(size, size, options.n_categories);

    for (auto& v : record.image.pixels) v = quantize_unit(0.35 + 0.2 * unit(rng));

    const int wanted = parts(rng);
    std::vector<Rect> placed;
    for (int p = 0; p < wanted; ++p) {
      for (int attempt = 0; attempt < 100; ++attempt) {
        const int w = side(rng), h = side(rng);
        const int x0 = std::uniform_int_distribution<int>(0, size - w)(rng);
        const int y0 = std::uniform_int_distribution<int>(0, size - h)(rng);
        const Rect rect{x0, y0, x0 + w, y0 + h};
        if (std::any_of(placed.begin(), placed.end(), [&](const Rect& o) { return rect.overlaps(o, 2); })) continue;
        placed.push_back(rect);
        const int c = category(rng);
        const Texture& tex = textures[c];
        const double ca = std::cos(tex.angle), sa = std::sin(tex.angle);
        for (int y = rect.y0; y < rect.y1; ++y) {
          for (int x = rect.x0; x < rect.x1; ++x) {
            const double stripe = std::sin(2.0 * M_PI * (x * ca + y * sa) / tex.period) >= 0 ? 0.08 : -0.08;
            for (int k = 0; k < 3; ++k) {
              record.image.at(y, x, k) = quantize_unit(tex.color[k] + stripe + 0.06 * (unit(rng) - 0.5));
            }
            mask.at(y, x) = c;
          }
        }
        record.weak_labels.push_back(WeakLabel::make_box(rect.x0, rect.y0, rect.x1, rect.y1, c));
        break;
      }
    }
    record.gt_mask.set(std::move(mask));
    dataset.records.push_back(std::move(record));
  }
  return dataset;
}

Dataset generate_synthetic(int n_images, int n_categories, int max_parts, int size, std::uint64_t seed) {
  SyntheticOptions options;
  options.n_images = n_images;
  options.n_categories = n_categories;
  options.max_parts = max_parts;
  options.size = size;
  options.seed = seed;
  return generate_synthetic(options);
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& dataset, const std::vector<double>& fractions,
                                          std::uint64_t seed) {
  if (fractions.size() != 2 || fractions[0] < 0 || fractions[1] < 0 ||
      std::abs(fractions[0] + fractions[1] - 1.0) > 1e-9) {
    throw Error(ErrorCode::kInvalidFraction, "split needs two nonnegative fractions summing to 1");
  }
  std::vector<size_t> order(dataset.records.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const size_t first = static_cast<size_t>(std::llround(fractions[0] * static_cast<double>(order.size())));

  std::pair<Dataset, Dataset> out;
  for (Dataset* part : {&out.first, &out.second}) {
    part->image_size = dataset.image_size;
    part->category_names = dataset.category_names;
  }
  for (size_t i = 0; i < order.size(); ++i) {
    (i < first ? out.first : out.second).records.push_back(dataset.records[order[i]]);
  }
  return out;
}

void save_dataset(const Dataset& dataset, const std::string& directory) {
  const fs::path root(directory);
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  const auto palette = category_palette(dataset.num_categories());
  json records = json::array();
  EvaluationScope scope;  // persisting masks is not a training-time read
  for (const auto& record : dataset.records) {
    json r;
    r["id"] = record.id;
    r["image"] = "images/" + record.id + ".png";
    write_png_rgb((root / "images" / (record.id + ".png")).string(), record.image);
    if (record.gt_mask.has_value()) {
      r["mask"] = "masks/" + record.id + ".png";
      write_indexed_png((root / "masks" / (record.id + ".png")).string(), record.gt_mask.get(), palette);
    }
    json labels = json::array();
    for (const auto& label : record.weak_labels) {
      json l;
      l["category"] = label.category;
      if (label.kind == LabelKind::kBox) {
        l["box"] = {label.box.x_min, label.box.y_min, label.box.x_max, label.box.y_max};
      } else {
        l["point"] = {label.point.x, label.point.y};
      }
      labels.push_back(l);
    }
    r["labels"] = labels;
    records.push_back(r);
  }
  json doc;
  doc["image_size"] = dataset.image_size;
  doc["categories"] = dataset.category_names;
  doc["records"] = records;
  std::ofstream out(root / "dataset.json");
  if (!out) throw Error(ErrorCode::kIOError, "cannot write dataset manifest in " + directory);
  out << doc.dump(1) << '\n';
}

Dataset load_dataset(const std::string& directory) {
  const fs::path root(directory);
  std::ifstream in(root / "dataset.json");
  if (!in) throw Error(ErrorCode::kIOError, "no dataset.json in " + directory);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kCorruptFile, std::string("dataset.json: ") + e.what());
  }
  Dataset dataset;
  try {
    dataset.image_size = doc.at("image_size").get<int>();
    dataset.category_names = doc.at("categories").get<std::vector<std::string>>();
    for (const auto& r : doc.at("records")) {
      DatasetRecord record;
      record.id = r.at("id").get<std::string>();
      const fs::path image_path = root / r.at("image").get<std::string>();
      if (!fs::exists(image_path)) throw Error(ErrorCode::kMissingImage, image_path.string());
      record.image = read_image(image_path.string());
      if (record.image.height != dataset.image_size || record.image.width != dataset.image_size) {
        record.image = resize_bilinear(record.image, dataset.image_size, dataset.image_size);
      }
      if (r.contains("mask")) record.gt_mask.set(read_indexed_png((root / r["mask"].get<std::string>()).string()));
      for (const auto& l : r.at("labels")) {
        const int c = l.at("category").get<int>();
        if (l.contains("box")) {
          const auto b = l["box"].get<std::vector<double>>();
          record.weak_labels.push_back(WeakLabel::make_box(b.at(0), b.at(1), b.at(2), b.at(3), c));
        } else {
          const auto p = l.at("point").get<std::vector<double>>();
          record.weak_labels.push_back(WeakLabel::make_point(p.at(0), p.at(1), c));
        }
      }
      dataset.records.push_back(std::move(record));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kCorruptFile, std::string("dataset.json: ") + e.what());
  }
  return dataset;
}

void rasterize_polygon(const std::vector<double>& xy, int height, int width, int value, SemanticSegmentation& out) {
  const size_t n = xy.size() / 2;
  if (n < 3) return;
  std::vector<double> crossings;
  for (int py = 0; py < height; ++py) {
    const double yc = py + 0.5;
    crossings.clear();
    for (size_t i = 0; i < n; ++i) {
      const double x1 = xy[2 * i], y1 = xy[2 * i + 1];
      const double x2 = xy[2 * ((i + 1) % n)], y2 = xy[2 * ((i + 1) % n) + 1];
      if ((y1 <= yc) != (y2 <= yc)) crossings.push_back(x1 + (yc - y1) * (x2 - x1) / (y2 - y1));
    }
    std::sort(crossings.begin(), crossings.end());
    for (size_t k = 0; k + 1 < crossings.size(); k += 2) {
      // Pixel centres in [left, right).
      const int first = std::max(0, static_cast<int>(std::ceil(crossings[k] - 0.5)));
      const int last = std::min(width - 1, static_cast<int>(std::ceil(crossings[k + 1] - 0.5)) - 1);
      for (int px = first; px <= last; ++px) out.at(py, px) = value;
    }
  }
}

std::vector<std::uint8_t> decode_rle(const std::vector<std::uint32_t>& counts, int height, int width) {
  const size_t total = static_cast<size_t>(height) * width;
  std::vector<std::uint8_t> column_major(total, 0);
  size_t pos = 0;
  std::uint8_t value = 0;
  for (std::uint32_t run : counts) {
    if (pos + run > total) throw Error(ErrorCode::kMalformedAnnotation, "RLE runs exceed mask size");
    std::fill(column_major.begin() + pos, column_major.begin() + pos + run, value);
    pos += run;
    value ^= 1;
  }
  std::vector<std::uint8_t> row_major(total);
  for (int x = 0; x < width; ++x) {
    for (int y = 0; y < height; ++y) row_major[static_cast<size_t>(y) * width + x] = column_major[static_cast<size_t>(x) * height + y];
  }
  return row_major;
}

std::vector<std::uint32_t> decode_rle_string(const std::string& encoded) {
  std::vector<long long> counts;
  size_t p = 0;
  while (p < encoded.size()) {
    long long x = 0;
    int k = 0;
    bool more = true;
    while (more) {
      if (p >= encoded.size()) throw Error(ErrorCode::kMalformedAnnotation, "truncated RLE string");
      const long long c = static_cast<long long>(encoded[p]) - 48;
      x |= (c & 0x1f) << (5 * k);
      more = (c & 0x20) != 0;
      ++p;
      ++k;
      if (!more && (c & 0x10)) x |= -1LL << (5 * k);
    }
    if (counts.size() > 2) x += counts[counts.size() - 2];
    counts.push_back(x);
  }
  std::vector<std::uint32_t> out;
  for (long long c : counts) {
    if (c < 0) throw Error(ErrorCode::kMalformedAnnotation, "negative RLE run");
    out.push_back(static_cast<std::uint32_t>(c));
  }
  return out;
}

Dataset load_coco_parts(const std::string& annotation_path, const std::string& image_dir, const Config& cfg) {
  std::ifstream in(annotation_path);
  if (!in) throw Error(ErrorCode::kIOError, "cannot open " + annotation_path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedAnnotation, std::string("invalid JSON: ") + e.what());
  }
  for (const char* key : {"images", "annotations", "categories"}) {
    if (!doc.contains(key) || !doc[key].is_array()) {
      throw Error(ErrorCode::kMalformedAnnotation, std::string("missing array '") + key + "'");
    }
  }
  for (const auto& [key, value] : doc.items()) {
    if (key != "images" && key != "annotations" && key != "categories") {
      std::cerr << "warning: ignoring COCO field '" << key << "'\n";
    }
  }

  Dataset dataset;
  dataset.image_size = cfg.image_size;
  std::map<long long, int> category_index;
  {
    std::vector<std::pair<long long, std::string>> cats;
    for (const auto& c : doc["categories"]) {
      cats.emplace_back(c.at("id").get<long long>(), c.value("name", "category_" + std::to_string(c.at("id").get<long long>())));
    }
    std::sort(cats.begin(), cats.end());
    for (const auto& [id, name] : cats) {
      category_index[id] = static_cast<int>(dataset.category_names.size());
      dataset.category_names.push_back(name);
    }
  }
  const int background = dataset.num_categories();

  struct PendingImage {
    DatasetRecord record;
    int width = 0, height = 0;
    double sx = 1, sy = 1;
    SemanticSegmentation mask;
    bool has_segmentation = false;
  };
  std::map<long long, PendingImage> images;
  std::vector<long long> image_order;
  const int size = cfg.image_size;
  for (const auto& im : doc["images"]) {
    const long long id = im.at("id").get<long long>();
    const fs::path path = fs::path(image_dir) / im.at("file_name").get<std::string>();
    if (!fs::exists(path)) throw Error(ErrorCode::kMissingImage, path.string());
    PendingImage pending;
    ImageTensor raw = read_image(path.string());
    pending.width = im.value("width", raw.width);
    pending.height = im.value("height", raw.height);
    pending.sx = static_cast<double>(size) / pending.width;
    pending.sy = static_cast<double>(size) / pending.height;
    pending.record.id = std::to_string(id);
    pending.record.image = resize_bilinear(raw, size, size);
    pending.record.image.original_width = raw.width;
    pending.record.image.original_height = raw.height;
    pending.mask = SemanticSegmentation(size, size, background);
    images.emplace(id, std::move(pending));
    image_order.push_back(id);
  }

  for (const auto& ann : doc["annotations"]) {
    const std::string ann_id = ann.contains("id") ? ann["id"].dump() : "?";
    auto malformed = [&](const std::string& why) {
      return Error(ErrorCode::kMalformedAnnotation, "annotation " + ann_id + ": " + why);
    };
    try {
      const long long image_id = ann.at("image_id").get<long long>();
      auto it = images.find(image_id);
      if (it == images.end()) throw malformed("unknown image_id");
      PendingImage& pending = it->second;
      const auto cat = category_index.find(ann.at("category_id").get<long long>());
      if (cat == category_index.end()) throw malformed("unknown category_id");
      const auto bbox = ann.at("bbox").get<std::vector<double>>();
      if (bbox.size() != 4) throw malformed("bbox must have 4 numbers");
      const double x = bbox[0], y = bbox[1], w = bbox[2], h = bbox[3];
      const double tol = 1e-6;
      if (w <= 0 || h <= 0) throw malformed("bbox has non-positive extent");
      if (x < -tol || y < -tol || x + w > pending.width + tol || y + h > pending.height + tol) {
        throw malformed("bbox outside image bounds");
      }
      const double x0 = std::clamp(x * pending.sx, 0.0, double(size));
      const double y0 = std::clamp(y * pending.sy, 0.0, double(size));
      const double x1 = std::clamp((x + w) * pending.sx, 0.0, double(size));
      const double y1 = std::clamp((y + h) * pending.sy, 0.0, double(size));
      if (x1 - x0 < 2.0 || y1 - y0 < 2.0) {
        std::cerr << "warning: annotation " << ann_id << " is under 2 px after resizing; skipped\n";
        continue;
      }
      pending.record.weak_labels.push_back(WeakLabel::make_box(x0, y0, x1, y1, cat->second));

      if (!ann.contains("segmentation")) continue;
      const auto& seg = ann["segmentation"];
      pending.has_segmentation = true;
      if (seg.is_array()) {
        for (const auto& poly : seg) {
          std::vector<double> xy = poly.get<std::vector<double>>();
          for (size_t k = 0; k < xy.size(); ++k) xy[k] *= (k % 2 == 0) ? pending.sx : pending.sy;
          rasterize_polygon(xy, size, size, cat->second, pending.mask);
        }
      } else if (seg.is_object()) {
        const auto dims = seg.at("size").get<std::vector<int>>();
        if (dims.size() != 2) throw malformed("RLE size must be [h, w]");
        const std::vector<std::uint32_t> counts = seg.at("counts").is_string()
                                                      ? decode_rle_string(seg["counts"].get<std::string>())
                                                      : seg["counts"].get<std::vector<std::uint32_t>>();
        const auto bits = decode_rle(counts, dims[0], dims[1]);
        SemanticSegmentation full(dims[0], dims[1], 0);
        for (size_t k = 0; k < bits.size(); ++k) full.labels[k] = bits[k];
        const SemanticSegmentation scaled = resize_nearest(full, size, size);
        for (size_t k = 0; k < scaled.labels.size(); ++k) {
          if (scaled.labels[k]) pending.mask.labels[k] = cat->second;
        }
      } else {
        throw malformed("segmentation must be polygons or RLE");
      }
    } catch (const json::exception& e) {
      throw malformed(e.what());
    }
  }

  for (long long id : image_order) {
    PendingImage& pending = images.at(id);
    if (pending.has_segmentation) pending.record.gt_mask.set(std::move(pending.mask));
    dataset.records.push_back(std::move(pending.record));
  }
  return dataset;
}

}  // namespace wps
