#include "vrap/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "vrap/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace vrap {

namespace {

const std::vector<std::string> kShapeNames = {"circle", "square", "triangle"};
const std::vector<std::string> kColorNames = {"red", "green", "blue"};
const std::vector<std::string> kPredicateNames = {
    "left_of", "right_of", "above", "below", "inside", "contains",
    "overlapping"};

const float kPalette[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};

int64_t cross(int64_t ux, int64_t uy, int64_t vx, int64_t vy) {
  return ux * vy - uy * vx;
}

bool strictly_contains(const BBox& a, const BBox& b) {
  return a[0] < b[0] && a[1] < b[1] && b[2] < a[2] && b[3] < a[3];
}

json schema_json(const DatasetSchema& s) {
  return json{{"image_size", {s.image_h, s.image_w, 3}},
              {"m_c", s.m_c},
              {"m_r", s.m_r},
              {"class_names", s.class_names},
              {"predicate_names", s.predicate_names}};
}

DatasetSchema schema_from_json(const json& j) {
  DatasetSchema s;
  s.image_h = j.at("image_size").at(0).get<int>();
  s.image_w = j.at("image_size").at(1).get<int>();
  s.m_c = j.at("m_c").get<int>();
  s.m_r = j.at("m_r").get<int>();
  s.class_names = j.at("class_names").get<std::vector<std::string>>();
  s.predicate_names = j.at("predicate_names").get<std::vector<std::string>>();
  if (static_cast<int>(s.class_names.size()) != s.m_c ||
      static_cast<int>(s.predicate_names.size()) != s.m_r)
    throw DataError("schema: name list sizes disagree with m_c/m_r");
  return s;
}

}  // namespace

DatasetSchema::DatasetSchema() {
  for (const auto& shape : kShapeNames)
    for (const auto& color : kColorNames)
      class_names.push_back(color + "_" + shape);
  predicate_names = kPredicateNames;
}

uint64_t DatasetSchema::hash() const {
  const std::string s = schema_json(*this).dump();
  Fnv1a64 h;
  h.update(s.data(), s.size());
  return h.hash;
}

std::string schema_to_json_string(const DatasetSchema& schema) {
  return schema_json(schema).dump();
}

DatasetSchema schema_from_json_string(const std::string& text) {
  try {
    return schema_from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw DataError(std::string("schema json: ") + e.what());
  }
}

int class_shape(int label) { return label / 3; }
int class_color(int label) { return label % 3; }
const std::vector<std::string>& shape_names() { return kShapeNames; }
const std::vector<std::string>& color_names() { return kColorNames; }

std::vector<std::string> caption_tokens(int subj_label, int predicate,
                                        int obj_label,
                                        const DatasetSchema& schema) {
  return {"a",
          kColorNames[class_color(subj_label)],
          kShapeNames[class_shape(subj_label)],
          "is",
          schema.predicate_names[predicate],
          "a",
          kColorNames[class_color(obj_label)],
          kShapeNames[class_shape(obj_label)]};
}

int64_t bbox_area(const BBox& b) {
  return int64_t(b[2] - b[0]) * int64_t(b[3] - b[1]);
}

double bbox_iou(const BBox& a, const BBox& b) {
  const int64_t ix0 = std::max(a[0], b[0]), iy0 = std::max(a[1], b[1]);
  const int64_t ix1 = std::min(a[2], b[2]), iy1 = std::min(a[3], b[3]);
  const int64_t iw = std::max<int64_t>(0, ix1 - ix0);
  const int64_t ih = std::max<int64_t>(0, iy1 - iy0);
  const int64_t inter = iw * ih;
  const int64_t uni = bbox_area(a) + bbox_area(b) - inter;
  return uni == 0 ? 0.0 : double(inter) / double(uni);
}

int predicate_of(const BBox& a, const BBox& b) {
  if (strictly_contains(a, b)) return kContains;
  if (strictly_contains(b, a)) return kInside;
  if (bbox_iou(a, b) > 0.15) return kOverlapping;
  // doubled coordinates keep the center comparison exact
  const int64_t dx = int64_t(a[0] + a[2]) - int64_t(b[0] + b[2]);
  const int64_t dy = int64_t(a[1] + a[3]) - int64_t(b[1] + b[3]);
  if (dx == 0 && dy == 0) return kOverlapping;  // equal centers always intersect
  if (std::abs(dx) >= std::abs(dy)) return dx < 0 ? kLeftOf : kRightOf;
  return dy < 0 ? kAbove : kBelow;
}

Tensor render(const std::vector<SceneObject>& objects,
              const DatasetSchema& schema) {
  const int h = schema.image_h, w = schema.image_w;
  auto img = full({h, w, 3}, 1.0f);
  for (const auto& obj : objects) {
    const auto& bb = obj.bbox;
    const int shape = class_shape(obj.label);
    const float* color = kPalette[class_color(obj.label)];
    // doubled integer coordinates; pixel (r,c) has center (2c+1, 2r+1)
    const int64_t cx2 = bb[0] + bb[2], cy2 = bb[1] + bb[3];
    const int64_t rad2 = std::min(bb[2] - bb[0], bb[3] - bb[1]);
    const int64_t ax = cx2, ay = 2 * int64_t(bb[1]);
    const int64_t bx = 2 * int64_t(bb[0]), by = 2 * int64_t(bb[3]);
    const int64_t tx = 2 * int64_t(bb[2]), ty = by;
    for (int r = bb[1]; r < bb[3]; ++r) {
      for (int c = bb[0]; c < bb[2]; ++c) {
        bool inside = false;
        switch (shape) {
          case 0: {  // circle inscribed in the box
            const int64_t dx = 2 * c + 1 - cx2, dy = 2 * r + 1 - cy2;
            inside = dx * dx + dy * dy <= rad2 * rad2;
            break;
          }
          case 1:
            inside = true;  // square fills the box
            break;
          case 2: {  // triangle, apex top-center
            const int64_t px = 2 * c + 1, py = 2 * r + 1;
            inside = cross(bx - ax, by - ay, px - ax, py - ay) <= 0 &&
                     cross(tx - bx, ty - by, px - bx, py - by) <= 0 &&
                     cross(ax - tx, ay - ty, px - tx, py - ty) <= 0;
            break;
          }
        }
        if (inside) {
          float* px = img->values.data() + (size_t(r) * w + c) * 3;
          px[0] = color[0];
          px[1] = color[1];
          px[2] = color[2];
        }
      }
    }
  }
  return img;
}

Scene sample_scene(Xoshiro256& rng, const DatasetSchema& schema, int64_t id) {
  const int W = schema.image_w, H = schema.image_h;
  const int min_side = 12, max_side = 48;
  int attempts = 0;
  auto bump = [&]() {
    if (++attempts > 1000)
      throw DataError("sample_scene: rejection limit exceeded (bad schema)");
  };

  const int n = 2 + rng.uniform_int(3);
  std::vector<SceneObject> objs;
  while (static_cast<int>(objs.size()) < n) {
    bump();
    const int shape = rng.uniform_int(3);
    const int color = rng.uniform_int(3);
    const int label = shape * 3 + color;
    bool dup_label = false;
    for (const auto& o : objs) dup_label |= (o.label == label);
    if (dup_label) continue;

    std::vector<int> hosts;
    for (size_t i = 0; i < objs.size(); ++i) {
      const auto& hb = objs[i].bbox;
      if (hb[2] - hb[0] >= min_side + 2 && hb[3] - hb[1] >= min_side + 2)
        hosts.push_back(static_cast<int>(i));
    }
    const double branch = objs.empty() ? 1.0 : rng.uniform();
    const bool nest = !hosts.empty() && branch < 0.25;
    const bool lap = !objs.empty() && !nest && branch < 0.45;

    BBox bb;
    if (nest) {
      const auto& hb = objs[hosts[rng.uniform_int(int(hosts.size()))]].bbox;
      const int hw = hb[2] - hb[0], hh = hb[3] - hb[1];
      const int w = min_side + rng.uniform_int(hw - 2 - min_side + 1);
      const int h = min_side + rng.uniform_int(hh - 2 - min_side + 1);
      const int x0 = hb[0] + 1 + rng.uniform_int(hw - w - 1);
      const int y0 = hb[1] + 1 + rng.uniform_int(hh - h - 1);
      bb = {x0, y0, x0 + w, y0 + h};
    } else if (lap) {
      // slide a similar-size box along one axis of an existing box so the
      // pair lands in the clear-overlap IoU band
      const auto& hb = objs[rng.uniform_int(int(objs.size()))].bbox;
      const int hw = hb[2] - hb[0], hh = hb[3] - hb[1];
      const int w = std::clamp(hw - 4 + rng.uniform_int(9), min_side, max_side);
      const int h = std::clamp(hh - 4 + rng.uniform_int(9), min_side, max_side);
      const bool horizontal = rng.uniform_int(2) == 0;
      const int sx = rng.uniform_int(2) ? 1 : -1;
      const int sy = rng.uniform_int(2) ? 1 : -1;
      const double major = 0.2 + 0.25 * rng.uniform();
      const double minor = 0.1 * rng.uniform();
      const int dx = static_cast<int>((horizontal ? major : minor) * hw) * sx;
      const int dy = static_cast<int>((horizontal ? minor : major) * hh) * sy;
      const int x0 = hb[0] + dx, y0 = hb[1] + dy;
      if (x0 < 0 || y0 < 0 || x0 + w > W || y0 + h > H) continue;
      bb = {x0, y0, x0 + w, y0 + h};
    } else {
      const int w = min_side + rng.uniform_int(max_side - min_side + 1);
      const int h = min_side + rng.uniform_int(max_side - min_side + 1);
      const int x0 = rng.uniform_int(W - w + 1);
      const int y0 = rng.uniform_int(H - h + 1);
      bb = {x0, y0, x0 + w, y0 + h};
    }

    bool ok = true;
    for (const auto& o : objs) {
      if (bbox_area(o.bbox) == bbox_area(bb)) ok = false;
      if (strictly_contains(o.bbox, bb) || strictly_contains(bb, o.bbox))
        continue;
      // keep every pair's relation visually determinate in the union crop:
      // overlaps are either clear (IoU in [0.3, 0.5], neither box mostly
      // swallowed) or negligible, and displacement pairs need a dominant axis
      const double iou = bbox_iou(o.bbox, bb);
      if (iou > 0.5 || (iou > 0.05 && iou < 0.3)) ok = false;
      if (iou > 0.05) {
        const int64_t ix0 = std::max(o.bbox[0], bb[0]), iy0 = std::max(o.bbox[1], bb[1]);
        const int64_t ix1 = std::min(o.bbox[2], bb[2]), iy1 = std::min(o.bbox[3], bb[3]);
        const int64_t inter = std::max<int64_t>(0, ix1 - ix0) * std::max<int64_t>(0, iy1 - iy0);
        if (double(inter) / double(std::min(bbox_area(o.bbox), bbox_area(bb))) > 0.8)
          ok = false;
      } else {
        const double dx = std::abs(double(o.bbox[0] + o.bbox[2] - bb[0] - bb[2]));
        const double dy = std::abs(double(o.bbox[1] + o.bbox[3] - bb[1] - bb[3]));
        const double hi = std::max(dx, dy);
        if (hi <= 0.0 || std::abs(dx - dy) / hi < 0.3) ok = false;
      }
    }
    if (!ok) continue;
    objs.push_back({bb, label});
  }

  std::sort(objs.begin(), objs.end(), [](const auto& a, const auto& b) {
    return bbox_area(a.bbox) > bbox_area(b.bbox);
  });

  Scene scene;
  scene.id = id;
  scene.objects = objs;
  for (int mu = 0; mu < n; ++mu)
    for (int nu = 0; nu < n; ++nu)
      if (nu != mu)
        scene.relations.push_back(
            {mu, nu, predicate_of(objs[mu].bbox, objs[nu].bbox)});
  scene.principal = {objs[0].label,
                     predicate_of(objs[0].bbox, objs[1].bbox),
                     objs[1].label};
  scene.image = render(objs, schema);
  return scene;
}

void validate_scene(const Scene& scene, const DatasetSchema& schema) {
  const int n = scene.n();
  if (n < 2 || n > 4)
    throw DataError("scene " + std::to_string(scene.id) + ": n out of range");
  for (const auto& o : scene.objects) {
    const auto& b = o.bbox;
    if (b[0] < 0 || b[1] < 0 || b[2] > schema.image_w || b[3] > schema.image_h)
      throw DataError("scene " + std::to_string(scene.id) + ": box out of bounds");
    if (b[2] - b[0] < 12 || b[3] - b[1] < 12)
      throw DataError("scene " + std::to_string(scene.id) + ": box below 12x12");
    if (o.label < 0 || o.label >= schema.m_c)
      throw DataError("scene " + std::to_string(scene.id) + ": bad label");
  }
  if (static_cast<int>(scene.relations.size()) != n * (n - 1))
    throw DataError("scene " + std::to_string(scene.id) +
                    ": relations do not cover all ordered pairs");
  size_t idx = 0;
  for (int mu = 0; mu < n; ++mu)
    for (int nu = 0; nu < n; ++nu) {
      if (nu == mu) continue;
      const auto& rel = scene.relations[idx++];
      if (rel.subject != mu || rel.object != nu)
        throw DataError("scene " + std::to_string(scene.id) +
                        ": relations out of lexicographic order");
      if (rel.predicate < 0 || rel.predicate >= schema.m_r)
        throw DataError("scene " + std::to_string(scene.id) + ": bad predicate");
    }
  // principal = relation between the two largest objects, subject the larger
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return bbox_area(scene.objects[a].bbox) > bbox_area(scene.objects[b].bbox);
  });
  const int s = order[0], o = order[1];
  int pred = -1;
  for (const auto& rel : scene.relations)
    if (rel.subject == s && rel.object == o) pred = rel.predicate;
  if (scene.principal[0] != scene.objects[s].label ||
      scene.principal[1] != pred ||
      scene.principal[2] != scene.objects[o].label)
    throw DataError("scene " + std::to_string(scene.id) +
                    ": principal inconsistent with relations");
  if (!scene.image ||
      scene.image->shape != std::vector<int>{schema.image_h, schema.image_w, 3})
    throw DataError("scene " + std::to_string(scene.id) + ": bad image shape");
}

Dataset generate_dataset(uint64_t seed, int64_t first_id, int count,
                         const DatasetSchema& schema) {
  Dataset ds;
  ds.schema = schema;
  ds.generator_seed = seed;
  ds.scenes.reserve(count);
  SplitMix64 sm(seed);
  std::vector<uint64_t> stream(static_cast<size_t>(first_id) + count);
  for (auto& v : stream) v = sm.next();
  for (int i = 0; i < count; ++i) {
    const int64_t id = first_id + i;
    Xoshiro256 rng(stream[id]);
    ds.scenes.push_back(sample_scene(rng, schema, id));
  }
  return ds;
}

void write_ppm(const std::string& path, const Tensor& image_hwc) {
  if (image_hwc->shape.size() != 3 || image_hwc->shape[2] != 3)
    throw DataError("write_ppm: want HxWx3, got " + shape_str(image_hwc->shape));
  const int h = image_hwc->shape[0], w = image_hwc->shape[1];
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError(path + ": cannot open for writing");
  os << "P6\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
  for (int r = 0; r < h; ++r) {
    const float* src = image_hwc->values.data() + size_t(r) * w * 3;
    for (int i = 0; i < w * 3; ++i) {
      const long v = std::lround(src[i] * 255.0f);
      row[i] = static_cast<unsigned char>(std::clamp(v, 0L, 255L));
    }
    os.write(reinterpret_cast<const char*>(row.data()),
             static_cast<std::streamsize>(row.size()));
  }
  if (!os) throw DataError(path + ": write failed");
}

Tensor read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError(path + ": cannot open");
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  is >> magic >> w >> h >> maxval;
  if (magic != "P6" || maxval != 255 || w <= 0 || h <= 0)
    throw DataError(path + ": not a maxval-255 P6 file");
  is.get();  // single whitespace after header
  std::vector<unsigned char> buf(static_cast<size_t>(w) * h * 3);
  if (!is.read(reinterpret_cast<char*>(buf.data()),
               static_cast<std::streamsize>(buf.size())))
    throw DataError(path + ": truncated pixel data");
  auto img = zeros({h, w, 3});
  for (size_t i = 0; i < buf.size(); ++i)
    img->values[i] = static_cast<float>(buf[i]) / 255.0f;
  return img;
}

uint64_t file_fnv(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError(path + ": cannot open");
  Fnv1a64 h;
  char buf[65536];
  while (is.read(buf, sizeof(buf)) || is.gcount() > 0)
    h.update(buf, static_cast<uint64_t>(is.gcount()));
  return h.hash;
}

void save_dataset(const std::string& dir, const Dataset& dataset) {
  fs::create_directories(fs::path(dir) / "images");
  json scenes = json::array();
  for (const auto& sc : dataset.scenes) {
    const std::string image_file =
        "images/scene_" + std::to_string(sc.id) + ".ppm";
    write_ppm((fs::path(dir) / image_file).string(), sc.image);
    json objects = json::array();
    for (const auto& o : sc.objects)
      objects.push_back(json{{"bbox", o.bbox}, {"label", o.label}});
    json relations = json::array();
    for (const auto& r : sc.relations)
      relations.push_back(json{{"subject", r.subject},
                               {"object", r.object},
                               {"predicate", r.predicate}});
    scenes.push_back(json{{"id", sc.id},
                          {"image_file", image_file},
                          {"objects", objects},
                          {"relations", relations},
                          {"principal", sc.principal}});
  }
  const json manifest = {{"schema", schema_json(dataset.schema)},
                         {"generator_seed", dataset.generator_seed},
                         {"scenes", scenes}};
  std::ofstream os(fs::path(dir) / "manifest.json");
  if (!os) throw DataError(dir + "/manifest.json: cannot open for writing");
  os << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::string& dir) {
  const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
  std::ifstream is(manifest_path);
  if (!is) throw DataError(manifest_path + ": cannot open");
  json manifest;
  try {
    is >> manifest;
  } catch (const json::exception& e) {
    throw DataError(manifest_path + ": " + std::string(e.what()));
  }
  Dataset ds;
  try {
    ds.schema = schema_from_json(manifest.at("schema"));
    ds.generator_seed = manifest.at("generator_seed").get<uint64_t>();
    std::vector<int64_t> seen_ids;
    for (const auto& js : manifest.at("scenes")) {
      Scene sc;
      sc.id = js.at("id").get<int64_t>();
      for (const auto& jo : js.at("objects"))
        sc.objects.push_back(
            {jo.at("bbox").get<BBox>(), jo.at("label").get<int>()});
      for (const auto& jr : js.at("relations"))
        sc.relations.push_back({jr.at("subject").get<int>(),
                                jr.at("object").get<int>(),
                                jr.at("predicate").get<int>()});
      sc.principal = js.at("principal").get<std::array<int, 3>>();
      sc.image = read_ppm(
          (fs::path(dir) / js.at("image_file").get<std::string>()).string());
      validate_scene(sc, ds.schema);
      seen_ids.push_back(sc.id);
      ds.scenes.push_back(std::move(sc));
    }
    std::sort(seen_ids.begin(), seen_ids.end());
    if (std::adjacent_find(seen_ids.begin(), seen_ids.end()) != seen_ids.end())
      throw DataError(manifest_path + ": duplicate scene ids");
  } catch (const json::exception& e) {
    throw DataError(manifest_path + ": " + std::string(e.what()));
  }
  return ds;
}

uint64_t dataset_hash(const std::string& dir) {
  return file_fnv((fs::path(dir) / "manifest.json").string());
}

}  // namespace vrap
