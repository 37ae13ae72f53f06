#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vrap/rng.hpp"
#include "vrap/tensor.hpp"

namespace vrap {

// Predicate indices, fixed order.
enum Predicate {
  kLeftOf = 0,
  kRightOf = 1,
  kAbove = 2,
  kBelow = 3,
  kInside = 4,
  kContains = 5,
  kOverlapping = 6,
};

struct DatasetSchema {
  int image_h = 96;
  int image_w = 96;
  int m_c = 9;  // 3 shapes x 3 colors
  int m_r = 7;
  std::vector<std::string> class_names;
  std::vector<std::string> predicate_names;

  DatasetSchema();
  uint64_t hash() const;
};

std::string schema_to_json_string(const DatasetSchema& schema);
DatasetSchema schema_from_json_string(const std::string& text);

// label = shape * 3 + color
int class_shape(int label);
int class_color(int label);
const std::vector<std::string>& shape_names();
const std::vector<std::string>& color_names();

// Fixed 8-token caption template:
// a {color} {shape} is {predicate} a {color} {shape}
std::vector<std::string> caption_tokens(int subj_label, int predicate,
                                        int obj_label,
                                        const DatasetSchema& schema);

// bbox = [x0, y0, x1, y1], integer pixels, half-open.
using BBox = std::array<int, 4>;

struct SceneObject {
  BBox bbox;
  int label;
};

struct Relation {
  int subject;
  int object;
  int predicate;
};

struct Scene {
  int64_t id = 0;
  Tensor image;  // H x W x 3, values in [0,1]
  std::vector<SceneObject> objects;        // back-to-front, largest first
  std::vector<Relation> relations;         // all ordered pairs, lexicographic
  std::array<int, 3> principal{0, 0, 0};   // (subject label, predicate, object label)

  int n() const { return static_cast<int>(objects.size()); }
};

int64_t bbox_area(const BBox& b);
double bbox_iou(const BBox& a, const BBox& b);

// Total deterministic rule. Priority: strict containment, then IoU > 0.15 ->
// overlapping, then the dominant center-displacement axis (|dx| >= |dy| wins
// horizontal). Equal centers without containment also map to overlapping so
// the antisymmetry properties hold everywhere.
int predicate_of(const BBox& a, const BBox& b);

// White background, hard-edged shapes, pure palette colors, objects drawn in
// list order (later entries overwrite earlier ones where they overlap).
Tensor render(const std::vector<SceneObject>& objects,
              const DatasetSchema& schema);

// Draws n in {2,3,4}, then objects with pairwise-distinct labels and areas;
// non-nested pairs are capped at IoU 0.5 and ~25% of later objects are placed
// strictly inside an earlier one. More than 1000 rejected draws is fatal.
Scene sample_scene(Xoshiro256& rng, const DatasetSchema& schema,
                   int64_t id = 0);

// Throws DataError when any Scene invariant is violated.
void validate_scene(const Scene& scene, const DatasetSchema& schema);

struct Dataset {
  DatasetSchema schema;
  uint64_t generator_seed = 0;
  std::vector<Scene> scenes;
};

// Scene i gets an rng seeded with the (first_id + i)-th output of
// SplitMix64(seed), so id ranges partition into independent streams.
Dataset generate_dataset(uint64_t seed, int64_t first_id, int count,
                         const DatasetSchema& schema);

// Directory layout: manifest.json + images/scene_<id>.ppm (P6, maxval 255).
void save_dataset(const std::string& dir, const Dataset& dataset);
Dataset load_dataset(const std::string& dir);

// FNV-1a of manifest.json bytes; embedded in reports for compatibility checks.
uint64_t dataset_hash(const std::string& dir);

void write_ppm(const std::string& path, const Tensor& image_hwc);
Tensor read_ppm(const std::string& path);
uint64_t file_fnv(const std::string& path);

}  // namespace vrap
