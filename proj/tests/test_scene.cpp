#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "json.hpp"
#include "vrap/errors.hpp"
#include "vrap/scene.hpp"

using namespace vrap;
using nlohmann::json;
namespace fs = std::filesystem;

TEST_CASE("predicate_of rule examples") {
  CHECK(predicate_of({10, 10, 30, 30}, {50, 10, 70, 30}) == kLeftOf);
  CHECK(predicate_of({10, 10, 60, 60}, {20, 20, 40, 40}) == kContains);
  CHECK(predicate_of({20, 20, 40, 40}, {10, 10, 60, 60}) == kInside);
  // IoU = 100/1700 < 0.15, falls through to the displacement rule
  CHECK(bbox_iou({10, 10, 40, 40}, {30, 30, 60, 60}) ==
        doctest::Approx(100.0 / 1700.0));
  CHECK(predicate_of({10, 10, 40, 40}, {30, 30, 60, 60}) == kLeftOf);
}

TEST_CASE("predicate_of antisymmetry on 10000 random box pairs") {
  Xoshiro256 rng(2024);
  auto random_box = [&]() -> BBox {
    const int w = 12 + rng.uniform_int(37), h = 12 + rng.uniform_int(37);
    const int x0 = rng.uniform_int(96 - w + 1), y0 = rng.uniform_int(96 - h + 1);
    return {x0, y0, x0 + w, y0 + h};
  };
  for (int i = 0; i < 10000; ++i) {
    const BBox a = random_box(), b = random_box();
    const int ab = predicate_of(a, b), ba = predicate_of(b, a);
    switch (ab) {
      case kLeftOf: CHECK(ba == kRightOf); break;
      case kRightOf: CHECK(ba == kLeftOf); break;
      case kAbove: CHECK(ba == kBelow); break;
      case kBelow: CHECK(ba == kAbove); break;
      case kInside: CHECK(ba == kContains); break;
      case kContains: CHECK(ba == kInside); break;
      case kOverlapping: CHECK(ba == kOverlapping); break;
      default: FAIL("predicate out of range");
    }
  }
}

TEST_CASE("sample_scene is deterministic and respects invariants") {
  DatasetSchema schema;
  Xoshiro256 a(7), b(7);
  auto s1 = sample_scene(a, schema, 3);
  auto s2 = sample_scene(b, schema, 3);
  CHECK(s1.image->values == s2.image->values);
  REQUIRE(s1.objects.size() == s2.objects.size());
  for (size_t i = 0; i < s1.objects.size(); ++i) {
    CHECK(s1.objects[i].bbox == s2.objects[i].bbox);
    CHECK(s1.objects[i].label == s2.objects[i].label);
  }
  CHECK(s1.principal == s2.principal);

  Xoshiro256 rng(99);
  for (int i = 0; i < 1000; ++i) {
    auto sc = sample_scene(rng, schema, i);
    CHECK_NOTHROW(validate_scene(sc, schema));
  }
}

TEST_CASE("golden scene for seed 42") {
  DatasetSchema schema;
  Xoshiro256 rng(42);
  auto sc = sample_scene(rng, schema, 42);

  const auto tmp = fs::temp_directory_path() / "vrap_golden_check.ppm";
  write_ppm(tmp.string(), sc.image);
  char hex[32];
  std::snprintf(hex, sizeof(hex), "%016llx",
                static_cast<unsigned long long>(file_fnv(tmp.string())));

  json j;
  j["seed"] = 42;
  j["image_fnv"] = hex;
  j["principal"] = sc.principal;
  json objects = json::array();
  for (const auto& o : sc.objects)
    objects.push_back(json{{"bbox", o.bbox}, {"label", o.label}});
  j["objects"] = objects;
  json relations = json::array();
  for (const auto& r : sc.relations)
    relations.push_back(json{
        {"subject", r.subject}, {"object", r.object}, {"predicate", r.predicate}});
  j["relations"] = relations;

  const std::string golden_path =
      std::string(VRAP_SOURCE_DIR) + "/golden/scene_seed42.json";
  if (std::getenv("VRAP_WRITE_GOLDEN")) {
    std::ofstream os(golden_path);
    os << j.dump(2) << "\n";
  }
  std::ifstream is(golden_path);
  REQUIRE_MESSAGE(is.good(), "missing golden file ", golden_path);
  json want;
  is >> want;
  CHECK(j == want);
}

TEST_CASE("render") {
  DatasetSchema schema;
  SUBCASE("no objects gives an all-white image") {
    auto img = render({}, schema);
    for (float v : img->values) CHECK(v == 1.0f);
  }
  SUBCASE("red square fills its box exactly") {
    auto img = render({{{10, 20, 30, 40}, 3}}, schema);  // red square
    for (int r = 0; r < schema.image_h; ++r)
      for (int c = 0; c < schema.image_w; ++c) {
        const float* px = img->values.data() + (size_t(r) * schema.image_w + c) * 3;
        const bool in = r >= 20 && r < 40 && c >= 10 && c < 30;
        if (in) {
          CHECK(px[0] == 1.0f);
          CHECK(px[1] == 0.0f);
          CHECK(px[2] == 0.0f);
        } else {
          CHECK(px[0] == 1.0f);
          CHECK(px[1] == 1.0f);
          CHECK(px[2] == 1.0f);
        }
      }
  }
  SUBCASE("later-listed object overwrites earlier in the intersection") {
    auto img = render({{{0, 0, 40, 40}, 4},     // green square, back
                       {{20, 20, 60, 60}, 3}},  // red square, front
                      schema);
    const float* px = img->values.data() + (size_t(25) * schema.image_w + 25) * 3;
    CHECK(px[0] == 1.0f);
    CHECK(px[1] == 0.0f);
    CHECK(px[2] == 0.0f);
    const float* back = img->values.data() + (size_t(5) * schema.image_w + 5) * 3;
    CHECK(back[1] == 1.0f);
  }
}

TEST_CASE("dataset save/load round-trip") {
  DatasetSchema schema;
  auto ds = generate_dataset(11, 100, 10, schema);
  const auto dir = fs::temp_directory_path() / "vrap_ds_roundtrip";
  fs::remove_all(dir);
  save_dataset(dir.string(), ds);
  auto back = load_dataset(dir.string());

  REQUIRE(back.scenes.size() == ds.scenes.size());
  CHECK(back.generator_seed == ds.generator_seed);
  int ppm_count = 0;
  for (const auto& e : fs::directory_iterator(dir / "images")) {
    (void)e;
    ppm_count++;
  }
  CHECK(ppm_count == 10);

  for (size_t i = 0; i < ds.scenes.size(); ++i) {
    const auto& a = ds.scenes[i];
    const auto& b = back.scenes[i];
    CHECK(a.id == b.id);
    REQUIRE(a.objects.size() == b.objects.size());
    for (size_t k = 0; k < a.objects.size(); ++k) {
      CHECK(a.objects[k].bbox == b.objects[k].bbox);
      CHECK(a.objects[k].label == b.objects[k].label);
    }
    REQUIRE(a.relations.size() == b.relations.size());
    for (size_t k = 0; k < a.relations.size(); ++k) {
      CHECK(a.relations[k].subject == b.relations[k].subject);
      CHECK(a.relations[k].object == b.relations[k].object);
      CHECK(a.relations[k].predicate == b.relations[k].predicate);
    }
    CHECK(a.principal == b.principal);
    REQUIRE(a.image->numel() == b.image->numel());
    for (int64_t k = 0; k < a.image->numel(); ++k)
      CHECK(std::abs(a.image->values[k] - b.image->values[k]) <=
            1.0f / 255.0f + 1e-6f);
  }

  SUBCASE("missing manifest is fatal and names the file") {
    try {
      load_dataset((dir / "nope").string());
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("manifest.json") != std::string::npos);
    }
  }
}

TEST_CASE("id ranges partition into disjoint splits") {
  DatasetSchema schema;
  auto a = generate_dataset(5, 0, 20, schema);
  auto b = generate_dataset(5, 20, 20, schema);
  std::set<int64_t> ids;
  for (const auto& s : a.scenes) ids.insert(s.id);
  for (const auto& s : b.scenes) ids.insert(s.id);
  CHECK(ids.size() == 40);
}

TEST_CASE("caption template") {
  DatasetSchema schema;
  // red circle (label 0) left_of blue square (label 5)
  auto toks = caption_tokens(0, kLeftOf, 5, schema);
  REQUIRE(toks.size() == 8);
  CHECK(toks == std::vector<std::string>{"a", "red", "circle", "is", "left_of",
                                         "a", "blue", "square"});
}
