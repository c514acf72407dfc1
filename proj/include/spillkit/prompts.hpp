#pragma once

#include <algorithm>
#include <cctype>
#include <string>
#include <string_view>
#include <vector>

#include "spillkit/error.hpp"
#include "spillkit/geometry.hpp"
#include "spillkit/util.hpp"

namespace spillkit {

namespace prompts {

inline constexpr std::string_view kScenePositive =
    "A factory interior, close-up of industrial equipment, image captured via a colored high-quality high-end "
    "inspection camera, clear mechanical details, realistic metallic textures, authentic lighting, natural industrial "
    "setting, accurate machinery components, subtle equipment variations, realistic wear and tear.";

inline constexpr std::string_view kSceneNegative =
    "Text, watermark, low quality, jitter, nsfw, stickers, labels, blurred details, distorted equipment, cartoonish "
    "or unrealistic textures, unnatural colors, overly bright lighting, irrelevant objects, human presence, animals, "
    "plants, visible text, duplicated or repeated elements, unrealistic proportions, overly polished surfaces, "
    "plastic-like or artificial appearance.";

inline constexpr std::string_view kOilSpillPositive =
    "Realistic oil spill in factory with brown or black stains, industrial scene with dark oil leakage stains, "
    "brown-black oily patch on factory floor, factory oil spill with realistic black sludge, realistic factory "
    "environment with oil smears, black or brown oil leakage on industrial surface, dirty oil-stained floor in "
    "realistic factory, blackened spill area in a manufacturing plant, authentic oil spill marks on brown concrete, "
    "industrial realism with black or brown oil spill.";

inline constexpr std::string_view kInpaintNegative =
    "Cartoon, anime, illustration, painting, drawing, lowres, blurry, pixelated, overexposed, unrealistic, stylized, "
    "clipart, animated, text, watermark, signature, frame, border, extra limbs, distorted hands, shiny, plastic, "
    "toy-like, glossy, yellow tint, white overlay, newspaper texture, poster art, human figures, fingers, deformed "
    "body parts, 3D render, CGI, artifact, sketch.";

inline constexpr std::string_view kInspectorSystem =
    "You are a certified industrial safety inspector specializing in hazardous spill, leak, and stain detection "
    "across factories and energy plants. Only report verifiable safety hazards. Do not guess or speculate.";

inline constexpr std::string_view kClassPlaceholder = "<class>";

inline constexpr std::string_view kDetectUserPattern =
    "Detect and return the bounding-box coordinates of the <class> in COCO JSON format, if present.";

/// Appended to the detection request so the model reports a confidence.
inline constexpr std::string_view kScoreHint = " Include a \"score\" between 0 and 1 for each box.";

/// Generic inpainting prompt for classes without a dedicated bank entry.
inline std::string generic_inpaint_positive(std::string_view class_name) {
  std::string readable(class_name);
  std::replace(readable.begin(), readable.end(), '-', ' ');
  return "Realistic " + readable + " in factory, industrial scene with a " + readable +
         " on the floor, authentic surface texture, realistic lighting, industrial realism.";
}

}  // namespace prompts

struct ClassInfo {
  ClassId id = 0;
  std::string name;
  std::string inpaint_positive;
  std::string inpaint_negative;
};

/// The eight-slot anomaly class registry. Three slots carry the named classes;
/// the remaining five are configurable placeholders.
class ClassRegistry {
 public:
  ClassRegistry() = default;
  explicit ClassRegistry(std::vector<ClassInfo> classes) : classes_(std::move(classes)) {}

  static ClassRegistry defaults() {
    std::vector<ClassInfo> c;
    c.push_back({1, "oil-spill", std::string(prompts::kOilSpillPositive), std::string(prompts::kInpaintNegative)});
    for (const auto& [id, name] : std::vector<std::pair<int, std::string>>{
             {2, "floor-stain"}, {3, "chemical-discoloration"}, {4, "custom-1"}, {5, "custom-2"},
             {6, "custom-3"}, {7, "custom-4"}, {8, "custom-5"}})
      c.push_back({id, name, prompts::generic_inpaint_positive(name), std::string(prompts::kInpaintNegative)});
    return ClassRegistry(std::move(c));
  }

  const std::vector<ClassInfo>& classes() const { return classes_; }

  bool contains(ClassId id) const { return find(id) != nullptr; }

  const ClassInfo* find(ClassId id) const {
    for (const auto& c : classes_)
      if (c.id == id) return &c;
    return nullptr;
  }

  const ClassInfo* find(std::string_view name) const {
    for (const auto& c : classes_)
      if (c.name == name) return &c;
    return nullptr;
  }

  const ClassInfo& at(ClassId id) const {
    if (const auto* c = find(id)) return *c;
    throw Error(Errc::validation, "class id " + std::to_string(id) + " is not registered");
  }

 private:
  std::vector<ClassInfo> classes_;
};

inline json to_json(const ClassRegistry& r) {
  json arr = json::array();
  for (const auto& c : r.classes())
    arr.push_back({{"id", c.id}, {"name", c.name}, {"inpaint_positive", c.inpaint_positive}, {"inpaint_negative", c.inpaint_negative}});
  return arr;
}

inline ClassRegistry registry_from_json(const json& arr) {
  std::vector<ClassInfo> out;
  for (const auto& j : arr) {
    ClassInfo c;
    c.id = j.at("id").get<ClassId>();
    c.name = j.at("name").get<std::string>();
    c.inpaint_positive = j.value("inpaint_positive", prompts::generic_inpaint_positive(c.name));
    c.inpaint_negative = j.value("inpaint_negative", std::string(prompts::kInpaintNegative));
    for (const auto& prev : out)
      if (prev.id == c.id || prev.name == c.name)
        throw Error(Errc::validation, "class registry entry '" + c.name + "' is duplicated");
    out.push_back(std::move(c));
  }
  return ClassRegistry(std::move(out));
}

}  // namespace spillkit
