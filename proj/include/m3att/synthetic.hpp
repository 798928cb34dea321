#pragma once

// Synthetic referring-segmentation data: scenes of colored shapes on a dark
// canvas, a shortest uniquely-resolving expression for one target object,
// and the target's exact pixel mask.
//
// Grammar v1:
//   expr   := "the" desc [relation "the" anchor]
//   desc   := [size] [color] shape
//   anchor := [color] shape
//   relation := "left of" | "right of" | "above" | "below"

#include "m3att/nn.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace m3att {

inline constexpr std::string_view kGrammarVersion = "v1";

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ShapeKind { kCircle, kSquare, kTriangle };
enum class Color { kRed, kGreen, kBlue, kYellow };
enum class SizeClass { kSmall, kLarge };
enum class Relation { kLeftOf, kRightOf, kAbove, kBelow };

struct SceneObject {
  ShapeKind shape = ShapeKind::kCircle;
  Color color = Color::kRed;
  SizeClass size = SizeClass::kSmall;
  double cx = 0.0;  // pixel coordinates, y grows downward
  double cy = 0.0;
  double radius = 0.0;  // nominal radius; see bounding_radius
};

double bounding_radius(const SceneObject& o);
// Whether the point (px, py) lies inside the rendered object.
bool covers(const SceneObject& o, double px, double py);

struct Scene {
  std::size_t canvas = 32;
  std::vector<SceneObject> objects;
  std::uint64_t seed = 0;
};

inline constexpr std::size_t kMaxPlacementAttempts = 1000;
inline constexpr double kRelationMargin = 2.0;

// Deterministic in (seed, canvas). Throws GenerationError when no valid scene
// is found within the attempt budget.
Scene generate_scene(std::uint64_t seed, std::size_t canvas = 32, std::size_t max_words = 8);

struct Descriptor {
  std::optional<SizeClass> size;
  std::optional<Color> color;
  ShapeKind shape = ShapeKind::kCircle;
};

struct Expression {
  Descriptor head;
  std::optional<Relation> relation;
  Descriptor anchor;  // meaningful only with a relation; size unused
};

bool matches(const SceneObject& o, const Descriptor& d);
bool related(const SceneObject& a, Relation r, const SceneObject& b);

// Every object the expression denotes (brute force over the scene). A
// relational expression requires its anchor to denote exactly one object.
std::vector<std::size_t> resolve(const Scene& scene, const Expression& e);

std::vector<std::string> words(const Expression& e);
std::string to_text(const Expression& e);
// Inverse of words(); throws GenerationError on text outside the grammar.
Expression parse_expression(const std::vector<std::string>& words);

// The shortest expression of at most max_words words resolving to exactly
// the target, or nullopt.
std::optional<Expression> shortest_expression(const Scene& scene, std::size_t target,
                                              std::size_t max_words);

// Fixed vocabulary; id 0 is the pad token.
const std::vector<std::string>& vocabulary();
int token_id(std::string_view word);
std::vector<int> encode_tokens(const std::vector<std::string>& words, std::size_t length);

struct Sample {
  std::size_t id = 0;
  std::string expression;
  std::vector<int> tokens;          // padded
  std::size_t target = 0;
  std::vector<double> image;        // [3,S,S] in [0,1]
  std::vector<std::uint8_t> mask;   // [S,S] in {0,1}
  bool val = false;
  Scene scene;
};

std::vector<double> render_image(const Scene& scene);
std::vector<std::uint8_t> render_mask(const Scene& scene, std::size_t index);

// Pure function of (seed, index).
Sample generate_sample(std::uint64_t seed, std::size_t index, std::size_t canvas,
                       std::size_t tokens);

// The n/10 ids with the smallest hash form the validation split.
std::vector<bool> validation_split(std::size_t n);

struct DatasetOptions {
  std::size_t n = 2000;
  std::size_t canvas = 32;
  std::uint64_t seed = 1;
  std::size_t tokens = 8;
  bool force = false;
};

// Writes images/, masks/ and manifest.tsv; returns the manifest path.
std::filesystem::path generate_dataset(const DatasetOptions& options,
                                       const std::filesystem::path& out_dir);

struct Dataset {
  std::size_t canvas = 0;
  std::size_t tokens = 0;
  std::uint64_t seed = 0;
  std::vector<Sample> train;
  std::vector<Sample> val;

  const std::vector<Sample>& split(std::string_view name) const;
};

Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace m3att
