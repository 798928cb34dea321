#include "m3att/synthetic.hpp"

#include "m3att/image_io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace m3att {

namespace {

constexpr std::array<std::string_view, 3> kShapeWords = {"circle", "square", "triangle"};
constexpr std::array<std::string_view, 4> kColorWords = {"red", "green", "blue", "yellow"};
constexpr std::array<std::string_view, 2> kSizeWords = {"small", "large"};

constexpr double kSquareHalf = 0.85;       // half side / radius
constexpr double kTriangleCircum = 1.21;   // circumradius / radius

constexpr std::array<std::array<double, 3>, 4> kColorValues = {{
    {1.0, 0.0, 0.0},
    {0.0, 1.0, 0.0},
    {0.0, 0.0, 1.0},
    {1.0, 1.0, 0.0},
}};

double nominal_radius(SizeClass s, std::size_t canvas) {
  return (s == SizeClass::kSmall ? 0.12 : 0.2) * static_cast<double>(canvas);
}

std::size_t pick(Rng& rng, std::size_t n) { return static_cast<std::size_t>(rng.next() % n); }

double cross(double ax, double ay, double bx, double by, double px, double py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

std::vector<Descriptor> head_forms(const SceneObject& o) {
  return {
      {std::nullopt, std::nullopt, o.shape},
      {std::nullopt, o.color, o.shape},
      {o.size, std::nullopt, o.shape},
      {o.size, o.color, o.shape},
  };
}

std::vector<Descriptor> anchor_forms(const SceneObject& o) {
  return {{std::nullopt, std::nullopt, o.shape}, {std::nullopt, o.color, o.shape}};
}

std::string id_name(std::size_t id) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06zu", id);
  return buf;
}

}  // namespace

double bounding_radius(const SceneObject& o) {
  switch (o.shape) {
    case ShapeKind::kCircle: return o.radius;
    case ShapeKind::kSquare: return o.radius * kSquareHalf * std::sqrt(2.0);
    case ShapeKind::kTriangle: return o.radius * kTriangleCircum;
  }
  return o.radius;
}

bool covers(const SceneObject& o, double px, double py) {
  const double dx = px - o.cx;
  const double dy = py - o.cy;
  switch (o.shape) {
    case ShapeKind::kCircle:
      return dx * dx + dy * dy <= o.radius * o.radius;
    case ShapeKind::kSquare: {
      const double h = o.radius * kSquareHalf;
      return std::abs(dx) <= h && std::abs(dy) <= h;
    }
    case ShapeKind::kTriangle: {
      // Apex up; vertices at -90, 30 and 150 degrees.
      const double r = o.radius * kTriangleCircum;
      const double s = std::sqrt(3.0) / 2.0;
      const double ax = o.cx, ay = o.cy - r;
      const double bx = o.cx + r * s, by = o.cy + r / 2.0;
      const double cx = o.cx - r * s, cy = o.cy + r / 2.0;
      const double d1 = cross(ax, ay, bx, by, px, py);
      const double d2 = cross(bx, by, cx, cy, px, py);
      const double d3 = cross(cx, cy, ax, ay, px, py);
      return d1 >= 0.0 && d2 >= 0.0 && d3 >= 0.0;
    }
  }
  return false;
}

bool matches(const SceneObject& o, const Descriptor& d) {
  return o.shape == d.shape && (!d.color || *d.color == o.color) &&
         (!d.size || *d.size == o.size);
}

bool related(const SceneObject& a, Relation r, const SceneObject& b) {
  switch (r) {
    case Relation::kLeftOf: return a.cx < b.cx - kRelationMargin;
    case Relation::kRightOf: return a.cx > b.cx + kRelationMargin;
    case Relation::kAbove: return a.cy < b.cy - kRelationMargin;
    case Relation::kBelow: return a.cy > b.cy + kRelationMargin;
  }
  return false;
}

std::vector<std::size_t> resolve(const Scene& scene, const Expression& e) {
  std::vector<std::size_t> hits;
  if (!e.relation) {
    for (std::size_t i = 0; i < scene.objects.size(); ++i)
      if (matches(scene.objects[i], e.head)) hits.push_back(i);
    return hits;
  }
  std::vector<std::size_t> anchors;
  for (std::size_t i = 0; i < scene.objects.size(); ++i)
    if (matches(scene.objects[i], e.anchor)) anchors.push_back(i);
  if (anchors.size() != 1) return hits;
  const auto& anchor = scene.objects[anchors.front()];
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    if (i == anchors.front()) continue;
    if (matches(scene.objects[i], e.head) && related(scene.objects[i], *e.relation, anchor))
      hits.push_back(i);
  }
  return hits;
}

std::vector<std::string> words(const Expression& e) {
  std::vector<std::string> w{"the"};
  if (e.head.size) w.emplace_back(kSizeWords[static_cast<std::size_t>(*e.head.size)]);
  if (e.head.color) w.emplace_back(kColorWords[static_cast<std::size_t>(*e.head.color)]);
  w.emplace_back(kShapeWords[static_cast<std::size_t>(e.head.shape)]);
  if (e.relation) {
    switch (*e.relation) {
      case Relation::kLeftOf: w.insert(w.end(), {"left", "of"}); break;
      case Relation::kRightOf: w.insert(w.end(), {"right", "of"}); break;
      case Relation::kAbove: w.emplace_back("above"); break;
      case Relation::kBelow: w.emplace_back("below"); break;
    }
    w.emplace_back("the");
    if (e.anchor.color) w.emplace_back(kColorWords[static_cast<std::size_t>(*e.anchor.color)]);
    w.emplace_back(kShapeWords[static_cast<std::size_t>(e.anchor.shape)]);
  }
  return w;
}

std::string to_text(const Expression& e) {
  std::string s;
  for (const auto& w : words(e)) s += (s.empty() ? "" : " ") + w;
  return s;
}

Expression parse_expression(const std::vector<std::string>& w) {
  std::size_t i = 0;
  auto fail = [&](const std::string& why) -> GenerationError {
    return GenerationError("expression outside grammar at word " + std::to_string(i) + ": " +
                           why);
  };
  auto find = [](const auto& table, const std::string& word) -> std::optional<std::size_t> {
    for (std::size_t k = 0; k < table.size(); ++k)
      if (table[k] == word) return k;
    return std::nullopt;
  };
  auto expect = [&](std::string_view word) {
    if (i >= w.size() || w[i] != word) throw fail("expected '" + std::string(word) + "'");
    ++i;
  };
  auto descriptor = [&](bool allow_size) {
    Descriptor d;
    if (allow_size && i < w.size())
      if (auto s = find(kSizeWords, w[i])) d.size = static_cast<SizeClass>(*s), ++i;
    if (i < w.size())
      if (auto c = find(kColorWords, w[i])) d.color = static_cast<Color>(*c), ++i;
    if (i >= w.size()) throw fail("missing shape");
    auto s = find(kShapeWords, w[i]);
    if (!s) throw fail("expected a shape, got '" + w[i] + "'");
    d.shape = static_cast<ShapeKind>(*s);
    ++i;
    return d;
  };
  Expression e;
  expect("the");
  e.head = descriptor(true);
  if (i == w.size()) return e;
  if (w[i] == "left" || w[i] == "right") {
    e.relation = w[i] == "left" ? Relation::kLeftOf : Relation::kRightOf;
    ++i;
    expect("of");
  } else if (w[i] == "above" || w[i] == "below") {
    e.relation = w[i] == "above" ? Relation::kAbove : Relation::kBelow;
    ++i;
  } else {
    throw fail("expected a relation, got '" + w[i] + "'");
  }
  expect("the");
  e.anchor = descriptor(false);
  if (i != w.size()) throw fail("trailing words");
  return e;
}

std::optional<Expression> shortest_expression(const Scene& scene, std::size_t target,
                                              std::size_t max_words) {
  if (target >= scene.objects.size()) throw GenerationError("target index out of range");
  const auto& t = scene.objects[target];
  std::vector<Expression> candidates;
  for (const auto& head : head_forms(t)) candidates.push_back({head, std::nullopt, {}});
  for (const auto& head : head_forms(t))
    for (std::size_t a = 0; a < scene.objects.size(); ++a) {
      if (a == target) continue;
      for (Relation r : {Relation::kLeftOf, Relation::kRightOf, Relation::kAbove,
                         Relation::kBelow}) {
        if (!related(t, r, scene.objects[a])) continue;
        for (const auto& anchor : anchor_forms(scene.objects[a]))
          candidates.push_back({head, r, anchor});
      }
    }
  std::stable_sort(candidates.begin(), candidates.end(), [](const auto& x, const auto& y) {
    return words(x).size() < words(y).size();
  });
  for (const auto& e : candidates) {
    if (words(e).size() > max_words) break;
    const auto hits = resolve(scene, e);
    if (hits.size() == 1 && hits.front() == target) return e;
  }
  return std::nullopt;
}

const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> v = {
      "<pad>", "the",    "red",    "green",    "blue", "yellow", "small", "large",
      "circle", "square", "triangle", "left", "right", "of",     "above", "below"};
  return v;
}

int token_id(std::string_view word) {
  const auto& v = vocabulary();
  for (std::size_t i = 0; i < v.size(); ++i)
    if (v[i] == word) return static_cast<int>(i);
  throw GenerationError("word '" + std::string(word) + "' is not in the vocabulary");
}

std::vector<int> encode_tokens(const std::vector<std::string>& w, std::size_t length) {
  if (w.size() > length)
    throw GenerationError("expression of " + std::to_string(w.size()) +
                          " words exceeds token length " + std::to_string(length));
  std::vector<int> ids(length, 0);
  for (std::size_t i = 0; i < w.size(); ++i) ids[i] = token_id(w[i]);
  return ids;
}

Scene generate_scene(std::uint64_t seed, std::size_t canvas, std::size_t max_words) {
  if (canvas < 16) throw GenerationError("canvas must be at least 16 pixels");
  Rng rng(seed, "scene");
  for (std::size_t attempt = 0; attempt < kMaxPlacementAttempts; ++attempt) {
    Scene s;
    s.canvas = canvas;
    s.seed = seed;
    const std::size_t count = 2 + pick(rng, 3);
    bool ok = true;
    for (std::size_t k = 0; k < count && ok; ++k) {
      SceneObject o;
      o.shape = static_cast<ShapeKind>(pick(rng, 3));
      o.color = static_cast<Color>(pick(rng, 4));
      o.size = static_cast<SizeClass>(pick(rng, 2));
      o.radius = nominal_radius(o.size, canvas);
      const double b = bounding_radius(o);
      o.cx = rng.uniform(b, static_cast<double>(canvas) - b);
      o.cy = rng.uniform(b, static_cast<double>(canvas) - b);
      for (const auto& other : s.objects)
        if (std::hypot(o.cx - other.cx, o.cy - other.cy) <= b + bounding_radius(other))
          ok = false;
      s.objects.push_back(o);
    }
    if (!ok) continue;
    for (std::size_t t = 0; t < s.objects.size(); ++t)
      if (shortest_expression(s, t, max_words)) return s;
  }
  throw GenerationError("no valid scene for seed " + std::to_string(seed) + " within " +
                        std::to_string(kMaxPlacementAttempts) + " attempts");
}

std::vector<double> render_image(const Scene& scene) {
  const std::size_t s = scene.canvas;
  std::vector<double> img(3 * s * s, 0.0);
  for (const auto& o : scene.objects) {
    const auto& rgb = kColorValues[static_cast<std::size_t>(o.color)];
    for (std::size_t y = 0; y < s; ++y)
      for (std::size_t x = 0; x < s; ++x)
        if (covers(o, x + 0.5, y + 0.5))
          for (std::size_t c = 0; c < 3; ++c) img[(c * s + y) * s + x] = rgb[c];
  }
  return img;
}

std::vector<std::uint8_t> render_mask(const Scene& scene, std::size_t index) {
  const std::size_t s = scene.canvas;
  const auto& o = scene.objects.at(index);
  std::vector<std::uint8_t> m(s * s, 0);
  for (std::size_t y = 0; y < s; ++y)
    for (std::size_t x = 0; x < s; ++x) m[y * s + x] = covers(o, x + 0.5, y + 0.5) ? 1 : 0;
  return m;
}

Sample generate_sample(std::uint64_t seed, std::size_t index, std::size_t canvas,
                       std::size_t tokens) {
  Rng mix(seed, "sample/" + std::to_string(index));
  const std::uint64_t scene_seed = mix.next();
  Sample out;
  out.id = index;
  out.scene = generate_scene(scene_seed, canvas, tokens);
  std::vector<std::pair<std::size_t, Expression>> describable;
  for (std::size_t t = 0; t < out.scene.objects.size(); ++t)
    if (auto e = shortest_expression(out.scene, t, tokens)) describable.emplace_back(t, *e);
  const auto& [target, expr] = describable[pick(mix, describable.size())];
  out.target = target;
  out.expression = to_text(expr);
  out.tokens = encode_tokens(words(expr), tokens);
  out.image = render_image(out.scene);
  out.mask = render_mask(out.scene, target);
  const auto on = std::count(out.mask.begin(), out.mask.end(), 1);
  if (on == 0 || static_cast<std::size_t>(on) == out.mask.size())
    throw GenerationError("degenerate mask for sample " + std::to_string(index));
  return out;
}

std::vector<bool> validation_split(std::size_t n) {
  std::vector<std::pair<std::uint64_t, std::size_t>> keyed(n);
  for (std::size_t i = 0; i < n; ++i) keyed[i] = {fnv1a64("id:" + std::to_string(i)), i};
  std::sort(keyed.begin(), keyed.end());
  std::vector<bool> val(n, false);
  for (std::size_t k = 0; k < n / 10; ++k) val[keyed[k].second] = true;
  return val;
}

std::filesystem::path generate_dataset(const DatasetOptions& options,
                                       const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  if (options.n == 0) throw GenerationError("n must be positive");
  std::error_code ec;
  if (fs::exists(out_dir) && !fs::is_empty(out_dir)) {
    if (!options.force)
      throw GenerationError("refusing to overwrite existing directory " + out_dir.string() +
                            " (pass --force)");
    fs::remove_all(out_dir / "images", ec);
    fs::remove_all(out_dir / "masks", ec);
    fs::remove(out_dir / "manifest.tsv", ec);
  }
  for (const auto& d : {out_dir, out_dir / "images", out_dir / "masks"}) {
    fs::create_directories(d, ec);
    if (ec) throw GenerationError("cannot create " + d.string() + ": " + ec.message());
  }

  const auto val = validation_split(options.n);
  std::ostringstream manifest;
  manifest << "# m3att synthetic grounding " << kGrammarVersion << '\n'
           << "# n=" << options.n << " size=" << options.canvas << " seed=" << options.seed
           << " tokens=" << options.tokens << '\n'
           << "# vocab=";
  for (std::size_t i = 0; i < vocabulary().size(); ++i)
    manifest << (i ? " " : "") << vocabulary()[i];
  manifest << "\nid\texpression\ttokens\ttarget\timage\tmask\tsplit\n";

  const std::size_t s = options.canvas;
  for (std::size_t i = 0; i < options.n; ++i) {
    const Sample sample = generate_sample(options.seed, i, s, options.tokens);
    const std::string image_rel = "images/" + id_name(i) + ".ppm";
    const std::string mask_rel = "masks/" + id_name(i) + ".pgm";

    Raster img{s, s, 3, std::vector<std::uint8_t>(3 * s * s)};
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < s * s; ++p)
        img.pixels[p * 3 + c] =
            static_cast<std::uint8_t>(std::lround(sample.image[c * s * s + p] * 255.0));
    Raster mask{s, s, 1, std::vector<std::uint8_t>(s * s)};
    for (std::size_t p = 0; p < s * s; ++p) mask.pixels[p] = sample.mask[p] ? 255 : 0;
    try {
      write_netpbm(out_dir / image_rel, img);
      write_netpbm(out_dir / mask_rel, mask);
    } catch (const ImageError& e) {
      throw GenerationError(e.what());
    }

    manifest << i << '\t' << sample.expression << '\t';
    for (std::size_t k = 0; k < sample.tokens.size(); ++k)
      manifest << (k ? " " : "") << sample.tokens[k];
    manifest << '\t' << sample.target << '\t' << image_rel << '\t' << mask_rel << '\t'
             << (val[i] ? "val" : "train") << '\n';
  }

  const auto path = out_dir / "manifest.tsv";
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw GenerationError("cannot write " + path.string());
  out << manifest.str();
  if (!out) throw GenerationError("write failed for " + path.string());
  return path;
}

const std::vector<Sample>& Dataset::split(std::string_view name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  throw GenerationError("unknown split '" + std::string(name) + "' (expected train or val)");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.tsv";
  std::ifstream in(path);
  if (!in) throw GenerationError("cannot read manifest " + path.string());
  Dataset d;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  auto bad = [&](const std::string& why) {
    return GenerationError(path.string() + ":" + std::to_string(line_no) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream fields(line.substr(1));
      std::string kv;
      while (fields >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = kv.substr(0, eq);
        const std::string value = kv.substr(eq + 1);
        if (key == "size") d.canvas = std::stoul(value);
        else if (key == "tokens") d.tokens = std::stoul(value);
        else if (key == "seed") d.seed = std::stoull(value);
      }
      continue;
    }
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    std::vector<std::string> cols;
    std::istringstream row(line);
    std::string col;
    while (std::getline(row, col, '\t')) cols.push_back(col);
    if (cols.size() != 7) throw bad("expected 7 columns");
    if (d.canvas == 0 || d.tokens == 0) throw bad("manifest header lacks size/tokens");
    Sample s;
    s.id = std::stoul(cols[0]);
    s.expression = cols[1];
    std::istringstream ids(cols[2]);
    int id = 0;
    while (ids >> id) s.tokens.push_back(id);
    if (s.tokens.size() != d.tokens) throw bad("token count mismatch");
    s.target = std::stoul(cols[3]);
    s.val = cols[6] == "val";
    Raster img;
    Raster mask;
    try {
      img = read_netpbm(dir / cols[4]);
      mask = read_netpbm(dir / cols[5]);
    } catch (const ImageError& e) {
      throw GenerationError(e.what());
    }
    const std::size_t n = d.canvas;
    if (img.channels != 3 || img.width != n || img.height != n || mask.channels != 1 ||
        mask.width != n || mask.height != n)
      throw bad("raster dimensions do not match the manifest");
    s.image.resize(3 * n * n);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < n * n; ++p)
        s.image[c * n * n + p] = img.pixels[p * 3 + c] / 255.0;
    s.mask.resize(n * n);
    for (std::size_t p = 0; p < n * n; ++p) s.mask[p] = mask.pixels[p] >= 128 ? 1 : 0;
    (s.val ? d.val : d.train).push_back(std::move(s));
  }
  if (d.train.empty() && d.val.empty()) throw GenerationError(path.string() + ": no samples");
  return d;
}

}  // namespace m3att
