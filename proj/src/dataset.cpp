#include "tamperseg/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tamperseg/common.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace tamperseg {

const std::vector<std::string>& noun_list() {
  static const std::vector<std::string> nouns = {
      "apple", "ball", "banana", "bird", "book",   "box",  "car",  "cat",
      "cup",   "dog",  "fish",   "flower", "hat",  "orange", "star", "tree"};
  return nouns;
}

const std::vector<std::string>& verb_list() {
  static const std::vector<std::string> verbs = {"edit", "change", "turn",
                                                 "replace", "recolor", "remove"};
  return verbs;
}

std::string family_name(Family f) { return f == Family::kA ? "A" : "B"; }

Family family_from_name(const std::string& s) {
  if (s == "A" || s == "a") return Family::kA;
  if (s == "B" || s == "b") return Family::kB;
  throw std::invalid_argument("unknown family: " + s);
}

namespace {

constexpr uint64_t kTagBackground = 101;
constexpr uint64_t kTagObjects = 102;
constexpr uint64_t kTagClutter = 103;

std::array<int, 3> sample_object_color(Rng& rng) {
  for (int tries = 0; tries < 64; ++tries) {
    std::array<int, 3> c = {int(rng.uniform_int(25, 225)), int(rng.uniform_int(25, 225)),
                            int(rng.uniform_int(25, 225))};
    int hi = std::max({c[0], c[1], c[2]});
    int lo = std::min({c[0], c[1], c[2]});
    if (hi - lo >= 50) return c;
  }
  return {200, 60, 60};
}

// Appearance-tied class identity: each name denotes one (shape, color-bucket)
// pair, so an object's class is recoverable from its pixels. Without this the
// instruction targets would be arbitrary labels and predicting them on held-out
// scenes would be impossible, turning the language loss into pure memorization.
constexpr int kNumBuckets = 3;
const char* kClassNouns[3][kNumBuckets] = {
    {"box", "book", "car"},    // rectangles: red, green, blue
    {"apple", "ball", "cup"},  // circles
    {"hat", "tree", "star"},   // triangles
};
const std::array<int, 3> kBucketBase[kNumBuckets] = {
    {200, 60, 60}, {60, 180, 70}, {60, 90, 200}};

std::string class_noun(Shape s, int bucket) { return kClassNouns[int(s)][bucket]; }

bool combo_for_noun(const std::string& name, Shape* shape, int* bucket) {
  for (int s = 0; s < 3; ++s)
    for (int b = 0; b < kNumBuckets; ++b)
      if (name == kClassNouns[s][b]) {
        *shape = Shape(s);
        *bucket = b;
        return true;
      }
  return false;
}

// bucket anchor plus per-channel jitter; buckets stay >= 64 apart in L-inf
std::array<int, 3> bucket_color(int bucket, Rng& rng) {
  std::array<int, 3> c = kBucketBase[bucket];
  for (int i = 0; i < 3; ++i) c[i] += int(rng.uniform_int(-25, 25));
  return c;
}

int color_dist(const std::array<int, 3>& a, const std::array<int, 3>& b) {
  int d = 0;
  for (int i = 0; i < 3; ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

// Places a box of the given size inside [margin, H-margin) x [margin, W-margin)
// that keeps a 1px gap from every box in `taken`. Returns false if it fails.
bool place_box(Rng& rng, int H, int W, int bh, int bw, const std::vector<Box>& taken,
               int tries, Box* out) {
  const int margin = 2;
  if (bh + 2 * margin > H || bw + 2 * margin > W) return false;
  for (int t = 0; t < tries; ++t) {
    Box b;
    b.h = bh;
    b.w = bw;
    b.y0 = int(rng.uniform_int(margin, H - margin - bh));
    b.x0 = int(rng.uniform_int(margin, W - margin - bw));
    Box grown{b.y0 - 1, b.x0 - 1, b.h + 2, b.w + 2};
    bool ok = true;
    for (const Box& o : taken) {
      if (grown.overlaps(o)) {
        ok = false;
        break;
      }
    }
    if (ok) {
      *out = b;
      return true;
    }
  }
  return false;
}

bool in_triangle(double py, double px, double ay, double ax, double by, double bx,
                 double cy, double cx) {
  auto side = [](double y, double x, double y1, double x1, double y2, double x2) {
    return (x - x2) * (y1 - y2) - (x1 - x2) * (y - y2);
  };
  double d1 = side(py, px, ay, ax, by, bx);
  double d2 = side(py, px, by, bx, cy, cx);
  double d3 = side(py, px, cy, cx, ay, ax);
  bool has_neg = (d1 < 0) || (d2 < 0) || (d3 < 0);
  bool has_pos = (d1 > 0) || (d2 > 0) || (d3 > 0);
  return !(has_neg && has_pos);
}

bool object_hit(const SceneObject& obj, int y, int x) {
  const Box& b = obj.bbox;
  switch (obj.shape) {
    case Shape::kRect:
      return true;
    case Shape::kCircle: {
      double cy = b.y0 + b.h / 2.0, cx = b.x0 + b.w / 2.0;
      double rad = std::min(b.h, b.w) / 2.0;
      double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
      return dy * dy + dx * dx <= rad * rad;
    }
    case Shape::kTriangle:
      return in_triangle(y + 0.5, x + 0.5, b.y0 + 0.5, b.x0 + b.w / 2.0,
                         b.y0 + b.h - 0.5, b.x0 + 0.5, b.y0 + b.h - 0.5,
                         b.x0 + b.w - 0.5);
  }
  return false;
}

void fill_object(ImageF& img, const SceneObject& obj) {
  const Box& b = obj.bbox;
  double r = obj.color[0] / 255.0, g = obj.color[1] / 255.0, bl = obj.color[2] / 255.0;
  for (int y = b.y0; y < b.y0 + b.h; ++y) {
    for (int x = b.x0; x < b.x0 + b.w; ++x) {
      if (object_hit(obj, y, x)) {
        img.at(y, x, 0) = r;
        img.at(y, x, 1) = g;
        img.at(y, x, 2) = bl;
      }
    }
  }
}

// Operation-keyed fingerprints: every family-A edit leaves a +/-amp
// micro-pattern specific to its operation. All four patterns are
// high-frequency and mutually distinguishable within a 4x4 window.
double op_delta(EditOp op, int y, int x, int amp) {
  int bit = 0;
  switch (op) {
    case EditOp::kReplace: bit = (y + x) & 1; break;         // fine checker
    case EditOp::kRecolor: bit = y & 1; break;               // horizontal lines
    case EditOp::kRemove:  bit = x & 1; break;               // vertical lines
    case EditOp::kInsert:  bit = ((y >> 1) + (x >> 1)) & 1;  // coarse checker
  }
  return (bit ? amp : -amp) / 255.0;
}

// depth of (y, x) inside box b: 0 on the border, growing inward
int inset_depth(const Box& b, int y, int x) {
  return std::min(std::min(y - b.y0, b.y0 + b.h - 1 - y),
                  std::min(x - b.x0, b.x0 + b.w - 1 - x));
}

// ring mode keeps the fingerprint only near the box border
bool fingerprinted(const CorpusConfig& cfg, const Box& b, int y, int x) {
  return cfg.checker_ring <= 0 || inset_depth(b, y, x) < cfg.checker_ring;
}

}  // namespace

SceneSpec generate_scene(int64_t seed, int height, int width) {
  if (height < 32 || width < 32) {
    throw std::invalid_argument("generate_scene: size must be at least 32x32");
  }
  if (seed < 0) throw std::invalid_argument("generate_scene: seed must be >= 0");

  SceneSpec scene;
  scene.seed = seed;
  scene.height = height;
  scene.width = width;

  Rng bg_rng(derive_seed(uint64_t(seed), kTagBackground));
  scene.background = int(bg_rng.uniform_int(0, 3));

  const int S = std::min(height, width);
  const int obj_lo = std::max(6, S * 25 / 100);
  const int obj_hi = std::max(obj_lo + 1, S * 44 / 100);
  const int clu_lo = std::max(4, S / 8);
  const int clu_hi = std::max(clu_lo + 1, S * 3 / 16);

  Rng rng(derive_seed(uint64_t(seed), kTagObjects));
  int n_obj = int(rng.uniform_int(2, 5));

  // (shape, bucket) combos without replacement; names stay unique per scene
  std::vector<int> class_ids(size_t(3 * kNumBuckets));
  for (size_t i = 0; i < class_ids.size(); ++i) class_ids[i] = int(i);
  for (size_t i = class_ids.size(); i > 1; --i) {
    size_t j = size_t(rng.uniform_int(0, int64_t(i) - 1));
    std::swap(class_ids[i - 1], class_ids[j]);
  }

  std::vector<Box> taken;
  for (int k = 0; k < n_obj; ++k) {
    int bh = int(rng.uniform_int(obj_lo, obj_hi));
    int bw = int(rng.uniform_int(obj_lo, obj_hi));
    Box b;
    bool placed = false;
    for (int shrink = 0; shrink < 3 && !placed; ++shrink) {
      placed = place_box(rng, height, width, bh, bw, taken, 40, &b);
      if (!placed) {
        bh = std::max(6, bh * 4 / 5);
        bw = std::max(6, bw * 4 / 5);
      }
    }
    if (!placed) continue;
    SceneObject obj;
    obj.shape = Shape(class_ids[size_t(k)] / kNumBuckets);
    int bucket = class_ids[size_t(k)] % kNumBuckets;
    obj.class_name = class_noun(obj.shape, bucket);
    obj.color = bucket_color(bucket, rng);
    obj.bbox = b;
    scene.objects.push_back(obj);
    taken.push_back(b);
  }
  if (scene.objects.size() < 2) {
    throw numeric_error("generate_scene: could not place two objects");
  }

  Rng crng(derive_seed(uint64_t(seed), kTagClutter));
  int n_clutter = int(crng.uniform_int(1, 2));
  for (int k = 0; k < n_clutter; ++k) {
    int s = int(crng.uniform_int(clu_lo, clu_hi));
    Box b;
    if (!place_box(crng, height, width, s, s, taken, 40, &b)) continue;
    ClutterPatch p;
    p.color = bucket_color(int(crng.uniform_int(0, kNumBuckets - 1)), crng);
    p.bbox = b;
    scene.clutter.push_back(p);
    taken.push_back(b);
  }
  return scene;
}

ImageF render_scene(const SceneSpec& scene, const CorpusConfig& cfg) {
  const int H = scene.height, W = scene.width;
  ImageF img(H, W, 3);

  Rng bg_rng(derive_seed(uint64_t(scene.seed), kTagBackground));
  bg_rng.uniform_int(0, 3);  // consume the texture-id draw
  auto light = [&]() {
    return std::array<int, 3>{int(bg_rng.uniform_int(160, 230)), int(bg_rng.uniform_int(160, 230)),
                              int(bg_rng.uniform_int(160, 230))};
  };
  std::array<int, 3> c0 = light(), c1 = light();
  int period = int(bg_rng.uniform_int(8, 16));

  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      double t = 0.0;
      switch (scene.background) {
        case 0: t = 0.0; break;
        case 1: t = W > 1 ? double(x) / (W - 1) : 0.0; break;
        case 2: t = H > 1 ? double(y) / (H - 1) : 0.0; break;
        case 3: t = ((y + x) / period) % 2 ? 1.0 : 0.0; break;
      }
      for (int c = 0; c < 3; ++c) {
        img.at(y, x, c) = ((1.0 - t) * c0[c] + t * c1[c]) / 255.0;
      }
    }
  }

  if (cfg.with_clutter) {
    for (const ClutterPatch& p : scene.clutter) {
      for (int y = p.bbox.y0; y < p.bbox.y0 + p.bbox.h; ++y) {
        for (int x = p.bbox.x0; x < p.bbox.x0 + p.bbox.w; ++x) {
          for (int c = 0; c < 3; ++c) img.at(y, x, c) = p.color[c] / 255.0;
        }
      }
    }
  }

  for (const SceneObject& obj : scene.objects) fill_object(img, obj);
  return img;
}

std::string render_instruction(const EditSpec& edit) {
  auto article = [](const std::string& w) {
    return (!w.empty() && std::string("aeiou").find(w[0]) != std::string::npos) ? "an" : "a";
  };
  if (edit.op == EditOp::kReplace && edit.verb == "replace") {
    return "replace " + std::string(article(edit.original_object)) + " " + edit.original_object +
           " with " + std::string(article(edit.edited_object)) + " " + edit.edited_object;
  }
  return edit.verb + " " + edit.original_object + " to " + edit.edited_object;
}

EditSpec sample_edit(const SceneSpec& scene, Family family, int64_t seed) {
  Rng rng{uint64_t(seed)};
  EditSpec edit;
  edit.family = family;
  edit.op = EditOp(rng.uniform_int(0, 3));

  auto scene_has = [&](const std::string& name) {
    for (const auto& o : scene.objects)
      if (o.class_name == name) return true;
    return false;
  };
  auto fresh_noun = [&]() {
    for (int tries = 0; tries < 64; ++tries) {
      std::string n = class_noun(Shape(rng.uniform_int(0, 2)),
                                 int(rng.uniform_int(0, kNumBuckets - 1)));
      if (!scene_has(n)) return n;
    }
    return std::string(kClassNouns[0][0]);
  };

  if (edit.op == EditOp::kInsert) {
    edit.original_object = "background";
    edit.edited_object = fresh_noun();
    static const std::vector<std::string> insert_verbs = {"edit", "change", "turn"};
    edit.verb = insert_verbs[rng.uniform_int(0, 2)];
    const int S = std::min(scene.height, scene.width);
    const int lo = std::max(6, S * 25 / 100);
    const int hi = std::max(lo + 1, S * 44 / 100);
    int bh = int(rng.uniform_int(lo, hi));
    int bw = int(rng.uniform_int(lo, hi));
    std::vector<Box> taken;
    for (const auto& o : scene.objects) taken.push_back(o.bbox);
    for (const auto& p : scene.clutter) taken.push_back(p.bbox);
    Box b;
    if (!place_box(rng, scene.height, scene.width, bh, bw, taken, 80, &b)) {
      // fall back to object-only avoidance, then to any in-bounds box
      std::vector<Box> objs_only;
      for (const auto& o : scene.objects) objs_only.push_back(o.bbox);
      if (!place_box(rng, scene.height, scene.width, bh, bw, objs_only, 80, &b)) {
        b = Box{2, 2, std::min(bh, scene.height - 4), std::min(bw, scene.width - 4)};
      }
    }
    edit.target_region = b;
    return edit;
  }

  const SceneObject& target = scene.objects[rng.uniform_int(0, int64_t(scene.objects.size()) - 1)];
  edit.original_object = target.class_name;
  edit.target_region = target.bbox;
  switch (edit.op) {
    case EditOp::kReplace: {
      edit.edited_object = fresh_noun();
      static const std::vector<std::string> replace_verbs = {"edit", "change", "turn", "replace"};
      edit.verb = replace_verbs[rng.uniform_int(0, 3)];
      break;
    }
    case EditOp::kRecolor: {
      // a recolor moves the object to another color bucket, which renames it;
      // prefer a bucket whose name is not already taken in the scene
      Shape ts;
      int tb = 0;
      if (combo_for_noun(target.class_name, &ts, &tb)) {
        std::vector<int> order;
        for (int b = 0; b < kNumBuckets; ++b)
          if (b != tb) order.push_back(b);
        if (rng.uniform_int(0, 1)) std::swap(order[0], order[1]);
        int nb = order[0];
        for (int b : order)
          if (!scene_has(class_noun(ts, b))) {
            nb = b;
            break;
          }
        edit.edited_object = class_noun(ts, nb);
      } else {
        edit.edited_object = target.class_name;
      }
      edit.verb = "recolor";
      break;
    }
    case EditOp::kRemove:
      edit.edited_object = "background";
      edit.verb = "remove";
      break;
    case EditOp::kInsert:
      break;  // handled above
  }
  return edit;
}

EditedSample apply_edit(const SceneSpec& scene, const EditSpec& edit, int64_t seed,
                        const CorpusConfig& cfg) {
  const int H = scene.height, W = scene.width;
  if (!edit.target_region.inside(H, W)) {
    throw std::invalid_argument("apply_edit: target region out of bounds");
  }

  int target_idx = -1;
  if (edit.op != EditOp::kInsert) {
    for (size_t i = 0; i < scene.objects.size(); ++i) {
      if (scene.objects[i].class_name == edit.original_object) {
        target_idx = int(i);
        break;
      }
    }
    if (target_idx < 0) {
      throw missing_object_error("apply_edit: object '" + edit.original_object +
                                 "' not in scene");
    }
  }

  Rng rng{uint64_t(seed)};
  SceneSpec edited = scene;
  switch (edit.op) {
    case EditOp::kReplace: {
      SceneObject& obj = edited.objects[target_idx];
      obj.class_name = edit.edited_object;
      Shape ns;
      int nb = 0;
      if (combo_for_noun(edit.edited_object, &ns, &nb)) {
        // render what the name says; the combo differs from the original
        // object's, so shape or color bucket (or both) visibly changes
        obj.shape = ns;
        obj.color = bucket_color(nb, rng);
      } else {
        obj.shape = Shape(rng.uniform_int(0, 2));
        std::array<int, 3> old = obj.color;
        do {
          obj.color = sample_object_color(rng);
        } while (color_dist(obj.color, old) < 64);
      }
      break;
    }
    case EditOp::kRecolor: {
      SceneObject& obj = edited.objects[target_idx];
      Shape es;
      int eb = 0;
      if (combo_for_noun(edit.edited_object, &es, &eb) &&
          edit.edited_object != edit.original_object) {
        obj.color = bucket_color(eb, rng);
        obj.class_name = edit.edited_object;
      } else {
        // degenerate recolors (new color too close to old) are rejected and
        // resampled so the mask can never be empty
        std::array<int, 3> old = obj.color;
        do {
          obj.color = sample_object_color(rng);
        } while (color_dist(obj.color, old) < 64);
      }
      break;
    }
    case EditOp::kRemove:
      edited.objects.erase(edited.objects.begin() + target_idx);
      break;
    case EditOp::kInsert: {
      SceneObject obj;
      obj.class_name = edit.edited_object;
      Shape ns;
      int nb = 0;
      if (combo_for_noun(edit.edited_object, &ns, &nb)) {
        obj.shape = ns;
        obj.color = bucket_color(nb, rng);
      } else {
        obj.shape = Shape(rng.uniform_int(0, 2));
        obj.color = sample_object_color(rng);
      }
      obj.bbox = edit.target_region;
      edited.objects.push_back(obj);
      break;
    }
  }

  ImageF src_cont = render_scene(scene, cfg);
  ImageF edit_cont = render_scene(edited, cfg);
  const Box& tr = edit.target_region;

  // Decoy stamps: unedited objects receive the micro-patterns of *other*
  // operations, written identically into both renders so no decoy pixel can
  // enter the mask. A stamped cell is then locally ambiguous between edit
  // interior and decoy; only the pattern spilling onto background marks the
  // true edit.
  if (cfg.with_clutter && cfg.decoys_n > 0) {
    Rng drng(derive_seed(uint64_t(seed), 33));
    std::vector<int> eligible;
    for (size_t i = 0; i < scene.objects.size(); ++i) {
      if (edit.op == EditOp::kInsert || int(i) != target_idx) eligible.push_back(int(i));
    }
    for (size_t i = eligible.size(); i > 1; --i) {
      size_t j = size_t(drng.uniform_int(0, int64_t(i) - 1));
      std::swap(eligible[i - 1], eligible[j]);
    }
    std::vector<EditOp> decoy_ops;
    for (int o = 0; o < 4; ++o) {
      if (EditOp(o) != edit.op) decoy_ops.push_back(EditOp(o));
    }
    for (size_t i = decoy_ops.size(); i > 1; --i) {
      size_t j = size_t(drng.uniform_int(0, int64_t(i) - 1));
      std::swap(decoy_ops[i - 1], decoy_ops[j]);
    }
    int n = std::min(cfg.decoys_n, int(eligible.size()));
    for (int k = 0; k < n; ++k) {
      const SceneObject& obj = scene.objects[size_t(eligible[size_t(k)])];
      EditOp op = decoy_ops[size_t(k) % decoy_ops.size()];
      const Box& b = obj.bbox;
      for (int y = b.y0; y < b.y0 + b.h; ++y) {
        for (int x = b.x0; x < b.x0 + b.w; ++x) {
          if (!object_hit(obj, y, x)) continue;
          double d = op_delta(op, y, x, cfg.checker_amp);
          for (int c = 0; c < 3; ++c) {
            src_cont.at(y, x, c) += d;
            edit_cont.at(y, x, c) += d;
          }
        }
      }
    }
  }

  ImageF out = src_cont;

  if (edit.family == Family::kA) {
    // hard-edged paste: the operation pattern covers the target region plus a
    // halo_px-wide spill onto the surroundings (or, in ring mode, only the
    // border band of that stamp area)
    Box sp{tr.y0 - cfg.halo_px, tr.x0 - cfg.halo_px, tr.h + 2 * cfg.halo_px,
           tr.w + 2 * cfg.halo_px};
    for (int y = std::max(0, sp.y0); y < std::min(H, sp.y0 + sp.h); ++y) {
      for (int x = std::max(0, sp.x0); x < std::min(W, sp.x0 + sp.w); ++x) {
        double d = fingerprinted(cfg, sp, y, x)
                       ? op_delta(edit.op, y, x, cfg.checker_amp)
                       : 0.0;
        for (int c = 0; c < 3; ++c) out.at(y, x, c) = edit_cont.at(y, x, c) + d;
      }
    }
  } else {
    // feathered paste: full edit content plus texture noise inside the
    // region, a 1px alpha-blended bleed ring around it
    for (int y = tr.y0; y < tr.y0 + tr.h; ++y) {
      for (int x = tr.x0; x < tr.x0 + tr.w; ++x) {
        double noise = rng.normal() * cfg.noise_sigma / 255.0;
        for (int c = 0; c < 3; ++c) out.at(y, x, c) = edit_cont.at(y, x, c) + noise;
      }
    }
    for (int y = std::max(0, tr.y0 - 1); y < std::min(H, tr.y0 + tr.h + 1); ++y) {
      for (int x = std::max(0, tr.x0 - 1); x < std::min(W, tr.x0 + tr.w + 1); ++x) {
        if (tr.contains(y, x)) continue;
        int cy = std::clamp(y, tr.y0, tr.y0 + tr.h - 1);
        int cx = std::clamp(x, tr.x0, tr.x0 + tr.w - 1);
        double a = cfg.feather_alpha;
        for (int c = 0; c < 3; ++c) {
          out.at(y, x, c) = (1.0 - a) * src_cont.at(y, x, c) + a * edit_cont.at(cy, cx, c);
        }
      }
    }
  }

  ImageU8 src_u8 = quantize(src_cont);
  ImageU8 out_u8 = quantize(out);

  // snap sub-tolerance jitter back to the source so pixels outside the mask
  // are bit-identical (one-level residue would otherwise leak past the
  // changed-pixel threshold)
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      int dmax = 0;
      for (int c = 0; c < 3; ++c)
        dmax = std::max(dmax, std::abs(int(src_u8.at(y, x, c)) - int(out_u8.at(y, x, c))));
      if (dmax <= 1)
        for (int c = 0; c < 3; ++c) out_u8.at(y, x, c) = src_u8.at(y, x, c);
    }
  }

  Mask mask = close3x3(changed_pixels(src_u8, out_u8));

  size_t pop = mask.popcount();
  if (pop == 0) throw numeric_error("apply_edit: empty mask (degenerate edit)");
  if (pop * 2 > size_t(H) * size_t(W)) {
    throw numeric_error("apply_edit: mask covers more than half the image");
  }

  EditedSample sample;
  sample.id = (edit.family == Family::kA ? "a-" : "b-") + std::to_string(seed);
  sample.image = to_unit(out_u8);
  sample.mask = std::move(mask);
  sample.instruction = render_instruction(edit);
  sample.family = edit.family;
  sample.seed = seed;
  return sample;
}

namespace {

std::string pad_index(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d", i);
  return buf;
}

}  // namespace

CorpusManifest build_corpus(const CorpusConfig& cfg) {
  if (cfg.train_n < 1 || cfg.seen_n < 1 || cfg.unseen_n < 1) {
    throw std::invalid_argument("build_corpus: all split counts must be >= 1");
  }
  if (cfg.size < 32) throw std::invalid_argument("build_corpus: size must be >= 32");

  std::error_code ec;
  fs::create_directories(fs::path(cfg.out_dir) / "images", ec);
  fs::create_directories(fs::path(cfg.out_dir) / "masks", ec);
  if (ec) throw io_error("build_corpus: cannot create " + cfg.out_dir);

  struct SplitPlan {
    std::string name;
    Family family;
    int count;
    int64_t offset;
  };
  const std::vector<SplitPlan> plan = {
      {"train", Family::kA, cfg.train_n, 0},
      {"seen-test", Family::kA, cfg.seen_n, 300000},
      {"unseen-test", Family::kB, cfg.unseen_n, 600000},
  };

  CorpusManifest manifest;
  manifest.vocab_seed = cfg.seed;
  for (const SplitPlan& sp : plan) {
    std::vector<SampleRecord>& records = manifest.splits[sp.name];
    for (int i = 0; i < sp.count; ++i) {
      int64_t sample_seed = cfg.seed * 1000000 + sp.offset + i;
      SceneSpec scene = generate_scene(sample_seed, cfg.size, cfg.size);
      EditSpec edit = sample_edit(scene, sp.family, int64_t(derive_seed(sample_seed, 11)));
      EditedSample sample = apply_edit(scene, edit, int64_t(derive_seed(sample_seed, 22)), cfg);

      std::string id = sp.name + "-" + (sp.family == Family::kA ? "a-" : "b-") + pad_index(i);
      SampleRecord rec;
      rec.id = id;
      rec.image = "images/" + id + ".png";
      rec.mask = "masks/" + id + ".png";
      rec.instruction = sample.instruction;
      rec.family = sp.family;
      rec.seed = sample_seed;
      rec.split = sp.name;
      records.push_back(rec);

      write_png((fs::path(cfg.out_dir) / rec.image).string(), quantize(sample.image));
      write_mask_png((fs::path(cfg.out_dir) / rec.mask).string(), sample.mask);
    }
  }
  save_manifest(cfg.out_dir, manifest);
  return manifest;
}

void save_manifest(const std::string& corpus_dir, const CorpusManifest& manifest) {
  std::ofstream out(fs::path(corpus_dir) / "manifest.jsonl");
  if (!out) throw io_error("save_manifest: cannot write manifest in " + corpus_dir);
  for (const char* split : {"train", "seen-test", "unseen-test"}) {
    auto it = manifest.splits.find(split);
    if (it == manifest.splits.end()) continue;
    for (const SampleRecord& rec : it->second) {
      json j;
      j["id"] = rec.id;
      j["image"] = rec.image;
      j["mask"] = rec.mask;
      j["instruction"] = rec.instruction;
      j["family"] = family_name(rec.family);
      j["seed"] = rec.seed;
      j["split"] = rec.split;
      out << j.dump() << "\n";
    }
  }
}

CorpusManifest load_manifest(const std::string& corpus_dir) {
  std::ifstream in(fs::path(corpus_dir) / "manifest.jsonl");
  if (!in) throw io_error("load_manifest: cannot open manifest in " + corpus_dir);
  CorpusManifest manifest;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    SampleRecord rec;
    rec.id = j.at("id").get<std::string>();
    rec.image = j.at("image").get<std::string>();
    rec.mask = j.at("mask").get<std::string>();
    rec.instruction = j.at("instruction").get<std::string>();
    rec.family = family_from_name(j.at("family").get<std::string>());
    rec.seed = j.at("seed").get<int64_t>();
    rec.split = j.at("split").get<std::string>();
    manifest.splits[rec.split].push_back(rec);
  }
  return manifest;
}

std::vector<EditedSample> load_split(const std::string& corpus_dir,
                                     const CorpusManifest& manifest,
                                     const std::string& split) {
  auto it = manifest.splits.find(split);
  if (it == manifest.splits.end()) {
    throw missing_sample_error("load_split: no such split: " + split);
  }
  std::vector<EditedSample> samples;
  samples.reserve(it->second.size());
  for (const SampleRecord& rec : it->second) {
    EditedSample s;
    s.id = rec.id;
    s.image = to_unit(read_png((fs::path(corpus_dir) / rec.image).string()));
    s.mask = read_mask_png((fs::path(corpus_dir) / rec.mask).string());
    s.instruction = rec.instruction;
    s.family = rec.family;
    s.seed = rec.seed;
    samples.push_back(std::move(s));
  }
  return samples;
}

uint64_t manifest_hash(const CorpusManifest& manifest) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const char* split : {"train", "seen-test", "unseen-test"}) {
    auto it = manifest.splits.find(split);
    if (it == manifest.splits.end()) continue;
    for (const SampleRecord& rec : it->second) {
      std::ostringstream os;
      os << rec.id << '|' << rec.image << '|' << rec.mask << '|' << rec.instruction << '|'
         << family_name(rec.family) << '|' << rec.seed << '|' << rec.split << '\n';
      h = fnv1a(os.str(), h);
    }
  }
  return h;
}

}  // namespace tamperseg
