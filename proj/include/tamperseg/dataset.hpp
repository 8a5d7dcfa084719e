#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tamperseg/image.hpp"

namespace tamperseg {

// Fixed word lists. Instructions are built from these; the text codec adds
// them all to the vocabulary.
const std::vector<std::string>& noun_list();  // instruction nouns (superset of scene classes)
const std::vector<std::string>& verb_list();  // 6 verbs

enum class Shape { kRect, kCircle, kTriangle };
enum class EditOp { kReplace, kRecolor, kRemove, kInsert };
enum class Family { kA, kB };

std::string family_name(Family f);  // "A" / "B"
Family family_from_name(const std::string& s);

struct Box {
  int y0 = 0, x0 = 0, h = 0, w = 0;
  bool contains(int y, int x) const { return y >= y0 && y < y0 + h && x >= x0 && x < x0 + w; }
  bool inside(int H, int W) const { return y0 >= 0 && x0 >= 0 && h > 0 && w > 0 && y0 + h <= H && x0 + w <= W; }
  bool overlaps(const Box& o) const {
    return !(o.x0 >= x0 + w || x0 >= o.x0 + o.w || o.y0 >= y0 + h || y0 >= o.y0 + o.h);
  }
};

struct SceneObject {
  Shape shape = Shape::kRect;
  std::string class_name;
  std::array<int, 3> color{};  // 0..255 per channel
  Box bbox;
  // int(EditOp) of the decoy micro-pattern stamped on this (never-edited)
  // object, or -1 for none. The edit sampler avoids both decoy objects and
  // decoy operations, so each image has exactly one pattern that spills onto
  // background: the real edit's.
  int decoy_op = -1;
};

// Small solid background patches. Plain scene furniture: they resemble
// objects in size and color but carry no processing fingerprint.
struct ClutterPatch {
  std::array<int, 3> color{};
  Box bbox;
};

struct SceneSpec {
  int64_t seed = 0;
  int height = 0;
  int width = 0;
  std::vector<SceneObject> objects;
  int background = 0;  // procedural texture id, 0..3
  std::vector<ClutterPatch> clutter;
};

struct EditSpec {
  Family family = Family::kA;
  EditOp op = EditOp::kReplace;
  std::string verb;
  std::string original_object;
  std::string edited_object;
  Box target_region;
};

struct EditedSample {
  std::string id;
  ImageF image;  // edited image, unit interval, H x W x 3
  Mask mask;     // 1 = edited
  std::string instruction;
  Family family = Family::kA;
  int64_t seed = 0;
};

struct SampleRecord {
  std::string id;
  std::string image;  // path relative to corpus root
  std::string mask;
  std::string instruction;
  Family family = Family::kA;
  int64_t seed = 0;
  std::string split;
};

struct CorpusManifest {
  // split name -> records; split names: "train", "seen-test", "unseen-test"
  std::map<std::string, std::vector<SampleRecord>> splits;
  int64_t vocab_seed = 0;
};

struct CorpusConfig {
  std::string out_dir;
  int train_n = 32;
  int seen_n = 16;
  int unseen_n = 16;
  int size = 64;  // square images
  int64_t seed = 7;
  // artifact model knobs
  int checker_amp = 6;      // family-A fingerprint amplitude, 8-bit levels
  double noise_sigma = 6.0; // family-B texture noise, 8-bit levels
  double feather_alpha = 0.45;
  // Family-A edits stamp an operation-specific +/-amp micro-pattern over the
  // edited region plus a halo_px-wide spill onto the surrounding background
  // (compositing residue crossing the paste boundary). Scenes additionally
  // mark up to two unedited objects as decoys carrying the patterns of
  // *other* operations; decoys are scene content, present in source and
  // edited renders alike, so they never enter the mask. A stamped patch is
  // then locally ambiguous between edit interior and decoy; only the pattern
  // that spills onto background marks the true edit, and reading that off
  // requires relating distant parts of the image.
  bool with_clutter = true;  // render decoy stamps (and clutter patches)
  int halo_px = 2;           // edit fingerprint spill width, pixels
  int decoys_n = 2;          // stamp at most this many of the scene's decoys
  // 0: fingerprint the whole edited region; k>0: only pixels within k of the
  // region border. Ring mode mirrors real splices, whose artifacts concentrate
  // at the paste boundary: region interiors then look like ordinary content
  // and filling them in requires whole-image evidence, not per-cell texture.
  int checker_ring = 0;
};

// --- operations -----------------------------------------------------------

// Deterministic scene with 2-5 objects; classes drawn without replacement.
SceneSpec generate_scene(int64_t seed, int height, int width);

// Continuous render of a scene (background, clutter patches, then objects).
ImageF render_scene(const SceneSpec& scene, const CorpusConfig& cfg = CorpusConfig{});

// Deterministic edit proposal consistent with the scene.
EditSpec sample_edit(const SceneSpec& scene, Family family, int64_t seed);

// "<verb> <original> to <edited>", or the replace phrasing
// "replace a(n) <original> with a(n) <edited>".
std::string render_instruction(const EditSpec& edit);

// Applies the edit, composites per the family's artifact model, and derives
// the mask as close3x3(pixels changed by more than one 8-bit level).
EditedSample apply_edit(const SceneSpec& scene, const EditSpec& edit, int64_t seed,
                        const CorpusConfig& cfg = CorpusConfig{});

// Generates all splits, writes images/masks/manifest.jsonl under cfg.out_dir.
CorpusManifest build_corpus(const CorpusConfig& cfg);

CorpusManifest load_manifest(const std::string& corpus_dir);
void save_manifest(const std::string& corpus_dir, const CorpusManifest& manifest);

std::vector<EditedSample> load_split(const std::string& corpus_dir,
                                     const CorpusManifest& manifest,
                                     const std::string& split);

// Stable fingerprint of a manifest's full content.
uint64_t manifest_hash(const CorpusManifest& manifest);

}  // namespace tamperseg
