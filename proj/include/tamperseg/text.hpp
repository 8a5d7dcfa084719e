#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tamperseg/dataset.hpp"

namespace tamperseg {

// Reserved token ids. Fixed; the vocabulary always starts with these.
enum SpecialToken : int {
  kPad = 0,
  kBos = 1,
  kEos = 2,
  kUnk = 3,
  kImg = 4,
  kSeg = 5,
  kNumSpecials = 6,
};

struct Vocabulary {
  std::vector<std::string> id_to_token;  // index 0..5 are the specials
  std::map<std::string, int> token_to_id;

  int size() const { return int(id_to_token.size()); }
  int id_of(const std::string& token) const;      // kUnk if absent
  const std::string& token_of(int id) const;      // throws on bad id
  uint64_t hash() const;

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);
};

enum class Segment { kPrompt, kResponse };

struct TokenSequence {
  std::vector<int> ids;
  std::vector<Segment> tags;

  size_t size() const { return ids.size(); }
  void push(int id, Segment tag) {
    ids.push_back(id);
    tags.push_back(tag);
  }
};

struct ParsedResponse {
  int seg_position = -1;  // index of the first SEG id in the sequence
  std::string instruction;
  bool multiple_seg = false;
};

// Lowercases, strips sentence punctuation (brackets survive so "[seg]" stays
// intact), splits on whitespace.
std::vector<std::string> normalize_words(const std::string& text);

// Deterministic vocabulary: specials, then the lexicographically sorted union
// of all instruction words, template words and prompt words.
Vocabulary build_vocab(const CorpusManifest& corpus);

// The fixed prompt (id 1) and the alternates used by the prompt sweep (2-4).
std::string render_prompt(int prompt_id = 1);
int num_prompts();  // 4

// "The edited region is [SEG], and the edit instruction used is <instruction>"
std::string render_response(const std::string& instruction);

TokenSequence encode(const std::string& text, const Vocabulary& vocab,
                     Segment tag = Segment::kResponse);
std::string decode(const TokenSequence& seq, const Vocabulary& vocab);
std::string decode_ids(const std::vector<int>& ids, const Vocabulary& vocab);

// Locates the first SEG id and extracts the instruction suffix. Throws
// seg_missing_error when no SEG id is present.
ParsedResponse parse_response(const TokenSequence& seq, const Vocabulary& vocab);

}  // namespace tamperseg
