#include "tamperseg/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "tamperseg/common.hpp"

namespace tamperseg {
namespace {

const char* kSpecialSpellings[kNumSpecials] = {"<pad>", "<bos>", "<eos>",
                                               "<unk>", "<img>", "[SEG]"};

// Table of query prompts; index 0 is the default used everywhere outside the
// prompt sweep.
const char* kPrompts[] = {
    "Can you segment the edited region and give the instruction used to edit "
    "this image.",
    "Could you segment the modified regions and provide a detailed explanation "
    "of the editing process?",
    "Please analyze this image for any signs of editing. If the image has been "
    "edited, identify and segment the edited portions, and outline the steps "
    "taken to achieve the edits.",
    "Can you determine if this image has been manipulated? If so, please "
    "highlight the altered areas and describe the techniques used to modify "
    "the image.",
};

constexpr const char* kResponsePrefix =
    "The edited region is [SEG], and the edit instruction used is ";

bool keep_char(char c) {
  unsigned char u = static_cast<unsigned char>(c);
  return std::isalnum(u) || c == '[' || c == ']';
}

}  // namespace

std::vector<std::string> normalize_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : text) {
    unsigned char u = static_cast<unsigned char>(c);
    if (std::isspace(u)) {
      if (!cur.empty()) {
        words.push_back(cur);
        cur.clear();
      }
    } else if (keep_char(c)) {
      cur.push_back(char(std::tolower(u)));
    }
    // other punctuation is dropped in place
  }
  if (!cur.empty()) words.push_back(cur);
  return words;
}

int Vocabulary::id_of(const std::string& token) const {
  auto it = token_to_id.find(token);
  return it == token_to_id.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token_of(int id) const {
  if (id < 0 || id >= size())
    throw std::out_of_range("token id " + std::to_string(id) +
                            " outside vocabulary of " + std::to_string(size()));
  return id_to_token[size_t(id)];
}

uint64_t Vocabulary::hash() const {
  uint64_t h = kFnvOffset;
  for (const auto& t : id_to_token) {
    h = fnv1a(t.data(), t.size(), h);
    h = fnv1a("\x1f", 1, h);
  }
  return h;
}

Vocabulary build_vocab(const CorpusManifest& corpus) {
  size_t total = 0;
  for (const auto& [name, records] : corpus.splits) total += records.size();
  if (total == 0) throw std::invalid_argument("cannot build vocabulary from an empty corpus");

  std::set<std::string> words;
  auto add_text = [&](const std::string& text) {
    for (auto& w : normalize_words(text))
      if (w != "[seg]") words.insert(w);
  };
  for (const auto& [name, records] : corpus.splits)
    for (const auto& rec : records) add_text(rec.instruction);
  for (int p = 1; p <= num_prompts(); ++p) add_text(render_prompt(p));
  add_text(kResponsePrefix);

  Vocabulary vocab;
  for (int s = 0; s < kNumSpecials; ++s)
    vocab.id_to_token.emplace_back(kSpecialSpellings[s]);
  for (const auto& w : words) vocab.id_to_token.push_back(w);  // already sorted
  if (vocab.size() > 512)
    throw capacity_error("vocabulary exceeds 512 tokens: " +
                         std::to_string(vocab.size()));
  for (int i = 0; i < vocab.size(); ++i)
    vocab.token_to_id[vocab.id_to_token[size_t(i)]] = i;
  vocab.token_to_id["[seg]"] = kSeg;  // lowercased spelling after normalization
  return vocab;
}

std::string render_prompt(int prompt_id) {
  if (prompt_id < 1 || prompt_id > num_prompts())
    throw std::invalid_argument("prompt id must be 1.." +
                                std::to_string(num_prompts()));
  return kPrompts[prompt_id - 1];
}

int num_prompts() { return int(std::size(kPrompts)); }

std::string render_response(const std::string& instruction) {
  if (instruction.empty())
    throw std::invalid_argument("instruction must be nonempty");
  return std::string(kResponsePrefix) + instruction;
}

TokenSequence encode(const std::string& text, const Vocabulary& vocab,
                     Segment tag) {
  TokenSequence seq;
  for (const auto& w : normalize_words(text)) {
    int id = vocab.id_of(w);
    // a SEG id is only meaningful inside a response
    if (id == kSeg && tag == Segment::kPrompt) id = kUnk;
    seq.push(id, tag);
  }
  return seq;
}

std::string decode_ids(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::string out;
  for (int id : ids) {
    if (id == kPad || id == kBos || id == kEos || id == kImg) continue;
    if (!out.empty()) out.push_back(' ');
    out += vocab.token_of(id);
  }
  return out;
}

std::string decode(const TokenSequence& seq, const Vocabulary& vocab) {
  return decode_ids(seq.ids, vocab);
}

ParsedResponse parse_response(const TokenSequence& seq,
                              const Vocabulary& vocab) {
  ParsedResponse out;
  for (size_t i = 0; i < seq.ids.size(); ++i) {
    if (seq.ids[i] != kSeg) continue;
    if (out.seg_position < 0)
      out.seg_position = int(i);
    else
      out.multiple_seg = true;
  }
  if (out.seg_position < 0)
    throw seg_missing_error("response contains no segmentation token");

  // instruction = everything after the "used is" bigram that follows SEG
  const int used_id = vocab.id_of("used");
  const int is_id = vocab.id_of("is");
  size_t start = seq.ids.size();
  for (size_t i = size_t(out.seg_position) + 1; i + 1 < seq.ids.size(); ++i) {
    if (seq.ids[i] == used_id && seq.ids[i + 1] == is_id) {
      start = i + 2;
      break;
    }
  }
  std::vector<int> suffix(seq.ids.begin() + long(start), seq.ids.end());
  out.instruction = decode_ids(suffix, vocab);
  return out;
}

void Vocabulary::save(const std::string& path) const {
  nlohmann::json j;
  j["tokens"] = id_to_token;
  j["specials"] = {{"pad", kPad}, {"bos", kBos}, {"eos", kEos},
                   {"unk", kUnk}, {"img", kImg}, {"seg", kSeg}};
  std::ofstream os(path);
  if (!os) throw io_error("cannot write vocabulary to " + path);
  os << j.dump(2) << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw io_error("cannot read vocabulary from " + path);
  nlohmann::json j;
  is >> j;
  Vocabulary vocab;
  vocab.id_to_token = j.at("tokens").get<std::vector<std::string>>();
  if (int(vocab.id_to_token.size()) < kNumSpecials)
    throw config_error("vocabulary file lacks the reserved tokens");
  for (int s = 0; s < kNumSpecials; ++s)
    if (vocab.id_to_token[size_t(s)] != kSpecialSpellings[s])
      throw config_error("vocabulary file disagrees on reserved token " +
                         std::to_string(s));
  for (int i = 0; i < vocab.size(); ++i)
    vocab.token_to_id[vocab.id_to_token[size_t(i)]] = i;
  vocab.token_to_id["[seg]"] = kSeg;
  return vocab;
}

}  // namespace tamperseg
