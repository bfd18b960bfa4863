#pragma once

// Character decompositions: radical and stroke trees, their pre-order token
// sequences, the lexicon file format, and zero-shot split construction.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mgalign::lexicon {

enum class StrokeClass : int { Horizontal = 1, Vertical = 2, LeftFalling = 3, RightFalling = 4, Turning = 5 };
inline constexpr int kStrokeClassCount = 5;
std::string_view stroke_name(StrokeClass s);

struct StructureOp {
  char32_t codepoint;
  int arity;
  std::string_view name;
  std::string_view utf8;
};
inline constexpr int kStructureOpCount = 12;
// The twelve Ideographic Description Characters U+2FF0..U+2FFB, in codepoint order.
std::span<const StructureOp> structure_ops();
std::optional<int> structure_index(std::string_view token);

// Token id layout shared by the radical and stroke families.
inline constexpr int kPadToken = 0;
inline constexpr int kEosToken = 1;
inline constexpr int kFirstStructureToken = 2;
inline constexpr int kFirstLeafToken = kFirstStructureToken + kStructureOpCount;
inline constexpr int kStrokeVocabSize = kFirstLeafToken + kStrokeClassCount;
inline constexpr int kMaxSequenceLength = 50;  // including eos

inline int radical_vocab_size(int radical_count) { return kFirstLeafToken + radical_count; }

enum class Family { Radical, Stroke };
std::string_view family_name(Family f);

enum class Component : std::uint8_t { Detail, Structure, Pad };

struct TreeNode {
  enum class Kind { Internal, Radical, Stroke };
  Kind kind = Kind::Stroke;
  // Internal: structure op index 0..11; Radical: radical id; Stroke: class 1..5.
  int value = 1;
  std::vector<TreeNode> children;

  static TreeNode internal(int op, std::vector<TreeNode> children);
  static TreeNode radical(int id) { return TreeNode{Kind::Radical, id, {}}; }
  static TreeNode stroke(StrokeClass s) { return TreeNode{Kind::Stroke, static_cast<int>(s), {}}; }

  bool is_leaf() const { return kind != Kind::Internal; }
  int node_count() const;
  int leaf_count() const;
  int depth() const;
  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

using DecompositionTree = TreeNode;

// Pre-order tokens followed by eos; mask flags internal nodes Structure and
// leaves plus eos Detail.
struct TokenSequence {
  Family family = Family::Stroke;
  std::vector<int> tokens;
  std::vector<Component> mask;

  int length() const { return static_cast<int>(tokens.size()); }
  int detail_count() const;
  int structure_count() const;
  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

// Dense glyph <-> id mapping for radicals, ids assigned in first-seen order.
class RadicalVocab {
 public:
  std::optional<int> find(std::string_view glyph) const;
  int add(std::string_view glyph);  // returns existing id if present
  const std::string& glyph(int id) const { return glyphs_.at(static_cast<std::size_t>(id)); }
  int size() const { return static_cast<int>(glyphs_.size()); }
  const std::vector<std::string>& glyphs() const { return glyphs_; }
  friend bool operator==(const RadicalVocab& a, const RadicalVocab& b) { return a.glyphs_ == b.glyphs_; }

 private:
  std::vector<std::string> glyphs_;
  std::unordered_map<std::string, int> ids_;
};

// Parses one whitespace-separated pre-order IDS line. Digits 1-5 are stroke
// leaves; any other non-operator token is a radical glyph looked up in
// `vocab` (or added to it when `grow_vocab` is set).
DecompositionTree parse_ids(std::string_view line, RadicalVocab* vocab = nullptr, bool grow_vocab = false);
std::string serialize_ids(const DecompositionTree& tree, const RadicalVocab* vocab = nullptr);

TokenSequence flatten(const DecompositionTree& tree);
// Inverse of flatten.
DecompositionTree unflatten(const TokenSequence& seq);

int leaf_token(const TreeNode& leaf);

struct LexiconEntry {
  std::string character;
  DecompositionTree radical_tree;
  DecompositionTree stroke_tree;
  TokenSequence radical_seq;
  TokenSequence stroke_seq;
};

class Lexicon {
 public:
  // Validates both trees and adds the entry; radicals not yet in the vocab
  // are appended to it.
  void add(std::string character, std::string_view radical_ids, std::string_view stroke_ids);

  int size() const { return static_cast<int>(entries_.size()); }
  const LexiconEntry& entry(int index) const { return entries_.at(static_cast<std::size_t>(index)); }
  const std::vector<LexiconEntry>& entries() const { return entries_; }
  std::optional<int> find(std::string_view character) const;
  // Throws CharNotInLexicon.
  int index_of(std::string_view character) const;
  const LexiconEntry& at(std::string_view character) const { return entry(index_of(character)); }
  std::vector<std::string> characters() const;

  const RadicalVocab& radicals() const { return radicals_; }
  RadicalVocab& radicals() { return radicals_; }
  int radical_token_vocab() const { return radical_vocab_size(radicals_.size()); }

 private:
  std::vector<LexiconEntry> entries_;
  std::unordered_map<std::string, int> index_;
  RadicalVocab radicals_;
};

Lexicon parse_lexicon(std::string_view text);
Lexicon load_lexicon(const std::filesystem::path& path);
std::string format_lexicon(const Lexicon& lexicon);
void save_lexicon(const Lexicon& lexicon, const std::filesystem::path& path);

// Radical vocabulary sizes above this are reported as suspicious; the
// national standard lists 401 radicals.
inline constexpr int kRadicalWarningThreshold = 401;

struct Split {
  std::vector<std::string> train;
  std::vector<std::string> test;
};

// First m classes of `class_order` train, last k test.
Split character_zero_shot_split(const Lexicon& lexicon, std::span<const std::string> class_order, int m, int k);
// Characters holding a radical with lexicon-wide occurrence count < n go to test.
Split radical_zero_shot_split(const Lexicon& lexicon, int n);
std::unordered_map<int, int> radical_frequencies(const Lexicon& lexicon);

std::vector<std::string> read_char_list(const std::filesystem::path& path);
void write_char_list(std::span<const std::string> chars, const std::filesystem::path& path);

// UTF-8 helpers.
std::string utf8_encode(char32_t cp);
std::vector<std::string_view> split_whitespace(std::string_view line);

}  // namespace mgalign::lexicon
