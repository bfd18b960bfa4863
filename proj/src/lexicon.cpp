#include "mgalign/lexicon.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "mgalign/error.hpp"

namespace mgalign::lexicon {

namespace {

constexpr std::array<StructureOp, kStructureOpCount> kOps{{
    {U'⿰', 2, "left-to-right", "⿰"},
    {U'⿱', 2, "above-to-below", "⿱"},
    {U'⿲', 3, "left-middle-right", "⿲"},
    {U'⿳', 3, "above-middle-below", "⿳"},
    {U'⿴', 2, "full-surround", "⿴"},
    {U'⿵', 2, "above-surround", "⿵"},
    {U'⿶', 2, "below-surround", "⿶"},
    {U'⿷', 2, "left-surround", "⿷"},
    {U'⿸', 2, "upper-left-surround", "⿸"},
    {U'⿹', 2, "upper-right-surround", "⿹"},
    {U'⿺', 2, "lower-left-surround", "⿺"},
    {U'⿻', 2, "overlaid", "⿻"},
}};

std::optional<StrokeClass> stroke_digit(std::string_view token) {
  if (token.size() == 1 && token[0] >= '1' && token[0] <= '5') return static_cast<StrokeClass>(token[0] - '0');
  return std::nullopt;
}

class IdsParser {
 public:
  IdsParser(std::vector<std::string_view> tokens, RadicalVocab* vocab, bool grow)
      : tokens_(std::move(tokens)), vocab_(vocab), grow_(grow) {}

  TreeNode parse_tree() {
    if (tokens_.empty()) throw Error(ErrorCode::ArityMismatch, "empty decomposition");
    TreeNode root = parse_node();
    if (pos_ != tokens_.size()) {
      throw Error(ErrorCode::TrailingTokens, std::to_string(tokens_.size() - pos_) + " token(s) after a complete tree");
    }
    return root;
  }

 private:
  TreeNode parse_node() {
    if (pos_ >= tokens_.size()) throw Error(ErrorCode::ArityMismatch, "structure operator is missing children");
    const std::string_view tok = tokens_[pos_++];
    if (auto op = structure_index(tok)) {
      std::vector<TreeNode> children;
      for (int i = 0; i < kOps[static_cast<std::size_t>(*op)].arity; ++i) children.push_back(parse_node());
      return TreeNode::internal(*op, std::move(children));
    }
    if (auto s = stroke_digit(tok)) return TreeNode::stroke(*s);
    if (vocab_ != nullptr) {
      if (auto id = vocab_->find(tok)) return TreeNode::radical(*id);
      if (grow_) return TreeNode::radical(vocab_->add(tok));
    }
    throw Error(ErrorCode::UnknownToken, "'" + std::string(tok) + "' is not a structure operator, stroke, or known radical");
  }

  std::vector<std::string_view> tokens_;
  std::size_t pos_ = 0;
  RadicalVocab* vocab_;
  bool grow_;
};

void check_leaf_kind(const TreeNode& node, TreeNode::Kind want, const char* what) {
  if (node.is_leaf()) {
    if (node.kind != want) throw Error(ErrorCode::ParseError, std::string(what) + " decomposition has a foreign leaf");
    return;
  }
  for (const auto& c : node.children) check_leaf_kind(c, want, what);
}

void flatten_into(const TreeNode& node, TokenSequence& seq) {
  if (node.is_leaf()) {
    seq.tokens.push_back(leaf_token(node));
    seq.mask.push_back(Component::Detail);
    return;
  }
  seq.tokens.push_back(kFirstStructureToken + node.value);
  seq.mask.push_back(Component::Structure);
  for (const auto& c : node.children) flatten_into(c, seq);
}

}  // namespace

std::string_view stroke_name(StrokeClass s) {
  switch (s) {
    case StrokeClass::Horizontal: return "Horizontal";
    case StrokeClass::Vertical: return "Vertical";
    case StrokeClass::LeftFalling: return "LeftFalling";
    case StrokeClass::RightFalling: return "RightFalling";
    case StrokeClass::Turning: return "Turning";
  }
  return "?";
}

std::span<const StructureOp> structure_ops() { return kOps; }

std::optional<int> structure_index(std::string_view token) {
  for (int i = 0; i < kStructureOpCount; ++i) {
    if (kOps[static_cast<std::size_t>(i)].utf8 == token) return i;
  }
  return std::nullopt;
}

std::string_view family_name(Family f) { return f == Family::Radical ? "radical" : "stroke"; }

TreeNode TreeNode::internal(int op, std::vector<TreeNode> children) {
  if (op < 0 || op >= kStructureOpCount) throw Error(ErrorCode::UnknownToken, "structure op index out of range");
  if (static_cast<int>(children.size()) != kOps[static_cast<std::size_t>(op)].arity) {
    throw Error(ErrorCode::ArityMismatch, std::string(kOps[static_cast<std::size_t>(op)].name) + " takes " +
                                              std::to_string(kOps[static_cast<std::size_t>(op)].arity) + " children");
  }
  return TreeNode{Kind::Internal, op, std::move(children)};
}

int TreeNode::node_count() const {
  int n = 1;
  for (const auto& c : children) n += c.node_count();
  return n;
}

int TreeNode::leaf_count() const {
  if (is_leaf()) return 1;
  int n = 0;
  for (const auto& c : children) n += c.leaf_count();
  return n;
}

int TreeNode::depth() const {
  int d = 0;
  for (const auto& c : children) d = std::max(d, c.depth());
  return d + 1;
}

int TokenSequence::detail_count() const {
  return static_cast<int>(std::count(mask.begin(), mask.end(), Component::Detail));
}

int TokenSequence::structure_count() const {
  return static_cast<int>(std::count(mask.begin(), mask.end(), Component::Structure));
}

std::optional<int> RadicalVocab::find(std::string_view glyph) const {
  auto it = ids_.find(std::string(glyph));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

int RadicalVocab::add(std::string_view glyph) {
  if (auto id = find(glyph)) return *id;
  const int id = size();
  glyphs_.emplace_back(glyph);
  ids_.emplace(std::string(glyph), id);
  return id;
}

DecompositionTree parse_ids(std::string_view line, RadicalVocab* vocab, bool grow_vocab) {
  return IdsParser(split_whitespace(line), vocab, grow_vocab).parse_tree();
}

std::string serialize_ids(const DecompositionTree& tree, const RadicalVocab* vocab) {
  std::string out;
  std::function<void(const TreeNode&)> visit = [&](const TreeNode& n) {
    if (!out.empty()) out += ' ';
    switch (n.kind) {
      case TreeNode::Kind::Internal: out += kOps[static_cast<std::size_t>(n.value)].utf8; break;
      case TreeNode::Kind::Stroke: out += static_cast<char>('0' + n.value); break;
      case TreeNode::Kind::Radical:
        if (vocab == nullptr || n.value < 0 || n.value >= vocab->size()) {
          throw Error(ErrorCode::UnknownToken, "radical id " + std::to_string(n.value) + " has no glyph");
        }
        out += vocab->glyph(n.value);
        break;
    }
    for (const auto& c : n.children) visit(c);
  };
  visit(tree);
  return out;
}

int leaf_token(const TreeNode& leaf) {
  if (leaf.kind == TreeNode::Kind::Stroke) return kFirstLeafToken + leaf.value - 1;
  return kFirstLeafToken + leaf.value;
}

TokenSequence flatten(const DecompositionTree& tree) {
  TokenSequence seq;
  seq.family = Family::Stroke;
  std::function<bool(const TreeNode&)> has_radical = [&](const TreeNode& n) {
    if (n.kind == TreeNode::Kind::Radical) return true;
    return std::any_of(n.children.begin(), n.children.end(), has_radical);
  };
  if (has_radical(tree)) seq.family = Family::Radical;
  flatten_into(tree, seq);
  seq.tokens.push_back(kEosToken);
  seq.mask.push_back(Component::Detail);
  if (seq.length() > kMaxSequenceLength) {
    throw Error(ErrorCode::SequenceTooLong, std::to_string(seq.length()) + " tokens including eos exceeds " +
                                                std::to_string(kMaxSequenceLength));
  }
  return seq;
}

DecompositionTree unflatten(const TokenSequence& seq) {
  if (seq.tokens.empty() || seq.tokens.back() != kEosToken) throw Error(ErrorCode::ParseError, "sequence lacks eos");
  std::size_t pos = 0;
  const std::size_t end = seq.tokens.size() - 1;
  std::function<TreeNode()> node = [&]() -> TreeNode {
    if (pos >= end) throw Error(ErrorCode::ArityMismatch, "sequence ends inside a structure operator");
    const int tok = seq.tokens[pos++];
    if (tok >= kFirstStructureToken && tok < kFirstLeafToken) {
      const int op = tok - kFirstStructureToken;
      std::vector<TreeNode> children;
      for (int i = 0; i < kOps[static_cast<std::size_t>(op)].arity; ++i) children.push_back(node());
      return TreeNode::internal(op, std::move(children));
    }
    if (tok < kFirstLeafToken) throw Error(ErrorCode::UnknownToken, "unexpected special token inside sequence");
    if (seq.family == Family::Stroke) {
      const int s = tok - kFirstLeafToken + 1;
      if (s > kStrokeClassCount) throw Error(ErrorCode::OutOfVocab, "stroke token out of range");
      return TreeNode::stroke(static_cast<StrokeClass>(s));
    }
    return TreeNode::radical(tok - kFirstLeafToken);
  };
  TreeNode root = node();
  if (pos != end) throw Error(ErrorCode::TrailingTokens, "tokens after a complete tree");
  return root;
}

// ---------------------------------------------------------------------------

void Lexicon::add(std::string character, std::string_view radical_ids, std::string_view stroke_ids) {
  if (character.empty()) throw Error(ErrorCode::ParseError, "empty character field");
  if (index_.contains(character)) throw Error(ErrorCode::DuplicateCharacter, "'" + character + "' listed twice");
  LexiconEntry e;
  e.character = character;
  // Parse against a scratch copy so a failing line leaves the vocab intact.
  RadicalVocab scratch = radicals_;
  e.radical_tree = parse_ids(radical_ids, &scratch, true);
  check_leaf_kind(e.radical_tree, TreeNode::Kind::Radical, "radical");
  e.stroke_tree = parse_ids(stroke_ids, nullptr, false);
  check_leaf_kind(e.stroke_tree, TreeNode::Kind::Stroke, "stroke");
  e.radical_seq = flatten(e.radical_tree);
  e.stroke_seq = flatten(e.stroke_tree);
  radicals_ = std::move(scratch);
  index_.emplace(character, size());
  entries_.push_back(std::move(e));
}

std::optional<int> Lexicon::find(std::string_view character) const {
  auto it = index_.find(std::string(character));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Lexicon::index_of(std::string_view character) const {
  if (auto i = find(character)) return *i;
  throw Error(ErrorCode::CharNotInLexicon, "'" + std::string(character) + "'");
}

std::vector<std::string> Lexicon::characters() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.character);
  return out;
}

Lexicon parse_lexicon(std::string_view text) {
  Lexicon lex;
  std::size_t start = 0;
  int line_no = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') {
      if (end == text.size()) break;
      continue;
    }
    std::vector<std::string_view> fields;
    std::size_t f = 0;
    while (true) {
      std::size_t tab = line.find('\t', f);
      fields.push_back(line.substr(f, tab == std::string_view::npos ? std::string_view::npos : tab - f));
      if (tab == std::string_view::npos) break;
      f = tab + 1;
    }
    if (fields.size() != 3) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": expected 3 tab-separated fields, got " +
                                             std::to_string(fields.size()));
    }
    try {
      lex.add(std::string(fields[0]), fields[1], fields[2]);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::DuplicateCharacter) {
        throw Error(ErrorCode::DuplicateCharacter, "line " + std::to_string(line_no) + ": '" + std::string(fields[0]) +
                                                       "' listed twice");
      }
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": " + e.what());
    }
    if (end == text.size()) break;
  }
  return lex;
}

Lexicon load_lexicon(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open lexicon " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_lexicon(ss.str());
}

std::string format_lexicon(const Lexicon& lexicon) {
  std::string out;
  for (const auto& e : lexicon.entries()) {
    out += e.character;
    out += '\t';
    out += serialize_ids(e.radical_tree, &lexicon.radicals());
    out += '\t';
    out += serialize_ids(e.stroke_tree);
    out += '\n';
  }
  return out;
}

void save_lexicon(const Lexicon& lexicon, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write lexicon " + path.string());
  out << format_lexicon(lexicon);
}

// ---------------------------------------------------------------------------

Split character_zero_shot_split(const Lexicon& lexicon, std::span<const std::string> class_order, int m, int k) {
  const int n = static_cast<int>(class_order.size());
  if (m <= 0) throw Error(ErrorCode::EmptyTrain, "m must be positive");
  if (k < 0 || m + k > n) {
    throw Error(ErrorCode::SplitOverlap, "m + k = " + std::to_string(m + k) + " exceeds " + std::to_string(n) + " classes");
  }
  std::set<std::string> seen;
  for (const auto& c : class_order) {
    lexicon.index_of(c);
    if (!seen.insert(c).second) throw Error(ErrorCode::DuplicateCharacter, "'" + c + "' repeated in class order");
  }
  Split s;
  s.train.assign(class_order.begin(), class_order.begin() + m);
  s.test.assign(class_order.end() - k, class_order.end());
  return s;
}

std::unordered_map<int, int> radical_frequencies(const Lexicon& lexicon) {
  std::unordered_map<int, int> freq;
  std::function<void(const TreeNode&)> visit = [&](const TreeNode& n) {
    if (n.kind == TreeNode::Kind::Radical) ++freq[n.value];
    for (const auto& c : n.children) visit(c);
  };
  for (const auto& e : lexicon.entries()) visit(e.radical_tree);
  return freq;
}

Split radical_zero_shot_split(const Lexicon& lexicon, int n) {
  if (n < 1) throw Error(ErrorCode::InvalidConfig, "radical frequency threshold must be >= 1");
  const auto freq = radical_frequencies(lexicon);
  Split s;
  for (const auto& e : lexicon.entries()) {
    bool rare = false;
    std::function<void(const TreeNode&)> visit = [&](const TreeNode& node) {
      if (node.kind == TreeNode::Kind::Radical && freq.at(node.value) < n) rare = true;
      for (const auto& c : node.children) visit(c);
    };
    visit(e.radical_tree);
    (rare ? s.test : s.train).push_back(e.character);
  }
  return s;
}

std::vector<std::string> read_char_list(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open character list " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

void write_char_list(std::span<const std::string> chars, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write character list " + path.string());
  for (const auto& c : chars) out << c << '\n';
}

std::string utf8_encode(char32_t cp) {
  std::string out;
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
  return out;
}

std::vector<std::string_view> split_whitespace(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (i < line.size()) {
    while (i < line.size() && is_space(line[i])) ++i;
    std::size_t j = i;
    while (j < line.size() && !is_space(line[j])) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace mgalign::lexicon
