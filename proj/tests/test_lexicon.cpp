#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "mgalign/error.hpp"
#include "mgalign/lexicon.hpp"

using namespace mgalign;
using namespace mgalign::lexicon;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error raised");
  return ErrorCode::IoError;
}

// Random tree of depth <= max_depth; radical leaves draw ids below `radicals`.
TreeNode random_tree(std::mt19937_64& rng, int max_depth, bool radical_leaves, int radicals) {
  std::uniform_int_distribution<int> coin(0, 2);
  if (max_depth <= 1 || coin(rng) == 0) {
    if (radical_leaves) return TreeNode::radical(std::uniform_int_distribution<int>(0, radicals - 1)(rng));
    return TreeNode::stroke(static_cast<StrokeClass>(std::uniform_int_distribution<int>(1, 5)(rng)));
  }
  const int op = std::uniform_int_distribution<int>(0, kStructureOpCount - 1)(rng);
  std::vector<TreeNode> children;
  for (int i = 0; i < structure_ops()[op].arity; ++i) {
    children.push_back(random_tree(rng, max_depth - 1, radical_leaves, radicals));
  }
  return TreeNode::internal(op, std::move(children));
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("mgalign_lexicon_" + name);
}

}  // namespace

TEST_CASE("stroke classes and structure operators") {
  CHECK(kStrokeClassCount == 5);
  CHECK(stroke_name(StrokeClass::Horizontal) == "Horizontal");
  CHECK(stroke_name(StrokeClass::Turning) == "Turning");
  const auto ops = structure_ops();
  REQUIRE(ops.size() == 12);
  for (std::size_t i = 0; i < ops.size(); ++i) {
    CHECK(ops[i].codepoint == 0x2FF0 + i);
    CHECK(ops[i].arity == (ops[i].codepoint == 0x2FF2 || ops[i].codepoint == 0x2FF3 ? 3 : 2));
    CHECK(structure_index(ops[i].utf8) == static_cast<int>(i));
  }
}

TEST_CASE("parse_ids: spec examples") {
  RadicalVocab vocab;
  const auto r3 = vocab.add("r3"), r7 = vocab.add("r7");
  const auto t = parse_ids("⿰ r3 r7", &vocab);
  CHECK(t == TreeNode::internal(0, {TreeNode::radical(r3), TreeNode::radical(r7)}));

  CHECK(parse_ids("1") == TreeNode::stroke(StrokeClass::Horizontal));

  const auto nested = parse_ids("⿱ ⿰ 1 2 5");
  const auto expected =
      TreeNode::internal(1, {TreeNode::internal(0, {TreeNode::stroke(StrokeClass::Horizontal),
                                                    TreeNode::stroke(StrokeClass::Vertical)}),
                             TreeNode::stroke(StrokeClass::Turning)});
  CHECK(nested == expected);
  CHECK(nested.node_count() == 5);
}

TEST_CASE("parse_ids: errors") {
  RadicalVocab vocab;
  vocab.add("木");
  CHECK(code_of([&] { parse_ids("⿰ 木 水", &vocab); }) == ErrorCode::UnknownToken);
  CHECK(code_of([] { parse_ids("⿰ 1"); }) == ErrorCode::ArityMismatch);
  CHECK(code_of([] { parse_ids("⿲ 1 2"); }) == ErrorCode::ArityMismatch);
  CHECK(code_of([] { parse_ids(""); }) == ErrorCode::ArityMismatch);
  CHECK(code_of([] { parse_ids("⿰ 1 2 3"); }) == ErrorCode::TrailingTokens);
  CHECK(code_of([] { parse_ids("1 2"); }) == ErrorCode::TrailingTokens);
  CHECK(code_of([] { parse_ids("6"); }) == ErrorCode::UnknownToken);
}

TEST_CASE("flatten: spec examples") {
  const auto single = flatten(TreeNode::stroke(StrokeClass::Horizontal));
  CHECK(single.tokens == std::vector<int>{kFirstLeafToken, kEosToken});
  CHECK(single.mask == std::vector<Component>{Component::Detail, Component::Detail});

  const auto seq = flatten(parse_ids("⿱ ⿰ 1 2 5"));
  CHECK(seq.family == Family::Stroke);
  CHECK(seq.tokens == std::vector<int>{kFirstStructureToken + 1, kFirstStructureToken + 0, kFirstLeafToken,
                                       kFirstLeafToken + 1, kFirstLeafToken + 4, kEosToken});
  using C = Component;
  CHECK(seq.mask == std::vector<C>{C::Structure, C::Structure, C::Detail, C::Detail, C::Detail, C::Detail});
}

TEST_CASE("flatten: sequences longer than 50 tokens are rejected") {
  // A left-leaning chain of n binary nodes has 2n + 1 tokens.
  auto chain = [](int n) {
    TreeNode t = TreeNode::stroke(StrokeClass::Horizontal);
    for (int i = 0; i < n; ++i) t = TreeNode::internal(0, {t, TreeNode::stroke(StrokeClass::Vertical)});
    return t;
  };
  CHECK(flatten(chain(24)).length() == 50);
  CHECK(code_of([&] { flatten(chain(25)); }) == ErrorCode::SequenceTooLong);
}

TEST_CASE("property: parse/serialize/flatten round trips on random trees") {
  std::mt19937_64 rng(11);
  RadicalVocab vocab;
  for (int i = 0; i < 9; ++i) vocab.add(utf8_encode(0x2F00 + i));
  for (int trial = 0; trial < 500; ++trial) {
    const bool radical = trial % 2 == 0;
    const TreeNode tree = random_tree(rng, 5, radical, vocab.size());
    CHECK(tree.depth() <= 5);
    const std::string text = serialize_ids(tree, &vocab);
    const TreeNode parsed = parse_ids(text, &vocab);
    CHECK(parsed == tree);
    CHECK(parsed.node_count() == static_cast<int>(split_whitespace(text).size()));
    if (tree.node_count() + 1 > kMaxSequenceLength) continue;
    const auto seq = flatten(tree);
    CHECK(flatten(parse_ids(serialize_ids(tree, &vocab), &vocab)) == seq);
    CHECK(unflatten(seq) == tree);
    CHECK(seq.detail_count() + seq.structure_count() == seq.length());
    CHECK(seq.detail_count() == tree.leaf_count() + 1);
    CHECK(std::count(seq.tokens.begin(), seq.tokens.end(), kEosToken) == 1);
    CHECK(seq.tokens.back() == kEosToken);
  }
}

TEST_CASE("lexicon file: three hand-written entries") {
  const std::string text =
      "# toy\n"
      "好\t⿰ 女 子\t⿰ ⿱ 5 3 ⿱ 5 1\n"
      "妈\t⿰ 女 马\t⿰ ⿱ 5 3 ⿱ 5 5\n"
      "一\t一\t1\n";
  const Lexicon lex = parse_lexicon(text);
  CHECK(lex.size() == 3);
  CHECK(lex.radicals().size() == 4);  // 女 子 马 一
  CHECK(lex.radical_token_vocab() == kFirstLeafToken + 4);
  CHECK(lex.index_of("妈") == 1);
  CHECK(lex.at("好").radical_seq.length() == 4);
  CHECK(lex.at("好").stroke_seq.length() == 8);
  CHECK(code_of([&] { lex.index_of("猫"); }) == ErrorCode::CharNotInLexicon);

  const auto path = temp_path("roundtrip.tsv");
  save_lexicon(lex, path);
  const Lexicon again = load_lexicon(path);
  CHECK(format_lexicon(again) == format_lexicon(lex));
  save_lexicon(again, path);
  std::ifstream in(path);
  std::string saved((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(saved == format_lexicon(lex));
  for (int i = 0; i < lex.size(); ++i) {
    CHECK(again.entry(i).radical_seq == lex.entry(i).radical_seq);
    CHECK(again.entry(i).stroke_seq == lex.entry(i).stroke_seq);
    CHECK(flatten(again.entry(i).stroke_tree) == again.entry(i).stroke_seq);
  }
  std::filesystem::remove(path);
}

TEST_CASE("lexicon file: errors carry the line number") {
  CHECK(code_of([] { parse_lexicon("好\t⿰ 女 子\t⿰ 1 2\n好\t⿰ 女 子\t⿰ 1 2\n"); }) == ErrorCode::DuplicateCharacter);
  try {
    parse_lexicon("# header\n好\t⿰ 女\t1\n");
    FAIL("expected ParseError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ParseError);
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK(code_of([] { parse_lexicon("好\t⿰ 女 子\n"); }) == ErrorCode::ParseError);
  CHECK(code_of([] { parse_lexicon("好\t⿰ 女 1\t⿰ 1 2\n"); }) == ErrorCode::ParseError);  // stroke in radical tree
  CHECK(code_of([] { parse_lexicon("好\t⿰ 女 子\t⿰ 1 女\n"); }) == ErrorCode::ParseError);  // radical in stroke tree
}

TEST_CASE("character zero-shot split") {
  Lexicon big;
  for (int i = 0; i < 3755; ++i) big.add(utf8_encode(0x4E00 + i), "⿰ A B", "⿰ 1 2");
  const auto order = big.characters();
  const auto s = character_zero_shot_split(big, order, 500, 1000);
  CHECK(s.train.size() == 500);
  CHECK(s.test.size() == 1000);
  std::set<std::string> train(s.train.begin(), s.train.end());
  for (const auto& c : s.test) CHECK(train.count(c) == 0);
  CHECK(s.train.front() == order.front());
  CHECK(s.test.back() == order.back());

  CHECK(code_of([&] { character_zero_shot_split(big, order, 0, 10); }) == ErrorCode::EmptyTrain);
  CHECK(code_of([&] { character_zero_shot_split(big, order, 3000, 1000); }) == ErrorCode::SplitOverlap);
}

TEST_CASE("character zero-shot split on a 200-class toy lexicon keeps the last 50 unseen") {
  Lexicon lex;
  for (int i = 0; i < 200; ++i) lex.add(utf8_encode(0x4E00 + i), "⿱ A B", "⿱ 1 3");
  const auto order = lex.characters();
  const auto s = character_zero_shot_split(lex, order, 150, 50);
  CHECK(std::equal(s.train.begin(), s.train.end(), order.begin()));
  CHECK(std::equal(s.test.begin(), s.test.end(), order.begin() + 150));
}

TEST_CASE("radical zero-shot split") {
  Lexicon lex;
  // r9 appears in three characters (three occurrences); A appears everywhere.
  lex.add("a", "⿰ A r9", "⿰ 1 2");
  lex.add("b", "⿰ A r9", "⿰ 1 3");
  lex.add("c", "⿱ A r9", "⿰ 1 4");
  for (int i = 0; i < 6; ++i) lex.add("x" + std::to_string(i), "⿰ A B", "⿰ 2 2");
  const auto freq = radical_frequencies(lex);
  CHECK(freq.at(*lex.radicals().find("r9")) == 3);
  CHECK(freq.at(*lex.radicals().find("A")) == 9);

  const auto s = radical_zero_shot_split(lex, 5);
  CHECK(s.test == std::vector<std::string>{"a", "b", "c"});
  CHECK(s.train.size() == 6);
  CHECK(radical_zero_shot_split(lex, 1).test.empty());

  // Partition law for the standard sweep.
  for (int n : {10, 20, 30, 40, 50}) {
    const auto split = radical_zero_shot_split(lex, n);
    CHECK(split.train.size() + split.test.size() == static_cast<std::size_t>(lex.size()));
    auto min_freq = [&](const std::string& c) {
      int lo = 1 << 30;
      std::vector<const TreeNode*> stack{&lex.at(c).radical_tree};
      while (!stack.empty()) {
        const TreeNode* node = stack.back();
        stack.pop_back();
        if (node->kind == TreeNode::Kind::Radical) lo = std::min(lo, freq.at(node->value));
        for (const auto& ch : node->children) stack.push_back(&ch);
      }
      return lo;
    };
    for (const auto& c : split.test) CHECK(min_freq(c) < n);
    for (const auto& c : split.train) CHECK(min_freq(c) >= n);
  }
}

TEST_CASE("character lists round trip") {
  const std::vector<std::string> chars{"好", "妈", "一"};
  const auto path = temp_path("chars.txt");
  write_char_list(chars, path);
  CHECK(read_char_list(path) == chars);
  std::filesystem::remove(path);
}
