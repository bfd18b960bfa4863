#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "mgalign/dataset.hpp"
#include "mgalign/error.hpp"
#include "mgalign/model.hpp"
#include "mgalign/retrieval.hpp"

using namespace mgalign;
using namespace mgalign::retrieval;
using alignment::Components;
using alignment::Level;

namespace {

ModelConfig tiny_model(const lexicon::Lexicon& lex) {
  ModelConfig c;
  c.image.image_size = 32;
  c.image.stage_widths = {4, 4, 8};
  c.image.dim = 8;
  c.text.dim = 8;
  c.text.heads = 2;
  c.text.layers = 1;
  c.text.fusion_layers = 1;
  c.text.radical_vocab = lex.radical_token_vocab();
  return c;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::IoError;
}

std::filesystem::path scratch(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("mgalign_retrieval_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("gallery keeps candidate order and rejects bad candidate lists") {
  const auto lex = dataset::generate_toy_lexicon(30, 10, 1);
  nn::Rng rng(2);
  Model model(tiny_model(lex), rng);
  auto chars = lex.characters();
  std::reverse(chars.begin(), chars.end());
  const auto g = embed_gallery(model, lex, chars, {});
  CHECK(g.characters == chars);
  CHECK(g.size() == 30);
  CHECK(g.texts.batch() == 30);
  CHECK(g.choice.level == Level::RefinedStroke);
  CHECK(g.choice.components == Components::Both);
  for (int i = 0; i < g.size(); ++i) {
    CHECK(g.texts.length[static_cast<std::size_t>(i)] == lex.at(chars[static_cast<std::size_t>(i)]).stroke_seq.length());
  }
  const auto again = embed_gallery(model, lex, chars, {});
  CHECK(std::equal(g.texts.tokens.values().begin(), g.texts.tokens.values().end(),
                   again.texts.tokens.values().begin()));
  CHECK(model.training());  // inference scope restores the mode

  const std::vector<std::string> dup{chars[0], chars[1], chars[0]};
  CHECK(code_of([&] { embed_gallery(model, lex, dup, {}); }) == ErrorCode::DuplicateCandidate);
  const std::vector<std::string> none;
  CHECK(code_of([&] { embed_gallery(model, lex, none, {}); }) == ErrorCode::EmptyGallery);
  const std::vector<std::string> stranger{"猫"};
  CHECK(code_of([&] { embed_gallery(model, lex, stranger, {}); }) == ErrorCode::CharNotInLexicon);
}

TEST_CASE("ranking: ties go to the earliest candidate") {
  const std::vector<double> s{0.5, 2.0, 2.0, -1.0};
  CHECK(top1(s) == 1);
  Gallery g;
  g.characters = {"a", "b", "c", "d"};
  const auto r = rank(s, g);
  CHECK(r[0].character == "b");
  CHECK(r[1].character == "c");
  CHECK(r[2].character == "a");
  CHECK(r[3].character == "d");
  CHECK(top1(std::vector<double>{3.0, 3.0, 3.0}) == 0);
}

TEST_CASE("scores equal the training-path similarity for every representation") {
  const auto lex = dataset::generate_toy_lexicon(12, 6, 4);
  nn::Rng rng(5);
  Model model(tiny_model(lex), rng);
  const auto chars = lex.characters();
  const auto samples = dataset::render_samples(lex, chars, 32, 1, 3);
  std::vector<const dataset::Sample*> ptrs;
  for (const auto& s : samples) ptrs.push_back(&s);

  for (Level level : alignment::kLevels) {
    for (Components comp : {Components::Both, Components::DetailOnly, Components::StructureOnly}) {
      const ReprChoice choice{level, comp};
      const Gallery g = embed_gallery(model, lex, chars, choice);
      const auto scores = score_images(model, ptrs, g);

      model.set_training(false);
      NoGradGuard guard;
      const ImageFeatures feats = model.image.forward(sample_images(ptrs));
      std::vector<int> all(chars.size());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
      const auto batch = dataset::assemble_batch(samples, all);
      const auto text = model.text.forward(batch.radical, batch.stroke);
      const Tensor sim = alignment::batch_sim(level, feats, decouple(text, level), model.temperature, comp);
      model.set_training(true);
      const int n = static_cast<int>(chars.size());
      for (int i = 0; i < n; ++i) {
        for (int t = 0; t < n; ++t) {
          CHECK(scores[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)] ==
                sim.values()[static_cast<std::size_t>(t * n + i)]);
        }
      }
    }
  }
}

TEST_CASE("recognition and evaluation") {
  const auto lex = dataset::generate_toy_lexicon(10, 6, 6);
  nn::Rng rng(7);
  Model model(tiny_model(lex), rng);
  const auto chars = lex.characters();
  const auto samples = dataset::render_samples(lex, chars, 32, 2, 9);

  const std::vector<std::string> one{chars[3]};
  const Gallery single = embed_gallery(model, lex, one, {});
  const auto ranked = recognize(model, samples[0], single);
  REQUIRE(ranked.size() == 1);
  CHECK(ranked[0].character == chars[3]);

  const Gallery g = embed_gallery(model, lex, chars, {});
  const auto first = recognize(model, samples[5], g);
  CHECK(first.size() == chars.size());
  const auto second = recognize(model, samples[5], g);
  for (std::size_t i = 0; i < first.size(); ++i) {
    CHECK(first[i].character == second[i].character);
    CHECK(first[i].score == second[i].score);
  }

  // Counting oracle over the prediction dump.
  const auto result = evaluate_cacc(model, samples, g, {}, 7);
  CHECK(result.total == static_cast<int>(samples.size()));
  int correct = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& p = result.predictions[i];
    CHECK(p.gold == samples[i].character);
    CHECK(p.image_id == std::to_string(i));
    CHECK(p.top1 == recognize(model, samples[i], g)[0].character);
    correct += p.top1 == p.gold;
  }
  CHECK(result.correct == correct);
  CHECK(result.accuracy == static_cast<double>(correct) / static_cast<double>(samples.size()));
  int per_class_total = 0, per_class_correct = 0;
  for (const auto& c : result.per_class) {
    per_class_total += c.total;
    per_class_correct += c.correct;
    CHECK(c.total == 2);
  }
  CHECK(per_class_total == result.total);
  CHECK(per_class_correct == result.correct);
  // Chunking does not change the outcome.
  CHECK(evaluate_cacc(model, samples, g, {}, 64).correct == result.correct);

  // Degenerate galleries: a single candidate is always right when it is the gold class.
  const std::span<const dataset::Sample> just_one(samples.data() + 6, 1);
  const std::vector<std::string> gold{samples[6].character};
  CHECK(evaluate_cacc(model, just_one, embed_gallery(model, lex, gold, {})).accuracy == 1.0);
  const std::vector<std::string> wrong{samples[6].character == chars[0] ? chars[1] : chars[0]};
  CHECK(evaluate_cacc(model, just_one, embed_gallery(model, lex, wrong, {})).accuracy == 0.0);
  CHECK(code_of([&] { evaluate_cacc(model, std::span<const dataset::Sample>{}, g); }) == ErrorCode::EmptySplit);

  // Prediction files round trip and recount to the same accuracy.
  const auto dir = scratch("preds");
  std::filesystem::create_directories(dir);
  write_predictions(dir / "p.tsv", result.predictions);
  const auto back = read_predictions(dir / "p.tsv");
  REQUIRE(back.size() == result.predictions.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].image_id == result.predictions[i].image_id);
    CHECK(back[i].gold == result.predictions[i].gold);
    CHECK(back[i].top1 == result.predictions[i].top1);
    CHECK(back[i].score == result.predictions[i].score);
  }
  CHECK(accuracy_of(back) == result.accuracy);
  CHECK(code_of([] { accuracy_of(std::vector<Prediction>{}); }) == ErrorCode::EmptySplit);
  write_per_class(dir / "c.csv", result.per_class);
  CHECK(std::filesystem::file_size(dir / "c.csv") > 0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("gallery files round trip exactly") {
  const auto lex = dataset::generate_toy_lexicon(8, 5, 8);
  nn::Rng rng(9);
  Model model(tiny_model(lex), rng);
  const auto chars = lex.characters();
  const Gallery g = embed_gallery(model, lex, chars, {Level::Radical, Components::DetailOnly});
  const auto path = scratch("gallery.bin");
  save_gallery(path, g);
  const Gallery h = load_gallery(path);
  CHECK(h.characters == g.characters);
  CHECK(h.choice.level == Level::Radical);
  CHECK(h.choice.components == Components::DetailOnly);
  CHECK(h.texts.family == g.texts.family);
  CHECK(h.texts.detail == g.texts.detail);
  CHECK(h.texts.structure == g.texts.structure);
  CHECK(h.texts.length == g.texts.length);
  CHECK(h.texts.tokens.shape() == g.texts.tokens.shape());
  CHECK(std::equal(g.texts.tokens.values().begin(), g.texts.tokens.values().end(), h.texts.tokens.values().begin()));
  std::filesystem::remove(path);
}

TEST_CASE("attention maps: normalization, upsampling, and file counts") {
  const std::vector<double> flat(4, 3.5);
  for (auto v : attention_map(flat, 2, 2, 8)) CHECK(v == 0);
  const auto m = attention_map(std::vector<double>{0.0, 1.0, 0.5, 0.25}, 2, 2, 4);
  REQUIRE(m.size() == 16);
  CHECK(m[0] == 0);      // (0, 0) from cell (0, 0)
  CHECK(m[3] == 255);    // (0, 3) from cell (0, 1)
  CHECK(m[2 * 4] == 128);  // (2, 0) from cell (1, 0)
  CHECK(m[2 * 4] == m[3 * 4 + 1]);

  const auto lex = dataset::generate_toy_lexicon(6, 4, 10);
  nn::Rng rng(11);
  Model model(tiny_model(lex), rng);
  const std::string ch = lex.characters()[2];
  const auto& entry = lex.at(ch);
  const auto image = dataset::render_procedural(lex, ch, 32, 0);
  const auto dir = scratch("maps");
  const auto written = emit_attention_maps(model, lex, image, ch, dir);
  const int strokes = entry.stroke_seq.detail_count();  // leaves + eos
  const int radicals = entry.radical_seq.detail_count();
  const int structure = entry.stroke_seq.structure_count();
  CHECK(static_cast<int>(written.size()) == 2 * strokes + 2 * radicals + structure);
  CHECK(std::filesystem::exists(dir / ("stroke_" + std::to_string(strokes - 1) + ".pgm")));
  CHECK_FALSE(std::filesystem::exists(dir / ("stroke_" + std::to_string(strokes) + ".pgm")));
  const auto raw = dataset::read_image(dir / "refined_stroke_0.pgm");
  CHECK(raw.height == 32);
  CHECK(code_of([&] { emit_attention_maps(model, lex, image, "猫", dir); }) == ErrorCode::CharNotInLexicon);
  std::filesystem::remove_all(dir);
}

TEST_CASE("random-weight models recognize at chance level") {
  const auto lex = dataset::generate_toy_lexicon(5, 5, 12);
  const auto chars = lex.characters();
  std::mt19937_64 pick(13);
  const int trials = 500;
  int correct = 0;
  for (int t = 0; t < trials; ++t) {
    nn::Rng rng(1000 + static_cast<std::uint64_t>(t));
    ModelConfig cfg = tiny_model(lex);
    cfg.text.fusion_layers = 0;
    Model model(cfg, rng);
    const std::string& gold = chars[pick() % chars.size()];
    const auto samples = dataset::render_samples(lex, std::vector<std::string>{gold}, 32, 1, 500 + t);
    const Gallery g = embed_gallery(model, lex, chars, {});
    correct += recognize(model, samples[0], g)[0].character == gold;
  }
  const double p = 1.0 / static_cast<double>(chars.size());
  const double sigma = std::sqrt(p * (1.0 - p) / trials);
  const double acc = static_cast<double>(correct) / trials;
  CHECK(std::abs(acc - p) <= 3.0 * sigma);
}
