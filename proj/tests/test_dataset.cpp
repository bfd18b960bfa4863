#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "mgalign/dataset.hpp"
#include "mgalign/error.hpp"

using namespace mgalign;
using namespace mgalign::dataset;
namespace lx = mgalign::lexicon;

namespace {

std::filesystem::path scratch(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("mgalign_dataset_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

lx::Lexicon small_lexicon() {
  lx::Lexicon lex;
  lex.add("一", "一", "1");
  lex.add("二", "⿱ 一 一", "⿱ 1 1");
  lex.add("十", "十", "⿻ 1 2");
  lex.add("八", "八", "⿰ 3 4");
  lex.add("人", "人", "⿰ 3 5");
  return lex;
}

int ink_pixels(const GlyphImage& img) {
  int n = 0;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) n += img.at(y, x, 0) < 0.5f;
  }
  return n;
}

}  // namespace

TEST_CASE("child boxes follow the fraction table") {
  const Box unit;
  const auto lr = child_boxes(0, unit);
  REQUIRE(lr.size() == 2);
  CHECK(lr[0] == Box{0.0, 0.0, 0.5, 1.0});
  CHECK(lr[1] == Box{0.5, 0.0, 1.0, 1.0});
  const auto ab = child_boxes(1, unit);
  CHECK(ab[0] == Box{0.0, 0.0, 1.0, 0.5});
  const auto mid = child_boxes(2, unit);
  REQUIRE(mid.size() == 3);
  CHECK(mid[0].width() == doctest::Approx(0.34));
  CHECK(mid[1].width() == doctest::Approx(0.33));
  CHECK(mid[2].x1 == doctest::Approx(1.0));
  for (int op = 4; op <= 10; ++op) {
    const auto s = child_boxes(op, unit);
    CHECK(s[0] == unit);
    CHECK(s[1].width() == doctest::Approx(0.6));
    CHECK(s[1].height() == doctest::Approx(0.6));
  }
  const auto overlay = child_boxes(11, unit);
  CHECK(overlay[0] == unit);
  CHECK(overlay[1] == unit);
}

TEST_CASE("rendering is a pure function of its arguments") {
  const auto lex = small_lexicon();
  for (const char* c : {"一", "十", "人"}) {
    const auto a = render_procedural(lex, c, 64, 42);
    const auto b = render_procedural(lex, c, 64, 42);
    CHECK(a == b);
    CHECK(a.height == 64);
    CHECK(a.pixels.size() == 64u * 64u * 3u);
    for (float v : a.pixels) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
  CHECK_FALSE(render_procedural(lex, "人", 64, 1) == render_procedural(lex, "人", 64, 2));
  CHECK_THROWS_AS(render_procedural(lex, "猫", 64, 0), Error);
  CHECK_THROWS_AS(render_procedural(lex, "一", 48, 0), Error);
}

TEST_CASE("a single horizontal stroke stays inside a narrow horizontal band") {
  const auto lex = small_lexicon();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto img = render_procedural(lex, "一", 128, seed);
    int top = img.height, bottom = -1;
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        if (img.at(y, x, 0) < 0.5f) {
          top = std::min(top, y);
          bottom = std::max(bottom, y);
        }
      }
    }
    REQUIRE(bottom >= top);
    CHECK(bottom - top + 1 <= 0.2 * img.height);
  }
}

TEST_CASE("characters differing in one leaf stroke render differently") {
  const auto lex = small_lexicon();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto a = render_procedural(lex, "八", 64, seed);
    const auto b = render_procedural(lex, "人", 64, seed);
    CHECK_FALSE(a == b);
    CHECK(ink_pixels(a) > 0);
  }
}

TEST_CASE("layout places every leaf stroke") {
  const auto lex = generate_toy_lexicon(40, 12, 5);
  for (const auto& e : lex.entries()) {
    const auto placed = layout_strokes(e.stroke_tree);
    CHECK(static_cast<int>(placed.size()) == e.stroke_tree.leaf_count());
    for (const auto& p : placed) {
      CHECK(p.cell.x0 >= 0.0);
      CHECK(p.cell.y0 >= 0.0);
      CHECK(p.cell.x1 <= 1.0 + 1e-12);
      CHECK(p.cell.y1 <= 1.0 + 1e-12);
    }
  }
}

TEST_CASE("toy lexicon is deterministic and self-consistent") {
  const auto a = generate_toy_lexicon(60, 15, 9);
  const auto b = generate_toy_lexicon(60, 15, 9);
  CHECK(lx::format_lexicon(a) == lx::format_lexicon(b));
  CHECK(a.size() == 60);
  CHECK(a.radicals().size() <= 15);
  for (const auto& e : a.entries()) {
    CHECK(lx::flatten(e.radical_tree) == e.radical_seq);
    CHECK(lx::flatten(e.stroke_tree) == e.stroke_seq);
  }
  CHECK(lx::format_lexicon(lx::parse_lexicon(lx::format_lexicon(a))) == lx::format_lexicon(a));
}

TEST_CASE("render_samples order does not depend on the worker count") {
  const auto lex = generate_toy_lexicon(12, 6, 2);
  const auto chars = lex.characters();
  const auto one = render_samples(lex, chars, 32, 3, 100, 1);
  const auto four = render_samples(lex, chars, 32, 3, 100, 4);
  REQUIRE(one.size() == 36);
  REQUIRE(four.size() == one.size());
  for (std::size_t i = 0; i < one.size(); ++i) {
    CHECK(one[i].character == four[i].character);
    CHECK(one[i].image == four[i].image);
    CHECK(one[i].stroke_seq == lex.at(one[i].character).stroke_seq);
  }
}

TEST_CASE("image files: PGM/PPM decoding and bilinear resize") {
  const auto dir = scratch("images");
  const std::vector<std::uint8_t> gray{0, 255, 255, 0};
  write_pgm(dir / "a.pgm", 2, 2, gray);
  const auto raw = read_image(dir / "a.pgm");
  CHECK(raw.height == 2);
  CHECK(raw.channels == 1);
  CHECK(raw.pixels == std::vector<float>{0.0f, 1.0f, 1.0f, 0.0f});

  {
    std::ofstream out(dir / "b.ppm");
    out << "P3\n# comment\n2 1\n255\n255 0 0  0 0 255\n";
  }
  const auto rgb = read_image(dir / "b.ppm");
  CHECK(rgb.channels == 3);
  CHECK(rgb.pixels[0] == 1.0f);
  CHECK(rgb.pixels[5] == 1.0f);

  {
    std::ofstream out(dir / "c.pgm");
    out << "P2\n3 1\n10\n0 5 10\n";
  }
  const auto ascii = read_image(dir / "c.pgm");
  CHECK(ascii.pixels[1] == doctest::Approx(0.5));

  // A constant image stays constant after resizing and fills three channels.
  RawImage flat{4, 4, 1, std::vector<float>(16, 0.25f)};
  const auto g = to_glyph_image(flat, 32);
  CHECK(g.height == 32);
  for (float v : g.pixels) CHECK(v == doctest::Approx(0.25f));
  // Upsampling a 2x2 checkerboard keeps the corners and averages the middle.
  const auto up = to_glyph_image(raw, 32);
  CHECK(up.at(0, 0, 0) == doctest::Approx(0.0f));
  CHECK(up.at(0, 31, 1) == doctest::Approx(1.0f));
  CHECK(up.at(15, 15, 2) == doctest::Approx(up.at(16, 16, 2)));

  {
    std::ofstream out(dir / "bad.pgm");
    out << "P9 garbage";
  }
  CHECK_THROWS_AS(read_image(dir / "bad.pgm"), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("manifests: empty, unknown character, missing image, round trip") {
  const auto lex = small_lexicon();
  const auto dir = scratch("manifest");
  { std::ofstream(dir / "manifest.tsv"); }
  CHECK(ingest_manifest(dir, lex, 32).empty());

  {
    std::ofstream out(dir / "manifest.tsv");
    out << "x.pgm\t一\ny.pgm\t猫\n";
  }
  write_pgm(dir / "x.pgm", 2, 2, std::vector<std::uint8_t>{0, 0, 0, 0});
  try {
    ingest_manifest(dir, lex, 32);
    FAIL("expected CharNotInLexicon");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::CharNotInLexicon);
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  {
    std::ofstream out(dir / "manifest.tsv");
    out << "missing.pgm\t一\n";
  }
  try {
    ingest_manifest(dir, lex, 32);
    FAIL("expected MissingImage");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingImage);
  }
  {
    std::ofstream out(dir / "manifest.tsv");
    out << "x.pgm\t一\n";
    std::ofstream(dir / "x.pgm") << "not an image";
  }
  try {
    ingest_manifest(dir, lex, 32);
    FAIL("expected UnreadableImage");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnreadableImage);
  }

  // Ten samples over eight characters: two of them repeated.
  lx::Lexicon lex8 = small_lexicon();
  lex8.add("丿", "丿", "3");
  lex8.add("乀", "乀", "4");
  lex8.add("丨", "丨", "2");
  const std::vector<std::string> ten{"一", "二", "十", "八", "人", "丿", "乀", "丨", "一", "人"};
  std::vector<Sample> samples = render_samples(lex8, ten, 32, 1, 7);
  const auto out_dir = scratch("written");
  write_dataset(out_dir, samples);
  const auto back = ingest_manifest(out_dir, lex8, 32);
  REQUIRE(back.size() == 10);
  std::vector<int> all(10);
  for (int i = 0; i < 10; ++i) all[static_cast<std::size_t>(i)] = i;
  const auto batch = assemble_batch(back, all);
  CHECK(std::set<int>(batch.text_ids.begin(), batch.text_ids.end()).size() == 8);
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].character == ten[i]);
    // 8-bit quantization of the gray channel.
    for (std::size_t p = 0; p < back[i].image.pixels.size(); p += 97) {
      CHECK(std::abs(back[i].image.pixels[p] - samples[i].image.pixels[p]) <= 1.0f / 255.0f + 1e-6f);
    }
  }
  std::filesystem::remove_all(dir);
  std::filesystem::remove_all(out_dir);
}

TEST_CASE("batches: sizes, determinism, padding, and text ids") {
  const auto lex = generate_toy_lexicon(30, 10, 4);
  const auto chars = lex.characters();
  const auto five = render_samples(lex, std::span<const std::string>(chars).first(5), 32, 1, 0);
  const auto batches = make_batches(five, 2, 17);
  REQUIRE(batches.size() == 3);
  CHECK(batches[0].size == 2);
  CHECK(batches[1].size == 2);
  CHECK(batches[2].size == 1);
  CHECK(batch_indices(5, 2, 17, 0) == batch_indices(5, 2, 17, 0));
  CHECK_FALSE(batch_indices(50, 50, 17, 0) == batch_indices(50, 50, 17, 1));
  CHECK_THROWS_AS(batch_indices(5, 0, 1, 0), Error);

  // Property: text ids mirror character equality; padding arithmetic holds.
  std::mt19937_64 rng(8);
  const auto pool = render_samples(lex, chars, 32, 2, 0);
  for (int trial = 0; trial < 100; ++trial) {
    const int b = std::uniform_int_distribution<int>(1, 12)(rng);
    std::vector<int> idx;
    for (int i = 0; i < b; ++i) {
      idx.push_back(std::uniform_int_distribution<int>(0, static_cast<int>(pool.size()) - 1)(rng));
    }
    const Batch batch = assemble_batch(pool, idx);
    for (int i = 0; i < b; ++i) {
      for (int j = 0; j < b; ++j) {
        CHECK((batch.text_ids[i] == batch.text_ids[j]) == (batch.characters[i] == batch.characters[j]));
      }
    }
    for (const PaddedTokens* p : {&batch.radical, &batch.stroke}) {
      const auto valid = p->key_valid();
      for (int i = 0; i < b; ++i) {
        int detail = 0, structure = 0, pad = 0;
        for (int t = 0; t < p->length; ++t) {
          const auto k = static_cast<std::size_t>(i * p->length + t);
          const auto m = p->mask[k];
          detail += m == lx::Component::Detail;
          structure += m == lx::Component::Structure;
          pad += m == lx::Component::Pad;
          CHECK((m == lx::Component::Pad) == (p->tokens[k] == lx::kPadToken));
          CHECK(static_cast<bool>(valid[k]) == (t < p->valid_length[static_cast<std::size_t>(i)]));
        }
        CHECK(detail + structure + pad == p->length);
      }
    }
  }
}

TEST_CASE("batch stream walks epochs in seeded order and can seek") {
  const auto lex = generate_toy_lexicon(10, 6, 1);
  const auto chars = lex.characters();
  const auto samples = render_samples(lex, chars, 32, 1, 0);
  BatchStream a(samples, 4, 99), b(samples, 4, 99);
  CHECK(a.batches_per_epoch() == 2);  // 10 / 4 with the short tail dropped
  std::vector<std::vector<std::string>> seen;
  for (int i = 0; i < 5; ++i) {
    const auto x = a.next();
    CHECK(x.size == 4);
    CHECK(x.characters == b.next().characters);
    seen.push_back(x.characters);
  }
  CHECK(a.epoch() == 2);
  BatchStream c(samples, 4, 99);
  c.seek(1, 1);
  CHECK(c.next().characters == seen[3]);

  BatchStream tiny(std::span<const Sample>(samples).first(3), 8, 1);
  CHECK(tiny.batches_per_epoch() == 1);
  CHECK(tiny.next().size == 3);
}
