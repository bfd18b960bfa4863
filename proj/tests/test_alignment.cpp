#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "mgalign/alignment.hpp"
#include "mgalign/error.hpp"
#include "support.hpp"

using namespace mgalign;
using namespace mgalign::alignment;
using lexicon::Component;

namespace {

using Rows = std::vector<std::vector<double>>;

Rows random_rows(int n, int d, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Rows r(n, std::vector<double>(d));
  for (auto& row : r) {
    for (double& x : row) x = dist(rng);
  }
  return r;
}

RowMatrix to_matrix(const Rows& rows, int d) {
  RowMatrix m(static_cast<Eigen::Index>(rows.size()), d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (int j = 0; j < d; ++j) m(i, j) = rows[i][j];
  }
  return m;
}

// Literal triple loop: similarities, L2-normalized logits, softmax, weighted sum.
double oracle_psi(const Rows& text, const Rows& image, double lambda) {
  double total = 0.0;
  for (const auto& t : text) {
    std::vector<double> sims;
    for (const auto& v : image) {
      double s = 0.0;
      for (std::size_t d = 0; d < t.size(); ++d) s += t[d] * v[d];
      sims.push_back(s);
    }
    double sq = 0.0;
    for (double s : sims) sq += s * s;
    const double norm = std::sqrt(sq);
    double z = 0.0;
    for (double s : sims) z += std::exp(lambda * s / norm);
    for (double s : sims) total += std::exp(lambda * s / norm) / z * s;
  }
  return total;
}

// Literal symmetric InfoNCE with per-anchor duplicate removal.
double oracle_contrastive(const Rows& s, const std::vector<int>& ids) {
  const int b = static_cast<int>(ids.size());
  double sum = 0.0;
  for (int i = 0; i < b; ++i) {
    double row = 0.0, col = 0.0;
    for (int j = 0; j < b; ++j) {
      if (j != i && ids[j] == ids[i]) continue;
      row += std::exp(s[i][j]);
      col += std::exp(s[j][i]);
    }
    sum += std::log(std::exp(s[i][i]) / row) + std::log(std::exp(s[i][i]) / col);
  }
  return -sum / (2.0 * b);
}

struct RandomBatch {
  ImageFeatures images;
  std::vector<Rows> grids;  // per level image, tokens of [stroke, refined_stroke, radical, refined_radical, structure]
  dataset::PaddedTokens tokens;
  Tensor repr;
};

// Random features for `bi` images with grids of m_detail / m_struct tokens and
// `bt` texts whose masks are random Detail/Structure prefixes followed by Pad.
RandomBatch random_batch(int bi, int bt, int d, std::mt19937_64& rng) {
  RandomBatch rb;
  const int side = testing::uniform_int(rng, 1, 3), side_u = testing::uniform_int(rng, 1, 2);
  auto grid = [&](int s) { return testing::random_tensor({bi, s, s, d}, rng); };
  rb.images.stroke = grid(side);
  rb.images.refined_stroke = grid(side);
  rb.images.radical = grid(side);
  rb.images.refined_radical = grid(side);
  rb.images.structure = grid(side_u);
  const int length = testing::uniform_int(rng, 1, 6);
  rb.tokens.batch = bt;
  rb.tokens.length = length;
  for (int t = 0; t < bt; ++t) {
    const int valid = testing::uniform_int(rng, 1, length);
    rb.tokens.valid_length.push_back(valid);
    for (int p = 0; p < length; ++p) {
      rb.tokens.tokens.push_back(p < valid ? 14 : 0);
      Component c = Component::Pad;
      if (p < valid) c = testing::uniform_int(rng, 0, 2) == 0 ? Component::Structure : Component::Detail;
      rb.tokens.mask.push_back(c);
    }
  }
  rb.repr = testing::random_tensor({bt, length, d}, rng);
  return rb;
}

Rows image_rows(const Tensor& grid, int image) {
  const int h = grid.size(1), w = grid.size(2), d = grid.size(3);
  Rows out;
  for (int m = 0; m < h * w; ++m) {
    const double* p = grid.values().data() + (static_cast<std::size_t>(image) * h * w + m) * d;
    out.emplace_back(p, p + d);
  }
  return out;
}

// Direct token-by-token evaluation of the decoupled similarity for one pair.
double oracle_sim(const RandomBatch& rb, Level level, int text, int image) {
  const int d = rb.repr.size(2), length = rb.tokens.length;
  Rows detail, structure;
  for (int p = 0; p < length; ++p) {
    const double* row = rb.repr.values().data() + (static_cast<std::size_t>(text) * length + p) * d;
    const Component c = rb.tokens.mask[static_cast<std::size_t>(text) * length + p];
    if (c == Component::Detail) detail.emplace_back(row, row + d);
    if (c == Component::Structure) structure.emplace_back(row, row + d);
  }
  const double e = static_cast<double>(detail.size() + structure.size());
  const double lambda = kInitialTemperature;
  return (oracle_psi(detail, image_rows(detail_grid(rb.images, level), image), lambda) +
          oracle_psi(structure, image_rows(rb.images.structure, image), lambda)) /
         e;
}

}  // namespace

TEST_CASE("psi: single token and single image token gives the inner product") {
  const RowMatrix t{{1.5, -2.0, 0.5}};
  const RowMatrix v{{0.25, 1.0, 4.0}};
  CHECK(psi(t, v, 10.0) == doctest::Approx(1.5 * 0.25 - 2.0 + 2.0).epsilon(1e-15));
}

TEST_CASE("psi: constant similarities give uniform weights and the constant") {
  // Every image token equal -> every similarity equal.
  RowMatrix t(2, 2);
  t << 1.0, 2.0, -1.0, 0.5;
  RowMatrix v(4, 2);
  for (int m = 0; m < 4; ++m) v.row(m) << 0.3, -0.7;
  std::vector<double> alpha(4);
  const double s0 = 1.0 * 0.3 - 2.0 * 0.7;
  const double sims[4] = {s0, s0, s0, s0};
  CHECK(psi_token(sims, 4, 10.0, alpha.data()) == doctest::Approx(s0).epsilon(1e-14));
  for (double a : alpha) CHECK(a == doctest::Approx(0.25).epsilon(1e-14));
  const double s1 = -0.3 - 0.35;
  CHECK(psi(t, v, 10.0) == doctest::Approx(s0 + s1).epsilon(1e-14));
}

TEST_CASE("psi: empty text gives zero") {
  RowMatrix t(0, 3), v(5, 3);
  v.setOnes();
  CHECK(psi(t, v, 10.0) == 0.0);
}

TEST_CASE("psi: N=2, M=3, lambda=1 matches the triple-loop oracle") {
  std::mt19937_64 rng(2);
  const auto t = random_rows(2, 5, rng), v = random_rows(3, 5, rng);
  CHECK(std::abs(psi(to_matrix(t, 5), to_matrix(v, 5), 1.0) - oracle_psi(t, v, 1.0)) <= 1e-10);
}

TEST_CASE("psi: invariant under permutations of image tokens and of text tokens") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = testing::uniform_int(rng, 1, 6), m = testing::uniform_int(rng, 1, 16),
              d = testing::uniform_int(rng, 1, 16);
    auto t = random_rows(n, d, rng), v = random_rows(m, d, rng);
    const double base = psi(to_matrix(t, d), to_matrix(v, d), 10.0);
    std::shuffle(v.begin(), v.end(), rng);
    CHECK(std::abs(psi(to_matrix(t, d), to_matrix(v, d), 10.0) - base) <= 1e-12 * std::max(1.0, std::abs(base)));
    std::shuffle(t.begin(), t.end(), rng);
    CHECK(std::abs(psi(to_matrix(t, d), to_matrix(v, d), 10.0) - base) <= 1e-12 * std::max(1.0, std::abs(base)));
  }
}

TEST_CASE("ts_d: partitions valid tokens by mask in stable order") {
  dataset::PaddedTokens tok;
  tok.batch = 1;
  tok.length = 7;
  tok.tokens = {2, 3, 14, 15, 16, 1, 0};
  tok.mask = {Component::Structure, Component::Structure, Component::Detail, Component::Detail,
              Component::Detail,    Component::Detail,    Component::Pad};
  tok.valid_length = {6};
  const auto r = ts_d(Tensor({1, 7, 4}, 0.0), tok, lexicon::Family::Stroke);
  CHECK(r.structure[0] == std::vector<int>{0, 1});
  CHECK(r.detail[0] == std::vector<int>{2, 3, 4, 5});
  CHECK(r.length[0] == 6);
}

TEST_CASE("ts_d: detail plus structure equals valid length for random masks") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const auto rb = random_batch(1, testing::uniform_int(rng, 1, 4), 3, rng);
    const auto r = ts_d(rb.repr, rb.tokens, lexicon::Family::Radical);
    for (int t = 0; t < rb.tokens.batch; ++t) {
      CHECK(static_cast<int>(r.detail[t].size() + r.structure[t].size()) == rb.tokens.valid_length[t]);
      CHECK(r.length[t] == rb.tokens.valid_length[t]);
    }
  }
}

TEST_CASE("batch_sim matches the token-by-token oracle at every level") {
  std::mt19937_64 rng(5);
  const Tensor lambda = Tensor::scalar(kInitialTemperature);
  for (int trial = 0; trial < 40; ++trial) {
    const int bi = testing::uniform_int(rng, 1, 4), bt = testing::uniform_int(rng, 1, 4);
    const int d = testing::uniform_int(rng, 1, 8);
    const auto rb = random_batch(bi, bt, d, rng);
    for (Level level : kLevels) {
      const auto texts = ts_d(rb.repr, rb.tokens, level_family(level));
      const Tensor s = batch_sim(level, rb.images, texts, lambda);
      REQUIRE(s.shape() == Shape{bt, bi});
      for (int t = 0; t < bt; ++t) {
        for (int i = 0; i < bi; ++i) {
          CHECK(std::abs(s.values()[static_cast<std::size_t>(t) * bi + i] - oracle_sim(rb, level, t, i)) <= 1e-10);
        }
      }
    }
  }
}

TEST_CASE("batch_sim: entries equal single-pair calls") {
  std::mt19937_64 rng(6);
  const Tensor lambda = Tensor::scalar(kInitialTemperature);
  const auto rb = random_batch(3, 3, 4, rng);
  const auto texts = ts_d(rb.repr, rb.tokens, lexicon::Family::Stroke);
  const Tensor all = batch_sim(Level::RefinedStroke, rb.images, texts, lambda);
  for (int t = 0; t < 3; ++t) {
    for (int i = 0; i < 3; ++i) {
      // Restrict both sides to one element.
      DecoupledRepr one;
      one.tokens = texts.tokens;
      one.family = texts.family;
      one.detail = {texts.detail[t]};
      one.structure = {texts.structure[t]};
      one.length = {texts.length[t]};
      ImageFeatures img;
      auto pick = [&](const Tensor& g) {
        const std::size_t per = g.numel() / g.size(0);
        std::vector<double> v(g.values().begin() + i * per, g.values().begin() + (i + 1) * per);
        return Tensor({1, g.size(1), g.size(2), g.size(3)}, std::move(v));
      };
      img.refined_stroke = pick(rb.images.refined_stroke);
      img.structure = pick(rb.images.structure);
      const Tensor single = batch_sim(Level::RefinedStroke, img, one, lambda);
      CHECK(single.item() == doctest::Approx(all.values()[t * 3 + i]).epsilon(1e-13));
    }
  }
}

TEST_CASE("batch_sim: empty structure part and single-stroke sequences") {
  ImageFeatures img;
  img.stroke = Tensor({1, 1, 1, 2}, std::vector<double>{1.0, 2.0});
  img.structure = Tensor({1, 1, 1, 2}, std::vector<double>{5.0, 5.0});
  dataset::PaddedTokens tok;
  tok.batch = 1;
  tok.length = 2;
  tok.tokens = {14, 1};
  tok.mask = {Component::Detail, Component::Detail};
  tok.valid_length = {2};
  const Tensor repr({1, 2, 2}, std::vector<double>{1.0, 0.0, 0.0, 1.0});
  const auto texts = ts_d(repr, tok, lexicon::Family::Stroke);
  const Tensor s = batch_sim(Level::Stroke, img, texts, Tensor::scalar(10.0));
  // psi over two tokens against a single image token: 1 + 2, halved by E = 2.
  CHECK(s.item() == doctest::Approx(1.5).epsilon(1e-15));
}

TEST_CASE("batch_sim: sequences from the wrong family raise LevelMismatch") {
  std::mt19937_64 rng(7);
  const auto rb = random_batch(1, 1, 2, rng);
  const auto texts = ts_d(rb.repr, rb.tokens, lexicon::Family::Radical);
  try {
    batch_sim(Level::Stroke, rb.images, texts, Tensor::scalar(10.0));
    FAIL("expected LevelMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::LevelMismatch);
  }
}

TEST_CASE("contrastive loss: trivial batches") {
  CHECK(contrastive_loss(Tensor({1, 1}, std::vector<double>{3.7}), std::vector<int>{0}).item() == 0.0);
  const Tensor s({2, 2}, std::vector<double>{1.0, 5.0, -3.0, 2.0});
  CHECK(contrastive_loss(s, std::vector<int>{4, 4}).item() == 0.0);
}

TEST_CASE("contrastive loss: hand-chosen 3x3 matrix matches the literal formula") {
  const Rows m{{2.0, 0.5, -1.0}, {0.0, 1.5, 0.25}, {-0.5, 1.0, 3.0}};
  const Tensor s({3, 3}, std::vector<double>{2.0, 0.5, -1.0, 0.0, 1.5, 0.25, -0.5, 1.0, 3.0});
  const std::vector<int> ids{0, 1, 2};
  CHECK(std::abs(contrastive_loss(s, ids).item() - oracle_contrastive(m, ids)) <= 1e-10);
}

TEST_CASE("contrastive loss: random batches with duplicates match the oracle and are non-negative") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const int b = testing::uniform_int(rng, 1, 6);
    Rows m = random_rows(b, b, rng);
    std::vector<int> ids(b);
    for (int& id : ids) id = testing::uniform_int(rng, 0, 2);
    std::vector<double> flat;
    for (const auto& r : m) flat.insert(flat.end(), r.begin(), r.end());
    const double loss = contrastive_loss(Tensor({b, b}, flat), ids).item();
    CHECK(std::abs(loss - oracle_contrastive(m, ids)) <= 1e-10);
    CHECK(loss >= -1e-15);
  }
}

TEST_CASE("contrastive loss: a duplicate column does not enter the anchor's row term") {
  // Anchor 0 with text id 7; appending a pair with the same text must not
  // change anchor 0's text-to-image term. Isolate that term by making every
  // other contribution identical between the two batches.
  std::mt19937_64 rng(9);
  const Rows base = random_rows(2, 2, rng);
  auto row_term = [](const Rows& s, const std::vector<int>& ids, int i) {
    double z = 0.0;
    for (std::size_t j = 0; j < ids.size(); ++j) {
      if (static_cast<int>(j) != i && ids[j] == ids[i]) continue;
      z += std::exp(s[i][j]);
    }
    return -std::log(std::exp(s[i][i]) / z);
  };
  Rows grown = base;
  for (auto& r : grown) r.push_back(50.0);  // a column that would dominate if counted
  grown.push_back({0.1, 0.2, 0.3});
  CHECK(row_term(grown, {7, 8, 7}, 0) == doctest::Approx(row_term(base, {7, 8}, 0)).epsilon(1e-15));
  // The implementation agrees with that oracle on the grown batch.
  std::vector<double> flat;
  for (const auto& r : grown) flat.insert(flat.end(), r.begin(), r.end());
  CHECK(std::abs(contrastive_loss(Tensor({3, 3}, flat), std::vector<int>{7, 8, 7}).item() -
                 oracle_contrastive(grown, {7, 8, 7})) <= 1e-10);
}

TEST_CASE("multi-level loss is the weighted sum of four contrastive losses") {
  std::mt19937_64 rng(10);
  std::array<Tensor, 4> sims;
  for (auto& s : sims) s = testing::random_tensor({3, 3}, rng);
  const std::vector<int> ids{0, 1, 0};
  const LossWeights w{0.7, 0.2};
  const auto ml = multi_level_loss(sims, w, ids);
  double expected = 0.0;
  for (std::size_t l = 0; l < 4; ++l) {
    const double term = contrastive_loss(sims[l], ids).item();
    CHECK(ml.per_level[l] == term);
    expected += (l < 2 ? w.alpha : w.beta) * term;
  }
  CHECK(ml.total.item() == doctest::Approx(expected).epsilon(1e-14));
  CHECK(multi_level_loss(sims, {0.0, 0.0}, ids).total.item() == 0.0);
  const LossWeights defaults;
  CHECK(defaults.alpha == 1.0);
  CHECK(defaults.beta == 0.1);
}

TEST_CASE("match_scores and contrastive loss gradients agree with finite differences") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const int b = testing::uniform_int(rng, 2, 3), d = 3;
    auto rb = random_batch(b, b, d, rng);
    Tensor repr = rb.repr;
    repr.set_requires_grad(true);
    Tensor grid = rb.images.refined_stroke;
    grid.set_requires_grad(true);
    Tensor structure = rb.images.structure;
    structure.set_requires_grad(true);
    Tensor lambda = Tensor::scalar(2.0, true);
    const std::vector<int> ids{0, 1, 0};
    auto build = [&] {
      ImageFeatures f;
      f.refined_stroke = grid;
      f.structure = structure;
      const auto texts = ts_d(repr, rb.tokens, lexicon::Family::Stroke);
      return contrastive_loss(batch_sim(Level::RefinedStroke, f, texts, lambda),
                              std::span<const int>(ids.data(), static_cast<std::size_t>(b)));
    };
    CHECK(testing::check_gradients(build, {&repr, &grid, &structure, &lambda}) == 0);
  }
}

TEST_CASE("level and component names round-trip") {
  for (Level l : kLevels) CHECK(parse_level(level_name(l)) == l);
  for (Components c : {Components::Both, Components::DetailOnly, Components::StructureOnly}) {
    CHECK(parse_components(components_name(c)) == c);
  }
  CHECK_THROWS_AS(parse_level("glyph"), Error);
}
