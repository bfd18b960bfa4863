#include "mgalign/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "mgalign/error.hpp"

namespace mgalign::alignment {

namespace {

constexpr double kNormFloor = 1e-12;

using ConstRowMap = Eigen::Map<const RowMatrix>;
using RowMap = Eigen::Map<RowMatrix>;

}  // namespace

std::string_view level_name(Level level) {
  switch (level) {
    case Level::Stroke: return "stroke";
    case Level::RefinedStroke: return "refined_stroke";
    case Level::Radical: return "radical";
    case Level::RefinedRadical: return "refined_radical";
  }
  return "?";
}

Level parse_level(std::string_view name) {
  for (Level l : kLevels) {
    if (level_name(l) == name) return l;
  }
  throw Error(ErrorCode::InvalidConfig, "unknown level '" + std::string(name) + "'");
}

lexicon::Family level_family(Level level) {
  return level == Level::Stroke || level == Level::RefinedStroke ? lexicon::Family::Stroke
                                                                  : lexicon::Family::Radical;
}

std::string_view components_name(Components c) {
  switch (c) {
    case Components::Both: return "both";
    case Components::DetailOnly: return "detail_only";
    case Components::StructureOnly: return "structure_only";
  }
  return "?";
}

Components parse_components(std::string_view name) {
  for (Components c : {Components::Both, Components::DetailOnly, Components::StructureOnly}) {
    if (components_name(c) == name) return c;
  }
  throw Error(ErrorCode::InvalidConfig, "unknown components '" + std::string(name) + "'");
}

DecoupledRepr ts_d(const Tensor& repr, const dataset::PaddedTokens& tokens, lexicon::Family family) {
  if (repr.rank() != 3 || repr.size(0) != tokens.batch || repr.size(1) != tokens.length) {
    throw Error(ErrorCode::ShapeMismatch, "representation " + shape_str(repr.shape()) + " vs tokens [" +
                                              std::to_string(tokens.batch) + ", " + std::to_string(tokens.length) +
                                              "]");
  }
  DecoupledRepr out;
  out.tokens = repr;
  out.family = family;
  out.detail.resize(tokens.batch);
  out.structure.resize(tokens.batch);
  out.length.assign(tokens.batch, 0);
  for (int b = 0; b < tokens.batch; ++b) {
    for (int p = 0; p < tokens.length; ++p) {
      const int row = b * tokens.length + p;
      switch (tokens.mask[row]) {
        case lexicon::Component::Detail: out.detail[b].push_back(row); break;
        case lexicon::Component::Structure: out.structure[b].push_back(row); break;
        case lexicon::Component::Pad: continue;
      }
      ++out.length[b];
    }
  }
  return out;
}

double psi_token(const double* sims, int m, double lambda, double* alpha) {
  double sq = 0.0;
  for (int k = 0; k < m; ++k) sq += sims[k] * sims[k];
  const double inv = 1.0 / std::max(std::sqrt(sq), kNormFloor);
  double peak = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < m; ++k) peak = std::max(peak, lambda * sims[k] * inv);
  double z = 0.0, weighted = 0.0;
  for (int k = 0; k < m; ++k) {
    const double e = std::exp(lambda * sims[k] * inv - peak);
    if (alpha) alpha[k] = e;
    z += e;
    weighted += e * sims[k];
  }
  if (alpha) {
    for (int k = 0; k < m; ++k) alpha[k] /= z;
  }
  return weighted / z;
}

double psi(const RowMatrix& text, const RowMatrix& image, double lambda) {
  if (text.rows() == 0) return 0.0;
  const RowMatrix sims = text * image.transpose();
  double total = 0.0;
  for (Eigen::Index n = 0; n < sims.rows(); ++n) total += psi_token(sims.row(n).data(), image.rows(), lambda);
  return total;
}

Tensor match_scores(const Tensor& text_rows, const std::vector<std::vector<int>>& segments,
                    const Tensor& image_tokens, const Tensor& lambda) {
  if (image_tokens.rank() != 3 || image_tokens.size(2) != text_rows.size(-1)) {
    throw Error(ErrorCode::ShapeMismatch,
                "image tokens " + shape_str(image_tokens.shape()) + " vs text " + shape_str(text_rows.shape()));
  }
  const int d = text_rows.size(-1), bi = image_tokens.size(0), m = image_tokens.size(1);
  const int bt = static_cast<int>(segments.size());
  const int source_rows = static_cast<int>(text_rows.numel() / d);

  std::vector<int> rows, owner;
  for (int t = 0; t < bt; ++t) {
    for (int r : segments[t]) {
      if (r < 0 || r >= source_rows) throw Error(ErrorCode::ShapeMismatch, "text row index out of range");
      rows.push_back(r);
      owner.push_back(t);
    }
  }
  const int n = static_cast<int>(rows.size());
  const int cols = bi * m;

  ConstRowMap src(text_rows.values().data(), source_rows, d);
  ConstRowMap images(image_tokens.values().data(), cols, d);
  auto gathered = std::make_shared<RowMatrix>(n, d);
  for (int i = 0; i < n; ++i) gathered->row(i) = src.row(rows[i]);
  auto sims = std::make_shared<RowMatrix>(n, cols);
  if (n > 0) sims->noalias() = *gathered * images.transpose();
  auto alpha = std::make_shared<RowMatrix>(n, cols);
  auto token_psi = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n) * bi);

  const double lam = lambda.item();
  std::vector<double> out(static_cast<std::size_t>(bt) * bi, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < bi; ++j) {
      const double p = psi_token(&(*sims)(i, j * m), m, lam, &(*alpha)(i, j * m));
      (*token_psi)[static_cast<std::size_t>(i) * bi + j] = p;
      out[static_cast<std::size_t>(owner[i]) * bi + j] += p;
    }
  }

  return make_result(
      Shape{bt, bi}, std::move(out), {text_rows, image_tokens, lambda},
      [text_rows, image_tokens, lambda, rows = std::move(rows), owner = std::move(owner), gathered, sims, alpha,
       token_psi, lam, n, bi, m, d, cols, source_rows](detail::Node& self) {
        RowMatrix gsims(n, cols);
        double glam = 0.0;
        std::vector<double> u(m), gu(m);
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j < bi; ++j) {
            const double g = self.grad[static_cast<std::size_t>(owner[i]) * bi + j];
            double* gs = &gsims(i, j * m);
            if (g == 0.0) {
              std::fill(gs, gs + m, 0.0);
              continue;
            }
            const double* s = &(*sims)(i, j * m);
            const double* a = &(*alpha)(i, j * m);
            const double p = (*token_psi)[static_cast<std::size_t>(i) * bi + j];
            double sq = 0.0;
            for (int k = 0; k < m; ++k) sq += s[k] * s[k];
            const double norm = std::sqrt(sq);
            const double inv = 1.0 / std::max(norm, kNormFloor);
            // Through the softmax logits z = lambda * s / |s|.
            double proj = 0.0;
            for (int k = 0; k < m; ++k) {
              u[k] = s[k] * inv;
              const double gz = g * a[k] * (s[k] - p);
              glam += gz * u[k];
              gu[k] = lam * gz;
              proj += u[k] * gu[k];
            }
            const bool normalized = norm > kNormFloor;
            for (int k = 0; k < m; ++k) {
              const double through_norm = normalized ? (gu[k] - u[k] * proj) * inv : gu[k] * inv;
              gs[k] = g * a[k] + through_norm;
            }
          }
        }
        if (double* gt = grad_target(text_rows)) {
          const RowMatrix grows = gsims * ConstRowMap(image_tokens.values().data(), cols, d);
          RowMap dst(gt, source_rows, d);
          for (int i = 0; i < n; ++i) dst.row(rows[i]) += grows.row(i);
        }
        if (double* gi = grad_target(image_tokens)) {
          RowMap(gi, cols, d).noalias() += gsims.transpose() * *gathered;
        }
        if (double* gl = grad_target(lambda)) gl[0] += glam;
      });
}

const Tensor& detail_grid(const ImageFeatures& features, Level level) {
  switch (level) {
    case Level::Stroke: return features.stroke;
    case Level::RefinedStroke: return features.refined_stroke;
    case Level::Radical: return features.radical;
    case Level::RefinedRadical: return features.refined_radical;
  }
  throw Error(ErrorCode::InvalidConfig, "bad level");
}

Tensor batch_sim(Level level, const ImageFeatures& images, const DecoupledRepr& texts, const Tensor& lambda,
                 Components components) {
  if (texts.family != level_family(level)) {
    throw Error(ErrorCode::LevelMismatch, std::string(lexicon::family_name(texts.family)) +
                                              " sequences cannot be scored at the " +
                                              std::string(level_name(level)) + " level");
  }
  Tensor total;
  if (components != Components::StructureOnly) {
    total = match_scores(texts.tokens, texts.detail, image_tokens(detail_grid(images, level)), lambda);
  }
  if (components != Components::DetailOnly) {
    Tensor structure = match_scores(texts.tokens, texts.structure, image_tokens(images.structure), lambda);
    total = total.defined() ? add(total, structure) : structure;
  }
  std::vector<double> inv_length(texts.length.size());
  for (std::size_t t = 0; t < inv_length.size(); ++t) {
    inv_length[t] = texts.length[t] > 0 ? 1.0 / texts.length[t] : 0.0;
  }
  return scale_rows(total, inv_length);
}

Tensor contrastive_loss(const Tensor& sim, std::span<const int> text_ids) {
  if (sim.rank() != 2 || sim.size(0) != sim.size(1) || static_cast<std::size_t>(sim.size(0)) != text_ids.size()) {
    throw Error(ErrorCode::ShapeMismatch, "contrastive loss expects a square b x b matrix with b text ids, got " +
                                              shape_str(sim.shape()));
  }
  const int b = sim.size(0);
  const auto s = sim.values();
  auto at = [&](int r, int c) { return s[static_cast<std::size_t>(r) * b + c]; };
  auto kept = [&](int anchor, int other) { return other == anchor || text_ids[other] != text_ids[anchor]; };

  // Softmax weights over each anchor's kept row / column entries.
  auto row_p = std::make_shared<std::vector<double>>(static_cast<std::size_t>(b) * b, 0.0);
  auto col_p = std::make_shared<std::vector<double>>(static_cast<std::size_t>(b) * b, 0.0);
  double total = 0.0;
  for (int i = 0; i < b; ++i) {
    for (int pass = 0; pass < 2; ++pass) {
      auto value = [&](int j) { return pass == 0 ? at(i, j) : at(j, i); };
      double peak = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < b; ++j) {
        if (kept(i, j)) peak = std::max(peak, value(j));
      }
      double z = 0.0;
      for (int j = 0; j < b; ++j) {
        if (kept(i, j)) z += std::exp(value(j) - peak);
      }
      const double lse = peak + std::log(z);
      total += lse - at(i, i);
      auto& p = pass == 0 ? *row_p : *col_p;
      for (int j = 0; j < b; ++j) {
        if (kept(i, j)) p[static_cast<std::size_t>(i) * b + j] = std::exp(value(j) - lse);
      }
    }
  }
  const double norm = 1.0 / (2.0 * b);
  return make_result(Shape{1}, {total * norm}, {sim}, [sim, row_p, col_p, b, norm](detail::Node& self) {
    double* gs = grad_target(sim);
    if (!gs) return;
    const double g = self.grad[0] * norm;
    for (int i = 0; i < b; ++i) {
      gs[static_cast<std::size_t>(i) * b + i] -= 2.0 * g;
      for (int j = 0; j < b; ++j) {
        gs[static_cast<std::size_t>(i) * b + j] += g * (*row_p)[static_cast<std::size_t>(i) * b + j];
        gs[static_cast<std::size_t>(j) * b + i] += g * (*col_p)[static_cast<std::size_t>(i) * b + j];
      }
    }
  });
}

MultiLevelLoss multi_level_loss(const std::array<Tensor, 4>& sims, const LossWeights& weights,
                                std::span<const int> text_ids) {
  if (weights.alpha < 0.0 || weights.beta < 0.0) throw Error(ErrorCode::InvalidConfig, "loss weights must be >= 0");
  MultiLevelLoss out;
  for (std::size_t l = 0; l < kLevels.size(); ++l) {
    const Tensor term = contrastive_loss(sims[l], text_ids);
    out.per_level[l] = term.item();
    const double w = level_family(kLevels[l]) == lexicon::Family::Stroke ? weights.alpha : weights.beta;
    const Tensor weighted = scale(term, w);
    out.total = out.total.defined() ? add(out.total, weighted) : weighted;
  }
  return out;
}

}  // namespace mgalign::alignment
