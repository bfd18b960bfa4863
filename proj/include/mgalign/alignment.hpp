#pragma once

#include <array>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "mgalign/dataset.hpp"
#include "mgalign/image_encoder.hpp"
#include "mgalign/lexicon.hpp"
#include "mgalign/tensor.hpp"

namespace mgalign::alignment {

enum class Level { Stroke, RefinedStroke, Radical, RefinedRadical };
inline constexpr std::array<Level, 4> kLevels{Level::Stroke, Level::RefinedStroke, Level::Radical,
                                             Level::RefinedRadical};

std::string_view level_name(Level level);
Level parse_level(std::string_view name);  // InvalidConfig on unknown names
lexicon::Family level_family(Level level);

// Which parts of the decoupled sequence contribute to a score.
enum class Components { Both, DetailOnly, StructureOnly };
std::string_view components_name(Components c);
Components parse_components(std::string_view name);

inline constexpr double kInitialTemperature = 10.0;

// A batch of sequence representations split into detail and structure
// tokens. Indices address rows of `tokens` viewed as [B * L, D]; padding rows
// appear in neither list.
struct DecoupledRepr {
  Tensor tokens;  // [B, L, D]
  lexicon::Family family = lexicon::Family::Stroke;
  std::vector<std::vector<int>> detail;
  std::vector<std::vector<int>> structure;
  std::vector<int> length;  // valid tokens per sequence (detail + structure)

  int batch() const { return static_cast<int>(length.size()); }
};

DecoupledRepr ts_d(const Tensor& repr, const dataset::PaddedTokens& tokens, lexicon::Family family);

// Matching value of one text token against M image tokens given its raw
// similarity vector. Writes the attention weights when `alpha` is non-null.
double psi_token(const double* sims, int m, double lambda, double* alpha = nullptr);

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Sum over text tokens (rows of `text`, N x D) of their matching values
// against `image` (M x D). Zero when N = 0.
double psi(const RowMatrix& text, const RowMatrix& image, double lambda);

// scores[t, i] = psi(rows of text_rows listed in segments[t], image_tokens[i]).
// text_rows: any tensor whose last axis is D; image_tokens: [Bi, M, D];
// lambda: one-element tensor. Differentiable in all three.
Tensor match_scores(const Tensor& text_rows, const std::vector<std::vector<int>>& segments,
                    const Tensor& image_tokens, const Tensor& lambda);

// Image grid paired with the detail tokens of a level.
const Tensor& detail_grid(const ImageFeatures& features, Level level);

// [Bt, Bi] similarities of every text against every image:
//   (psi(detail grid, detail tokens) + psi(structure grid, structure tokens)) / E
Tensor batch_sim(Level level, const ImageFeatures& images, const DecoupledRepr& texts, const Tensor& lambda,
                 Components components = Components::Both);

// Symmetric InfoNCE over a square similarity matrix (rows are texts,
// columns images); each anchor's denominators skip the other entries whose
// text id equals its own.
Tensor contrastive_loss(const Tensor& sim, std::span<const int> text_ids);

struct LossWeights {
  double alpha = 1.0;  // stroke levels
  double beta = 0.1;   // radical levels
};

struct MultiLevelLoss {
  Tensor total;
  std::array<double, 4> per_level{};  // kLevels order
};

// sims in kLevels order.
MultiLevelLoss multi_level_loss(const std::array<Tensor, 4>& sims, const LossWeights& weights,
                                std::span<const int> text_ids);

}  // namespace mgalign::alignment
