#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mgalign/alignment.hpp"
#include "mgalign/dataset.hpp"
#include "mgalign/lexicon.hpp"
#include "mgalign/model.hpp"

namespace mgalign::retrieval {

struct ReprChoice {
  alignment::Level level = alignment::Level::RefinedStroke;
  alignment::Components components = alignment::Components::Both;
};

std::string repr_name(const ReprChoice& choice);  // e.g. "refined_stroke/both"

// Frozen text representations of the candidate characters, in candidate order.
struct Gallery {
  ReprChoice choice;
  std::vector<std::string> characters;
  alignment::DecoupledRepr texts;

  int size() const { return static_cast<int>(characters.size()); }
};

// Runs the text encoder in inference mode. Throws CharNotInLexicon,
// DuplicateCandidate, EmptyGallery.
Gallery embed_gallery(Model& model, const lexicon::Lexicon& lexicon, std::span<const std::string> candidates,
                      const ReprChoice& choice);

// scores[i][g]: image i against gallery entry g.
std::vector<std::vector<double>> score_images(Model& model, std::span<const dataset::Sample* const> images,
                                              const Gallery& gallery);

struct Ranked {
  std::string character;
  double score = 0.0;
};

// Descending by score; equal scores keep candidate order.
std::vector<Ranked> rank(std::span<const double> scores, const Gallery& gallery);
// Index of the best score; the earliest candidate wins ties.
int top1(std::span<const double> scores);

std::vector<Ranked> recognize(Model& model, const dataset::Sample& image, const Gallery& gallery);

struct ClassAccuracy {
  std::string character;
  int correct = 0;
  int total = 0;
};

struct Prediction {
  std::string image_id;
  std::string gold;
  std::string top1;
  double score = 0.0;
};

struct EvalResult {
  double accuracy = 0.0;
  int correct = 0;
  int total = 0;
  std::vector<Prediction> predictions;
  std::vector<ClassAccuracy> per_class;  // order of first appearance among gold labels
};

// Throws EmptySplit when `samples` is empty. Image ids default to the
// sample position when `ids` is empty.
EvalResult evaluate_cacc(Model& model, std::span<const dataset::Sample> samples, const Gallery& gallery,
                         std::span<const std::string> ids = {}, int chunk = 64);

void write_predictions(const std::filesystem::path& path, std::span<const Prediction> predictions);
std::vector<Prediction> read_predictions(const std::filesystem::path& path);
void write_per_class(const std::filesystem::path& path, std::span<const ClassAccuracy> per_class);
// Accuracy recounted from a prediction dump; EmptySplit if it has no rows.
double accuracy_of(std::span<const Prediction> predictions);

// Gallery file: JSON header with the choice, characters, and token layout,
// followed by the representation values.
void save_gallery(const std::filesystem::path& path, const Gallery& gallery);
Gallery load_gallery(const std::filesystem::path& path);

// Min-max normalized similarity grid, nearest-neighbour upsampled to
// out_size x out_size. A constant grid maps to all zeros.
std::vector<std::uint8_t> attention_map(std::span<const double> sims, int grid_h, int grid_w, int out_size);

// Writes `<level>_<k>.pgm` for every detail token at the stroke, radical,
// refined_stroke, and refined_radical levels and every structure token of
// the refined stroke sequence at the structure level. Returns the paths.
std::vector<std::filesystem::path> emit_attention_maps(Model& model, const lexicon::Lexicon& lexicon,
                                                       const dataset::GlyphImage& image, std::string_view character,
                                                       const std::filesystem::path& out_dir);

}  // namespace mgalign::retrieval
