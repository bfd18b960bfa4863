#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mgalign/lexicon.hpp"

namespace mgalign::dataset {

// H x W x 3, row-major HWC, values in [0, 1].
struct GlyphImage {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  float at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  friend bool operator==(const GlyphImage&, const GlyphImage&) = default;
};

struct Sample {
  GlyphImage image;
  std::string character;
  int lexicon_index = -1;
  lexicon::TokenSequence radical_seq;
  lexicon::TokenSequence stroke_seq;
};

// ---- procedural rendering ---------------------------------------------------

// Axis-aligned box in unit canvas coordinates (x right, y down).
struct Box {
  double x0 = 0.0, y0 = 0.0, x1 = 1.0, y1 = 1.0;
  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  friend bool operator==(const Box&, const Box&) = default;
};

struct PlacedStroke {
  lexicon::StrokeClass stroke;
  Box cell;
  friend bool operator==(const PlacedStroke&, const PlacedStroke&) = default;
};

// Child boxes of a structure operator: binary splits 50/50, middle variants
// 34/33/33, surround operators place the second child in a 60% box pushed
// toward the operator's opening, overlaid gives both children the full box.
std::vector<Box> child_boxes(int op, const Box& parent);
// Leaf strokes of a stroke tree with the cell each is drawn in.
std::vector<PlacedStroke> layout_strokes(const lexicon::DecompositionTree& stroke_tree);

GlyphImage render_strokes(const lexicon::DecompositionTree& stroke_tree, int size, std::uint64_t style_seed);
// Throws CharNotInLexicon; size must be a positive multiple of 32.
GlyphImage render_procedural(const lexicon::Lexicon& lexicon, std::string_view character, int size,
                             std::uint64_t style_seed);

// Samples for `chars`, `per_char` renderings each with style seeds
// seed_base + k. Rendering is spread over `workers` threads; the output
// order is independent of the worker count.
std::vector<Sample> render_samples(const lexicon::Lexicon& lexicon, std::span<const std::string> chars, int size,
                                   int per_char, std::uint64_t seed_base, int workers = 1);

lexicon::Lexicon generate_toy_lexicon(int char_count, int radical_count, std::uint64_t seed);

// ---- image files ------------------------------------------------------------

struct RawImage {
  int height = 0;
  int width = 0;
  int channels = 1;  // 1 or 3
  std::vector<float> pixels;  // [0, 1]
};

RawImage read_image(const std::filesystem::path& path);  // PGM/PPM (P2,P3,P5,P6) or PNG
void write_pgm(const std::filesystem::path& path, int height, int width, std::span<const std::uint8_t> gray);
// Grayscale (channel mean) quantized to 8 bits.
void write_pgm(const std::filesystem::path& path, const GlyphImage& image);
// Bilinear resize with half-pixel centers, replicated to three channels.
GlyphImage to_glyph_image(const RawImage& raw, int size);

// ---- manifests --------------------------------------------------------------

// Reads `dir/manifest.tsv` (relative_image_path TAB CHAR per line).
std::vector<Sample> ingest_manifest(const std::filesystem::path& dir, const lexicon::Lexicon& lexicon, int size);
// Writes 8-bit PGM files plus manifest.tsv.
void write_dataset(const std::filesystem::path& dir, std::span<const Sample> samples);

// ---- batching ---------------------------------------------------------------

struct PaddedTokens {
  int batch = 0;
  int length = 0;                            // padded length (batch max)
  std::vector<int> tokens;                   // [batch * length], pad = kPadToken
  std::vector<lexicon::Component> mask;      // Pad at padded positions
  std::vector<int> valid_length;             // per sample
  std::vector<unsigned char> key_valid() const;
};

PaddedTokens pad_sequences(std::span<const lexicon::TokenSequence* const> seqs);

struct Batch {
  int size = 0;
  int image_size = 0;
  std::vector<double> images;  // [size, H, W, 3]
  PaddedTokens radical;
  PaddedTokens stroke;
  std::vector<int> text_ids;   // equal ids <=> equal characters
  std::vector<std::string> characters;
};

Batch assemble_batch(std::span<const Sample> samples, std::span<const int> indices);

// Deterministic per-epoch shuffle: the order depends only on (count, seed, epoch).
std::vector<std::vector<int>> batch_indices(int count, int batch_size, std::uint64_t shuffle_seed, int epoch);

// Yields the batches of successive epochs in seeded order. A short final
// batch is dropped unless it is the only one.
class BatchStream {
 public:
  BatchStream(std::span<const Sample> samples, int batch_size, std::uint64_t shuffle_seed);
  // Next batch, starting a new epoch when the current one is exhausted.
  Batch next();
  int epoch() const { return epoch_; }
  int batches_per_epoch() const;
  // Resume at the given position.
  void seek(int epoch, int batch_in_epoch);
  int position_in_epoch() const { return static_cast<int>(cursor_); }

 private:
  void reshuffle();

  std::span<const Sample> samples_;
  int batch_size_;
  std::uint64_t seed_;
  int epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::vector<int>> order_;
};

std::vector<Batch> make_batches(std::span<const Sample> samples, int batch_size, std::uint64_t shuffle_seed,
                                int epoch = 0);

}  // namespace mgalign::dataset
