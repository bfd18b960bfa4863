#include "mgalign/retrieval.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mgalign/error.hpp"

namespace mgalign::retrieval {

namespace {

using nlohmann::json;
using alignment::Level;

constexpr char kGalleryMagic[8] = {'M', 'G', 'G', 'A', 'L', 'L', 'R', '\n'};

// Puts the model in inference mode for the lifetime of the guard.
class EvalScope {
 public:
  explicit EvalScope(Model& m) : model_(m), was_training_(m.training()) { model_.set_training(false); }
  ~EvalScope() { model_.set_training(was_training_); }
  EvalScope(const EvalScope&) = delete;
  EvalScope& operator=(const EvalScope&) = delete;

 private:
  Model& model_;
  bool was_training_;
  NoGradGuard no_grad_;
};

TextFeatures encode_characters(Model& model, const lexicon::Lexicon& lexicon, std::span<const std::string> chars) {
  std::vector<const lexicon::TokenSequence*> radical, stroke;
  for (const auto& c : chars) {
    const auto& e = lexicon.at(c);
    radical.push_back(&e.radical_seq);
    stroke.push_back(&e.stroke_seq);
  }
  return model.text.forward(dataset::pad_sequences(radical), dataset::pad_sequences(stroke));
}

}  // namespace

std::string repr_name(const ReprChoice& choice) {
  return std::string(alignment::level_name(choice.level)) + "/" +
         std::string(alignment::components_name(choice.components));
}

Gallery embed_gallery(Model& model, const lexicon::Lexicon& lexicon, std::span<const std::string> candidates,
                      const ReprChoice& choice) {
  if (candidates.empty()) throw Error(ErrorCode::EmptyGallery, "no candidate characters");
  std::set<std::string> seen;
  for (const auto& c : candidates) {
    if (!seen.insert(c).second) throw Error(ErrorCode::DuplicateCandidate, "candidate '" + c + "' listed twice");
    lexicon.index_of(c);
  }
  EvalScope scope(model);
  Gallery g;
  g.choice = choice;
  g.characters.assign(candidates.begin(), candidates.end());
  g.texts = decouple(encode_characters(model, lexicon, candidates), choice.level);
  g.texts.tokens = g.texts.tokens.detach();
  return g;
}

std::vector<std::vector<double>> score_images(Model& model, std::span<const dataset::Sample* const> images,
                                              const Gallery& gallery) {
  if (gallery.size() == 0) throw Error(ErrorCode::EmptyGallery, "gallery is empty");
  EvalScope scope(model);
  const ImageFeatures feats = model.image.forward(sample_images(images));
  const Tensor sims = alignment::batch_sim(gallery.choice.level, feats, gallery.texts, model.temperature,
                                           gallery.choice.components);
  const int g = sims.size(0), b = sims.size(1);
  std::vector<std::vector<double>> out(static_cast<std::size_t>(b), std::vector<double>(static_cast<std::size_t>(g)));
  const auto v = sims.values();
  for (int t = 0; t < g; ++t) {
    for (int i = 0; i < b; ++i) out[i][t] = v[static_cast<std::size_t>(t) * b + i];
  }
  return out;
}

int top1(std::span<const double> scores) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(scores.size()); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

std::vector<Ranked> rank(std::span<const double> scores, const Gallery& gallery) {
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });
  std::vector<Ranked> out;
  out.reserve(order.size());
  for (int i : order) out.push_back({gallery.characters[i], scores[i]});
  return out;
}

std::vector<Ranked> recognize(Model& model, const dataset::Sample& image, const Gallery& gallery) {
  const dataset::Sample* one[] = {&image};
  return rank(score_images(model, one, gallery)[0], gallery);
}

EvalResult evaluate_cacc(Model& model, std::span<const dataset::Sample> samples, const Gallery& gallery,
                         std::span<const std::string> ids, int chunk) {
  if (samples.empty()) throw Error(ErrorCode::EmptySplit, "no test samples");
  if (!ids.empty() && ids.size() != samples.size()) {
    throw Error(ErrorCode::ShapeMismatch, "image id count differs from sample count");
  }
  EvalResult r;
  std::map<std::string, std::size_t> class_slot;
  for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(chunk)) {
    const std::size_t end = std::min(samples.size(), start + static_cast<std::size_t>(chunk));
    std::vector<const dataset::Sample*> part;
    for (std::size_t i = start; i < end; ++i) part.push_back(&samples[i]);
    const auto scores = score_images(model, part, gallery);
    for (std::size_t i = start; i < end; ++i) {
      const auto& row = scores[i - start];
      const int best = top1(row);
      Prediction p{ids.empty() ? std::to_string(i) : ids[i], samples[i].character, gallery.characters[best], row[best]};
      const bool hit = p.gold == p.top1;
      auto [it, fresh] = class_slot.try_emplace(p.gold, r.per_class.size());
      if (fresh) r.per_class.push_back({p.gold, 0, 0});
      r.per_class[it->second].total += 1;
      r.per_class[it->second].correct += hit ? 1 : 0;
      r.correct += hit ? 1 : 0;
      r.predictions.push_back(std::move(p));
    }
  }
  r.total = static_cast<int>(samples.size());
  r.accuracy = static_cast<double>(r.correct) / r.total;
  return r;
}

void write_predictions(const std::filesystem::path& path, std::span<const Prediction> predictions) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.precision(17);
  out << "image_id\tgold\ttop1\ttop1_score\n";
  for (const auto& p : predictions) out << p.image_id << '\t' << p.gold << '\t' << p.top1 << '\t' << p.score << '\n';
}

std::vector<Prediction> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::vector<Prediction> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (line_no == 1 && line.rfind("image_id\t", 0) == 0)) continue;
    std::vector<std::string> f;
    std::istringstream fields(line);
    for (std::string part; std::getline(fields, part, '\t');) f.push_back(part);
    if (f.size() != 4) {
      throw Error(ErrorCode::ParseError, path.string() + " line " + std::to_string(line_no) + ": expected 4 fields");
    }
    Prediction p{f[0], f[1], f[2], 0.0};
    try {
      p.score = std::stod(f[3]);
    } catch (const std::exception&) {
      throw Error(ErrorCode::ParseError, path.string() + " line " + std::to_string(line_no) + ": bad score");
    }
    out.push_back(std::move(p));
  }
  return out;
}

void write_per_class(const std::filesystem::path& path, std::span<const ClassAccuracy> per_class) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << "character,correct,total,accuracy\n";
  for (const auto& c : per_class) {
    out << c.character << ',' << c.correct << ',' << c.total << ','
        << static_cast<double>(c.correct) / std::max(1, c.total) << '\n';
  }
}

double accuracy_of(std::span<const Prediction> predictions) {
  if (predictions.empty()) throw Error(ErrorCode::EmptySplit, "prediction dump has no rows");
  const auto hits = std::count_if(predictions.begin(), predictions.end(),
                                  [](const Prediction& p) { return p.gold == p.top1; });
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

void save_gallery(const std::filesystem::path& path, const Gallery& gallery) {
  const auto& t = gallery.texts;
  json header{{"level", alignment::level_name(gallery.choice.level)},
              {"components", alignment::components_name(gallery.choice.components)},
              {"characters", gallery.characters},
              {"family", lexicon::family_name(t.family)},
              {"shape", t.tokens.shape()},
              {"detail", t.detail},
              {"structure", t.structure},
              {"length", t.length}};
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  const std::uint64_t n = text.size();
  out.write(kGalleryMagic, sizeof kGalleryMagic);
  out.write(reinterpret_cast<const char*>(&n), sizeof n);
  out.write(text.data(), static_cast<std::streamsize>(n));
  const auto v = t.tokens.values();
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  if (!out) throw Error(ErrorCode::IoError, "short write to " + path.string());
}

Gallery load_gallery(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kGalleryMagic, sizeof kGalleryMagic) != 0) {
    throw Error(ErrorCode::CorruptFile, path.string() + ": not a gallery file");
  }
  std::uint64_t n = 0;
  std::memcpy(&n, bytes.data() + 8, sizeof n);
  if (n > bytes.size() - 16) throw Error(ErrorCode::CorruptFile, path.string() + ": truncated header");
  Gallery g;
  try {
    const json h = json::parse(bytes.substr(16, n));
    g.choice.level = alignment::parse_level(h.at("level").get<std::string>());
    g.choice.components = alignment::parse_components(h.at("components").get<std::string>());
    g.characters = h.at("characters").get<std::vector<std::string>>();
    g.texts.family = alignment::level_family(g.choice.level);
    g.texts.detail = h.at("detail").get<std::vector<std::vector<int>>>();
    g.texts.structure = h.at("structure").get<std::vector<std::vector<int>>>();
    g.texts.length = h.at("length").get<std::vector<int>>();
    const auto shape = h.at("shape").get<Shape>();
    const std::size_t count = shape_numel(shape);
    if (bytes.size() - 16 - n != count * sizeof(double)) {
      throw Error(ErrorCode::CorruptFile, path.string() + ": data size does not match the header");
    }
    std::vector<double> values(count);
    std::memcpy(values.data(), bytes.data() + 16 + n, count * sizeof(double));
    g.texts.tokens = Tensor(shape, std::move(values));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptFile, path.string() + ": malformed header: " + e.what());
  }
  if (g.characters.size() != g.texts.length.size()) {
    throw Error(ErrorCode::CorruptFile, path.string() + ": candidate count does not match the representations");
  }
  return g;
}

std::vector<std::uint8_t> attention_map(std::span<const double> sims, int grid_h, int grid_w, int out_size) {
  if (sims.size() != static_cast<std::size_t>(grid_h) * grid_w) {
    throw Error(ErrorCode::ShapeMismatch, "similarity vector does not fill the grid");
  }
  const auto [lo_it, hi_it] = std::minmax_element(sims.begin(), sims.end());
  const double lo = *lo_it, range = *hi_it - *lo_it;
  std::vector<std::uint8_t> out(static_cast<std::size_t>(out_size) * out_size, 0);
  for (int y = 0; y < out_size; ++y) {
    const int gy = y * grid_h / out_size;
    for (int x = 0; x < out_size; ++x) {
      const int gx = x * grid_w / out_size;
      const double v = range > 0.0 ? (sims[static_cast<std::size_t>(gy) * grid_w + gx] - lo) / range : 0.0;
      out[static_cast<std::size_t>(y) * out_size + x] = static_cast<std::uint8_t>(std::lround(255.0 * v));
    }
  }
  return out;
}

std::vector<std::filesystem::path> emit_attention_maps(Model& model, const lexicon::Lexicon& lexicon,
                                                       const dataset::GlyphImage& image, std::string_view character,
                                                       const std::filesystem::path& out_dir) {
  const std::string ch(character);
  lexicon.index_of(ch);
  EvalScope scope(model);
  dataset::Sample sample;
  sample.image = image;
  const dataset::Sample* one[] = {&sample};
  const ImageFeatures feats = model.image.forward(sample_images(one));
  const std::string chars[] = {ch};
  const TextFeatures text = encode_characters(model, lexicon, chars);
  std::filesystem::create_directories(out_dir);

  std::vector<std::filesystem::path> written;
  auto emit = [&](const std::string& prefix, const Tensor& grid, const alignment::DecoupledRepr& repr,
                  const std::vector<int>& rows) {
    const int gh = grid.size(1), gw = grid.size(2), d = grid.size(3);
    const auto gv = grid.values();
    const auto tv = repr.tokens.values();
    std::vector<double> sims(static_cast<std::size_t>(gh) * gw);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const double* t = tv.data() + static_cast<std::size_t>(rows[k]) * d;
      for (std::size_t m = 0; m < sims.size(); ++m) {
        const double* v = gv.data() + m * d;
        double s = 0.0;
        for (int c = 0; c < d; ++c) s += t[c] * v[c];
        sims[m] = s;
      }
      const auto path = out_dir / (prefix + "_" + std::to_string(k) + ".pgm");
      dataset::write_pgm(path, image.height, image.width,
                         attention_map(sims, gh, gw, image.height));
      written.push_back(path);
    }
  };
  for (Level level : {Level::Stroke, Level::Radical, Level::RefinedStroke, Level::RefinedRadical}) {
    const auto repr = decouple(text, level);
    emit(std::string(alignment::level_name(level)), alignment::detail_grid(feats, level), repr, repr.detail[0]);
  }
  const auto refined = decouple(text, Level::RefinedStroke);
  emit("structure", feats.structure, refined, refined.structure[0]);
  return written;
}

}  // namespace mgalign::retrieval
