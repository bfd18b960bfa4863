#include "mgalign/dataset.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "mgalign/error.hpp"

namespace mgalign::dataset {

using lexicon::Component;
using lexicon::StrokeClass;
using lexicon::TreeNode;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  // 53 random bits mapped to [0, 1); avoids implementation-defined distributions.
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

struct Point {
  double x, y;
};

void draw_segment(std::vector<float>& ink, int size, Point a, Point b, double radius) {
  const int x_lo = std::max(0, static_cast<int>(std::floor(std::min(a.x, b.x) - radius - 1)));
  const int x_hi = std::min(size - 1, static_cast<int>(std::ceil(std::max(a.x, b.x) + radius + 1)));
  const int y_lo = std::max(0, static_cast<int>(std::floor(std::min(a.y, b.y) - radius - 1)));
  const int y_hi = std::min(size - 1, static_cast<int>(std::ceil(std::max(a.y, b.y) + radius + 1)));
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  for (int y = y_lo; y <= y_hi; ++y) {
    for (int x = x_lo; x <= x_hi; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      double t = len2 > 0.0 ? ((px - a.x) * dx + (py - a.y) * dy) / len2 : 0.0;
      t = std::clamp(t, 0.0, 1.0);
      const double ex = a.x + t * dx - px, ey = a.y + t * dy - py;
      const double d = std::sqrt(ex * ex + ey * ey);
      const double cover = std::clamp(radius + 0.5 - d, 0.0, 1.0);
      float& p = ink[static_cast<std::size_t>(y) * size + x];
      p = std::max(p, static_cast<float>(cover));
    }
  }
}

std::string layout_signature(const TreeNode& stroke_tree) {
  auto strokes = layout_strokes(stroke_tree);
  std::vector<std::string> parts;
  for (const auto& s : strokes) {
    std::ostringstream os;
    os.precision(6);
    os << static_cast<int>(s.stroke) << '@' << std::fixed << s.cell.x0 << ',' << s.cell.y0 << ',' << s.cell.x1 << ','
       << s.cell.y1;
    parts.push_back(os.str());
  }
  std::sort(parts.begin(), parts.end());
  std::string out;
  for (const auto& p : parts) out += p + ';';
  return out;
}

void check_size(int size) {
  if (size <= 0 || size % 32 != 0) {
    throw Error(ErrorCode::BadShape, "image size " + std::to_string(size) + " is not a positive multiple of 32");
  }
}

}  // namespace

std::vector<Box> child_boxes(int op, const Box& p) {
  const double w = p.width(), h = p.height();
  constexpr double kInner = 0.6;
  const double iw = kInner * w, ih = kInner * h;
  auto inner = [&](double fx, double fy) {
    // fx/fy in [0,1]: 0 pushes the inner box to the left/top edge, 1 to the right/bottom.
    const double x0 = p.x0 + fx * (w - iw), y0 = p.y0 + fy * (h - ih);
    return Box{x0, y0, x0 + iw, y0 + ih};
  };
  switch (op) {
    case 0: return {{p.x0, p.y0, p.x0 + 0.5 * w, p.y1}, {p.x0 + 0.5 * w, p.y0, p.x1, p.y1}};
    case 1: return {{p.x0, p.y0, p.x1, p.y0 + 0.5 * h}, {p.x0, p.y0 + 0.5 * h, p.x1, p.y1}};
    case 2:
      return {{p.x0, p.y0, p.x0 + 0.34 * w, p.y1},
              {p.x0 + 0.34 * w, p.y0, p.x0 + 0.67 * w, p.y1},
              {p.x0 + 0.67 * w, p.y0, p.x1, p.y1}};
    case 3:
      return {{p.x0, p.y0, p.x1, p.y0 + 0.34 * h},
              {p.x0, p.y0 + 0.34 * h, p.x1, p.y0 + 0.67 * h},
              {p.x0, p.y0 + 0.67 * h, p.x1, p.y1}};
    case 4: return {p, inner(0.5, 0.5)};    // full surround
    case 5: return {p, inner(0.5, 1.0)};    // surround from above, open below
    case 6: return {p, inner(0.5, 0.0)};    // surround from below, open above
    case 7: return {p, inner(1.0, 0.5)};    // surround from left, open right
    case 8: return {p, inner(1.0, 1.0)};    // upper-left surround
    case 9: return {p, inner(0.0, 1.0)};    // upper-right surround
    case 10: return {p, inner(1.0, 0.0)};   // lower-left surround
    case 11: return {p, p};                 // overlaid
    default: throw Error(ErrorCode::UnknownToken, "structure op index " + std::to_string(op));
  }
}

std::vector<PlacedStroke> layout_strokes(const lexicon::DecompositionTree& stroke_tree) {
  std::vector<PlacedStroke> out;
  std::function<void(const TreeNode&, const Box&)> visit = [&](const TreeNode& n, const Box& box) {
    if (n.kind == TreeNode::Kind::Stroke) {
      out.push_back({static_cast<StrokeClass>(n.value), box});
      return;
    }
    if (n.kind == TreeNode::Kind::Radical) throw Error(ErrorCode::UnknownToken, "layout needs a stroke tree");
    const auto boxes = child_boxes(n.value, box);
    for (std::size_t i = 0; i < n.children.size(); ++i) visit(n.children[i], boxes[i]);
  };
  visit(stroke_tree, Box{});
  return out;
}

GlyphImage render_strokes(const lexicon::DecompositionTree& stroke_tree, int size, std::uint64_t style_seed) {
  check_size(size);
  std::mt19937_64 rng(splitmix64(style_seed));
  const double radius = std::max(0.5, 0.5 * size * 0.04 * uniform(rng, 0.8, 1.2));
  std::vector<float> ink(static_cast<std::size_t>(size) * size, 0.0f);
  constexpr double kMargin = 0.15;
  constexpr double kJitter = 0.05;
  for (const auto& placed : layout_strokes(stroke_tree)) {
    const double cw = placed.cell.width() * size, ch = placed.cell.height() * size;
    const double x0 = placed.cell.x0 * size + kMargin * cw, x1 = placed.cell.x1 * size - kMargin * cw;
    const double y0 = placed.cell.y0 * size + kMargin * ch, y1 = placed.cell.y1 * size - kMargin * ch;
    const double xc = 0.5 * (x0 + x1), yc = 0.5 * (y0 + y1);
    auto jit = [&](Point p) {
      return Point{p.x + uniform(rng, -kJitter, kJitter) * cw, p.y + uniform(rng, -kJitter, kJitter) * ch};
    };
    switch (placed.stroke) {
      case StrokeClass::Horizontal: draw_segment(ink, size, jit({x0, yc}), jit({x1, yc}), radius); break;
      case StrokeClass::Vertical: draw_segment(ink, size, jit({xc, y0}), jit({xc, y1}), radius); break;
      case StrokeClass::LeftFalling: draw_segment(ink, size, jit({x1, y0}), jit({x0, y1}), radius); break;
      case StrokeClass::RightFalling: draw_segment(ink, size, jit({x0, y0}), jit({x1, y1}), radius); break;
      case StrokeClass::Turning: {
        const Point a = jit({x0, y0}), corner = jit({x1, y0}), c = jit({x1, y1});
        draw_segment(ink, size, a, corner, radius);
        draw_segment(ink, size, corner, c, radius);
        break;
      }
    }
  }
  GlyphImage img;
  img.height = img.width = size;
  img.pixels.resize(ink.size() * 3);
  for (std::size_t i = 0; i < ink.size(); ++i) {
    const float v = 1.0f - ink[i];
    img.pixels[i * 3] = img.pixels[i * 3 + 1] = img.pixels[i * 3 + 2] = v;
  }
  return img;
}

GlyphImage render_procedural(const lexicon::Lexicon& lexicon, std::string_view character, int size,
                             std::uint64_t style_seed) {
  const auto& entry = lexicon.at(character);
  return render_strokes(entry.stroke_tree, size, fnv1a(character) ^ splitmix64(style_seed));
}

std::vector<Sample> render_samples(const lexicon::Lexicon& lexicon, std::span<const std::string> chars, int size,
                                   int per_char, std::uint64_t seed_base, int workers) {
  check_size(size);
  std::vector<Sample> out(chars.size() * static_cast<std::size_t>(per_char));
  for (std::size_t c = 0; c < chars.size(); ++c) {
    const int idx = lexicon.index_of(chars[c]);
    for (int k = 0; k < per_char; ++k) {
      Sample& s = out[c * per_char + k];
      s.character = chars[c];
      s.lexicon_index = idx;
      s.radical_seq = lexicon.entry(idx).radical_seq;
      s.stroke_seq = lexicon.entry(idx).stroke_seq;
    }
  }
  auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < out.size(); i += stride) {
      const int k = static_cast<int>(i % per_char);
      out[i].image = render_procedural(lexicon, out[i].character, size, seed_base + static_cast<std::uint64_t>(k));
    }
  };
  workers = std::max(1, workers);
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work, static_cast<std::size_t>(w), static_cast<std::size_t>(workers));
  }
  return out;
}

lexicon::Lexicon generate_toy_lexicon(int char_count, int radical_count, std::uint64_t seed) {
  if (radical_count < 2 || char_count < 1) throw Error(ErrorCode::InvalidConfig, "toy lexicon needs >= 2 radicals");
  std::mt19937_64 rng(splitmix64(seed));
  auto pick = [&](int n) { return static_cast<int>(rng() % static_cast<std::uint64_t>(n)); };
  auto stroke = [&]() { return TreeNode::stroke(static_cast<StrokeClass>(1 + pick(5))); };

  std::vector<TreeNode> radicals;
  std::set<std::string> seen_trees, seen_layouts;
  int singles = 0;
  int attempts = 0;
  while (static_cast<int>(radicals.size()) < radical_count) {
    if (++attempts > 100000) throw Error(ErrorCode::InvalidConfig, "cannot generate that many distinct radicals");
    const double u = uniform(rng, 0.0, 1.0);
    TreeNode t;
    if (u < 0.1) {
      if (singles >= 5) continue;
      t = stroke();
    } else if (u < 0.6) {
      t = TreeNode::internal(pick(2), {stroke(), stroke()});
    } else if (u < 0.8) {
      t = TreeNode::internal(2 + pick(2), {stroke(), stroke(), stroke()});
    } else {
      TreeNode inner = TreeNode::internal(pick(2), {stroke(), stroke()});
      if (pick(2) == 0) {
        t = TreeNode::internal(pick(2), {std::move(inner), stroke()});
      } else {
        t = TreeNode::internal(pick(2), {stroke(), std::move(inner)});
      }
    }
    const std::string key = lexicon::serialize_ids(t);
    const std::string layout = layout_signature(t);
    if (!seen_trees.insert(key).second || !seen_layouts.insert(layout).second) continue;
    if (t.is_leaf()) ++singles;
    radicals.push_back(std::move(t));
  }

  std::vector<std::string> glyphs;
  for (int i = 0; i < radical_count; ++i) glyphs.push_back(lexicon::utf8_encode(U'⼀' + static_cast<char32_t>(i)));

  lexicon::Lexicon lex;
  std::set<std::string> char_layouts;
  attempts = 0;
  while (lex.size() < char_count) {
    if (++attempts > 1000000) throw Error(ErrorCode::InvalidConfig, "cannot generate that many distinct characters");
    const double u = uniform(rng, 0.0, 1.0);
    int op;
    if (u < 0.4) op = 0;
    else if (u < 0.7) op = 1;
    else if (u < 0.8) op = 2 + pick(2);
    else op = 4 + pick(7);  // surround family
    const int arity = lexicon::structure_ops()[static_cast<std::size_t>(op)].arity;
    std::vector<int> parts;
    for (int i = 0; i < arity; ++i) parts.push_back(pick(radical_count));
    std::string radical_line(lexicon::structure_ops()[static_cast<std::size_t>(op)].utf8);
    std::vector<TreeNode> children;
    for (int r : parts) {
      radical_line += ' ' + glyphs[static_cast<std::size_t>(r)];
      children.push_back(radicals[static_cast<std::size_t>(r)]);
    }
    const TreeNode stroke_tree = TreeNode::internal(op, std::move(children));
    if (stroke_tree.node_count() + 1 > lexicon::kMaxSequenceLength) continue;
    if (!char_layouts.insert(layout_signature(stroke_tree)).second) continue;
    const std::string ch = lexicon::utf8_encode(U'一' + static_cast<char32_t>(lex.size()));
    lex.add(ch, radical_line, lexicon::serialize_ids(stroke_tree));
  }
  return lex;
}

// ---------------------------------------------------------------------------

namespace {

bool read_token(std::istream& in, std::string& tok) {
  tok.clear();
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string rest;
      std::getline(in, rest);
      continue;
    }
    if (!std::isspace(static_cast<unsigned char>(c))) {
      tok += c;
      break;
    }
  }
  while (in.get(c)) {
    if (std::isspace(static_cast<unsigned char>(c))) break;
    tok += c;
  }
  return !tok.empty();
}

RawImage read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingImage, path.string());
  std::string magic, tw, th, tm;
  if (!read_token(in, magic) || magic.size() != 2 || magic[0] != 'P') {
    throw Error(ErrorCode::UnreadableImage, path.string() + ": not a PNM file");
  }
  const char kind = magic[1];
  if (kind != '2' && kind != '3' && kind != '5' && kind != '6') {
    throw Error(ErrorCode::UnreadableImage, path.string() + ": unsupported PNM variant " + magic);
  }
  if (!read_token(in, tw) || !read_token(in, th) || !read_token(in, tm)) {
    throw Error(ErrorCode::UnreadableImage, path.string() + ": truncated header");
  }
  RawImage img;
  int maxval = 0;
  try {
    img.width = std::stoi(tw);
    img.height = std::stoi(th);
    maxval = std::stoi(tm);
  } catch (const std::exception&) {
    throw Error(ErrorCode::UnreadableImage, path.string() + ": malformed header");
  }
  if (img.width <= 0 || img.height <= 0 || maxval <= 0 || maxval > 65535) {
    throw Error(ErrorCode::UnreadableImage, path.string() + ": bad dimensions");
  }
  img.channels = (kind == '3' || kind == '6') ? 3 : 1;
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height * img.channels;
  img.pixels.resize(n);
  if (kind == '5' || kind == '6') {
    const int bytes = maxval < 256 ? 1 : 2;
    std::vector<unsigned char> buf(n * bytes);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size())) {
      throw Error(ErrorCode::UnreadableImage, path.string() + ": truncated pixel data");
    }
    for (std::size_t i = 0; i < n; ++i) {
      const int v = bytes == 1 ? buf[i] : (buf[2 * i] << 8) | buf[2 * i + 1];
      img.pixels[i] = static_cast<float>(v) / static_cast<float>(maxval);
    }
  } else {
    std::string tok;
    for (std::size_t i = 0; i < n; ++i) {
      if (!read_token(in, tok)) throw Error(ErrorCode::UnreadableImage, path.string() + ": truncated pixel data");
      img.pixels[i] = static_cast<float>(std::stoi(tok)) / static_cast<float>(maxval);
    }
  }
  return img;
}

RawImage read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw Error(ErrorCode::UnreadableImage, path.string() + ": " + image.message);
  }
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&image);
    throw Error(ErrorCode::UnreadableImage, path.string() + ": " + image.message);
  }
  RawImage img;
  img.width = static_cast<int>(image.width);
  img.height = static_cast<int>(image.height);
  img.channels = color ? 3 : 1;
  img.pixels.resize(buf.size());
  for (std::size_t i = 0; i < buf.size(); ++i) img.pixels[i] = static_cast<float>(buf[i]) / 255.0f;
  return img;
}

}  // namespace

RawImage read_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::MissingImage, path.string());
  std::ifstream in(path, std::ios::binary);
  char sig[8] = {};
  in.read(sig, 8);
  if (in.gcount() >= 2 && sig[0] == 'P') return read_pnm(path);
  if (in.gcount() == 8 && static_cast<unsigned char>(sig[0]) == 0x89 && sig[1] == 'P' && sig[2] == 'N' && sig[3] == 'G') {
    return read_png(path);
  }
  throw Error(ErrorCode::UnreadableImage, path.string() + ": unrecognized image format");
}

void write_pgm(const std::filesystem::path& path, int height, int width, std::span<const std::uint8_t> gray) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
}

void write_pgm(const std::filesystem::path& path, const GlyphImage& image) {
  std::vector<std::uint8_t> gray(static_cast<std::size_t>(image.height) * image.width);
  for (std::size_t i = 0; i < gray.size(); ++i) {
    const float v = (image.pixels[3 * i] + image.pixels[3 * i + 1] + image.pixels[3 * i + 2]) / 3.0f;
    gray[i] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
  }
  write_pgm(path, image.height, image.width, gray);
}

GlyphImage to_glyph_image(const RawImage& raw, int size) {
  check_size(size);
  GlyphImage out;
  out.height = out.width = size;
  out.pixels.resize(static_cast<std::size_t>(size) * size * 3);
  const double sy = static_cast<double>(raw.height) / size, sx = static_cast<double>(raw.width) / size;
  auto sample = [&](int y, int x, int c) {
    return raw.pixels[(static_cast<std::size_t>(y) * raw.width + x) * raw.channels + (raw.channels == 3 ? c : 0)];
  };
  for (int y = 0; y < size; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, raw.height - 1.0);
    const int y0 = static_cast<int>(std::floor(fy)), y1 = std::min(y0 + 1, raw.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < size; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, raw.width - 1.0);
      const int x0 = static_cast<int>(std::floor(fx)), x1 = std::min(x0 + 1, raw.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double v = (1 - wy) * ((1 - wx) * sample(y0, x0, c) + wx * sample(y0, x1, c)) +
                         wy * ((1 - wx) * sample(y1, x0, c) + wx * sample(y1, x1, c));
        out.pixels[(static_cast<std::size_t>(y) * size + x) * 3 + c] = static_cast<float>(v);
      }
    }
  }
  return out;
}

std::vector<Sample> ingest_manifest(const std::filesystem::path& dir, const lexicon::Lexicon& lexicon, int size) {
  const auto manifest = dir / "manifest.tsv";
  std::ifstream in(manifest, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingImage, "no manifest.tsv in " + dir.string());
  std::vector<Sample> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw Error(ErrorCode::ParseError, "manifest line " + std::to_string(line_no) + ": expected path TAB char");
    }
    const std::string rel = line.substr(0, tab), ch = line.substr(tab + 1);
    const auto idx = lexicon.find(ch);
    if (!idx) {
      throw Error(ErrorCode::CharNotInLexicon, "manifest line " + std::to_string(line_no) + ": '" + ch + "'");
    }
    const auto path = dir / rel;
    if (!std::filesystem::exists(path)) {
      throw Error(ErrorCode::MissingImage, "manifest line " + std::to_string(line_no) + ": " + path.string());
    }
    Sample s;
    s.image = to_glyph_image(read_image(path), size);
    s.character = ch;
    s.lexicon_index = *idx;
    s.radical_seq = lexicon.entry(*idx).radical_seq;
    s.stroke_seq = lexicon.entry(*idx).stroke_seq;
    out.push_back(std::move(s));
  }
  return out;
}

void write_dataset(const std::filesystem::path& dir, std::span<const Sample> samples) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.tsv", std::ios::binary);
  if (!manifest) throw Error(ErrorCode::IoError, "cannot write manifest in " + dir.string());
  std::map<int, int> per_class;
  for (const auto& s : samples) {
    const int k = per_class[s.lexicon_index]++;
    const std::string name = "c" + std::to_string(s.lexicon_index) + "_" + std::to_string(k) + ".pgm";
    write_pgm(dir / name, s.image);
    manifest << name << '\t' << s.character << '\n';
  }
}

// ---------------------------------------------------------------------------

std::vector<unsigned char> PaddedTokens::key_valid() const {
  std::vector<unsigned char> out(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) out[i] = mask[i] != Component::Pad;
  return out;
}

PaddedTokens pad_sequences(std::span<const lexicon::TokenSequence* const> seqs) {
  PaddedTokens p;
  p.batch = static_cast<int>(seqs.size());
  for (const auto* s : seqs) p.length = std::max(p.length, s->length());
  p.tokens.assign(static_cast<std::size_t>(p.batch) * p.length, lexicon::kPadToken);
  p.mask.assign(p.tokens.size(), Component::Pad);
  for (int b = 0; b < p.batch; ++b) {
    const auto& s = *seqs[static_cast<std::size_t>(b)];
    std::copy(s.tokens.begin(), s.tokens.end(), p.tokens.begin() + static_cast<std::ptrdiff_t>(b) * p.length);
    std::copy(s.mask.begin(), s.mask.end(), p.mask.begin() + static_cast<std::ptrdiff_t>(b) * p.length);
    p.valid_length.push_back(s.length());
  }
  return p;
}

Batch assemble_batch(std::span<const Sample> samples, std::span<const int> indices) {
  Batch b;
  b.size = static_cast<int>(indices.size());
  if (b.size == 0) return b;
  const auto& first = samples[static_cast<std::size_t>(indices[0])].image;
  b.image_size = first.height;
  const std::size_t per = static_cast<std::size_t>(first.height) * first.width * 3;
  b.images.resize(per * b.size);
  std::vector<const lexicon::TokenSequence*> rad, str;
  std::unordered_map<std::string, int> ids;
  for (int i = 0; i < b.size; ++i) {
    const Sample& s = samples[static_cast<std::size_t>(indices[static_cast<std::size_t>(i)])];
    if (s.image.pixels.size() != per) throw Error(ErrorCode::BadShape, "batch mixes image sizes");
    std::copy(s.image.pixels.begin(), s.image.pixels.end(), b.images.begin() + static_cast<std::ptrdiff_t>(per * i));
    rad.push_back(&s.radical_seq);
    str.push_back(&s.stroke_seq);
    const auto [it, inserted] = ids.emplace(s.character, static_cast<int>(ids.size()));
    b.text_ids.push_back(it->second);
    b.characters.push_back(s.character);
  }
  b.radical = pad_sequences(rad);
  b.stroke = pad_sequences(str);
  return b;
}

std::vector<std::vector<int>> batch_indices(int count, int batch_size, std::uint64_t shuffle_seed, int epoch) {
  if (batch_size < 1) throw Error(ErrorCode::InvalidConfig, "batch size must be >= 1");
  std::vector<int> perm(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) perm[static_cast<std::size_t>(i)] = i;
  std::mt19937_64 rng(splitmix64(shuffle_seed ^ splitmix64(static_cast<std::uint64_t>(epoch) + 0x51ull)));
  for (int i = count - 1; i > 0; --i) {
    const int j = static_cast<int>(rng() % static_cast<std::uint64_t>(i + 1));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  std::vector<std::vector<int>> out;
  for (int start = 0; start < count; start += batch_size) {
    const int end = std::min(count, start + batch_size);
    out.emplace_back(perm.begin() + start, perm.begin() + end);
  }
  return out;
}

BatchStream::BatchStream(std::span<const Sample> samples, int batch_size, std::uint64_t shuffle_seed)
    : samples_(samples), batch_size_(batch_size), seed_(shuffle_seed) {
  if (samples_.empty()) throw Error(ErrorCode::DataExhausted, "no training samples");
  reshuffle();
}

void BatchStream::reshuffle() {
  order_ = batch_indices(static_cast<int>(samples_.size()), batch_size_, seed_, epoch_);
  // A short trailing batch would give unreliable normalization statistics.
  if (order_.size() > 1 && static_cast<int>(order_.back().size()) < batch_size_) order_.pop_back();
}

Batch BatchStream::next() {
  if (cursor_ == order_.size()) {
    ++epoch_;
    reshuffle();
    cursor_ = 0;
  }
  return assemble_batch(samples_, order_[cursor_++]);
}

int BatchStream::batches_per_epoch() const { return static_cast<int>(order_.size()); }

void BatchStream::seek(int epoch, int batch_in_epoch) {
  epoch_ = epoch;
  reshuffle();
  cursor_ = static_cast<std::size_t>(std::clamp(batch_in_epoch, 0, static_cast<int>(order_.size())));
}

std::vector<Batch> make_batches(std::span<const Sample> samples, int batch_size, std::uint64_t shuffle_seed, int epoch) {
  std::vector<Batch> out;
  for (const auto& idx : batch_indices(static_cast<int>(samples.size()), batch_size, shuffle_seed, epoch)) {
    out.push_back(assemble_batch(samples, idx));
  }
  return out;
}

}  // namespace mgalign::dataset
