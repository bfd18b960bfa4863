#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mgalign/alignment.hpp"
#include "mgalign/dataset.hpp"
#include "mgalign/error.hpp"
#include "mgalign/lexicon.hpp"
#include "mgalign/retrieval.hpp"
#include "mgalign/trainer.hpp"

namespace py = pybind11;
using namespace mgalign;

namespace {

py::array_t<float> to_array(const dataset::GlyphImage& img) {
  py::array_t<float> out({img.height, img.width, 3});
  std::copy(img.pixels.begin(), img.pixels.end(), out.mutable_data());
  return out;
}

// Accepts (H, W) grayscale or (H, W, 3) RGB in [0, 1].
dataset::GlyphImage from_array(const py::array_t<float, py::array::c_style | py::array::forcecast>& a, int size) {
  if (a.ndim() != 2 && !(a.ndim() == 3 && (a.shape(2) == 1 || a.shape(2) == 3))) {
    throw Error(ErrorCode::BadShape, "expected an (H, W) or (H, W, 3) array");
  }
  dataset::RawImage raw;
  raw.height = static_cast<int>(a.shape(0));
  raw.width = static_cast<int>(a.shape(1));
  raw.channels = a.ndim() == 3 ? static_cast<int>(a.shape(2)) : 1;
  raw.pixels.assign(a.data(), a.data() + a.size());
  return dataset::to_glyph_image(raw, size);
}

retrieval::ReprChoice choice_of(const std::string& level, const std::string& components) {
  retrieval::ReprChoice c;
  c.level = alignment::parse_level(level);
  c.components = alignment::parse_components(components);
  return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multi-granularity glyph/text alignment for zero-shot character recognition";

  static py::exception<Error> error(m, "MgalignError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error, e.what());
    }
  });
  m.def("error_code", [](const std::string& message) { return message.substr(0, message.find(':')); },
        "Error code name at the front of an MgalignError message");

  py::class_<lexicon::Lexicon>(m, "Lexicon")
      .def(py::init<>())
      .def("add", &lexicon::Lexicon::add, py::arg("character"), py::arg("radical_ids"), py::arg("stroke_ids"))
      .def("__len__", &lexicon::Lexicon::size)
      .def("__contains__", [](const lexicon::Lexicon& l, const std::string& c) { return l.find(c).has_value(); })
      .def("characters", &lexicon::Lexicon::characters)
      .def("radical_count", [](const lexicon::Lexicon& l) { return l.radicals().size(); })
      .def("radical_tokens",
           [](const lexicon::Lexicon& l, const std::string& c) { return l.at(c).radical_seq.tokens; })
      .def("stroke_tokens", [](const lexicon::Lexicon& l, const std::string& c) { return l.at(c).stroke_seq.tokens; })
      .def("save", [](const lexicon::Lexicon& l, const std::filesystem::path& p) { lexicon::save_lexicon(l, p); })
      .def("__str__", &lexicon::format_lexicon);

  m.def("load_lexicon", &lexicon::load_lexicon, py::arg("path"));
  m.def("parse_lexicon", &lexicon::parse_lexicon, py::arg("text"));
  m.def("toy_lexicon", &dataset::generate_toy_lexicon, py::arg("chars"), py::arg("radicals"), py::arg("seed"));

  m.def(
      "character_split",
      [](const lexicon::Lexicon& l, const std::vector<std::string>& order, int train, int test) {
        const auto s = lexicon::character_zero_shot_split(l, order, train, test);
        return py::make_tuple(s.train, s.test);
      },
      py::arg("lexicon"), py::arg("class_order"), py::arg("train"), py::arg("test"));
  m.def(
      "radical_split",
      [](const lexicon::Lexicon& l, int n) {
        const auto s = lexicon::radical_zero_shot_split(l, n);
        return py::make_tuple(s.train, s.test);
      },
      py::arg("lexicon"), py::arg("n"));

  m.def(
      "render",
      [](const lexicon::Lexicon& l, const std::string& c, int size, std::uint64_t seed) {
        return to_array(dataset::render_procedural(l, c, size, seed));
      },
      py::arg("lexicon"), py::arg("character"), py::arg("size") = 128, py::arg("seed") = 0);

  m.def(
      "psi",
      [](const alignment::RowMatrix& text, const alignment::RowMatrix& image, double lam) {
        return alignment::psi(text, image, lam);
      },
      py::arg("text"), py::arg("image"), py::arg("temperature"));

  py::class_<trainer::TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_static("parse", &trainer::parse_train_config)
      .def_static("load", [](const std::filesystem::path& p) { return trainer::load_train_config(p); })
      .def_readwrite("lr", &trainer::TrainConfig::lr)
      .def_readwrite("batch_size", &trainer::TrainConfig::batch_size)
      .def_readwrite("epochs", &trainer::TrainConfig::epochs)
      .def_readwrite("max_steps", &trainer::TrainConfig::max_steps)
      .def_readwrite("seed", &trainer::TrainConfig::seed)
      .def_readwrite("samples_per_char", &trainer::TrainConfig::samples_per_char)
      .def_readwrite("render_seed", &trainer::TrainConfig::render_seed)
      .def("__str__", &trainer::format_train_config);

  py::class_<Model>(m, "Model")
      .def(
          "embed_gallery",
          [](Model& model, const lexicon::Lexicon& l, const std::vector<std::string>& candidates,
             const std::string& level, const std::string& components) {
            return retrieval::embed_gallery(model, l, candidates, choice_of(level, components));
          },
          py::arg("lexicon"), py::arg("candidates"), py::arg("level") = "refined_stroke",
          py::arg("components") = "both")
      .def(
          "recognize",
          [](Model& model, const py::array_t<float, py::array::c_style | py::array::forcecast>& image,
             const retrieval::Gallery& gallery) {
            dataset::Sample s;
            s.image = from_array(image, model.config().image.image_size);
            std::vector<std::pair<std::string, double>> out;
            for (const auto& r : retrieval::recognize(model, s, gallery)) out.emplace_back(r.character, r.score);
            return out;
          },
          py::arg("image"), py::arg("gallery"), "Candidates ranked by descending similarity")
      .def("parameter_count", [](const Model& model) {
        std::size_t n = 0;
        for (const auto& p : model.parameters()) n += p.numel();
        return n;
      });

  py::class_<retrieval::Gallery>(m, "Gallery")
      .def("__len__", &retrieval::Gallery::size)
      .def_readonly("characters", &retrieval::Gallery::characters)
      .def("save", [](const retrieval::Gallery& g, const std::filesystem::path& p) { retrieval::save_gallery(p, g); });
  m.def("load_gallery", &retrieval::load_gallery, py::arg("path"));

  m.def("load_model", &trainer::load_model, py::arg("checkpoint"), py::arg("lexicon"));

  py::class_<trainer::Trainer>(m, "Trainer")
      .def(py::init([](const trainer::TrainConfig& cfg, const lexicon::Lexicon& l,
                       const std::vector<std::string>& chars, int size) {
             if (size > 0) {
               auto c = cfg;
               c.model.image.image_size = size;
               return std::make_unique<trainer::Trainer>(
                   c, l, dataset::render_samples(l, chars, size, c.samples_per_char, c.render_seed));
             }
             return std::make_unique<trainer::Trainer>(
                 cfg, l,
                 dataset::render_samples(l, chars, cfg.model.image.image_size, cfg.samples_per_char, cfg.render_seed));
           }),
           py::arg("config"), py::arg("lexicon"), py::arg("characters"), py::arg("image_size") = 0)
      .def("step", [](trainer::Trainer& t) { return t.step().total; }, "One optimizer step; returns the loss")
      .def("save", &trainer::Trainer::save, py::arg("path"))
      .def("resume", &trainer::Trainer::resume, py::arg("path"))
      .def_property_readonly("steps_taken", [](const trainer::Trainer& t) { return t.progress().step; })
      .def_property_readonly("model", py::overload_cast<>(&trainer::Trainer::model), py::return_value_policy::reference_internal);
}
