#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mgalign/dataset.hpp"
#include "mgalign/error.hpp"
#include "mgalign/lexicon.hpp"
#include "mgalign/retrieval.hpp"
#include "mgalign/trainer.hpp"

using namespace mgalign;

namespace {

struct ReprFlags {
  std::string level = "refined_stroke";
  std::string components = "both";

  void add(CLI::App* cmd) {
    cmd->add_option("--repr", level, "Level: stroke, refined_stroke, radical, refined_radical")
        ->capture_default_str();
    cmd->add_option("--components", components, "both, detail_only, structure_only")->capture_default_str();
  }
  retrieval::ReprChoice choice() const {
    return {alignment::parse_level(level), alignment::parse_components(components)};
  }
};

std::vector<std::string> candidates_or_all(const std::string& path, const lexicon::Lexicon& lex) {
  return path.empty() ? lex.characters() : lexicon::read_char_list(path);
}

dataset::Sample sample_from_image(const std::string& path, int size) {
  dataset::Sample s;
  s.image = dataset::to_glyph_image(dataset::read_image(path), size);
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-granularity image-text alignment for zero-shot character recognition"};
  app.require_subcommand(1);

  // lexicon-validate
  std::string lexicon_path;
  auto* validate = app.add_subcommand("lexicon-validate", "Parse a lexicon file and report its contents");
  validate->add_option("--lexicon", lexicon_path, "Lexicon TSV")->required();

  // toy-lexicon
  std::string out_path;
  int toy_chars = 200, toy_radicals = 30;
  std::uint64_t seed = 0;
  auto* toy = app.add_subcommand("toy-lexicon", "Generate a procedural lexicon");
  toy->add_option("--out", out_path, "Output lexicon TSV")->required();
  toy->add_option("--chars", toy_chars, "Character count")->capture_default_str();
  toy->add_option("--radicals", toy_radicals, "Radical count")->capture_default_str();
  toy->add_option("--seed", seed, "Generator seed")->capture_default_str();

  // make-splits
  std::string mode, order_path, train_out, test_out;
  int split_m = 0, split_k = 0, split_n = 0;
  auto* splits = app.add_subcommand("make-splits", "Write zero-shot train/test character lists");
  splits->add_option("--lexicon", lexicon_path, "Lexicon TSV")->required();
  splits->add_option("--mode", mode, "char or radical")->required()->check(CLI::IsMember({"char", "radical"}));
  splits->add_option("--m", split_m, "Training classes (char mode)");
  splits->add_option("--k", split_k, "Test classes (char mode)");
  splits->add_option("--n", split_n, "Radical frequency threshold (radical mode)");
  splits->add_option("--order", order_path, "Class order list (char mode; default lexicon order)");
  splits->add_option("--train-out", train_out, "Training list output")->required();
  splits->add_option("--test-out", test_out, "Test list output")->required();

  // render-dataset
  std::string chars_path, out_dir;
  int image_size = 64, per_char = 4, workers = 1;
  auto* render = app.add_subcommand("render-dataset", "Render procedural glyph images with a manifest");
  render->add_option("--lexicon", lexicon_path, "Lexicon TSV")->required();
  render->add_option("--chars", chars_path, "Character list (default: whole lexicon)");
  render->add_option("--out", out_dir, "Output directory")->required();
  render->add_option("--size", image_size, "Image side, multiple of 32")->capture_default_str();
  render->add_option("--per-char", per_char, "Renderings per character")->capture_default_str();
  render->add_option("--seed", seed, "Style seed base")->capture_default_str();
  render->add_option("--workers", workers, "Rendering threads")->capture_default_str();

  // train
  std::string config_path, resume_path;
  auto* train = app.add_subcommand("train", "Train from a key = value config file");
  train->add_option("--config", config_path, "Training config")->required();
  train->add_option("--resume", resume_path, "Checkpoint to continue from");

  // embed-gallery
  std::string checkpoint_path, candidates_path;
  ReprFlags repr;
  auto* embed = app.add_subcommand("embed-gallery", "Precompute candidate text representations");
  embed->add_option("--checkpoint", checkpoint_path, "Model checkpoint")->required();
  embed->add_option("--lexicon", lexicon_path, "Lexicon TSV")->required();
  embed->add_option("--candidates", candidates_path, "Candidate list (default: whole lexicon)");
  embed->add_option("--out", out_path, "Gallery output")->required();
  repr.add(embed);

  // evaluate
  std::string data_dir, gallery_path, predictions_path, per_class_path, from_predictions;
  auto* evaluate = app.add_subcommand("evaluate", "Character accuracy on a test set, or recount a prediction dump");
  evaluate->add_option("--checkpoint", checkpoint_path, "Model checkpoint");
  evaluate->add_option("--lexicon", lexicon_path, "Lexicon TSV");
  evaluate->add_option("--data", data_dir, "Test directory with manifest.tsv");
  evaluate->add_option("--test-chars", chars_path, "Render these characters instead of reading --data");
  evaluate->add_option("--per-char", per_char, "Renderings per test character")->capture_default_str();
  evaluate->add_option("--seed", seed, "Style seed base for rendered test images")->capture_default_str();
  evaluate->add_option("--gallery", gallery_path, "Precomputed gallery");
  evaluate->add_option("--candidates", candidates_path, "Candidate list when no gallery is given");
  evaluate->add_option("--predictions", predictions_path, "Prediction dump output (TSV)");
  evaluate->add_option("--per-class", per_class_path, "Per-class accuracy output (CSV)");
  evaluate->add_option("--from-predictions", from_predictions, "Recount accuracy from an existing dump");
  repr.add(evaluate);

  // recognize
  std::string image_path;
  int top = 5;
  auto* recognize = app.add_subcommand("recognize", "Rank gallery characters for one image");
  recognize->add_option("--checkpoint", checkpoint_path, "Model checkpoint")->required();
  recognize->add_option("--lexicon", lexicon_path, "Lexicon TSV")->required();
  recognize->add_option("--image", image_path, "PNG/PGM/PPM image")->required();
  recognize->add_option("--gallery", gallery_path, "Precomputed gallery");
  recognize->add_option("--candidates", candidates_path, "Candidate list when no gallery is given");
  recognize->add_option("--top", top, "Entries to print")->capture_default_str();
  repr.add(recognize);

  // visualize-attention
  std::string character;
  auto* visualize = app.add_subcommand("visualize-attention", "Write token-level similarity maps as PGM files");
  visualize->add_option("--checkpoint", checkpoint_path, "Model checkpoint")->required();
  visualize->add_option("--lexicon", lexicon_path, "Lexicon TSV")->required();
  visualize->add_option("--char", character, "Character whose tokens are mapped")->required();
  visualize->add_option("--image", image_path, "Image file (default: procedural rendering of --char)");
  visualize->add_option("--seed", seed, "Style seed for the procedural rendering")->capture_default_str();
  visualize->add_option("--out", out_dir, "Output directory")->required();

  if (argc < 2) {
    std::cerr << app.help();
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*validate) {
      const auto lex = lexicon::load_lexicon(lexicon_path);
      std::cout << "characters: " << lex.size() << "\nradicals: " << lex.radicals().size() << "\n";
      if (lex.radicals().size() > lexicon::kRadicalWarningThreshold) {
        std::cerr << "warning: " << lex.radicals().size() << " radicals exceeds the usual inventory of "
                  << lexicon::kRadicalWarningThreshold << "\n";
      }
    } else if (*toy) {
      std::cerr << "seed " << seed << "\n";
      lexicon::save_lexicon(dataset::generate_toy_lexicon(toy_chars, toy_radicals, seed), out_path);
    } else if (*splits) {
      const auto lex = lexicon::load_lexicon(lexicon_path);
      lexicon::Split split;
      if (mode == "char") {
        if (splits->count("--m") == 0 || splits->count("--k") == 0) {
          std::cerr << "make-splits --mode char needs --m and --k\n";
          return 2;
        }
        const auto order = candidates_or_all(order_path, lex);
        split = lexicon::character_zero_shot_split(lex, order, split_m, split_k);
      } else {
        if (splits->count("--n") == 0) {
          std::cerr << "make-splits --mode radical needs --n\n";
          return 2;
        }
        split = lexicon::radical_zero_shot_split(lex, split_n);
      }
      lexicon::write_char_list(split.train, train_out);
      lexicon::write_char_list(split.test, test_out);
      std::cout << "train " << split.train.size() << ", test " << split.test.size() << "\n";
    } else if (*render) {
      const auto lex = lexicon::load_lexicon(lexicon_path);
      std::cerr << "seed " << seed << "\n";
      const auto chars = candidates_or_all(chars_path, lex);
      dataset::write_dataset(out_dir, dataset::render_samples(lex, chars, image_size, per_char, seed, workers));
    } else if (*train) {
      const auto config = trainer::load_train_config(config_path);
      if (config.lexicon_path.empty()) throw Error(ErrorCode::InvalidConfig, "config needs a lexicon path");
      const auto lex = lexicon::load_lexicon(config.lexicon_path);
      std::cerr << "seed " << config.seed << "\n";
      trainer::Trainer tr(config, lex, trainer::load_training_samples(config, lex));
      if (!resume_path.empty()) tr.resume(resume_path);
      std::optional<std::ofstream> log;
      if (!config.log_path.empty()) {
        log.emplace(config.log_path, resume_path.empty() ? std::ios::trunc : std::ios::app);
        if (!*log) throw Error(ErrorCode::IoError, "cannot write " + config.log_path);
      }
      const auto history = tr.run(log ? &*log : nullptr, [](const trainer::StepStats& s) {
        if (s.step % 50 == 0) std::cerr << "step " << s.step << " loss " << s.total << "\n";
        return false;
      });
      if (!config.checkpoint_path.empty()) tr.save(config.checkpoint_path);
      std::cerr << "trained " << history.size() << " steps\n";
    } else if (*embed) {
      const auto lex = lexicon::load_lexicon(lexicon_path);
      auto model = trainer::load_model(checkpoint_path, lex);
      const auto candidates = candidates_or_all(candidates_path, lex);
      const auto gallery = retrieval::embed_gallery(*model, lex, candidates, repr.choice());
      retrieval::save_gallery(out_path, gallery);
      std::cout << "gallery " << gallery.size() << " entries, " << retrieval::repr_name(gallery.choice) << "\n";
    } else if (*evaluate) {
      if (!from_predictions.empty()) {
        std::cout << "accuracy " << retrieval::accuracy_of(retrieval::read_predictions(from_predictions)) << "\n";
        return 0;
      }
      if (checkpoint_path.empty() || lexicon_path.empty() || (data_dir.empty() == chars_path.empty())) {
        std::cerr << "evaluate needs --checkpoint, --lexicon, and exactly one of --data / --test-chars\n";
        return 2;
      }
      const auto lex = lexicon::load_lexicon(lexicon_path);
      auto model = trainer::load_model(checkpoint_path, lex);
      const int size = model->config().image.image_size;
      const auto gallery = gallery_path.empty()
                               ? retrieval::embed_gallery(*model, lex, candidates_or_all(candidates_path, lex),
                                                          repr.choice())
                               : retrieval::load_gallery(gallery_path);
      std::vector<dataset::Sample> samples;
      if (!data_dir.empty()) {
        samples = dataset::ingest_manifest(data_dir, lex, size);
      } else {
        std::cerr << "seed " << seed << "\n";
        samples = dataset::render_samples(lex, lexicon::read_char_list(chars_path), size, per_char, seed);
      }
      const auto result = retrieval::evaluate_cacc(*model, samples, gallery);
      if (!predictions_path.empty()) retrieval::write_predictions(predictions_path, result.predictions);
      if (!per_class_path.empty()) retrieval::write_per_class(per_class_path, result.per_class);
      std::cout << retrieval::repr_name(gallery.choice) << " accuracy " << result.accuracy << " (" << result.correct
                << "/" << result.total << ")\n";
    } else if (*recognize) {
      const auto lex = lexicon::load_lexicon(lexicon_path);
      auto model = trainer::load_model(checkpoint_path, lex);
      const auto gallery = gallery_path.empty()
                               ? retrieval::embed_gallery(*model, lex, candidates_or_all(candidates_path, lex),
                                                          repr.choice())
                               : retrieval::load_gallery(gallery_path);
      const auto ranked =
          retrieval::recognize(*model, sample_from_image(image_path, model->config().image.image_size), gallery);
      for (int i = 0; i < std::min<int>(top, static_cast<int>(ranked.size())); ++i) {
        std::cout << i + 1 << '\t' << ranked[i].character << '\t' << ranked[i].score << '\n';
      }
    } else if (*visualize) {
      const auto lex = lexicon::load_lexicon(lexicon_path);
      auto model = trainer::load_model(checkpoint_path, lex);
      const int size = model->config().image.image_size;
      const auto image = image_path.empty() ? dataset::render_procedural(lex, character, size, seed)
                                            : sample_from_image(image_path, size).image;
      const auto files = retrieval::emit_attention_maps(*model, lex, image, character, out_dir);
      std::cout << "wrote " << files.size() << " maps to " << out_dir << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
