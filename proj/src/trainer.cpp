#include "mgalign/trainer.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <ctime>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "mgalign/error.hpp"

namespace mgalign::trainer {

namespace {

using nlohmann::json;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream in(value);
  T out{};
  in >> out;
  if (!in || !in.eof()) throw Error(ErrorCode::InvalidConfig, "bad value for '" + key + "': " + value);
  return out;
}

std::array<int, 3> parse_widths(const std::string& value) {
  std::array<int, 3> out{};
  std::istringstream in(value);
  std::string part;
  int i = 0;
  while (std::getline(in, part, ',')) {
    if (i == 3) break;
    out[static_cast<std::size_t>(i++)] = parse_number<int>("stage_widths", trim(part));
  }
  if (i != 3 || std::getline(in, part)) {
    throw Error(ErrorCode::InvalidConfig, "stage_widths needs three comma-separated integers");
  }
  return out;
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

json model_to_json(const ModelConfig& m) {
  return {{"image_size", m.image.image_size},
          {"stage_widths", m.image.stage_widths},
          {"dim", m.image.dim},
          {"heads", m.text.heads},
          {"text_layers", m.text.layers},
          {"fusion_layers", m.text.fusion_layers},
          {"max_len", m.text.max_len},
          {"radical_vocab", m.text.radical_vocab},
          {"stroke_vocab", m.text.stroke_vocab},
          {"initial_temperature", m.initial_temperature}};
}

ModelConfig model_from_json(const json& j) {
  ModelConfig m;
  m.image.image_size = j.at("image_size").get<int>();
  m.image.stage_widths = j.at("stage_widths").get<std::array<int, 3>>();
  m.image.dim = m.text.dim = j.at("dim").get<int>();
  m.text.heads = j.at("heads").get<int>();
  m.text.layers = j.at("text_layers").get<int>();
  m.text.fusion_layers = j.at("fusion_layers").get<int>();
  m.text.max_len = j.at("max_len").get<int>();
  m.text.radical_vocab = j.at("radical_vocab").get<int>();
  m.text.stroke_vocab = j.at("stroke_vocab").get<int>();
  m.initial_temperature = j.at("initial_temperature").get<double>();
  return m;
}

constexpr char kMagic[8] = {'M', 'G', 'A', 'L', 'I', 'G', 'N', '\n'};

}  // namespace

// ---- config -------------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw Error(ErrorCode::InvalidConfig, "lr must be > 0");
  if (batch_size < 1) throw Error(ErrorCode::InvalidConfig, "batch_size must be >= 1");
  if (epochs < 0 || max_steps < 0 || time_budget_minutes < 0.0) {
    throw Error(ErrorCode::InvalidConfig, "epochs, max_steps, and time_budget_minutes must be >= 0");
  }
  if (weights.alpha < 0.0 || weights.beta < 0.0) throw Error(ErrorCode::InvalidConfig, "alpha/beta must be >= 0");
  if (samples_per_char < 1) throw Error(ErrorCode::InvalidConfig, "samples_per_char must be >= 1");
  if (workers < 1) throw Error(ErrorCode::InvalidConfig, "workers must be >= 1");
  model.validate();
}

TrainConfig parse_train_config(std::string_view text) {
  TrainConfig c;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::InvalidConfig, "line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (key == "lr") c.lr = parse_number<double>(key, value);
    else if (key == "batch_size") c.batch_size = parse_number<int>(key, value);
    else if (key == "epochs") c.epochs = parse_number<int>(key, value);
    else if (key == "max_steps") c.max_steps = parse_number<long>(key, value);
    else if (key == "time_budget_minutes") c.time_budget_minutes = parse_number<double>(key, value);
    else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
    else if (key == "alpha") c.weights.alpha = parse_number<double>(key, value);
    else if (key == "beta") c.weights.beta = parse_number<double>(key, value);
    else if (key == "image_size") c.model.image.image_size = parse_number<int>(key, value);
    else if (key == "stage_widths") c.model.image.stage_widths = parse_widths(value);
    else if (key == "dim") c.model.image.dim = c.model.text.dim = parse_number<int>(key, value);
    else if (key == "heads") c.model.text.heads = parse_number<int>(key, value);
    else if (key == "text_layers") c.model.text.layers = parse_number<int>(key, value);
    else if (key == "fusion_layers") c.model.text.fusion_layers = parse_number<int>(key, value);
    else if (key == "max_len") c.model.text.max_len = parse_number<int>(key, value);
    else if (key == "initial_temperature") c.model.initial_temperature = parse_number<double>(key, value);
    else if (key == "lexicon") c.lexicon_path = value;
    else if (key == "train_chars") c.train_chars_path = value;
    else if (key == "data_dir") c.data_dir = value;
    else if (key == "samples_per_char") c.samples_per_char = parse_number<int>(key, value);
    else if (key == "render_seed") c.render_seed = parse_number<std::uint64_t>(key, value);
    else if (key == "workers") c.workers = parse_number<int>(key, value);
    else if (key == "checkpoint") c.checkpoint_path = value;
    else if (key == "log") c.log_path = value;
    else throw Error(ErrorCode::InvalidConfig, "line " + std::to_string(line_no) + ": unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_train_config(ss.str());
}

std::string format_train_config(const TrainConfig& c) {
  std::ostringstream os;
  os.precision(17);
  const auto& w = c.model.image.stage_widths;
  os << "lr = " << c.lr << "\n"
     << "batch_size = " << c.batch_size << "\n"
     << "epochs = " << c.epochs << "\n"
     << "max_steps = " << c.max_steps << "\n"
     << "time_budget_minutes = " << c.time_budget_minutes << "\n"
     << "seed = " << c.seed << "\n"
     << "alpha = " << c.weights.alpha << "\n"
     << "beta = " << c.weights.beta << "\n"
     << "image_size = " << c.model.image.image_size << "\n"
     << "stage_widths = " << w[0] << "," << w[1] << "," << w[2] << "\n"
     << "dim = " << c.model.image.dim << "\n"
     << "heads = " << c.model.text.heads << "\n"
     << "text_layers = " << c.model.text.layers << "\n"
     << "fusion_layers = " << c.model.text.fusion_layers << "\n"
     << "max_len = " << c.model.text.max_len << "\n"
     << "initial_temperature = " << c.model.initial_temperature << "\n"
     << "samples_per_char = " << c.samples_per_char << "\n"
     << "render_seed = " << c.render_seed << "\n"
     << "workers = " << c.workers << "\n";
  if (!c.lexicon_path.empty()) os << "lexicon = " << c.lexicon_path << "\n";
  if (!c.train_chars_path.empty()) os << "train_chars = " << c.train_chars_path << "\n";
  if (!c.data_dir.empty()) os << "data_dir = " << c.data_dir << "\n";
  if (!c.checkpoint_path.empty()) os << "checkpoint = " << c.checkpoint_path << "\n";
  if (!c.log_path.empty()) os << "log = " << c.log_path << "\n";
  return os.str();
}

// ---- optimizer --------------------------------------------------------------------

Adam::Adam(std::vector<Tensor> parameters, double lr_, double b1, double b2, double eps_)
    : lr(lr_), beta1(b1), beta2(b2), eps(eps_), params(std::move(parameters)) {
  for (const auto& p : params) {
    m.emplace_back(p.numel(), 0.0);
    v.emplace_back(p.numel(), 0.0);
  }
}

void Adam::zero_grad() {
  for (auto& p : params) p.zero_grad();
}

void Adam::step() {
  ++steps;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(steps));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(steps));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (!p.has_grad()) continue;
    auto value = p.values();
    const auto grad = p.grad();
    auto& mi = m[i];
    auto& vi = v[i];
    for (std::size_t k = 0; k < value.size(); ++k) {
      const double g = grad[k];
      mi[k] = beta1 * mi[k] + (1.0 - beta1) * g;
      vi[k] = beta2 * vi[k] + (1.0 - beta2) * g * g;
      value[k] -= lr * (mi[k] / c1) / (std::sqrt(vi[k] / c2) + eps);
    }
  }
}

// ---- training loop ------------------------------------------------------------------

std::string csv_header() { return "step,stroke,refined_stroke,radical,refined_radical,total"; }

std::string csv_row(const StepStats& s) {
  std::ostringstream os;
  os.precision(10);
  os << s.step;
  for (double v : s.per_level) os << ',' << v;
  os << ',' << s.total;
  return os.str();
}

std::vector<dataset::Sample> load_training_samples(const TrainConfig& config, const lexicon::Lexicon& lexicon) {
  std::vector<dataset::Sample> samples;
  if (!config.data_dir.empty()) {
    samples = dataset::ingest_manifest(config.data_dir, lexicon, config.model.image.image_size);
    if (!config.train_chars_path.empty()) {
      const auto keep = lexicon::read_char_list(config.train_chars_path);
      std::erase_if(samples, [&](const dataset::Sample& s) {
        return std::find(keep.begin(), keep.end(), s.character) == keep.end();
      });
    }
  } else {
    const auto chars =
        config.train_chars_path.empty() ? lexicon.characters() : lexicon::read_char_list(config.train_chars_path);
    samples = dataset::render_samples(lexicon, chars, config.model.image.image_size, config.samples_per_char,
                                      config.render_seed, config.workers);
  }
  if (samples.empty()) throw Error(ErrorCode::DataExhausted, "training set is empty");
  return samples;
}

namespace {
TrainConfig bind_vocab(TrainConfig config, const lexicon::Lexicon& lexicon) {
  config.model.text.radical_vocab = lexicon.radical_token_vocab();
  config.validate();
  return config;
}
}  // namespace

Trainer::Trainer(const TrainConfig& config, const lexicon::Lexicon& lexicon, std::vector<dataset::Sample> samples)
    : config_(bind_vocab(config, lexicon)),
      radical_glyphs_(lexicon.radicals().glyphs()),
      samples_(std::move(samples)),
      rng_(config.seed),
      model_(std::make_unique<Model>(config_.model, rng_)),
      optimizer_(model_->parameters(), config_.lr),
      stream_(samples_, config_.batch_size, config_.seed) {}

StepStats Trainer::step() {
  const dataset::Batch batch = stream_.next();
  model_->set_training(true);
  optimizer_.zero_grad();
  const auto out = model_->forward(batch);
  const auto loss = alignment::multi_level_loss(out.sims, config_.weights, batch.text_ids);

  StepStats stats;
  stats.step = progress_.step;
  stats.epoch = stream_.epoch();
  stats.per_level = loss.per_level;
  stats.total = loss.total.item();
  if (!std::isfinite(stats.total)) {
    std::ostringstream os;
    os << "step " << stats.step << " epoch " << stats.epoch << ": per-level losses";
    for (double v : stats.per_level) os << ' ' << v;
    os << ", temperature " << model_->temperature.item();
    throw Error(ErrorCode::NonFiniteLoss, os.str());
  }
  loss.total.backward();
  optimizer_.step();

  progress_.step += 1;
  progress_.epoch = stream_.epoch();
  progress_.batch_in_epoch = stream_.position_in_epoch();
  return stats;
}

std::vector<StepStats> Trainer::run(std::ostream* log, const std::function<bool(const StepStats&)>& stop) {
  std::vector<StepStats> history;
  const double start = cpu_seconds();
  const long epoch_steps = static_cast<long>(config_.epochs) * stream_.batches_per_epoch();
  if (log && progress_.step == 0) *log << csv_header() << '\n';
  for (;;) {
    if (config_.epochs > 0 && progress_.step >= epoch_steps) break;
    if (config_.max_steps > 0 && progress_.step >= config_.max_steps) break;
    if (config_.time_budget_minutes > 0.0 && cpu_seconds() - start >= 60.0 * config_.time_budget_minutes) break;
    const StepStats s = step();
    history.push_back(s);
    if (log) *log << csv_row(s) << '\n' << std::flush;
    if (stop && stop(s)) break;
  }
  return history;
}

void Trainer::save(const std::filesystem::path& path) const {
  CheckpointData data;
  data.model = config_.model;
  data.train_config = format_train_config(config_);
  data.radical_glyphs = radical_glyphs_;
  data.progress = progress_;
  std::ostringstream rng_text;
  rng_text << rng_;
  data.rng_state = rng_text.str();
  data.adam_lr = optimizer_.lr;
  data.adam_steps = optimizer_.steps;
  export_model(*model_, data);
  const auto named = model_->named_parameters();
  for (std::size_t i = 0; i < named.size(); ++i) {
    data.adam_m.push_back({named[i].first, named[i].second.shape(), optimizer_.m[i]});
    data.adam_v.push_back({named[i].first, named[i].second.shape(), optimizer_.v[i]});
  }
  write_checkpoint(path, data);
}

void Trainer::resume(const std::filesystem::path& path) {
  const CheckpointData data = read_checkpoint(path);
  if (data.radical_glyphs != radical_glyphs_) {
    throw Error(ErrorCode::VocabMismatch, "checkpoint radical inventory differs from the lexicon");
  }
  if (model_to_json(data.model) != model_to_json(config_.model)) {
    throw Error(ErrorCode::InvalidConfig, "checkpoint model configuration differs from the training config");
  }
  import_model(*model_, data);
  const auto named = model_->named_parameters();
  if (data.adam_m.size() != named.size() || data.adam_v.size() != named.size()) {
    throw Error(ErrorCode::CorruptFile, "optimizer state does not cover every parameter");
  }
  for (std::size_t i = 0; i < named.size(); ++i) {
    if (data.adam_m[i].values.size() != named[i].second.numel() ||
        data.adam_v[i].values.size() != named[i].second.numel()) {
      throw Error(ErrorCode::CorruptFile, "optimizer state size for " + named[i].first);
    }
    optimizer_.m[i] = data.adam_m[i].values;
    optimizer_.v[i] = data.adam_v[i].values;
  }
  optimizer_.steps = data.adam_steps;
  optimizer_.lr = data.adam_lr;
  progress_ = data.progress;
  std::istringstream rng_text(data.rng_state);
  rng_text >> rng_;
  stream_.seek(progress_.epoch, progress_.batch_in_epoch);
}

// ---- checkpoint files -------------------------------------------------------------------

void export_model(const Model& model, CheckpointData& data) {
  data.model = model.config();
  data.parameters.clear();
  data.buffers.clear();
  for (const auto& [name, t] : model.named_parameters()) {
    data.parameters.push_back({name, t.shape(), {t.values().begin(), t.values().end()}});
  }
  for (const auto& [name, t] : model.named_buffers()) {
    data.buffers.push_back({name, t.shape(), {t.values().begin(), t.values().end()}});
  }
}

void import_model(Model& model, const CheckpointData& data) {
  auto restore = [](std::vector<std::pair<std::string, Tensor>> live, const std::vector<NamedArray>& stored,
                    const char* what) {
    std::map<std::string, const NamedArray*> by_name;
    for (const auto& a : stored) by_name[a.name] = &a;
    if (by_name.size() != live.size()) {
      throw Error(ErrorCode::CorruptFile, std::string(what) + " count " + std::to_string(by_name.size()) +
                                              " does not match the model's " + std::to_string(live.size()));
    }
    for (auto& [name, t] : live) {
      const auto it = by_name.find(name);
      if (it == by_name.end()) throw Error(ErrorCode::CorruptFile, "missing " + std::string(what) + " " + name);
      if (it->second->shape != t.shape()) {
        throw Error(ErrorCode::CorruptFile, "shape of " + name + " is " + shape_str(it->second->shape) +
                                                ", model expects " + shape_str(t.shape()));
      }
      std::copy(it->second->values.begin(), it->second->values.end(), t.values().begin());
    }
  };
  restore(model.named_parameters(), data.parameters, "parameter");
  restore(model.named_buffers(), data.buffers, "buffer");
}

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
  json header;
  header["format_version"] = data.version;
  header["model"] = model_to_json(data.model);
  header["train_config"] = data.train_config;
  header["radical_glyphs"] = data.radical_glyphs;
  header["progress"] = {{"epoch", data.progress.epoch},
                        {"batch_in_epoch", data.progress.batch_in_epoch},
                        {"step", data.progress.step}};
  header["rng_state"] = data.rng_state;
  header["adam"] = {{"lr", data.adam_lr}, {"steps", data.adam_steps}};

  std::string payload;
  json tensors = json::array();
  auto append = [&](const std::vector<NamedArray>& arrays, const char* group) {
    for (const auto& a : arrays) {
      if (a.values.size() != shape_numel(a.shape)) {
        throw Error(ErrorCode::BadShape, "tensor " + a.name + " has the wrong element count");
      }
      tensors.push_back({{"group", group},
                         {"name", a.name},
                         {"shape", a.shape},
                         {"dtype", "f64le"},
                         {"offset", payload.size()},
                         {"count", a.values.size()}});
      // Doubles are stored in the host's layout, which must be little-endian.
      static_assert(std::endian::native == std::endian::little);
      payload.append(reinterpret_cast<const char*>(a.values.data()), a.values.size() * sizeof(double));
    }
  };
  append(data.parameters, "parameter");
  append(data.buffers, "buffer");
  append(data.adam_m, "adam_m");
  append(data.adam_v, "adam_v");
  header["tensors"] = std::move(tensors);
  header["data_bytes"] = payload.size();
  header["crc32"] = crc32(0L, reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(payload.size()));

  const std::string header_text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  const std::uint64_t header_len = header_text.size();
  out.write(kMagic, sizeof kMagic);
  out.write(reinterpret_cast<const char*>(&header_len), sizeof header_len);
  out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw Error(ErrorCode::IoError, "short write to " + path.string());
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = path.string() + ": ";
  if (bytes.size() < sizeof kMagic + 8 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw Error(ErrorCode::CorruptFile, where + "not a checkpoint (bad magic or truncated)");
  }
  std::uint64_t header_len = 0;
  std::memcpy(&header_len, bytes.data() + sizeof kMagic, sizeof header_len);
  const std::size_t data_start = sizeof kMagic + 8 + header_len;
  if (header_len > bytes.size() || data_start > bytes.size()) {
    throw Error(ErrorCode::CorruptFile, where + "truncated header");
  }
  json header;
  try {
    header = json::parse(bytes.substr(sizeof kMagic + 8, header_len));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptFile, where + "unreadable header: " + e.what());
  }

  CheckpointData data;
  try {
    data.version = header.at("format_version").get<int>();
    if (data.version != kCheckpointVersion) {
      throw Error(ErrorCode::VersionMismatch, where + "format version " + std::to_string(data.version) +
                                                  ", expected " + std::to_string(kCheckpointVersion));
    }
    const auto data_bytes = header.at("data_bytes").get<std::uint64_t>();
    if (bytes.size() - data_start != data_bytes) {
      throw Error(ErrorCode::CorruptFile, where + "expected " + std::to_string(data_bytes) + " data bytes, found " +
                                              std::to_string(bytes.size() - data_start));
    }
    const char* payload = bytes.data() + data_start;
    const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(payload), static_cast<uInt>(data_bytes));
    if (crc != header.at("crc32").get<unsigned long>()) {
      throw Error(ErrorCode::CorruptFile, where + "checksum mismatch");
    }
    data.model = model_from_json(header.at("model"));
    data.train_config = header.at("train_config").get<std::string>();
    data.radical_glyphs = header.at("radical_glyphs").get<std::vector<std::string>>();
    const auto& p = header.at("progress");
    data.progress = {p.at("epoch").get<int>(), p.at("batch_in_epoch").get<int>(), p.at("step").get<long>()};
    data.rng_state = header.at("rng_state").get<std::string>();
    data.adam_lr = header.at("adam").at("lr").get<double>();
    data.adam_steps = header.at("adam").at("steps").get<long>();
    for (const auto& t : header.at("tensors")) {
      NamedArray a{t.at("name").get<std::string>(), t.at("shape").get<Shape>(), {}};
      const auto offset = t.at("offset").get<std::uint64_t>();
      const auto count = t.at("count").get<std::uint64_t>();
      if (count != shape_numel(a.shape) || offset + count * sizeof(double) > data_bytes) {
        throw Error(ErrorCode::CorruptFile, where + "tensor " + a.name + " lies outside the data section");
      }
      a.values.resize(count);
      std::memcpy(a.values.data(), payload + offset, count * sizeof(double));
      const auto group = t.at("group").get<std::string>();
      if (group == "parameter") data.parameters.push_back(std::move(a));
      else if (group == "buffer") data.buffers.push_back(std::move(a));
      else if (group == "adam_m") data.adam_m.push_back(std::move(a));
      else if (group == "adam_v") data.adam_v.push_back(std::move(a));
      else throw Error(ErrorCode::CorruptFile, where + "unknown tensor group " + group);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptFile, where + "malformed header: " + e.what());
  }
  return data;
}

std::unique_ptr<Model> load_model(const std::filesystem::path& path, const lexicon::Lexicon& lexicon) {
  const CheckpointData data = read_checkpoint(path);
  if (data.radical_glyphs != lexicon.radicals().glyphs()) {
    throw Error(ErrorCode::VocabMismatch, "checkpoint radical inventory (" + std::to_string(data.radical_glyphs.size()) +
                                              " radicals) differs from the lexicon's (" +
                                              std::to_string(lexicon.radicals().size()) + ")");
  }
  nn::Rng rng(0);
  auto model = std::make_unique<Model>(data.model, rng);
  import_model(*model, data);
  model->set_training(false);
  return model;
}

}  // namespace mgalign::trainer
