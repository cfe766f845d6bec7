#include "derm/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>

#include "derm/checkpoint.hpp"
#include "derm/io.hpp"
#include "derm/parallel.hpp"
#include "derm/preprocess.hpp"

namespace derm::pipeline {

using io::fnv1a;
using io::read_file;
using io::write_file_atomic;

namespace {

// ------------------------------------------------------------ value codecs

std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end)
    throw ConfigError("key '" + key + "': cannot parse '" + text + "' as a number");
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("key '" + key + "': expected true or false, got '" + text + "'");
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

std::string fmt_color(ColorConstancy c) {
  switch (c) {
    case ColorConstancy::none: return "none";
    case ColorConstancy::max_rgb: return "max_rgb";
    case ColorConstancy::shades_of_gray: return "shades_of_gray";
  }
  return "none";
}

ColorConstancy parse_color(const std::string& key, const std::string& text) {
  if (text == "none") return ColorConstancy::none;
  if (text == "max_rgb") return ColorConstancy::max_rgb;
  if (text == "shades_of_gray") return ColorConstancy::shades_of_gray;
  throw ConfigError("key '" + key + "': expected none, max_rgb or shades_of_gray, got '" + text + "'");
}

using FeatureActivation = model::BackboneConfig::FeatureActivation;

std::string fmt_activation(FeatureActivation a) { return a == FeatureActivation::tanh ? "tanh" : "relu"; }

FeatureActivation parse_activation(const std::string& key, const std::string& text) {
  if (text == "tanh") return FeatureActivation::tanh;
  if (text == "relu") return FeatureActivation::relu;
  throw ConfigError("key '" + key + "': expected tanh or relu, got '" + text + "'");
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream in(text);
  while (std::getline(in, cur, ',')) parts.push_back(cur);
  return parts;
}

std::string fmt_blocks(const std::vector<model::ConvBlockSpec>& blocks) {
  std::string out;
  for (std::size_t i = 0; i < blocks.size(); ++i)
    out += (i ? "," : "") + std::to_string(blocks[i].channels) + ":" + std::to_string(blocks[i].stride);
  return out;
}

std::vector<model::ConvBlockSpec> parse_blocks(const std::string& key, const std::string& text) {
  std::vector<model::ConvBlockSpec> blocks;
  for (const std::string& part : split_list(text)) {
    const auto colon = part.find(':');
    if (colon == std::string::npos) throw ConfigError("key '" + key + "': block '" + part + "' is not channels:stride");
    blocks.push_back({parse_number<int>(key, part.substr(0, colon)), parse_number<int>(key, part.substr(colon + 1))});
  }
  return blocks;
}

std::string fmt_counts(const std::vector<int>& counts) {
  std::string out;
  for (std::size_t i = 0; i < counts.size(); ++i) out += (i ? "," : "") + std::to_string(counts[i]);
  return out;
}

std::vector<int> parse_counts(const std::string& key, const std::string& text) {
  std::vector<int> out;
  for (const std::string& part : split_list(text)) out.push_back(parse_number<int>(key, part));
  return out;
}

// ------------------------------------------------------------ schema

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename T, typename Ref>
Field num(const std::string& key, Ref ref) {
  return {key,
          [ref](const RunConfig& c) {
            const T v = ref(const_cast<RunConfig&>(c));
            if constexpr (std::is_floating_point_v<T>) return fmt_double(v);
            else return std::to_string(v);
          },
          [ref, key](RunConfig& c, const std::string& s) { ref(c) = parse_number<T>(key, s); }};
}

template <typename Ref>
Field flag(const std::string& key, Ref ref) {
  return {key, [ref](const RunConfig& c) { return fmt_bool(ref(const_cast<RunConfig&>(c))); },
          [ref, key](RunConfig& c, const std::string& s) { ref(c) = parse_bool(key, s); }};
}

template <typename Ref>
Field text(const std::string& key, Ref ref) {
  return {key, [ref](const RunConfig& c) { return ref(const_cast<RunConfig&>(c)); },
          [ref](RunConfig& c, const std::string& s) { ref(c) = s; }};
}

const std::vector<Field>& schema() {
  static const std::vector<Field> fields = [] {
    std::vector<Field> f;
    f.push_back(text("out", [](RunConfig& c) -> std::string& { return c.out; }));
    f.push_back(num<std::uint64_t>("seed", [](RunConfig& c) -> std::uint64_t& { return c.seed; }));
    f.push_back(num<int>("jobs", [](RunConfig& c) -> int& { return c.jobs; }));
    f.push_back(text("paths.manifest", [](RunConfig& c) -> std::string& { return c.paths.manifest; }));
    f.push_back(text("paths.gan_checkpoint", [](RunConfig& c) -> std::string& { return c.paths.gan_checkpoint; }));
    f.push_back(
        text("paths.synthetic_manifest", [](RunConfig& c) -> std::string& { return c.paths.synthetic_manifest; }));

    f.push_back({"preprocess.color_constancy",
                 [](const RunConfig& c) { return fmt_color(c.preprocess.color_constancy); },
                 [](RunConfig& c, const std::string& s) {
                   c.preprocess.color_constancy = parse_color("preprocess.color_constancy", s);
                 }});
    f.push_back(num<double>("preprocess.minkowski_p", [](RunConfig& c) -> double& { return c.preprocess.minkowski_p; }));
    f.push_back(num<double>("preprocess.k", [](RunConfig& c) -> double& { return c.preprocess.k; }));
    f.push_back(flag("preprocess.hair_removal", [](RunConfig& c) -> bool& { return c.preprocess.hair_removal; }));
    f.push_back(num<int>("preprocess.morph_radius", [](RunConfig& c) -> int& { return c.preprocess.morph_radius; }));
    f.push_back(
        num<double>("preprocess.morph_threshold", [](RunConfig& c) -> double& { return c.preprocess.morph_threshold; }));

    f.push_back(num<int>("synth.n_train", [](RunConfig& c) -> int& { return c.synth.confound.n_train; }));
    f.push_back(num<int>("synth.n_test", [](RunConfig& c) -> int& { return c.synth.confound.n_test; }));
    f.push_back(
        num<double>("synth.positive_rate", [](RunConfig& c) -> double& { return c.synth.confound.positive_rate; }));
    f.push_back(num<double>("synth.test_positive_rate",
                            [](RunConfig& c) -> double& { return c.synth.confound.test_positive_rate; }));
    f.push_back(num<double>("synth.train_hair_label_correlation",
                            [](RunConfig& c) -> double& { return c.synth.confound.train_hair_label_correlation; }));
    f.push_back(num<double>("synth.hair_rate", [](RunConfig& c) -> double& { return c.synth.confound.hair_rate; }));
    f.push_back(num<int>("synth.image_size", [](RunConfig& c) -> int& { return c.synth.confound.image_size; }));
    f.push_back(num<int>("synth.max_arcs", [](RunConfig& c) -> int& { return c.synth.confound.max_arcs; }));
    f.push_back(
        num<int>("synth.enlargement_factor", [](RunConfig& c) -> int& { return c.synth.enlargement_factor; }));

    f.push_back(num<int>("gan.z_dim", [](RunConfig& c) -> int& { return c.gda.gan.z_dim; }));
    f.push_back(num<int>("gan.img_size", [](RunConfig& c) -> int& { return c.gda.gan.img_size; }));
    f.push_back(num<int>("gan.gen_base", [](RunConfig& c) -> int& { return c.gda.gan.gen_base; }));
    f.push_back(num<int>("gan.critic_base", [](RunConfig& c) -> int& { return c.gda.gan.critic_base; }));
    f.push_back(num<double>("gan.lr", [](RunConfig& c) -> double& { return c.gda.gan.lr; }));
    f.push_back(
        num<int>("gan.critic_steps_per_gen", [](RunConfig& c) -> int& { return c.gda.gan.critic_steps_per_gen; }));
    f.push_back(num<double>("gan.clip_c", [](RunConfig& c) -> double& { return c.gda.gan.clip_c; }));
    f.push_back(num<int>("gan.epochs", [](RunConfig& c) -> int& { return c.gda.gan.epochs; }));
    f.push_back(num<int>("gan.batch_size", [](RunConfig& c) -> int& { return c.gda.gan.batch_size; }));
    f.push_back(num<int>("gan.retry_factor", [](RunConfig& c) -> int& { return c.gda.retry_factor; }));
    f.push_back(num<double>("gan.mse_floor", [](RunConfig& c) -> double& { return c.gda.mse_floor; }));
    f.push_back(num<double>("gan.floor_percentile", [](RunConfig& c) -> double& { return c.gda.floor_percentile; }));

    f.push_back(num<int>("model.input_size", [](RunConfig& c) -> int& { return c.model.input_size; }));
    f.push_back({"model.blocks", [](const RunConfig& c) { return fmt_blocks(c.model.blocks); },
                 [](RunConfig& c, const std::string& s) { c.model.blocks = parse_blocks("model.blocks", s); }});
    f.push_back(num<int>("model.kernel", [](RunConfig& c) -> int& { return c.model.kernel; }));
    f.push_back(num<int>("model.feature_dim", [](RunConfig& c) -> int& { return c.model.feature_dim; }));
    f.push_back({"model.feature_activation",
                 [](const RunConfig& c) { return fmt_activation(c.model.feature_activation); },
                 [](RunConfig& c, const std::string& s) {
                   c.model.feature_activation = parse_activation("model.feature_activation", s);
                 }});
    f.push_back(flag("model.use_color_constancy", [](RunConfig& c) -> bool& { return c.model.use_color_constancy; }));
    f.push_back(num<double>("model.lambda", [](RunConfig& c) -> double& { return c.model.lambda; }));
    f.push_back(flag("model.hair_branch", [](RunConfig& c) -> bool& { return c.model.hair_branch; }));
    f.push_back(num<int>("model.epochs", [](RunConfig& c) -> int& { return c.model.epochs; }));
    f.push_back(num<int>("model.batch_size", [](RunConfig& c) -> int& { return c.model.batch_size; }));
    f.push_back(num<double>("model.eta", [](RunConfig& c) -> double& { return c.model.eta; }));
    f.push_back(num<double>("model.beta1", [](RunConfig& c) -> double& { return c.model.beta1; }));
    f.push_back(num<double>("model.beta2", [](RunConfig& c) -> double& { return c.model.beta2; }));
    f.push_back(num<double>("model.epsilon", [](RunConfig& c) -> double& { return c.model.epsilon; }));

    f.push_back(num<int>("train.folds", [](RunConfig& c) -> int& { return c.train.folds; }));
    f.push_back(flag("train.use_gda", [](RunConfig& c) -> bool& { return c.train.use_gda; }));
    f.push_back(num<int>("train.synthetic_count", [](RunConfig& c) -> int& { return c.train.synthetic_count; }));
    f.push_back(text("train.eval_split", [](RunConfig& c) -> std::string& { return c.train.eval_split; }));
    f.push_back({"train.sweep_counts", [](const RunConfig& c) { return fmt_counts(c.train.sweep_counts); },
                 [](RunConfig& c, const std::string& s) {
                   c.train.sweep_counts = parse_counts("train.sweep_counts", s);
                 }});
    return f;
  }();
  return fields;
}

const Field& field(const std::string& key) {
  for (const Field& f : schema())
    if (f.key == key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

// ------------------------------------------------------------ RunConfig

void RunConfig::set(const std::string& key, const std::string& value) { field(key).set(*this, value); }

std::string RunConfig::get(const std::string& key) const { return field(key).get(*this); }

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const Field& f : schema()) out.push_back(f.key);
    return out;
  }();
  return k;
}

RunConfig RunConfig::parse(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  std::vector<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (std::find(seen.begin(), seen.end(), key) != seen.end()) throw ConfigError(where + "duplicate key '" + key + "'");
    seen.push_back(key);
    try {
      cfg.set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const IoError&) {
    throw ConfigError("cannot read config file " + path.string());
  }
  return parse(text, path.string());
}

std::string RunConfig::echo() const {
  std::string out;
  for (const Field& f : schema()) out += f.key + " = " + f.get(*this) + "\n";
  return out;
}

void RunConfig::validate() const {
  if (out.empty()) throw ConfigError("out must not be empty");
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
  if (preprocess.color_constancy == ColorConstancy::shades_of_gray && !(preprocess.minkowski_p >= 1))
    throw ConfigError("preprocess.minkowski_p must be >= 1");
  if (!(preprocess.k > 0 && preprocess.k <= 1)) throw ConfigError("preprocess.k must lie in (0, 1]");
  if (preprocess.morph_radius < 1) throw ConfigError("preprocess.morph_radius must be >= 1");
  const auto& cc = synth.confound;
  if (cc.n_train < 0 || cc.n_test < 0) throw ConfigError("synth sample counts must be >= 0");
  if (!(cc.positive_rate > 0 && cc.positive_rate < 1)) throw ConfigError("synth.positive_rate must lie in (0, 1)");
  if (!(cc.test_positive_rate < 0 || (cc.test_positive_rate > 0 && cc.test_positive_rate < 1)))
    throw ConfigError("synth.test_positive_rate must lie in (0, 1), or be negative to reuse positive_rate");
  if (!(cc.hair_rate > 0 && cc.hair_rate < 1)) throw ConfigError("synth.hair_rate must lie in (0, 1)");
  if (!(std::abs(cc.train_hair_label_correlation) <= 1))
    throw ConfigError("synth.train_hair_label_correlation must lie in [-1, 1]");
  if (cc.image_size < 16) throw ConfigError("synth.image_size must be >= 16");
  if (cc.max_arcs < 1) throw ConfigError("synth.max_arcs must be >= 1");
  if (synth.enlargement_factor < 1) throw ConfigError("synth.enlargement_factor must be >= 1");
  gda.gan.validate();
  if (gda.retry_factor < 1) throw ConfigError("gan.retry_factor must be >= 1");
  if (!(gda.floor_percentile >= 0 && gda.floor_percentile <= 100))
    throw ConfigError("gan.floor_percentile must lie in [0, 100]");
  model.validate();
  if (train.folds < 1) throw ConfigError("train.folds must be >= 1");
  if (train.eval_split != "val" && train.eval_split != "test")
    throw ConfigError("train.eval_split must be val or test, got '" + train.eval_split + "'");
  if (train.folds == 1 && train.eval_split != "test")
    throw ConfigError("train.folds = 1 has no held-out fold; set train.eval_split = test");
  if (train.synthetic_count < 0) throw ConfigError("train.synthetic_count must be >= 0");
  for (int c : train.sweep_counts)
    if (c < 0) throw ConfigError("train.sweep_counts entries must be >= 0");
}

std::filesystem::path RunConfig::manifest_path() const {
  return paths.manifest.empty() ? std::filesystem::path(out) / "data" / "manifest.csv" : std::filesystem::path(paths.manifest);
}
std::filesystem::path RunConfig::gan_checkpoint_path() const {
  return paths.gan_checkpoint.empty() ? std::filesystem::path(out) / "gan" / "generator.ckpt" : std::filesystem::path(paths.gan_checkpoint);
}
std::filesystem::path RunConfig::synthetic_manifest_path() const {
  return paths.synthetic_manifest.empty() ? std::filesystem::path(out) / "gan" / "samples" / "manifest.csv"
                                          : std::filesystem::path(paths.synthetic_manifest);
}

synth::ConfoundConfig RunConfig::confound_config() const {
  synth::ConfoundConfig c = synth.confound;
  c.seed = derive_seed(seed, "synth");
  return c;
}
gda::GanConfig RunConfig::gan_config() const {
  gda::GanConfig c = gda.gan;
  c.seed = derive_seed(seed, "gan");
  return c;
}
model::BackboneConfig RunConfig::model_config() const {
  model::BackboneConfig c = model;
  c.seed = derive_seed(seed, "model");
  return c;
}

std::uint64_t derive_seed(std::uint64_t seed, const std::string& name) {
  return fnv1a(name, fnv1a(std::to_string(seed)));
}

// ------------------------------------------------------------ preprocessing

PreprocessConfig effective_preprocess(const RunConfig& cfg) {
  PreprocessConfig p = cfg.preprocess;
  if (!cfg.model.use_color_constancy) p.color_constancy = ColorConstancy::none;
  return p;
}

Image preprocess_image(const Image& image, const PreprocessConfig& cfg, int size) {
  Image out = cfg.hair_removal ? preprocess::morph_hair_removal(image, cfg.morph_radius, cfg.morph_threshold) : image;
  switch (cfg.color_constancy) {
    case ColorConstancy::none: break;
    case ColorConstancy::max_rgb: out = preprocess::max_rgb(out, cfg.k); break;
    case ColorConstancy::shades_of_gray: out = preprocess::shades_of_gray(out, cfg.minkowski_p, cfg.k); break;
  }
  return preprocess::resize(out, size, size);
}

synth::Dataset preprocess_dataset(const synth::Dataset& data, const PreprocessConfig& cfg, int size, int jobs) {
  synth::Dataset out = data;
  parallel_for(out.size(), jobs, [&](std::size_t i) { out[i].image = preprocess_image(data[i].image, cfg, size); });
  return out;
}

// ------------------------------------------------------------ synth

SynthOutput make_dataset(const RunConfig& cfg) {
  cfg.validate();
  SynthOutput out;
  const synth::ConfoundConfig cc = cfg.confound_config();
  out.data = synth::build_confounded_dataset(cc, cfg.jobs);
  out.data.test = synth::enlarge_with_hair(out.data.test, cfg.synth.enlargement_factor, cc.max_arcs,
                                           derive_seed(cfg.seed, "enlarge"));
  for (auto& s : out.data.test) s.split = "test";
  if (!out.data.train.empty())
    out.train_phi = synth::phi_coefficient(synth::melanoma_labels(out.data.train), synth::hair_labels(out.data.train));
  if (!out.data.test.empty())
    out.test_phi = synth::phi_coefficient(synth::melanoma_labels(out.data.test), synth::hair_labels(out.data.test));
  return out;
}

void write_dataset(const SynthOutput& out, const RunConfig& cfg) {
  synth::Dataset all = out.data.train;
  all.insert(all.end(), out.data.test.begin(), out.data.test.end());
  const auto path = cfg.manifest_path();
  synth::save_manifest(all, path);
  nlohmann::json side = {{"config", cfg.echo()},
                         {"n_train", out.data.train.size()},
                         {"n_test", out.data.test.size()},
                         {"train_phi", out.train_phi},
                         {"test_phi", out.test_phi}};
  write_file_atomic(path.string() + ".json", side.dump(2) + "\n");
}

// ------------------------------------------------------------ gda

synth::Dataset gan_positives(const synth::Dataset& data) {
  synth::Dataset out;
  for (const auto& s : data)
    if (s.split == "train" && s.melanoma == 1 && s.source != synth::Source::synthetic_gan) out.push_back(s);
  return out;
}

gda::GanPair<float> fit_gan(const synth::Dataset& data, const RunConfig& cfg) {
  cfg.validate();
  const synth::Dataset pos = gan_positives(data);
  if (pos.empty()) throw ContractError("no melanoma-positive training images to fit the GAN on");
  return gda::train_dcgan<float>(pos, cfg.gan_config());
}

void save_gan(const gda::GanPair<float>& pair, const RunConfig& cfg, const std::filesystem::path& path) {
  ckpt::Checkpoint c;
  c.config_echo = cfg.echo();
  c.tensors = gda::generator_tensors(pair);
  ckpt::save(c, path);
}

gda::GanPair<float> load_gan(const std::filesystem::path& path) {
  const ckpt::Checkpoint c = ckpt::load(path);
  RunConfig cfg;
  try {
    cfg = RunConfig::parse(c.config_echo, path.string() + " (embedded config)");
  } catch (const ConfigError& e) {
    throw CheckpointError(e.what());
  }
  auto pair = gda::init_gan<float>(cfg.gan_config());
  gda::load_generator_tensors(pair, c.tensors);
  return pair;
}

double diversity_floor(const std::vector<Image>& refs, const GdaOptions& opts) {
  if (opts.mse_floor >= 0) return opts.mse_floor;
  return gda::pairwise_mse_percentile(refs, opts.floor_percentile);
}

SynthesisResult synthesize(gda::GanPair<float>& pair, const synth::Dataset& data, int n, const RunConfig& cfg) {
  SynthesisResult r;
  if (n == 0) return r;
  const auto refs = gda::reference_set(gan_positives(data), pair.cfg.img_size);
  r.mse_floor = diversity_floor(refs, cfg.gda);
  r.report = gda::sample_synthetic(pair, n, refs, r.mse_floor, derive_seed(cfg.seed, "gan/sample"),
                                   cfg.gda.retry_factor, cfg.jobs);
  return r;
}

// ------------------------------------------------------------ train

bool CvResult::ok() const {
  return std::all_of(folds.begin(), folds.end(), [](const FoldOutcome& f) { return f.report.has_value(); });
}

CvResult cross_validate(const synth::Dataset& data, const synth::Dataset& synthetic, const RunConfig& cfg) {
  cfg.validate();
  synth::Dataset pool, test;
  for (const auto& s : data) {
    if (s.source == synth::Source::synthetic_gan) continue;
    if (s.split == "train") pool.push_back(s);
    else if (s.split == "test") test.push_back(s);
  }
  if (cfg.train.eval_split == "test" && test.empty()) throw ContractError("eval_split = test but no test rows");
  const int k = cfg.train.folds;
  std::vector<synth::Fold> folds;
  if (k == 1) {
    synth::Fold all;
    for (std::size_t i = 0; i < pool.size(); ++i) all.train_idx.push_back(i);
    folds.push_back(all);
  } else {
    folds = synth::stratified_kfold(synth::melanoma_labels(pool), k, derive_seed(cfg.seed, "kfold"));
  }

  CvResult cv;
  cv.folds.resize(folds.size());
  parallel_for(folds.size(), cfg.jobs, [&](std::size_t f) {
    FoldOutcome& out = cv.folds[f];
    out.fold = static_cast<int>(f);
    try {
      synth::Dataset train;
      for (std::size_t i : folds[f].train_idx) train.push_back(pool[i]);
      train.insert(train.end(), synthetic.begin(), synthetic.end());
      synth::Dataset eval;
      if (cfg.train.eval_split == "test") eval = test;
      else
        for (std::size_t i : folds[f].val_idx) eval.push_back(pool[i]);
      model::BackboneConfig mc = cfg.model_config();
      mc.seed = derive_seed(mc.seed, "fold/" + std::to_string(f));
      auto result = model::train<float>(train, mc);
      out.params = result.groups.merged();
      out.log = result.log;
      const auto scores = model::predict_proba<float>(eval, out.params, mc);
      out.report = metrics::make_fold_report(out.fold, scores, synth::melanoma_labels(eval));
    } catch (const Error& e) {
      out.error_kind = e.kind();
      out.error = e.what();
    }
  });
  std::vector<metrics::FoldReport> done;
  for (const auto& f : cv.folds)
    if (f.report) done.push_back(*f.report);
  if (!done.empty()) cv.summary = metrics::aggregate(std::span<const metrics::FoldReport>(done));
  return cv;
}

nlohmann::json fold_json(const FoldOutcome& fold, const RunConfig& cfg) {
  nlohmann::json j;
  if (fold.report) {
    j = metrics::to_json(*fold.report);
  } else {
    j["fold"] = fold.fold;
    j["error"] = {{"kind", fold.error_kind}, {"message", fold.error}};
  }
  nlohmann::json log = nlohmann::json::array();
  for (const auto& e : fold.log)
    log.push_back({{"epoch", e.epoch}, {"melanoma_loss", e.melanoma_loss}, {"hair_loss", e.hair_loss},
                   {"total_loss", e.total_loss}});
  j["log"] = log;
  j["config"] = cfg.echo();
  return j;
}

nlohmann::json aggregate_json(const CvResult& cv, const RunConfig& cfg) {
  nlohmann::json j = cv.summary ? metrics::to_json(*cv.summary) : nlohmann::json::object();
  nlohmann::json aucs = nlohmann::json::array(), failed = nlohmann::json::array();
  for (const auto& f : cv.folds) {
    if (f.report) aucs.push_back(f.report->auc);
    else failed.push_back(f.fold);
  }
  j["fold_aucs"] = aucs;
  j["failed_folds"] = failed;
  j["config"] = cfg.echo();
  return j;
}

// ------------------------------------------------------------ sweep

std::vector<SweepRow> sweep(const synth::Dataset& data, const synth::Dataset& synthetic, std::vector<int> counts,
                            const RunConfig& cfg) {
  std::sort(counts.begin(), counts.end());
  counts.erase(std::unique(counts.begin(), counts.end()), counts.end());
  std::vector<SweepRow> rows;
  for (int n : counts) {
    SweepRow row;
    row.n_synthetic = n;
    try {
      if (static_cast<std::size_t>(n) > synthetic.size())
        throw ContractError("sweep count " + std::to_string(n) + " exceeds the " + std::to_string(synthetic.size()) +
                            " synthetic samples available");
      const synth::Dataset prefix(synthetic.begin(), synthetic.begin() + n);
      const CvResult cv = cross_validate(data, prefix, cfg);
      if (!cv.ok()) {
        for (const auto& f : cv.folds)
          if (!f.report) throw Error(f.error_kind, "fold " + std::to_string(f.fold) + ": " + f.error);
      }
      row.summary = cv.summary;
    } catch (const Error& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "n_synthetic,mean_auc,std_auc\n";
  char buf[96];
  for (const auto& r : rows) {
    if (r.summary) std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f\n", r.n_synthetic, r.summary->mean, r.summary->std);
    else std::snprintf(buf, sizeof buf, "%d,nan,nan\n", r.n_synthetic);
    out += buf;
  }
  return out;
}

}  // namespace derm::pipeline
