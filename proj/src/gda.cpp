#include "derm/gda.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <random>

#include "derm/error.hpp"
#include "derm/parallel.hpp"
#include "derm/preprocess.hpp"

namespace derm::gda {

using ad::BatchNormMode;
using ad::Graph;
using ad::Index;
using ad::Tensor;
using ad::Var;

namespace {

constexpr double kInitStd = 0.02;
constexpr double kLeakySlope = 0.2;

std::int64_t gen_width(const GanConfig& cfg, int i) { return std::int64_t{cfg.gen_base} << (cfg.stages() - 1 - i); }
std::int64_t critic_width(const GanConfig& cfg, int i) { return std::int64_t{cfg.critic_base} << i; }

std::string key(const char* prefix, int i, const char* what) {
  return std::string(prefix) + std::to_string(i) + "." + what;
}

template <typename Scalar>
Tensor<Scalar> normal(ad::Shape shape, double stddev, synth::Rng& rng) {
  Tensor<Scalar> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(dist(rng));
  return t;
}

template <typename Scalar>
Var bind_param(Graph<Scalar>& g, const ad::ParamSet<Scalar>& params, const std::string& name, bool trainable) {
  const auto it = params.find(name);
  if (it == params.end()) throw WiringError("GAN parameter '" + name + "' is missing");
  return trainable ? g.param(name, it->second) : g.constant(it->second);
}

}  // namespace

void GanConfig::validate() const {
  auto bad = [](const std::string& m) { return ConfigError("gan: " + m); };
  if (z_dim < 1) throw bad("z_dim must be >= 1");
  if (img_size < 8 || !std::has_single_bit(static_cast<unsigned>(img_size)))
    throw bad("img_size must be a power of two >= 8, got " + std::to_string(img_size));
  if (gen_base < 1 || critic_base < 1) throw bad("layer widths must be >= 1");
  if (!(lr > 0)) throw bad("lr must be > 0");
  if (critic_steps_per_gen < 1) throw bad("critic_steps_per_gen must be >= 1");
  if (!(clip_c > 0)) throw bad("clip_c must be > 0");
  if (epochs < 0) throw bad("epochs must be >= 0");
  if (batch_size < 1) throw bad("batch_size must be >= 1");
}

int GanConfig::stages() const { return std::countr_zero(static_cast<unsigned>(img_size)) - 2; }

std::int64_t generator_param_count(const GanConfig& cfg) {
  cfg.validate();
  const int n = cfg.stages();
  const std::int64_t c0 = gen_width(cfg, 0);
  std::int64_t total = cfg.z_dim * 16 * c0 + 16 * c0 + 2 * c0;
  for (int i = 0; i + 1 < n; ++i) total += 16 * gen_width(cfg, i) * gen_width(cfg, i + 1) + 2 * gen_width(cfg, i + 1);
  return total + 16 * 3 * gen_width(cfg, n - 1) + 3;
}

std::int64_t critic_param_count(const GanConfig& cfg) {
  cfg.validate();
  const int n = cfg.stages();
  std::int64_t total = 0, in = 3;
  for (int i = 0; i < n; ++i) {
    total += 16 * critic_width(cfg, i) * in + critic_width(cfg, i);
    in = critic_width(cfg, i);
  }
  return total + 16 * in + 1;
}

template <typename Scalar>
std::int64_t count_params(const ad::ParamSet<Scalar>& params) {
  std::int64_t n = 0;
  for (const auto& [k, t] : params) n += t.size();
  return n;
}

template <typename Scalar>
Generator<Scalar> build_generator(const GanConfig& cfg) {
  cfg.validate();
  synth::Rng rng = synth::sample_rng(cfg.seed, "gan/init/generator");
  Generator<Scalar> gen;
  auto& p = gen.params;
  const int n = cfg.stages();
  const Index c0 = gen_width(cfg, 0);
  p["g.fc.w"] = normal<Scalar>({c0 * 16, cfg.z_dim}, kInitStd, rng);
  p["g.fc.b"] = Tensor<Scalar>({c0 * 16});
  for (int i = 0; i < n; ++i) {
    const Index c = gen_width(cfg, i);
    p[key("g.bn", i, "gamma")] = Tensor<Scalar>::full({c}, Scalar(1));
    p[key("g.bn", i, "beta")] = Tensor<Scalar>({c});
    gen.bn[key("bn", i, "")] = ad::BatchNormStats<Scalar>::init(c);
    if (i + 1 < n) p[key("g.up", i, "w")] = normal<Scalar>({c, gen_width(cfg, i + 1), 4, 4}, kInitStd, rng);
  }
  p["g.out.w"] = normal<Scalar>({gen_width(cfg, n - 1), 3, 4, 4}, kInitStd, rng);
  p["g.out.b"] = Tensor<Scalar>({3});
  return gen;
}

template <typename Scalar>
Critic<Scalar> build_discriminator(const GanConfig& cfg) {
  cfg.validate();
  synth::Rng rng = synth::sample_rng(cfg.seed, "gan/init/critic");
  Critic<Scalar> p;
  Index in = 3;
  for (int i = 0; i < cfg.stages(); ++i) {
    const Index d = critic_width(cfg, i);
    p[key("d.conv", i, "w")] = normal<Scalar>({d, in, 4, 4}, kInitStd, rng);
    p[key("d.conv", i, "b")] = Tensor<Scalar>({d});
    in = d;
  }
  p["d.fc.w"] = normal<Scalar>({1, in * 16}, kInitStd, rng);
  p["d.fc.b"] = Tensor<Scalar>({1});
  return p;
}

template <typename Scalar>
Var generate(Graph<Scalar>& g, Var z, Generator<Scalar>& gen, const GanConfig& cfg, BatchNormMode mode,
             bool trainable) {
  const auto& p = gen.params;
  const int n = cfg.stages();
  const Index batch = g.value(z).dim(0), c0 = gen_width(cfg, 0);
  Var h = ad::dense(g, z, bind_param(g, p, "g.fc.w", trainable), bind_param(g, p, "g.fc.b", trainable));
  h = ad::reshape(g, h, {batch, c0, 4, 4});
  for (int i = 0; i < n; ++i) {
    h = ad::batch_norm(g, h, bind_param(g, p, key("g.bn", i, "gamma"), trainable), bind_param(g, p, key("g.bn", i, "beta"), trainable),
                       gen.bn.at(key("bn", i, "")), mode);
    h = ad::activation(g, h, ad::Activation::relu());
    if (i + 1 < n) h = ad::conv_transpose2d(g, h, bind_param(g, p, key("g.up", i, "w"), trainable), 2, 1);
  }
  h = ad::conv_transpose2d(g, h, bind_param(g, p, "g.out.w", trainable), 2, 1);
  h = ad::add_channel_bias(g, h, bind_param(g, p, "g.out.b", trainable));
  return ad::activation(g, h, ad::Activation::tanh());
}

template <typename Scalar>
Var criticize(Graph<Scalar>& g, Var images, const Critic<Scalar>& critic, const GanConfig& cfg, bool trainable) {
  const Index batch = g.value(images).dim(0);
  Var h = images;
  for (int i = 0; i < cfg.stages(); ++i) {
    h = ad::conv2d(g, h, bind_param(g, critic, key("d.conv", i, "w"), trainable), 2, 1);
    h = ad::add_channel_bias(g, h, bind_param(g, critic, key("d.conv", i, "b"), trainable));
    h = ad::activation(g, h, ad::Activation::leaky_relu(kLeakySlope));
  }
  h = ad::reshape(g, h, {batch, critic_width(cfg, cfg.stages() - 1) * 16});
  return ad::dense(g, h, bind_param(g, critic, "d.fc.w", trainable), bind_param(g, critic, "d.fc.b", trainable));
}

template <typename Scalar>
Tensor<Scalar> to_gan_tensor(const std::vector<const Image*>& images, int img_size) {
  const Index n = static_cast<Index>(images.size()), plane = Index{img_size} * img_size;
  Tensor<Scalar> out({n, 3, img_size, img_size});
  for (Index i = 0; i < n; ++i) {
    const Image* src = images[static_cast<std::size_t>(i)];
    Image resized;
    if (src->height != img_size || src->width != img_size) {
      resized = preprocess::resize(*src, img_size, img_size);
      src = &resized;
    }
    for (int c = 0; c < 3; ++c)
      out.data().segment((i * 3 + c) * plane, plane) = (src->channel(c) * 2.0 - 1.0).template cast<Scalar>();
  }
  return out;
}

template <typename Scalar>
Image from_gan_tensor(const Tensor<Scalar>& batch, Index index) {
  const int s = static_cast<int>(batch.dim(2));
  const Index plane = Index{s} * s;
  Image img(s, s);
  for (int c = 0; c < 3; ++c)
    img.channel(c) = ((batch.data().segment((index * 3 + c) * plane, plane).template cast<double>() + 1.0) * 0.5)
                         .min(1.0)
                         .max(0.0);
  return quantize8(img);
}

template <typename Scalar>
GanPair<Scalar> init_gan(const GanConfig& cfg) {
  cfg.validate();
  GanPair<Scalar> pair;
  pair.cfg = cfg;
  pair.generator = build_generator<Scalar>(cfg);
  pair.critic = build_discriminator<Scalar>(cfg);
  pair.gen_state.eta = cfg.lr;
  pair.critic_state.eta = cfg.lr;
  return pair;
}

namespace {

template <typename Scalar>
Tensor<Scalar> draw_z(Index n, int z_dim, synth::Rng& rng) {
  return normal<Scalar>({n, z_dim}, 1.0, rng);
}

template <typename Scalar>
Tensor<Scalar> gather(const Tensor<Scalar>& all, const std::vector<std::size_t>& rows) {
  ad::Shape shape = all.shape();
  const Index stride = all.size() / shape[0];
  shape[0] = static_cast<Index>(rows.size());
  Tensor<Scalar> out(shape);
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.data().segment(static_cast<Index>(i) * stride, stride) =
        all.data().segment(static_cast<Index>(rows[i]) * stride, stride);
  return out;
}

}  // namespace

template <typename Scalar>
void train_more(GanPair<Scalar>& pair, const synth::Dataset& positives, int n_epochs) {
  const GanConfig& cfg = pair.cfg;
  cfg.validate();
  if (positives.empty()) throw ContractError("train_dcgan: no positive images");
  std::vector<const Image*> images;
  for (const auto& s : positives) {
    if (s.melanoma != 1) throw ContractError("train_dcgan: sample '" + s.id + "' is not melanoma-positive");
    images.push_back(&s.image);
  }
  const Tensor<Scalar> reals = to_gan_tensor<Scalar>(images, cfg.img_size);
  const std::size_t n = positives.size(), bs = std::min<std::size_t>(n, static_cast<std::size_t>(cfg.batch_size));
  const std::size_t gen_steps = (n + static_cast<std::size_t>(cfg.batch_size) - 1) / static_cast<std::size_t>(cfg.batch_size);

  for (int e = 0; e < n_epochs; ++e) {
    const int epoch = pair.epochs_done;
    synth::Rng rng = synth::sample_rng(cfg.seed, "gan/epoch/" + std::to_string(epoch));
    std::vector<std::size_t> order(n);
    std::size_t cursor = n;
    auto next_batch = [&] {
      std::vector<std::size_t> rows;
      while (rows.size() < bs) {
        if (cursor == n) {
          for (std::size_t i = 0; i < n; ++i) order[i] = i;
          std::shuffle(order.begin(), order.end(), rng);
          cursor = 0;
        }
        rows.push_back(order[cursor++]);
      }
      return gather(reals, rows);
    };
    double critic_sum = 0.0, gen_sum = 0.0;
    try {
      for (std::size_t step = 0; step < gen_steps; ++step) {
        for (int c = 0; c < cfg.critic_steps_per_gen; ++c) {
          Graph<Scalar> g;
          const Var real = g.constant(next_batch());
          const Var fake = generate(g, g.constant(draw_z<Scalar>(Index(bs), cfg.z_dim, rng)), pair.generator, cfg,
                                    BatchNormMode::train, false);
          const auto losses =
              ad::wgan_losses(g, criticize(g, real, pair.critic, cfg, true), criticize(g, fake, pair.critic, cfg, true));
          critic_sum += static_cast<double>(g.value(losses.critic).item());
          optim::rmsprop_step(pair.critic, g.backward(losses.critic), pair.critic_state);
          optim::clip_values(pair.critic, cfg.clip_c);
        }
        Graph<Scalar> g;
        const Var real = g.constant(next_batch());
        const Var fake = generate(g, g.constant(draw_z<Scalar>(Index(bs), cfg.z_dim, rng)), pair.generator, cfg,
                                  BatchNormMode::train, true);
        const auto losses =
            ad::wgan_losses(g, criticize(g, real, pair.critic, cfg, false), criticize(g, fake, pair.critic, cfg, false));
        gen_sum += static_cast<double>(g.value(losses.generator).item());
        optim::rmsprop_step(pair.generator.params, g.backward(losses.generator), pair.gen_state);
      }
    } catch (const NumericError& err) {
      throw DivergenceError("GAN training diverged at epoch " + std::to_string(epoch) + ": " + err.what());
    }
    GanEpochLog entry{epoch, critic_sum / double(gen_steps * static_cast<std::size_t>(cfg.critic_steps_per_gen)),
                      gen_sum / double(gen_steps)};
    if (!std::isfinite(entry.critic_loss) || !std::isfinite(entry.generator_loss))
      throw DivergenceError("GAN training diverged at epoch " + std::to_string(epoch) + ": non-finite loss");
    pair.log.push_back(entry);
    pair.epochs_done += 1;
  }
}

template <typename Scalar>
GanPair<Scalar> train_dcgan(const synth::Dataset& positives, const GanConfig& cfg) {
  GanPair<Scalar> pair = init_gan<Scalar>(cfg);
  train_more(pair, positives, cfg.epochs);
  return pair;
}

namespace {

template <typename Scalar>
Image sample_one(GanPair<Scalar>& pair, std::int64_t index, std::uint64_t seed) {
  synth::Rng rng = synth::sample_rng(seed, "z/" + std::to_string(index));
  Graph<Scalar> g;
  const Var img = generate(g, g.constant(draw_z<Scalar>(1, pair.cfg.z_dim, rng)), pair.generator, pair.cfg,
                           BatchNormMode::eval, false);
  return from_gan_tensor(g.value(img), 0);
}

}  // namespace

template <typename Scalar>
std::vector<Image> sample_images(GanPair<Scalar>& pair, std::int64_t first, std::int64_t n, std::uint64_t seed) {
  std::vector<Image> out;
  for (std::int64_t i = first; i < first + n; ++i) out.push_back(sample_one(pair, i, seed));
  return out;
}

Nearest nearest_train_mse(const Image& image, const std::vector<Image>& train) {
  if (train.empty()) throw ContractError("nearest_train_mse: empty training set");
  Nearest best{0, std::numeric_limits<double>::infinity()};
  for (std::size_t i = 0; i < train.size(); ++i) {
    const double m = mse(image, train[i]);
    if (m < best.mse) best = {i, m};
  }
  return best;
}

std::vector<Image> reference_set(const synth::Dataset& train, int img_size) {
  std::vector<Image> out;
  out.reserve(train.size());
  for (const auto& s : train)
    out.push_back(quantize8(s.image.height == img_size && s.image.width == img_size
                                ? s.image
                                : preprocess::resize(s.image, img_size, img_size)));
  return out;
}

double pairwise_mse_percentile(const std::vector<Image>& refs, double percentile) {
  if (refs.size() < 2) throw ContractError("pairwise MSE needs at least two reference images");
  if (!(percentile >= 0 && percentile <= 100)) throw ParameterError("percentile must lie in [0, 100]");
  std::vector<double> all;
  for (std::size_t i = 0; i < refs.size(); ++i)
    for (std::size_t j = i + 1; j < refs.size(); ++j) all.push_back(mse(refs[i], refs[j]));
  std::sort(all.begin(), all.end());
  const double pos = percentile / 100.0 * static_cast<double>(all.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, all.size() - 1);
  return all[lo] + (pos - static_cast<double>(lo)) * (all[hi] - all[lo]);
}

template <typename Scalar>
SampleReport sample_synthetic(GanPair<Scalar>& pair, std::int64_t n, const std::vector<Image>& refs, double mse_floor,
                              std::uint64_t seed, int retry_factor, int jobs) {
  if (n < 0) throw ParameterError("sample count must be >= 0");
  if (retry_factor < 1) throw ParameterError("retry_factor must be >= 1");
  SampleReport report;
  if (n == 0) return report;
  if (refs.empty()) throw ContractError("sample_synthetic: empty reference set");
  const std::int64_t budget = std::max<std::int64_t>(n, 1) * retry_factor;
  std::int64_t next = 0;
  while (static_cast<std::int64_t>(report.samples.size()) < n && next < budget) {
    const std::int64_t chunk = std::min<std::int64_t>(budget - next, std::max<std::int64_t>(8, 2 * (n - static_cast<std::int64_t>(report.samples.size()))));
    std::vector<Image> cand(static_cast<std::size_t>(chunk));
    std::vector<double> dist(static_cast<std::size_t>(chunk));
    parallel_for(static_cast<std::size_t>(chunk), jobs, [&](std::size_t i) {
      cand[i] = sample_one(pair, next + static_cast<std::int64_t>(i), seed);
      dist[i] = nearest_train_mse(cand[i], refs).mse;
    });
    for (std::int64_t i = 0; i < chunk && static_cast<std::int64_t>(report.samples.size()) < n; ++i) {
      report.attempts = next + i + 1;
      if (dist[static_cast<std::size_t>(i)] < mse_floor) continue;
      synth::LabeledSample s;
      char id[48];
      std::snprintf(id, sizeof id, "synthetic_gan/gan_%06zu.png", report.samples.size());
      s.id = id;
      s.image = std::move(cand[static_cast<std::size_t>(i)]);
      s.melanoma = 1;
      s.hair = 0;
      s.source = synth::Source::synthetic_gan;
      s.split = "train";
      report.samples.push_back(std::move(s));
    }
    next += chunk;
  }
  if (static_cast<std::int64_t>(report.samples.size()) < n) {
    report.attempts = budget;
    throw DiversityError("diversity filter accepted " + std::to_string(report.samples.size()) + " of " +
                         std::to_string(budget) + " candidates (acceptance rate " +
                         std::to_string(report.acceptance_rate()) + ") before reaching " + std::to_string(n) +
                         " at mse_floor " + std::to_string(mse_floor));
  }
  return report;
}

template <typename Scalar>
std::map<std::string, ad::TensorD> generator_tensors(const GanPair<Scalar>& pair) {
  std::map<std::string, ad::TensorD> out;
  for (const auto& [k, t] : pair.generator.params) out.emplace(k, t.template cast<double>());
  for (const auto& [k, s] : pair.generator.bn) {
    const Index c = s.running_mean.size();
    out.emplace(k + "mean", ad::TensorD({c}, s.running_mean.template cast<double>()));
    out.emplace(k + "var", ad::TensorD({c}, s.running_var.template cast<double>()));
  }
  return out;
}

template <typename Scalar>
void load_generator_tensors(GanPair<Scalar>& pair, const std::map<std::string, ad::TensorD>& tensors) {
  auto fetch = [&](const std::string& k, const ad::Shape& shape) -> const ad::TensorD& {
    const auto it = tensors.find(k);
    if (it == tensors.end()) throw CheckpointError("generator checkpoint lacks '" + k + "'");
    if (it->second.shape() != shape)
      throw CheckpointError("generator tensor '" + k + "' has shape " + ad::shape_str(it->second.shape()) +
                            ", expected " + ad::shape_str(shape));
    return it->second;
  };
  for (auto& [k, t] : pair.generator.params) t = fetch(k, t.shape()).template cast<Scalar>();
  for (auto& [k, s] : pair.generator.bn) {
    const ad::Shape shape{s.running_mean.size()};
    s.running_mean = fetch(k + "mean", shape).data().template cast<Scalar>();
    s.running_var = fetch(k + "var", shape).data().template cast<Scalar>();
  }
}

#define DERM_INSTANTIATE_GDA(S)                                                                                  \
  template std::int64_t count_params<S>(const ad::ParamSet<S>&);                                                 \
  template Generator<S> build_generator<S>(const GanConfig&);                                                    \
  template Critic<S> build_discriminator<S>(const GanConfig&);                                                   \
  template Var generate<S>(Graph<S>&, Var, Generator<S>&, const GanConfig&, BatchNormMode, bool);                \
  template Var criticize<S>(Graph<S>&, Var, const Critic<S>&, const GanConfig&, bool);                           \
  template Tensor<S> to_gan_tensor<S>(const std::vector<const Image*>&, int);                                    \
  template Image from_gan_tensor<S>(const Tensor<S>&, Index);                                                    \
  template GanPair<S> init_gan<S>(const GanConfig&);                                                             \
  template GanPair<S> train_dcgan<S>(const synth::Dataset&, const GanConfig&);                                   \
  template void train_more<S>(GanPair<S>&, const synth::Dataset&, int);                                          \
  template std::vector<Image> sample_images<S>(GanPair<S>&, std::int64_t, std::int64_t, std::uint64_t);          \
  template SampleReport sample_synthetic<S>(GanPair<S>&, std::int64_t, const std::vector<Image>&, double,        \
                                            std::uint64_t, int, int);                                            \
  template std::map<std::string, ad::TensorD> generator_tensors<S>(const GanPair<S>&);                           \
  template void load_generator_tensors<S>(GanPair<S>&, const std::map<std::string, ad::TensorD>&);

DERM_INSTANTIATE_GDA(float)
DERM_INSTANTIATE_GDA(double)

#undef DERM_INSTANTIATE_GDA

}  // namespace derm::gda
