#include "derm/model.hpp"

#include <cmath>
#include <numeric>
#include <random>

#include "derm/error.hpp"

namespace derm::model {

using ad::Graph;
using ad::Index;
using ad::Tensor;
using ad::Var;

void BackboneConfig::validate() const {
  auto bad = [](const std::string& msg) { return ConfigError("backbone: " + msg); };
  if (input_size < 8) throw bad("input_size must be >= 8");
  if (blocks.empty()) throw bad("at least one conv block is required");
  if (kernel < 1 || kernel % 2 == 0) throw bad("kernel must be odd and positive");
  Index extent = input_size;
  for (const auto& b : blocks) {
    if (b.channels < 1 || b.stride < 1) throw bad("block channels and stride must be positive");
    try {
      extent = ad::conv_output_extent(extent, kernel, b.stride, kernel / 2);
    } catch (const DimensionError& e) {
      throw bad(std::string("conv stack does not fit the input: ") + e.what());
    }
  }
  if (feature_dim < 2) throw bad("feature_dim must be >= 2");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw bad("lambda must be finite and >= 0");
  if (epochs < 0) throw bad("epochs must be >= 0");
  if (batch_size < 1) throw bad("batch_size must be >= 1");
  if (!(eta > 0.0)) throw bad("eta must be > 0");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw bad("betas must lie in [0, 1)");
  if (!(epsilon > 0)) throw bad("epsilon must be > 0");
}

namespace {

template <typename Scalar>
Tensor<Scalar> normal_tensor(ad::Shape shape, double stddev, synth::Rng& rng) {
  Tensor<Scalar> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(dist(rng));
  return t;
}

std::string conv_name(std::size_t i, const char* what) { return "f.conv" + std::to_string(i) + "." + what; }

template <typename Scalar>
Var gather_rows(Graph<Scalar>& g, const Tensor<Scalar>& all, const std::vector<std::size_t>& rows) {
  ad::Shape shape = all.shape();
  const Index stride = all.size() / shape[0];
  shape[0] = static_cast<Index>(rows.size());
  Tensor<Scalar> out(shape);
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.data().segment(static_cast<Index>(i) * stride, stride) =
        all.data().segment(static_cast<Index>(rows[i]) * stride, stride);
  return g.constant(std::move(out));
}

}  // namespace

template <typename Scalar>
optim::ParamGroups<Scalar> init_params(const BackboneConfig& cfg) {
  cfg.validate();
  optim::ParamGroups<Scalar> p;
  synth::Rng rng = synth::sample_rng(cfg.seed, "init/backbone");
  Index in = 3;
  for (std::size_t i = 0; i < cfg.blocks.size(); ++i) {
    const Index out = cfg.blocks[i].channels, k = cfg.kernel;
    p.theta_f[conv_name(i, "w")] = normal_tensor<Scalar>({out, in, k, k}, std::sqrt(2.0 / double(in * k * k)), rng);
    p.theta_f[conv_name(i, "b")] = Tensor<Scalar>({out});
    in = out;
  }
  const Index fd = cfg.feature_dim;
  p.theta_f["f.fc.w"] = normal_tensor<Scalar>({fd, in}, std::sqrt(2.0 / double(in)), rng);
  p.theta_f["f.fc.b"] = Tensor<Scalar>({fd});
  p.theta_m["m.w"] = normal_tensor<Scalar>({2, fd}, std::sqrt(1.0 / double(fd)), rng);
  p.theta_m["m.b"] = Tensor<Scalar>({2});
  // The hair head starts at zero, so the reversed gradient reaching the
  // extractor is zero until the head has learned a hair direction.
  p.theta_h["h.w"] = Tensor<Scalar>({2, fd});
  p.theta_h["h.b"] = Tensor<Scalar>({2});
  p.configure(cfg.eta, cfg.beta1, cfg.beta2, cfg.epsilon);
  return p;
}

template <typename Scalar>
optim::ParamGroups<Scalar> groups_from(const ad::ParamSet<Scalar>& merged, const BackboneConfig& cfg) {
  optim::ParamGroups<Scalar> p;
  for (const auto& [name, t] : merged) {
    if (name.starts_with("f.")) p.theta_f[name] = t;
    else if (name.starts_with("m.")) p.theta_m[name] = t;
    else if (name.starts_with("h.")) p.theta_h[name] = t;
    else throw WiringError("parameter '" + name + "' belongs to no group");
  }
  p.configure(cfg.eta, cfg.beta1, cfg.beta2, cfg.epsilon);
  return p;
}

template <typename Scalar>
Bound bind_params(Graph<Scalar>& g, const ad::ParamSet<Scalar>& params) {
  Bound b;
  for (const auto& [name, t] : params) b[name] = g.param(name, t);
  return b;
}

template <typename Scalar>
Tensor<Scalar> to_batch(const std::vector<const Image*>& images, int input_size) {
  const Index n = static_cast<Index>(images.size()), s = input_size, plane = s * s;
  Tensor<Scalar> out({n, 3, s, s});
  for (Index i = 0; i < n; ++i) {
    const Image& img = *images[static_cast<std::size_t>(i)];
    if (img.height != input_size || img.width != input_size)
      throw DimensionError("model input is " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                           ", configured input_size is " + std::to_string(input_size));
    for (int c = 0; c < 3; ++c)
      out.data().segment((i * 3 + c) * plane, plane) = (img.channel(c) - 0.5).template cast<Scalar>();
  }
  return out;
}

namespace {

Var lookup(const Bound& p, const std::string& name) {
  const auto it = p.find(name);
  if (it == p.end()) throw WiringError("parameter '" + name + "' is not bound to the graph");
  return it->second;
}

}  // namespace

template <typename Scalar>
Var forward_features(Graph<Scalar>& g, Var x, const Bound& p, const BackboneConfig& cfg) {
  const auto& shape = g.value(x).shape();
  if (shape.size() != 4 || shape[1] != 3 || shape[2] != cfg.input_size || shape[3] != cfg.input_size)
    throw DimensionError("forward_features: input " + ad::shape_str(shape) + " does not match input_size " +
                         std::to_string(cfg.input_size));
  Var h = x;
  for (std::size_t i = 0; i < cfg.blocks.size(); ++i) {
    h = ad::conv2d(g, h, lookup(p, conv_name(i, "w")), cfg.blocks[i].stride, cfg.kernel / 2);
    h = ad::add_channel_bias(g, h, lookup(p, conv_name(i, "b")));
    h = ad::activation(g, h, ad::Activation::relu());
  }
  h = ad::global_avg_pool(g, h);
  const auto act = cfg.feature_activation == BackboneConfig::FeatureActivation::tanh ? ad::Activation::tanh()
                                                                                     : ad::Activation::relu();
  return ad::activation(g, ad::dense(g, h, lookup(p, "f.fc.w"), lookup(p, "f.fc.b")), act);
}

template <typename Scalar>
Var melanoma_head(Graph<Scalar>& g, Var features, const Bound& p) {
  return ad::softmax(g, ad::dense(g, features, lookup(p, "m.w"), lookup(p, "m.b")));
}

template <typename Scalar>
Var hair_head(Graph<Scalar>& g, Var features, const Bound& p, double lambda) {
  const Var reversed = ad::grad_reverse(g, features, lambda);
  return ad::softmax(g, ad::dense(g, reversed, lookup(p, "h.w"), lookup(p, "h.b")));
}

template <typename Scalar>
Tensor<Scalar> one_hot(const std::vector<int>& labels) {
  Tensor<Scalar> t({static_cast<Index>(labels.size()), 2});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw ContractError("one_hot: label is not binary");
    t[static_cast<Index>(2 * i + static_cast<std::size_t>(labels[i]))] = Scalar(1);
  }
  return t;
}

template <typename Scalar>
void train_epochs(optim::ParamGroups<Scalar>& groups, const synth::Dataset& data, const BackboneConfig& cfg,
                  int first_epoch, int n_epochs, std::vector<EpochLog>* log) {
  cfg.validate();
  if (data.empty()) throw ContractError("train: empty dataset");
  std::vector<const Image*> images;
  for (const auto& s : data) images.push_back(&s.image);
  const Tensor<Scalar> all = to_batch<Scalar>(images, cfg.input_size);
  const std::size_t n = data.size(), bs = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = first_epoch; epoch < first_epoch + n_epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    synth::Rng rng = synth::sample_rng(cfg.seed, "shuffle/" + std::to_string(epoch));
    std::shuffle(order.begin(), order.end(), rng);
    double sum_m = 0.0, sum_h = 0.0;
    std::size_t count_h = 0;
    for (std::size_t start = 0, batch = 0; start < n; start += bs, ++batch) {
      const std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                          order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + bs)));
      std::vector<int> y, yh;
      std::vector<Index> hair_rows;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& s = data[rows[i]];
        y.push_back(s.melanoma);
        if (s.source != synth::Source::synthetic_gan) {
          hair_rows.push_back(static_cast<Index>(i));
          yh.push_back(s.hair);
        }
      }
      try {
        Graph<Scalar> g;
        Bound p = bind_params(g, groups.theta_f);
        for (const auto& [k, v] : bind_params(g, groups.theta_m)) p[k] = v;
        const bool with_hair = cfg.hair_branch && !hair_rows.empty();
        if (with_hair)
          for (const auto& [k, v] : bind_params(g, groups.theta_h)) p[k] = v;
        const Var feats = forward_features(g, gather_rows(g, all, rows), p, cfg);
        const Var loss_m = ad::cross_entropy(g, melanoma_head(g, feats, p), one_hot<Scalar>(y));
        Var total = loss_m;
        double lh = 0.0;
        if (with_hair) {
          const Var hf = hair_rows.size() == rows.size() ? feats : ad::select_rows(g, feats, hair_rows);
          const Var loss_h = ad::cross_entropy(g, hair_head(g, hf, p, cfg.lambda), one_hot<Scalar>(yh));
          total = ad::add(g, loss_m, loss_h);
          lh = static_cast<double>(g.value(loss_h).item());
        }
        const double lm = static_cast<double>(g.value(loss_m).item());
        if (!std::isfinite(lm) || !std::isfinite(lh)) throw NumericError("non-finite loss");
        ad::GradMap<Scalar> grads = g.backward(total), grads_h;
        for (auto it = grads.begin(); it != grads.end();) {
          if (it->first.starts_with("h.")) {
            grads_h.insert(grads.extract(it++));
          } else {
            ++it;
          }
        }
        optim::joint_step(groups, grads, grads_h, cfg.lambda);
        sum_m += lm * static_cast<double>(rows.size());
        if (with_hair) {
          sum_h += lh * static_cast<double>(hair_rows.size());
          count_h += hair_rows.size();
        }
      } catch (const NumericError& e) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + " batch " +
                              std::to_string(batch) + ": " + e.what());
      }
    }
    if (log) {
      EpochLog entry;
      entry.epoch = epoch;
      entry.melanoma_loss = sum_m / static_cast<double>(n);
      entry.hair_loss = count_h ? sum_h / static_cast<double>(count_h) : 0.0;
      entry.total_loss = entry.melanoma_loss + cfg.lambda * entry.hair_loss;
      log->push_back(entry);
    }
  }
}

template <typename Scalar>
TrainResult<Scalar> train(const synth::Dataset& data, const BackboneConfig& cfg) {
  TrainResult<Scalar> r{init_params<Scalar>(cfg), {}};
  train_epochs(r.groups, data, cfg, 0, cfg.epochs, &r.log);
  return r;
}

template <typename Scalar>
std::vector<double> predict_proba(const std::vector<const Image*>& images, const ad::ParamSet<Scalar>& params,
                                  const BackboneConfig& cfg) {
  cfg.validate();
  ad::ParamSet<Scalar> used;
  for (const auto& [k, v] : params)
    if (!k.starts_with("h.")) used.emplace(k, v);
  std::vector<double> out;
  out.reserve(images.size());
  for (const Image* img : images) {
    Graph<Scalar> g;
    const Bound p = bind_params(g, used);
    const Var probs = melanoma_head(g, forward_features(g, g.constant(to_batch<Scalar>({img}, cfg.input_size)), p, cfg), p);
    out.push_back(static_cast<double>(g.value(probs)[1]));
  }
  return out;
}

template <typename Scalar>
std::vector<double> predict_proba(const synth::Dataset& data, const ad::ParamSet<Scalar>& params,
                                  const BackboneConfig& cfg) {
  std::vector<const Image*> images;
  for (const auto& s : data) images.push_back(&s.image);
  return predict_proba(images, params, cfg);
}

#define DERM_INSTANTIATE_MODEL(S)                                                                          \
  template optim::ParamGroups<S> init_params<S>(const BackboneConfig&);                                    \
  template optim::ParamGroups<S> groups_from<S>(const ad::ParamSet<S>&, const BackboneConfig&);            \
  template Bound bind_params<S>(Graph<S>&, const ad::ParamSet<S>&);                                               \
  template Tensor<S> to_batch<S>(const std::vector<const Image*>&, int);                                   \
  template Var forward_features<S>(Graph<S>&, Var, const Bound&, const BackboneConfig&);                   \
  template Var melanoma_head<S>(Graph<S>&, Var, const Bound&);                                             \
  template Var hair_head<S>(Graph<S>&, Var, const Bound&, double);                                         \
  template Tensor<S> one_hot<S>(const std::vector<int>&);                                                  \
  template void train_epochs<S>(optim::ParamGroups<S>&, const synth::Dataset&, const BackboneConfig&, int, \
                                int, std::vector<EpochLog>*);                                              \
  template TrainResult<S> train<S>(const synth::Dataset&, const BackboneConfig&);                          \
  template std::vector<double> predict_proba<S>(const std::vector<const Image*>&, const ad::ParamSet<S>&,  \
                                                const BackboneConfig&);                                    \
  template std::vector<double> predict_proba<S>(const synth::Dataset&, const ad::ParamSet<S>&,             \
                                                const BackboneConfig&);

DERM_INSTANTIATE_MODEL(float)
DERM_INSTANTIATE_MODEL(double)

#undef DERM_INSTANTIATE_MODEL

}  // namespace derm::model
