#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "derm/gda.hpp"

using namespace derm;
using namespace derm::gda;
using ad::Graph;
using ad::Var;

namespace {

GanConfig tiny_gan(std::uint64_t seed = 1) {
  GanConfig cfg;
  cfg.z_dim = 8;
  cfg.img_size = 8;
  cfg.gen_base = 4;
  cfg.critic_base = 4;
  cfg.critic_steps_per_gen = 2;
  cfg.batch_size = 4;
  cfg.epochs = 2;
  cfg.seed = seed;
  return cfg;
}

Image flat(int size, double r, double g, double b) {
  Image img(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      img.at(y, x, 0) = r;
      img.at(y, x, 1) = g;
      img.at(y, x, 2) = b;
    }
  return img;
}

synth::Dataset positives(std::size_t n, int size, std::uint64_t seed) {
  synth::Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    synth::Rng rng = synth::sample_rng(seed, "pos/" + std::to_string(i));
    synth::LabeledSample s;
    s.image = quantize8(synth::gen_lesion_image(1, std::max(size, 16), rng));
    s.melanoma = 1;
    s.id = "synthetic_toy/pos_" + std::to_string(i) + ".png";
    s.source = synth::Source::synthetic_toy;
    d.push_back(std::move(s));
  }
  return d;
}

std::array<double, 3> channel_means(const std::vector<Image>& images) {
  std::array<double, 3> m{0, 0, 0};
  for (const auto& img : images)
    for (int c = 0; c < 3; ++c) m[c] += img.channel(c).mean() / static_cast<double>(images.size());
  return m;
}

}  // namespace

TEST_CASE("gan config validation") {
  CHECK_NOTHROW(GanConfig{}.validate());
  CHECK(GanConfig{}.stages() == 3);
  GanConfig c = tiny_gan();
  CHECK(c.stages() == 1);
  c.img_size = 24;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_gan();
  c.img_size = 4;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_gan();
  c.clip_c = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_gan();
  c.critic_steps_per_gen = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("parameter counts match the closed form") {
  GanConfig cfg;  // z 64, 32px, widths 64/32/16 and 16/32/64
  const std::int64_t gen = (64 * 1024 + 1024 + 128) + (16 * 64 * 32 + 64) + (16 * 32 * 16 + 32) + (16 * 3 * 16 + 3);
  const std::int64_t critic = (16 * 16 * 3 + 16) + (16 * 32 * 16 + 32) + (16 * 64 * 32 + 64) + (16 * 64 + 1);
  CHECK(generator_param_count(cfg) == gen);
  CHECK(critic_param_count(cfg) == critic);
  CHECK(count_params(build_generator<float>(cfg).params) == gen);
  CHECK(count_params(build_discriminator<float>(cfg)) == critic);
  const GanConfig t = tiny_gan();
  CHECK(count_params(build_generator<double>(t).params) == generator_param_count(t));
  CHECK(count_params(build_discriminator<double>(t)) == critic_param_count(t));
}

TEST_CASE("generator and critic shapes") {
  for (int size : {8, 16, 32}) {
    GanConfig cfg = tiny_gan();
    cfg.img_size = size;
    auto gen = build_generator<double>(cfg);
    auto critic = build_discriminator<double>(cfg);
    Graph<double> g;
    synth::Rng rng(5);
    ad::TensorD z({3, cfg.z_dim});
    std::normal_distribution<double> nd;
    for (ad::Index i = 0; i < z.size(); ++i) z[i] = nd(rng);
    const Var img = generate(g, g.constant(z), gen, cfg, ad::BatchNormMode::train, true);
    CHECK(g.value(img).shape() == ad::Shape{3, 3, size, size});
    CHECK(g.value(img).data().abs().maxCoeff() <= 1.0);
    const Var score = criticize(g, img, critic, cfg, true);
    CHECK(g.value(score).shape() == ad::Shape{3, 1});
  }
}

TEST_CASE("gan tensor mapping") {
  const Image img = flat(8, 0.0, 0.5, 1.0);
  const auto t = to_gan_tensor<double>({&img}, 8);
  CHECK(t.shape() == ad::Shape{1, 3, 8, 8});
  CHECK(t[0] == -1.0);
  CHECK(t[64] == 0.0);
  CHECK(t[128] == 1.0);
  CHECK(from_gan_tensor(t, 0) == quantize8(img));
  const Image big = flat(16, 0.2, 0.4, 0.6);
  const auto down = to_gan_tensor<float>({&big}, 8);
  CHECK(down.shape() == ad::Shape{1, 3, 8, 8});
  CHECK(from_gan_tensor(down, 0) == quantize8(flat(8, 0.2, 0.4, 0.6)));
}

TEST_CASE("training is deterministic and keeps critic weights clipped") {
  const auto data = positives(6, 8, 2);
  const auto a = train_dcgan<float>(data, tiny_gan());
  const auto b = train_dcgan<float>(data, tiny_gan());
  REQUIRE(a.log.size() == 2);
  CHECK(a.log == b.log);
  for (const auto& [k, t] : a.generator.params)
    CHECK(std::memcmp(t.raw(), b.generator.params.at(k).raw(), sizeof(float) * std::size_t(t.size())) == 0);
  for (const auto& [k, t] : a.critic) CHECK(t.data().abs().maxCoeff() <= 0.01f);
  for (const auto& e : a.log) {
    CHECK(std::isfinite(e.critic_loss));
    CHECK(std::isfinite(e.generator_loss));
  }
}

TEST_CASE("continuing training matches one long run") {
  const auto data = positives(5, 8, 3);
  GanConfig cfg = tiny_gan();
  cfg.epochs = 3;
  const auto whole = train_dcgan<double>(data, cfg);
  auto pieces = init_gan<double>(cfg);
  train_more(pieces, data, 1);
  train_more(pieces, data, 2);
  CHECK(pieces.log == whole.log);
  CHECK(pieces.epochs_done == 3);
}

TEST_CASE("training rejects bad inputs") {
  CHECK_THROWS_AS(train_dcgan<float>({}, tiny_gan()), ContractError);
  auto data = positives(2, 8, 1);
  data[1].melanoma = 0;
  CHECK_THROWS_AS(train_dcgan<float>(data, tiny_gan()), ContractError);
  data = positives(2, 8, 1);
  data[0].image.data[0] = std::nan("");
  try {
    train_dcgan<float>(data, tiny_gan());
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(std::string(e.what()).find("epoch 0") != std::string::npos);
  }
}

TEST_CASE("samples drift towards the training colour") {
  // Flat images of one colour: the sample channel means move towards it.
  synth::Dataset data;
  for (int i = 0; i < 16; ++i) {
    synth::LabeledSample s;
    s.image = flat(8, 0.85, 0.35, 0.25);
    s.melanoma = 1;
    s.id = "p" + std::to_string(i);
    data.push_back(s);
  }
  const std::array<double, 3> target{0.85, 0.35, 0.25};
  int improved = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    GanConfig cfg = tiny_gan(seed);
    cfg.lr = 5e-3;
    cfg.epochs = 40;
    auto pair = init_gan<float>(cfg);
    auto err = [&](GanPair<float>& p) {
      const auto m = channel_means(sample_images(p, 0, 16, 9));
      double e = 0;
      for (int c = 0; c < 3; ++c) e += std::abs(m[c] - target[c]);
      return e;
    };
    const double before = err(pair);
    train_more(pair, data, cfg.epochs);
    const double after = err(pair);
    improved += after < 0.5 * before;
  }
  CHECK(improved >= 4);
}

TEST_CASE("nearest_train_mse examples") {
  const std::vector<Image> refs{flat(4, 0, 0, 0), flat(4, 1, 1, 1)};
  const Nearest lo = nearest_train_mse(flat(4, 0.25, 0.25, 0.25), refs);
  CHECK(lo.index == 0);
  CHECK(lo.mse == doctest::Approx(0.0625).epsilon(1e-15));
  const Nearest hi = nearest_train_mse(flat(4, 0.75, 0.75, 0.75), refs);
  CHECK(hi.index == 1);
  CHECK(hi.mse == doctest::Approx(0.0625).epsilon(1e-15));
  CHECK(nearest_train_mse(refs[1], refs).mse == 0.0);
  CHECK_THROWS_AS(nearest_train_mse(refs[0], {}), ContractError);
  CHECK_THROWS_AS(nearest_train_mse(flat(5, 0, 0, 0), refs), DimensionError);
}

TEST_CASE("pairwise percentile") {
  const std::vector<Image> refs{flat(2, 0, 0, 0), flat(2, 0.5, 0.5, 0.5), flat(2, 1, 1, 1)};
  // Pairwise MSEs: 0.25, 0.25, 1.
  CHECK(pairwise_mse_percentile(refs, 0) == 0.25);
  CHECK(pairwise_mse_percentile(refs, 100) == 1.0);
  CHECK(pairwise_mse_percentile(refs, 75) == doctest::Approx(0.625));
  CHECK_THROWS_AS(pairwise_mse_percentile({refs[0]}, 1), ContractError);
  CHECK_THROWS_AS(pairwise_mse_percentile(refs, 101), ParameterError);
}

TEST_CASE("diversity filter") {
  const auto data = positives(6, 8, 4);
  auto pair = train_dcgan<float>(data, tiny_gan());
  const auto refs = reference_set(data, 8);

  SUBCASE("zero samples") {
    const auto r = sample_synthetic(pair, 0, refs, 0.01, 1);
    CHECK(r.samples.empty());
    CHECK(r.attempts == 0);
  }
  SUBCASE("floor zero accepts every candidate") {
    const auto r = sample_synthetic(pair, 5, refs, 0.0, 1);
    REQUIRE(r.samples.size() == 5);
    CHECK(r.attempts == 5);
    CHECK(r.acceptance_rate() == 1.0);
    const auto direct = sample_images(pair, 0, 5, 1);
    for (std::size_t i = 0; i < 5; ++i) {
      const auto& s = r.samples[i];
      CHECK(s.image == direct[i]);
      CHECK(s.melanoma == 1);
      CHECK(s.hair == 0);
      CHECK(s.source == synth::Source::synthetic_gan);
      CHECK(s.id == "synthetic_gan/gan_00000" + std::to_string(i) + ".png");
    }
  }
  SUBCASE("survivors clear the floor") {
    const auto all = sample_images(pair, 0, 40, 2);
    std::vector<double> d;
    for (const auto& img : all) d.push_back(nearest_train_mse(img, refs).mse);
    std::vector<double> sorted = d;
    std::sort(sorted.begin(), sorted.end());
    const double floor = sorted[20];
    const auto r = sample_synthetic(pair, 10, refs, floor, 2, 4);
    REQUIRE(r.samples.size() == 10);
    std::size_t next = 0;
    for (std::int64_t i = 0; i < r.attempts; ++i)
      if (d[std::size_t(i)] >= floor) CHECK(r.samples[next++].image == all[std::size_t(i)]);
    CHECK(next == 10);
    for (const auto& s : r.samples) CHECK(nearest_train_mse(s.image, refs).mse >= floor);
  }
  SUBCASE("candidates identical to the references are rejected") {
    const auto copies = sample_images(pair, 0, 3, 5);
    try {
      sample_synthetic(pair, 3, copies, 1e-12, 5, 1);
      FAIL("expected DiversityError");
    } catch (const DiversityError& e) {
      CHECK(std::string(e.what()).find("acceptance rate") != std::string::npos);
    }
  }
  SUBCASE("an unreachable floor raises DiversityError") {
    CHECK_THROWS_AS(sample_synthetic(pair, 2, refs, 10.0, 1, 3), DiversityError);
  }
  SUBCASE("output does not depend on jobs") {
    const double floor = pairwise_mse_percentile(refs, 1);
    const auto one = sample_synthetic(pair, 6, refs, floor * 0.1, 3, 20, 1);
    const auto three = sample_synthetic(pair, 6, refs, floor * 0.1, 3, 20, 3);
    CHECK(one.attempts == three.attempts);
    for (std::size_t i = 0; i < one.samples.size(); ++i) CHECK(one.samples[i].image == three.samples[i].image);
  }
}

TEST_CASE("generator tensors round trip") {
  const auto data = positives(4, 8, 6);
  auto trained = train_dcgan<float>(data, tiny_gan());
  auto fresh = init_gan<float>(tiny_gan(9));
  load_generator_tensors(fresh, generator_tensors(trained));
  CHECK(sample_images(fresh, 0, 4, 3) == sample_images(trained, 0, 4, 3));
  auto tensors = generator_tensors(trained);
  tensors.erase("g.out.b");
  CHECK_THROWS_AS(load_generator_tensors(fresh, tensors), CheckpointError);
}
