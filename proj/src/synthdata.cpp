#include "derm/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "derm/error.hpp"
#include "derm/io.hpp"
#include "derm/parallel.hpp"

namespace derm::synth {

namespace {

constexpr double kPi = std::numbers::pi;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
double uniform(Rng& rng, const std::array<double, 2>& range) { return uniform(rng, range[0], range[1]); }
int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

void check_binary(int v, const char* what) {
  if (v != 0 && v != 1) throw ContractError(std::string(what) + " label must be 0 or 1, got " + std::to_string(v));
}

Source source_from_id(std::string_view id) {
  if (id.starts_with("synthetic_gan/")) return Source::synthetic_gan;
  if (id.starts_with("synthetic_toy/")) return Source::synthetic_toy;
  return Source::real;
}

std::string index_id(std::string_view split, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu", i);
  return "synthetic_toy/" + std::string(split) + "_" + buf + ".png";
}

}  // namespace

std::string to_string(Source s) {
  switch (s) {
    case Source::real: return "real";
    case Source::synthetic_gan: return "synthetic_gan";
    case Source::synthetic_toy: return "synthetic_toy";
  }
  return "real";
}

std::vector<int> melanoma_labels(const Dataset& d) {
  std::vector<int> out;
  out.reserve(d.size());
  for (const auto& s : d) out.push_back(s.melanoma);
  return out;
}

std::vector<int> hair_labels(const Dataset& d) {
  std::vector<int> out;
  out.reserve(d.size());
  for (const auto& s : d) out.push_back(s.hair);
  return out;
}

Rng sample_rng(std::uint64_t seed, std::string_view id) {
  const std::uint64_t h = io::fnv1a(id);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return Rng(seq);
}

double phi_coefficient(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) throw DimensionError("phi: label vectors differ in length");
  double n[2][2] = {{0, 0}, {0, 0}};
  for (std::size_t i = 0; i < a.size(); ++i) {
    check_binary(a[i], "phi");
    check_binary(b[i], "phi");
    n[a[i]][b[i]] += 1;
  }
  const double a1 = n[1][0] + n[1][1], a0 = n[0][0] + n[0][1];
  const double b1 = n[0][1] + n[1][1], b0 = n[0][0] + n[1][0];
  if (a1 == 0 || a0 == 0 || b1 == 0 || b0 == 0)
    throw DegenerateMetricError("phi: a label vector is constant");
  return (n[1][1] * n[0][0] - n[1][0] * n[0][1]) / std::sqrt(a1 * a0 * b1 * b0);
}

LesionParams sample_lesion_params(int melanoma, Rng& rng, const LesionStyle& style) {
  check_binary(melanoma, "melanoma");
  LesionParams p;
  p.melanoma = melanoma;
  p.cx = 0.5 + uniform(rng, -0.08, 0.08);
  p.cy = 0.5 + uniform(rng, -0.08, 0.08);
  p.radius = uniform(rng, 0.18, 0.28);
  p.aspect = uniform(rng, 0.75, 1.0);
  p.angle = uniform(rng, 0.0, kPi);
  p.irregularity = uniform(rng, melanoma ? style.irregularity1 : style.irregularity0);
  double total = 0.0;
  for (std::size_t k = 0; k < p.harmonic_amp.size(); ++k) {
    p.harmonic_amp[k] = uniform(rng, 0.0, 1.0) / static_cast<double>(k + 3);
    p.harmonic_phase[k] = uniform(rng, 0.0, 2 * kPi);
    total += p.harmonic_amp[k];
  }
  for (double& a : p.harmonic_amp) a /= total;
  std::normal_distribution<double> skin_jitter(0.0, 0.03);
  const std::array<double, 3> skin{0.87, 0.68, 0.58}, brown{0.50, 0.32, 0.22};
  const double darkness = uniform(rng, melanoma ? style.darkness1 : style.darkness0);
  for (int c = 0; c < 3; ++c) {
    p.skin[c] = std::clamp(skin[c] + skin_jitter(rng), 0.0, 1.0);
    p.lesion[c] = brown[c] * darkness;
    p.illuminant[c] = uniform(rng, 0.75, 1.0);
  }
  p.heterogeneity = uniform(rng, melanoma ? style.heterogeneity1 : style.heterogeneity0);
  const int n_blobs = uniform_int(rng, 3, 6);
  for (int i = 0; i < n_blobs; ++i) {
    const double t = uniform(rng, 0.0, 2 * kPi), rr = uniform(rng, 0.0, 0.7) * p.radius;
    p.blobs.push_back({p.cx + rr * std::cos(t), p.cy + rr * std::sin(t), uniform(rng, 0.04, 0.10),
                       uniform(rng, -1.0, 1.0)});
  }
  return p;
}

Image render_lesion(const LesionParams& p, int size, Rng& rng, double noise_sigma) {
  if (size < 16) throw ParameterError("lesion image size must be >= 16, got " + std::to_string(size));
  Image img(size, size);
  std::normal_distribution<double> noise(0.0, noise_sigma);
  const double s = size, r_px = p.radius * s;
  const double ca = std::cos(p.angle), sa = std::sin(p.angle);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double dx = (x + 0.5) - p.cx * s, dy = (y + 0.5) - p.cy * s;
      const double u = (ca * dx + sa * dy) / r_px, v = (-sa * dx + ca * dy) / (r_px * p.aspect);
      const double rho = std::hypot(u, v), theta = std::atan2(v, u);
      double border = 0.0;
      for (std::size_t k = 0; k < p.harmonic_amp.size(); ++k)
        border += p.harmonic_amp[k] * std::cos(static_cast<double>(k + 3) * theta + p.harmonic_phase[k]);
      const double boundary = 1.0 + p.irregularity * border;
      // Signed distance to the border in pixels, softened over ~1.5 px.
      const double dist = (rho - boundary) * r_px;
      const double alpha = std::clamp(0.5 - dist / 1.5, 0.0, 1.0);
      double shade = 1.0;
      for (const auto& b : p.blobs) {
        const double bx = (x + 0.5) / s - b.x, by = (y + 0.5) / s - b.y;
        shade += p.heterogeneity * b.gain * std::exp(-(bx * bx + by * by) / (2 * b.r * b.r));
      }
      for (int c = 0; c < 3; ++c) {
        const double lesion = std::clamp(p.lesion[c] * shade, 0.0, 1.0);
        const double v0 = (1 - alpha) * p.skin[c] + alpha * lesion + noise(rng);
        img.at(y, x, c) = std::clamp(v0 * p.illuminant[c], 0.0, 1.0);
      }
    }
  return img;
}

Image gen_lesion_image(int melanoma, int size, Rng& rng, const LesionStyle& style) {
  if (size < 16) throw ParameterError("lesion image size must be >= 16, got " + std::to_string(size));
  const LesionParams p = sample_lesion_params(melanoma, rng, style);
  return render_lesion(p, size, rng, style.noise_sigma);
}

HairResult add_hair_arcs(const Image& image, int n_arcs, Rng& rng) {
  if (n_arcs < 0) throw ParameterError("n_arcs must be >= 0, got " + std::to_string(n_arcs));
  HairResult res{image, n_arcs > 0 ? 1 : 0};
  Image& out = res.image;
  const double h = image.height, w = image.width, side = std::max(h, w);
  for (int a = 0; a < n_arcs; ++a) {
    // Anchor the arc midpoint inside the image so every arc is visible.
    const double px = uniform(rng, 0.1 * w, 0.9 * w), py = uniform(rng, 0.1 * h, 0.9 * h);
    const double radius = uniform(rng, 0.3 * side, 1.0 * side);
    const double mid = uniform(rng, 0.0, 2 * kPi);
    const double span = uniform(rng, kPi / 6, 2 * kPi / 3);
    const double width = uniform(rng, 1.0, 3.0);
    const double base = uniform(rng, 0.0, 1.0) < 0.5 ? kBlackHair : kGrayHair;
    const double shade = base + uniform(rng, -kHairShadeJitter, kHairShadeJitter);
    const double cx = px - radius * std::cos(mid), cy = py - radius * std::sin(mid);
    const double reach = radius + width;
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - reach))), y1 = std::min(image.height - 1, static_cast<int>(std::ceil(cy + reach)));
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - reach))), x1 = std::min(image.width - 1, static_cast<int>(std::ceil(cx + reach)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        const double radial = std::abs(std::hypot(dx, dy) - radius);
        double cover = std::clamp(width / 2 + 0.5 - radial, 0.0, 1.0);
        if (cover <= 0.0) continue;
        // Angular offset from the arc midpoint, wrapped to [-pi, pi].
        double off = std::remainder(std::atan2(dy, dx) - mid, 2 * kPi);
        const double excess_px = (std::abs(off) - span / 2) * radius;
        cover *= std::clamp(0.5 - excess_px, 0.0, 1.0);
        if (cover <= 0.0) continue;
        for (int c = 0; c < 3; ++c) out.at(y, x, c) = (1 - cover) * out.at(y, x, c) + cover * shade;
      }
  }
  return res;
}

namespace {

struct Plan {
  int melanoma;
  int hair;
};

std::vector<Plan> plan_split(int n, double positive_rate, double rho, double hair_rate, Rng& rng,
                             const char* split) {
  std::vector<Plan> plan;
  if (n == 0) return plan;
  const int n_pos = static_cast<int>(std::lround(positive_rate * n));
  const int n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw ConfigError(std::string(split) + " split of " + std::to_string(n) + " samples at positive_rate " +
                      std::to_string(positive_rate) + " has an empty class");
  const double p = static_cast<double>(n_pos) / n, q = hair_rate;
  // P(hair | melanoma) and P(hair | benign) that give phi = rho at marginals p, q.
  const double a = q + rho * std::sqrt(p * (1 - p) * q * (1 - q)) / p;
  const double b = (q - p * a) / (1 - p);
  constexpr double tol = 1e-12;
  if (a < -tol || a > 1 + tol || b < -tol || b > 1 + tol)
    throw ConfigError("hair/melanoma correlation " + std::to_string(rho) + " is infeasible at positive_rate " +
                      std::to_string(p) + " and hair_rate " + std::to_string(q) + " (needs P(hair|mel)=" +
                      std::to_string(a) + ", P(hair|benign)=" + std::to_string(b) + ")");
  const int h_pos = static_cast<int>(std::lround(std::clamp(a, 0.0, 1.0) * n_pos));
  const int h_neg = static_cast<int>(std::lround(std::clamp(b, 0.0, 1.0) * n_neg));
  for (int i = 0; i < n_pos; ++i) plan.push_back({1, i < h_pos ? 1 : 0});
  for (int i = 0; i < n_neg; ++i) plan.push_back({0, i < h_neg ? 1 : 0});
  std::shuffle(plan.begin(), plan.end(), rng);
  return plan;
}

Dataset render_split(const std::vector<Plan>& plan, const char* split, const ConfoundConfig& cfg, int jobs) {
  Dataset out(plan.size());
  parallel_for(plan.size(), jobs, [&](std::size_t i) {
    LabeledSample& s = out[i];
    s.id = index_id(split, i);
    s.split = split;
    s.source = Source::synthetic_toy;
    s.melanoma = plan[i].melanoma;
    Rng rng = sample_rng(cfg.seed, s.id);
    Image img = gen_lesion_image(s.melanoma, cfg.image_size, rng, cfg.style);
    const int arcs = plan[i].hair ? uniform_int(rng, 1, cfg.max_arcs) : 0;
    HairResult hr = add_hair_arcs(img, arcs, rng);
    s.hair = hr.hair;
    s.image = quantize8(hr.image);
  });
  return out;
}

}  // namespace

SplitData build_confounded_dataset(const ConfoundConfig& cfg, int jobs) {
  if (cfg.n_train < 0 || cfg.n_test < 0) throw ConfigError("sample counts must be non-negative");
  if (!(cfg.positive_rate > 0 && cfg.positive_rate < 1)) throw ConfigError("positive_rate must lie in (0, 1)");
  const double test_rate = cfg.test_positive_rate < 0 ? cfg.positive_rate : cfg.test_positive_rate;
  if (!(test_rate > 0 && test_rate < 1)) throw ConfigError("test_positive_rate must lie in (0, 1)");
  if (!(cfg.hair_rate > 0 && cfg.hair_rate < 1)) throw ConfigError("hair_rate must lie in (0, 1)");
  const double rho = cfg.train_hair_label_correlation;
  if (!(rho >= -1 && rho <= 1)) throw ConfigError("train correlation must lie in [-1, 1]");
  if (cfg.image_size < 16) throw ConfigError("image_size must be >= 16");
  if (cfg.max_arcs < 1) throw ConfigError("max_arcs must be >= 1");
  Rng assign = sample_rng(cfg.seed, "assign");
  const auto train_plan = plan_split(cfg.n_train, cfg.positive_rate, rho, cfg.hair_rate, assign, "train");
  const auto test_plan = plan_split(cfg.n_test, test_rate, 0.0, cfg.hair_rate, assign, "test");
  return {render_split(train_plan, "train", cfg, jobs), render_split(test_plan, "test", cfg, jobs)};
}

Dataset enlarge_with_hair(const Dataset& d, int factor, int max_arcs, std::uint64_t seed) {
  if (factor < 1) throw ConfigError("enlargement factor must be >= 1");
  if (max_arcs < 1) throw ConfigError("max_arcs must be >= 1");
  Dataset out = d;
  for (int f = 1; f < factor; ++f)
    for (const LabeledSample& s : d) {
      LabeledSample copy = s;
      const std::string stem = s.id.ends_with(".png") ? s.id.substr(0, s.id.size() - 4) : s.id;
      copy.id = stem + "_aug" + std::to_string(f) + ".png";
      Rng rng = sample_rng(seed, copy.id);
      HairResult hr = add_hair_arcs(s.image, uniform_int(rng, 1, max_arcs), rng);
      copy.image = quantize8(hr.image);
      copy.hair = 1;
      out.push_back(std::move(copy));
    }
  return out;
}

std::vector<Fold> stratified_kfold(const std::vector<int>& labels, int k, std::uint64_t seed) {
  if (k < 2) throw ParameterError("k-fold needs k >= 2, got " + std::to_string(k));
  std::vector<std::size_t> members[2];
  for (std::size_t i = 0; i < labels.size(); ++i) {
    check_binary(labels[i], "stratification");
    members[labels[i]].push_back(i);
  }
  for (int c = 0; c < 2; ++c)
    if (members[c].size() < static_cast<std::size_t>(k))
      throw StratificationError("class " + std::to_string(c) + " has " + std::to_string(members[c].size()) +
                                " members, fewer than k = " + std::to_string(k));
  Rng rng = sample_rng(seed, "kfold");
  std::vector<Fold> folds(static_cast<std::size_t>(k));
  std::size_t slot = 0;
  // Positives first, negatives continue the deal so fold sizes stay within one.
  for (int c : {1, 0}) {
    std::shuffle(members[c].begin(), members[c].end(), rng);
    for (std::size_t i : members[c]) folds[slot++ % folds.size()].val_idx.push_back(i);
  }
  std::vector<int> fold_of(labels.size());
  for (std::size_t f = 0; f < folds.size(); ++f) {
    std::sort(folds[f].val_idx.begin(), folds[f].val_idx.end());
    for (std::size_t i : folds[f].val_idx) fold_of[i] = static_cast<int>(f);
  }
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (std::size_t f = 0; f < folds.size(); ++f)
      if (fold_of[i] != static_cast<int>(f)) folds[f].train_idx.push_back(i);
  return folds;
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  fields.push_back(cur);
  return fields;
}

void check_id(const LabeledSample& s) {
  const std::string& id = s.id;
  if (id.empty()) throw ContractError("sample id is empty");
  if (id.find_first_of(",\"\n\r") != std::string::npos)
    throw ContractError("sample id '" + id + "' contains a character the manifest cannot hold");
  const std::filesystem::path p(id);
  if (p.is_absolute() || id.find("..") != std::string::npos)
    throw ContractError("sample id '" + id + "' must be a relative path inside the dataset root");
  if (source_from_id(id) != s.source)
    throw ContractError("sample id '" + id + "' does not encode its source " + to_string(s.source));
  if (s.split.empty() || s.split.find_first_of(",\"\n\r") != std::string::npos)
    throw ContractError("sample '" + id + "' has an unwritable split '" + s.split + "'");
  check_binary(s.melanoma, "melanoma");
  check_binary(s.hair, "hair");
}

}  // namespace

std::string manifest_csv(const Dataset& d) {
  std::unordered_set<std::string> seen;
  std::string out(kManifestHeader);
  out += '\n';
  for (const LabeledSample& s : d) {
    check_id(s);
    if (!seen.insert(s.id).second) throw ContractError("duplicate sample id '" + s.id + "'");
    out += s.id + ',' + std::to_string(s.melanoma) + ',' + std::to_string(s.hair) + ',' + s.split + '\n';
  }
  return out;
}

void save_manifest(const Dataset& d, const std::filesystem::path& path) {
  const std::string text = manifest_csv(d);
  const std::filesystem::path root = path.parent_path();
  for (const LabeledSample& s : d) write_png(s.image, root / s.id);
  io::write_file_atomic(path, text);
}

Dataset load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError(path.string() + ": cannot open manifest");
  const std::filesystem::path root = path.parent_path();
  auto fail = [&](std::size_t line, const std::string& msg) -> IngestionError {
    return IngestionError(path.string() + ":" + std::to_string(line) + ": " + msg);
  };
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw fail(1, "missing header, expected '" + std::string(kManifestHeader) + "'");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kManifestHeader)
    throw fail(1, "header is '" + line + "', expected '" + std::string(kManifestHeader) + "'");
  Dataset d;
  std::unordered_set<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      if (in.peek() == std::char_traits<char>::eof()) break;
      throw fail(line_no, "empty row");
    }
    const auto f = split_fields(line);
    if (f.size() != 4) throw fail(line_no, "expected 4 fields, found " + std::to_string(f.size()));
    LabeledSample s;
    s.id = f[0];
    if (s.id.empty()) throw fail(line_no, "empty path");
    if (!seen.insert(s.id).second) throw fail(line_no, "duplicate path '" + s.id + "'");
    auto parse_label = [&](const std::string& v, const char* name) {
      if (v != "0" && v != "1") throw fail(line_no, std::string(name) + " label '" + v + "' is not 0 or 1");
      return v == "1" ? 1 : 0;
    };
    s.melanoma = parse_label(f[1], "melanoma");
    s.hair = parse_label(f[2], "hair");
    s.split = f[3];
    if (s.split.empty()) throw fail(line_no, "empty split");
    s.source = source_from_id(s.id);
    const std::filesystem::path img = root / s.id;
    if (!std::filesystem::is_regular_file(img)) throw fail(line_no, "image file not found: " + img.string());
    try {
      s.image = read_png(img);
    } catch (const Error& e) {
      throw fail(line_no, e.what());
    }
    d.push_back(std::move(s));
  }
  return d;
}

}  // namespace derm::synth
