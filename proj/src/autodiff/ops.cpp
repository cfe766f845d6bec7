#include "derm/autodiff/ops.hpp"

#include <cmath>
#include <string>

namespace derm::ad {

namespace {

template <typename Scalar>
using MapM = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using CMapM = Eigen::Map<const RowMatrix<Scalar>>;

struct ConvGeometry {
  Index channels, height, width;   // image side
  Index kh, kw;
  int stride, padding;
  Index out_h, out_w;              // column side
  Index rows() const { return channels * kh * kw; }
  Index cols() const { return out_h * out_w; }
};

// Unfolds an image [C, H, W] into a [C*kh*kw, out_h*out_w] patch matrix.
template <typename Scalar>
void im2col(const Scalar* image, Scalar* cols, const ConvGeometry& g) {
  const Index n_cols = g.cols();
  for (Index c = 0; c < g.channels; ++c)
    for (Index r = 0; r < g.kh; ++r)
      for (Index s = 0; s < g.kw; ++s) {
        Scalar* row = cols + ((c * g.kh + r) * g.kw + s) * n_cols;
        for (Index oh = 0; oh < g.out_h; ++oh) {
          const Index ih = oh * g.stride - g.padding + r;
          Scalar* out = row + oh * g.out_w;
          if (ih < 0 || ih >= g.height) {
            std::fill(out, out + g.out_w, Scalar(0));
            continue;
          }
          const Scalar* in = image + (c * g.height + ih) * g.width;
          for (Index ow = 0; ow < g.out_w; ++ow) {
            const Index iw = ow * g.stride - g.padding + s;
            out[ow] = (iw >= 0 && iw < g.width) ? in[iw] : Scalar(0);
          }
        }
      }
}

// Adjoint of im2col: scatters a patch matrix back into an image, adding.
template <typename Scalar>
void col2im(const Scalar* cols, Scalar* image, const ConvGeometry& g) {
  const Index n_cols = g.cols();
  for (Index c = 0; c < g.channels; ++c)
    for (Index r = 0; r < g.kh; ++r)
      for (Index s = 0; s < g.kw; ++s) {
        const Scalar* row = cols + ((c * g.kh + r) * g.kw + s) * n_cols;
        for (Index oh = 0; oh < g.out_h; ++oh) {
          const Index ih = oh * g.stride - g.padding + r;
          if (ih < 0 || ih >= g.height) continue;
          const Scalar* in = row + oh * g.out_w;
          Scalar* out = image + (c * g.height + ih) * g.width;
          for (Index ow = 0; ow < g.out_w; ++ow) {
            const Index iw = ow * g.stride - g.padding + s;
            if (iw >= 0 && iw < g.width) out[iw] += in[ow];
          }
        }
      }
}

void check_conv_args(const char* op, const Shape& in, const Shape& k, int stride, int padding,
                     Index in_channels_axis_of_kernel) {
  const auto fail = [&](const std::string& why) {
    throw DimensionError(std::string(op) + ": " + why + " (input " + shape_str(in) + ", kernel " +
                         shape_str(k) + ")");
  };
  if (in.size() != 4) fail("input must be rank 4 NCHW");
  if (k.size() != 4) fail("kernel must be rank 4");
  if (stride < 1) fail("stride must be positive");
  if (padding < 0) fail("padding must be non-negative");
  if (in[1] != k[static_cast<std::size_t>(in_channels_axis_of_kernel)]) fail("channel mismatch");
}

}  // namespace

Index conv_output_extent(Index input, Index kernel, int stride, int padding) {
  const Index span = input + 2 * padding - kernel;
  if (span < 0)
    throw DimensionError("kernel extent " + std::to_string(kernel) + " exceeds padded input " +
                         std::to_string(input + 2 * padding));
  return span / stride + 1;
}

template <typename Scalar>
Var conv2d(Graph<Scalar>& g, Var input, Var kernel, int stride, int padding) {
  const Tensor<Scalar>& x = g.value(input);
  const Tensor<Scalar>& w = g.value(kernel);
  check_conv_args("conv2d", x.shape(), w.shape(), stride, padding, 1);

  const Index n = x.dim(0), k = w.dim(0);
  ConvGeometry geo{x.dim(1), x.dim(2), x.dim(3), w.dim(2), w.dim(3), stride, padding, 0, 0};
  geo.out_h = conv_output_extent(geo.height, geo.kh, stride, padding);
  geo.out_w = conv_output_extent(geo.width, geo.kw, stride, padding);
  const Index img = geo.channels * geo.height * geo.width;
  const Index patch = geo.rows() * geo.cols();
  const Index out_img = k * geo.cols();

  Tensor<Scalar> cols({n * geo.rows(), geo.cols()});
  Tensor<Scalar> out({n, k, geo.out_h, geo.out_w});
  CMapM<Scalar> wm(w.raw(), k, geo.rows());
  for (Index i = 0; i < n; ++i) {
    im2col(x.raw() + i * img, cols.raw() + i * patch, geo);
    MapM<Scalar>(out.raw() + i * out_img, k, geo.cols()).noalias() =
        wm * CMapM<Scalar>(cols.raw() + i * patch, geo.rows(), geo.cols());
  }

  return g.record("conv2d", std::move(out), {input, kernel},
                  [=, cols = std::move(cols)](Graph<Scalar>& gr, const Tensor<Scalar>& dy) {
                    const Tensor<Scalar>& wv = gr.value(kernel);
                    CMapM<Scalar> wmat(wv.raw(), k, geo.rows());
                    if (gr.requires_grad(kernel)) {
                      Tensor<Scalar> dw(wv.shape());
                      MapM<Scalar> dwm(dw.raw(), k, geo.rows());
                      for (Index i = 0; i < n; ++i)
                        dwm.noalias() += CMapM<Scalar>(dy.raw() + i * out_img, k, geo.cols()) *
                                         CMapM<Scalar>(cols.raw() + i * patch, geo.rows(), geo.cols())
                                             .transpose();
                      gr.accumulate(kernel, dw);
                    }
                    if (gr.requires_grad(input)) {
                      Tensor<Scalar> dx(gr.value(input).shape());
                      RowMatrix<Scalar> dcols(geo.rows(), geo.cols());
                      for (Index i = 0; i < n; ++i) {
                        dcols.noalias() =
                            wmat.transpose() * CMapM<Scalar>(dy.raw() + i * out_img, k, geo.cols());
                        col2im(dcols.data(), dx.raw() + i * img, geo);
                      }
                      gr.accumulate(input, dx);
                    }
                  });
}

template <typename Scalar>
Var conv_transpose2d(Graph<Scalar>& g, Var input, Var kernel, int stride, int padding) {
  const Tensor<Scalar>& y = g.value(input);
  const Tensor<Scalar>& w = g.value(kernel);
  check_conv_args("conv_transpose2d", y.shape(), w.shape(), stride, padding, 0);

  const Index n = y.dim(0), k = w.dim(0);
  const Index out_h = (y.dim(2) - 1) * stride - 2 * padding + w.dim(2);
  const Index out_w = (y.dim(3) - 1) * stride - 2 * padding + w.dim(3);
  if (out_h < 1 || out_w < 1)
    throw DimensionError("conv_transpose2d: empty output (input " + shape_str(y.shape()) +
                         ", kernel " + shape_str(w.shape()) + ")");
  // Geometry of the forward convolution this operator is the adjoint of.
  const ConvGeometry geo{w.dim(1), out_h, out_w, w.dim(2), w.dim(3), stride, padding, y.dim(2), y.dim(3)};
  const Index in_img = k * geo.cols();
  const Index out_img = geo.channels * out_h * out_w;

  Tensor<Scalar> out({n, geo.channels, out_h, out_w});
  CMapM<Scalar> wm(w.raw(), k, geo.rows());
  RowMatrix<Scalar> cols(geo.rows(), geo.cols());
  for (Index i = 0; i < n; ++i) {
    cols.noalias() = wm.transpose() * CMapM<Scalar>(y.raw() + i * in_img, k, geo.cols());
    col2im(cols.data(), out.raw() + i * out_img, geo);
  }

  return g.record("conv_transpose2d", std::move(out), {input, kernel},
                  [=](Graph<Scalar>& gr, const Tensor<Scalar>& dout) {
                    const Tensor<Scalar>& wv = gr.value(kernel);
                    const Tensor<Scalar>& yv = gr.value(input);
                    CMapM<Scalar> wmat(wv.raw(), k, geo.rows());
                    const bool want_w = gr.requires_grad(kernel);
                    const bool want_y = gr.requires_grad(input);
                    Tensor<Scalar> dw(wv.shape());
                    Tensor<Scalar> dy(yv.shape());
                    MapM<Scalar> dwm(dw.raw(), k, geo.rows());
                    RowMatrix<Scalar> dcols(geo.rows(), geo.cols());
                    for (Index i = 0; i < n; ++i) {
                      im2col(dout.raw() + i * out_img, dcols.data(), geo);
                      if (want_w)
                        dwm.noalias() +=
                            CMapM<Scalar>(yv.raw() + i * in_img, k, geo.cols()) * dcols.transpose();
                      if (want_y)
                        MapM<Scalar>(dy.raw() + i * in_img, k, geo.cols()).noalias() = wmat * dcols;
                    }
                    if (want_w) gr.accumulate(kernel, dw);
                    if (want_y) gr.accumulate(input, dy);
                  });
}

template <typename Scalar>
Var dense(Graph<Scalar>& g, Var input, Var weight, Var bias) {
  const Tensor<Scalar>& x = g.value(input);
  const Tensor<Scalar>& w = g.value(weight);
  const Tensor<Scalar>& b = g.value(bias);
  if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1 || x.dim(1) != w.dim(1) || b.dim(0) != w.dim(0))
    throw DimensionError("dense: incompatible shapes input " + shape_str(x.shape()) + ", weight " +
                         shape_str(w.shape()) + ", bias " + shape_str(b.shape()));
  const Index n = x.dim(0), d = x.dim(1), m = w.dim(0);

  Tensor<Scalar> out({n, m});
  MapM<Scalar> om(out.raw(), n, m);
  om.noalias() = CMapM<Scalar>(x.raw(), n, d) * CMapM<Scalar>(w.raw(), m, d).transpose();
  om.rowwise() += b.data().matrix().transpose();

  return g.record("dense", std::move(out), {input, weight, bias},
                  [=](Graph<Scalar>& gr, const Tensor<Scalar>& dy) {
                    CMapM<Scalar> dym(dy.raw(), n, m);
                    if (gr.requires_grad(input)) {
                      Tensor<Scalar> dx({n, d});
                      MapM<Scalar>(dx.raw(), n, d).noalias() =
                          dym * CMapM<Scalar>(gr.value(weight).raw(), m, d);
                      gr.accumulate(input, dx);
                    }
                    if (gr.requires_grad(weight)) {
                      Tensor<Scalar> dw({m, d});
                      MapM<Scalar>(dw.raw(), m, d).noalias() =
                          dym.transpose() * CMapM<Scalar>(gr.value(input).raw(), n, d);
                      gr.accumulate(weight, dw);
                    }
                    if (gr.requires_grad(bias)) {
                      Tensor<Scalar> db({m});
                      db.data() = dym.colwise().sum().transpose().array();
                      gr.accumulate(bias, db);
                    }
                  });
}

template <typename Scalar>
Var activation(Graph<Scalar>& g, Var input, Activation kind) {
  const Tensor<Scalar>& x = g.value(input);
  Tensor<Scalar> out(x.shape());
  const auto& xd = x.data();
  const Scalar alpha = static_cast<Scalar>(kind.alpha);
  const char* name = "relu";
  switch (kind.kind) {
    case ActivationKind::relu:
      out.data() = xd.max(Scalar(0));
      break;
    case ActivationKind::leaky_relu:
      if (kind.alpha < 0) throw ParameterError("leaky_relu slope must be non-negative");
      out.data() = (xd > Scalar(0)).select(xd, alpha * xd);
      name = "leaky_relu";
      break;
    case ActivationKind::tanh:
      out.data() = xd.tanh();
      name = "tanh";
      break;
    case ActivationKind::sigmoid:
      out.data() = Scalar(1) / (Scalar(1) + (-xd).exp());
      name = "sigmoid";
      break;
  }
  const Var self{g.size()};
  return g.record(name, std::move(out), {input},
                  [=](Graph<Scalar>& gr, const Tensor<Scalar>& dy) {
                    const auto& xv = gr.value(input).data();
                    const auto& yv = gr.value(self).data();
                    const auto& d = dy.data();
                    switch (kind.kind) {
                      case ActivationKind::relu:
                        gr.accumulate_expr(input, (xv > Scalar(0)).select(d, Scalar(0)));
                        break;
                      case ActivationKind::leaky_relu:
                        gr.accumulate_expr(input, (xv > Scalar(0)).select(d, alpha * d));
                        break;
                      case ActivationKind::tanh:
                        gr.accumulate_expr(input, d * (Scalar(1) - yv.square()));
                        break;
                      case ActivationKind::sigmoid:
                        gr.accumulate_expr(input, d * yv * (Scalar(1) - yv));
                        break;
                    }
                  });
}

template <typename Scalar>
Var batch_norm(Graph<Scalar>& g, Var input, Var gamma, Var beta, BatchNormStats<Scalar>& stats,
               BatchNormMode mode, double momentum, double epsilon) {
  const Tensor<Scalar>& x = g.value(input);
  if (x.rank() < 2) throw DimensionError("batch_norm: input must be [N, C, ...], got " + shape_str(x.shape()));
  const Index n = x.dim(0), c = x.dim(1), inner = x.size() / (n * c);
  const Tensor<Scalar>& gm = g.value(gamma);
  const Tensor<Scalar>& bt = g.value(beta);
  if (gm.size() != c || bt.size() != c || stats.running_mean.size() != c || stats.running_var.size() != c)
    throw DimensionError("batch_norm: per-channel parameters must have " + std::to_string(c) + " entries");
  if (epsilon <= 0) throw ParameterError("batch_norm: epsilon must be positive");
  if (mode == BatchNormMode::train && n < 2)
    throw BatchSizeError("batch_norm: train mode needs at least 2 samples, got " + std::to_string(n));

  const Index count = n * inner;
  const auto at = [c, inner](Index s, Index ch, Index j) { return (s * c + ch) * inner + j; };
  ArrayX<Scalar> mu(c), inv_std(c);
  if (mode == BatchNormMode::train) {
    for (Index ch = 0; ch < c; ++ch) {
      double acc = 0.0;
      for (Index s = 0; s < n; ++s)
        for (Index j = 0; j < inner; ++j) acc += x[at(s, ch, j)];
      const double m = acc / static_cast<double>(count);
      double var = 0.0;
      for (Index s = 0; s < n; ++s)
        for (Index j = 0; j < inner; ++j) {
          const double dlt = x[at(s, ch, j)] - m;
          var += dlt * dlt;
        }
      var /= static_cast<double>(count);
      mu[ch] = static_cast<Scalar>(m);
      inv_std[ch] = static_cast<Scalar>(1.0 / std::sqrt(var + epsilon));
      const double unbiased = var * static_cast<double>(count) / static_cast<double>(count - 1);
      stats.running_mean[ch] =
          static_cast<Scalar>((1.0 - momentum) * stats.running_mean[ch] + momentum * m);
      stats.running_var[ch] =
          static_cast<Scalar>((1.0 - momentum) * stats.running_var[ch] + momentum * unbiased);
    }
  } else {
    mu = stats.running_mean;
    inv_std = (stats.running_var + static_cast<Scalar>(epsilon)).rsqrt();
  }

  Tensor<Scalar> xhat(x.shape());
  Tensor<Scalar> out(x.shape());
  for (Index s = 0; s < n; ++s)
    for (Index ch = 0; ch < c; ++ch)
      for (Index j = 0; j < inner; ++j) {
        const Index i = at(s, ch, j);
        xhat[i] = (x[i] - mu[ch]) * inv_std[ch];
        out[i] = gm[ch] * xhat[i] + bt[ch];
      }

  return g.record("batch_norm", std::move(out), {input, gamma, beta},
                  [=, xhat = std::move(xhat)](Graph<Scalar>& gr, const Tensor<Scalar>& dy) {
                    const Tensor<Scalar>& gv = gr.value(gamma);
                    Tensor<Scalar> dgamma({c}), dbeta({c});
                    Tensor<Scalar> dx(xhat.shape());
                    for (Index ch = 0; ch < c; ++ch) {
                      Scalar sum_dy = 0, sum_dy_xhat = 0;
                      for (Index s = 0; s < n; ++s)
                        for (Index j = 0; j < inner; ++j) {
                          const Index i = at(s, ch, j);
                          sum_dy += dy[i];
                          sum_dy_xhat += dy[i] * xhat[i];
                        }
                      dgamma[ch] = sum_dy_xhat;
                      dbeta[ch] = sum_dy;
                      const Scalar scale_ch = gv[ch] * inv_std[ch];
                      for (Index s = 0; s < n; ++s)
                        for (Index j = 0; j < inner; ++j) {
                          const Index i = at(s, ch, j);
                          if (mode == BatchNormMode::train) {
                            const Scalar cnt = static_cast<Scalar>(count);
                            dx[i] = scale_ch * (dy[i] - sum_dy / cnt - xhat[i] * sum_dy_xhat / cnt);
                          } else {
                            dx[i] = scale_ch * dy[i];
                          }
                        }
                    }
                    gr.accumulate(input, dx);
                    gr.accumulate(gamma, dgamma);
                    gr.accumulate(beta, dbeta);
                  });
}

template <typename Scalar>
Var softmax(Graph<Scalar>& g, Var input) {
  const Tensor<Scalar>& x = g.value(input);
  if (x.rank() != 2) throw DimensionError("softmax: input must be [N, K], got " + shape_str(x.shape()));
  const Index n = x.dim(0), k = x.dim(1);
  if (k < 2) throw DimensionError("softmax: need at least 2 classes, got " + std::to_string(k));

  Tensor<Scalar> out(x.shape());
  MapM<Scalar> om(out.raw(), n, k);
  CMapM<Scalar> xm(x.raw(), n, k);
  for (Index r = 0; r < n; ++r) {
    const Scalar mx = xm.row(r).maxCoeff();
    om.row(r) = (xm.row(r).array() - mx).exp().matrix();
    om.row(r) /= om.row(r).sum();
  }
  const Var self{g.size()};
  return g.record("softmax", std::move(out), {input},
                  [=](Graph<Scalar>& gr, const Tensor<Scalar>& dy) {
                    CMapM<Scalar> y(gr.value(self).raw(), n, k);
                    CMapM<Scalar> d(dy.raw(), n, k);
                    Tensor<Scalar> dx({n, k});
                    MapM<Scalar> dxm(dx.raw(), n, k);
                    for (Index r = 0; r < n; ++r) {
                      const Scalar dot = y.row(r).dot(d.row(r));
                      dxm.row(r) = (y.row(r).array() * (d.row(r).array() - dot)).matrix();
                    }
                    gr.accumulate(input, dx);
                  });
}

template <typename Scalar>
Var cross_entropy(Graph<Scalar>& g, Var probs, const Tensor<Scalar>& labels) {
  const Tensor<Scalar>& p = g.value(probs);
  if (p.rank() != 2 || labels.shape() != p.shape())
    throw DimensionError("cross_entropy: probs " + shape_str(p.shape()) + " vs labels " +
                         shape_str(labels.shape()));
  const Index n = p.dim(0), k = p.dim(1);
  std::vector<Index> target(static_cast<std::size_t>(n));
  for (Index r = 0; r < n; ++r) {
    Scalar row_sum = 0;
    Index hot = -1, ones = 0;
    for (Index j = 0; j < k; ++j) {
      row_sum += p[r * k + j];
      const Scalar l = labels[r * k + j];
      if (l == Scalar(1)) {
        hot = j;
        ++ones;
      } else if (l != Scalar(0)) {
        throw ContractError("cross_entropy: label row " + std::to_string(r) + " is not one-hot");
      }
      if (p[r * k + j] < Scalar(0)) throw ContractError("cross_entropy: negative probability");
    }
    if (ones != 1) throw ContractError("cross_entropy: label row " + std::to_string(r) + " is not one-hot");
    if (std::abs(static_cast<double>(row_sum) - 1.0) > 1e-6)
      throw ContractError("cross_entropy: probability row " + std::to_string(r) + " sums to " +
                          std::to_string(static_cast<double>(row_sum)));
    target[static_cast<std::size_t>(r)] = hot;
  }

  const Scalar floor = static_cast<Scalar>(kLogFloor);
  Scalar total = 0;
  for (Index r = 0; r < n; ++r) total -= std::log(std::max(p[r * k + target[static_cast<std::size_t>(r)]], floor));
  total /= static_cast<Scalar>(n);

  return g.record("cross_entropy", Tensor<Scalar>::scalar(total), {probs},
                  [=](Graph<Scalar>& gr, const Tensor<Scalar>& dy) {
                    const Tensor<Scalar>& pv = gr.value(probs);
                    Tensor<Scalar> dp(pv.shape());
                    const Scalar upstream = dy[0] / static_cast<Scalar>(n);
                    for (Index r = 0; r < n; ++r) {
                      const Index i = r * k + target[static_cast<std::size_t>(r)];
                      if (pv[i] >= floor) dp[i] = -upstream / pv[i];
                    }
                    gr.accumulate(probs, dp);
                  });
}

template <typename Scalar>
WganLosses wgan_losses(Graph<Scalar>& g, Var critic_real, Var critic_fake) {
  const auto check = [&](Var v, const char* which) {
    const auto& s = g.value(v).shape();
    if (s.size() != 2 || s[1] != 1)
      throw DimensionError(std::string("wgan_losses: ") + which + " scores must be [N, 1], got " + shape_str(s));
  };
  check(critic_real, "real");
  check(critic_fake, "fake");
  const Var fake_mean = mean(g, critic_fake);
  return {sub(g, fake_mean, mean(g, critic_real)), scale(g, fake_mean, -1.0)};
}

template <typename Scalar>
Var grad_reverse(Graph<Scalar>& g, Var input, double lambda) {
  if (!(lambda >= 0.0)) throw ParameterError("grad_reverse: lambda must be non-negative");
  const Scalar factor = -static_cast<Scalar>(lambda);
  return g.record("grad_reverse", g.value(input), {input},
                  [=](Graph<Scalar>& gr, const Tensor<Scalar>& dy) {
                    gr.accumulate_expr(input, factor * dy.data());
                  });
}

template <typename Scalar>
Var add_channel_bias(Graph<Scalar>& g, Var input, Var bias) {
  const Tensor<Scalar>& x = g.value(input);
  const Tensor<Scalar>& b = g.value(bias);
  if (x.rank() < 2 || b.rank() != 1 || b.dim(0) != x.dim(1))
    throw DimensionError("add_channel_bias: input " + shape_str(x.shape()) + ", bias " + shape_str(b.shape()));
  const Index n = x.dim(0), c = x.dim(1), inner = x.size() / (n * c);
  Tensor<Scalar> out = x;
  for (Index s = 0; s < n; ++s)
    for (Index ch = 0; ch < c; ++ch) out.data().segment((s * c + ch) * inner, inner) += b[ch];
  return g.record("add_channel_bias", std::move(out), {input, bias},
                  [=](Graph<Scalar>& gr, const Tensor<Scalar>& dy) {
                    gr.accumulate(input, dy);
                    if (gr.requires_grad(bias)) {
                      Tensor<Scalar> db({c});
                      for (Index s = 0; s < n; ++s)
                        for (Index ch = 0; ch < c; ++ch)
                          db[ch] += dy.data().segment((s * c + ch) * inner, inner).sum();
                      gr.accumulate(bias, db);
                    }
                  });
}

template <typename Scalar>
Var global_avg_pool(Graph<Scalar>& g, Var input) {
  const Tensor<Scalar>& x = g.value(input);
  if (x.rank() != 4) throw DimensionError("global_avg_pool: input must be NCHW, got " + shape_str(x.shape()));
  const Index n = x.dim(0), c = x.dim(1), inner = x.dim(2) * x.dim(3);
  Tensor<Scalar> out({n, c});
  CMapM<Scalar> xm(x.raw(), n * c, inner);
  out.data() = xm.rowwise().mean().array();
  return g.record("global_avg_pool", std::move(out), {input},
                  [=](Graph<Scalar>& gr, const Tensor<Scalar>& dy) {
                    Tensor<Scalar> dx(gr.value(input).shape());
                    MapM<Scalar> dxm(dx.raw(), n * c, inner);
                    dxm.colwise() = (dy.data() / static_cast<Scalar>(inner)).matrix();
                    gr.accumulate(input, dx);
                  });
}

template <typename Scalar>
Var reshape(Graph<Scalar>& g, Var input, Shape shape) {
  const Tensor<Scalar>& x = g.value(input);
  if (shape_size(shape) != x.size())
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  Shape original = x.shape();
  return g.record("reshape", x.reshaped(std::move(shape)), {input},
                  [=](Graph<Scalar>& gr, const Tensor<Scalar>& dy) {
                    gr.accumulate(input, dy.reshaped(original));
                  });
}

template <typename Scalar>
Var select_rows(Graph<Scalar>& g, Var input, const std::vector<Index>& rows) {
  const Tensor<Scalar>& x = g.value(input);
  if (x.rank() < 1 || rows.empty()) throw DimensionError("select_rows: need a non-empty row list");
  const Index width = x.size() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = static_cast<Index>(rows.size());
  Tensor<Scalar> out(shape);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= x.dim(0))
      throw DimensionError("select_rows: row " + std::to_string(rows[r]) + " out of range for " +
                           shape_str(x.shape()));
    out.data().segment(static_cast<Index>(r) * width, width) = x.data().segment(rows[r] * width, width);
  }
  return g.record("select_rows", std::move(out), {input},
                  [=](Graph<Scalar>& gr, const Tensor<Scalar>& dy) {
                    Tensor<Scalar> dx(gr.value(input).shape());
                    for (std::size_t r = 0; r < rows.size(); ++r)
                      dx.data().segment(rows[r] * width, width) +=
                          dy.data().segment(static_cast<Index>(r) * width, width);
                    gr.accumulate(input, dx);
                  });
}

template <typename Scalar>
Var add(Graph<Scalar>& g, Var a, Var b) {
  const Tensor<Scalar>& x = g.value(a);
  const Tensor<Scalar>& y = g.value(b);
  if (x.shape() != y.shape())
    throw DimensionError("add: shapes " + shape_str(x.shape()) + " and " + shape_str(y.shape()));
  return g.record("add", Tensor<Scalar>(x.shape(), x.data() + y.data()), {a, b},
                  [=](Graph<Scalar>& gr, const Tensor<Scalar>& dy) {
                    gr.accumulate(a, dy);
                    gr.accumulate(b, dy);
                  });
}

template <typename Scalar>
Var sub(Graph<Scalar>& g, Var a, Var b) {
  const Tensor<Scalar>& x = g.value(a);
  const Tensor<Scalar>& y = g.value(b);
  if (x.shape() != y.shape())
    throw DimensionError("sub: shapes " + shape_str(x.shape()) + " and " + shape_str(y.shape()));
  return g.record("sub", Tensor<Scalar>(x.shape(), x.data() - y.data()), {a, b},
                  [=](Graph<Scalar>& gr, const Tensor<Scalar>& dy) {
                    gr.accumulate(a, dy);
                    gr.accumulate_expr(b, -dy.data());
                  });
}

template <typename Scalar>
Var scale(Graph<Scalar>& g, Var input, double factor) {
  const Scalar f = static_cast<Scalar>(factor);
  const Tensor<Scalar>& x = g.value(input);
  return g.record("scale", Tensor<Scalar>(x.shape(), f * x.data()), {input},
                  [=](Graph<Scalar>& gr, const Tensor<Scalar>& dy) {
                    gr.accumulate_expr(input, f * dy.data());
                  });
}

template <typename Scalar>
Var sum(Graph<Scalar>& g, Var input) {
  const Tensor<Scalar>& x = g.value(input);
  return g.record("sum", Tensor<Scalar>::scalar(x.data().sum()), {input},
                  [=](Graph<Scalar>& gr, const Tensor<Scalar>& dy) {
                    gr.accumulate(input, Tensor<Scalar>::full(gr.value(input).shape(), dy[0]));
                  });
}

template <typename Scalar>
Var mean(Graph<Scalar>& g, Var input) {
  const Tensor<Scalar>& x = g.value(input);
  const Scalar count = static_cast<Scalar>(x.size());
  return g.record("mean", Tensor<Scalar>::scalar(x.data().sum() / count), {input},
                  [=](Graph<Scalar>& gr, const Tensor<Scalar>& dy) {
                    gr.accumulate(input, Tensor<Scalar>::full(gr.value(input).shape(), dy[0] / count));
                  });
}

#define DERM_INSTANTIATE_OPS(S)                                                              \
  template Var conv2d<S>(Graph<S>&, Var, Var, int, int);                                     \
  template Var conv_transpose2d<S>(Graph<S>&, Var, Var, int, int);                           \
  template Var dense<S>(Graph<S>&, Var, Var, Var);                                           \
  template Var activation<S>(Graph<S>&, Var, Activation);                                    \
  template Var batch_norm<S>(Graph<S>&, Var, Var, Var, BatchNormStats<S>&, BatchNormMode,    \
                             double, double);                                                \
  template Var softmax<S>(Graph<S>&, Var);                                                   \
  template Var cross_entropy<S>(Graph<S>&, Var, const Tensor<S>&);                           \
  template WganLosses wgan_losses<S>(Graph<S>&, Var, Var);                                   \
  template Var grad_reverse<S>(Graph<S>&, Var, double);                                      \
  template Var add_channel_bias<S>(Graph<S>&, Var, Var);                                     \
  template Var global_avg_pool<S>(Graph<S>&, Var);                                           \
  template Var reshape<S>(Graph<S>&, Var, Shape);                                            \
  template Var select_rows<S>(Graph<S>&, Var, const std::vector<Index>&);                    \
  template Var add<S>(Graph<S>&, Var, Var);                                                  \
  template Var sub<S>(Graph<S>&, Var, Var);                                                  \
  template Var scale<S>(Graph<S>&, Var, double);                                             \
  template Var sum<S>(Graph<S>&, Var);                                                       \
  template Var mean<S>(Graph<S>&, Var);

DERM_INSTANTIATE_OPS(float)
DERM_INSTANTIATE_OPS(double)

#undef DERM_INSTANTIATE_OPS

}  // namespace derm::ad
