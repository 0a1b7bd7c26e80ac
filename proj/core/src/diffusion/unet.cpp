#include "candleforge/diffusion/unet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "candleforge/error.hpp"
#include "candleforge/rng.hpp"

namespace candleforge::diffusion {

namespace detail {

struct ConvDesc {
  int cin = 0;
  int cout = 0;
  int k = 3;
  std::size_t w = 0;
  std::size_t b = 0;
};

struct LinearDesc {
  int in = 0;
  int out = 0;
  std::size_t w = 0;
  std::size_t b = 0;
};

struct NormDesc {
  int channels = 0;
  int groups = 1;
  std::size_t gamma = 0;
  std::size_t beta = 0;
};

struct ResDesc {
  int cin = 0;
  int cout = 0;
  NormDesc n1;
  ConvDesc c1;
  LinearDesc film;
  NormDesc n2;
  ConvDesc c2;
  bool has_skip = false;
  ConvDesc skip;
};

struct AttnDesc {
  int channels = 0;
  int token_dim = 0;
  int dim = 0;
  LinearDesc q, k, v, o;
};

struct Architecture {
  ConvDesc stem;
  LinearDesc emb1, emb2;
  std::size_t null_embedding = 0;
  int feature_size = 0;
  std::vector<ResDesc> down;
  ResDesc mid;
  bool attention = false;
  AttnDesc attn;
  std::vector<ResDesc> up;  // deepest level first
  NormDesc out_norm;
  ConvDesc head;
};

}  // namespace detail

namespace {

using detail::AttnDesc;
using detail::ConvDesc;
using detail::LinearDesc;
using detail::NormDesc;
using detail::ResDesc;

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<Mat<T>>;
template <typename T>
using CMatMap = Eigen::Map<const Mat<T>>;

constexpr double kNormEps = 1e-5;

class LayoutBuilder {
 public:
  std::vector<ParamInfo> layout;
  std::size_t total = 0;

  std::size_t add(std::string name, std::vector<int> shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    layout.push_back({std::move(name), std::move(shape), total, n});
    total += n;
    return layout.back().offset;
  }

  ConvDesc conv(const std::string& name, int cin, int cout, int k) {
    ConvDesc d{cin, cout, k, 0, 0};
    d.w = add(name + ".weight", {cout, cin, k, k});
    d.b = add(name + ".bias", {cout});
    return d;
  }

  LinearDesc linear(const std::string& name, int in, int out) {
    LinearDesc d{in, out, 0, 0};
    d.w = add(name + ".weight", {out, in});
    d.b = add(name + ".bias", {out});
    return d;
  }

  NormDesc norm(const std::string& name, int channels, int groups) {
    NormDesc d{channels, groups, 0, 0};
    d.gamma = add(name + ".gamma", {channels});
    d.beta = add(name + ".beta", {channels});
    return d;
  }

  ResDesc res(const std::string& name, int cin, int cout, int groups, int embed_dim) {
    ResDesc d;
    d.cin = cin;
    d.cout = cout;
    d.n1 = norm(name + ".norm1", cin, groups);
    d.c1 = conv(name + ".conv1", cin, cout, 3);
    d.film = linear(name + ".film", embed_dim, 2 * cout);
    d.n2 = norm(name + ".norm2", cout, groups);
    d.c2 = conv(name + ".conv2", cout, cout, 3);
    d.has_skip = cin != cout;
    if (d.has_skip) d.skip = conv(name + ".skip", cin, cout, 1);
    return d;
  }
};

// ---- elementwise ---------------------------------------------------------------------------

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <typename T>
T silu(T x) {
  return x * sigmoid(x);
}

template <typename T>
T silu_grad(T x) {
  const T s = sigmoid(x);
  return s * (T(1) + x * (T(1) - s));
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (auto& v : y.data) v = silu(v);
  return y;
}

template <typename T>
std::vector<T> silu(const std::vector<T>& x) {
  std::vector<T> y = x;
  for (auto& v : y) v = silu(v);
  return y;
}

// ---- convolution ---------------------------------------------------------------------------

template <typename T>
void im2col(const Tensor<T>& x, std::vector<T>& col) {
  const int h = x.height, w = x.width, p = x.plane();
  col.assign(static_cast<std::size_t>(x.channels) * 9 * p, T(0));
  for (int c = 0; c < x.channels; ++c) {
    const T* src = x.channel(c);
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        T* dst = col.data() + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * p;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          for (int xx = 0; xx < w; ++xx) {
            const int sx = xx + kx - 1;
            if (sx >= 0 && sx < w) dst[y * w + xx] = src[sy * w + sx];
          }
        }
      }
    }
  }
}

template <typename T>
Tensor<T> col2im(const Mat<T>& col, int channels, int h, int w) {
  Tensor<T> x(channels, h, w);
  const int p = h * w;
  for (int c = 0; c < channels; ++c) {
    T* dst = x.channel(c);
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const T* src = col.data() + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * p;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          for (int xx = 0; xx < w; ++xx) {
            const int sx = xx + kx - 1;
            if (sx >= 0 && sx < w) dst[sy * w + sx] += src[y * w + xx];
          }
        }
      }
    }
  }
  return x;
}

template <typename T>
Tensor<T> conv_forward(const ConvDesc& d, const T* p, const Tensor<T>& x, std::vector<T>& col) {
  if (x.channels != d.cin) {
    throw ArgumentError("conv expects " + std::to_string(d.cin) + " channels, got " + std::to_string(x.channels));
  }
  const int plane = x.plane();
  const int kdim = d.cin * d.k * d.k;
  if (d.k == 3) {
    im2col(x, col);
  } else {
    col = x.data;
  }
  Tensor<T> y(d.cout, x.height, x.width);
  MatMap<T> out(y.data.data(), d.cout, plane);
  out.noalias() = CMatMap<T>(p + d.w, d.cout, kdim) * CMatMap<T>(col.data(), kdim, plane);
  for (int o = 0; o < d.cout; ++o) out.row(o).array() += p[d.b + o];
  return y;
}

// Returns dL/dx (empty when need_dx is false).
template <typename T>
Tensor<T> conv_backward(const ConvDesc& d, const T* p, const std::vector<T>& col, int h, int w, const Tensor<T>& dy,
                        T* grad, bool need_dx = true) {
  const int plane = h * w;
  const int kdim = d.cin * d.k * d.k;
  CMatMap<T> g(dy.data.data(), d.cout, plane);
  CMatMap<T> c(col.data(), kdim, plane);
  MatMap<T>(grad + d.w, d.cout, kdim).noalias() += g * c.transpose();
  for (int o = 0; o < d.cout; ++o) grad[d.b + o] += g.row(o).sum();
  if (!need_dx) return {};
  const Mat<T> dcol = CMatMap<T>(p + d.w, d.cout, kdim).transpose() * g;
  if (d.k == 3) return col2im<T>(dcol, d.cin, h, w);
  Tensor<T> dx(d.cin, h, w);
  std::copy(dcol.data(), dcol.data() + dcol.size(), dx.data.begin());
  return dx;
}

// ---- group norm ----------------------------------------------------------------------------

template <typename T>
struct NormCache {
  std::vector<T> xhat;
  std::vector<T> rstd;  // per group
};

template <typename T>
Tensor<T> norm_forward(const NormDesc& d, const T* p, const Tensor<T>& x, NormCache<T>& cache) {
  if (x.channels != d.channels) throw ArgumentError("group norm channel mismatch");
  const int cpg = d.channels / d.groups;
  const std::size_t n = static_cast<std::size_t>(cpg) * x.plane();
  Tensor<T> y(x.channels, x.height, x.width);
  cache.xhat.resize(x.size());
  cache.rstd.resize(static_cast<std::size_t>(d.groups));
  for (int g = 0; g < d.groups; ++g) {
    const std::size_t begin = static_cast<std::size_t>(g) * n;
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += static_cast<double>(x.data[begin + i]);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dv = static_cast<double>(x.data[begin + i]) - mean;
      var += dv * dv;
    }
    var /= static_cast<double>(n);
    const double rstd = 1.0 / std::sqrt(var + kNormEps);
    cache.rstd[static_cast<std::size_t>(g)] = static_cast<T>(rstd);
    for (std::size_t i = 0; i < n; ++i) {
      cache.xhat[begin + i] = static_cast<T>((static_cast<double>(x.data[begin + i]) - mean) * rstd);
    }
  }
  const int plane = x.plane();
  for (int c = 0; c < x.channels; ++c) {
    const T gamma = p[d.gamma + c], beta = p[d.beta + c];
    const T* xh = cache.xhat.data() + static_cast<std::size_t>(c) * plane;
    T* out = y.channel(c);
    for (int i = 0; i < plane; ++i) out[i] = xh[i] * gamma + beta;
  }
  return y;
}

template <typename T>
Tensor<T> norm_backward(const NormDesc& d, const T* p, const NormCache<T>& cache, const Tensor<T>& dy, T* grad) {
  const int plane = dy.plane();
  const int cpg = d.channels / d.groups;
  const std::size_t n = static_cast<std::size_t>(cpg) * plane;
  std::vector<T> dxhat(dy.size());
  for (int c = 0; c < d.channels; ++c) {
    const T* g = dy.channel(c);
    const T* xh = cache.xhat.data() + static_cast<std::size_t>(c) * plane;
    T* dxh = dxhat.data() + static_cast<std::size_t>(c) * plane;
    const T gamma = p[d.gamma + c];
    T dgamma = 0, dbeta = 0;
    for (int i = 0; i < plane; ++i) {
      dgamma += g[i] * xh[i];
      dbeta += g[i];
      dxh[i] = g[i] * gamma;
    }
    grad[d.gamma + c] += dgamma;
    grad[d.beta + c] += dbeta;
  }
  Tensor<T> dx(dy.channels, dy.height, dy.width);
  for (int g = 0; g < d.groups; ++g) {
    const std::size_t begin = static_cast<std::size_t>(g) * n;
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      s1 += static_cast<double>(dxhat[begin + i]);
      s2 += static_cast<double>(dxhat[begin + i]) * static_cast<double>(cache.xhat[begin + i]);
    }
    const double rstd = static_cast<double>(cache.rstd[static_cast<std::size_t>(g)]);
    const double nn = static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double v = rstd / nn *
                       (nn * static_cast<double>(dxhat[begin + i]) - s1 - static_cast<double>(cache.xhat[begin + i]) * s2);
      dx.data[begin + i] = static_cast<T>(v);
    }
  }
  return dx;
}

// ---- linear --------------------------------------------------------------------------------

template <typename T>
std::vector<T> linear_forward(const LinearDesc& d, const T* p, const std::vector<T>& in) {
  std::vector<T> out(static_cast<std::size_t>(d.out));
  for (int o = 0; o < d.out; ++o) {
    T acc = p[d.b + o];
    const T* row = p + d.w + static_cast<std::size_t>(o) * d.in;
    for (int i = 0; i < d.in; ++i) acc += row[i] * in[static_cast<std::size_t>(i)];
    out[static_cast<std::size_t>(o)] = acc;
  }
  return out;
}

// Accumulates weight gradients and returns dL/din.
template <typename T>
std::vector<T> linear_backward(const LinearDesc& d, const T* p, const std::vector<T>& in, const std::vector<T>& dout,
                               T* grad) {
  std::vector<T> din(static_cast<std::size_t>(d.in), T(0));
  for (int o = 0; o < d.out; ++o) {
    const T g = dout[static_cast<std::size_t>(o)];
    grad[d.b + o] += g;
    const T* row = p + d.w + static_cast<std::size_t>(o) * d.in;
    T* grow = grad + d.w + static_cast<std::size_t>(o) * d.in;
    for (int i = 0; i < d.in; ++i) {
      grow[i] += g * in[static_cast<std::size_t>(i)];
      din[static_cast<std::size_t>(i)] += row[i] * g;
    }
  }
  return din;
}

// ---- resampling ----------------------------------------------------------------------------

template <typename T>
Tensor<T> avgpool2(const Tensor<T>& x) {
  Tensor<T> y(x.channels, x.height / 2, x.width / 2);
  for (int c = 0; c < x.channels; ++c)
    for (int yy = 0; yy < y.height; ++yy)
      for (int xx = 0; xx < y.width; ++xx) {
        y.at(c, yy, xx) = (x.at(c, 2 * yy, 2 * xx) + x.at(c, 2 * yy, 2 * xx + 1) + x.at(c, 2 * yy + 1, 2 * xx) +
                           x.at(c, 2 * yy + 1, 2 * xx + 1)) *
                          T(0.25);
      }
  return y;
}

template <typename T>
Tensor<T> avgpool2_backward(const Tensor<T>& dy) {
  Tensor<T> dx(dy.channels, dy.height * 2, dy.width * 2);
  for (int c = 0; c < dy.channels; ++c)
    for (int y = 0; y < dx.height; ++y)
      for (int x = 0; x < dx.width; ++x) dx.at(c, y, x) = dy.at(c, y / 2, x / 2) * T(0.25);
  return dx;
}

template <typename T>
Tensor<T> upsample2(const Tensor<T>& x) {
  Tensor<T> y(x.channels, x.height * 2, x.width * 2);
  for (int c = 0; c < x.channels; ++c)
    for (int yy = 0; yy < y.height; ++yy)
      for (int xx = 0; xx < y.width; ++xx) y.at(c, yy, xx) = x.at(c, yy / 2, xx / 2);
  return y;
}

template <typename T>
Tensor<T> upsample2_backward(const Tensor<T>& dy) {
  Tensor<T> dx(dy.channels, dy.height / 2, dy.width / 2);
  for (int c = 0; c < dy.channels; ++c)
    for (int y = 0; y < dy.height; ++y)
      for (int x = 0; x < dy.width; ++x) dx.at(c, y / 2, x / 2) += dy.at(c, y, x);
  return dx;
}

template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> y(a.channels + b.channels, a.height, a.width);
  std::copy(a.data.begin(), a.data.end(), y.data.begin());
  std::copy(b.data.begin(), b.data.end(), y.data.begin() + static_cast<std::ptrdiff_t>(a.size()));
  return y;
}

// ---- residual block ------------------------------------------------------------------------

template <typename T>
struct ResCache {
  Tensor<T> x;
  NormCache<T> n1;
  Tensor<T> a1;
  std::vector<T> col1;
  NormCache<T> n2;
  Tensor<T> a2;
  std::vector<T> film;
  Tensor<T> f;
  std::vector<T> col2;
  std::vector<T> col_skip;
};

template <typename T>
Tensor<T> res_forward(const ResDesc& d, const T* p, const Tensor<T>& x, const std::vector<T>& emb_s, ResCache<T>& c) {
  c.x = x;
  c.a1 = norm_forward(d.n1, p, x, c.n1);
  const Tensor<T> h1 = conv_forward(d.c1, p, silu(c.a1), c.col1);
  c.film = linear_forward(d.film, p, emb_s);
  c.a2 = norm_forward(d.n2, p, h1, c.n2);
  c.f = c.a2;
  const int plane = c.f.plane();
  for (int ch = 0; ch < d.cout; ++ch) {
    const T scale = T(1) + c.film[static_cast<std::size_t>(ch)];
    const T shift = c.film[static_cast<std::size_t>(d.cout + ch)];
    T* v = c.f.channel(ch);
    for (int i = 0; i < plane; ++i) v[i] = v[i] * scale + shift;
  }
  Tensor<T> out = conv_forward(d.c2, p, silu(c.f), c.col2);
  if (d.has_skip) {
    const Tensor<T> s = conv_forward(d.skip, p, x, c.col_skip);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += s.data[i];
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += x.data[i];
  }
  return out;
}

template <typename T>
Tensor<T> res_backward(const ResDesc& d, const T* p, const ResCache<T>& c, const Tensor<T>& dout, T* grad,
                       std::vector<T>& d_emb_s, const std::vector<T>& emb_s) {
  const int h = c.x.height, w = c.x.width, plane = h * w;
  Tensor<T> df = conv_backward(d.c2, p, c.col2, h, w, dout, grad);
  for (std::size_t i = 0; i < df.size(); ++i) df.data[i] *= silu_grad(c.f.data[i]);

  std::vector<T> dfilm(static_cast<std::size_t>(2 * d.cout), T(0));
  Tensor<T> da2 = df;
  for (int ch = 0; ch < d.cout; ++ch) {
    const T scale = T(1) + c.film[static_cast<std::size_t>(ch)];
    const T* g = df.channel(ch);
    const T* a = c.a2.channel(ch);
    T* out = da2.channel(ch);
    T dscale = 0, dshift = 0;
    for (int i = 0; i < plane; ++i) {
      dscale += g[i] * a[i];
      dshift += g[i];
      out[i] = g[i] * scale;
    }
    dfilm[static_cast<std::size_t>(ch)] = dscale;
    dfilm[static_cast<std::size_t>(d.cout + ch)] = dshift;
  }
  const std::vector<T> de = linear_backward(d.film, p, emb_s, dfilm, grad);
  for (std::size_t i = 0; i < de.size(); ++i) d_emb_s[i] += de[i];

  const Tensor<T> dh1 = norm_backward(d.n2, p, c.n2, da2, grad);
  Tensor<T> da1 = conv_backward(d.c1, p, c.col1, h, w, dh1, grad);
  for (std::size_t i = 0; i < da1.size(); ++i) da1.data[i] *= silu_grad(c.a1.data[i]);
  Tensor<T> dx = norm_backward(d.n1, p, c.n1, da1, grad);
  if (d.has_skip) {
    const Tensor<T> ds = conv_backward(d.skip, p, c.col_skip, h, w, dout, grad);
    for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] += ds.data[i];
  } else {
    for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] += dout.data[i];
  }
  return dx;
}

// ---- cross attention over condition tokens -------------------------------------------------

template <typename T>
struct AttnCache {
  Mat<T> h;       // C x P
  Mat<T> tokens;  // K x D
  Mat<T> q;       // A x P
  Mat<T> k;       // A x K
  Mat<T> v;       // A x K
  Mat<T> weights;  // P x K
  Mat<T> o;       // A x P
};

constexpr int kTokens = 2;

template <typename T>
Mat<T> make_tokens(const std::vector<T>& feat, int cond_dim) {
  const int half = cond_dim / 2;
  Mat<T> tok(kTokens, half + 1);
  for (int j = 0; j < kTokens; ++j) {
    for (int i = 0; i < half; ++i) tok(j, i) = feat[static_cast<std::size_t>(j * half + i)];
    tok(j, half) = feat[static_cast<std::size_t>(cond_dim)];
  }
  return tok;
}

template <typename T>
Mat<T> affine(const LinearDesc& d, const T* p, const Mat<T>& x_cols) {
  Mat<T> y = CMatMap<T>(p + d.w, d.out, d.in) * x_cols;
  for (int o = 0; o < d.out; ++o) y.row(o).array() += p[d.b + o];
  return y;
}

template <typename T>
Mat<T> affine_backward(const LinearDesc& d, const T* p, const Mat<T>& x_cols, const Mat<T>& dy, T* grad) {
  MatMap<T>(grad + d.w, d.out, d.in).noalias() += dy * x_cols.transpose();
  for (int o = 0; o < d.out; ++o) grad[d.b + o] += dy.row(o).sum();
  return CMatMap<T>(p + d.w, d.out, d.in).transpose() * dy;
}

template <typename T>
Tensor<T> attn_forward(const AttnDesc& d, const T* p, const Tensor<T>& x, const std::vector<T>& feat, int cond_dim,
                       AttnCache<T>& c) {
  const int plane = x.plane();
  c.h = CMatMap<T>(x.data.data(), x.channels, plane);
  c.tokens = make_tokens(feat, cond_dim);
  const Mat<T> tok_cols = c.tokens.transpose();
  c.q = affine(d.q, p, c.h);
  c.k = affine(d.k, p, tok_cols);
  c.v = affine(d.v, p, tok_cols);
  const T inv = T(1) / std::sqrt(static_cast<T>(d.dim));
  Mat<T> s = (c.q.transpose() * c.k) * inv;
  c.weights.resize(plane, kTokens);
  for (int i = 0; i < plane; ++i) {
    const T m = s.row(i).maxCoeff();
    T z = 0;
    for (int j = 0; j < kTokens; ++j) {
      c.weights(i, j) = std::exp(s(i, j) - m);
      z += c.weights(i, j);
    }
    c.weights.row(i) /= z;
  }
  c.o = c.v * c.weights.transpose();
  const Mat<T> out = c.h + affine(d.o, p, c.o);
  Tensor<T> y(x.channels, x.height, x.width);
  std::copy(out.data(), out.data() + out.size(), y.data.begin());
  return y;
}

// Returns dL/dx; accumulates dL/dfeat.
template <typename T>
Tensor<T> attn_backward(const AttnDesc& d, const T* p, const AttnCache<T>& c, const Tensor<T>& dy, int cond_dim,
                        T* grad, std::vector<T>& dfeat) {
  const int plane = dy.plane();
  const CMatMap<T> g(dy.data.data(), dy.channels, plane);
  Mat<T> dh = g;
  const Mat<T> d_o = affine_backward(d.o, p, c.o, Mat<T>(g), grad);
  const Mat<T> dv = d_o * c.weights;                 // A x K
  const Mat<T> dweights = d_o.transpose() * c.v;     // P x K
  Mat<T> ds(plane, kTokens);
  for (int i = 0; i < plane; ++i) {
    const T dot = dweights.row(i).dot(c.weights.row(i));
    for (int j = 0; j < kTokens; ++j) ds(i, j) = c.weights(i, j) * (dweights(i, j) - dot);
  }
  const T inv = T(1) / std::sqrt(static_cast<T>(d.dim));
  const Mat<T> dq = (c.k * ds.transpose()) * inv;  // A x P
  const Mat<T> dk = (c.q * ds) * inv;              // A x K
  const Mat<T> tok_cols = c.tokens.transpose();
  dh += affine_backward(d.q, p, c.h, dq, grad);
  const Mat<T> dtok = affine_backward(d.k, p, tok_cols, dk, grad) + affine_backward(d.v, p, tok_cols, dv, grad);
  const int half = cond_dim / 2;
  for (int j = 0; j < kTokens; ++j) {
    for (int i = 0; i < half; ++i) dfeat[static_cast<std::size_t>(j * half + i)] += dtok(i, j);
    dfeat[static_cast<std::size_t>(cond_dim)] += dtok(half, j);
  }
  Tensor<T> dx(dy.channels, dy.height, dy.width);
  std::copy(dh.data(), dh.data() + dh.size(), dx.data.begin());
  return dx;
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

}  // namespace

// ---- config --------------------------------------------------------------------------------

void UNetConfig::validate() const {
  if (in_channels < 1 || out_channels < 1) throw ConfigError("unet: channel counts must be positive");
  if (in_channels < out_channels) throw ConfigError("unet: in_channels must cover the noisy latent");
  if (base_channels < 1 || levels < 1 || levels > 6) throw ConfigError("unet: invalid base channels or levels");
  if (groups < 1 || base_channels % groups != 0) throw ConfigError("unet: groups must divide base_channels");
  if (time_dim < 2 || time_dim % 2 != 0) throw ConfigError("unet: time_dim must be a positive even number");
  if (embed_dim < 1) throw ConfigError("unet: embed_dim must be positive");
  if (cross_attention && attention_dim < 1) throw ConfigError("unet: attention_dim must be positive");
  condition.validate();
}

void to_json(nlohmann::json& j, const UNetConfig& c) {
  j = {{"in_channels", c.in_channels},
       {"out_channels", c.out_channels},
       {"base_channels", c.base_channels},
       {"levels", c.levels},
       {"groups", c.groups},
       {"time_dim", c.time_dim},
       {"embed_dim", c.embed_dim},
       {"condition_dim", c.condition.dim},
       {"macd_scale", c.condition.macd_scale},
       {"cross_attention", c.cross_attention},
       {"attention_dim", c.attention_dim}};
}

void from_json(const nlohmann::json& j, UNetConfig& c) {
  c.in_channels = j.at("in_channels").get<int>();
  c.out_channels = j.at("out_channels").get<int>();
  c.base_channels = j.at("base_channels").get<int>();
  c.levels = j.at("levels").get<int>();
  c.groups = j.at("groups").get<int>();
  c.time_dim = j.at("time_dim").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.condition.dim = j.at("condition_dim").get<int>();
  c.condition.macd_scale = j.at("macd_scale").get<double>();
  c.cross_attention = j.at("cross_attention").get<bool>();
  c.attention_dim = j.at("attention_dim").get<int>();
}

std::vector<double> timestep_embedding(double t, int dim) {
  if (dim < 2 || dim % 2 != 0) throw ArgumentError("timestep embedding width must be even");
  const int half = dim / 2;
  std::vector<double> out(static_cast<std::size_t>(dim));
  for (int k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * k / half);
    out[static_cast<std::size_t>(k)] = std::sin(t * freq);
    out[static_cast<std::size_t>(half + k)] = std::cos(t * freq);
  }
  return out;
}

// ---- cache ---------------------------------------------------------------------------------

template <typename T>
struct ForwardCache<T>::State {
  bool null_text = false;
  bool null_image = false;
  int height = 0;
  int width = 0;
  std::vector<T> features;
  std::vector<T> e_in, z1, a1, emb, emb_s;
  std::vector<T> stem_col;
  std::vector<ResCache<T>> down;
  ResCache<T> mid;
  AttnCache<T> attn;
  std::vector<ResCache<T>> up;
  std::vector<int> up_channels;  // channels of the upsampled part of each concatenation
  NormCache<T> out_norm;
  Tensor<T> out_a;
  std::vector<T> head_col;
};

template <typename T>
ForwardCache<T>::ForwardCache() : state(std::make_unique<State>()) {}
template <typename T>
ForwardCache<T>::~ForwardCache() = default;
template <typename T>
ForwardCache<T>::ForwardCache(ForwardCache&&) noexcept = default;
template <typename T>
ForwardCache<T>& ForwardCache<T>::operator=(ForwardCache&&) noexcept = default;

// ---- denoiser ------------------------------------------------------------------------------

template <typename T>
Denoiser<T>::Denoiser(UNetConfig config) : config_(std::move(config)) {
  config_.validate();
  LayoutBuilder b;
  auto arch = std::make_shared<detail::Architecture>();
  const int c0 = config_.base_channels;
  arch->feature_size = config_.condition.feature_size();
  arch->stem = b.conv("stem", config_.in_channels, c0, 3);
  arch->emb1 = b.linear("embed.fc1", config_.time_dim + arch->feature_size, config_.embed_dim);
  arch->emb2 = b.linear("embed.fc2", config_.embed_dim, config_.embed_dim);
  arch->null_embedding = b.add("null_embedding", {arch->feature_size});
  int cur = c0;
  std::vector<int> skip_channels;
  for (int l = 0; l < config_.levels; ++l) {
    const int ch = c0 << l;
    arch->down.push_back(b.res("down" + std::to_string(l), cur, ch, config_.groups, config_.embed_dim));
    skip_channels.push_back(ch);
    cur = ch;
  }
  arch->mid = b.res("mid", cur, cur, config_.groups, config_.embed_dim);
  arch->attention = config_.cross_attention;
  if (arch->attention) {
    AttnDesc& a = arch->attn;
    a.channels = cur;
    a.token_dim = config_.condition.dim / 2 + 1;
    a.dim = config_.attention_dim;
    a.q = b.linear("attn.q", cur, a.dim);
    a.k = b.linear("attn.k", a.token_dim, a.dim);
    a.v = b.linear("attn.v", a.token_dim, a.dim);
    a.o = b.linear("attn.o", a.dim, cur);
  }
  for (int l = config_.levels - 1; l >= 0; --l) {
    const int ch = c0 << l;
    arch->up.push_back(b.res("up" + std::to_string(l), cur + skip_channels[static_cast<std::size_t>(l)], ch,
                             config_.groups, config_.embed_dim));
    cur = ch;
  }
  arch->out_norm = b.norm("out.norm", cur, config_.groups);
  arch->head = b.conv("out.conv", cur, config_.out_channels, 3);
  arch_ = std::move(arch);
  layout_ = std::move(b.layout);
  params_.assign(b.total, T(0));
  initialize(0, InitMode::kStandard);
}

template <typename T>
const ParamInfo& Denoiser<T>::info(std::string_view name) const {
  for (const auto& p : layout_)
    if (p.name == name) return p;
  throw ArgumentError("unknown parameter '" + std::string(name) + "'");
}

template <typename T>
std::span<T> Denoiser<T>::param(std::string_view name) {
  const ParamInfo& p = info(name);
  return {params_.data() + p.offset, p.size};
}

template <typename T>
std::span<const T> Denoiser<T>::param(std::string_view name) const {
  const ParamInfo& p = info(name);
  return {params_.data() + p.offset, p.size};
}

template <typename T>
void Denoiser<T>::initialize(std::uint64_t seed, InitMode mode) {
  Rng rng(derive_seed(seed, "denoiser_init"));
  for (const ParamInfo& p : layout_) {
    T* v = params_.data() + p.offset;
    const std::string_view name = p.name;
    if (mode == InitMode::kZero) {
      std::fill(v, v + p.size, T(0));
      continue;
    }
    const bool dense = mode == InitMode::kDense;
    if (ends_with(name, ".weight")) {
      std::size_t fan_in = 1;
      for (std::size_t i = 1; i < p.shape.size(); ++i) fan_in *= static_cast<std::size_t>(p.shape[i]);
      const double stdev = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (std::size_t i = 0; i < p.size; ++i) v[i] = static_cast<T>(rng.normal() * stdev);
    } else if (ends_with(name, ".gamma")) {
      for (std::size_t i = 0; i < p.size; ++i) v[i] = static_cast<T>(dense ? 1.0 + 0.2 * rng.normal() : 1.0);
    } else if (name == "null_embedding") {
      for (std::size_t i = 0; i < p.size; ++i) v[i] = static_cast<T>(dense ? 0.5 * rng.normal() : 0.0);
    } else {
      for (std::size_t i = 0; i < p.size; ++i) v[i] = static_cast<T>(dense ? 0.1 * rng.normal() : 0.0);
    }
  }
}

template <typename T>
std::vector<double> Denoiser<T>::null_embedding() const {
  const auto v = param("null_embedding");
  return {v.begin(), v.end()};
}

template <typename T>
Tensor<T> Denoiser<T>::forward(const Tensor<T>& x, double t, const Conditioning& cond) const {
  ForwardCache<T> cache;
  return forward(x, t, cond, cache);
}

template <typename T>
Tensor<T> Denoiser<T>::forward(const Tensor<T>& x, double t, const Conditioning& cond, ForwardCache<T>& cache) const {
  const detail::Architecture& a = *arch_;
  const int m = config_.spatial_multiple();
  if (x.channels != config_.in_channels || x.height < m || x.width < m || x.height % m != 0 || x.width % m != 0) {
    throw ArgumentError("denoiser input " + x.shape_string() + " does not match " + std::to_string(config_.in_channels) +
                        " channels with spatial size divisible by " + std::to_string(m));
  }
  if (!cond.is_null_text && cond.features.size() != static_cast<std::size_t>(a.feature_size)) {
    throw ArgumentError("condition has " + std::to_string(cond.features.size()) + " features, expected " +
                        std::to_string(a.feature_size));
  }
  if (!std::isfinite(t)) throw ArgumentError("timestep must be finite");
  auto& s = *cache.state;
  const T* p = params_.data();
  s.null_text = cond.is_null_text;
  s.null_image = cond.is_null_image;
  s.height = x.height;
  s.width = x.width;

  Tensor<T> xin = x;
  if (cond.is_null_image) {
    std::fill(xin.data.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(config_.out_channels) * x.plane()),
              xin.data.end(), T(0));
  }
  if (cond.is_null_text) {
    s.features.assign(p + a.null_embedding, p + a.null_embedding + a.feature_size);
  } else {
    s.features.resize(cond.features.size());
    for (std::size_t i = 0; i < cond.features.size(); ++i) s.features[i] = static_cast<T>(cond.features[i]);
  }

  const std::vector<double> temb = timestep_embedding(t, config_.time_dim);
  s.e_in.clear();
  for (double v : temb) s.e_in.push_back(static_cast<T>(v));
  s.e_in.insert(s.e_in.end(), s.features.begin(), s.features.end());
  s.z1 = linear_forward(a.emb1, p, s.e_in);
  s.a1 = silu(s.z1);
  s.emb = linear_forward(a.emb2, p, s.a1);
  s.emb_s = silu(s.emb);

  Tensor<T> h = conv_forward(a.stem, p, xin, s.stem_col);
  std::vector<Tensor<T>> skips;
  s.down.resize(a.down.size());
  for (std::size_t l = 0; l < a.down.size(); ++l) {
    h = res_forward(a.down[l], p, h, s.emb_s, s.down[l]);
    skips.push_back(h);
    h = avgpool2(h);
  }
  h = res_forward(a.mid, p, h, s.emb_s, s.mid);
  if (a.attention) h = attn_forward(a.attn, p, h, s.features, config_.condition.dim, s.attn);
  s.up.resize(a.up.size());
  s.up_channels.resize(a.up.size());
  for (std::size_t i = 0; i < a.up.size(); ++i) {
    const std::size_t l = a.down.size() - 1 - i;
    h = upsample2(h);
    s.up_channels[i] = h.channels;
    h = res_forward(a.up[i], p, concat(h, skips[l]), s.emb_s, s.up[i]);
  }
  s.out_a = norm_forward(a.out_norm, p, h, s.out_norm);
  return conv_forward(a.head, p, silu(s.out_a), s.head_col);
}

template <typename T>
void Denoiser<T>::backward(const ForwardCache<T>& cache, const Tensor<T>& grad_out, std::vector<T>& grad) const {
  const detail::Architecture& a = *arch_;
  const auto& s = *cache.state;
  if (grad.empty()) grad.assign(params_.size(), T(0));
  if (grad.size() != params_.size()) throw ArgumentError("gradient buffer size mismatch");
  if (grad_out.channels != config_.out_channels || grad_out.height != s.height || grad_out.width != s.width) {
    throw ArgumentError("output gradient shape mismatch");
  }
  const T* p = params_.data();
  T* g = grad.data();
  std::vector<T> d_emb_s(s.emb_s.size(), T(0));
  std::vector<T> dfeat(s.features.size(), T(0));

  Tensor<T> dh = conv_backward(a.head, p, s.head_col, s.height, s.width, grad_out, g);
  for (std::size_t i = 0; i < dh.size(); ++i) dh.data[i] *= silu_grad(s.out_a.data[i]);
  dh = norm_backward(a.out_norm, p, s.out_norm, dh, g);

  std::vector<Tensor<T>> dskips(a.down.size());
  for (std::size_t step = 0; step < a.up.size(); ++step) {
    const std::size_t i = a.up.size() - 1 - step;
    const std::size_t l = a.down.size() - 1 - i;
    const Tensor<T> dcat = res_backward(a.up[i], p, s.up[i], dh, g, d_emb_s, s.emb_s);
    const int cu = s.up_channels[i];
    const std::size_t split = static_cast<std::size_t>(cu) * dcat.plane();
    Tensor<T> dup(cu, dcat.height, dcat.width);
    std::copy(dcat.data.begin(), dcat.data.begin() + static_cast<std::ptrdiff_t>(split), dup.data.begin());
    Tensor<T> dskip(dcat.channels - cu, dcat.height, dcat.width);
    std::copy(dcat.data.begin() + static_cast<std::ptrdiff_t>(split), dcat.data.end(), dskip.data.begin());
    dskips[l] = std::move(dskip);
    dh = upsample2_backward(dup);
  }
  if (a.attention) dh = attn_backward(a.attn, p, s.attn, dh, config_.condition.dim, g, dfeat);
  dh = res_backward(a.mid, p, s.mid, dh, g, d_emb_s, s.emb_s);
  for (std::size_t l = a.down.size(); l-- > 0;) {
    dh = avgpool2_backward(dh);
    for (std::size_t i = 0; i < dh.size(); ++i) dh.data[i] += dskips[l].data[i];
    dh = res_backward(a.down[l], p, s.down[l], dh, g, d_emb_s, s.emb_s);
  }
  conv_backward(a.stem, p, s.stem_col, s.height, s.width, dh, g, false);

  std::vector<T> d_emb(d_emb_s.size());
  for (std::size_t i = 0; i < d_emb.size(); ++i) d_emb[i] = d_emb_s[i] * silu_grad(s.emb[i]);
  std::vector<T> da1 = linear_backward(a.emb2, p, s.a1, d_emb, g);
  for (std::size_t i = 0; i < da1.size(); ++i) da1[i] *= silu_grad(s.z1[i]);
  const std::vector<T> de_in = linear_backward(a.emb1, p, s.e_in, da1, g);
  const std::size_t offset = static_cast<std::size_t>(config_.time_dim);
  for (std::size_t i = 0; i < dfeat.size(); ++i) dfeat[i] += de_in[offset + i];
  if (s.null_text) {
    for (std::size_t i = 0; i < dfeat.size(); ++i) g[a.null_embedding + i] += dfeat[i];
  }
}

template class Denoiser<float>;
template class Denoiser<double>;
template class ForwardCache<float>;
template class ForwardCache<double>;

}  // namespace candleforge::diffusion
