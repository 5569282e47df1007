#include "hmflow/nn.hpp"

#include <cblas.h>

#include <cmath>
#include <random>

namespace hmflow {
namespace {

struct ConvGeom {
  int in_ch, h, w;
  int out_ch, kernel, stride, pad;
  int oh, ow;
};

ConvGeom conv_geom(const Tensor& x, const Tensor& w, int stride) {
  if (x.rank() != 3) throw ShapeError("conv2d: input must be {C,H,W}");
  if (w.rank() != 4) throw ShapeError("conv2d: weight must be {O,I,K,K}");
  ConvGeom geo;
  geo.in_ch = x.dim(0);
  geo.h = x.dim(1);
  geo.w = x.dim(2);
  geo.out_ch = w.dim(0);
  geo.kernel = w.dim(2);
  geo.stride = stride;
  geo.pad = (geo.kernel - 1) / 2;
  if (w.dim(1) != geo.in_ch)
    throw ConfigError("conv2d: weight expects " + std::to_string(w.dim(1)) +
                      " input channels, got " + std::to_string(geo.in_ch));
  geo.oh = (geo.h + 2 * geo.pad - geo.kernel) / stride + 1;
  geo.ow = (geo.w + 2 * geo.pad - geo.kernel) / stride + 1;
  return geo;
}

// col is {C*K*K, OH*OW}; zero padding outside the image.
void im2col(const Tensor& x, const ConvGeom& geo, double* col) {
  const int kk = geo.kernel * geo.kernel;
  const int ncols = geo.oh * geo.ow;
  for (int c = 0; c < geo.in_ch; ++c) {
    const double* plane = x.data() + static_cast<std::int64_t>(c) * geo.h * geo.w;
    for (int t = 0; t < kk; ++t) {
      const int ky = t / geo.kernel, kx = t % geo.kernel;
      double* row = col + static_cast<std::int64_t>(c * kk + t) * ncols;
      for (int oy = 0; oy < geo.oh; ++oy) {
        const int iy = oy * geo.stride - geo.pad + ky;
        double* dst = row + static_cast<std::int64_t>(oy) * geo.ow;
        if (iy < 0 || iy >= geo.h) {
          for (int ox = 0; ox < geo.ow; ++ox) dst[ox] = 0.0;
          continue;
        }
        const double* src = plane + static_cast<std::int64_t>(iy) * geo.w;
        for (int ox = 0; ox < geo.ow; ++ox) {
          const int ix = ox * geo.stride - geo.pad + kx;
          dst[ox] = (ix >= 0 && ix < geo.w) ? src[ix] : 0.0;
        }
      }
    }
  }
}

// Transpose of im2col: scatter-add col back into an image.
void col2im(const double* col, const ConvGeom& geo, Tensor& x) {
  const int kk = geo.kernel * geo.kernel;
  const int ncols = geo.oh * geo.ow;
  for (int c = 0; c < geo.in_ch; ++c) {
    double* plane = x.data() + static_cast<std::int64_t>(c) * geo.h * geo.w;
    for (int t = 0; t < kk; ++t) {
      const int ky = t / geo.kernel, kx = t % geo.kernel;
      const double* row = col + static_cast<std::int64_t>(c * kk + t) * ncols;
      for (int oy = 0; oy < geo.oh; ++oy) {
        const int iy = oy * geo.stride - geo.pad + ky;
        if (iy < 0 || iy >= geo.h) continue;
        const double* src = row + static_cast<std::int64_t>(oy) * geo.ow;
        double* dst = plane + static_cast<std::int64_t>(iy) * geo.w;
        for (int ox = 0; ox < geo.ow; ++ox) {
          const int ix = ox * geo.stride - geo.pad + kx;
          if (ix >= 0 && ix < geo.w) dst[ix] += src[ox];
        }
      }
    }
  }
}

void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a,
          const double* b, double beta, double* c) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, 1.0, a,
              trans_a ? m : k, b, trans_b ? k : n, beta, c, n);
}

}  // namespace

Value conv2d(Graph& g, Value x, Value w, Value b, int stride) {
  const Tensor& tx = g.value(x);
  const Tensor& tw = g.value(w);
  const Tensor& tb = g.value(b);
  ConvGeom geo = conv_geom(tx, tw, stride);
  if (tb.rank() != 1 || tb.dim(0) != geo.out_ch)
    throw ConfigError("conv2d: bias shape mismatch");

  const int kdim = geo.in_ch * geo.kernel * geo.kernel;
  const int ncols = geo.oh * geo.ow;
  std::vector<double> col(static_cast<std::size_t>(kdim) * ncols);
  im2col(tx, geo, col.data());

  Tensor out({geo.out_ch, geo.oh, geo.ow});
  gemm(false, false, geo.out_ch, ncols, kdim, tw.data(), col.data(), 0.0,
       out.data());
  for (int c = 0; c < geo.out_ch; ++c) {
    double* p = out.data() + static_cast<std::int64_t>(c) * ncols;
    for (int i = 0; i < ncols; ++i) p[i] += tb[c];
  }

  // im2col is recomputed in the backward pass rather than kept alive; the
  // graphs are deep and the col buffers dominate memory otherwise.
  return g.make(std::move(out), {x, w, b},
                [x, w, b, geo](Graph& gg, Value self) {
                  const Tensor& go = gg.grad(self);
                  const Tensor& tx = gg.value(x);
                  const Tensor& tw = gg.value(w);
                  const int kdim = geo.in_ch * geo.kernel * geo.kernel;
                  const int ncols = geo.oh * geo.ow;
                  if (gg.needs_grad(b)) {
                    Tensor& gb = gg.grad_buffer(b);
                    for (int c = 0; c < geo.out_ch; ++c) {
                      const double* p =
                          go.data() + static_cast<std::int64_t>(c) * ncols;
                      double s = 0.0;
                      for (int i = 0; i < ncols; ++i) s += p[i];
                      gb[c] += s;
                    }
                  }
                  if (gg.needs_grad(w)) {
                    std::vector<double> col(static_cast<std::size_t>(kdim) * ncols);
                    im2col(tx, geo, col.data());
                    Tensor& gw = gg.grad_buffer(w);
                    gemm(false, true, geo.out_ch, kdim, ncols, go.data(),
                         col.data(), 1.0, gw.data());
                  }
                  if (gg.needs_grad(x)) {
                    std::vector<double> dcol(static_cast<std::size_t>(kdim) * ncols);
                    gemm(true, false, kdim, ncols, geo.out_ch, tw.data(),
                         go.data(), 0.0, dcol.data());
                    col2im(dcol.data(), geo, gg.grad_buffer(x));
                  }
                });
}

Value deconv2d(Graph& g, Value x, Value w, Value b) {
  const Tensor& tx = g.value(x);
  const Tensor& tw = g.value(w);
  const Tensor& tb = g.value(b);
  if (tx.rank() != 3) throw ShapeError("deconv2d: input must be {C,H,W}");
  if (tw.rank() != 4 || tw.dim(2) != 4 || tw.dim(3) != 4)
    throw ShapeError("deconv2d: weight must be {I,O,4,4}");
  if (tw.dim(0) != tx.dim(0))
    throw ConfigError("deconv2d: weight/input channel mismatch");
  const int in_ch = tx.dim(0), hi = tx.dim(1), wi = tx.dim(2);
  const int out_ch = tw.dim(1);
  if (tb.rank() != 1 || tb.dim(0) != out_ch)
    throw ConfigError("deconv2d: bias shape mismatch");

  // The transposed convolution is the adjoint of a kernel-4 stride-2 pad-1
  // convolution mapping {out_ch, 2H, 2W} -> {in_ch, H, W}; reuse that
  // geometry for the col buffers.
  ConvGeom geo;
  geo.in_ch = out_ch;
  geo.h = 2 * hi;
  geo.w = 2 * wi;
  geo.out_ch = in_ch;
  geo.kernel = 4;
  geo.stride = 2;
  geo.pad = 1;
  geo.oh = hi;
  geo.ow = wi;

  const int kdim = out_ch * 16;
  const int ncols = hi * wi;
  std::vector<double> col(static_cast<std::size_t>(kdim) * ncols);
  // col = W^T * x  with W viewed as {in_ch, out_ch*16}
  gemm(true, false, kdim, ncols, in_ch, tw.data(), tx.data(), 0.0, col.data());
  Tensor out({out_ch, 2 * hi, 2 * wi});
  col2im(col.data(), geo, out);
  for (int c = 0; c < out_ch; ++c) {
    double* p = out.data() + static_cast<std::int64_t>(c) * geo.h * geo.w;
    for (int i = 0; i < geo.h * geo.w; ++i) p[i] += tb[c];
  }

  return g.make(
      std::move(out), {x, w, b}, [x, w, b, geo, in_ch](Graph& gg, Value self) {
        const Tensor& go = gg.grad(self);
        const Tensor& tx = gg.value(x);
        const Tensor& tw = gg.value(w);
        const int kdim = geo.in_ch * 16;
        const int ncols = geo.oh * geo.ow;
        if (gg.needs_grad(b)) {
          Tensor& gb = gg.grad_buffer(b);
          for (int c = 0; c < geo.in_ch; ++c) {
            const double* p =
                go.data() + static_cast<std::int64_t>(c) * geo.h * geo.w;
            double s = 0.0;
            for (int i = 0; i < geo.h * geo.w; ++i) s += p[i];
            gb[c] += s;
          }
        }
        std::vector<double> dcol(static_cast<std::size_t>(kdim) * ncols);
        im2col(go, geo, dcol.data());
        if (gg.needs_grad(w)) {
          // dW {in_ch, out_ch*16} = x {in_ch, N} * dcol^T {N, out_ch*16}
          gemm(false, true, in_ch, kdim, ncols, tx.data(), dcol.data(), 1.0,
               gg.grad_buffer(w).data());
        }
        if (gg.needs_grad(x)) {
          gemm(false, false, in_ch, ncols, kdim, tw.data(), dcol.data(), 1.0,
               gg.grad_buffer(x).data());
        }
      });
}

Value leaky_relu(Graph& g, Value x, double slope) {
  Tensor out = g.value(x);
  for (std::int64_t i = 0; i < out.numel(); ++i)
    if (out[i] < 0.0) out[i] *= slope;
  return g.make(std::move(out), {x}, [x, slope](Graph& gg, Value self) {
    if (!gg.needs_grad(x)) return;
    const Tensor& go = gg.grad(self);
    const Tensor& tx = gg.value(x);
    Tensor& gx = gg.grad_buffer(x);
    for (std::int64_t i = 0; i < tx.numel(); ++i)
      gx[i] += go[i] * (tx[i] > 0.0 ? 1.0 : slope);
  });
}

Value concat_channels(Graph& g, const std::vector<Value>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Tensor& first = g.value(parts[0]);
  if (first.rank() != 3) throw ShapeError("concat: inputs must be {C,H,W}");
  const int h = first.dim(1), w = first.dim(2);
  int total = 0;
  for (Value p : parts) {
    const Tensor& t = g.value(p);
    if (t.rank() != 3 || t.dim(1) != h || t.dim(2) != w)
      throw ShapeError("concat: spatial size mismatch");
    total += t.dim(0);
  }
  Tensor out({total, h, w});
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  std::int64_t off = 0;
  for (Value p : parts) {
    const Tensor& t = g.value(p);
    std::copy(t.data(), t.data() + t.numel(), out.data() + off * plane);
    off += t.dim(0);
  }
  return g.make(std::move(out), parts, [parts, plane](Graph& gg, Value self) {
    const Tensor& go = gg.grad(self);
    std::int64_t off = 0;
    for (Value p : parts) {
      const std::int64_t n = gg.value(p).numel();
      if (gg.needs_grad(p)) {
        Tensor& gp = gg.grad_buffer(p);
        const double* src = go.data() + off * plane;
        for (std::int64_t i = 0; i < n; ++i) gp[i] += src[i];
      }
      off += gg.value(p).dim(0);
    }
  });
}

// ---- ParamStore ------------------------------------------------------------

Tensor& ParamStore::declare(const std::string& name, std::vector<int> shape) {
  if (has(name)) throw ConfigError("parameter declared twice: " + name);
  order_.push_back(name);
  return tensors_.emplace(name, Tensor(std::move(shape))).first->second;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  return const_cast<ParamStore*>(this)->at(name);
}

std::int64_t ParamStore::total_parameters() const {
  std::int64_t n = 0;
  for (const auto& name : order_) n += tensors_.at(name).numel();
  return n;
}

void ParamStore::init_random(std::uint64_t seed, double leaky_slope) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const auto& name : order_) {
    Tensor& t = tensors_.at(name);
    if (t.rank() < 2) {
      t.zero();
      continue;
    }
    std::int64_t fan_in = 1;
    for (int d = 1; d < t.rank(); ++d) fan_in *= t.dim(d);
    const double std_dev =
        std::sqrt(2.0 / ((1.0 + leaky_slope * leaky_slope) * fan_in));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = normal(rng) * std_dev;
  }
}

Value ParamLeaves::operator()(const std::string& name) {
  auto it = cache_.find(name);
  if (it != cache_.end()) return it->second;
  Value v = track_ ? g_->leaf(store_->at(name)) : g_->constant(store_->at(name));
  cache_.emplace(name, v);
  touched_.emplace_back(name, v);
  return v;
}

void declare_conv(ParamStore& s, const std::string& prefix, int in_ch,
                  int out_ch, int kernel) {
  s.declare(prefix + ".weight", {out_ch, in_ch, kernel, kernel});
  s.declare(prefix + ".bias", {out_ch});
}

void declare_deconv(ParamStore& s, const std::string& prefix, int in_ch,
                    int out_ch, int kernel) {
  s.declare(prefix + ".weight", {in_ch, out_ch, kernel, kernel});
  s.declare(prefix + ".bias", {out_ch});
}

Value apply_conv(Graph& g, ParamLeaves& p, const std::string& prefix, Value x,
                 int stride) {
  return conv2d(g, x, p(prefix + ".weight"), p(prefix + ".bias"), stride);
}

Value apply_deconv(Graph& g, ParamLeaves& p, const std::string& prefix, Value x) {
  return deconv2d(g, x, p(prefix + ".weight"), p(prefix + ".bias"));
}

}  // namespace hmflow
