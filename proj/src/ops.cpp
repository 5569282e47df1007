#include "hmflow/ops.hpp"

#include <algorithm>
#include <cmath>

namespace hmflow {

thread_local std::uint64_t KernelStats::warp_calls = 0;
thread_local std::uint64_t KernelStats::cost_volume_calls = 0;
void KernelStats::reset() {
  warp_calls = 0;
  cost_volume_calls = 0;
}

namespace {

void check_warp_shapes(const Tensor& src, const Tensor& flow) {
  if (src.rank() != 3) throw ShapeError("warp: source must be {C,H,W}");
  if (flow.rank() != 3 || flow.dim(0) != 2)
    throw ShapeError("warp: flow must be {2,H,W}");
  if (flow.dim(1) != src.dim(1) || flow.dim(2) != src.dim(2))
    throw ShapeError("warp: flow and source spatial sizes differ");
}

}  // namespace

Tensor warp_tensor(const Tensor& src, const Tensor& flow) {
  check_warp_shapes(src, flow);
  const int c = src.dim(0), h = src.dim(1), w = src.dim(2);
  Tensor out({c, h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double sx = x + flow.at(0, y, x);
      const double sy = y + flow.at(1, y, x);
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0, fy = sy - y0;
      const double wgt[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy,
                             fx * fy};
      const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
      const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
      for (int t = 0; t < 4; ++t) {
        if (xs[t] < 0 || xs[t] >= w || ys[t] < 0 || ys[t] >= h) continue;
        if (wgt[t] == 0.0) continue;
        for (int ch = 0; ch < c; ++ch)
          out.at(ch, y, x) += wgt[t] * src.at(ch, ys[t], xs[t]);
      }
    }
  }
  return out;
}

Value warp(Graph& g, Value source, Value flow) {
  ++KernelStats::warp_calls;
  Tensor out = warp_tensor(g.value(source), g.value(flow));
  return g.make(
      std::move(out), {source, flow}, [source, flow](Graph& gg, Value self) {
        const Tensor& src = gg.value(source);
        const Tensor& fl = gg.value(flow);
        const Tensor& go = gg.grad(self);
        const int c = src.dim(0), h = src.dim(1), w = src.dim(2);
        const bool need_src = gg.needs_grad(source);
        const bool need_flow = gg.needs_grad(flow);
        Tensor* gsrc = need_src ? &gg.grad_buffer(source) : nullptr;
        Tensor* gflow = need_flow ? &gg.grad_buffer(flow) : nullptr;
        for (int y = 0; y < h; ++y) {
          for (int x = 0; x < w; ++x) {
            const double sx = x + fl.at(0, y, x);
            const double sy = y + fl.at(1, y, x);
            const int x0 = static_cast<int>(std::floor(sx));
            const int y0 = static_cast<int>(std::floor(sy));
            const double fx = sx - x0, fy = sy - y0;
            // Tap values with zero fill; needed for both branches.
            double v00 = 0, v10 = 0, v01 = 0, v11 = 0;
            double du = 0, dv = 0;
            for (int ch = 0; ch < c; ++ch) {
              const double go_v = go.at(ch, y, x);
              v00 = v10 = v01 = v11 = 0;
              const bool in00 = x0 >= 0 && x0 < w && y0 >= 0 && y0 < h;
              const bool in10 = x0 + 1 >= 0 && x0 + 1 < w && y0 >= 0 && y0 < h;
              const bool in01 = x0 >= 0 && x0 < w && y0 + 1 >= 0 && y0 + 1 < h;
              const bool in11 =
                  x0 + 1 >= 0 && x0 + 1 < w && y0 + 1 >= 0 && y0 + 1 < h;
              if (in00) v00 = src.at(ch, y0, x0);
              if (in10) v10 = src.at(ch, y0, x0 + 1);
              if (in01) v01 = src.at(ch, y0 + 1, x0);
              if (in11) v11 = src.at(ch, y0 + 1, x0 + 1);
              if (gsrc) {
                if (in00) gsrc->at(ch, y0, x0) += go_v * (1 - fx) * (1 - fy);
                if (in10) gsrc->at(ch, y0, x0 + 1) += go_v * fx * (1 - fy);
                if (in01) gsrc->at(ch, y0 + 1, x0) += go_v * (1 - fx) * fy;
                if (in11) gsrc->at(ch, y0 + 1, x0 + 1) += go_v * fx * fy;
              }
              if (gflow) {
                du += go_v * ((1 - fy) * (v10 - v00) + fy * (v11 - v01));
                dv += go_v * ((1 - fx) * (v01 - v00) + fx * (v11 - v10));
              }
            }
            if (gflow) {
              gflow->at(0, y, x) += du;
              gflow->at(1, y, x) += dv;
            }
          }
        }
      });
}

Value cost_volume(Graph& g, Value f1, Value f2_warped, int radius) {
  ++KernelStats::cost_volume_calls;
  const Tensor& a = g.value(f1);
  const Tensor& b = g.value(f2_warped);
  if (radius < 0) throw ValueError("cost_volume: negative radius");
  if (a.rank() != 3 || b.rank() != 3 || !a.same_shape(b))
    throw ShapeError("cost_volume: inputs must be identically shaped {C,H,W}");
  const int c = a.dim(0), h = a.dim(1), w = a.dim(2);
  const int side = 2 * radius + 1;
  const double inv_c = 1.0 / c;

  Tensor out({side * side, h, w});
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      const int k = (dy + radius) * side + (dx + radius);
      for (int y = 0; y < h; ++y) {
        const int sy = y + dy;
        if (sy < 0 || sy >= h) continue;
        for (int x = 0; x < w; ++x) {
          const int sx = x + dx;
          if (sx < 0 || sx >= w) continue;
          double s = 0.0;
          for (int ch = 0; ch < c; ++ch) s += a.at(ch, y, x) * b.at(ch, sy, sx);
          out.at(k, y, x) = s * inv_c;
        }
      }
    }
  }

  return g.make(std::move(out), {f1, f2_warped},
                [f1, f2_warped, radius](Graph& gg, Value self) {
                  const Tensor& a = gg.value(f1);
                  const Tensor& b = gg.value(f2_warped);
                  const Tensor& go = gg.grad(self);
                  const int c = a.dim(0), h = a.dim(1), w = a.dim(2);
                  const int side = 2 * radius + 1;
                  const double inv_c = 1.0 / c;
                  const bool need_a = gg.needs_grad(f1);
                  const bool need_b = gg.needs_grad(f2_warped);
                  Tensor* ga = need_a ? &gg.grad_buffer(f1) : nullptr;
                  Tensor* gb = need_b ? &gg.grad_buffer(f2_warped) : nullptr;
                  for (int dy = -radius; dy <= radius; ++dy) {
                    for (int dx = -radius; dx <= radius; ++dx) {
                      const int k = (dy + radius) * side + (dx + radius);
                      for (int y = 0; y < h; ++y) {
                        const int sy = y + dy;
                        if (sy < 0 || sy >= h) continue;
                        for (int x = 0; x < w; ++x) {
                          const int sx = x + dx;
                          if (sx < 0 || sx >= w) continue;
                          const double go_v = go.at(k, y, x) * inv_c;
                          if (go_v == 0.0) continue;
                          for (int ch = 0; ch < c; ++ch) {
                            if (ga) ga->at(ch, y, x) += go_v * b.at(ch, sy, sx);
                            if (gb) gb->at(ch, sy, sx) += go_v * a.at(ch, y, x);
                          }
                        }
                      }
                    }
                  }
                });
}

namespace {

// Bilinear x2 with half-pixel centers and clamped borders; shared by the
// forward kernel and the backward scatter.
struct UpTap {
  int i0, i1;
  double w0, w1;
};

UpTap up_tap(int out_idx, int in_size) {
  const double s = (out_idx + 0.5) / 2.0 - 0.5;
  double s0 = std::floor(s);
  double f = s - s0;
  int i0 = static_cast<int>(s0);
  int i1 = i0 + 1;
  i0 = std::clamp(i0, 0, in_size - 1);
  i1 = std::clamp(i1, 0, in_size - 1);
  return UpTap{i0, i1, 1.0 - f, f};
}

}  // namespace

Tensor upsample_flow_2x_tensor(const Tensor& flow) {
  if (flow.rank() != 3) throw ShapeError("upsample_flow: input must be {C,H,W}");
  const int c = flow.dim(0), h = flow.dim(1), w = flow.dim(2);
  Tensor out({c, 2 * h, 2 * w});
  for (int oy = 0; oy < 2 * h; ++oy) {
    const UpTap ty = up_tap(oy, h);
    for (int ox = 0; ox < 2 * w; ++ox) {
      const UpTap tx = up_tap(ox, w);
      for (int ch = 0; ch < c; ++ch) {
        const double v = ty.w0 * (tx.w0 * flow.at(ch, ty.i0, tx.i0) +
                                  tx.w1 * flow.at(ch, ty.i0, tx.i1)) +
                         ty.w1 * (tx.w0 * flow.at(ch, ty.i1, tx.i0) +
                                  tx.w1 * flow.at(ch, ty.i1, tx.i1));
        out.at(ch, oy, ox) = 2.0 * v;
      }
    }
  }
  return out;
}

Value upsample_flow_2x(Graph& g, Value flow) {
  Tensor out = upsample_flow_2x_tensor(g.value(flow));
  return g.make(std::move(out), {flow}, [flow](Graph& gg, Value self) {
    if (!gg.needs_grad(flow)) return;
    const Tensor& go = gg.grad(self);
    Tensor& gf = gg.grad_buffer(flow);
    const int c = gf.dim(0), h = gf.dim(1), w = gf.dim(2);
    for (int oy = 0; oy < 2 * h; ++oy) {
      const UpTap ty = up_tap(oy, h);
      for (int ox = 0; ox < 2 * w; ++ox) {
        const UpTap tx = up_tap(ox, w);
        for (int ch = 0; ch < c; ++ch) {
          const double go_v = 2.0 * go.at(ch, oy, ox);
          gf.at(ch, ty.i0, tx.i0) += go_v * ty.w0 * tx.w0;
          gf.at(ch, ty.i0, tx.i1) += go_v * ty.w0 * tx.w1;
          gf.at(ch, ty.i1, tx.i0) += go_v * ty.w1 * tx.w0;
          gf.at(ch, ty.i1, tx.i1) += go_v * ty.w1 * tx.w1;
        }
      }
    }
  });
}

Tensor avg_pool_2x(const Tensor& x) {
  if (x.rank() != 3) throw ShapeError("avg_pool: input must be {C,H,W}");
  if (x.dim(1) % 2 != 0 || x.dim(2) % 2 != 0)
    throw ShapeError("avg_pool: spatial size must be even");
  const int c = x.dim(0), h = x.dim(1) / 2, w = x.dim(2) / 2;
  Tensor out({c, h, w});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x2 = 0; x2 < w; ++x2)
        out.at(ch, y, x2) =
            0.25 * (x.at(ch, 2 * y, 2 * x2) + x.at(ch, 2 * y, 2 * x2 + 1) +
                    x.at(ch, 2 * y + 1, 2 * x2) + x.at(ch, 2 * y + 1, 2 * x2 + 1));
  return out;
}

std::int64_t search_range_full_res_px(int radius, int level) {
  if (radius < 0 || level < 0) throw ValueError("search range: negative input");
  return static_cast<std::int64_t>(radius) << level;
}

std::int64_t top_level_pixel_span(int levels) {
  if (levels < 1) throw ValueError("top_level_pixel_span: levels must be >= 1");
  return std::int64_t{1} << (levels - 1);
}

}  // namespace hmflow
