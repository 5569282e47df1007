#include "hmflow/graph.hpp"

namespace hmflow {

Value add(Graph& g, Value a, Value b) {
  const Tensor& ta = g.value(a);
  const Tensor& tb = g.value(b);
  if (!ta.same_shape(tb)) throw ShapeError("add: shape mismatch");
  Tensor out = ta;
  out.axpy(1.0, tb);
  return g.make(std::move(out), {a, b}, [a, b](Graph& gg, Value self) {
    const Tensor& go = gg.grad(self);
    if (gg.needs_grad(a)) gg.grad_buffer(a).axpy(1.0, go);
    if (gg.needs_grad(b)) gg.grad_buffer(b).axpy(1.0, go);
  });
}

Value scale(Graph& g, Value a, double c) {
  Tensor out = g.value(a);
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= c;
  return g.make(std::move(out), {a}, [a, c](Graph& gg, Value self) {
    if (gg.needs_grad(a)) gg.grad_buffer(a).axpy(c, gg.grad(self));
  });
}

Value sum_squares(Graph& g, Value x) {
  const Tensor& tx = g.value(x);
  double s = 0.0;
  for (std::int64_t i = 0; i < tx.numel(); ++i) s += tx[i] * tx[i];
  return g.make(Tensor::scalar(s), {x}, [x](Graph& gg, Value self) {
    if (!gg.needs_grad(x)) return;
    const double go = gg.grad(self)[0];
    const Tensor& tx = gg.value(x);
    Tensor& gx = gg.grad_buffer(x);
    for (std::int64_t i = 0; i < tx.numel(); ++i) gx[i] += go * 2.0 * tx[i];
  });
}

Value detach(Graph& g, Value x) { return g.constant(g.value(x)); }

}  // namespace hmflow
