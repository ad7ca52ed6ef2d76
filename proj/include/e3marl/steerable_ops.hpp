#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "e3marl/autodiff.hpp"
#include "e3marl/group.hpp"

// Tape operations on batches of steerable rows. Each op is equivariant by
// construction; their gradients are covered by the same finite-difference
// oracle as the core tensor ops.

namespace e3marl::ad {

// Row-wise Clebsch-Gordan product: out[r] = cg(a[r], b[r]; w). Bilinear in
// (a, b), linear in w. The CGProduct must outlive the tape.
inline Var cg_product_rows(const CGProduct& cg, Var a, Var b, Var w) {
  Tape& tape = *a.tape();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Tensor& wv = w.value();
  const std::size_t rows = av.shape[0];
  if (av.shape.size() != 2 || bv.shape.size() != 2 || bv.shape[0] != rows) {
    throw std::invalid_argument("cg_product_rows: operand rows mismatch");
  }
  if (av.shape[1] != cg.a_spec().dim() || bv.shape[1] != cg.b_spec().dim()) {
    throw std::invalid_argument("cg_product_rows: operand spec mismatch");
  }
  if (wv.numel() != cg.weight_count()) {
    throw std::invalid_argument("cg_product_rows: expected " +
                                std::to_string(cg.weight_count()) + " weights");
  }
  const std::size_t da = av.shape[1];
  const std::size_t db = bv.shape[1];
  const std::size_t dout = cg.out_spec().dim();

  Tensor out({rows, dout});
  for (std::size_t r = 0; r < rows; ++r) {
    cg.apply_raw(av.data.data() + r * da, bv.data.data() + r * db,
                 wv.data.data(), out.data.data() + r * dout);
  }

  const CGProduct* cgp = &cg;
  auto backward = [cgp, a, b, w, da, db, dout](Tape& tp, std::size_t id) {
    const Tensor& go = tp.grad(id);
    const Tensor& av = tp.value(a);
    const Tensor& bv = tp.value(b);
    const Tensor& wv = tp.value(w);
    const std::size_t rows = av.shape[0];
    const bool na = tp.needs_grad(a);
    const bool nb = tp.needs_grad(b);
    const bool nw = tp.needs_grad(w);
    double* ga = na ? tp.grad(a.id()).data.data() : nullptr;
    double* gb = nb ? tp.grad(b.id()).data.data() : nullptr;
    double* gw = nw ? tp.grad(w.id()).data.data() : nullptr;

    for (std::size_t r = 0; r < rows; ++r) {
      const double* ar = av.data.data() + r * da;
      const double* br = bv.data.data() + r * db;
      const double* gor = go.data.data() + r * dout;
      double* gar = ga ? ga + r * da : nullptr;
      double* gbr = gb ? gb + r * db : nullptr;
      for (const auto& ins : cgp->instructions()) {
        const double* wp = wv.data.data() + ins.weight_offset;
        double* gwp = gw ? gw + ins.weight_offset : nullptr;
        for (std::size_t ca = 0; ca < ins.mult_a; ++ca) {
          const double* va = ar + ins.a_offset + ca * (2 * ins.la + 1);
          double* dva = gar ? gar + ins.a_offset + ca * (2 * ins.la + 1) : nullptr;
          for (std::size_t cb = 0; cb < ins.mult_b; ++cb) {
            const double* vb = br + ins.b_offset + cb * (2 * ins.lb + 1);
            double* dvb = gbr ? gbr + ins.b_offset + cb * (2 * ins.lb + 1) : nullptr;
            for (std::size_t co = 0; co < ins.mult_out; ++co) {
              const std::size_t wi = (ca * ins.mult_b + cb) * ins.mult_out + co;
              const double wk = wp[wi];
              const double* g = gor + ins.out_offset + co * (2 * ins.lo + 1);
              switch (ins.la * 4 + ins.lb * 2 + ins.lo) {
                case 0:  // 0 x 0 -> 0
                  if (dva) dva[0] += wk * vb[0] * g[0];
                  if (dvb) dvb[0] += wk * va[0] * g[0];
                  if (gwp) gwp[wi] += va[0] * vb[0] * g[0];
                  break;
                case 3: {  // 0 x 1 -> 1
                  const double bg = vb[0] * g[0] + vb[1] * g[1] + vb[2] * g[2];
                  if (dva) dva[0] += wk * bg;
                  if (dvb) {
                    dvb[0] += wk * va[0] * g[0];
                    dvb[1] += wk * va[0] * g[1];
                    dvb[2] += wk * va[0] * g[2];
                  }
                  if (gwp) gwp[wi] += va[0] * bg;
                  break;
                }
                case 5: {  // 1 x 0 -> 1
                  const double ag = va[0] * g[0] + va[1] * g[1] + va[2] * g[2];
                  if (dva) {
                    dva[0] += wk * vb[0] * g[0];
                    dva[1] += wk * vb[0] * g[1];
                    dva[2] += wk * vb[0] * g[2];
                  }
                  if (dvb) dvb[0] += wk * ag;
                  if (gwp) gwp[wi] += vb[0] * ag;
                  break;
                }
                case 6: {  // 1 x 1 -> 0 (dot)
                  if (dva) {
                    dva[0] += wk * vb[0] * g[0];
                    dva[1] += wk * vb[1] * g[0];
                    dva[2] += wk * vb[2] * g[0];
                  }
                  if (dvb) {
                    dvb[0] += wk * va[0] * g[0];
                    dvb[1] += wk * va[1] * g[0];
                    dvb[2] += wk * va[2] * g[0];
                  }
                  if (gwp)
                    gwp[wi] +=
                        (va[0] * vb[0] + va[1] * vb[1] + va[2] * vb[2]) * g[0];
                  break;
                }
                case 7: {  // 1 x 1 -> 1 (cross)
                  if (dva) {  // d/da (a x b) . g = b x g
                    dva[0] += wk * (vb[1] * g[2] - vb[2] * g[1]);
                    dva[1] += wk * (vb[2] * g[0] - vb[0] * g[2]);
                    dva[2] += wk * (vb[0] * g[1] - vb[1] * g[0]);
                  }
                  if (dvb) {  // d/db (a x b) . g = g x a
                    dvb[0] += wk * (g[1] * va[2] - g[2] * va[1]);
                    dvb[1] += wk * (g[2] * va[0] - g[0] * va[2]);
                    dvb[2] += wk * (g[0] * va[1] - g[1] * va[0]);
                  }
                  if (gwp) {
                    gwp[wi] += (va[1] * vb[2] - va[2] * vb[1]) * g[0] +
                               (va[2] * vb[0] - va[0] * vb[2]) * g[1] +
                               (va[0] * vb[1] - va[1] * vb[0]) * g[2];
                  }
                  break;
                }
                default:
                  break;
              }
            }
          }
        }
      }
    }
  };
  return tape.custom({a, b, w}, std::move(out), std::move(backward));
}

// Gated nonlinearity on rows laid out as [scalars | gates | vectors]:
// scalars pass through tanh, each degree-1 block is scaled by the sigmoid of
// its gate. Output rows are [scalars | vectors]. Isotropic scaling keeps the
// op exactly equivariant.
inline Var gated_nonlinearity_rows(Var x, std::size_t num_scalars,
                                   std::size_t num_vectors) {
  Tape& tape = *x.tape();
  const Tensor& xv = x.value();
  const std::size_t din = num_scalars + num_vectors + 3 * num_vectors;
  if (xv.shape.size() != 2 || xv.shape[1] != din) {
    throw std::invalid_argument(
        "gated_nonlinearity_rows: expected row width " + std::to_string(din) +
        ", got " + shape_string(xv.shape));
  }
  const std::size_t rows = xv.shape[0];
  const std::size_t dout = num_scalars + 3 * num_vectors;
  Tensor out({rows, dout});
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data.data() + r * din;
    double* o = out.data.data() + r * dout;
    for (std::size_t c = 0; c < num_scalars; ++c) o[c] = std::tanh(in[c]);
    for (std::size_t c = 0; c < num_vectors; ++c) {
      const double s = 1.0 / (1.0 + std::exp(-in[num_scalars + c]));
      const double* v = in + num_scalars + num_vectors + 3 * c;
      double* ov = o + num_scalars + 3 * c;
      ov[0] = s * v[0];
      ov[1] = s * v[1];
      ov[2] = s * v[2];
    }
  }
  auto backward = [x, num_scalars, num_vectors, din, dout](Tape& tp,
                                                           std::size_t id) {
    const Tensor& go = tp.grad(id);
    const Tensor& xv = tp.value(x);
    Tensor& gx = tp.grad(x.id());
    const std::size_t rows = xv.shape[0];
    for (std::size_t r = 0; r < rows; ++r) {
      const double* in = xv.data.data() + r * din;
      const double* g = go.data.data() + r * dout;
      double* dx = gx.data.data() + r * din;
      for (std::size_t c = 0; c < num_scalars; ++c) {
        const double th = std::tanh(in[c]);
        dx[c] += g[c] * (1.0 - th * th);
      }
      for (std::size_t c = 0; c < num_vectors; ++c) {
        const double s = 1.0 / (1.0 + std::exp(-in[num_scalars + c]));
        const double* v = in + num_scalars + num_vectors + 3 * c;
        const double* gv = g + num_scalars + 3 * c;
        const double vdotg = v[0] * gv[0] + v[1] * gv[1] + v[2] * gv[2];
        dx[num_scalars + c] += s * (1.0 - s) * vdotg;
        double* dv = dx + num_scalars + num_vectors + 3 * c;
        dv[0] += s * gv[0];
        dv[1] += s * gv[1];
        dv[2] += s * gv[2];
      }
    }
  };
  return tape.custom({x}, std::move(out), std::move(backward));
}

// Row-wise norm clipping: rows above max_norm are rescaled onto the sphere.
// Commutes with rotations, so equivariant outputs stay equivariant.
inline Var clip_rows_by_norm(Var x, double max_norm) {
  Tape& tape = *x.tape();
  const Tensor& xv = x.value();
  if (xv.shape.size() != 2) {
    throw std::invalid_argument("clip_rows_by_norm: rank-2 only");
  }
  const std::size_t rows = xv.shape[0], cols = xv.shape[1];
  Tensor out = xv;
  for (std::size_t r = 0; r < rows; ++r) {
    double n2 = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      n2 += xv.data[r * cols + c] * xv.data[r * cols + c];
    }
    const double n = std::sqrt(n2);
    if (n > max_norm) {
      const double f = max_norm / n;
      for (std::size_t c = 0; c < cols; ++c) out.data[r * cols + c] *= f;
    }
  }
  auto backward = [x, max_norm](Tape& tp, std::size_t id) {
    const Tensor& go = tp.grad(id);
    const Tensor& xv = tp.value(x);
    Tensor& gx = tp.grad(x.id());
    const std::size_t rows = xv.shape[0], cols = xv.shape[1];
    for (std::size_t r = 0; r < rows; ++r) {
      const double* v = xv.data.data() + r * cols;
      const double* g = go.data.data() + r * cols;
      double* d = gx.data.data() + r * cols;
      double n2 = 0.0, vdotg = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        n2 += v[c] * v[c];
        vdotg += v[c] * g[c];
      }
      const double n = std::sqrt(n2);
      if (n > max_norm) {
        // y = m * x / |x|: dy/dx = m/|x| (I - x x^T / |x|^2)
        const double f = max_norm / n;
        for (std::size_t c = 0; c < cols; ++c) {
          d[c] += f * (g[c] - v[c] * vdotg / n2);
        }
      } else {
        for (std::size_t c = 0; c < cols; ++c) d[c] += g[c];
      }
    }
  };
  return tape.custom({x}, std::move(out), std::move(backward));
}

}  // namespace e3marl::ad
